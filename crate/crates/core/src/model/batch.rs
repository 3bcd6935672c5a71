use super::{ModelConfig, ModelError, Result};
use crate::domain::ForecastSample;
use crate::pipeline::{ENGINEERED, RAW, TARGET_CHANNEL};
use crate::Scalar;

/// Samples stacked into dense arrays. Future sequences are right-padded to
/// the longest in the batch and padding is masked. Disabled inputs are
/// zeroed here.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub size: usize,
    pub history_len: usize,
    pub future_len: usize,
    pub horizon: usize,
    /// `[B, p, F_h]`
    pub history: Vec<T>,
    /// `[B, p]`, true where the position holds data.
    pub history_mask: Vec<bool>,
    /// `[B, L, F_f]`
    pub future: Vec<T>,
    /// `[B, L]`
    pub future_mask: Vec<bool>,
    /// `[B, h]` positions within each future sequence.
    pub selection: Vec<usize>,
    /// `[B, h]` in scaled units.
    pub targets: Vec<T>,
    /// `[B, h]`
    pub delta_days: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[&ForecastSample], config: &ModelConfig) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| ModelError::Shape("empty batch".into()))?;
        let (p, h) = (first.history_len(), config.horizon);
        let (fh, ff) = (config.history_width, config.future_width);
        let l = samples.iter().map(|s| s.future_len()).max().unwrap_or(0);
        let b = samples.len();
        let mut batch = Batch {
            size: b,
            history_len: p,
            future_len: l,
            horizon: h,
            history: Vec::with_capacity(b * p * fh),
            history_mask: Vec::with_capacity(b * p),
            future: vec![T::zero(); b * l * ff],
            future_mask: vec![false; b * l],
            selection: Vec::with_capacity(b * h),
            targets: Vec::with_capacity(b * h),
            delta_days: Vec::with_capacity(b * h),
        };
        let sw = config.inputs;
        for (i, s) in samples.iter().enumerate() {
            if s.history_width != fh || s.future_width != ff {
                return Err(ModelError::Shape(format!(
                    "sample widths ({}, {}) do not match model widths ({fh}, {ff})",
                    s.history_width, s.future_width
                )));
            }
            if s.history_len() != p || s.horizon() != h {
                return Err(ModelError::Shape(format!(
                    "sample geometry p={} h={} does not match p={p} h={h}",
                    s.history_len(),
                    s.horizon()
                )));
            }
            for j in 0..p {
                for (c, &v) in s.history_token(j).iter().enumerate() {
                    let off = (c == TARGET_CHANNEL && !sw.target)
                        || (RAW.contains(&c) && !sw.history)
                        || (ENGINEERED.contains(&c) && (!sw.history || !sw.feature_engineering));
                    batch.history.push(if off { T::zero() } else { T::lit(v) });
                }
            }
            batch.history_mask.extend_from_slice(&s.history_mask);
            let base = i * l * ff;
            for (k, &v) in s.future_tokens.iter().enumerate() {
                let c = k % ff;
                let off = ENGINEERED.contains(&c) && !sw.feature_engineering;
                batch.future[base + k] = if off { T::zero() } else { T::lit(v) };
            }
            batch.future_mask[i * l..i * l + s.future_len()].copy_from_slice(&s.future_mask);
            for (&sel, (&y, &d)) in s.selection_indices.iter().zip(s.targets.iter().zip(&s.delta_days)) {
                if sel >= s.future_len() {
                    return Err(ModelError::Shape(format!(
                        "selection index {sel} outside future length {}",
                        s.future_len()
                    )));
                }
                batch.selection.push(sel);
                batch.targets.push(T::lit(y));
                batch.delta_days.push(T::lit(d));
            }
        }
        Ok(batch)
    }
}
