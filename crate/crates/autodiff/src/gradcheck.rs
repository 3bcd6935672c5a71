//! Central-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions<T> {
    pub step: T,
    pub tolerance: T,
    /// Lower bound on the denominator of the relative error, so entries whose
    /// true gradient is zero are judged on an absolute scale.
    pub floor: T,
    /// Checks a seeded random subset of each input when set.
    pub max_elements_per_input: Option<usize>,
    pub seed: u64,
}

impl<T: Scalar> GradCheckOptions<T> {
    pub fn new(step: T, tolerance: T) -> Self {
        Self {
            step,
            tolerance,
            floor: T::lit(1e-6),
            max_elements_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradientReport<T> {
    pub max_rel_error: T,
    pub max_abs_error: T,
    /// (input, element) of the largest relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tolerance: T,
    /// Reverse-mode gradient per input (full length).
    pub analytic: Vec<Vec<T>>,
    /// Central differences per input; only checked elements are populated.
    pub numeric: Vec<Vec<Option<T>>>,
}

impl<T: Scalar> GradientReport<T> {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn evaluate<T, F>(f: &F, inputs: &[Tensor<T>], with_grad: bool) -> Result<(Graph<T>, Vec<Var>, Var)>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let t = t.clone();
            g.input(if with_grad { t.with_grad() } else { t })
        })
        .collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return invalid("gradcheck", "function must be scalar-valued");
    }
    g.check_finite()?;
    Ok((g, vars, out))
}

/// Compares reverse-mode gradients of the scalar function `f` at `inputs`
/// against central differences of the given `step`.
pub fn check_gradients<T, F>(f: F, inputs: &[Tensor<T>], step: T, tolerance: T) -> Result<GradientReport<T>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    check_gradients_with(f, inputs, GradCheckOptions::new(step, tolerance))
}

pub fn check_gradients_with<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    opts: GradCheckOptions<T>,
) -> Result<GradientReport<T>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = evaluate(&f, inputs, true)?;
    g.backward(out)?;
    let analytic: Vec<Vec<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); t.len()]))
        .collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradientReport {
        max_rel_error: T::zero(),
        max_abs_error: T::zero(),
        worst: None,
        checked: 0,
        tolerance: opts.tolerance,
        analytic,
        numeric: inputs.iter().map(|t| vec![None; t.len()]).collect(),
    };
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let two = T::lit(2.0);
    for i in 0..inputs.len() {
        let len = inputs[i].len();
        let elements: Vec<usize> = match opts.max_elements_per_input {
            Some(k) if k < len => {
                let mut e = sample(&mut rng, len, k).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..len).collect(),
        };
        for j in elements {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + opts.step;
            let (gp, _, op) = evaluate(&f, &work, false)?;
            let fp = gp.value(op)[0];
            work[i].data_mut()[j] = orig - opts.step;
            let (gm, _, om) = evaluate(&f, &work, false)?;
            let fm = gm.value(om)[0];
            work[i].data_mut()[j] = orig;

            let numeric = (fp - fm) / (two * opts.step);
            let a = report.analytic[i][j];
            let abs = (a - numeric).abs();
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let rel = abs / denom;
            report.numeric[i][j] = Some(numeric);
            report.checked += 1;
            if abs > report.max_abs_error {
                report.max_abs_error = abs;
            }
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::new(vec![3], vec![0.3, -1.0, 2.5]).unwrap();
        let r = check_gradients(|g, v| g.sum_all(v[0]), &[x], 1e-4, 1e-6).unwrap();
        assert_eq!(r.analytic[0], vec![1.0, 1.0, 1.0]);
        assert!(r.max_abs_error < 1e-10);
        assert!(r.passed());
    }

    #[test]
    fn square_sum_gradient_at_one_two() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let r = check_gradients(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.sum_all(sq)
            },
            &[x],
            1e-4,
            1e-6,
        )
        .unwrap();
        assert_eq!(r.analytic[0], vec![2.0, 4.0]);
        assert!(r.passed());
    }

    #[test]
    fn non_finite_function_is_reported() {
        let x = Tensor::new(vec![1], vec![f64::MAX]).unwrap();
        let err = check_gradients(
            |g, v| {
                let y = g.scale(v[0], 4.0);
                g.sum_all(y)
            },
            &[x],
            1e-3,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, crate::AutodiffError::NonFinite { .. }));
    }
}
