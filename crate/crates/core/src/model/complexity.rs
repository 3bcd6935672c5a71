//! Closed-form parameter and FLOP counts.

use super::ModelConfig;

/// Sequence lengths of a typical sample: three history acquisitions and a
/// fifteen-day future span.
pub const REFERENCE_HISTORY_LEN: usize = 3;
pub const REFERENCE_FUTURE_LEN: usize = 15;

/// Trainable scalars in one encoder layer: Q/K/V/O projections with biases,
/// two feed-forward maps with biases and two layer-norm gain/shift pairs.
pub fn layer_parameters(config: &ModelConfig) -> usize {
    let (d, f) = (config.d_model, config.ffn_dim);
    4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
}

pub fn count_parameters(config: &ModelConfig) -> usize {
    let d = config.d_model;
    let branch = |width: usize| width * d + d + config.n_layers * layer_parameters(config);
    let future = if config.inputs.future {
        branch(config.future_width)
    } else {
        d
    };
    branch(config.history_width) + future + 2 * d * 3 + 3
}

fn matmul(m: usize, k: usize, n: usize) -> u64 {
    2 * (m * k * n) as u64
}

fn branch_flops(config: &ModelConfig, batch: usize, n: usize, width: usize) -> u64 {
    let (d, f) = (config.d_model, config.ffn_dim);
    let dh = config.head_dim();
    let rows = batch * n;
    let per_layer = 4 * matmul(rows, d, d)
        + 2 * (batch * config.n_heads) as u64 * matmul(n, dh, n)
        + matmul(rows, d, f)
        + matmul(rows, f, d);
    matmul(rows, width, d) + config.n_layers as u64 * per_layer
}

/// Multiply-adds counted as two FLOPs, over every matrix product of one
/// forward pass with the given sequence lengths.
pub fn estimate_flops_at(config: &ModelConfig, batch: usize, history_len: usize, future_len: usize) -> u64 {
    let (d, h) = (config.d_model, config.horizon);
    let mut total = branch_flops(config, batch, history_len, config.history_width);
    // masked-mean pooling and repetition across horizon steps
    total += batch as u64 * (matmul(1, history_len, d) + matmul(h, 1, d));
    if config.inputs.future {
        total += branch_flops(config, batch, future_len, config.future_width);
    }
    total + matmul(batch * h, 2 * d, 3)
}

pub fn estimate_flops(config: &ModelConfig, batch: usize) -> u64 {
    estimate_flops_at(config, batch, REFERENCE_HISTORY_LEN, REFERENCE_FUTURE_LEN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamStore;

    #[test]
    fn minimal_config_is_embeddings_plus_head() {
        let c = ModelConfig {
            d_model: 1,
            n_heads: 1,
            n_layers: 0,
            ffn_dim: 1,
            ..Default::default()
        };
        // (22 + 1) + (21 + 1) embeddings, 2 * 3 + 3 head
        assert_eq!(count_parameters(&c), 23 + 22 + 9);
    }

    #[test]
    fn doubling_layers_adds_two_branches_of_layers() {
        let c = ModelConfig::default();
        let doubled = ModelConfig {
            n_layers: 16,
            ..c.clone()
        };
        assert_eq!(count_parameters(&doubled) - count_parameters(&c), 2 * 8 * layer_parameters(&c));
        assert_eq!(layer_parameters(&c), 198_272);
    }

    #[test]
    fn closed_form_matches_constructed_parameters() {
        for (d, layers, heads, ffn, future) in [(8, 2, 2, 16, true), (12, 3, 3, 5, false), (128, 1, 8, 512, true)] {
            let mut c = ModelConfig {
                d_model: d,
                n_layers: layers,
                n_heads: heads,
                ffn_dim: ffn,
                ..Default::default()
            };
            c.inputs.future = future;
            assert_eq!(count_parameters(&c), ParamStore::<f64>::init(&c, 0).scalar_count());
        }
    }

    #[test]
    fn flops_scale_with_batch() {
        let c = ModelConfig::default();
        assert_eq!(estimate_flops(&c, 4), 4 * estimate_flops(&c, 1));
    }
}
