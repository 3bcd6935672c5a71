use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Indices into [`ParamStore::params`] for one encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerLayout {
    pub ln1_gamma: usize,
    pub ln1_beta: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_gamma: usize,
    pub ln2_beta: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchLayout {
    pub embed_w: usize,
    pub embed_b: usize,
    pub layers: Vec<LayerLayout>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub history: BranchLayout,
    /// Absent when the future branch is disabled.
    pub future: Option<BranchLayout>,
    /// Learned stand-in for the selected future embeddings when the future
    /// branch is disabled.
    pub future_const: Option<usize>,
    pub head_w: usize,
    pub head_b: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

struct Builder<T> {
    params: Vec<Param<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Xavier => {
                let (fan_in, fan_out) = (shape[0], shape[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| T::lit(self.rng.random_range(-a..a))).collect()
            }
        };
        self.params.push(Param { name, shape, data });
        self.params.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        let w = self.add(format!("{prefix}.weight"), vec![fan_in, fan_out], Init::Xavier);
        let b = self.add(format!("{prefix}.bias"), vec![fan_out], Init::Zeros);
        (w, b)
    }

    fn branch(&mut self, name: &str, width: usize, c: &ModelConfig) -> BranchLayout {
        let (embed_w, embed_b) = self.linear(&format!("{name}.embed"), width, c.d_model);
        let d = c.d_model;
        let layers = (0..c.n_layers)
            .map(|i| {
                let p = format!("{name}.layer{i}");
                let ln1_gamma = self.add(format!("{p}.norm1.gamma"), vec![d], Init::Ones);
                let ln1_beta = self.add(format!("{p}.norm1.beta"), vec![d], Init::Zeros);
                let (wq, bq) = self.linear(&format!("{p}.attn.q"), d, d);
                let (wk, bk) = self.linear(&format!("{p}.attn.k"), d, d);
                let (wv, bv) = self.linear(&format!("{p}.attn.v"), d, d);
                let (wo, bo) = self.linear(&format!("{p}.attn.o"), d, d);
                let ln2_gamma = self.add(format!("{p}.norm2.gamma"), vec![d], Init::Ones);
                let ln2_beta = self.add(format!("{p}.norm2.beta"), vec![d], Init::Zeros);
                let (w1, b1) = self.linear(&format!("{p}.ffn1"), d, c.ffn_dim);
                let (w2, b2) = self.linear(&format!("{p}.ffn2"), c.ffn_dim, d);
                LayerLayout {
                    ln1_gamma,
                    ln1_beta,
                    wq,
                    bq,
                    wk,
                    bk,
                    wv,
                    bv,
                    wo,
                    bo,
                    ln2_gamma,
                    ln2_beta,
                    w1,
                    b1,
                    w2,
                    b2,
                }
            })
            .collect();
        BranchLayout {
            embed_w,
            embed_b,
            layers,
        }
    }
}

/// Named parameters in a fixed creation order, plus their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub params: Vec<Param<T>>,
    pub layout: ParamLayout,
}

impl<T: Scalar> ParamStore<T> {
    /// Xavier-uniform weights, zero biases and shifts, unit gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut b = Builder {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let history = b.branch("history", config.history_width, config);
        let (future, future_const) = if config.inputs.future {
            (Some(b.branch("future", config.future_width, config)), None)
        } else {
            (None, Some(b.add("future_const".into(), vec![config.d_model], Init::Zeros)))
        };
        let (head_w, head_b) = b.linear("head", 2 * config.d_model, 3);
        Self {
            params: b.params,
            layout: ParamLayout {
                history,
                future,
                future_const,
                head_w,
                head_b,
            },
        }
    }

    /// Replaces values with `params` after checking names and shapes against
    /// a fresh layout for `config`.
    pub fn from_params(config: &ModelConfig, params: Vec<Param<T>>) -> Result<Self, String> {
        let mut store = Self::init(config, 0);
        if store.params.len() != params.len() {
            return Err(format!("expected {} parameters, found {}", store.params.len(), params.len()));
        }
        for (slot, p) in store.params.iter_mut().zip(params) {
            if slot.name != p.name || slot.shape != p.shape || p.data.len() != slot.data.len() {
                return Err(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name, p.shape, slot.name, slot.shape
                ));
            }
            slot.data = p.data;
        }
        Ok(store)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}
