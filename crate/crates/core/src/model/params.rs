use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use super::{ModelConfig, ModelError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attn {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ffn {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayer {
    pub ln1: Norm,
    pub attn: Attn,
    pub ln2: Norm,
    pub ffn: Ffn,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayer {
    pub ln1: Norm,
    pub self_attn: Attn,
    pub ln2: Norm,
    pub cross: Attn,
    pub ln3: Norm,
    pub ffn: Ffn,
}

/// Tensor indices into `ModelParams::tensors`.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub embed: usize,
    pub enc: Vec<EncLayer>,
    pub enc_ln: Norm,
    pub dec: Vec<DecLayer>,
    pub dec_ln: Norm,
}

enum Init {
    Ones,
    Zeros,
    Uniform(f64),
}

struct Builder<'a> {
    names: Vec<String>,
    shapes: Vec<(usize, usize, Init)>,
    cfg: &'a ModelConfig,
}

impl Builder<'_> {
    fn push(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols, init));
        self.names.len() - 1
    }

    fn norm(&mut self, prefix: &str) -> Norm {
        let d = self.cfg.d_model;
        Norm {
            g: self.push(format!("{prefix}.gamma"), 1, d, Init::Ones),
            b: self.push(format!("{prefix}.beta"), 1, d, Init::Zeros),
        }
    }

    fn linear(&mut self, name: String, fan_in: usize, fan_out: usize, gain: f64) -> usize {
        // uniform with standard deviation gain / sqrt(fan_in)
        let a = gain * (3.0 / fan_in as f64).sqrt();
        self.push(name, fan_in, fan_out, Init::Uniform(a))
    }

    fn attn(&mut self, prefix: &str) -> Attn {
        let d = self.cfg.d_model;
        let out_gain = 1.0 / (2.0 * self.cfg.n_layers as f64).sqrt();
        Attn {
            wq: self.linear(format!("{prefix}.wq"), d, d, 1.0),
            wk: self.linear(format!("{prefix}.wk"), d, d, 1.0),
            wv: self.linear(format!("{prefix}.wv"), d, d, 1.0),
            wo: self.linear(format!("{prefix}.wo"), d, d, out_gain),
        }
    }

    fn ffn(&mut self, prefix: &str) -> Ffn {
        let (d, f) = (self.cfg.d_model, self.cfg.ffn_dim);
        let out_gain = 1.0 / (2.0 * self.cfg.n_layers as f64).sqrt();
        Ffn {
            w1: self.linear(format!("{prefix}.w1"), d, f, 1.0),
            b1: self.push(format!("{prefix}.b1"), 1, f, Init::Zeros),
            w2: self.linear(format!("{prefix}.w2"), f, d, out_gain),
            b2: self.push(format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<String>, Vec<(usize, usize, Init)>) {
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
        cfg,
    };
    let d = cfg.d_model;
    let embed = b.push("embed".into(), cfg.vocab_size, d, Init::Uniform((3.0 / d as f64).sqrt()));
    let enc = (0..cfg.n_layers)
        .map(|l| {
            let p = format!("enc.{l}");
            EncLayer {
                ln1: b.norm(&format!("{p}.ln1")),
                attn: b.attn(&format!("{p}.attn")),
                ln2: b.norm(&format!("{p}.ln2")),
                ffn: b.ffn(&format!("{p}.ffn")),
            }
        })
        .collect();
    let enc_ln = b.norm("enc.ln_f");
    let dec = (0..cfg.n_layers)
        .map(|l| {
            let p = format!("dec.{l}");
            DecLayer {
                ln1: b.norm(&format!("{p}.ln1")),
                self_attn: b.attn(&format!("{p}.self")),
                ln2: b.norm(&format!("{p}.ln2")),
                cross: b.attn(&format!("{p}.cross")),
                ln3: b.norm(&format!("{p}.ln3")),
                ffn: b.ffn(&format!("{p}.ffn")),
            }
        })
        .collect();
    let dec_ln = b.norm("dec.ln_f");
    (
        Layout {
            embed,
            enc,
            enc_ln,
            dec,
            dec_ln,
        },
        b.names,
        b.shapes,
    )
}

/// All weights of the encoder-decoder. The output projection is tied to the
/// token embedding.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    config: ModelConfig,
    names: Vec<String>,
    pub(crate) tensors: Vec<Matrix<T>>,
    pub(crate) layout: Layout,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (layout, names, shapes) = build_layout(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let tensors = shapes
            .into_iter()
            .map(|(r, c, init)| match init {
                Init::Ones => Matrix::from_fn(r, c, |_, _| T::one()),
                Init::Zeros => Matrix::zeros(r, c),
                Init::Uniform(a) => Matrix::from_fn(r, c, |_, _| T::of(rng.gen_range(-a..a))),
            })
            .collect();
        Ok(ModelParams {
            config: cfg.clone(),
            names,
            tensors,
            layout,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<(String, Matrix<T>)>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (layout, names, shapes) = build_layout(cfg);
        if tensors.len() != names.len() {
            return Err(ModelError::Checkpoint(format!("expected {} tensors, found {}", names.len(), tensors.len())));
        }
        let mut out = Vec::with_capacity(names.len());
        for ((name, (r, c, _)), (got_name, m)) in names.iter().zip(&shapes).zip(tensors) {
            if *name != got_name || m.shape() != (*r, *c) {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {got_name} {:?} does not match expected {name} {:?}",
                    m.shape(),
                    (r, c)
                )));
            }
            if !m.all_finite() {
                return Err(ModelError::Checkpoint(format!("tensor {name} has non-finite values")));
            }
            out.push(m);
        }
        Ok(ModelParams {
            config: cfg.clone(),
            names,
            tensors: out,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::all_finite)
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|m| Matrix::from_vec(m.rows(), m.cols(), m.data().iter().map(|v| U::of(v.to_f64_lossy())).collect()))
                .collect(),
            layout: self.layout.clone(),
        }
    }

    pub(crate) fn t(&self, i: usize) -> &Matrix<T> {
        &self.tensors[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_by_seed() {
        let cfg = ModelConfig::small(50);
        let a = ModelParams::<f64>::init(&cfg).unwrap();
        let b = ModelParams::<f64>::init(&cfg).unwrap();
        assert_eq!(a.tensors, b.tensors);
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(ModelParams::<f64>::init(&other).unwrap().tensors, a.tensors);
    }

    #[test]
    fn tiny_config_is_small() {
        let p = ModelParams::<f64>::init(&ModelConfig::tiny(40)).unwrap();
        assert!(p.param_count() <= 10_000, "{}", p.param_count());
        assert!(p.all_finite());
        assert_eq!(p.tensor("embed").unwrap().shape(), (40, 8));
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = ModelConfig::small(50);
        cfg.n_heads = 3;
        assert!(ModelParams::<f64>::init(&cfg).is_err());
    }
}
