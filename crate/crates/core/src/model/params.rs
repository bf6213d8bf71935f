use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{bail, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±√(6 / (fan_in + fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) {
        self.push(name, vec![fan_in, fan_out], Init::Glorot { fan_in, fan_out });
    }

    fn linear(&mut self, prefix: &str, c_in: usize, c_out: usize) {
        self.weight(format!("{prefix}.w"), c_in, c_out);
        self.push(format!("{prefix}.b"), vec![c_out], Init::Zeros);
    }

    fn mlp2(&mut self, prefix: &str, c_in: usize, hidden: usize, c_out: usize) {
        self.linear(&format!("{prefix}.l1"), c_in, hidden);
        self.linear(&format!("{prefix}.l2"), hidden, c_out);
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.gain"), vec![c], Init::Ones);
        self.push(format!("{prefix}.bias"), vec![c], Init::Zeros);
    }

    /// Attention + feed-forward block with input width `c_in`, output `c_out`.
    fn block(&mut self, prefix: &str, c_in: usize, c_out: usize) {
        self.weight(format!("{prefix}.w_q"), c_in, c_out);
        self.weight(format!("{prefix}.w_kv"), c_in, c_out);
        self.weight(format!("{prefix}.w_o"), c_out, c_out);
        self.norm(&format!("{prefix}.norm1"), c_out);
        self.mlp2(&format!("{prefix}.ffn"), c_out, 2 * c_out, c_out);
        self.norm(&format!("{prefix}.norm2"), c_out);
    }
}

/// Every learnable tensor of the network, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Specs(Vec::new());
    let c0 = cfg.embed_width;
    s.mlp2("encoder.embed", 3, c0, c0);
    let mut c = c0;
    let u = cfg.encoder_sfa_ratio();
    for i in 1..=3 {
        if !cfg.disable_gdp {
            s.block(&format!("encoder.gdp{i}"), c, c);
            c *= 2;
        }
        if !cfg.disable_encoder_sfa {
            s.block(&format!("encoder.sfa{i}"), c, u * c);
            c *= u;
        }
    }
    s.mlp2("encoder.head", c, c, cfg.code_width);

    let cs = cfg.seed_width;
    s.linear("seed.decode", cfg.code_width, cfg.seed_coarse * cs);
    s.linear("seed.lift", cs, cs);
    for i in 1..=3 {
        s.block(&format!("seed.sfa{i}"), cs, cs);
    }
    s.mlp2("seed.coord", cs, cs, 3);

    for g in 0..2 {
        let p = format!("gen{}", g + 1);
        let cf = cfg.gen_width;
        s.mlp2(&format!("{p}.seed_map"), 3, cf, cf);
        s.mlp2(&format!("{p}.code_map"), cfg.code_width, cf, cf);
        let mut w = 2 * cf;
        for (i, &u) in cfg.gen_ratios[g].iter().enumerate() {
            s.block(&format!("{p}.sfa{}", i + 1), w, u * w);
            w *= u;
        }
        let sub = cfg.gen_split_width(g) + cf;
        s.mlp2(&format!("{p}.offset"), sub, sub, 3);
    }
    s.0
}

/// Named learnable tensors, keyed by dotted path such as `encoder.gdp1.w_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Gradients keyed like [`ModelParams`].
pub type ParamGrads<T> = BTreeMap<String, Tensor<T>>;

impl<T: Real> ModelParams<T> {
    /// Deterministic initialization from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in param_specs(cfg) {
            let count: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Glorot { fan_in, fan_out } => {
                    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                    (0..count).map(|_| T::of(rng.random_range(-limit..limit))).collect()
                }
                Init::Zeros => vec![T::zero(); count],
                Init::Ones => vec![T::one(); count],
            };
            tensors.insert(spec.name, Tensor::new(&spec.shape, data)?);
        }
        Ok(ModelParams { tensors })
    }

    /// Every tensor filled with `value`.
    pub fn filled(cfg: &ModelConfig, value: T) -> Result<Self> {
        cfg.validate()?;
        let tensors = param_specs(cfg)
            .into_iter()
            .map(|s| {
                let t = Tensor::full(&s.shape, value);
                (s.name, t)
            })
            .collect();
        Ok(ModelParams { tensors })
    }

    /// Builds from explicit tensors, checking names and shapes against `cfg`.
    pub fn from_tensors(cfg: &ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let specs = param_specs(cfg);
        if specs.len() != tensors.len() {
            bail!(Config, "expected {} parameters, got {}", specs.len(), tensors.len());
        }
        for spec in &specs {
            match tensors.get(&spec.name) {
                None => bail!(Config, "missing parameter {}", spec.name),
                Some(t) if t.shape() != spec.shape.as_slice() => bail!(
                    Config,
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                ),
                Some(_) => {}
            }
        }
        Ok(ModelParams { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}
