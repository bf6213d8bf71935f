use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use super::{ModelConfig, ModelParams, ParamGrads};
use crate::attention::{gdp, sfa, AttentionParams, FfnParams};
use crate::cloud::{fps, fps_coords, PointCloud};
use crate::error::{bail, Result};
use crate::real::Real;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Parameters registered as leaves of one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
    heads: usize,
}

impl Bound {
    pub fn bind<T: Real>(tape: &mut Tape<T>, params: &ModelParams<T>, cfg: &ModelConfig) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| (String::from(name), tape.leaf(t.clone(), true)))
            .collect();
        Bound { vars, heads: cfg.heads }
    }

    /// Wraps leaves that already exist on a tape, keyed by parameter name.
    pub fn from_vars(vars: BTreeMap<String, Var>, heads: usize) -> Self {
        Bound { vars, heads }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        match self.vars.get(name) {
            Some(&v) => Ok(v),
            None => bail!(Config, "parameter {} is not bound", name),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Collects one gradient per parameter; parameters the output does not
    /// depend on get zeros.
    pub fn gradients<T: Real>(&self, tape: &Tape<T>, mut grads: Gradients<T>) -> ParamGrads<T> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
                (name.clone(), g)
            })
            .collect()
    }

    fn linear<T: Real>(&self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let h = tape.matmul(x, self.var(&format!("{prefix}.w"))?)?;
        tape.add_row(h, self.var(&format!("{prefix}.b"))?)
    }

    fn mlp2<T: Real>(&self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(tape, x, &format!("{prefix}.l1"))?;
        let h = tape.relu(h)?;
        self.linear(tape, h, &format!("{prefix}.l2"))
    }

    /// Attention and feed-forward handles of the block named `prefix`.
    pub fn block(&self, prefix: &str) -> Result<(AttentionParams, FfnParams)> {
        let v = |s: &str| self.var(&format!("{prefix}.{s}"));
        let attn = AttentionParams {
            w_q: v("w_q")?,
            w_kv: v("w_kv")?,
            w_o: v("w_o")?,
            norm_gain: v("norm1.gain")?,
            norm_bias: v("norm1.bias")?,
            heads: self.heads,
        };
        let ff = FfnParams {
            w1: v("ffn.l1.w")?,
            b1: v("ffn.l1.b")?,
            w2: v("ffn.l2.w")?,
            b2: v("ffn.l2.b")?,
            norm_gain: v("norm2.gain")?,
            norm_bias: v("norm2.bias")?,
        };
        Ok((attn, ff))
    }

    fn sfa<T: Real>(&self, tape: &mut Tape<T>, x: Var, ratio: usize, prefix: &str) -> Result<Var> {
        let (attn, ff) = self.block(prefix)?;
        sfa(tape, x, ratio, &attn, &ff)
    }
}

/// FPS start row for a cloud of `n` points.
fn fps_start(cfg: &ModelConfig, n: usize) -> usize {
    match cfg.fps_seed {
        None => 0,
        Some(seed) => {
            // splitmix64 finalizer
            let mut z = seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            (z % n as u64) as usize
        }
    }
}

/// The three predicted clouds (n×3 tape values) and the shape code.
#[derive(Debug, Clone, Copy)]
pub struct Predictions {
    pub p0: Var,
    pub p1: Var,
    pub p2: Var,
    pub code: Var,
}

impl Predictions {
    pub fn clouds(&self) -> [Var; 3] {
        [self.p0, self.p1, self.p2]
    }
}

/// Encodes a partial cloud into a 1 × code_width shape code.
pub fn feature_extractor<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    partial: &PointCloud<T>,
) -> Result<Var> {
    if partial.len() != cfg.n_points {
        bail!(Argument, "expected {} input points, got {}", cfg.n_points, partial.len());
    }
    let input = tape.constant(partial.to_tensor());
    let mut x = bound.mlp2(tape, input, "encoder.embed")?;
    let mut coords = partial.clone();
    let u = cfg.encoder_sfa_ratio();
    for (i, &ratio) in cfg.gdp_ratios.iter().enumerate() {
        let stage = i + 1;
        let start = fps_start(cfg, coords.len());
        if cfg.disable_gdp {
            if !coords.len().is_multiple_of(ratio) {
                bail!(Config, "{} points not divisible by ratio {}", coords.len(), ratio);
            }
            let sel = fps(&coords, coords.len() / ratio, start)?;
            x = tape.gather_rows(x, &sel.indices)?;
            coords = coords.select(&sel.indices)?;
        } else {
            let (attn, ff) = bound.block(&format!("encoder.gdp{stage}"))?;
            let out = gdp(tape, x, &coords, ratio, start, &attn, &ff)?;
            x = out.features;
            coords = out.coords;
        }
        if !cfg.disable_encoder_sfa {
            x = bound.sfa(tape, x, u, &format!("encoder.sfa{stage}"))?;
        }
    }
    let h = bound.mlp2(tape, x, "encoder.head")?;
    tape.max_over_rows(h)
}

/// Decodes coarse points from the code, merges them with the input and
/// keeps `seed_count` of the union by FPS.
pub fn seed_generator<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    code: Var,
    partial: &PointCloud<T>,
) -> Result<Var> {
    let (m0, cs) = (cfg.seed_coarse, cfg.seed_width);
    let flat = bound.linear(tape, code, "seed.decode")?;
    let mut x = tape.reshape(flat, &[m0, cs])?;
    x = bound.linear(tape, x, "seed.lift")?;
    x = tape.relu(x)?;
    for i in 1..=3 {
        x = bound.sfa(tape, x, 1, &format!("seed.sfa{i}"))?;
    }
    let coarse = bound.mlp2(tape, x, "seed.coord")?;
    let input = tape.constant(partial.to_tensor());
    let merged = tape.concat_rows(&[coarse, input])?;
    let n = m0 + partial.len();
    let sel = fps_coords(tape.value(merged).data(), cfg.seed_count, fps_start(cfg, n))?;
    tape.gather_rows(merged, &sel.indices)
}

/// Generator `g` (0 or 1): upsamples K×3 seeds into K·r×3 points as seed
/// copies plus predicted offsets.
pub fn point_generator<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    g: usize,
    seeds: Var,
    code: Var,
) -> Result<Var> {
    if g > 1 {
        bail!(Argument, "generator index {} out of range", g);
    }
    let p = format!("gen{}", g + 1);
    let (k, _) = tape.value(seeds).dims2()?;
    let f1 = bound.mlp2(tape, seeds, &format!("{p}.seed_map"))?;
    let f2 = bound.mlp2(tape, code, &format!("{p}.code_map"))?;
    let f2 = tape.tile_rows(f2, k)?;
    let mut x = tape.concat_cols(&[f1, f2])?;
    for (i, &u) in cfg.gen_ratios[g].iter().enumerate() {
        x = bound.sfa(tape, x, u, &format!("{p}.sfa{}", i + 1))?;
    }
    let r = cfg.gen_factor(g);
    let width = tape.value(x).dims2()?.1;
    if width % r != 0 {
        bail!(Config, "width {} does not split into {} sub-points", width, r);
    }
    let split = tape.reshape(x, &[k * r, width / r])?;
    let f1r = tape.repeat_rows(f1, r)?;
    let joined = tape.concat_cols(&[split, f1r])?;
    let offsets = bound.mlp2(tape, joined, &format!("{p}.offset"))?;
    let base = tape.repeat_rows(seeds, r)?;
    tape.add(base, offsets)
}

/// Full network: partial cloud → (P0, P1, P2).
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    partial: &PointCloud<T>,
) -> Result<Predictions> {
    let code = feature_extractor(tape, bound, cfg, partial)?;
    let p0 = seed_generator(tape, bound, cfg, code, partial)?;
    let p1 = point_generator(tape, bound, cfg, 0, p0, code)?;
    let p2 = point_generator(tape, bound, cfg, 1, p1, code)?;
    Ok(Predictions { p0, p1, p2, code })
}

/// Inference on a private tape: returns P0, P1, P2.
pub fn predict<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    partial: &PointCloud<T>,
) -> Result<[PointCloud<T>; 3]> {
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, params, cfg);
    let preds = forward(&mut tape, &bound, cfg, partial)?;
    let out = |v: Var| PointCloud::from_tensor(tape.value(v));
    Ok([out(preds.p0)?, out(preds.p1)?, out(preds.p2)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_pair, PartialMethod, ShapeKind};
    use crate::train::{sample_gradients, Sample};
    use crate::ChamferVariant;

    fn toy_partial(cfg: &ModelConfig) -> PointCloud<f64> {
        generate_pair(ShapeKind::category("torus").unwrap(), 2, cfg.n_points, 128, PartialMethod::HalfSpace)
            .unwrap()
            .partial
    }

    #[test]
    fn preset_cascades() {
        assert_eq!(ModelConfig::desk().output_sizes(), [512, 1024, 2048]);
        assert_eq!(ModelConfig::completion3d().output_sizes(), [512, 1024, 2048]);
        assert_eq!(ModelConfig::pcn().output_sizes(), [512, 2048, 16384]);
        assert_eq!(ModelConfig::toy().output_sizes(), [16, 32, 64]);
        for name in ["toy", "desk", "completion3d", "pcn"] {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("huge").is_none());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = ModelConfig::toy();
        let cases = [
            ModelConfig { n_points: 30, ..base.clone() },
            ModelConfig { heads: 3, ..base.clone() },
            ModelConfig { seed_count: 100, ..base.clone() },
            ModelConfig { gdp_ratios: [2, 0, 2], ..base.clone() },
            ModelConfig { split_base: 3, ..base.clone() },
            ModelConfig { embed_width: 0, ..base },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn forward_shapes_for_every_variant() {
        let base = ModelConfig::toy();
        for (gdp_off, sfa_off) in [(false, false), (true, false), (false, true), (true, true)] {
            let cfg = ModelConfig { disable_gdp: gdp_off, disable_encoder_sfa: sfa_off, ..base.clone() };
            cfg.validate().unwrap();
            let params = ModelParams::<f64>::init(&cfg, 4).unwrap();
            let mut tape = Tape::new();
            let b = Bound::bind(&mut tape, &params, &cfg);
            let out = forward(&mut tape, &b, &cfg, &toy_partial(&cfg)).unwrap();
            assert_eq!(tape.value(out.code).shape(), &[1, cfg.code_width]);
            for (v, n) in out.clouds().into_iter().zip(cfg.output_sizes()) {
                assert_eq!(tape.value(v).shape(), &[n, 3]);
                assert!(tape.value(v).is_finite());
            }
        }
    }

    #[test]
    fn zero_weights_give_finite_output() {
        let cfg = ModelConfig::toy();
        let params = ModelParams::<f64>::filled(&cfg, 0.0).unwrap();
        let [p0, p1, p2] = predict(&params, &cfg, &toy_partial(&cfg)).unwrap();
        assert!(p0.to_tensor().is_finite() && p1.to_tensor().is_finite() && p2.to_tensor().is_finite());
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let cfg = ModelConfig::toy();
        let params = ModelParams::<f64>::init(&cfg, 0).unwrap();
        let p = toy_partial(&cfg).select(&[0, 1, 2, 3]).unwrap();
        assert!(predict(&params, &cfg, &p).is_err());
    }

    #[test]
    fn no_parameter_is_dead() {
        let cfg = ModelConfig::toy();
        let pair = generate_pair(ShapeKind::category("cone").unwrap(), 1, cfg.n_points, 128, PartialMethod::Viewpoint).unwrap();
        let s = Sample::new("a".into(), pair.category, pair.partial, pair.complete, &cfg).unwrap();
        let params = ModelParams::<f64>::init(&cfg, 9).unwrap();
        let g = sample_gradients(&params, &cfg, &s, [1.0; 3], ChamferVariant::L2).unwrap();
        assert_eq!(g.grads.len(), params.len());
        for (name, t) in &g.grads {
            assert!(t.data().iter().any(|&x| x != 0.0), "{name} has an all-zero gradient");
        }
    }
}
