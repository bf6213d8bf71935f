//! Self-checks shared by the command line and the test suites: central
//! finite differences for every differentiable op, a brute-force FPS oracle,
//! Chamfer invariants and the shape contracts of the network.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{gdp, sfa, AttentionParams, FfnParams};
use crate::cloud::{chamfer_distance, fps, ChamferVariant, PointCloud};
use crate::error::{bail, Result};
use crate::gradcheck::{grad_check_faulty, grad_check_many};
use crate::model::{forward, Bound, ModelConfig, ModelParams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::train::multi_scale_loss;

/// Finite-difference tolerance on `|analytic − numeric| / max(1, |analytic|)`.
pub const GRAD_TOL: f64 = 1e-4;
/// Finite-difference step.
pub const GRAD_STEP: f64 = 1e-6;
/// Tolerance of the Chamfer invariants that are not bit-exact.
pub const CD_TOL: f64 = 1e-10;
/// Random instances per FPS and Chamfer suite.
pub const INSTANCES: usize = 100;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    /// Largest observed error (0 for exact checks that passed).
    pub max_err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl Check {
    fn within(name: impl Into<String>, max_err: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            max_err,
            tol,
            passed: max_err <= tol,
        }
    }

    fn exact(name: impl Into<String>, mismatches: usize) -> Self {
        Check {
            name: name.into(),
            max_err: mismatches as f64,
            tol: 0.0,
            passed: mismatches == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Grads,
    Fps,
    Cd,
    Shapes,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "grads" => Suite::Grads,
            "fps" => Suite::Fps,
            "cd" => Suite::Cd,
            "shapes" => Suite::Shapes,
            "all" => Suite::All,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    pub seed: u64,
    /// Runs the analytic gradients on tapes with a corrupted backward rule.
    #[doc(hidden)]
    pub inject_fault: bool,
}

pub fn run(suite: Suite, opts: Options) -> Result<Vec<Check>> {
    Ok(match suite {
        Suite::Grads => grads(opts)?,
        Suite::Fps => fps_suite(opts)?,
        Suite::Cd => cd_suite(opts)?,
        Suite::Shapes => shapes()?,
        Suite::All => {
            let mut all = grads(opts)?;
            all.extend(fps_suite(opts)?);
            all.extend(cd_suite(opts)?);
            all.extend(shapes()?);
            all
        }
    })
}

// ---------------------------------------------------------------- gradients

type Scalar = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("non-empty shape")
}

/// Values in ±[0.1, 1], away from the rectifier kink.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape, 0.1, 1.0).map(|v| v * if v > 0.55 { 1.0 } else { -1.0 })
}

/// Reduces `y` to a scalar through a fixed pseudo-random weighting.
fn project(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e1_u64 ^ shape.iter().product::<usize>() as u64);
    let w = tape.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn op(f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Scalar {
    Box::new(move |tape, v| {
        let y = f(tape, v)?;
        project(tape, y)
    })
}

fn block_inputs(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Vec<Tensor<f64>> {
    let mut w = |r: usize, c: usize| uniform(rng, &[r, c], -0.6, 0.6);
    let (wq, wkv, wo) = (w(c_in, c_out), w(c_in, c_out), w(c_out, c_out));
    let (w1, w2) = (w(c_out, 2 * c_out), w(2 * c_out, c_out));
    let mut v = |c: usize, lo: f64, hi: f64| uniform(rng, &[c], lo, hi);
    vec![
        wq,
        wkv,
        wo,
        v(c_out, 0.5, 1.5),
        v(c_out, -0.2, 0.2),
        w1,
        v(2 * c_out, -0.2, 0.2),
        w2,
        v(c_out, -0.2, 0.2),
        v(c_out, 0.5, 1.5),
        v(c_out, -0.2, 0.2),
    ]
}

fn block_params(v: &[Var], heads: usize) -> (AttentionParams, FfnParams) {
    (
        AttentionParams {
            w_q: v[0],
            w_kv: v[1],
            w_o: v[2],
            norm_gain: v[3],
            norm_bias: v[4],
            heads,
        },
        FfnParams {
            w1: v[5],
            b1: v[6],
            w2: v[7],
            b2: v[8],
            norm_gain: v[9],
            norm_bias: v[10],
        },
    )
}

struct Case {
    name: &'static str,
    f: Scalar,
    inputs: Vec<Tensor<f64>>,
}

fn grad_cases(seed: u64) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases = Vec::new();
    let mut add = |name, f, inputs| cases.push(Case { name, f, inputs });
    add("matmul", op(|t, v| t.matmul(v[0], v[1])), vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 5], -1.0, 1.0)]);
    add("matmul_nt", op(|t, v| t.matmul_nt(v[0], v[1])), vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[5, 4], -1.0, 1.0)]);
    add("transpose", op(|t, v| t.transpose(v[0])), vec![uniform(r, &[3, 4], -1.0, 1.0)]);
    add("add", op(|t, v| t.add(v[0], v[1])), vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)]);
    add("sub", op(|t, v| t.sub(v[0], v[1])), vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)]);
    add("mul", op(|t, v| t.mul(v[0], v[1])), vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)]);
    add("add_row", op(|t, v| t.add_row(v[0], v[1])), vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)]);
    add("scale", op(|t, v| t.scale(v[0], -1.7)), vec![uniform(r, &[3, 4], -1.0, 1.0)]);
    add("relu", op(|t, v| t.relu(v[0])), vec![off_zero(r, &[4, 5])]);
    add(
        "elementwise",
        op(|t, v| t.elementwise(v[0], libm::tanh, |x| 1.0 - libm::tanh(x) * libm::tanh(x))),
        vec![uniform(r, &[3, 4], -2.0, 2.0)],
    );
    add("softmax_rows", op(|t, v| t.softmax_rows(v[0])), vec![uniform(r, &[3, 5], -2.0, 2.0)]);
    add(
        "layer_norm",
        op(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-6)),
        vec![uniform(r, &[4, 6], -1.0, 1.0), uniform(r, &[6], 0.5, 1.5), uniform(r, &[6], -0.5, 0.5)],
    );
    add("concat_cols", op(|t, v| t.concat_cols(&[v[0], v[1]])), vec![uniform(r, &[3, 2], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)]);
    add("concat_rows", op(|t, v| t.concat_rows(&[v[0], v[1]])), vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[4, 3], -1.0, 1.0)]);
    add("slice_cols", op(|t, v| t.slice_cols(v[0], 1, 4)), vec![uniform(r, &[3, 5], -1.0, 1.0)]);
    add("reshape", op(|t, v| t.reshape(v[0], &[6, 2])), vec![uniform(r, &[3, 4], -1.0, 1.0)]);
    add("max_over_rows", op(|t, v| t.max_over_rows(v[0])), vec![uniform(r, &[5, 3], -1.0, 1.0)]);
    add("tile_rows", op(|t, v| t.tile_rows(v[0], 3)), vec![uniform(r, &[2, 3], -1.0, 1.0)]);
    add("repeat_rows", op(|t, v| t.repeat_rows(v[0], 3)), vec![uniform(r, &[2, 3], -1.0, 1.0)]);
    add("gather_rows", op(|t, v| t.gather_rows(v[0], &[3, 0, 3, 1])), vec![uniform(r, &[4, 3], -1.0, 1.0)]);
    add("sum", Box::new(|t, v| t.sum(v[0])), vec![uniform(r, &[3, 4], -1.0, 1.0)]);
    add("mean", Box::new(|t, v| t.mean(v[0])), vec![uniform(r, &[3, 4], -1.0, 1.0)]);
    add(
        "multi_head_attention",
        op(|t, v| t.multi_head_attention(v[0], v[1], v[2], 2)),
        vec![uniform(r, &[4, 6], -1.0, 1.0), uniform(r, &[5, 6], -1.0, 1.0), uniform(r, &[5, 6], -1.0, 1.0)],
    );
    for (name, variant) in [("chamfer_l1", ChamferVariant::L1), ("chamfer_l2", ChamferVariant::L2)] {
        add(
            name,
            Box::new(move |t, v| t.chamfer(v[0], v[1], variant)),
            vec![uniform(r, &[6, 3], -1.0, 1.0), uniform(r, &[7, 3], -1.0, 1.0)],
        );
    }

    let coords = PointCloud::new(uniform(r, &[8, 3], -1.0, 1.0).into_data())?;
    let mut inputs = vec![uniform(r, &[8, 4], -1.0, 1.0)];
    inputs.extend(block_inputs(r, 4, 4));
    add(
        "gdp_block",
        op(move |t, v| {
            let (attn, ff) = block_params(&v[1..], 2);
            Ok(gdp(t, v[0], &coords, 2, 0, &attn, &ff)?.features)
        }),
        inputs,
    );
    let mut inputs = vec![uniform(r, &[6, 4], -1.0, 1.0)];
    inputs.extend(block_inputs(r, 4, 8));
    add(
        "sfa_block",
        op(|t, v| {
            let (attn, ff) = block_params(&v[1..], 2);
            sfa(t, v[0], 2, &attn, &ff)
        }),
        inputs,
    );
    Ok(cases)
}

/// The multi-scale L2 loss of the toy model as a function of every parameter.
fn model_case(seed: u64) -> Result<Case> {
    let cfg = ModelConfig::toy();
    let params = ModelParams::<f64>::init(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70f);
    let partial = PointCloud::new(uniform(&mut rng, &[cfg.n_points, 3], -1.0, 1.0).into_data())?;
    let gt = PointCloud::new(uniform(&mut rng, &[2 * cfg.output_sizes()[2], 3], -1.0, 1.0).into_data())?;
    let names: Vec<String> = params.iter().map(|(n, _)| String::from(n)).collect();
    let inputs = params.iter().map(|(_, t)| t.clone()).collect();
    let heads = cfg.heads;
    let f: Scalar = Box::new(move |tape, vars| {
        let map: BTreeMap<String, Var> = names.iter().cloned().zip(vars.iter().copied()).collect();
        let bound = Bound::from_vars(map, heads);
        let preds = forward(tape, &bound, &cfg, &partial)?;
        multi_scale_loss(tape, preds.clouds(), &gt, [1.0; 3], ChamferVariant::L2)
    });
    Ok(Case {
        name: "toy_model_loss",
        f,
        inputs,
    })
}

/// Finite-difference checks of every op, both attention blocks and the full
/// toy-model loss, at 64-bit.
pub fn grads(opts: Options) -> Result<Vec<Check>> {
    let mut cases = grad_cases(opts.seed)?;
    cases.push(model_case(opts.seed)?);
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let report = if opts.inject_fault {
            grad_check_faulty(&case.f, &case.inputs, GRAD_STEP, 1)?
        } else {
            grad_check_many(&case.f, &case.inputs, GRAD_STEP, 1)?
        };
        out.push(Check::within(format!("grad/{}", case.name), report.max_rel_err, GRAD_TOL));
    }
    Ok(out)
}

// ---------------------------------------------------------------------- fps

/// Greedy max-min selection recomputing every distance from scratch; ties
/// resolve to the lowest index.
pub fn fps_oracle(points: &[[f64; 3]], k: usize, start: usize) -> Vec<usize> {
    let d2 = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum::<f64>();
    let mut chosen = vec![start];
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let near = chosen.iter().map(|&j| d2(p, &points[j])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, b)| near > b) {
                best = Some((i, near));
            }
        }
        chosen.push(best.expect("k ≤ n").0);
    }
    chosen
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    // a coarse lattice half of the time, so exact distance ties occur
    let lattice = rng.random::<bool>();
    (0..n)
        .map(|_| {
            let mut p = [0.0; 3];
            for v in &mut p {
                *v = if lattice {
                    rng.random_range(0..4) as f64
                } else {
                    rng.random_range(-1.0..1.0)
                };
            }
            p
        })
        .collect()
}

pub fn fps_suite(opts: Options) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xf95);
    let (mut mismatch, mut prefix) = (0, 0);
    for _ in 0..INSTANCES {
        let n = rng.random_range(1..=256);
        let k = rng.random_range(1..=n.min(64));
        let start = rng.random_range(0..n);
        let pts = random_cloud(&mut rng, n);
        let cloud = PointCloud::from_points(&pts)?;
        let got = fps(&cloud, k, start)?.indices;
        if got != fps_oracle(&pts, k, start) {
            mismatch += 1;
        }
        let shorter = fps(&cloud, rng.random_range(1..=k), start)?.indices;
        if got[..shorter.len()] != shorter[..] {
            prefix += 1;
        }
    }
    Ok(vec![Check::exact("fps/oracle", mismatch), Check::exact("fps/prefix", prefix)])
}

// ------------------------------------------------------------------ chamfer

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn cd_suite(opts: Options) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xcd);
    let mut asym = 0;
    let mut negative = 0;
    let mut nonzero_identity = 0;
    let mut perm_err: f64 = 0.0;
    let mut hom_err: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (n, m) = (rng.random_range(1..=128), rng.random_range(1..=128));
        let p = PointCloud::from_points(&random_cloud(&mut rng, n))?;
        let s = PointCloud::from_points(&random_cloud(&mut rng, m))?;
        let alpha = rng.random_range(0.1..10.0);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let p_perm = p.select(&order)?;
        for variant in [ChamferVariant::L1, ChamferVariant::L2] {
            let d = chamfer_distance(&p, &s, variant);
            if d != chamfer_distance(&s, &p, variant) {
                asym += 1;
            }
            if d < 0.0 {
                negative += 1;
            }
            if chamfer_distance(&p, &p, variant) != 0.0 {
                nonzero_identity += 1;
            }
            perm_err = perm_err.max(rel(d, chamfer_distance(&p_perm, &s, variant)));
            let scaled = chamfer_distance(&p.transformed([0.0; 3], alpha), &s.transformed([0.0; 3], alpha), variant);
            let power = if variant == ChamferVariant::L1 { alpha } else { alpha * alpha };
            hom_err = hom_err.max(rel(scaled, power * d));
        }
    }
    Ok(vec![
        Check::exact("cd/symmetry", asym),
        Check::exact("cd/non_negative", negative),
        Check::exact("cd/zero_on_identity", nonzero_identity),
        Check::within("cd/permutation", perm_err, CD_TOL),
        Check::within("cd/homogeneity", hom_err, CD_TOL),
    ])
}

// ------------------------------------------------------------------- shapes

/// Block output shapes at every encoder stage and the cascade cardinalities
/// of a full forward pass, for `cfg` at 32-bit.
pub fn shape_checks(name: &str, cfg: &ModelConfig) -> Result<Vec<Check>> {
    cfg.validate()?;
    let params = ModelParams::<f32>::init(cfg, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let partial = PointCloud::new(
        (0..cfg.n_points * 3)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect(),
    )?;
    let mut out = Vec::new();
    let mut bad = 0;

    let widths = cfg.encoder_widths();
    let mut n = cfg.n_points;
    let mut coords = partial.clone();
    for (i, &d) in cfg.gdp_ratios.iter().enumerate() {
        if cfg.disable_gdp {
            break;
        }
        let stage = i + 1;
        let c = widths[i];
        let mut tape = Tape::<f32>::new();
        let bound = Bound::bind(&mut tape, &params, cfg);
        let x = tape.constant(Tensor::full(&[n, c], 0.5));
        let (attn, ff) = bound.block(&format!("encoder.gdp{stage}"))?;
        let g = gdp(&mut tape, x, &coords, d, 0, &attn, &ff)?;
        if tape.value(g.features).shape() != [n / d, 2 * c] {
            bad += 1;
        }
        let u = cfg.encoder_sfa_ratio();
        if !cfg.disable_encoder_sfa {
            let (attn, ff) = bound.block(&format!("encoder.sfa{stage}"))?;
            let y = sfa(&mut tape, g.features, u, &attn, &ff)?;
            if tape.value(y).shape() != [n / d, u * 2 * c] {
                bad += 1;
            }
        }
        n /= d;
        coords = g.coords;
    }
    out.push(Check::exact(format!("shapes/{name}/blocks"), bad));

    let mut tape = Tape::<f32>::new();
    let bound = Bound::bind(&mut tape, &params, cfg);
    let preds = forward(&mut tape, &bound, cfg, &partial)?;
    let sizes = cfg.output_sizes();
    let mut bad = 0;
    for (v, want) in preds.clouds().into_iter().zip(sizes) {
        if tape.value(v).shape() != [want, 3] {
            bad += 1;
        }
    }
    if tape.value(preds.code).shape() != [1, cfg.code_width] {
        bad += 1;
    }
    out.push(Check::exact(format!("shapes/{name}/cascade"), bad));
    Ok(out)
}

/// Shape contracts of the desk preset and both full-size presets; the
/// full-size cascades must be 512 → 1024 → 2048 and 512 → 2048 → 16384.
pub fn shapes() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (name, want) in [
        ("desk", [512, 1024, 2048]),
        ("completion3d", [512, 1024, 2048]),
        ("pcn", [512, 2048, 16384]),
    ] {
        let Some(cfg) = ModelConfig::preset(name) else {
            bail!(Config, "missing preset {}", name);
        };
        let sizes = cfg.output_sizes();
        out.push(Check::exact(format!("shapes/{name}/sizes"), usize::from(sizes != want)));
        out.extend(shape_checks(name, &cfg)?);
    }
    Ok(out)
}
