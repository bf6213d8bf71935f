//! The work behind each subcommand, callable without the argument parser.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use pointattn_core::cloud::chamfer_distance;
use pointattn_core::data::resample_to;
use pointattn_core::model::{predict, ModelParams};
use pointattn_core::train::{sample_cd, sample_gradients, Sample, Trainer};
use pointattn_core::verify::Check;
use pointattn_core::{ChamferVariant, PointCloud, Real};

use crate::checkpoint::Checkpoint;
use crate::config::{Precision, RunConfig};
use crate::corpus::{load_corpus, Pair};
use crate::error::{usage, Error, Result};
use crate::formats::{read_cloud, write_cloud};

pub const METRICS_FILE: &str = "metrics.tsv";
pub const METRICS_HEADER: &str = "epoch\tlr\ttrain_loss\tval_cd_l1\tval_cd_l2\twall_seconds";
pub const LAST_CHECKPOINT: &str = "last.patn";
pub const THREADS_ENV: &str = "POINTATTN_THREADS";

/// Caps the worker pool at `POINTATTN_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn checkpoint_name(epochs_done: usize) -> String {
    format!("ckpt_epoch{epochs_done:04}.patn")
}

/// Held-out indices are those with `i % val_every == val_every - 1`; with
/// `val_every == 0`, or when nothing would be held out, validation reuses
/// the training pairs.
pub fn split(count: usize, val_every: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if val_every == 0 {
        let all: Vec<usize> = (0..count).collect();
        return Ok((all.clone(), all));
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..count).partition(|i| i % val_every == val_every - 1);
    if train.is_empty() {
        return Err(usage!("val_every = {val_every} leaves no training pairs out of {count}"));
    }
    if val.is_empty() {
        return Ok((train.clone(), train));
    }
    Ok((train, val))
}

fn to_samples<T: Real>(pairs: &[&Pair], cfg: &RunConfig) -> Result<Vec<Sample<T>>> {
    pairs
        .par_iter()
        .map(|p| {
            Ok(Sample::new(
                p.id.clone(),
                p.category.clone(),
                p.partial.cast(),
                p.complete.cast(),
                &cfg.model,
            )?)
        })
        .collect()
}

pub struct TrainOptions {
    pub data: PathBuf,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    /// Print one line per epoch to stdout.
    pub verbose: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_cd_l1: f64,
    pub val_cd_l2: f64,
    pub wall_seconds: f64,
}

impl EpochRow {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:.3}",
            self.epoch, self.lr, self.train_loss, self.val_cd_l1, self.val_cd_l2, self.wall_seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub rows: Vec<EpochRow>,
    pub last_checkpoint: PathBuf,
}

pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let corpus = load_corpus(&opts.data)?;
    if corpus.manifest.n_partial != cfg.model.n_points {
        return Err(usage!(
            "dataset partials have {} points, model expects n_points = {}",
            corpus.manifest.n_partial,
            cfg.model.n_points
        ));
    }
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg, &corpus.pairs, opts),
        Precision::F64 => train_as::<f64>(cfg, &corpus.pairs, opts),
    }
}

fn train_as<T: Real>(cfg: &RunConfig, pairs: &[Pair], opts: &TrainOptions) -> Result<TrainSummary> {
    let (train_idx, val_idx) = split(pairs.len(), cfg.val_every)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &pairs[i]).collect::<Vec<_>>();
    let train_set: Vec<Sample<T>> = to_samples(&pick(&train_idx), cfg)?;
    let val_set: Vec<Sample<T>> = to_samples(&pick(&val_idx), cfg)?;

    let mut trainer = match &opts.resume {
        None => Trainer::new(cfg.model.clone(), cfg.train.clone(), ModelParams::init(&cfg.model, cfg.train.seed)?)?,
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_model(cfg)?;
            let Some(adam) = ck.adam::<T>() else {
                return Err(Error::format(path, "checkpoint has no optimizer state to resume from"));
            };
            let mut t = Trainer::new(cfg.model.clone(), cfg.train.clone(), ck.params.cast())?;
            t.adam = adam;
            t.epoch = ck.resume.as_ref().map_or(0, |r| r.epoch as usize);
            t
        }
    };

    fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e))?;
    let metrics_path = opts.out.join(METRICS_FILE);
    let mut log = String::from(METRICS_HEADER);
    log.push('\n');
    if opts.resume.is_some() {
        // keep rows of epochs before the resume point
        if let Ok(old) = fs::read_to_string(&metrics_path) {
            for line in old.lines().skip(1) {
                let epoch = line.split('\t').next().and_then(|e| e.parse::<usize>().ok());
                if epoch.is_some_and(|e| e < trainer.epoch) {
                    log.push_str(line);
                    log.push('\n');
                }
            }
        }
    }
    write_file(&metrics_path, log.as_bytes())?;

    let mut last = opts.out.join(LAST_CHECKPOINT);
    let mut rows = Vec::new();
    let (weights, variant) = (cfg.train.loss_weights, cfg.train.variant);
    while trainer.epoch < cfg.train.epochs {
        let start = Instant::now();
        let epoch = trainer.epoch;
        let stats = trainer
            .run_epoch(&train_set, |t, batch| {
                batch
                    .par_iter()
                    .map(|s| sample_gradients(&t.params, &t.model, s, weights, variant))
                    .collect()
            })
            .map_err(|e| diverged(e, epoch, &last))?;
        if trainer.params.iter().any(|(_, t)| !t.is_finite()) {
            return Err(diverged(pointattn_core::Error::NonFinite("parameters"), epoch, &last));
        }
        let cds: Vec<(f64, f64)> = val_set
            .par_iter()
            .map(|s| sample_cd(&trainer.params, &trainer.model, s))
            .collect::<std::result::Result<_, _>>()?;
        let n = cds.len() as f64;
        let row = EpochRow {
            epoch,
            lr: stats.lr,
            train_loss: stats.train_loss,
            val_cd_l1: cds.iter().map(|c| c.0).sum::<f64>() / n,
            val_cd_l2: cds.iter().map(|c| c.1).sum::<f64>() / n,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        append(&metrics_path, &row.to_line())?;
        if opts.verbose {
            println!("{}", row.to_line());
        }
        rows.push(row);
        let done = trainer.epoch;
        if done % cfg.train.checkpoint_every == 0 || done == cfg.train.epochs {
            let ck = Checkpoint::new(cfg, &trainer.params, Some((&trainer.adam, done)));
            ck.save(&opts.out.join(checkpoint_name(done)))?;
            ck.save(&opts.out.join(LAST_CHECKPOINT))?;
            last = opts.out.join(checkpoint_name(done));
        }
    }
    Ok(TrainSummary {
        rows,
        last_checkpoint: last,
    })
}

fn diverged(e: pointattn_core::Error, epoch: usize, last: &Path) -> Error {
    match e {
        pointattn_core::Error::NonFinite(what) => Error::Diverged(format!(
            "non-finite {what} in epoch {epoch}; last good checkpoint: {}",
            if last.exists() {
                last.display().to_string()
            } else {
                String::from("none written yet")
            }
        )),
        other => other.into(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn append(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Per-category mean Chamfer distance of the final prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variant: ChamferVariant,
    /// `(category, pairs, mean CD)` in first-seen order.
    pub rows: Vec<(String, usize, f64)>,
    /// Mean of the per-category means.
    pub average: f64,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>6} {:>16} {:>12}\n",
            "category",
            "pairs",
            format!("cd_{}", self.variant.name()),
            "cd x1e4"
        );
        for (cat, n, cd) in &self.rows {
            let _ = writeln!(out, "{:<12} {:>6} {:>16.9e} {:>12.4}", cat, n, cd, cd * 1e4);
        }
        let total: usize = self.rows.iter().map(|r| r.1).sum();
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>16.9e} {:>12.4}",
            "average", total, self.average, self.average * 1e4
        );
        out
    }
}

/// Scores `predictor` against the complete clouds of `pairs`.
pub fn evaluate_with<F>(pairs: &[Pair], variant: ChamferVariant, predictor: F) -> Result<EvalReport>
where
    F: Fn(&Pair) -> Result<PointCloud<f32>> + Sync,
{
    if pairs.is_empty() {
        return Err(usage!("nothing to evaluate"));
    }
    let cds: Vec<f64> = pairs
        .par_iter()
        .map(|p| {
            let pred = predictor(p)?;
            Ok(chamfer_distance(&pred.cast::<f64>(), &p.complete.cast::<f64>(), variant))
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<(String, usize, f64)> = Vec::new();
    for (p, cd) in pairs.iter().zip(&cds) {
        match rows.iter_mut().find(|r| r.0 == p.category) {
            Some(r) => {
                r.1 += 1;
                r.2 += cd;
            }
            None => rows.push((p.category.clone(), 1, *cd)),
        }
    }
    for r in &mut rows {
        r.2 /= r.1 as f64;
    }
    let average = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
    Ok(EvalReport { variant, rows, average })
}

/// Final prediction of a trained network for one partial cloud.
pub fn infer(ck: &Checkpoint, partial: &PointCloud<f32>) -> Result<[PointCloud<f32>; 3]> {
    let cfg = &ck.config;
    let n = cfg.model.n_points;
    let input = if partial.len() == n {
        partial.clone()
    } else {
        resample_to(&partial.cast::<f64>(), n)?.cast()
    };
    let out = match cfg.precision {
        Precision::F32 => predict(&ck.params.cast::<f32>(), &cfg.model, &input)?,
        Precision::F64 => predict(&ck.params, &cfg.model, &input.cast())?.map(|c| c.cast()),
    };
    Ok(out)
}

pub fn evaluate(ck: &Checkpoint, data: &Path, variant: ChamferVariant) -> Result<EvalReport> {
    let corpus = load_corpus(data)?;
    if corpus.manifest.n_partial != ck.config.model.n_points {
        return Err(usage!(
            "dataset partials have {} points, checkpoint expects {}",
            corpus.manifest.n_partial,
            ck.config.model.n_points
        ));
    }
    evaluate_with(&corpus.pairs, variant, |p| Ok(infer(ck, &p.partial)?[2].clone()))
}

/// Paths of the coarse stages written next to `out` by `complete --emit-stages`.
pub fn stage_paths(out: &Path) -> [PathBuf; 2] {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("pcb");
    [0, 1].map(|i| out.with_file_name(format!("{stem}.p{i}.{ext}")))
}

pub fn complete(ck: &Checkpoint, input: &Path, out: &Path, emit_stages: bool) -> Result<Vec<PathBuf>> {
    let partial = read_cloud(input)?;
    let [p0, p1, p2] = infer(ck, &partial)?;
    write_cloud(out, &p2)?;
    let mut written = vec![out.to_path_buf()];
    if emit_stages {
        let [a, b] = stage_paths(out);
        write_cloud(&a, &p0)?;
        write_cloud(&b, &p1)?;
        written.extend([a, b]);
    }
    Ok(written)
}

pub fn format_check(c: &Check) -> String {
    format!(
        "{} {:<36} max_err {:.3e} tol {:.0e}",
        if c.passed { "PASS" } else { "FAIL" },
        c.name,
        c.max_err,
        c.tol
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_rules() {
        let (t, v) = split(10, 5).unwrap();
        assert_eq!(v, vec![4, 9]);
        assert_eq!(t.len(), 8);
        let (t, v) = split(3, 5).unwrap();
        assert_eq!(t, v);
        assert!(split(4, 1).is_err());
        let (t, v) = split(4, 0).unwrap();
        assert_eq!((t.len(), v.len()), (4, 4));
    }

    #[test]
    fn stage_file_names() {
        let [a, b] = stage_paths(Path::new("/x/chair.xyz"));
        assert_eq!(a, Path::new("/x/chair.p0.xyz"));
        assert_eq!(b, Path::new("/x/chair.p1.xyz"));
    }
}
