use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, lr_at, multi_scale_loss_with_targets, AdamState, Targets};
use crate::cloud::{chamfer_distance, ChamferVariant, PointCloud};
use crate::error::{bail, Error, Result};
use crate::model::{forward, predict, Bound, ModelConfig, ModelParams, ParamGrads};
use crate::real::Real;
use crate::tape::Tape;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub loss_weights: [f64; 3],
    pub variant: ChamferVariant,
    pub seed: u64,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            batch_size: 32,
            lr: 1e-4,
            lr_decay: 0.7,
            lr_decay_every: 40,
            loss_weights: [1.0; 3],
            variant: ChamferVariant::L2,
            seed: 0,
            checkpoint_every: 40,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            bail!(Config, "learning rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            bail!(Config, "lr_decay must lie in (0, 1]");
        }
        if self.lr_decay_every == 0 {
            bail!(Config, "lr_decay_every must be positive");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be positive");
        }
        if self.loss_weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            bail!(Config, "loss weights must be non-negative");
        }
        Ok(())
    }
}

/// A training pair with its ground-truth pyramid computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub category: String,
    pub partial: PointCloud<T>,
    pub complete: PointCloud<T>,
    pub targets: Targets<T>,
}

impl<T: Real> Sample<T> {
    pub fn new(
        id: String,
        category: String,
        partial: PointCloud<T>,
        complete: PointCloud<T>,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        if partial.len() != cfg.n_points {
            bail!(Argument, "sample {}: {} partial points, model expects {}", id, partial.len(), cfg.n_points);
        }
        let targets = Targets::new(&complete, cfg.output_sizes(), 0)?;
        Ok(Sample {
            id,
            category,
            partial,
            complete,
            targets,
        })
    }
}

/// Loss and parameter gradients of one sample.
#[derive(Debug, Clone)]
pub struct SampleGrad<T> {
    pub loss: f64,
    pub grads: ParamGrads<T>,
}

pub fn sample_gradients<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    sample: &Sample<T>,
    weights: [f64; 3],
    variant: ChamferVariant,
) -> Result<SampleGrad<T>> {
    let mut tape = Tape::new();
    // divergence is reported at the first op producing NaN or Inf
    tape.set_check_finite(true);
    let bound = Bound::bind(&mut tape, params, cfg);
    let preds = forward(&mut tape, &bound, cfg, &sample.partial)?;
    let loss = multi_scale_loss_with_targets(&mut tape, preds.clouds(), &sample.targets, weights, variant)?;
    let value = tape.value(loss).item()?.as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let grads = tape.backward(loss)?;
    Ok(SampleGrad {
        loss: value,
        grads: bound.gradients(&tape, grads),
    })
}

/// Mini-batches of one epoch: a permutation of `0..n` seeded by
/// `(seed, epoch)`, cut into `batch_size` chunks; the last chunk is padded
/// by cycling through the permutation.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    if n == 0 || batch_size == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let batches = n.div_ceil(batch_size);
    (0..batches)
        .map(|b| (0..batch_size).map(|i| order[(b * batch_size + i) % n]).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-step batch losses.
    pub train_loss: f64,
    pub step_losses: Vec<f64>,
}

/// Owns the parameters and optimizer state of one run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: ModelConfig, train: TrainConfig, params: ModelParams<T>) -> Result<Self> {
        model.validate()?;
        train.validate()?;
        let adam = AdamState::new(&params);
        Ok(Trainer {
            model,
            train,
            params,
            adam,
            epoch: 0,
        })
    }

    /// Per-sample gradients computed one after another.
    pub fn compute_sequential(&self, batch: &[&Sample<T>]) -> Result<Vec<SampleGrad<T>>> {
        batch
            .iter()
            .map(|s| sample_gradients(&self.params, &self.model, s, self.train.loss_weights, self.train.variant))
            .collect()
    }

    /// Averages per-sample results in order and takes one Adam step.
    /// Returns the mean loss.
    pub fn apply(&mut self, results: Vec<SampleGrad<T>>, lr: f64) -> Result<f64> {
        let count = results.len();
        if count == 0 {
            bail!(Argument, "empty batch");
        }
        let mut iter = results.into_iter();
        let first = iter.next().expect("non-empty");
        let mut loss = first.loss;
        let mut sum = first.grads;
        for r in iter {
            loss += r.loss;
            for (name, g) in r.grads {
                let Some(acc) = sum.get_mut(&name) else {
                    bail!(Contract, "gradient {} missing from first sample", name);
                };
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
        }
        let inv = T::one() / T::of(count as f64);
        for g in sum.values_mut() {
            for v in g.data_mut() {
                *v *= inv;
            }
        }
        let loss = loss / count as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        adam_step(&mut self.params, sum, &mut self.adam, lr)?;
        Ok(loss)
    }

    /// One optimizer step on `batch`, computed sequentially.
    pub fn step(&mut self, batch: &[&Sample<T>], lr: f64) -> Result<f64> {
        let results = self.compute_sequential(batch)?;
        self.apply(results, lr)
    }

    /// Runs the next epoch. `compute` maps the current parameters and a
    /// batch to per-sample results in batch order.
    pub fn run_epoch<F>(&mut self, samples: &[Sample<T>], mut compute: F) -> Result<EpochStats>
    where
        F: FnMut(&Self, &[&Sample<T>]) -> Result<Vec<SampleGrad<T>>>,
    {
        if samples.is_empty() {
            bail!(Argument, "training set is empty");
        }
        let epoch = self.epoch;
        let lr = lr_at(epoch, &self.train);
        let mut step_losses = Vec::new();
        for batch in epoch_batches(samples.len(), self.train.batch_size, self.train.seed, epoch) {
            let refs: Vec<&Sample<T>> = batch.iter().map(|&i| &samples[i]).collect();
            let results = compute(self, &refs)?;
            step_losses.push(self.apply(results, lr)?);
        }
        self.epoch += 1;
        let train_loss = step_losses.iter().sum::<f64>() / step_losses.len() as f64;
        Ok(EpochStats {
            epoch,
            lr,
            train_loss,
            step_losses,
        })
    }
}

/// Per-sample `(CD_L1, CD_L2)` of the final prediction against the complete
/// ground truth.
pub fn evaluate<T: Real>(params: &ModelParams<T>, cfg: &ModelConfig, samples: &[Sample<T>]) -> Result<Vec<(f64, f64)>> {
    samples.iter().map(|s| sample_cd(params, cfg, s)).collect()
}

/// `(CD_L1, CD_L2)` of one sample's final prediction.
pub fn sample_cd<T: Real>(params: &ModelParams<T>, cfg: &ModelConfig, sample: &Sample<T>) -> Result<(f64, f64)> {
    let [_, _, p2] = predict(params, cfg, &sample.partial)?;
    Ok((
        chamfer_distance(&p2, &sample.complete, ChamferVariant::L1).as_f64(),
        chamfer_distance(&p2, &sample.complete, ChamferVariant::L2).as_f64(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_pair, PartialMethod, ShapeKind};

    fn toy_samples(count: usize) -> (ModelConfig, Vec<Sample<f64>>) {
        let cfg = ModelConfig::toy();
        let samples = (0..count)
            .map(|i| {
                let kind = ShapeKind::category(ShapeKind::NAMES[i % 6]).unwrap();
                let p = generate_pair(kind, i as u64, cfg.n_points, 64, PartialMethod::Mixed).unwrap();
                Sample::new(alloc::format!("s{i}"), p.category, p.partial, p.complete, &cfg).unwrap()
            })
            .collect();
        (cfg, samples)
    }

    #[test]
    fn batches_cover_every_sample() {
        let b = epoch_batches(10, 4, 3, 0);
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|x| x.len() == 4));
        let mut seen: Vec<usize> = b.concat()[..10].to_vec();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(b, epoch_batches(10, 4, 3, 0));
        assert_ne!(b, epoch_batches(10, 4, 3, 1));
        assert!(epoch_batches(0, 4, 0, 0).is_empty());
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { lr_decay: 1.5, ..Default::default() },
            TrainConfig { lr_decay_every: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { loss_weights: [1.0, f64::NAN, 1.0], ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn sample_size_must_match_model() {
        let (cfg, s) = toy_samples(1);
        let short = s[0].partial.select(&[0, 1, 2]).unwrap();
        assert!(Sample::new("x".into(), "sphere".into(), short, s[0].complete.clone(), &cfg).is_err());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (cfg, samples) = toy_samples(4);
        let run = || {
            let params = ModelParams::<f64>::init(&cfg, 0).unwrap();
            let tc = TrainConfig { batch_size: 4, lr: 1e-2, ..Default::default() };
            let mut tr = Trainer::new(cfg.clone(), tc, params).unwrap();
            let stats: Vec<EpochStats> = (0..30).map(|_| tr.run_epoch(&samples, |t, b| t.compute_sequential(b)).unwrap()).collect();
            (tr.params, stats)
        };
        let (p, stats) = run();
        assert!(stats.last().unwrap().train_loss < 0.5 * stats[0].train_loss);
        assert_eq!(stats[29].epoch, 29);
        let (q, again) = run();
        assert_eq!(p, q);
        assert_eq!(stats, again);
        let cds = evaluate(&p, &cfg, &samples).unwrap();
        assert!(cds.iter().all(|&(l1, l2)| l1 > 0.0 && l2 > 0.0 && l1.is_finite()));
    }

    #[test]
    fn divergence_is_reported_not_stored() {
        let (cfg, samples) = toy_samples(2);
        let params = ModelParams::<f64>::init(&cfg, 0).unwrap();
        let tc = TrainConfig { batch_size: 2, lr: 1e300, ..Default::default() };
        let mut tr = Trainer::new(cfg, tc, params).unwrap();
        let mut err = None;
        for _ in 0..5 {
            if let Err(e) = tr.run_epoch(&samples, |t, b| t.compute_sequential(b)) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(Error::NonFinite(_))), "{err:?}");
    }
}
