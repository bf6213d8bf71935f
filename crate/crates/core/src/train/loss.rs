use crate::cloud::{fps, ChamferVariant, PointCloud};
use crate::error::{bail, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Ground-truth sub-clouds matched in size to the three predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets<T> {
    pub clouds: [PointCloud<T>; 3],
}

impl<T: Real> Targets<T> {
    /// FPS-downsamples `gt` to each of `sizes`; a size equal to `|gt|` keeps
    /// `gt` as is.
    pub fn new(gt: &PointCloud<T>, sizes: [usize; 3], start: usize) -> Result<Self> {
        let sub = |k: usize| -> Result<PointCloud<T>> {
            if k > gt.len() {
                bail!(Argument, "ground truth has {} points, prediction needs {}", gt.len(), k);
            }
            if k == gt.len() {
                return Ok(gt.clone());
            }
            gt.select(&fps(gt, k, start)?.indices)
        };
        Ok(Targets {
            clouds: [sub(sizes[0])?, sub(sizes[1])?, sub(sizes[2])?],
        })
    }
}

/// `Σ λᵢ · CD(Pᵢ, Sᵢ)` with `Sᵢ` computed from `gt` by FPS.
pub fn multi_scale_loss<T: Real>(
    tape: &mut Tape<T>,
    preds: [Var; 3],
    gt: &PointCloud<T>,
    weights: [f64; 3],
    variant: ChamferVariant,
) -> Result<Var> {
    let mut sizes = [0; 3];
    for (s, p) in sizes.iter_mut().zip(preds) {
        *s = tape.value(p).dims2()?.0;
    }
    let targets = Targets::new(gt, sizes, 0)?;
    multi_scale_loss_with_targets(tape, preds, &targets, weights, variant)
}

/// `Σ λᵢ · CD(Pᵢ, Sᵢ)` against precomputed targets. Zero-weight terms are
/// skipped.
pub fn multi_scale_loss_with_targets<T: Real>(
    tape: &mut Tape<T>,
    preds: [Var; 3],
    targets: &Targets<T>,
    weights: [f64; 3],
    variant: ChamferVariant,
) -> Result<Var> {
    if weights.iter().any(|&w| !(w >= 0.0)) {
        bail!(Argument, "loss weights must be non-negative");
    }
    let mut total: Option<Var> = None;
    for i in 0..3 {
        let target = &targets.clouds[i];
        let rows = tape.value(preds[i]).dims2()?.0;
        if rows > target.len() {
            bail!(Argument, "target {} has {} points, prediction {}", i, target.len(), rows);
        }
        if weights[i] == 0.0 {
            continue;
        }
        let s = tape.constant(target.to_tensor());
        let mut term = tape.chamfer(preds[i], s, variant)?;
        if weights[i] != 1.0 {
            term = tape.scale(term, T::of(weights[i]))?;
        }
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => {
            // all weights zero
            let z = tape.constant(crate::Tensor::scalar(T::zero()));
            Ok(z)
        }
    }
}
