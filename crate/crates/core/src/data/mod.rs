//! Synthetic completion pairs: area-uniform samples of primitive surfaces
//! and partial views cut from them.

mod partial;
mod shapes;

pub use partial::{crop_half_space, crop_viewpoint, half_space_plane, make_partial, resample_to, PartialMethod};
pub use shapes::{sample_surface, ShapeKind, ShapeSpec};

use alloc::string::String;

use crate::cloud::PointCloud;
use crate::error::Result;

/// A partial observation and the complete cloud it was cut from, both in
/// the complete cloud's normalized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub partial: PointCloud<f64>,
    pub complete: PointCloud<f64>,
    pub category: String,
}

/// Centre and scale mapping the bounding box of `cloud` into `[-1, 1]³`
/// with its longest side spanning the full range.
pub fn normalization(cloud: &PointCloud<f64>) -> ([f64; 3], f64) {
    let (lo, hi) = cloud.bounds();
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    let half = (0..3).map(|c| (hi[c] - lo[c]) / 2.0).fold(0.0, f64::max);
    let scale = if half > 0.0 { 1.0 / half } else { 1.0 };
    (center, scale)
}

/// Generates one pair of shape `kind` from `seed`: `m` complete points and
/// `n` partial points.
pub fn generate_pair(kind: ShapeKind, seed: u64, n: usize, m: usize, method: PartialMethod) -> Result<SamplePair> {
    let spec = ShapeSpec::random(kind, seed);
    let raw = sample_surface(&spec, m)?;
    let (center, scale) = normalization(&raw);
    let complete = raw.transformed(center, scale);
    let partial = make_partial(&complete, n, method, seed)?;
    Ok(SamplePair {
        partial,
        complete,
        category: String::from(kind.name()),
    })
}
