use core::f64::consts::PI;

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{fps, PointCloud};
use crate::error::{bail, Result};

/// Least and greatest fraction of the complete cloud kept by a half-space crop.
pub const CROP_KEEP: (f64, f64) = (0.35, 0.65);
/// Camera distance from the origin for viewpoint crops.
pub const CAMERA_DISTANCE: f64 = 3.0;
const VIEW_GRID: usize = 32;
const VIEW_HALF_ANGLE: f64 = 0.75;
const VIEW_DEPTH_SLACK: f64 = 0.3;

/// How a partial view is cut from a complete cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartialMethod {
    /// Keep the points on one side of a random plane.
    HalfSpace,
    /// Keep the points visible from a random camera through a coarse depth buffer.
    Viewpoint,
    /// Half-space for even seeds, viewpoint for odd seeds.
    Mixed,
}

impl PartialMethod {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "half-space" => Some(PartialMethod::HalfSpace),
            "viewpoint" => Some(PartialMethod::Viewpoint),
            "mixed" => Some(PartialMethod::Mixed),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PartialMethod::HalfSpace => "half-space",
            PartialMethod::Viewpoint => "viewpoint",
            PartialMethod::Mixed => "mixed",
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let t = 2.0 * PI * rng.random::<f64>();
    let s = libm::sqrt((1.0 - z * z).max(0.0));
    [s * libm::cos(t), s * libm::sin(t), z]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Plane `⟨x, v⟩ ≤ τ` used for the half-space crop of `complete` under `seed`.
/// `τ` is the projection quantile matching a keep fraction drawn from [`CROP_KEEP`].
pub fn half_space_plane(complete: &PointCloud<f64>, seed: u64) -> ([f64; 3], f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc207_0000_0000_0001);
    let normal = unit_vector(&mut rng);
    let keep = rng.random_range(CROP_KEEP.0..CROP_KEEP.1);
    let mut proj: Vec<f64> = complete.points().map(|p| dot(normal, p)).collect();
    proj.sort_by(f64::total_cmp);
    let rank = ((keep * proj.len() as f64) as usize).min(proj.len() - 1);
    (normal, proj[rank])
}

/// Indices of the points with `⟨x, normal⟩ ≤ tau`, in cloud order.
pub fn crop_half_space(cloud: &PointCloud<f64>, normal: [f64; 3], tau: f64) -> Vec<usize> {
    cloud
        .points()
        .enumerate()
        .filter(|(_, p)| dot(normal, *p) <= tau)
        .map(|(i, _)| i)
        .collect()
}

/// Indices of the points visible from a camera at `CAMERA_DISTANCE · dir`
/// looking at the origin. Points within a small depth slack of the nearest
/// point covering their image cell count as visible.
pub fn crop_viewpoint(cloud: &PointCloud<f64>, dir: [f64; 3]) -> Vec<usize> {
    let axis = [-dir[0], -dir[1], -dir[2]];
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = normalize(cross(axis, helper));
    let e2 = cross(axis, e1);
    let eye = [CAMERA_DISTANCE * dir[0], CAMERA_DISTANCE * dir[1], CAMERA_DISTANCE * dir[2]];
    let cells = VIEW_GRID * VIEW_GRID;
    let mut nearest = alloc::vec![f64::INFINITY; cells];
    let mut placed = Vec::with_capacity(cloud.len());
    for p in cloud.points() {
        let d = [p[0] - eye[0], p[1] - eye[1], p[2] - eye[2]];
        let depth = dot(axis, d);
        let cell = if depth > 0.0 {
            let u = dot(e1, d) / depth;
            let v = dot(e2, d) / depth;
            let bin = |t: f64| {
                let f = (t + VIEW_HALF_ANGLE) / (2.0 * VIEW_HALF_ANGLE) * VIEW_GRID as f64;
                (f.max(0.0) as usize).min(VIEW_GRID - 1)
            };
            bin(u) * VIEW_GRID + bin(v)
        } else {
            usize::MAX
        };
        // each point occludes its 3x3 neighbourhood so sparse front
        // surfaces do not leak the points behind them
        if cell != usize::MAX {
            let (r, c) = (cell / VIEW_GRID, cell % VIEW_GRID);
            for rr in r.saturating_sub(1)..=(r + 1).min(VIEW_GRID - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(VIEW_GRID - 1) {
                    let k = rr * VIEW_GRID + cc;
                    if depth < nearest[k] {
                        nearest[k] = depth;
                    }
                }
            }
        }
        placed.push((cell, depth));
    }
    placed
        .iter()
        .enumerate()
        .filter(|(_, &(cell, depth))| cell != usize::MAX && depth <= nearest[cell] + VIEW_DEPTH_SLACK)
        .map(|(i, _)| i)
        .collect()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = libm::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Brings `cloud` to exactly `n` points: farthest point sampling when it has
/// more, cyclic repetition when it has fewer.
pub fn resample_to(cloud: &PointCloud<f64>, n: usize) -> Result<PointCloud<f64>> {
    if n == 0 {
        bail!(Argument, "cannot resample to zero points");
    }
    if cloud.len() >= n {
        cloud.select(&fps(cloud, n, 0)?.indices)
    } else {
        cloud.cycled(n)
    }
}

/// Cuts an `n`-point partial view from `complete`.
pub fn make_partial(complete: &PointCloud<f64>, n: usize, method: PartialMethod, seed: u64) -> Result<PointCloud<f64>> {
    if n > complete.len() {
        bail!(Argument, "partial of {} points requested from a {}-point cloud", n, complete.len());
    }
    let method = match method {
        PartialMethod::Mixed if seed.is_multiple_of(2) => PartialMethod::HalfSpace,
        PartialMethod::Mixed => PartialMethod::Viewpoint,
        m => m,
    };
    let kept = match method {
        PartialMethod::HalfSpace => {
            let (normal, tau) = half_space_plane(complete, seed);
            crop_half_space(complete, normal, tau)
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca3e_0000_0000_0002);
            crop_viewpoint(complete, unit_vector(&mut rng))
        }
    };
    if kept.is_empty() {
        bail!(Argument, "crop removed every point");
    }
    resample_to(&complete.select(&kept)?, n)
}
