use core::f64::consts::PI;

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::error::{bail, Result};

/// Primitive surfaces and their size parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    Sphere { radius: f64 },
    /// Axis-aligned box with the given half extents.
    Box { half: [f64; 3] },
    /// Capped cylinder along z.
    Cylinder { radius: f64, height: f64 },
    /// Cone along z with its base disk.
    Cone { radius: f64, height: f64 },
    Torus { major: f64, minor: f64 },
    /// Square plate in the xy plane with a centred circular hole.
    PlateWithHole { side: f64, hole: f64 },
}

impl ShapeKind {
    pub const NAMES: [&'static str; 6] = ["sphere", "box", "cylinder", "cone", "torus", "plate"];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Sphere { .. } => "sphere",
            ShapeKind::Box { .. } => "box",
            ShapeKind::Cylinder { .. } => "cylinder",
            ShapeKind::Cone { .. } => "cone",
            ShapeKind::Torus { .. } => "torus",
            ShapeKind::PlateWithHole { .. } => "plate",
        }
    }

    /// Unit-sized representative of category `name`.
    pub fn category(name: &str) -> Option<Self> {
        Some(match name {
            "sphere" => ShapeKind::Sphere { radius: 1.0 },
            "box" => ShapeKind::Box { half: [1.0; 3] },
            "cylinder" => ShapeKind::Cylinder { radius: 0.5, height: 2.0 },
            "cone" => ShapeKind::Cone { radius: 0.5, height: 1.5 },
            "torus" => ShapeKind::Torus { major: 1.0, minor: 0.3 },
            "plate" => ShapeKind::PlateWithHole { side: 2.0, hole: 0.5 },
            _ => return None,
        })
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ShapeKind::Sphere { radius } => radius > 0.0,
            ShapeKind::Box { half } => half.iter().all(|&h| h > 0.0),
            ShapeKind::Cylinder { radius, height } | ShapeKind::Cone { radius, height } => radius > 0.0 && height > 0.0,
            ShapeKind::Torus { major, minor } => minor > 0.0 && major > minor,
            ShapeKind::PlateWithHole { side, hole } => side > 0.0 && hole > 0.0 && 2.0 * hole < side,
        };
        if !ok || !self.finite() {
            bail!(Argument, "invalid size parameters for {}: {:?}", self.name(), self);
        }
        Ok(())
    }

    fn finite(&self) -> bool {
        match *self {
            ShapeKind::Sphere { radius } => radius.is_finite(),
            ShapeKind::Box { half } => half.iter().all(|h| h.is_finite()),
            ShapeKind::Cylinder { radius, height } | ShapeKind::Cone { radius, height } => {
                radius.is_finite() && height.is_finite()
            }
            ShapeKind::Torus { major, minor } => major.is_finite() && minor.is_finite(),
            ShapeKind::PlateWithHole { side, hole } => side.is_finite() && hole.is_finite(),
        }
    }
}

/// A primitive with its rigid pose and sampling seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Row-major rotation applied before the translation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub seed: u64,
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl ShapeSpec {
    pub fn new(kind: ShapeKind, seed: u64) -> Self {
        ShapeSpec {
            kind,
            rotation: IDENTITY,
            translation: [0.0; 3],
            seed,
        }
    }

    /// Random sizes and pose for the category of `kind`.
    pub fn random(kind: ShapeKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let kind = match kind {
            ShapeKind::Sphere { .. } => ShapeKind::Sphere { radius: u(0.5, 1.0) },
            ShapeKind::Box { .. } => ShapeKind::Box {
                half: [u(0.2, 1.0), u(0.2, 1.0), u(0.2, 1.0)],
            },
            ShapeKind::Cylinder { .. } => ShapeKind::Cylinder {
                radius: u(0.2, 0.6),
                height: u(0.5, 2.0),
            },
            ShapeKind::Cone { .. } => ShapeKind::Cone {
                radius: u(0.3, 0.8),
                height: u(0.5, 2.0),
            },
            ShapeKind::Torus { .. } => {
                let major = u(0.5, 1.0);
                ShapeKind::Torus {
                    major,
                    minor: major * u(0.15, 0.45),
                }
            }
            ShapeKind::PlateWithHole { .. } => {
                let side = u(1.0, 2.0);
                ShapeKind::PlateWithHole {
                    side,
                    hole: side * u(0.1, 0.4),
                }
            }
        };
        let rotation = random_rotation(&mut rng);
        let translation = [
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        ];
        ShapeSpec {
            kind,
            rotation,
            translation,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    bail!(Argument, "pose rotation is not orthonormal");
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 || self.translation.iter().any(|t| !t.is_finite()) {
            bail!(Argument, "pose is not a proper rigid motion");
        }
        Ok(())
    }

    fn place(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }
}

/// Uniform random rotation from a unit quaternion (Shoemake).
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = (libm::sqrt(1.0 - u1), libm::sqrt(u1));
    let (w, x, y, z) = (
        a * libm::sin(2.0 * PI * u2),
        a * libm::cos(2.0 * PI * u2),
        b * libm::sin(2.0 * PI * u3),
        b * libm::cos(2.0 * PI * u3),
    );
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn disk(rng: &mut ChaCha8Rng, radius: f64, z: f64) -> [f64; 3] {
    let r = radius * libm::sqrt(rng.random::<f64>());
    let t = 2.0 * PI * rng.random::<f64>();
    [r * libm::cos(t), r * libm::sin(t), z]
}

/// Picks an index with probability proportional to `weights`.
fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn sample_one(kind: &ShapeKind, rng: &mut ChaCha8Rng) -> [f64; 3] {
    match *kind {
        ShapeKind::Sphere { radius } => {
            let z: f64 = rng.random_range(-1.0..=1.0);
            let t = 2.0 * PI * rng.random::<f64>();
            let s = libm::sqrt((1.0 - z * z).max(0.0));
            [radius * s * libm::cos(t), radius * s * libm::sin(t), radius * z]
        }
        ShapeKind::Box { half: h } => {
            let areas = [h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]];
            let face = pick(rng, &areas);
            let axis = face / 2;
            let sign = if face.is_multiple_of(2) { 1.0 } else { -1.0 };
            let mut p = [0.0; 3];
            for (c, v) in p.iter_mut().enumerate() {
                *v = if c == axis {
                    sign * h[c]
                } else {
                    rng.random_range(-h[c]..=h[c])
                };
            }
            p
        }
        ShapeKind::Cylinder { radius, height } => {
            let lateral = 2.0 * PI * radius * height;
            let cap = PI * radius * radius;
            match pick(rng, &[lateral, cap, cap]) {
                0 => {
                    let t = 2.0 * PI * rng.random::<f64>();
                    let z = rng.random_range(-height / 2.0..=height / 2.0);
                    [radius * libm::cos(t), radius * libm::sin(t), z]
                }
                1 => disk(rng, radius, height / 2.0),
                _ => disk(rng, radius, -height / 2.0),
            }
        }
        ShapeKind::Cone { radius, height } => {
            let slant = libm::sqrt(radius * radius + height * height);
            let lateral = PI * radius * slant;
            let base = PI * radius * radius;
            if pick(rng, &[lateral, base]) == 0 {
                // fraction of the way from apex to base; density ∝ distance
                let f = libm::sqrt(rng.random::<f64>());
                let t = 2.0 * PI * rng.random::<f64>();
                [f * radius * libm::cos(t), f * radius * libm::sin(t), height / 2.0 - f * height]
            } else {
                disk(rng, radius, -height / 2.0)
            }
        }
        ShapeKind::Torus { major, minor } => loop {
            let a = 2.0 * PI * rng.random::<f64>();
            let ring = major + minor * libm::cos(a);
            if rng.random::<f64>() * (major + minor) <= ring {
                let t = 2.0 * PI * rng.random::<f64>();
                break [ring * libm::cos(t), ring * libm::sin(t), minor * libm::sin(a)];
            }
        },
        ShapeKind::PlateWithHole { side, hole } => loop {
            let x = rng.random_range(-side / 2.0..=side / 2.0);
            let y = rng.random_range(-side / 2.0..=side / 2.0);
            if x * x + y * y >= hole * hole {
                break [x, y, 0.0];
            }
        },
    }
}

/// `m` points drawn uniformly by area from the posed primitive surface.
pub fn sample_surface(spec: &ShapeSpec, m: usize) -> Result<PointCloud<f64>> {
    if m == 0 {
        bail!(Argument, "cannot sample zero points");
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_5a3f_1e5a_a11d);
    let mut coords = Vec::with_capacity(m * 3);
    for _ in 0..m {
        coords.extend(spec.place(sample_one(&spec.kind, &mut rng)));
    }
    PointCloud::new(coords)
}
