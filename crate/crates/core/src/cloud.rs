//! Point sets and the geometric kernels that act on them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Non-empty ordered set of 3D points, stored as flat `x, y, z` triples.
///
/// Row order carries identity only; every operation on clouds is
/// permutation-safe.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    coords: Vec<T>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(coords: Vec<T>) -> Result<Self> {
        if coords.is_empty() {
            bail!(Argument, "point cloud must hold at least one point");
        }
        if !coords.len().is_multiple_of(3) {
            bail!(Argument, "{} coordinates do not form xyz triples", coords.len());
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            bail!(Argument, "non-finite coordinate in point {}", i / 3);
        }
        Ok(PointCloud { coords })
    }

    pub fn from_points(points: &[[T; 3]]) -> Result<Self> {
        Self::new(points.iter().flatten().copied().collect())
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        let (_, c) = t.dims2()?;
        if c != 3 {
            bail!(Argument, "point tensor must have 3 columns, got {}", c);
        }
        Self::new(t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::matrix(self.len(), 3, self.coords.clone()).expect("non-empty xyz triples")
    }

    pub fn len(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> [T; 3] {
        let p = &self.coords[i * 3..i * 3 + 3];
        [p[0], p[1], p[2]]
    }

    pub fn points(&self) -> impl Iterator<Item = [T; 3]> + '_ {
        self.coords.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<T> {
        self.coords
    }

    /// The rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len() * 3);
        for &i in indices {
            if i >= self.len() {
                bail!(Argument, "index {} out of range for {} points", i, self.len());
            }
            out.extend_from_slice(&self.coords[i * 3..i * 3 + 3]);
        }
        Self::new(out)
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            coords: self.coords.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Applies `x ↦ (x − center) · scale` to every point.
    pub fn transformed(&self, center: [T; 3], scale: T) -> Self {
        let coords = self
            .coords
            .chunks_exact(3)
            .flat_map(|p| (0..3).map(move |c| (p[c] - center[c]) * scale))
            .collect();
        PointCloud { coords }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([T; 3], [T; 3]) {
        let mut lo = [T::infinity(); 3];
        let mut hi = [T::neg_infinity(); 3];
        for p in self.points() {
            for c in 0..3 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        (lo, hi)
    }

    /// Repeats the rows cyclically until exactly `n` points remain, or keeps
    /// the first `n` rows if there are more.
    pub fn cycled(&self, n: usize) -> Result<Self> {
        if n == 0 {
            bail!(Argument, "cannot resample to zero points");
        }
        let len = self.len();
        let coords = (0..n)
            .flat_map(|i| self.coords[(i % len) * 3..(i % len) * 3 + 3].iter().copied())
            .collect();
        Self::new(coords)
    }
}

#[inline]
pub(crate) fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Farthest point sampling selection, in selection order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FpsResult {
    pub indices: Vec<usize>,
}

/// Greedy max-min subset of `k` points starting from `start`.
///
/// Each step picks the point whose distance to the already selected set is
/// largest; ties go to the lowest index. Selected points are never picked
/// twice, even among duplicates.
pub fn fps<T: Real>(cloud: &PointCloud<T>, k: usize, start: usize) -> Result<FpsResult> {
    fps_coords(cloud.as_slice(), k, start)
}

pub(crate) fn fps_coords<T: Real>(coords: &[T], k: usize, start: usize) -> Result<FpsResult> {
    let n = coords.len() / 3;
    if k == 0 {
        bail!(Argument, "fps needs k >= 1");
    }
    if k > n {
        bail!(Argument, "fps cannot select {} of {} points", k, n);
    }
    if start >= n {
        bail!(Argument, "fps start index {} out of range for {} points", start, n);
    }
    let mut min_d = vec![T::infinity(); n];
    let mut indices = Vec::with_capacity(k);
    let mut current = start;
    for _ in 0..k {
        indices.push(current);
        min_d[current] = T::neg_infinity();
        let c = &coords[current * 3..current * 3 + 3];
        let mut best = 0;
        let mut best_d = T::neg_infinity();
        for (i, (d, p)) in min_d.iter_mut().zip(coords.chunks_exact(3)).enumerate() {
            if *d == T::neg_infinity() {
                continue;
            }
            let nd = sq_dist(p, c);
            if nd < *d {
                *d = nd;
            }
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        current = best;
    }
    Ok(FpsResult { indices })
}

/// `n×m` matrix of squared Euclidean distances, clamped at zero.
pub fn pairwise_sq_dist<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> Tensor<T> {
    let data = a
        .as_slice()
        .chunks_exact(3)
        .flat_map(|p| {
            b.as_slice()
                .chunks_exact(3)
                .map(move |q| sq_dist(p, q).max(T::zero()))
        })
        .collect();
    Tensor::matrix(a.len(), b.len(), data).expect("non-empty clouds")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChamferVariant {
    /// Euclidean nearest-neighbour distances.
    L1,
    /// Squared Euclidean nearest-neighbour distances.
    L2,
}

impl ChamferVariant {
    pub fn name(self) -> &'static str {
        match self {
            ChamferVariant::L1 => "l1",
            ChamferVariant::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "l1" | "L1" => Some(ChamferVariant::L1),
            "l2" | "L2" => Some(ChamferVariant::L2),
            _ => None,
        }
    }
}

/// Nearest neighbours in both directions between two flat xyz buffers.
pub(crate) struct NearestPairs<T> {
    pub p_nn: Vec<usize>,
    pub p_d2: Vec<T>,
    pub s_nn: Vec<usize>,
    pub s_d2: Vec<T>,
}

/// Exact O(nm) search in one sweep. Ties resolve to the lowest index.
pub(crate) fn nearest_pairs<T: Real>(p: &[T], s: &[T]) -> NearestPairs<T> {
    let (n, m) = (p.len() / 3, s.len() / 3);
    let mut out = NearestPairs {
        p_nn: vec![0; n],
        p_d2: vec![T::infinity(); n],
        s_nn: vec![0; m],
        s_d2: vec![T::infinity(); m],
    };
    for (i, a) in p.chunks_exact(3).enumerate() {
        let mut best = T::infinity();
        let mut best_j = 0;
        for (j, b) in s.chunks_exact(3).enumerate() {
            let d = sq_dist(a, b).max(T::zero());
            if d < best {
                best = d;
                best_j = j;
            }
            if d < out.s_d2[j] {
                out.s_d2[j] = d;
                out.s_nn[j] = i;
            }
        }
        out.p_d2[i] = best;
        out.p_nn[i] = best_j;
    }
    out
}

/// Value of the Chamfer distance without recording a tape.
pub fn chamfer_distance<T: Real>(p: &PointCloud<T>, s: &PointCloud<T>, variant: ChamferVariant) -> T {
    let nn = nearest_pairs(p.as_slice(), s.as_slice());
    let dist = |d2: T| match variant {
        ChamferVariant::L1 => d2.sqrt(),
        ChamferVariant::L2 => d2,
    };
    let a = nn.p_d2.iter().map(|&d| dist(d)).sum::<T>() / T::of(p.len() as f64);
    let b = nn.s_d2.iter().map(|&d| dist(d)).sum::<T>() / T::of(s.len() as f64);
    a + b
}

/// Gathers feature rows selected by an FPS result.
pub fn gather_rows<T: Real>(features: &Tensor<T>, indices: &FpsResult) -> Result<Tensor<T>> {
    let (n, c) = features.dims2()?;
    let mut out = Vec::with_capacity(indices.indices.len() * c);
    for &i in &indices.indices {
        if i >= n {
            bail!(Argument, "gather index {} out of range for {} rows", i, n);
        }
        out.extend_from_slice(features.row(i));
    }
    Tensor::matrix(indices.indices.len(), c, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::fps_oracle;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn cloud(points: &[[f64; 3]]) -> PointCloud<f64> {
        PointCloud::from_points(points).unwrap()
    }

    #[test]
    fn validates_input() {
        assert!(PointCloud::<f64>::new(Vec::new()).is_err());
        assert!(PointCloud::new(vec![1.0, 2.0]).is_err());
        assert!(PointCloud::new(vec![1.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn fps_on_unit_square() {
        let sq = cloud(&[[0., 0., 0.], [1., 0., 0.], [0., 1., 0.], [1., 1., 0.]]);
        assert_eq!(fps(&sq, 2, 0).unwrap().indices, vec![0, 3]);
        // (1,0) and (0,1) tie at distance 1 from both picks: lowest index wins
        assert_eq!(fps(&sq, 4, 0).unwrap().indices, vec![0, 3, 1, 2]);
        assert_eq!(fps(&sq, 2, 1).unwrap().indices, vec![1, 2]);
    }

    #[test]
    fn fps_never_repeats_duplicates() {
        let c = cloud(&[[0., 0., 0.]; 4]);
        assert_eq!(fps(&c, 4, 2).unwrap().indices, vec![2, 0, 1, 3]);
    }

    #[test]
    fn fps_errors() {
        let c = cloud(&[[0., 0., 0.], [1., 0., 0.]]);
        assert!(fps(&c, 0, 0).is_err());
        assert!(fps(&c, 3, 0).is_err());
        assert!(fps(&c, 1, 2).is_err());
    }

    #[test]
    fn pairwise_distances() {
        let a = cloud(&[[0., 0., 0.], [1., 2., 2.]]);
        let b = cloud(&[[1., 0., 0.]]);
        assert_eq!(pairwise_sq_dist(&a, &b).data(), &[1.0, 8.0]);
    }

    #[test]
    fn chamfer_hand_values() {
        let p = cloud(&[[0., 0., 0.]]);
        let s = cloud(&[[1., 0., 0.], [0., 2., 0.]]);
        assert_eq!(chamfer_distance(&p, &s, ChamferVariant::L2), 3.5);
        assert_eq!(chamfer_distance(&p, &s, ChamferVariant::L1), 2.5);
        assert_eq!(chamfer_distance(&s, &s, ChamferVariant::L1), 0.0);
    }

    #[test]
    fn gather_by_selection() {
        let f = Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let g = gather_rows(&f, &FpsResult { indices: vec![2, 0] }).unwrap();
        assert_eq!(g.data(), &[5., 6., 1., 2.]);
        assert!(gather_rows(&f, &FpsResult { indices: vec![3] }).is_err());
    }

    #[test]
    fn cycled_and_transformed() {
        let c = cloud(&[[1., 2., 3.], [4., 5., 6.]]);
        assert_eq!(c.cycled(3).unwrap().as_slice(), &[1., 2., 3., 4., 5., 6., 1., 2., 3.]);
        assert_eq!(c.cycled(1).unwrap().as_slice(), &[1., 2., 3.]);
        let t = c.transformed([1., 2., 3.], 2.0);
        assert_eq!(t.as_slice(), &[0., 0., 0., 6., 6., 6.]);
    }

    fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..max)
    }

    proptest! {
        #[test]
        fn fps_matches_oracle_and_is_prefix_consistent(pts in points(64), k_frac in 0.0f64..1.0, s_frac in 0.0f64..1.0) {
            let n = pts.len();
            let k = 1 + ((n - 1) as f64 * k_frac) as usize;
            let start = ((n - 1) as f64 * s_frac) as usize;
            let c = cloud(&pts);
            let full = fps(&c, n, start).unwrap().indices;
            let part = fps(&c, k, start).unwrap().indices;
            prop_assert_eq!(&full[..k], &part[..]);
            prop_assert_eq!(part, fps_oracle(&pts, k, start));
            let mut sorted = full.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn chamfer_invariants(p in points(40), s in points(40), alpha in 0.1f64..10.0) {
            let (p, s) = (cloud(&p), cloud(&s));
            for v in [ChamferVariant::L1, ChamferVariant::L2] {
                let d = chamfer_distance(&p, &s, v);
                prop_assert!(d >= 0.0);
                prop_assert_eq!(d, chamfer_distance(&s, &p, v));
                prop_assert_eq!(chamfer_distance(&p, &p, v), 0.0);
                let scaled = chamfer_distance(&p.transformed([0.0; 3], alpha), &s.transformed([0.0; 3], alpha), v);
                let k = if v == ChamferVariant::L1 { alpha } else { alpha * alpha };
                prop_assert!((scaled - k * d).abs() <= 1e-10 * (k * d).max(1e-300));
                let rev: Vec<usize> = (0..p.len()).rev().collect();
                let dp = chamfer_distance(&p.select(&rev).unwrap(), &s, v);
                prop_assert!((dp - d).abs() <= 1e-12 * d.max(1e-300));
            }
        }

        #[test]
        fn pairwise_is_non_negative_and_symmetric(p in points(20), s in points(20)) {
            let (p, s) = (cloud(&p), cloud(&s));
            let a = pairwise_sq_dist(&p, &s);
            let b = pairwise_sq_dist(&s, &p);
            for i in 0..p.len() {
                for j in 0..s.len() {
                    prop_assert!(a.data()[i * s.len() + j] >= 0.0);
                    prop_assert_eq!(a.data()[i * s.len() + j], b.data()[j * p.len() + i]);
                }
            }
        }
    }
}
