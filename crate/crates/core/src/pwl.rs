//! Constant-speed open piecewise-linear curves on `[0, 1]`.
//!
//! A curve with `M` segments in `R^d` is identified with its `(M+1) × d`
//! matrix of row-stacked vertices. The time parameterization is fixed by
//! arc length, so the vertices alone determine the curve.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default number of quadrature nodes for [`curve_distance`].
pub const DEFAULT_QUAD_NODES: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct PwlCurve {
    vertices: DMatrix<f64>,
}

/// Proportional segment lengths: positive and summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentWeights(DVector<f64>);

/// Vertex times `0 = t_0 < t_1 < … < t_M = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Breakpoints(Vec<f64>);

impl SegmentWeights {
    pub const SUM_TOL: f64 = 1e-10;

    pub fn new(p: DVector<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some(i) = p.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidWeights(format!("p[{i}] = {} is not positive", p[i])));
        }
        let s = p.sum();
        if (s - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {s}")));
        }
        Ok(Self(p))
    }

    pub fn uniform(m: usize) -> Self {
        Self(DVector::from_element(m, 1.0 / m as f64))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Breakpoints {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if t.len() < 2 || t[0] != 0.0 || *t.last().unwrap() != 1.0 {
            return Err(Error::InvalidCurve("breakpoints must run from exactly 0 to exactly 1".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidCurve("breakpoints must be strictly increasing".into()));
        }
        Ok(Self(t))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the segment containing `t`. A breakpoint belongs to the
    /// segment on its right, except `t = 1` which belongs to the last one.
    pub fn locate(&self, t: f64) -> usize {
        let m = self.0.len() - 1;
        let count = self.0[..m].partition_point(|&ti| ti <= t);
        count.saturating_sub(1).min(m - 1)
    }
}

#[derive(Serialize, Deserialize)]
struct CurveJson {
    vertices: Vec<Vec<f64>>,
}

impl PwlCurve {
    /// Validates shape, finiteness, and that consecutive vertices differ.
    pub fn new(vertices: DMatrix<f64>) -> Result<Self> {
        let (rows, d) = vertices.shape();
        if rows < 2 {
            return Err(Error::InvalidCurve(format!("need at least 2 vertices, got {rows}")));
        }
        if d < 1 {
            return Err(Error::InvalidCurve("ambient dimension must be at least 1".into()));
        }
        if vertices.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidCurve("non-finite vertex coordinate".into()));
        }
        for i in 1..rows {
            let len = (vertices.row(i) - vertices.row(i - 1)).norm();
            if !(len > 0.0) {
                return Err(Error::InvalidCurve(format!("segment {i} has zero length")));
            }
        }
        Ok(Self { vertices })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidCurve("ragged vertex rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), d, &flat))
    }

    pub fn vertices(&self) -> &DMatrix<f64> {
        &self.vertices
    }

    pub fn into_vertices(self) -> DMatrix<f64> {
        self.vertices
    }

    /// Number of segments `M`.
    pub fn segments(&self) -> usize {
        self.vertices.nrows() - 1
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.vertices.ncols()
    }

    pub fn vertex(&self, i: usize) -> DVector<f64> {
        self.vertices.row(i).transpose()
    }

    pub fn segment_lengths(&self) -> Vec<f64> {
        segment_lengths(&self.vertices)
    }

    pub fn total_length(&self) -> f64 {
        self.segment_lengths().iter().sum()
    }

    pub fn breakpoints(&self) -> Breakpoints {
        let lens = self.segment_lengths();
        let z: f64 = lens.iter().sum();
        let m = lens.len();
        let mut t = Vec::with_capacity(m + 1);
        t.push(0.0);
        let mut acc = 0.0;
        for len in &lens[..m - 1] {
            acc += len;
            t.push(acc / z);
        }
        t.push(1.0);
        Breakpoints(t)
    }

    pub fn proportional_segment_lengths(&self) -> SegmentWeights {
        SegmentWeights(proportional_lengths(&self.vertices))
    }

    pub fn evaluate(&self, t: f64) -> Result<DVector<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain {
                name: "t",
                value: t,
                domain: "[0, 1]",
            });
        }
        Ok(self.evaluate_with(&self.breakpoints(), t))
    }

    /// Evaluation against precomputed breakpoints; `t` must lie in `[0, 1]`.
    pub fn evaluate_with(&self, bp: &Breakpoints, t: f64) -> DVector<f64> {
        let s = bp.locate(t);
        let (t0, t1) = (bp.0[s], bp.0[s + 1]);
        let u = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        (self.vertices.row(s) * (1.0 - u) + self.vertices.row(s + 1) * u).transpose()
    }

    /// Samples the curve at the given times, one row per time.
    pub fn sample_at(&self, times: &[f64]) -> DMatrix<f64> {
        let bp = self.breakpoints();
        let mut out = DMatrix::zeros(times.len(), self.dim());
        for (r, &t) in times.iter().enumerate() {
            out.set_row(r, &self.evaluate_with(&bp, t).transpose());
        }
        out
    }

    /// First moment `∫ C(t) dt`.
    pub fn mean(&self) -> DVector<f64> {
        let p = proportional_lengths(&self.vertices);
        let mut m = DVector::zeros(self.dim());
        for i in 0..self.segments() {
            m += (self.vertices.row(i) + self.vertices.row(i + 1)).transpose() * (0.5 * p[i]);
        }
        m
    }

    pub fn translated(&self, v: &DVector<f64>) -> PwlCurve {
        let mut out = self.vertices.clone();
        for mut row in out.row_iter_mut() {
            row += v.transpose();
        }
        PwlCurve { vertices: out }
    }

    /// Shifts every vertex by the negated first moment.
    pub fn center(&self) -> PwlCurve {
        self.translated(&-self.mean())
    }

    /// Same point set traversed from `c_M` to `c_0`.
    pub fn reversed(&self) -> PwlCurve {
        let n = self.vertices.nrows();
        PwlCurve {
            vertices: DMatrix::from_fn(n, self.dim(), |i, j| self.vertices[(n - 1 - i, j)]),
        }
    }

    /// Applies `x ↦ R x` to every vertex.
    pub fn transformed(&self, r: &DMatrix<f64>) -> Result<PwlCurve> {
        if r.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "transform has {} columns, curve dimension is {}",
                r.ncols(),
                self.dim()
            )));
        }
        PwlCurve::new(&self.vertices * r.transpose())
    }

    /// Smallest singular value of the `M × d` matrix of segment vectors.
    pub fn direction_sigma_min(&self) -> f64 {
        let m = self.segments();
        let diffs = DMatrix::from_fn(m, self.dim(), |i, j| {
            self.vertices[(i + 1, j)] - self.vertices[(i, j)]
        });
        let sv = diffs.singular_values();
        if m > self.dim() {
            return 0.0;
        }
        sv.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Segment directions linearly independent, judged by
    /// [`direction_sigma_min`](Self::direction_sigma_min) against `threshold`.
    pub fn is_generic(&self, threshold: f64) -> bool {
        self.direction_sigma_min() > threshold
    }

    /// All vertices pairwise distinct (not only consecutive ones).
    pub fn vertices_distinct(&self) -> bool {
        let n = self.vertices.nrows();
        (0..n).all(|i| {
            (i + 1..n).all(|j| (self.vertices.row(i) - self.vertices.row(j)).norm() > 0.0)
        })
    }

    pub fn to_json(&self) -> String {
        let rows = self
            .vertices
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        serde_json::to_string_pretty(&CurveJson { vertices: rows }).expect("curve serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: CurveJson = serde_json::from_str(s)?;
        Self::from_rows(&raw.vertices)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.vertices
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

impl Serialize for PwlCurve {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CurveJson {
            vertices: self.rows(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PwlCurve {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = CurveJson::deserialize(d)?;
        PwlCurve::from_rows(&raw.vertices).map_err(serde::de::Error::custom)
    }
}

/// Euclidean lengths of consecutive vertex differences of a raw vertex matrix.
pub fn segment_lengths(vertices: &DMatrix<f64>) -> Vec<f64> {
    (1..vertices.nrows())
        .map(|i| (vertices.row(i) - vertices.row(i - 1)).norm())
        .collect()
}

/// `p_i = ||c_i − c_{i−1}|| / Z` for a raw vertex matrix.
pub fn proportional_lengths(vertices: &DMatrix<f64>) -> DVector<f64> {
    let lens = segment_lengths(vertices);
    let z: f64 = lens.iter().sum();
    DVector::from_iterator(lens.len(), lens.into_iter().map(|l| l / z))
}

/// Average squared distance `∫₀¹ ||C(t) − Γ(t)||² dt` by composite midpoint
/// quadrature, minimized over the two orientations of `g`.
pub fn curve_distance(c: &PwlCurve, g: &PwlCurve, n_quad: usize) -> Result<f64> {
    if c.dim() != g.dim() {
        return Err(Error::Shape(format!(
            "curve dimensions differ: {} vs {}",
            c.dim(),
            g.dim()
        )));
    }
    if n_quad < 2 {
        return Err(Error::Domain {
            name: "n_quad",
            value: n_quad as f64,
            domain: ">= 2",
        });
    }
    let times: Vec<f64> = (0..n_quad).map(|k| (k as f64 + 0.5) / n_quad as f64).collect();
    let a = c.sample_at(&times);
    let b = g.sample_at(&times);
    let mut forward = 0.0;
    let mut backward = 0.0;
    for k in 0..n_quad {
        forward += (a.row(k) - b.row(k)).norm_squared();
        backward += (a.row(k) - b.row(n_quad - 1 - k)).norm_squared();
    }
    Ok(forward.min(backward) / n_quad as f64)
}

/// Random walk with segment lengths uniform in `[len_lo, len_hi]` and
/// directions uniform on the sphere, started at the origin and then
/// mean-centered.
pub fn random_curve(m: usize, d: usize, len_lo: f64, len_hi: f64, seed: u64) -> Result<PwlCurve> {
    if m < 1 || d < 1 {
        return Err(Error::Config(format!("random_curve needs M >= 1 and d >= 1, got M={m}, d={d}")));
    }
    if !(len_lo > 0.0 && len_lo <= len_hi && len_hi.is_finite()) {
        return Err(Error::Config(format!("invalid segment length range [{len_lo}, {len_hi}]")));
    }
    let mut rng = rng::stream(seed);
    let mut v = DMatrix::zeros(m + 1, d);
    for i in 1..=m {
        let len = if len_hi > len_lo {
            rng.random_range(len_lo..=len_hi)
        } else {
            len_lo
        };
        let dir = rng::unit_vector(&mut rng, d);
        let next = v.row(i - 1).transpose() + dir * len;
        v.set_row(i, &next.transpose());
    }
    Ok(PwlCurve::new(v)?.center())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(points: &[f64]) -> PwlCurve {
        PwlCurve::from_rows(&points.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn breakpoints_equal_segments() {
        assert_eq!(line(&[0.0, 1.0, 2.0]).breakpoints().as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn breakpoints_unequal_segments() {
        assert_eq!(line(&[0.0, 1.0, 4.0]).breakpoints().as_slice(), &[0.0, 0.25, 1.0]);
    }

    #[test]
    fn zero_length_segment_rejected() {
        assert!(matches!(
            PwlCurve::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]),
            Err(Error::InvalidCurve(_))
        ));
    }

    #[test]
    fn evaluate_endpoints_and_breakpoint() {
        let c = line(&[0.0, 1.0, 4.0]);
        assert_eq!(c.evaluate(0.0).unwrap()[0], 0.0);
        assert_eq!(c.evaluate(1.0).unwrap()[0], 4.0);
        assert!((c.evaluate(0.25).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(c.evaluate(1.5).is_err());
        assert!(c.evaluate(-0.1).is_err());
    }

    #[test]
    fn evaluate_midpoint() {
        let c = PwlCurve::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let v = c.evaluate(0.5).unwrap();
        assert_eq!((v[0], v[1]), (0.5, 0.0));
    }

    #[test]
    fn locate_ties_go_right() {
        let bp = Breakpoints::new(vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(bp.locate(0.0), 0);
        assert_eq!(bp.locate(0.5), 1);
        assert_eq!(bp.locate(1.0), 1);
    }

    #[test]
    fn proportional_lengths_by_hand() {
        let p = line(&[0.0, 1.0, 4.0]).proportional_segment_lengths();
        assert_eq!(p.as_vector().as_slice(), &[0.25, 0.75]);
        let q = line(&[0.0, 1.0, 2.0, 3.0]).proportional_segment_lengths();
        assert!(q.as_vector().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn distance_identity_translation_reversal() {
        let c = random_curve(4, 3, 1.0, 2.0, 5).unwrap();
        assert_eq!(curve_distance(&c, &c, 256).unwrap(), 0.0);
        let v = DVector::from_vec(vec![0.3, -0.4, 1.2]);
        let rho = curve_distance(&c, &c.translated(&v), 256).unwrap();
        assert!((rho - v.norm_squared()).abs() < 1e-12);
        assert!(curve_distance(&c, &c.reversed(), 256).unwrap() < 1e-24);

        let e = PwlCurve::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        for n in [2, 3, 17] {
            assert!(curve_distance(&e, &e.reversed(), n).unwrap() < 1e-30);
        }
    }

    #[test]
    fn distance_dimension_mismatch() {
        let a = line(&[0.0, 1.0]);
        let b = PwlCurve::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(curve_distance(&a, &b, 16), Err(Error::Shape(_))));
    }

    #[test]
    fn center_single_segment() {
        let c = PwlCurve::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap().center();
        assert_eq!(c.rows(), vec![vec![-0.5, 0.0], vec![0.5, 0.0]]);
    }

    #[test]
    fn random_curve_contract() {
        let a = random_curve(5, 4, 1.0, 2.0, 42).unwrap();
        let b = random_curve(5, 4, 1.0, 2.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.mean().norm() < 1e-10);
        assert!(a.segment_lengths().iter().all(|&l| (1.0 - 1e-12..=2.0 + 1e-12).contains(&l)));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let c = random_curve(3, 2, 1.0, 2.0, 1).unwrap();
        assert_eq!(PwlCurve::from_json(&c.to_json()).unwrap(), c);
        assert!(PwlCurve::from_json(r#"{"vertices": [[0, 0], [0, 0]]}"#).is_err());
        assert!(PwlCurve::from_json(r#"{"vertices": [[0, 0], [1]]}"#).is_err());
        assert!(PwlCurve::from_json(r#"{"vertices": [[0]]}"#).is_err());
    }

    #[test]
    fn genericity_predicate() {
        let c = random_curve(3, 3, 1.0, 2.0, 9).unwrap();
        assert!(c.is_generic(1e-8));
        let flat = PwlCurve::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert!(!flat.is_generic(1e-8));
    }

    proptest! {
        #[test]
        fn centered_random_curves_have_zero_mean(seed in 0u64..100) {
            let c = random_curve(4, 3, 1.0, 2.0, seed).unwrap();
            prop_assert!(c.center().mean().norm() < 1e-10);
            let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
            let moved = c.translated(&v).center();
            prop_assert!((moved.vertices() - c.center().vertices()).norm() < 1e-12);
        }

        #[test]
        fn weights_sum_to_one(seed in 0u64..200, m in 1usize..8, d in 1usize..5) {
            let c = random_curve(m, d, 1.0, 2.0, seed).unwrap();
            let p = c.proportional_segment_lengths();
            prop_assert!((p.as_vector().sum() - 1.0).abs() < 1e-10);
            prop_assert!(SegmentWeights::new(p.into_vector()).is_ok());
        }

        #[test]
        fn breakpoints_rotation_invariant(seed in 0u64..50) {
            let c = random_curve(4, 3, 1.0, 2.0, seed).unwrap();
            let mut rng = rng::stream(seed + 1000);
            let r = rng::orthogonal_matrix(&mut rng, 3);
            let a = c.breakpoints();
            let b = c.transformed(&r).unwrap().breakpoints();
            prop_assert!(Breakpoints::new(a.as_slice().to_vec()).is_ok());
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn evaluation_is_lipschitz(seed in 0u64..50, t in 0.0f64..0.99, h in 1e-6f64..0.01) {
            let c = random_curve(4, 2, 1.0, 2.0, seed).unwrap();
            let bp = c.breakpoints();
            let min_gap = bp.as_slice().windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            let a = c.evaluate(t).unwrap();
            let b = c.evaluate((t + h).min(1.0)).unwrap();
            prop_assert!((a - b).norm() <= c.total_length() * h / min_gap + 1e-12);
        }

        #[test]
        fn distance_symmetric_nonnegative(s1 in 0u64..40, s2 in 0u64..40) {
            let a = random_curve(3, 2, 1.0, 2.0, s1).unwrap();
            let b = random_curve(3, 2, 1.0, 2.0, s2).unwrap();
            let ab = curve_distance(&a, &b, 128).unwrap();
            let ba = curve_distance(&b, &a, 128).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-12 * (1.0 + ab));
        }
    }
}
