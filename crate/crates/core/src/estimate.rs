//! Noisy sampling, streaming empirical moments, and subspace projection.
//!
//! The third-moment estimator `s3 / n` is unbiased only for curves whose
//! first moment is zero. Nothing here re-centers data: center the curve
//! (or the cloud) before accumulating.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::moments::MomentTriple;
use crate::pwl::PwlCurve;
use crate::rng;
use crate::tensor::{ShapedArray, Tensor3};

/// Points per independently seeded chunk in [`stream_moments`].
pub const STREAM_CHUNK: usize = 1 << 16;

#[derive(Clone, Debug)]
pub struct NoisyModel {
    pub curve: PwlCurve,
    pub sigma: f64,
}

impl NoisyModel {
    pub fn new(curve: PwlCurve, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { curve, sigma })
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain {
            name: "sigma",
            value: sigma,
            domain: "[0, inf)",
        });
    }
    Ok(())
}

/// `n` rows `C(τ) + σξ`, `τ ~ U[0,1]`, `ξ ~ N(0, I)`.
pub fn sample(model: &NoisyModel, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::Domain {
            name: "n",
            value: 0.0,
            domain: ">= 1",
        });
    }
    let c = &model.curve;
    let bp = c.breakpoints();
    let d = c.dim();
    let mut r = rng::stream(seed);
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let t: f64 = r.random();
        let x = c.evaluate_with(&bp, t);
        let xi = rng::normal_vector(&mut r, d);
        for j in 0..d {
            out[(i, j)] = x[j] + model.sigma * xi[j];
        }
    }
    Ok(out)
}

/// Running sums with Neumaier compensation at batch granularity.
///
/// Only entries with sorted indices (`i ≤ j` for `s2`, `i ≤ j ≤ k` for `s3`)
/// are accumulated; the rest are filled by mirroring, so the outputs are
/// symmetric bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentAccumulator {
    d: usize,
    n: u64,
    s1: Vec<f64>,
    s2: Vec<f64>,
    s3: Vec<f64>,
    c1: Vec<f64>,
    c2: Vec<f64>,
    c3: Vec<f64>,
}

fn packed2(d: usize) -> usize {
    d * (d + 1) / 2
}

fn packed3(d: usize) -> usize {
    d * (d + 1) * (d + 2) / 6
}

#[inline]
fn neumaier(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

impl MomentAccumulator {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            n: 0,
            s1: vec![0.0; d],
            s2: vec![0.0; packed2(d)],
            s3: vec![0.0; packed3(d)],
            c1: vec![0.0; d],
            c2: vec![0.0; packed2(d)],
            c3: vec![0.0; packed3(d)],
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Adds every row of `batch`.
    pub fn accumulate(&mut self, batch: &DMatrix<f64>) -> Result<()> {
        if batch.nrows() == 0 {
            return Ok(());
        }
        if batch.ncols() != self.d {
            return shape_err(format!(
                "batch has {} columns, accumulator dimension is {}",
                batch.ncols(),
                self.d
            ));
        }
        let d = self.d;
        let mut b1 = vec![0.0; d];
        let mut b2 = vec![0.0; packed2(d)];
        let mut b3 = vec![0.0; packed3(d)];
        let mut y = vec![0.0; d];
        for row in batch.row_iter() {
            for (yj, v) in y.iter_mut().zip(row.iter()) {
                *yj = *v;
            }
            let (mut i2, mut i3) = (0, 0);
            for i in 0..d {
                b1[i] += y[i];
                for j in i..d {
                    let yij = y[i] * y[j];
                    b2[i2] += yij;
                    i2 += 1;
                    for yk in &y[j..] {
                        b3[i3] += yij * yk;
                        i3 += 1;
                    }
                }
            }
        }
        self.add_sums(batch.nrows() as u64, &b1, &b2, &b3);
        Ok(())
    }

    fn add_sums(&mut self, n: u64, b1: &[f64], b2: &[f64], b3: &[f64]) {
        self.n += n;
        for (k, x) in b1.iter().enumerate() {
            neumaier(&mut self.s1[k], &mut self.c1[k], *x);
        }
        for (k, x) in b2.iter().enumerate() {
            neumaier(&mut self.s2[k], &mut self.c2[k], *x);
        }
        for (k, x) in b3.iter().enumerate() {
            neumaier(&mut self.s3[k], &mut self.c3[k], *x);
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        if other.d != self.d {
            return shape_err(format!("cannot merge accumulators of dimension {} and {}", self.d, other.d));
        }
        let n = other.n;
        self.add_sums(n, &other.s1, &other.s2, &other.s3);
        for (a, b) in self.c1.iter_mut().zip(&other.c1) {
            *a += b;
        }
        for (a, b) in self.c2.iter_mut().zip(&other.c2) {
            *a += b;
        }
        for (a, b) in self.c3.iter_mut().zip(&other.c3) {
            *a += b;
        }
        Ok(())
    }

    /// Compensated totals `(s1, s2, s3)` with the symmetric entries mirrored.
    pub fn sums(&self) -> (DVector<f64>, DMatrix<f64>, Tensor3) {
        let d = self.d;
        let s1 = DVector::from_iterator(d, self.s1.iter().zip(&self.c1).map(|(s, c)| s + c));
        let (s2, s3) = unpack(d, &self.s2, &self.c2, &self.s3, &self.c3);
        (s1, s2, s3)
    }

    /// `m̂₁ = s1/n`, `m̂₂ = s2/n − σ²I`, `m̂₃ = s3/n`.
    pub fn finalize(&self, sigma: f64) -> Result<MomentTriple> {
        if self.n == 0 {
            return Err(Error::EmptyAccumulator);
        }
        check_sigma(sigma)?;
        let n = self.n as f64;
        let (s1, s2, s3) = self.sums();
        let mut m2 = s2 / n;
        if sigma > 0.0 {
            for i in 0..self.d {
                m2[(i, i)] -= sigma * sigma;
            }
        }
        MomentTriple::new(s1 / n, m2, s3.scaled(1.0 / n))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let d = self.d;
        let zeros2 = vec![0.0; packed2(d)];
        let zeros3 = vec![0.0; packed3(d)];
        let (s2, s3) = unpack(d, &self.s2, &zeros2, &self.s3, &zeros3);
        let (c2, c3) = unpack(d, &self.c2, &zeros2, &self.c3, &zeros3);
        Checkpoint {
            version: CHECKPOINT_VERSION,
            d,
            n: self.n,
            s1: ShapedArray::vector(&DVector::from_vec(self.s1.clone())),
            s2: ShapedArray::matrix(&s2),
            s3: ShapedArray::tensor(&s3),
            c1: ShapedArray::vector(&DVector::from_vec(self.c1.clone())),
            c2: ShapedArray::matrix(&c2),
            c3: ShapedArray::tensor(&c3),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", cp.version)));
        }
        let d = cp.d;
        if d == 0 {
            return Err(Error::Format("checkpoint dimension must be positive".into()));
        }
        let s2 = cp.s2.to_matrix(d, d, "s2")?;
        let c2 = cp.c2.to_matrix(d, d, "c2")?;
        let s3 = cp.s3.to_tensor(d, "s3")?;
        let c3 = cp.c3.to_tensor(d, "c3")?;
        for (name, m) in [("s2", &s2), ("c2", &c2)] {
            if m != &m.transpose() {
                return Err(Error::Format(format!("{name} is not symmetric")));
            }
        }
        for (name, t) in [("s3", &s3), ("c3", &c3)] {
            if t.asymmetry() != 0.0 {
                return Err(Error::Format(format!("{name} is not symmetric")));
            }
        }
        let mut acc = Self::new(d);
        acc.n = cp.n;
        acc.s1 = cp.s1.to_vector(d, "s1")?.as_slice().to_vec();
        acc.c1 = cp.c1.to_vector(d, "c1")?.as_slice().to_vec();
        let (mut i2, mut i3) = (0, 0);
        for i in 0..d {
            for j in i..d {
                acc.s2[i2] = s2[(i, j)];
                acc.c2[i2] = c2[(i, j)];
                i2 += 1;
                for k in j..d {
                    acc.s3[i3] = s3.get(i, j, k);
                    acc.c3[i3] = c3.get(i, j, k);
                    i3 += 1;
                }
            }
        }
        Ok(acc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(&serde_json::from_str(s)?)
    }
}

fn unpack(d: usize, s2: &[f64], c2: &[f64], s3: &[f64], c3: &[f64]) -> (DMatrix<f64>, Tensor3) {
    let mut m2 = DMatrix::zeros(d, d);
    let mut m3 = Tensor3::zeros(d);
    let (mut i2, mut i3) = (0, 0);
    for i in 0..d {
        for j in i..d {
            let v = s2[i2] + c2[i2];
            m2[(i, j)] = v;
            m2[(j, i)] = v;
            i2 += 1;
            for k in j..d {
                m3.set(i, j, k, s3[i3] + c3[i3]);
                i3 += 1;
            }
        }
    }
    m3.mirror_sorted();
    (m2, m3)
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized accumulator state. Symmetric arrays are stored in full.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub d: usize,
    pub n: u64,
    pub s1: ShapedArray,
    pub s2: ShapedArray,
    pub s3: ShapedArray,
    pub c1: ShapedArray,
    pub c2: ShapedArray,
    pub c3: ShapedArray,
}

/// Samples `n` points in chunks of [`STREAM_CHUNK`] and accumulates them
/// without holding the cloud in memory. Chunk `k` uses the stream
/// `derive(seed, k)`, so the result does not depend on the thread count.
pub fn stream_moments(model: &NoisyModel, n: usize, seed: u64) -> Result<MomentAccumulator> {
    let d = model.curve.dim();
    let n_chunks = n.div_ceil(STREAM_CHUNK);
    let parts: Vec<Result<MomentAccumulator>> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let len = STREAM_CHUNK.min(n - k * STREAM_CHUNK);
            let batch = sample(model, len, rng::derive(seed, k as u64))?;
            let mut acc = MomentAccumulator::new(d);
            acc.accumulate(&batch)?;
            Ok(acc)
        })
        .collect();
    let mut total = MomentAccumulator::new(d);
    for part in parts {
        total.merge(&part?)?;
    }
    Ok(total)
}

/// Orthonormal `d × M` basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceBasis {
    q: DMatrix<f64>,
}

impl SubspaceBasis {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        let k = q.ncols();
        if k == 0 || k > q.nrows() {
            return shape_err(format!("basis shape {:?} is not tall", q.shape()));
        }
        let err = (q.transpose() * &q - DMatrix::identity(k, k)).amax();
        if !(err <= 1e-10) {
            return shape_err(format!("basis columns are not orthonormal (error {err:e})"));
        }
        Ok(Self { q })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            q: DMatrix::identity(d, d),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn ambient_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }
}

/// Eigenvalues of the symmetric part of `m`, descending, with matching
/// eigenvectors as columns. Equal eigenvalues keep solver order.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), m.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Flips `v` so its first entry that is not negligible is positive.
pub fn normalize_sign(v: &mut DVector<f64>) {
    let tol = 1e-12 * v.amax();
    if let Some(x) = v.iter().find(|x| x.abs() > tol) {
        if *x < 0.0 {
            v.neg_mut();
        }
    }
}

/// Top-`M` eigenvectors of `m2` and the full descending spectrum.
pub fn subspace_basis_with_spectrum(m2: &DMatrix<f64>, m: usize) -> Result<(SubspaceBasis, Vec<f64>)> {
    let d = m2.nrows();
    if m2.ncols() != d {
        return shape_err(format!("second moment must be square, got {:?}", m2.shape()));
    }
    if m == 0 || m > d {
        return Err(Error::Config(format!("subspace rank {m} must lie in 1..={d}")));
    }
    let (vals, vecs) = sorted_eigen(m2);
    let mut q = DMatrix::zeros(d, m);
    for j in 0..m {
        let mut v = vecs.column(j).into_owned();
        normalize_sign(&mut v);
        q.set_column(j, &v);
    }
    Ok((SubspaceBasis { q }, vals))
}

pub fn subspace_basis(m2: &DMatrix<f64>, m: usize) -> Result<SubspaceBasis> {
    Ok(subspace_basis_with_spectrum(m2, m)?.0)
}

/// `Qᵀm₁`, `Qᵀm₂Q`, `m₃(Q, Q, Q)`.
pub fn project_moments(mom: &MomentTriple, q: &SubspaceBasis) -> Result<MomentTriple> {
    let qm = &q.q;
    if qm.nrows() != mom.dim() {
        return shape_err(format!(
            "basis ambient dimension {} differs from moment dimension {}",
            qm.nrows(),
            mom.dim()
        ));
    }
    MomentTriple::new(
        qm.transpose() * &mom.m1,
        qm.transpose() * &mom.m2 * qm,
        mom.m3.contract(qm, qm, qm)?,
    )
}

/// Vertex matrix `C Q`.
pub fn project_curve(c: &PwlCurve, q: &SubspaceBasis) -> Result<PwlCurve> {
    if c.dim() != q.ambient_dim() {
        return shape_err(format!("curve dimension {} differs from basis {}", c.dim(), q.ambient_dim()));
    }
    PwlCurve::new(c.vertices() * &q.q)
}

/// Vertex matrix `C Qᵀ`.
pub fn deproject_curve(c: &PwlCurve, q: &SubspaceBasis) -> Result<PwlCurve> {
    if c.dim() != q.rank() {
        return shape_err(format!("curve dimension {} differs from basis rank {}", c.dim(), q.rank()));
    }
    PwlCurve::new(c.vertices() * q.q.transpose())
}
