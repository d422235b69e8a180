//! Exact and relaxed moments of PWL curves, and the moment-matching losses.
//!
//! With `a = c_{i−1}`, `b = c_i`, `s = a + b` and weights `p`, the relaxed
//! moments are
//!
//! ```text
//! μ₁ = ½  Σ p_i (a + b)
//! μ₂ = ⅙  Σ p_i (s sᵀ + a aᵀ + b bᵀ)
//! μ₃ = 1/12 Σ p_i (s⊗³ + 2 a⊗³ + 2 b⊗³)
//! ```
//!
//! and they are the true moments when `p` is the vector of proportional
//! segment lengths. The same quantities can be written as `½ Cᵀ A_s p`,
//! `Cᵀ Ā(p) C` and `C⊗³ ⋆ α(p)`; those forms are provided for the theory
//! checks and never used on hot paths.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::pwl::{proportional_lengths, segment_lengths, PwlCurve};
use crate::tensor::{ShapedArray, Tensor3};

/// Tolerance for the symmetry checks on deserialized moments.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct MomentTriple {
    pub m1: DVector<f64>,
    pub m2: DMatrix<f64>,
    pub m3: Tensor3,
}

#[derive(Serialize, Deserialize)]
struct MomentJson {
    m1: ShapedArray,
    m2: ShapedArray,
    m3: ShapedArray,
}

impl MomentTriple {
    pub fn new(m1: DVector<f64>, m2: DMatrix<f64>, m3: Tensor3) -> Result<Self> {
        let d = m1.len();
        if m2.shape() != (d, d) || m3.dim() != d {
            return shape_err(format!(
                "moment shapes disagree: m1 {d}, m2 {:?}, m3 {}",
                m2.shape(),
                m3.dim()
            ));
        }
        Ok(Self { m1, m2, m3 })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            m1: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
            m3: Tensor3::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.m1.len()
    }

    /// Largest deviation of `m2` and `m3` from symmetry.
    pub fn asymmetry(&self) -> f64 {
        let a2 = (&self.m2 - self.m2.transpose()).amax();
        a2.max(self.m3.asymmetry())
    }

    pub fn symmetrized(mut self) -> Self {
        self.m2 = (&self.m2 + self.m2.transpose()) * 0.5;
        self.m3 = self.m3.sym3();
        self
    }

    /// `||m₁−o₁||², ||m₂−o₂||², ||m₃−o₃||²`.
    pub fn sq_distances(&self, other: &MomentTriple) -> [f64; 3] {
        [
            (&self.m1 - &other.m1).norm_squared(),
            (&self.m2 - &other.m2).norm_squared(),
            self.m3.sub(&other.m3).frob_norm_sq(),
        ]
    }

    pub fn to_json(&self) -> String {
        let raw = MomentJson {
            m1: ShapedArray::vector(&self.m1),
            m2: ShapedArray::matrix(&self.m2),
            m3: ShapedArray::tensor(&self.m3),
        };
        serde_json::to_string(&raw).expect("moments serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: MomentJson = serde_json::from_str(s)?;
        Self::from_shaped(&raw.m1, &raw.m2, &raw.m3)
    }

    fn from_shaped(m1: &ShapedArray, m2: &ShapedArray, m3: &ShapedArray) -> Result<Self> {
        if m1.shape.len() != 1 {
            return Err(Error::Format(format!("m1: expected a vector shape, found {:?}", m1.shape)));
        }
        let d = m1.shape[0];
        if d == 0 {
            return Err(Error::Format("m1: dimension must be positive".into()));
        }
        let out = Self {
            m1: m1.to_vector(d, "m1")?,
            m2: m2.to_matrix(d, d, "m2")?,
            m3: m3.to_tensor(d, "m3")?,
        };
        let scale = 1.0f64
            .max(out.m2.amax())
            .max(out.m3.as_slice().iter().fold(0.0f64, |a, x| a.max(x.abs())));
        if out.asymmetry() > SYMMETRY_TOL * scale {
            return Err(Error::Format(format!("moments are not symmetric (deviation {:e})", out.asymmetry())));
        }
        Ok(out)
    }
}

impl Serialize for MomentTriple {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MomentJson {
            m1: ShapedArray::vector(&self.m1),
            m2: ShapedArray::matrix(&self.m2),
            m3: ShapedArray::tensor(&self.m3),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MomentTriple {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MomentJson::deserialize(d)?;
        Self::from_shaped(&raw.m1, &raw.m2, &raw.m3).map_err(serde::de::Error::custom)
    }
}

/// The 0/1 patterns `A_l`, `A_r`, `A_s = A_l + A_r`, each `(M+1) × M`.
/// Column `i` of `A_l` (`A_r`) marks the left (right) vertex of segment `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuralConstants {
    pub a_s: DMatrix<f64>,
    pub a_l: DMatrix<f64>,
    pub a_r: DMatrix<f64>,
}

impl StructuralConstants {
    pub fn new(m: usize) -> Self {
        let a_l = DMatrix::from_fn(m + 1, m, |r, c| if r == c { 1.0 } else { 0.0 });
        let a_r = DMatrix::from_fn(m + 1, m, |r, c| if r == c + 1 { 1.0 } else { 0.0 });
        Self {
            a_s: &a_l + &a_r,
            a_l,
            a_r,
        }
    }
}

/// `Ā(p) = ⅙ (A_s diag(p) A_sᵀ + A_l diag(p) A_lᵀ + A_r diag(p) A_rᵀ)`.
pub fn abar(p: &DVector<f64>) -> DMatrix<f64> {
    let m = p.len();
    let mut out = DMatrix::zeros(m + 1, m + 1);
    for (i, &w) in p.iter().enumerate() {
        let w = w / 6.0;
        // s sᵀ contributes once to every entry of the 2x2 block, a aᵀ and b bᵀ to the diagonal.
        out[(i, i)] += 2.0 * w;
        out[(i + 1, i + 1)] += 2.0 * w;
        out[(i, i + 1)] += w;
        out[(i + 1, i)] += w;
    }
    out
}

/// `α(p)_{mno} = Σ_i p_i (1/12 A_s⊗A_s⊗A_s + ⅙ A_l⊗A_l⊗A_l + ⅙ A_r⊗A_r⊗A_r)_{mno,i}`.
pub fn alpha(p: &DVector<f64>) -> Tensor3 {
    let m = p.len();
    let mut out = Tensor3::zeros(m + 1);
    for (i, &w) in p.iter().enumerate() {
        let idx = [i, i + 1];
        for &x in &idx {
            for &y in &idx {
                for &z in &idx {
                    out.add_at(x, y, z, w / 12.0);
                }
            }
        }
        out.add_at(i, i, i, w / 6.0);
        out.add_at(i + 1, i + 1, i + 1, w / 6.0);
    }
    out
}

/// `[X ⋆ y]_{jkl} = Σ_{mno} X_{mj} X_{nk} X_{ol} y_{mno}`.
pub fn star_contract(x: &DMatrix<f64>, y: &Tensor3) -> Result<Tensor3> {
    star_contract_mixed(x, x, x, y)
}

/// `Σ_{mno} A_{mj} B_{nk} C_{ol} y_{mno}` for three possibly different vertex matrices.
pub fn star_contract_mixed(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    y: &Tensor3,
) -> Result<Tensor3> {
    y.contract(a, b, c)
}

fn check_cp(c: &DMatrix<f64>, p: &DVector<f64>) -> Result<()> {
    if c.nrows() < 2 || c.ncols() < 1 {
        return shape_err(format!("vertex matrix must be at least 2x1, got {:?}", c.shape()));
    }
    if p.len() + 1 != c.nrows() {
        return shape_err(format!(
            "{} weights for a vertex matrix with {} rows",
            p.len(),
            c.nrows()
        ));
    }
    Ok(())
}

/// Relaxed moments of a vertex matrix under arbitrary (not necessarily
/// positive) segment weights.
pub fn relaxed_moments(c: &DMatrix<f64>, p: &DVector<f64>) -> Result<MomentTriple> {
    check_cp(c, p)?;
    let d = c.ncols();
    let mut m1 = DVector::zeros(d);
    let mut m2 = DMatrix::zeros(d, d);
    let mut m3 = Tensor3::zeros(d);
    for (i, &w) in p.iter().enumerate() {
        let a = c.row(i).transpose();
        let b = c.row(i + 1).transpose();
        let s = &a + &b;
        m1.axpy(0.5 * w, &s, 1.0);
        m2.ger(w / 6.0, &s, &s, 1.0);
        m2.ger(w / 6.0, &a, &a, 1.0);
        m2.ger(w / 6.0, &b, &b, 1.0);
        m3.add_cube(w / 12.0, s.as_slice());
        m3.add_cube(w / 6.0, a.as_slice());
        m3.add_cube(w / 6.0, b.as_slice());
    }
    Ok(MomentTriple { m1, m2, m3 })
}

pub fn exact_moments(curve: &PwlCurve) -> MomentTriple {
    let p = proportional_lengths(curve.vertices());
    relaxed_moments(curve.vertices(), &p).expect("curve shapes are consistent")
}

/// Moments of an arbitrary vertex matrix with its own proportional lengths.
/// Errors on a zero-length segment.
pub fn exact_moments_of(c: &DMatrix<f64>) -> Result<MomentTriple> {
    if segment_lengths(c).iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Degenerate("zero-length segment".into()));
    }
    relaxed_moments(c, &proportional_lengths(c))
}

/// `L(C, p) = ||μ₃(C, p) − m₃||²`.
pub fn third_moment_loss(c: &DMatrix<f64>, p: &DVector<f64>, target: &Tensor3) -> Result<f64> {
    if target.dim() != c.ncols() {
        return shape_err(format!(
            "target tensor dimension {} differs from vertex dimension {}",
            target.dim(),
            c.ncols()
        ));
    }
    let mu = relaxed_moments(c, p)?;
    Ok(mu.m3.sub(target).frob_norm_sq())
}

/// Gradients of [`third_moment_loss`] with respect to the vertices and the weights.
pub fn third_moment_loss_grads(
    c: &DMatrix<f64>,
    p: &DVector<f64>,
    target: &Tensor3,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let target = MomentTriple {
        m1: DVector::zeros(c.ncols()),
        m2: DMatrix::zeros(c.ncols(), c.ncols()),
        m3: target.clone(),
    };
    let lg = relaxed_loss_grads(c, p, &target, MomentWeights::THIRD_ONLY)?;
    Ok((lg.grad_c, lg.grad_p))
}

/// Per-moment weights of a combined moment-matching loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentWeights {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl MomentWeights {
    pub const THIRD_ONLY: Self = Self {
        m1: 0.0,
        m2: 0.0,
        m3: 1.0,
    };
    pub const ALL_THREE: Self = Self {
        m1: 1.0,
        m2: 1.0,
        m3: 1.0,
    };
}

/// Weighted relaxed loss without gradients.
pub fn relaxed_loss(c: &DMatrix<f64>, p: &DVector<f64>, target: &MomentTriple, w: MomentWeights) -> Result<f64> {
    if target.dim() != c.ncols() {
        return shape_err(format!("target dimension {} differs from vertex dimension {}", target.dim(), c.ncols()));
    }
    let parts = relaxed_moments(c, p)?.sq_distances(target);
    Ok(w.m1 * parts[0] + w.m2 * parts[1] + w.m3 * parts[2])
}

/// Weighted loss of the true moments `m_k(C)`; errors on a zero-length segment.
pub fn true_loss(c: &DMatrix<f64>, target: &MomentTriple, w: MomentWeights) -> Result<f64> {
    if target.dim() != c.ncols() {
        return shape_err(format!("target dimension {} differs from vertex dimension {}", target.dim(), c.ncols()));
    }
    let parts = exact_moments_of(c)?.sq_distances(target);
    Ok(w.m1 * parts[0] + w.m2 * parts[1] + w.m3 * parts[2])
}

#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    /// Unweighted squared residual of each moment.
    pub parts: [f64; 3],
    pub grad_c: DMatrix<f64>,
    pub grad_p: DVector<f64>,
}

/// Weighted relaxed loss `Σ_k w_k ||μ_k(C, p) − m_k||²` and its gradients.
pub fn relaxed_loss_grads(
    c: &DMatrix<f64>,
    p: &DVector<f64>,
    target: &MomentTriple,
    w: MomentWeights,
) -> Result<LossGrad> {
    check_cp(c, p)?;
    let d = c.ncols();
    if target.dim() != d {
        return shape_err(format!("target dimension {} differs from vertex dimension {d}", target.dim()));
    }
    let mu = relaxed_moments(c, p)?;
    let parts = mu.sq_distances(target);
    let loss = w.m1 * parts[0] + w.m2 * parts[1] + w.m3 * parts[2];

    // Residual derivatives, symmetrized so the contractions below are exact.
    let r1 = (&mu.m1 - &target.m1) * (2.0 * w.m1);
    let g2 = (&mu.m2 - &target.m2) * (2.0 * w.m2);
    let r2 = (&g2 + g2.transpose()) * 0.5;
    let mut r3 = mu.m3.sub(&target.m3);
    r3.scale(2.0 * w.m3);
    let r3 = r3.sym3();

    let mut grad_c = DMatrix::zeros(c.nrows(), d);
    let mut grad_p = DVector::zeros(p.len());
    for (i, &pi) in p.iter().enumerate() {
        let a = c.row(i).transpose();
        let b = c.row(i + 1).transpose();
        let s = &a + &b;
        let mut ga = DVector::zeros(d);
        let mut gb = DVector::zeros(d);
        let mut gp = 0.0;
        if w.m1 != 0.0 {
            ga += &r1 * (0.5 * pi);
            gb += &r1 * (0.5 * pi);
            gp += 0.5 * r1.dot(&s);
        }
        if w.m2 != 0.0 {
            let rs = &r2 * &s;
            let ra = &r2 * &a;
            let rb = &r2 * &b;
            ga += (&rs + &ra) * (pi / 3.0);
            gb += (&rs + &rb) * (pi / 3.0);
            gp += (s.dot(&rs) + a.dot(&ra) + b.dot(&rb)) / 6.0;
        }
        if w.m3 != 0.0 {
            let rs = r3.apply_pair(s.as_slice());
            let ra = r3.apply_pair(a.as_slice());
            let rb = r3.apply_pair(b.as_slice());
            ga += (&rs * 3.0 + &ra * 6.0) * (pi / 12.0);
            gb += (&rs * 3.0 + &rb * 6.0) * (pi / 12.0);
            gp += (s.dot(&rs) + 2.0 * a.dot(&ra) + 2.0 * b.dot(&rb)) / 12.0;
        }
        let mut row = grad_c.row_mut(i);
        row += ga.transpose();
        let mut row = grad_c.row_mut(i + 1);
        row += gb.transpose();
        grad_p[i] = gp;
    }
    Ok(LossGrad {
        loss,
        parts,
        grad_c,
        grad_p,
    })
}

/// Weighted loss of the true moments `m_k(C)` and its vertex gradient,
/// obtained by pushing the weight gradient through `p(C)`.
pub fn true_loss_grad(c: &DMatrix<f64>, target: &MomentTriple, w: MomentWeights) -> Result<LossGrad> {
    let lens = segment_lengths(c);
    if lens.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Degenerate("zero-length segment".into()));
    }
    let z: f64 = lens.iter().sum();
    let p = DVector::from_iterator(lens.len(), lens.iter().map(|l| l / z));
    let mut lg = relaxed_loss_grads(c, &p, target, w)?;
    let mean_gp = lg.grad_p.dot(&p);
    for (j, &len) in lens.iter().enumerate() {
        let g_len = (lg.grad_p[j] - mean_gp) / z;
        let u = (c.row(j + 1) - c.row(j)) / len;
        let mut hi = lg.grad_c.row_mut(j + 1);
        hi += &u * g_len;
        let mut lo = lg.grad_c.row_mut(j);
        lo -= &u * g_len;
    }
    lg.grad_p = p;
    Ok(lg)
}
