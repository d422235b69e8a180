//! Numerical checks of the well-posedness theory.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{alpha, exact_moments, relaxed_moments, star_contract_mixed, third_moment_loss_grads};
use crate::pwl::PwlCurve;
use crate::rng;
use crate::tensor::Tensor3;

/// `g(δ) = Sym(3 (δ⊗C⊗C) ⋆ α(p))`, the derivative of `μ₃(·, p)` at `C` in direction `δ`.
pub fn g_operator(c: &DMatrix<f64>, p: &DVector<f64>, delta: &DMatrix<f64>) -> Result<Tensor3> {
    let t = star_contract_mixed(delta, c, c, &alpha(p))?;
    Ok(t.scaled(3.0).sym3())
}

/// Inner products of the gradient conditions at one perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionValues {
    /// `⟨∇_C L(C, p), C* − C⟩`.
    pub strong_c: f64,
    /// `⟨∇_p L(C, p), p* − p⟩`.
    pub strong_p: f64,
    /// `⟨∇_C L(C, p*), C* − C⟩`.
    pub weak_c: f64,
    /// `⟨∇_p L(C*, p), p* − p⟩`.
    pub weak_p: f64,
}

impl ConditionValues {
    pub fn joint(&self) -> f64 {
        self.strong_c + self.strong_p
    }
}

/// Evaluates all four inner products at `(C* + δ, p* + ζ)` against `m₃(C*)`.
pub fn condition_values(c_star: &PwlCurve, delta: &DMatrix<f64>, zeta: &DVector<f64>) -> Result<ConditionValues> {
    let cs = c_star.vertices();
    let ps = c_star.proportional_segment_lengths().into_vector();
    if delta.shape() != cs.shape() || zeta.len() != ps.len() {
        return Err(Error::Shape("perturbation shapes do not match the curve".into()));
    }
    let target = relaxed_moments(cs, &ps)?.m3;
    let c = cs + delta;
    let p = &ps + zeta;
    let (gc, gp) = third_moment_loss_grads(&c, &p, &target)?;
    let (gc_weak, _) = third_moment_loss_grads(&c, &ps, &target)?;
    let (_, gp_weak) = third_moment_loss_grads(cs, &p, &target)?;
    Ok(ConditionValues {
        strong_c: -gc.dot(delta),
        strong_p: -gp.dot(zeta),
        weak_c: -gc_weak.dot(delta),
        weak_p: -gp_weak.dot(zeta),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientConditionReport {
    pub n_trials: usize,
    pub strong_c_violations: usize,
    pub strong_p_violations: usize,
    pub weak_c_violations: usize,
    pub weak_p_violations: usize,
    /// Violations of the summed condition `⟨∇_C L, C*−C⟩ + ⟨∇_p L, p*−p⟩ < 0`.
    pub joint_violations: usize,
    /// Largest observed value of each inner product (all should be negative).
    pub max_strong_c: f64,
    pub max_strong_p: f64,
    pub max_weak_c: f64,
    pub max_weak_p: f64,
    pub max_joint: f64,
}

impl GradientConditionReport {
    pub fn strong_violations(&self) -> usize {
        self.strong_c_violations + self.strong_p_violations
    }

    pub fn weak_violations(&self) -> usize {
        self.weak_c_violations + self.weak_p_violations
    }

    pub fn merge(&mut self, o: &GradientConditionReport) {
        self.n_trials += o.n_trials;
        self.strong_c_violations += o.strong_c_violations;
        self.strong_p_violations += o.strong_p_violations;
        self.weak_c_violations += o.weak_c_violations;
        self.weak_p_violations += o.weak_p_violations;
        self.joint_violations += o.joint_violations;
        self.max_strong_c = self.max_strong_c.max(o.max_strong_c);
        self.max_strong_p = self.max_strong_p.max(o.max_strong_p);
        self.max_weak_c = self.max_weak_c.max(o.max_weak_c);
        self.max_weak_p = self.max_weak_p.max(o.max_weak_p);
        self.max_joint = self.max_joint.max(o.max_joint);
    }
}

const MAX_RESAMPLES: usize = 1000;

/// Zero-sum weight perturbation with `||ζ||₁ = scale` keeping `p + ζ > 0`.
pub fn weight_perturbation<R: Rng + ?Sized>(p: &DVector<f64>, scale: f64, r: &mut R) -> Result<DVector<f64>> {
    for _ in 0..MAX_RESAMPLES {
        let mut z = rng::normal_vector(r, p.len());
        z.add_scalar_mut(-z.mean());
        let l1 = z.lp_norm(1);
        if !(l1 > 0.0) {
            continue;
        }
        z *= scale / l1;
        if (p + &z).iter().all(|&x| x > 0.0) {
            return Ok(z);
        }
    }
    Err(Error::Degenerate(format!("no admissible weight perturbation of size {scale}")))
}

/// Samples `n_trials` perturbations `(δ, ζ)` with `||δ||_F = delta_scale`
/// and zero-sum `ζ`, `||ζ||₁ = p_scale`, and counts sign violations.
pub fn gradient_condition_check(
    c_star: &PwlCurve,
    delta_scale: f64,
    p_scale: f64,
    n_trials: usize,
    seed: u64,
) -> Result<GradientConditionReport> {
    if !(delta_scale > 0.0 && p_scale > 0.0) {
        return Err(Error::Config("perturbation scales must be positive".into()));
    }
    if c_star.segments() < 2 {
        return Err(Error::Config("weight perturbations need at least two segments".into()));
    }
    let ps = c_star.proportional_segment_lengths().into_vector();
    let mut rep = GradientConditionReport {
        max_strong_c: f64::NEG_INFINITY,
        max_strong_p: f64::NEG_INFINITY,
        max_weak_c: f64::NEG_INFINITY,
        max_weak_p: f64::NEG_INFINITY,
        max_joint: f64::NEG_INFINITY,
        ..Default::default()
    };
    for t in 0..n_trials {
        let mut r = rng::stream(rng::derive(seed, t as u64));
        let delta = rng::perturb(&DMatrix::zeros(c_star.segments() + 1, c_star.dim()), delta_scale, &mut r);
        let zeta = weight_perturbation(&ps, p_scale, &mut r)?;
        let v = condition_values(c_star, &delta, &zeta)?;
        rep.n_trials += 1;
        rep.strong_c_violations += usize::from(v.strong_c >= 0.0);
        rep.strong_p_violations += usize::from(v.strong_p >= 0.0);
        rep.weak_c_violations += usize::from(v.weak_c >= 0.0);
        rep.weak_p_violations += usize::from(v.weak_p >= 0.0);
        rep.joint_violations += usize::from(v.joint() >= 0.0);
        rep.max_strong_c = rep.max_strong_c.max(v.strong_c);
        rep.max_strong_p = rep.max_strong_p.max(v.strong_p);
        rep.max_weak_c = rep.max_weak_c.max(v.weak_c);
        rep.max_weak_p = rep.max_weak_p.max(v.weak_p);
        rep.max_joint = rep.max_joint.max(v.joint());
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborConfig {
    pub max_iters: usize,
    pub retries: usize,
    /// Weight of the sphere constraint `||C* − Γ||² − ε²`.
    pub sphere_weight: f64,
    /// Central-difference step for the Jacobian.
    pub fd_step: f64,
    /// Stop once every weighted residual is below this.
    pub tol: f64,
}

impl Default for NeighborConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            retries: 10,
            sphere_weight: 10.0,
            fd_step: 1e-6,
            tol: 1e-13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborResult {
    pub gamma: PwlCurve,
    pub p: Vec<f64>,
    pub z: f64,
    /// Largest absolute first-moment residual.
    pub m1_residual: f64,
    pub m2_residual: f64,
    /// Largest `|Z² p_i² − ||γ_i − γ_{i−1}||²|`.
    pub length_residual: f64,
    pub sum_residual: f64,
    /// `||C* − Γ||_F`.
    pub distance: f64,
    /// `||m₃(C*) − m₃(Γ)||_F`.
    pub m3_gap: f64,
    pub iterations: usize,
    pub attempts: usize,
}

/// Unknowns `(C, p, Z)` packed as row-major `C`, then `p`, then `Z`.
struct System<'a> {
    m: usize,
    d: usize,
    m1: &'a DVector<f64>,
    m2: &'a DMatrix<f64>,
}

impl System<'_> {
    fn n_vars(&self) -> usize {
        (self.m + 1) * self.d + self.m + 1
    }

    fn unpack(&self, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, f64) {
        let nc = (self.m + 1) * self.d;
        let c = DMatrix::from_row_slice(self.m + 1, self.d, &x.as_slice()[..nc]);
        let p = DVector::from_column_slice(&x.as_slice()[nc..nc + self.m]);
        (c, p, x[nc + self.m])
    }

    fn pack(&self, c: &DMatrix<f64>, p: &DVector<f64>, z: f64) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.n_vars());
        for i in 0..c.nrows() {
            v.extend(c.row(i).iter());
        }
        v.extend(p.iter());
        v.push(z);
        DVector::from_vec(v)
    }

    /// First moment, upper triangle of the second, squared-length
    /// consistency, and the weight sum, in that order.
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let (c, p, z) = self.unpack(x);
        let mu = relaxed_moments(&c, &p).expect("shapes fixed by construction");
        let mut r = Vec::new();
        r.extend((mu.m1 - self.m1).iter());
        for i in 0..self.d {
            for j in i..self.d {
                r.push(mu.m2[(i, j)] - self.m2[(i, j)]);
            }
        }
        for i in 0..self.m {
            r.push(z * z * p[i] * p[i] - (c.row(i + 1) - c.row(i)).norm_squared());
        }
        r.push(p.sum() - 1.0);
        DVector::from_vec(r)
    }

    fn jacobian(&self, x: &DVector<f64>, h: f64, f: &impl Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let rows = f(x).len();
        let mut j = DMatrix::zeros(rows, n);
        for k in 0..n {
            let mut a = x.clone();
            let mut b = x.clone();
            a[k] += h;
            b[k] -= h;
            j.set_column(k, &((f(&a) - f(&b)) / (2.0 * h)));
        }
        j
    }
}

fn system_at<'a>(c_star: &PwlCurve, m1: &'a DVector<f64>, m2: &'a DMatrix<f64>) -> System<'a> {
    System {
        m: c_star.segments(),
        d: c_star.dim(),
        m1,
        m2,
    }
}

fn numerical_rank(j: &DMatrix<f64>, threshold: f64) -> usize {
    let sv = j.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > threshold * smax.max(1.0)).count()
}

/// Numerical nullity of the Jacobian of the first-two-moment system at
/// `(C*, p*, Z*)`: the column count minus the number of singular values
/// above `threshold`.
pub fn m1m2_jacobian_nullity(c_star: &PwlCurve, threshold: f64) -> Result<usize> {
    let mom = exact_moments(c_star);
    let sys = system_at(c_star, &mom.m1, &mom.m2);
    let x = sys.pack(
        c_star.vertices(),
        c_star.proportional_segment_lengths().as_vector(),
        c_star.total_length(),
    );
    let j = sys.jacobian(&x, 1e-6, &|v| sys.residuals(v));
    Ok(j.ncols() - numerical_rank(&j, threshold))
}

/// Finds `Γ` with `||C* − Γ||_F = ε` sharing the first two moments of `C*`.
///
/// Gauss-Newton with minimum-norm steps on the polynomial system plus a
/// weighted sphere residual, started from a random direction in the null
/// space of the system's Jacobian at the truth.
pub fn find_m1m2_neighbor(c_star: &PwlCurve, epsilon: f64, cfg: &NeighborConfig, seed: u64) -> Result<NeighborResult> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain {
            name: "epsilon",
            value: epsilon,
            domain: "(0, inf)",
        });
    }
    let mom = exact_moments(c_star);
    let sys = system_at(c_star, &mom.m1, &mom.m2);
    let nc = (sys.m + 1) * sys.d;
    let cs = c_star.vertices().clone();
    let x_star = sys.pack(&cs, c_star.proportional_segment_lengths().as_vector(), c_star.total_length());
    let full = |x: &DVector<f64>| {
        let mut r = sys.residuals(x).as_slice().to_vec();
        let (c, _, _) = sys.unpack(x);
        r.push(cfg.sphere_weight * ((&c - &cs).norm_squared() - epsilon * epsilon));
        DVector::from_vec(r)
    };
    let j0 = sys.jacobian(&x_star, cfg.fd_step, &|v| sys.residuals(v));
    let svd = j0.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let rank = numerical_rank(&j0, 1e-8);
    // Rows of Vᵀ past the rank (and any missing rows of a wide matrix) span the null space.
    let null_basis: Vec<DVector<f64>> = {
        let mut basis: Vec<DVector<f64>> = (rank..vt.nrows()).map(|i| vt.row(i).transpose()).collect();
        if vt.nrows() < sys.n_vars() {
            let full_svd = (j0.transpose() * &j0).symmetric_eigen();
            let mut order: Vec<usize> = (0..sys.n_vars()).collect();
            order.sort_by(|&a, &b| full_svd.eigenvalues[a].total_cmp(&full_svd.eigenvalues[b]));
            basis = order[..sys.n_vars() - rank]
                .iter()
                .map(|&i| full_svd.eigenvectors.column(i).into_owned())
                .collect();
        }
        basis
    };
    let mut last_err = f64::INFINITY;
    for attempt in 0..cfg.retries.max(1) {
        let mut r = rng::stream(rng::derive(seed, attempt as u64));
        let mut dir = DVector::zeros(sys.n_vars());
        for b in &null_basis {
            dir += b * rng::normal_vector(&mut r, 1)[0];
        }
        let dc = dir.rows(0, nc).norm();
        if !(dc > 0.0) {
            continue;
        }
        let mut x = &x_star + dir * (epsilon / dc);
        let mut iters = 0;
        let mut res = full(&x);
        while iters < cfg.max_iters && res.amax() > cfg.tol {
            let j = sys.jacobian(&x, cfg.fd_step, &full);
            let step = j.svd(true, true).solve(&res, 1e-12).map_err(|e| Error::Degenerate(e.to_string()))?;
            x -= step;
            res = full(&x);
            iters += 1;
            if !res.amax().is_finite() {
                break;
            }
        }
        last_err = res.amax();
        let (c, p, z) = sys.unpack(&x);
        let Ok(gamma) = PwlCurve::new(c.clone()) else {
            continue;
        };
        let base = sys.residuals(&x);
        let nm2 = sys.d * (sys.d + 1) / 2;
        let m1_residual = base.rows(0, sys.d).amax();
        let m2_residual = base.rows(sys.d, nm2).amax();
        let length_residual = base.rows(sys.d + nm2, sys.m).amax();
        let sum_residual = base[base.len() - 1].abs();
        let distance = (&c - &cs).norm();
        let ok = m1_residual < 1e-8
            && m2_residual < 1e-8
            && length_residual < 1e-8
            && sum_residual < 1e-10
            && (distance - epsilon).abs() < 1e-6
            && p.iter().all(|&x| x > 0.0)
            && z > 0.0;
        if ok {
            let m3_gap = exact_moments(&gamma).m3.sub(&mom.m3).frob_norm();
            return Ok(NeighborResult {
                gamma,
                p: p.iter().copied().collect(),
                z,
                m1_residual,
                m2_residual,
                length_residual,
                sum_residual,
                distance,
                m3_gap,
                iterations: iters,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::NoConvergence {
        restarts: cfg.retries,
        best_movement: last_err,
    })
}

/// The witness curve with vertices `c_i = e_{i+1}/√2` for `i < M` and
/// `c_M = (1/√2 + 1) e_M`; every segment has length one.
pub fn witness_curve(m: usize) -> Result<PwlCurve> {
    if m < 1 {
        return Err(Error::Config("witness needs M >= 1".into()));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = DMatrix::zeros(m + 1, m);
    for i in 0..m {
        v[(i, i)] = h;
    }
    v[(m, m - 1)] = h + 1.0;
    PwlCurve::new(v)
}

/// Matrix whose columns are the flattened `Sym(g̃(E^{m,j}))` for every unit
/// vertex perturbation `E^{m,j}`, with `α` evaluated at the raw segment
/// lengths of the witness (all one).
pub fn witness_matrix(m: usize) -> Result<DMatrix<f64>> {
    let c = witness_curve(m)?;
    let d = c.dim();
    let lengths = DVector::from_vec(c.segment_lengths());
    let a = alpha(&lengths);
    let cols = (m + 1) * d;
    let mut out = DMatrix::zeros(d * d * d, cols);
    for row in 0..=m {
        for j in 0..d {
            let mut e = DMatrix::zeros(m + 1, d);
            e[(row, j)] = 1.0;
            let t = star_contract_mixed(&e, c.vertices(), c.vertices(), &a)?.scaled(3.0).sym3();
            out.set_column(row * d + j, &DVector::from_column_slice(t.as_slice()));
        }
    }
    Ok(out)
}

pub fn witness_matrix_sigma_min(m: usize) -> Result<f64> {
    if m < 4 {
        return Err(Error::Config(format!("witness check needs M >= 4, got {m}")));
    }
    let sv = witness_matrix(m)?.singular_values();
    Ok(sv.iter().copied().fold(f64::INFINITY, f64::min))
}

/// `||x⊗ᵏ − y⊗ᵏ||_F²` from `||x||^{2k} + ||y||^{2k} − 2⟨x,y⟩ᵏ`.
pub fn tensor_power_gap(x: &DVector<f64>, y: &DVector<f64>, k: u32) -> f64 {
    let k = k as i32;
    (x.norm_squared().powi(k) + y.norm_squared().powi(k) - 2.0 * x.dot(y).powi(k)).max(0.0)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerBoundReport {
    pub n_trials: usize,
    pub violations: usize,
    /// Largest `gap / (12 · 2ᵏ ||x − y||²)` seen.
    pub max_ratio: f64,
}

fn ball_point<R: Rng + ?Sized>(r: &mut R, d: usize, radius: f64) -> DVector<f64> {
    let u: f64 = r.random();
    rng::unit_vector(r, d) * (radius * u.powf(1.0 / d as f64))
}

/// Samples `x, y` in the unit ball with `||x − y|| ≤ 1/3` and checks
/// `||x⊗ᵏ − y⊗ᵏ||_F² ≤ 12 · 2ᵏ ||x − y||²` for `k = 1..=k_max`.
pub fn tensor_power_bound_check(n_trials: usize, k_max: u32, d: usize, seed: u64) -> Result<PowerBoundReport> {
    if d == 0 || k_max == 0 {
        return Err(Error::Config("dimension and k_max must be positive".into()));
    }
    let mut r = rng::stream(seed);
    let mut rep = PowerBoundReport::default();
    while rep.n_trials < n_trials {
        let x = ball_point(&mut r, d, 1.0);
        let y = &x + ball_point(&mut r, d, 1.0 / 3.0);
        if y.norm() > 1.0 {
            continue;
        }
        rep.n_trials += 1;
        let dist2 = (&x - &y).norm_squared();
        for k in 1..=k_max {
            let bound = 12.0 * 2f64.powi(k as i32) * dist2;
            let gap = tensor_power_gap(&x, &y, k);
            if gap > bound {
                rep.violations += 1;
            }
            if bound > 0.0 {
                rep.max_ratio = rep.max_ratio.max(gap / bound);
            }
        }
    }
    Ok(rep)
}
