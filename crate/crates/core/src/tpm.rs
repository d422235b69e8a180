//! Tensor power method with whitening and deflation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::estimate::sorted_eigen;
use crate::rng;
use crate::tensor::Tensor3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpmConfig {
    pub max_iters: usize,
    /// Stop when `||x_{k+1} − x_k||` falls below this.
    pub tol: f64,
    pub n_restarts: usize,
    /// Eigenvalues below `eig_floor · λ_max` are not trusted for whitening.
    pub eig_floor: f64,
    /// Clip untrusted eigenvalues up to the floor instead of failing.
    pub clip: bool,
}

impl Default for TpmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-10,
            n_restarts: 10,
            eig_floor: 1e-10,
            clip: true,
        }
    }
}

impl TpmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.n_restarts == 0 {
            return Err(Error::Config("max_iters and n_restarts must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        if !(self.eig_floor > 0.0 && self.eig_floor.is_finite()) {
            return Err(Error::Config(format!("eig_floor must be positive, got {}", self.eig_floor)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Whitening {
    /// `T(W, W, W)`, `r × r × r`.
    pub tensor: Tensor3,
    /// `W = U D^{−1/2}`, `d × r`.
    pub w: DMatrix<f64>,
    /// `U D^{1/2}`, the pseudo-inverse of `Wᵀ`.
    pub dewhiten: DMatrix<f64>,
    /// Eigenvalues used in `D`, after clipping.
    pub eigenvalues: Vec<f64>,
    /// Full descending spectrum of the symmetrized second-order input.
    pub spectrum: Vec<f64>,
    /// Number of eigenvalues raised to the floor.
    pub n_clipped: usize,
}

pub fn whiten(t3: &Tensor3, t2: &DMatrix<f64>, r: usize, cfg: &TpmConfig) -> Result<Whitening> {
    let d = t3.dim();
    if t2.shape() != (d, d) {
        return shape_err(format!("second-order input {:?} does not match tensor dimension {d}", t2.shape()));
    }
    if r == 0 || r > d {
        return Err(Error::Config(format!("whitening rank {r} must lie in 1..={d}")));
    }
    let (spectrum, vecs) = sorted_eigen(t2);
    let lmax = spectrum[0];
    let floor = cfg.eig_floor * lmax;
    let usable = spectrum[..r].iter().filter(|&&l| l > floor).count();
    if !(lmax > cfg.eig_floor) || (usable < r && !cfg.clip) {
        return Err(Error::RankDeficient {
            needed: r,
            spectrum,
        });
    }
    let eigenvalues: Vec<f64> = spectrum[..r].iter().map(|&l| l.max(floor)).collect();
    let u = vecs.columns(0, r).into_owned();
    let w = DMatrix::from_fn(d, r, |i, j| u[(i, j)] / eigenvalues[j].sqrt());
    let dewhiten = DMatrix::from_fn(d, r, |i, j| u[(i, j)] * eigenvalues[j].sqrt());
    Ok(Whitening {
        tensor: t3.contract(&w, &w, &w)?,
        w,
        dewhiten,
        eigenvalues,
        spectrum,
        n_clipped: r - usable,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerResult {
    pub lambda: f64,
    pub u: DVector<f64>,
    pub iters: usize,
    /// Last iterate movement.
    pub movement: f64,
    pub converged: bool,
    pub restart: usize,
}

fn single_run(t: &Tensor3, x0: DVector<f64>, cfg: &TpmConfig, restart: usize) -> Option<PowerResult> {
    let mut x = x0;
    let mut movement = f64::INFINITY;
    let mut iters = 0;
    while iters < cfg.max_iters {
        iters += 1;
        let y = t.apply_pair(x.as_slice());
        let n = y.norm();
        if !(n > 1e-300) || !n.is_finite() {
            return None;
        }
        let y = y / n;
        movement = (&y - &x).norm();
        x = y;
        if movement < cfg.tol {
            break;
        }
    }
    Some(PowerResult {
        lambda: t.eval_cubic(x.as_slice()),
        u: x,
        iters,
        movement,
        converged: movement < cfg.tol,
        restart,
    })
}

fn all_restarts(t: &Tensor3, seed: u64, cfg: &TpmConfig) -> Vec<PowerResult> {
    (0..cfg.n_restarts)
        .filter_map(|k| {
            let mut r = rng::stream(rng::derive(seed, k as u64));
            single_run(t, rng::unit_vector(&mut r, t.dim()), cfg, k)
        })
        .collect()
}

/// Largest-`λ̃` restart; ties go to the lower restart index.
fn pick<'a>(runs: impl Iterator<Item = &'a PowerResult>) -> Option<&'a PowerResult> {
    runs.fold(None, |best: Option<&PowerResult>, r| match best {
        Some(b) if b.lambda >= r.lambda => Some(b),
        _ => Some(r),
    })
}

/// Best converged fixed point with positive `λ̃` over the restarts.
pub fn power_iterate(t3w: &Tensor3, seed: u64, cfg: &TpmConfig) -> Result<PowerResult> {
    cfg.validate()?;
    let runs = all_restarts(t3w, seed, cfg);
    match pick(runs.iter().filter(|r| r.converged && r.lambda > 0.0 && r.lambda.is_finite())) {
        Some(best) => Ok(best.clone()),
        None => Err(Error::NoConvergence {
            restarts: cfg.n_restarts,
            best_movement: runs.iter().map(|r| r.movement).fold(f64::INFINITY, f64::min),
        }),
    }
}

/// Like [`power_iterate`] but never fails on a non-zero tensor: when no
/// restart converges the largest-`λ̃` final iterate is returned with
/// `converged = false`.
pub fn power_iterate_lenient(t3w: &Tensor3, seed: u64, cfg: &TpmConfig) -> Result<PowerResult> {
    cfg.validate()?;
    let runs = all_restarts(t3w, seed, cfg);
    let converged = pick(runs.iter().filter(|r| r.converged && r.lambda > 0.0));
    match converged.or_else(|| pick(runs.iter().filter(|r| r.lambda.is_finite()))) {
        Some(best) => Ok(best.clone()),
        None => Err(Error::NoConvergence {
            restarts: cfg.n_restarts,
            best_movement: f64::INFINITY,
        }),
    }
}

/// `t − λ̃ ũ⊗³`.
pub fn deflate(t3w: &Tensor3, lambda: f64, u: &DVector<f64>) -> Tensor3 {
    let mut out = t3w.clone();
    out.add_cube(-lambda, u.as_slice());
    out
}

#[derive(Clone, Debug)]
pub struct TpmOutput {
    /// Unit-norm de-whitened factors in extraction order.
    pub factors: Vec<DVector<f64>>,
    /// `||λ̃ (Wᵀ)† ũ||` before normalization.
    pub magnitudes: Vec<f64>,
    pub whitened_eigenvalues: Vec<f64>,
    pub whitened_factors: Vec<DVector<f64>>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// Frobenius norm of the whitened tensor after each deflation.
    pub residual_norms: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub n_clipped: usize,
}

/// Extracts `r` factors from a tensor whitened at rank `r`.
pub fn tpm(t3: &Tensor3, t2: &DMatrix<f64>, r: usize, cfg: &TpmConfig, seed: u64) -> Result<TpmOutput> {
    run(t3, t2, r, r, cfg, seed, true)
}

/// Extracts `n_factors` factors, possibly more than the whitening rank.
///
/// A curve's second moment has rank `M` while its third moment needs
/// `M + 1` factors, so curve recovery whitens at rank `M` and keeps
/// deflating past it. Power iteration is lenient here: a factor whose
/// restarts all fail to converge is still reported, flagged in `converged`.
pub fn tpm_with_rank(
    t3: &Tensor3,
    t2: &DMatrix<f64>,
    whitening_rank: usize,
    n_factors: usize,
    cfg: &TpmConfig,
    seed: u64,
) -> Result<TpmOutput> {
    run(t3, t2, whitening_rank, n_factors, cfg, seed, false)
}

fn run(
    t3: &Tensor3,
    t2: &DMatrix<f64>,
    rank: usize,
    n_factors: usize,
    cfg: &TpmConfig,
    seed: u64,
    strict: bool,
) -> Result<TpmOutput> {
    cfg.validate()?;
    let wh = whiten(t3, t2, rank, cfg)?;
    let mut t = wh.tensor.clone();
    let mut out = TpmOutput {
        factors: Vec::with_capacity(n_factors),
        magnitudes: Vec::new(),
        whitened_eigenvalues: Vec::new(),
        whitened_factors: Vec::new(),
        iterations: Vec::new(),
        converged: Vec::new(),
        residual_norms: Vec::new(),
        spectrum: wh.spectrum.clone(),
        n_clipped: wh.n_clipped,
    };
    for f in 0..n_factors {
        let s = rng::derive(seed, f as u64);
        let pr = if strict {
            power_iterate(&t, s, cfg)?
        } else {
            power_iterate_lenient(&t, s, cfg)?
        };
        let u = &wh.dewhiten * &pr.u * pr.lambda;
        let mag = u.norm();
        if !(mag > 0.0) || !mag.is_finite() {
            return Err(Error::Degenerate(format!("factor {f} de-whitens to a zero vector")));
        }
        t = deflate(&t, pr.lambda, &pr.u);
        out.factors.push(u / mag);
        out.magnitudes.push(mag);
        out.whitened_eigenvalues.push(pr.lambda);
        out.whitened_factors.push(pr.u);
        out.iterations.push(pr.iters);
        out.converged.push(pr.converged);
        out.residual_norms.push(t.frob_norm());
    }
    Ok(out)
}
