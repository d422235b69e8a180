//! Two-phase curve recovery and the random-initialization baselines.
//!
//! Phase one turns the third moment into unit vertex directions with the
//! tensor power method, sorts them into a chain, and fits one scale per
//! direction against the first three moments. Phase two alternates
//! gradient steps on the vertices and the relaxed weights of the
//! third-moment loss, inside the top-`M` eigenspace of the second moment.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{project_moments, subspace_basis_with_spectrum, SubspaceBasis};
use crate::moments::{
    exact_moments, relaxed_loss, relaxed_loss_grads, true_loss, true_loss_grad, MomentTriple, MomentWeights,
};
use crate::optim::{descend, project_simplex, OptimConfig};
use crate::ordering::{best_ordering, OrderingResult, Similarity};
use crate::pwl::{proportional_lengths, PwlCurve};
use crate::rng;
use crate::tpm::{tpm_with_rank, TpmConfig};

const FIT_RESTARTS: usize = 5;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoverConfig {
    pub tpm: TpmConfig,
    pub optim: OptimConfig,
    pub similarity: Similarity,
}

/// Squared Frobenius residual of each moment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentLosses {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl MomentLosses {
    pub fn of(curve: &PwlCurve, target: &MomentTriple) -> Self {
        let [m1, m2, m3] = exact_moments(curve).sq_distances(target);
        Self { m1, m2, m3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Iterations {
    pub fit_scales: usize,
    pub finetune_blocks: usize,
    pub finetune_steps: usize,
    pub baseline: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub curve_hat: PwlCurve,
    /// Final relaxed weights. Simplex projection can zero entries, so these
    /// are plain values rather than validated segment weights.
    pub p_hat: Vec<f64>,
    /// Phase-one curve, or the winning initialization for a baseline.
    pub phase1_curve: PwlCurve,
    pub phase1_losses: MomentLosses,
    pub phase2_losses: MomentLosses,
    /// Relaxed projected third-moment loss at the end of phase two, or the
    /// optimized objective for a baseline.
    pub final_objective: f64,
    pub ordering_success: bool,
    pub ordering: Option<OrderingResult>,
    pub tpm_converged: Vec<bool>,
    /// Descending spectrum of the second moment.
    pub spectrum: Vec<f64>,
    pub iterations: Iterations,
    /// Objective after each alternation block.
    pub loss_trace: Vec<f64>,
}

impl RecoveryResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn unflatten(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

fn scaled_rows(units: &DMatrix<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(units.nrows(), units.ncols(), |i, j| lambda[i] * units[(i, j)])
}

#[derive(Clone, Debug)]
pub struct ScaleFit {
    pub lambda: DVector<f64>,
    pub loss: f64,
    pub iters: usize,
    pub restarts: usize,
}

/// Fits `λ` so that `diag(λ) U` matches the first three moments of `mom`.
///
/// The gradient is exact: the vertex gradient of the true-moment loss,
/// which already accounts for the weights moving with the segment lengths,
/// contracted row-wise with `U`.
pub fn fit_scales(units: &DMatrix<f64>, mom: &MomentTriple, cfg: &OptimConfig, seed: u64) -> Result<ScaleFit> {
    cfg.validate()?;
    if units.ncols() != mom.dim() || units.nrows() < 2 {
        return Err(Error::Shape(format!(
            "unit matrix {:?} does not fit moments of dimension {}",
            units.shape(),
            mom.dim()
        )));
    }
    let w = MomentWeights::ALL_THREE;
    let fg = |l: &DVector<f64>| {
        let lg = true_loss_grad(&scaled_rows(units, l), mom, w)?;
        let g = DVector::from_fn(l.len(), |i, _| lg.grad_c.row(i).dot(&units.row(i)));
        Ok((lg.loss, g))
    };
    let f = |l: &DVector<f64>| true_loss(&scaled_rows(units, l), mom, w).unwrap_or(f64::INFINITY);
    let n = units.nrows();
    let mut r = rng::stream(seed);
    let mut init = DVector::from_element(n, 1.0);
    for attempt in 0..=FIT_RESTARTS {
        if f(&init).is_finite() {
            let d = descend(init, fg, f, None, cfg.lambda_step, cfg.fit_iters, cfg)?;
            return Ok(ScaleFit {
                lambda: d.x,
                loss: d.f,
                iters: d.accepted,
                restarts: attempt,
            });
        }
        init = DVector::from_fn(n, |_, _| 1.0 + 0.1 * rng::normal_vector(&mut r, 1)[0]);
    }
    Err(Error::Degenerate(format!(
        "scaled directions keep coinciding after {FIT_RESTARTS} restarts"
    )))
}

#[derive(Clone, Debug)]
pub struct InitialEstimate {
    pub curve: PwlCurve,
    pub lambda: DVector<f64>,
    pub ordering: OrderingResult,
    /// Unsorted unit factors from the power method.
    pub factors: Vec<DVector<f64>>,
    pub tpm_converged: Vec<bool>,
    pub spectrum: Vec<f64>,
    pub fit: ScaleFit,
}

fn check_m(mom: &MomentTriple, m: usize) -> Result<()> {
    if m == 0 || m > mom.dim() {
        return Err(Error::Config(format!("segment count {m} must lie in 1..={}", mom.dim())));
    }
    Ok(())
}

/// Phase one: power method, chain sorting, scale fit.
pub fn initial_estimate(mom: &MomentTriple, m: usize, cfg: &RecoverConfig, seed: u64) -> Result<InitialEstimate> {
    check_m(mom, m)?;
    let t = tpm_with_rank(&mom.m3, &mom.m2, m, m + 1, &cfg.tpm, rng::derive(seed, 0))?;
    let ordering = best_ordering(&t.factors, cfg.similarity)?;
    let d = mom.dim();
    let perm = ordering.permutation.as_slice();
    let units = DMatrix::from_fn(m + 1, d, |i, j| t.factors[perm[i]][j]);
    let fit = fit_scales(&units, mom, &cfg.optim, rng::derive(seed, 1))?;
    let curve = PwlCurve::new(scaled_rows(&units, &fit.lambda))
        .map_err(|e| Error::Degenerate(format!("fitted initial curve is invalid: {e}")))?;
    Ok(InitialEstimate {
        curve,
        lambda: fit.lambda.clone(),
        ordering,
        factors: t.factors,
        tpm_converged: t.converged,
        spectrum: t.spectrum,
        fit,
    })
}

#[derive(Clone, Debug)]
pub struct Finetuned {
    pub curve: PwlCurve,
    pub p: DVector<f64>,
    /// Projected relaxed third-moment loss.
    pub loss: f64,
    pub blocks: usize,
    pub steps: usize,
    /// Loss after every accepted step, vertex and weight steps interleaved.
    pub step_trace: Vec<f64>,
    pub block_trace: Vec<f64>,
    pub basis: SubspaceBasis,
    pub spectrum: Vec<f64>,
}

/// Phase two: alternating descent on the relaxed third-moment loss in the
/// top-`M` eigenspace of `mom.m2`, then deprojection.
pub fn finetune(c_init: &PwlCurve, mom: &MomentTriple, m: usize, cfg: &OptimConfig) -> Result<Finetuned> {
    cfg.validate()?;
    check_m(mom, m)?;
    if c_init.dim() != mom.dim() || c_init.segments() != m {
        return Err(Error::Shape(format!(
            "initial curve is {}x{}, expected {}x{}",
            c_init.segments() + 1,
            c_init.dim(),
            m + 1,
            mom.dim()
        )));
    }
    let (basis, spectrum) = subspace_basis_with_spectrum(&mom.m2, m)?;
    if cfg.max_blocks == 0 {
        return Ok(Finetuned {
            curve: c_init.clone(),
            p: c_init.proportional_segment_lengths().into_vector(),
            loss: relaxed_loss(
                c_init.vertices(),
                c_init.proportional_segment_lengths().as_vector(),
                mom,
                MomentWeights::THIRD_ONLY,
            )?,
            blocks: 0,
            steps: 0,
            step_trace: Vec::new(),
            block_trace: Vec::new(),
            basis,
            spectrum,
        });
    }
    let q = basis.matrix();
    let target = project_moments(mom, &basis)?;
    let w = MomentWeights::THIRD_ONLY;
    let (rows, cols) = (m + 1, m);
    let mut c = c_init.vertices() * q;
    let mut p = proportional_lengths(&c);
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::Degenerate("initial curve collapses under projection".into()));
    }
    let mut loss = relaxed_loss(&c, &p, &target, w)?;
    let mut step_trace = Vec::new();
    let mut block_trace = Vec::new();
    let mut steps = 0;
    let mut blocks = 0;
    let simplex = |v: &mut DVector<f64>| project_simplex(v);
    let proj: Option<&dyn Fn(&mut DVector<f64>)> = if cfg.project_simplex { Some(&simplex) } else { None };
    while blocks < cfg.max_blocks {
        blocks += 1;
        let pc = p.clone();
        let dc = descend(
            flatten(&c),
            |x| {
                let lg = relaxed_loss_grads(&unflatten(x, rows, cols), &pc, &target, w)?;
                Ok((lg.loss, flatten(&lg.grad_c)))
            },
            |x| relaxed_loss(&unflatten(x, rows, cols), &pc, &target, w).unwrap_or(f64::INFINITY),
            None,
            cfg.c_step,
            cfg.block_len,
            cfg,
        )?;
        c = unflatten(&dc.x, rows, cols);
        let cc = c.clone();
        let dp = descend(
            p.clone(),
            |x| {
                let lg = relaxed_loss_grads(&cc, x, &target, w)?;
                Ok((lg.loss, lg.grad_p))
            },
            |x| relaxed_loss(&cc, x, &target, w).unwrap_or(f64::INFINITY),
            proj,
            cfg.p_step,
            cfg.block_len,
            cfg,
        )?;
        p = dp.x;
        loss = dp.f;
        steps += dc.accepted + dp.accepted;
        step_trace.extend(dc.trace);
        step_trace.extend(dp.trace);
        block_trace.push(loss);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("loss became {loss} in block {blocks}")));
        }
        let converged = dc.grad_norm < cfg.grad_tol && (dp.grad_norm < cfg.grad_tol || dp.stalled);
        if converged || (dc.stalled && dp.stalled) || (dc.accepted == 0 && dp.accepted == 0) {
            break;
        }
    }
    let curve = PwlCurve::new(&c * q.transpose())
        .map_err(|e| Error::Degenerate(format!("finetuned curve is invalid: {e}")))?;
    Ok(Finetuned {
        curve,
        p,
        loss,
        blocks,
        steps,
        step_trace,
        block_trace,
        basis,
        spectrum,
    })
}

/// Both phases.
pub fn recover(mom: &MomentTriple, m: usize, cfg: &RecoverConfig, seed: u64) -> Result<RecoveryResult> {
    let init = initial_estimate(mom, m, cfg, seed)?;
    let ft = finetune(&init.curve, mom, m, &cfg.optim)?;
    Ok(RecoveryResult {
        phase1_losses: MomentLosses::of(&init.curve, mom),
        phase2_losses: MomentLosses::of(&ft.curve, mom),
        curve_hat: ft.curve,
        p_hat: ft.p.iter().copied().collect(),
        phase1_curve: init.curve,
        final_objective: ft.loss,
        ordering_success: init.ordering.success,
        ordering: Some(init.ordering),
        tpm_converged: init.tpm_converged,
        spectrum: ft.spectrum,
        iterations: Iterations {
            fit_scales: init.fit.iters,
            finetune_blocks: ft.blocks,
            finetune_steps: ft.steps,
            baseline: 0,
        },
        loss_trace: ft.block_trace,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineLoss {
    ThirdOnly,
    AllThree,
}

impl BaselineLoss {
    pub fn weights(self) -> MomentWeights {
        match self {
            Self::ThirdOnly => MomentWeights::THIRD_ONLY,
            Self::AllThree => MomentWeights::ALL_THREE,
        }
    }
}

struct BaselineRun {
    init: DMatrix<f64>,
    c: DMatrix<f64>,
    loss: f64,
    iters: usize,
}

/// Best of `n` random initializations, each descended on the true-moment
/// loss in the top-`M` eigenspace of `mom.m2`.
///
/// Initial vertices are i.i.d. normal with standard deviation
/// `sqrt(tr(Qᵀ m₂ Q) / M)`, so a random vertex has the same expected
/// squared norm as a point on the curve.
pub fn baseline_recover(
    mom: &MomentTriple,
    m: usize,
    n: usize,
    kind: BaselineLoss,
    cfg: &OptimConfig,
    seed: u64,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    check_m(mom, m)?;
    if n == 0 {
        return Err(Error::Config("baseline needs at least one initialization".into()));
    }
    let (basis, spectrum) = subspace_basis_with_spectrum(&mom.m2, m)?;
    let q = basis.matrix();
    let target = project_moments(mom, &basis)?;
    let scale = (target.m2.trace().max(0.0) / m as f64).sqrt().max(f64::MIN_POSITIVE);
    let w = kind.weights();
    let (rows, cols) = (m + 1, m);
    let runs: Vec<Result<BaselineRun>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(rng::derive(seed, i as u64));
            let init = rng::normal_matrix(&mut r, rows, cols) * scale;
            let d = descend(
                flatten(&init),
                |x| {
                    let lg = true_loss_grad(&unflatten(x, rows, cols), &target, w)?;
                    Ok((lg.loss, flatten(&lg.grad_c)))
                },
                |x| true_loss(&unflatten(x, rows, cols), &target, w).unwrap_or(f64::INFINITY),
                None,
                cfg.c_step,
                cfg.baseline_iters,
                cfg,
            )?;
            Ok(BaselineRun {
                c: unflatten(&d.x, rows, cols),
                init,
                loss: d.f,
                iters: d.accepted,
            })
        })
        .collect();
    let mut best: Option<BaselineRun> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.loss < b.loss) {
            best = Some(run);
        }
    }
    let best = best.expect("n >= 1");
    let curve = PwlCurve::new(&best.c * q.transpose())?;
    let init = PwlCurve::new(&best.init * q.transpose())?;
    Ok(RecoveryResult {
        phase1_losses: MomentLosses::of(&init, mom),
        phase2_losses: MomentLosses::of(&curve, mom),
        p_hat: curve.proportional_segment_lengths().as_vector().iter().copied().collect(),
        curve_hat: curve,
        phase1_curve: init,
        final_objective: best.loss,
        ordering_success: false,
        ordering: None,
        tpm_converged: Vec::new(),
        spectrum,
        iterations: Iterations {
            baseline: best.iters,
            ..Iterations::default()
        },
        loss_trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pwl::{curve_distance, random_curve};

    fn units_of(c: &PwlCurve) -> (DMatrix<f64>, DVector<f64>) {
        let v = c.vertices();
        let norms = DVector::from_fn(v.nrows(), |i, _| v.row(i).norm());
        (DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] / norms[i]), norms)
    }

    #[test]
    fn fit_scales_recovers_true_scales() {
        let c = random_curve(3, 3, 1.0, 2.0, 11).unwrap();
        let (u, _) = units_of(&c);
        let fit = fit_scales(&u, &exact_moments(&c), &OptimConfig::default(), 0).unwrap();
        assert!(fit.loss < 1e-6, "loss {}", fit.loss);
        let got = PwlCurve::new(scaled_rows(&u, &fit.lambda)).unwrap();
        assert!(curve_distance(&got, &c, 1024).unwrap() < 1e-4);
    }

    #[test]
    fn fit_scales_single_segment_grid() {
        // Collinear two-vertex truth at -a e1 and b e1; grid search confirms the optimum.
        let c = PwlCurve::from_rows(&[vec![-0.7, 0.0], vec![1.3, 0.0]]).unwrap();
        let mom = exact_moments(&c);
        let u = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]);
        let fit = fit_scales(&u, &mom, &OptimConfig::default(), 0).unwrap();
        let obj = |a: f64, b: f64| true_loss(&scaled_rows(&u, &DVector::from_vec(vec![a, b])), &mom, MomentWeights::ALL_THREE).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 1..200 {
            for j in 1..200 {
                let (a, b) = (i as f64 * 0.01, j as f64 * 0.01);
                let v = obj(a, b);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        assert!((fit.lambda[0] - best.1).abs() < 0.011 && (fit.lambda[1] - best.2).abs() < 0.011);
        assert!(fit.loss <= best.0 + 1e-12);
    }

    #[test]
    fn finetune_at_truth_is_stationary() {
        let c = random_curve(4, 4, 1.0, 2.0, 3).unwrap();
        let mom = exact_moments(&c);
        let ft = finetune(&c, &mom, 4, &OptimConfig::default()).unwrap();
        assert!(ft.loss < 1e-10);
        assert!(curve_distance(&ft.curve, &c, 1024).unwrap() < 1e-6);

        let cfg = OptimConfig {
            max_blocks: 0,
            ..OptimConfig::default()
        };
        assert_eq!(finetune(&c, &mom, 4, &cfg).unwrap().curve, c);
    }

    #[test]
    fn finetune_descends_from_perturbation() {
        let c = random_curve(4, 4, 1.0, 2.0, 5).unwrap();
        let mom = exact_moments(&c);
        let mut r = rng::stream(1);
        let start = PwlCurve::new(rng::perturb(c.vertices(), 1e-2, &mut r)).unwrap();
        let cfg = OptimConfig {
            max_blocks: 50,
            ..OptimConfig::default()
        };
        let ft = finetune(&start, &mom, 4, &cfg).unwrap();
        assert!(ft.step_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(curve_distance(&ft.curve, &c, 1024).unwrap() < curve_distance(&start, &c, 1024).unwrap());
        assert!((ft.p.sum() - 1.0).abs() < 1e-12 && ft.p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn recover_is_deterministic() {
        let c = random_curve(3, 3, 1.0, 2.0, 8).unwrap();
        let mom = exact_moments(&c);
        let mut cfg = RecoverConfig::default();
        cfg.optim.max_blocks = 20;
        cfg.optim.fit_iters = 200;
        let a = recover(&mom, 3, &cfg, 4).unwrap();
        let b = recover(&mom, 3, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(RecoveryResult::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn baseline_zero_iterations_returns_init() {
        let c = random_curve(3, 3, 1.0, 2.0, 2).unwrap();
        let mom = exact_moments(&c);
        let cfg = OptimConfig {
            baseline_iters: 0,
            ..OptimConfig::default()
        };
        let out = baseline_recover(&mom, 3, 1, BaselineLoss::ThirdOnly, &cfg, 6).unwrap();
        assert_eq!(out.curve_hat, out.phase1_curve);
        let again = baseline_recover(&mom, 3, 1, BaselineLoss::ThirdOnly, &cfg, 6).unwrap();
        assert_eq!(out, again);
    }
}
