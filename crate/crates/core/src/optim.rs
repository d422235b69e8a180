//! Backtracking gradient descent and simplex projection.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    /// Initial step for vertex updates.
    pub c_step: f64,
    /// Initial step for weight updates.
    pub p_step: f64,
    /// Initial step for the scale fit.
    pub lambda_step: f64,
    /// Vertex steps, then weight steps, per alternation block.
    pub block_len: usize,
    pub max_blocks: usize,
    pub fit_iters: usize,
    pub baseline_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub grad_tol: f64,
    /// Give up on a line search once the step shrinks below this.
    pub min_step: f64,
    /// Factor applied to the step after every accepted move.
    pub growth: f64,
    /// Keep weights on the probability simplex.
    pub project_simplex: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            c_step: 1e-2,
            p_step: 1e-2,
            lambda_step: 1e-2,
            block_len: 10,
            max_blocks: 500,
            fit_iters: 2000,
            baseline_iters: 2000,
            grad_tol: 1e-10,
            min_step: 1e-16,
            growth: 2.0,
            project_simplex: true,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_step", self.c_step),
            ("p_step", self.p_step),
            ("lambda_step", self.lambda_step),
            ("grad_tol", self.grad_tol),
            ("min_step", self.min_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return Err(Error::Config(format!("growth must be at least 1, got {}", self.growth)));
        }
        if self.block_len == 0 {
            return Err(Error::Config("block_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Descent {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub accepted: usize,
    /// The line search hit `min_step` without finding a decrease.
    pub stalled: bool,
    /// Objective after each accepted step.
    pub trace: Vec<f64>,
}

/// Gradient descent with a simple-decrease backtracking line search.
///
/// `fg` returns the objective and gradient; `f` only the objective and
/// should return infinity for inadmissible points, which are then treated
/// like an increase. `project`, when given, maps every trial point back to
/// the feasible set. Accepted steps never increase the objective.
pub fn descend(
    x0: DVector<f64>,
    fg: impl Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
    f: impl Fn(&DVector<f64>) -> f64,
    project: Option<&dyn Fn(&mut DVector<f64>)>,
    step0: f64,
    iters: usize,
    cfg: &OptimConfig,
) -> Result<Descent> {
    let (mut fx, mut g) = fg(&x0)?;
    if !fx.is_finite() {
        return Err(Error::Diverged(format!("objective is {fx} at the starting point")));
    }
    let mut x = x0;
    let mut step = step0;
    let mut out_trace = Vec::new();
    let mut stalled = false;
    let mut accepted = 0;
    for _ in 0..iters {
        if g.norm() < cfg.grad_tol {
            break;
        }
        let mut st = step;
        let next = loop {
            let mut y = &x - &g * st;
            if let Some(p) = project {
                p(&mut y);
            }
            let fy = f(&y);
            if fy.is_finite() && fy < fx {
                break Some(y);
            }
            st *= 0.5;
            if st < cfg.min_step {
                break None;
            }
        };
        let Some(y) = next else {
            stalled = true;
            break;
        };
        let (fy, gy) = fg(&y)?;
        x = y;
        fx = fy;
        g = gy;
        accepted += 1;
        out_trace.push(fx);
        step = st * cfg.growth;
    }
    Ok(Descent {
        grad_norm: g.norm(),
        x,
        f: fx,
        accepted,
        stalled,
        trace: out_trace,
    })
}

/// Euclidean projection onto `{p : p ≥ 0, Σp = 1}`.
pub fn project_simplex(v: &mut DVector<f64>) {
    let n = v.len();
    if n == 0 {
        return;
    }
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        css += uk;
        let t = (css - 1.0) / (k + 1) as f64;
        if uk > t {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadratic_converges() {
        let target = DVector::from_vec(vec![1.0, -2.0]);
        let fg = |x: &DVector<f64>| Ok(((x - &target).norm_squared(), (x - &target) * 2.0));
        let f = |x: &DVector<f64>| (x - &target).norm_squared();
        let out = descend(DVector::zeros(2), fg, f, None, 1e-2, 200, &OptimConfig::default()).unwrap();
        assert!((out.x - target).norm() < 1e-8);
        assert!(out.trace.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_iterations_is_identity() {
        let fg = |x: &DVector<f64>| Ok((x.norm_squared(), x * 2.0));
        let x0 = DVector::from_vec(vec![3.0]);
        let out = descend(x0.clone(), fg, |x| x.norm_squared(), None, 1e-2, 0, &OptimConfig::default()).unwrap();
        assert_eq!(out.x, x0);
        assert_eq!(out.accepted, 0);
    }

    #[test]
    fn simplex_projection_examples() {
        let mut v = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        project_simplex(&mut v);
        assert!((v - DVector::from_vec(vec![0.2, 0.3, 0.5])).amax() < 1e-15);
        let mut v = DVector::from_vec(vec![2.0, 0.0]);
        project_simplex(&mut v);
        assert_eq!(v.as_slice(), &[1.0, 0.0]);
        let mut v = DVector::from_vec(vec![0.0, 0.0]);
        project_simplex(&mut v);
        assert_eq!(v.as_slice(), &[0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex(v in proptest::collection::vec(-5.0f64..5.0, 1..10)) {
            let mut p = DVector::from_vec(v.clone());
            project_simplex(&mut p);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            // Optimality: p is no farther from v than any vertex of the simplex.
            let d = (&p - DVector::from_vec(v.clone())).norm();
            for i in 0..v.len() {
                let e = DVector::from_fn(v.len(), |j, _| if i == j { 1.0 } else { 0.0 });
                prop_assert!(d <= (e - DVector::from_vec(v.clone())).norm() + 1e-12);
            }
        }
    }
}
