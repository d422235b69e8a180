//! One test per acceptance criterion. Each prints a PASS or FAIL line
//! before asserting. Seeds are fixed per criterion.

mod common;

use nalgebra::{DMatrix, DVector};
use pwl_moments::checks::{
    find_m1m2_neighbor, gradient_condition_check, m1m2_jacobian_nullity, tensor_power_bound_check, witness_matrix_sigma_min,
    GradientConditionReport, NeighborConfig,
};
use pwl_moments::estimate::{sample, stream_moments, MomentAccumulator, NoisyModel};
use pwl_moments::experiment::{run_suite, ExperimentConfig, MomentSource};
use pwl_moments::moments::{third_moment_loss, third_moment_loss_grads};
use pwl_moments::ordering::{psim, Permutation};
use pwl_moments::rng::{self, derive};
use pwl_moments::tpm::{tpm, TpmConfig};
use pwl_moments::tracer::{trace, TracerConfig};
use pwl_moments::{curve_distance, exact_moments, random_curve, relaxed_moments, Tensor3};

fn report(id: u32, pass: bool, detail: String) {
    println!("{} criterion {id:>2}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

#[test]
fn criterion_01_witness_singular_value() {
    let s = witness_matrix_sigma_min(4).unwrap();
    let rel = (s - 3.29024e-4).abs() / 3.29024e-4;
    report(1, rel < 1e-4, format!("sigma_min(4) = {s:.6e}, relative error {rel:.2e}"));
}

#[test]
fn criterion_02_psim_golden_value() {
    let a = Permutation::new(vec![0, 1, 2, 3, 4]).unwrap();
    let b = Permutation::new(vec![2, 3, 4, 1, 0]).unwrap();
    let v = psim(&a, &b).unwrap();
    report(2, v == 3, format!("psim = {v}"));
}

fn random_weights(r: &mut rng::StreamRng, m: usize) -> DVector<f64> {
    let p = DVector::from_fn(m, |_, _| 0.5 + rand::Rng::random::<f64>(r));
    let s = p.sum();
    p / s
}

#[test]
fn criterion_03_gradients_match_finite_differences() {
    let (m, d, h) = (4, 4, 1e-5);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let mut r = rng::stream(derive(3, i));
        let c = rng::normal_matrix(&mut r, m + 1, d);
        let p = random_weights(&mut r, m);
        let target = relaxed_moments(&rng::normal_matrix(&mut r, m + 1, d), &random_weights(&mut r, m)).unwrap().m3;
        let (gc, gp) = third_moment_loss_grads(&c, &p, &target).unwrap();
        let mut analytic = Vec::new();
        let mut fd = Vec::new();
        for a in 0..=m {
            for b in 0..d {
                let mut cp = c.clone();
                let mut cm = c.clone();
                cp[(a, b)] += h;
                cm[(a, b)] -= h;
                let f = (third_moment_loss(&cp, &p, &target).unwrap() - third_moment_loss(&cm, &p, &target).unwrap()) / (2.0 * h);
                fd.push(f);
                analytic.push(gc[(a, b)]);
            }
        }
        for a in 0..m {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp[a] += h;
            pm[a] -= h;
            fd.push((third_moment_loss(&c, &pp, &target).unwrap() - third_moment_loss(&c, &pm, &target).unwrap()) / (2.0 * h));
            analytic.push(gp[a]);
        }
        worst = worst.max(common::rel_err(&analytic, &fd));
    }
    report(3, worst < 1e-5, format!("worst relative error over 100 instances {worst:.2e}"));
}

#[test]
fn criterion_04_relaxed_equals_exact() {
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let c = random_curve(2 + (i as usize % 5), 2 + (i as usize % 4), 1.0, 2.0, derive(4, i)).unwrap();
        let v = c.vertices();
        let lens: Vec<f64> = (0..c.segments()).map(|k| (v.row(k + 1) - v.row(k)).norm()).collect();
        let total: f64 = lens.iter().sum();
        let p = DVector::from_iterator(lens.len(), lens.iter().map(|l| l / total));
        let relaxed = relaxed_moments(v, &p).unwrap();
        let exact = exact_moments(&c);
        let e = (relaxed.m1 - &exact.m1)
            .amax()
            .max((relaxed.m2 - &exact.m2).amax())
            .max(relaxed.m3.max_abs_diff(&exact.m3));
        worst = worst.max(e);
    }
    report(4, worst < 1e-12, format!("largest entry difference over 100 curves {worst:.2e}"));
}

#[test]
fn criterion_05_closed_form_matches_quadrature() {
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let m = 1 + (i as usize % 6);
        let d = 1 + (i as usize * 3 % 8);
        let c = random_curve(m, d, 1.0, 2.0, derive(5, i)).unwrap();
        let exact = exact_moments(&c);
        let (q1, q2, q3) = common::quadrature_moments(c.vertices(), 100_000);
        let e = (q1 - &exact.m1).amax().max((q2 - &exact.m2).amax()).max(q3.max_abs_diff(&exact.m3));
        worst = worst.max(e);
    }
    report(5, worst < 1e-8, format!("largest entry difference over 20 curves {worst:.2e}"));
}

/// Frobenius error of each finalized moment and the aggregate standard error.
fn unbiasedness_run(model: &NoisyModel, n: usize, seed: u64) -> ([f64; 3], [f64; 3]) {
    let d = model.curve.dim();
    let exact = exact_moments(&model.curve);
    let mut acc = MomentAccumulator::new(d);
    let mut sq1 = DVector::<f64>::zeros(d);
    let mut sq2 = DMatrix::<f64>::zeros(d, d);
    let mut sq3 = Tensor3::zeros(d);
    let chunk = 50_000;
    let mut done = 0;
    let mut k = 0;
    while done < n {
        let b = chunk.min(n - done);
        let pts = sample(model, b, derive(seed, k)).unwrap();
        acc.accumulate(&pts).unwrap();
        for row in pts.row_iter() {
            let y: Vec<f64> = row.iter().copied().collect();
            for i in 0..d {
                sq1[i] += y[i] * y[i];
                for j in 0..d {
                    sq2[(i, j)] += (y[i] * y[j]).powi(2);
                }
            }
            let sq: Vec<f64> = y.iter().map(|x| x * x).collect();
            sq3.add_cube(1.0, &sq);
        }
        done += b;
        k += 1;
    }
    let nf = n as f64;
    let est = acc.finalize(model.sigma).unwrap();
    let (s1, s2, s3) = acc.sums();
    let var1: f64 = (0..d).map(|i| sq1[i] / nf - (s1[i] / nf).powi(2)).sum();
    let var2: f64 = (0..d * d).map(|i| sq2[i] / nf - (s2[i] / nf).powi(2)).sum();
    let var3: f64 = (0..d * d * d)
        .map(|i| sq3.as_slice()[i] / nf - (s3.as_slice()[i] / nf).powi(2))
        .sum();
    let err = [
        (est.m1 - exact.m1).norm(),
        (est.m2 - exact.m2).norm(),
        est.m3.sub(&exact.m3).frob_norm(),
    ];
    let se = [(var1 / nf).sqrt(), (var2 / nf).sqrt(), (var3 / nf).sqrt()];
    (err, se)
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn criterion_06_estimator_unbiasedness_and_rate() {
    let curve = random_curve(4, 4, 1.0, 2.0, 6).unwrap();
    let model = NoisyModel::new(curve, 0.5).unwrap();
    let (err, se) = unbiasedness_run(&model, 1_000_000, 6);
    let within = (0..3).all(|k| err[k] < 5.0 * se[k]);

    let exact = exact_moments(&model.curve);
    let ns = [10_000usize, 100_000, 1_000_000];
    let reps = 6;
    let mut slopes = [0.0; 3];
    let logs: Vec<f64> = ns.iter().map(|&n| (n as f64).log10()).collect();
    let mut rms = vec![[0.0; 3]; ns.len()];
    for (a, &n) in ns.iter().enumerate() {
        for rep in 0..reps {
            let est = stream_moments(&model, n, derive(600 + a as u64, rep)).unwrap().finalize(0.5).unwrap();
            let e = [
                (est.m1 - &exact.m1).norm_squared(),
                (est.m2 - &exact.m2).norm_squared(),
                est.m3.sub(&exact.m3).frob_norm_sq(),
            ];
            for k in 0..3 {
                rms[a][k] += e[k] / reps as f64;
            }
        }
    }
    for k in 0..3 {
        let ys: Vec<f64> = rms.iter().map(|r| r[k].sqrt().log10()).collect();
        slopes[k] = slope(&logs, &ys);
    }
    let rate = slopes.iter().all(|s| (-0.63..=-0.34).contains(s));
    report(
        6,
        within && rate,
        format!("errors {} vs 5 SE {}; log-log slopes {slopes:.3?}", sci(&err), sci(&se.map(|s| 5.0 * s))),
    );
}

#[test]
fn criterion_07_tpm_exact_on_orthogonal_tensors() {
    let mut worst = f64::INFINITY;
    for s in 0..50u64 {
        let d = 2 + (s as usize % 7);
        let r = 1 + (s as usize / 7) % d;
        let mut g = rng::stream(derive(7, s));
        let q = rng::orthogonal_matrix(&mut g, d);
        let u: Vec<DVector<f64>> = (0..r).map(|i| q.column(i).into_owned()).collect();
        let w: Vec<f64> = (0..r).map(|_| 0.5 + 1.5 * rand::Rng::random::<f64>(&mut g)).collect();
        let (t3, t2) = common::odeco(&u, &w);
        let out = tpm(&t3, &t2, r, &TpmConfig::default(), derive(70, s)).unwrap();
        for ui in &u {
            let best = out.factors.iter().map(|f| f.dot(ui) / f.norm()).fold(f64::NEG_INFINITY, f64::max);
            worst = worst.min(best);
        }
    }
    report(7, worst > 1.0 - 1e-8, format!("smallest best-match cosine over 50 seeds 1 - {:.2e}", 1.0 - worst));
}

#[test]
fn criterion_08_gradient_sign_conditions() {
    let mut total = GradientConditionReport::default();
    for i in 0..20u64 {
        let c = random_curve(4, 4, 1.0, 2.0, derive(8, i)).unwrap();
        let rep = gradient_condition_check(&c, 1e-3, 1e-3, 100, derive(80, i)).unwrap();
        if i == 0 {
            total = rep;
        } else {
            total.merge(&rep);
        }
    }
    report(
        8,
        total.strong_violations() == 0,
        format!(
            "{} trials: C-condition violations {}, p-condition violations {}; with the other variable held at the truth {} and {}; summed condition {}",
            total.n_trials,
            total.strong_c_violations,
            total.strong_p_violations,
            total.weak_c_violations,
            total.weak_p_violations,
            total.joint_violations
        ),
    );
}

#[test]
fn criterion_09_first_two_moment_neighbors() {
    let eps = 1e-2;
    let mut ok = 0;
    let mut min_null = usize::MAX;
    for i in 0..20u64 {
        let c = random_curve(4, 4, 1.0, 2.0, derive(9, i)).unwrap();
        min_null = min_null.min(m1m2_jacobian_nullity(&c, 1e-8).unwrap());
        let Ok(n) = find_m1m2_neighbor(&c, eps, &NeighborConfig::default(), derive(90, i)) else {
            continue;
        };
        let a = exact_moments(&c);
        let b = exact_moments(&n.gamma);
        let r1 = (&a.m1 - &b.m1).amax();
        let r2 = (&a.m2 - &b.m2).amax();
        let dist = (c.vertices() - n.gamma.vertices()).norm();
        let gap = a.m3.sub(&b.m3).frob_norm();
        if r1 < 1e-8 && r2 < 1e-8 && (dist - eps).abs() <= eps * 1e-4 && gap > 1e-6 {
            ok += 1;
        }
    }
    report(9, ok >= 18 && min_null >= 6, format!("{ok}/20 neighbors found, smallest nullity {min_null}"));
}

#[test]
fn criterion_10_exact_moment_recovery_pattern() {
    let mut lines = Vec::new();
    let mut pass = true;
    for m in [4, 5, 6] {
        let cfg = ExperimentConfig {
            m,
            d: m,
            n_trials: 20,
            seed: 10,
            source: MomentSource::Exact,
            ..Default::default()
        };
        let s = run_suite(&cfg).unwrap();
        let med = |a: &str, b: &str| s.median(a, b).unwrap_or(f64::NAN);
        let rho2 = med("alg3-phase2", "rho");
        let rho_t = med("baseline-third-only", "rho");
        let rho_a = med("baseline-all-three", "rho");
        let l3 = med("alg3-phase2", "m3_loss");
        let l3_a = med("baseline-all-three", "m3_loss");
        let ok = rho2 < rho_t && rho2 < rho_a && l3_a < l3;
        pass &= ok;
        lines.push(format!(
            "M={m}: rho {rho2:.3e} vs {rho_t:.3e}/{rho_a:.3e}, m3 loss {l3:.3e} vs {l3_a:.3e}, ordering {:.2}",
            s.ordering_success_rate
        ));
    }
    report(10, pass, lines.join("; "));
}

#[test]
fn criterion_11_cloud_recovery_pattern() {
    let cfg = ExperimentConfig {
        m: 4,
        d: 6,
        sigma: 0.5,
        n_points: 1_000_000,
        n_trials: 10,
        seed: 11,
        source: MomentSource::Cloud,
        ..Default::default()
    };
    let s = run_suite(&cfg).unwrap();
    let med = |a: &str| s.median(a, "rho").unwrap_or(f64::NAN);
    let rho2 = med("alg3-phase2");
    let base = med("baseline-third-only").min(med("baseline-all-three"));
    let pass = rho2 < base && s.ordering_success_rate >= 0.6;
    report(
        11,
        pass,
        format!(
            "median rho {rho2:.3e} vs best baseline {base:.3e}, ordering success {:.2}",
            s.ordering_success_rate
        ),
    );
}

#[test]
fn criterion_12_tensor_power_bound() {
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for d in [2, 5, 10] {
        let rep = tensor_power_bound_check(10_000, 6, d, derive(12, d as u64)).unwrap();
        total += rep.violations;
        worst = worst.max(rep.max_ratio);
    }
    report(12, total == 0, format!("{total} violations, largest gap/bound ratio {worst:.3}"));
}

#[test]
fn criterion_13_low_noise_tracer() {
    let l = 1.0;
    let truth = common::zigzag(6, 45.0, l);
    let cfg = TracerConfig::with_length(l);
    let low = sample(&NoisyModel::new(truth.clone(), 0.01 * l).unwrap(), 100_000, 13).unwrap();
    let low_rho = trace(&low, &truth.vertex(0), 6, &cfg).map(|c| curve_distance(&c, &truth, 1024).unwrap());
    let high = sample(&NoisyModel::new(truth.clone(), 0.5 * l).unwrap(), 100_000, 130).unwrap();
    let high_out = trace(&high, &truth.vertex(0), 6, &cfg).map(|c| curve_distance(&c, &truth, 1024).unwrap());
    let low_ok = matches!(low_rho, Ok(r) if r < (0.1 * l).powi(2));
    let high_ok = match high_out {
        Err(_) => true,
        Ok(r) => r > l * l,
    };
    let show = |r: &pwl_moments::Result<f64>| match r {
        Ok(v) => format!("rho {v:.3e}"),
        Err(e) => format!("error ({e})"),
    };
    report(
        13,
        low_ok && high_ok,
        format!("sigma 0.01L: {}; sigma 0.5L: {}", show(&low_rho), show(&high_out)),
    );
}
