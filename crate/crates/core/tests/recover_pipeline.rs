use pwl_moments::estimate::{stream_moments, NoisyModel};
use pwl_moments::optim::OptimConfig;
use pwl_moments::recover::{baseline_recover, finetune, recover, BaselineLoss, RecoverConfig, RecoveryResult};
use pwl_moments::rng::derive;
use pwl_moments::{curve_distance, exact_moments, random_curve, Error};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    (v[(n - 1) / 2] + v[n / 2]) / 2.0
}

#[test]
fn exact_moment_recovery_beats_random_restarts() {
    let cfg = RecoverConfig::default();
    let mut ours = Vec::new();
    let mut base = Vec::new();
    for s in 0..8u64 {
        let truth = random_curve(3, 3, 1.0, 2.0, derive(61, s)).unwrap();
        let mom = exact_moments(&truth);
        let r = recover(&mom, 3, &cfg, s).unwrap();
        assert!(r.phase2_losses.m3 >= 0.0);
        assert_eq!(r.p_hat.len(), 3);
        assert!((r.p_hat.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        ours.push(curve_distance(&r.curve_hat, &truth, 1024).unwrap());
        let b = baseline_recover(&mom, 3, 5, BaselineLoss::ThirdOnly, &cfg.optim, s).unwrap();
        base.push(curve_distance(&b.curve_hat, &truth, 1024).unwrap());
    }
    assert!(median(ours.clone()) < median(base.clone()), "{ours:?} vs {base:?}");
}

#[test]
fn finetuning_does_not_increase_the_objective() {
    let truth = random_curve(4, 4, 1.0, 2.0, 62).unwrap();
    let mom = stream_moments(&NoisyModel::new(truth.clone(), 0.5).unwrap(), 200_000, 63)
        .unwrap()
        .finalize(0.5)
        .unwrap();
    let r = recover(&mom, 4, &RecoverConfig::default(), 64).unwrap();
    assert!(r.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    let again = finetune(&r.curve_hat, &mom, 4, &OptimConfig { max_blocks: 0, ..Default::default() }).unwrap();
    assert_eq!(again.curve, r.curve_hat);
}

#[test]
fn result_json_round_trip() {
    let truth = random_curve(3, 4, 1.0, 2.0, 65).unwrap();
    let r = recover(&exact_moments(&truth), 3, &RecoverConfig::default(), 66).unwrap();
    assert_eq!(RecoveryResult::from_json(&r.to_json()).unwrap(), r);
}

#[test]
fn segment_count_above_dimension_is_rejected() {
    let truth = random_curve(2, 2, 1.0, 2.0, 67).unwrap();
    let mom = exact_moments(&truth);
    assert!(matches!(recover(&mom, 3, &RecoverConfig::default(), 0), Err(Error::Config(_))));
    assert!(baseline_recover(&mom, 2, 0, BaselineLoss::AllThree, &OptimConfig::default(), 0).is_err());
}
