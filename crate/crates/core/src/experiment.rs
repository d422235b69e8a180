//! Repeated-trial experiments comparing the moment method with the baselines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{stream_moments, NoisyModel};
use crate::moments::{exact_moments, MomentTriple};
use crate::pwl::{curve_distance, random_curve, PwlCurve, DEFAULT_QUAD_NODES};
use crate::recover::{baseline_recover, recover, BaselineLoss, MomentLosses, RecoverConfig};
use crate::rng::derive;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentSource {
    /// Closed-form moments of the true curve.
    #[default]
    Exact,
    /// Moments estimated from a sampled noisy cloud.
    Cloud,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub m: usize,
    pub d: usize,
    pub sigma: f64,
    /// Cloud size in cloud mode.
    pub n_points: usize,
    pub n_trials: usize,
    /// Base seed; trial `i` uses a stream derived from `(seed, i)`.
    pub seed: u64,
    pub source: MomentSource,
    /// Random initializations per baseline.
    pub baseline_inits: usize,
    pub run_baselines: bool,
    pub len_lo: f64,
    pub len_hi: f64,
    pub n_quad: usize,
    pub recover: RecoverConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            m: 4,
            d: 4,
            sigma: 0.5,
            n_points: 100_000,
            n_trials: 20,
            seed: 0,
            source: MomentSource::Exact,
            baseline_inits: 10,
            run_baselines: true,
            len_lo: 1.0,
            len_hi: 2.0,
            n_quad: DEFAULT_QUAD_NODES,
            recover: RecoverConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.d < self.m {
            return Err(Error::Config(format!("need d >= M >= 1, got M = {}, d = {}", self.m, self.d)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be finite and nonnegative, got {}", self.sigma)));
        }
        if self.source == MomentSource::Cloud && self.n_points == 0 {
            return Err(Error::Config("cloud mode needs n_points >= 1".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be positive".into()));
        }
        if self.run_baselines && self.baseline_inits == 0 {
            return Err(Error::Config("baseline_inits must be positive".into()));
        }
        if !(self.len_lo > 0.0 && self.len_lo <= self.len_hi && self.len_hi.is_finite()) {
            return Err(Error::Config(format!("bad length range [{}, {}]", self.len_lo, self.len_hi)));
        }
        if self.n_quad < 2 {
            return Err(Error::Config("n_quad must be at least 2".into()));
        }
        self.recover.tpm.validate()?;
        self.recover.optim.validate()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Curve loss and third-moment loss of one method's output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub rho: f64,
    pub m3_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub ordering_success: bool,
    pub phase1: Option<MethodScore>,
    pub phase2: Option<MethodScore>,
    pub third_only: Option<MethodScore>,
    pub all_three: Option<MethodScore>,
    /// `method: message` for every component that failed.
    pub errors: Vec<String>,
    pub wall_seconds: f64,
}

pub const METHODS: [&str; 4] = ["alg3-phase1", "alg3-phase2", "baseline-third-only", "baseline-all-three"];

impl TrialRecord {
    pub fn score(&self, method: &str) -> Option<MethodScore> {
        match method {
            "alg3-phase1" => self.phase1,
            "alg3-phase2" => self.phase2,
            "baseline-third-only" => self.third_only,
            "baseline-all-three" => self.all_three,
            _ => None,
        }
    }
}

fn score(curve: &PwlCurve, truth: &PwlCurve, exact: &MomentTriple, n_quad: usize) -> Result<MethodScore> {
    Ok(MethodScore {
        rho: curve_distance(curve, truth, n_quad)?,
        m3_loss: MomentLosses::of(curve, exact).m3,
    })
}

/// Ground truth and input moments for one trial.
pub fn trial_inputs(cfg: &ExperimentConfig, trial: usize) -> Result<(PwlCurve, MomentTriple)> {
    let seed = derive(cfg.seed, trial as u64);
    let truth = random_curve(cfg.m, cfg.d, cfg.len_lo, cfg.len_hi, derive(seed, 0))?;
    let mom = match cfg.source {
        MomentSource::Exact => exact_moments(&truth),
        MomentSource::Cloud => {
            let model = NoisyModel::new(truth.clone(), cfg.sigma)?;
            stream_moments(&model, cfg.n_points, derive(seed, 1))?.finalize(cfg.sigma)?
        }
    };
    Ok((truth, mom))
}

/// Runs one trial. Component failures are recorded, not returned.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let seed = derive(cfg.seed, trial as u64);
    let mut rec = TrialRecord {
        trial,
        seed,
        ordering_success: false,
        phase1: None,
        phase2: None,
        third_only: None,
        all_three: None,
        errors: Vec::new(),
        wall_seconds: 0.0,
    };
    let (truth, mom) = match trial_inputs(cfg, trial) {
        Ok(x) => x,
        Err(e) => {
            rec.errors.push(format!("inputs: {e}"));
            rec.wall_seconds = start.elapsed().as_secs_f64();
            return Ok(rec);
        }
    };
    let exact = exact_moments(&truth);
    let nq = cfg.n_quad;
    match recover(&mom, cfg.m, &cfg.recover, derive(seed, 2)) {
        Ok(r) => {
            rec.ordering_success = r.ordering_success;
            match score(&r.phase1_curve, &truth, &exact, nq) {
                Ok(s) => rec.phase1 = Some(s),
                Err(e) => rec.errors.push(format!("alg3-phase1: {e}")),
            }
            match score(&r.curve_hat, &truth, &exact, nq) {
                Ok(s) => rec.phase2 = Some(s),
                Err(e) => rec.errors.push(format!("alg3-phase2: {e}")),
            }
        }
        Err(e) => rec.errors.push(format!("alg3: {e}")),
    }
    if cfg.run_baselines {
        for (k, kind) in [BaselineLoss::ThirdOnly, BaselineLoss::AllThree].into_iter().enumerate() {
            let out = baseline_recover(&mom, cfg.m, cfg.baseline_inits, kind, &cfg.recover.optim, derive(seed, 3 + k as u64))
                .and_then(|r| score(&r.curve_hat, &truth, &exact, nq));
            let (slot, name) = match kind {
                BaselineLoss::ThirdOnly => (&mut rec.third_only, METHODS[2]),
                BaselineLoss::AllThree => (&mut rec.all_three, METHODS[3]),
            };
            match out {
                Ok(s) => *slot = Some(s),
                Err(e) => rec.errors.push(format!("{name}: {e}")),
            }
        }
    }
    rec.wall_seconds = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Type-7 quantile: linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    /// `rho` or `m3_loss`.
    pub metric: String,
    pub q25: Option<f64>,
    pub median: Option<f64>,
    pub q75: Option<f64>,
    /// Trials that produced a value.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub config: ExperimentConfig,
    pub quantile_convention: String,
    pub n_trials: usize,
    pub ordering_success_rate: f64,
    /// Trials with at least one failed component.
    pub failed_trials: usize,
    pub rows: Vec<SummaryRow>,
    pub records: Vec<TrialRecord>,
}

impl SuiteSummary {
    pub fn row(&self, method: &str, metric: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.metric == metric)
    }

    pub fn median(&self, method: &str, metric: &str) -> Option<f64> {
        self.row(method, metric).and_then(|r| r.median)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// Quartile table. Fixed columns: `method,metric,q25,median,q75,count`.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("method,metric,q25,median,q75,count\n");
        let f = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:e}"));
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.method, r.metric, f(r.q25), f(r.median), f(r.q75), r.count);
        }
        s
    }

    /// One line per trial, without wall times so reruns compare byte for byte.
    pub fn trials_csv(&self) -> String {
        let mut s = String::from("trial,seed,ordering_success");
        for m in METHODS {
            let _ = write!(s, ",{m}_rho,{m}_m3_loss");
        }
        s.push_str(",errors\n");
        for r in &self.records {
            let _ = write!(s, "{},{},{}", r.trial, r.seed, r.ordering_success);
            for m in METHODS {
                match r.score(m) {
                    Some(sc) => {
                        let _ = write!(s, ",{:e},{:e}", sc.rho, sc.m3_loss);
                    }
                    None => s.push_str(",,"),
                }
            }
            let _ = writeln!(s, ",{}", r.errors.len());
        }
        s
    }

    /// Writes `summary.csv`, `trials.csv` and `suite.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.csv"), self.table_csv())?;
        std::fs::write(dir.join("trials.csv"), self.trials_csv())?;
        std::fs::write(dir.join("suite.json"), self.to_json())?;
        Ok(())
    }
}

pub fn summarize(cfg: &ExperimentConfig, records: Vec<TrialRecord>) -> SuiteSummary {
    let mut rows = Vec::new();
    for m in METHODS {
        for metric in ["rho", "m3_loss"] {
            let mut v: Vec<f64> = records
                .iter()
                .filter_map(|r| r.score(m))
                .map(|s| if metric == "rho" { s.rho } else { s.m3_loss })
                .collect();
            v.sort_by(f64::total_cmp);
            rows.push(SummaryRow {
                method: m.into(),
                metric: metric.into(),
                q25: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q75: quantile(&v, 0.75),
                count: v.len(),
            });
        }
    }
    let n = records.len();
    SuiteSummary {
        config: cfg.clone(),
        quantile_convention: "linear interpolation between order statistics (type 7)".into(),
        n_trials: n,
        ordering_success_rate: records.iter().filter(|r| r.ordering_success).count() as f64 / n.max(1) as f64,
        failed_trials: records.iter().filter(|r| !r.errors.is_empty()).count(),
        rows,
        records,
    }
}

/// Runs all trials in parallel and aggregates them in trial order.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteSummary> {
    cfg.validate()?;
    if cfg.n_trials < 4 {
        return Err(Error::Config(format!("a suite needs at least 4 trials, got {}", cfg.n_trials)));
    }
    let records = (0..cfg.n_trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(cfg, records);
    if let Some(dir) = &cfg.output_dir {
        summary.write(dir)?;
    }
    Ok(summary)
}
