//! Monte Carlo evaluation of operating characteristics.
//!
//! Two simulation modes share one scenario record: `fixed` sizes the trial
//! once from planning values (or takes `n_override`) and simulates the final
//! analysis; `recalc` runs the full blinded recalculation pipeline inside
//! every replication. A third entry point, [`mc_power_oracle`], estimates the
//! power of a given total size directly and backs [`exact_size_search`],
//! which stands in for an analytic exact-power method.
//!
//! Reproducibility contract: every replication draws from
//! `RngStream::new(seed, run_index)`, a counter-based generator, so a
//! scenario's result is byte-identical regardless of how runs are scheduled
//! across threads. Aggregation folds the per-run outcomes in run-index order.
//!
//! Draw order within a replication is fixed and documented: group 1 stage 1,
//! group 2 stage 1, then (recalc mode) group 1 stage 2, group 2 stage 2.
//! Each subject is one draw from the joint (outcome, covariates) normal with
//! the group effect added to the outcome coordinate of group 1.

use std::collections::HashMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ancova::{fit_ancova, TrialDataset};
use crate::design::{
    check_feasibility, r_squared_from_covariance, CovarianceInput, DesignSpec, JointCovariance,
};
use crate::distributions::{MvnSampler, RngStream};
use crate::error::{Error, Result};
use crate::recalc::{
    blinded_residual_variance, final_size, initial_size, planned_interim_size, recalculated_size,
    InterimData, RecalcConfig,
};
use crate::sizing::{n_basic, round_to_allocation, size_with, SizingMethod};

/// Which pipeline a scenario exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Fixed,
    Recalc,
}

impl std::fmt::Display for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SimMode::Fixed => "fixed",
            SimMode::Recalc => "recalc",
        })
    }
}

fn default_tau() -> f64 {
    0.5
}

fn default_k_bound() -> f64 {
    4.0
}

/// One simulation scenario. `design` carries the planning effect size;
/// `true_delta` is the data-generating effect (0 encodes a type-I-error run).
/// `planning_cov` diverges from `true_cov` in misspecification scenarios and
/// defaults to the truth when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub label: String,
    pub mode: SimMode,
    pub true_delta: f64,
    pub true_cov: CovarianceInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planning_cov: Option<CovarianceInput>,
    pub design: DesignSpec,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_k_bound")]
    pub k_bound: f64,
    pub n_sim: u64,
    pub seed: u64,
    /// Evaluate at this total size instead of a formula-derived one (fixed
    /// mode only). Must sit on the allocation grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_override: Option<u64>,
    /// Sizing formula for fixed mode; defaults to the z- and df-corrected one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizing_method: Option<SizingMethod>,
}

impl ScenarioSpec {
    /// Checks the scenario invariants: nonnegative effect, at least one
    /// replication, a feasible true covariance, and covariate counts that
    /// agree between design and covariances.
    pub fn validate(&self) -> Result<()> {
        if !self.true_delta.is_finite() || self.true_delta < 0.0 {
            return Err(Error::Domain(format!(
                "true effect must be nonnegative and finite, got {}",
                self.true_delta
            )));
        }
        if self.n_sim == 0 {
            return Err(Error::Domain("n_sim must be at least 1".into()));
        }
        let truth = self.true_cov.resolve();
        let report = check_feasibility(&truth);
        if !report.is_feasible() {
            return Err(Error::Infeasible(format!(
                "true covariance is not usable: {}",
                report.messages.join("; ")
            )));
        }
        if truth.c() != self.design.c() {
            return Err(Error::Domain(format!(
                "true covariance has {} covariates, the design expects {}",
                truth.c(),
                self.design.c()
            )));
        }
        if let Some(p) = &self.planning_cov {
            if p.resolve().c() != self.design.c() {
                return Err(Error::Domain(format!(
                    "planning covariance has {} covariates, the design expects {}",
                    p.resolve().c(),
                    self.design.c()
                )));
            }
        }
        Ok(())
    }

    /// Planning covariance, falling back to the truth under correct
    /// specification.
    pub fn planning(&self) -> JointCovariance {
        match &self.planning_cov {
            Some(cov) => cov.resolve(),
            None => self.true_cov.resolve(),
        }
    }

    pub fn method(&self) -> SizingMethod {
        self.sizing_method.unwrap_or(SizingMethod::ZDfCorrected)
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON encoding;
    /// identifies the exact inputs behind a result row.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(12);
        for byte in digest.iter().take(6) {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

/// Aggregated outcome of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub rejection_rate: f64,
    /// Binomial standard error `sqrt(p (1 - p) / n_sim)`.
    pub rejection_se: f64,
    pub mean_final_n: f64,
    pub min_final_n: u64,
    pub max_final_n: u64,
    /// Mean interim residual variance (recalc mode only).
    pub mean_sigma_tau_sq: Option<f64>,
    pub n_sim_completed: u64,
}

struct RunOutcome {
    reject: bool,
    final_n: u64,
    sigma_tau_sq: f64,
}

/// Derives a per-evaluation seed from the scenario seed and a sample size so
/// search evaluations are mutually independent but fully deterministic
/// (splitmix-style finalizer).
fn mix_seed(seed: u64, n: u64) -> u64 {
    let mut x = seed ^ n.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn group_sizes_for(spec: &ScenarioSpec) -> Result<(u64, u64, u64)> {
    match spec.n_override {
        Some(n) => {
            let grid = spec.design.gamma().grid();
            if n == 0 || n % grid != 0 {
                return Err(Error::Domain(format!(
                    "n_override = {n} is not on the {} allocation grid (multiples of {grid})",
                    spec.design.gamma()
                )));
            }
            let (n1, n2) = spec.design.gamma().split(n);
            Ok((n, n1, n2))
        }
        None => {
            let planning = spec.planning();
            let r2 = r_squared_from_covariance(&planning)?;
            let s = size_with(spec.method(), &spec.design, planning.sigma_y_sq(), r2)?;
            Ok((s.n_total, s.n1, s.n2))
        }
    }
}

/// Simulates the fixed design: size once, then replicate data generation and
/// the covariate-adjusted test.
///
/// Errors: invalid scenario, or a total size that leaves no residual degrees
/// of freedom.
pub fn simulate_fixed(spec: &ScenarioSpec) -> Result<ScenarioResult> {
    spec.validate()?;
    let truth = spec.true_cov.resolve();
    let c = truth.c();
    let (n_total, n1, n2) = group_sizes_for(spec)?;
    if n_total < (c + 3) as u64 {
        return Err(Error::Undersized(format!(
            "total size {n_total} leaves no residual degrees of freedom for \
             {c} covariates"
        )));
    }
    let sampler = MvnSampler::new(DVector::zeros(c + 1), truth.assemble())?;
    let alpha = spec.design.alpha();
    let delta = spec.true_delta;

    let outcomes: Vec<Result<bool>> = (0..spec.n_sim)
        .into_par_iter()
        .map(|run| {
            let mut rng = RngStream::new(spec.seed, run);
            let mut draw = vec![0.0; c + 1];
            let mut data = TrialDataset::with_capacity(c, (n1 + n2) as usize);
            for _ in 0..n1 {
                sampler.sample_into(&mut rng, &mut draw);
                data.push(1, draw[0] + delta, &draw[1..])?;
            }
            for _ in 0..n2 {
                sampler.sample_into(&mut rng, &mut draw);
                data.push(2, draw[0], &draw[1..])?;
            }
            let fit = fit_ancova(&data)?;
            Ok(fit.p_one_sided < alpha / 2.0)
        })
        .collect();

    let mut rejections = 0_u64;
    for outcome in outcomes {
        if outcome? {
            rejections += 1;
        }
    }
    let p = rejections as f64 / spec.n_sim as f64;
    Ok(ScenarioResult {
        rejection_rate: p,
        rejection_se: (p * (1.0 - p) / spec.n_sim as f64).sqrt(),
        mean_final_n: n_total as f64,
        min_final_n: n_total,
        max_final_n: n_total,
        mean_sigma_tau_sq: None,
        n_sim_completed: spec.n_sim,
    })
}

/// Simulates the blinded recalculation design: each replication generates
/// stage-1 data, re-estimates the residual variance without labels, extends
/// to the clamped final size, and analyzes all subjects.
pub fn simulate_recalc(spec: &ScenarioSpec) -> Result<ScenarioResult> {
    spec.validate()?;
    let truth = spec.true_cov.resolve();
    let c = truth.c();
    let planning = spec.planning();
    let planning_r2 = r_squared_from_covariance(&planning)?;
    let cfg = RecalcConfig::new(
        spec.design,
        planning.sigma_y_sq(),
        planning_r2,
        spec.tau,
        spec.k_bound,
    )?;
    let n_init = initial_size(&cfg)?;
    let n_tau = planned_interim_size(&cfg)?;
    let gamma = spec.design.gamma();
    let (n_tau1, n_tau2) = gamma.split(n_tau);
    let sampler = MvnSampler::new(DVector::zeros(c + 1), truth.assemble())?;
    let alpha = spec.design.alpha();
    let delta = spec.true_delta;
    let k_bound = spec.k_bound;

    let outcomes: Vec<Result<RunOutcome>> = (0..spec.n_sim)
        .into_par_iter()
        .map(|run| {
            let mut rng = RngStream::new(spec.seed, run);
            let mut draw = vec![0.0; c + 1];
            let mut data = TrialDataset::with_capacity(c, n_tau as usize);
            for _ in 0..n_tau1 {
                sampler.sample_into(&mut rng, &mut draw);
                data.push(1, draw[0] + delta, &draw[1..])?;
            }
            for _ in 0..n_tau2 {
                sampler.sample_into(&mut rng, &mut draw);
                data.push(2, draw[0], &draw[1..])?;
            }
            // The blinded view: the same rows, labels dropped.
            let mut interim = InterimData::with_capacity(c, n_tau as usize);
            for i in 0..data.len() {
                interim.push(data.y(i), data.z_row(i))?;
            }
            let pooled = blinded_residual_variance(&interim)?;
            let n_rec = recalculated_size(pooled.sigma_tau_sq, &cfg)?;
            let n_final = final_size(n_tau, n_rec, n_init, k_bound, gamma)?;
            let (n_f1, n_f2) = gamma.split(n_final);
            for _ in 0..(n_f1 - n_tau1) {
                sampler.sample_into(&mut rng, &mut draw);
                data.push(1, draw[0] + delta, &draw[1..])?;
            }
            for _ in 0..(n_f2 - n_tau2) {
                sampler.sample_into(&mut rng, &mut draw);
                data.push(2, draw[0], &draw[1..])?;
            }
            let fit = fit_ancova(&data)?;
            Ok(RunOutcome {
                reject: fit.p_one_sided < alpha / 2.0,
                final_n: n_final,
                sigma_tau_sq: pooled.sigma_tau_sq,
            })
        })
        .collect();

    let mut rejections = 0_u64;
    let mut sum_n = 0_u64;
    let mut min_n = u64::MAX;
    let mut max_n = 0_u64;
    let mut sum_sigma = 0.0_f64;
    for outcome in outcomes {
        let run = outcome?;
        rejections += run.reject as u64;
        sum_n += run.final_n;
        min_n = min_n.min(run.final_n);
        max_n = max_n.max(run.final_n);
        sum_sigma += run.sigma_tau_sq;
    }
    let n_sim = spec.n_sim as f64;
    let p = rejections as f64 / n_sim;
    Ok(ScenarioResult {
        rejection_rate: p,
        rejection_se: (p * (1.0 - p) / n_sim).sqrt(),
        mean_final_n: sum_n as f64 / n_sim,
        min_final_n: min_n,
        max_final_n: max_n,
        mean_sigma_tau_sq: Some(sum_sigma / n_sim),
        n_sim_completed: spec.n_sim,
    })
}

/// Dispatches on the scenario's mode.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioResult> {
    match spec.mode {
        SimMode::Fixed => simulate_fixed(spec),
        SimMode::Recalc => simulate_recalc(spec),
    }
}

/// Estimated power (and its binomial SE) of the fixed design at total size
/// `n_total` under the scenario's TRUE covariance and effect.
pub fn mc_power_oracle(n_total: u64, spec: &ScenarioSpec) -> Result<(f64, f64)> {
    let mut probe = spec.clone();
    probe.mode = SimMode::Fixed;
    probe.n_override = Some(n_total);
    probe.planning_cov = None;
    let r = simulate_fixed(&probe)?;
    Ok((r.rejection_rate, r.rejection_se))
}

fn oracle_eval(
    spec: &ScenarioSpec,
    n: u64,
    n_sim_per_eval: u64,
    memo: &mut HashMap<u64, f64>,
) -> Result<f64> {
    if let Some(&p) = memo.get(&n) {
        return Ok(p);
    }
    let mut probe = spec.clone();
    probe.n_sim = n_sim_per_eval;
    probe.seed = mix_seed(spec.seed, n);
    let (p, _) = mc_power_oracle(n, &probe)?;
    memo.insert(n, p);
    Ok(p)
}

/// Smallest allocation-grid total size whose Monte Carlo power estimate
/// reaches `target_power` minus one binomial standard error (the slack keeps
/// the search stable against estimation noise). Brackets from the basic
/// formula value under the true covariance and walks the grid.
///
/// Errors: search budget exhausted before the target was met.
pub fn exact_size_search(
    spec: &ScenarioSpec,
    target_power: f64,
    n_sim_per_eval: u64,
) -> Result<u64> {
    if !target_power.is_finite() || target_power <= 0.0 || target_power >= 1.0 {
        return Err(Error::Domain(format!(
            "target power must lie strictly inside (0, 1), got {target_power}"
        )));
    }
    if n_sim_per_eval == 0 {
        return Err(Error::Domain("n_sim_per_eval must be at least 1".into()));
    }
    spec.validate()?;
    let truth = spec.true_cov.resolve();
    let r2 = r_squared_from_covariance(&truth)?;
    let gamma = spec.design.gamma();
    let grid = gamma.grid();
    let c = spec.design.c() as u64;
    // Smallest grid size with at least one residual degree of freedom.
    let floor_n = (c + 3).div_ceil(grid) * grid;

    let start_raw = n_basic(&spec.design, truth.sigma_y_sq(), r2)?;
    let (mut start, _, _) = round_to_allocation(start_raw.max(1.0), gamma)?;
    start = start.max(floor_n);

    let threshold =
        target_power - (target_power * (1.0 - target_power) / n_sim_per_eval as f64).sqrt();
    let mut memo = HashMap::new();
    const MAX_STEPS: u64 = 600;

    if oracle_eval(spec, start, n_sim_per_eval, &mut memo)? >= threshold {
        let mut n = start;
        for _ in 0..MAX_STEPS {
            if n <= floor_n {
                return Ok(n);
            }
            let lower = n - grid;
            if oracle_eval(spec, lower, n_sim_per_eval, &mut memo)? >= threshold {
                n = lower;
            } else {
                return Ok(n);
            }
        }
        Err(Error::Search(format!(
            "still above the power target after {MAX_STEPS} downward grid \
             steps from N = {start}; the scenario is degenerate"
        )))
    } else {
        let mut n = start;
        for _ in 0..MAX_STEPS {
            n += grid;
            if oracle_eval(spec, n, n_sim_per_eval, &mut memo)? >= threshold {
                return Ok(n);
            }
        }
        Err(Error::Search(format!(
            "no total size up to {n} reached power {target_power:.3} \
             (threshold {threshold:.4}); search budget exhausted"
        )))
    }
}

/// Power of the formula-sized fixed design evaluated under the TRUE
/// covariance: the comparator for misspecification scenarios. Returns
/// `(n_total, power, se)`.
pub fn fixed_design_power(spec: &ScenarioSpec) -> Result<(u64, f64, f64)> {
    let planning = spec.planning();
    let r2 = r_squared_from_covariance(&planning)?;
    let sized = size_with(spec.method(), &spec.design, planning.sigma_y_sq(), r2)?;
    let (p, se) = mc_power_oracle(sized.n_total, spec)?;
    Ok((sized.n_total, p, se))
}

/// One line of a batch run: scenario identity plus its result or error.
#[derive(Clone, Debug)]
pub struct BatchRow {
    pub fingerprint: String,
    pub label: String,
    pub mode: SimMode,
    pub n_sim: u64,
    pub seed: u64,
    pub outcome: std::result::Result<ScenarioResult, String>,
}

/// Parses a batch file: a JSON array of scenario records.
pub fn read_batch(text: &str) -> Result<Vec<ScenarioSpec>> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("batch file: {e}")))
}

/// Runs scenarios in order. Failures become per-row error messages instead of
/// aborting the batch.
pub fn run_batch(specs: &[ScenarioSpec]) -> Vec<BatchRow> {
    specs
        .iter()
        .map(|spec| BatchRow {
            fingerprint: spec.fingerprint(),
            label: spec.label.clone(),
            mode: spec.mode,
            n_sim: spec.n_sim,
            seed: spec.seed,
            outcome: run_scenario(spec).map_err(|e| e.to_string()),
        })
        .collect()
}

fn fmt_rate(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes batch results as CSV: one row per scenario, a fixed column order,
/// fixed-precision numeric formatting (so output is byte-stable across
/// thread counts), and a trailing `#` comment recording the program version
/// and the seeds.
pub fn write_batch_csv<W: std::io::Write>(rows: &[BatchRow], writer: W) -> Result<W> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "fingerprint",
        "label",
        "mode",
        "n_sim",
        "seed",
        "rejection_rate",
        "rejection_se",
        "mean_final_n",
        "min_final_n",
        "max_final_n",
        "mean_sigma_tau_sq",
        "status",
        "message",
    ])
    .map_err(csv_io_error)?;
    for row in rows {
        let mut record: Vec<String> = vec![
            row.fingerprint.clone(),
            row.label.clone(),
            row.mode.to_string(),
            row.n_sim.to_string(),
            row.seed.to_string(),
        ];
        match &row.outcome {
            Ok(r) => {
                record.extend([
                    fmt_rate(r.rejection_rate),
                    fmt_rate(r.rejection_se),
                    format!("{:.4}", r.mean_final_n),
                    r.min_final_n.to_string(),
                    r.max_final_n.to_string(),
                    r.mean_sigma_tau_sq.map(fmt_rate).unwrap_or_default(),
                    "ok".into(),
                    String::new(),
                ]);
            }
            Err(msg) => {
                record.extend([
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "error".into(),
                    msg.clone(),
                ]);
            }
        }
        w.write_record(&record).map_err(csv_io_error)?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let seeds: Vec<String> = rows.iter().map(|r| r.seed.to_string()).collect();
    writeln!(
        inner,
        "# ancova-sizer {}; scenarios: {}; seeds: {}",
        env!("CARGO_PKG_VERSION"),
        rows.len(),
        seeds.join(" ")
    )?;
    Ok(inner)
}

fn csv_io_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("CSV write: {other:?}")),
    }
}

/// One point of the power-comparison figure: the recalculation design's
/// simulated power next to the formula-sized fixed design's power under the
/// same truth, plus the nominal target.
#[derive(Clone, Debug, Serialize)]
pub struct FigureRow {
    pub label: String,
    pub recalc_power: f64,
    pub oracle_power: f64,
    pub target: f64,
}

/// Computes the figure row for one scenario: recalculation power from a
/// recalc-mode run, comparator power from [`fixed_design_power`].
pub fn figure_row(spec: &ScenarioSpec) -> Result<FigureRow> {
    let mut recalc_spec = spec.clone();
    recalc_spec.mode = SimMode::Recalc;
    recalc_spec.n_override = None;
    let recalc = simulate_recalc(&recalc_spec)?;
    let (_, fixed_power, _) = fixed_design_power(spec)?;
    Ok(FigureRow {
        label: if spec.label.is_empty() {
            spec.fingerprint()
        } else {
            spec.label.clone()
        },
        recalc_power: recalc.rejection_rate,
        oracle_power: fixed_power,
        target: 1.0 - spec.design.beta(),
    })
}

/// Writes figure rows as CSV with the same formatting discipline as
/// [`write_batch_csv`].
pub fn write_figure_csv<W: std::io::Write>(rows: &[FigureRow], writer: W) -> Result<W> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "recalc_power", "oracle_power", "target"])
        .map_err(csv_io_error)?;
    for row in rows {
        w.write_record([
            row.label.clone(),
            fmt_rate(row.recalc_power),
            fmt_rate(row.oracle_power),
            fmt_rate(row.target),
        ])
        .map_err(csv_io_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Allocation;
    use crate::recalc::bound_size;

    fn cs_json(sigma_sq: f64, rho: f64, c: usize) -> String {
        format!(r#"{{"cs": {{"sigma_sq": {sigma_sq}, "rho": {rho}, "c": {c}}}}}"#)
    }

    fn scenario(mode: SimMode, delta: f64, n_sim: u64, seed: u64) -> ScenarioSpec {
        let json = format!(
            r#"{{
                "label": "unit",
                "mode": "{mode}",
                "true_delta": {delta},
                "true_cov": {},
                "design": {{"delta": 1.2, "c": 1}},
                "n_sim": {n_sim},
                "seed": {seed}
            }}"#,
            cs_json(1.0, 0.5, 1)
        );
        serde_json::from_str(&json).unwrap()
    }

    #[test]
    fn batch_json_applies_defaults() {
        let spec = scenario(SimMode::Recalc, 1.2, 100, 9);
        assert_eq!(spec.tau, 0.5);
        assert_eq!(spec.k_bound, 4.0);
        assert_eq!(spec.n_override, None);
        assert_eq!(spec.method(), SizingMethod::ZDfCorrected);
        assert_eq!(spec.design.alpha(), 0.05);
        assert_eq!(spec.design.gamma(), Allocation::ONE_TO_ONE);

        let batch = read_batch(&format!(
            "[{}]",
            serde_json::to_string(&spec).unwrap()
        ))
        .unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch[0], spec);

        assert!(read_batch("{\"scenarios\": 3}").is_err());
        // Unknown fields are typos, not extensions.
        assert!(read_batch(
            r#"[{"mode": "fixed", "true_delta": 0, "true_cov": {"cs": {"sigma_sq": 1, "rho": 0, "c": 0}}, "design": {"delta": 1, "c": 0}, "n_sim": 1, "seed": 1, "surprise": true}]"#
        )
        .is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = scenario(SimMode::Fixed, 1.2, 100, 9);
        let b = scenario(SimMode::Fixed, 1.2, 100, 9);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 12);
        let c = scenario(SimMode::Fixed, 1.2, 100, 10);
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn validation_rejects_broken_scenarios() {
        let mut spec = scenario(SimMode::Fixed, -0.1, 100, 1);
        assert!(spec.validate().is_err());
        spec.true_delta = 1.0;
        spec.n_sim = 0;
        assert!(spec.validate().is_err());
        spec.n_sim = 10;
        // Covariate count mismatch.
        spec.true_cov = CovarianceInput::from_json(&cs_json(1.0, 0.3, 2)).unwrap();
        assert!(spec.validate().is_err());

        // A blockwise-infeasible truth (R² above 1) is refused.
        let infeasible = r#"{
            "mode": "fixed", "true_delta": 0.5,
            "true_cov": {"sigma_y_sq": 1.0, "sigma_yz": [0.9, 0.9], "sigma_z": [[1.0, 0.1], [0.1, 1.0]]},
            "design": {"delta": 0.5, "c": 2}, "n_sim": 10, "seed": 1
        }"#;
        let spec: ScenarioSpec = serde_json::from_str(infeasible).unwrap();
        assert!(matches!(spec.validate(), Err(Error::Infeasible(_))));
    }

    #[test]
    fn near_degenerate_variance_rejects_deterministically() {
        // Outcome variance so small that the effect is always detected.
        let json = r#"{
            "mode": "fixed", "true_delta": 5.0,
            "true_cov": {"sigma_y_sq": 1e-6, "sigma_yz": [], "sigma_z": []},
            "design": {"delta": 5.0, "c": 0},
            "n_sim": 500, "seed": 4, "n_override": 10
        }"#;
        let spec: ScenarioSpec = serde_json::from_str(json).unwrap();
        let r = simulate_fixed(&spec).unwrap();
        assert_eq!(r.rejection_rate, 1.0);
        assert_eq!(r.rejection_se, 0.0);
        assert_eq!((r.min_final_n, r.max_final_n), (10, 10));
        assert_eq!(r.mean_sigma_tau_sq, None);
    }

    #[test]
    fn override_must_sit_on_the_grid_and_leave_df() {
        let mut spec = scenario(SimMode::Fixed, 1.2, 10, 1);
        spec.n_override = Some(9); // 1:1 grid is even
        assert!(matches!(simulate_fixed(&spec), Err(Error::Domain(_))));
        spec.n_override = Some(2); // c = 1 needs at least 4
        assert!(matches!(simulate_fixed(&spec), Err(Error::Undersized(_))));
    }

    #[test]
    fn identical_specs_give_identical_results_across_thread_counts() {
        let spec = scenario(SimMode::Recalc, 1.2, 400, 33);
        let base = run_scenario(&spec).unwrap();
        for threads in [1, 3] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let again = pool.install(|| run_scenario(&spec).unwrap());
            assert_eq!(again, base);
        }
    }

    #[test]
    fn recalc_final_sizes_respect_the_clamp() {
        let spec = scenario(SimMode::Recalc, 1.2, 300, 7);
        let planning = spec.planning();
        let r2 = r_squared_from_covariance(&planning).unwrap();
        let cfg = RecalcConfig::new(
            spec.design,
            planning.sigma_y_sq(),
            r2,
            spec.tau,
            spec.k_bound,
        )
        .unwrap();
        let n_init = initial_size(&cfg).unwrap();
        let n_tau = planned_interim_size(&cfg).unwrap();
        let n_bound = bound_size(n_init, spec.k_bound, spec.design.gamma()).unwrap();

        let r = simulate_recalc(&spec).unwrap();
        assert!(r.min_final_n >= n_tau);
        assert!(r.max_final_n <= n_bound);
        assert!(r.mean_final_n >= n_tau as f64 && r.mean_final_n <= n_bound as f64);
        assert!(r.mean_sigma_tau_sq.unwrap() > 0.0);
        assert_eq!(r.n_sim_completed, 300);
    }

    #[test]
    fn oracle_power_grows_with_sample_size() {
        let spec = scenario(SimMode::Fixed, 1.2, 3000, 11);
        let (lo, se_lo) = mc_power_oracle(6, &spec).unwrap();
        let (hi, se_hi) = mc_power_oracle(40, &spec).unwrap();
        assert!(
            hi > lo + 3.0 * (se_lo + se_hi),
            "power should rise from N=6 ({lo}) to N=40 ({hi})"
        );
    }

    #[test]
    fn size_search_is_stable_and_deterministic() {
        // c = 0, R² = 0: the search reduces to the two-sample t-test size.
        let json = r#"{
            "mode": "fixed", "true_delta": 1.5,
            "true_cov": {"sigma_y_sq": 1.0, "sigma_yz": [], "sigma_z": []},
            "design": {"delta": 1.5, "c": 0},
            "n_sim": 100, "seed": 21
        }"#;
        let spec: ScenarioSpec = serde_json::from_str(json).unwrap();
        let n_a = exact_size_search(&spec, 0.8, 2500).unwrap();
        let n_b = exact_size_search(&spec, 0.8, 2500).unwrap();
        assert_eq!(n_a, n_b);
        let n_double = exact_size_search(&spec, 0.8, 5000).unwrap();
        assert!(
            n_a.abs_diff(n_double) <= 2,
            "doubling evaluations moved the size from {n_a} to {n_double}"
        );
        // Guenther-Schouten with df correction lands within one grid step.
        let sized = size_with(SizingMethod::ZDfCorrected, &spec.design, 1.0, 0.0).unwrap();
        assert!(
            n_a.abs_diff(sized.n_total) <= 2,
            "search gave {n_a}, formula gave {}",
            sized.n_total
        );

        let impossible = exact_size_search(&spec, 0.999999, 50);
        assert!(matches!(impossible, Err(Error::Search(_)) | Ok(_)));
    }

    #[test]
    fn batch_rows_and_csv_shape() {
        let good = scenario(SimMode::Fixed, 1.2, 50, 5);
        let mut bad = scenario(SimMode::Fixed, 1.2, 50, 6);
        bad.n_override = Some(9);
        let rows = run_batch(&[good.clone(), bad]);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].outcome.is_ok());
        assert!(rows[1].outcome.is_err());

        let bytes = write_batch_csv(&rows, Vec::new()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "fingerprint,label,mode,n_sim,seed,rejection_rate,rejection_se,mean_final_n,min_final_n,max_final_n,mean_sigma_tau_sq,status,message"
        );
        let first = lines.next().unwrap();
        assert!(first.starts_with(&good.fingerprint()));
        assert!(first.contains(",ok,"));
        let second = lines.next().unwrap();
        assert!(second.contains("error"));
        assert!(second.contains("allocation grid"));
        let footer = lines.next().unwrap();
        assert!(footer.starts_with("# ancova-sizer "));
        assert!(footer.contains("seeds: 5 6"));
    }

    #[test]
    fn figure_row_compares_recalc_against_fixed_comparator() {
        let mut spec = scenario(SimMode::Recalc, 1.2, 200, 12);
        spec.label = "demo".into();
        let row = figure_row(&spec).unwrap();
        assert_eq!(row.label, "demo");
        assert_eq!(row.target, 0.8);
        assert!(row.recalc_power > 0.0 && row.recalc_power <= 1.0);
        assert!(row.oracle_power > 0.0 && row.oracle_power <= 1.0);

        let bytes = write_figure_csv(&[row], Vec::new()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("label,recalc_power,oracle_power,target\n"));
        assert!(text.contains("demo,"));
    }
}
