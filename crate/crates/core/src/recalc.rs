//! Blinded interim sample-size recalculation.
//!
//! The procedure has four steps:
//!
//! 1. Size the trial with the degrees-of-freedom corrected formula from
//!    planning values of the outcome variance and R².
//! 2. Once `N_tau = tau * N_init` subjects are observed, regress the pooled
//!    outcomes on the covariates alone, ignoring treatment labels, and take
//!    the residual mean square `sigma_tau_sq`. No unblinding happens: the
//!    interim data type carries no group column at all.
//! 3. Recalculate the total size with the z-corrected formula, substituting
//!    `sigma_tau_sq` for `sigma_y_sq * (1 - r_squared)`. The substitution
//!    drops both the explained-variance factor and the degrees-of-freedom
//!    factor, because the pooled residual variance already absorbs them.
//! 4. Clamp: `n_final = min(max(n_tau, n_rec), n_bound)` with
//!    `n_bound = k_bound * n_init`, rounded up to the allocation grid.
//!
//! The pooled residual variance is biased upward when a treatment effect
//! exists (the pooled model absorbs roughly `delta^2 * gamma / (1 + gamma)^2`
//! into the residual), which makes the recalculated size conservative rather
//! than anticonservative. The simulation engine quantifies that overhead.

use nalgebra::{DMatrix, DVector};

use crate::design::{Allocation, DesignSpec};
use crate::distributions::std_normal_quantile;
use crate::error::{Error, Result};
use crate::sizing::{round_to_allocation, size_with, SizingMethod};

/// Planning inputs for the recalculation procedure.
#[derive(Clone, Debug)]
pub struct RecalcConfig {
    design: DesignSpec,
    planning_sigma_y_sq: f64,
    planning_r_squared: f64,
    tau: f64,
    k_bound: f64,
}

impl RecalcConfig {
    /// Validates planning values: `planning_sigma_y_sq > 0`,
    /// `planning_r_squared` in [0, 1), `0 < tau <= k_bound`, `k_bound >= 1`.
    pub fn new(
        design: DesignSpec,
        planning_sigma_y_sq: f64,
        planning_r_squared: f64,
        tau: f64,
        k_bound: f64,
    ) -> Result<Self> {
        if !planning_sigma_y_sq.is_finite() || planning_sigma_y_sq <= 0.0 {
            return Err(Error::Domain(format!(
                "planning outcome variance must be positive and finite, got {planning_sigma_y_sq}"
            )));
        }
        if !planning_r_squared.is_finite() || planning_r_squared < 0.0 {
            return Err(Error::Domain(format!(
                "planning R² must be a finite nonnegative number, got {planning_r_squared}"
            )));
        }
        if planning_r_squared >= 1.0 {
            return Err(Error::Infeasible(format!(
                "planning R² = {planning_r_squared:.3} is not below 1, so the \
                 planning residual variance is nonpositive"
            )));
        }
        if !k_bound.is_finite() || k_bound < 1.0 {
            return Err(Error::Domain(format!(
                "bound factor k must be at least 1, got {k_bound}"
            )));
        }
        if !tau.is_finite() || tau <= 0.0 || tau > k_bound {
            return Err(Error::Domain(format!(
                "interim fraction tau must lie in (0, k], got {tau}"
            )));
        }
        Ok(Self {
            design,
            planning_sigma_y_sq,
            planning_r_squared,
            tau,
            k_bound,
        })
    }

    pub fn design(&self) -> &DesignSpec {
        &self.design
    }

    pub fn planning_sigma_y_sq(&self) -> f64 {
        self.planning_sigma_y_sq
    }

    pub fn planning_r_squared(&self) -> f64 {
        self.planning_r_squared
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn k_bound(&self) -> f64 {
        self.k_bound
    }
}

/// Pooled interim data: outcomes and covariates only. The type has no group
/// field, so nothing downstream can unblind.
#[derive(Clone, Debug, Default)]
pub struct InterimData {
    c: usize,
    y: Vec<f64>,
    z: Vec<f64>, // row-major, len == y.len() * c
}

impl InterimData {
    pub fn new(c: usize) -> Self {
        Self {
            c,
            y: Vec::new(),
            z: Vec::new(),
        }
    }

    pub fn with_capacity(c: usize, n: usize) -> Self {
        Self {
            c,
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n * c),
        }
    }

    /// Appends one subject. Errors: covariate count mismatch or non-finite
    /// values.
    pub fn push(&mut self, y: f64, z: &[f64]) -> Result<()> {
        if z.len() != self.c {
            return Err(Error::Domain(format!(
                "expected {} covariates per subject, got {}",
                self.c,
                z.len()
            )));
        }
        if !y.is_finite() || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "outcome and covariate values must be finite".into(),
            ));
        }
        self.y.push(y);
        self.z.extend_from_slice(z);
        Ok(())
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.c..(i + 1) * self.c]
    }
}

/// Least-squares fit of the pooled (group-blind) regression `y ~ 1 + z`.
#[derive(Clone, Debug, serde::Serialize)]
pub struct PooledRegressionFit {
    pub beta0: f64,
    pub beta: Vec<f64>,
    /// Residual sum of squares.
    pub rss: f64,
    /// Residual degrees of freedom `n - c - 1`.
    pub df: u64,
    /// Residual mean square `rss / df`.
    pub sigma_tau_sq: f64,
}

/// Audited output of one recalculation.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct RecalcResult {
    pub n_init: u64,
    /// Interim sample size actually observed.
    pub n_tau: u64,
    pub sigma_tau_sq: f64,
    pub n_rec: u64,
    pub n_bound: u64,
    pub n_final: u64,
    /// Every intermediate value in computation order.
    pub audit: Vec<(String, f64)>,
}

/// Step 1: initial total size from planning values, degrees-of-freedom
/// corrected formula, allocation-rounded.
pub fn initial_size(cfg: &RecalcConfig) -> Result<u64> {
    let r = size_with(
        SizingMethod::DfCorrected,
        &cfg.design,
        cfg.planning_sigma_y_sq,
        cfg.planning_r_squared,
    )?;
    Ok(r.n_total)
}

/// Number of interim subjects to observe: `tau * n_init`, rounded up to the
/// allocation grid.
///
/// Errors: interim size below `c + 2` (pooled regression not estimable).
pub fn planned_interim_size(cfg: &RecalcConfig) -> Result<u64> {
    let n_init = initial_size(cfg)?;
    let (n_tau, _, _) = round_to_allocation(cfg.tau * n_init as f64, cfg.design.gamma())?;
    let c = cfg.design.c() as u64;
    if n_tau < c + 2 {
        return Err(Error::Undersized(format!(
            "interim size {n_tau} cannot estimate a pooled regression on {c} \
             covariates; need at least {}",
            c + 2
        )));
    }
    Ok(n_tau)
}

/// Step 2: residual variance of the pooled regression of outcome on
/// covariates, denominator `n - c - 1`.
///
/// Errors: fewer than `c + 2` rows, or a rank-deficient design matrix.
pub fn blinded_residual_variance(interim: &InterimData) -> Result<PooledRegressionFit> {
    let n = interim.len();
    let c = interim.c();
    if n < c + 2 {
        return Err(Error::Undersized(format!(
            "pooled regression on {c} covariates needs at least {} subjects, got {n}",
            c + 2
        )));
    }
    let p = c + 1;
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for (j, &v) in interim.z_row(i).iter().enumerate() {
            x[(i, 1 + j)] = v;
        }
        y[i] = interim.y(i);
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let diag_max = (0..p).map(|i| r[(i, i)].abs()).fold(0.0_f64, f64::max);
    let diag_min = (0..p).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(diag_min > 1e-12 * diag_max) {
        return Err(Error::Degenerate(
            "interim covariates are collinear (or constant), the pooled \
             regression is not identifiable"
                .into(),
        ));
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let w = qty.rows(0, p).into_owned();
    let b = r
        .solve_upper_triangular(&w)
        .ok_or_else(|| Error::Degenerate("triangular solve failed".into()))?;
    let resid = &y - &x * &b;
    let rss = resid.norm_squared();
    let df = (n - p) as u64;
    Ok(PooledRegressionFit {
        beta0: b[0],
        beta: b.iter().skip(1).copied().collect(),
        rss,
        df,
        sigma_tau_sq: rss / df as f64,
    })
}

fn recalculated_size_raw(sigma_tau_sq: f64, design: &DesignSpec) -> Result<f64> {
    if !sigma_tau_sq.is_finite() || sigma_tau_sq < 0.0 {
        return Err(Error::Domain(format!(
            "interim residual variance must be nonnegative, got {sigma_tau_sq}"
        )));
    }
    let gamma = design.gamma().gamma();
    let z_a = std_normal_quantile(1.0 - design.alpha() / 2.0)?;
    let z_b = std_normal_quantile(1.0 - design.beta())?;
    let q = z_a + z_b;
    Ok((gamma + 1.0).powi(2) / gamma * q * q * sigma_tau_sq / design.delta().powi(2)
        + z_a * z_a / 2.0)
}

/// Step 3: recalculated total size. The z-corrected formula with the interim
/// residual variance in place of `sigma_y_sq * (1 - r_squared)`; no
/// explained-variance factor and no degrees-of-freedom factor.
pub fn recalculated_size(sigma_tau_sq: f64, cfg: &RecalcConfig) -> Result<u64> {
    let raw = recalculated_size_raw(sigma_tau_sq, &cfg.design)?;
    let (n, _, _) = round_to_allocation(raw, cfg.design.gamma())?;
    Ok(n)
}

/// Upper bound `k_bound * n_init`, allocation-rounded up.
pub fn bound_size(n_init: u64, k_bound: f64, gamma: Allocation) -> Result<u64> {
    if n_init == 0 {
        return Err(Error::Domain("initial size must be positive".into()));
    }
    if !k_bound.is_finite() || k_bound < 1.0 {
        return Err(Error::Domain(format!(
            "bound factor k must be at least 1, got {k_bound}"
        )));
    }
    let (n, _, _) = round_to_allocation(k_bound * n_init as f64, gamma)?;
    Ok(n)
}

/// Step 4: `min(max(n_tau, n_rec), n_bound)`, rounded up to the allocation
/// grid. Never shrinks below the observed interim size, never exceeds the
/// bound.
pub fn final_size(
    n_tau: u64,
    n_rec: u64,
    n_init: u64,
    k_bound: f64,
    gamma: Allocation,
) -> Result<u64> {
    if n_tau == 0 || n_rec == 0 {
        return Err(Error::Domain("sample sizes must be positive".into()));
    }
    let n_bound = bound_size(n_init, k_bound, gamma)?;
    let clamped = n_tau.max(n_rec).min(n_bound);
    let (n_final, _, _) = round_to_allocation(clamped as f64, gamma)?;
    Ok(n_final)
}

/// Runs steps 1 to 4 on observed interim data and returns the audited result.
/// The observed row count serves as `n_tau`; it may differ from
/// [`planned_interim_size`] when recruitment overshoots the planned look.
///
/// Errors: covariate count mismatch with the design, plus anything the
/// component steps raise.
pub fn run_recalc(cfg: &RecalcConfig, interim: &InterimData) -> Result<RecalcResult> {
    if interim.c() != cfg.design.c() {
        return Err(Error::Domain(format!(
            "interim data has {} covariate columns, the design expects {}",
            interim.c(),
            cfg.design.c()
        )));
    }
    let n_init = initial_size(cfg)?;
    let n_tau = interim.len() as u64;
    let fit = blinded_residual_variance(interim)?;
    let n_rec_raw = recalculated_size_raw(fit.sigma_tau_sq, &cfg.design)?;
    let n_rec = recalculated_size(fit.sigma_tau_sq, cfg)?;
    let n_bound = bound_size(n_init, cfg.k_bound, cfg.design.gamma())?;
    let n_final = final_size(n_tau, n_rec, n_init, cfg.k_bound, cfg.design.gamma())?;
    let audit = vec![
        ("n_init".into(), n_init as f64),
        ("n_tau".into(), n_tau as f64),
        ("sigma_tau_sq".into(), fit.sigma_tau_sq),
        ("n_rec_raw".into(), n_rec_raw),
        ("n_rec".into(), n_rec as f64),
        ("n_bound".into(), n_bound as f64),
        ("n_final".into(), n_final as f64),
    ];
    Ok(RecalcResult {
        n_init,
        n_tau,
        sigma_tau_sq: fit.sigma_tau_sq,
        n_rec,
        n_bound,
        n_final,
        audit,
    })
}

/// Reads interim data from CSV with header `y,z1,...,zc`.
///
/// A `group` column is refused outright with a blinding error: the
/// recalculation must never see treatment labels, and silently dropping the
/// column would hide an unblinded hand-off.
pub fn read_interim_csv<R: std::io::Read>(reader: R) -> Result<InterimData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("CSV header: {e}")))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.iter().any(|c| c.eq_ignore_ascii_case("group")) {
        return Err(Error::Blinding(
            "interim data contains a 'group' column; blinded recalculation \
             must not receive treatment labels, remove the column at source"
                .into(),
        ));
    }
    if cols.is_empty() || cols[0] != "y" {
        return Err(Error::Parse(format!(
            "expected header starting with 'y', got {:?}",
            cols.join(",")
        )));
    }
    let c = cols.len() - 1;
    for (j, col) in cols[1..].iter().enumerate() {
        let expected = format!("z{}", j + 1);
        if *col != expected {
            return Err(Error::Parse(format!(
                "expected covariate column '{expected}', got {col:?}"
            )));
        }
    }

    let mut data = InterimData::new(c);
    let mut z = vec![0.0; c];
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        if record.len() != cols.len() {
            return Err(Error::Parse(format!(
                "line {line}: expected {} fields, got {}",
                cols.len(),
                record.len()
            )));
        }
        let y = crate::ancova::parse_cell(&record[0], line, "y")?;
        for j in 0..c {
            z[j] = crate::ancova::parse_cell(&record[j + 1], line, cols[j + 1])?;
        }
        data.push(y, &z)
            .map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
    }
    Ok(data)
}
