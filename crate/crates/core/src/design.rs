//! Design-side model: the joint covariance of outcome and baseline
//! covariates, feasibility diagnostics, and the trial design parameters.
//!
//! The planning quantity everything else consumes is the squared multiple
//! correlation `R^2` between outcome and covariates. It is only meaningful
//! when the *joint* covariance (outcome row included) is positive
//! semidefinite; plausible-looking blocks can otherwise yield `R^2 > 1` and
//! nonsense sample sizes, which is exactly what [`check_feasibility`] flags.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint covariance of `(Y, Z_1, ..., Z_c)`: outcome variance, the
/// outcome-covariate cross-covariance vector, and the covariate block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointCovarianceSchema", into = "JointCovarianceSchema")]
pub struct JointCovariance {
    sigma_y_sq: f64,
    sigma_yz: DVector<f64>,
    sigma_z: DMatrix<f64>,
}

/// Wire format: `{"sigma_y_sq": .., "sigma_yz": [..], "sigma_z": [[..]]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct JointCovarianceSchema {
    sigma_y_sq: f64,
    sigma_yz: Vec<f64>,
    sigma_z: Vec<Vec<f64>>,
}

impl TryFrom<JointCovarianceSchema> for JointCovariance {
    type Error = Error;

    fn try_from(s: JointCovarianceSchema) -> Result<Self> {
        let c = s.sigma_yz.len();
        if s.sigma_z.len() != c || s.sigma_z.iter().any(|row| row.len() != c) {
            return Err(Error::Domain(format!(
                "sigma_z must be {c}x{c} to match the {c} entries of sigma_yz"
            )));
        }
        let flat: Vec<f64> = s.sigma_z.iter().flatten().copied().collect();
        JointCovariance::new(
            s.sigma_y_sq,
            DVector::from_vec(s.sigma_yz),
            DMatrix::from_row_slice(c, c, &flat),
        )
    }
}

impl From<JointCovariance> for JointCovarianceSchema {
    fn from(v: JointCovariance) -> Self {
        let c = v.c();
        JointCovarianceSchema {
            sigma_y_sq: v.sigma_y_sq,
            sigma_yz: v.sigma_yz.iter().copied().collect(),
            sigma_z: (0..c)
                .map(|i| (0..c).map(|j| v.sigma_z[(i, j)]).collect())
                .collect(),
        }
    }
}

impl JointCovariance {
    /// Errors: nonpositive or non-finite `sigma_y_sq`, non-finite entries,
    /// shape mismatch, or a covariate block asymmetric beyond 1e-8 relative.
    pub fn new(sigma_y_sq: f64, sigma_yz: DVector<f64>, sigma_z: DMatrix<f64>) -> Result<Self> {
        let c = sigma_yz.len();
        if !sigma_y_sq.is_finite() || sigma_y_sq <= 0.0 {
            return Err(Error::Domain(format!(
                "outcome variance must be positive and finite, got {sigma_y_sq}"
            )));
        }
        if sigma_z.nrows() != c || sigma_z.ncols() != c {
            return Err(Error::Domain(format!(
                "sigma_z is {}x{} but sigma_yz has length {c}",
                sigma_z.nrows(),
                sigma_z.ncols()
            )));
        }
        if sigma_yz.iter().any(|v| !v.is_finite()) || sigma_z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("covariance entries must be finite".into()));
        }
        let scale = sigma_z.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..c {
            for j in (i + 1)..c {
                if (sigma_z[(i, j)] - sigma_z[(j, i)]).abs() > 1e-8 * scale {
                    return Err(Error::Domain(format!(
                        "sigma_z is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            sigma_y_sq,
            sigma_yz,
            sigma_z,
        })
    }

    pub fn from_rows(sigma_y_sq: f64, sigma_yz: Vec<f64>, sigma_z: Vec<Vec<f64>>) -> Result<Self> {
        JointCovarianceSchema {
            sigma_y_sq,
            sigma_yz,
            sigma_z,
        }
        .try_into()
    }

    /// Number of covariates `c`.
    pub fn c(&self) -> usize {
        self.sigma_yz.len()
    }

    pub fn sigma_y_sq(&self) -> f64 {
        self.sigma_y_sq
    }

    pub fn sigma_yz(&self) -> &DVector<f64> {
        &self.sigma_yz
    }

    pub fn sigma_z(&self) -> &DMatrix<f64> {
        &self.sigma_z
    }

    /// Assembles the full `(c+1) x (c+1)` joint covariance with the outcome
    /// in the first row and column.
    pub fn assemble(&self) -> DMatrix<f64> {
        let c = self.c();
        let mut full = DMatrix::zeros(c + 1, c + 1);
        full[(0, 0)] = self.sigma_y_sq;
        for i in 0..c {
            full[(0, i + 1)] = self.sigma_yz[i];
            full[(i + 1, 0)] = self.sigma_yz[i];
            for j in 0..c {
                full[(i + 1, j + 1)] = self.sigma_z[(i, j)];
            }
        }
        full
    }
}

/// Compound-symmetry specification for the full joint covariance: every
/// variance equals `sigma_sq` and every pairwise covariance `sigma_sq * rho`,
/// outcome row included, with `c` covariates (dimension `c + 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CsSchema", into = "CsSchema")]
pub struct CompoundSymmetrySpec {
    sigma_sq: f64,
    rho: f64,
    c: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CsSchema {
    sigma_sq: f64,
    rho: f64,
    c: usize,
}

impl TryFrom<CsSchema> for CompoundSymmetrySpec {
    type Error = Error;

    fn try_from(s: CsSchema) -> Result<Self> {
        CompoundSymmetrySpec::new(s.sigma_sq, s.rho, s.c)
    }
}

impl From<CompoundSymmetrySpec> for CsSchema {
    fn from(v: CompoundSymmetrySpec) -> Self {
        CsSchema {
            sigma_sq: v.sigma_sq,
            rho: v.rho,
            c: v.c,
        }
    }
}

impl CompoundSymmetrySpec {
    /// Errors: nonpositive `sigma_sq`, `|rho| > 1`, or `c == 0`.
    pub fn new(sigma_sq: f64, rho: f64, c: usize) -> Result<Self> {
        if !sigma_sq.is_finite() || sigma_sq <= 0.0 {
            return Err(Error::Domain(format!(
                "compound symmetry variance must be positive, got {sigma_sq}"
            )));
        }
        if !rho.is_finite() || rho.abs() > 1.0 {
            return Err(Error::Domain(format!(
                "compound symmetry correlation must lie in [-1, 1], got {rho}"
            )));
        }
        if c == 0 {
            return Err(Error::Domain(
                "compound symmetry needs at least one covariate".into(),
            ));
        }
        Ok(Self { sigma_sq, rho, c })
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn c(&self) -> usize {
        self.c
    }

    /// Closed-form spectrum of the full `(c+1)`-dimensional matrix:
    /// `sigma_sq * (1 + c * rho)` once and `sigma_sq * (1 - rho)` with
    /// multiplicity `c`. The matrix is PSD exactly when `rho >= -1/c`.
    pub fn eigenvalues(&self) -> [(f64, usize); 2] {
        [
            (self.sigma_sq * (1.0 + self.c as f64 * self.rho), 1),
            (self.sigma_sq * (1.0 - self.rho), self.c),
        ]
    }

    /// Expands the pattern into an explicit [`JointCovariance`].
    pub fn expand(&self) -> JointCovariance {
        let c = self.c;
        let mut sigma_z = DMatrix::from_element(c, c, self.sigma_sq * self.rho);
        for i in 0..c {
            sigma_z[(i, i)] = self.sigma_sq;
        }
        JointCovariance {
            sigma_y_sq: self.sigma_sq,
            sigma_yz: DVector::from_element(c, self.sigma_sq * self.rho),
            sigma_z,
        }
    }
}

/// Closed-form eigenvalues of a compound-symmetry joint covariance, as
/// `(value, multiplicity)` pairs: see [`CompoundSymmetrySpec::eigenvalues`].
pub fn cs_eigenvalues(spec: &CompoundSymmetrySpec) -> [(f64, usize); 2] {
    spec.eigenvalues()
}

/// How a covariance arrived in an input file: either explicit blocks or a
/// compound-symmetry pattern.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum CovarianceInput {
    Cs { cs: CompoundSymmetrySpec },
    Explicit(JointCovariance),
}

impl<'de> Deserialize<'de> for CovarianceInput {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        // Branch on the discriminating key by hand so schema errors inside the
        // chosen variant surface verbatim instead of as "no variant matched".
        let value = serde_json::Value::deserialize(deserializer)?;
        let obj = value
            .as_object()
            .ok_or_else(|| serde::de::Error::custom("covariance must be a JSON object"))?;
        if obj.contains_key("cs") {
            let cs = serde_json::from_value(obj["cs"].clone()).map_err(serde::de::Error::custom)?;
            Ok(CovarianceInput::Cs { cs })
        } else {
            let cov = serde_json::from_value(value).map_err(serde::de::Error::custom)?;
            Ok(CovarianceInput::Explicit(cov))
        }
    }
}

impl CovarianceInput {
    /// The explicit covariance, expanding compound symmetry if necessary.
    pub fn resolve(&self) -> JointCovariance {
        match self {
            CovarianceInput::Cs { cs } => cs.expand(),
            CovarianceInput::Explicit(cov) => cov.clone(),
        }
    }

    /// The compound-symmetry pattern, when the input used one.
    pub fn cs(&self) -> Option<&CompoundSymmetrySpec> {
        match self {
            CovarianceInput::Cs { cs } => Some(cs),
            CovarianceInput::Explicit(_) => None,
        }
    }

    /// Parses a covariance specification document (either schema).
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("covariance file: {e}")))
    }
}

/// Squared multiple correlation between the outcome and the covariates:
/// `sigma_yz' * sigma_z^{-1} * sigma_yz / sigma_y_sq`.
///
/// The value is returned *unclamped*: with a joint covariance that is not
/// positive semidefinite it can exceed 1, and callers are expected to treat
/// that as an infeasibility signal rather than truncate it. Errors: a
/// covariate block with smallest eigenvalue `<= 1e-12 *` largest (the message
/// names the offending eigenvector).
pub fn r_squared_from_covariance(cov: &JointCovariance) -> Result<f64> {
    let c = cov.c();
    if c == 0 {
        return Ok(0.0);
    }
    let eig = cov.sigma_z.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut min_idx = 0;
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let lambda_min = eig.eigenvalues[min_idx];
    if lambda_min <= 1e-12 * lambda_max.max(0.0) {
        let null_vec: Vec<String> = eig
            .eigenvectors
            .column(min_idx)
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect();
        return Err(Error::Degenerate(format!(
            "covariate covariance is singular (eigenvalue {lambda_min:.3e} along \
             direction [{}]); R² is undefined",
            null_vec.join(", ")
        )));
    }
    // sigma_z = V diag(lambda) V', so the solve goes through the eigenbasis
    // already in hand.
    let vt_s = eig.eigenvectors.transpose() * &cov.sigma_yz;
    let mut quad = 0.0;
    for i in 0..c {
        quad += vt_s[i] * vt_s[i] / eig.eigenvalues[i];
    }
    Ok(quad / cov.sigma_y_sq)
}

/// One step of the build-up identity for the squared multiple correlation:
/// adding a covariate with partial correlation `rho_partial` (given the
/// covariates already included) lifts `r_sq_reduced` to
/// `r_sq_reduced + (1 - r_sq_reduced) * rho_partial^2`.
///
/// Errors: `r_sq_reduced` outside [0, 1] or `|rho_partial| > 1`.
pub fn r_squared_iterative(r_sq_reduced: f64, rho_partial: f64) -> Result<f64> {
    if !r_sq_reduced.is_finite() || !(0.0..=1.0).contains(&r_sq_reduced) {
        return Err(Error::Domain(format!(
            "reduced-model R² must lie in [0, 1], got {r_sq_reduced}"
        )));
    }
    if !rho_partial.is_finite() || rho_partial.abs() > 1.0 {
        return Err(Error::Domain(format!(
            "partial correlation must lie in [-1, 1], got {rho_partial}"
        )));
    }
    Ok(r_sq_reduced + (1.0 - r_sq_reduced) * rho_partial * rho_partial)
}

/// Outcome of a feasibility check on a joint covariance.
#[derive(Clone, Debug, Serialize)]
pub struct FeasibilityReport {
    /// Eigenvalues of the assembled joint covariance, ascending.
    pub eigenvalues: Vec<f64>,
    /// PSD within tolerance: smallest eigenvalue >= -1e-10 * max(1, largest).
    pub is_psd: bool,
    /// `R^2`, present when the covariate block is invertible.
    pub r_squared: Option<f64>,
    /// Human-readable diagnostics for everything that is wrong.
    pub messages: Vec<String>,
}

impl FeasibilityReport {
    /// A design can be sized from this covariance: PSD and `R^2` in [0, 1).
    pub fn is_feasible(&self) -> bool {
        self.is_psd && matches!(self.r_squared, Some(r) if (0.0..1.0).contains(&r))
    }
}

/// Diagnoses whether a joint covariance can back a trial design: assembles
/// the full matrix, checks positive semidefiniteness with a relative
/// tolerance, and reports `R^2` (unclamped, so values `>= 1` show up as the
/// infeasibility they are).
pub fn check_feasibility(cov: &JointCovariance) -> FeasibilityReport {
    let full = cov.assemble();
    let eig = full.symmetric_eigen();
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    let lambda_min = eigenvalues[0];
    let lambda_max = eigenvalues[eigenvalues.len() - 1];
    let is_psd = lambda_min >= -1e-10 * lambda_max.max(1.0);

    let mut messages = Vec::new();
    if !is_psd {
        messages.push(format!(
            "joint covariance is not positive semidefinite: smallest eigenvalue \
             {lambda_min:.6e}"
        ));
    }

    let r_squared = match r_squared_from_covariance(cov) {
        Ok(r) => {
            if r >= 1.0 {
                messages.push(format!(
                    "R² = {r:.3} is not below 1: the implied residual variance \
                     σ²(1 − R²) is nonpositive and no sample size exists"
                ));
            }
            Some(r)
        }
        Err(e) => {
            messages.push(format!("{e}"));
            None
        }
    };

    FeasibilityReport {
        eigenvalues,
        is_psd,
        r_squared,
        messages,
    }
}

/// Allocation ratio `n2 : n1` stored as a reduced integer ratio `r2 : r1`.
///
/// Rounded totals are multiples of `r1 + r2`, so group sizes are exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Allocation {
    r1: u32,
    r2: u32,
}

impl Allocation {
    pub const ONE_TO_ONE: Allocation = Allocation { r1: 1, r2: 1 };

    /// Builds the ratio `n2 : n1 = r2 : r1`, reducing to lowest terms.
    /// Errors: a zero component.
    pub fn from_ratio(r2: u32, r1: u32) -> Result<Self> {
        if r1 == 0 || r2 == 0 {
            return Err(Error::Domain(
                "allocation ratio components must be positive integers".into(),
            ));
        }
        let g = gcd(r1, r2);
        Ok(Self {
            r1: r1 / g,
            r2: r2 / g,
        })
    }

    /// Parses `"r2:r1"`, e.g. `"1:1"` or `"2:1"` (twice as many in group 2).
    pub fn parse(text: &str) -> Result<Self> {
        let (a, b) = text
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("allocation ratio must look like 2:1, got {text:?}")))?;
        let r2: u32 = a
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("allocation ratio component {a:?} is not a positive integer")))?;
        let r1: u32 = b
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("allocation ratio component {b:?} is not a positive integer")))?;
        Self::from_ratio(r2, r1)
    }

    pub fn r1(&self) -> u32 {
        self.r1
    }

    pub fn r2(&self) -> u32 {
        self.r2
    }

    /// The ratio as a real number `gamma = n2 / n1`.
    pub fn gamma(&self) -> f64 {
        f64::from(self.r2) / f64::from(self.r1)
    }

    /// Grid step for totals: `r1 + r2`.
    pub fn grid(&self) -> u64 {
        u64::from(self.r1) + u64::from(self.r2)
    }

    /// Splits a total that is a multiple of the grid into `(n1, n2)`.
    pub fn split(&self, n_total: u64) -> (u64, u64) {
        debug_assert_eq!(n_total % self.grid(), 0);
        let unit = n_total / self.grid();
        (unit * u64::from(self.r1), unit * u64::from(self.r2))
    }
}

impl std::fmt::Display for Allocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.r2, self.r1)
    }
}

impl Serialize for Allocation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Allocation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Allocation::parse(&text).map_err(serde::de::Error::custom)
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Fixed design parameters of the two-arm superiority comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DesignSchema", into = "DesignSchema")]
pub struct DesignSpec {
    delta: f64,
    gamma: Allocation,
    alpha: f64,
    beta: f64,
    c: usize,
}

/// Wire format: `{"delta": .., "gamma": "1:1", "alpha": .., "beta": .., "c": ..}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct DesignSchema {
    delta: f64,
    #[serde(default = "default_gamma")]
    gamma: Allocation,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_beta")]
    beta: f64,
    c: usize,
}

fn default_gamma() -> Allocation {
    Allocation::ONE_TO_ONE
}

fn default_alpha() -> f64 {
    0.05
}

fn default_beta() -> f64 {
    0.2
}

impl TryFrom<DesignSchema> for DesignSpec {
    type Error = Error;

    fn try_from(s: DesignSchema) -> Result<Self> {
        DesignSpec::new(s.delta, s.gamma, s.alpha, s.beta, s.c)
    }
}

impl From<DesignSpec> for DesignSchema {
    fn from(v: DesignSpec) -> Self {
        DesignSchema {
            delta: v.delta,
            gamma: v.gamma,
            alpha: v.alpha,
            beta: v.beta,
            c: v.c,
        }
    }
}

impl DesignSpec {
    /// Errors: nonpositive `delta`, `alpha` or `beta` outside (0, 1), or
    /// `alpha + beta >= 1` (the design would demand power below the level).
    pub fn new(delta: f64, gamma: Allocation, alpha: f64, beta: f64, c: usize) -> Result<Self> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(Error::Domain(format!(
                "superiority margin delta must be positive, got {delta}"
            )));
        }
        if !alpha.is_finite() || !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
            return Err(Error::Domain(format!(
                "alpha must lie strictly inside (0, 1), got {alpha}"
            )));
        }
        if !beta.is_finite() || !(0.0..1.0).contains(&beta) || beta == 0.0 {
            return Err(Error::Domain(format!(
                "beta must lie strictly inside (0, 1), got {beta}"
            )));
        }
        if alpha + beta >= 1.0 {
            return Err(Error::Domain(format!(
                "alpha + beta must stay below 1, got {alpha} + {beta}"
            )));
        }
        Ok(Self {
            delta,
            gamma,
            alpha,
            beta,
            c,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn gamma(&self) -> Allocation {
        self.gamma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Number of covariates adjusted for in the analysis.
    pub fn c(&self) -> usize {
        self.c
    }

    pub fn with_c(mut self, c: usize) -> Self {
        self.c = c;
        self
    }
}
