//! Closed-form total sample sizes for the covariate-adjusted two-arm
//! superiority comparison.
//!
//! Four nested approximations are provided. With `q = z_{1-alpha/2} +
//! z_{1-beta}` and allocation ratio `gamma = n2/n1`:
//!
//! - basic: `N_basic = ((gamma+1)^2 / gamma) * q^2 * sigma_y_sq * (1 - R^2) / delta^2`
//! - z-corrected: `N_basic + z_{1-alpha/2}^2 / 2` (compensates the normal
//!   approximation to the t test)
//! - df-corrected: `N_basic * (N_basic - 2) / (N_basic - 2 - c)` (compensates
//!   the `c` residual degrees of freedom spent on covariates)
//! - z+df-corrected: df correction first, then the additive z term.
//!
//! The df correction obeys the exact rewrite
//! `N_df = N_basic + c + (c^2 + 2c) / (N_basic - 2 - c)`, so for `c >= 2` at
//! the usual 5% two-sided level it always exceeds the z correction: adjusting
//! for two or more covariates costs more than the normal-vs-t gap.

use serde::{Deserialize, Serialize};

use crate::design::{Allocation, DesignSpec};
use crate::distributions::std_normal_quantile;
use crate::error::{Error, Result};

/// Which approximation produced a sizing result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizingMethod {
    Basic,
    ZCorrected,
    DfCorrected,
    ZDfCorrected,
}

impl SizingMethod {
    pub const ALL: [SizingMethod; 4] = [
        SizingMethod::Basic,
        SizingMethod::ZCorrected,
        SizingMethod::DfCorrected,
        SizingMethod::ZDfCorrected,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            SizingMethod::Basic => "basic",
            SizingMethod::ZCorrected => "z",
            SizingMethod::DfCorrected => "df",
            SizingMethod::ZDfCorrected => "z-df",
        }
    }
}

impl std::fmt::Display for SizingMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A raw formula value together with its allocation-rounded group sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SizingResult {
    pub method: SizingMethod,
    /// Formula value before any rounding.
    pub n_raw: f64,
    /// Smallest multiple of `r1 + r2` at or above `ceil(n_raw)`.
    pub n_total: u64,
    pub n1: u64,
    pub n2: u64,
}

fn validate_variance_inputs(sigma_y_sq: f64, r_squared: f64) -> Result<()> {
    if !sigma_y_sq.is_finite() || sigma_y_sq <= 0.0 {
        return Err(Error::Domain(format!(
            "outcome variance must be positive and finite, got {sigma_y_sq}"
        )));
    }
    if !r_squared.is_finite() || r_squared < 0.0 {
        return Err(Error::Domain(format!(
            "R² must be a finite nonnegative number, got {r_squared}"
        )));
    }
    if r_squared >= 1.0 {
        return Err(Error::Infeasible(format!(
            "R² = {r_squared:.3} is not below 1, so the residual variance \
             σ²(1 − R²) is nonpositive and no finite sample size exists; this \
             usually means the joint covariance of outcome and covariates was \
             specified blockwise and is not positive semidefinite"
        )));
    }
    Ok(())
}

/// Basic normal-approximation total sample size (both groups combined).
///
/// Errors: invalid variance inputs, `r_squared >= 1` (infeasible design).
pub fn n_basic(design: &DesignSpec, sigma_y_sq: f64, r_squared: f64) -> Result<f64> {
    validate_variance_inputs(sigma_y_sq, r_squared)?;
    let gamma = design.gamma().gamma();
    let z_a = std_normal_quantile(1.0 - design.alpha() / 2.0)?;
    let z_b = std_normal_quantile(1.0 - design.beta())?;
    let q = z_a + z_b;
    Ok((gamma + 1.0) * (gamma + 1.0) / gamma * q * q * sigma_y_sq * (1.0 - r_squared)
        / (design.delta() * design.delta()))
}

/// Basic size plus `z_{1-alpha/2}^2 / 2`, the guard against the normal
/// approximation understating the t test.
pub fn n_z_corrected(design: &DesignSpec, sigma_y_sq: f64, r_squared: f64) -> Result<f64> {
    let z_a = std_normal_quantile(1.0 - design.alpha() / 2.0)?;
    Ok(n_basic(design, sigma_y_sq, r_squared)? + 0.5 * z_a * z_a)
}

/// Basic size inflated for the `c` degrees of freedom the analysis spends on
/// covariates: `N * (N - 2) / (N - 2 - c)`.
///
/// Errors: `n_basic <= c + 2`, where the correction blows up (the design is
/// too small to adjust for `c` covariates).
pub fn n_df_corrected(design: &DesignSpec, sigma_y_sq: f64, r_squared: f64) -> Result<f64> {
    let base = n_basic(design, sigma_y_sq, r_squared)?;
    apply_df_correction(base, design.c())
}

/// df correction first, then the additive z term: the recommended planning
/// formula, tracking the empirically exact size most closely.
pub fn n_z_df_corrected(design: &DesignSpec, sigma_y_sq: f64, r_squared: f64) -> Result<f64> {
    let z_a = std_normal_quantile(1.0 - design.alpha() / 2.0)?;
    Ok(n_df_corrected(design, sigma_y_sq, r_squared)? + 0.5 * z_a * z_a)
}

fn apply_df_correction(n_basic: f64, c: usize) -> Result<f64> {
    let c = c as f64;
    if n_basic - 2.0 - c <= 0.0 {
        return Err(Error::Infeasible(format!(
            "degrees-of-freedom correction is undefined: basic size {n_basic:.2} \
             does not exceed c + 2 = {}; the effect is too large relative to \
             the residual variance to support {c} covariates",
            c + 2.0
        )));
    }
    Ok(n_basic * (n_basic - 2.0) / (n_basic - 2.0 - c))
}

/// Rounds a raw total up to the allocation grid: the smallest integer at or
/// above `ceil(n_raw)` divisible by `r1 + r2`, split exactly into groups.
///
/// Errors: nonpositive or non-finite `n_raw`.
pub fn round_to_allocation(n_raw: f64, gamma: Allocation) -> Result<(u64, u64, u64)> {
    if !n_raw.is_finite() || n_raw <= 0.0 {
        return Err(Error::Domain(format!(
            "total sample size must be positive and finite, got {n_raw}"
        )));
    }
    let ceil = n_raw.ceil() as u64;
    let grid = gamma.grid();
    let n_total = ceil.div_ceil(grid) * grid;
    let (n1, n2) = gamma.split(n_total);
    Ok((n_total, n1, n2))
}

/// Evaluates one sizing method and rounds it to the allocation grid.
pub fn size_with(
    method: SizingMethod,
    design: &DesignSpec,
    sigma_y_sq: f64,
    r_squared: f64,
) -> Result<SizingResult> {
    let n_raw = match method {
        SizingMethod::Basic => n_basic(design, sigma_y_sq, r_squared)?,
        SizingMethod::ZCorrected => n_z_corrected(design, sigma_y_sq, r_squared)?,
        SizingMethod::DfCorrected => n_df_corrected(design, sigma_y_sq, r_squared)?,
        SizingMethod::ZDfCorrected => n_z_df_corrected(design, sigma_y_sq, r_squared)?,
    };
    let (n_total, n1, n2) = round_to_allocation(n_raw, design.gamma())?;
    Ok(SizingResult {
        method,
        n_raw,
        n_total,
        n1,
        n2,
    })
}

/// All four methods side by side, in increasing order of correction.
pub fn plan_all(design: &DesignSpec, sigma_y_sq: f64, r_squared: f64) -> Result<Vec<SizingResult>> {
    SizingMethod::ALL
        .iter()
        .map(|&m| size_with(m, design, sigma_y_sq, r_squared))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn design(delta: f64, gamma: (u32, u32), alpha: f64, beta: f64, c: usize) -> DesignSpec {
        DesignSpec::new(
            delta,
            Allocation::from_ratio(gamma.0, gamma.1).unwrap(),
            alpha,
            beta,
            c,
        )
        .unwrap()
    }

    #[test]
    fn basic_size_reference_value() {
        // Unadjusted comparison, balanced: 4 * (z_{.975} + z_{.8})^2 / 0.25.
        let d = design(0.5, (1, 1), 0.05, 0.2, 0);
        assert_abs_diff_eq!(n_basic(&d, 1.0, 0.0).unwrap(), 125.58, epsilon = 0.005);
    }

    #[test]
    fn z_correction_adds_half_squared_quantile() {
        let d = design(0.5, (1, 1), 0.05, 0.2, 0);
        let raw = n_z_corrected(&d, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(raw, 127.50, epsilon = 0.005);
        let (n_total, n1, n2) = round_to_allocation(raw, d.gamma()).unwrap();
        assert_eq!((n_total, n1, n2), (128, 64, 64));
    }

    #[test]
    fn df_correction_reference_value() {
        // Two covariates explaining a third of the outcome variance.
        let d = design(0.5, (1, 1), 0.05, 0.2, 2);
        let base = n_basic(&d, 1.0, 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(base, 83.72, epsilon = 0.005);
        let corrected = n_df_corrected(&d, 1.0, 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(corrected, 85.82, epsilon = 0.005);
        let (n_total, _, _) = round_to_allocation(corrected, d.gamma()).unwrap();
        assert_eq!(n_total, 86);
    }

    #[test]
    fn z_df_correction_reference_value() {
        let d = design(0.5, (1, 1), 0.05, 0.2, 2);
        let raw = n_z_df_corrected(&d, 1.0, 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(raw, 87.74, epsilon = 0.005);
        let (n_total, _, _) = round_to_allocation(raw, d.gamma()).unwrap();
        assert_eq!(n_total, 88);
    }

    #[test]
    fn rounding_lands_on_the_allocation_grid() {
        let one_to_one = Allocation::ONE_TO_ONE;
        assert_eq!(round_to_allocation(62.8, one_to_one).unwrap(), (64, 32, 32));
        assert_eq!(round_to_allocation(64.0, one_to_one).unwrap(), (64, 32, 32));

        let two_to_one = Allocation::from_ratio(2, 1).unwrap();
        assert_eq!(round_to_allocation(63.0, two_to_one).unwrap(), (63, 21, 42));
        assert_eq!(round_to_allocation(64.0, two_to_one).unwrap(), (66, 22, 44));

        assert!(round_to_allocation(0.0, one_to_one).is_err());
        assert!(round_to_allocation(f64::NAN, one_to_one).is_err());
    }

    #[test]
    fn infeasible_r_squared_is_rejected_with_explanation() {
        let d = design(0.5, (1, 1), 0.05, 0.2, 2);
        let err = n_basic(&d, 1.0, 1.4).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
        assert!(err.to_string().contains("positive semidefinite"));
        assert!(n_basic(&d, 1.0, -0.1).is_err());
        assert!(n_basic(&d, 0.0, 0.3).is_err());
    }

    #[test]
    fn df_correction_rejects_tiny_basic_sizes() {
        // Huge effect: basic size below c + 2.
        let d = design(5.0, (1, 1), 0.05, 0.2, 2);
        assert!(n_basic(&d, 1.0, 0.0).unwrap() < 4.0);
        assert!(matches!(
            n_df_corrected(&d, 1.0, 0.0),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn plan_all_orders_methods_and_preserves_ordering() {
        let d = design(0.5, (2, 1), 0.05, 0.2, 2);
        let plans = plan_all(&d, 1.0, 0.25).unwrap();
        assert_eq!(plans.len(), 4);
        assert!(plans[0].n_raw < plans[1].n_raw);
        assert!(plans[0].n_raw < plans[2].n_raw);
        assert!(plans[2].n_raw < plans[3].n_raw);
        for p in &plans {
            assert_eq!(p.n_total % 3, 0);
            assert_eq!(p.n2, 2 * p.n1);
            assert!(p.n_total as f64 >= p.n_raw);
            assert!((p.n_total as f64) < p.n_raw + 3.0 + 1.0);
        }
    }

    proptest! {
        /// The df correction satisfies its exact algebraic rewrite, and for
        /// c >= 2 at the 5% level it dominates the z correction.
        #[test]
        fn df_rewrite_identity_holds(
            delta in 0.05f64..2.0,
            sigma in 0.1f64..10.0,
            r_sq in 0.0f64..0.95,
            c in 0usize..=5,
            r1 in 1u32..=4,
            r2 in 1u32..=4,
        ) {
            let d = design(delta, (r2, r1), 0.05, 0.2, c);
            let base = n_basic(&d, sigma, r_sq).unwrap();
            prop_assume!(base > c as f64 + 2.5);
            let lhs = n_df_corrected(&d, sigma, r_sq).unwrap();
            let cf = c as f64;
            let rhs = base + cf + (cf * cf + 2.0 * cf) / (base - 2.0 - cf);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0));
            if c >= 2 {
                let zc = n_z_corrected(&d, sigma, r_sq).unwrap();
                prop_assert!(lhs > zc);
            }
        }

        /// Rounded totals sit on the grid, at or above the raw value, and
        /// within one grid step of it.
        #[test]
        fn rounding_is_tight(n_raw in 0.1f64..5e5, r1 in 1u32..=5, r2 in 1u32..=5) {
            let gamma = Allocation::from_ratio(r2, r1).unwrap();
            let (n_total, n1, n2) = round_to_allocation(n_raw, gamma).unwrap();
            let grid = gamma.grid();
            prop_assert_eq!(n_total % grid, 0);
            prop_assert_eq!(n1 + n2, n_total);
            prop_assert_eq!(n1 * u64::from(gamma.r2()), n2 * u64::from(gamma.r1()));
            prop_assert!(n_total as f64 >= n_raw);
            prop_assert!(n_total < n_raw.ceil() as u64 + grid);
        }

        /// Sizes shrink in delta and grow in variance and R²-lost precision.
        #[test]
        fn monotonicities(
            delta in 0.1f64..1.5,
            sigma in 0.2f64..5.0,
            r_sq in 0.0f64..0.9,
        ) {
            let d = design(delta, (1, 1), 0.05, 0.2, 2);
            let n = n_basic(&d, sigma, r_sq).unwrap();
            let d_bigger = design(delta * 1.1, (1, 1), 0.05, 0.2, 2);
            prop_assert!(n_basic(&d_bigger, sigma, r_sq).unwrap() < n);
            prop_assert!(n_basic(&d, sigma * 1.1, r_sq).unwrap() > n);
            if r_sq > 0.0 {
                prop_assert!(n_basic(&d, sigma, r_sq * 0.9).unwrap() > n);
            }
        }
    }
}
