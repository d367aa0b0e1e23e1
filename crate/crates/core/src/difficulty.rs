//! Item difficulty functions: monotone functions on the item support that
//! replace scalar difficulty parameters. Five families are supported, each
//! with evaluation, derivative, inverse, and a bijection onto an
//! unconstrained parameter vector used by the optimizer.

use crate::data::SupportKind;
use crate::error::{Error, Result};
use crate::response::ResponseFunctionKind;
use crate::spline::BSplineBasis;
use serde::{Deserialize, Serialize};

/// Floor applied to zero adjacent spline-coefficient differences in the
/// log-difference map, keeping the continuous-branch derivative positive.
pub const FLAT_DIFF_FLOOR: f64 = 1e-8;

/// A parameterized, monotone item difficulty function.
///
/// `Linear`, `Log`, `LogPlusOne`, and `InverseCdf` are two-parameter families
/// `intercept + slope * g(y)` with slope > 0. `FreeOrdinal` holds one
/// strictly increasing threshold per category boundary of a finite discrete
/// support. `BSpline` expands the function in a B-spline basis with
/// nondecreasing coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DifficultyFunction {
    /// intercept + slope * y
    Linear { intercept: f64, slope: f64 },
    /// intercept + slope * ln(y), for strictly positive responses
    Log { intercept: f64, slope: f64 },
    /// intercept + slope * ln(1 + y), for counts
    LogPlusOne { intercept: f64, slope: f64 },
    /// intercept + slope * F^{-1}((y - lower) / (upper - lower)), for
    /// responses confined to a bounded interval
    InverseCdf {
        intercept: f64,
        slope: f64,
        kind: ResponseFunctionKind,
        lower: f64,
        upper: f64,
    },
    /// one strictly increasing threshold per category boundary r = 0..k-2;
    /// the top category maps to +infinity
    FreeOrdinal { thresholds: Vec<f64> },
    /// basis expansion with nondecreasing coefficients, extended linearly
    /// beyond the knot range
    BSpline {
        basis: BSplineBasis,
        coefficients: Vec<f64>,
    },
}

impl DifficultyFunction {
    /// Validates the monotonicity constraints of the family.
    pub fn validate(&self) -> Result<()> {
        match self {
            DifficultyFunction::Linear { slope, .. }
            | DifficultyFunction::Log { slope, .. }
            | DifficultyFunction::LogPlusOne { slope, .. }
            | DifficultyFunction::InverseCdf { slope, .. } => {
                if !(*slope > 0.0) {
                    return Err(Error::NonMonotoneInput(format!(
                        "slope must be positive, got {slope}"
                    )));
                }
            }
            DifficultyFunction::FreeOrdinal { thresholds } => {
                if thresholds.is_empty() {
                    return Err(Error::NonMonotoneInput(
                        "at least one threshold is required".into(),
                    ));
                }
                for w in thresholds.windows(2) {
                    if !(w[0] < w[1]) {
                        return Err(Error::NonMonotoneInput(format!(
                            "thresholds must be strictly increasing, got {} then {}",
                            w[0], w[1]
                        )));
                    }
                }
            }
            DifficultyFunction::BSpline {
                basis,
                coefficients,
            } => {
                if coefficients.len() != basis.n_basis {
                    return Err(Error::InvalidConfig(format!(
                        "{} coefficients for a basis of {} functions",
                        coefficients.len(),
                        basis.n_basis
                    )));
                }
                for w in coefficients.windows(2) {
                    if w[0] > w[1] {
                        return Err(Error::NonMonotoneInput(format!(
                            "spline coefficients must be nondecreasing, got {} then {}",
                            w[0], w[1]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Evaluates the difficulty at `y`. Values outside the family's domain
    /// map to the appropriate infinite limit; `FreeOrdinal` returns
    /// +infinity at and above the top category.
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            DifficultyFunction::Linear { intercept, slope } => intercept + slope * y,
            DifficultyFunction::Log { intercept, slope } => {
                if y <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    intercept + slope * y.ln()
                }
            }
            DifficultyFunction::LogPlusOne { intercept, slope } => {
                if y <= -1.0 {
                    f64::NEG_INFINITY
                } else {
                    intercept + slope * y.ln_1p()
                }
            }
            DifficultyFunction::InverseCdf {
                intercept,
                slope,
                kind,
                lower,
                upper,
            } => {
                let u = (y - lower) / (upper - lower);
                if u <= 0.0 {
                    f64::NEG_INFINITY
                } else if u >= 1.0 {
                    f64::INFINITY
                } else {
                    intercept + slope * kind.quantile(u).expect("u in (0,1)")
                }
            }
            DifficultyFunction::FreeOrdinal { thresholds } => {
                if y < -0.5 {
                    return f64::NEG_INFINITY;
                }
                let r = y.round() as usize;
                if r < thresholds.len() {
                    thresholds[r]
                } else {
                    f64::INFINITY
                }
            }
            DifficultyFunction::BSpline {
                basis,
                coefficients,
            } => {
                let (values, _) = basis.eval_extended(y);
                dot(coefficients, &values)
            }
        }
    }

    /// Derivative d delta / dy for the continuous-branch families.
    pub fn eval_deriv(&self, y: f64) -> Result<f64> {
        Ok(match self {
            DifficultyFunction::Linear { slope, .. } => *slope,
            DifficultyFunction::Log { slope, .. } => slope / y,
            DifficultyFunction::LogPlusOne { slope, .. } => slope / (1.0 + y),
            DifficultyFunction::InverseCdf {
                slope,
                kind,
                lower,
                upper,
                ..
            } => {
                let u = (y - lower) / (upper - lower);
                let q = kind.quantile(u)?;
                slope / (kind.pdf(q) * (upper - lower))
            }
            DifficultyFunction::FreeOrdinal { .. } => return Err(Error::NotDifferentiable),
            DifficultyFunction::BSpline {
                basis,
                coefficients,
            } => {
                let (_, derivs) = basis.eval_extended(y);
                dot(coefficients, &derivs)
            }
        })
    }

    /// Inverse of a strictly increasing continuous family: the `y` with
    /// eval(y) = t.
    pub fn invert(&self, t: f64) -> Result<f64> {
        match self {
            DifficultyFunction::Linear { intercept, slope } => Ok((t - intercept) / slope),
            DifficultyFunction::Log { intercept, slope } => Ok(((t - intercept) / slope).exp()),
            DifficultyFunction::LogPlusOne { intercept, slope } => {
                Ok(((t - intercept) / slope).exp_m1())
            }
            DifficultyFunction::InverseCdf {
                intercept,
                slope,
                kind,
                lower,
                upper,
            } => {
                let u = kind.cdf((t - intercept) / slope);
                Ok(lower + u * (upper - lower))
            }
            DifficultyFunction::FreeOrdinal { .. } => Err(Error::NotDifferentiable),
            DifficultyFunction::BSpline { basis, .. } => self.invert_spline(basis, t),
        }
    }

    fn invert_spline(&self, basis: &BSplineBasis, t: f64) -> Result<f64> {
        let (mut lo, mut hi) = (basis.lower, basis.upper);
        let v_lo = self.eval(lo);
        let v_hi = self.eval(hi);
        if t < v_lo {
            // linear extension below the knot range
            let d = self.eval_deriv(lo)?;
            if d <= 0.0 {
                return Err(Error::OutOfRange(t));
            }
            return Ok(lo + (t - v_lo) / d);
        }
        if t > v_hi {
            let d = self.eval_deriv(hi)?;
            if d <= 0.0 {
                return Err(Error::OutOfRange(t));
            }
            return Ok(hi + (t - v_hi) / d);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < t {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * (1.0 + mid.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Number of constrained coefficients.
    pub fn param_count(&self) -> usize {
        match self {
            DifficultyFunction::Linear { .. }
            | DifficultyFunction::Log { .. }
            | DifficultyFunction::LogPlusOne { .. }
            | DifficultyFunction::InverseCdf { .. } => 2,
            DifficultyFunction::FreeOrdinal { thresholds } => thresholds.len(),
            DifficultyFunction::BSpline { coefficients, .. } => coefficients.len(),
        }
    }

    /// The constrained coefficient vector c such that
    /// delta(y) = sum_j c_j * B_j(y) with the family's basis functions.
    pub fn coefficients(&self) -> Vec<f64> {
        match self {
            DifficultyFunction::Linear { intercept, slope }
            | DifficultyFunction::Log { intercept, slope }
            | DifficultyFunction::LogPlusOne { intercept, slope }
            | DifficultyFunction::InverseCdf {
                intercept, slope, ..
            } => vec![*intercept, *slope],
            DifficultyFunction::FreeOrdinal { thresholds } => thresholds.clone(),
            DifficultyFunction::BSpline { coefficients, .. } => coefficients.clone(),
        }
    }

    /// Basis values and basis derivatives at `y`, one entry per constrained
    /// coefficient. Every family is linear in its coefficients, so the
    /// score machinery only needs these two vectors.
    ///
    /// For `FreeOrdinal` the "basis" is the indicator of the evaluated
    /// category and the derivative entries are unused; the top category has
    /// an all-zero row (its difficulty is fixed at +infinity).
    pub fn basis_at(&self, y: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            DifficultyFunction::Linear { .. } => (vec![1.0, y], vec![0.0, 1.0]),
            DifficultyFunction::Log { .. } => (vec![1.0, y.ln()], vec![0.0, 1.0 / y]),
            DifficultyFunction::LogPlusOne { .. } => {
                (vec![1.0, y.ln_1p()], vec![0.0, 1.0 / (1.0 + y)])
            }
            DifficultyFunction::InverseCdf {
                kind, lower, upper, ..
            } => {
                let width = upper - lower;
                let u = (y - lower) / width;
                let q = kind.quantile(u).expect("interior support value");
                (vec![1.0, q], vec![0.0, 1.0 / (kind.pdf(q) * width)])
            }
            DifficultyFunction::FreeOrdinal { thresholds } => {
                let mut b = vec![0.0; thresholds.len()];
                let r = y.round();
                if r >= 0.0 && (r as usize) < thresholds.len() {
                    b[r as usize] = 1.0;
                }
                let d = vec![0.0; thresholds.len()];
                (b, d)
            }
            DifficultyFunction::BSpline { basis, .. } => basis.eval_extended(y),
        }
    }

    /// Maps the constrained parameters onto an unconstrained vector:
    /// (intercept, ln slope) for the two-parameter families, the first value
    /// followed by log-differences for the ordered families. Zero spline
    /// differences are floored at [`FLAT_DIFF_FLOOR`].
    pub fn to_unconstrained(&self) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(match self {
            DifficultyFunction::Linear { intercept, slope }
            | DifficultyFunction::Log { intercept, slope }
            | DifficultyFunction::LogPlusOne { intercept, slope }
            | DifficultyFunction::InverseCdf {
                intercept, slope, ..
            } => vec![*intercept, slope.ln()],
            DifficultyFunction::FreeOrdinal { thresholds } => {
                let mut out = Vec::with_capacity(thresholds.len());
                out.push(thresholds[0]);
                for w in thresholds.windows(2) {
                    out.push((w[1] - w[0]).ln());
                }
                out
            }
            DifficultyFunction::BSpline { coefficients, .. } => {
                let mut out = Vec::with_capacity(coefficients.len());
                out.push(coefficients[0]);
                for w in coefficients.windows(2) {
                    out.push((w[1] - w[0]).max(FLAT_DIFF_FLOOR).ln());
                }
                out
            }
        })
    }

    /// Rebuilds a function of the same shape from an unconstrained vector.
    pub fn from_unconstrained(&self, params: &[f64]) -> Self {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        match self {
            DifficultyFunction::Linear { .. } => DifficultyFunction::Linear {
                intercept: params[0],
                slope: params[1].exp(),
            },
            DifficultyFunction::Log { .. } => DifficultyFunction::Log {
                intercept: params[0],
                slope: params[1].exp(),
            },
            DifficultyFunction::LogPlusOne { .. } => DifficultyFunction::LogPlusOne {
                intercept: params[0],
                slope: params[1].exp(),
            },
            DifficultyFunction::InverseCdf {
                kind,
                lower,
                upper,
                ..
            } => DifficultyFunction::InverseCdf {
                intercept: params[0],
                slope: params[1].exp(),
                kind: *kind,
                lower: *lower,
                upper: *upper,
            },
            DifficultyFunction::FreeOrdinal { .. } => DifficultyFunction::FreeOrdinal {
                thresholds: cumulative(params),
            },
            DifficultyFunction::BSpline { basis, .. } => DifficultyFunction::BSpline {
                basis: basis.clone(),
                coefficients: cumulative(params),
            },
        }
    }
}

/// Difficulty evaluated with support awareness: on a finite discrete support
/// the top category always has infinite difficulty (exceeding it is
/// impossible), whatever the family says.
pub fn threshold_in_support(support: &SupportKind, f: &DifficultyFunction, y: f64) -> f64 {
    if let Some(k) = support.categories() {
        if y.round() >= (k - 1) as f64 {
            return f64::INFINITY;
        }
    }
    f.eval(y)
}

fn cumulative(params: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.len());
    let mut acc = params[0];
    out.push(acc);
    for p in &params[1..] {
        acc += p.exp();
        out.push(acc);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::build_bspline_basis;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn linear(intercept: f64, slope: f64) -> DifficultyFunction {
        DifficultyFunction::Linear { intercept, slope }
    }

    fn spline_with(coefficients: Vec<f64>) -> DifficultyFunction {
        let basis = build_bspline_basis((0.0, 1.0), coefficients.len(), 3).unwrap();
        DifficultyFunction::BSpline {
            basis,
            coefficients,
        }
    }

    #[test]
    fn eval_direct_formulas() {
        assert_eq!(linear(2.0, 3.0).eval(1.0), 5.0);
        let logp1 = DifficultyFunction::LogPlusOne {
            intercept: 0.0,
            slope: 1.0,
        };
        assert_eq!(logp1.eval(0.0), 0.0);
        assert_abs_diff_eq!(logp1.eval(3.0), 4.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn free_ordinal_top_category_is_infinite() {
        let binary = DifficultyFunction::FreeOrdinal {
            thresholds: vec![0.7],
        };
        assert_eq!(binary.eval(0.0), 0.7);
        assert_eq!(binary.eval(1.0), f64::INFINITY);
    }

    #[test]
    fn derivatives() {
        assert_eq!(linear(0.0, 3.0).eval_deriv(7.7).unwrap(), 3.0);
        let log = DifficultyFunction::Log {
            intercept: 0.0,
            slope: 1.0,
        };
        assert_abs_diff_eq!(log.eval_deriv(2.0).unwrap(), 0.5, epsilon = 1e-15);
        // all-equal coefficients: the function is constant
        let flat = spline_with(vec![2.0; 8]);
        for &y in &[0.0, 0.3, 0.99, 1.0] {
            assert_abs_diff_eq!(flat.eval(y), 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(flat.eval_deriv(y).unwrap(), 0.0, epsilon = 1e-10);
        }
        assert!(matches!(
            DifficultyFunction::FreeOrdinal {
                thresholds: vec![0.0]
            }
            .eval_deriv(0.0),
            Err(Error::NotDifferentiable)
        ));
    }

    #[test]
    fn deriv_matches_finite_difference() {
        let funcs: Vec<DifficultyFunction> = vec![
            linear(-1.0, 2.5),
            DifficultyFunction::Log {
                intercept: 0.5,
                slope: 1.3,
            },
            DifficultyFunction::LogPlusOne {
                intercept: -0.2,
                slope: 0.8,
            },
            DifficultyFunction::InverseCdf {
                intercept: 0.1,
                slope: 1.1,
                kind: ResponseFunctionKind::Normal,
                lower: 0.0,
                upper: 1.0,
            },
            spline_with(vec![-1.0, -0.5, 0.1, 0.2, 0.9, 1.4, 2.0, 3.0]),
        ];
        let h = 1e-6;
        for f in &funcs {
            for i in 1..20 {
                let y = 0.05 + 0.9 * i as f64 / 20.0;
                let fd = (f.eval(y + h) - f.eval(y - h)) / (2.0 * h);
                let an = f.eval_deriv(y).unwrap();
                assert!(
                    (an - fd).abs() <= 1e-6 * an.abs().max(1.0),
                    "{f:?} at {y}: {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn inverse_closed_forms() {
        assert_abs_diff_eq!(linear(2.0, 3.0).invert(5.0).unwrap(), 1.0, epsilon = 1e-15);
        let logp1 = DifficultyFunction::LogPlusOne {
            intercept: 0.0,
            slope: 1.0,
        };
        assert_abs_diff_eq!(
            logp1.invert(4.0f64.ln()).unwrap(),
            3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn spline_inverse_by_bisection() {
        let f = spline_with(vec![-2.0, -1.0, -0.5, 0.2, 0.8, 1.1, 1.15, 2.2]);
        for i in 0..30 {
            let t = -1.9 + 4.0 * i as f64 / 30.0;
            let y = f.invert(t).unwrap();
            assert!(
                (f.eval(y) - t).abs() < 1e-10,
                "residual {} at t = {t}",
                f.eval(y) - t
            );
        }
    }

    #[test]
    fn unconstrained_round_trip_examples() {
        let f = linear(-1.0, 1.0);
        assert_eq!(f.to_unconstrained().unwrap(), vec![-1.0, 0.0]);
        assert_eq!(f.from_unconstrained(&[-1.0, 0.0]), f);

        let ord = DifficultyFunction::FreeOrdinal {
            thresholds: vec![1.0, 2.0, 4.0],
        };
        let u = ord.to_unconstrained().unwrap();
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u[1], 1.0f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(u[2], 2.0f64.ln(), epsilon = 1e-15);
        let back = ord.from_unconstrained(&u);
        for (a, b) in back.coefficients().iter().zip(ord.coefficients()) {
            assert_abs_diff_eq!(a, &b, epsilon = 1e-14);
        }
    }

    #[test]
    fn to_unconstrained_rejects_non_monotone() {
        assert!(linear(0.0, -1.0).to_unconstrained().is_err());
        assert!(DifficultyFunction::FreeOrdinal {
            thresholds: vec![1.0, 0.5]
        }
        .to_unconstrained()
        .is_err());
        assert!(spline_with(vec![0.0, 1.0, 0.5, 2.0, 3.0, 4.0, 5.0, 6.0])
            .to_unconstrained()
            .is_err());
    }

    #[test]
    fn eval_is_coefficient_dot_basis() {
        let funcs: Vec<DifficultyFunction> = vec![
            linear(0.3, 1.7),
            DifficultyFunction::LogPlusOne {
                intercept: -0.4,
                slope: 2.0,
            },
            spline_with(vec![0.0, 0.1, 0.4, 0.5, 0.5, 1.3, 2.0, 2.5]),
        ];
        for f in &funcs {
            let c = f.coefficients();
            for i in 1..10 {
                let y = 0.08 * i as f64;
                let (b, bd) = f.basis_at(y);
                let dotv: f64 = c.iter().zip(&b).map(|(x, y)| x * y).sum();
                let dotd: f64 = c.iter().zip(&bd).map(|(x, y)| x * y).sum();
                assert_abs_diff_eq!(f.eval(y), dotv, epsilon = 1e-12);
                assert_abs_diff_eq!(f.eval_deriv(y).unwrap(), dotd, epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn spline_round_trip_is_tight(raw in proptest::collection::vec(1e-6f64..2.0, 7)) {
            let mut coefficients = vec![-1.0];
            for d in &raw {
                let prev = *coefficients.last().unwrap();
                coefficients.push(prev + d);
            }
            let f = spline_with(coefficients.clone());
            let u = f.to_unconstrained().unwrap();
            let back = f.from_unconstrained(&u);
            for (a, b) in back.coefficients().iter().zip(&coefficients) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn monotone_in_y(
            y1 in 0.01f64..0.99,
            y2 in 0.01f64..0.99,
            intercept in -3.0f64..3.0,
            slope in 0.05f64..4.0,
        ) {
            let (lo, hi) = if y1 < y2 { (y1, y2) } else { (y2, y1) };
            prop_assume!(lo < hi);
            let funcs: Vec<DifficultyFunction> = vec![
                DifficultyFunction::Linear { intercept, slope },
                DifficultyFunction::Log { intercept, slope },
                DifficultyFunction::LogPlusOne { intercept, slope },
                DifficultyFunction::InverseCdf {
                    intercept,
                    slope,
                    kind: ResponseFunctionKind::Logistic,
                    lower: 0.0,
                    upper: 1.0,
                },
            ];
            for f in &funcs {
                prop_assert!(f.eval(lo) < f.eval(hi), "{f:?}");
            }
        }
    }
}
