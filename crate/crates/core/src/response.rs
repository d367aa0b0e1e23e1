//! Response functions: the fixed distribution function F linking the latent
//! scale to exceedance probabilities, together with its density, the density
//! derivative, the quantile function, and the moment constants that appear in
//! the linear-difficulty mean/variance identities.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74; // ln(sqrt(2*pi))

/// The response function F. Both choices are strictly increasing, continuous,
/// and symmetric about zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseFunctionKind {
    Normal,
    Logistic,
}

/// Moment constants of F: the expectation and variance of a random variable
/// with distribution function F.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentConstants {
    pub e_f: f64,
    pub var_f: f64,
}

impl ResponseFunctionKind {
    /// Distribution function F(x). Accepts +-infinity.
    pub fn cdf(self, x: f64) -> f64 {
        match self {
            ResponseFunctionKind::Normal => normal_cdf(x),
            ResponseFunctionKind::Logistic => logistic_cdf(x),
        }
    }

    /// Survival function 1 - F(x), computed without cancellation in the
    /// upper tail.
    pub fn survival(self, x: f64) -> f64 {
        match self {
            ResponseFunctionKind::Normal => normal_cdf(-x),
            ResponseFunctionKind::Logistic => logistic_cdf(-x),
        }
    }

    /// Density f(x) = dF/dx.
    pub fn pdf(self, x: f64) -> f64 {
        match self {
            ResponseFunctionKind::Normal => {
                if x.abs() > 40.0 {
                    0.0
                } else {
                    (-0.5 * x * x - LN_SQRT_2PI).exp()
                }
            }
            ResponseFunctionKind::Logistic => {
                let p = logistic_cdf(x);
                p * (1.0 - p)
            }
        }
    }

    /// log f(x), finite for any finite x.
    pub fn log_pdf(self, x: f64) -> f64 {
        match self {
            ResponseFunctionKind::Normal => -0.5 * x * x - LN_SQRT_2PI,
            ResponseFunctionKind::Logistic => {
                // log[e^{-|x|} / (1 + e^{-|x|})^2], symmetric in x
                let a = -x.abs();
                a - 2.0 * a.exp().ln_1p()
            }
        }
    }

    /// Density derivative f'(x) = d^2 F / dx^2.
    pub fn pdf_deriv(self, x: f64) -> f64 {
        match self {
            ResponseFunctionKind::Normal => -x * self.pdf(x),
            ResponseFunctionKind::Logistic => {
                let p = logistic_cdf(x);
                p * (1.0 - p) * (1.0 - 2.0 * p)
            }
        }
    }

    /// Ratio f'(x)/f(x), stable for large |x| where both factors underflow.
    pub fn log_pdf_deriv(self, x: f64) -> f64 {
        match self {
            ResponseFunctionKind::Normal => -x,
            ResponseFunctionKind::Logistic => 1.0 - 2.0 * logistic_cdf(x),
        }
    }

    /// Quantile function F^{-1}(p) for p in (0, 1).
    pub fn quantile(self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
        Ok(match self {
            ResponseFunctionKind::Normal => normal_quantile(p),
            ResponseFunctionKind::Logistic => (p / (1.0 - p)).ln(),
        })
    }

    /// E_F and var_F. The logistic is kept at its standard scale.
    pub fn moments(self) -> MomentConstants {
        match self {
            ResponseFunctionKind::Normal => MomentConstants { e_f: 0.0, var_f: 1.0 },
            ResponseFunctionKind::Logistic => MomentConstants {
                e_f: 0.0,
                var_f: std::f64::consts::PI.powi(2) / 3.0,
            },
        }
    }

    /// CDF with NaN rejection, for values arriving from user input.
    pub fn checked_cdf(self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::NotANumber);
        }
        Ok(self.cdf(x))
    }

    /// PDF with NaN rejection.
    pub fn checked_pdf(self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::NotANumber);
        }
        Ok(self.pdf(x))
    }

    /// PDF derivative with NaN rejection.
    pub fn checked_pdf_deriv(self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::NotANumber);
        }
        Ok(self.pdf_deriv(x))
    }
}

fn normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x / SQRT_2)
}

fn logistic_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse standard normal CDF: Acklam's rational approximation polished by
/// one Newton step against the erfc-based CDF.
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Newton polish against the erfc-based CDF. The residual is formed on
    // whichever tail keeps relative accuracy: F(x) for p <= 1/2, the
    // survival function for p > 1/2.
    let mut x = x;
    for _ in 0..2 {
        let d = (-0.5 * x * x - LN_SQRT_2PI).exp();
        if d <= 0.0 {
            break;
        }
        if p <= 0.5 {
            x -= (normal_cdf(x) - p) / d;
        } else {
            let q = 1.0 - p;
            x += (normal_cdf(-x) - q) / d;
        }
    }
    x
}
