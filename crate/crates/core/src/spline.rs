//! B-spline basis over an equally spaced knot grid, used by the flexible
//! difficulty-function family. Basis values and first derivatives are
//! evaluated with the Cox-de Boor recursion; outside the knot range every
//! basis function is extended linearly so that difficulty functions built on
//! the basis keep a positive derivative over the whole real line.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub degree: usize,
    pub lower: f64,
    pub upper: f64,
    /// Full knot vector: boundary knots repeated degree+1 times around the
    /// equally spaced interior knots.
    pub knots: Vec<f64>,
    pub n_basis: usize,
}

/// Builds a basis of `n_basis` functions of the given degree over
/// `[lower, upper]` with equally spaced interior knots.
pub fn build_bspline_basis(range: (f64, f64), n_basis: usize, degree: usize) -> Result<BSplineBasis> {
    let (lower, upper) = range;
    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
        return Err(Error::InvalidConfig(format!(
            "spline range ({lower}, {upper}) must be finite with lower < upper"
        )));
    }
    if degree == 0 {
        return Err(Error::InvalidConfig(
            "spline degree must be at least 1".into(),
        ));
    }
    if n_basis < degree + 1 {
        return Err(Error::InvalidConfig(format!(
            "n_basis = {n_basis} is too small for degree {degree}; need at least {}",
            degree + 1
        )));
    }
    let n_interior = n_basis - degree - 1;
    let mut knots = Vec::with_capacity(n_basis + degree + 1);
    for _ in 0..=degree {
        knots.push(lower);
    }
    let step = (upper - lower) / (n_interior + 1) as f64;
    for j in 1..=n_interior {
        knots.push(lower + step * j as f64);
    }
    for _ in 0..=degree {
        knots.push(upper);
    }
    Ok(BSplineBasis {
        degree,
        lower,
        upper,
        knots,
        n_basis,
    })
}

impl BSplineBasis {
    /// Knot span index i with t_i <= y < t_{i+1}; y == upper maps to the
    /// last non-degenerate span.
    fn span(&self, y: f64) -> usize {
        let d = self.degree;
        let n = self.n_basis;
        if y >= self.knots[n] {
            return n - 1;
        }
        let mut lo = d;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if y < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// All basis values at `y` within `[lower, upper]`.
    pub fn eval(&self, y: f64) -> Vec<f64> {
        let (values, _) = self.eval_with_deriv(y);
        values
    }

    /// All basis values and first derivatives at `y` within `[lower, upper]`.
    pub fn eval_with_deriv(&self, y: f64) -> (Vec<f64>, Vec<f64>) {
        let d = self.degree;
        let span = self.span(y);
        let nz = self.nonzero_values(y, span, d);
        let nz_lower = if d >= 1 {
            self.nonzero_values(y, span, d - 1)
        } else {
            vec![]
        };

        let mut values = vec![0.0; self.n_basis];
        let mut derivs = vec![0.0; self.n_basis];
        for (offset, &v) in nz.iter().enumerate() {
            values[span - d + offset] = v;
        }
        // derivative of basis j in degree d from degree d-1 neighbours:
        // d * (N_{j,d-1}/(t_{j+d}-t_j) - N_{j+1,d-1}/(t_{j+d+1}-t_{j+1}))
        for offset in 0..=d {
            let j = span - d + offset;
            let mut acc = 0.0;
            // N_{j,d-1} is nonzero for j in span-(d-1)..=span
            let lower_val = |jj: usize| -> f64 {
                if jj + d >= 1 && jj >= span.saturating_sub(d - 1) && jj <= span {
                    nz_lower[jj - (span - (d - 1))]
                } else {
                    0.0
                }
            };
            let denom1 = self.knots[j + d] - self.knots[j];
            if denom1 > 0.0 {
                acc += lower_val(j) / denom1;
            }
            let denom2 = self.knots[j + d + 1] - self.knots[j + 1];
            if denom2 > 0.0 {
                acc -= lower_val(j + 1) / denom2;
            }
            derivs[j] = d as f64 * acc;
        }
        (values, derivs)
    }

    /// Basis values and derivatives with linear extension outside the knot
    /// range: for y beyond a boundary, value_j(y) = value_j(b) +
    /// deriv_j(b) * (y - b) and deriv_j(y) = deriv_j(b).
    pub fn eval_extended(&self, y: f64) -> (Vec<f64>, Vec<f64>) {
        if y < self.lower {
            let (v, d) = self.eval_with_deriv(self.lower);
            let ext: Vec<f64> = v
                .iter()
                .zip(&d)
                .map(|(vj, dj)| vj + dj * (y - self.lower))
                .collect();
            (ext, d)
        } else if y > self.upper {
            let (v, d) = self.eval_with_deriv(self.upper);
            let ext: Vec<f64> = v
                .iter()
                .zip(&d)
                .map(|(vj, dj)| vj + dj * (y - self.upper))
                .collect();
            (ext, d)
        } else {
            self.eval_with_deriv(y)
        }
    }

    /// The d+1 nonzero basis functions of the given degree at `y` in `span`
    /// (Cox-de Boor triangular scheme).
    fn nonzero_values(&self, y: f64, span: usize, degree: usize) -> Vec<f64> {
        let mut values = vec![0.0; degree + 1];
        values[0] = 1.0;
        let mut left = vec![0.0; degree + 1];
        let mut right = vec![0.0; degree + 1];
        for j in 1..=degree {
            left[j] = y - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - y;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { values[r] / denom } else { 0.0 };
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        values
    }

    /// Greville abscissae, the natural x-locations of the coefficients.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.n_basis)
            .map(|j| {
                self.knots[j + 1..j + 1 + self.degree].iter().sum::<f64>() / self.degree as f64
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn default_basis() -> BSplineBasis {
        build_bspline_basis((0.0, 1.0), 8, 3).unwrap()
    }

    #[test]
    fn partition_of_unity() {
        let basis = default_basis();
        assert_eq!(basis.eval(0.37).len(), 8);
        let mut y = 0.0;
        while y <= 1.0 {
            let sum: f64 = basis.eval(y).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            y += 0.01;
        }
    }

    #[test]
    fn nonnegative_everywhere() {
        let basis = default_basis();
        for i in 0..1000 {
            let y = (i as f64 * 0.7919) % 1.0;
            for v in basis.eval(y) {
                assert!(v >= -1e-15, "basis value {v} at y = {y}");
            }
        }
    }

    #[test]
    fn derivatives_sum_to_zero() {
        let basis = default_basis();
        for i in 0..50 {
            let y = (i as f64 * 0.137) % 1.0;
            let (_, derivs) = basis.eval_with_deriv(y);
            let sum: f64 = derivs.iter().sum();
            assert_abs_diff_eq!(sum, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let basis = build_bspline_basis((-2.0, 3.0), 10, 3).unwrap();
        let h = 1e-6;
        for i in 1..40 {
            let y = -2.0 + 5.0 * i as f64 / 41.0;
            let lo = basis.eval(y - h);
            let hi = basis.eval(y + h);
            let (_, derivs) = basis.eval_with_deriv(y);
            for j in 0..10 {
                let fd = (hi[j] - lo[j]) / (2.0 * h);
                assert_abs_diff_eq!(derivs[j], fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn boundary_evaluation_is_finite() {
        let basis = default_basis();
        let (v0, d0) = basis.eval_with_deriv(0.0);
        let (v1, d1) = basis.eval_with_deriv(1.0);
        assert_abs_diff_eq!(v0[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v1[7], 1.0, epsilon = 1e-12);
        assert!(d0.iter().all(|d| d.is_finite()));
        assert!(d1.iter().all(|d| d.is_finite()));
    }

    #[test]
    fn extension_is_linear_and_continuous() {
        let basis = default_basis();
        let (v_in, d_in) = basis.eval_extended(1.0);
        let (v_out, d_out) = basis.eval_extended(1.25);
        for j in 0..8 {
            assert_abs_diff_eq!(v_out[j], v_in[j] + 0.25 * d_in[j], epsilon = 1e-12);
            assert_abs_diff_eq!(d_out[j], d_in[j], epsilon = 1e-12);
        }
        // partition of unity extends: values still sum to 1, derivatives to 0
        let sum: f64 = v_out.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(build_bspline_basis((0.0, 1.0), 3, 3).is_err());
        assert!(build_bspline_basis((1.0, 1.0), 8, 3).is_err());
        assert!(build_bspline_basis((0.0, 1.0), 8, 0).is_err());
    }

    #[test]
    fn greville_is_increasing_over_range() {
        let basis = default_basis();
        let g = basis.greville();
        assert_eq!(g.len(), 8);
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[7], 1.0, epsilon = 1e-12);
        for w in g.windows(2) {
            assert!(w[0] < w[1]);
        }
    }
}
