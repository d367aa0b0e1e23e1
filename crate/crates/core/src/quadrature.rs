//! Gauss-Hermite quadrature for integrating against a normal ability
//! distribution: int g(t) N(t; 0, s^2) dt ~= sum_k w_k g(sqrt(2) s x_k)
//! with the physicists' nodes x_k and weights normalized to sum to one.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    /// Physicists' Hermite nodes, ascending.
    pub nodes: Vec<f64>,
    /// Weights normalized by 1/sqrt(pi); they sum to one.
    pub weights: Vec<f64>,
    pub n: usize,
}

impl QuadratureRule {
    /// Ability value of node `k` under prior scale `sigma`.
    #[inline]
    pub fn ability(&self, k: usize, sigma: f64) -> f64 {
        std::f64::consts::SQRT_2 * sigma * self.nodes[k]
    }

    /// Expectation of `g` under N(0, sigma^2).
    pub fn integrate(&self, sigma: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        (0..self.n)
            .map(|k| self.weights[k] * g(self.ability(k, sigma)))
            .sum()
    }
}

/// Builds the n-point Gauss-Hermite rule by the Golub-Welsch method: the
/// nodes are the eigenvalues of the Jacobi matrix of the Hermite recurrence
/// (zero diagonal, off-diagonal sqrt(k/2)), and each normalized weight is
/// the squared first component of the corresponding eigenvector.
pub fn gauss_hermite_rule(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::InvalidConfig(
            "quadrature needs at least one node".into(),
        ));
    }
    let mut diag = vec![0.0; n];
    let mut off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    off.push(0.0);
    let mut first = vec![0.0; n];
    first[0] = 1.0;
    tridiagonal_eigen(&mut diag, &mut off, &mut first)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
    let mut nodes: Vec<f64> = order.iter().map(|&k| diag[k]).collect();
    let mut weights: Vec<f64> = order.iter().map(|&k| first[k] * first[k]).collect();

    // enforce the exact symmetry of the rule
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let node = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -node;
        nodes[j] = node;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadratureRule { nodes, weights, n })
}

/// Implicit-shift QL iteration for a symmetric tridiagonal matrix,
/// accumulating the rotations into a single vector so that `z` ends up
/// holding the first component of every eigenvector. `diag` becomes the
/// (unsorted) eigenvalues; `off[i]` couples rows i and i+1.
fn tridiagonal_eigen(diag: &mut [f64], off: &mut [f64], z: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n == 1 {
        return Ok(());
    }
    for l in 0..n {
        let mut iterations = 0;
        loop {
            // find a negligible off-diagonal element
            let mut m = l;
            while m + 1 < n {
                let scale = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * scale {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > 50 {
                return Err(Error::InvalidConfig(
                    "quadrature eigenvalue iteration failed to converge".into(),
                ));
            }
            // implicit shift from the 2x2 block at l
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                let fz = z[i + 1];
                z[i + 1] = s * z[i] + c * fz;
                z[i] = c * z[i] - s * fz;
            }
            if r == 0.0 && i > l {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}
