//! Observation densities, the Gauss-Hermite marginal log-likelihood, the
//! analytic score vector, and the spline shape-coupling penalty.
//!
//! Per-person contributions are accumulated in log space (log-sum-exp over
//! quadrature nodes). The person sum is the parallelization unit; per-person
//! results are collected in person order and reduced with fixed-order
//! pairwise summation, so values are bit-identical across thread counts.

use crate::data::{ItemResponseMatrix, SupportKind, TreatAs};
use crate::difficulty::DifficultyFunction;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParameterLayout, SlopeMode};
use crate::numeric::{log_sum_exp, pairwise_sum, pairwise_sum_vectors};
use crate::quadrature::{gauss_hermite_rule, QuadratureRule};
use crate::response::ResponseFunctionKind;
use rayon::prelude::*;

/// Mass floor for discrete probabilities; floored cells are counted and
/// surfaced in the fit diagnostics, and contribute zero gradient (the
/// objective is locally constant there).
const MASS_FLOOR: f64 = 1e-300;

/// Smallest admissible difficulty derivative at an observed value: the
/// derivative must be positive and normal, but may be legitimately tiny far
/// out in a family's tail (log delta' stays finite down to 1e-300).
const DERIV_FLOOR: f64 = 1e-300;

/// Log-density of a continuous-branch observation:
/// log f(theta - delta(y)) + log delta'(y).
pub fn log_density_continuous(
    kind: ResponseFunctionKind,
    difficulty: &DifficultyFunction,
    theta: f64,
    y: f64,
) -> Result<f64> {
    let deriv = difficulty.eval_deriv(y)?;
    if !(deriv > DERIV_FLOOR) {
        return Err(Error::ZeroDerivative {
            item: String::new(),
            value: y,
        });
    }
    Ok(kind.log_pdf(theta - difficulty.eval(y)) + deriv.ln())
}

/// Log-mass of a discrete-branch observation, built from CDF differences:
/// f(0) = 1 - F(theta - delta(0)), f(r) = F(theta - delta(r-1)) -
/// F(theta - delta(r)), and the top category of a finite support uses
/// delta(top) = +inf. Returns the log-mass and whether the mass hit the
/// underflow floor.
pub fn log_density_discrete(
    kind: ResponseFunctionKind,
    support: &SupportKind,
    difficulty: &DifficultyFunction,
    theta: f64,
    y: f64,
) -> (f64, bool) {
    let r = y.round();
    let below = if r >= 1.0 {
        crate::difficulty::threshold_in_support(support, difficulty, r - 1.0)
    } else {
        f64::NEG_INFINITY
    };
    let at = crate::difficulty::threshold_in_support(support, difficulty, r);
    stable_log_mass(kind, theta, below, at)
}

/// log[F(theta - below) - F(theta - at)] with below < at, using whichever
/// tail avoids cancellation.
fn stable_log_mass(
    kind: ResponseFunctionKind,
    theta: f64,
    below: f64,
    at: f64,
) -> (f64, bool) {
    let z_hi = theta - below; // larger argument
    let z_lo = theta - at;
    let p = if z_lo >= 0.0 {
        kind.survival(z_lo) - kind.survival(z_hi)
    } else {
        kind.cdf(z_hi) - kind.cdf(z_lo)
    };
    if p < MASS_FLOOR {
        (MASS_FLOOR.ln(), true)
    } else {
        (p.ln(), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodValue {
    pub loglik: f64,
    pub underflow_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreValue {
    pub loglik: f64,
    pub gradient: Vec<f64>,
    pub underflow_count: usize,
}

/// One prepared observation: everything about (person, item, y) that does
/// not change across optimizer iterations.
struct ObsPrep {
    item: usize,
    y: f64,
    continuous: bool,
    /// Basis of the difficulty at y (all families are linear in their
    /// coefficients).
    basis_y: Vec<f64>,
    /// Continuous branch: derivative basis at y.
    basis_dy: Vec<f64>,
    /// Discrete branch: basis at y - 1 (empty when y is the lowest level).
    basis_below: Vec<f64>,
    /// Discrete branch: y is the top category of a finite support.
    top: bool,
}

/// Per-(node, observation) cache shared between the value and score passes.
#[derive(Clone, Copy, Default)]
struct Cell {
    logf: f64,
    /// continuous: z = theta - delta(y); discrete: z below the category
    z_hi: f64,
    /// continuous: delta'(y); discrete: z at the category
    z_lo: f64,
    floored: bool,
}

/// Prepared likelihood machinery for one (spec, data) pair.
pub struct Evaluator<'a> {
    pub spec: &'a ModelSpec,
    pub layout: &'a ParameterLayout,
    pub data: &'a ItemResponseMatrix,
    pub rule: QuadratureRule,
    obs: Vec<Vec<ObsPrep>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        layout: &'a ParameterLayout,
        data: &'a ItemResponseMatrix,
    ) -> Result<Self> {
        let rule = gauss_hermite_rule(spec.quadrature_nodes)?;
        let mut obs = Vec::with_capacity(data.n_persons());
        for p in 0..data.n_persons() {
            let mut row = Vec::new();
            for (i, y) in data.observed_row(p) {
                let item = &spec.items[i];
                let template = &layout.templates[i];
                let continuous = item.treat_as == TreatAs::Continuous;
                if continuous {
                    let (basis_y, basis_dy) = template.basis_at(y);
                    row.push(ObsPrep {
                        item: i,
                        y,
                        continuous,
                        basis_y,
                        basis_dy,
                        basis_below: Vec::new(),
                        top: false,
                    });
                } else {
                    let top = item
                        .support
                        .categories()
                        .is_some_and(|k| y.round() >= (k - 1) as f64);
                    let basis_y = if top {
                        Vec::new()
                    } else {
                        template.basis_at(y).0
                    };
                    let basis_below = if y.round() >= 1.0 {
                        template.basis_at(y - 1.0).0
                    } else {
                        Vec::new()
                    };
                    row.push(ObsPrep {
                        item: i,
                        y,
                        continuous,
                        basis_y,
                        basis_dy: Vec::new(),
                        basis_below,
                        top,
                    });
                }
            }
            obs.push(row);
        }
        Ok(Evaluator {
            spec,
            layout,
            data,
            rule,
            obs,
        })
    }

    /// Fills the cell cache for one person and returns
    /// (per-node log-joint including weights, log marginal, underflows).
    fn person_cells(
        &self,
        person: usize,
        coeffs: &[Vec<f64>],
        sigma: f64,
        cells: &mut Vec<Cell>,
    ) -> Result<(Vec<f64>, f64, usize)> {
        let kind = self.spec.response_function;
        let row = &self.obs[person];
        let n_nodes = self.rule.n;
        cells.clear();
        cells.resize(n_nodes * row.len(), Cell::default());
        let mut underflows = 0usize;

        let mut log_joint = Vec::with_capacity(n_nodes);
        for k in 0..n_nodes {
            let theta = self.rule.ability(k, sigma);
            let mut acc = self.rule.weights[k].ln();
            for (j, ob) in row.iter().enumerate() {
                let c = &coeffs[ob.item];
                let cell = &mut cells[k * row.len() + j];
                if ob.continuous {
                    let delta = dot(c, &ob.basis_y);
                    let deriv = dot(c, &ob.basis_dy);
                    if !(deriv > DERIV_FLOOR) {
                        return Err(Error::ZeroDerivative {
                            item: self.spec.items[ob.item].id.clone(),
                            value: ob.y,
                        });
                    }
                    let z = theta - delta;
                    cell.logf = kind.log_pdf(z) + deriv.ln();
                    cell.z_hi = z;
                    cell.z_lo = deriv;
                } else {
                    let below = if ob.basis_below.is_empty() {
                        f64::NEG_INFINITY
                    } else {
                        dot(c, &ob.basis_below)
                    };
                    let at = if ob.top {
                        f64::INFINITY
                    } else {
                        dot(c, &ob.basis_y)
                    };
                    let (logf, floored) = stable_log_mass(kind, theta, below, at);
                    cell.logf = logf;
                    cell.z_hi = theta - below;
                    cell.z_lo = theta - at;
                    cell.floored = floored;
                    if floored {
                        underflows += 1;
                    }
                }
                acc += cell.logf;
            }
            log_joint.push(acc);
        }
        let log_marginal = log_sum_exp(&log_joint);
        if !log_marginal.is_finite() {
            return Err(Error::NonFiniteLikelihood(person));
        }
        Ok((log_joint, log_marginal, underflows))
    }

    /// Marginal log-likelihood at an unconstrained parameter vector.
    pub fn log_likelihood(&self, u: &[f64]) -> Result<LikelihoodValue> {
        let params = self.layout.constrain(u);
        let coeffs: Vec<Vec<f64>> = params.difficulties.iter().map(|d| d.coefficients()).collect();
        let sigma = params.sigma_theta;

        let per_person: Vec<Result<(f64, usize)>> = (0..self.data.n_persons())
            .into_par_iter()
            .map(|p| {
                let mut cells = Vec::new();
                let (_, log_marginal, underflows) =
                    self.person_cells(p, &coeffs, sigma, &mut cells)?;
                Ok((log_marginal, underflows))
            })
            .collect();

        let mut logs = Vec::with_capacity(per_person.len());
        let mut underflow_count = 0usize;
        for r in per_person {
            let (lm, uf) = r?;
            logs.push(lm);
            underflow_count += uf;
        }
        Ok(LikelihoodValue {
            loglik: pairwise_sum(&logs),
            underflow_count,
        })
    }

    /// Marginal log-likelihood and its analytic gradient with respect to
    /// the unconstrained parameter vector.
    pub fn log_likelihood_and_score(&self, u: &[f64]) -> Result<ScoreValue> {
        let params = self.layout.constrain(u);
        let coeffs: Vec<Vec<f64>> = params.difficulties.iter().map(|d| d.coefficients()).collect();
        let sigma = params.sigma_theta;
        let kind = self.spec.response_function;
        let dim = self.layout.len;

        let per_person: Vec<Result<(f64, Vec<f64>, usize)>> = (0..self.data.n_persons())
            .into_par_iter()
            .map(|p| {
                let mut cells = Vec::new();
                let (log_joint, log_marginal, underflows) =
                    self.person_cells(p, &coeffs, sigma, &mut cells)?;
                let row = &self.obs[p];
                let mut grad = vec![0.0; dim];
                // constrained-gradient accumulators per item touched
                let mut item_grads: Vec<Vec<f64>> =
                    row.iter().map(|ob| vec![0.0; coeffs[ob.item].len()]).collect();
                let mut sigma_grad = 0.0;

                for k in 0..self.rule.n {
                    let weight = (log_joint[k] - log_marginal).exp();
                    if weight == 0.0 {
                        continue;
                    }
                    let theta = self.rule.ability(k, sigma);
                    let mut dlog_dtheta_sum = 0.0;
                    for (j, ob) in row.iter().enumerate() {
                        let cell = cells[k * row.len() + j];
                        let g = &mut item_grads[j];
                        if ob.continuous {
                            let z = cell.z_hi;
                            let deriv = cell.z_lo;
                            let ratio = kind.log_pdf_deriv(z); // f'(z)/f(z)
                            for (gj, (by, bdy)) in
                                g.iter_mut().zip(ob.basis_y.iter().zip(&ob.basis_dy))
                            {
                                *gj += weight * (-ratio * by + bdy / deriv);
                            }
                            dlog_dtheta_sum += ratio;
                        } else if !cell.floored {
                            let mass = cell.logf.exp();
                            let f_hi = if cell.z_hi.is_finite() {
                                kind.pdf(cell.z_hi)
                            } else {
                                0.0
                            };
                            let f_lo = if cell.z_lo.is_finite() {
                                kind.pdf(cell.z_lo)
                            } else {
                                0.0
                            };
                            if !ob.basis_below.is_empty() {
                                for (gj, bb) in g.iter_mut().zip(&ob.basis_below) {
                                    *gj += weight * (-f_hi * bb) / mass;
                                }
                            }
                            if !ob.top {
                                for (gj, by) in g.iter_mut().zip(&ob.basis_y) {
                                    *gj += weight * (f_lo * by) / mass;
                                }
                            }
                            dlog_dtheta_sum += (f_hi - f_lo) / mass;
                        }
                    }
                    // sigma enters through the node positions theta_k =
                    // sqrt(2) sigma x_k; on the log-sigma scale the factor
                    // is theta_k itself
                    sigma_grad += weight * dlog_dtheta_sum * theta;
                }

                for (j, ob) in row.iter().enumerate() {
                    self.layout.push_gradient(ob.item, &item_grads[j], u, &mut grad);
                }
                grad[self.layout.log_sigma] += sigma_grad;
                Ok((log_marginal, grad, underflows))
            })
            .collect();

        let mut logs = Vec::with_capacity(per_person.len());
        let mut grads = Vec::with_capacity(per_person.len());
        let mut underflow_count = 0usize;
        for r in per_person {
            let (lm, g, uf) = r?;
            logs.push(lm);
            grads.push(g);
            underflow_count += uf;
        }
        Ok(ScoreValue {
            loglik: pairwise_sum(&logs),
            gradient: pairwise_sum_vectors(&grads, dim),
            underflow_count,
        })
    }

    /// Penalized objective l - P_lambda and its gradient.
    pub fn penalized_score(&self, u: &[f64]) -> Result<ScoreValue> {
        let mut sv = self.log_likelihood_and_score(u)?;
        if self.spec.slope_mode == SlopeMode::SplineFree && self.spec.penalty_lambda > 0.0 {
            let (value, grad) = shape_penalty(self.layout, self.spec, u)?;
            sv.loglik -= value;
            for (g, pg) in sv.gradient.iter_mut().zip(&grad) {
                *g -= pg;
            }
        }
        Ok(sv)
    }
}

/// Convenience wrapper building the machinery for one evaluation.
pub fn marginal_log_likelihood(
    spec: &ModelSpec,
    layout: &ParameterLayout,
    data: &ItemResponseMatrix,
    u: &[f64],
) -> Result<f64> {
    Ok(Evaluator::new(spec, layout, data)?.log_likelihood(u)?.loglik)
}

/// Analytic score of the marginal log-likelihood with respect to the
/// unconstrained parameter vector.
pub fn score(
    spec: &ModelSpec,
    layout: &ParameterLayout,
    data: &ItemResponseMatrix,
    u: &[f64],
) -> Result<Vec<f64>> {
    Ok(Evaluator::new(spec, layout, data)?
        .log_likelihood_and_score(u)?
        .gradient)
}

/// The shape-coupling penalty for free spline difficulties:
/// lambda * sum over consecutive spline items of the squared differences of
/// their adjacent coefficient differences. Zero iff all spline items share
/// the same difference pattern. Returns the value and its gradient with
/// respect to the unconstrained vector.
pub fn shape_penalty(
    layout: &ParameterLayout,
    spec: &ModelSpec,
    u: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if spec.slope_mode != SlopeMode::SplineFree {
        return Err(Error::WrongMode("spline-free"));
    }
    let lambda = spec.penalty_lambda;
    let spline_items: Vec<usize> = (0..spec.items.len())
        .filter(|&i| matches!(layout.templates[i], DifficultyFunction::BSpline { .. }))
        .collect();

    let coeffs: Vec<Vec<f64>> = spline_items
        .iter()
        .map(|&i| layout.difficulty(i, u).coefficients())
        .collect();

    let mut value = 0.0;
    let mut grad_c: Vec<Vec<f64>> = coeffs.iter().map(|c| vec![0.0; c.len()]).collect();
    for s in 1..coeffs.len() {
        let (prev, cur) = (&coeffs[s - 1], &coeffs[s]);
        for l in 1..cur.len() {
            let d = (cur[l] - cur[l - 1]) - (prev[l] - prev[l - 1]);
            value += lambda * d * d;
            let w = 2.0 * lambda * d;
            grad_c[s][l] += w;
            grad_c[s][l - 1] -= w;
            grad_c[s - 1][l] -= w;
            grad_c[s - 1][l - 1] += w;
        }
    }

    let mut grad = vec![0.0; layout.len];
    for (pos, &i) in spline_items.iter().enumerate() {
        layout.push_gradient(i, &grad_c[pos], u, &mut grad);
    }
    Ok((value, grad))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
