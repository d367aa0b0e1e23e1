//! Marginal maximum likelihood estimation: a limited-memory quasi-Newton
//! optimizer on the unconstrained scale, observed-information standard
//! errors, and likelihood-ratio tests for nested models.

use crate::data::ItemResponseMatrix;
use crate::error::{Error, Result};
use crate::likelihood::{shape_penalty, Evaluator};
use crate::model::{ModelParameters, ModelSpec, ParameterLayout, SlopeMode};
use crate::numeric::chi_square_sf;
use rand_core::{RngCore, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    /// Overrides the model's quadrature node count.
    pub quadrature_nodes: Option<usize>,
    /// Extra optimizations from perturbed starting points; the best
    /// objective wins.
    pub random_starts: usize,
    pub seed: u64,
    pub compute_se: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            grad_tolerance: 1e-5,
            quadrature_nodes: None,
            random_starts: 0,
            seed: 1,
            compute_se: true,
        }
    }
}

/// A fitted thresholds model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub parameters: ModelParameters,
    pub params_unconstrained: Vec<f64>,
    /// Labels of the constrained parameters, item blocks first, sigma last.
    pub param_labels: Vec<String>,
    /// Constrained parameter values, parallel to `param_labels`.
    pub params_constrained: Vec<f64>,
    /// Delta-method standard errors, parallel to `param_labels`; `None`
    /// when the observed information was singular.
    pub se: Option<Vec<f64>>,
    pub loglik: f64,
    pub penalty_value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub underflow_count: usize,
}

impl FitResult {
    pub fn sigma_theta(&self) -> f64 {
        self.parameters.sigma_theta
    }

    /// Value of one labeled parameter.
    pub fn parameter(&self, label: &str) -> Option<f64> {
        self.param_labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.params_constrained[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Maximizes the (penalized) marginal log-likelihood.
pub fn fit(data: &ItemResponseMatrix, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    let mut spec = spec.clone();
    if let Some(n) = opts.quadrature_nodes {
        spec.quadrature_nodes = n;
    }
    spec.validate()?;
    if !crate::data::items_compatible(&spec.items, data.items()) {
        return Err(Error::InvalidConfig(
            "model items do not match the dataset's items".into(),
        ));
    }
    let layout = ParameterLayout::build(&spec, data)?;
    let evaluator = Evaluator::new(&spec, &layout, data)?;

    let base_start = layout.initial_vector(&spec, data)?;
    let mut starts = vec![base_start.clone()];
    if opts.random_starts > 0 {
        let mut rng = Pcg64::seed_from_u64(opts.seed);
        for _ in 0..opts.random_starts {
            let jitter: Vec<f64> = base_start
                .iter()
                .map(|v| v + 0.25 * standard_normal_draw(&mut rng))
                .collect();
            starts.push(jitter);
        }
    }

    let objective = |u: &[f64]| -> Result<(f64, Vec<f64>)> {
        let sv = evaluator.penalized_score(u)?;
        Ok((sv.loglik, sv.gradient))
    };

    let mut best: Option<OptOutcome> = None;
    for start in &starts {
        let outcome = lbfgs_maximize(&objective, start, opts.max_iterations, opts.grad_tolerance)?;
        let better = match &best {
            None => true,
            Some(b) => outcome.value > b.value,
        };
        if better {
            best = Some(outcome);
        }
    }
    let outcome = best.expect("at least one start");

    let u = outcome.x;
    let plain = evaluator.log_likelihood(&u)?;
    let penalty_value = if spec.slope_mode == SlopeMode::SplineFree && spec.penalty_lambda > 0.0 {
        shape_penalty(&layout, &spec, &u)?.0
    } else {
        0.0
    };

    let jac = layout.constrained_jacobian(&u);
    let param_labels: Vec<String> = jac.iter().map(|(l, _)| l.clone()).collect();
    let parameters = layout.constrain(&u);
    let params_constrained = layout.constrained_values(&u);

    let se = if opts.compute_se && outcome.converged {
        match delta_method_se(&evaluator, &layout, &u) {
            Ok(se) => Some(se),
            Err(Error::SingularInformation) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    Ok(FitResult {
        spec,
        parameters,
        params_unconstrained: u,
        param_labels,
        params_constrained,
        se,
        loglik: plain.loglik,
        penalty_value,
        converged: outcome.converged,
        iterations: outcome.iterations,
        grad_norm: outcome.grad_norm,
        underflow_count: plain.underflow_count,
    })
}

/// Observed information of the maximized objective at `u`, by central
/// finite differences of the analytic score (h = 1e-5), symmetrized.
pub fn observed_information(
    spec: &ModelSpec,
    layout: &ParameterLayout,
    data: &ItemResponseMatrix,
    u: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let evaluator = Evaluator::new(spec, layout, data)?;
    observed_information_with(&evaluator, layout, u)
}

fn observed_information_with(
    evaluator: &Evaluator,
    layout: &ParameterLayout,
    u: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = layout.len;
    let h = 1e-5;
    let mut hessian = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut up = u.to_vec();
        up[j] += h;
        let mut dn = u.to_vec();
        dn[j] -= h;
        let gp = evaluator.penalized_score(&up)?.gradient;
        let gm = evaluator.penalized_score(&dn)?.gradient;
        for i in 0..n {
            hessian[i][j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    // information = -Hessian, symmetrized
    let mut info = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            info[i][j] = -0.5 * (hessian[i][j] + hessian[j][i]);
        }
    }
    Ok(info)
}

/// Standard errors of the constrained parameters at the maximizer.
pub fn standard_errors(
    fit: &FitResult,
    data: &ItemResponseMatrix,
) -> Result<Vec<f64>> {
    let layout = ParameterLayout::build(&fit.spec, data)?;
    let evaluator = Evaluator::new(&fit.spec, &layout, data)?;
    delta_method_se(&evaluator, &layout, &fit.params_unconstrained)
}

fn delta_method_se(
    evaluator: &Evaluator,
    layout: &ParameterLayout,
    u: &[f64],
) -> Result<Vec<f64>> {
    let info = observed_information_with(evaluator, layout, u)?;
    let cov = invert_spd(&info).ok_or(Error::SingularInformation)?;
    let rows = layout.constrained_jacobian(u);
    let mut se = Vec::with_capacity(rows.len());
    for (_, row) in &rows {
        let mut var = 0.0;
        for &(i, di) in row {
            for &(j, dj) in row {
                var += di * dj * cov[i][j];
            }
        }
        if !(var >= 0.0) {
            return Err(Error::SingularInformation);
        }
        se.push(var.sqrt());
    }
    Ok(se)
}

/// Dense symmetric positive-definite inverse via Cholesky; `None` when the
/// factorization fails.
fn invert_spd(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    // columns of the inverse by forward/back substitution
    let mut inv = vec![vec![0.0; n]; n];
    for col in 0..n {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                sum -= l[i][k] * y[k];
            }
            y[i] = sum / l[i][i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..n {
                sum -= l[k][i] * x[k];
            }
            x[i] = sum / l[i][i];
        }
        for i in 0..n {
            inv[i][col] = x[i];
        }
    }
    Some(inv)
}

/// Likelihood-ratio test of a reduced model against a nesting full model.
pub fn lr_test(full: &FitResult, reduced: &FitResult) -> Result<LrTestResult> {
    check_nested(&full.spec, &reduced.spec)?;
    if !full.converged || !reduced.converged {
        return Err(Error::NotConverged(full.iterations.max(reduced.iterations)));
    }
    let df = full
        .params_unconstrained
        .len()
        .checked_sub(reduced.params_unconstrained.len())
        .ok_or_else(|| {
            Error::NotNested("the reduced model has more parameters than the full model".into())
        })?;
    let mut statistic = 2.0 * (full.loglik - reduced.loglik);
    if statistic < 0.0 && statistic > -1e-6 {
        statistic = 0.0;
    }
    Ok(LrTestResult {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df),
    })
}

fn check_nested(full: &ModelSpec, reduced: &ModelSpec) -> Result<()> {
    if full.response_function != reduced.response_function {
        return Err(Error::NotNested("response functions differ".into()));
    }
    if full.quadrature_nodes != reduced.quadrature_nodes {
        return Err(Error::NotNested(
            "log-likelihoods under different quadrature rules are not comparable".into(),
        ));
    }
    if full.items != reduced.items {
        return Err(Error::NotNested(
            "item supports, families, or density branches differ".into(),
        ));
    }
    let nested_modes = matches!(
        (reduced.slope_mode, full.slope_mode),
        (SlopeMode::CommonSlope, SlopeMode::VaryingSlopes)
            | (SlopeMode::SplineCommonShape, SlopeMode::SplineFree)
    ) || reduced.slope_mode == full.slope_mode;
    if !nested_modes {
        return Err(Error::NotNested(format!(
            "slope mode {:?} is not a restriction of {:?}",
            reduced.slope_mode, full.slope_mode
        )));
    }
    if full.slope_mode == SlopeMode::SplineFree && full.penalty_lambda > 0.0 {
        return Err(Error::NotNested(
            "a penalized fit has no likelihood-ratio calibration".into(),
        ));
    }
    Ok(())
}

struct OptOutcome {
    x: Vec<f64>,
    value: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

/// L-BFGS with Armijo backtracking, written as a maximizer. Objective
/// errors during line search reject the trial point; an error at the
/// starting point propagates.
fn lbfgs_maximize(
    objective: &dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    start: &[f64],
    max_iterations: usize,
    grad_tolerance: f64,
) -> Result<OptOutcome> {
    const MEMORY: usize = 10;
    const REL_F_TOL: f64 = 1e-9;
    // a run counts as converged when the final gradient is at stationarity
    // scale, even if the stop came from stalled objective changes
    let stationary = grad_tolerance.max(1e-4);

    let mut x = start.to_vec();
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteLikelihood(0));
    }

    let mut s_mem: VecDeque<Vec<f64>> = VecDeque::new();
    let mut y_mem: VecDeque<Vec<f64>> = VecDeque::new();
    let mut rho_mem: VecDeque<f64> = VecDeque::new();
    let mut iterations = 0;
    let mut stall_strikes = 0;

    while inf_norm(&g) >= grad_tolerance && iterations < max_iterations {
        iterations += 1;
        // ascent direction from the two-loop recursion
        let mut d = two_loop_direction(&g, &s_mem, &y_mem, &rho_mem);
        let mut slope = dot(&d, &g);
        if !(slope > 0.0) || !slope.is_finite() {
            // not an ascent direction: fall back to the gradient
            d = g.clone();
            slope = dot(&g, &g);
            if !(slope > 0.0) {
                break;
            }
        }

        let Some((x_new, f_new, g_new)) = wolfe_search(objective, &x, f, &d, slope) else {
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        // minimizing -f: the curvature pair uses -(g_new - g)
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if s_mem.len() == MEMORY {
                s_mem.pop_front();
                y_mem.pop_front();
                rho_mem.pop_front();
            }
            s_mem.push_back(s);
            y_mem.push_back(y);
            rho_mem.push_back(1.0 / sy);
        }

        let f_change = (f_new - f).abs();
        let f_prev = f;
        x = x_new;
        g = g_new;
        f = f_new;

        if f_change < REL_F_TOL * (1.0 + f_prev.abs()) {
            stall_strikes += 1;
            if stall_strikes >= 3 {
                // a stall with stale curvature pairs often clears after a
                // restart; give up only once memory is already empty
                if s_mem.is_empty() {
                    break;
                }
                s_mem.clear();
                y_mem.clear();
                rho_mem.clear();
                stall_strikes = 0;
            }
        } else {
            stall_strikes = 0;
        }
    }

    let grad_norm = inf_norm(&g);
    Ok(OptOutcome {
        converged: grad_norm < stationary,
        grad_norm,
        x,
        value: f,
        iterations,
    })
}

/// Weak-Wolfe line search for maximization: Armijo sufficient increase plus
/// a curvature condition, with bisection bracketing. Objective errors
/// reject the trial step. Returns the accepted point or `None`.
fn wolfe_search(
    objective: &dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    x: &[f64],
    f: f64,
    d: &[f64],
    slope: f64,
) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut alpha = 1.0;
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    let mut best: Option<(Vec<f64>, f64, Vec<f64>)> = None;
    for _ in 0..40 {
        let trial: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        match objective(&trial) {
            Ok((ft, gt)) if ft.is_finite() && ft >= f + C1 * alpha * slope => {
                let dir_deriv = dot(d, &gt);
                if best.as_ref().map_or(true, |(_, bf, _)| ft >= *bf) {
                    best = Some((trial.clone(), ft, gt.clone()));
                }
                if dir_deriv <= C2 * slope {
                    return Some((trial, ft, gt));
                }
                // step too short: expand or bisect upward
                lo = alpha;
                alpha = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * alpha };
            }
            _ => {
                // Armijo failed (or the objective errored): shrink
                hi = alpha;
                alpha = 0.5 * (lo + hi);
            }
        }
        if hi.is_finite() && (hi - lo) < 1e-14 {
            break;
        }
    }
    best
}

/// Two-loop recursion returning an ascent direction for maximizing f
/// (equivalently H * (-grad) for minimizing -f, negated).
fn two_loop_direction(
    g: &[f64],
    s_mem: &VecDeque<Vec<f64>>,
    y_mem: &VecDeque<Vec<f64>>,
    rho_mem: &VecDeque<f64>,
) -> Vec<f64> {
    // work on the minimization gradient q = -g
    let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
    let m = s_mem.len();
    let mut alphas = vec![0.0; m];
    for i in (0..m).rev() {
        let alpha = rho_mem[i] * dot(&s_mem[i], &q);
        alphas[i] = alpha;
        for (qj, yj) in q.iter_mut().zip(&y_mem[i]) {
            *qj -= alpha * yj;
        }
    }
    if m > 0 {
        let last = m - 1;
        let gamma = dot(&s_mem[last], &y_mem[last]) / dot(&y_mem[last], &y_mem[last]);
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
    }
    for i in 0..m {
        let beta = rho_mem[i] * dot(&y_mem[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_mem[i]) {
            *qj += (alphas[i] - beta) * sj;
        }
    }
    // q is the minimization step for -f; ascent direction for f is -q...
    // but q already points downhill for -f, i.e. uphill for f
    q.iter().map(|v| -v).collect()
}

fn standard_normal_draw(rng: &mut Pcg64) -> f64 {
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    crate::response::ResponseFunctionKind::Normal
        .quantile(u)
        .expect("u strictly inside (0,1)")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
