//! Model specification and the parameter layout: how per-item difficulty
//! parameters and the ability scale map onto one unconstrained vector for
//! the optimizer, and back.
//!
//! All shape constraints (positive slopes, increasing thresholds,
//! nondecreasing spline coefficients, positive sigma) live in the
//! reparameterization; the optimizer never sees a constraint.

use crate::data::{DifficultyFamilyKind, ItemResponseMatrix, ItemSpec, SupportKind};
use crate::difficulty::DifficultyFunction;
use crate::error::{Error, Result};
use crate::response::ResponseFunctionKind;
use crate::spline::build_bspline_basis;
use serde::{Deserialize, Serialize};

/// How difficulty-function shapes are tied across items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeMode {
    /// Two-parameter families share one slope across items.
    CommonSlope,
    /// Every two-parameter item has its own slope.
    VaryingSlopes,
    /// Spline items carry free coefficient vectors, optionally coupled by
    /// the shape penalty.
    SplineFree,
    /// Spline items share one coefficient vector and differ by intercepts;
    /// the first spline item's intercept is fixed at zero.
    SplineCommonShape,
}

/// Identification strategy for spline difficulty functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Identification {
    FirstSplineInterceptZero,
    PenaltyOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response_function: ResponseFunctionKind,
    pub items: Vec<ItemSpec>,
    pub slope_mode: SlopeMode,
    pub quadrature_nodes: usize,
    pub penalty_lambda: f64,
    pub identification: Identification,
}

impl ModelSpec {
    pub fn new(
        response_function: ResponseFunctionKind,
        items: Vec<ItemSpec>,
        slope_mode: SlopeMode,
    ) -> Self {
        let identification = match slope_mode {
            SlopeMode::SplineFree => Identification::PenaltyOnly,
            _ => Identification::FirstSplineInterceptZero,
        };
        ModelSpec {
            response_function,
            items,
            slope_mode,
            quadrature_nodes: 30,
            penalty_lambda: 0.0,
            identification,
        }
    }

    pub fn with_quadrature_nodes(mut self, n: usize) -> Self {
        self.quadrature_nodes = n;
        self
    }

    pub fn with_penalty(mut self, lambda: f64) -> Self {
        self.penalty_lambda = lambda;
        self
    }

    fn spline_items(&self) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| matches!(it.family, DifficultyFamilyKind::BSpline { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::InvalidConfig("a model needs at least one item".into()));
        }
        for item in &self.items {
            item.validate()?;
        }
        if self.quadrature_nodes < 5 {
            return Err(Error::InvalidConfig(format!(
                "quadrature_nodes must be at least 5, got {}",
                self.quadrature_nodes
            )));
        }
        if self.penalty_lambda < 0.0 {
            return Err(Error::InvalidConfig("penalty_lambda must be nonnegative".into()));
        }
        if self.penalty_lambda > 0.0 && self.slope_mode != SlopeMode::SplineFree {
            return Err(Error::InvalidConfig(
                "penalty_lambda only applies to the spline-free mode".into(),
            ));
        }
        let spline_items = self.spline_items();
        match self.slope_mode {
            SlopeMode::CommonSlope | SlopeMode::VaryingSlopes => {
                if !spline_items.is_empty() {
                    return Err(Error::InvalidConfig(
                        "spline items need slope_mode spline-free or spline-common-shape".into(),
                    ));
                }
            }
            SlopeMode::SplineFree => {
                if spline_items.is_empty() {
                    return Err(Error::InvalidConfig(
                        "spline-free mode needs at least one bspline item".into(),
                    ));
                }
                if self.identification != Identification::PenaltyOnly {
                    return Err(Error::InvalidConfig(
                        "spline-free mode identifies through the zero-mean ability and the penalty"
                            .into(),
                    ));
                }
                if self.penalty_lambda > 0.0 {
                    let sizes: Vec<usize> = spline_items
                        .iter()
                        .map(|&i| match self.items[i].family {
                            DifficultyFamilyKind::BSpline { n_basis, .. } => n_basis,
                            _ => unreachable!(),
                        })
                        .collect();
                    if sizes.windows(2).any(|w| w[0] != w[1]) {
                        return Err(Error::InvalidConfig(
                            "the shape penalty couples spline items of equal n_basis".into(),
                        ));
                    }
                }
            }
            SlopeMode::SplineCommonShape => {
                if spline_items.is_empty() {
                    return Err(Error::InvalidConfig(
                        "spline-common-shape mode needs at least one bspline item".into(),
                    ));
                }
                if self.identification != Identification::FirstSplineInterceptZero {
                    return Err(Error::InvalidConfig(
                        "spline-common-shape mode requires fixing the first spline intercept".into(),
                    ));
                }
                let shapes: Vec<(usize, usize)> = spline_items
                    .iter()
                    .map(|&i| match self.items[i].family {
                        DifficultyFamilyKind::BSpline { n_basis, degree } => (n_basis, degree),
                        _ => unreachable!(),
                    })
                    .collect();
                if shapes.windows(2).any(|w| w[0] != w[1]) {
                    return Err(Error::InvalidConfig(
                        "a shared spline shape needs identical n_basis and degree on every spline item"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Where one item's parameters live inside the unconstrained vector.
#[derive(Debug, Clone, PartialEq)]
pub enum ItemParamMap {
    /// Two-parameter family: intercept entry plus a slope entry that may be
    /// shared across items.
    InterceptSlope { intercept: usize, slope: usize },
    /// Binary item under a two-parameter family: only the intercept is
    /// likelihood-relevant, the slope stays fixed at one.
    InterceptOnly { intercept: usize },
    /// Cumulative block: first value followed by log-differences
    /// (free thresholds or free spline coefficients).
    Block { start: usize, len: usize },
    /// Common-shape spline: optional per-item intercept plus the shared
    /// cumulative coefficient block.
    SharedSpline {
        intercept: Option<usize>,
        start: usize,
        len: usize,
    },
}

/// Full description of the unconstrained parameter vector.
#[derive(Debug, Clone)]
pub struct ParameterLayout {
    pub maps: Vec<ItemParamMap>,
    pub item_ids: Vec<String>,
    /// Template difficulty function per item; parameters are placeholders,
    /// structure (family, basis, bounds) is authoritative.
    pub templates: Vec<DifficultyFunction>,
    pub log_sigma: usize,
    pub len: usize,
    /// Human-readable name per unconstrained entry.
    pub names: Vec<String>,
}

/// Constrained snapshot of all model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub difficulties: Vec<DifficultyFunction>,
    pub sigma_theta: f64,
}

impl ParameterLayout {
    /// Builds the layout for a model over a dataset. The data determines
    /// spline knot ranges.
    pub fn build(spec: &ModelSpec, data: &ItemResponseMatrix) -> Result<ParameterLayout> {
        spec.validate()?;
        assert_eq!(spec.items.len(), data.n_items(), "spec/data item mismatch");

        let mut templates = Vec::with_capacity(spec.items.len());
        for (i, item) in spec.items.iter().enumerate() {
            templates.push(template_for(spec, item, i, data)?);
        }

        let mut maps: Vec<Option<ItemParamMap>> = vec![None; spec.items.len()];
        let mut names = Vec::new();
        let mut next = 0usize;

        // per-item entries
        for (i, item) in spec.items.iter().enumerate() {
            let id = &item.id;
            match &templates[i] {
                DifficultyFunction::FreeOrdinal { thresholds } => {
                    let len = thresholds.len();
                    maps[i] = Some(ItemParamMap::Block { start: next, len });
                    for j in 0..len {
                        names.push(format!("{id}.threshold[{j}]"));
                    }
                    next += len;
                }
                DifficultyFunction::BSpline { coefficients, .. } => {
                    match spec.slope_mode {
                        SlopeMode::SplineFree => {
                            let len = coefficients.len();
                            maps[i] = Some(ItemParamMap::Block { start: next, len });
                            for j in 0..len {
                                names.push(format!("{id}.coef[{j}]"));
                            }
                            next += len;
                        }
                        SlopeMode::SplineCommonShape => {
                            // intercepts here, shared block later; the first
                            // spline item's intercept is fixed at zero
                            let first_spline = spec.spline_items()[0];
                            let intercept = if i == first_spline {
                                None
                            } else {
                                names.push(format!("{id}.intercept"));
                                next += 1;
                                Some(next - 1)
                            };
                            maps[i] = Some(ItemParamMap::SharedSpline {
                                intercept,
                                start: usize::MAX, // patched below
                                len: 0,
                            });
                        }
                        _ => unreachable!("validated"),
                    }
                }
                _ => {
                    if item.support == SupportKind::Binary {
                        maps[i] = Some(ItemParamMap::InterceptOnly { intercept: next });
                        names.push(format!("{id}.intercept"));
                        next += 1;
                    } else {
                        names.push(format!("{id}.intercept"));
                        let intercept = next;
                        next += 1;
                        let slope = match spec.slope_mode {
                            SlopeMode::CommonSlope => usize::MAX, // patched below
                            _ => {
                                names.push(format!("{id}.slope"));
                                next += 1;
                                next - 1
                            }
                        };
                        maps[i] = Some(ItemParamMap::InterceptSlope { intercept, slope });
                    }
                }
            }
        }

        // shared slope entry
        if spec.slope_mode == SlopeMode::CommonSlope {
            let shared = maps.iter().any(|m| {
                matches!(m, Some(ItemParamMap::InterceptSlope { slope, .. }) if *slope == usize::MAX)
            });
            if shared {
                let idx = next;
                names.push("common.slope".to_string());
                next += 1;
                for m in maps.iter_mut().flatten() {
                    if let ItemParamMap::InterceptSlope { slope, .. } = m {
                        if *slope == usize::MAX {
                            *slope = idx;
                        }
                    }
                }
            }
        }

        // shared spline block
        if spec.slope_mode == SlopeMode::SplineCommonShape {
            let first_spline = spec.spline_items()[0];
            let len = templates[first_spline].param_count();
            let start = next;
            for j in 0..len {
                names.push(format!("common.coef[{j}]"));
            }
            next += len;
            for m in maps.iter_mut().flatten() {
                if let ItemParamMap::SharedSpline {
                    start: s, len: l, ..
                } = m
                {
                    *s = start;
                    *l = len;
                }
            }
        }

        let log_sigma = next;
        names.push("sigma_theta".to_string());
        next += 1;

        Ok(ParameterLayout {
            maps: maps.into_iter().map(Option::unwrap).collect(),
            item_ids: spec.items.iter().map(|it| it.id.clone()).collect(),
            templates,
            log_sigma,
            len: next,
            names,
        })
    }

    pub fn sigma_theta(&self, u: &[f64]) -> f64 {
        u[self.log_sigma].exp()
    }

    /// Materializes the constrained difficulty function of one item.
    pub fn difficulty(&self, item: usize, u: &[f64]) -> DifficultyFunction {
        let template = &self.templates[item];
        match &self.maps[item] {
            ItemParamMap::InterceptSlope { intercept, slope } => {
                template.from_unconstrained(&[u[*intercept], u[*slope]])
            }
            ItemParamMap::InterceptOnly { intercept } => {
                template.from_unconstrained(&[u[*intercept], 0.0])
            }
            ItemParamMap::Block { start, len } => {
                template.from_unconstrained(&u[*start..*start + *len])
            }
            ItemParamMap::SharedSpline {
                intercept,
                start,
                len,
            } => {
                let shift = intercept.map(|ix| u[ix]).unwrap_or(0.0);
                let shared = template.from_unconstrained(&u[*start..*start + *len]);
                match shared {
                    DifficultyFunction::BSpline {
                        basis,
                        coefficients,
                    } => DifficultyFunction::BSpline {
                        basis,
                        coefficients: coefficients.iter().map(|c| c + shift).collect(),
                    },
                    _ => unreachable!("shared block is always a spline"),
                }
            }
        }
    }

    /// Constrained snapshot of the whole parameter vector.
    pub fn constrain(&self, u: &[f64]) -> ModelParameters {
        ModelParameters {
            difficulties: (0..self.maps.len()).map(|i| self.difficulty(i, u)).collect(),
            sigma_theta: self.sigma_theta(u),
        }
    }

    /// Adds an item's gradient with respect to its constrained coefficients
    /// into the unconstrained gradient vector.
    pub fn push_gradient(&self, item: usize, grad_c: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.maps[item] {
            ItemParamMap::InterceptSlope { intercept, slope } => {
                out[*intercept] += grad_c[0];
                out[*slope] += grad_c[1] * u[*slope].exp();
            }
            ItemParamMap::InterceptOnly { intercept } => {
                out[*intercept] += grad_c[0];
            }
            ItemParamMap::Block { start, len } => {
                push_cumulative(grad_c, &u[*start..*start + *len], &mut out[*start..*start + *len]);
            }
            ItemParamMap::SharedSpline {
                intercept,
                start,
                len,
            } => {
                if let Some(ix) = intercept {
                    out[*ix] += grad_c.iter().sum::<f64>();
                }
                push_cumulative(grad_c, &u[*start..*start + *len], &mut out[*start..*start + *len]);
            }
        }
    }

    /// Reported constrained parameter values, parallel to the rows of
    /// [`ParameterLayout::constrained_jacobian`]: item blocks in item order
    /// (binary items report only their intercept), sigma_theta last.
    pub fn constrained_values(&self, u: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for (i, map) in self.maps.iter().enumerate() {
            let coeffs = self.difficulty(i, u).coefficients();
            match map {
                ItemParamMap::InterceptOnly { .. } => out.push(coeffs[0]),
                _ => out.extend(coeffs),
            }
        }
        out.push(self.sigma_theta(u));
        out
    }

    /// Sparse delta-method rows: for every reported constrained scalar, the
    /// list of (unconstrained index, partial derivative). Item coefficients
    /// come first in item order, sigma_theta last.
    pub fn constrained_jacobian(&self, u: &[f64]) -> Vec<(String, Vec<(usize, f64)>)> {
        let mut rows = Vec::new();
        for (i, map) in self.maps.iter().enumerate() {
            let id = &self.item_ids[i];
            let template = &self.templates[i];
            let label = |j: usize| match template {
                DifficultyFunction::FreeOrdinal { .. } => format!("{id}.threshold[{j}]"),
                DifficultyFunction::BSpline { .. } => format!("{id}.coef[{j}]"),
                _ => {
                    if j == 0 {
                        format!("{id}.intercept")
                    } else {
                        format!("{id}.slope")
                    }
                }
            };
            match map {
                ItemParamMap::InterceptSlope { intercept, slope } => {
                    rows.push((label(0), vec![(*intercept, 1.0)]));
                    rows.push((label(1), vec![(*slope, u[*slope].exp())]));
                }
                ItemParamMap::InterceptOnly { intercept } => {
                    rows.push((label(0), vec![(*intercept, 1.0)]));
                }
                ItemParamMap::Block { start, len } => {
                    for m in 0..*len {
                        let mut row = vec![(*start, 1.0)];
                        for j in 1..=m {
                            row.push((start + j, u[start + j].exp()));
                        }
                        rows.push((label(m), row));
                    }
                }
                ItemParamMap::SharedSpline {
                    intercept,
                    start,
                    len,
                } => {
                    for m in 0..*len {
                        let mut row = Vec::new();
                        if let Some(ix) = intercept {
                            row.push((*ix, 1.0));
                        }
                        row.push((*start, 1.0));
                        for j in 1..=m {
                            row.push((start + j, u[start + j].exp()));
                        }
                        rows.push((label(m), row));
                    }
                }
            }
        }
        rows.push((
            "sigma_theta".to_string(),
            vec![(self.log_sigma, u[self.log_sigma].exp())],
        ));
        rows
    }

    /// Moment-matching starting values on the unconstrained scale.
    pub fn initial_vector(
        &self,
        spec: &ModelSpec,
        data: &ItemResponseMatrix,
    ) -> Result<Vec<f64>> {
        let kind = spec.response_function;
        let mut u = vec![0.0; self.len];

        // pooled mean over spline items, for the common-shape start
        let spline_ids = spec.spline_items();
        let pooled_mean = if spline_ids.is_empty() {
            0.0
        } else {
            let all: Vec<f64> = spline_ids
                .iter()
                .flat_map(|&i| data.observed_column(i))
                .collect();
            all.iter().sum::<f64>() / all.len() as f64
        };

        for (i, item) in spec.items.iter().enumerate() {
            let col = data.observed_column(i);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            match &self.maps[i] {
                ItemParamMap::InterceptOnly { intercept } => {
                    let p = (col.iter().filter(|&&v| v > 0.5).count() as f64 / n)
                        .clamp(0.5 / n, 1.0 - 0.5 / n);
                    u[*intercept] = -kind.quantile(p)?;
                }
                ItemParamMap::InterceptSlope { intercept, slope } => {
                    // match the location on the transformed scale with unit slope
                    let g_mean = col
                        .iter()
                        .map(|&y| self.templates[i].basis_at(y).0[1])
                        .sum::<f64>()
                        / n;
                    u[*intercept] = -g_mean;
                    u[*slope] = 0.0;
                }
                ItemParamMap::Block { start, len } => match &self.templates[i] {
                    DifficultyFunction::FreeOrdinal { .. } => {
                        let mut prev = f64::NEG_INFINITY;
                        let mut thresholds = Vec::with_capacity(*len);
                        for r in 0..*len {
                            let p = (col.iter().filter(|&&v| v > r as f64 + 0.5).count() as f64
                                / n)
                                .clamp(0.5 / n, 1.0 - 0.5 / n);
                            let mut t = -kind.quantile(p)?;
                            if t <= prev + 0.05 {
                                t = prev + 0.05;
                            }
                            thresholds.push(t);
                            prev = t;
                        }
                        let f = DifficultyFunction::FreeOrdinal { thresholds };
                        u[*start..*start + *len].copy_from_slice(&f.to_unconstrained()?);
                    }
                    DifficultyFunction::BSpline { basis, .. } => {
                        let shift = spline_start_shift(item, &col);
                        let coefficients: Vec<f64> = basis
                            .greville()
                            .iter()
                            .map(|&g| spline_counterpart(item, g) - shift)
                            .collect();
                        let f = DifficultyFunction::BSpline {
                            basis: basis.clone(),
                            coefficients,
                        };
                        u[*start..*start + *len].copy_from_slice(&f.to_unconstrained()?);
                    }
                    _ => unreachable!("blocks are ordinal or spline"),
                },
                ItemParamMap::SharedSpline {
                    intercept,
                    start,
                    len,
                } => {
                    if let Some(ix) = intercept {
                        u[*ix] = pooled_mean - mean;
                    }
                    if let DifficultyFunction::BSpline { basis, .. } = &self.templates[i] {
                        let coefficients: Vec<f64> = basis
                            .greville()
                            .iter()
                            .map(|&g| spline_counterpart(item, g) - pooled_mean)
                            .collect();
                        let f = DifficultyFunction::BSpline {
                            basis: basis.clone(),
                            coefficients,
                        };
                        u[*start..*start + *len].copy_from_slice(&f.to_unconstrained()?);
                    }
                }
            }
        }
        u[self.log_sigma] = 0.0; // sigma starts at 1
        Ok(u)
    }
}

/// g(y) of the parametric counterpart used to seed spline coefficients.
fn spline_counterpart(item: &ItemSpec, y: f64) -> f64 {
    match item.support {
        SupportKind::Count => y.ln_1p(),
        _ => y,
    }
}

fn spline_start_shift(item: &ItemSpec, col: &[f64]) -> f64 {
    let n = col.len() as f64;
    match item.support {
        SupportKind::Count => col.iter().map(|v| v.ln_1p()).sum::<f64>() / n,
        _ => col.iter().sum::<f64>() / n,
    }
}

fn push_cumulative(grad_c: &[f64], u: &[f64], out: &mut [f64]) {
    // c_0 = u_0, c_m = c_{m-1} + exp(u_m): suffix sums of the constrained
    // gradient, scaled by exp(u_j) for the log-difference entries
    let mut suffix = 0.0;
    for j in (0..grad_c.len()).rev() {
        suffix += grad_c[j];
        if j == 0 {
            out[0] += suffix;
        } else {
            out[j] += suffix * u[j].exp();
        }
    }
}

fn template_for(
    spec: &ModelSpec,
    item: &ItemSpec,
    index: usize,
    data: &ItemResponseMatrix,
) -> Result<DifficultyFunction> {
    Ok(match item.family {
        DifficultyFamilyKind::Linear => DifficultyFunction::Linear {
            intercept: 0.0,
            slope: 1.0,
        },
        DifficultyFamilyKind::Log => DifficultyFunction::Log {
            intercept: 0.0,
            slope: 1.0,
        },
        DifficultyFamilyKind::LogPlusOne => DifficultyFunction::LogPlusOne {
            intercept: 0.0,
            slope: 1.0,
        },
        DifficultyFamilyKind::InverseCdf { inverse_kind } => {
            let (lower, upper) = match item.support {
                SupportKind::Continuous { lower, upper } => (lower, upper),
                // discrete levels 0..k-1 map to (y + 0.5) / k inside the
                // unit interval, the boundary squeeze with n = k levels
                SupportKind::OrderedCategorical { k } => (-0.5, k as f64 - 0.5),
                _ => unreachable!("validated"),
            };
            DifficultyFunction::InverseCdf {
                intercept: 0.0,
                slope: 1.0,
                kind: inverse_kind.unwrap_or(spec.response_function),
                lower,
                upper,
            }
        }
        DifficultyFamilyKind::FreeOrdinal => {
            let k = item.support.categories().expect("validated");
            DifficultyFunction::FreeOrdinal {
                thresholds: (0..k - 1).map(|r| r as f64).collect(),
            }
        }
        DifficultyFamilyKind::BSpline { n_basis, degree } => {
            let range = match spec.slope_mode {
                SlopeMode::SplineCommonShape => {
                    let cols: Vec<f64> = spec
                        .spline_items()
                        .into_iter()
                        .flat_map(|i| data.observed_column(i))
                        .collect();
                    observed_range(&cols)?
                }
                _ => observed_range(&data.observed_column(index))?,
            };
            let basis = build_bspline_basis(range, n_basis, degree)?;
            let coefficients = basis.greville();
            DifficultyFunction::BSpline {
                basis,
                coefficients,
            }
        }
    })
}

fn observed_range(values: &[f64]) -> Result<(f64, f64)> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < hi) {
        return Err(Error::InvalidConfig(
            "spline items need at least two distinct observed values".into(),
        ));
    }
    Ok((lo, hi))
}
