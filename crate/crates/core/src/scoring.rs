//! Posterior ability estimation: posterior density, mean (EAP), mode (MAP),
//! and batch scoring of a response matrix against fitted item parameters.
//!
//! Item-parameter uncertainty is not propagated; estimates plug in the
//! fitted difficulties and prior scale.

use crate::data::{ItemResponseMatrix, ItemSpec, TreatAs};
use crate::error::{Error, Result};
use crate::likelihood::{log_density_continuous, log_density_discrete};
use crate::model::{ModelParameters, ModelSpec};
use crate::quadrature::{gauss_hermite_rule, QuadratureRule};
use crate::response::ResponseFunctionKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonScore {
    pub person_index: usize,
    pub posterior_mean: f64,
    pub posterior_mode: f64,
    pub posterior_sd: f64,
    pub n_items_observed: usize,
}

/// Scoring machinery for one fitted model.
pub struct Scorer<'a> {
    kind: ResponseFunctionKind,
    items: &'a [ItemSpec],
    parameters: &'a ModelParameters,
    rule: QuadratureRule,
}

impl<'a> Scorer<'a> {
    pub fn new(spec: &'a ModelSpec, parameters: &'a ModelParameters) -> Result<Self> {
        if spec.items.len() != parameters.difficulties.len() {
            return Err(Error::InvalidConfig(format!(
                "{} items but {} difficulty functions",
                spec.items.len(),
                parameters.difficulties.len()
            )));
        }
        if !(parameters.sigma_theta > 0.0) {
            return Err(Error::InvalidConfig(
                "sigma_theta must be positive for scoring".into(),
            ));
        }
        Ok(Scorer {
            kind: spec.response_function,
            items: &spec.items,
            parameters,
            rule: gauss_hermite_rule(spec.quadrature_nodes)?,
        })
    }

    pub fn sigma_theta(&self) -> f64 {
        self.parameters.sigma_theta
    }

    /// Log-likelihood of a response set at ability `theta`.
    fn log_conditional(&self, responses: &[(usize, f64)], theta: f64) -> Result<f64> {
        let mut acc = 0.0;
        for &(i, y) in responses {
            let item = &self.items[i];
            let difficulty = &self.parameters.difficulties[i];
            if item.treat_as == TreatAs::Continuous {
                acc += log_density_continuous(self.kind, difficulty, theta, y).map_err(|e| {
                    match e {
                        Error::ZeroDerivative { value, .. } => Error::ZeroDerivative {
                            item: item.id.clone(),
                            value,
                        },
                        other => other,
                    }
                })?;
            } else {
                acc += log_density_discrete(self.kind, &item.support, difficulty, theta, y).0;
            }
        }
        Ok(acc)
    }

    /// Normalizing constant of the posterior: the marginal likelihood of
    /// the responses under the fitted prior, via the fit's quadrature rule.
    fn log_marginal(&self, responses: &[(usize, f64)]) -> Result<f64> {
        let sigma = self.parameters.sigma_theta;
        let joint: Result<Vec<f64>> = (0..self.rule.n)
            .map(|k| {
                Ok(self.rule.weights[k].ln()
                    + self.log_conditional(responses, self.rule.ability(k, sigma))?)
            })
            .collect();
        Ok(crate::numeric::log_sum_exp(&joint?))
    }

    /// Normalized posterior density of ability `theta` given responses.
    /// An empty response set yields the prior density.
    pub fn posterior_density(&self, responses: &[(usize, f64)], theta: f64) -> Result<f64> {
        let sigma = self.parameters.sigma_theta;
        let z = theta / sigma;
        let log_prior = self.log_standard_prior(z) - sigma.ln();
        let log_post =
            self.log_conditional(responses, theta)? + log_prior - self.log_marginal(responses)?;
        Ok(log_post.exp())
    }

    fn log_standard_prior(&self, z: f64) -> f64 {
        // the ability prior is always normal, whatever the response function
        ResponseFunctionKind::Normal.log_pdf(z)
    }

    /// Posterior mean, mode, and sd of one person's responses.
    pub fn score(&self, person_index: usize, responses: &[(usize, f64)]) -> Result<PersonScore> {
        if responses.is_empty() {
            return Err(Error::NoObservedItems);
        }
        let sigma = self.parameters.sigma_theta;
        let joint: Result<Vec<f64>> = (0..self.rule.n)
            .map(|k| {
                Ok(self.rule.weights[k].ln()
                    + self.log_conditional(responses, self.rule.ability(k, sigma))?)
            })
            .collect();
        let joint = joint?;
        let log_marginal = crate::numeric::log_sum_exp(&joint);
        if !log_marginal.is_finite() {
            return Err(Error::NonFiniteLikelihood(person_index));
        }
        let mut mean = 0.0;
        let mut second = 0.0;
        for k in 0..self.rule.n {
            let w = (joint[k] - log_marginal).exp();
            let theta = self.rule.ability(k, sigma);
            mean += w * theta;
            second += w * theta * theta;
        }
        let var = (second - mean * mean).max(0.0);
        Ok(PersonScore {
            person_index,
            posterior_mean: mean,
            posterior_mode: self.posterior_mode(responses)?,
            posterior_sd: var.sqrt(),
            n_items_observed: responses.len(),
        })
    }

    pub fn posterior_mean(&self, responses: &[(usize, f64)]) -> Result<f64> {
        Ok(self.score(0, responses)?.posterior_mean)
    }

    /// Posterior mode by grid bracketing plus golden-section refinement on
    /// [-8 sigma, 8 sigma].
    pub fn posterior_mode(&self, responses: &[(usize, f64)]) -> Result<f64> {
        if responses.is_empty() {
            return Err(Error::NoObservedItems);
        }
        let sigma = self.parameters.sigma_theta;
        let lo = -8.0 * sigma;
        let hi = 8.0 * sigma;
        let objective = |theta: f64| -> Result<f64> {
            let z = theta / sigma;
            Ok(self.log_conditional(responses, theta)? + self.log_standard_prior(z))
        };

        let n_grid: usize = 200;
        let step = (hi - lo) / n_grid as f64;
        let mut best_idx = 0;
        let mut best_val = f64::NEG_INFINITY;
        for i in 0..=n_grid {
            let v = objective(lo + step * i as f64)?;
            if v > best_val {
                best_val = v;
                best_idx = i;
            }
        }
        let mut a = lo + step * (best_idx.saturating_sub(1)) as f64;
        let mut b = (lo + step * (best_idx + 1) as f64).min(hi);

        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let mut fc = objective(c)?;
        let mut fd = objective(d)?;
        for _ in 0..200 {
            if (b - a).abs() < 1e-10 * sigma.max(1.0) {
                break;
            }
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = objective(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = objective(d)?;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// Scores every person of a matrix; rows fail individually.
    pub fn score_matrix(&self, data: &ItemResponseMatrix) -> Vec<Result<PersonScore>> {
        (0..data.n_persons())
            .map(|p| {
                let responses = data.observed_row(p);
                self.score(p, &responses)
            })
            .collect()
    }
}
