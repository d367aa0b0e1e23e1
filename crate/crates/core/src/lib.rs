//! Latent trait models with item-specific difficulty functions: the
//! probability of exceeding any observable response level is the response
//! function evaluated at ability minus the item's difficulty at that level.
//! One model family covers continuous, binary, ordered-categorical, count,
//! and mixed-format item data.
//!
//! The crate provides the data model and ingestion ([`data`]), the response
//! and difficulty function kernels ([`response`], [`difficulty`],
//! [`spline`]), the Gauss-Hermite marginal likelihood with analytic scores
//! ([`quadrature`], [`likelihood`], [`model`]), maximum likelihood
//! estimation with standard errors and likelihood-ratio tests
//! ([`estimate`]), posterior person scoring ([`scoring`]), seeded
//! simulation and recovery studies ([`simulate`]), and diagnostic curve
//! tabulation ([`curves`]).

pub mod curves;
pub mod data;
pub mod difficulty;
pub mod error;
pub mod estimate;
pub mod likelihood;
pub mod model;
pub mod numeric;
pub mod quadrature;
pub mod response;
pub mod scoring;
pub mod simulate;
pub mod spline;

#[cfg(test)]
pub(crate) mod testutil;
