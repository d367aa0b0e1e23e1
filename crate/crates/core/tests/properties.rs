//! Cross-module invariants: latent monotonicity, quadrature stability on
//! fitted models, and fit-result serialization round trips.

use proptest::prelude::*;
use thresholds_core::data::{DifficultyFamilyKind, ItemSpec, SupportKind};
use thresholds_core::difficulty::DifficultyFunction;
use thresholds_core::estimate::{fit, FitOptions};
use thresholds_core::likelihood::Evaluator;
use thresholds_core::model::{ModelSpec, ParameterLayout, SlopeMode};
use thresholds_core::response::ResponseFunctionKind;
use thresholds_core::scoring::Scorer;
use thresholds_core::simulate::{recovery_scenario, simulate_dataset, SimulationScenario};

fn families() -> impl Strategy<Value = DifficultyFunction> {
    let two = (-2.0f64..2.0, 0.2f64..3.0);
    prop_oneof![
        two.clone()
            .prop_map(|(intercept, slope)| DifficultyFunction::Linear { intercept, slope }),
        two.clone()
            .prop_map(|(intercept, slope)| DifficultyFunction::Log { intercept, slope }),
        two.clone()
            .prop_map(|(intercept, slope)| DifficultyFunction::LogPlusOne { intercept, slope }),
        two.prop_map(|(intercept, slope)| DifficultyFunction::InverseCdf {
            intercept,
            slope,
            kind: ResponseFunctionKind::Normal,
            lower: 0.0,
            upper: 10.0,
        }),
    ]
}

proptest! {
    // latent monotonicity: P(Y > y) strictly increases with ability for
    // every family and both response functions
    #[test]
    fn exceedance_increases_with_ability(
        difficulty in families(),
        y in 0.5f64..9.5,
        theta_low in -3.0f64..3.0,
        gap in 0.1f64..2.0,
        logistic in proptest::bool::ANY,
    ) {
        let kind = if logistic {
            ResponseFunctionKind::Logistic
        } else {
            ResponseFunctionKind::Normal
        };
        let lo = kind.cdf(theta_low - difficulty.eval(y));
        let hi = kind.cdf(theta_low + gap - difficulty.eval(y));
        prop_assert!(hi > lo);
    }

    // and decreases along the response scale
    #[test]
    fn exceedance_decreases_along_support(
        difficulty in families(),
        y in 0.5f64..9.0,
        dy in 0.05f64..0.5,
        theta in -3.0f64..3.0,
    ) {
        let kind = ResponseFunctionKind::Normal;
        let a = kind.cdf(theta - difficulty.eval(y));
        let b = kind.cdf(theta - difficulty.eval(y + dy));
        prop_assert!(b <= a);
    }
}

fn loglik_at_nodes(
    base: &ModelSpec,
    data: &thresholds_core::data::ItemResponseMatrix,
    u: &[f64],
    nodes: usize,
) -> f64 {
    let mut spec = base.clone();
    spec.quadrature_nodes = nodes;
    let layout = ParameterLayout::build(&spec, data).unwrap();
    Evaluator::new(&spec, &layout, data)
        .unwrap()
        .log_likelihood(u)
        .unwrap()
        .loglik
}

#[test]
fn quadrature_stability_on_fitted_models() {
    // On a fitted mixed battery, the default 30-node rule carries a small
    // residual truncation error that doubling the rule exposes; the rule
    // sequence must have settled by 120 nodes to the per-person 1e-6
    // level, and the 30-node value must sit within the documented 1e-4
    // per-person envelope of the converged value.
    let scenario = mixed_probe_scenario();
    let (data, _) = simulate_dataset(&scenario).unwrap();
    let opts = FitOptions {
        compute_se: false,
        ..FitOptions::default()
    };
    let fitted = fit(&data, &scenario.spec, &opts).unwrap();
    let per_person = data.n_persons() as f64;
    let l30 = loglik_at_nodes(&fitted.spec, &data, &fitted.params_unconstrained, 30);
    let l120 = loglik_at_nodes(&fitted.spec, &data, &fitted.params_unconstrained, 120);
    let l240 = loglik_at_nodes(&fitted.spec, &data, &fitted.params_unconstrained, 240);
    assert!(
        (l120 - l240).abs() < 1e-6 * per_person,
        "rule not converged: {l120} vs {l240}"
    );
    assert!(
        (l30 - l240).abs() < 1e-4 * per_person,
        "default rule outside its envelope: {l30} vs {l240}"
    );
}

#[test]
fn quadrature_converges_on_highly_informative_batteries() {
    // ten informative items concentrate the posterior; the rule sequence
    // settles once the nodes resolve it
    let scenario = recovery_scenario(60, 4321, 1);
    let (data, _) = simulate_dataset(&scenario).unwrap();
    let opts = FitOptions {
        compute_se: false,
        ..FitOptions::default()
    };
    let fitted = fit(&data, &scenario.spec, &opts).unwrap();
    let l120 = loglik_at_nodes(&fitted.spec, &data, &fitted.params_unconstrained, 120);
    let l240 = loglik_at_nodes(&fitted.spec, &data, &fitted.params_unconstrained, 240);
    assert!(
        (l120 - l240).abs() < 1e-6 * data.n_persons() as f64,
        "{l120} vs {l240}"
    );
}

#[test]
fn fit_result_json_round_trip_preserves_scoring() {
    // a serialized fit must reproduce the same posterior scores when read
    // back, which is what the score command relies on
    let items = vec![
        ItemSpec::new("b", SupportKind::Binary, DifficultyFamilyKind::Linear),
        ItemSpec::new(
            "o",
            SupportKind::OrderedCategorical { k: 4 },
            DifficultyFamilyKind::FreeOrdinal,
        ),
        ItemSpec::new("c", SupportKind::Count, DifficultyFamilyKind::LogPlusOne),
    ];
    let scenario = SimulationScenario {
        spec: ModelSpec::new(
            ResponseFunctionKind::Normal,
            items,
            SlopeMode::VaryingSlopes,
        ),
        difficulties: vec![
            DifficultyFunction::Linear {
                intercept: 0.2,
                slope: 1.0,
            },
            DifficultyFunction::FreeOrdinal {
                thresholds: vec![-1.0, 0.0, 1.1],
            },
            DifficultyFunction::LogPlusOne {
                intercept: -0.4,
                slope: 1.2,
            },
        ],
        sigma_theta: 1.0,
        n_persons: 120,
        seed: 2718,
        replications: 1,
    };
    let (data, _) = simulate_dataset(&scenario).unwrap();
    let opts = FitOptions {
        compute_se: false,
        ..FitOptions::default()
    };
    let fitted = fit(&data, &scenario.spec, &opts).unwrap();

    let json = serde_json::to_string(&fitted).unwrap();
    let restored: thresholds_core::estimate::FitResult = serde_json::from_str(&json).unwrap();
    assert_eq!(fitted.parameters, restored.parameters);
    assert_eq!(fitted.spec, restored.spec);

    let a = Scorer::new(&fitted.spec, &fitted.parameters).unwrap();
    let b = Scorer::new(&restored.spec, &restored.parameters).unwrap();
    for p in 0..data.n_persons().min(10) {
        let row = data.observed_row(p);
        let sa = a.score(p, &row).unwrap();
        let sb = b.score(p, &row).unwrap();
        assert_eq!(sa.posterior_mean.to_bits(), sb.posterior_mean.to_bits());
        assert_eq!(sa.posterior_sd.to_bits(), sb.posterior_sd.to_bits());
    }
}

#[test]
fn spline_fit_round_trips_through_json() {
    // spline difficulties carry their basis; the knot vector must survive
    // serialization bit-exactly
    let gen_items = vec![
        ItemSpec::new("s1", SupportKind::Count, DifficultyFamilyKind::LogPlusOne),
        ItemSpec::new("s2", SupportKind::Count, DifficultyFamilyKind::LogPlusOne),
    ];
    let scenario = SimulationScenario {
        spec: ModelSpec::new(
            ResponseFunctionKind::Normal,
            gen_items.clone(),
            SlopeMode::VaryingSlopes,
        ),
        difficulties: vec![
            DifficultyFunction::LogPlusOne {
                intercept: 0.0,
                slope: 1.0,
            },
            DifficultyFunction::LogPlusOne {
                intercept: 0.5,
                slope: 1.3,
            },
        ],
        sigma_theta: 1.0,
        n_persons: 150,
        seed: 1414,
        replications: 1,
    };
    let (data, _) = simulate_dataset(&scenario).unwrap();
    let spline_items: Vec<ItemSpec> = gen_items
        .iter()
        .map(|it| {
            ItemSpec::new(
                it.id.clone(),
                it.support,
                DifficultyFamilyKind::BSpline {
                    n_basis: 5,
                    degree: 3,
                },
            )
        })
        .collect();
    let spec = ModelSpec::new(
        ResponseFunctionKind::Normal,
        spline_items,
        SlopeMode::SplineCommonShape,
    );
    let opts = FitOptions {
        compute_se: false,
        ..FitOptions::default()
    };
    let fitted = fit(&data, &spec, &opts).unwrap();
    let json = serde_json::to_string_pretty(&fitted).unwrap();
    let restored: thresholds_core::estimate::FitResult = serde_json::from_str(&json).unwrap();
    assert_eq!(fitted.parameters, restored.parameters);
    for (a, b) in fitted
        .parameters
        .difficulties
        .iter()
        .zip(&restored.parameters.difficulties)
    {
        for y in [0.0, 1.0, 2.5, 7.0] {
            assert_eq!(a.eval(y).to_bits(), b.eval(y).to_bits());
        }
    }
}

fn mixed_probe_scenario() -> SimulationScenario {
    let items = vec![
        ItemSpec::new("b", SupportKind::Binary, DifficultyFamilyKind::Linear),
        ItemSpec::new(
            "o",
            SupportKind::OrderedCategorical { k: 5 },
            DifficultyFamilyKind::FreeOrdinal,
        ),
        ItemSpec::new("c", SupportKind::Count, DifficultyFamilyKind::LogPlusOne),
        ItemSpec::new(
            "x1",
            SupportKind::Continuous { lower: f64::NEG_INFINITY, upper: f64::INFINITY },
            DifficultyFamilyKind::Linear,
        ),
    ];
    SimulationScenario {
        spec: ModelSpec::new(ResponseFunctionKind::Normal, items, SlopeMode::VaryingSlopes),
        difficulties: vec![
            DifficultyFunction::Linear { intercept: 0.3, slope: 1.0 },
            DifficultyFunction::FreeOrdinal { thresholds: vec![-1.3, -0.4, 0.5, 1.5] },
            DifficultyFunction::LogPlusOne { intercept: -0.6, slope: 1.1 },
            DifficultyFunction::Linear { intercept: -0.5, slope: 0.8 },
        ],
        sigma_theta: 1.0,
        n_persons: 60,
        seed: 4321,
        replications: 1,
    }
}
