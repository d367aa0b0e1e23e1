//! Deterministic fixtures shared by unit tests.

use crate::data::{DifficultyFamilyKind, ItemResponseMatrix, ItemSpec, SupportKind};
use crate::model::{ModelSpec, ParameterLayout, SlopeMode};
use crate::response::ResponseFunctionKind;

/// Tiny deterministic generator for test data (not model-distributed, just
/// valid and varied).
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((self.0 >> 33) as f64) / (1u64 << 31) as f64
    }
}

/// Five items of mixed formats: one binary, one ordinal (k = 5, free
/// thresholds), one count, two unbounded continuous.
pub fn mixed_instance(
    n_persons: usize,
    seed: u64,
) -> (ModelSpec, ItemResponseMatrix, ParameterLayout) {
    let unbounded = SupportKind::Continuous {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };
    let items = vec![
        ItemSpec::new("bin", SupportKind::Binary, DifficultyFamilyKind::Linear),
        ItemSpec::new(
            "ord",
            SupportKind::OrderedCategorical { k: 5 },
            DifficultyFamilyKind::FreeOrdinal,
        ),
        ItemSpec::new("cnt", SupportKind::Count, DifficultyFamilyKind::LogPlusOne),
        ItemSpec::new("x1", unbounded, DifficultyFamilyKind::Linear),
        ItemSpec::new("x2", unbounded, DifficultyFamilyKind::Linear),
    ];
    let mut rng = Lcg(seed);
    let mut values = Vec::new();
    let mut observed = Vec::new();
    for _ in 0..n_persons {
        let ability = 2.0 * rng.next_f64() - 1.0;
        values.push((rng.next_f64() < 0.5 + 0.3 * ability) as u8 as f64);
        values.push(((rng.next_f64() * 3.0 + ability + 1.0).clamp(0.0, 4.0)).floor());
        values.push((rng.next_f64() * 4.0 + (ability + 1.5).max(0.0)).floor());
        values.push(ability + 2.0 * rng.next_f64() - 1.0);
        values.push(0.5 * ability + rng.next_f64());
        // sprinkle missingness on the last item
        let missing = rng.next_f64() < 0.15;
        observed.extend_from_slice(&[true, true, true, true, !missing]);
    }
    let data = ItemResponseMatrix::from_parts(items.clone(), n_persons, values, observed).unwrap();
    let spec = ModelSpec::new(ResponseFunctionKind::Normal, items, SlopeMode::VaryingSlopes);
    let layout = ParameterLayout::build(&spec, &data).unwrap();
    (spec, data, layout)
}

/// Two count items with free spline difficulties coupled by the shape
/// penalty.
pub fn two_spline_items_with(
    lambda: f64,
    n_basis: usize,
) -> (ModelSpec, ItemResponseMatrix, ParameterLayout) {
    let degree = 3.min(n_basis - 1);
    let family = DifficultyFamilyKind::BSpline { n_basis, degree };
    let items = vec![
        ItemSpec::new("s1", SupportKind::Count, family),
        ItemSpec::new("s2", SupportKind::Count, family),
    ];
    let mut rng = Lcg(42);
    let n_persons = 24;
    let mut values = Vec::new();
    for p in 0..n_persons {
        values.push(((p % 9) as f64 + (rng.next_f64() * 2.0).floor()).min(9.0));
        values.push(((p % 8) as f64 + (rng.next_f64() * 3.0).floor()).min(9.0));
    }
    let data = ItemResponseMatrix::from_parts(
        items.clone(),
        n_persons,
        values,
        vec![true; n_persons * 2],
    )
    .unwrap();
    let spec = ModelSpec::new(ResponseFunctionKind::Normal, items, SlopeMode::SplineFree)
        .with_penalty(lambda);
    let layout = ParameterLayout::build(&spec, &data).unwrap();
    (spec, data, layout)
}
