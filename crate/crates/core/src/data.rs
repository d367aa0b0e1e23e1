//! Data model: item supports, item specifications, the response matrix, and
//! CSV/metadata ingestion.
//!
//! The CSV dialect is fixed: comma separated, `.` decimal point, `NA` as the
//! missing token, UTF-8, one header row of item ids, persons as rows. Item
//! metadata lives in a TOML file with one table per item.

use crate::error::{Error, Result};
use crate::response::ResponseFunctionKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Serialize an extended-real bound as `null` when infinite (JSON has no
/// infinity literal).
mod lower_bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

mod upper_bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// The support of an item's responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SupportKind {
    Continuous {
        #[serde(with = "lower_bound", default = "neg_inf")]
        lower: f64,
        #[serde(with = "upper_bound", default = "pos_inf")]
        upper: f64,
    },
    Binary,
    /// Ordered categories labeled 0..k-1.
    OrderedCategorical { k: usize },
    /// Nonnegative integers with infinite support.
    Count,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

impl SupportKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            SupportKind::Continuous { lower, upper } => {
                if !(lower < upper) {
                    return Err(Error::InvalidConfig(format!(
                        "continuous support needs lower < upper, got ({lower}, {upper})"
                    )));
                }
            }
            SupportKind::OrderedCategorical { k } => {
                if *k < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "ordinal support needs at least 2 categories, got {k}"
                    )));
                }
            }
            SupportKind::Binary | SupportKind::Count => {}
        }
        Ok(())
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, SupportKind::Continuous { .. })
    }

    /// Number of categories of a finite discrete support.
    pub fn categories(&self) -> Option<usize> {
        match self {
            SupportKind::Binary => Some(2),
            SupportKind::OrderedCategorical { k } => Some(*k),
            _ => None,
        }
    }

    /// Whether `v` is a member of the support (continuous bounds inclusive;
    /// the boundary squeeze happens afterwards).
    pub fn contains(&self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        match self {
            SupportKind::Continuous { lower, upper } => v >= *lower && v <= *upper,
            SupportKind::Binary => v == 0.0 || v == 1.0,
            SupportKind::OrderedCategorical { k } => {
                v.fract() == 0.0 && v >= 0.0 && v < *k as f64
            }
            SupportKind::Count => v.fract() == 0.0 && v >= 0.0,
        }
    }
}

impl fmt::Display for SupportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SupportKind::Continuous { lower, upper } => write!(f, "continuous({lower}, {upper})"),
            SupportKind::Binary => write!(f, "binary"),
            SupportKind::OrderedCategorical { k } => write!(f, "ordinal(k={k})"),
            SupportKind::Count => write!(f, "count"),
        }
    }
}

/// Which likelihood branch evaluates the item's observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreatAs {
    Discrete,
    Continuous,
}

/// Declared difficulty family of an item, before parameters exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DifficultyFamilyKind {
    Linear,
    Log,
    LogPlusOne,
    /// `inverse_kind` selects the quantile function; the model's response
    /// function is used when absent.
    InverseCdf {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inverse_kind: Option<ResponseFunctionKind>,
    },
    FreeOrdinal,
    BSpline { n_basis: usize, degree: usize },
}

impl fmt::Display for DifficultyFamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DifficultyFamilyKind::Linear => write!(f, "linear"),
            DifficultyFamilyKind::Log => write!(f, "log"),
            DifficultyFamilyKind::LogPlusOne => write!(f, "log1p"),
            DifficultyFamilyKind::InverseCdf { .. } => write!(f, "inverse-cdf"),
            DifficultyFamilyKind::FreeOrdinal => write!(f, "free"),
            DifficultyFamilyKind::BSpline { n_basis, degree } => {
                write!(f, "bspline(n={n_basis}, degree={degree})")
            }
        }
    }
}

/// One item: identifier, support, difficulty family, and density branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub id: String,
    #[serde(flatten)]
    pub support: SupportKind,
    #[serde(flatten)]
    pub family: DifficultyFamilyKind,
    pub treat_as: TreatAs,
    /// Explicit opt-in for fitting a discrete support with the continuous
    /// density branch.
    #[serde(default)]
    pub continuous_override: bool,
}

impl ItemSpec {
    /// An item with the default density branch for its support.
    pub fn new(id: impl Into<String>, support: SupportKind, family: DifficultyFamilyKind) -> Self {
        let treat_as = if support.is_discrete() {
            TreatAs::Discrete
        } else {
            TreatAs::Continuous
        };
        ItemSpec {
            id: id.into(),
            support,
            family,
            treat_as,
            continuous_override: false,
        }
    }

    /// Opts a discrete item into the continuous density branch.
    pub fn with_continuous_override(mut self) -> Self {
        self.treat_as = TreatAs::Continuous;
        self.continuous_override = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.support.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig(format!("item '{}': {msg}", self.id)));

        match (self.treat_as, &self.support) {
            (TreatAs::Discrete, SupportKind::Continuous { .. }) => {
                return bad("a continuous support cannot use the discrete branch".into());
            }
            (TreatAs::Continuous, SupportKind::Binary) => {
                return bad("a binary item cannot use the continuous branch".into());
            }
            (TreatAs::Continuous, s) if s.is_discrete() && !self.continuous_override => {
                return bad(
                    "treating a discrete support as continuous requires continuous_override"
                        .into(),
                );
            }
            _ => {}
        }

        match (&self.family, &self.support) {
            (DifficultyFamilyKind::Linear, _) => {}
            (DifficultyFamilyKind::Log, SupportKind::Continuous { lower, .. }) => {
                if *lower < 0.0 {
                    return bad("the log family needs a nonnegative lower bound".into());
                }
            }
            (DifficultyFamilyKind::Log, _) => {
                return bad("the log family is undefined at y = 0; use log1p".into());
            }
            (DifficultyFamilyKind::LogPlusOne, _) => {}
            (DifficultyFamilyKind::InverseCdf { .. }, SupportKind::Continuous { lower, upper }) => {
                if !(lower.is_finite() && upper.is_finite()) {
                    return bad("the inverse-cdf family needs finite bounds".into());
                }
            }
            (DifficultyFamilyKind::InverseCdf { .. }, SupportKind::OrderedCategorical { .. }) => {}
            (DifficultyFamilyKind::InverseCdf { .. }, _) => {
                return bad("the inverse-cdf family needs a bounded support".into());
            }
            (DifficultyFamilyKind::FreeOrdinal, SupportKind::Binary)
            | (DifficultyFamilyKind::FreeOrdinal, SupportKind::OrderedCategorical { .. }) => {
                if self.treat_as == TreatAs::Continuous {
                    return bad("free thresholds have no continuous density".into());
                }
            }
            (DifficultyFamilyKind::FreeOrdinal, _) => {
                return bad("free thresholds need a finite discrete support".into());
            }
            (DifficultyFamilyKind::BSpline { .. }, SupportKind::Binary) => {
                return bad("a binary item determines a single threshold; use linear or free".into());
            }
            (DifficultyFamilyKind::BSpline { n_basis, degree }, _) => {
                if *n_basis < degree + 1 || *degree == 0 {
                    return bad(format!(
                        "bspline needs degree >= 1 and n_basis >= degree + 1, got n={n_basis}, degree={degree}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Persons-by-items observations with a missing-value mask.
///
/// Immutable after construction; construction validates every invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResponseMatrix {
    items: Vec<ItemSpec>,
    n_persons: usize,
    /// Row-major persons x items.
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl ItemResponseMatrix {
    /// Builds and validates a matrix. Continuous values sitting exactly on a
    /// finite support boundary are squeezed inward (see [`boundary_squeeze`]).
    pub fn from_parts(
        items: Vec<ItemSpec>,
        n_persons: usize,
        mut values: Vec<f64>,
        observed: Vec<bool>,
    ) -> Result<Self> {
        let n_items = items.len();
        assert_eq!(values.len(), n_persons * n_items, "value buffer shape");
        assert_eq!(observed.len(), n_persons * n_items, "mask buffer shape");
        for item in &items {
            item.validate()?;
        }

        // canonical placeholder for unobserved cells, so equality and
        // serialization behave
        for (v, obs) in values.iter_mut().zip(&observed) {
            if !obs {
                *v = 0.0;
            }
        }

        // support membership; log-type families additionally exclude the
        // point where their transform diverges
        for p in 0..n_persons {
            for (i, item) in items.iter().enumerate() {
                let idx = p * n_items + i;
                if !observed[idx] {
                    continue;
                }
                let v = values[idx];
                let diverges = match item.family {
                    DifficultyFamilyKind::Log => v <= 0.0,
                    DifficultyFamilyKind::LogPlusOne => v <= -1.0,
                    _ => false,
                };
                if !item.support.contains(v) || diverges {
                    return Err(Error::ValueOutOfSupport {
                        row: p,
                        item: item.id.clone(),
                        value: v,
                    });
                }
            }
        }

        // boundary squeeze for bounded continuous items
        for (i, item) in items.iter().enumerate() {
            if let SupportKind::Continuous { lower, upper } = item.support {
                if lower.is_finite() && upper.is_finite() {
                    let col: Vec<f64> = (0..n_persons)
                        .filter(|p| observed[p * n_items + i])
                        .map(|p| values[p * n_items + i])
                        .collect();
                    let n_levels = distinct_count(&col).max(100);
                    for p in 0..n_persons {
                        let idx = p * n_items + i;
                        if observed[idx] {
                            values[idx] =
                                boundary_squeeze(values[idx], lower, upper, n_levels);
                        }
                    }
                }
            }
        }

        // coverage
        for (i, item) in items.iter().enumerate() {
            if !(0..n_persons).any(|p| observed[p * n_items + i]) {
                return Err(Error::EmptyItem(item.id.clone()));
            }
        }
        for p in 0..n_persons {
            if !(0..n_items).any(|i| observed[p * n_items + i]) {
                return Err(Error::EmptyPerson(p));
            }
        }

        Ok(ItemResponseMatrix {
            items,
            n_persons,
            values,
            observed,
        })
    }

    pub fn n_persons(&self) -> usize {
        self.n_persons
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self) -> &[ItemSpec] {
        &self.items
    }

    pub fn value(&self, person: usize, item: usize) -> f64 {
        self.values[person * self.items.len() + item]
    }

    pub fn is_observed(&self, person: usize, item: usize) -> bool {
        self.observed[person * self.items.len() + item]
    }

    /// Observed (item index, value) pairs of a person.
    pub fn observed_row(&self, person: usize) -> Vec<(usize, f64)> {
        (0..self.items.len())
            .filter(|&i| self.is_observed(person, i))
            .map(|i| (i, self.value(person, i)))
            .collect()
    }

    /// Observed values of one item.
    pub fn observed_column(&self, item: usize) -> Vec<f64> {
        (0..self.n_persons)
            .filter(|&p| self.is_observed(p, item))
            .map(|p| self.value(p, item))
            .collect()
    }

    /// Stacks the matrix on top of itself `copies` times.
    pub fn replicated(&self, copies: usize) -> Self {
        let mut values = Vec::with_capacity(self.values.len() * copies);
        let mut observed = Vec::with_capacity(self.observed.len() * copies);
        for _ in 0..copies {
            values.extend_from_slice(&self.values);
            observed.extend_from_slice(&self.observed);
        }
        ItemResponseMatrix {
            items: self.items.clone(),
            n_persons: self.n_persons * copies,
            values,
            observed,
        }
    }

    /// Writes the matrix in the fixed CSV dialect.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.items.iter().map(|it| it.id.as_str()))?;
        for p in 0..self.n_persons {
            let row: Vec<String> = (0..self.items.len())
                .map(|i| {
                    if self.is_observed(p, i) {
                        format!("{}", self.value(p, i))
                    } else {
                        "NA".to_string()
                    }
                })
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-item summary of the validated dataset.
    pub fn summary(&self) -> DatasetSummary {
        let per_item = self
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let col = self.observed_column(i);
                let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                ItemSummary {
                    id: item.id.clone(),
                    support: item.support.to_string(),
                    family: item.family.to_string(),
                    n_observed: col.len(),
                    min,
                    max,
                    distinct_levels: distinct_count(&col),
                }
            })
            .collect();
        DatasetSummary {
            n_persons: self.n_persons,
            n_items: self.items.len(),
            items: per_item,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemSummary {
    pub id: String,
    pub support: String,
    pub family: String,
    pub n_observed: usize,
    pub min: f64,
    pub max: f64,
    pub distinct_levels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_persons: usize,
    pub n_items: usize,
    pub items: Vec<ItemSummary>,
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} persons, {} items", self.n_persons, self.n_items)?;
        for it in &self.items {
            writeln!(
                f,
                "  {:<12} {:<22} {:<12} n={:<5} range=[{}, {}] levels={}",
                it.id, it.support, it.family, it.n_observed, it.min, it.max, it.distinct_levels
            )?;
        }
        Ok(())
    }
}

/// Whether two item lists describe the same observations: equal ids,
/// supports, and density branches. The difficulty family is a modeling
/// choice and may differ (the same data can be refit under another family).
pub fn items_compatible(a: &[ItemSpec], b: &[ItemSpec]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.id == y.id && x.support == y.support && x.treat_as == y.treat_as
        })
}

fn distinct_count(values: &[f64]) -> usize {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted.len()
}

/// Squeezes a value sitting exactly on a finite boundary strictly inside the
/// interval: on the unit scale, 0 maps to 0.5/n and 1 to 1 - 0.5/n. Interior
/// values pass through unchanged, which makes ingestion idempotent.
fn boundary_squeeze(v: f64, lower: f64, upper: f64, n_levels: usize) -> f64 {
    let n = n_levels as f64;
    if v == lower {
        lower + 0.5 / n * (upper - lower)
    } else if v == upper {
        upper - 0.5 / n * (upper - lower)
    } else {
        v
    }
}

/// Affinely maps `values` from `[lower, upper]` onto the unit interval and
/// squeezes the result strictly inside (0, 1) with
/// `u' = (u * (n - 1) + 0.5) / n`, `n` the number of distinct observed
/// levels. The midpoint maps to exactly 0.5 and order is preserved.
pub fn rescale_to_unit_interval(values: &[f64], lower: f64, upper: f64) -> Result<Vec<f64>> {
    if !(lower < upper) {
        return Err(Error::DegenerateRange(lower));
    }
    for &v in values {
        if !(v >= lower && v <= upper) {
            return Err(Error::OutOfRange(v));
        }
    }
    let n = distinct_count(values).max(2) as f64;
    Ok(values
        .iter()
        .map(|&v| {
            let u = (v - lower) / (upper - lower);
            (u * (n - 1.0) + 0.5) / n
        })
        .collect())
}

/// Item metadata file: one TOML table per item id.
#[derive(Debug, Clone, Deserialize)]
pub struct ItemMetadata {
    items: BTreeMap<String, RawItemMeta>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawItemMeta {
    support: String,
    family: String,
    categories: Option<usize>,
    lower: Option<f64>,
    upper: Option<f64>,
    treat_as: Option<String>,
    #[serde(default)]
    continuous_override: bool,
    n_basis: Option<usize>,
    degree: Option<usize>,
    inverse_kind: Option<String>,
}

impl ItemMetadata {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Metadata(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Resolves the declared metadata of one item id.
    pub fn item_spec(&self, id: &str) -> Result<ItemSpec> {
        let raw = self
            .items
            .get(id)
            .ok_or_else(|| Error::UnknownItem(id.to_string()))?;
        let support = match raw.support.as_str() {
            "binary" => SupportKind::Binary,
            "count" => SupportKind::Count,
            "ordinal" => SupportKind::OrderedCategorical {
                k: raw.categories.ok_or_else(|| {
                    Error::Metadata(format!("item '{id}': ordinal support needs 'categories'"))
                })?,
            },
            "continuous" => SupportKind::Continuous {
                lower: raw.lower.unwrap_or(f64::NEG_INFINITY),
                upper: raw.upper.unwrap_or(f64::INFINITY),
            },
            other => {
                return Err(Error::Metadata(format!(
                    "item '{id}': unknown support '{other}'"
                )))
            }
        };
        let family = match raw.family.as_str() {
            "linear" => DifficultyFamilyKind::Linear,
            "log" => DifficultyFamilyKind::Log,
            "log1p" => DifficultyFamilyKind::LogPlusOne,
            "inverse-cdf" => DifficultyFamilyKind::InverseCdf {
                inverse_kind: match raw.inverse_kind.as_deref() {
                    None => None,
                    Some("normal") => Some(ResponseFunctionKind::Normal),
                    Some("logistic") => Some(ResponseFunctionKind::Logistic),
                    Some(other) => {
                        return Err(Error::Metadata(format!(
                            "item '{id}': unknown inverse_kind '{other}'"
                        )))
                    }
                },
            },
            "free" => DifficultyFamilyKind::FreeOrdinal,
            "bspline" => DifficultyFamilyKind::BSpline {
                n_basis: raw.n_basis.unwrap_or(8),
                degree: raw.degree.unwrap_or(3),
            },
            other => {
                return Err(Error::Metadata(format!(
                    "item '{id}': unknown family '{other}'"
                )))
            }
        };
        let treat_as = match raw.treat_as.as_deref() {
            None => {
                if support.is_discrete() {
                    TreatAs::Discrete
                } else {
                    TreatAs::Continuous
                }
            }
            Some("discrete") => TreatAs::Discrete,
            Some("continuous") => TreatAs::Continuous,
            Some(other) => {
                return Err(Error::Metadata(format!(
                    "item '{id}': unknown treat_as '{other}'"
                )))
            }
        };
        let spec = ItemSpec {
            id: id.to_string(),
            support,
            family,
            treat_as,
            continuous_override: raw.continuous_override,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Reads a data CSV against declared item metadata.
pub fn ingest_csv(path: &Path, metadata: &ItemMetadata) -> Result<ItemResponseMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let items: Vec<ItemSpec> = headers
        .iter()
        .map(|id| metadata.item_spec(id))
        .collect::<Result<_>>()?;
    let n_items = items.len();

    let mut values = Vec::new();
    let mut observed = Vec::new();
    let mut n_persons = 0;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != n_items {
            return Err(Error::Metadata(format!(
                "row {row_idx}: expected {n_items} fields, found {}",
                record.len()
            )));
        }
        for (i, cell) in record.iter().enumerate() {
            if cell == "NA" {
                values.push(0.0);
                observed.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Metadata(format!(
                        "row {row_idx}, item '{}': cannot parse '{cell}' as a number",
                        items[i].id
                    ))
                })?;
                values.push(v);
                observed.push(true);
            }
        }
        n_persons += 1;
    }

    ItemResponseMatrix::from_parts(items, n_persons, values, observed)
}
