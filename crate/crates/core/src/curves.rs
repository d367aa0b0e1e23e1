//! Curve tabulation for diagnostics and plotting: person threshold (PT)
//! functions P(Y > y) over y at fixed ability, item characteristic (IC)
//! functions over ability at fixed y, and difficulty functions themselves.

use crate::data::{ItemSpec, SupportKind};
use crate::difficulty::{threshold_in_support, DifficultyFunction};
use crate::error::{Error, Result};
use crate::response::ResponseFunctionKind;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    PersonThreshold,
    ItemCharacteristic,
    Difficulty,
}

impl CurveKind {
    fn as_str(self) -> &'static str {
        match self {
            CurveKind::PersonThreshold => "pt",
            CurveKind::ItemCharacteristic => "ic",
            CurveKind::Difficulty => "difficulty",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub kind: CurveKind,
    pub item_id: String,
    /// Ability for PT curves, the fixed response level for IC curves,
    /// absent for difficulty curves.
    pub fixed: Option<f64>,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Grid points are support points of a discrete item; a plotting
    /// client should render steps rather than connect them.
    pub discrete: bool,
}

/// Default response grid of an item: the full support for finite discrete
/// items, observed-range tabulation elsewhere.
pub fn default_y_grid(item: &ItemSpec, observed: &[f64], points: usize) -> Vec<f64> {
    match item.support {
        SupportKind::Binary => vec![0.0, 1.0],
        SupportKind::OrderedCategorical { k } => (0..k).map(|r| r as f64).collect(),
        SupportKind::Count => {
            let max = observed.iter().cloned().fold(0.0, f64::max);
            (0..=(max as usize)).map(|r| r as f64).collect()
        }
        SupportKind::Continuous { .. } => {
            let lo = observed.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = observed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            linspace(lo, hi, points)
        }
    }
}

/// Default ability grid: equally spaced over [-4 sigma, 4 sigma].
pub fn default_theta_grid(sigma_theta: f64, points: usize) -> Vec<f64> {
    linspace(-4.0 * sigma_theta, 4.0 * sigma_theta, points)
}

fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn check_in_support(item: &ItemSpec, y: f64) -> Result<()> {
    if !item.support.contains(y) {
        return Err(Error::OutOfSupport {
            item: item.id.clone(),
            value: y,
        });
    }
    Ok(())
}

/// P(Y > y) = F(theta - delta(y)) over a response grid at fixed ability.
pub fn pt_curve(
    kind: ResponseFunctionKind,
    item: &ItemSpec,
    difficulty: &DifficultyFunction,
    theta: f64,
    y_grid: &[f64],
) -> Result<CurveTable> {
    let mut values = Vec::with_capacity(y_grid.len());
    for &y in y_grid {
        check_in_support(item, y)?;
        values.push(kind.cdf(theta - threshold_in_support(&item.support, difficulty, y)));
    }
    Ok(CurveTable {
        kind: CurveKind::PersonThreshold,
        item_id: item.id.clone(),
        fixed: Some(theta),
        grid: y_grid.to_vec(),
        values,
        discrete: item.support.is_discrete(),
    })
}

/// P(Y > y) = F(theta - delta(y)) over an ability grid at fixed y.
pub fn ic_curve(
    kind: ResponseFunctionKind,
    item: &ItemSpec,
    difficulty: &DifficultyFunction,
    y: f64,
    theta_grid: &[f64],
) -> Result<CurveTable> {
    check_in_support(item, y)?;
    if let Some(k) = item.support.categories() {
        if y.round() >= (k - 1) as f64 {
            // exceeding the top category has probability zero for every
            // ability; there is no curve to draw
            return Err(Error::OutOfSupport {
                item: item.id.clone(),
                value: y,
            });
        }
    }
    let shift = threshold_in_support(&item.support, difficulty, y);
    let values = theta_grid.iter().map(|&t| kind.cdf(t - shift)).collect();
    Ok(CurveTable {
        kind: CurveKind::ItemCharacteristic,
        item_id: item.id.clone(),
        fixed: Some(y),
        grid: theta_grid.to_vec(),
        values,
        discrete: false,
    })
}

/// delta(y) over a response grid.
pub fn difficulty_curve(
    item: &ItemSpec,
    difficulty: &DifficultyFunction,
    y_grid: &[f64],
) -> Result<CurveTable> {
    let mut values = Vec::with_capacity(y_grid.len());
    for &y in y_grid {
        check_in_support(item, y)?;
        values.push(threshold_in_support(&item.support, difficulty, y));
    }
    Ok(CurveTable {
        kind: CurveKind::Difficulty,
        item_id: item.id.clone(),
        fixed: None,
        grid: y_grid.to_vec(),
        values,
        discrete: item.support.is_discrete(),
    })
}

/// Writes curve tables as CSV with columns kind,item,fixed,abscissa,value.
pub fn write_curves_csv(tables: &[CurveTable], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "kind,item,fixed,abscissa,value")?;
    for table in tables {
        let fixed = table.fixed.map(|v| format!("{v}")).unwrap_or_default();
        for (x, v) in table.grid.iter().zip(&table.values) {
            writeln!(
                out,
                "{},{},{},{},{}",
                table.kind.as_str(),
                table.item_id,
                fixed,
                x,
                v
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DifficultyFamilyKind;
    use approx::assert_abs_diff_eq;

    fn continuous_item(id: &str) -> ItemSpec {
        ItemSpec::new(
            id,
            SupportKind::Continuous {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
            },
            DifficultyFamilyKind::Linear,
        )
    }

    #[test]
    fn pt_reference_values() {
        let item = continuous_item("x");
        let identity = DifficultyFunction::Linear {
            intercept: 0.0,
            slope: 1.0,
        };
        let t = pt_curve(
            ResponseFunctionKind::Normal,
            &item,
            &identity,
            0.0,
            &[0.0],
        )
        .unwrap();
        assert_abs_diff_eq!(t.values[0], 0.5, epsilon = 1e-15);

        // delta(y) = 2 + 3y at theta = 0.5, y = 0: F(-1.5)
        let steep = DifficultyFunction::Linear {
            intercept: 2.0,
            slope: 3.0,
        };
        let t = pt_curve(ResponseFunctionKind::Normal, &item, &steep, 0.5, &[0.0]).unwrap();
        assert_abs_diff_eq!(t.values[0], 0.0668072, epsilon = 1e-6);
    }

    #[test]
    fn pt_is_monotone_and_ordered_in_theta() {
        let item = continuous_item("x");
        let f = DifficultyFunction::Linear {
            intercept: -0.5,
            slope: 1.3,
        };
        let grid = linspace(-3.0, 3.0, 101);
        let hi = pt_curve(ResponseFunctionKind::Logistic, &item, &f, 1.0, &grid).unwrap();
        let lo = pt_curve(ResponseFunctionKind::Logistic, &item, &f, -0.5, &grid).unwrap();
        for w in hi.values.windows(2) {
            assert!(w[0] >= w[1] - 1e-14, "PT must not increase in y");
        }
        for (a, b) in hi.values.iter().zip(&lo.values) {
            assert!(a > b, "higher ability dominates pointwise");
        }
        for v in hi.values.iter().chain(&lo.values) {
            assert!(*v >= 0.0 && *v <= 1.0);
        }
    }

    #[test]
    fn pt_of_finite_support_ends_at_zero() {
        let item = ItemSpec::new(
            "o",
            SupportKind::OrderedCategorical { k: 4 },
            DifficultyFamilyKind::FreeOrdinal,
        );
        let f = DifficultyFunction::FreeOrdinal {
            thresholds: vec![-1.0, 0.0, 1.0],
        };
        let t = pt_curve(
            ResponseFunctionKind::Normal,
            &item,
            &f,
            0.3,
            &[0.0, 1.0, 2.0, 3.0],
        )
        .unwrap();
        assert!(t.discrete);
        assert_eq!(*t.values.last().unwrap(), 0.0);
    }

    #[test]
    fn ic_is_a_shift_of_the_response_function() {
        let item = continuous_item("x");
        let f = DifficultyFunction::Linear {
            intercept: 0.7,
            slope: 2.0,
        };
        let y = 0.4;
        let grid = linspace(-4.0, 4.0, 81);
        let t = ic_curve(ResponseFunctionKind::Normal, &item, &f, y, &grid).unwrap();
        let shift = f.eval(y);
        for (theta, v) in grid.iter().zip(&t.values) {
            assert_eq!(*v, ResponseFunctionKind::Normal.cdf(theta - shift));
        }
        // theta at the difficulty's own value crosses one half
        let at = ic_curve(ResponseFunctionKind::Normal, &item, &f, y, &[shift]).unwrap();
        assert_abs_diff_eq!(at.values[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn ic_curves_never_cross() {
        let item_a = continuous_item("a");
        let item_b = continuous_item("b");
        let fa = DifficultyFunction::Linear {
            intercept: 0.0,
            slope: 1.0,
        };
        let fb = DifficultyFunction::Linear {
            intercept: 0.8,
            slope: 1.4,
        };
        let grid = linspace(-4.0, 4.0, 201);
        let y = 0.5;
        let a = ic_curve(ResponseFunctionKind::Normal, &item_a, &fa, y, &grid).unwrap();
        let b = ic_curve(ResponseFunctionKind::Normal, &item_b, &fb, y, &grid).unwrap();
        let first = (a.values[0] - b.values[0]).signum();
        for (va, vb) in a.values.iter().zip(&b.values) {
            assert_eq!((va - vb).signum(), first, "IC curves crossed");
        }
        // and each is nondecreasing in theta
        for w in a.values.windows(2) {
            assert!(w[1] >= w[0] - 1e-14);
        }
    }

    #[test]
    fn ic_rejects_top_category() {
        let item = ItemSpec::new(
            "o",
            SupportKind::OrderedCategorical { k: 3 },
            DifficultyFamilyKind::FreeOrdinal,
        );
        let f = DifficultyFunction::FreeOrdinal {
            thresholds: vec![-0.5, 0.5],
        };
        assert!(matches!(
            ic_curve(ResponseFunctionKind::Normal, &item, &f, 2.0, &[0.0]),
            Err(Error::OutOfSupport { .. })
        ));
    }

    #[test]
    fn difficulty_curve_values() {
        let item = ItemSpec::new("c", SupportKind::Count, DifficultyFamilyKind::LogPlusOne);
        let f = DifficultyFunction::LogPlusOne {
            intercept: 0.0,
            slope: 1.0,
        };
        let t = difficulty_curve(&item, &f, &[0.0, 1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(t.values[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.values[1], 2.0f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(t.values[2], 4.0f64.ln(), epsilon = 1e-15);
        for w in t.values.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn flat_spline_gives_constant_difficulty_curve() {
        let basis = crate::spline::build_bspline_basis((0.0, 6.0), 8, 3).unwrap();
        let f = DifficultyFunction::BSpline {
            basis,
            coefficients: vec![1.2; 8],
        };
        let item = ItemSpec::new(
            "s",
            SupportKind::Continuous {
                lower: 0.0,
                upper: 6.0,
            },
            DifficultyFamilyKind::BSpline {
                n_basis: 8,
                degree: 3,
            },
        );
        let grid = linspace(0.5, 5.5, 11);
        let t = difficulty_curve(&item, &f, &grid).unwrap();
        for v in &t.values {
            assert_abs_diff_eq!(*v, 1.2, epsilon = 1e-10);
        }
    }

    #[test]
    fn pt_agrees_with_density_tail() {
        // PT at y equals one minus the distribution function from the
        // density branch: discrete via cumulative masses, continuous via a
        // numeric integral
        let kind = ResponseFunctionKind::Normal;
        let item = ItemSpec::new(
            "o",
            SupportKind::OrderedCategorical { k: 5 },
            DifficultyFamilyKind::FreeOrdinal,
        );
        let f = DifficultyFunction::FreeOrdinal {
            thresholds: vec![-1.2, -0.3, 0.5, 1.4],
        };
        let theta = 0.6;
        let grid = [0.0, 1.0, 2.0, 3.0, 4.0];
        let t = pt_curve(kind, &item, &f, theta, &grid).unwrap();
        let mut cum = 0.0;
        for (r, &pt) in grid.iter().zip(&t.values) {
            cum += crate::likelihood::log_density_discrete(kind, &item.support, &f, theta, *r)
                .0
                .exp();
            assert_abs_diff_eq!(pt, 1.0 - cum, epsilon = 1e-12);
        }

        let item = continuous_item("x");
        let f = DifficultyFunction::Linear {
            intercept: 0.4,
            slope: 1.1,
        };
        let y = 0.9;
        let pt = pt_curve(kind, &item, &f, theta, &[y]).unwrap().values[0];
        // integrate the density above y
        let n = 200_000;
        let hi = 15.0;
        let h = (hi - y) / n as f64;
        let mut mass = 0.0;
        for i in 0..=n {
            let t = y + h * i as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            mass += w
                * crate::likelihood::log_density_continuous(kind, &f, theta, t)
                    .unwrap()
                    .exp();
        }
        assert_abs_diff_eq!(pt, mass * h, epsilon = 1e-6);
    }

    #[test]
    fn csv_emission_round_trips_by_eye() {
        let item = continuous_item("x");
        let f = DifficultyFunction::Linear {
            intercept: 0.0,
            slope: 1.0,
        };
        let tables = vec![
            pt_curve(ResponseFunctionKind::Normal, &item, &f, 0.0, &[0.0, 1.0]).unwrap(),
            difficulty_curve(&item, &f, &[0.0, 1.0]).unwrap(),
        ];
        let file = tempfile::NamedTempFile::new().unwrap();
        write_curves_csv(&tables, file.path()).unwrap();
        let text = std::fs::read_to_string(file.path()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "kind,item,fixed,abscissa,value");
        assert_eq!(lines.next().unwrap(), "pt,x,0,0,0.5");
        assert!(text.lines().any(|l| l.starts_with("difficulty,x,,1,1")));
    }
}
