//! Evaluation metrics: MSE and R² per output feature, optionally grouped by
//! latitude band or pressure level, and the JSON/CSV evaluation report.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Y_FIELDS;
use crate::error::{Error, Result};

pub const DEFAULT_LAT_BANDS: usize = 8;

/// How samples (or output columns) are pooled before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum Grouping {
    /// One group holding every sample; one value per output feature.
    Global,
    /// Equal-width latitude bands over [-90, 90].
    LatBands(usize),
    /// One group per model level; features are the output variables at that level.
    PerLevel(usize),
}

/// Metric values indexed by `[group][feature]`; `None` marks an undefined value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedMetric {
    pub groups: Vec<String>,
    pub features: Vec<String>,
    pub counts: Vec<usize>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl GroupedMetric {
    pub fn get(&self, group: usize, feature: usize) -> Option<f64> {
        self.values.get(group)?.get(feature).copied().flatten()
    }
}

pub fn lat_band(lat: f64, n_bands: usize) -> usize {
    let w = 180.0 / n_bands as f64;
    (((lat + 90.0) / w).floor().max(0.0) as usize).min(n_bands - 1)
}

fn band_label(b: usize, n_bands: usize) -> String {
    let w = 180.0 / n_bands as f64;
    format!("[{:.1},{:.1})", -90.0 + w * b as f64, -90.0 + w * (b + 1) as f64)
}

fn check(pred: &Array2<f64>, truth: &Array2<f64>, lat: &[f64]) -> Result<()> {
    if pred.dim() != truth.dim() {
        return Err(Error::Shape(format!("predictions {:?} vs truth {:?}", pred.dim(), truth.dim())));
    }
    if lat.len() != pred.nrows() {
        return Err(Error::Shape(format!("{} latitudes for {} samples", lat.len(), pred.nrows())));
    }
    Ok(())
}

/// Sample sets and (group, feature) → column mapping for a grouping.
struct Layout {
    groups: Vec<String>,
    features: Vec<String>,
    members: Vec<Vec<usize>>,
    column: Box<dyn Fn(usize, usize) -> usize + Sync>,
}

fn layout(grouping: Grouping, n_samples: usize, n_outputs: usize, lat: &[f64]) -> Result<Layout> {
    let all: Vec<usize> = (0..n_samples).collect();
    let numbered: Vec<String> = (0..n_outputs).map(|j| format!("y{j}")).collect();
    Ok(match grouping {
        Grouping::Global => Layout {
            groups: vec!["global".into()],
            features: numbered,
            members: vec![all],
            column: Box::new(|_, f| f),
        },
        Grouping::LatBands(n) => {
            if n == 0 {
                return Err(Error::Config("need at least one latitude band".into()));
            }
            let mut members = vec![Vec::new(); n];
            for (i, &l) in lat.iter().enumerate() {
                members[lat_band(l, n)].push(i);
            }
            Layout {
                groups: (0..n).map(|b| band_label(b, n)).collect(),
                features: numbered,
                members,
                column: Box::new(|_, f| f),
            }
        }
        Grouping::PerLevel(np) => {
            if np == 0 || n_outputs != Y_FIELDS.len() * np {
                return Err(Error::Shape(format!("{n_outputs} outputs are not {} variables × {np} levels", Y_FIELDS.len())));
            }
            Layout {
                groups: (0..np).map(|k| format!("level_{k:02}")).collect(),
                features: Y_FIELDS.iter().map(|s| s.to_string()).collect(),
                members: vec![all; np],
                column: Box::new(move |g, f| f * np + g),
            }
        }
    })
}

fn grouped<F>(pred: &Array2<f64>, truth: &Array2<f64>, lat: &[f64], grouping: Grouping, stat: F) -> Result<GroupedMetric>
where
    F: Fn(&[usize], usize) -> Option<f64> + Sync,
{
    check(pred, truth, lat)?;
    let l = layout(grouping, pred.nrows(), pred.ncols(), lat)?;
    let values = (0..l.groups.len())
        .into_par_iter()
        .map(|g| (0..l.features.len()).map(|f| stat(&l.members[g], (l.column)(g, f))).collect())
        .collect();
    Ok(GroupedMetric {
        counts: l.members.iter().map(Vec::len).collect(),
        groups: l.groups,
        features: l.features,
        values,
    })
}

fn mse_of(pred: &Array2<f64>, truth: &Array2<f64>, rows: &[usize], col: usize) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let s: f64 = rows.iter().map(|&i| (pred[[i, col]] - truth[[i, col]]).powi(2)).sum();
    Some(s / rows.len() as f64)
}

fn r2_of(pred: &Array2<f64>, truth: &Array2<f64>, rows: &[usize], col: usize) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| truth[[i, col]]).sum::<f64>() / n;
    let var = rows.iter().map(|&i| (truth[[i, col]] - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return None;
    }
    let err = rows.iter().map(|&i| (pred[[i, col]] - truth[[i, col]]).powi(2)).sum::<f64>() / n;
    Some(1.0 - err / var)
}

/// Mean squared error per group and output feature.
pub fn mse(pred: &Array2<f64>, truth: &Array2<f64>, lat: &[f64], grouping: Grouping) -> Result<GroupedMetric> {
    grouped(pred, truth, lat, grouping, |rows, col| mse_of(pred, truth, rows, col))
}

/// Coefficient of determination per group and output feature. Groups with
/// fewer than two samples or constant truth are missing.
pub fn r2(pred: &Array2<f64>, truth: &Array2<f64>, lat: &[f64], grouping: Grouping) -> Result<GroupedMetric> {
    grouped(pred, truth, lat, grouping, |rows, col| r2_of(pred, truth, rows, col))
}

/// Mean over every sample and output.
pub fn overall_mse(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if pred.dim() != truth.dim() || pred.is_empty() {
        return Err(Error::Shape(format!("predictions {:?} vs truth {:?}", pred.dim(), truth.dim())));
    }
    Ok((pred - truth).mapv(|d| d * d).mean().unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub model: String,
    pub dataset: String,
    pub climate: String,
    pub train_climate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub n_samples: usize,
    pub n_levels: usize,
    pub output_names: Vec<String>,
    /// Mean over all samples and outputs, W²/m⁴.
    pub mse: f64,
    pub mse_per_output: Vec<Option<f64>>,
    pub r2_per_output: Vec<Option<f64>>,
    pub r2_per_level: GroupedMetric,
    /// Per latitude band and output.
    pub r2_by_band: GroupedMetric,
    pub mse_by_band: GroupedMetric,
    /// Mean pressure of each level over the evaluated samples, Pa.
    pub level_pressure: Vec<f64>,
}

impl EvalReport {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        meta: ReportMeta,
        pred: &Array2<f64>,
        truth: &Array2<f64>,
        lat: &[f64],
        level_pressure: Vec<f64>,
        output_names: Vec<String>,
        n_bands: usize,
    ) -> Result<Self> {
        let np = level_pressure.len();
        if output_names.len() != pred.ncols() {
            return Err(Error::Shape("output names do not match predictions".into()));
        }
        let glob_mse = mse(pred, truth, lat, Grouping::Global)?;
        let glob_r2 = r2(pred, truth, lat, Grouping::Global)?;
        Ok(Self {
            meta,
            n_samples: pred.nrows(),
            n_levels: np,
            output_names,
            mse: overall_mse(pred, truth)?,
            mse_per_output: glob_mse.values[0].clone(),
            r2_per_output: glob_r2.values[0].clone(),
            r2_per_level: r2(pred, truth, lat, Grouping::PerLevel(np))?,
            r2_by_band: r2(pred, truth, lat, Grouping::LatBands(n_bands))?,
            mse_by_band: mse(pred, truth, lat, Grouping::LatBands(n_bands))?,
            level_pressure,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Latitude-band × level R² table, one row per (band, level).
    pub fn grid_csv(&self) -> String {
        let np = self.n_levels;
        let mut out = String::from("band,lat_range,level,pressure_pa,n");
        for v in Y_FIELDS {
            let _ = write!(out, ",r2_{v}");
        }
        out.push_str(",config_hash\n");
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for (b, label) in self.r2_by_band.groups.iter().enumerate() {
            for k in 0..np {
                let _ = write!(
                    out,
                    "{b},\"{label}\",{k},{:.1},{}",
                    self.level_pressure[k], self.r2_by_band.counts[b]
                );
                for v in 0..Y_FIELDS.len() {
                    out.push(',');
                    out.push_str(&fmt(self.r2_by_band.get(b, v * np + k)));
                }
                let _ = writeln!(out, ",{}", self.meta.config_hash);
            }
        }
        out
    }

    /// Writes the JSON summary and, if given, the grid CSV.
    pub fn emit(&self, json: impl AsRef<Path>, grid: Option<&Path>) -> Result<()> {
        let json = json.as_ref();
        std::fs::write(json, self.to_json()?).map_err(|e| Error::io(json, e))?;
        if let Some(g) = grid {
            std::fs::write(g, self.grid_csv()).map_err(|e| Error::io(g, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use proptest::prelude::*;

    #[test]
    fn perfect_and_offset_predictions() {
        let t = arr2(&[[1.0, 2.0], [3.0, 5.0], [4.0, -1.0]]);
        let lat = [0.0; 3];
        let m = mse(&t, &t, &lat, Grouping::Global).unwrap();
        assert_eq!(m.values[0], vec![Some(0.0), Some(0.0)]);
        let r = r2(&t, &t, &lat, Grouping::Global).unwrap();
        assert_eq!(r.values[0], vec![Some(1.0), Some(1.0)]);
        let off = &t + 0.5;
        let m = mse(&off, &t, &lat, Grouping::Global).unwrap();
        assert!((m.get(0, 0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn two_sample_hand_case() {
        let t = arr2(&[[1.0], [3.0]]);
        let p = arr2(&[[2.0], [2.0]]);
        let lat = [10.0, 20.0];
        // Errors 1 and 1 -> MSE 1; truth variance 1 -> R² 0.
        assert_eq!(mse(&p, &t, &lat, Grouping::Global).unwrap().get(0, 0), Some(1.0));
        assert_eq!(r2(&p, &t, &lat, Grouping::Global).unwrap().get(0, 0), Some(0.0));
        let worse = arr2(&[[3.0], [1.0]]);
        assert!(r2(&worse, &t, &lat, Grouping::Global).unwrap().get(0, 0).unwrap() < 0.0);
    }

    #[test]
    fn empty_and_constant_groups_are_missing() {
        let t = arr2(&[[1.0], [1.0], [2.0]]);
        let lat = [-80.0, -80.0, 45.0];
        let m = mse(&t, &t, &lat, Grouping::LatBands(8)).unwrap();
        assert_eq!(m.get(0, 0), Some(0.0));
        assert_eq!(m.get(3, 0), None);
        assert_eq!(m.counts.iter().sum::<usize>(), 3);
        let r = r2(&t, &t, &lat, Grouping::LatBands(8)).unwrap();
        // Constant truth in band 0, a single sample in band 6.
        assert_eq!(r.get(0, 0), None);
        assert_eq!(r.get(6, 0), None);
    }

    #[test]
    fn lat_bands_cover_the_poles() {
        assert_eq!(lat_band(-90.0, 8), 0);
        assert_eq!(lat_band(90.0, 8), 7);
        assert_eq!(lat_band(0.0, 8), 4);
        assert_eq!(lat_band(-0.1, 8), 3);
    }

    #[test]
    fn per_level_regroups_columns() {
        let np = 3;
        let t = Array2::from_shape_fn((5, 4 * np), |(i, j)| (i * j) as f64 + (j % 3) as f64);
        let p = t.mapv(|v| v + 1.0) + Array2::from_shape_fn((5, 4 * np), |(_, j)| j as f64);
        let lat = [0.0; 5];
        let g = mse(&p, &t, &lat, Grouping::Global).unwrap();
        let l = mse(&p, &t, &lat, Grouping::PerLevel(np)).unwrap();
        for v in 0..4 {
            for k in 0..np {
                assert_eq!(l.get(k, v), g.get(0, v * np + k));
            }
        }
        assert!(mse(&p, &t, &lat, Grouping::PerLevel(5)).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Array2::<f64>::zeros((2, 3));
        let b = Array2::<f64>::zeros((2, 2));
        assert!(matches!(mse(&a, &b, &[0.0, 0.0], Grouping::Global), Err(Error::Shape(_))));
        assert!(matches!(mse(&a, &a, &[0.0], Grouping::Global), Err(Error::Shape(_))));
    }

    fn report() -> EvalReport {
        let np = 2;
        let t = Array2::from_shape_fn((40, 4 * np), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let p = t.mapv(|v| v * 0.9 + 0.3);
        let lat: Vec<f64> = (0..40).map(|i| -60.0 + 3.0 * i as f64).collect();
        let meta = ReportMeta {
            config_hash: "abc".into(),
            model: "nn".into(),
            dataset: "warm.civ".into(),
            climate: "+4K".into(),
            train_climate: "-4K".into(),
        };
        EvalReport::build(meta, &p, &t, &lat, vec![9.0e4, 5.0e4], crate::dataset::output_names(np), 8).unwrap()
    }

    #[test]
    fn report_roundtrips_and_grid_has_one_row_per_cell() {
        let r = report();
        let back = EvalReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = r.grid_csv();
        assert_eq!(csv.lines().count(), 1 + 8 * 2);
        // Bands 0 and 7 hold no samples.
        let first = csv.lines().nth(1).unwrap();
        assert!(first.contains(",NA,NA,NA,NA,abc"), "{first}");
        let json = r.to_json().unwrap();
        assert!(json.contains("null"));
    }

    proptest! {
        #[test]
        fn r2_never_exceeds_one_and_mse_decomposes(
            vals in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -90.0f64..90.0), 2..60)
        ) {
            let n = vals.len();
            let t = Array2::from_shape_fn((n, 1), |(i, _)| vals[i].0);
            let p = Array2::from_shape_fn((n, 1), |(i, _)| vals[i].1);
            let lat: Vec<f64> = vals.iter().map(|v| v.2).collect();
            let g = mse(&p, &t, &lat, Grouping::Global).unwrap().get(0, 0).unwrap();
            let b = mse(&p, &t, &lat, Grouping::LatBands(8)).unwrap();
            let weighted: f64 = (0..8).filter_map(|k| b.get(k, 0).map(|m| m * b.counts[k] as f64)).sum::<f64>() / n as f64;
            prop_assert!((weighted - g).abs() <= 1e-9 * g.max(1.0));
            for grouping in [Grouping::Global, Grouping::LatBands(8)] {
                let r = r2(&p, &t, &lat, grouping).unwrap();
                for row in &r.values {
                    for v in row.iter().flatten() {
                        prop_assert!(*v <= 1.0);
                    }
                }
            }
            // Global R² is the grouped formula with a single all-samples group.
            let one = r2(&p, &t, &lat, Grouping::LatBands(1)).unwrap();
            prop_assert_eq!(one.get(0, 0), r2(&p, &t, &lat, Grouping::Global).unwrap().get(0, 0));
        }
    }
}
