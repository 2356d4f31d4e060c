//! Rescaling configuration, physical input rescalings and normalisation
//! statistics.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::format::Dataset;
use crate::error::{Error, Result};
use crate::stats::EmpiricalCdf;
use crate::thermo::{self, ClimateTag, Column, Constants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    #[default]
    Raw,
    Deficit,
    Rh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TMode {
    #[default]
    Raw,
    FromNs,
    Buoyancy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LhfMode {
    #[default]
    Raw,
    Q,
    DeltaQ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    #[default]
    None,
    QmapAfter,
    QmapBefore,
}

fn default_batch_size() -> usize {
    1024
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescalingConfig {
    #[serde(default)]
    pub q_mode: QMode,
    #[serde(default)]
    pub t_mode: TMode,
    #[serde(default)]
    pub lhf_mode: LhfMode,
    #[serde(default)]
    pub output_mode: OutputMode,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RescalingConfig {
    fn default() -> Self {
        Self::brute_force()
    }
}

impl RescalingConfig {
    /// Raw inputs and outputs.
    pub fn brute_force() -> Self {
        Self {
            q_mode: QMode::Raw,
            t_mode: TMode::Raw,
            lhf_mode: LhfMode::Raw,
            output_mode: OutputMode::None,
            batch_size: default_batch_size(),
            seed: 0,
        }
    }

    /// Relative humidity, plume buoyancy and deficit-scaled latent heat flux.
    pub fn climate_invariant() -> Self {
        Self {
            q_mode: QMode::Rh,
            t_mode: TMode::Buoyancy,
            lhf_mode: LhfMode::DeltaQ,
            ..Self::brute_force()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn same_inputs(&self, other: &RescalingConfig) -> bool {
        self.q_mode == other.q_mode && self.t_mode == other.t_mode && self.lhf_mode == other.lhf_mode
    }

    /// Short label such as `rh-buoyancy-delta_q`.
    pub fn label(&self) -> String {
        let q = match self.q_mode {
            QMode::Raw => "q",
            QMode::Deficit => "deficit",
            QMode::Rh => "rh",
        };
        let t = match self.t_mode {
            TMode::Raw => "T",
            TMode::FromNs => "from_ns",
            TMode::Buoyancy => "buoyancy",
        };
        let l = match self.lhf_mode {
            LhfMode::Raw => "lhf",
            LhfMode::Q => "lhf_q",
            LhfMode::DeltaQ => "lhf_dq",
        };
        format!("{q}-{t}-{l}")
    }
}

/// Names of the model inputs after rescaling, in vector order.
pub fn input_names(n_levels: usize, config: &RescalingConfig) -> Vec<String> {
    let q = match config.q_mode {
        QMode::Raw => "q",
        QMode::Deficit => "q_deficit",
        QMode::Rh => "RH",
    };
    let t = match config.t_mode {
        TMode::Raw => "T",
        TMode::FromNs => "T_from_ns",
        TMode::Buoyancy => "B_plume",
    };
    let l = match config.lhf_mode {
        LhfMode::Raw => "LHF",
        LhfMode::Q => "LHF_q",
        LhfMode::DeltaQ => "LHF_dq",
    };
    let mut names: Vec<String> = (0..n_levels).map(|k| format!("{q}_{k:02}")).collect();
    names.extend((0..n_levels).map(|k| format!("{t}_{k:02}")));
    names.extend(["p_s", "S0", "SHF", l].iter().map(|s| s.to_string()));
    names
}

pub fn output_names(n_levels: usize) -> Vec<String> {
    super::format::Y_FIELDS
        .iter()
        .flat_map(|v| (0..n_levels).map(move |k| format!("{v}_{k:02}")))
        .collect()
}

/// Rebuilds the physical column of one stored sample.
pub fn column_from_raw(x: &[f64], p: &[f64], lat: f64, climate: ClimateTag) -> Column {
    let np = p.len();
    Column {
        p: p.to_vec(),
        q: x[..np].to_vec(),
        t: x[np..2 * np].to_vec(),
        p_s: x[2 * np],
        s0: x[2 * np + 1],
        shf: x[2 * np + 2],
        lhf: x[2 * np + 3],
        lat,
        climate,
    }
}

/// Applies the configured physical rescalings to one raw input vector.
pub fn rescale_inputs(x: &[f64], p: &[f64], config: &RescalingConfig, c: &Constants) -> Result<Vec<f64>> {
    let np = p.len();
    if x.len() != 2 * np + 4 {
        return Err(Error::Shape(format!("input length {} for Np={np}", x.len())));
    }
    let (q, t) = (&x[..np], &x[np..2 * np]);
    let mut out = Vec::with_capacity(x.len());
    match config.q_mode {
        QMode::Raw => out.extend_from_slice(q),
        QMode::Deficit => {
            for k in 0..np {
                out.push(thermo::saturation_deficit(q[k], t[k], p[k], c)?);
            }
        }
        QMode::Rh => {
            for k in 0..np {
                out.push(thermo::relative_humidity(q[k], t[k], p[k], c)?);
            }
        }
    }
    match config.t_mode {
        TMode::Raw => out.extend_from_slice(t),
        TMode::FromNs => out.extend(thermo::t_from_ns(t)?),
        TMode::Buoyancy => {
            let col = column_from_raw(x, p, 0.0, ClimateTag::Plus0K);
            out.extend(thermo::plume_buoyancy(&col, c)?);
        }
    }
    let lhf = x[2 * np + 3];
    out.extend_from_slice(&x[2 * np..2 * np + 3]);
    out.push(match config.lhf_mode {
        LhfMode::Raw => lhf,
        LhfMode::Q => thermo::lhf_rescale_q(lhf, q[0], c)?,
        LhfMode::DeltaQ => thermo::lhf_rescale_deltaq(lhf, t[0], q[0], p[0], c)?,
    });
    Ok(out)
}

/// Summary statistics of one feature.
/// Rescaled (not normalised) inputs of every sample, `samples × (2Np+4)`.
pub fn rescaled_features(data: &Dataset, config: &RescalingConfig, c: &Constants) -> Result<Array2<f64>> {
    let d = 2 * data.n_levels() + 4;
    let rows: Vec<Vec<f64>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = data.x(i).iter().map(|&v| v as f64).collect();
            let p: Vec<f64> = data.p(i).iter().map(|&v| v as f64).collect();
            rescale_inputs(&x, &p, config, c)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((data.len(), d), flat).map_err(|e| Error::Shape(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Zero range; excluded from range division.
    pub constant: bool,
}

impl FeatureStat {
    /// `(x - mean) / (max - min)`, or `x - mean` for constant features.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.constant {
            x - self.mean
        } else {
            (x - self.mean) / (self.max - self.min)
        }
    }
}

#[derive(Debug, Default)]
struct Accumulator {
    sum: Vec<f64>,
    min: Vec<f64>,
    max: Vec<f64>,
    n: usize,
}

impl Accumulator {
    fn new(d: usize) -> Self {
        Self {
            sum: vec![0.0; d],
            min: vec![f64::INFINITY; d],
            max: vec![f64::NEG_INFINITY; d],
            n: 0,
        }
    }

    fn add(&mut self, x: &[f64]) {
        for (i, &v) in x.iter().enumerate() {
            self.sum[i] += v;
            self.min[i] = self.min[i].min(v);
            self.max[i] = self.max[i].max(v);
        }
        self.n += 1;
    }

    fn finish(self) -> Vec<FeatureStat> {
        let n = self.n as f64;
        self.sum
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&s, (&lo, &hi))| {
                let mean = s / n;
                FeatureStat {
                    mean,
                    min: lo,
                    max: hi,
                    constant: !(hi - lo > 1e-12 * mean.abs().max(1.0)),
                }
            })
            .collect()
    }
}

/// Which datasets define the input normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationReference {
    /// Only the first dataset passed (the training climate).
    #[default]
    Training,
    /// Every dataset passed.
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub n_levels: usize,
    pub config: RescalingConfig,
    pub reference: NormalizationReference,
    /// Climates the input statistics were accumulated over.
    pub reference_climates: Vec<ClimateTag>,
    pub raw: Vec<FeatureStat>,
    pub rescaled: Vec<FeatureStat>,
    /// One CDF per output feature and climate, present when outputs are quantile mapped.
    #[serde(default)]
    pub output_cdfs: BTreeMap<ClimateTag, Vec<EmpiricalCdf>>,
}

impl FeatureStats {
    pub fn cdfs(&self, climate: ClimateTag) -> Result<&[EmpiricalCdf]> {
        self.output_cdfs
            .get(&climate)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("no output CDFs for climate {climate}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Input statistics (raw and rescaled) and per-climate output CDFs.
///
/// Input statistics use the first dataset only unless `reference` is
/// [`NormalizationReference::Union`]. Output CDFs are fitted for every dataset
/// when the configuration quantile-maps outputs; datasets sharing a climate are
/// pooled.
pub fn compute_stats(
    datasets: &[&Dataset],
    config: &RescalingConfig,
    reference: NormalizationReference,
    c: &Constants,
) -> Result<FeatureStats> {
    config.validate()?;
    let first = datasets
        .first()
        .ok_or_else(|| Error::invalid("compute_stats needs at least one dataset"))?;
    let np = first.n_levels();
    if let Some(d) = datasets.iter().find(|d| d.n_levels() != np) {
        return Err(Error::SchemaMismatch(format!(
            "datasets have {} and {} levels",
            np,
            d.n_levels()
        )));
    }
    let inputs: &[&Dataset] = match reference {
        NormalizationReference::Training => &datasets[..1],
        NormalizationReference::Union => datasets,
    };
    let d_in = 2 * np + 4;
    let mut raw = Accumulator::new(d_in);
    let mut resc = Accumulator::new(d_in);
    let mut climates = Vec::new();
    for d in inputs {
        if !climates.contains(&d.climate()) {
            climates.push(d.climate());
        }
        for i in 0..d.len() {
            let x: Vec<f64> = d.x(i).iter().map(|&v| v as f64).collect();
            let p: Vec<f64> = d.p(i).iter().map(|&v| v as f64).collect();
            raw.add(&x);
            resc.add(&rescale_inputs(&x, &p, config, c)?);
        }
    }
    if raw.n == 0 {
        return Err(Error::invalid("normalisation reference holds no samples"));
    }

    let mut output_cdfs = BTreeMap::new();
    if config.output_mode != OutputMode::None {
        let d_out = 4 * np;
        let mut by_climate: BTreeMap<ClimateTag, Vec<Vec<f64>>> = BTreeMap::new();
        for d in datasets {
            let cols = by_climate
                .entry(d.climate())
                .or_insert_with(|| vec![Vec::new(); d_out]);
            for i in 0..d.len() {
                for (j, &v) in d.y(i).iter().enumerate() {
                    cols[j].push(v as f64);
                }
            }
        }
        for (tag, cols) in by_climate {
            let cdfs = cols.iter().map(|v| EmpiricalCdf::fit(v)).collect::<Result<Vec<_>>>()?;
            output_cdfs.insert(tag, cdfs);
        }
    }

    Ok(FeatureStats {
        n_levels: np,
        config: *config,
        reference,
        reference_climates: climates,
        raw: raw.finish(),
        rescaled: resc.finish(),
        output_cdfs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(climate: ClimateTag, shift: f64) -> Dataset {
        let np = 2;
        let mut d = Dataset::empty(np, climate, 0);
        let p = [9.5e4, 5.0e4];
        for i in 0..4 {
            let f = i as f64;
            let t0 = 290.0 + shift + f;
            let x = [0.01 + 0.001 * f + shift * 1e-3, 0.003, t0, t0 - 30.0, 1.0e5, 400.0, 20.0, 100.0 + f];
            let y: Vec<f64> = (0..8).map(|k| f * k as f64 + shift).collect();
            d.push(&x, &y, &p, 0.0).unwrap();
        }
        d
    }

    #[test]
    fn constant_feature_is_flagged() {
        let d = tiny(ClimateTag::Minus4K, 0.0);
        let s = compute_stats(&[&d], &RescalingConfig::brute_force(), Default::default(), &Constants::default())
            .unwrap();
        // q at level 1, p_s, S0 and SHF never vary.
        assert!(s.raw[1].constant && s.raw[4].constant && s.raw[5].constant && s.raw[6].constant);
        assert!(!s.raw[0].constant);
        assert_eq!(s.raw[4].normalize(1.0e5), 0.0);
    }

    #[test]
    fn single_dataset_extremes() {
        let d = tiny(ClimateTag::Minus4K, 0.0);
        let s = compute_stats(&[&d], &RescalingConfig::brute_force(), Default::default(), &Constants::default())
            .unwrap();
        assert_eq!(s.raw[2].min, 290.0);
        assert_eq!(s.raw[2].max, 293.0);
        assert!((s.raw[2].mean - 291.5).abs() < 1e-9);
        assert!(s.output_cdfs.is_empty());
    }

    #[test]
    fn union_widens_range_and_training_default_does_not() {
        let cold = tiny(ClimateTag::Minus4K, 0.0);
        let warm = tiny(ClimateTag::Plus4K, 8.0);
        let cfg = RescalingConfig::brute_force();
        let c = Constants::default();
        let only = compute_stats(&[&cold, &warm], &cfg, NormalizationReference::Training, &c).unwrap();
        let both = compute_stats(&[&cold, &warm], &cfg, NormalizationReference::Union, &c).unwrap();
        assert_eq!(only.raw[2].max, 293.0);
        assert_eq!(both.raw[2].max, 301.0);
        assert!(both.raw[0].min <= only.raw[0].min);
        assert_eq!(both.reference_climates, vec![ClimateTag::Minus4K, ClimateTag::Plus4K]);
    }

    #[test]
    fn output_cdfs_per_climate() {
        let cold = tiny(ClimateTag::Minus4K, 0.0);
        let warm = tiny(ClimateTag::Plus4K, 8.0);
        let cfg = RescalingConfig {
            output_mode: OutputMode::QmapAfter,
            ..RescalingConfig::brute_force()
        };
        let s = compute_stats(&[&cold, &warm], &cfg, Default::default(), &Constants::default()).unwrap();
        assert_eq!(s.cdfs(ClimateTag::Plus4K).unwrap().len(), 8);
        assert_eq!(s.cdfs(ClimateTag::Plus4K).unwrap()[0].min(), 8.0);
        assert!(s.cdfs(ClimateTag::Plus0K).is_err());
    }

    #[test]
    fn level_mismatch_is_schema_error() {
        let a = tiny(ClimateTag::Minus4K, 0.0);
        let b = Dataset::empty(3, ClimateTag::Minus4K, 0);
        let r = compute_stats(&[&a, &b], &RescalingConfig::brute_force(), Default::default(), &Constants::default());
        assert!(matches!(r, Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn rescale_inputs_matches_thermo() {
        let c = Constants::default();
        let x = [0.01, 0.002, 295.0, 260.0, 1.0e5, 300.0, 10.0, 120.0];
        let p = [9.8e4, 6.0e4];
        let r = rescale_inputs(&x, &p, &RescalingConfig::climate_invariant(), &c).unwrap();
        assert_eq!(r[0], thermo::relative_humidity(0.01, 295.0, 9.8e4, &c).unwrap());
        let col = column_from_raw(&x, &p, 0.0, ClimateTag::Plus0K);
        assert_eq!(r[2..4], thermo::plume_buoyancy(&col, &c).unwrap()[..]);
        assert_eq!(r[7], thermo::lhf_rescale_deltaq(120.0, 295.0, 0.01, 9.8e4, &c).unwrap());
        assert_eq!(&r[4..7], &x[4..7]);
        let names = input_names(2, &RescalingConfig::climate_invariant());
        assert_eq!(names, ["RH_00", "RH_01", "B_plume_00", "B_plume_01", "p_s", "S0", "SHF", "LHF_dq"]);
    }

    #[test]
    fn config_json_defaults() {
        let c: RescalingConfig = serde_json::from_str(r#"{"q_mode":"rh","t_mode":"buoyancy"}"#).unwrap();
        assert_eq!(c.batch_size, 1024);
        assert_eq!(c.lhf_mode, LhfMode::Raw);
        assert!(serde_json::from_str::<RescalingConfig>(r#"{"q_mode":"bogus"}"#).is_err());
        assert!(RescalingConfig { batch_size: 0, ..c }.validate().is_err());
    }
}
