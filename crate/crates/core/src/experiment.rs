//! End-to-end runs: data, statistics, distance table, baseline and neural
//! models in both representations, evaluation, curves and a summary table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    compute_stats, input_names, output_names, read_dataset, rescaled_features, write_dataset, BatchGenerator, Dataset,
    FeatureStats, LhfMode, NormalizationReference, QMode, RescalingConfig, TMode,
};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, ReportMeta, DEFAULT_LAT_BANDS};
use crate::models::{
    evaluate_mse, predict_physical, save_checkpoint, train, Callback, Checkpoint, LearningCurves, ModelSpec,
    TrainConfig,
};
use crate::rng;
use crate::stats::{compare_samples, DistanceReport, DEFAULT_BINS};
use crate::synth::{SynthConfig, SynthModel};
use crate::thermo::{ClimateTag, Constants};

pub const RUN_SCHEMA_VERSION: u32 = 1;

fn cold() -> ClimateTag {
    ClimateTag::Minus4K
}

fn warm() -> ClimateTag {
    ClimateTag::Plus4K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthData {
    #[serde(default)]
    pub synth: SynthConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_generalization: usize,
    #[serde(default = "cold")]
    pub train_climate: ClimateTag,
    #[serde(default = "warm")]
    pub generalization_climate: ClimateTag,
    #[serde(default)]
    pub seed: u64,
    /// Also write the generated `.civ` files to the output directory.
    #[serde(default)]
    pub write: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub generalization: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    Synth(SynthData),
    Files(FileData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NnVariant {
    pub name: String,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub batch_norm: bool,
}

fn default_hidden() -> Vec<usize> {
    vec![64; 4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NnRun {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default)]
    pub train: TrainConfig,
    /// Extra dropout / batch-norm configurations trained alongside the plain network.
    #[serde(default)]
    pub variants: Vec<NnVariant>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

fn default_bands() -> usize {
    DEFAULT_LAT_BANDS
}

fn default_true() -> bool {
    true
}

fn default_mlr() -> Option<TrainConfig> {
    Some(TrainConfig::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub output_dir: PathBuf,
    pub data: DataSource,
    #[serde(default = "RescalingConfig::brute_force")]
    pub brute_force: RescalingConfig,
    #[serde(default = "RescalingConfig::climate_invariant")]
    pub climate_invariant: RescalingConfig,
    #[serde(default)]
    pub normalization: NormalizationReference,
    /// Training settings for the linear baselines; `null` skips them.
    #[serde(default = "default_mlr")]
    pub mlr: Option<TrainConfig>,
    /// Network settings; `null` skips the networks.
    #[serde(default)]
    pub nn: Option<NnRun>,
    /// Model seeds: initialisation, dropout and shuffling. Data are shared.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_bins")]
    pub distance_bins: usize,
    #[serde(default = "default_bands")]
    pub lat_bands: usize,
    #[serde(default = "default_true")]
    pub write_models: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match v.get("schema_version").and_then(|s| s.as_u64()) {
            Some(n) if n == RUN_SCHEMA_VERSION as u64 => {}
            Some(n) => return Err(Error::Config(format!("unsupported schema_version {n}"))),
            None => return Err(Error::Config("missing schema_version".into())),
        }
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != RUN_SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.distance_bins == 0 || self.lat_bands == 0 {
            return Err(Error::Config("distance_bins and lat_bands must be >= 1".into()));
        }
        self.brute_force.validate()?;
        self.climate_invariant.validate()?;
        if let Some(t) = &self.mlr {
            t.validate()?;
        }
        if let Some(nn) = &self.nn {
            nn.train.validate()?;
            let mut names = vec![String::new()];
            for v in &nn.variants {
                if v.name.is_empty() || !v.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') || names.contains(&v.name) {
                    return Err(Error::Config(format!("variant name {:?} must be unique and alphanumeric", v.name)));
                }
                names.push(v.name.clone());
            }
        }
        if let DataSource::Synth(s) = &self.data {
            s.synth.validate()?;
            if s.n_train == 0 || s.n_val == 0 || s.n_test == 0 || s.n_generalization == 0 {
                return Err(Error::Config("every split needs at least one sample".into()));
            }
        }
        Ok(())
    }

    /// Input files that must exist before running.
    pub fn check_inputs(&self) -> Result<()> {
        if let DataSource::Files(f) = &self.data {
            for p in [&f.train, &f.val, &f.test, &f.generalization] {
                if !p.is_file() {
                    return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset not found")));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration, ignoring where the outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hash_json(&c)
    }

    /// Models in training order: `mlr_bf`, `mlr_ci`, `nn_bf`, `nn_ci`, then variants.
    pub fn model_runs(&self) -> Vec<ModelRun> {
        let mut runs = Vec::new();
        let reps = [("bf", self.brute_force), ("ci", self.climate_invariant)];
        if let Some(t) = &self.mlr {
            for (tag, r) in reps {
                runs.push(ModelRun {
                    name: format!("mlr_{tag}"),
                    spec: ModelSpec::Mlr,
                    rescaling: r,
                    train: t.clone(),
                });
            }
        }
        if let Some(nn) = &self.nn {
            let mut kinds = vec![(String::new(), nn.dropout, nn.batch_norm)];
            kinds.extend(nn.variants.iter().map(|v| (format!("_{}", v.name), v.dropout, v.batch_norm)));
            for (suffix, dropout, batch_norm) in kinds {
                for (tag, r) in reps {
                    runs.push(ModelRun {
                        name: format!("nn_{tag}{suffix}"),
                        spec: ModelSpec::Nn {
                            hidden: nn.hidden.clone(),
                            dropout,
                            batch_norm,
                        },
                        rescaling: r,
                        train: nn.train.clone(),
                    });
                }
            }
        }
        runs
    }

    /// Human-readable list of the stages a run would execute.
    pub fn plan(&self) -> Vec<String> {
        let mut steps = Vec::new();
        steps.push(match &self.data {
            DataSource::Synth(s) => format!(
                "data: synthesize {} train / {} val / {} test ({}) and {} generalization ({}) samples, seed {}",
                s.n_train,
                s.n_val,
                s.n_test,
                s.train_climate.as_str(),
                s.n_generalization,
                s.generalization_climate.as_str(),
                s.seed
            ),
            DataSource::Files(f) => format!(
                "data: read {}, {}, {}, {}",
                f.train.display(),
                f.val.display(),
                f.test.display(),
                f.generalization.display()
            ),
        });
        steps.push(format!(
            "stats: normalisation for {} and {}",
            self.brute_force.label(),
            self.climate_invariant.label()
        ));
        steps.push(format!("distances: {} bins per input feature", self.distance_bins));
        for m in self.model_runs() {
            steps.push(format!(
                "train {} ({}) for {} epochs, seeds {:?}",
                m.name,
                m.rescaling.label(),
                m.train.epochs,
                self.seeds
            ));
        }
        steps.push("evaluate: train, val, test and generalization MSE; reports".into());
        steps.push(format!("summary: {}", self.output_dir.join("summary.csv").display()));
        steps
    }
}

/// One model to train, as planned from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub name: String,
    pub spec: ModelSpec,
    pub rescaling: RescalingConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub rescaling: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub generalization_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub feature: String,
    pub report: DistanceReport,
}

#[derive(Debug, Clone)]
pub struct RunCurves {
    pub model: String,
    pub seed: u64,
    pub curves: LearningCurves,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config_hash: String,
    pub output_dir: PathBuf,
    pub distances: Vec<DistanceRow>,
    pub rows: Vec<SummaryRow>,
    pub curves: Vec<RunCurves>,
}

impl RunSummary {
    pub fn rows_for(&self, model: &str) -> impl Iterator<Item = &SummaryRow> {
        let model = model.to_string();
        self.rows.iter().filter(move |r| r.model == model)
    }
}

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub generalization: Dataset,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        },
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_splits(cfg: &RunConfig, c: &Constants) -> Result<Splits> {
    let splits = match &cfg.data {
        DataSource::Synth(s) => {
            let model = SynthModel::new(s.synth.clone(), c.clone())?;
            let gen = |climate, n, k| model.generate_dataset(climate, n, rng::mix(s.seed, k));
            Splits {
                train: gen(s.train_climate, s.n_train, 1)?,
                val: gen(s.train_climate, s.n_val, 2)?,
                test: gen(s.train_climate, s.n_test, 3)?,
                generalization: gen(s.generalization_climate, s.n_generalization, 4)?,
            }
        }
        DataSource::Files(f) => Splits {
            train: read_dataset(&f.train)?,
            val: read_dataset(&f.val)?,
            test: read_dataset(&f.test)?,
            generalization: read_dataset(&f.generalization)?,
        },
    };
    let np = splits.train.n_levels();
    for d in [&splits.val, &splits.test, &splits.generalization] {
        if d.n_levels() != np {
            return Err(Error::SchemaMismatch(format!("splits have {} and {} levels", np, d.n_levels())));
        }
    }
    for (name, d) in [("train", &splits.train), ("val", &splits.val)] {
        if d.is_empty() {
            return Err(Error::invalid(format!("{name} split is empty")));
        }
    }
    Ok(splits)
}

/// Cold/warm distances of every input feature in every representation.
pub fn distance_table(a: &Dataset, b: &Dataset, n_bins: usize, c: &Constants) -> Result<Vec<DistanceRow>> {
    let np = a.n_levels();
    let reps = [
        RescalingConfig::brute_force(),
        RescalingConfig {
            q_mode: QMode::Deficit,
            t_mode: TMode::FromNs,
            lhf_mode: LhfMode::Q,
            ..RescalingConfig::brute_force()
        },
        RescalingConfig::climate_invariant(),
    ];
    let mut rows: Vec<DistanceRow> = Vec::new();
    for r in reps {
        let fa = rescaled_features(a, &r, c)?;
        let fb = rescaled_features(b, &r, c)?;
        for (j, name) in input_names(np, &r).into_iter().enumerate() {
            if rows.iter().any(|row| row.feature == name) {
                continue;
            }
            let ca: Vec<f64> = fa.column(j).to_vec();
            let cb: Vec<f64> = fb.column(j).to_vec();
            let report = match compare_samples(&ca, &cb, n_bins) {
                Ok((rep, _, _)) => rep,
                // Identical constant columns have no support to histogram.
                Err(Error::DegenerateRange { min, max }) => DistanceReport {
                    hellinger: 0.0,
                    kl_pq: 0.0,
                    kl_qp: 0.0,
                    js: 0.0,
                    support_min: min,
                    support_max: max,
                    n_bins,
                },
                Err(e) => return Err(e),
            };
            rows.push(DistanceRow { feature: name, report });
        }
    }
    Ok(rows)
}

pub fn distances_csv(rows: &[DistanceRow], config_hash: &str) -> String {
    let mut out = String::from("feature,hellinger,kl_pq,kl_qp,js,support_min,support_max,n_bins,config_hash\n");
    for r in rows {
        let d = &r.report;
        let _ = writeln!(
            out,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{},{config_hash}",
            r.feature, d.hellinger, d.kl_pq, d.kl_qp, d.js, d.support_min, d.support_max, d.n_bins
        );
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow], config_hash: &str) -> String {
    let mut out =
        String::from("model,rescaling,seed,best_epoch,train_mse,val_mse,test_mse,generalization_mse,config_hash\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{config_hash}",
            r.model, r.rescaling, r.seed, r.best_epoch, r.train_mse, r.val_mse, r.test_mse, r.generalization_mse
        );
    }
    out
}

/// SHA-256 hex digest of a value's JSON serialisation.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("value serialises");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Statistics as JSON with a `config_hash` field; [`FeatureStats::from_json`] ignores the extra key.
pub fn stats_json(stats: &FeatureStats, config_hash: &str) -> Result<String> {
    let mut v = serde_json::to_value(stats)?;
    v["config_hash"] = serde_json::Value::String(config_hash.to_string());
    Ok(serde_json::to_string(&v)?)
}

/// Mean pressure of each level.
pub fn level_pressure(data: &Dataset) -> Vec<f64> {
    let np = data.n_levels();
    let mut acc = vec![0.0; np];
    for i in 0..data.len() {
        for (a, p) in acc.iter_mut().zip(data.p(i)) {
            *a += *p as f64;
        }
    }
    acc.iter().map(|a| a / data.len().max(1) as f64).collect()
}

/// Runs every stage in order, writing artifacts to `cfg.output_dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary> {
    stage("config", cfg.validate().and_then(|_| cfg.check_inputs()))?;
    let c = Constants::default();
    let hash = cfg.hash();
    let out = cfg.output_dir.clone();
    stage("config", std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e)))?;
    let mut echo = serde_json::to_value(cfg)?;
    echo["config_hash"] = serde_json::Value::String(hash.clone());
    stage("config", write(&out.join("run.json"), &serde_json::to_string_pretty(&echo)?))?;

    log::info!("stage data");
    let splits = stage("data", load_splits(cfg, &c))?;
    if let DataSource::Synth(s) = &cfg.data {
        if s.write {
            stage("data", (|| {
                write_dataset(out.join("train.civ"), &splits.train)?;
                write_dataset(out.join("val.civ"), &splits.val)?;
                write_dataset(out.join("test.civ"), &splits.test)?;
                write_dataset(out.join("generalization.civ"), &splits.generalization)
            })())?;
        }
    }

    log::info!("stage stats");
    let stats_for = |r: &RescalingConfig| -> Result<FeatureStats> {
        compute_stats(&[&splits.train, &splits.generalization], r, cfg.normalization, &c)
    };
    let stats_bf = stage("stats", stats_for(&cfg.brute_force))?;
    let stats_ci = stage("stats", stats_for(&cfg.climate_invariant))?;
    stage("stats", write(&out.join("stats_bf.json"), &stats_json(&stats_bf, &hash)?))?;
    stage("stats", write(&out.join("stats_ci.json"), &stats_json(&stats_ci, &hash)?))?;

    log::info!("stage distances");
    let distances = stage(
        "distances",
        distance_table(&splits.train, &splits.generalization, cfg.distance_bins, &c),
    )?;
    stage("distances", write(&out.join("distances.csv"), &distances_csv(&distances, &hash)))?;

    let pressure = level_pressure(&splits.generalization);
    let mut rows = Vec::new();
    let mut all_curves = Vec::new();
    for run in cfg.model_runs() {
        let stats = if run.rescaling == cfg.brute_force { &stats_bf } else { &stats_ci };
        for &seed in &cfg.seeds {
            let name = format!("train {} seed {seed}", run.name);
            log::info!("stage {name}");
            let (row, curves) = stage(&name, train_one(cfg, &run, seed, stats, &splits, &c, &hash, &pressure))?;
            stage(
                &name,
                write(&out.join(format!("curves_{}_s{seed}.csv", run.name)), &curves.to_csv(&hash)),
            )?;
            rows.push(row);
            all_curves.push(RunCurves {
                model: run.name.clone(),
                seed,
                curves,
            });
        }
    }
    stage("summary", write(&out.join("summary.csv"), &summary_csv(&rows, &hash)))?;
    Ok(RunSummary {
        config_hash: hash,
        output_dir: out,
        distances,
        rows,
        curves: all_curves,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_one(
    cfg: &RunConfig,
    run: &ModelRun,
    seed: u64,
    stats: &FeatureStats,
    splits: &Splits,
    c: &Constants,
    hash: &str,
    pressure: &[f64],
) -> Result<(SummaryRow, LearningCurves)> {
    let rescaling = RescalingConfig {
        seed: rng::mix(run.rescaling.seed, seed),
        ..run.rescaling
    };
    let train_climate = splits.train.climate();
    let g_train = BatchGenerator::new(&splits.train, rescaling, stats, c)?;
    let g_val = BatchGenerator::new(&splits.val, rescaling, stats, c)?.ordered();
    let g_test = BatchGenerator::new(&splits.test, rescaling, stats, c)?.ordered();
    let g_gen = BatchGenerator::new(&splits.generalization, rescaling, stats, c)?.ordered();
    let model = run.spec.build(g_train.n_inputs(), g_train.n_outputs(), seed)?;
    let tc = TrainConfig { seed, ..run.train.clone() };
    let cb = [Callback {
        name: format!("generalization_{}", splits.generalization.climate().as_str()),
        gen: &g_gen,
    }];
    let trained = train(model, &g_train, &g_val, &tc, &cb)?;
    let m = &trained.model;

    let eval = |g: &BatchGenerator, split: &str| -> Result<f64> {
        let (pred, batch) = predict_physical(m, g, train_climate)?;
        let lat = batch.lat.clone();
        let meta = ReportMeta {
            config_hash: hash.to_string(),
            model: run.name.clone(),
            dataset: split.to_string(),
            climate: g.dataset().climate().as_str().to_string(),
            train_climate: train_climate.as_str().to_string(),
        };
        let report = EvalReport::build(
            meta,
            &pred,
            &batch.y_physical,
            &lat,
            pressure.to_vec(),
            output_names(g.dataset().n_levels()),
            cfg.lat_bands,
        )?;
        let base = cfg.output_dir.join(format!("report_{}_s{seed}_{split}", run.name));
        report.emit(base.with_extension("json"), Some(&base.with_extension("grid.csv")))?;
        Ok(report.mse)
    };
    let test_mse = eval(&g_test, "test")?;
    let gen_mse = eval(&g_gen, "generalization")?;
    let train_mse = evaluate_mse(m, &BatchGenerator::new(&splits.train, rescaling, stats, c)?.ordered(), train_climate)?;
    let val_mse = evaluate_mse(m, &g_val, train_climate)?;

    if cfg.write_models {
        let ck = Checkpoint::new(
            m.clone(),
            rescaling,
            tc,
            train_climate,
            stats.clone(),
            hash.to_string(),
            trained.curves.best_epoch,
        );
        save_checkpoint(cfg.output_dir.join(format!("model_{}_s{seed}.civm", run.name)), &ck)?;
    }
    Ok((
        SummaryRow {
            model: run.name.clone(),
            rescaling: rescaling.label(),
            seed,
            best_epoch: trained.curves.best_epoch,
            train_mse,
            val_mse,
            test_mse,
            generalization_mse: gen_mse,
        },
        trained.curves,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        RunConfig {
            schema_version: RUN_SCHEMA_VERSION,
            output_dir: dir.to_path_buf(),
            data: DataSource::Synth(SynthData {
                synth: SynthConfig {
                    n_levels: 8,
                    ..Default::default()
                },
                n_train: 400,
                n_val: 100,
                n_test: 100,
                n_generalization: 100,
                train_climate: ClimateTag::Minus4K,
                generalization_climate: ClimateTag::Plus4K,
                seed: 3,
                write: false,
            }),
            brute_force: RescalingConfig {
                batch_size: 64,
                ..RescalingConfig::brute_force()
            },
            climate_invariant: RescalingConfig {
                batch_size: 64,
                ..RescalingConfig::climate_invariant()
            },
            normalization: NormalizationReference::Training,
            mlr: Some(TrainConfig {
                epochs: 2,
                ..Default::default()
            }),
            nn: Some(NnRun {
                hidden: vec![8, 8],
                dropout: 0.0,
                batch_norm: false,
                train: TrainConfig {
                    epochs: 2,
                    ..Default::default()
                },
                variants: vec![NnVariant {
                    name: "dpbn".into(),
                    dropout: 0.3,
                    batch_norm: true,
                }],
            }),
            seeds: vec![0, 1],
            distance_bins: 20,
            lat_bands: 4,
            write_models: true,
        }
    }

    #[test]
    fn run_writes_artifacts_and_repeats_byte_identically() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let s1 = run_experiment(&small(d1.path())).unwrap();
        let s2 = run_experiment(&small(d2.path())).unwrap();
        assert_eq!(s1.config_hash, s2.config_hash);
        assert_eq!(s1.rows.len(), 6 * 2);
        let mut csvs = 0;
        for entry in std::fs::read_dir(d1.path()).unwrap() {
            let p = entry.unwrap().path();
            let name = p.file_name().unwrap().to_owned();
            if p.extension().is_some_and(|e| e == "csv") {
                let a = std::fs::read(&p).unwrap();
                let b = std::fs::read(d2.path().join(&name)).unwrap();
                assert_eq!(a, b, "{name:?}");
                let text = String::from_utf8(a).unwrap();
                assert!(text.lines().skip(1).all(|l| l.ends_with(&s1.config_hash)), "{name:?}");
                csvs += 1;
            }
        }
        // distances, summary, 12 curves, 24 grids
        assert_eq!(csvs, 2 + 12 + 24);
        assert!(d1.path().join("model_nn_ci_dpbn_s1.civm").is_file());
        let stats = std::fs::read_to_string(d1.path().join("stats_ci.json")).unwrap();
        assert!(stats.contains(&s1.config_hash));
        assert_eq!(FeatureStats::from_json(&stats).unwrap().n_levels, 8);
    }

    #[test]
    fn hash_ignores_output_dir_but_not_settings() {
        let a = small(Path::new("/tmp/a"));
        let mut b = small(Path::new("/tmp/b"));
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![5];
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn config_parsing_and_validation() {
        let base = small(Path::new("out"));
        let text = serde_json::to_string(&base).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), base);
        let wrong = text.replace("\"schema_version\":1", "\"schema_version\":7");
        assert!(matches!(RunConfig::from_json(&wrong), Err(Error::Config(_))));
        let unknown = text.replacen('{', "{\"bogus\":1,", 1);
        assert!(matches!(RunConfig::from_json(&unknown), Err(Error::Config(_))));
        let mut no_seeds = base.clone();
        no_seeds.seeds.clear();
        assert!(no_seeds.validate().is_err());
        let plan = base.plan();
        assert!(plan.iter().any(|s| s.starts_with("train nn_ci_dpbn")));
        assert_eq!(plan.len(), 3 + 6 + 2);
    }

    #[test]
    fn missing_files_fail_in_the_config_stage() {
        let mut cfg = small(Path::new("/nonexistent/out"));
        cfg.data = DataSource::Files(FileData {
            train: "/nonexistent/a.civ".into(),
            val: "/nonexistent/b.civ".into(),
            test: "/nonexistent/c.civ".into(),
            generalization: "/nonexistent/d.civ".into(),
        });
        let err = run_experiment(&cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { ref stage, .. } if stage == "config"));
        assert!(matches!(err.root(), Error::Io { .. }));
    }
}
