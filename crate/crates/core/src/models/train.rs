//! Regressors, the training loop and physical-unit evaluation.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlr::MlrParams;
use super::nn::{mse_loss, Architecture, Network};
use super::optim::{Adam, AdamConfig, LrSchedule};
use crate::dataset::{Batch, BatchGenerator, OutputMode};
use crate::error::{Error, Result};
use crate::rng;
use crate::thermo::ClimateTag;

/// A trainable model.
#[derive(Debug, Clone, PartialEq)]
pub enum Regressor {
    Mlr(MlrParams),
    Nn(Network),
}

/// What to build before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelSpec {
    Mlr,
    Nn {
        hidden: Vec<usize>,
        #[serde(default)]
        dropout: f64,
        #[serde(default)]
        batch_norm: bool,
    },
}

impl ModelSpec {
    pub fn build(&self, n_inputs: usize, n_outputs: usize, seed: u64) -> Result<Regressor> {
        let mut r = rng::stream(seed, 0x1417);
        Ok(match self {
            ModelSpec::Mlr => Regressor::Mlr(MlrParams::new(n_inputs, n_outputs, &mut r)),
            ModelSpec::Nn {
                hidden,
                dropout,
                batch_norm,
            } => {
                let arch = Architecture::new(n_inputs, n_outputs, hidden.clone())
                    .with_dropout(*dropout)
                    .with_batch_norm(*batch_norm);
                Regressor::Nn(Network::new(arch, &mut r)?)
            }
        })
    }
}

impl Regressor {
    pub fn n_inputs(&self) -> usize {
        match self {
            Regressor::Mlr(m) => m.n_inputs(),
            Regressor::Nn(n) => n.arch.n_inputs,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            Regressor::Mlr(m) => m.n_outputs(),
            Regressor::Nn(n) => n.arch.n_outputs,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Regressor::Mlr(m) => m.param_count(),
            Regressor::Nn(n) => n.param_count(),
        }
    }

    /// Eval-mode prediction.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Regressor::Mlr(m) => m.predict(x),
            Regressor::Nn(n) => n.predict(x),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Regressor::Mlr(m) => m.tensors(),
            Regressor::Nn(n) => n.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Regressor::Mlr(m) => m.tensors_mut(),
            Regressor::Nn(n) => n.tensors_mut(),
        }
    }

    /// Trainable tensors plus any running statistics.
    pub fn state(&self) -> Vec<&[f64]> {
        match self {
            Regressor::Mlr(m) => m.tensors(),
            Regressor::Nn(n) => n.state(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Regressor::Mlr(m) => m.tensors_mut(),
            Regressor::Nn(n) => n.state_mut(),
        }
    }

    /// One training-mode pass: batch MSE and its gradients. Updates BN
    /// running statistics.
    pub fn loss_and_grads<R: Rng>(
        &mut self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        if y.ncols() != self.n_outputs() || y.nrows() != x.nrows() {
            return Err(Error::Shape(format!("targets {:?} for inputs {:?}", y.dim(), x.dim())));
        }
        match self {
            Regressor::Mlr(m) => {
                let pred = m.predict(x)?;
                let (loss, d) = mse_loss(&pred, &y);
                Ok((loss, m.backward(x, &d)))
            }
            Regressor::Nn(n) => {
                let masks = n.sample_masks(x.nrows(), rng);
                let cache = n.forward_train(x, &masks)?;
                let (loss, d) = mse_loss(&cache.output, &y);
                let grads = n.backward(&cache, &d)?;
                n.update_running_stats(x);
                Ok((loss, grads))
            }
        }
    }
}

fn default_epochs() -> usize {
    20
}

fn default_prefetch() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub seed: u64,
    /// Batches prepared ahead by the producer thread; 0 disables prefetching.
    #[serde(default = "default_prefetch")]
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            adam: AdamConfig::default(),
            schedule: LrSchedule::Constant,
            seed: 0,
            prefetch: default_prefetch(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        self.adam.validate()?;
        if let LrSchedule::Cyclic(c) = &self.schedule {
            if c.total_epochs < self.epochs {
                return Err(Error::Config(format!(
                    "cyclic schedule covers {} epochs, training runs {}",
                    c.total_epochs, self.epochs
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallbackCurve {
    pub name: String,
    pub loss: Vec<f64>,
}

/// Per-epoch losses. Validation and callback losses are MSE in W²/m⁴.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurves {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
    pub callbacks: Vec<CallbackCurve>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val: f64,
}

impl LearningCurves {
    pub fn epochs(&self) -> usize {
        self.train.len()
    }

    /// CSV with one row per epoch.
    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = String::from("epoch,train,val");
        for c in &self.callbacks {
            out.push(',');
            out.push_str(&c.name);
        }
        out.push_str(",config_hash\n");
        for e in 0..self.train.len() {
            out.push_str(&format!("{},{:.9e},{:.9e}", e + 1, self.train[e], self.val[e]));
            for c in &self.callbacks {
                out.push_str(&format!(",{:.9e}", c.loss[e]));
            }
            out.push_str(&format!(",{config_hash}\n"));
        }
        out
    }
}

pub struct Callback<'g, 'a> {
    pub name: String,
    pub gen: &'g BatchGenerator<'a>,
}

pub struct Trained {
    pub model: Regressor,
    pub curves: LearningCurves,
}

/// Trains with Adam on `train`, keeping the parameters of the epoch with the
/// lowest validation loss and recording each callback's loss every epoch.
pub fn train(
    mut model: Regressor,
    train: &BatchGenerator,
    val: &BatchGenerator,
    config: &TrainConfig,
    callbacks: &[Callback],
) -> Result<Trained> {
    config.validate()?;
    if train.n_inputs() != model.n_inputs() || train.n_outputs() != model.n_outputs() {
        return Err(Error::Shape("model does not match the training data".into()));
    }
    if train.dataset().is_empty() || val.dataset().is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    let train_climate = train.dataset().climate();
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut opt = Adam::new(config.adam, &shapes);
    let n_batches = train.n_batches();
    let mut curves = LearningCurves {
        train: Vec::new(),
        val: Vec::new(),
        callbacks: callbacks
            .iter()
            .map(|c| CallbackCurve {
                name: c.name.clone(),
                loss: Vec::new(),
            })
            .collect(),
        best_epoch: 0,
        best_val: f64::INFINITY,
    };
    let mut best = model.clone();
    for epoch in 1..=config.epochs {
        let mut dropout_rng = rng::stream(rng::mix(config.seed, 0xD0), epoch as u64);
        let mut sum = 0.0;
        let mut count = 0usize;
        train.for_each_batch(epoch, config.prefetch, |b, batch| {
            let (loss, grads) = model.loss_and_grads(batch.x.view(), batch.y.view(), &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            let lr = config.schedule.lr(config.adam.lr, epoch, b, n_batches)?;
            opt.step(model.tensors_mut(), &grads, lr)?;
            sum += loss * batch.len() as f64;
            count += batch.len();
            Ok(())
        })?;
        curves.train.push(sum / count as f64);
        let v = evaluate_mse(&model, val, train_climate)?;
        if !v.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                batch: n_batches,
                loss: v,
            });
        }
        curves.val.push(v);
        for (c, curve) in callbacks.iter().zip(&mut curves.callbacks) {
            curve.loss.push(evaluate_mse(&model, c.gen, train_climate)?);
        }
        if v < curves.best_val {
            curves.best_val = v;
            curves.best_epoch = epoch;
            best = model.clone();
        }
        log::info!("epoch {epoch}: train {:.4e} val {:.4e}", curves.train[epoch - 1], v);
    }
    Ok(Trained { model: best, curves })
}

const EVAL_CHUNK: usize = 4096;

fn predict_chunked(model: &Regressor, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), model.n_outputs()));
    let mut start = 0;
    while start < x.nrows() {
        let end = (start + EVAL_CHUNK).min(x.nrows());
        let p = model.predict(x.slice(s![start..end, ..]))?;
        out.slice_mut(s![start..end, ..]).assign(&p);
        start = end;
    }
    Ok(out)
}

/// Maps raw model outputs to W/m² for data of `gen`'s climate.
///
/// `qmap_before` models predict quantiles, mapped back through the inverse
/// CDF of the evaluated climate; `qmap_after` predictions are quantile-mapped
/// from the training climate to the evaluated climate.
pub fn to_physical(
    raw: Array2<f64>,
    gen: &BatchGenerator,
    train_climate: ClimateTag,
) -> Result<Array2<f64>> {
    let climate = gen.dataset().climate();
    match gen.config().output_mode {
        OutputMode::None => Ok(raw),
        OutputMode::QmapBefore => {
            let cdfs = gen.stats().cdfs(climate)?;
            let mut out = raw;
            for mut row in out.rows_mut() {
                for (v, cdf) in row.iter_mut().zip(cdfs) {
                    *v = cdf.invert(v.clamp(0.0, 1.0))?;
                }
            }
            Ok(out)
        }
        OutputMode::QmapAfter => {
            let src = gen.stats().cdfs(train_climate)?;
            let tgt = gen.stats().cdfs(climate)?;
            let mut out = raw;
            for mut row in out.rows_mut() {
                for ((v, s), t) in row.iter_mut().zip(src).zip(tgt) {
                    *v = crate::stats::quantile_map(*v, s, t);
                }
            }
            Ok(out)
        }
    }
}

/// Predictions in W/m² for every sample of `gen`, with the batch they came from.
pub fn predict_physical(model: &Regressor, gen: &BatchGenerator, train_climate: ClimateTag) -> Result<(Array2<f64>, Batch)> {
    let batch = gen.all()?;
    let raw = predict_chunked(model, batch.x.view())?;
    Ok((to_physical(raw, gen, train_climate)?, batch))
}

/// MSE in W²/m⁴ over every sample and output of `gen`.
pub fn evaluate_mse(model: &Regressor, gen: &BatchGenerator, train_climate: ClimateTag) -> Result<f64> {
    let (pred, batch) = predict_physical(model, gen, train_climate)?;
    let diff = pred - &batch.y_physical;
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len().max(1) as f64)
}

/// Per-output MSE, for diagnostics.
pub fn per_output_mse(pred: &Array2<f64>, truth: &Array2<f64>) -> Vec<f64> {
    let d = pred - truth;
    d.mapv(|v| v * v).mean_axis(Axis(0)).map(|a| a.to_vec()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compute_stats, Dataset, NormalizationReference, RescalingConfig};
    use crate::models::optim::CyclicLr;
    use crate::thermo::Constants;

    /// Linear ground truth on inputs that are already physical.
    fn linear_data(n: usize, seed: u64, climate: ClimateTag) -> Dataset {
        let np = 2;
        let mut r = rng::stream(seed, 0);
        let mut d = Dataset::empty(np, climate, seed);
        let p = [9.0e4, 5.0e4];
        for _ in 0..n {
            let t0: f64 = r.gen_range(280.0..300.0);
            let t1: f64 = r.gen_range(240.0..260.0);
            let q0: f64 = r.gen_range(0.005..0.015);
            let q1: f64 = r.gen_range(0.0005..0.002);
            let ps: f64 = r.gen_range(9.9e4..1.01e5);
            let s0: f64 = r.gen_range(0.0..1000.0);
            let shf: f64 = r.gen_range(0.0..40.0);
            let lhf: f64 = r.gen_range(0.0..200.0);
            let x = [q0, q1, t0, t1, ps, s0, shf, lhf];
            let y: Vec<f64> = (0..8)
                .map(|k| {
                    let k = k as f64;
                    1000.0 * q0 * (k - 3.0) + 0.2 * (t0 - 290.0) - 0.1 * k * (t1 - 250.0) + 0.01 * s0 + 0.05 * lhf
                })
                .collect();
            d.push(&x, &y, &p, 0.0).unwrap();
        }
        d
    }

    fn generators<'a>(
        tr: &'a Dataset,
        va: &'a Dataset,
        stats: &'a crate::dataset::FeatureStats,
        cfg: RescalingConfig,
    ) -> (BatchGenerator<'a>, BatchGenerator<'a>) {
        let c = Constants::default();
        (
            BatchGenerator::new(tr, cfg, stats, &c).unwrap(),
            BatchGenerator::new(va, cfg, stats, &c).unwrap().ordered(),
        )
    }

    #[test]
    fn mlr_fits_noiseless_linear_data() {
        let tr = linear_data(2000, 1, ClimateTag::Minus4K);
        let va = linear_data(500, 2, ClimateTag::Minus4K);
        let cfg = RescalingConfig {
            batch_size: 32,
            ..RescalingConfig::brute_force()
        };
        let stats = compute_stats(&[&tr], &cfg, NormalizationReference::Training, &Constants::default()).unwrap();
        let (gt, gv) = generators(&tr, &va, &stats, cfg);
        let tc = TrainConfig {
            epochs: 40,
            adam: AdamConfig {
                lr: 0.3,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = train(ModelSpec::Mlr.build(8, 8, 0).unwrap(), &gt, &gv, &tc, &[]).unwrap();
        assert!(out.curves.best_val < 1e-6, "val {:?}", out.curves);
        assert_eq!(out.curves.train.len(), 40);
        assert_eq!(out.curves.best_val, out.curves.val.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn curves_have_one_entry_per_epoch_and_training_is_deterministic() {
        let tr = linear_data(300, 3, ClimateTag::Minus4K);
        let va = linear_data(100, 4, ClimateTag::Minus4K);
        let gen_data = linear_data(100, 5, ClimateTag::Plus4K);
        let cfg = RescalingConfig {
            batch_size: 64,
            seed: 3,
            ..RescalingConfig::brute_force()
        };
        let stats = compute_stats(&[&tr], &cfg, NormalizationReference::Training, &Constants::default()).unwrap();
        let (gt, gv) = generators(&tr, &va, &stats, cfg);
        let gg = BatchGenerator::new(&gen_data, cfg, &stats, &Constants::default()).unwrap().ordered();
        let spec = ModelSpec::Nn {
            hidden: vec![8, 8],
            dropout: 0.2,
            batch_norm: true,
        };
        let tc = TrainConfig {
            epochs: 3,
            seed: 9,
            ..Default::default()
        };
        let cb = [Callback {
            name: "warm".into(),
            gen: &gg,
        }];
        let a = train(spec.build(8, 8, 1).unwrap(), &gt, &gv, &tc, &cb).unwrap();
        let b = train(spec.build(8, 8, 1).unwrap(), &gt, &gv, &TrainConfig { prefetch: 0, ..tc.clone() }, &cb).unwrap();
        assert_eq!(a.curves, b.curves);
        assert_eq!(a.model, b.model);
        assert_eq!(a.curves.val.len(), 3);
        assert_eq!(a.curves.callbacks[0].loss.len(), 3);
        let csv = a.curves.to_csv("abc");
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("epoch,train,val,warm,config_hash"));

        let one = train(spec.build(8, 8, 1).unwrap(), &gt, &gv, &TrainConfig { epochs: 1, ..tc }, &[]).unwrap();
        assert_eq!(one.curves.best_epoch, 1);
    }

    #[test]
    fn divergence_is_reported() {
        let tr = linear_data(100, 3, ClimateTag::Minus4K);
        let cfg = RescalingConfig {
            batch_size: 50,
            ..RescalingConfig::brute_force()
        };
        let stats = compute_stats(&[&tr], &cfg, NormalizationReference::Training, &Constants::default()).unwrap();
        let (gt, gv) = generators(&tr, &tr, &stats, cfg);
        let mut model = ModelSpec::Mlr.build(8, 8, 0).unwrap();
        model.tensors_mut()[1][0] = f64::NAN;
        let r = train(model, &gt, &gv, &TrainConfig::default(), &[]);
        assert!(matches!(r, Err(Error::TrainingDiverged { epoch: 1, batch: 1, .. })));
    }

    #[test]
    fn cyclic_schedule_must_cover_epochs() {
        let tc = TrainConfig {
            epochs: 12,
            schedule: LrSchedule::Cyclic(CyclicLr::default()),
            ..Default::default()
        };
        assert!(tc.validate().is_err());
    }

    #[test]
    fn qmap_before_predictions_come_back_in_physical_units() {
        let tr = linear_data(400, 6, ClimateTag::Minus4K);
        let cfg = RescalingConfig {
            output_mode: OutputMode::QmapBefore,
            batch_size: 64,
            ..RescalingConfig::brute_force()
        };
        let stats = compute_stats(&[&tr], &cfg, NormalizationReference::Training, &Constants::default()).unwrap();
        let (gt, _) = generators(&tr, &tr, &stats, cfg);
        let batch = gt.all().unwrap();
        // Perfect quantile predictions map back onto the physical targets.
        let phys = to_physical(batch.y.clone(), &gt, ClimateTag::Minus4K).unwrap();
        let err = (&phys - &batch.y_physical).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-6, "{err}");
    }
}
