//! Rescaling batch generator.
//!
//! Each batch is built from stored physical values: rescale through the
//! thermodynamics module, then `(x - mean) / (max - min)` with the
//! normalisation statistics, clamped to `[-1, 1]`.

use std::sync::mpsc;

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::features::{rescale_inputs, FeatureStats, OutputMode, RescalingConfig};
use super::format::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::thermo::Constants;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Normalised, rescaled inputs, `batch × (2Np+4)`.
    pub x: Array2<f64>,
    /// Training targets: physical outputs, or their quantiles under `qmap_before`.
    pub y: Array2<f64>,
    /// Outputs in W/m².
    pub y_physical: Array2<f64>,
    pub indices: Vec<usize>,
    pub lat: Vec<f64>,
    /// Input values clamped into `[-1, 1]`.
    pub n_clamped: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub struct BatchGenerator<'a> {
    data: &'a Dataset,
    stats: &'a FeatureStats,
    config: RescalingConfig,
    consts: Constants,
    shuffle: bool,
}

impl<'a> BatchGenerator<'a> {
    pub fn new(
        data: &'a Dataset,
        config: RescalingConfig,
        stats: &'a FeatureStats,
        consts: &Constants,
    ) -> Result<Self> {
        config.validate()?;
        if stats.n_levels != data.n_levels() {
            return Err(Error::SchemaMismatch(format!(
                "statistics for {} levels, dataset has {}",
                stats.n_levels,
                data.n_levels()
            )));
        }
        if !stats.config.same_inputs(&config) {
            return Err(Error::Config(format!(
                "statistics were computed for rescaling {}, generator configured for {}",
                stats.config.label(),
                config.label()
            )));
        }
        if config.output_mode == OutputMode::QmapBefore {
            stats.cdfs(data.climate())?;
        }
        Ok(Self {
            data,
            stats,
            config,
            consts: consts.clone(),
            shuffle: true,
        })
    }

    /// Disables shuffling; batches follow storage order.
    pub fn ordered(mut self) -> Self {
        self.shuffle = false;
        self
    }

    pub fn dataset(&self) -> &Dataset {
        self.data
    }

    pub fn config(&self) -> &RescalingConfig {
        &self.config
    }

    pub fn stats(&self) -> &FeatureStats {
        self.stats
    }

    pub fn n_inputs(&self) -> usize {
        self.data.header.n_inputs()
    }

    pub fn n_outputs(&self) -> usize {
        self.data.header.n_outputs()
    }

    pub fn n_batches(&self) -> usize {
        self.data.len().div_ceil(self.config.batch_size)
    }

    /// Sample order for `epoch`, a permutation determined by the seed and epoch.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        if self.shuffle {
            order.shuffle(&mut rng::stream(self.config.seed, epoch as u64));
        }
        order
    }

    pub fn make_batch(&self, indices: &[usize]) -> Result<Batch> {
        let d = self.data;
        let (nx, ny, np) = (self.n_inputs(), self.n_outputs(), d.n_levels());
        let mut x = Array2::zeros((indices.len(), nx));
        let mut y_physical = Array2::zeros((indices.len(), ny));
        let mut lat = Vec::with_capacity(indices.len());
        let mut n_clamped = 0;
        let mut raw = vec![0.0; nx];
        let mut p = vec![0.0; np];
        for (r, &i) in indices.iter().enumerate() {
            if i >= d.len() {
                return Err(Error::invalid(format!("sample index {i} out of range")));
            }
            for (dst, &v) in raw.iter_mut().zip(d.x(i)) {
                *dst = v as f64;
            }
            for (dst, &v) in p.iter_mut().zip(d.p(i)) {
                *dst = v as f64;
            }
            let rescaled = rescale_inputs(&raw, &p, &self.config, &self.consts)?;
            for (j, (v, s)) in rescaled.iter().zip(&self.stats.rescaled).enumerate() {
                let z = s.normalize(*v);
                if !(-1.0..=1.0).contains(&z) {
                    n_clamped += 1;
                }
                x[[r, j]] = z.clamp(-1.0, 1.0);
            }
            for (j, &v) in d.y(i).iter().enumerate() {
                y_physical[[r, j]] = v as f64;
            }
            lat.push(d.lat(i) as f64);
        }
        let y = match self.config.output_mode {
            OutputMode::QmapBefore => {
                let cdfs = self.stats.cdfs(d.climate())?;
                let mut y = y_physical.clone();
                for mut row in y.rows_mut() {
                    for (v, cdf) in row.iter_mut().zip(cdfs) {
                        *v = cdf.eval(*v);
                    }
                }
                y
            }
            _ => y_physical.clone(),
        };
        Ok(Batch {
            x,
            y,
            y_physical,
            indices: indices.to_vec(),
            lat,
            n_clamped,
        })
    }

    /// Every sample in storage order.
    pub fn all(&self) -> Result<Batch> {
        let idx: Vec<usize> = (0..self.data.len()).collect();
        self.make_batch(&idx)
    }

    /// Sequential batches of one epoch; the last batch may be shorter.
    pub fn epoch(&self, epoch: usize) -> EpochBatches<'_, 'a> {
        EpochBatches {
            gen: self,
            order: self.epoch_order(epoch),
            cursor: 0,
        }
    }

    /// Runs `f` over one epoch while a producer thread prepares up to
    /// `prefetch` batches ahead. Batch order is identical to [`Self::epoch`].
    pub fn for_each_batch<F>(&self, epoch: usize, prefetch: usize, mut f: F) -> Result<()>
    where
        F: FnMut(usize, Batch) -> Result<()>,
    {
        if prefetch == 0 {
            for (b, batch) in self.epoch(epoch).enumerate() {
                f(b, batch?)?;
            }
            return Ok(());
        }
        let order = self.epoch_order(epoch);
        let bs = self.config.batch_size;
        std::thread::scope(|s| {
            let (tx, rx) = mpsc::sync_channel::<Result<Batch>>(prefetch);
            s.spawn(move || {
                for chunk in order.chunks(bs) {
                    if tx.send(self.make_batch(chunk)).is_err() {
                        break;
                    }
                }
            });
            for (b, batch) in rx.into_iter().enumerate() {
                f(b, batch?)?;
            }
            Ok(())
        })
    }
}

pub struct EpochBatches<'g, 'a> {
    gen: &'g BatchGenerator<'a>,
    order: Vec<usize>,
    cursor: usize,
}

impl Iterator for EpochBatches<'_, '_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.gen.config.batch_size).min(self.order.len());
        let batch = self.gen.make_batch(&self.order[self.cursor..end]);
        self.cursor = end;
        Some(batch)
    }
}
