//! Synthetic climate columns with a truth closure that is climate invariant
//! by construction.
//!
//! The truth closure is a smooth function of relative humidity, plume
//! buoyancy, deficit-scaled latent heat flux, insolation and surface
//! pressure only. It is not climate physics; it exists so that the
//! cold-to-warm generalisation gap of brute-force models is a testable
//! property of the learning system.
//!
//! Temperature profiles are built so that plume buoyancy follows a
//! climate-independent target: a reference column (fixed lapse rate capped at
//! the tropopause temperature) defines the mean buoyancy profile, each sample
//! adds a smooth perturbation, and temperature is recovered level by level by
//! bisection. Levels whose solution falls below the cap are held at the cap.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{rescale_inputs, Dataset, RescalingConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::thermo::{self, ClimateTag, Column, Constants};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_levels: usize,
    /// Sigma of the lowest model level.
    pub sigma_bottom: f64,
    /// Sigma of the highest model level.
    pub sigma_top: f64,
    /// Mean near-surface temperature of the +0K climate, K.
    pub ts_mean: f64,
    pub ts_sd: f64,
    /// Truncation of the near-surface temperature distribution, in standard deviations.
    pub ts_truncation: f64,
    /// Lapse rate of the reference column, K/m.
    pub lapse_rate: f64,
    /// Tropopause temperature cap, K.
    pub t_cap: f64,
    pub p_s_mean: f64,
    pub p_s_sd: f64,
    /// Relative humidity means at the lowest and highest level; Beta concentration.
    pub rh_bottom: f64,
    pub rh_top: f64,
    pub rh_concentration: f64,
    /// Upper bound on near-surface relative humidity.
    pub rh_ns_max: f64,
    /// Gamma shape and scale of the near-surface wind speed, m/s.
    pub wind_shape: f64,
    pub wind_scale: f64,
    /// Air density times drag coefficient, kg/m³.
    pub rho_cd: f64,
    /// Standard deviations of the two buoyancy-perturbation modes, m/s².
    pub buoyancy_sd: [f64; 2],
    /// Gamma shape and scale of sensible heat flux, W/m².
    pub shf_shape: f64,
    pub shf_scale: f64,
    pub solar_constant: f64,
    /// Peak column latent heating of the convective closure, W/m².
    pub precip_scale: f64,
    /// Output noise: absolute floor (W/m²) and relative part.
    pub noise_floor: f64,
    pub noise_relative: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_levels: 30,
            sigma_bottom: 0.99,
            sigma_top: 0.1,
            ts_mean: 292.0,
            ts_sd: 6.0,
            ts_truncation: 3.0,
            lapse_rate: 6.5e-3,
            t_cap: 200.0,
            p_s_mean: 1.01e5,
            p_s_sd: 700.0,
            rh_bottom: 0.8,
            rh_top: 0.3,
            rh_concentration: 12.0,
            rh_ns_max: 0.9,
            wind_shape: 4.0,
            wind_scale: 1.75,
            rho_cd: 1.2 * 1.2e-3,
            buoyancy_sd: [0.04, 0.04],
            shf_shape: 2.0,
            shf_scale: 8.0,
            solar_constant: 1361.0,
            noise_floor: 0.65,
            noise_relative: 0.02,
            precip_scale: 400.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_levels < 8 {
            return bad("synth needs at least 8 levels");
        }
        if !(0.0 < self.sigma_top && self.sigma_top < self.sigma_bottom && self.sigma_bottom < 1.0) {
            return bad("need 0 < sigma_top < sigma_bottom < 1");
        }
        if !(0.0 < self.rh_top && self.rh_top < 1.0 && 0.0 < self.rh_bottom && self.rh_bottom < 1.0) {
            return bad("relative humidity means must lie in (0, 1)");
        }
        if !(0.0 < self.rh_ns_max && self.rh_ns_max < 1.0) {
            return bad("rh_ns_max must lie in (0, 1)");
        }
        let positive = [
            self.ts_sd,
            self.ts_truncation,
            self.lapse_rate,
            self.t_cap,
            self.p_s_mean,
            self.p_s_sd,
            self.rh_concentration,
            self.wind_shape,
            self.wind_scale,
            self.rho_cd,
            self.shf_shape,
            self.shf_scale,
            self.solar_constant,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("scale parameters must be positive");
        }
        if self.noise_floor < 0.0 || self.precip_scale < 0.0 || self.noise_relative < 0.0 || self.buoyancy_sd.iter().any(|s| *s < 0.0) {
            return bad("noise and perturbation scales must be non-negative");
        }
        if self.ts_mean - 4.0 - self.ts_truncation * self.ts_sd < 230.0
            || self.ts_mean + 4.0 + self.ts_truncation * self.ts_sd > 330.0
        {
            return bad("near-surface temperature range must stay within (230, 330) K");
        }
        Ok(())
    }

    /// Sigma levels, bottom to top, evenly spaced.
    pub fn sigma(&self) -> Vec<f64> {
        let n = self.n_levels;
        (0..n)
            .map(|k| self.sigma_bottom + (self.sigma_top - self.sigma_bottom) * k as f64 / (n - 1) as f64)
            .collect()
    }

    fn rh_mean(&self, sigma: f64) -> f64 {
        let s = ((sigma - self.sigma_top) / (self.sigma_bottom - self.sigma_top)).clamp(0.0, 1.0);
        self.rh_top + (self.rh_bottom - self.rh_top) * s.powf(1.5)
    }

    /// Noiseless variant.
    pub fn noiseless(mut self) -> Self {
        self.noise_floor = 0.0;
        self.noise_relative = 0.0;
        self
    }
}

/// Precomputed level structure shared by all samples.
#[derive(Debug, Clone)]
pub struct SynthModel {
    pub config: SynthConfig,
    pub consts: Constants,
    sigma: Vec<f64>,
    /// Mean buoyancy target per level.
    buoyancy_ref: Vec<f64>,
    /// Highest level whose temperature is inverted from the buoyancy target;
    /// the last uncapped level of the reference column.
    inversion_top: usize,
    /// Climate-independent Beta samplers per level.
    rh: Vec<Beta<f64>>,
    kernels: Kernels,
}

#[derive(Debug, Clone)]
struct Kernels {
    /// Convective heating, drying, longwave and shortwave shapes in sigma.
    heat: Vec<f64>,
    dry: Vec<f64>,
    lw: Vec<f64>,
    sw: Vec<f64>,
    /// Weights for the column-moisture and buoyancy-drive averages.
    moist_w: Vec<f64>,
    drive_w: Vec<f64>,
}

fn bump(s: f64, centre: f64, width: f64) -> f64 {
    (-0.5 * ((s - centre) / width).powi(2)).exp()
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl SynthModel {
    pub fn new(config: SynthConfig, consts: Constants) -> Result<Self> {
        config.validate()?;
        consts.validate()?;
        let sigma = config.sigma();
        let rh = sigma
            .iter()
            .map(|&s| {
                let m = config.rh_mean(s);
                Beta::new(m * config.rh_concentration, (1.0 - m) * config.rh_concentration)
                    .map_err(|e| Error::Config(format!("relative humidity sampler: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let kernels = Kernels {
            heat: normalized(sigma.iter().map(|&s| bump(s, 0.5, 0.17)).collect()),
            dry: normalized(sigma.iter().map(|&s| bump(s, 0.75, 0.15)).collect()),
            lw: normalized(sigma.iter().map(|&s| 0.4 + bump(s, 0.8, 0.25)).collect()),
            sw: normalized(sigma.iter().map(|&s| bump(s, 0.7, 0.3)).collect()),
            moist_w: normalized(sigma.iter().map(|&s| bump(s, 0.65, 0.15)).collect()),
            drive_w: normalized(
                sigma
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| if k == 0 { 0.0 } else { bump(s, 0.6, 0.15) })
                    .collect(),
            ),
        };
        let mut model = Self {
            config,
            consts,
            sigma,
            buoyancy_ref: Vec::new(),
            inversion_top: 0,
            rh,
            kernels,
        };
        let (b_ref, top) = model.reference_buoyancy()?;
        model.buoyancy_ref = b_ref;
        model.inversion_top = top;
        Ok(model)
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn buoyancy_reference(&self) -> &[f64] {
        &self.buoyancy_ref
    }

    pub fn inversion_top(&self) -> usize {
        self.inversion_top
    }

    /// Buoyancy of the reference column: lapse-rate profile from the +0K mean
    /// temperature with mean relative humidity.
    fn reference_buoyancy(&self) -> Result<(Vec<f64>, usize)> {
        let cfg = &self.config;
        let c = &self.consts;
        let p: Vec<f64> = self.sigma.iter().map(|s| s * cfg.p_s_mean).collect();
        let rh: Vec<f64> = self.sigma.iter().map(|&s| cfg.rh_mean(s)).collect();
        let n = p.len();
        let mut t = vec![cfg.ts_mean; n];
        let mut q = vec![0.0; n];
        let mut z = vec![0.0; n];
        q[0] = rh[0] * thermo::q_sat(t[0], p[0], c)?;
        for k in 1..n {
            let mut tk = t[k - 1];
            for _ in 0..20 {
                let qk = rh[k] * thermo::q_sat(tk, p[k], c)?;
                let zk = z[k - 1] + thermo::height_increment(p[k - 1], p[k], t[k - 1], q[k - 1], tk, qk, c);
                tk = (cfg.ts_mean - cfg.lapse_rate * zk).max(cfg.t_cap);
            }
            t[k] = tk;
            q[k] = rh[k] * thermo::q_sat(tk, p[k], c)?;
            z[k] = z[k - 1] + thermo::height_increment(p[k - 1], p[k], t[k - 1], q[k - 1], t[k], q[k], c);
        }
        let h_par = thermo::parcel_mse(q[0], t[0], c);
        let b = (0..n)
            .map(|k| thermo::buoyancy_at_level(h_par, t[k], p[k], z[k], c))
            .collect();
        let top = (1..n).take_while(|&k| t[k] > cfg.t_cap).last().unwrap_or(0);
        Ok((b, top))
    }

    fn draw_ts<R: Rng>(&self, climate: ClimateTag, rng: &mut R) -> (f64, f64) {
        let cfg = &self.config;
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= cfg.ts_truncation {
                return (cfg.ts_mean + climate.offset_k() + cfg.ts_sd * z, z);
            }
        }
    }

    /// Draws one column of the given climate.
    pub fn sample_column<R: Rng>(&self, climate: ClimateTag, rng: &mut R) -> Result<Column> {
        let cfg = &self.config;
        let c = &self.consts;
        let n = cfg.n_levels;
        let (t_ns, z_score) = self.draw_ts(climate, rng);

        let p_s = loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 3.0 {
                break cfg.p_s_mean + cfg.p_s_sd * z;
            }
        };
        let p: Vec<f64> = self.sigma.iter().map(|s| s * p_s).collect();

        let mut rh: Vec<f64> = self.rh.iter().map(|b| b.sample(rng)).collect();
        rh[0] *= cfg.rh_ns_max;

        // Smooth buoyancy perturbation: a lower-tropospheric and an upper mode.
        let a: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.buoyancy_sd[0];
        let b: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.buoyancy_sd[1];
        let target: Vec<f64> = self
            .sigma
            .iter()
            .zip(&self.buoyancy_ref)
            .map(|(&s, &br)| br + a * bump(s, 0.8, 0.15) + b * bump(s, 0.45, 0.15))
            .collect();

        let mut t = vec![t_ns; n];
        let mut q = vec![0.0; n];
        let mut z = vec![0.0; n];
        q[0] = rh[0] * thermo::q_sat(t_ns, p[0], c)?;
        let h_par = thermo::parcel_mse(q[0], t_ns, c);
        for k in 1..n {
            let f = |tk: f64| -> Result<(f64, f64, f64)> {
                let qk = rh[k] * thermo::q_sat(tk, p[k], c)?;
                let zk = z[k - 1] + thermo::height_increment(p[k - 1], p[k], t[k - 1], q[k - 1], tk, qk, c);
                Ok((thermo::buoyancy_at_level(h_par, tk, p[k], zk, c) - target[k], qk, zk))
            };
            let tk = if k <= self.inversion_top {
                let (mut lo, mut hi) = (150.0, t[k - 1] + 5.0);
                if f(lo)?.0 <= 0.0 {
                    lo
                } else if f(hi)?.0 >= 0.0 {
                    hi
                } else {
                    for _ in 0..48 {
                        let mid = 0.5 * (lo + hi);
                        if f(mid)?.0 > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                }
            } else {
                let mut tk = t[k - 1];
                for _ in 0..10 {
                    let dz = f(tk)?.2 - z[k - 1];
                    tk = (t[k - 1] - cfg.lapse_rate * dz).max(cfg.t_cap);
                }
                tk
            };
            let tk = tk.max(cfg.t_cap);
            let (_, qk, zk) = f(tk)?;
            t[k] = tk;
            q[k] = qk;
            z[k] = zk;
        }

        let wind: f64 = Gamma::new(cfg.wind_shape, cfg.wind_scale)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng);
        let exchange = cfg.rho_cd * wind;
        let deficit = thermo::q_sat(t_ns, p[0], c)? - q[0];
        let lhf = c.L_v * exchange * deficit;
        let shf: f64 = Gamma::new(cfg.shf_shape, cfg.shf_scale)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng);

        // Warm columns sit closer to the equator.
        let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * 4.0;
        let abs_lat = (75.0 / (1.0 + (1.702 * z_score).exp()) + jitter).clamp(0.0, 89.0);
        let lat = if rng.gen::<bool>() { abs_lat } else { -abs_lat };
        let hour: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let s0 = cfg.solar_constant * lat.to_radians().cos() * hour.cos().max(0.0);

        Ok(Column {
            p,
            q,
            t,
            p_s,
            s0,
            shf,
            lhf,
            lat,
            climate,
        })
    }

    /// Noiseless outputs as a function of the invariant inputs
    /// `[RH (Np), B_plume (Np), p_s, S0, SHF, LHF_dq]`, W/m².
    pub fn truth_from_invariants(&self, inv: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        let n = self.config.n_levels;
        if inv.len() != 2 * n + 4 || p.len() != n {
            return Err(Error::Shape(format!("invariant vector of length {} for Np={n}", inv.len())));
        }
        let c = &self.consts;
        let kern = &self.kernels;
        let (rh, b) = (&inv[..n], &inv[n..2 * n]);
        let (p_s, s0, exchange) = (inv[2 * n], inv[2 * n + 1], inv[2 * n + 3]);

        let moist: f64 = rh.iter().zip(&kern.moist_w).map(|(r, w)| r * w).sum();
        let drive: f64 = b.iter().zip(&kern.drive_w).map(|(b, w)| b * w).sum();
        let trigger = sigmoid((moist - 0.5) / 0.1);
        let depth = softplus((drive - 0.05) / 0.08);
        // Column latent heating, W/m².
        let precip = self.config.precip_scale * trigger * depth * (0.8 + 0.2 * exchange / 0.01);

        let interfaces = thermo::layer_interfaces(p, p_s)?;
        let mass = p_s / c.g;
        let mut heat_t = Vec::with_capacity(n);
        let mut dry_t = Vec::with_capacity(n);
        let mut lw_t = Vec::with_capacity(n);
        let mut sw_t = Vec::with_capacity(n);
        for k in 0..n {
            let dsig = (interfaces[k] - interfaces[k + 1]) / p_s;
            let active = sigmoid(b[k] / 0.06);
            // Column-integrated rates (W/m²) per unit sigma, turned into tendencies.
            let heat = precip * kern.heat[k] * (0.4 + 0.6 * active) / dsig;
            let dry = -0.8 * precip * kern.dry[k] / dsig;
            let lw = -(90.0 + 60.0 * rh[k]) * kern.lw[k] / dsig + 0.15 * precip * kern.heat[k] / dsig;
            let sw = s0 * (0.12 + 0.1 * rh[k]) * kern.sw[k] / dsig;
            heat_t.push(heat / (c.c_p * mass));
            dry_t.push(dry / (c.L_v * mass));
            lw_t.push(lw / (c.c_p * mass));
            sw_t.push(sw / (c.c_p * mass));
        }
        let mut y = thermo::to_energy_flux(&dry_t, &interfaces, c.L_v, c)?;
        y.extend(thermo::to_energy_flux(&heat_t, &interfaces, c.c_p, c)?);
        y.extend(thermo::to_energy_flux(&lw_t, &interfaces, c.c_p, c)?);
        y.extend(thermo::to_energy_flux(&sw_t, &interfaces, c.c_p, c)?);
        Ok(y)
    }

    /// Truth outputs of a column; heteroscedastic noise is added when `rng` is given.
    pub fn truth_closure<R: Rng>(&self, col: &Column, rng: Option<&mut R>) -> Result<Vec<f64>> {
        col.validate()?;
        let x = raw_inputs(col);
        let inv = rescale_inputs(&x, &col.p, &RescalingConfig::climate_invariant(), &self.consts)?;
        let mut y = self.truth_from_invariants(&inv, &col.p)?;
        if let Some(rng) = rng {
            let cfg = &self.config;
            for v in &mut y {
                let e: f64 = rng.sample(StandardNormal);
                *v += (cfg.noise_floor + cfg.noise_relative * v.abs()) * e;
            }
        }
        Ok(y)
    }

    /// `n` samples of one climate; sample `i` uses stream `i` of `seed`.
    pub fn generate_dataset(&self, climate: ClimateTag, n: usize, seed: u64) -> Result<Dataset> {
        let rows = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(seed, i as u64);
                let col = self.sample_column(climate, &mut rng)?;
                let y = self.truth_closure(&col, Some(&mut rng))?;
                Ok((raw_inputs(&col), y, col.p, col.lat))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut d = Dataset::empty(self.config.n_levels, climate, seed);
        for (x, y, p, lat) in rows {
            d.push(&x, &y, &p, lat)?;
        }
        Ok(d)
    }
}

/// Input vector `[q, T, p_s, S0, SHF, LHF]` of a column.
pub fn raw_inputs(col: &Column) -> Vec<f64> {
    let mut x = col.q.clone();
    x.extend_from_slice(&col.t);
    x.extend_from_slice(&[col.p_s, col.s0, col.shf, col.lhf]);
    x
}

/// Convenience wrapper around [`SynthModel::generate_dataset`].
pub fn generate_dataset(config: &SynthConfig, climate: ClimateTag, n: usize, seed: u64) -> Result<Dataset> {
    SynthModel::new(config.clone(), Constants::default())?.generate_dataset(climate, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::compare_samples;

    fn model() -> SynthModel {
        SynthModel::new(SynthConfig::default(), Constants::default()).unwrap()
    }

    #[test]
    fn columns_are_valid_and_buoyancy_hits_target() {
        let m = model();
        let c = Constants::default();
        for climate in ClimateTag::ALL {
            let mut r = rng::stream(1, climate as u64);
            for _ in 0..50 {
                let col = m.sample_column(climate, &mut r).unwrap();
                col.validate().unwrap();
                let b = thermo::plume_buoyancy(&col, &c).unwrap();
                // Perturbations are zero-mean; uncapped levels must match the target family.
                for k in 1..10 {
                    assert!(col.t[k] > m.config.t_cap);
                    assert!((b[k] - m.buoyancy_ref[k]).abs() < 0.5, "level {k}: {} vs {}", b[k], m.buoyancy_ref[k]);
                }
                assert!(col.lhf > 0.0 && col.s0 >= 0.0 && col.shf > 0.0);
                assert!(col.t.iter().all(|t| *t >= m.config.t_cap));
            }
        }
    }

    #[test]
    fn warming_with_identical_draws_preserves_invariants() {
        let m = model();
        let c = Constants::default();
        let inv = RescalingConfig::climate_invariant();
        let mut r1 = rng::stream(5, 0);
        let mut r2 = rng::stream(5, 0);
        let cold = m.sample_column(ClimateTag::Minus4K, &mut r1).unwrap();
        let warm = m.sample_column(ClimateTag::Plus4K, &mut r2).unwrap();
        assert!((warm.t[0] - cold.t[0] - 8.0).abs() < 1e-9);
        let a = rescale_inputs(&raw_inputs(&cold), &cold.p, &inv, &c).unwrap();
        let b = rescale_inputs(&raw_inputs(&warm), &warm.p, &inv, &c).unwrap();
        let n = m.config.n_levels;
        for k in 0..n {
            assert!((a[k] - b[k]).abs() < 1e-12, "RH level {k}");
        }
        for k in 1..n {
            if cold.t[k] > m.config.t_cap && warm.t[k] > m.config.t_cap {
                assert!((a[n + k] - b[n + k]).abs() < 1e-9, "B level {k}: {} vs {}", a[n + k], b[n + k]);
            }
        }
        assert!((a[2 * n + 3] - b[2 * n + 3]).abs() < 1e-12 * a[2 * n + 3]);
    }

    #[test]
    fn invariant_inputs_give_identical_noiseless_truth() {
        let m = SynthModel::new(SynthConfig::default().noiseless(), Constants::default()).unwrap();
        let mut r1 = rng::stream(9, 0);
        let mut r2 = rng::stream(9, 0);
        let cold = m.sample_column(ClimateTag::Minus4K, &mut r1).unwrap();
        let warm = m.sample_column(ClimateTag::Plus4K, &mut r2).unwrap();
        let inv = RescalingConfig::climate_invariant();
        let c = Constants::default();
        let a = rescale_inputs(&raw_inputs(&cold), &cold.p, &inv, &c).unwrap();
        let ya = m.truth_from_invariants(&a, &cold.p).unwrap();
        let yb = m.truth_from_invariants(&a, &warm.p).unwrap();
        assert_eq!(ya, yb);
        let none: Option<&mut rand_chacha::ChaCha8Rng> = None;
        assert_eq!(m.truth_closure(&cold, none).unwrap(), ya);
    }

    #[test]
    fn quiescent_column_has_only_radiative_outputs() {
        let m = model();
        let n = m.config.n_levels;
        let p: Vec<f64> = m.sigma().iter().map(|s| s * 1.0e5).collect();
        let mut inv = vec![0.1; n];
        inv.extend(vec![-1.0; n]);
        inv.extend_from_slice(&[1.0e5, 0.0, 10.0, 0.01]);
        let y = m.truth_from_invariants(&inv, &p).unwrap();
        let conv: f64 = y[..2 * n].iter().map(|v| v.abs()).sum();
        let lw: f64 = y[2 * n..3 * n].iter().sum();
        assert!(conv < 1e-3, "convective outputs {conv}");
        assert!(lw < -50.0);
        assert!(y[3 * n..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn column_moistening_bounded_by_lhf() {
        let m = model();
        let data = m.generate_dataset(ClimateTag::Plus4K, 200, 3).unwrap();
        let n = data.n_levels();
        for i in 0..data.len() {
            let moist: f64 = data.y(i)[..n].iter().map(|&v| v as f64).sum();
            let lhf = data.x(i)[2 * n + 3] as f64;
            // Noise floor summed over the column.
            assert!(moist <= lhf + 5.0 * m.config.noise_floor * (n as f64).sqrt() + 0.1 * moist.abs());
        }
    }

    #[test]
    fn same_seed_same_bytes_and_empty() {
        let m = model();
        let a = m.generate_dataset(ClimateTag::Minus4K, 20, 7).unwrap();
        let b = m.generate_dataset(ClimateTag::Minus4K, 20, 7).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert!(m.generate_dataset(ClimateTag::Minus4K, 0, 7).unwrap().is_empty());
    }

    #[test]
    fn surface_temperature_shift_and_rh_invariance() {
        let m = model();
        let cold = m.generate_dataset(ClimateTag::Minus4K, 4000, 1).unwrap();
        let warm = m.generate_dataset(ClimateTag::Plus4K, 4000, 2).unwrap();
        let n = cold.n_levels();
        let mean_t = |d: &Dataset| (0..d.len()).map(|i| d.x(i)[n] as f64).sum::<f64>() / d.len() as f64;
        assert!((mean_t(&warm) - mean_t(&cold) - 8.0).abs() < 0.5);
        let c = Constants::default();
        let rh = |d: &Dataset, k: usize| -> Vec<f64> {
            (0..d.len())
                .map(|i| {
                    let x = d.x(i);
                    thermo::relative_humidity(x[k] as f64, x[n + k] as f64, d.p(i)[k] as f64, &c).unwrap()
                })
                .collect()
        };
        let q = |d: &Dataset, k: usize| -> Vec<f64> { (0..d.len()).map(|i| d.x(i)[k] as f64).collect() };
        let k = n / 2;
        let (h_rh, _, _) = compare_samples(&rh(&cold, k), &rh(&warm, k), 50).unwrap();
        let (h_q, _, _) = compare_samples(&q(&cold, k), &q(&warm, k), 50).unwrap();
        assert!(h_rh.hellinger < 0.08, "{}", h_rh.hellinger);
        assert!(h_q.hellinger > h_rh.hellinger);
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { n_levels: 4, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { sigma_top: 0.995, ..Default::default() }.validate().is_err());
        let c: SynthConfig = serde_json::from_str(r#"{"n_levels": 12}"#).unwrap();
        assert_eq!(c.ts_sd, 6.0);
    }
}
