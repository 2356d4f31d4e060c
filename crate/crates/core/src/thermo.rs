//! Closed-form moist thermodynamics used by the physical input rescalings.
//!
//! Saturation vapour pressure follows the single-moment microphysics fits
//! (liquid/ice polynomials blended linearly between `T_00` and `T_0`); the
//! plume buoyancy is that of a non-entraining parcel conserving moist static
//! energy from the near-surface level. Vertical profiles are indexed with the
//! near-surface level at index 0 and pressure decreasing upward.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_CONSTANTS: &str = include_str!("../data/constants.json");

/// Physical constants and saturation-curve fit coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Constants {
    pub R_v: f64,
    pub R_d: f64,
    pub L_v: f64,
    pub c_p: f64,
    pub g: f64,
    pub T_0: f64,
    pub T_00: f64,
    pub eps_q: f64,
    /// Floor on `T - T_0` inside the liquid polynomial.
    pub clamp_liq: f64,
    /// Liquid polynomial in `T - T_0`, ascending powers, hPa.
    pub a_liq: Vec<f64>,
    /// Ice polynomial in `T - T_0`, ascending powers, hPa.
    pub a_ice: Vec<f64>,
    /// Very-cold ice branch: `[offset, ramp floor, switch temperature (K), linear, quadratic]`.
    pub c_ice: Vec<f64>,
}

impl Default for Constants {
    fn default() -> Self {
        Self::from_json(DEFAULT_CONSTANTS).expect("bundled constants are valid")
    }
}

impl Constants {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Constants = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("R_v", self.R_v),
            ("R_d", self.R_d),
            ("L_v", self.L_v),
            ("c_p", self.c_p),
            ("g", self.g),
            ("T_0", self.T_0),
            ("T_00", self.T_00),
            ("eps_q", self.eps_q),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("constant {name} must be positive, got {v}")));
            }
        }
        if self.T_00 >= self.T_0 {
            return Err(Error::Config("T_00 must be below T_0".into()));
        }
        if self.a_liq.len() != 9 || self.a_ice.len() != 9 || self.c_ice.len() != 5 {
            return Err(Error::Config(format!(
                "expected 9/9/5 coefficients for a_liq/a_ice/c_ice, got {}/{}/{}",
                self.a_liq.len(),
                self.a_ice.len(),
                self.c_ice.len()
            )));
        }
        let all_finite = self
            .a_liq
            .iter()
            .chain(&self.a_ice)
            .chain(&self.c_ice)
            .chain(std::iter::once(&self.clamp_liq))
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Config("non-finite fit coefficient".into()));
        }
        Ok(())
    }

    /// `R_d / R_v`.
    pub fn epsilon(&self) -> f64 {
        self.R_d / self.R_v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClimateTag {
    #[serde(rename = "-4K")]
    Minus4K,
    #[serde(rename = "+0K")]
    Plus0K,
    #[serde(rename = "+4K")]
    Plus4K,
}

impl ClimateTag {
    pub const ALL: [ClimateTag; 3] = [ClimateTag::Minus4K, ClimateTag::Plus0K, ClimateTag::Plus4K];

    pub fn as_str(self) -> &'static str {
        match self {
            ClimateTag::Minus4K => "-4K",
            ClimateTag::Plus0K => "+0K",
            ClimateTag::Plus4K => "+4K",
        }
    }

    /// Surface warming relative to the reference climate, K.
    pub fn offset_k(self) -> f64 {
        match self {
            ClimateTag::Minus4K => -4.0,
            ClimateTag::Plus0K => 0.0,
            ClimateTag::Plus4K => 4.0,
        }
    }
}

impl fmt::Display for ClimateTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClimateTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "-4K" | "-4k" | "minus4k" | "cold" => Ok(ClimateTag::Minus4K),
            "+0K" | "0K" | "+0k" | "0k" | "plus0k" | "reference" => Ok(ClimateTag::Plus0K),
            "+4K" | "4K" | "+4k" | "4k" | "plus4k" | "warm" => Ok(ClimateTag::Plus4K),
            other => Err(Error::invalid(format!("unknown climate tag {other:?}"))),
        }
    }
}

/// One atmospheric column. Index 0 is the near-surface level.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    /// Pressure, Pa, strictly decreasing with index.
    pub p: Vec<f64>,
    /// Specific humidity, kg/kg.
    pub q: Vec<f64>,
    /// Temperature, K.
    pub t: Vec<f64>,
    pub p_s: f64,
    pub s0: f64,
    pub shf: f64,
    pub lhf: f64,
    pub lat: f64,
    pub climate: ClimateTag,
}

impl Column {
    pub fn n_levels(&self) -> usize {
        self.p.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.p.len();
        if n < 2 || self.q.len() != n || self.t.len() != n {
            return Err(Error::invalid(format!(
                "profile lengths p={}, q={}, T={} must agree and be >= 2",
                n,
                self.q.len(),
                self.t.len()
            )));
        }
        check_pressure_levels(&self.p)?;
        if let Some(t) = self.t.iter().find(|t| !(t.is_finite() && **t > 100.0)) {
            return Err(Error::invalid(format!("temperature {t} K out of range")));
        }
        if let Some(q) = self.q.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
            return Err(Error::invalid(format!("specific humidity {q} must be >= 0")));
        }
        Ok(())
    }
}

fn check_pressure_levels(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid("pressures must be positive and finite"));
    }
    if p.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("pressure levels must strictly decrease upward"));
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if !t.is_finite() || t <= 100.0 || t >= 400.0 {
        return Err(Error::invalid(format!("temperature {t} K outside (100, 400)")));
    }
    Ok(())
}

fn polyval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, a| acc * x + a)
}

/// Liquid/ice partition weight: 0 below `T_00`, 1 above `T_0`, linear between.
pub fn ice_liquid_weight(t: f64, c: &Constants) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::invalid("non-finite temperature"));
    }
    Ok(((t - c.T_00) / (c.T_0 - c.T_00)).clamp(0.0, 1.0))
}

/// Saturation vapour pressure over liquid water, Pa.
pub fn e_liq(t: f64, c: &Constants) -> f64 {
    let dt = (t - c.T_0).max(c.clamp_liq);
    100.0 * polyval(&c.a_liq, dt)
}

/// Saturation vapour pressure over ice, Pa.
pub fn e_ice(t: f64, c: &Constants) -> f64 {
    let dt = t - c.T_0;
    if t > c.T_0 {
        e_liq(t, c)
    } else if t > c.c_ice[2] {
        100.0 * polyval(&c.a_ice, dt)
    } else {
        let ramp = dt.max(c.c_ice[1]);
        100.0 * (c.c_ice[0] + ramp * (c.c_ice[3] + c.c_ice[4] * ramp))
    }
}

/// Saturation vapour pressure, Pa, blending liquid and ice between `T_00` and `T_0`.
pub fn sat_vapor_pressure(t: f64, c: &Constants) -> Result<f64> {
    check_temperature(t)?;
    Ok(sat_vapor_pressure_unchecked(t, c))
}

#[inline]
fn sat_vapor_pressure_unchecked(t: f64, c: &Constants) -> f64 {
    if t > c.T_0 {
        e_liq(t, c)
    } else if t < c.T_00 {
        e_ice(t, c)
    } else {
        let w = (t - c.T_00) / (c.T_0 - c.T_00);
        w * e_liq(t, c) + (1.0 - w) * e_ice(t, c)
    }
}

/// Saturation specific humidity, kg/kg.
pub fn q_sat(t: f64, p: f64, c: &Constants) -> Result<f64> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::invalid(format!("pressure {p} Pa must be positive")));
    }
    Ok(c.epsilon() * sat_vapor_pressure(t, c)? / p)
}

/// Relative humidity, `q / q_sat(T, p)`.
pub fn relative_humidity(q: f64, t: f64, p: f64, c: &Constants) -> Result<f64> {
    if !(q.is_finite() && q >= 0.0) {
        return Err(Error::invalid(format!("specific humidity {q} must be >= 0")));
    }
    Ok(q / q_sat(t, p, c)?)
}

/// `q_sat(T, p) - q`; negative when super-saturated.
pub fn saturation_deficit(q: f64, t: f64, p: f64, c: &Constants) -> Result<f64> {
    if !(q.is_finite() && q >= 0.0) {
        return Err(Error::invalid(format!("specific humidity {q} must be >= 0")));
    }
    Ok(q_sat(t, p, c)? - q)
}

/// Height of each level above the near-surface level from the hydrostatic
/// equation, trapezoidal in `ln p`.
pub fn geopotential_height(col: &Column, c: &Constants) -> Result<Vec<f64>> {
    col.validate()?;
    Ok(height_profile(&col.p, &col.t, &col.q, c))
}

pub(crate) fn height_profile(p: &[f64], t: &[f64], q: &[f64], c: &Constants) -> Vec<f64> {
    let mut z = Vec::with_capacity(p.len());
    z.push(0.0);
    for k in 1..p.len() {
        let step = height_increment(p[k - 1], p[k], t[k - 1], q[k - 1], t[k], q[k], c);
        z.push(z[k - 1] + step);
    }
    z
}

#[inline]
pub(crate) fn height_increment(
    p_lo: f64,
    p_hi: f64,
    t_lo: f64,
    q_lo: f64,
    t_hi: f64,
    q_hi: f64,
    c: &Constants,
) -> f64 {
    let f = |t: f64, q: f64| t * (c.R_d + (c.R_v - c.R_d) * q) / c.g;
    0.5 * (f(t_lo, q_lo) + f(t_hi, q_hi)) * (p_lo / p_hi).ln()
}

/// Moist static energy of the lifted near-surface parcel, J/kg.
pub fn parcel_mse(q_ns: f64, t_ns: f64, c: &Constants) -> f64 {
    c.L_v * q_ns + c.c_p * t_ns
}

/// Buoyancy of a saturated parcel of moist static energy `h_par` at one level.
#[inline]
pub(crate) fn buoyancy_at_level(h_par: f64, t: f64, p: f64, z: f64, c: &Constants) -> f64 {
    let qs = c.epsilon() * sat_vapor_pressure_unchecked(t, c) / p;
    let h_sat = c.L_v * qs + c.c_p * t + c.g * z;
    let kappa = 1.0 + c.L_v * c.L_v * qs / (c.R_v * c.c_p * t * t);
    c.g * (h_par - h_sat) / (kappa * c.c_p * t)
}

/// Plume buoyancy profile, m/s².
pub fn plume_buoyancy(col: &Column, c: &Constants) -> Result<Vec<f64>> {
    let z = geopotential_height(col, c)?;
    let h_par = parcel_mse(col.q[0], col.t[0], c);
    col.t
        .iter()
        .zip(&col.p)
        .zip(&z)
        .map(|((&t, &p), &z)| {
            check_temperature(t)?;
            Ok(buoyancy_at_level(h_par, t, p, z, c))
        })
        .collect()
}

/// Temperature below the near-surface value: `T[0] - T[k]`.
pub fn t_from_ns(t: &[f64]) -> Result<Vec<f64>> {
    let t_ns = *t.first().ok_or_else(|| Error::invalid("empty temperature profile"))?;
    Ok(t.iter().map(|tk| t_ns - tk).collect())
}

/// Latent heat flux scaled by near-surface humidity, kg m⁻² s⁻¹.
pub fn lhf_rescale_q(lhf: f64, q_ns: f64, c: &Constants) -> Result<f64> {
    if !lhf.is_finite() || !q_ns.is_finite() {
        return Err(Error::invalid("non-finite latent heat flux or humidity"));
    }
    Ok(lhf / (c.L_v * q_ns.max(c.eps_q)))
}

/// Latent heat flux scaled by the near-surface saturation deficit, kg m⁻² s⁻¹.
pub fn lhf_rescale_deltaq(lhf: f64, t_ns: f64, q_ns: f64, p_ns: f64, c: &Constants) -> Result<f64> {
    if !lhf.is_finite() || !q_ns.is_finite() {
        return Err(Error::invalid("non-finite latent heat flux or humidity"));
    }
    let deficit = q_sat(t_ns, p_ns, c)? - q_ns;
    Ok(lhf / (c.L_v * deficit.max(c.eps_q)))
}

/// Layer interfaces for mass weighting: surface pressure, midpoints between
/// adjacent levels, and half the top-level pressure.
pub fn layer_interfaces(p: &[f64], p_s: f64) -> Result<Vec<f64>> {
    check_pressure_levels(p)?;
    let n = p.len();
    let mut out = Vec::with_capacity(n + 1);
    out.push(p_s);
    out.extend(p.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(0.5 * p[n - 1]);
    if out.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("surface pressure must exceed the lowest level"));
    }
    Ok(out)
}

/// Mass-weighted layer integral of a tendency: `coeff * tendency * dp / g`, W/m².
pub fn to_energy_flux(tendency: &[f64], p_interfaces: &[f64], coeff: f64, c: &Constants) -> Result<Vec<f64>> {
    if p_interfaces.len() != tendency.len() + 1 {
        return Err(Error::invalid(format!(
            "{} interfaces for {} layers",
            p_interfaces.len(),
            tendency.len()
        )));
    }
    tendency
        .iter()
        .zip(p_interfaces.windows(2))
        .map(|(&x, w)| {
            let dp = w[0] - w[1];
            if !(dp > 0.0) {
                return Err(Error::invalid("pressure interfaces must strictly decrease"));
            }
            Ok(coeff * x * dp / c.g)
        })
        .collect()
}
