//! Distribution diagnostics: support normalisation, histogram PDFs on `[0, 1]`,
//! PDF distances, empirical CDFs and quantile mapping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 100;

/// Density floor applied before taking logarithms.
pub const PDF_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub value: f64,
    pub clamped: bool,
}

/// Maps `x` onto `[0, 1]` using cross-climate extremes. Values outside the
/// extremes are clamped and flagged.
pub fn normalize_support(x: f64, min_cl: f64, max_cl: f64) -> Result<Normalized> {
    if !(max_cl > min_cl) || !min_cl.is_finite() || !max_cl.is_finite() {
        return Err(Error::DegenerateRange { min: min_cl, max: max_cl });
    }
    if !x.is_finite() {
        return Err(Error::invalid("non-finite sample"));
    }
    let v = (x - min_cl) / (max_cl - min_cl);
    Ok(Normalized {
        value: v.clamp(0.0, 1.0),
        clamped: !(0.0..=1.0).contains(&v),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPdf {
    pub bin_edges: Vec<f64>,
    pub density: Vec<f64>,
    pub support_min: f64,
    pub support_max: f64,
    /// Samples that fell outside `[support_min, support_max]`.
    pub n_clamped: usize,
}

impl NormalizedPdf {
    pub fn n_bins(&self) -> usize {
        self.density.len()
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.bin_edges.windows(2).map(|w| w[1] - w[0])
    }

    pub fn integral(&self) -> f64 {
        self.density.iter().zip(self.widths()).map(|(d, w)| d * w).sum()
    }

    fn same_grid(&self, other: &NormalizedPdf) -> bool {
        self.bin_edges.len() == other.bin_edges.len()
            && self
                .bin_edges
                .iter()
                .zip(&other.bin_edges)
                .all(|(a, b)| (a - b).abs() <= 1e-12)
    }
}

/// Histogram estimate of the PDF of `samples` on uniform bins of the
/// normalised support, scaled to integrate to one.
pub fn histogram_pdf(samples: &[f64], n_bins: usize, min_cl: f64, max_cl: f64) -> Result<NormalizedPdf> {
    if samples.len() < 2 {
        return Err(Error::invalid("histogram needs at least two samples"));
    }
    if n_bins < 2 {
        return Err(Error::invalid("histogram needs at least two bins"));
    }
    let mut counts = vec![0usize; n_bins];
    let mut n_clamped = 0;
    for &x in samples {
        let n = normalize_support(x, min_cl, max_cl)?;
        n_clamped += n.clamped as usize;
        let idx = ((n.value * n_bins as f64) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let width = 1.0 / n_bins as f64;
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 * width).collect();
    let total = samples.len() as f64;
    let density = counts.iter().map(|&c| c as f64 / (total * width)).collect();
    Ok(NormalizedPdf {
        bin_edges,
        density,
        support_min: min_cl,
        support_max: max_cl,
        n_clamped,
    })
}

/// Hellinger distance, in `[0, 1]`.
pub fn hellinger(p: &NormalizedPdf, q: &NormalizedPdf) -> Result<f64> {
    if !p.same_grid(q) {
        return Err(Error::GridMismatch);
    }
    let s: f64 = p
        .density
        .iter()
        .zip(&q.density)
        .zip(p.widths())
        .map(|((a, b), w)| {
            let d = a.sqrt() - b.sqrt();
            d * d * w
        })
        .sum();
    Ok((0.5 * s).sqrt().min(1.0))
}

/// Kullback-Leibler divergence of `q` from `p` with densities floored at [`PDF_FLOOR`].
pub fn kl_divergence(p: &NormalizedPdf, q: &NormalizedPdf) -> Result<f64> {
    if !p.same_grid(q) {
        return Err(Error::GridMismatch);
    }
    Ok(p.density
        .iter()
        .zip(&q.density)
        .zip(p.widths())
        .map(|((a, b), w)| {
            let a = a.max(PDF_FLOOR);
            let b = b.max(PDF_FLOOR);
            a * (a / b).ln() * w
        })
        .sum())
}

/// Symmetrised KL distance `sqrt((KL(p,q) + KL(q,p)) / 2)`.
///
/// This is the "Jensen-Shannon" distance of the climate-invariance
/// literature, not the mixture-based Jensen-Shannon divergence.
pub fn jensen_shannon(p: &NormalizedPdf, q: &NormalizedPdf) -> Result<f64> {
    let s = 0.5 * (kl_divergence(p, q)? + kl_divergence(q, p)?);
    Ok(s.max(0.0).sqrt())
}

/// All distances between two sample sets on a shared support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub hellinger: f64,
    pub kl_pq: f64,
    pub kl_qp: f64,
    pub js: f64,
    pub support_min: f64,
    pub support_max: f64,
    pub n_bins: usize,
}

/// Histograms both sample sets over their joint extremes and compares them.
pub fn compare_samples(
    a: &[f64],
    b: &[f64],
    n_bins: usize,
) -> Result<(DistanceReport, NormalizedPdf, NormalizedPdf)> {
    let (lo, hi) = a
        .iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let p = histogram_pdf(a, n_bins, lo, hi)?;
    let q = histogram_pdf(b, n_bins, lo, hi)?;
    let report = DistanceReport {
        hellinger: hellinger(&p, &q)?,
        kl_pq: kl_divergence(&p, &q)?,
        kl_qp: kl_divergence(&q, &p)?,
        js: jensen_shannon(&p, &q)?,
        support_min: lo,
        support_max: hi,
        n_bins,
    };
    Ok((report, p, q))
}

/// Empirical CDF with linear interpolation between order statistics placed
/// at plotting positions `(i - 1/2) / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted_values: Vec<f64>,
    n: usize,
}

impl EmpiricalCdf {
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("CDF needs at least two samples"));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite sample in CDF fit"));
        }
        let mut sorted_values = samples.to_vec();
        sorted_values.sort_by(f64::total_cmp);
        Ok(Self {
            n: sorted_values.len(),
            sorted_values,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn min(&self) -> f64 {
        self.sorted_values[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted_values[self.n - 1]
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted_values
    }

    fn position(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n as f64
    }

    /// Quantile of `y`; 0 below the sample minimum, 1 above the maximum.
    pub fn eval(&self, y: f64) -> f64 {
        let xs = &self.sorted_values;
        if y < xs[0] {
            return 0.0;
        }
        if y > xs[self.n - 1] {
            return 1.0;
        }
        // First index with xs[i] > y; the segment is [i-1, i].
        let hi = xs.partition_point(|&x| x <= y);
        if hi == 0 {
            return self.position(0);
        }
        if hi >= self.n {
            return self.position(self.n - 1);
        }
        let lo = hi - 1;
        let t = (y - xs[lo]) / (xs[hi] - xs[lo]);
        self.position(lo) + t * (self.position(hi) - self.position(lo))
    }

    /// Inverse CDF; clamps to the sample extremes outside the plotting positions.
    pub fn invert(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid(format!("quantile {u} outside [0, 1]")));
        }
        Ok(self.invert_unchecked(u))
    }

    fn invert_unchecked(&self, u: f64) -> f64 {
        let xs = &self.sorted_values;
        let s = u * self.n as f64 - 0.5;
        if s <= 0.0 {
            return xs[0];
        }
        let lo = s.floor() as usize;
        if lo >= self.n - 1 {
            return xs[self.n - 1];
        }
        let t = s - lo as f64;
        xs[lo] + t * (xs[lo + 1] - xs[lo])
    }
}

pub fn fit_cdf(samples: &[f64]) -> Result<EmpiricalCdf> {
    EmpiricalCdf::fit(samples)
}

/// `target⁻¹(source(y))`.
pub fn quantile_map(y: f64, source: &EmpiricalCdf, target: &EmpiricalCdf) -> f64 {
    target.invert_unchecked(source.eval(y).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pdf(density: Vec<f64>) -> NormalizedPdf {
        let n = density.len();
        let s: f64 = density.iter().sum::<f64>() / n as f64;
        NormalizedPdf {
            bin_edges: (0..=n).map(|i| i as f64 / n as f64).collect(),
            density: density.into_iter().map(|d| d / s).collect(),
            support_min: 0.0,
            support_max: 1.0,
            n_clamped: 0,
        }
    }

    #[test]
    fn support_normalisation() {
        assert_eq!(normalize_support(2.0, 2.0, 6.0).unwrap().value, 0.0);
        assert_eq!(normalize_support(6.0, 2.0, 6.0).unwrap().value, 1.0);
        assert_eq!(normalize_support(4.0, 2.0, 6.0).unwrap().value, 0.5);
        let c = normalize_support(7.0, 2.0, 6.0).unwrap();
        assert!(c.clamped && c.value == 1.0);
        assert!(matches!(normalize_support(1.0, 3.0, 3.0), Err(Error::DegenerateRange { .. })));
    }

    #[test]
    fn histogram_cases() {
        let h = histogram_pdf(&[3.0; 10], 10, 0.0, 10.0).unwrap();
        assert_eq!(h.density.iter().filter(|d| **d > 0.0).count(), 1);
        assert_relative_eq!(h.integral(), 1.0, epsilon = 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..200_000).map(|_| rng.gen_range(-3.0..5.0)).collect();
        let h = histogram_pdf(&xs, 2, -3.0, 5.0).unwrap();
        for d in &h.density {
            assert!((d - 1.0).abs() < 0.05);
        }
        assert!(histogram_pdf(&[], 10, 0.0, 1.0).is_err());
        assert!(histogram_pdf(&[1.0, 2.0], 1, 0.0, 3.0).is_err());
        let h = histogram_pdf(&[-1.0, 0.5, 2.0], 4, 0.0, 1.0).unwrap();
        assert_eq!(h.n_clamped, 2);
    }

    #[test]
    fn hellinger_bounds() {
        let p = pdf(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(hellinger(&p, &p).unwrap(), 0.0);
        let a = pdf(vec![1.0, 1.0, 0.0, 0.0]);
        let b = pdf(vec![0.0, 0.0, 1.0, 1.0]);
        assert_relative_eq!(hellinger(&a, &b).unwrap(), 1.0, epsilon = 1e-9);
        let other = pdf(vec![1.0; 5]);
        assert!(matches!(hellinger(&p, &other), Err(Error::GridMismatch)));
        assert!(matches!(kl_divergence(&p, &other), Err(Error::GridMismatch)));
    }

    #[test]
    fn kl_and_js_match_direct_summation() {
        // Hand-summed: dx = 1/4, p = [0.4, 1.2, 1.6, 0.8], q = [1, 1, 1, 1].
        let p = pdf(vec![1.0, 3.0, 4.0, 2.0]);
        let q = pdf(vec![1.0, 1.0, 1.0, 1.0]);
        let ps = [0.4, 1.2, 1.6, 0.8];
        let kl_pq: f64 = ps.iter().map(|a: &f64| a * a.ln() * 0.25).sum();
        let kl_qp: f64 = ps.iter().map(|a: &f64| -(a.ln()) * 0.25).sum();
        assert_relative_eq!(kl_divergence(&p, &q).unwrap(), kl_pq, max_relative = 1e-12);
        assert_relative_eq!(kl_divergence(&q, &p).unwrap(), kl_qp, max_relative = 1e-12);
        assert_relative_eq!(
            jensen_shannon(&p, &q).unwrap(),
            (0.5 * (kl_pq + kl_qp)).sqrt(),
            max_relative = 1e-12
        );
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert_eq!(jensen_shannon(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn cdf_plotting_positions() {
        let cdf = fit_cdf(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_relative_eq!(cdf.eval(2.5), 0.5, epsilon = 1e-12);
        assert_relative_eq!(cdf.eval(1.0), 0.125, epsilon = 1e-12);
        assert_eq!(cdf.eval(0.0), 0.0);
        assert_eq!(cdf.eval(5.0), 1.0);
        assert_eq!(cdf.invert(0.0).unwrap(), 1.0);
        assert_eq!(cdf.invert(1.0).unwrap(), 4.0);
        assert!(cdf.invert(1.5).is_err());
        assert!(fit_cdf(&[1.0]).is_err());
    }

    #[test]
    fn quantile_map_recovers_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>() * 10.0).collect();
        let tgt: Vec<f64> = src.iter().map(|x| x + 4.0).collect();
        let (s, t) = (fit_cdf(&src).unwrap(), fit_cdf(&tgt).unwrap());
        for i in 1..100 {
            let y = s.min() + (s.max() - s.min()) * i as f64 / 100.0;
            assert!((quantile_map(y, &s, &t) - (y + 4.0)).abs() < 1e-9);
            assert!((quantile_map(y, &s, &s) - y).abs() < 1e-9);
        }
    }

    fn histogram_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..5.0, 8).prop_filter("non-empty", |v| v.iter().sum::<f64>() > 0.1)
    }

    proptest! {
        #[test]
        fn distances_are_well_behaved(a in histogram_strategy(), b in histogram_strategy()) {
            let (p, q) = (pdf(a), pdf(b));
            let h = hellinger(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            prop_assert!((h - hellinger(&q, &p).unwrap()).abs() < 1e-12);
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-9);
            prop_assert!((jensen_shannon(&p, &q).unwrap() - jensen_shannon(&q, &p).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn histogram_always_normalised(xs in prop::collection::vec(-1e3f64..1e3, 2..200), bins in 2usize..64) {
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
            let h = histogram_pdf(&xs, bins, lo, hi).unwrap();
            prop_assert!((h.integral() - 1.0).abs() < 1e-9);
            prop_assert!(h.density.iter().all(|d| *d >= 0.0));
            prop_assert_eq!(h.bin_edges[0], 0.0);
            prop_assert!((h.bin_edges[bins] - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cdf_round_trip_and_monotone(xs in prop::collection::btree_set(-1_000_000i64..1_000_000, 3..100), f in 0.01f64..0.99) {
            let xs: Vec<f64> = xs.into_iter().map(|v| v as f64 / 100.0).collect();
            let cdf = fit_cdf(&xs).unwrap();
            let y = cdf.min() + f * (cdf.max() - cdf.min());
            prop_assert!((cdf.invert(cdf.eval(y)).unwrap() - y).abs() < 1e-9 * (1.0 + y.abs()));
            let y2 = y + 0.01 * (cdf.max() - cdf.min());
            prop_assert!(quantile_map(y2, &cdf, &cdf) >= quantile_map(y, &cdf, &cdf));
        }
    }
}
