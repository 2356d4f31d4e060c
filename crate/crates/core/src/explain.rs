//! Attribution: Kernel SHAP against a single background point, the signed
//! SHAP feature matrix, and central-difference Jacobians.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Regressor;
use crate::rng;

pub const DEFAULT_COALITIONS: usize = 4096;

/// Anything that maps a batch of inputs to a batch of outputs.
pub trait Model: Sync {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// Signs of hidden pre-activations at each row, if the model is piecewise linear.
    fn activation_pattern(&self, _x: ArrayView2<f64>) -> Option<Result<Vec<bool>>> {
        None
    }
}

impl Model for Regressor {
    fn n_inputs(&self) -> usize {
        Regressor::n_inputs(self)
    }

    fn n_outputs(&self) -> usize {
        Regressor::n_outputs(self)
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Regressor::predict(self, x)
    }

    fn activation_pattern(&self, x: ArrayView2<f64>) -> Option<Result<Vec<bool>>> {
        match self {
            Regressor::Mlr(_) => None,
            Regressor::Nn(n) => Some(n.activation_pattern(x)),
        }
    }
}

/// Shapley estimates for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    /// `inputs × outputs`.
    pub phi: Array2<f64>,
    /// Model output at the background point.
    pub base: Array1<f64>,
    /// Model output at the explained sample.
    pub fx: Array1<f64>,
    pub n_coalitions: usize,
}

fn kernel_weight(d: usize, s: usize) -> f64 {
    // (d-1) / (C(d,s) s (d-s)), with the binomial in log space.
    let ln_binom = (1..=s).map(|k| ((d - s + k) as f64 / k as f64).ln()).sum::<f64>();
    (d - 1) as f64 / (s * (d - s)) as f64 * (-ln_binom).exp()
}

/// Coalition masks and their regression weights.
fn coalitions<R: Rng>(d: usize, budget: usize, rng: &mut R) -> (Vec<Vec<bool>>, Vec<f64>) {
    let exhaustive = d < 63 && (1u64 << d) - 2 <= budget as u64;
    if exhaustive {
        let mut masks = Vec::new();
        let mut weights = Vec::new();
        for bits in 1..(1u64 << d) - 1 {
            let m: Vec<bool> = (0..d).map(|i| bits >> i & 1 == 1).collect();
            let s = bits.count_ones() as usize;
            masks.push(m);
            weights.push(kernel_weight(d, s));
        }
        return (masks, weights);
    }
    // Sizes drawn in proportion to their total kernel mass, members uniformly,
    // each draw paired with its complement.
    let size_w: Vec<f64> = (1..d).map(|s| 1.0 / (s * (d - s)) as f64).collect();
    let total: f64 = size_w.iter().sum();
    let mut masks = Vec::with_capacity(budget);
    for _ in 0..budget / 2 {
        let mut u = rng.gen::<f64>() * total;
        let mut s = d - 1;
        for (k, w) in size_w.iter().enumerate() {
            if u < *w {
                s = k + 1;
                break;
            }
            u -= w;
        }
        let mut m = vec![false; d];
        for i in sample(rng, d, s) {
            m[i] = true;
        }
        let comp: Vec<bool> = m.iter().map(|b| !b).collect();
        masks.push(m);
        masks.push(comp);
    }
    let n = masks.len();
    (masks, vec![1.0; n])
}

/// Kernel SHAP for one sample: features outside a coalition take their
/// background value, and the weighted least-squares fit is constrained so
/// attributions sum to `f(x) - f(background)` for every output.
pub fn kernel_shap<M: Model + ?Sized, R: Rng>(
    model: &M,
    x: ArrayView1<f64>,
    background: ArrayView1<f64>,
    n_coalitions: usize,
    rng: &mut R,
) -> Result<Attribution> {
    let d = model.n_inputs();
    if x.len() != d || background.len() != d {
        return Err(Error::Shape(format!("model takes {d} inputs, got {} and {}", x.len(), background.len())));
    }
    if n_coalitions < 2 * d {
        return Err(Error::invalid(format!("{n_coalitions} coalitions is below 2 x {d} inputs")));
    }
    let ends = ndarray::stack(Axis(0), &[background.view(), x.view()]).expect("same length rows");
    let ends = model.predict(ends.view())?;
    let base = ends.row(0).to_owned();
    let fx = ends.row(1).to_owned();
    let delta = &fx - &base;
    if d == 1 {
        return Ok(Attribution {
            phi: delta.insert_axis(Axis(0)),
            base,
            fx,
            n_coalitions: 0,
        });
    }
    let (masks, weights) = coalitions(d, n_coalitions, rng);
    let n = masks.len();
    let mut inputs = Array2::zeros((n, d));
    for (r, mask) in masks.iter().enumerate() {
        for i in 0..d {
            inputs[[r, i]] = if mask[i] { x[i] } else { background[i] };
        }
    }
    let vals = model.predict(inputs.view())?;

    let phi = constrained_wls(&masks, &weights, &vals, &base, &delta)?;
    Ok(Attribution {
        phi,
        base,
        fx,
        n_coalitions: n,
    })
}

/// Weighted least squares for `vals - base ≈ masks · phi` subject to
/// `sum(phi) = delta`, solved by substituting out the last feature.
fn constrained_wls(
    masks: &[Vec<bool>],
    weights: &[f64],
    vals: &Array2<f64>,
    base: &Array1<f64>,
    delta: &Array1<f64>,
) -> Result<Array2<f64>> {
    let d = masks[0].len();
    let m = base.len();
    let n = masks.len();
    let k = d - 1;
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut atb = DMatrix::<f64>::zeros(k, m);
    let mut z = vec![0.0; k];
    for (r, mask) in masks.iter().enumerate() {
        let zl = if mask[k] { 1.0 } else { 0.0 };
        for i in 0..k {
            z[i] = (if mask[i] { 1.0 } else { 0.0 }) - zl;
        }
        let w = weights[r];
        for i in 0..k {
            if z[i] == 0.0 {
                continue;
            }
            let wi = w * z[i];
            for j in i..k {
                ata[(i, j)] += wi * z[j];
            }
            for o in 0..m {
                let y = vals[[r, o]] - base[o] - zl * delta[o];
                atb[(i, o)] += wi * y;
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            ata[(i, j)] = ata[(j, i)];
        }
    }
    let max_diag = (0..k).map(|i| ata[(i, i)]).fold(0.0f64, f64::max);
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::SingularSystem(format!("{n} coalitions for {d} inputs")))?;
    let l = chol.l();
    let min_pivot = (0..k).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-12 * max_diag) {
        return Err(Error::SingularSystem(format!("{n} coalitions for {d} inputs")));
    }
    let sol = chol.solve(&atb);
    let mut phi = Array2::zeros((d, m));
    for o in 0..m {
        let mut rest = delta[o];
        for i in 0..k {
            phi[[i, o]] = sol[(i, o)];
            rest -= sol[(i, o)];
        }
        phi[[k, o]] = rest;
    }
    Ok(phi)
}

/// Exact Shapley values by enumerating every coalition (small inputs only).
pub fn exact_shapley<M: Model + ?Sized>(model: &M, x: ArrayView1<f64>, background: ArrayView1<f64>) -> Result<Array2<f64>> {
    let d = model.n_inputs();
    if d > 16 {
        return Err(Error::invalid(format!("exact enumeration over {d} inputs")));
    }
    let n = 1usize << d;
    let mut inputs = Array2::zeros((n, d));
    for bits in 0..n {
        for i in 0..d {
            inputs[[bits, i]] = if bits >> i & 1 == 1 { x[i] } else { background[i] };
        }
    }
    let v = model.predict(inputs.view())?;
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let mut phi = Array2::zeros((d, model.n_outputs()));
    for i in 0..d {
        for bits in 0..n {
            if bits >> i & 1 == 1 {
                continue;
            }
            let s = (bits as u64).count_ones() as usize;
            let w = fact(s) * fact(d - s - 1) / fact(d);
            let diff = &v.row(bits | 1 << i) - &v.row(bits);
            phi.row_mut(i).scaled_add(w, &diff);
        }
    }
    Ok(phi)
}

/// Signed average attribution over a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    /// `inputs × outputs`.
    pub m: Array2<f64>,
    pub background: Vec<f64>,
    pub n_explained: usize,
    pub n_coalitions: usize,
}

/// `M_ij = mean over samples of sign(x_i - background_i) * SHAP_ij`.
pub fn feature_matrix<M: Model + ?Sized>(
    model: &M,
    samples: ArrayView2<f64>,
    background: ArrayView1<f64>,
    n_coalitions: usize,
    seed: u64,
) -> Result<FeatureMatrix> {
    if samples.nrows() == 0 {
        return Err(Error::invalid("no samples to explain"));
    }
    let parts: Vec<(Array2<f64>, usize)> = (0..samples.nrows())
        .into_par_iter()
        .map(|s| {
            let x = samples.row(s);
            let a = kernel_shap(model, x, background, n_coalitions, &mut rng::stream(seed, s as u64))?;
            let mut signed = a.phi;
            for (i, mut row) in signed.axis_iter_mut(Axis(0)).enumerate() {
                let sign = match (x[i] - background[i]).partial_cmp(&0.0) {
                    Some(std::cmp::Ordering::Greater) => 1.0,
                    Some(std::cmp::Ordering::Less) => -1.0,
                    _ => 0.0,
                };
                row *= sign;
            }
            Ok((signed, a.n_coalitions))
        })
        .collect::<Result<_>>()?;
    let mut m = Array2::zeros((model.n_inputs(), model.n_outputs()));
    for (p, _) in &parts {
        m += p;
    }
    m /= samples.nrows() as f64;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite attribution"));
    }
    Ok(FeatureMatrix {
        m,
        background: background.to_vec(),
        n_explained: samples.nrows(),
        n_coalitions: parts[0].1,
    })
}

fn level_of(name: &str) -> String {
    match name.rsplit_once('_') {
        Some((_, lvl)) if !lvl.is_empty() && lvl.bytes().all(|b| b.is_ascii_digit()) => lvl.to_string(),
        _ => String::new(),
    }
}

impl FeatureMatrix {
    /// One row per input, one column per output.
    pub fn to_csv(&self, input_names: &[String], output_names: &[String], config_hash: &str) -> Result<String> {
        if input_names.len() != self.m.nrows() || output_names.len() != self.m.ncols() {
            return Err(Error::Shape("names do not match the feature matrix".into()));
        }
        let mut out = String::from("input,input_level");
        for o in output_names {
            let _ = write!(out, ",{o}");
        }
        out.push_str(",config_hash\n");
        for (i, name) in input_names.iter().enumerate() {
            let _ = write!(out, "{name},{}", level_of(name));
            for v in self.m.row(i) {
                let _ = write!(out, ",{v:.9e}");
            }
            let _ = writeln!(out, ",{config_hash}");
        }
        Ok(out)
    }
}

/// Finite-difference Jacobian, `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub j: Array2<f64>,
    /// Inputs whose stencil crosses an activation kink even after step halving.
    pub kinked: Vec<bool>,
}

const KINK_RETRIES: usize = 4;

/// Central differences around `x`. For piecewise-linear models the step is
/// halved until no hidden pre-activation changes sign inside the stencil;
/// columns that still cross a kink are flagged.
pub fn jacobian_fd<M: Model + ?Sized>(model: &M, x: ArrayView1<f64>, step: f64) -> Result<Jacobian> {
    let d = model.n_inputs();
    if x.len() != d {
        return Err(Error::Shape(format!("model takes {d} inputs, got {}", x.len())));
    }
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let center = x.to_owned().insert_axis(Axis(0));
    let pattern = match model.activation_pattern(center.view()) {
        Some(p) => Some(p?),
        None => None,
    };
    let mut j = Array2::zeros((model.n_outputs(), d));
    let mut kinked = vec![false; d];
    for i in 0..d {
        let mut h = step;
        for attempt in 0..=KINK_RETRIES {
            let mut pm = Array2::zeros((2, d));
            pm.row_mut(0).assign(&x);
            pm.row_mut(1).assign(&x);
            pm[[0, i]] += h;
            pm[[1, i]] -= h;
            let crosses = match (&pattern, model.activation_pattern(pm.view())) {
                (Some(p), Some(q)) => {
                    let q = q?;
                    let n = p.len();
                    q[..n] != p[..] || q[n..] != p[..]
                }
                _ => false,
            };
            if !crosses || attempt == KINK_RETRIES {
                let y = model.predict(pm.view())?;
                let col = (&y.row(0) - &y.row(1)) / (2.0 * h);
                j.column_mut(i).assign(&col);
                kinked[i] = crosses;
                break;
            }
            h /= 2.0;
        }
    }
    Ok(Jacobian { j, kinked })
}

/// Mean Jacobian over a set of samples.
pub fn mean_jacobian<M: Model + ?Sized>(model: &M, samples: ArrayView2<f64>, step: f64) -> Result<Array2<f64>> {
    if samples.nrows() == 0 {
        return Err(Error::invalid("no samples"));
    }
    let js: Vec<Array2<f64>> = (0..samples.nrows())
        .into_par_iter()
        .map(|r| jacobian_fd(model, samples.row(r), step).map(|j| j.j))
        .collect::<Result<_>>()?;
    let mut acc = Array2::zeros(js[0].dim());
    for j in &js {
        acc += j;
    }
    Ok(acc / samples.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, MlrParams, Network};
    use ndarray::{arr1, Array1};
    use rand_distr::{Distribution, StandardNormal};

    struct Constant(usize, usize);

    impl Model for Constant {
        fn n_inputs(&self) -> usize {
            self.0
        }
        fn n_outputs(&self) -> usize {
            self.1
        }
        fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
            Ok(Array2::from_elem((x.nrows(), self.1), 3.5))
        }
    }

    /// Smooth nonlinear toy: y0 = sin(x0) x1 + x2², y1 = exp(0.3 x0) - x3 x4.
    struct Smooth;

    impl Model for Smooth {
        fn n_inputs(&self) -> usize {
            5
        }
        fn n_outputs(&self) -> usize {
            2
        }
        fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
            Ok(Array2::from_shape_fn((x.nrows(), 2), |(r, o)| {
                let v = x.row(r);
                if o == 0 {
                    v[0].sin() * v[1] + v[2] * v[2]
                } else {
                    (0.3 * v[0]).exp() - v[3] * v[4]
                }
            }))
        }
    }

    fn randn(n: usize, seed: u64) -> Array1<f64> {
        let mut r = rng::stream(seed, 1);
        Array1::from_shape_fn(n, |_| StandardNormal.sample(&mut r))
    }

    fn random_net(d: usize, m: usize, seed: u64) -> Regressor {
        let arch = Architecture::new(d, m, vec![12, 12]).with_batch_norm(true);
        Regressor::Nn(Network::new(arch, &mut rng::stream(seed, 0)).unwrap())
    }

    #[test]
    fn constant_model_gets_zero_attribution() {
        let a = kernel_shap(&Constant(6, 2), randn(6, 1).view(), randn(6, 2).view(), 64, &mut rng::stream(0, 0)).unwrap();
        assert!(a.phi.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn enumeration_matches_exact_shapley() {
        for d in [2, 5, 8, 10] {
            let net = random_net(d, 3, d as u64);
            let (x, bg) = (randn(d, 10 + d as u64), randn(d, 20 + d as u64));
            let exact = exact_shapley(&net, x.view(), bg.view()).unwrap();
            let a = kernel_shap(&net, x.view(), bg.view(), 1 << d, &mut rng::stream(0, 0)).unwrap();
            let err = (&a.phi - &exact).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err <= 1e-6 * scale.max(1.0), "d={d}: {err}");
        }
        let exact = exact_shapley(&Smooth, arr1(&[0.4, -1.0, 2.0, 0.5, 1.5]).view(), Array1::zeros(5).view()).unwrap();
        let a = kernel_shap(&Smooth, arr1(&[0.4, -1.0, 2.0, 0.5, 1.5]).view(), Array1::zeros(5).view(), 30, &mut rng::stream(0, 0)).unwrap();
        assert!((&a.phi - &exact).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn linear_model_attribution_is_weight_times_deviation() {
        let d = 9;
        let mlr = MlrParams::new(d, 4, &mut rng::stream(5, 0));
        let model = Regressor::Mlr(mlr.clone());
        let (x, bg) = (randn(d, 1), randn(d, 2));
        // Sampled coalitions (budget below 2^d - 2) still recover the exact values.
        let a = kernel_shap(&model, x.view(), bg.view(), 100, &mut rng::stream(3, 0)).unwrap();
        for i in 0..d {
            for j in 0..4 {
                let want = mlr.a[[j, i]] * (x[i] - bg[i]);
                assert!((a.phi[[i, j]] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn local_accuracy_on_random_network() {
        let d = 64;
        let net = random_net(d, 8, 3);
        let (x, bg) = (randn(d, 4), randn(d, 5));
        let a = kernel_shap(&net, x.view(), bg.view(), 1024, &mut rng::stream(1, 0)).unwrap();
        for o in 0..8 {
            let sum: f64 = a.phi.column(o).sum();
            let want = a.fx[o] - a.base[o];
            assert!((sum - want).abs() <= 1e-6 * want.abs().max(1e-12) + 1e-12, "{sum} vs {want}");
        }
    }

    #[test]
    fn too_few_coalitions_is_rejected_and_duplicates_are_singular() {
        let net = random_net(6, 2, 1);
        let (x, bg) = (randn(6, 1), randn(6, 2));
        assert!(kernel_shap(&net, x.view(), bg.view(), 11, &mut rng::stream(0, 0)).is_err());
        // A feature equal to the background leaves the system solvable.
        assert!(kernel_shap(&net, bg.view(), bg.view(), 12, &mut rng::stream(0, 0)).is_ok());
    }

    #[test]
    fn singular_system_is_reported() {
        // Twelve coalitions cannot pin down 39 unknowns.
        let d = 40;
        let net = random_net(d, 2, 1);
        let x = randn(d, 1);
        let few = coalitions(d, 12, &mut rng::stream(0, 0));
        assert_eq!(few.0.len(), 12);
        let mut inputs = Array2::zeros((12, d));
        for (r, m) in few.0.iter().enumerate() {
            for i in 0..d {
                inputs[[r, i]] = if m[i] { x[i] } else { 0.0 };
            }
        }
        let vals = Model::predict(&net, inputs.view()).unwrap();
        let base = Array1::zeros(2);
        let r = constrained_wls(&few.0, &few.1, &vals, &base, &Array1::ones(2));
        assert!(matches!(r, Err(Error::SingularSystem(_))));
    }

    #[test]
    fn mlr_feature_matrix_is_weight_times_mean_abs_deviation() {
        let d = 12;
        let mlr = MlrParams::new(d, 3, &mut rng::stream(8, 0));
        let model = Regressor::Mlr(mlr.clone());
        let samples = Array2::from_shape_fn((50, d), |(s, i)| ((s * 31 + i * 7) % 17) as f64 / 8.0 - 1.0);
        let bg = samples.mean_axis(Axis(0)).unwrap();
        let fm = feature_matrix(&model, samples.view(), bg.view(), 256, 1).unwrap();
        for i in 0..d {
            let mean_abs = samples.column(i).iter().map(|v| (v - bg[i]).abs()).sum::<f64>() / 50.0;
            for j in 0..3 {
                let want = mlr.a[[j, i]] * mean_abs;
                assert!((fm.m[[i, j]] - want).abs() <= 1e-9 + 1e-9 * want.abs());
            }
        }
        // Flipping every deviation leaves a linear model's matrix unchanged.
        let flipped = samples.map_axis(Axis(1), |r| r.to_owned());
        let mirrored = Array2::from_shape_fn((50, d), |(s, i)| 2.0 * bg[i] - flipped[s][i]);
        let fm2 = feature_matrix(&model, mirrored.view(), bg.view(), 256, 1).unwrap();
        assert!((&fm.m - &fm2.m).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn sample_at_background_contributes_nothing() {
        let net = random_net(7, 2, 2);
        let bg = randn(7, 3);
        let fm = feature_matrix(&net, bg.view().insert_axis(Axis(0)), bg.view(), 64, 0).unwrap();
        assert!(fm.m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn feature_matrix_is_seed_deterministic() {
        let net = random_net(20, 3, 4);
        let s = Array2::from_shape_fn((6, 20), |(a, b)| ((a * 5 + b * 3) % 7) as f64 - 3.0);
        let bg = s.mean_axis(Axis(0)).unwrap();
        let a = feature_matrix(&net, s.view(), bg.view(), 300, 9).unwrap();
        let b = feature_matrix(&net, s.view(), bg.view(), 300, 9).unwrap();
        assert_eq!(a, b);
        let names_in: Vec<String> = (0..20).map(|i| format!("RH_{i:02}")).collect();
        let names_out: Vec<String> = (0..3).map(|i| format!("heating_{i:02}")).collect();
        let csv = a.to_csv(&names_in, &names_out, "h").unwrap();
        assert_eq!(csv.lines().count(), 21);
        assert!(csv.lines().nth(1).unwrap().starts_with("RH_00,00,"));
    }

    #[test]
    fn mlr_jacobian_is_the_weight_matrix() {
        let mlr = MlrParams::new(6, 4, &mut rng::stream(2, 0));
        let j = jacobian_fd(&Regressor::Mlr(mlr.clone()), randn(6, 3).view(), 1e-3).unwrap();
        assert!((&j.j - &mlr.a).iter().all(|v| v.abs() < 1e-9));
        assert!(j.kinked.iter().all(|k| !k));
    }

    #[test]
    fn halving_the_step_cuts_error_fourfold() {
        let x = arr1(&[0.7, -0.4, 1.1, 0.3, -0.8]);
        let exact = [[(0.7f64).cos() * -0.4, (0.7f64).sin(), 2.2, 0.0, 0.0], [0.3 * (0.21f64).exp(), 0.0, 0.0, 0.8, -0.3]];
        let err = |h: f64| {
            let j = jacobian_fd(&Smooth, x.view(), h).unwrap();
            let mut e = 0.0f64;
            for o in 0..2 {
                for i in 0..5 {
                    e = e.max((j.j[[o, i]] - exact[o][i]).abs());
                }
            }
            e
        };
        let ratio = err(0.1) / err(0.05);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn kinks_shrink_the_step_or_get_flagged() {
        let net = random_net(5, 2, 6);
        let x = randn(5, 7);
        let j = jacobian_fd(&net, x.view(), 1e-4).unwrap();
        let coarse = jacobian_fd(&net, x.view(), 50.0).unwrap();
        assert!(coarse.kinked.iter().any(|k| *k));
        // Unflagged columns agree with a smaller step.
        let fine = jacobian_fd(&net, x.view(), 1e-6).unwrap();
        for i in 0..5 {
            if !j.kinked[i] {
                for o in 0..2 {
                    assert!((j.j[[o, i]] - fine.j[[o, i]]).abs() < 1e-6);
                }
            }
        }
    }
}
