//! Multiple linear regression `y = A x + b`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MlrParams {
    /// `n_outputs × n_inputs`.
    pub a: Array2<f64>,
    pub b: Array1<f64>,
}

impl MlrParams {
    pub fn zeros(n_inputs: usize, n_outputs: usize) -> Self {
        Self {
            a: Array2::zeros((n_outputs, n_inputs)),
            b: Array1::zeros(n_outputs),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng>(n_inputs: usize, n_outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (n_inputs + n_outputs) as f64).sqrt();
        Self {
            a: Array2::from_shape_simple_fn((n_outputs, n_inputs), || rng.gen_range(-limit..limit)),
            b: Array1::zeros(n_outputs),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.a.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.n_inputs() {
            return Err(Error::Shape(format!("{} inputs, model expects {}", x.len(), self.n_inputs())));
        }
        Ok(self.a.dot(&x) + &self.b)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::Shape(format!("{} inputs, model expects {}", x.ncols(), self.n_inputs())));
        }
        Ok(x.dot(&self.a.t()) + &self.b)
    }

    /// Gradients `[dA, db]` given `d loss / d output`.
    pub fn backward(&self, x: ArrayView2<f64>, d_out: &Array2<f64>) -> Vec<Vec<f64>> {
        vec![d_out.t().dot(&x).into_raw_vec(), d_out.sum_axis(Axis(0)).into_raw_vec()]
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.a.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.a.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }
}
