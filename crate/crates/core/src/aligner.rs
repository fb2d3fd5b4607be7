//! The single trainable block: an affine map from graph-embedding space to
//! LM input space.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    /// `d_lm × d_g`.
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Projector {
    /// `W ~ U(±1/√d_g)`, `b = 0`.
    pub fn init(d_g: usize, d_lm: usize, seed: u64) -> Self {
        assert!(d_g > 0 && d_lm > 0, "projector dimensions must be positive");
        let bound = 1.0 / (d_g as f64).sqrt();
        let mut r = rng::seeded(seed);
        let data = (0..d_lm * d_g).map(|_| r.gen_range(-bound..=bound)).collect();
        Self {
            w: Matrix::from_vec(d_lm, d_g, data),
            b: vec![0.0; d_lm],
        }
    }

    pub fn d_g(&self) -> usize {
        self.w.cols()
    }

    pub fn d_lm(&self) -> usize {
        self.w.rows()
    }

    /// Row `i` of the result is `W·h_i + b`.
    pub fn project(&self, nodes: &Matrix) -> Result<Matrix> {
        if nodes.cols() != self.d_g() {
            return Err(Error::arg(format!("node embeddings have dim {}, projector expects {}", nodes.cols(), self.d_g())));
        }
        let mut out = nodes.matmul(self.w.t());
        for r in 0..out.rows() {
            for (x, b) in out.row_mut(r).iter_mut().zip(&self.b) {
                *x += b;
            }
        }
        Ok(out)
    }

    /// Accumulates `∂L/∂W += d_outᵀ·nodes` and `∂L/∂b += Σ d_out` into `grads`.
    pub fn accumulate_grad(&self, nodes: &Matrix, d_out: &Matrix, grads: &mut Projector) {
        crate::linalg::gemm(grads.w.view_mut(), d_out.t(), nodes.view(), 1.0, 1.0);
        for r in 0..d_out.rows() {
            for (g, d) in grads.b.iter_mut().zip(d_out.row(r)) {
                *g += d;
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Matrix::zeros(self.d_lm(), self.d_g()),
            b: vec![0.0; self.d_lm()],
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), &self.b]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), &mut self.b]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn checksum(&self) -> String {
        crate::checksum::tensor_checksum(&[self.d_lm(), self.d_g()], &self.tensors())
    }
}
