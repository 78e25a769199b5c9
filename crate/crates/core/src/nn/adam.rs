use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let m: Vec<Matrix> = params
            .iter()
            .map(|(_, p)| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Matrix {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Matrix {
        &self.v[i]
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Matrix]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.value(i).shape() || g.shape() != self.m[i].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: params.value(i).shape(),
                    rhs: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", params.name(i))));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            let p = params.value_mut(i).as_mut_slice();
            for j in 0..p.len() {
                let gj = g.as_slice()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Re-shapes the moments after the parameter set grew new columns (or
    /// new parameters); added entries start at zero.
    pub fn resize_to(&mut self, params: &ParamSet) {
        let resize = |old: &Matrix, rows: usize, cols: usize| {
            let mut out = Matrix::zeros(rows, cols);
            for r in 0..old.rows().min(rows) {
                for c in 0..old.cols().min(cols) {
                    out.set(r, c, old.get(r, c));
                }
            }
            out
        };
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (i, (_, p)) in params.iter().enumerate() {
            let (rows, cols) = p.shape();
            match (self.m.get(i), self.v.get(i)) {
                (Some(mi), Some(vi)) => {
                    m.push(resize(mi, rows, cols));
                    v.push(resize(vi, rows, cols));
                }
                _ => {
                    m.push(Matrix::zeros(rows, cols));
                    v.push(Matrix::zeros(rows, cols));
                }
            }
        }
        self.m = m;
        self.v = v;
    }
}
