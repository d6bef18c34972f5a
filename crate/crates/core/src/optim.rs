//! Adam on a mix of Euclidean and Stiefel-constrained parameters.
//!
//! Stiefel parameters follow the usual Riemannian recipe: project the
//! Euclidean gradient onto the tangent space, run the Adam moment updates on
//! the tangent vectors, retract with a sign-fixed QR, then re-project the
//! first moment onto the tangent space at the new point. Euclidean
//! parameters use Adam with decoupled weight decay. The learning rate is
//! cosine-annealed per epoch.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::net::layers::orthonormal_factor;
use crate::net::{FilterGradient, FilterParams, Gradients, NetworkState, StiefelParam};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_epochs: usize,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64, total_epochs: usize) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_epochs,
        }
    }
}

/// `lr₀·(1 + cos(π·epoch/total))/2`.
pub fn cosine_lr(lr0: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs == 0 {
        return lr0;
    }
    let progress = (epoch.min(total_epochs)) as f64 / total_epochs as f64;
    lr0 * (1.0 + (PI * progress).cos()) / 2.0
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `G − W·sym(WᵀG)`.
pub fn stiefel_project_tangent(w: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.shape() != g.shape() {
        return Err(Error::invalid(format!(
            "tangent projection of a {:?} direction at a {:?} point",
            g.shape(),
            w.shape()
        )));
    }
    Ok(g - w * sym(&(w.transpose() * g)))
}

/// QR retraction of `W + step`, with `diag(R) > 0`.
pub fn stiefel_retract(w: &StiefelParam, step: &DMatrix<f64>) -> Result<StiefelParam> {
    if w.matrix().shape() != step.shape() {
        return Err(Error::invalid(format!(
            "retraction step {:?} does not match point {:?}",
            step.shape(),
            w.matrix().shape()
        )));
    }
    Ok(StiefelParam::from_orthonormal_unchecked(orthonormal_factor(w.matrix() + step)?))
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }
}

/// A parameter handed to [`OptimState::step`].
pub enum ParamMut<'a> {
    Euclidean { name: String, values: &'a mut [f64] },
    Stiefel { name: String, param: &'a mut StiefelParam },
}

pub enum GradRef<'a> {
    Euclidean(&'a [f64]),
    Stiefel(&'a DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Moments>,
}

impl OptimState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Smallest second-moment entry over all parameters.
    pub fn min_second_moment(&self) -> f64 {
        self.moments
            .iter()
            .flat_map(|m| m.second.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        cosine_lr(self.config.lr, epoch, self.config.total_epochs)
    }

    /// One optimizer step over `params`, matched by position with `grads`.
    /// The parameter list must have the same layout on every call.
    pub fn step(&mut self, params: &mut [ParamMut<'_>], grads: &[GradRef<'_>], epoch: usize) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            let (name, values) = match (p, g) {
                (ParamMut::Euclidean { name, .. }, GradRef::Euclidean(g)) => (name, *g),
                (ParamMut::Stiefel { name, .. }, GradRef::Stiefel(g)) => (name, g.as_slice()),
                (ParamMut::Euclidean { name, .. } | ParamMut::Stiefel { name, .. }, _) => {
                    return Err(Error::invalid(format!("gradient kind does not match parameter `{name}`")))
                }
            };
            if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("non-finite gradient ({bad}) for parameter `{name}`")));
            }
        }
        if self.moments.is_empty() {
            self.moments = grads
                .iter()
                .map(|g| match g {
                    GradRef::Euclidean(g) => Moments::zeros(g.len()),
                    GradRef::Stiefel(g) => Moments::zeros(g.len()),
                })
                .collect();
        } else if self.moments.len() != grads.len() {
            return Err(Error::State("optimizer parameter layout changed between steps".into()));
        }

        self.step += 1;
        let c = &self.config;
        let lr = cosine_lr(c.lr, epoch, c.total_epochs);
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);

        for ((p, g), mom) in params.iter_mut().zip(grads).zip(self.moments.iter_mut()) {
            match (p, g) {
                (ParamMut::Euclidean { values, .. }, GradRef::Euclidean(g)) => {
                    if mom.first.len() != values.len() {
                        return Err(Error::State("optimizer parameter layout changed between steps".into()));
                    }
                    for i in 0..values.len() {
                        mom.first[i] = c.beta1 * mom.first[i] + (1.0 - c.beta1) * g[i];
                        mom.second[i] = c.beta2 * mom.second[i] + (1.0 - c.beta2) * g[i] * g[i];
                        let mhat = mom.first[i] / bc1;
                        let vhat = mom.second[i] / bc2;
                        values[i] -= lr * c.weight_decay * values[i];
                        values[i] -= lr * mhat / (vhat.sqrt() + c.eps);
                    }
                }
                (ParamMut::Stiefel { param, .. }, GradRef::Stiefel(g)) => {
                    let w = param.matrix();
                    let (rows, cols) = w.shape();
                    if mom.first.len() != rows * cols {
                        return Err(Error::State("optimizer parameter layout changed between steps".into()));
                    }
                    let rgrad = stiefel_project_tangent(w, g)?;
                    let mut step = DMatrix::zeros(rows, cols);
                    for (i, r) in rgrad.iter().enumerate() {
                        mom.first[i] = c.beta1 * mom.first[i] + (1.0 - c.beta1) * r;
                        mom.second[i] = c.beta2 * mom.second[i] + (1.0 - c.beta2) * r * r;
                        let mhat = mom.first[i] / bc1;
                        let vhat = mom.second[i] / bc2;
                        step[i] = -lr * mhat / (vhat.sqrt() + c.eps);
                    }
                    if step.iter().all(|&s| s == 0.0) {
                        continue;
                    }
                    let next = stiefel_retract(param, &step)?;
                    let m = DMatrix::from_column_slice(rows, cols, &mom.first);
                    let transported = stiefel_project_tangent(next.matrix(), &m)?;
                    mom.first.copy_from_slice(transported.as_slice());
                    **param = next;
                }
                _ => unreachable!("kinds checked above"),
            }
        }
        Ok(())
    }

    /// Convenience step over every learnable parameter of a network.
    pub fn step_network(&mut self, state: &mut NetworkState, grads: &Gradients, epoch: usize) -> Result<()> {
        let mut sinc_flat: Vec<f64>;
        let sinc_grad_flat: Vec<f64>;
        let mut params: Vec<ParamMut<'_>> = Vec::new();
        let mut grad_refs: Vec<GradRef<'_>> = Vec::new();

        let is_sinc = matches!(state.filterbank.params, FilterParams::Sinc(_));
        match (&mut state.filterbank.params, &grads.filter) {
            (FilterParams::Conv(kernels), FilterGradient::Conv(gk)) => {
                for (f, (k, g)) in kernels.iter_mut().zip(gk).enumerate() {
                    params.push(ParamMut::Euclidean {
                        name: format!("filter[{f}]"),
                        values: k.as_mut_slice(),
                    });
                    grad_refs.push(GradRef::Euclidean(g));
                }
                sinc_flat = Vec::new();
                sinc_grad_flat = Vec::new();
            }
            (FilterParams::Sinc(bands), FilterGradient::Sinc(gb)) => {
                sinc_flat = bands.iter().flat_map(|b| [b.low_hz, b.bandwidth_hz]).collect();
                sinc_grad_flat = gb.iter().flat_map(|&(a, b)| [a, b]).collect();
            }
            _ => return Err(Error::State("gradient filter kind does not match network".into())),
        }
        if is_sinc {
            params.push(ParamMut::Euclidean {
                name: "sinc_bands".into(),
                values: sinc_flat.as_mut_slice(),
            });
            grad_refs.push(GradRef::Euclidean(&sinc_grad_flat));
        }
        for (k, (w, g)) in state.bimaps.iter_mut().zip(&grads.bimaps).enumerate() {
            params.push(ParamMut::Stiefel {
                name: format!("bimap[{k}]"),
                param: w,
            });
            grad_refs.push(GradRef::Stiefel(g));
        }
        params.push(ParamMut::Euclidean {
            name: "head.weights".into(),
            values: state.head.weights.as_mut_slice(),
        });
        grad_refs.push(GradRef::Euclidean(grads.head_weights.as_slice()));
        params.push(ParamMut::Euclidean {
            name: "head.bias".into(),
            values: state.head.bias.as_mut_slice(),
        });
        grad_refs.push(GradRef::Euclidean(grads.head_bias.as_slice()));

        self.step(&mut params, &grad_refs, epoch)?;
        drop(params);

        if let FilterParams::Sinc(bands) = &mut state.filterbank.params {
            for (b, pair) in bands.iter_mut().zip(sinc_flat.chunks_exact(2)) {
                b.low_hz = pair[0];
                b.bandwidth_hz = pair[1];
            }
        }
        Ok(())
    }
}
