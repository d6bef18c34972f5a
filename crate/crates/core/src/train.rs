//! Minibatch training of the end-to-end network, evaluation, and the run
//! configuration shared with the command line.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use crate::classifiers::Proxy;
use crate::error::{Error, Result};
use crate::net::{
    Architecture, Band, FilterKind, FilterParams, FilterbankSpec, Gradients, NetworkState, Specificity,
    DEFAULT_KERNEL_LEN, DEFAULT_REEIG_EPS,
};
use crate::optim::{AdamConfig, OptimState};
use crate::spd::RiemannianMetric;
use crate::trial::Dataset;

/// Stream separating the minibatch shuffling RNG from the initialization RNG.
const SHUFFLE_STREAM: u64 = 0x5eed_5417_u64;

/// Everything that determines a training or filterbank-search run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_filters: usize,
    pub specificity: Specificity,
    pub filter_kind: FilterKind,
    pub interband: bool,
    pub n_bire: usize,
    pub kernel_len: usize,
    pub reeig_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seeds: Vec<u64>,
    /// Taken from the data when absent.
    pub n_classes: Option<usize>,
    pub proxy: Proxy,
    pub metric: RiemannianMetric,
    pub budget_iters: usize,
    pub budget_hours: f64,
    /// Frozen sinc bands. When set the filterbank is not trained.
    pub fixed_bands: Option<Vec<Band>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_filters: 1,
            specificity: Specificity::ChannelIndependent,
            filter_kind: FilterKind::Conv,
            interband: true,
            n_bire: 3,
            kernel_len: DEFAULT_KERNEL_LEN,
            reeig_eps: DEFAULT_REEIG_EPS,
            epochs: 1000,
            batch_size: 32,
            lr: 1e-2,
            weight_decay: 1e-4,
            seeds: vec![0, 1, 2],
            n_classes: None,
            proxy: Proxy::Svm,
            metric: RiemannianMetric::LogEuclidean,
            budget_iters: 1000,
            budget_hours: 12.0,
            fixed_bands: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.n_filters == 0 {
            return Err(Error::invalid("n_filters must be at least 1"));
        }
        if self.n_bire == 0 {
            return Err(Error::invalid("n_bire must be at least 1"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("lr must be positive and weight_decay non-negative"));
        }
        Ok(())
    }

    pub fn architecture(&self, data: &Dataset) -> Result<Architecture> {
        let n_classes = self.n_classes.unwrap_or(data.n_classes);
        if n_classes != data.n_classes {
            return Err(Error::invalid(format!(
                "config declares {n_classes} classes, data has {}",
                data.n_classes
            )));
        }
        Ok(Architecture {
            n_electrodes: data.n_electrodes(),
            fs_hz: data.fs_hz(),
            n_classes,
            n_filters: self.n_filters,
            specificity: self.specificity,
            filter_kind: self.filter_kind,
            kernel_len: self.kernel_len,
            interband: self.interband,
            n_bire: self.n_bire,
            reeig_eps: self.reeig_eps,
        })
    }

    /// Initial network for `seed`, with the frozen bands installed if any.
    pub fn initial_state(&self, data: &Dataset, seed: u64) -> Result<NetworkState> {
        let mut arch = self.architecture(data)?;
        if self.fixed_bands.is_some() {
            arch.filter_kind = FilterKind::Sinc;
        }
        let mut state = NetworkState::initialize(&arch, seed)?;
        if let Some(bands) = &self.fixed_bands {
            let fb = &state.filterbank;
            state.filterbank = FilterbankSpec::new(
                fb.n_filters,
                fb.n_electrodes,
                fb.fs_hz,
                fb.specificity,
                fb.kernel_len,
                fb.interband,
                FilterParams::Sinc(bands.clone()),
            )?;
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub seeds: Vec<SeedReport>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

fn check_trainable(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let counts = data.class_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::invalid("training set contains a single class"));
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("training set has no trial of class {k}")));
    }
    Ok(())
}

/// Mean loss and mean gradient over a batch. Trials are processed in
/// parallel; the reduction runs in batch order.
pub fn batch_gradient(state: &NetworkState, data: &Dataset, batch: &[usize]) -> Result<(f64, Gradients)> {
    let per_trial: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|&i| state.loss_and_gradients(&data.trials[i], data.labels[i]))
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(state);
    let mut loss = 0.0;
    for (l, g) in &per_trial {
        loss += l;
        total.add_assign(g);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

/// Trains one network from `seed`. Deterministic in (data, cfg, seed).
pub fn train_seed(
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &RunConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(NetworkState, SeedReport)> {
    cfg.validate()?;
    check_trainable(data)?;
    let mut state = cfg.initial_state(data, seed)?;
    let frozen = cfg.fixed_bands.as_ref().map(|_| state.filterbank.clone());
    let mut opt = OptimState::new(AdamConfig::new(cfg.lr, cfg.weight_decay, cfg.epochs));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradient(&state, data, batch)?;
            loss_sum += loss * batch.len() as f64;
            opt.step_network(&mut state, &grads, epoch)?;
            if let Some(fb) = &frozen {
                state.filterbank = fb.clone();
            }
        }
        let mean = loss_sum / data.len() as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }

    let train_accuracy = evaluate(&state, data)?.accuracy;
    let test_accuracy = match test {
        Some(t) => Some(evaluate(&state, t)?.accuracy),
        None => None,
    };
    Ok((
        state,
        SeedReport {
            seed,
            epoch_losses,
            train_accuracy,
            test_accuracy,
        },
    ))
}

/// Trains one network per configured seed.
pub fn train(data: &Dataset, test: Option<&Dataset>, cfg: &RunConfig) -> Result<(Vec<NetworkState>, TrainReport)> {
    let start = Instant::now();
    let mut models = Vec::with_capacity(cfg.seeds.len());
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (state, report) = train_seed(data, test, cfg, seed, |_, _| {})?;
        models.push(state);
        seeds.push(report);
    }
    Ok((
        models,
        TrainReport {
            seeds,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Accuracy and per-trial predictions (arg-max logit, ties to the lower
/// class index).
pub fn evaluate(state: &NetworkState, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if data.n_electrodes() != state.n_electrodes() {
        return Err(Error::invalid(format!(
            "data has {} electrodes, model was trained on {}",
            data.n_electrodes(),
            state.n_electrodes()
        )));
    }
    let predictions: Vec<usize> = data.trials.par_iter().map(|t| state.predict(t)).collect::<Result<_>>()?;
    let correct = predictions.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        predictions,
    })
}
