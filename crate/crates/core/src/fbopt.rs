//! Filterbank search: black-box optimization of band-pass cutoffs, scored by
//! cross-validating a proxy classifier on the resulting covariance matrices.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::classifiers::{cross_val_accuracy, Proxy, Scorer};
use crate::error::{Error, Result};
use crate::net::{cov_pool, filterbank_forward, reeig, Band, FilterParams, FilterbankSpec, Specificity};
use crate::spd::{RiemannianMetric, SpdMatrix};
use crate::trial::Dataset;

pub const MIN_LOW_HZ: f64 = 1.0;
const N_INITIAL: usize = 20;
const CV_FOLDS: usize = 3;
/// Largest number of observations the surrogate is fitted on.
const GP_MAX_POINTS: usize = 300;
const HYPER_REFIT_EVERY: usize = 10;
const N_RANDOM_CANDIDATES: usize = 512;
const N_LOCAL_CANDIDATES: usize = 512;
const EI_XI: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMethod {
    Bayesian,
    Random,
}

impl std::str::FromStr for SearchMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bayes" | "bo" | "gp" => Ok(SearchMethod::Bayesian),
            "random" => Ok(SearchMethod::Random),
            other => Err(Error::invalid(format!("unknown search method `{other}` (expected bayes or random)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub n_filters: usize,
    pub specificity: Specificity,
    pub interband: bool,
    pub kernel_len: usize,
    pub reeig_eps: f64,
    pub proxy: Proxy,
    pub metric: RiemannianMetric,
    pub budget_iters: usize,
    pub budget_hours: f64,
    pub seed: u64,
    pub method: SearchMethod,
}

impl SearchConfig {
    pub fn n_bands(&self, n_electrodes: usize) -> usize {
        match self.specificity {
            Specificity::ChannelIndependent => self.n_filters,
            Specificity::ChannelSpecific => self.n_filters * n_electrodes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.budget_iters == 0 {
            return Err(Error::invalid("search budget must allow at least one iteration"));
        }
        if !(self.budget_hours > 0.0) {
            return Err(Error::invalid("search walltime budget must be positive"));
        }
        if self.n_filters == 0 {
            return Err(Error::invalid("n_filters must be at least 1"));
        }
        Ok(())
    }
}

/// Maps points of the unit cube to bands: `low ∈ [1, nyq]` and
/// `bandwidth ∈ (0, nyq − 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpace {
    pub nyquist: f64,
}

impl BandSpace {
    pub fn max_bandwidth(&self) -> f64 {
        self.nyquist - MIN_LOW_HZ
    }

    pub fn decode(&self, u: &[f64]) -> Vec<Band> {
        u.chunks_exact(2)
            .map(|p| {
                let low = MIN_LOW_HZ + p[0].clamp(0.0, 1.0) * (self.nyquist - MIN_LOW_HZ);
                let bw = p[1].clamp(1e-3, 1.0) * self.max_bandwidth();
                Band::new(low, bw)
            })
            .collect()
    }

    pub fn encode(&self, bands: &[Band]) -> Vec<f64> {
        bands
            .iter()
            .flat_map(|b| {
                [
                    (b.low_hz - MIN_LOW_HZ) / (self.nyquist - MIN_LOW_HZ),
                    b.bandwidth_hz / self.max_bandwidth(),
                ]
            })
            .collect()
    }
}

/// Cross-validated proxy accuracy for a fixed set of sinc bands. Filtering
/// and pooling follow the network's front end; the pooled matrices are
/// regularized with ReEig before scoring. Any numeric failure scores 0.
pub fn objective(bands: &[Band], data: &Dataset, cfg: &SearchConfig) -> f64 {
    objective_checked(bands, data, cfg).unwrap_or(0.0)
}

pub fn objective_checked(bands: &[Band], data: &Dataset, cfg: &SearchConfig) -> Result<f64> {
    let fb = FilterbankSpec::new(
        cfg.n_filters,
        data.n_electrodes(),
        data.fs_hz(),
        cfg.specificity,
        cfg.kernel_len,
        cfg.interband,
        FilterParams::Sinc(bands.to_vec()),
    )?;
    let mats: Vec<SpdMatrix> = data
        .trials
        .par_iter()
        .map(|t| {
            let filtered = filterbank_forward(t, &fb)?;
            let c = cov_pool(&filtered, &fb)?;
            SpdMatrix::new(reeig(&c, cfg.reeig_eps)?)
        })
        .collect::<Result<_>>()?;
    cross_val_accuracy(
        &mats,
        &data.labels,
        data.n_classes,
        Scorer::from_proxy(cfg.proxy, cfg.metric),
        CV_FOLDS,
        cfg.seed,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub bands: Vec<Band>,
    pub score: f64,
    pub elapsed_s: f64,
    pub best_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub entries: Vec<TraceEntry>,
    pub best_index: usize,
    /// FNV-1a hash of every sample and label the objective saw.
    pub data_fingerprint: u64,
}

impl SearchTrace {
    pub fn best(&self) -> &TraceEntry {
        &self.entries[self.best_index]
    }

    /// `iteration,score,best_score,low_hz_0,bandwidth_hz_0,...`. Timing is
    /// left out so that repeated runs give identical files.
    pub fn to_csv(&self) -> String {
        let n_bands = self.entries.first().map_or(0, |e| e.bands.len());
        let mut out = String::from("iteration,score,best_score");
        for b in 0..n_bands {
            out.push_str(&format!(",low_hz_{b},bandwidth_hz_{b}"));
        }
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!("{},{},{}", e.iteration, e.score, e.best_score));
            for b in &e.bands {
                out.push_str(&format!(",{},{}", b.low_hz, b.bandwidth_hz));
            }
            out.push('\n');
        }
        out
    }
}

pub fn data_fingerprint(data: &Dataset) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    for (t, &l) in data.trials.iter().zip(&data.labels) {
        feed(&(l as u64).to_le_bytes());
        for v in t.data() {
            feed(&v.to_le_bytes());
        }
    }
    h
}

/// Searches band cutoffs on `data`, which must be the training portion only.
/// Returns the best observed bands (earliest on ties) and the full trace.
pub fn search(data: &Dataset, cfg: &SearchConfig) -> Result<(Vec<Band>, SearchTrace)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("filterbank search needs training data"));
    }
    let space = BandSpace {
        nyquist: data.fs_hz() / 2.0,
    };
    if space.nyquist <= MIN_LOW_HZ {
        return Err(Error::invalid("sampling rate too low for the band search"));
    }
    let dim = 2 * cfg.n_bands(data.n_electrodes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let deadline = cfg.budget_hours * 3600.0;
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut entries: Vec<TraceEntry> = Vec::new();
    let mut best_index = 0;
    let mut gp_hyper = GpHyper::default();

    for it in 0..cfg.budget_iters {
        if it > 0 && start.elapsed().as_secs_f64() >= deadline {
            break;
        }
        let u = if cfg.method == SearchMethod::Random || it < N_INITIAL {
            random_point(dim, &mut rng)
        } else {
            let ys: Vec<f64> = entries.iter().map(|e| e.score).collect();
            let (fit_x, fit_y) = surrogate_subset(&xs, &ys);
            if (it - N_INITIAL) % HYPER_REFIT_EVERY == 0 {
                gp_hyper = select_hyper(&fit_x, &fit_y);
            }
            match Gp::fit(&fit_x, &fit_y, gp_hyper) {
                Some(gp) => propose(&gp, &xs, &ys, dim, &mut rng),
                None => random_point(dim, &mut rng),
            }
        };
        let bands = space.decode(&u);
        let score = objective(&bands, data, cfg);
        if entries.is_empty() || score > entries[best_index].score {
            best_index = entries.len();
        }
        let best_score = entries.get(best_index).map_or(score, |e| e.score);
        entries.push(TraceEntry {
            iteration: it,
            bands,
            score,
            elapsed_s: start.elapsed().as_secs_f64(),
            best_score,
        });
        xs.push(u);
    }
    let trace = SearchTrace {
        entries,
        best_index,
        data_fingerprint: data_fingerprint(data),
    };
    Ok((trace.best().bands.clone(), trace))
}

fn random_point(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

/// Keeps the best-scoring observations when there are too many for an
/// exact GP.
fn surrogate_subset(xs: &[Vec<f64>], ys: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    if xs.len() <= GP_MAX_POINTS {
        return (xs.to_vec(), ys.to_vec());
    }
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| ys[b].total_cmp(&ys[a]).then(a.cmp(&b)));
    idx.truncate(GP_MAX_POINTS);
    idx.sort_unstable();
    (idx.iter().map(|&i| xs[i].clone()).collect(), idx.iter().map(|&i| ys[i]).collect())
}

fn propose(gp: &Gp, xs: &[Vec<f64>], ys: &[f64], dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut candidates: Vec<Vec<f64>> = (0..N_RANDOM_CANDIDATES).map(|_| random_point(dim, rng)).collect();
    let mut order: Vec<usize> = (0..ys.len()).collect();
    order.sort_by(|&a, &b| ys[b].total_cmp(&ys[a]).then(a.cmp(&b)));
    let top = &order[..order.len().min(5)];
    for k in 0..N_LOCAL_CANDIDATES {
        let base = &xs[top[k % top.len()]];
        let scale = if k % 2 == 0 { 0.02 } else { 0.1 };
        candidates.push(
            base.iter()
                .map(|&v| {
                    let z: f64 = rng.sample(StandardNormal);
                    (v + scale * z).clamp(0.0, 1.0)
                })
                .collect(),
        );
    }
    let best_y = gp.standardize(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let mut best = 0;
    let mut best_ei = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let (mu, var) = gp.predict(c);
        let ei = expected_improvement(mu, var.sqrt(), best_y, EI_XI);
        if ei > best_ei {
            best_ei = ei;
            best = i;
        }
    }
    candidates.swap_remove(best)
}

/// Expected improvement of a Gaussian `N(mu, sigma²)` over `best` for
/// maximization.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let gain = mu - best - xi;
    if sigma <= 1e-12 {
        return gain.max(0.0);
    }
    let std = Normal::standard();
    let z = gain / sigma;
    gain * std.cdf(z) + sigma * std.pdf(z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyper {
    pub length_scale: f64,
    pub noise: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        Self {
            length_scale: 0.2,
            noise: 1e-2,
        }
    }
}

/// Zero-mean GP with unit-variance squared-exponential kernel on
/// standardized targets.
pub struct Gp {
    xs: Vec<Vec<f64>>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_std: f64,
    hyper: GpHyper,
    log_marginal: f64,
}

fn se_kernel(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-0.5 * d2 / (length_scale * length_scale)).exp()
}

impl Gp {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], hyper: GpHyper) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        let y = DVector::from_iterator(n, ys.iter().map(|v| (v - y_mean) / y_std));
        let k = DMatrix::from_fn(n, n, |i, j| {
            se_kernel(&xs[i], &xs[j], hyper.length_scale) + if i == j { hyper.noise + 1e-8 } else { 0.0 }
        });
        let chol = k.cholesky()?;
        let alpha = chol.solve(&y);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let log_marginal = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Some(Self {
            xs: xs.to_vec(),
            chol,
            alpha,
            y_mean,
            y_std,
            hyper,
            log_marginal,
        })
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal
    }

    /// Posterior mean and variance in standardized units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| se_kernel(x, xi, self.hyper.length_scale)));
        let mu = k.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&k).unwrap_or_else(|| k.clone());
        let var = (1.0 - v.dot(&v)).max(1e-12);
        (mu, var)
    }
}

/// Length-scale and noise by maximum marginal likelihood over a fixed grid.
pub fn select_hyper(xs: &[Vec<f64>], ys: &[f64]) -> GpHyper {
    let mut best = GpHyper::default();
    let mut best_lml = f64::NEG_INFINITY;
    for &length_scale in &[0.03, 0.06, 0.1, 0.2, 0.35, 0.6, 1.0] {
        for &noise in &[1e-4, 1e-2, 1e-1] {
            let h = GpHyper { length_scale, noise };
            if let Some(gp) = Gp::fit(xs, ys, h) {
                if gp.log_marginal > best_lml {
                    best_lml = gp.log_marginal;
                    best = h;
                }
            }
        }
    }
    best
}
