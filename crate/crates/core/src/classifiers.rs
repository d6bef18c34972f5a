//! Proxy and probe classifiers on SPD matrices: minimum distance to the
//! class Fréchet means, a linear SVM (dual coordinate descent) on plain or
//! tangent-space vectors, and stratified k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spd::{distance, frechet_mean, tangent_vectorize, vectorize, RiemannianMetric, SpdMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Proxy {
    Mdm,
    Svm,
}

impl std::str::FromStr for Proxy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmdm" | "mdm" => Ok(Proxy::Mdm),
            "rsvm" | "svm" => Ok(Proxy::Svm),
            other => Err(Error::invalid(format!("unknown proxy `{other}` (expected rmdm or rsvm)"))),
        }
    }
}

impl std::fmt::Display for Proxy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Proxy::Mdm => "rmdm",
            Proxy::Svm => "rsvm",
        })
    }
}

fn argmin_lower(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, v) in values.enumerate() {
        if v < best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn argmax_lower(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn check_labels(n: usize, labels: &[usize], n_classes: usize) -> Result<Vec<usize>> {
    if n != labels.len() {
        return Err(Error::invalid(format!("{n} samples but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::invalid("empty training set"));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::invalid(format!("label {l} out of range for {n_classes} classes")));
        }
        counts[l] += 1;
    }
    Ok(counts)
}

/// Minimum distance to Riemannian mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MdmModel {
    pub means: Vec<SpdMatrix>,
    pub metric: RiemannianMetric,
}

impl MdmModel {
    pub fn fit(mats: &[SpdMatrix], labels: &[usize], n_classes: usize, metric: RiemannianMetric) -> Result<Self> {
        let counts = check_labels(mats.len(), labels, n_classes)?;
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("class {k} has no training trial")));
        }
        let means = (0..n_classes)
            .map(|k| {
                let members: Vec<SpdMatrix> = mats
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == k)
                    .map(|(m, _)| m.clone())
                    .collect();
                frechet_mean(&members, metric)
            })
            .collect::<Result<_>>()?;
        Ok(Self { means, metric })
    }

    pub fn distances(&self, s: &SpdMatrix) -> Result<Vec<f64>> {
        self.means.iter().map(|m| distance(s, m, self.metric)).collect()
    }

    /// Nearest class mean; ties go to the lower class index.
    pub fn predict(&self, s: &SpdMatrix) -> Result<usize> {
        Ok(argmin_lower(self.distances(s)?.into_iter()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// Stop once the duality gap falls below `tol * max(1, primal)`.
    pub tol: f64,
    /// One pass is `n` pair updates.
    pub max_passes: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-6,
            max_passes: 10_000,
        }
    }
}

/// A binary linear classifier `sign(w·x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub passes: usize,
    pub duality_gap: f64,
}

impl BinarySvm {
    /// Stands in for a class absent from the training data.
    fn never() -> Self {
        Self {
            weights: vec![],
            bias: f64::NEG_INFINITY,
            passes: 0,
            duality_gap: 0.0,
        }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        crate::spd::dot(&self.weights, x) + self.bias
    }

    /// `½‖w‖² + C Σ max(0, 1 − yᵢ f(xᵢ))` with `y ∈ {−1, +1}`.
    pub fn primal_objective(&self, x: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
        primal(&self.weights, self.bias, x, y, c)
    }
}

fn primal(w: &[f64], b: f64, x: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (1.0 - yi * (crate::spd::dot(w, xi) + b)).max(0.0))
        .sum();
    0.5 * crate::spd::dot(w, w) + c * hinge
}

fn check_features(x: &[Vec<f64>]) -> Result<()> {
    let d = x.first().map_or(0, Vec::len);
    if x.iter().any(|xi| xi.len() != d) {
        return Err(Error::invalid("SVM samples have differing lengths"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite SVM feature"));
    }
    Ok(())
}

fn gram(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let v = crate::spd::dot(&x[i], &x[j]);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// Hinge-loss SVM with an unregularized bias, solved in the dual by
/// two-coordinate descent with second-order working-pair selection.
pub fn fit_binary(x: &[Vec<f64>], y: &[f64], cfg: &SvmConfig) -> Result<BinarySvm> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid("binary SVM needs matching non-empty samples and targets"));
    }
    check_features(x)?;
    fit_binary_gram(x, &gram(x), y, cfg)
}

fn fit_binary_gram(x: &[Vec<f64>], k: &[Vec<f64>], y: &[f64], cfg: &SvmConfig) -> Result<BinarySvm> {
    const TAU: f64 = 1e-12;
    let n = x.len();
    let c = cfg.c;
    if !y.iter().any(|&v| v > 0.0) || !y.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("binary SVM needs both classes"));
    }
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);
    let mut passes = 0;
    let mut gap = f64::INFINITY;
    let mut result = (vec![0.0; x[0].len()], 0.0);

    'outer: while passes < cfg.max_passes {
        passes += 1;
        for _ in 0..n {
            let mut i = usize::MAX;
            let mut gmax = f64::NEG_INFINITY;
            for t in 0..n {
                if up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                    if -y[t] * grad[t] > gmax || i == usize::MAX {
                        i = t;
                    }
                    gmax = -y[t] * grad[t];
                }
            }
            let mut j = usize::MAX;
            let mut gmin = f64::INFINITY;
            let mut best = f64::INFINITY;
            for t in 0..n {
                if !low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                if i != usize::MAX && v < gmax {
                    let b = gmax - v;
                    let a = (k[i][i] + k[t][t] - 2.0 * k[i][t]).max(TAU);
                    let obj = -b * b / a;
                    if obj < best {
                        best = obj;
                        j = t;
                    }
                }
            }
            if i == usize::MAX || j == usize::MAX || gmax - gmin <= 1e-12 {
                result = weights_and_bias(x, y, &alpha, &grad, c);
                gap = duality_gap(&result, x, y, &alpha, c);
                break 'outer;
            }
            let a = (k[i][i] + k[j][j] - 2.0 * k[i][j]).max(TAU);
            let (old_i, old_j) = (alpha[i], alpha[j]);
            // Move along the feasible direction y_i e_i − y_j e_j.
            let step = (-y[i] * grad[i] + y[j] * grad[j]) / a;
            let mut ai = old_i + y[i] * step;
            let mut aj;
            let sum = y[i] * old_i + y[j] * old_j;
            ai = ai.clamp(0.0, c);
            aj = y[j] * (sum - y[i] * ai);
            if aj < 0.0 || aj > c {
                aj = aj.clamp(0.0, c);
                ai = y[i] * (sum - y[j] * aj);
                ai = ai.clamp(0.0, c);
            }
            let (di, dj) = (ai - old_i, aj - old_j);
            alpha[i] = ai;
            alpha[j] = aj;
            for t in 0..n {
                grad[t] += y[t] * (y[i] * k[t][i] * di + y[j] * k[t][j] * dj);
            }
        }
        result = weights_and_bias(x, y, &alpha, &grad, c);
        gap = duality_gap(&result, x, y, &alpha, c);
        let p = primal(&result.0, result.1, x, y, c);
        if gap <= cfg.tol * p.max(1.0) {
            break;
        }
    }
    let (weights, bias) = result;
    if weights.iter().any(|v| !v.is_finite()) || !bias.is_finite() {
        return Err(Error::numeric("SVM weights diverged"));
    }
    Ok(BinarySvm {
        weights,
        bias,
        passes,
        duality_gap: gap,
    })
}

fn weights_and_bias(x: &[Vec<f64>], y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; x[0].len()];
    for ((xi, &yi), &ai) in x.iter().zip(y).zip(alpha) {
        if ai != 0.0 {
            for (wj, xj) in w.iter_mut().zip(xi) {
                *wj += ai * yi * xj;
            }
        }
    }
    let mut free_sum = 0.0;
    let mut n_free = 0usize;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for t in 0..x.len() {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += yg;
            n_free += 1;
        } else if (alpha[t] <= 0.0) == (y[t] > 0.0) {
            hi = hi.min(yg);
        } else {
            lo = lo.max(yg);
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else if lo.is_finite() && hi.is_finite() {
        0.5 * (lo + hi)
    } else if lo.is_finite() {
        lo
    } else {
        hi
    };
    (w, -rho)
}

fn duality_gap(wb: &(Vec<f64>, f64), x: &[Vec<f64>], y: &[f64], alpha: &[f64], c: f64) -> f64 {
    let p = primal(&wb.0, wb.1, x, y, c);
    let dual = alpha.iter().sum::<f64>() - 0.5 * crate::spd::dot(&wb.0, &wb.0);
    p - dual
}

/// Linear SVM; a single machine for two classes, one-vs-rest otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmModel {
    pub n_classes: usize,
    pub machines: Vec<BinarySvm>,
}

impl LinearSvmModel {
    pub fn fit(x: &[Vec<f64>], labels: &[usize], n_classes: usize, cfg: &SvmConfig) -> Result<Self> {
        let counts = check_labels(x.len(), labels, n_classes)?;
        if counts.iter().filter(|&&c| c > 0).count() < 2 {
            return Err(Error::invalid("SVM training data contains a single class"));
        }
        check_features(x)?;
        let k = gram(x);
        let machines = if n_classes == 2 {
            let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
            vec![fit_binary_gram(x, &k, &y, cfg)?]
        } else {
            (0..n_classes)
                .filter(|&c| counts[c] > 0)
                .map(|c| {
                    let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
                    fit_binary_gram(x, &k, &y, cfg).map(|m| (c, m))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(vec![None; n_classes], |mut acc, (c, m)| {
                    acc[c] = Some(m);
                    acc
                })
                .into_iter()
                .map(|m| m.unwrap_or_else(BinarySvm::never))
                .collect()
        };
        Ok(Self { n_classes, machines })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.machines.iter().map(|m| m.decision(x)).collect()
    }

    /// Ties go to the lower class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        if self.n_classes == 2 {
            usize::from(self.machines[0].decision(x) > 0.0)
        } else {
            argmax_lower(self.scores(x).into_iter())
        }
    }
}

/// Tangent-space SVM. Under the log-Euclidean metric the features are the
/// vectorized matrix logarithms; under the affine-invariant metric each
/// matrix is first whitened by the training Fréchet mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RsvmModel {
    pub metric: RiemannianMetric,
    pub reference_inv_sqrt: Option<nalgebra::DMatrix<f64>>,
    pub svm: LinearSvmModel,
}

impl RsvmModel {
    pub fn fit(
        mats: &[SpdMatrix],
        labels: &[usize],
        n_classes: usize,
        metric: RiemannianMetric,
        cfg: &SvmConfig,
    ) -> Result<Self> {
        check_labels(mats.len(), labels, n_classes)?;
        let reference_inv_sqrt = match metric {
            RiemannianMetric::LogEuclidean => None,
            RiemannianMetric::AffineInvariant => Some(frechet_mean(mats, metric)?.inv_sqrt().into_matrix()),
        };
        let mut model = Self {
            metric,
            reference_inv_sqrt,
            svm: LinearSvmModel {
                n_classes,
                machines: vec![],
            },
        };
        let features = mats.iter().map(|m| model.features(m)).collect::<Result<Vec<_>>>()?;
        model.svm = LinearSvmModel::fit(&features, labels, n_classes, cfg)?;
        Ok(model)
    }

    pub fn features(&self, s: &SpdMatrix) -> Result<Vec<f64>> {
        match &self.reference_inv_sqrt {
            None => Ok(tangent_vectorize(s)),
            Some(r) => Ok(tangent_vectorize(&SpdMatrix::new(s.as_symmetric().congruence(r)?)?)),
        }
    }

    pub fn predict(&self, s: &SpdMatrix) -> Result<usize> {
        Ok(self.svm.predict(&self.features(s)?))
    }
}

/// Fold index per sample. Within each class the samples are shuffled and
/// dealt round-robin, starting where the previous class stopped so that fold
/// sizes stay balanced.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![vec![]; n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let min_count = by_class.iter().map(Vec::len).filter(|&c| c > 0).min().unwrap_or(0);
    if min_count < k {
        return Err(Error::invalid(format!(
            "{k}-fold split needs at least {k} trials per class, smallest class has {min_count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut offset = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            folds[i] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(folds)
}

/// Which classifier scores a set of SPD matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scorer {
    Mdm(RiemannianMetric),
    Rsvm(RiemannianMetric),
    /// Linear SVM on the upper-triangular vectorization, no logarithm.
    Svm,
}

impl Scorer {
    pub fn from_proxy(proxy: Proxy, metric: RiemannianMetric) -> Self {
        match proxy {
            Proxy::Mdm => Scorer::Mdm(metric),
            Proxy::Svm => Scorer::Rsvm(metric),
        }
    }

    /// Fits on one set and returns predictions for another.
    pub fn fit_predict(
        self,
        train: &[SpdMatrix],
        train_labels: &[usize],
        test: &[SpdMatrix],
        n_classes: usize,
        svm: &SvmConfig,
    ) -> Result<Vec<usize>> {
        match self {
            Scorer::Mdm(metric) => {
                let model = MdmModel::fit(train, train_labels, n_classes, metric)?;
                test.iter().map(|s| model.predict(s)).collect()
            }
            Scorer::Rsvm(metric) => {
                let model = RsvmModel::fit(train, train_labels, n_classes, metric, svm)?;
                test.iter().map(|s| model.predict(s)).collect()
            }
            Scorer::Svm => {
                let x: Vec<Vec<f64>> = train.iter().map(|s| vectorize(s.as_symmetric())).collect();
                let model = LinearSvmModel::fit(&x, train_labels, n_classes, svm)?;
                Ok(test.iter().map(|s| model.predict(&vectorize(s.as_symmetric()))).collect())
            }
        }
    }
}

/// Pooled held-out accuracy of stratified k-fold cross-validation. Folds are
/// evaluated in parallel and combined in fold order.
pub fn cross_val_accuracy(
    mats: &[SpdMatrix],
    labels: &[usize],
    n_classes: usize,
    scorer: Scorer,
    k: usize,
    seed: u64,
) -> Result<f64> {
    check_labels(mats.len(), labels, n_classes)?;
    let folds = stratified_kfold(labels, k, seed)?;
    let svm = SvmConfig::default();
    let correct: Vec<usize> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (mut tr, mut tr_l, mut te, mut te_l) = (vec![], vec![], vec![], vec![]);
            for (i, &fold) in folds.iter().enumerate() {
                if fold == f {
                    te.push(mats[i].clone());
                    te_l.push(labels[i]);
                } else {
                    tr.push(mats[i].clone());
                    tr_l.push(labels[i]);
                }
            }
            let pred = scorer.fit_predict(&tr, &tr_l, &te, n_classes, &svm)?;
            Ok(pred.iter().zip(&te_l).filter(|(p, l)| p == l).count())
        })
        .collect::<Result<_>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / mats.len() as f64)
}
