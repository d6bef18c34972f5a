use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::filterbank::{
    apply_kernels, cov_pool, pool_mask, sinc_kernel_with_grad, FilterKind, FilterParams, FilterbankSpec,
    FilteredChannels, Specificity,
};
use super::layers::{
    bimap, eig_function_backward, log_softmax, reeig_forward, softmax, Head, ReEigOutput, StiefelParam,
};
use crate::error::{Error, Result};
use crate::spd::{sym_eig, vectorize, vectorize_adjoint, EigPair, SpectralFn, SymmetricMatrix};
use crate::trial::MultichannelTrial;

/// Shape and hyperparameters that fix a network's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub n_electrodes: usize,
    pub fs_hz: f64,
    pub n_classes: usize,
    pub n_filters: usize,
    pub specificity: Specificity,
    pub filter_kind: FilterKind,
    pub kernel_len: usize,
    pub interband: bool,
    pub n_bire: usize,
    pub reeig_eps: f64,
}

/// Sizes of the SPD features: input covariance first, then the output of
/// each BiMap, halving with rounding up.
pub fn layer_dims(input_dim: usize, n_bire: usize) -> Vec<usize> {
    let mut dims = vec![input_dim];
    for _ in 0..n_bire {
        let prev = *dims.last().unwrap();
        dims.push(prev.div_ceil(2));
    }
    dims
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub filterbank: FilterbankSpec,
    pub bimaps: Vec<StiefelParam>,
    pub reeig_eps: f64,
    pub head: Head,
}

/// Intermediate values of one forward pass, kept for the backward pass and
/// for layer-wise probing.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub filtered: FilteredChannels,
    pub cov: SymmetricMatrix,
    pub layers: Vec<BiReCache>,
    pub logeig: SymmetricMatrix,
    log_eig: EigPair,
    pub features: Vec<f64>,
    pub logits: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct BiReCache {
    pub input: SymmetricMatrix,
    pub bimap_out: SymmetricMatrix,
    pub reeig: ReEigOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterGradient {
    Conv(Vec<Vec<f64>>),
    /// `(d/d low_hz, d/d bandwidth_hz)` per band.
    Sinc(Vec<(f64, f64)>),
}

/// Euclidean gradients for every learnable parameter, plus the gradient
/// with respect to the pooled covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub filter: FilterGradient,
    pub bimaps: Vec<DMatrix<f64>>,
    pub head_weights: DMatrix<f64>,
    pub head_bias: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl Gradients {
    pub fn zeros_like(state: &NetworkState) -> Self {
        let filter = match &state.filterbank.params {
            FilterParams::Conv(k) => FilterGradient::Conv(k.iter().map(|v| vec![0.0; v.len()]).collect()),
            FilterParams::Sinc(b) => FilterGradient::Sinc(vec![(0.0, 0.0); b.len()]),
        };
        let n = state.filterbank.n_channels();
        Self {
            filter,
            bimaps: state.bimaps.iter().map(|w| DMatrix::zeros(w.d_in(), w.d_out())).collect(),
            head_weights: DMatrix::zeros(state.head.n_classes(), state.head.n_features()),
            head_bias: DVector::zeros(state.head.n_classes()),
            covariance: DMatrix::zeros(n, n),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        match (&mut self.filter, &other.filter) {
            (FilterGradient::Conv(a), FilterGradient::Conv(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    for (p, q) in x.iter_mut().zip(y) {
                        *p += q;
                    }
                }
            }
            (FilterGradient::Sinc(a), FilterGradient::Sinc(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    x.0 += y.0;
                    x.1 += y.1;
                }
            }
            _ => panic!("adding gradients of different filter kinds"),
        }
        for (a, b) in self.bimaps.iter_mut().zip(&other.bimaps) {
            *a += b;
        }
        self.head_weights += &other.head_weights;
        self.head_bias += &other.head_bias;
        self.covariance += &other.covariance;
    }

    pub fn scale(&mut self, factor: f64) {
        match &mut self.filter {
            FilterGradient::Conv(a) => a.iter_mut().flatten().for_each(|v| *v *= factor),
            FilterGradient::Sinc(a) => a.iter_mut().for_each(|v| {
                v.0 *= factor;
                v.1 *= factor;
            }),
        }
        self.bimaps.iter_mut().for_each(|m| *m *= factor);
        self.head_weights *= factor;
        self.head_bias *= factor;
        self.covariance *= factor;
    }
}

impl NetworkState {
    /// Seeded initialization. Draw order: filterbank, BiMap weights, head.
    pub fn initialize(arch: &Architecture, seed: u64) -> Result<Self> {
        if arch.n_bire == 0 {
            return Err(Error::invalid("network needs at least one BiMap/ReEig pair"));
        }
        if arch.n_classes < 2 {
            return Err(Error::invalid("network needs at least two classes"));
        }
        if !(arch.reeig_eps > 0.0) {
            return Err(Error::invalid("ReEig threshold must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filterbank = FilterbankSpec::initialize(
            arch.n_filters,
            arch.n_electrodes,
            arch.fs_hz,
            arch.specificity,
            arch.filter_kind,
            arch.kernel_len,
            arch.interband,
            &mut rng,
        )?;
        let dims = layer_dims(filterbank.n_channels(), arch.n_bire);
        let bimaps = dims
            .windows(2)
            .map(|d| StiefelParam::random(d[0], d[1], &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let m = *dims.last().unwrap();
        let head = Head::random(arch.n_classes, m * (m + 1) / 2, &mut rng);
        Ok(Self {
            filterbank,
            bimaps,
            reeig_eps: arch.reeig_eps,
            head,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes()
    }

    pub fn n_electrodes(&self) -> usize {
        self.filterbank.n_electrodes
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        layer_dims(self.filterbank.n_channels(), self.bimaps.len())
    }

    pub fn forward(&self, trial: &MultichannelTrial) -> Result<ForwardCache> {
        self.forward_with_kernels(trial, &self.filterbank.kernels())
    }

    pub(crate) fn forward_with_kernels(
        &self,
        trial: &MultichannelTrial,
        kernels: &[Vec<f64>],
    ) -> Result<ForwardCache> {
        let filtered = apply_kernels(trial, &self.filterbank, kernels)?;
        let cov = cov_pool(&filtered, &self.filterbank)?;
        let (layers, logeig, log_eig, features, logits) = self.forward_from_cov(&cov)?;
        Ok(ForwardCache {
            filtered,
            cov,
            layers,
            logeig,
            log_eig,
            features,
            logits,
        })
    }

    #[allow(clippy::type_complexity)]
    fn forward_from_cov(
        &self,
        cov: &SymmetricMatrix,
    ) -> Result<(Vec<BiReCache>, SymmetricMatrix, EigPair, Vec<f64>, DVector<f64>)> {
        let mut layers = Vec::with_capacity(self.bimaps.len());
        let mut x = cov.clone();
        for w in &self.bimaps {
            let bimap_out = bimap(&x, w)?;
            let reeig = reeig_forward(&bimap_out, self.reeig_eps)?;
            let next = reeig.output.clone();
            layers.push(BiReCache {
                input: x,
                bimap_out,
                reeig,
            });
            x = next;
        }
        let log_eig = sym_eig(&x)?;
        let logeig = log_eig.map(SpectralFn::Log)?;
        let features = vectorize(&logeig);
        if features.len() != self.head.n_features() {
            return Err(Error::State(format!(
                "head expects {} features, network produces {}",
                self.head.n_features(),
                features.len()
            )));
        }
        let logits = self.head.logits(&features);
        Ok((layers, logeig, log_eig, features, logits))
    }

    /// Logits for an already pooled covariance matrix.
    pub fn logits_from_cov(&self, cov: &SymmetricMatrix) -> Result<DVector<f64>> {
        Ok(self.forward_from_cov(cov)?.4)
    }

    pub fn logits(&self, trial: &MultichannelTrial) -> Result<DVector<f64>> {
        Ok(self.forward(trial)?.logits)
    }

    /// Arg-max class; ties go to the lower class index.
    pub fn predict(&self, trial: &MultichannelTrial) -> Result<usize> {
        Ok(argmax(&self.forward(trial)?.logits))
    }

    pub fn loss(&self, trial: &MultichannelTrial, label: usize) -> Result<f64> {
        let logits = self.logits(trial)?;
        check_label(label, logits.len())?;
        Ok(-log_softmax(&logits)[label])
    }

    /// Cross-entropy loss and its gradients for one labelled trial.
    pub fn loss_and_gradients(&self, trial: &MultichannelTrial, label: usize) -> Result<(f64, Gradients)> {
        let cache = self.forward(trial)?;
        check_label(label, cache.logits.len())?;
        let logp = log_softmax(&cache.logits);
        let mut dlogits = softmax(&cache.logits);
        dlogits[label] -= 1.0;
        let grads = self.backward(trial, &cache, &dlogits)?;
        Ok((-logp[label], grads))
    }

    /// Reverse pass from an upstream gradient on the logits.
    pub fn backward(&self, trial: &MultichannelTrial, cache: &ForwardCache, dlogits: &DVector<f64>) -> Result<Gradients> {
        self.check_cache(cache)?;
        let head_weights = dlogits * DVector::from_column_slice(&cache.features).transpose();
        let head_bias = dlogits.clone();
        let dfeat = self.head.weights.transpose() * dlogits;
        let m = cache.logeig.dim();
        let g_log = vectorize_adjoint(dfeat.as_slice(), m);
        let mut g = eig_function_backward(g_log.matrix(), &cache.log_eig, SpectralFn::Log);

        let mut bimap_grads = vec![DMatrix::zeros(0, 0); self.bimaps.len()];
        for (k, (w, layer)) in self.bimaps.iter().zip(&cache.layers).enumerate().rev() {
            if !layer.reeig.passthrough {
                g = eig_function_backward(&g, &layer.reeig.eig, SpectralFn::ClampBelow(self.reeig_eps));
            }
            let wm = w.matrix();
            bimap_grads[k] = layer.input.matrix() * wm * &g * 2.0;
            g = wm * &g * wm.transpose();
        }
        if let Some(mask) = pool_mask(&self.filterbank) {
            g.component_mul_assign(&mask);
        }
        let filter = self.filter_backward(trial, &cache.filtered, &g)?;
        Ok(Gradients {
            filter,
            bimaps: bimap_grads,
            head_weights,
            head_bias,
            covariance: g,
        })
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let dims = self.layer_dims();
        let ok = cache.layers.len() == self.bimaps.len()
            && cache.cov.dim() == dims[0]
            && cache.logeig.dim() == *dims.last().unwrap()
            && cache.filtered.n_channels == self.filterbank.n_channels();
        if ok {
            Ok(())
        } else {
            Err(Error::State("forward cache does not belong to this network".into()))
        }
    }

    fn filter_backward(
        &self,
        trial: &MultichannelTrial,
        filtered: &FilteredChannels,
        g_cov: &DMatrix<f64>,
    ) -> Result<FilterGradient> {
        let fb = &self.filterbank;
        let n = filtered.n_samples;
        let ch = filtered.n_channels;
        let len = fb.kernel_len;
        let coef = 2.0 / (n - 1) as f64;
        let n_kernels = fb.params.len();
        let mut dk = vec![vec![0.0; len]; n_kernels];
        let mut dy = vec![0.0; n];
        for c in 0..ch {
            dy.iter_mut().for_each(|v| *v = 0.0);
            for c2 in 0..ch {
                let gc = g_cov[(c, c2)] * coef;
                if gc != 0.0 {
                    for (d, y) in dy.iter_mut().zip(filtered.row(c2)) {
                        *d += gc * y;
                    }
                }
            }
            let x = trial.row(c % fb.n_electrodes);
            let kernel_grad = &mut dk[fb.kernel_index(c)];
            for (j, slot) in kernel_grad.iter_mut().enumerate() {
                *slot += dy.iter().zip(&x[j..j + n]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(match &fb.params {
            FilterParams::Conv(_) => FilterGradient::Conv(dk),
            FilterParams::Sinc(bands) => FilterGradient::Sinc(
                bands
                    .iter()
                    .zip(&dk)
                    .map(|(b, g)| {
                        let (_, d_low, d_bw) = sinc_kernel_with_grad(b.low_hz, b.bandwidth_hz, fb.fs_hz, len);
                        let gl = g.iter().zip(&d_low).map(|(a, b)| a * b).sum();
                        let gb = g.iter().zip(&d_bw).map(|(a, b)| a * b).sum();
                        (gl, gb)
                    })
                    .collect(),
            ),
        })
    }

    /// Gradient of the softmax probability of `class` with respect to an
    /// already pooled covariance matrix.
    pub fn probability_gradient_wrt_cov(&self, cov: &SymmetricMatrix, class: usize) -> Result<DMatrix<f64>> {
        let (layers, logeig, log_eig, _, logits) = self.forward_from_cov(cov)?;
        check_label(class, logits.len())?;
        let p = softmax(&logits);
        let mut dlogits = -&p * p[class];
        dlogits[class] += p[class];
        let dfeat = self.head.weights.transpose() * &dlogits;
        let g_log = vectorize_adjoint(dfeat.as_slice(), logeig.dim());
        let mut g = eig_function_backward(g_log.matrix(), &log_eig, SpectralFn::Log);
        for (w, layer) in self.bimaps.iter().zip(&layers).rev() {
            if !layer.reeig.passthrough {
                g = eig_function_backward(&g, &layer.reeig.eig, SpectralFn::ClampBelow(self.reeig_eps));
            }
            g = w.matrix() * &g * w.matrix().transpose();
        }
        if let Some(mask) = pool_mask(&self.filterbank) {
            g.component_mul_assign(&mask);
        }
        Ok(g)
    }
}

fn check_label(label: usize, n_classes: usize) -> Result<()> {
    if label >= n_classes {
        return Err(Error::invalid(format!("label {label} out of range for {n_classes} classes")));
    }
    Ok(())
}

pub(crate) fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn toy_arch(kind: FilterKind, specificity: Specificity, interband: bool) -> Architecture {
        Architecture {
            n_electrodes: 3,
            fs_hz: 100.0,
            n_classes: 2,
            n_filters: 2,
            specificity,
            filter_kind: kind,
            kernel_len: 5,
            interband,
            n_bire: 2,
            reeig_eps: 5e-4,
        }
    }

    fn toy_trial(seed: u64) -> MultichannelTrial {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * 40).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        MultichannelTrial::new(3, 40, 100.0, data).unwrap()
    }

    #[test]
    fn dims_halve_with_ceiling() {
        assert_eq!(layer_dims(12, 3), vec![12, 6, 3, 2]);
        assert_eq!(layer_dims(7, 2), vec![7, 4, 2]);
        let state = NetworkState::initialize(&toy_arch(FilterKind::Conv, Specificity::ChannelIndependent, true), 0).unwrap();
        assert_eq!(state.layer_dims(), vec![6, 3, 2]);
        assert_eq!(state.head.n_features(), 3);
        for w in &state.bimaps {
            assert!(w.orthonormality_error() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let state = NetworkState::initialize(&toy_arch(FilterKind::Conv, Specificity::ChannelSpecific, true), 1).unwrap();
        let trial = toy_trial(2);
        let cache = state.forward(&trial).unwrap();
        let g = state.backward(&trial, &cache, &DVector::zeros(2)).unwrap();
        assert_eq!(g, Gradients::zeros_like(&state));
    }

    #[test]
    fn foreign_cache_is_a_state_error() {
        let a = NetworkState::initialize(&toy_arch(FilterKind::Conv, Specificity::ChannelIndependent, true), 1).unwrap();
        let mut arch = toy_arch(FilterKind::Conv, Specificity::ChannelIndependent, true);
        arch.n_bire = 1;
        let b = NetworkState::initialize(&arch, 1).unwrap();
        let trial = toy_trial(3);
        let cache = b.forward(&trial).unwrap();
        assert!(matches!(a.backward(&trial, &cache, &DVector::zeros(2)), Err(Error::State(_))));
    }

    #[test]
    fn reeig_floor_holds_after_every_pair() {
        let state = NetworkState::initialize(&toy_arch(FilterKind::Conv, Specificity::ChannelIndependent, true), 5).unwrap();
        for seed in 0..20 {
            let trial = toy_trial(seed);
            let cache = state.forward(&trial).unwrap();
            for layer in &cache.layers {
                let min = sym_eig(&layer.reeig.output).unwrap().min_eigenvalue();
                assert!(min >= 5e-4 * (1.0 - 1e-9));
            }
        }
    }

    #[test]
    fn out_of_range_label_rejected() {
        let state = NetworkState::initialize(&toy_arch(FilterKind::Conv, Specificity::ChannelIndependent, true), 5).unwrap();
        assert!(matches!(state.loss_and_gradients(&toy_trial(0), 2), Err(Error::InvalidArgument(_))));
    }
}
