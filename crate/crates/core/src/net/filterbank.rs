//! Temporal filterbank front end: valid 1-D convolution with either free
//! kernels or band-pass kernels generated from a pair of cutoffs.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::spd::{remove_interband, scm_rows, SymmetricMatrix};
use crate::trial::MultichannelTrial;

pub const DEFAULT_KERNEL_LEN: usize = 25;

/// Lowest initial band edge used when tiling sinc bands.
const SINC_INIT_LOW_HZ: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Specificity {
    /// One filter per band, shared by every electrode.
    ChannelIndependent,
    /// One filter per band and electrode.
    ChannelSpecific,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Conv,
    Sinc,
}

impl std::str::FromStr for Specificity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chind" | "independent" | "channel-independent" => Ok(Specificity::ChannelIndependent),
            "chspec" | "specific" | "channel-specific" => Ok(Specificity::ChannelSpecific),
            other => Err(Error::invalid(format!("unknown specificity `{other}` (expected chind or chspec)"))),
        }
    }
}

impl std::fmt::Display for Specificity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Specificity::ChannelIndependent => "chind",
            Specificity::ChannelSpecific => "chspec",
        })
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conv" => Ok(FilterKind::Conv),
            "sinc" => Ok(FilterKind::Sinc),
            other => Err(Error::invalid(format!("unknown filter kind `{other}` (expected conv or sinc)"))),
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterKind::Conv => "conv",
            FilterKind::Sinc => "sinc",
        })
    }
}

/// Band-pass cutoffs in Hz. The effective band is obtained by clamping, see
/// [`Band::effective`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub low_hz: f64,
    pub bandwidth_hz: f64,
}

impl Band {
    pub fn new(low_hz: f64, bandwidth_hz: f64) -> Self {
        Self { low_hz, bandwidth_hz }
    }

    /// `(low, high)` after clamping both cutoffs into `[0, nyquist]`.
    pub fn effective(&self, nyquist: f64) -> (f64, f64) {
        let low = self.low_hz.clamp(0.0, nyquist);
        let high = (low + self.bandwidth_hz.max(0.0)).min(nyquist);
        (low, high)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterParams {
    Conv(Vec<Vec<f64>>),
    Sinc(Vec<Band>),
}

impl FilterParams {
    pub fn len(&self) -> usize {
        match self {
            FilterParams::Conv(k) => k.len(),
            FilterParams::Sinc(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Learnable filterbank definition. Channel `f·n_electrodes + e` of the
/// output holds electrode `e` filtered by band `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankSpec {
    pub n_filters: usize,
    pub n_electrodes: usize,
    pub fs_hz: f64,
    pub specificity: Specificity,
    pub kernel_len: usize,
    pub interband: bool,
    pub params: FilterParams,
}

impl FilterbankSpec {
    pub fn new(
        n_filters: usize,
        n_electrodes: usize,
        fs_hz: f64,
        specificity: Specificity,
        kernel_len: usize,
        interband: bool,
        params: FilterParams,
    ) -> Result<Self> {
        if n_filters == 0 || n_electrodes == 0 || kernel_len == 0 {
            return Err(Error::invalid("filterbank needs at least one filter, electrode and tap"));
        }
        if !(fs_hz > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs_hz}")));
        }
        if specificity == Specificity::ChannelSpecific && n_filters > 1 && !interband {
            return Err(Error::invalid(
                "channel-specific filterbanks with more than one filter always keep interband covariance",
            ));
        }
        let expected = match specificity {
            Specificity::ChannelIndependent => n_filters,
            Specificity::ChannelSpecific => n_filters * n_electrodes,
        };
        if params.len() != expected {
            return Err(Error::invalid(format!(
                "filterbank expects {expected} filter parameter sets, got {}",
                params.len()
            )));
        }
        if let FilterParams::Conv(kernels) = &params {
            if kernels.iter().any(|k| k.len() != kernel_len) {
                return Err(Error::invalid(format!("every conv kernel must have {kernel_len} taps")));
            }
        }
        Ok(Self {
            n_filters,
            n_electrodes,
            fs_hz,
            specificity,
            kernel_len,
            interband,
            params,
        })
    }

    /// Seeded initialization: Gaussian kernels scaled by `1/√L` for conv
    /// filters, bands evenly tiling `(4 Hz, Nyquist)` for sinc filters.
    #[allow(clippy::too_many_arguments)]
    pub fn initialize<R: Rng>(
        n_filters: usize,
        n_electrodes: usize,
        fs_hz: f64,
        specificity: Specificity,
        kind: FilterKind,
        kernel_len: usize,
        interband: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let count = match specificity {
            Specificity::ChannelIndependent => n_filters,
            Specificity::ChannelSpecific => n_filters * n_electrodes,
        };
        let params = match kind {
            FilterKind::Conv => {
                let scale = 1.0 / (kernel_len as f64).sqrt();
                FilterParams::Conv(
                    (0..count)
                        .map(|_| {
                            (0..kernel_len)
                                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                                .collect()
                        })
                        .collect(),
                )
            }
            FilterKind::Sinc => {
                let nyquist = fs_hz / 2.0;
                let width = (nyquist - SINC_INIT_LOW_HZ) / n_filters as f64;
                FilterParams::Sinc(
                    (0..count)
                        .map(|i| {
                            let f = match specificity {
                                Specificity::ChannelIndependent => i,
                                Specificity::ChannelSpecific => i / n_electrodes,
                            };
                            Band::new(SINC_INIT_LOW_HZ + f as f64 * width, width)
                        })
                        .collect(),
                )
            }
        };
        Self::new(n_filters, n_electrodes, fs_hz, specificity, kernel_len, interband, params)
    }

    pub fn kind(&self) -> FilterKind {
        match self.params {
            FilterParams::Conv(_) => FilterKind::Conv,
            FilterParams::Sinc(_) => FilterKind::Sinc,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.n_filters * self.n_electrodes
    }

    pub fn nyquist(&self) -> f64 {
        self.fs_hz / 2.0
    }

    /// Index into the parameter list used by output channel `channel`.
    pub fn kernel_index(&self, channel: usize) -> usize {
        match self.specificity {
            Specificity::ChannelIndependent => channel / self.n_electrodes,
            Specificity::ChannelSpecific => channel,
        }
    }

    pub fn kernels(&self) -> Vec<Vec<f64>> {
        match &self.params {
            FilterParams::Conv(k) => k.clone(),
            FilterParams::Sinc(bands) => bands
                .iter()
                .map(|b| sinc_kernel(b.low_hz, b.bandwidth_hz, self.fs_hz, self.kernel_len))
                .collect(),
        }
    }

    /// Bands of a sinc filterbank, `None` for free kernels.
    pub fn bands(&self) -> Option<&[Band]> {
        match &self.params {
            FilterParams::Sinc(b) => Some(b),
            FilterParams::Conv(_) => None,
        }
    }
}

fn hamming(k: usize, len: usize) -> f64 {
    if len <= 1 {
        return 1.0;
    }
    0.54 - 0.46 * (2.0 * PI * k as f64 / (len - 1) as f64).cos()
}

/// `2f·sinc(2f·t)` for normalized frequency `f` (cycles per sample).
fn lowpass_term(f: f64, t: f64) -> f64 {
    if t == 0.0 {
        2.0 * f
    } else {
        (2.0 * PI * f * t).sin() / (PI * t)
    }
}

/// Hamming-windowed band-pass kernel: the difference of two ideal low-pass
/// impulse responses at the clamped cutoffs. Unit gain in the passband.
pub fn sinc_kernel(low_hz: f64, bandwidth_hz: f64, fs_hz: f64, len: usize) -> Vec<f64> {
    let (low, high) = Band::new(low_hz, bandwidth_hz).effective(fs_hz / 2.0);
    let (l, h) = (low / fs_hz, high / fs_hz);
    let center = (len as f64 - 1.0) / 2.0;
    (0..len)
        .map(|k| {
            let t = k as f64 - center;
            hamming(k, len) * (lowpass_term(h, t) - lowpass_term(l, t))
        })
        .collect()
}

/// Kernel together with its derivatives with respect to the requested low
/// cutoff and bandwidth (zero where clamping is active).
pub fn sinc_kernel_with_grad(
    low_hz: f64,
    bandwidth_hz: f64,
    fs_hz: f64,
    len: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let nyquist = fs_hz / 2.0;
    let kernel = sinc_kernel(low_hz, bandwidth_hz, fs_hz, len);
    let (low, high) = Band::new(low_hz, bandwidth_hz).effective(nyquist);
    let dlow_eff = if low_hz > 0.0 && low_hz < nyquist { 1.0 } else { 0.0 };
    let high_free = bandwidth_hz > 0.0 && low + bandwidth_hz < nyquist;
    let (dhigh_dlow, dhigh_dbw) = if high_free { (dlow_eff, 1.0) } else { (0.0, 0.0) };
    let (l, h) = (low / fs_hz, high / fs_hz);
    let center = (len as f64 - 1.0) / 2.0;
    let mut d_low = Vec::with_capacity(len);
    let mut d_bw = Vec::with_capacity(len);
    for k in 0..len {
        let t = k as f64 - center;
        let w = hamming(k, len);
        // d/df [2f·sinc(2ft)] = 2·cos(2πft), per Hz divide by fs.
        let dk_dhigh = w * 2.0 * (2.0 * PI * h * t).cos() / fs_hz;
        let dk_dlow = -w * 2.0 * (2.0 * PI * l * t).cos() / fs_hz;
        d_low.push(dk_dlow * dlow_eff + dk_dhigh * dhigh_dlow);
        d_bw.push(dk_dhigh * dhigh_dbw);
    }
    (kernel, d_low, d_bw)
}

/// Filtered channels, `n_channels × n_samples`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredChannels {
    pub n_channels: usize,
    pub n_samples: usize,
    pub data: Vec<f64>,
}

impl FilteredChannels {
    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_samples.max(1))
    }

    /// Splits into one trial per filter, each holding all electrodes.
    pub fn per_filter(&self, n_electrodes: usize, fs_hz: f64) -> Result<Vec<MultichannelTrial>> {
        self.data
            .chunks_exact(n_electrodes * self.n_samples)
            .map(|chunk| MultichannelTrial::new(n_electrodes, self.n_samples, fs_hz, chunk.to_vec()))
            .collect()
    }
}

/// Valid cross-correlation `y[t] = Σ_k kernel[k]·x[t + k]`.
pub(crate) fn correlate_valid(x: &[f64], kernel: &[f64], out: &mut [f64]) {
    for (t, o) in out.iter_mut().enumerate() {
        *o = kernel.iter().zip(&x[t..]).map(|(k, v)| k * v).sum();
    }
}

pub fn filterbank_forward(trial: &MultichannelTrial, fb: &FilterbankSpec) -> Result<FilteredChannels> {
    apply_kernels(trial, fb, &fb.kernels())
}

pub(crate) fn apply_kernels(
    trial: &MultichannelTrial,
    fb: &FilterbankSpec,
    kernels: &[Vec<f64>],
) -> Result<FilteredChannels> {
    if trial.n_electrodes() != fb.n_electrodes {
        return Err(Error::invalid(format!(
            "trial has {} electrodes, filterbank expects {}",
            trial.n_electrodes(),
            fb.n_electrodes
        )));
    }
    if trial.n_samples() < fb.kernel_len {
        return Err(Error::invalid(format!(
            "trial of {} samples is shorter than the {}-tap kernel",
            trial.n_samples(),
            fb.kernel_len
        )));
    }
    let n_out = trial.n_samples() - fb.kernel_len + 1;
    let n_channels = fb.n_channels();
    let mut data = vec![0.0; n_channels * n_out];
    for (c, out) in data.chunks_exact_mut(n_out).enumerate() {
        let e = c % fb.n_electrodes;
        correlate_valid(trial.row(e), &kernels[fb.kernel_index(c)], out);
    }
    Ok(FilteredChannels {
        n_channels,
        n_samples: n_out,
        data,
    })
}

/// Covariance pooling of filtered channels. Without interband covariance
/// the off-diagonal filter blocks are zeroed.
pub fn cov_pool(filtered: &FilteredChannels, fb: &FilterbankSpec) -> Result<SymmetricMatrix> {
    let rows: Vec<&[f64]> = filtered.rows().collect();
    let c = scm_rows(&rows, filtered.n_samples)?;
    if fb.interband || fb.n_filters == 1 {
        Ok(c)
    } else {
        remove_interband(&c, &vec![fb.n_electrodes; fb.n_filters])
    }
}

/// Mask selecting the entries of the pooled covariance that carry signal.
pub(crate) fn pool_mask(fb: &FilterbankSpec) -> Option<DMatrix<f64>> {
    if fb.interband || fb.n_filters == 1 {
        return None;
    }
    let n = fb.n_channels();
    let ne = fb.n_electrodes;
    Some(DMatrix::from_fn(n, n, |i, j| if i / ne == j / ne { 1.0 } else { 0.0 }))
}
