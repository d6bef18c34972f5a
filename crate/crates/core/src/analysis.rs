//! Post-hoc analyses of trained networks and filterbank searches:
//! frequency gain of the filterbank, peak counting, band coverage,
//! layer-by-layer probing, BiMap gain and electrode-frequency relevance.

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::classifiers::{LinearSvmModel, RsvmModel, SvmConfig};
use crate::error::{Error, Result};
use crate::net::{filterbank_forward, reeig, NetworkState, StiefelParam};
use crate::spd::{vectorize, RiemannianMetric, SpdMatrix, SymmetricMatrix};
use crate::trial::{Dataset, MultichannelTrial};

/// Gain of one filterbank output channel over the raw-signal frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSpectrum {
    pub channel: usize,
    pub filter: usize,
    /// Set for channel-specific filterbanks.
    pub electrode: Option<usize>,
    pub freqs_hz: Vec<f64>,
    pub gain_db: Vec<f64>,
}

/// Trial-averaged magnitude spectra (`|FFT| / √n`) of equal-length rows,
/// one spectrum per row index.
fn mean_magnitude_spectra<'a>(
    n_rows: usize,
    n: usize,
    rows_per_trial: impl Iterator<Item = Vec<&'a [f64]>>,
) -> Vec<Vec<f64>> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let n_bins = n / 2 + 1;
    let mut acc = vec![vec![0.0; n_bins]; n_rows];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut count = 0usize;
    let norm = (n as f64).sqrt();
    for rows in rows_per_trial {
        count += 1;
        for (r, row) in rows.iter().enumerate() {
            for (b, &v) in buf.iter_mut().zip(row.iter()) {
                *b = Complex::new(v, 0.0);
            }
            fft.process(&mut buf);
            for (a, z) in acc[r].iter_mut().zip(&buf) {
                *a += z.norm() / norm;
            }
        }
    }
    let scale = 1.0 / count.max(1) as f64;
    acc.iter_mut().flatten().for_each(|v| *v *= scale);
    acc
}

fn rfft_freqs(n: usize, fs: f64) -> Vec<f64> {
    (0..n / 2 + 1).map(|k| k as f64 * fs / n as f64).collect()
}

/// Natural cubic spline through `(xs, ys)` with strictly ascending `xs`.
/// Queries outside the knot range are clamped to it.
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n != ys.len() || n < 2 {
            return Err(Error::invalid("spline needs at least two matching knots"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("spline knots must be strictly ascending"));
        }
        // Second derivatives from the tridiagonal system, natural ends.
        let mut m = vec![0.0; n];
        if n > 2 {
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let rhs = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
                let diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
                c[i] = h1 / diag;
                d[i] = (rhs - h0 * d[i - 1]) / diag;
            }
            for i in (1..n - 1).rev() {
                m[i] = d[i] - c[i] * m[i + 1];
            }
        }
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let x = x.clamp(self.xs[0], self.xs[n - 1]);
        let i = match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Replaces non-finite entries by linear interpolation between the nearest
/// finite neighbours (constant beyond the ends). Returns `None` when more
/// than half the entries are non-finite.
pub fn repair_infinite(values: &[f64]) -> Option<Vec<f64>> {
    let bad = values.iter().filter(|v| !v.is_finite()).count();
    if bad * 2 > values.len() || bad == values.len() {
        return None;
    }
    let finite: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_finite()).collect();
    let mut out = values.to_vec();
    for i in 0..values.len() {
        if values[i].is_finite() {
            continue;
        }
        let p = finite.partition_point(|&j| j < i);
        out[i] = match (p.checked_sub(1).map(|k| finite[k]), finite.get(p)) {
            (Some(l), Some(&r)) => {
                let t = (i - l) as f64 / (r - l) as f64;
                values[l] + t * (values[r] - values[l])
            }
            (Some(l), None) => values[l],
            (None, Some(&r)) => values[r],
            (None, None) => unreachable!(),
        };
    }
    Some(out)
}

/// Frequency gain `20·log10(post / pre)` of every filterbank channel, so
/// positive values mean amplification. Spectra are trial-averaged FFT
/// magnitudes; the shorter filtered spectrum is spline-interpolated onto the
/// raw grid. Channels whose gain is more than half `-inf` are dropped, so the
/// result may be empty.
pub fn freq_gain(state: &NetworkState, trials: &[MultichannelTrial]) -> Result<Vec<GainSpectrum>> {
    let first = trials.first().ok_or_else(|| Error::invalid("frequency gain needs at least one trial"))?;
    let fb = &state.filterbank;
    if trials
        .iter()
        .any(|t| t.n_electrodes() != fb.n_electrodes || t.n_samples() != first.n_samples())
    {
        return Err(Error::invalid("trials do not match the network's electrode count or each other"));
    }
    let n = first.n_samples();
    let fs = first.fs_hz();
    let filtered: Vec<_> = trials
        .par_iter()
        .map(|t| filterbank_forward(t, fb))
        .collect::<Result<_>>()?;
    let m = filtered[0].n_samples;
    let raw = mean_magnitude_spectra(fb.n_electrodes, n, trials.iter().map(|t| t.rows().collect()));
    let post = mean_magnitude_spectra(fb.n_channels(), m, filtered.iter().map(|f| f.rows().collect()));
    let raw_freqs = rfft_freqs(n, fs);
    let post_freqs = rfft_freqs(m, fs);

    let mut out = Vec::new();
    for (c, spec) in post.iter().enumerate() {
        let e = c % fb.n_electrodes;
        let interp: Vec<f64> = if m == n {
            spec.clone()
        } else {
            let spline = CubicSpline::new(&post_freqs, spec)?;
            raw_freqs.iter().map(|&f| spline.eval(f).max(0.0)).collect()
        };
        let gain: Vec<f64> = interp
            .iter()
            .zip(&raw[e])
            .map(|(&po, &pr)| {
                let g = 20.0 * (po / pr).log10();
                if g.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    g
                }
            })
            .collect();
        if let Some(gain_db) = repair_infinite(&gain) {
            out.push(GainSpectrum {
                channel: c,
                filter: c / fb.n_electrodes,
                electrode: match fb.specificity {
                    crate::net::Specificity::ChannelSpecific => Some(e),
                    crate::net::Specificity::ChannelIndependent => None,
                },
                freqs_hz: raw_freqs.clone(),
                gain_db,
            });
        }
    }
    Ok(out)
}

/// Element-wise mean of spectra sharing one grid.
pub fn average_spectrum(spectra: &[GainSpectrum]) -> Option<Vec<f64>> {
    let first = spectra.first()?;
    let mut acc = vec![0.0; first.gain_db.len()];
    for s in spectra {
        for (a, v) in acc.iter_mut().zip(&s.gain_db) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|v| *v /= spectra.len() as f64);
    Some(acc)
}

pub const SMOOTHING_HZ: f64 = 2.0;
pub const MIN_PEAK_WIDTH_HZ: f64 = 1.0;
pub const PEAK_HEIGHT_STD: f64 = 1.5;

/// Centered moving average; the window shrinks at the edges.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + window - half).min(n);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Indices of local maxima. A plateau counts once, at its middle (left of
/// middle for even widths).
fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut peaks = vec![];
    let mut i = 1;
    while i + 1 < x.len() {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead < x.len() - 1 && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                peaks.push((i + ahead - 1) / 2);
                i = ahead;
            }
        }
        i += 1;
    }
    peaks
}

/// Prominence and the interpolated width at half prominence, in samples.
fn prominence_and_width(x: &[f64], p: usize) -> (f64, f64) {
    let mut left_min = x[p];
    let mut lb = p;
    let mut i = p;
    while i > 0 {
        i -= 1;
        if x[i] > x[p] {
            break;
        }
        if x[i] < left_min {
            left_min = x[i];
            lb = i;
        }
    }
    let mut right_min = x[p];
    let mut rb = p;
    let mut i = p;
    while i + 1 < x.len() {
        i += 1;
        if x[i] > x[p] {
            break;
        }
        if x[i] < right_min {
            right_min = x[i];
            rb = i;
        }
    }
    let prominence = x[p] - left_min.max(right_min);
    let h = x[p] - 0.5 * prominence;
    let mut l = p;
    while l > lb && x[l] > h {
        l -= 1;
    }
    let left = if x[l] < h {
        l as f64 + (h - x[l]) / (x[l + 1] - x[l])
    } else {
        l as f64
    };
    let mut r = p;
    while r < rb && x[r] > h {
        r += 1;
    }
    let right = if x[r] < h {
        r as f64 - (h - x[r]) / (x[r - 1] - x[r])
    } else {
        r as f64
    };
    (prominence, right - left)
}

/// Peak positions (Hz) after smoothing over 2 Hz and removing the median.
/// A peak must rise at least 1.5 standard deviations above the median and be
/// at least 1 Hz wide at half prominence.
pub fn find_peaks(freqs_hz: &[f64], values: &[f64]) -> Vec<f64> {
    if freqs_hz.len() < 3 || freqs_hz.len() != values.len() {
        return vec![];
    }
    let df = freqs_hz[1] - freqs_hz[0];
    let window = ((SMOOTHING_HZ / df).round() as usize).max(1);
    let smooth = moving_average(values, window);
    let med = median(&smooth);
    let x: Vec<f64> = smooth.iter().map(|v| v - med).collect();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    if !(std > 0.0) {
        return vec![];
    }
    let min_width = MIN_PEAK_WIDTH_HZ / df;
    local_maxima(&x)
        .into_iter()
        .filter(|&p| x[p] >= PEAK_HEIGHT_STD * std)
        .filter(|&p| prominence_and_width(&x, p).1 >= min_width)
        .map(|p| freqs_hz[p])
        .collect()
}

pub fn peak_count(gs: &GainSpectrum) -> usize {
    find_peaks(&gs.freqs_hz, &gs.gain_db).len()
}

/// Percentages of spectra with 0, 1 and more than 1 peak.
pub fn multiband_histogram(spectra: &[GainSpectrum]) -> Option<[f64; 3]> {
    histogram_of_counts(&spectra.iter().map(peak_count).collect::<Vec<_>>())
}

pub fn histogram_of_counts(counts: &[usize]) -> Option<[f64; 3]> {
    if counts.is_empty() {
        return None;
    }
    let mut h = [0.0; 3];
    for &c in counts {
        h[c.min(2)] += 1.0;
    }
    let n = counts.len() as f64;
    Some(h.map(|v| 100.0 * v / n))
}

/// Percentage of `(low, high)` intervals containing each grid frequency.
pub fn chosen_freq_coverage(bands: &[(f64, f64)], freqs_hz: &[f64]) -> Vec<f64> {
    if bands.is_empty() {
        return vec![0.0; freqs_hz.len()];
    }
    freqs_hz
        .iter()
        .map(|&f| {
            let inside = bands.iter().filter(|(lo, hi)| *lo <= f && f <= *hi).count();
            100.0 * inside as f64 / bands.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub layer: String,
    pub classifier: String,
    pub accuracy: f64,
    /// `accuracy` minus the network's own test accuracy.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProbe {
    pub network_accuracy: f64,
    pub results: Vec<ProbeResult>,
}

/// SPD feature maps of one trial: pooled covariance, then the output of each
/// BiMap and ReEig, then LogEig; plus the network's own prediction.
fn layer_features(state: &NetworkState, trial: &MultichannelTrial) -> Result<(Vec<(String, SymmetricMatrix)>, usize)> {
    let cache = state.forward(trial)?;
    let mut maps = vec![("cov".to_string(), cache.cov.clone())];
    for (k, layer) in cache.layers.iter().enumerate() {
        maps.push((format!("bimap{}", k + 1), layer.bimap_out.clone()));
        maps.push((format!("reeig{}", k + 1), layer.reeig.output.clone()));
    }
    maps.push(("logeig".to_string(), cache.logeig.clone()));
    let pred = crate::net::network::argmax(&cache.logits);
    Ok((maps, pred))
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Fits a linear SVM on vectorized features and an rSVM on tangent
/// features at every stage, training on `train` and scoring on `test`.
/// Matrices that are not positive definite are passed through ReEig before
/// the rSVM. LogEig outputs are probed with the SVM and with the network's
/// own head.
pub fn lbl_probe(
    state: &NetworkState,
    train: &Dataset,
    test: &Dataset,
    metric: RiemannianMetric,
) -> Result<LayerProbe> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("layer probing needs non-empty train and test sets"));
    }
    let feats = |d: &Dataset| -> Result<Vec<(Vec<(String, SymmetricMatrix)>, usize)>> {
        d.trials.par_iter().map(|t| layer_features(state, t)).collect()
    };
    let tr = feats(train)?;
    let te = feats(test)?;
    let network_pred: Vec<usize> = te.iter().map(|(_, p)| *p).collect();
    let network_accuracy = accuracy(&network_pred, &test.labels);
    let cfg = SvmConfig::default();
    let n_layers = tr[0].0.len();
    let mut results = Vec::new();
    let mut push = |layer: &str, classifier: &str, acc: f64| {
        results.push(ProbeResult {
            layer: layer.to_string(),
            classifier: classifier.to_string(),
            accuracy: acc,
            delta: acc - network_accuracy,
        })
    };
    for l in 0..n_layers {
        let name = tr[0].0[l].0.clone();
        let xs: Vec<Vec<f64>> = tr.iter().map(|(m, _)| vectorize(&m[l].1)).collect();
        let svm = LinearSvmModel::fit(&xs, &train.labels, train.n_classes, &cfg)?;
        let pred: Vec<usize> = te.iter().map(|(m, _)| svm.predict(&vectorize(&m[l].1))).collect();
        push(&name, "svm", accuracy(&pred, &test.labels));

        if name == "logeig" {
            let pred: Vec<usize> = te
                .iter()
                .map(|(m, _)| {
                    let logits = state.head.logits(&vectorize(&m[l].1));
                    crate::net::network::argmax(&logits)
                })
                .collect();
            push(&name, "head", accuracy(&pred, &test.labels));
            continue;
        }
        let to_spd = |s: &SymmetricMatrix| -> Result<SpdMatrix> {
            match SpdMatrix::new(s.clone()) {
                Ok(m) => Ok(m),
                Err(_) => SpdMatrix::new(reeig(s, state.reeig_eps)?),
            }
        };
        let mats_tr: Vec<SpdMatrix> = tr.iter().map(|(m, _)| to_spd(&m[l].1)).collect::<Result<_>>()?;
        let mats_te: Vec<SpdMatrix> = te.iter().map(|(m, _)| to_spd(&m[l].1)).collect::<Result<_>>()?;
        let rsvm = RsvmModel::fit(&mats_tr, &train.labels, train.n_classes, metric, &cfg)?;
        let pred: Vec<usize> = mats_te.iter().map(|m| rsvm.predict(m)).collect::<Result<_>>()?;
        push(&name, "rsvm", accuracy(&pred, &test.labels));
    }
    Ok(LayerProbe {
        network_accuracy,
        results,
    })
}

/// `G_pq = (Σ_i W_pi)(Σ_j W_qj)` and the row sums of `G`.
pub fn bimap_gain(w: &StiefelParam) -> (DMatrix<f64>, Vec<f64>) {
    let m = w.matrix();
    let r: Vec<f64> = (0..m.nrows()).map(|p| m.row(p).sum()).collect();
    let n = r.len();
    let g = DMatrix::from_fn(n, n, |p, q| r[p] * r[q]);
    let sums = (0..n).map(|p| g.row(p).sum()).collect();
    (g, sums)
}

/// Relevance of each electrode and frequency, averaged per class.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    pub freqs_hz: Vec<f64>,
    /// `values[class][electrode][freq]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

fn normalized_gain(gain_db: &[f64]) -> Vec<f64> {
    let lo = gain_db.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = gain_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        gain_db.iter().map(|g| (g - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; gain_db.len()]
    }
}

/// For each trial, the gradient of the true-class probability with respect
/// to the pooled covariance is summed over rows, giving one value per
/// channel. Each channel value scales that channel's min-max normalized gain
/// spectrum; channels are then summed per electrode and averaged per class.
/// Channels without a gain spectrum contribute nothing.
pub fn electrode_freq_relevance(state: &NetworkState, train: &Dataset, spectra: &[GainSpectrum]) -> Result<RelevanceMap> {
    let freqs = spectra
        .first()
        .map(|s| s.freqs_hz.clone())
        .ok_or_else(|| Error::invalid("relevance needs at least one gain spectrum"))?;
    let fb = &state.filterbank;
    let n_ch = fb.n_channels();
    let n_e = fb.n_electrodes;
    let mut gains: Vec<Option<Vec<f64>>> = vec![None; n_ch];
    for s in spectra {
        if s.channel >= n_ch || s.freqs_hz.len() != freqs.len() {
            return Err(Error::invalid(format!("gain spectrum for channel {} does not fit the network", s.channel)));
        }
        gains[s.channel] = Some(normalized_gain(&s.gain_db));
    }
    let channel_scores: Vec<Vec<f64>> = train
        .trials
        .par_iter()
        .zip(&train.labels)
        .map(|(t, &label)| {
            let cov = state.forward(t)?.cov;
            let g = state.probability_gradient_wrt_cov(&cov, label)?;
            Ok((0..n_ch).map(|c| g.row(c).sum()).collect())
        })
        .collect::<Result<_>>()?;
    let n_classes = train.n_classes;
    let mut values = vec![vec![vec![0.0; freqs.len()]; n_e]; n_classes];
    let counts = train.class_counts();
    for (scores, &label) in channel_scores.iter().zip(&train.labels) {
        for (c, s) in scores.iter().enumerate() {
            if let Some(gain) = &gains[c] {
                let row = &mut values[label][c % n_e];
                for (v, g) in row.iter_mut().zip(gain) {
                    *v += s * g;
                }
            }
        }
    }
    for (k, class) in values.iter_mut().enumerate() {
        if counts[k] > 0 {
            class.iter_mut().flatten().for_each(|v| *v /= counts[k] as f64);
        }
    }
    Ok(RelevanceMap { freqs_hz: freqs, values })
}

pub fn gain_csv(model_id: &str, spectra: &[GainSpectrum]) -> String {
    let mut out = String::from("model_id,channel,freq_hz,gain_db\n");
    for s in spectra {
        for (f, g) in s.freqs_hz.iter().zip(&s.gain_db) {
            out.push_str(&format!("{model_id},{},{f},{g}\n", s.channel));
        }
    }
    out
}

pub fn peaks_csv(spectra: &[GainSpectrum]) -> String {
    let mut out = String::from("channel,n_peaks\n");
    for s in spectra {
        out.push_str(&format!("{},{}\n", s.channel, peak_count(s)));
    }
    out
}

pub fn coverage_csv(freqs_hz: &[f64], percent: &[f64]) -> String {
    let mut out = String::from("freq_hz,percent\n");
    for (f, p) in freqs_hz.iter().zip(percent) {
        out.push_str(&format!("{f},{p}\n"));
    }
    out
}

pub fn lbl_csv(probe: &LayerProbe) -> String {
    let mut out = String::from("layer,classifier,accuracy\n");
    out.push_str(&format!("network,network,{}\n", probe.network_accuracy));
    for r in &probe.results {
        out.push_str(&format!("{},{},{}\n", r.layer, r.classifier, r.accuracy));
    }
    out
}

pub fn relevance_csv(map: &RelevanceMap) -> String {
    let mut out = String::from("class,electrode,freq_hz,value\n");
    for (k, class) in map.values.iter().enumerate() {
        for (e, row) in class.iter().enumerate() {
            for (f, v) in map.freqs_hz.iter().zip(row) {
                out.push_str(&format!("{k},{e},{f},{v}\n"));
            }
        }
    }
    out
}

pub fn bimap_gain_csv(layer: usize, sums: &[f64]) -> String {
    let mut out = String::from("layer,row,value\n");
    for (p, v) in sums.iter().enumerate() {
        out.push_str(&format!("{layer},{p},{v}\n"));
    }
    out
}
