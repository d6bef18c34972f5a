//! Files: the trial archive, run and synthesis configurations, model files,
//! synthetic data generation and atomic output writes.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::classifiers::Proxy;
use crate::error::{Error, Result};
use crate::fbopt::SearchMethod;
use crate::net::{Band, FilterParams, FilterbankSpec, Head, NetworkState, Specificity, StiefelParam};
use crate::spd::RiemannianMetric;
use crate::train::RunConfig;
use crate::trial::{Dataset, MultichannelTrial};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"SPT1";
pub const ARCHIVE_VERSION: u32 = 1;
const ARCHIVE_HEADER_LEN: usize = 28;
pub const MODEL_MAGIC: &[u8; 4] = b"SPDM";
pub const MODEL_VERSION: u32 = 1;

/// Little-endian cursor that reports the byte offset of every failure.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(self.err(format!("truncated {what}: expected {n} bytes, found {available}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("size overflow"))?, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} unexpected trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

/// Serializes a dataset as an `SPT1` archive. Samples are stored as `f32`.
pub fn encode_archive(data: &Dataset) -> Result<Vec<u8>> {
    if data.is_empty() {
        return Err(Error::invalid("cannot write an archive without trials"));
    }
    let to_u32 = |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} too large")));
    let mut out = Vec::with_capacity(ARCHIVE_HEADER_LEN + data.len() * (4 + 4 * data.n_electrodes() * data.n_samples()));
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(data.len(), "trial count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(data.n_electrodes(), "electrode count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(data.n_samples(), "sample count")?.to_le_bytes());
    out.extend_from_slice(&(data.fs_hz() as f32).to_le_bytes());
    out.extend_from_slice(&to_u32(data.n_classes, "class count")?.to_le_bytes());
    for &l in &data.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for t in &data.trials {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_archive(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != ARCHIVE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected \"SPT1\""),
        });
    }
    let version = r.u32("version")?;
    if version != ARCHIVE_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported archive version {version}"),
        });
    }
    let n_trials = r.u32("trial count")? as usize;
    let n_electrodes = r.u32("electrode count")? as usize;
    let n_samples = r.u32("sample count")? as usize;
    let fs_pos = r.pos;
    let fs = r.f32("sampling rate")?;
    let n_classes = r.u32("class count")? as usize;
    if n_trials == 0 || n_electrodes == 0 || n_samples == 0 {
        return Err(Error::Format {
            offset: 8,
            message: "archive dimensions must be non-zero".into(),
        });
    }
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(Error::Format {
            offset: fs_pos as u64,
            message: format!("invalid sampling rate {fs}"),
        });
    }
    let mut labels = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let at = r.pos;
        let l = r.u32("labels")? as usize;
        if l >= n_classes {
            return Err(Error::Format {
                offset: at as u64,
                message: format!("label {l} outside [0, {n_classes})"),
            });
        }
        labels.push(l);
    }
    let per_trial = n_electrodes * n_samples;
    let payload_len = n_trials
        .checked_mul(per_trial)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| r.err("payload size overflows"))?;
    let payload = r.take(payload_len, "payload")?;
    r.finish()?;
    let trials = payload
        .chunks_exact(per_trial * 4)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            MultichannelTrial::new(n_electrodes, n_samples, f64::from(fs), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(trials, labels, n_classes)
}

pub fn read_archive(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes)
}

pub fn write_archive(path: &Path, data: &Dataset) -> Result<()> {
    write_atomic(path, &encode_archive(data)?)
}

/// Writes through a temporary file in the destination directory, then
/// renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// `key = value` lines; `#` starts a comment. Returns `(line, key, value)`
/// triples with duplicates rejected unless `repeatable` allows them.
fn parse_pairs(text: &str, repeatable: &[&str]) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            key: content.to_string(),
            message: "expected `key = value`".into(),
        })?;
        let key = k.trim().to_string();
        if !repeatable.contains(&key.as_str()) && out.iter().any(|(_, seen, _)| *seen == key) {
            return Err(Error::Config {
                line,
                key,
                message: "duplicate key".into(),
            });
        }
        out.push((line, key, v.trim().to_string()));
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Config {
        line,
        key: key.to_string(),
        message: format!("cannot parse `{value}`: {e}"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            key: key.to_string(),
            message: format!("expected true or false, got `{value}`"),
        }),
    }
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|s| parse_value(line, key, s.trim()))
        .collect()
}

fn parse_bands(line: usize, key: &str, value: &str) -> Result<Vec<Band>> {
    value
        .split(',')
        .map(|item| {
            let (lo, bw) = item.trim().split_once(':').ok_or_else(|| Error::Config {
                line,
                key: key.to_string(),
                message: format!("band `{item}` is not `low:bandwidth`"),
            })?;
            Ok(Band::new(parse_value(line, key, lo.trim())?, parse_value(line, key, bw.trim())?))
        })
        .collect()
}

pub const RUN_CONFIG_KEYS: &[&str] = &[
    "n_filters",
    "specificity",
    "filter_kind",
    "interband",
    "n_bire",
    "kernel_len",
    "reeig_eps",
    "epochs",
    "batch_size",
    "lr",
    "weight_decay",
    "seeds",
    "n_classes",
    "proxy",
    "metric",
    "budget_iters",
    "budget_hours",
    "bands",
];

/// Parses a run configuration. `n_filters` is required; every other key
/// falls back to its default.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut has_filters = false;
    for (line, key, value) in parse_pairs(text, &[])? {
        let v = value.as_str();
        let k = key.as_str();
        match k {
            "n_filters" => {
                cfg.n_filters = parse_value(line, k, v)?;
                has_filters = true;
            }
            "specificity" => cfg.specificity = parse_value(line, k, v)?,
            "filter_kind" => cfg.filter_kind = parse_value(line, k, v)?,
            "interband" => cfg.interband = parse_bool(line, k, v)?,
            "n_bire" => cfg.n_bire = parse_value(line, k, v)?,
            "kernel_len" => cfg.kernel_len = parse_value(line, k, v)?,
            "reeig_eps" => cfg.reeig_eps = parse_value(line, k, v)?,
            "epochs" => cfg.epochs = parse_value(line, k, v)?,
            "batch_size" => cfg.batch_size = parse_value(line, k, v)?,
            "lr" => cfg.lr = parse_value(line, k, v)?,
            "weight_decay" => cfg.weight_decay = parse_value(line, k, v)?,
            "seeds" => cfg.seeds = parse_list(line, k, v)?,
            "n_classes" => cfg.n_classes = Some(parse_value(line, k, v)?),
            "proxy" => cfg.proxy = parse_value::<Proxy>(line, k, v)?,
            "metric" => cfg.metric = parse_value::<RiemannianMetric>(line, k, v)?,
            "budget_iters" => cfg.budget_iters = parse_value(line, k, v)?,
            "budget_hours" => cfg.budget_hours = parse_value(line, k, v)?,
            "bands" => cfg.fixed_bands = Some(parse_bands(line, k, v)?),
            _ => {
                return Err(Error::Config {
                    line,
                    key,
                    message: format!("unknown key (expected one of {})", RUN_CONFIG_KEYS.join(", ")),
                })
            }
        }
    }
    if !has_filters {
        return Err(Error::Config {
            line: 0,
            key: "n_filters".into(),
            message: "required key missing".into(),
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run_config(&text)
}

pub fn search_config(cfg: &RunConfig, seed: u64, method: SearchMethod) -> crate::fbopt::SearchConfig {
    crate::fbopt::SearchConfig {
        n_filters: cfg.n_filters,
        specificity: cfg.specificity,
        interband: cfg.interband,
        kernel_len: cfg.kernel_len,
        reeig_eps: cfg.reeig_eps,
        proxy: cfg.proxy,
        metric: cfg.metric,
        budget_iters: cfg.budget_iters,
        budget_hours: cfg.budget_hours,
        seed,
        method,
    }
}

/// A class-specific sinusoid on a set of electrodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub class: usize,
    pub electrodes: Vec<usize>,
    pub freq_hz: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_electrodes: usize,
    pub n_samples: usize,
    pub fs_hz: f64,
    pub n_classes: usize,
    pub trials_per_class: usize,
    pub noise_sigma: f64,
    pub plants: Vec<Plant>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_electrodes == 0 || self.n_samples < 2 || self.trials_per_class == 0 {
            return Err(Error::invalid("synthetic spec needs electrodes, at least 2 samples and trials"));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("synthetic spec needs at least two classes"));
        }
        if !(self.fs_hz > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("sampling rate must be positive and noise sigma non-negative"));
        }
        let nyquist = self.fs_hz / 2.0;
        for p in &self.plants {
            if p.class >= self.n_classes {
                return Err(Error::invalid(format!("plant class {} outside [0, {})", p.class, self.n_classes)));
            }
            if let Some(&e) = p.electrodes.iter().find(|&&e| e >= self.n_electrodes) {
                return Err(Error::invalid(format!("plant electrode {e} outside [0, {})", self.n_electrodes)));
            }
            if !(p.freq_hz > 0.0) || p.freq_hz >= nyquist {
                return Err(Error::invalid(format!(
                    "plant frequency {} Hz must lie in (0, {nyquist}) Hz",
                    p.freq_hz
                )));
            }
            if !(p.amplitude > 0.0) {
                return Err(Error::invalid(format!("plant amplitude {} must be positive", p.amplitude)));
            }
        }
        Ok(())
    }
}

/// White Gaussian noise plus, for each plant of the trial's class, a
/// sinusoid with a uniformly random phase shared by the plant's electrodes.
/// Labels cycle through the classes.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_trials = spec.n_classes * spec.trials_per_class;
    let (n_e, n_t) = (spec.n_electrodes, spec.n_samples);
    let mut trials = Vec::with_capacity(n_trials);
    let mut labels = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let label = i % spec.n_classes;
        let mut data: Vec<f64> = (0..n_e * n_t)
            .map(|_| spec.noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for p in spec.plants.iter().filter(|p| p.class == label) {
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            let w = std::f64::consts::TAU * p.freq_hz / spec.fs_hz;
            for &e in &p.electrodes {
                for (t, v) in data[e * n_t..(e + 1) * n_t].iter_mut().enumerate() {
                    *v += p.amplitude * (w * t as f64 + phase).sin();
                }
            }
        }
        trials.push(MultichannelTrial::new(n_e, n_t, spec.fs_hz, data)?);
        labels.push(label);
    }
    Dataset::new(trials, labels, spec.n_classes)
}

/// Synthesis config: `n_electrodes`, `fs`, `n_samples`, `noise_sigma`,
/// `trials_per_class`, `seed`, optional `n_classes`, and any number of
/// `plant = class:e1+e2:freq_hz:amplitude` lines.
pub fn parse_synth_spec(text: &str) -> Result<SynthSpec> {
    let mut n_electrodes = None;
    let mut fs = None;
    let mut n_samples = None;
    let mut noise_sigma = 1.0;
    let mut trials_per_class = None;
    let mut seed = 0u64;
    let mut n_classes = None;
    let mut plants = Vec::new();
    for (line, key, value) in parse_pairs(text, &["plant"])? {
        let (k, v) = (key.as_str(), value.as_str());
        match k {
            "n_electrodes" => n_electrodes = Some(parse_value::<usize>(line, k, v)?),
            "fs" => fs = Some(parse_value::<f64>(line, k, v)?),
            "n_samples" => n_samples = Some(parse_value::<usize>(line, k, v)?),
            "noise_sigma" => noise_sigma = parse_value(line, k, v)?,
            "trials_per_class" => trials_per_class = Some(parse_value::<usize>(line, k, v)?),
            "seed" => seed = parse_value(line, k, v)?,
            "n_classes" => n_classes = Some(parse_value::<usize>(line, k, v)?),
            "plant" => {
                let parts: Vec<&str> = v.split(':').map(str::trim).collect();
                if parts.len() != 4 {
                    return Err(Error::Config {
                        line,
                        key,
                        message: "expected `class:electrodes:freq_hz:amplitude`".into(),
                    });
                }
                plants.push(Plant {
                    class: parse_value(line, k, parts[0])?,
                    electrodes: parts[1]
                        .split('+')
                        .map(|e| parse_value(line, k, e.trim()))
                        .collect::<Result<_>>()?,
                    freq_hz: parse_value(line, k, parts[2])?,
                    amplitude: parse_value(line, k, parts[3])?,
                });
            }
            _ => {
                return Err(Error::Config {
                    line,
                    key,
                    message: "unknown key".into(),
                })
            }
        }
    }
    let required = |v: Option<usize>, key: &str| {
        v.ok_or_else(|| Error::Config {
            line: 0,
            key: key.into(),
            message: "required key missing".into(),
        })
    };
    let n_classes = match n_classes {
        Some(k) => k,
        None => plants.iter().map(|p| p.class + 1).max().unwrap_or(0).max(2),
    };
    let spec = SynthSpec {
        n_electrodes: required(n_electrodes, "n_electrodes")?,
        n_samples: required(n_samples, "n_samples")?,
        fs_hz: fs.ok_or_else(|| Error::Config {
            line: 0,
            key: "fs".into(),
            message: "required key missing".into(),
        })?,
        n_classes,
        trials_per_class: required(trials_per_class, "trials_per_class")?,
        noise_sigma,
        plants,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn read_synth_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_synth_spec(&text)
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Binary model file; every `f64` is stored bit-exactly.
pub fn encode_model(state: &NetworkState) -> Vec<u8> {
    let fb = &state.filterbank;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    push_u32(&mut out, fb.n_filters);
    push_u32(&mut out, fb.n_electrodes);
    out.extend_from_slice(&fb.fs_hz.to_le_bytes());
    out.push(match fb.specificity {
        Specificity::ChannelIndependent => 0,
        Specificity::ChannelSpecific => 1,
    });
    out.push(u8::from(fb.interband));
    push_u32(&mut out, fb.kernel_len);
    match &fb.params {
        FilterParams::Conv(kernels) => {
            out.push(0);
            push_u32(&mut out, kernels.len());
            for k in kernels {
                push_f64s(&mut out, k);
            }
        }
        FilterParams::Sinc(bands) => {
            out.push(1);
            push_u32(&mut out, bands.len());
            for b in bands {
                push_f64s(&mut out, &[b.low_hz, b.bandwidth_hz]);
            }
        }
    }
    out.extend_from_slice(&state.reeig_eps.to_le_bytes());
    push_u32(&mut out, state.bimaps.len());
    for w in &state.bimaps {
        push_u32(&mut out, w.d_in());
        push_u32(&mut out, w.d_out());
        push_f64s(&mut out, w.matrix().as_slice());
    }
    push_u32(&mut out, state.head.n_classes());
    push_u32(&mut out, state.head.n_features());
    push_f64s(&mut out, state.head.weights.as_slice());
    push_f64s(&mut out, state.head.bias.as_slice());
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<NetworkState> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected \"SPDM\"".into(),
        });
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported model version {version}"),
        });
    }
    let n_filters = r.u32("filter count")? as usize;
    let n_electrodes = r.u32("electrode count")? as usize;
    let fs = r.f64("sampling rate")?;
    let specificity = match r.u8("specificity")? {
        0 => Specificity::ChannelIndependent,
        1 => Specificity::ChannelSpecific,
        v => return Err(r.err(format!("unknown specificity tag {v}"))),
    };
    let interband = r.u8("interband flag")? != 0;
    let kernel_len = r.u32("kernel length")? as usize;
    let kind = r.u8("filter kind")?;
    let n_params = r.u32("filter count")? as usize;
    let params = match kind {
        0 => FilterParams::Conv(
            (0..n_params)
                .map(|_| r.f64s(kernel_len, "kernel"))
                .collect::<Result<_>>()?,
        ),
        1 => FilterParams::Sinc(
            (0..n_params)
                .map(|_| Ok(Band::new(r.f64("band")?, r.f64("band")?)))
                .collect::<Result<_>>()?,
        ),
        v => return Err(r.err(format!("unknown filter kind tag {v}"))),
    };
    let params_end = r.pos;
    let filterbank = FilterbankSpec::new(n_filters, n_electrodes, fs, specificity, kernel_len, interband, params)
        .map_err(|e| Error::Format {
            offset: params_end as u64,
            message: e.to_string(),
        })?;
    let reeig_eps = r.f64("ReEig threshold")?;
    let n_bire = r.u32("layer count")? as usize;
    let mut bimaps = Vec::with_capacity(n_bire);
    let mut expected_in = filterbank.n_channels();
    for _ in 0..n_bire {
        let at = r.pos;
        let d_in = r.u32("BiMap shape")? as usize;
        let d_out = r.u32("BiMap shape")? as usize;
        if d_in != expected_in || d_out == 0 || d_out > d_in {
            return Err(Error::Format {
                offset: at as u64,
                message: format!("BiMap shape {d_in}x{d_out} does not chain from {expected_in}"),
            });
        }
        let values = r.f64s(d_in * d_out, "BiMap weights")?;
        bimaps.push(
            StiefelParam::new(DMatrix::from_column_slice(d_in, d_out, &values), 1e-6).map_err(|e| Error::Format {
                offset: at as u64,
                message: e.to_string(),
            })?,
        );
        expected_in = d_out;
    }
    let at = r.pos;
    let n_classes = r.u32("class count")? as usize;
    let n_features = r.u32("feature count")? as usize;
    if n_features != expected_in * (expected_in + 1) / 2 || n_classes < 2 {
        return Err(Error::Format {
            offset: at as u64,
            message: format!("head shape {n_classes}x{n_features} does not fit the network"),
        });
    }
    let weights = r.f64s(n_classes * n_features, "head weights")?;
    let bias = r.f64s(n_classes, "head bias")?;
    r.finish()?;
    Ok(NetworkState {
        filterbank,
        bimaps,
        reeig_eps,
        head: Head {
            weights: DMatrix::from_column_slice(n_classes, n_features, &weights),
            bias: DVector::from_vec(bias),
        },
    })
}

pub fn read_model(path: &Path) -> Result<NetworkState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

pub fn write_model(path: &Path, state: &NetworkState) -> Result<()> {
    write_atomic(path, &encode_model(state))
}

/// Reads a list of bands written by the filterbank search (`low:bandwidth`
/// comma separated, or the `bands = ...` config form).
pub fn parse_band_list(text: &str) -> Result<Vec<Band>> {
    let body = text.trim();
    let body = body.strip_prefix("bands").map_or(body, |b| b.trim_start().trim_start_matches('=')).trim();
    parse_bands(1, "bands", body)
}

pub fn format_band_list(bands: &[Band]) -> String {
    let items: Vec<String> = bands.iter().map(|b| format!("{}:{}", b.low_hz, b.bandwidth_hz)).collect();
    format!("bands = {}\n", items.join(","))
}
