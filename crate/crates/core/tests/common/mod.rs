#![allow(dead_code)]
pub mod gradcheck;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spdnet::io::{synth_generate, Plant, SynthSpec};
use spdnet::net::{Architecture, FilterKind, Specificity};
use spdnet::trial::{Dataset, MultichannelTrial};

pub const PLANTED_HZ: [f64; 3] = [12.0, 30.0, 75.0];

/// Three classes with 12, 30 and 75 Hz planted on electrodes 0, 1 and 2 at
/// three times the noise level.
pub fn three_band_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n_electrodes: 4,
        n_samples: 250,
        fs_hz: 250.0,
        n_classes: 3,
        trials_per_class: 200,
        noise_sigma: 1.0,
        plants: PLANTED_HZ
            .iter()
            .enumerate()
            .map(|(k, &f)| Plant {
                class: k,
                electrodes: vec![k],
                freq_hz: f,
                amplitude: 3.0,
            })
            .collect(),
        seed,
    }
}

/// Two classes; class 1 carries 12 Hz on electrode 0.
pub fn twelve_hz_spec(trials_per_class: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_electrodes: 2,
        n_samples: 250,
        fs_hz: 100.0,
        n_classes: 2,
        trials_per_class,
        noise_sigma: 1.0,
        plants: vec![Plant {
            class: 1,
            electrodes: vec![0],
            freq_hz: 12.0,
            amplitude: 2.0,
        }],
        seed,
    }
}

pub fn generate(spec: &SynthSpec) -> Dataset {
    synth_generate(spec).unwrap()
}

pub fn toy_arch(kind: FilterKind, specificity: Specificity, n_bire: usize, reeig_eps: f64) -> Architecture {
    Architecture {
        n_electrodes: 3,
        fs_hz: 100.0,
        n_classes: 3,
        n_filters: 2,
        specificity,
        filter_kind: kind,
        kernel_len: 7,
        interband: true,
        n_bire,
        reeig_eps,
    }
}

/// Three electrodes with distinct scales so covariance spectra are spread.
pub fn toy_trial(seed: u64) -> MultichannelTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_t = 60;
    let scales = [1.0, 2.0, 3.5];
    let data = (0..3 * n_t)
        .map(|i| { let z: f64 = StandardNormal.sample(&mut rng); scales[i / n_t] * z })
        .collect::<Vec<f64>>();
    MultichannelTrial::new(3, n_t, 100.0, data).unwrap()
}

/// Largest absolute deviation relative to the largest analytic magnitude.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

pub fn central_diff(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Runs the command line front end in-process.
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["spdnet"];
    argv.extend_from_slice(args);
    let code = spdnet::cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub const TOY_SYNTH_CFG: &str = "\
n_electrodes = 3
fs = 100
n_samples = 100
noise_sigma = 1
trials_per_class = 12
seed = 4
plant = 0:0:10:3
plant = 1:1:30:3
";

pub const TOY_NET_CFG: &str = "\
n_filters = 2
specificity = chspec
n_bire = 1
kernel_len = 9
epochs = 8
batch_size = 8
seeds = 1
";
