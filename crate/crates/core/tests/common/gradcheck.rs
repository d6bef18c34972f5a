//! Central finite-difference checks of every backward pass.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spdnet::net::layers::{cross_entropy, eig_function_backward};
use spdnet::net::{Band, cov_pool, filterbank_forward, FilterGradient, FilterKind, FilterParams, Head, NetworkState, Specificity, StiefelParam};
use spdnet::spd::{sym_eig, SpectralFn, SymmetricMatrix};
use spdnet::trial::MultichannelTrial;

use super::{central_diff, rel_err, toy_arch, toy_trial};

const H: f64 = 1e-5;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Toy network with a random head and a ReEig threshold placed between the
/// two smallest eigenvalues of the first BiMap output, so that the
/// rectifier is active but no eigenvalue sits near the kink.
pub fn toy_network(kind: FilterKind, specificity: Specificity, seed: u64) -> (NetworkState, MultichannelTrial, usize) {
    let arch = toy_arch(kind, specificity, 2, 5e-4);
    let mut state = NetworkState::initialize(&arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    state.head = Head::random(state.head.n_classes(), state.head.n_features(), &mut rng);
    // Initial bands tile up to Nyquist, where the clamp has a kink.
    if let FilterParams::Sinc(bands) = &mut state.filterbank.params {
        for (k, b) in bands.iter_mut().enumerate() {
            *b = Band::new(5.0 + 7.0 * k as f64, 4.0 + k as f64);
        }
    }
    let trial = toy_trial(seed + 100);
    let cache = state.forward(&trial).unwrap();
    let mut lam = cache.layers[0].reeig.eig.eigvals.as_slice().to_vec();
    lam.sort_by(f64::total_cmp);
    state.reeig_eps = (lam[0] * lam[1]).sqrt();
    (state, trial, (seed % 3) as usize)
}

fn loss(state: &NetworkState, trial: &MultichannelTrial, label: usize) -> f64 {
    state.loss(trial, label).unwrap()
}

fn perturbed(state: &NetworkState, f: impl Fn(&mut NetworkState)) -> NetworkState {
    let mut s = state.clone();
    f(&mut s);
    s
}

fn set_bimap(s: &mut NetworkState, k: usize, w: DMatrix<f64>) {
    s.bimaps[k] = StiefelParam::new(w, 1.0).unwrap();
}

/// Relative errors of each parameter group of the full network:
/// `filterbank`, `bimap<k>`, `head`, `covariance` (everything downstream of
/// the pooled covariance) and `end-to-end` (a random joint direction).
pub fn network_errors(state: &NetworkState, trial: &MultichannelTrial, label: usize) -> Vec<(String, f64)> {
    let (_, g) = state.loss_and_gradients(trial, label).unwrap();
    let mut out = vec![];

    let mut an = vec![];
    let mut num = vec![];
    match (&state.filterbank.params, &g.filter) {
        (FilterParams::Conv(kernels), FilterGradient::Conv(gk)) => {
            for (k, kernel) in kernels.iter().enumerate() {
                for t in 0..kernel.len() {
                    an.push(gk[k][t]);
                    num.push(central_diff(
                        |h| {
                            loss(
                                &perturbed(state, |s| {
                                    if let FilterParams::Conv(ks) = &mut s.filterbank.params {
                                        ks[k][t] += h;
                                    }
                                }),
                                trial,
                                label,
                            )
                        },
                        H,
                    ));
                }
            }
        }
        (FilterParams::Sinc(bands), FilterGradient::Sinc(gb)) => {
            for k in 0..bands.len() {
                for which in 0..2 {
                    an.push(if which == 0 { gb[k].0 } else { gb[k].1 });
                    num.push(central_diff(
                        |h| {
                            loss(
                                &perturbed(state, |s| {
                                    if let FilterParams::Sinc(bs) = &mut s.filterbank.params {
                                        if which == 0 {
                                            bs[k].low_hz += h;
                                        } else {
                                            bs[k].bandwidth_hz += h;
                                        }
                                    }
                                }),
                                trial,
                                label,
                            )
                        },
                        1e-4,
                    ));
                }
            }
        }
        _ => panic!("gradient kind does not match filterbank"),
    }
    out.push(("filterbank".to_string(), rel_err(&an, &num)));

    for k in 0..state.bimaps.len() {
        let w = state.bimaps[k].matrix().clone();
        let mut an = vec![];
        let mut num = vec![];
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                an.push(g.bimaps[k][(i, j)]);
                num.push(central_diff(
                    |h| {
                        let mut w2 = w.clone();
                        w2[(i, j)] += h;
                        loss(&perturbed(state, |s| set_bimap(s, k, w2.clone())), trial, label)
                    },
                    H,
                ));
            }
        }
        out.push((format!("bimap{}", k + 1), rel_err(&an, &num)));
    }

    let mut an = vec![];
    let mut num = vec![];
    for i in 0..state.head.weights.nrows() {
        for j in 0..state.head.weights.ncols() {
            an.push(g.head_weights[(i, j)]);
            num.push(central_diff(
                |h| loss(&perturbed(state, |s| s.head.weights[(i, j)] += h), trial, label),
                H,
            ));
        }
        an.push(g.head_bias[i]);
        num.push(central_diff(|h| loss(&perturbed(state, |s| s.head.bias[i] += h), trial, label), H));
    }
    out.push(("head".to_string(), rel_err(&an, &num)));

    let c = cov_pool(&filterbank_forward(trial, &state.filterbank).unwrap(), &state.filterbank).unwrap();
    let n = c.dim();
    let loss_c = |m: &DMatrix<f64>| {
        let s = SymmetricMatrix::new(m.clone()).unwrap();
        cross_entropy(&state.logits_from_cov(&s).unwrap(), label).unwrap()
    };
    let mut an = vec![];
    let mut num = vec![];
    for i in 0..n {
        for j in i..n {
            an.push(if i == j { g.covariance[(i, i)] } else { g.covariance[(i, j)] + g.covariance[(j, i)] });
            num.push(central_diff(
                |h| {
                    let mut m = c.matrix().clone();
                    m[(i, j)] += h;
                    if i != j {
                        m[(j, i)] += h;
                    }
                    loss_c(&m)
                },
                H,
            ));
        }
    }
    out.push(("covariance".to_string(), rel_err(&an, &num)));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut dir = state.clone();
    let mut predicted = 0.0;
    if let (FilterParams::Conv(ks), FilterGradient::Conv(gk)) = (&mut dir.filterbank.params, &g.filter) {
        for (kernel, gk) in ks.iter_mut().zip(gk) {
            for (v, gv) in kernel.iter_mut().zip(gk) {
                *v = gauss(&mut rng);
                predicted += *v * gv;
            }
        }
    }
    if let (FilterParams::Sinc(bs), FilterGradient::Sinc(gb)) = (&mut dir.filterbank.params, &g.filter) {
        for (b, gv) in bs.iter_mut().zip(gb) {
            b.low_hz = gauss(&mut rng);
            b.bandwidth_hz = gauss(&mut rng);
            predicted += b.low_hz * gv.0 + b.bandwidth_hz * gv.1;
        }
    }
    let bimap_dirs: Vec<DMatrix<f64>> = state
        .bimaps
        .iter()
        .zip(&g.bimaps)
        .map(|(w, gw)| {
            let d = DMatrix::from_fn(w.d_in(), w.d_out(), |_, _| gauss(&mut rng));
            predicted += d.dot(gw);
            d
        })
        .collect();
    let hw = DMatrix::from_fn(state.head.weights.nrows(), state.head.weights.ncols(), |_, _| gauss(&mut rng));
    predicted += hw.dot(&g.head_weights);
    let hb: Vec<f64> = (0..state.head.bias.len()).map(|_| gauss(&mut rng)).collect();
    predicted += hb.iter().zip(g.head_bias.iter()).map(|(a, b)| a * b).sum::<f64>();
    let step = |h: f64| {
        let mut s = state.clone();
        match (&mut s.filterbank.params, &dir.filterbank.params) {
            (FilterParams::Conv(ks), FilterParams::Conv(ds)) => {
                for (k, d) in ks.iter_mut().zip(ds) {
                    for (v, dv) in k.iter_mut().zip(d) {
                        *v += h * dv;
                    }
                }
            }
            (FilterParams::Sinc(bs), FilterParams::Sinc(ds)) => {
                for (b, d) in bs.iter_mut().zip(ds) {
                    b.low_hz += h * d.low_hz;
                    b.bandwidth_hz += h * d.bandwidth_hz;
                }
            }
            _ => unreachable!(),
        }
        for (k, d) in bimap_dirs.iter().enumerate() {
            let w = s.bimaps[k].matrix() + d * h;
            set_bimap(&mut s, k, w);
        }
        s.head.weights += &hw * h;
        for (b, d) in s.head.bias.iter_mut().zip(&hb) {
            *b += h * d;
        }
        loss(&s, trial, label)
    };
    out.push(("end-to-end".to_string(), rel_err(&[predicted], &[central_diff(step, H)])));
    out
}

/// Relative error of the spectral backward pass for `f` on a random SPD
/// matrix with eigenvalues `spectrum`.
pub fn spectral_error(f: SpectralFn, spectrum: &[f64], seed: u64) -> f64 {
    let n = spectrum.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = DMatrix::from_fn(n, n, |_, _| gauss(&mut rng)).qr().q();
    let x = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(spectrum)) * q.transpose();
    let x = SymmetricMatrix::new(x).unwrap();
    let g = DMatrix::from_fn(n, n, |_, _| gauss(&mut rng));
    let d = SymmetricMatrix::new({
        let r = DMatrix::from_fn(n, n, |_, _| gauss(&mut rng));
        &r + r.transpose()
    })
    .unwrap();
    let eig = sym_eig(&x).unwrap();
    let analytic = eig_function_backward(&g, &eig, f).dot(d.matrix());
    let phi = |h: f64| {
        let m = SymmetricMatrix::new(x.matrix() + d.matrix() * h).unwrap();
        sym_eig(&m).unwrap().map(f).unwrap().matrix().dot(&g)
    };
    rel_err(&[analytic], &[central_diff(phi, 1e-6)])
}

/// The configurations every gradient check runs on.
pub fn all_network_errors() -> Vec<(String, f64)> {
    let mut out = vec![];
    for (kind, spec, seed) in [
        (FilterKind::Conv, Specificity::ChannelIndependent, 1),
        (FilterKind::Conv, Specificity::ChannelSpecific, 2),
        (FilterKind::Sinc, Specificity::ChannelIndependent, 3),
        (FilterKind::Sinc, Specificity::ChannelSpecific, 4),
    ] {
        let (state, trial, label) = toy_network(kind, spec, seed);
        for (name, e) in network_errors(&state, &trial, label) {
            out.push((format!("{kind:?}/{spec:?} {name}"), e));
        }
    }
    out.push(("ReEig".into(), spectral_error(SpectralFn::ClampBelow(1.5), &[5.0, 3.0, 1.0, 0.5], 11)));
    out.push(("LogEig".into(), spectral_error(SpectralFn::Log, &[5.0, 3.0, 1.0, 0.5], 12)));
    out
}
