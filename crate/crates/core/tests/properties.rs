mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spdnet::analysis::{bimap_gain, chosen_freq_coverage, histogram_of_counts};
use spdnet::classifiers::MdmModel;
use spdnet::fbopt::BandSpace;
use spdnet::io::{decode_archive, encode_archive};
use spdnet::net::layers::{bimap, reeig};
use spdnet::net::{
    cov_pool, filterbank_forward, layer_dims, Architecture, FilterKind, FilterParams, FilterbankSpec, NetworkState,
    Specificity, StiefelParam,
};
use spdnet::optim::{AdamConfig, GradRef, OptimState, ParamMut};
use spdnet::spd::{
    concat_block_diag, distance, spd_map, sym_eig, vectorize, RiemannianMetric, SpdMatrix, SpectralFn, SymmetricMatrix,
};
use spdnet::trial::{Dataset, MultichannelTrial};

const METRICS: [RiemannianMetric; 2] = [RiemannianMetric::LogEuclidean, RiemannianMetric::AffineInvariant];

fn square(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn sym(n: usize) -> impl Strategy<Value = SymmetricMatrix> {
    square(n).prop_map(|a| SymmetricMatrix::new(&a + a.transpose()).unwrap())
}

fn spd_raw(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    square(n).prop_map(move |a| &a * a.transpose() + DMatrix::identity(n, n) * 0.1)
}

fn spd(n: usize) -> impl Strategy<Value = SpdMatrix> {
    spd_raw(n).prop_map(to_spd)
}

fn to_spd(m: DMatrix<f64>) -> SpdMatrix {
    SpdMatrix::new(SymmetricMatrix::new((&m + m.transpose()) * 0.5).unwrap()).unwrap()
}

fn orthogonal(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    square(n).prop_map(move |a| (a + DMatrix::identity(n, n) * 0.1).qr().q())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vectorize_is_an_isometry(s in (1usize..7).prop_flat_map(sym)) {
        let v = vectorize(&s);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(rel(norm, s.frobenius_norm()) <= 1e-12);
        prop_assert_eq!(v.len(), s.dim() * (s.dim() + 1) / 2);
    }

    #[test]
    fn block_concat_min_eigenvalue(a in spd_raw(3), b in spd_raw(2), c in spd_raw(1)) {
        let blocks: Vec<SymmetricMatrix> = [a, b, c].into_iter().map(|m| SymmetricMatrix::new((&m + m.transpose()) * 0.5).unwrap()).collect();
        let whole = sym_eig(&concat_block_diag(&blocks).unwrap()).unwrap().min_eigenvalue();
        let parts = blocks.iter().map(|b| sym_eig(b).unwrap().min_eigenvalue()).fold(f64::INFINITY, f64::min);
        prop_assert!((whole - parts).abs() <= 1e-10);
    }

    #[test]
    fn metric_axioms(a in spd(3), b in spd(3), c in spd(3)) {
        for m in METRICS {
            let ab = distance(&a, &b, m).unwrap();
            let ba = distance(&b, &a, m).unwrap();
            let bc = distance(&b, &c, m).unwrap();
            let ac = distance(&a, &c, m).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!(ab >= 0.0);
            prop_assert!(ac <= ab + bc + 1e-9 * (ab + bc));
            prop_assert!(distance(&a, &a, m).unwrap() <= 1e-7);
        }
    }

    #[test]
    fn congruence_invariances(a in spd_raw(3), b in spd_raw(3), w in square(3), r in orthogonal(3)) {
        let w = w + DMatrix::identity(3, 3) * 3.0;
        let d0 = distance(&to_spd(a.clone()), &to_spd(b.clone()), RiemannianMetric::AffineInvariant).unwrap();
        let d1 = distance(&to_spd(&w * &a * w.transpose()), &to_spd(&w * &b * w.transpose()), RiemannianMetric::AffineInvariant).unwrap();
        prop_assert!(rel(d0, d1) <= 1e-8);
        let l0 = distance(&to_spd(a.clone()), &to_spd(b.clone()), RiemannianMetric::LogEuclidean).unwrap();
        let l1 = distance(&to_spd(&r * &a * r.transpose()), &to_spd(&r * &b * r.transpose()), RiemannianMetric::LogEuclidean).unwrap();
        prop_assert!(rel(l0, l1) <= 1e-8);
    }

    #[test]
    fn log_then_exp_is_identity(a in spd(4)) {
        let back = spd_map(&a.log(), SpectralFn::Exp).unwrap();
        let diff = (back.matrix() - a.matrix()).norm();
        prop_assert!(diff <= 1e-9 * a.matrix().norm());
    }

    #[test]
    fn bimap_reeig_keeps_the_floor(c in (2usize..7).prop_flat_map(sym), seed in 0u64..1000, eps in 1e-4..1.0f64) {
        let n = c.dim();
        let w = StiefelParam::random(n, n.div_ceil(2), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let out = reeig(&bimap(&c, &w).unwrap(), eps).unwrap();
        prop_assert!(sym_eig(&out).unwrap().min_eigenvalue() >= eps * (1.0 - 1e-9));
    }

    #[test]
    fn dimension_schedule_halves_with_ceiling(n_f in 1usize..4, n_e in 1usize..6, n_bire in 1usize..5) {
        let dims = layer_dims(n_f * n_e, n_bire);
        prop_assert_eq!(dims.len(), n_bire + 1);
        prop_assert_eq!(dims[0], n_f * n_e);
        for pair in dims.windows(2) {
            prop_assert_eq!(pair[1], pair[0].div_ceil(2));
        }
    }

    #[test]
    fn specificity_keeps_covariance_size(n_f in 1usize..4, n_e in 1usize..5, seed in 0u64..100) {
        let trial = random_trial(n_e, 40, seed);
        let mut sizes = vec![];
        for spec in [Specificity::ChannelIndependent, Specificity::ChannelSpecific] {
            let arch = Architecture {
                n_electrodes: n_e,
                fs_hz: 100.0,
                n_classes: 2,
                n_filters: n_f,
                specificity: spec,
                filter_kind: FilterKind::Conv,
                kernel_len: 5,
                interband: true,
                n_bire: 1,
                reeig_eps: 5e-4,
            };
            let state = NetworkState::initialize(&arch, seed).unwrap();
            let c = cov_pool(&filterbank_forward(&trial, &state.filterbank).unwrap(), &state.filterbank).unwrap();
            sizes.push(c.dim());
        }
        prop_assert_eq!(sizes[0], sizes[1]);
        prop_assert_eq!(sizes[0], n_f * n_e);
    }

    #[test]
    fn sinc_forward_equals_conv_with_generated_kernel(low in 1.0..40.0f64, bw in 1.0..30.0f64, seed in 0u64..100) {
        let trial = random_trial(2, 50, seed);
        let bands = vec![spdnet::net::Band::new(low, bw), spdnet::net::Band::new(low / 2.0, bw / 2.0)];
        let sinc = FilterbankSpec::new(2, 2, 100.0, Specificity::ChannelIndependent, 11, true, FilterParams::Sinc(bands)).unwrap();
        let conv = FilterbankSpec::new(2, 2, 100.0, Specificity::ChannelIndependent, 11, true, FilterParams::Conv(sinc.kernels())).unwrap();
        prop_assert_eq!(filterbank_forward(&trial, &sinc).unwrap(), filterbank_forward(&trial, &conv).unwrap());
    }

    #[test]
    fn stiefel_constraint_survives_many_steps(seed in 0u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = StiefelParam::random(6, 3, &mut rng).unwrap();
        let mut opt = OptimState::new(AdamConfig::new(5e-2, 0.0, 500));
        for step in 0..500 {
            let g = DMatrix::from_fn(6, 3, |i, j| ((seed as f64 + 1.0) * (i * 3 + j + step) as f64).sin());
            opt.step(&mut [ParamMut::Stiefel { name: "w".into(), param: &mut w }], &[GradRef::Stiefel(&g)], step).unwrap();
        }
        prop_assert!(w.orthonormality_error() <= 1e-6);
    }

    #[test]
    fn convex_quadratic_decreases(x0 in prop::collection::vec(0.5..3.0f64, 5), curv in prop::collection::vec(0.1..4.0f64, 5), lr in 1e-4..1e-2f64) {
        let mut x = x0.clone();
        let loss = |x: &[f64]| x.iter().zip(&curv).map(|(v, a)| 0.5 * a * v * v).sum::<f64>();
        let mut opt = OptimState::new(AdamConfig::new(lr, 0.0, 100));
        let mut prev = f64::INFINITY;
        for step in 0..40 {
            let g: Vec<f64> = x.iter().zip(&curv).map(|(v, a)| a * v).collect();
            opt.step(&mut [ParamMut::Euclidean { name: "x".into(), values: &mut x }], &[GradRef::Euclidean(&g)], step).unwrap();
            let l = loss(&x);
            if step >= 3 {
                prop_assert!(l < prev);
            }
            prev = l;
        }
    }

    #[test]
    fn mdm_invariant_under_joint_congruence(seed in 0u64..200, m in square(3)) {
        let m = m + DMatrix::identity(3, 3) * 3.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<DMatrix<f64>> = (0..9).map(|_| random_spd(3, &mut rng)).collect();
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let queries: Vec<DMatrix<f64>> = (0..5).map(|_| random_spd(3, &mut rng)).collect();
        let xform = |a: &DMatrix<f64>| to_spd(&m * a * m.transpose());
        let plain = MdmModel::fit(&raw.iter().cloned().map(to_spd).collect::<Vec<_>>(), &labels, 3, RiemannianMetric::AffineInvariant).unwrap();
        let moved = MdmModel::fit(&raw.iter().map(xform).collect::<Vec<_>>(), &labels, 3, RiemannianMetric::AffineInvariant).unwrap();
        for q in &queries {
            let d0 = plain.distances(&to_spd(q.clone())).unwrap();
            let d1 = moved.distances(&xform(q)).unwrap();
            let argmin = |d: &[f64]| (0..d.len()).fold(0, |b, i| if d[i] < d[b] { i } else { b });
            let margin = {
                let mut s = d0.clone();
                s.sort_by(f64::total_cmp);
                s[1] - s[0]
            };
            if margin > 1e-6 {
                prop_assert_eq!(argmin(&d0), argmin(&d1));
            }
        }
    }

    #[test]
    fn scalar_lem_mdm_is_nearest_log_mean(values in prop::collection::vec(0.05..20.0f64, 6), q in 0.05..20.0f64) {
        let labels = vec![0, 1, 0, 1, 0, 1];
        let mats: Vec<SpdMatrix> = values.iter().map(|&v| SpdMatrix::from_diagonal(&[v]).unwrap()).collect();
        let model = MdmModel::fit(&mats, &labels, 2, RiemannianMetric::LogEuclidean).unwrap();
        let mean = |k: usize| values.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(v, _)| v.ln()).sum::<f64>() / 3.0;
        let d = [(q.ln() - mean(0)).abs(), (q.ln() - mean(1)).abs()];
        let expected = if d[1] < d[0] { 1 } else { 0 };
        if (d[0] - d[1]).abs() > 1e-12 {
            prop_assert_eq!(model.predict(&SpdMatrix::from_diagonal(&[q]).unwrap()).unwrap(), expected);
        }
    }

    #[test]
    fn decoded_bands_respect_the_clamp(u in prop::collection::vec(-0.5..1.5f64, 8), fs in 20.0..500.0f64) {
        let space = BandSpace { nyquist: fs / 2.0 };
        for b in space.decode(&u) {
            let (lo, hi) = b.effective(space.nyquist);
            prop_assert!(lo >= 1.0 && lo <= space.nyquist);
            prop_assert!(hi >= lo && hi <= space.nyquist);
            prop_assert!(b.bandwidth_hz > 0.0 && b.bandwidth_hz <= space.nyquist - 1.0 + 1e-12);
        }
    }

    #[test]
    fn histogram_sums_to_one_hundred(counts in prop::collection::vec(0usize..6, 1..40)) {
        let h = histogram_of_counts(&counts).unwrap();
        prop_assert!((h.iter().sum::<f64>() - 100.0).abs() <= 1e-9);
    }

    #[test]
    fn bimap_gain_is_symmetric(seed in 0u64..500, d_in in 2usize..8) {
        let w = StiefelParam::random(d_in, d_in.div_ceil(2), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (g, _) = bimap_gain(&w);
        prop_assert_eq!(&g, &g.transpose());
    }

    #[test]
    fn coverage_bounded_and_piecewise_constant(
        raw in prop::collection::vec((0.0..100.0f64, 0.5..30.0f64), 1..6),
    ) {
        let bands: Vec<(f64, f64)> = raw.iter().map(|&(lo, bw)| (lo, lo + bw)).collect();
        let freqs: Vec<f64> = (0..=1400).map(|i| i as f64 * 0.1).collect();
        let cov = chosen_freq_coverage(&bands, &freqs);
        let mut edges: Vec<f64> = bands.iter().flat_map(|&(a, b)| [a, b]).collect();
        edges.sort_by(f64::total_cmp);
        for (i, &c) in cov.iter().enumerate() {
            prop_assert!((0.0..=100.0).contains(&c));
            if i > 0 && cov[i - 1] != c {
                let (f0, f1) = (freqs[i - 1], freqs[i]);
                prop_assert!(edges.iter().any(|&e| e >= f0 && e <= f1));
            }
        }
    }

    #[test]
    fn archive_round_trip_is_identity_on_bytes(
        n_e in 1usize..4,
        n_t in 1usize..20,
        k in 2usize..4,
        seed in 0u64..1000,
        fs in 1.0..1000.0f32,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trials: Vec<MultichannelTrial> = (0..k + 2)
            .map(|_| {
                let data = (0..n_e * n_t).map(|_| f64::from(rand::Rng::random::<f32>(&mut rng) * 100.0 - 50.0)).collect();
                MultichannelTrial::new(n_e, n_t, f64::from(fs), data).unwrap()
            })
            .collect();
        let labels: Vec<usize> = (0..k + 2).map(|i| i % k).collect();
        let data = Dataset::new(trials, labels, k).unwrap();
        let bytes = encode_archive(&data).unwrap();
        let back = decode_archive(&bytes).unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(encode_archive(&back).unwrap(), bytes);
    }
}

fn random_trial(n_e: usize, n_t: usize, seed: u64) -> MultichannelTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n_e * n_t)
        .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
        .collect();
    MultichannelTrial::new(n_e, n_t, 100.0, data).unwrap()
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.2
}
