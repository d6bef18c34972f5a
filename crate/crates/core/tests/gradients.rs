mod common;

use common::gradcheck::{all_network_errors, network_errors, spectral_error, toy_network};
use spdnet::net::{FilterKind, Specificity};
use spdnet::spd::SpectralFn;

#[test]
fn every_parameter_group_matches_finite_differences() {
    for (name, err) in all_network_errors() {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn rectifier_is_active_in_the_toy_network() {
    let (state, trial, _) = toy_network(FilterKind::Conv, Specificity::ChannelSpecific, 2);
    let cache = state.forward(&trial).unwrap();
    assert!(!cache.layers[0].reeig.passthrough);
}

#[test]
fn passthrough_rectifier_also_matches() {
    let (mut state, trial, label) = toy_network(FilterKind::Conv, Specificity::ChannelIndependent, 5);
    state.reeig_eps = 5e-4;
    assert!(state.forward(&trial).unwrap().layers.iter().all(|l| l.reeig.passthrough));
    for (name, err) in network_errors(&state, &trial, label) {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn spectral_functions_match_finite_differences() {
    for (f, seed) in [
        (SpectralFn::Log, 1),
        (SpectralFn::Exp, 2),
        (SpectralFn::Sqrt, 3),
        (SpectralFn::InvSqrt, 4),
        (SpectralFn::ClampBelow(0.75), 5),
    ] {
        let err = spectral_error(f, &[4.0, 2.5, 1.0, 0.5], seed);
        assert!(err < 1e-6, "{f:?}: {err:e}");
    }
}
