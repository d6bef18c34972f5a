//! The end-to-end network: filterbank, covariance pooling, BiMap/ReEig
//! pairs, LogEig and an affine head, with exact reverse-mode gradients.

pub mod filterbank;
pub mod layers;
pub mod network;

pub use filterbank::{
    cov_pool, filterbank_forward, sinc_kernel, sinc_kernel_with_grad, Band, FilterKind, FilterParams,
    FilterbankSpec, FilteredChannels, Specificity, DEFAULT_KERNEL_LEN,
};
pub use layers::{
    bimap, cross_entropy, eig_function_backward, head_forward, logeig, reeig, reeig_forward, softmax, Head,
    ReEigOutput, StiefelParam, DEFAULT_REEIG_EPS,
};
pub use network::{layer_dims, Architecture, BiReCache, FilterGradient, ForwardCache, Gradients, NetworkState};
