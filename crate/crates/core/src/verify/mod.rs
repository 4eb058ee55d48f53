//! Independent oracles and the randomized suites built on them.

pub mod oracles;
pub mod suites;

pub use oracles::{
    certify_mat, certify_spd, general_log_euclidean, hadamard_series_oracle, kernel_factorize, spd_log,
    toeplitz_band, toeplitz_conv_oracle, ChannelCertificate, SpdReport,
};
pub use suites::{run_all, SuiteResult, VerifyConfig, VerifyReport};
