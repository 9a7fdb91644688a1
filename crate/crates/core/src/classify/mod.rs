//! State assignment: mixture models for single shots, hidden Markov models
//! for time series, and the statistics of the decoded paths.

mod gmm;
mod hmm;
mod markov;
mod parity;
mod selection;

pub use gmm::{
    gmm_classify, gmm_fit, match_components, mixture_distance, Classification, GaussianMixture, GmmConfig, GmmFit,
    Samples, COVARIANCE_FLOOR,
};
pub use hmm::{
    hmm_posteriors, hmm_train, hmm_train_from, hmm_viterbi, path_log_probability, Emission, EmissionKind, HiddenMarkov,
    HmmConfig, HmmFit, LabelPath, Observations,
};
pub use markov::{
    dwell_times, parity_band_reduce, transition_matrix, DwellStats, RunStats, TransitionMatrix, NEIGHBOR_REACH,
};
pub use parity::{
    classify_shots, decode_parity, flip_agreement, fuse_band_paths, joint_parity_model, joint_parity_path,
    FlipAgreement, ParityDecode, ParityDecodeConfig, PARITY_READOUT_STATES,
};
pub use selection::{
    select_model_order, silhouette, silhouette_1d, ModelSelectionReport, OrderMetrics, SelectionConfig,
};
