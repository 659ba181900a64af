//! Angle-of-arrival estimation: covariance, subspace split, MUSIC line
//! search, windowed tracking and Kalman/RTS smoothing over misdetection gaps.

mod kalman;
mod music;
mod track;

pub use kalman::{kalman_smooth, music_error_variance, KalmanConfig};
pub use music::{
    estimate_covariance, music_peak, split_subspaces, CovarianceEstimate, FieldOfView,
    MusicPeak, SubspaceSplit,
};
pub use track::{
    estimate_track, pair_reads, read_track, write_spectra, write_track, AoATrack, AoaConfig,
    PairedRead, WindowEstimate,
};
