//! Raw streams → fixed-length, gap-free signal frames.
//!
//! Channel pipelines:
//! - RSS: min-max normalize → resample to 35
//! - phase: unwrap → Savitzky–Golay → Gaussian → resample to 35
//! - AoA: Kalman-smoothed track → resample to 35
//!
//! Filters run on the detected reads in order (gaps dropped) and resampling
//! uses the true read times, so filtering happens before resampling.

mod filters;
mod frame;

pub use filters::{
    gaussian_filter, gaussian_kernel, minmax_normalize, resample_35, resample_at, savgol_filter,
    unwrap_phase, FRAME_LENGTH,
};
pub use frame::{
    build_frame, channel_names, read_frames, write_frames, FrameChannel, FrameConfig, SignalFrame,
};
