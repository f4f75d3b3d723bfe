//! Preprocessing: frames, filters, resampling, standardization and windowing.

mod filter;
mod frame;
pub mod io;
mod resample;
mod standardize;
mod window;

pub use filter::{
    design_butterworth, filtfilt, filtfilt_padding, median_filter, remove_gravity, Biquad,
    FilterSpec, SosFilter, GRAVITY_CUTOFF_HZ, GRAVITY_FILTER_ORDER,
};
pub use frame::{ChannelInfo, TimeSeriesFrame};
pub use resample::{decimate, decimation_factor, resample, ANTI_ALIAS_FRACTION, ANTI_ALIAS_ORDER};
pub use standardize::{standardize, ChannelStats, Standardizer};
pub use window::{label_homogeneous_offsets, slice_labeled_windows, slice_windows, LabeledWindow};
