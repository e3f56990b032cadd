//! Width-aware layers: triangular / standard conv and linear, plus the
//! batch-normalization regimes (shared, switchable, calibrated).

mod batchnorm;
mod conv;
mod linear;

pub use batchnorm::{BatchNorm, BnBatchStats, BnCache, SwitchableBatchNorm, BN_EPS, BN_MOMENTUM};
pub use conv::Conv2d;
pub use linear::Linear;

pub(crate) use batchnorm::check_width_list;
