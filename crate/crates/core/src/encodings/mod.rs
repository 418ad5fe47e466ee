//! Input encodings for positions and view directions, and the progressive
//! mask that hides fine-scale features early in training.

mod hashgrid;
mod mask;
mod sh;

pub use hashgrid::{HashGridConfig, HashGridEncoding};
pub use mask::{apply_encoding_mask, kept_features, mask_ratio, MaskSchedule};
pub use sh::{sh_encode, ShEncoding, MAX_SH_DEGREE};
