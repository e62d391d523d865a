//! Skeleton-based ambiguous action recognition with a synchronized
//! spatial-temporal feature head, built on a self-contained reverse-mode
//! autodiff tensor core.

pub mod backbone;
pub mod data;
pub mod gradcheck;
pub mod losses;
pub mod optim;
pub mod sf_head;
pub mod synth;
pub mod tensor;
pub mod trainer;
