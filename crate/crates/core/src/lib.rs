//! Event-camera point-cloud coding toolkit.
//!
//! Converts event sequences to per-polarity voxelized point clouds and
//! back, compresses them with a baseline octree geometry codec (or drives
//! external codecs), and evaluates the result with characterization
//! statistics, PSNR E2E/E2D, bits-per-event, BD-Rate, and Top-k accuracy.

pub mod bdrate;
pub mod characterize;
pub mod cloud;
pub mod codec;
pub mod convert;
pub mod error;
pub mod event;
pub mod knn;
pub mod pipeline;
pub mod ply;
pub mod psnr;
pub mod tensor;
pub mod topk;

pub use cloud::{EventPointCloud, Voxel};
pub use error::{Error, Result};
pub use event::{Event, EventSequence, FormatParams, Polarity, TimestampUnit};
