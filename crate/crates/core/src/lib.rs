//! Laser-partition mixing for semi-supervised LiDAR segmentation.
//!
//! Everything in this crate is pure computation over in-memory data and
//! builds without `std` (an allocator is required). File formats, the CLI
//! and experiment bookkeeping live in the `lasermix` companion crate.
//!
//! Layout:
//!
//! - [`cloud`]: point clouds, class ids and label maps.
//! - [`sensor`]: LiDAR sensor geometry.
//! - [`partition`]: per-point spherical geometry and area partitions.
//! - [`mix`]: the intertwined mixing operator.
//! - [`range`] / [`voxel`]: range-view and cylindrical voxel codecs.
//! - [`prior`]: spatial-prior entropy analytics and the marginal-prediction oracle.
//! - [`nn`] / [`ssl`]: a small range-image CNN and the student/teacher training loop.
//! - [`synth`]: ray-cast synthetic scenes and datasets.
//! - [`experiment`]: desk-scale benchmark presets.

#![cfg_attr(not(test), no_std)]
// NaN-rejecting range checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod cloud;
pub mod error;
pub mod experiment;
pub mod math;
pub mod mix;
pub mod nn;
pub mod partition;
pub mod prior;
pub mod range;
pub mod rng;
pub mod sensor;
pub mod ssl;
pub mod synth;
pub mod voxel;

pub use cloud::{ClassId, LabelMap, PointCloud};
pub use error::{Error, Result};
pub use mix::{laser_mix, MixOrder, MixResult};
pub use partition::{AreaAssignment, PartitionKind, PartitionSpec};
pub use range::RangeImage;
pub use sensor::SensorConfig;
pub use voxel::VoxelGrid;
