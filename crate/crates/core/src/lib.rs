//! Training-time and post-processing primitives for one-stage anchor-based
//! object detectors.
//!
//! The crate is organised by concern:
//!
//! * [`geometry`]: box representations and the IoU metric family.
//! * [`losses`]: box-regression losses with analytic gradients, label smoothing.
//! * [`nms`]: greedy, soft and DIoU non-maximum suppression.
//! * [`decode`]: head decoding with grid-sensitivity scaling and anchor assignment.
//! * [`augment`]: Mosaic, CutMix, MixUp, photometric/geometric jitter and blur.
//! * [`featuremap`]: SPP pooling, DropBlock masks, point-wise attention,
//!   PAN aggregation and activations.
//! * [`trainsched`]: learning-rate schedules, dynamic mini-batch sizing and
//!   cross-mini-batch normalization statistics.
//! * [`evolve`]: genetic hyperparameter search and k-means anchor optimization.
//! * [`evalap`]: COCO-style average precision.
//! * [`ingest`]: COCO-subset JSON and binary PPM I/O.
//! * [`cli`]: the `bofkit` command-line front end.

pub mod augment;
pub mod cli;
pub mod decode;
pub mod error;
pub mod evalap;
pub mod evolve;
pub mod featuremap;
pub mod geometry;
pub mod ingest;
pub mod losses;
pub mod nms;
pub mod trainsched;

pub use error::{Error, Result};
pub use geometry::{BBox, CenterBox};
pub use nms::Detection;
