//! Flow-guided moving-object segmentation toolkit.
//!
//! Frame-level candidate masks are filtered and layered ([`selection`]),
//! linked into identity-consistent tracks with optical flow ([`association`]),
//! and scored with region/boundary/detection metrics ([`evaluation`]).
//! [`synth`] produces deterministic sequences with exact ground-truth flow.

pub mod assign;
pub mod association;
pub mod bbox;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod flowio;
pub mod frame;
pub mod mask;
pub mod selection;
pub mod synth;

pub use assign::{solve_assignment, Assignment, Objective};
pub use bbox::{bbox_iou, tight_bbox, BBox};
pub use error::{Error, Result};
pub use frame::{FrameMasks, ScoredMask};
pub use mask::{iou, iou_matrix, Mask};
