//! Camera pose estimation by matching 2D feature maps against renders of a
//! 3D template feature field.
//!
//! The pipeline: render the template from a grid of azimuth/elevation bins
//! ([`estimator::build_pose_bank`]), recover scale and in-plane rotation
//! between a query and every template with Fourier-Mellin phase correlation
//! ([`registration`]), score the warped templates by mean squared error and
//! turn the errors into a temperature-controlled pose distribution.

// `!(x > 0.0)` rejects NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod field;
pub mod geometry;
pub mod ingest;
pub mod map;
pub mod metrics;
pub mod registration;
pub mod spectral;
pub mod synth;
#[doc(hidden)]
pub mod testutil;

pub use error::{Error, Result};
pub use field::{read_field, render, write_field, FeatureField, RenderConfig, RenderOutput};
pub use geometry::{enumerate_grid, pose_to_extrinsics, CameraPose, Intrinsics, PoseGrid};
pub use estimator::{build_pose_bank, estimate_map, pose_pdf, sample_pose, PoseBank, PoseDistribution, PoseMatcher};
pub use map::FeatureMap;
pub use registration::{RegistrationConfig, Similarity2D};
