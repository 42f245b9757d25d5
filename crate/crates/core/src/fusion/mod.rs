//! Confidence-weighted RGB-D feature fusion with analytic gradients.
//!
//! A five-layer estimator turns raw depth and its validity mask into a
//! confidence map. At each pyramid level the map is resized, multiplied into
//! the depth features, concatenated with the RGB features and reduced back
//! to the original channel count by a 1x1 convolution.

pub mod conv;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod tensor;

pub use conv::{Activation, ConvLayer};
pub use gradcheck::{fuse_check, grad_check, FuseCheckReport, GradCheckReport};
pub use model::{fuse_level, fuse_pyramid, toy_backbone, ConfidenceEstimator, FeaturePyramid, FusionModule};
pub use ops::{concat, multiply_broadcast, resize_bilinear};
pub use tensor::Tensor;
