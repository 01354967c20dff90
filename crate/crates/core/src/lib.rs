//! Camera and radar 3D object detection fused by cross-domain spatial matching.
//!
//! Camera feature maps live in image space (rows, columns, features) while
//! radar features live on a bird's-eye-view grid (forward, left, features).
//! This crate rotates camera feature tensors by index so that both share the
//! vehicle frame, scatters them onto the BEV grid by distance range, refines
//! them and concatenates them with radar features before a shared detection
//! head.
//!
//! Modules:
//!
//! - [`geometry`] – vehicle frame, quaternions, index rotation, pinhole camera.
//! - [`dataio`] – scenes, labels, preprocessing, statistics, synthetic scenes.
//! - [`voxelizer`] – radar voxel grid, voxel feature extractor, Z stacking.
//! - [`tensornet`] – tape-based reverse-mode differentiation and the layers
//!   the toy backbones, BiFPN blocks and heads are built from.
//! - [`cdsm`] – alignment, BEV aggregation, refinement and fusion.
//! - [`detector`] – anchors, box coding, losses, NMS.
//! - [`evaluator`] – association, average precision, NuScenes-style mAP.
//! - [`train`] – model assembly, Adam, cosine schedule, training regimes.

pub mod cdsm;
pub mod dataio;
pub mod detector;
pub mod error;
pub mod evaluator;
pub mod geometry;
pub mod tensor;
pub mod tensornet;
pub mod train;
pub mod voxelizer;

pub use dataio::{Box2D, Box3D, Label, RadarPoint, Scene};
pub use error::{Error, Result};
pub use geometry::{AxisRotation, CameraCalib, FovBox, OrientedTensor, Quaternion, VcsPoint};
pub use tensor::Tensor;
