//! Geometry, rotation-codebook, consistency, depth pseudo-label and metric
//! routines for monocular 6D object pose refinement.
//!
//! Everything numeric is generic over [`Real`]; the aliases below fix the
//! scalar to `f64`.

pub mod consistency;
pub mod depth;
pub mod error;
pub mod geometry;
pub mod image;
pub mod mesh;
pub mod metrics;
pub mod scalar;
pub mod so3;

pub use consistency::{
    aggregate_self_losses, apply_aug_transform, derive_aug_code, derive_aug_pose, derive_aug_rotation, mask_consistency_loss,
    sample_anchor_box, translation_consistency_loss, warp_mask_to_aug, AugRanges, AugTransform, ConsistencyLosses, LossWeights,
    PosePrediction,
};
pub use depth::{
    adaptive_min_depth, depth_offset, gate_depths, generate_pseudo_label, pseudo_label, render_synthetic_depth, truncated_l1,
    GatedDepthSets, OffsetMode, PseudoLabel, PseudoLabelParams,
};
pub use error::{Error, Result};
pub use geometry::{
    encode_translation, project_points, recover_translation, virtual_intrinsics, BoundingBox, CameraIntrinsics, CropFrame, CropSpec,
    Pose6D, ProjectedPoint, RotatedCrop, TranslationCode,
};
pub use image::{DepthImage, Grid, MaskImage};
pub use metrics::{add_error, add_s_dispatch, adds_error, auc, auc_with_mode, recall_at_diameter, AucMode, ObjectModelInfo, PoseRecord};
pub use scalar::Real;
pub use so3::{
    build_codebook, decode_argmax, geodesic_distance, logits, rotation_distribution, rotation_nll, rotation_nll_with_grad, FeatureMap,
    RotationCodebook, RotationDistribution,
};

pub type Pose = Pose6D<f64>;
pub type Intrinsics = CameraIntrinsics<f64>;
pub type Crop = CropSpec<f64>;
pub type Codebook = RotationCodebook<f64>;
pub type Depth = DepthImage<f64>;
pub type Mask = MaskImage<f64>;
pub type Code = TranslationCode<f64>;
pub type ModelInfo = ObjectModelInfo<f64>;
