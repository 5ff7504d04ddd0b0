//! Runtime assurance for monocular camera position estimates.
//!
//! Given a sensor image, a position estimate and a way to synthesize views of
//! the scene, the monitors in [`monitor`] decide with a confidence score
//! whether the estimate lies within a radius `ε` of the true camera position.

pub mod flow;
pub mod geom;
pub mod harness;
pub mod monitor;
pub mod robust;
pub mod scene;

pub use geom::{
    calibrate, decompose_essential, epipolar_line_of, epipolar_residual, essential_from_poses, project_to_line,
    sampson_distance, skew, triangulate, uncalibrate, CameraIntrinsics, Decomposition, EpipolarLine, EssentialMatrix,
    GeomError, NormalizedPoint, PixelPoint, Pose, RelativeMotion,
};

pub use robust::{
    estimate_essential_ransac, solve_pnp_ransac, Correspondence, EssentialEstimate, MinimalSolver, PnpEstimate,
    RansacParams, RobustError,
};

pub use flow::{
    read_flo, sample_sparse, shi_tomasi, DenseFlowField, FlowBackend, FlowError, GrayImage, RgbImage, ShiTomasiParams,
    SparseFlow, View, ViewRole,
};

pub use scene::{
    generate_scene, ImageDirectoryBackend, Manifest, OracleFlowBackend, OracleFlowConfig, RenderBackend, SceneError, SceneKind,
    SceneRenderer, SyntheticScene,
};
pub use monitor::{
    disparity_check, disparity_confidence, normal_cdf, pnp_confidence, verf_light, verf_light_traced, verf_pnp, Decision, FailureReason, LightSample, Method, MonitorConfig,
    MonitorError, TruthEssentialOverride, VerificationReport,
};
