//! Analytic depth rendering, four-camera equirectangular stitching and
//! network-input preprocessing.

mod camera;
mod dump;
mod preprocess;
mod raycast;
mod stitch;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use camera::{apply_camera_failure, CameraId, CameraRig, DepthImage, Pose};
pub use dump::{read_depth_png16, write_depth_png16, PNG16_SATURATION_M};
pub use preprocess::{preprocess, PreprocessConfig};
pub use raycast::{cast, cull, ray_ground_depth, ray_sphere_depth, Scene, D_RENDER_MAX};
pub use stitch::{
    bearing_vector, blend_weight, direct_equirect_render, equirect_direction, panorama_vfov, reproject_to_camera,
    wrap_angle, PanoramaFrame, StitchTable,
};

#[derive(Debug, thiserror::Error)]
pub enum PerceptionError {
    #[error("invalid perception configuration: {0}")]
    Config(String),
    #[error("image shape: {0}")]
    Shape(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigKind {
    /// Four cameras at cardinal yaw offsets.
    Panoramic,
    /// Front camera only; unseen bearings read max range.
    Forward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionConfig {
    pub rig: RigKind,
    /// Horizontal field of view of each rig camera, degrees.
    pub fov_deg: f64,
    /// Field of view of the front-only camera, degrees.
    pub forward_fov_deg: f64,
    pub camera_width: usize,
    pub camera_height: usize,
    pub pano_width: usize,
    pub pano_height: usize,
    /// Render the z = 0 ground plane.
    pub ground: bool,
    pub preprocess: PreprocessConfig,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            rig: RigKind::Panoramic,
            fov_deg: 100.0,
            forward_fov_deg: 79.0,
            camera_width: 64,
            camera_height: 64,
            pano_width: 128,
            pano_height: 32,
            ground: true,
            preprocess: PreprocessConfig::default(),
        }
    }
}

/// Everything needed to turn a pose and scene into a network input.
#[derive(Debug, Clone)]
pub struct Perception {
    pub config: PerceptionConfig,
    pub rig: CameraRig,
    pub table: StitchTable,
}

impl Perception {
    pub fn new(config: &PerceptionConfig) -> Result<Self, PerceptionError> {
        config.preprocess.validate(config.pano_width, config.pano_height)?;
        let fov = config.fov_deg.to_radians();
        // The panorama band is that of the four-camera rig for either kind,
        // so both produce inputs of identical geometry.
        let vfov = panorama_vfov(fov, config.camera_width, config.camera_height);
        let (rig, allow_uncovered) = match config.rig {
            RigKind::Panoramic => (CameraRig::panoramic(fov, config.camera_width, config.camera_height)?, false),
            RigKind::Forward => (
                CameraRig::forward(config.forward_fov_deg.to_radians(), config.camera_width, config.camera_height)?,
                true,
            ),
        };
        let table = StitchTable::new(&rig, config.pano_width, config.pano_height, vfov, allow_uncovered)?;
        Ok(Self { config: config.clone(), rig, table })
    }

    /// `[height, width]` of the preprocessed input.
    pub fn input_dims(&self) -> [usize; 2] {
        let k = self.config.preprocess.pool;
        [self.config.pano_height / k, self.config.pano_width / k]
    }

    pub fn panorama(&self, pose: &Pose, scene: &Scene, failed: &[CameraId]) -> PanoramaFrame {
        let mut imgs = self.rig.render_all(pose, scene);
        apply_camera_failure(&self.rig, &mut imgs, failed);
        self.table.stitch(&imgs).expect("rig images match the stitch table")
    }

    pub fn observe<R: Rng>(&self, pose: &Pose, scene: &Scene, failed: &[CameraId], rng: &mut R) -> Vec<f64> {
        preprocess(&self.panorama(pose, scene, failed), &self.config.preprocess, rng)
    }
}
