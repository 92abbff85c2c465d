use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::raycast::{cast, cull, Scene, D_RENDER_MAX};
use super::PerceptionError;
use crate::sim::{yaw_matrix, Mat3, Vec3};

/// Body pose of an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub p: Vec3,
    /// Body to world.
    pub r: Mat3,
}

/// Named cameras of the four-camera rig, in yaw-offset order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraId {
    Front,
    Left,
    Back,
    Right,
}

impl CameraId {
    pub const ALL: [CameraId; 4] = [CameraId::Front, CameraId::Left, CameraId::Back, CameraId::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CameraId::Front => "front",
            CameraId::Left => "left",
            CameraId::Back => "back",
            CameraId::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Row-major depth image. Column index grows with azimuth (toward the
/// camera's left), row index with elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Pinhole cameras sharing one intrinsic, mounted at yaw offsets about the
/// body z-axis.
#[derive(Debug, Clone)]
pub struct CameraRig {
    pub ids: Vec<CameraId>,
    pub yaw_offsets: Vec<f64>,
    /// Horizontal field of view, radians.
    pub fov: f64,
    pub width: usize,
    pub height: usize,
    /// Unit ray of every pixel in the camera frame (x forward, y left, z up).
    rays: Vec<Vec3>,
}

impl CameraRig {
    pub fn new(ids: Vec<CameraId>, fov: f64, width: usize, height: usize) -> Result<Self, PerceptionError> {
        if !(fov > 0.0 && fov < PI) {
            return Err(PerceptionError::Config(format!("camera fov {} rad outside (0, π)", fov)));
        }
        if width == 0 || height == 0 {
            return Err(PerceptionError::Config(format!("camera resolution {}×{} is empty", width, height)));
        }
        let f = width as f64 / (2.0 * (fov / 2.0).tan());
        let mut rays = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                let y = j as f64 + 0.5 - width as f64 / 2.0;
                let z = i as f64 + 0.5 - height as f64 / 2.0;
                rays.push(Vec3::new(f, y, z).normalize());
            }
        }
        let yaw_offsets = ids.iter().map(|c| c.index() as f64 * FRAC_PI_2).collect();
        Ok(Self { ids, yaw_offsets, fov, width, height, rays })
    }

    /// Four cameras at 0, π/2, π, 3π/2. Requires overlapping views.
    pub fn panoramic(fov: f64, width: usize, height: usize) -> Result<Self, PerceptionError> {
        if fov <= FRAC_PI_2 {
            return Err(PerceptionError::Config(format!(
                "four-camera rig needs fov > 90°, got {:.3}°",
                fov.to_degrees()
            )));
        }
        Self::new(CameraId::ALL.to_vec(), fov, width, height)
    }

    pub fn forward(fov: f64, width: usize, height: usize) -> Result<Self, PerceptionError> {
        Self::new(vec![CameraId::Front], fov, width, height)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn focal(&self) -> f64 {
        self.width as f64 / (2.0 * (self.fov / 2.0).tan())
    }

    /// Vertical field of view, radians.
    pub fn vfov(&self) -> f64 {
        2.0 * (self.height as f64 / (2.0 * self.focal())).atan()
    }

    /// Camera-to-world rotation of camera `k`.
    pub fn camera_rotation(&self, pose: &Pose, k: usize) -> Mat3 {
        pose.r * yaw_matrix(self.yaw_offsets[k])
    }

    /// Range image of camera `k`.
    pub fn render(&self, pose: &Pose, k: usize, scene: &Scene) -> DepthImage {
        let rc = self.camera_rotation(pose, k);
        let half_diag = ((self.width as f64 / 2.0).hypot(self.height as f64 / 2.0) / self.focal()).atan();
        let cand = cull(scene, pose.p, rc.column(0).into_owned(), half_diag);
        let data = self.rays.iter().map(|d| cast(scene, &cand, pose.p, rc * d)).collect();
        DepthImage { width: self.width, height: self.height, data }
    }

    pub fn render_all(&self, pose: &Pose, scene: &Scene) -> Vec<DepthImage> {
        (0..self.len()).map(|k| self.render(pose, k, scene)).collect()
    }
}

/// Overwrites the images of failed cameras with the max-range reading.
pub fn apply_camera_failure(rig: &CameraRig, images: &mut [DepthImage], failed: &[CameraId]) {
    for (img, id) in images.iter_mut().zip(&rig.ids) {
        if failed.contains(id) {
            img.data.iter_mut().for_each(|d| *d = D_RENDER_MAX);
        }
    }
}
