use std::f64::consts::{PI, TAU};

use super::camera::{CameraRig, DepthImage, Pose};
use super::raycast::{cast, Scene, D_RENDER_MAX};
use super::PerceptionError;
use crate::sim::Vec3;

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Bearing (azimuth θ, elevation φ) of panorama pixel (u, v).
pub fn equirect_direction(u: usize, v: usize, width: usize, height: usize, vfov: f64) -> (f64, f64) {
    let theta = TAU * u as f64 / width as f64;
    let phi = (v as f64 / height as f64 - 0.5) * vfov;
    (theta, phi)
}

/// Unit vector of a bearing in the body frame.
pub fn bearing_vector(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin())
}

/// Continuous image coordinates of a bearing in camera `k` (yaw offset
/// `phi_k`, focal `f`). Only meaningful for |wrap(θ − φ_k)| < α/2.
pub fn reproject_to_camera(theta: f64, phi: f64, phi_k: f64, f: f64, width: usize, height: usize) -> (f64, f64) {
    let d = theta - phi_k;
    let cx = f * d.tan() + width as f64 / 2.0;
    let cy = f * phi.sin() / (phi.cos() * d.cos()) + height as f64 / 2.0;
    (cx, cy)
}

/// Cosine-squared azimuthal blend weight; zero outside the field of view.
pub fn blend_weight(theta: f64, phi_k: f64, fov: f64) -> f64 {
    let d = wrap_angle(theta - phi_k);
    if d.abs() > fov / 2.0 {
        return 0.0;
    }
    (PI * d / fov).cos().powi(2)
}

/// Vertical field of view of the stitched panorama: the largest band the
/// four-camera rig sees at every azimuth, seam bearings included.
pub fn panorama_vfov(fov: f64, cam_width: usize, cam_height: usize) -> f64 {
    let f = cam_width as f64 / (2.0 * (fov / 2.0).tan());
    let half = cam_height as f64 / (2.0 * f);
    2.0 * (half * (PI / 4.0).cos()).atan()
}

/// Equirectangular range panorama. Row index grows with elevation; columns
/// 0 and W−1 are adjacent bearings.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaFrame {
    pub width: usize,
    pub height: usize,
    pub vfov: f64,
    pub depth: Vec<f64>,
    /// Bit k set when camera k contributed to the pixel.
    pub provenance: Vec<u8>,
}

impl PanoramaFrame {
    pub fn at(&self, v: usize, u: usize) -> f64 {
        self.depth[v * self.width + u]
    }

    /// Circular shift by `s` columns toward larger azimuth indices.
    pub fn shift_columns(&self, s: isize) -> Self {
        let mut out = self.clone();
        let w = self.width as isize;
        for v in 0..self.height {
            for u in 0..self.width {
                let src = (u as isize - s).rem_euclid(w) as usize;
                out.depth[v * self.width + u] = self.depth[v * self.width + src];
                out.provenance[v * self.width + u] = self.provenance[v * self.width + src];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    cam: usize,
    weight: f64,
    idx: [usize; 4],
    frac: [f64; 2],
}

impl Tap {
    /// Bilinear sample written as nested lerps so equal corners are exact.
    fn sample(&self, img: &[f64]) -> f64 {
        let [fx, fy] = self.frac;
        let lo = img[self.idx[0]] + fx * (img[self.idx[1]] - img[self.idx[0]]);
        let hi = img[self.idx[2]] + fx * (img[self.idx[3]] - img[self.idx[2]]);
        lo + fy * (hi - lo)
    }
}

/// Precomputed reprojection and normalized blend weights of every panorama
/// pixel.
#[derive(Debug, Clone)]
pub struct StitchTable {
    pub width: usize,
    pub height: usize,
    pub vfov: f64,
    cam_width: usize,
    cam_height: usize,
    n_cams: usize,
    offsets: Vec<usize>,
    taps: Vec<Tap>,
    provenance: Vec<u8>,
}

fn bilinear_taps(cx: f64, cy: f64, w: usize, h: usize) -> ([usize; 4], [f64; 2]) {
    let x = (cx - 0.5).clamp(0.0, (w - 1) as f64);
    let y = (cy - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    ([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], [fx, fy])
}

const EDGE_TOL: f64 = 1e-9;

impl StitchTable {
    /// Builds the table; with `allow_uncovered` false every bearing must be
    /// seen by some camera.
    pub fn new(
        rig: &CameraRig,
        width: usize,
        height: usize,
        vfov: f64,
        allow_uncovered: bool,
    ) -> Result<Self, PerceptionError> {
        if width == 0 || height == 0 {
            return Err(PerceptionError::Config(format!("panorama {}×{} is empty", width, height)));
        }
        let f = rig.focal();
        let mut offsets = Vec::with_capacity(width * height + 1);
        let mut taps = Vec::new();
        let mut provenance = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                offsets.push(taps.len());
                let (theta, phi) = equirect_direction(u, v, width, height, vfov);
                let start = taps.len();
                let mut mask = 0u8;
                for k in 0..rig.len() {
                    let phi_k = rig.yaw_offsets[k];
                    let d = wrap_angle(theta - phi_k);
                    if d.abs() >= rig.fov / 2.0 {
                        continue;
                    }
                    let (cx, cy) = reproject_to_camera(d, phi, 0.0, f, rig.width, rig.height);
                    if cy < -EDGE_TOL || cy > rig.height as f64 + EDGE_TOL {
                        continue;
                    }
                    let w = blend_weight(theta, phi_k, rig.fov);
                    if w <= 0.0 {
                        continue;
                    }
                    let (idx, frac) = bilinear_taps(cx, cy, rig.width, rig.height);
                    taps.push(Tap { cam: k, weight: w, idx, frac });
                    mask |= 1 << rig.ids[k].index();
                }
                let total: f64 = taps[start..].iter().map(|t| t.weight).sum();
                if total > 0.0 {
                    taps[start..].iter_mut().for_each(|t| t.weight /= total);
                } else if !allow_uncovered {
                    return Err(PerceptionError::Config(format!(
                        "panorama bearing (θ={:.2}°, φ={:.2}°) is seen by no camera",
                        theta.to_degrees(),
                        phi.to_degrees()
                    )));
                }
                provenance.push(mask);
            }
        }
        offsets.push(taps.len());
        Ok(Self {
            width,
            height,
            vfov,
            cam_width: rig.width,
            cam_height: rig.height,
            n_cams: rig.len(),
            offsets,
            taps,
            provenance,
        })
    }

    /// Normalized weights of pixel (u, v), one per contributing camera.
    pub fn weights(&self, u: usize, v: usize) -> Vec<(usize, f64)> {
        let i = v * self.width + u;
        self.taps[self.offsets[i]..self.offsets[i + 1]].iter().map(|t| (t.cam, t.weight)).collect()
    }

    /// Blends the camera images into a panorama. Bearings no camera sees
    /// read [`D_RENDER_MAX`].
    pub fn stitch(&self, images: &[DepthImage]) -> Result<PanoramaFrame, PerceptionError> {
        if images.len() != self.n_cams
            || images.iter().any(|im| im.width != self.cam_width || im.height != self.cam_height)
        {
            return Err(PerceptionError::Shape(format!(
                "stitch expects {} images of {}×{}",
                self.n_cams, self.cam_width, self.cam_height
            )));
        }
        let n = self.width * self.height;
        let mut depth = Vec::with_capacity(n);
        for i in 0..n {
            let taps = &self.taps[self.offsets[i]..self.offsets[i + 1]];
            if taps.is_empty() {
                depth.push(D_RENDER_MAX);
                continue;
            }
            // Σ w_k s_k as s_0 + Σ w_k (s_k − s_0): identical samples blend exactly.
            let s0 = taps[0].sample(&images[taps[0].cam].data);
            let mut acc = s0;
            for t in &taps[1..] {
                acc += t.weight * (t.sample(&images[t.cam].data) - s0);
            }
            depth.push(acc);
        }
        Ok(PanoramaFrame {
            width: self.width,
            height: self.height,
            vfov: self.vfov,
            depth,
            provenance: self.provenance.clone(),
        })
    }
}

/// One ray per panorama bearing, cast straight from the body frame.
pub fn direct_equirect_render(pose: &Pose, scene: &Scene, width: usize, height: usize, vfov: f64) -> PanoramaFrame {
    let all: Vec<usize> = (0..scene.spheres.len()).collect();
    let mut depth = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let (theta, phi) = equirect_direction(u, v, width, height, vfov);
            depth.push(cast(scene, &all, pose.p, pose.r * bearing_vector(theta, phi)));
        }
    }
    PanoramaFrame { width, height, vfov, depth, provenance: vec![0; width * height] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::camera::{apply_camera_failure, CameraId};
    use crate::sim::{yaw_matrix, Mat3, Obstacle};
    use std::f64::consts::FRAC_PI_2;

    const FOV: f64 = 100.0 * PI / 180.0;

    #[test]
    fn direction_examples() {
        assert_eq!(equirect_direction(0, 8, 64, 16, 1.0), (0.0, 0.0));
        assert!((equirect_direction(32, 8, 64, 16, 1.0).0 - PI).abs() < 1e-15);
        assert!((equirect_direction(48, 8, 64, 16, 1.0).0 - 1.5 * PI).abs() < 1e-15);
    }

    #[test]
    fn reprojection_examples() {
        let (w, h) = (64, 64);
        let f = w as f64 / (2.0 * (FOV / 2.0).tan());
        assert_eq!(reproject_to_camera(0.3, 0.0, 0.3, f, w, h), (32.0, 32.0));
        let (cx, _) = reproject_to_camera(FOV / 2.0, 0.0, 0.0, f, w, h);
        assert!((cx - 64.0).abs() < 1e-9);
        let (cx, _) = reproject_to_camera(-FOV / 2.0, 0.0, 0.0, f, w, h);
        assert!(cx.abs() < 1e-9);
    }

    #[test]
    fn blend_examples() {
        assert_eq!(blend_weight(0.4, 0.4, FOV), 1.0);
        assert!(blend_weight(FOV / 2.0, 0.0, FOV).abs() < 1e-15);
        assert!((blend_weight(FOV / 4.0, 0.0, FOV) - 0.5).abs() < 1e-15);
        assert_eq!(blend_weight(FOV, 0.0, FOV), 0.0);
        // Support wraps across the 0/2π seam.
        assert!((blend_weight(TAU - 0.1, 0.0, FOV) - blend_weight(0.1, 0.0, FOV)).abs() < 1e-12);
    }

    fn table() -> (CameraRig, StitchTable) {
        let rig = CameraRig::panoramic(FOV, 32, 32).unwrap();
        let vfov = panorama_vfov(FOV, 32, 32);
        let t = StitchTable::new(&rig, 64, 16, vfov, false).unwrap();
        (rig, t)
    }

    #[test]
    fn weights_partition_unity() {
        let (_, t) = table();
        for v in 0..t.height {
            for u in 0..t.width {
                let w = t.weights(u, v);
                assert!(!w.is_empty());
                let s: f64 = w.iter().map(|x| x.1).sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn constant_inputs_constant_panorama() {
        let (_, t) = table();
        let p = t.stitch(&vec![DepthImage::constant(32, 32, 7.25); 4]).unwrap();
        assert!(p.depth.iter().all(|&d| (d - 7.25).abs() < 1e-12));
    }

    #[test]
    fn narrow_fov_leaves_gaps() {
        let rig = CameraRig::new(CameraId::ALL.to_vec(), 80f64.to_radians(), 16, 16).unwrap();
        assert!(matches!(StitchTable::new(&rig, 64, 16, 0.5, false), Err(PerceptionError::Config(_))));
        assert!(StitchTable::new(&rig, 64, 16, 0.5, true).is_ok());
    }

    #[test]
    fn all_failed_is_constant_max() {
        let (rig, t) = table();
        let pose = Pose { p: Vec3::new(0.0, 0.0, 1.5), r: Mat3::identity() };
        let scene = Scene { spheres: vec![Obstacle { center: Vec3::new(2.0, 0.0, 1.5), radius: 0.5 }], ground: true };
        let mut imgs = rig.render_all(&pose, &scene);
        apply_camera_failure(&rig, &mut imgs, &CameraId::ALL);
        let p = t.stitch(&imgs).unwrap();
        assert!(p.depth.iter().all(|&d| d == D_RENDER_MAX));
    }

    #[test]
    fn single_sphere_matches_direct_render() {
        let (rig, t) = table();
        let pose = Pose { p: Vec3::new(0.0, 0.0, 1.5), r: Mat3::identity() };
        let scene = Scene { spheres: vec![Obstacle { center: Vec3::new(3.0, 2.0, 1.5), radius: 1.0 }], ground: false };
        let s = t.stitch(&rig.render_all(&pose, &scene)).unwrap();
        let d = direct_equirect_render(&pose, &scene, 64, 16, t.vfov);
        // Interior of the sphere's disc, away from silhouettes.
        let (theta, _) = equirect_direction(6, 8, 64, 16, t.vfov);
        assert!((theta - (2.0f64).atan2(3.0)).abs() < 0.1);
        assert!((s.at(8, 6) - d.at(8, 6)).abs() / d.at(8, 6) < 0.02);
    }

    #[test]
    fn yaw_by_column_step_shifts_panorama() {
        let (rig, t) = table();
        let scene = Scene {
            spheres: vec![
                Obstacle { center: Vec3::new(3.0, 1.0, 1.5), radius: 0.8 },
                Obstacle { center: Vec3::new(-2.0, -3.0, 2.0), radius: 1.2 },
            ],
            ground: true,
        };
        let base = Pose { p: Vec3::new(0.0, 0.0, 1.5), r: Mat3::identity() };
        // Rotating the body by −k columns moves world bearings k columns up.
        let s = 16;
        let rot = Pose { p: base.p, r: yaw_matrix(-TAU * s as f64 / 64.0) };
        assert!((TAU * s as f64 / 64.0 - FRAC_PI_2).abs() < 1e-15);
        let a = t.stitch(&rig.render_all(&base, &scene)).unwrap().shift_columns(s as isize);
        let b = t.stitch(&rig.render_all(&rot, &scene)).unwrap();
        // Quarter turns map the rig onto itself, so the match is exact.
        for (x, y) in a.depth.iter().zip(&b.depth) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn mirror_symmetric_direct_render() {
        let pose = Pose { p: Vec3::new(0.0, 0.0, 1.5), r: Mat3::identity() };
        let scene = Scene {
            spheres: vec![
                Obstacle { center: Vec3::new(3.0, 1.5, 1.5), radius: 0.6 },
                Obstacle { center: Vec3::new(3.0, -1.5, 1.5), radius: 0.6 },
            ],
            ground: true,
        };
        let (w, h) = (64, 16);
        let p = direct_equirect_render(&pose, &scene, w, h, 1.2);
        for v in 0..h {
            for u in 1..w {
                assert!((p.at(v, u) - p.at(v, w - u)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn front_failure_blanks_forward_sector() {
        let (rig, t) = table();
        let pose = Pose { p: Vec3::new(0.0, 0.0, 1.5), r: Mat3::identity() };
        let scene = Scene { spheres: vec![Obstacle { center: Vec3::new(2.5, 0.0, 1.5), radius: 2.0 }], ground: false };
        let mut imgs = rig.render_all(&pose, &scene);
        apply_camera_failure(&rig, &mut imgs, &[CameraId::Front]);
        let p = t.stitch(&imgs).unwrap();
        // Bearings within ±(90° − α/2) = ±40° see only the front camera.
        for v in 0..16 {
            for u in (0..=6).chain(58..64) {
                assert_eq!(p.at(v, u), D_RENDER_MAX, "u={} v={}", u, v);
            }
        }
    }
}
