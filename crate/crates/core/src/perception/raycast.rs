use crate::sim::{Obstacle, Vec3};

/// Fill value for rays that hit nothing (and for failed cameras), meters.
pub const D_RENDER_MAX: f64 = 100.0;

/// Geometry visible to one observer: spheres plus an optional ground plane
/// at z = 0.
#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub spheres: Vec<Obstacle>,
    pub ground: bool,
}

impl Scene {
    /// Obstacles plus every other visible agent as a sphere of radius `r_a`.
    pub fn for_agent(
        obstacles: &[Obstacle],
        positions: &[Vec3],
        visible: &[bool],
        me: usize,
        r_a: f64,
        ground: bool,
    ) -> Self {
        let mut spheres = obstacles.to_vec();
        for (j, (&p, &vis)) in positions.iter().zip(visible).enumerate() {
            if j != me && vis {
                spheres.push(Obstacle { center: p, radius: r_a });
            }
        }
        Self { spheres, ground }
    }
}

/// Distance along a unit ray to the nearest forward intersection with the
/// sphere. An origin inside the sphere reads 0.
pub fn ray_sphere_depth(origin: Vec3, dir: Vec3, sphere: &Obstacle) -> Option<f64> {
    let oc = origin - sphere.center;
    let b = oc.dot(&dir);
    let c = oc.norm_squared() - sphere.radius * sphere.radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    if b >= 0.0 {
        return None;
    }
    let mut disc = b * b - c;
    if disc < 0.0 {
        // Grazing rays lose a few ulps in b² − c.
        if disc > -1e-12 * (b * b) {
            disc = 0.0;
        } else {
            return None;
        }
    }
    Some(-b - disc.sqrt())
}

pub fn ray_ground_depth(origin: Vec3, dir: Vec3) -> Option<f64> {
    if origin[2] <= 0.0 {
        return Some(0.0);
    }
    if dir[2] >= 0.0 {
        return None;
    }
    Some(-origin[2] / dir[2])
}

/// Range along `dir` to the nearest surface among `spheres` (indices into
/// the scene), clamped to [`D_RENDER_MAX`].
pub fn cast(scene: &Scene, candidates: &[usize], origin: Vec3, dir: Vec3) -> f64 {
    let mut best = D_RENDER_MAX;
    if scene.ground {
        if let Some(t) = ray_ground_depth(origin, dir) {
            best = best.min(t);
        }
    }
    for &i in candidates {
        if let Some(t) = ray_sphere_depth(origin, dir, &scene.spheres[i]) {
            best = best.min(t);
        }
    }
    best
}

/// Spheres that can intersect any ray within `half_angle` of `axis`.
pub fn cull(scene: &Scene, origin: Vec3, axis: Vec3, half_angle: f64) -> Vec<usize> {
    scene
        .spheres
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            let oc = s.center - origin;
            let d = oc.norm();
            if d <= s.radius {
                return true;
            }
            let ang = (oc.dot(&axis) / d).clamp(-1.0, 1.0).acos();
            ang <= half_angle + (s.radius / d).asin() + 1e-9
        })
        .map(|(i, _)| i)
        .collect()
}
