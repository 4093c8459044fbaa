use prior3d_geometry::{Camera, Cuboid, ObjectClass, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ClassLayout, SceneConfig};
use crate::SceneError;

/// A cuboid together with the flat colour used when shading it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub cuboid: Cuboid,
    pub albedo: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub cameras: Vec<Camera>,
    pub objects: Vec<SceneObject>,
    /// Set when some requested objects could not be placed.
    pub partial: bool,
}

impl Scene {
    pub fn cuboids(&self) -> impl Iterator<Item = &Cuboid> {
        self.objects.iter().map(|o| &o.cuboid)
    }
}

/// Deterministic RNG for one purpose (`stream`) of a seeded scene.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn build_rig(config: &SceneConfig) -> Result<Vec<Camera>, SceneError> {
    let r = &config.rig;
    (0..r.num_cameras)
        .map(|k| {
            let yaw = 2.0 * std::f64::consts::PI * k as f64 / r.num_cameras as f64;
            Camera::mounted(Vec3::new(0.0, 0.0, r.mount_height), yaw, r.hfov_deg, (r.width, r.height))
                .map_err(|e| SceneError::Config(e.to_string()))
        })
        .collect()
}

fn albedo(class: ObjectClass, rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Vehicles lean blue, humans lean warm, so colour alone separates them.
    match class {
        ObjectClass::Vehicle => [rng.gen_range(0.1..0.5), rng.gen_range(0.2..0.6), rng.gen_range(0.55..0.95)],
        ObjectClass::Human => [rng.gen_range(0.6..0.95), rng.gen_range(0.3..0.6), rng.gen_range(0.1..0.35)],
    }
}

fn footprint_radius(extents: [f64; 3]) -> f64 {
    0.5 * extents[0].hypot(extents[1])
}

/// Places objects at random and builds the camera rig. Objects are kept
/// apart by their footprint bounding circles plus the configured gap; an
/// object that finds no free spot within the attempt budget is skipped and
/// the scene marked partial.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene, SceneError> {
    config.validate()?;
    let cameras = build_rig(config)?;
    let mut rng = stream_rng(seed, 0);

    let mut wanted: Vec<ObjectClass> = Vec::new();
    for (class, layout) in [(ObjectClass::Vehicle, &config.vehicle), (ObjectClass::Human, &config.human)] {
        let n = rng.gen_range(layout.count[0]..=layout.count[1]);
        wanted.extend(std::iter::repeat_n(class, n));
    }

    let (r0, r1) = (config.placement_radius.min, config.placement_radius.max);
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut partial = false;
    for class in wanted {
        let layout: &ClassLayout = match class {
            ObjectClass::Vehicle => &config.vehicle,
            ObjectClass::Human => &config.human,
        };
        let extents = [
            rng.gen_range(layout.length.min..=layout.length.max),
            rng.gen_range(layout.width.min..=layout.width.max),
            rng.gen_range(layout.height.min..=layout.height.max),
        ];
        let radius = footprint_radius(extents);
        let mut placed = None;
        for _ in 0..config.max_placement_attempts {
            // uniform over the annulus area
            let r = rng.gen_range(r0 * r0..=r1 * r1).sqrt();
            let phi = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let (x, y) = (r * phi.cos(), r * phi.sin());
            let free = objects.iter().all(|o| {
                let [ox, oy, _] = o.cuboid.center_array();
                (x - ox).hypot(y - oy) >= radius + footprint_radius(o.cuboid.extents()) + config.min_separation
            });
            if free {
                placed = Some((x, y));
                break;
            }
        }
        let Some((x, y)) = placed else {
            partial = true;
            continue;
        };
        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let cuboid = Cuboid::new([x, y, 0.5 * extents[2]], extents, yaw, class)
            .map_err(|e| SceneError::Config(e.to_string()))?;
        objects.push(SceneObject { cuboid, albedo: albedo(class, &mut rng) });
    }

    Ok(Scene { seed, cameras, objects, partial })
}
