//! Deterministic synthetic scene pairs: a box-shaped room sampled on its
//! inner faces plus box and sphere objects that may differ between scans.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ChangeKind, GroundTruthRegion};
use crate::pointcloud::PointCloud;

/// Noise draws beyond this many standard deviations are redrawn.
pub const NOISE_TRUNCATION: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Shape {
    Box { size: [f64; 3] },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: Shape,
    pub center: [f64; 3],
    pub present_at_t0: bool,
    pub present_at_t: bool,
}

impl ObjectSpec {
    pub fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        let half = match self.shape {
            Shape::Box { size } => size.map(|s| s / 2.0),
            Shape::Sphere { radius } => [radius; 3],
        };
        (
            [0, 1, 2].map(|d| self.center[d] - half[d]),
            [0, 1, 2].map(|d| self.center[d] + half[d]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseJitter {
    /// Per-axis translation standard deviation, meters.
    pub translation_sigma: f64,
    /// Per-axis rotation standard deviation, radians.
    pub rotation_sigma: f64,
}

impl Default for PoseJitter {
    fn default() -> Self {
        Self {
            translation_sigma: 0.01,
            rotation_sigma: 0.5_f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    /// Points per square meter on the room faces.
    pub wall_point_density: f64,
    /// Points per square meter on object surfaces; defaults to the wall density.
    #[serde(default)]
    pub object_point_density: Option<f64>,
    pub objects: Vec<ObjectSpec>,
    pub noise_sigma: f64,
    #[serde(default)]
    pub pose_jitter: PoseJitter,
    pub seed: u64,
}

impl SceneSpec {
    /// A 4 m cube room with `count` boxes of the given kind placed at seeded
    /// positions near the room center, at least 0.9 m apart where possible.
    /// Objects are sampled four times as densely as the walls.
    pub fn random_objects(seed: u64, count: usize, kind: ChangeKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0b1e_c75);
        let room_min = [0.0; 3];
        let room_max = [4.0; 3];
        let mut objects: Vec<ObjectSpec> = Vec::with_capacity(count);
        let mut attempts = 0;
        while objects.len() < count {
            attempts += 1;
            let size = [0, 1, 2].map(|_| rng.random_range(0.35..0.6));
            let center = [0, 1, 2].map(|d| (room_min[d] + room_max[d]) / 2.0 + rng.random_range(-0.5..0.5));
            let clear = objects.iter().all(|o| {
                let d2: f64 = (0..3).map(|d| (o.center[d] - center[d]).powi(2)).sum();
                d2.sqrt() > 0.9
            });
            if !clear && attempts < 1000 {
                continue;
            }
            let appear = kind == ChangeKind::Appearance;
            objects.push(ObjectSpec {
                name: format!("box{}", objects.len()),
                shape: Shape::Box { size },
                center,
                present_at_t0: !appear,
                present_at_t: appear,
            });
        }
        Self {
            room_min,
            room_max,
            wall_point_density: 100.0,
            object_point_density: Some(400.0),
            objects,
            noise_sigma: 0.005,
            pose_jitter: PoseJitter::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if (0..3).any(|d| !(self.room_min[d] < self.room_max[d])) {
            return bad("room_min must be below room_max on every axis".into());
        }
        let object_density = self.object_density();
        for (label, v) in [
            ("wall_point_density", self.wall_point_density),
            ("object_point_density", object_density),
            ("noise_sigma", self.noise_sigma),
            ("translation_sigma", self.pose_jitter.translation_sigma),
            ("rotation_sigma", self.pose_jitter.rotation_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{label} must be a non-negative number"));
            }
        }
        for o in &self.objects {
            let positive = match o.shape {
                Shape::Box { size } => size.iter().all(|&s| s > 0.0),
                Shape::Sphere { radius } => radius > 0.0,
            };
            if !positive {
                return bad(format!("object {:?} has a non-positive size", o.name));
            }
            let (lo, hi) = o.aabb();
            if (0..3).any(|d| lo[d] < self.room_min[d] || hi[d] > self.room_max[d]) {
                return bad(format!("object {:?} does not fit inside the room", o.name));
            }
        }
        let has_objects = self.objects.iter().any(|o| o.present_at_t0 || o.present_at_t);
        if self.wall_point_density == 0.0 && (object_density == 0.0 || !has_objects) {
            return bad("scene has zero point density".into());
        }
        Ok(())
    }

    fn object_density(&self) -> f64 {
        self.object_point_density.unwrap_or(self.wall_point_density)
    }

    /// The same scene with every object's presence flags exchanged.
    pub fn swapped(&self) -> Self {
        let mut s = self.clone();
        for o in &mut s.objects {
            std::mem::swap(&mut o.present_at_t0, &mut o.present_at_t);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct ScenePair {
    pub cloud_t0: PointCloud,
    pub cloud_t: PointCloud,
    pub truth: Vec<GroundTruthRegion>,
}

/// Stratified samples on a parallelogram: about `density * area` points,
/// one per grid cell with the cells spread evenly over the grid.
fn sample_rect(
    rng: &mut ChaCha8Rng,
    origin: Vector3<f64>,
    edge_u: Vector3<f64>,
    edge_v: Vector3<f64>,
    density: f64,
    out: &mut Vec<Vector3<f64>>,
) {
    let (w, h) = (edge_u.norm(), edge_v.norm());
    let n = (w * h * density).round() as usize;
    if n == 0 {
        return;
    }
    let nu = ((n as f64 * w / h).sqrt().round() as usize).max(1);
    let nv = n.div_ceil(nu);
    for j in 0..n {
        let cell = j * nu * nv / n;
        let (cu, cv) = (cell % nu, cell / nu);
        let u = (cu as f64 + rng.random::<f64>()) / nu as f64;
        let v = (cv as f64 + rng.random::<f64>()) / nv as f64;
        out.push(origin + edge_u * u + edge_v * v);
    }
}

/// Equal-area stratified samples on a sphere, stratified in height and
/// azimuth.
fn sample_sphere(
    rng: &mut ChaCha8Rng,
    center: Vector3<f64>,
    radius: f64,
    density: f64,
    out: &mut Vec<Vector3<f64>>,
) {
    let n = (4.0 * std::f64::consts::PI * radius * radius * density).round() as usize;
    if n == 0 {
        return;
    }
    let n_phi = ((n as f64 * std::f64::consts::PI).sqrt().round() as usize).max(1);
    let n_z = n.div_ceil(n_phi);
    for j in 0..n {
        let cell = j * n_phi * n_z / n;
        let (cp, cz) = (cell % n_phi, cell / n_phi);
        let phi = 2.0 * std::f64::consts::PI * (cp as f64 + rng.random::<f64>()) / n_phi as f64;
        let z = -1.0 + 2.0 * (cz as f64 + rng.random::<f64>()) / n_z as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        out.push(center + Vector3::new(r * phi.cos(), r * phi.sin(), z) * radius);
    }
}

fn sample_box_faces(
    rng: &mut ChaCha8Rng,
    lo: [f64; 3],
    hi: [f64; 3],
    density: f64,
    out: &mut Vec<Vector3<f64>>,
) {
    let lo = Vector3::from(lo);
    let ext = Vector3::from(hi) - lo;
    let axis = |d: usize| {
        let mut e = Vector3::zeros();
        e[d] = ext[d];
        e
    };
    for d in 0..3 {
        let (a, b) = ((d + 1) % 3, (d + 2) % 3);
        for side in [0.0, 1.0] {
            sample_rect(rng, lo + axis(d) * side, axis(a), axis(b), density, out);
        }
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x: f64 = StandardNormal.sample(rng);
        if x.abs() <= NOISE_TRUNCATION {
            return x;
        }
    }
}

/// RNG stream for a cloud, keyed by which objects it contains so that a
/// given presence pattern always yields the same points.
fn stream_key(presence: &[bool], role: Option<u8>) -> u64 {
    const FNV_PRIME: u64 = 0x100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let tag = role.map_or(0, |r| r + 1);
    for byte in std::iter::once(tag).chain(presence.iter().map(|&p| p as u8)) {
        h = (h ^ byte as u64).wrapping_mul(FNV_PRIME);
    }
    h
}

fn generate_cloud(spec: &SceneSpec, presence: &[bool], stream: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut points = Vec::new();
    sample_box_faces(
        &mut rng,
        spec.room_min,
        spec.room_max,
        spec.wall_point_density,
        &mut points,
    );
    let density = spec.object_density();
    for (o, _) in spec.objects.iter().zip(presence).filter(|(_, &p)| p) {
        match o.shape {
            Shape::Box { .. } => {
                let (lo, hi) = o.aabb();
                sample_box_faces(&mut rng, lo, hi, density, &mut points);
            }
            Shape::Sphere { radius } => {
                sample_sphere(&mut rng, Vector3::from(o.center), radius, density, &mut points)
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        for p in &mut points {
            for d in 0..3 {
                p[d] += spec.noise_sigma * truncated_normal(&mut rng);
            }
        }
    }
    let jitter = spec.pose_jitter;
    if jitter.translation_sigma > 0.0 || jitter.rotation_sigma > 0.0 {
        let mut gauss = |s: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            s * z
        };
        let omega = Vector3::new(
            gauss(jitter.rotation_sigma),
            gauss(jitter.rotation_sigma),
            gauss(jitter.rotation_sigma),
        );
        let shift = Vector3::new(
            gauss(jitter.translation_sigma),
            gauss(jitter.translation_sigma),
            gauss(jitter.translation_sigma),
        );
        let rotation = Rotation3::from_scaled_axis(omega);
        let pivot = (Vector3::from(spec.room_min) + Vector3::from(spec.room_max)) / 2.0;
        for p in &mut points {
            *p = rotation * (*p - pivot) + pivot + shift;
        }
    }
    PointCloud::from_points(3, points.iter().map(|p| [p.x, p.y, p.z]))
}

/// Samples both scans of `spec` and the regions where they differ.
pub fn generate_pair(spec: &SceneSpec) -> Result<ScenePair> {
    spec.validate()?;
    let at_t0: Vec<bool> = spec.objects.iter().map(|o| o.present_at_t0).collect();
    let at_t: Vec<bool> = spec.objects.iter().map(|o| o.present_at_t).collect();
    let (key_t0, key_t) = if at_t0 == at_t {
        (stream_key(&at_t0, Some(0)), stream_key(&at_t, Some(1)))
    } else {
        (stream_key(&at_t0, None), stream_key(&at_t, None))
    };
    let cloud_t0 = generate_cloud(spec, &at_t0, key_t0)?.with_frame_id("t0");
    let cloud_t = generate_cloud(spec, &at_t, key_t)?.with_frame_id("t");
    let truth = spec
        .objects
        .iter()
        .filter(|o| o.present_at_t0 != o.present_at_t)
        .map(|o| {
            let (lo, hi) = o.aabb();
            let kind = if o.present_at_t {
                ChangeKind::Appearance
            } else {
                ChangeKind::Disappearance
            };
            GroundTruthRegion::new(o.name.clone(), kind, lo.to_vec(), hi.to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenePair {
        cloud_t0,
        cloud_t,
        truth,
    })
}
