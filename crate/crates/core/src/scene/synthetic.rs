use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{project, rotate_point, BAProblem, CameraPose, GroundTruth, Observation, Point3, SceneError, MIN_DEPTH};

const MAX_ATTEMPTS: usize = 100;

/// Parameters of a random-points scene.
///
/// Points are drawn uniformly from `[-point_extent, point_extent]^3`. Camera
/// centers are drawn on a spherical shell around the origin and every camera
/// looks at the origin, so every camera observes every point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_cameras: usize,
    pub num_points: usize,
    /// Std of the Gaussian noise added to the observed pixels.
    pub pixel_sigma: f64,
    /// Std of the perturbation applied to ground-truth points and translations.
    /// Rotations are perturbed with half this value, in radians.
    pub init_noise: f64,
    pub seed: u64,
    pub point_extent: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Half-width of the uniform in-plane roll, radians.
    pub max_roll: f64,
    pub focal: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_cameras: 10,
            num_points: 10,
            pixel_sigma: 1.0,
            init_noise: 0.1,
            seed: 0,
            point_extent: 5.0,
            min_radius: 10.0,
            max_radius: 15.0,
            max_roll: 0.1,
            focal: 500.0,
        }
    }
}

impl SyntheticConfig {
    pub fn new(num_cameras: usize, num_points: usize, pixel_sigma: f64, init_noise: f64, seed: u64) -> Self {
        Self { num_cameras, num_points, pixel_sigma, init_noise, seed, ..Self::default() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

fn gaussian3(rng: &mut ChaCha8Rng, std: f64) -> Vector3<f64> {
    Vector3::new(
        std * rng.sample::<f64, _>(StandardNormal),
        std * rng.sample::<f64, _>(StandardNormal),
        std * rng.sample::<f64, _>(StandardNormal),
    )
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = gaussian3(rng, 1.0);
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn look_at_origin(center: &Vector3<f64>, roll: f64) -> CameraPose {
    let dir = -center;
    let up = if dir.normalize().z.abs() > 0.95 { Vector3::x() } else { Vector3::z() };
    // maps the viewing direction onto -z, as the BAL model expects
    let view = Rotation3::look_at_rh(&dir, &up);
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), roll) * view;
    let rotation = rot.scaled_axis();
    let translation = -(Rotation3::new(rotation) * center);
    CameraPose::new(rotation, translation, 0.0, 0.0, 0.0)
}

fn depths_ok(cameras: &[CameraPose], points: &[Point3]) -> bool {
    cameras.iter().all(|cam| {
        points.iter().all(|pt| {
            let z = rotate_point(&cam.rotation, &pt.position).z + cam.translation.z;
            z < -MIN_DEPTH
        })
    })
}

/// Samples a full-visibility random scene with noisy observations and
/// perturbed initial estimates.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<BAProblem, SceneError> {
    if config.num_cameras < 2 || config.num_points < 1 {
        return Err(SceneError::InvalidProblem(format!(
            "synthetic scenes need >= 2 cameras and >= 1 point, got {} / {}",
            config.num_cameras, config.num_points
        )));
    }
    if config.pixel_sigma < 0.0 || config.init_noise < 0.0 {
        return Err(SceneError::InvalidProblem("noise levels must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for _ in 0..MAX_ATTEMPTS {
        let e = config.point_extent;
        let points: Vec<Point3> = (0..config.num_points)
            .map(|_| Point3::new(rng.random_range(-e..=e), rng.random_range(-e..=e), rng.random_range(-e..=e)))
            .collect();
        let cameras: Vec<CameraPose> = (0..config.num_cameras)
            .map(|_| {
                let radius = rng.random_range(config.min_radius..=config.max_radius);
                let center = random_direction(&mut rng) * radius;
                let roll = rng.random_range(-config.max_roll..=config.max_roll);
                CameraPose { focal: config.focal, ..look_at_origin(&center, roll) }
            })
            .collect();
        if !depths_ok(&cameras, &points) {
            continue;
        }

        let mut observations = Vec::with_capacity(config.num_cameras * config.num_points);
        for (i, cam) in cameras.iter().enumerate() {
            for (j, pt) in points.iter().enumerate() {
                let noise = Vector2::new(
                    config.pixel_sigma * rng.sample::<f64, _>(StandardNormal),
                    config.pixel_sigma * rng.sample::<f64, _>(StandardNormal),
                );
                observations.push(Observation { camera_index: i, point_index: j, pixel: project(cam, pt)? + noise });
            }
        }

        let rot_noise = 0.5 * config.init_noise;
        let init_cameras: Vec<CameraPose> = cameras
            .iter()
            .map(|cam| CameraPose {
                rotation: cam.rotation + gaussian3(&mut rng, rot_noise),
                translation: cam.translation + gaussian3(&mut rng, config.init_noise),
                ..*cam
            })
            .collect();
        let init_points: Vec<Point3> =
            points.iter().map(|pt| Point3::from(pt.position + gaussian3(&mut rng, config.init_noise))).collect();

        // a zero-noise scene still needs a valid covariance
        let sigma = if config.pixel_sigma > 0.0 { config.pixel_sigma } else { 1.0 };
        return BAProblem::new(init_cameras, init_points, observations, sigma, Some(GroundTruth { cameras, points }));
    }
    Err(SceneError::GenerationFailed { attempts: MAX_ATTEMPTS })
}
