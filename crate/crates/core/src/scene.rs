//! Scene description: cameras, points, observations and the BAL projection model.
//!
//! Cameras follow the BAL convention. A world point `X` is mapped into the
//! camera frame with `P = R(w) X + t`, where `R(w)` is the rotation encoded by
//! the axis-angle vector `w`. The camera looks down its negative z axis, so the
//! normalized image point is `p = -P.xy / P.z`, which is then scaled by the focal
//! length and the radial factor `1 + k1 r^2 + k2 r^4`.

mod bal;
mod synthetic;

pub use bal::{parse_bal, read_bal_file, serialize_bal, write_bal_file, BalError};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depths with magnitude at or below this value are treated as singular.
pub const MIN_DEPTH: f64 = 1e-12;

/// Number of parameters in a BAL camera block.
pub const CAMERA_PARAMS: usize = 9;
/// Number of parameters in a point block.
pub const POINT_PARAMS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("degenerate depth {depth:e}: point lies on the camera plane")]
    DegenerateDepth { depth: f64 },
    #[error("invalid camera {index}: {reason}")]
    InvalidCamera { index: usize, reason: String },
    #[error("invalid point {index}: coordinates must be finite")]
    InvalidPoint { index: usize },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("synthetic generation failed after {attempts} attempts: depth precondition violated")]
    GenerationFailed { attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Axis-angle rotation, radians times unit axis.
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
    pub focal: f64,
    pub k1: f64,
    pub k2: f64,
}

impl CameraPose {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>, focal: f64, k1: f64, k2: f64) -> Self {
        Self { rotation, translation, focal, k1, k2 }
    }

    /// Parameter block in BAL order: rotation, translation, focal, k1, k2.
    pub fn to_params(&self) -> [f64; CAMERA_PARAMS] {
        [
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
            self.focal,
            self.k1,
            self.k2,
        ]
    }

    pub fn from_params(p: &[f64; CAMERA_PARAMS]) -> Self {
        Self {
            rotation: Vector3::new(p[0], p[1], p[2]),
            translation: Vector3::new(p[3], p[4], p[5]),
            focal: p[6],
            k1: p[7],
            k2: p[8],
        }
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    pub fn rotation_matrix(&self) -> Rotation3<f64> {
        Rotation3::new(self.rotation)
    }

    fn validate(&self, index: usize) -> Result<(), SceneError> {
        let invalid = |reason: &str| SceneError::InvalidCamera { index, reason: reason.to_string() };
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(invalid("focal length must be positive and finite"));
        }
        if !self.rotation.iter().all(|v| v.is_finite()) {
            return Err(invalid("rotation must be finite"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(invalid("translation must be finite"));
        }
        if !self.k1.is_finite() || !self.k2.is_finite() {
            return Err(invalid("distortion coefficients must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub position: Vector3<f64>,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { position: Vector3::new(x, y, z) }
    }
}

impl From<Vector3<f64>> for Point3 {
    fn from(position: Vector3<f64>) -> Self {
        Self { position }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub camera_index: usize,
    pub point_index: usize,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cameras: Vec<CameraPose>,
    pub points: Vec<Point3>,
}

/// A bundle adjustment problem: initial estimates plus the observed pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BAProblem {
    cameras: Vec<CameraPose>,
    points: Vec<Point3>,
    observations: Vec<Observation>,
    pixel_sigma: f64,
    ground_truth: Option<GroundTruth>,
}

impl BAProblem {
    /// Builds a problem after checking every structural invariant.
    pub fn new(
        cameras: Vec<CameraPose>,
        points: Vec<Point3>,
        observations: Vec<Observation>,
        pixel_sigma: f64,
        ground_truth: Option<GroundTruth>,
    ) -> Result<Self, SceneError> {
        if cameras.len() < 2 {
            return Err(SceneError::InvalidProblem(format!(
                "at least 2 cameras required, got {}",
                cameras.len()
            )));
        }
        if points.is_empty() {
            return Err(SceneError::InvalidProblem("at least 1 point required".into()));
        }
        if !(pixel_sigma > 0.0) || !pixel_sigma.is_finite() {
            return Err(SceneError::InvalidProblem(format!(
                "pixel_sigma must be positive, got {pixel_sigma}"
            )));
        }
        for (i, cam) in cameras.iter().enumerate() {
            cam.validate(i)?;
        }
        for (j, pt) in points.iter().enumerate() {
            if !pt.position.iter().all(|v| v.is_finite()) {
                return Err(SceneError::InvalidPoint { index: j });
            }
        }
        let mut camera_seen = vec![false; cameras.len()];
        let mut point_seen = vec![false; points.len()];
        let mut pairs = std::collections::HashSet::with_capacity(observations.len());
        for (k, obs) in observations.iter().enumerate() {
            if obs.camera_index >= cameras.len() || obs.point_index >= points.len() {
                return Err(SceneError::InvalidProblem(format!(
                    "observation {k} references camera {} / point {} out of bounds",
                    obs.camera_index, obs.point_index
                )));
            }
            if !obs.pixel.iter().all(|v| v.is_finite()) {
                return Err(SceneError::InvalidProblem(format!("observation {k} has a non-finite pixel")));
            }
            if !pairs.insert((obs.camera_index, obs.point_index)) {
                return Err(SceneError::InvalidProblem(format!(
                    "duplicate observation of point {} by camera {}",
                    obs.point_index, obs.camera_index
                )));
            }
            camera_seen[obs.camera_index] = true;
            point_seen[obs.point_index] = true;
        }
        if let Some(i) = camera_seen.iter().position(|s| !s) {
            return Err(SceneError::InvalidProblem(format!("camera {i} has no observations")));
        }
        if let Some(j) = point_seen.iter().position(|s| !s) {
            return Err(SceneError::InvalidProblem(format!("point {j} has no observations")));
        }
        if let Some(gt) = &ground_truth {
            if gt.cameras.len() != cameras.len() || gt.points.len() != points.len() {
                return Err(SceneError::InvalidProblem("ground truth block counts do not match".into()));
            }
        }
        Ok(Self { cameras, points, observations, pixel_sigma, ground_truth })
    }

    pub fn cameras(&self) -> &[CameraPose] {
        &self.cameras
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn pixel_sigma(&self) -> f64 {
        self.pixel_sigma
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Same observations and estimates with a different noise model.
    pub fn with_pixel_sigma(mut self, pixel_sigma: f64) -> Result<Self, SceneError> {
        if !(pixel_sigma > 0.0) || !pixel_sigma.is_finite() {
            return Err(SceneError::InvalidProblem(format!(
                "pixel_sigma must be positive, got {pixel_sigma}"
            )));
        }
        self.pixel_sigma = pixel_sigma;
        Ok(self)
    }
}

/// Rotates `point` by the axis-angle vector `w` using Rodrigues' formula.
///
/// Near the identity the first-order expansion `X + w x X` is used, which is
/// exact to machine precision there and avoids dividing by a vanishing angle.
pub fn rotate_point(w: &Vector3<f64>, point: &Vector3<f64>) -> Vector3<f64> {
    let theta2 = w.norm_squared();
    if theta2 > f64::EPSILON {
        let theta = theta2.sqrt();
        let (s, c) = theta.sin_cos();
        let axis = w / theta;
        let cross = axis.cross(point);
        let dot = axis.dot(point);
        point * c + cross * s + axis * (dot * (1.0 - c))
    } else {
        point + w.cross(point)
    }
}

/// Projects a world point into pixel coordinates of `camera`.
pub fn project(camera: &CameraPose, point: &Point3) -> Result<Vector2<f64>, SceneError> {
    let p_cam = rotate_point(&camera.rotation, &point.position) + camera.translation;
    if p_cam.z.abs() <= MIN_DEPTH {
        return Err(SceneError::DegenerateDepth { depth: p_cam.z });
    }
    let normalized = Vector2::new(-p_cam.x / p_cam.z, -p_cam.y / p_cam.z);
    let r2 = normalized.norm_squared();
    let radial = 1.0 + camera.k1 * r2 + camera.k2 * r2 * r2;
    Ok(normalized * (camera.focal * radial))
}
