//! Levenberg-Marquardt bundle adjustment with an externally chosen damping factor.

mod jacobian;
mod linearize;
mod lm;
mod step;

pub use jacobian::{project_with_jacobians, CameraJacobian, PointJacobian};
pub use linearize::{estimation_error, linearize, residuals, CameraBlock, Linearization, Residuals};
pub use lm::{
    classic_lambda_update, convergence_check, lm_iterate, records_to_csv, solve, ClassicMode, Clock, IterationRecord,
    Outcome, SolveOptions, SolveResult, SolveSummary, SolverState, CONVERGENCE_EPS,
};
pub use step::{apply_damped_hessian, damped_step, damped_step_with, StepMethod, SCHUR_MIN_CAMERAS};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{BAProblem, Point3};

/// Smallest damping factor any policy may emit.
pub const LAMBDA_MIN: f64 = 1e-16;
/// Largest damping factor any policy may emit.
pub const LAMBDA_MAX: f64 = 1e16;

/// Clamps a damping factor into `[LAMBDA_MIN, LAMBDA_MAX]`; NaN maps to the
/// strongest damping.
pub fn clamp_lambda(lambda: f64) -> f64 {
    if lambda.is_nan() {
        LAMBDA_MAX
    } else {
        lambda.clamp(LAMBDA_MIN, LAMBDA_MAX)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("observation {observation}: degenerate depth")]
    DegenerateDepth { observation: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("damped system is numerically singular")]
    SingularSystem,
    #[error("damping factor must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("solver state is terminal")]
    Terminal,
}

/// All camera and point parameters, stored block-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub cameras: Vec<CameraBlock>,
    pub points: Vec<Vector3<f64>>,
}

impl ParamVector {
    pub fn from_problem(problem: &BAProblem) -> Self {
        Self {
            cameras: problem.cameras().iter().map(|c| CameraBlock::from(c.to_params())).collect(),
            points: problem.points().iter().map(|p| p.position).collect(),
        }
    }

    pub fn zeros(num_cameras: usize, num_points: usize) -> Self {
        Self { cameras: vec![CameraBlock::zeros(); num_cameras], points: vec![Vector3::zeros(); num_points] }
    }

    /// Builds blocks from a flat vector laid out cameras first, then points.
    pub fn from_flat(num_cameras: usize, num_points: usize, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), 9 * num_cameras + 3 * num_points, "flat parameter length");
        let (c, p) = flat.split_at(9 * num_cameras);
        Self {
            cameras: c.chunks_exact(9).map(CameraBlock::from_column_slice).collect(),
            points: p.chunks_exact(3).map(Vector3::from_column_slice).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.cameras.iter().flat_map(|c| c.iter().copied()).chain(self.points.iter().flat_map(|p| p.iter().copied())).collect()
    }

    pub fn len(&self) -> usize {
        9 * self.cameras.len() + 3 * self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty() && self.points.is_empty()
    }

    /// Additive update in every coordinate, axis-angle included.
    pub fn apply(&mut self, delta: &ParamVector) {
        for (c, d) in self.cameras.iter_mut().zip(&delta.cameras) {
            *c += d;
        }
        for (p, d) in self.points.iter_mut().zip(&delta.points) {
            *p += d;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.cameras.iter().all(|c| c.iter().all(|v| v.is_finite()))
            && self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn point(&self, j: usize) -> Point3 {
        Point3::from(self.points[j])
    }

    fn check_shape(&self, problem: &BAProblem) -> Result<(), SolverError> {
        if self.cameras.len() != problem.num_cameras() || self.points.len() != problem.num_points() {
            return Err(SolverError::ShapeMismatch(format!(
                "parameters have {} cameras / {} points, problem has {} / {}",
                self.cameras.len(),
                self.points.len(),
                problem.num_cameras(),
                problem.num_points()
            )));
        }
        Ok(())
    }
}
