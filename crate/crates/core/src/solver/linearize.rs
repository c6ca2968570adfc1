use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector2, Vector3};

use super::jacobian::{project_with_jacobians, CameraJacobian, PointJacobian};
use super::{ParamVector, SolverError};
use crate::scene::{project, BAProblem, CameraPose, Point3};

pub type CameraBlock = SVector<f64, 9>;

/// Per-observation reprojection residuals `z_ij - proj(c_i, q_j)`, in the
/// order of the problem's observation list.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals(pub Vec<Vector2<f64>>);

impl Residuals {
    pub fn as_slice(&self) -> &[Vector2<f64>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Residuals stacked as `[x0, y0, x1, y1, ...]`.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(2 * self.0.len(), self.0.iter().flat_map(|r| [r.x, r.y]))
    }
}

pub fn residuals(problem: &BAProblem, params: &ParamVector) -> Result<Residuals, SolverError> {
    params.check_shape(problem)?;
    problem
        .observations()
        .iter()
        .enumerate()
        .map(|(k, obs)| {
            let cam = CameraPose::from_params(&params.cameras[obs.camera_index].into());
            let pt = Point3::from(params.points[obs.point_index]);
            project(&cam, &pt)
                .map(|px| obs.pixel - px)
                .map_err(|_| SolverError::DegenerateDepth { observation: k })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Residuals)
}

/// Covariance-weighted squared reprojection error, `sum ||r_ij||^2 / sigma^2`.
pub fn estimation_error(residuals: &Residuals, pixel_sigma: f64) -> f64 {
    let inv_var = 1.0 / (pixel_sigma * pixel_sigma);
    residuals.0.iter().map(|r| r.norm_squared()).sum::<f64>() * inv_var
}

/// Gauss-Newton model of the problem around the current estimate.
///
/// The Jacobian is the derivative of the residuals, so the gradient of
/// `0.5 * error` is `J^T S^-1 r` and the normal equations read
/// `(H + lambda I) delta = -g`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub num_cameras: usize,
    pub num_points: usize,
    pub pixel_sigma: f64,
    /// `(camera, point)` of every observation.
    pub pairs: Vec<(usize, usize)>,
    pub residuals: Vec<Vector2<f64>>,
    pub camera_jacobians: Vec<CameraJacobian>,
    pub point_jacobians: Vec<PointJacobian>,
    /// Camera-camera blocks. Each residual touches one camera, so this part of
    /// the Hessian is block diagonal.
    pub hessian_cc: Vec<SMatrix<f64, 9, 9>>,
    pub hessian_pp: Vec<Matrix3<f64>>,
    /// Camera-point coupling block of each observation.
    pub hessian_cp: Vec<SMatrix<f64, 9, 3>>,
    pub gradient_cameras: Vec<CameraBlock>,
    pub gradient_points: Vec<Vector3<f64>>,
    /// Observation indices grouped by point.
    pub point_observations: Vec<Vec<usize>>,
}

impl Linearization {
    /// Assembles the weighted normal-equation blocks from per-observation
    /// Jacobians of the residuals.
    pub fn from_blocks(
        num_cameras: usize,
        num_points: usize,
        pixel_sigma: f64,
        pairs: Vec<(usize, usize)>,
        residuals: Vec<Vector2<f64>>,
        camera_jacobians: Vec<CameraJacobian>,
        point_jacobians: Vec<PointJacobian>,
    ) -> Result<Self, SolverError> {
        let n = pairs.len();
        if residuals.len() != n || camera_jacobians.len() != n || point_jacobians.len() != n {
            return Err(SolverError::ShapeMismatch("linearization blocks differ in length".into()));
        }
        let w = 1.0 / (pixel_sigma * pixel_sigma);
        let mut hessian_cc = vec![SMatrix::<f64, 9, 9>::zeros(); num_cameras];
        let mut hessian_pp = vec![Matrix3::zeros(); num_points];
        let mut hessian_cp = Vec::with_capacity(n);
        let mut gradient_cameras = vec![CameraBlock::zeros(); num_cameras];
        let mut gradient_points = vec![Vector3::zeros(); num_points];
        let mut point_observations = vec![Vec::new(); num_points];

        for (k, &(i, j)) in pairs.iter().enumerate() {
            if i >= num_cameras || j >= num_points {
                return Err(SolverError::ShapeMismatch(format!("observation {k} out of bounds")));
            }
            let jc = &camera_jacobians[k];
            let jp = &point_jacobians[k];
            let r = &residuals[k];
            hessian_cc[i] += jc.transpose() * jc * w;
            hessian_pp[j] += jp.transpose() * jp * w;
            hessian_cp.push(jc.transpose() * jp * w);
            gradient_cameras[i] += jc.transpose() * r * w;
            gradient_points[j] += jp.transpose() * r * w;
            point_observations[j].push(k);
        }

        let lin = Self {
            num_cameras,
            num_points,
            pixel_sigma,
            pairs,
            residuals,
            camera_jacobians,
            point_jacobians,
            hessian_cc,
            hessian_pp,
            hessian_cp,
            gradient_cameras,
            gradient_points,
            point_observations,
        };
        if !lin.is_finite() {
            return Err(SolverError::NonFinite("linearization"));
        }
        Ok(lin)
    }

    fn is_finite(&self) -> bool {
        self.hessian_cc.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && self.hessian_pp.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && self.hessian_cp.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && self.gradient_cameras.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && self.gradient_points.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    pub fn num_params(&self) -> usize {
        9 * self.num_cameras + 3 * self.num_points
    }

    fn point_offset(&self) -> usize {
        9 * self.num_cameras
    }

    /// Dense residual Jacobian, 2 rows per observation, cameras first.
    pub fn dense_jacobian(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(2 * self.pairs.len(), self.num_params());
        let off = self.point_offset();
        for (k, &(ci, pi)) in self.pairs.iter().enumerate() {
            j.view_mut((2 * k, 9 * ci), (2, 9)).copy_from(&self.camera_jacobians[k]);
            j.view_mut((2 * k, off + 3 * pi), (2, 3)).copy_from(&self.point_jacobians[k]);
        }
        j
    }

    /// Dense Gauss-Newton Hessian assembled from the stored blocks.
    pub fn dense_hessian(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.num_params(), self.num_params());
        let off = self.point_offset();
        for (i, b) in self.hessian_cc.iter().enumerate() {
            h.view_mut((9 * i, 9 * i), (9, 9)).copy_from(b);
        }
        for (j, b) in self.hessian_pp.iter().enumerate() {
            h.view_mut((off + 3 * j, off + 3 * j), (3, 3)).copy_from(b);
        }
        for (k, &(ci, pi)) in self.pairs.iter().enumerate() {
            let b = &self.hessian_cp[k];
            let mut top = h.view_mut((9 * ci, off + 3 * pi), (9, 3));
            top += b;
            let mut bottom = h.view_mut((off + 3 * pi, 9 * ci), (3, 9));
            bottom += b.transpose();
        }
        h
    }

    pub fn dense_gradient(&self) -> DVector<f64> {
        let mut g = DVector::zeros(self.num_params());
        let off = self.point_offset();
        for (i, b) in self.gradient_cameras.iter().enumerate() {
            g.rows_mut(9 * i, 9).copy_from(b);
        }
        for (j, b) in self.gradient_points.iter().enumerate() {
            g.rows_mut(off + 3 * j, 3).copy_from(b);
        }
        g
    }
}

/// Analytic linearization of the reprojection residuals at `params`.
pub fn linearize(problem: &BAProblem, params: &ParamVector) -> Result<Linearization, SolverError> {
    params.check_shape(problem)?;
    let n = problem.observations().len();
    let mut pairs = Vec::with_capacity(n);
    let mut res = Vec::with_capacity(n);
    let mut cam_jacs = Vec::with_capacity(n);
    let mut pt_jacs = Vec::with_capacity(n);
    for (k, obs) in problem.observations().iter().enumerate() {
        let cam: [f64; 9] = params.cameras[obs.camera_index].into();
        let (pix, jc, jp) = project_with_jacobians(&cam, &params.points[obs.point_index])
            .map_err(|_| SolverError::DegenerateDepth { observation: k })?;
        pairs.push((obs.camera_index, obs.point_index));
        res.push(obs.pixel - pix);
        // residual = observed - predicted
        cam_jacs.push(-jc);
        pt_jacs.push(-jp);
    }
    Linearization::from_blocks(
        problem.num_cameras(),
        problem.num_points(),
        problem.pixel_sigma(),
        pairs,
        res,
        cam_jacs,
        pt_jacs,
    )
}
