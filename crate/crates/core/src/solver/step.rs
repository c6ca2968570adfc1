//! Damped normal equations `(H + lambda I) delta = -g`.
//!
//! Points are eliminated block by block (each point block is 3x3), leaving the
//! reduced camera system
//!
//! ```text
//! S = U + lambda I - sum_j W_j (V_j + lambda I)^-1 W_j^T
//! S dc = b_c - sum_j W_j (V_j + lambda I)^-1 b_p
//! ```
//!
//! which is solved densely. Points are then recovered by back-substitution.
//! Either path is followed by iterative refinement against the full block
//! system, with residuals accumulated in double-double arithmetic. BA Hessians
//! have a gauge null space, so at small damping the system is ill-conditioned
//! and a single factorization leaves visible round-off in the step.

use nalgebra::linalg::{Cholesky, LU};
use nalgebra::{DMatrix, DVector, Dyn, Matrix3, Vector3};

use super::linearize::{CameraBlock, Linearization};
use super::{ParamVector, SolverError};

/// Problems with fewer cameras than this go straight to the dense solver.
pub const SCHUR_MIN_CAMERAS: usize = 5;

const REFINEMENT_ROUNDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepMethod {
    /// Schur reduction unless the problem is tiny.
    #[default]
    Auto,
    Schur,
    Dense,
}

/// Factorization of a symmetric matrix. Cholesky first; at round-off level
/// the damped matrix can be indefinite, in which case LU still gives a step.
enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl Factor {
    fn new(a: DMatrix<f64>) -> Result<Self, SolverError> {
        match a.clone().cholesky() {
            Some(c) => Ok(Factor::Cholesky(c)),
            None => {
                let lu = a.lu();
                if lu.is_invertible() {
                    Ok(Factor::Lu(lu))
                } else {
                    Err(SolverError::SingularSystem)
                }
            }
        }
    }

    fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
        let x = match self {
            Factor::Cholesky(c) => c.solve(b),
            Factor::Lu(lu) => lu.solve(b).ok_or(SolverError::SingularSystem)?,
        };
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(SolverError::SingularSystem)
        }
    }
}

fn check_lambda(lambda: f64) -> Result<(), SolverError> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(SolverError::InvalidLambda(lambda))
    }
}

pub fn damped_step(lin: &Linearization, lambda: f64) -> Result<ParamVector, SolverError> {
    damped_step_with(lin, lambda, StepMethod::Auto)
}

pub fn damped_step_with(lin: &Linearization, lambda: f64, method: StepMethod) -> Result<ParamVector, SolverError> {
    check_lambda(lambda)?;
    let use_schur = match method {
        StepMethod::Dense => false,
        StepMethod::Schur => true,
        StepMethod::Auto => lin.num_cameras >= SCHUR_MIN_CAMERAS,
    };
    let rhs = negated_gradient(lin);
    if use_schur {
        let sys = SchurSystem::new(lin, lambda)?;
        refine(lin, lambda, &rhs, |b| sys.solve(lin, b))
    } else {
        let sys = DenseSystem::new(lin, lambda)?;
        refine(lin, lambda, &rhs, |b| sys.solve(lin, b))
    }
}

fn negated_gradient(lin: &Linearization) -> ParamVector {
    ParamVector {
        cameras: lin.gradient_cameras.iter().map(|g| -g).collect(),
        points: lin.gradient_points.iter().map(|g| -g).collect(),
    }
}

/// `(H + lambda I) x` evaluated block-wise.
pub fn apply_damped_hessian(lin: &Linearization, lambda: f64, x: &ParamVector) -> ParamVector {
    let mut out = ParamVector {
        cameras: lin.hessian_cc.iter().zip(&x.cameras).map(|(u, xc)| u * xc + xc * lambda).collect(),
        points: lin.hessian_pp.iter().zip(&x.points).map(|(v, xp)| v * xp + xp * lambda).collect(),
    };
    for (k, &(i, j)) in lin.pairs.iter().enumerate() {
        let w = &lin.hessian_cp[k];
        out.cameras[i] += w * x.points[j];
        out.points[j] += w.transpose() * x.cameras[i];
    }
    out
}

/// Double-double accumulator for compensated sums of products.
#[derive(Clone, Copy, Default)]
struct Acc {
    hi: f64,
    lo: f64,
}

impl Acc {
    fn new(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    fn add_prod(&mut self, a: f64, b: f64) {
        let p = a * b;
        let e = a.mul_add(b, -p);
        let s = self.hi + p;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (p - bb);
        self.hi = s;
        self.lo += err + e;
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// `rhs - (H + lambda I) x`, accumulated in extended precision.
fn residual(lin: &Linearization, lambda: f64, rhs: &ParamVector, x: &ParamVector) -> ParamVector {
    let mut cams: Vec<[Acc; 9]> = rhs.cameras.iter().map(|b| std::array::from_fn(|r| Acc::new(b[r]))).collect();
    let mut pts: Vec<[Acc; 3]> = rhs.points.iter().map(|b| std::array::from_fn(|r| Acc::new(b[r]))).collect();
    for (i, u) in lin.hessian_cc.iter().enumerate() {
        for r in 0..9 {
            cams[i][r].add_prod(-lambda, x.cameras[i][r]);
            for c in 0..9 {
                cams[i][r].add_prod(-u[(r, c)], x.cameras[i][c]);
            }
        }
    }
    for (j, v) in lin.hessian_pp.iter().enumerate() {
        for r in 0..3 {
            pts[j][r].add_prod(-lambda, x.points[j][r]);
            for c in 0..3 {
                pts[j][r].add_prod(-v[(r, c)], x.points[j][c]);
            }
        }
    }
    for (k, &(i, j)) in lin.pairs.iter().enumerate() {
        let w = &lin.hessian_cp[k];
        for r in 0..9 {
            for c in 0..3 {
                cams[i][r].add_prod(-w[(r, c)], x.points[j][c]);
                pts[j][c].add_prod(-w[(r, c)], x.cameras[i][r]);
            }
        }
    }
    ParamVector {
        cameras: cams.iter().map(|a| CameraBlock::from_fn(|r, _| a[r].value())).collect(),
        points: pts.iter().map(|a| Vector3::from_fn(|r, _| a[r].value())).collect(),
    }
}

fn refine(
    lin: &Linearization,
    lambda: f64,
    rhs: &ParamVector,
    solve: impl Fn(&ParamVector) -> Result<ParamVector, SolverError>,
) -> Result<ParamVector, SolverError> {
    let mut x = solve(rhs)?;
    let mut last_correction = f64::INFINITY;
    for _ in 0..REFINEMENT_ROUNDS {
        let r = residual(lin, lambda, rhs, &x);
        let d = solve(&r)?;
        let n = d.norm();
        // stop once corrections no longer shrink or are below round-off
        if !(n < last_correction) {
            break;
        }
        x.apply(&d);
        last_correction = n;
        if n <= f64::EPSILON * x.norm() {
            break;
        }
    }
    Ok(x)
}

struct DenseSystem {
    factor: Factor,
}

impl DenseSystem {
    fn new(lin: &Linearization, lambda: f64) -> Result<Self, SolverError> {
        let mut h = lin.dense_hessian();
        for i in 0..h.nrows() {
            h[(i, i)] += lambda;
        }
        Ok(Self { factor: Factor::new(h)? })
    }

    fn solve(&self, lin: &Linearization, b: &ParamVector) -> Result<ParamVector, SolverError> {
        let x = self.factor.solve(&DVector::from_vec(b.to_flat()))?;
        Ok(ParamVector::from_flat(lin.num_cameras, lin.num_points, x.as_slice()))
    }
}

struct SchurSystem {
    v_inv: Vec<Matrix3<f64>>,
    factor: Factor,
}

impl SchurSystem {
    fn new(lin: &Linearization, lambda: f64) -> Result<Self, SolverError> {
        let nc = lin.num_cameras;
        let damp3 = Matrix3::identity() * lambda;
        let v_inv: Vec<Matrix3<f64>> = lin
            .hessian_pp
            .iter()
            .map(|v| (v + damp3).try_inverse().ok_or(SolverError::SingularSystem))
            .collect::<Result<_, _>>()?;

        let mut s = DMatrix::<f64>::zeros(9 * nc, 9 * nc);
        for (i, u) in lin.hessian_cc.iter().enumerate() {
            let mut block = s.view_mut((9 * i, 9 * i), (9, 9));
            block += u;
            for d in 0..9 {
                block[(d, d)] += lambda;
            }
        }
        for (j, obs) in lin.point_observations.iter().enumerate() {
            for &a in obs {
                let ca = lin.pairs[a].0;
                let wa_vi = lin.hessian_cp[a] * v_inv[j];
                for &b in obs {
                    let cb = lin.pairs[b].0;
                    let mut block = s.view_mut((9 * ca, 9 * cb), (9, 9));
                    block -= wa_vi * lin.hessian_cp[b].transpose();
                }
            }
        }
        Ok(Self { v_inv, factor: Factor::new(s)? })
    }

    fn solve(&self, lin: &Linearization, b: &ParamVector) -> Result<ParamVector, SolverError> {
        let nc = lin.num_cameras;
        let mut rhs = DVector::<f64>::zeros(9 * nc);
        for (i, bc) in b.cameras.iter().enumerate() {
            rhs.rows_mut(9 * i, 9).copy_from(bc);
        }
        for (j, obs) in lin.point_observations.iter().enumerate() {
            let vb = self.v_inv[j] * b.points[j];
            for &a in obs {
                let mut r = rhs.rows_mut(9 * lin.pairs[a].0, 9);
                r -= lin.hessian_cp[a] * vb;
            }
        }

        let dc = self.factor.solve(&rhs)?;
        let cameras: Vec<CameraBlock> =
            (0..nc).map(|i| CameraBlock::from_iterator(dc.rows(9 * i, 9).iter().copied())).collect();
        let points: Vec<Vector3<f64>> = lin
            .point_observations
            .iter()
            .enumerate()
            .map(|(j, obs)| {
                let mut bp = b.points[j];
                for &a in obs {
                    bp -= lin.hessian_cp[a].transpose() * cameras[lin.pairs[a].0];
                }
                self.v_inv[j] * bp
            })
            .collect();
        Ok(ParamVector { cameras, points })
    }
}
