use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};

use crate::scene::{rotate_point, SceneError, MIN_DEPTH};

pub type CameraJacobian = SMatrix<f64, 2, 9>;
pub type PointJacobian = Matrix2x3<f64>;

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3) at `w`: `R(w + d) ~= R(w) Exp(J_r(w) d)`.
fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if theta2 > 1e-8 {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    } else {
        // Taylor terms up to theta^4
        (0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0, 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0)
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Projection of `point` by the 9-parameter camera `cam`, together with the
/// derivatives of the predicted pixel with respect to both blocks.
pub fn project_with_jacobians(
    cam: &[f64; 9],
    point: &Vector3<f64>,
) -> Result<(Vector2<f64>, CameraJacobian, PointJacobian), SceneError> {
    let w = Vector3::new(cam[0], cam[1], cam[2]);
    let t = Vector3::new(cam[3], cam[4], cam[5]);
    let (f, k1, k2) = (cam[6], cam[7], cam[8]);

    let p = rotate_point(&w, point) + t;
    if p.z.abs() <= MIN_DEPTH {
        return Err(SceneError::DegenerateDepth { depth: p.z });
    }
    let inv_z = 1.0 / p.z;
    // same arithmetic as `scene::project`, so residuals agree bit for bit
    let n = Vector2::new(-p.x / p.z, -p.y / p.z);
    let r2 = n.norm_squared();
    let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
    let pixel = n * (f * radial);

    // d pixel / d n
    let dradial = 2.0 * k1 + 4.0 * k2 * r2;
    let d_pix_d_n = (nalgebra::Matrix2::identity() * radial + n * n.transpose() * dradial) * f;
    // d n / d P
    let d_n_d_p = Matrix2x3::new(-inv_z, 0.0, p.x * inv_z * inv_z, 0.0, -inv_z, p.y * inv_z * inv_z);
    let d_pix_d_p = d_pix_d_n * d_n_d_p;

    let rot = nalgebra::Rotation3::new(w);
    let d_p_d_w = -(rot.matrix() * skew(point) * right_jacobian(&w));

    let mut cam_jac = CameraJacobian::zeros();
    cam_jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_pix_d_p * d_p_d_w));
    cam_jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_pix_d_p);
    cam_jac.set_column(6, &(n * radial));
    cam_jac.set_column(7, &(n * (f * r2)));
    cam_jac.set_column(8, &(n * (f * r2 * r2)));

    let point_jac = d_pix_d_p * rot.matrix();
    Ok((pixel, cam_jac, point_jac))
}
