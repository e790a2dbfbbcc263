//! Small dense helpers on 3x3 matrices: matrix exponential and the first
//! `phi` function, symmetrization and PSD projection.

// Float math for no_std; the lint misfires where core also offers these.
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

fn max_abs(m: &Mat3) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `(exp(Z), phi1(Z))` with `phi1(Z) = sum_k Z^k / (k+1)!`, so that
/// `exp(Z) = I + Z phi1(Z)`. For constant `A`, the exact flow of
/// `x' = b + A x` over `dt` is `x + phi1(A dt) (b + A x) dt`.
pub fn exp_phi1(z: &Mat3) -> (Mat3, Mat3) {
    let norm = max_abs(z) * 3.0;
    let mut squarings = 0u32;
    let mut scaled = *z;
    if norm > 0.5 {
        // Beyond this the scaling underflows; NaN lets callers report divergence.
        if !norm.is_finite() || norm > 1e300 {
            let nan = Mat3::from_element(f64::NAN);
            return (nan, nan);
        }
        squarings = (norm / 0.5).log2().ceil() as u32;
        scaled = z * 2f64.powi(-(squarings as i32));
    }
    let mut phi1 = Mat3::identity();
    let mut term = Mat3::identity();
    for k in 1..30 {
        term = term * scaled / (k as f64 + 1.0);
        phi1 += term;
        if max_abs(&term) < 1e-18 {
            break;
        }
    }
    let mut expm = Mat3::identity() + scaled * phi1;
    // phi1(2Z) = phi1(Z) (exp(Z) + I) / 2
    for _ in 0..squarings {
        phi1 = phi1 * (expm + Mat3::identity()) * 0.5;
        expm = expm * expm;
    }
    (expm, phi1)
}

pub fn symmetrize(p: &Mat3) -> Mat3 {
    (p + p.transpose()) * 0.5
}

pub fn max_asymmetry(p: &Mat3) -> f64 {
    max_abs(&(p - p.transpose()))
}

pub fn min_eigenvalue(p: &Mat3) -> f64 {
    SymmetricEigen::new(symmetrize(p)).eigenvalues.min()
}

/// Projects a symmetric matrix onto the PSD cone when its smallest eigenvalue
/// is below `-tol`. Returns whether a repair happened.
pub fn repair_psd(p: &mut Mat3, tol: f64) -> bool {
    let eig = SymmetricEigen::new(*p);
    if eig.eigenvalues.min() >= -tol {
        return false;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    *p = eig.eigenvectors * Mat3::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    *p = symmetrize(p);
    true
}

/// Rotation of `v` about the z axis by `angle`.
pub fn rotate_z(v: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taylor_exp(z: &Mat3) -> Mat3 {
        let mut acc = Mat3::identity();
        let mut term = Mat3::identity();
        for k in 1..80 {
            term = term * z / k as f64;
            acc += term;
        }
        acc
    }

    #[test]
    fn exp_matches_long_taylor_series() {
        let z = Mat3::new(-0.2, -3.0, 0.4, 3.0, -0.2, -0.7, -0.4, 0.7, -0.1);
        let (e, phi1) = exp_phi1(&z);
        assert!(max_abs(&(e - taylor_exp(&z))) < 1e-12);
        assert!(max_abs(&(Mat3::identity() + z * phi1 - e)) < 1e-12);
    }

    #[test]
    fn rotation_generator_exponentiates_to_rotation() {
        let theta = 0.37;
        let z = Mat3::new(0.0, -theta, 0.0, theta, 0.0, 0.0, 0.0, 0.0, 0.0);
        let (e, _) = exp_phi1(&z);
        let v = Vec3::new(1.0, 0.0, 0.3);
        assert!((e * v - rotate_z(&v, theta)).norm() < 1e-14);
    }

    #[test]
    fn psd_repair_clips_negative_eigenvalues() {
        let mut p = Mat3::from_diagonal(&Vec3::new(1.0, -0.5, 0.2));
        assert!(repair_psd(&mut p, 1e-9));
        assert!(min_eigenvalue(&p) >= -1e-12);
        let mut q = Mat3::identity();
        assert!(!repair_psd(&mut q, 1e-9));
    }
}
