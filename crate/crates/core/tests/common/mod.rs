//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the crate's pose algebra: poses become plain 4×4
//! arrays built from the quaternion formula by hand.

#![allow(dead_code)]

use ngdf::kinematics::KinematicChain;
use ngdf::se3::Pose;
use rand::Rng;

pub type Mat4 = [[f64; 4]; 4];

pub fn quat_to_matrix([w, x, y, z]: [f64; 4]) -> [[f64; 3]; 3] {
    let n = (w * w + x * x + y * y + z * z).sqrt();
    let (w, x, y, z) = (w / n, x / n, y / n, z / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Rodrigues rotation about a (not necessarily unit) axis.
pub fn axis_angle_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

pub fn homogeneous(rot: [[f64; 3]; 3], pos: [f64; 3]) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&rot[i]);
        m[i][3] = pos[i];
    }
    m[3][3] = 1.0;
    m
}

/// Homogeneous matrix of a raw `(px, py, pz, qw, qx, qy, qz)` pose.
pub fn pose_matrix(v: &[f64; 7]) -> Mat4 {
    homogeneous(quat_to_matrix([v[3], v[4], v[5], v[6]]), [v[0], v[1], v[2]])
}

pub fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

/// Inverse of a rigid transform: transpose the rotation, rotate back the translation.
pub fn rigid_inverse(m: &Mat4) -> Mat4 {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = m[j][i];
        }
    }
    let t: Vec<f64> = (0..3).map(|i| -(0..3).map(|k| r[i][k] * m[k][3]).sum::<f64>()).collect();
    homogeneous(r, [t[0], t[1], t[2]])
}

pub fn apply(m: &Mat4, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
    }
    out
}

pub fn max_abs_diff(a: &Mat4, b: &Mat4) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            worst = worst.max((a[i][j] - b[i][j]).abs());
        }
    }
    worst
}

/// Per-point L1 distance between the control points under two poses.
pub fn control_point_distance_oracle(q: &[f64; 7], g: &[f64; 7], points: &[[f64; 3]]) -> Vec<f64> {
    let (mq, mg) = (pose_matrix(q), pose_matrix(g));
    points
        .iter()
        .map(|&p| {
            let (a, b) = (apply(&mq, p), apply(&mg, p));
            (0..3).map(|k| (a[k] - b[k]).abs()).sum()
        })
        .collect()
}

/// Gripper matrix of `chain` at `angles` as a product of 4×4 matrices.
pub fn fk_oracle(chain: &KinematicChain, angles: &[f64]) -> Mat4 {
    let mut m = homogeneous([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3]);
    for (joint, &theta) in chain.joints().iter().zip(angles) {
        m = mat_mul(&m, &pose_matrix(&joint.offset.to_array()));
        let a = joint.axis.into_inner();
        m = mat_mul(&m, &homogeneous(axis_angle_matrix([a.x, a.y, a.z], theta), [0.0; 3]));
    }
    mat_mul(&m, &pose_matrix(&chain.tool().to_array()))
}

/// Uniform-ish random pose: position in a cube, Gaussian quaternion.
pub fn random_raw_pose<R: Rng>(rng: &mut R, half_width: f64) -> [f64; 7] {
    let mut v = [0.0; 7];
    for x in v.iter_mut().take(3) {
        *x = rng.random_range(-half_width..half_width);
    }
    loop {
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            v[3..].copy_from_slice(&[q[0] / n, q[1] / n, q[2] / n, q[3] / n]);
            return v;
        }
    }
}

pub fn random_pose<R: Rng>(rng: &mut R, half_width: f64) -> Pose {
    Pose::from_array(&random_raw_pose(rng, half_width)).unwrap()
}

pub fn random_config<R: Rng>(rng: &mut R, chain: &KinematicChain) -> Vec<f64> {
    chain
        .limits()
        .map(|(lo, hi)| rng.random_range(lo + 0.05..hi - 0.05))
        .collect()
}

/// Norm-wise relative error between two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|b| b * b).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of a scalar function over every coordinate of `x`.
pub fn central_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let dn = f(&probe);
            probe[k] = x[k];
            (up - dn) / (2.0 * h)
        })
        .collect()
}
