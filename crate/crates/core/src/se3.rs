//! Rigid transforms and the control-point pose metric.
//!
//! Quaternions are stored scalar-first, `(w, x, y, z)`, and always kept in the
//! canonical half of the double cover (`w >= 0`). All lengths are meters.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

pub type Vec3 = Vector3<f64>;

/// A gripper or query pose in SE(3).
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    position: Vec3,
    orientation: UnitQuaternion<f64>,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        Unit::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        // renormalize to absorb drift accumulated by callers
        let orientation = canonical(UnitQuaternion::new_normalize(orientation.into_inner()));
        Self {
            position,
            orientation,
        }
    }

    pub fn from_translation(position: Vec3) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    pub fn from_rotation(orientation: UnitQuaternion<f64>) -> Self {
        Self::new(Vec3::zeros(), orientation)
    }

    /// Builds a pose from a position and a raw `(w, x, y, z)` quaternion,
    /// normalizing it. Rejects zero or non-finite quaternions.
    pub fn from_parts(position: [f64; 3], wxyz: [f64; 4]) -> Result<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !(norm.is_finite() && norm > 1e-12) || position.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "pose must be finite with a nonzero quaternion, got {position:?} {wxyz:?}"
            )));
        }
        Ok(Self::new(Vec3::from(position), UnitQuaternion::new_normalize(q)))
    }

    /// Inverse of [`Pose::to_array`]; the quaternion part is renormalized.
    pub fn from_array(v: &[f64; 7]) -> Result<Self> {
        Self::from_parts([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]])
    }

    /// `(px, py, pz, qw, qx, qy, qz)`, the network input encoding.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.orientation;
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ]
    }

    pub fn position(&self) -> &Vec3 {
        &self.position
    }

    pub fn orientation(&self) -> &UnitQuaternion<f64> {
        &self.orientation
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation;
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.orientation.to_rotation_matrix().into_inner()
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.orientation * other.position + self.position,
            self.orientation * other.orientation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::new(-(inv * self.position), inv)
    }

    /// Rotates this pose about `center` by `rotation` (both position and frame).
    pub fn rotated_about(&self, center: &Vec3, rotation: &UnitQuaternion<f64>) -> Pose {
        Pose::new(
            rotation * (self.position - center) + center,
            rotation * self.orientation,
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.wxyz();
        write!(
            f,
            "Pose(p=[{:.6}, {:.6}, {:.6}], q=[{w:.6}, {x:.6}, {y:.6}, {z:.6}])",
            self.position.x, self.position.y, self.position.z
        )
    }
}

/// Fixed gripper-frame points defining the pose metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPointSet {
    points: Vec<Vec3>,
}

impl ControlPointSet {
    /// Requires at least four points that are not all collinear; three
    /// non-collinear points already pin down a proper rigid transform.
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 4 {
            return Err(invalid(format!(
                "need at least 4 control points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(invalid("control points must be finite"));
        }
        let origin = points[0];
        let scale = points
            .iter()
            .map(|p| (p - origin).norm())
            .fold(0.0, f64::max);
        let spans_plane = points.iter().enumerate().any(|(i, a)| {
            points[i + 1..]
                .iter()
                .any(|b| (a - origin).cross(&(b - origin)).norm() > 1e-9 * scale.max(1e-12).powi(2))
        });
        if !spans_plane {
            return Err(invalid("control points are collinear"));
        }
        Ok(Self { points })
    }

    /// Six points on a parallel-jaw gripper: origin, palm center, two finger
    /// bases and two fingertips. The approach axis is +z, fingers close along x.
    pub fn parallel_jaw() -> Self {
        Self {
            points: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(0.0, 0.0, 0.066),
                Vec3::new(0.04, 0.0, 0.066),
                Vec3::new(-0.04, 0.0, 0.066),
                Vec3::new(0.04, 0.0, 0.112),
                Vec3::new(-0.04, 0.0, 0.112),
            ],
        }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Parses one `x y z` triple per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            if vals.len() != 3 {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected 3 values, got {}", vals.len()),
                });
            }
            points.push(Vec3::new(vals[0], vals[1], vals[2]));
        }
        Self::new(points)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# gripper control points (meters, gripper frame)\n");
        for p in &self.points {
            out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
        }
        out
    }

    /// World positions of every control point under `pose`.
    pub fn transformed(&self, pose: &Pose) -> Vec<Vec3> {
        self.points.iter().map(|p| pose.transform_point(p)).collect()
    }
}

impl Default for ControlPointSet {
    fn default() -> Self {
        Self::parallel_jaw()
    }
}

/// Per-point L1 displacement `‖T(q; p_i) − T(g; p_i)‖₁` for every control point.
pub fn control_point_distance(q: &Pose, g: &Pose, cps: &ControlPointSet) -> Vec<f64> {
    cps.points()
        .iter()
        .map(|p| (q.transform_point(p) - g.transform_point(p)).abs().sum())
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let q = Quaternion::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if q.norm() > 1e-9 {
            return canonical(UnitQuaternion::new_normalize(q));
        }
    }
}

/// Position uniform in the ball of `radius` around `center`, orientation
/// uniform on SO(3). A non-positive radius yields the center itself.
pub fn random_pose_in_ball<R: Rng + ?Sized>(center: &Vec3, radius: f64, rng: &mut R) -> Pose {
    let position = if radius > 0.0 {
        let dir = loop {
            let v = Vec3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            );
            let n = v.norm();
            if n > 1e-9 {
                break v / n;
            }
        };
        let u: f64 = rng.random();
        center + dir * (radius * u.cbrt())
    } else {
        *center
    };
    Pose::new(position, random_rotation(rng))
}

/// Partial derivatives of the rotation matrix with respect to `(w, x, y, z)`,
/// using the homogeneous quadratic form of the quaternion-to-matrix map.
pub fn rotation_partials(wxyz: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = wxyz;
    let d_w = Matrix3::new(
        2.0 * w, -2.0 * z, 2.0 * y, //
        2.0 * z, 2.0 * w, -2.0 * x, //
        -2.0 * y, 2.0 * x, 2.0 * w,
    );
    let d_x = Matrix3::new(
        2.0 * x, 2.0 * y, 2.0 * z, //
        2.0 * y, -2.0 * x, -2.0 * w, //
        2.0 * z, 2.0 * w, -2.0 * x,
    );
    let d_y = Matrix3::new(
        -2.0 * y, 2.0 * x, 2.0 * w, //
        2.0 * x, 2.0 * y, 2.0 * z, //
        -2.0 * w, 2.0 * z, -2.0 * y,
    );
    let d_z = Matrix3::new(
        -2.0 * z, -2.0 * w, 2.0 * x, //
        2.0 * w, -2.0 * z, 2.0 * y, //
        2.0 * x, 2.0 * y, 2.0 * z,
    );
    [d_w, d_x, d_y, d_z]
}

/// Rotation matrix from the homogeneous quadratic form; equals the usual
/// matrix for unit quaternions and scales by `|q|²` otherwise.
pub fn quadratic_rotation(wxyz: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = wxyz;
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_transform_is_noop() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().transform_point(&p), p);
    }

    #[test]
    fn quarter_turn_about_z() {
        let pose = Pose::from_rotation(UnitQuaternion::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2));
        let out = pose.transform_point(&Vec3::new(1.0, 0.0, 0.0));
        assert!((out - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn canonical_form_has_nonnegative_w() {
        let pose = Pose::from_parts([0.0; 3], [-0.5, 0.5, -0.5, 0.5]).unwrap();
        assert!(pose.wxyz()[0] >= 0.0);
        assert_eq!(pose.wxyz(), [0.5, -0.5, 0.5, -0.5]);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(Pose::from_parts([0.0; 3], [0.0; 4]).is_err());
    }

    #[test]
    fn canonicalization_preserves_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let raw = Quaternion::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            let uq = UnitQuaternion::new_normalize(raw);
            let p = Vec3::new(rng.random(), rng.random(), rng.random());
            let before = uq * p;
            let after = Pose::from_rotation(uq).transform_point(&p);
            assert!((before - after).norm() < 1e-12);
        }
    }

    #[test]
    fn translated_pose_has_uniform_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_pose_in_ball(&Vec3::zeros(), 0.3, &mut rng);
        let q = Pose::new(g.position() + Vec3::new(0.1, 0.0, 0.0), *g.orientation());
        for d in control_point_distance(&q, &g, &ControlPointSet::default()) {
            assert!((d - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_zero_for_identical_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_pose_in_ball(&Vec3::zeros(), 0.5, &mut rng);
        assert!(control_point_distance(&q, &q, &ControlPointSet::default())
            .iter()
            .all(|&d| d == 0.0));
    }

    #[test]
    fn rejects_degenerate_control_points() {
        let line = (0..5).map(|i| Vec3::new(0.0, 0.0, i as f64)).collect();
        assert!(ControlPointSet::new(line).is_err());
        assert!(ControlPointSet::new(vec![Vec3::zeros(); 3]).is_err());
    }

    #[test]
    fn control_point_file_roundtrip() {
        let cps = ControlPointSet::default();
        let parsed = ControlPointSet::parse(&cps.to_text()).unwrap();
        assert_eq!(parsed, cps);
        let err = ControlPointSet::parse("0 0 0\n1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn zero_radius_ball_returns_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = Vec3::new(0.3, -0.2, 1.0);
        assert_eq!(*random_pose_in_ball(&c, 0.0, &mut rng).position(), c);
    }

    #[test]
    fn ball_sampling_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = Vec3::new(0.5, 0.0, 0.2);
        let n = 100_000;
        let mut sum = Vec3::zeros();
        for _ in 0..n {
            let p = random_pose_in_ball(&c, 0.5, &mut rng);
            assert!((p.position() - c).norm() <= 0.5 + 1e-12);
            assert!(p.wxyz()[0] >= 0.0);
            sum += p.position();
        }
        assert!((sum / n as f64 - c).norm() < 0.01);
    }

    #[test]
    fn ball_sampling_is_deterministic() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            (0..50)
                .map(|_| random_pose_in_ball(&Vec3::zeros(), 0.5, &mut rng).to_array())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn quadratic_rotation_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_rotation(&mut rng);
        let r = quadratic_rotation([q.w, q.i, q.j, q.k]);
        assert!((r - q.to_rotation_matrix().into_inner()).norm() < 1e-14);
    }

    #[test]
    fn rotation_partials_match_finite_differences() {
        let wxyz = [0.3, -0.5, 0.7, 0.2];
        let partials = rotation_partials(wxyz);
        let h = 1e-6;
        for (k, partial) in partials.iter().enumerate() {
            let mut up = wxyz;
            let mut dn = wxyz;
            up[k] += h;
            dn[k] -= h;
            let fd = (quadratic_rotation(up) - quadratic_rotation(dn)) / (2.0 * h);
            assert!((fd - partial).norm() < 1e-8);
        }
    }
}
