//! Serial revolute chains: forward kinematics, point Jacobians, sphere
//! collision proxies and position-only damped-least-squares IK.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Unit, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::se3::{ControlPointSet, Pose, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    /// Fixed transform from the parent link frame to this joint's frame.
    pub offset: Pose,
    pub axis: Unit<Vec3>,
    pub limits: (f64, f64),
}

/// Collision sphere rigidly attached to a link. Link 0 is the base; link `k`
/// is the frame after joint `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BodySphere {
    pub link: usize,
    pub offset: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    joints: Vec<Joint>,
    spheres: Vec<BodySphere>,
    tool: Pose,
    home: Vec<f64>,
}

/// Everything downstream costs need from one forward pass.
#[derive(Debug, Clone)]
pub struct FkResult {
    pub gripper: Pose,
    /// World frame of every link, base first.
    pub link_frames: Vec<Pose>,
    pub joint_origins: Vec<Vec3>,
    pub joint_axes: Vec<Vec3>,
    pub sphere_centers: Vec<Vec3>,
}

impl FkResult {
    /// 3×n Jacobian of a world point rigidly attached to `link`.
    pub fn point_jacobian(&self, link: usize, point: &Vec3) -> DMatrix<f64> {
        let n = self.joint_axes.len();
        let mut jac = DMatrix::zeros(3, n);
        for j in 0..link.min(n) {
            let col = self.joint_axes[j].cross(&(point - self.joint_origins[j]));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&col);
        }
        jac
    }

    /// Linear (rows 0..3) and angular (rows 3..6) Jacobian of the gripper frame.
    pub fn gripper_jacobian(&self) -> DMatrix<f64> {
        let n = self.joint_axes.len();
        let mut jac = DMatrix::zeros(6, n);
        let p = self.gripper.position();
        for j in 0..n {
            let w = self.joint_axes[j];
            jac.fixed_view_mut::<3, 1>(0, j)
                .copy_from(&w.cross(&(p - self.joint_origins[j])));
            jac.fixed_view_mut::<3, 1>(3, j).copy_from(&w);
        }
        jac
    }
}

/// Outcome of [`ik_to_ball`]; a miss is reported, not raised.
#[derive(Debug, Clone, PartialEq)]
pub struct IkResult {
    pub angles: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub distance: f64,
}

pub const IK_DAMPING: f64 = 0.05;
pub const IK_STEP_CAP: f64 = 0.2;
pub const DEFAULT_IK_RADIUS: f64 = 0.3;

impl KinematicChain {
    pub fn new(joints: Vec<Joint>, spheres: Vec<BodySphere>, tool: Pose, home: Option<Vec<f64>>) -> Result<Self> {
        for (i, j) in joints.iter().enumerate() {
            if !(j.limits.0 <= j.limits.1) {
                return Err(invalid(format!("joint {i} has empty limit interval {:?}", j.limits)));
            }
        }
        for (i, s) in spheres.iter().enumerate() {
            if s.link > joints.len() {
                return Err(invalid(format!("sphere {i} references missing link {}", s.link)));
            }
            if !(s.radius > 0.0) {
                return Err(invalid(format!("sphere {i} must have positive radius")));
            }
        }
        let home = home.unwrap_or_else(|| joints.iter().map(|j| clamp_to(0.0, j.limits)).collect());
        let chain = Self {
            joints,
            spheres,
            tool,
            home,
        };
        chain.check_len(&chain.home)?;
        Ok(chain)
    }

    /// Seven-joint arm with Franka Panda geometry and limits.
    pub fn franka_like() -> Self {
        Self::parse(include_str!("../data/franka_like.toml")).expect("bundled chain file is valid")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn spheres(&self) -> &[BodySphere] {
        &self.spheres
    }

    pub fn tool(&self) -> &Pose {
        &self.tool
    }

    pub fn home(&self) -> &[f64] {
        &self.home
    }

    pub fn limits(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.joints.iter().map(|j| j.limits)
    }

    pub fn clamp(&self, angles: &mut [f64]) {
        for (a, j) in angles.iter_mut().zip(&self.joints) {
            *a = clamp_to(*a, j.limits);
        }
    }

    pub fn within_limits(&self, angles: &[f64]) -> bool {
        angles
            .iter()
            .zip(&self.joints)
            .all(|(a, j)| *a >= j.limits.0 && *a <= j.limits.1)
    }

    fn check_len(&self, angles: &[f64]) -> Result<()> {
        if angles.len() != self.joints.len() {
            return Err(Error::LengthMismatch {
                expected: self.joints.len(),
                actual: angles.len(),
            });
        }
        Ok(())
    }

    pub fn fk(&self, angles: &[f64]) -> Result<FkResult> {
        self.check_len(angles)?;
        let n = self.joints.len();
        let mut frame = Pose::identity();
        let mut link_frames = Vec::with_capacity(n + 1);
        let mut joint_origins = Vec::with_capacity(n);
        let mut joint_axes = Vec::with_capacity(n);
        link_frames.push(frame);
        for (joint, &theta) in self.joints.iter().zip(angles) {
            frame = frame.compose(&joint.offset);
            joint_origins.push(*frame.position());
            joint_axes.push(frame.transform_vector(&joint.axis));
            frame = frame.compose(&Pose::from_rotation(UnitQuaternion::from_axis_angle(&joint.axis, theta)));
            link_frames.push(frame);
        }
        let gripper = frame.compose(&self.tool);
        let sphere_centers = self
            .spheres
            .iter()
            .map(|s| link_frames[s.link].transform_point(&s.offset))
            .collect();
        Ok(FkResult {
            gripper,
            link_frames,
            joint_origins,
            joint_axes,
            sphere_centers,
        })
    }

    /// Jacobian of the gripper control points in the world frame, stacked as
    /// `(x0, y0, z0, x1, ...)` rows against joint columns.
    pub fn fk_jacobian(&self, angles: &[f64], cps: &ControlPointSet) -> Result<DMatrix<f64>> {
        let fk = self.fk(angles)?;
        let n = self.dof();
        let mut jac = DMatrix::zeros(3 * cps.len(), n);
        for (i, p) in cps.transformed(&fk.gripper).iter().enumerate() {
            jac.view_mut((3 * i, 0), (3, n))
                .copy_from(&fk.point_jacobian(n, p));
        }
        Ok(jac)
    }

    /// Position-only DLS toward `target`, stopping once the gripper origin is
    /// within `radius`. Angles are clamped to limits after every step.
    pub fn ik_to_ball(&self, target: &Vec3, radius: f64, init: &[f64], max_iters: usize) -> Result<IkResult> {
        if !(radius > 0.0) {
            return Err(invalid("IK radius must be positive"));
        }
        self.check_len(init)?;
        let mut angles = init.to_vec();
        self.clamp(&mut angles);
        let damping2 = IK_DAMPING * IK_DAMPING;
        let mut iterations = 0;
        loop {
            let fk = self.fk(&angles)?;
            let err = target - fk.gripper.position();
            let distance = err.norm();
            if distance <= radius || iterations >= max_iters {
                return Ok(IkResult {
                    angles,
                    converged: distance <= radius,
                    iterations,
                    distance,
                });
            }
            let jac = fk.point_jacobian(self.dof(), fk.gripper.position());
            let jjt: Matrix3<f64> = (&jac * jac.transpose()).fixed_view::<3, 3>(0, 0).into_owned()
                + Matrix3::identity() * damping2;
            let Some(inv) = jjt.try_inverse() else {
                return Err(Error::InvalidArgument("singular damped system".into()));
            };
            let mut delta = jac.transpose() * (inv * err);
            let biggest = delta.amax();
            if biggest > IK_STEP_CAP {
                delta *= IK_STEP_CAP / biggest;
            }
            for (a, d) in angles.iter_mut().zip(delta.iter()) {
                *a += d;
            }
            self.clamp(&mut angles);
            iterations += 1;
        }
    }
}

fn clamp_to(v: f64, (lo, hi): (f64, f64)) -> f64 {
    v.clamp(lo, hi)
}

// ---- chain file ----

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    #[serde(default)]
    pub position: [f64; 3],
    /// Scalar-first quaternion; mutually exclusive with `rpy`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<[f64; 4]>,
    /// Fixed-axis roll, pitch, yaw in radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rpy: Option<[f64; 3]>,
}

impl PoseSpec {
    pub fn to_pose(&self) -> Result<Pose> {
        let wxyz = match (self.orientation, self.rpy) {
            (Some(_), Some(_)) => return Err(invalid("give either orientation or rpy, not both")),
            (Some(q), None) => q,
            (None, Some([r, p, y])) => {
                let q = UnitQuaternion::from_euler_angles(r, p, y);
                [q.w, q.i, q.j, q.k]
            }
            (None, None) => [1.0, 0.0, 0.0, 0.0],
        };
        Pose::from_parts(self.position, wxyz)
    }

    pub fn from_pose(pose: &Pose) -> Self {
        let p = pose.position();
        Self {
            position: [p.x, p.y, p.z],
            orientation: Some(pose.wxyz()),
            rpy: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointSpec {
    #[serde(flatten)]
    offset: PoseSpec,
    axis: [f64; 3],
    limits: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SphereSpec {
    link: usize,
    offset: [f64; 3],
    radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    home: Option<Vec<f64>>,
    joint: Vec<JointSpec>,
    #[serde(default)]
    sphere: Vec<SphereSpec>,
    #[serde(default)]
    tool: PoseSpec,
}

impl KinematicChain {
    /// Parses the TOML chain format (see `data/franka_like.toml`).
    pub fn parse(text: &str) -> Result<Self> {
        let file: ChainFile = toml::from_str(text)?;
        let joints = file
            .joint
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let axis = Vec3::from(j.axis);
                if !(axis.norm() > 1e-9) {
                    return Err(invalid(format!("joint {i} has a zero axis")));
                }
                Ok(Joint {
                    offset: j.offset.to_pose()?,
                    axis: Unit::new_normalize(axis),
                    limits: (j.limits[0], j.limits[1]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spheres = file
            .sphere
            .iter()
            .map(|s| BodySphere {
                link: s.link,
                offset: Vec3::from(s.offset),
                radius: s.radius,
            })
            .collect();
        Self::new(joints, spheres, file.tool.to_pose()?, file.home)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        let file = ChainFile {
            home: Some(self.home.clone()),
            joint: self
                .joints
                .iter()
                .map(|j| JointSpec {
                    offset: PoseSpec::from_pose(&j.offset),
                    axis: [j.axis.x, j.axis.y, j.axis.z],
                    limits: [j.limits.0, j.limits.1],
                })
                .collect(),
            sphere: self
                .spheres
                .iter()
                .map(|s| SphereSpec {
                    link: s.link,
                    offset: [s.offset.x, s.offset.y, s.offset.z],
                    radius: s.radius,
                })
                .collect(),
            tool: PoseSpec::from_pose(&self.tool),
        };
        toml::to_string(&file).expect("chain serializes")
    }
}
