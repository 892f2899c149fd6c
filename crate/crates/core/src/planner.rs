//! Goal-set CHOMP: a fixed-start, free-goal trajectory optimized against a
//! weighted sum of grasp-field, smoothness and obstacle costs, with updates
//! preconditioned by the smoothness metric and scaled either by Adam or by a
//! fixed step.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, Dyn, Quaternion};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::DistanceField;
use crate::kinematics::{FkResult, IkResult, KinematicChain, DEFAULT_IK_RADIUS};
use crate::kinematics::PoseSpec;
use crate::optim::{Adam, AdamParams};
use crate::se3::{Pose, Vec3};

/// Waypoints as a `T × n` matrix of joint angles; row 0 is the fixed start.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(waypoints: DMatrix<f64>) -> Result<Self> {
        if waypoints.nrows() < 3 {
            return Err(invalid(format!(
                "trajectory needs at least 3 waypoints, got {}",
                waypoints.nrows()
            )));
        }
        Ok(Self { waypoints })
    }

    /// Every row equal to `start`.
    pub fn constant(start: &[f64], len: usize) -> Result<Self> {
        Self::interpolated(start, start, len)
    }

    /// Linear joint-space interpolation from `start` to `end`.
    pub fn interpolated(start: &[f64], end: &[f64], len: usize) -> Result<Self> {
        if start.len() != end.len() {
            return Err(Error::LengthMismatch {
                expected: start.len(),
                actual: end.len(),
            });
        }
        let denom = len.saturating_sub(1).max(1) as f64;
        Self::new(DMatrix::from_fn(len, start.len(), |t, j| {
            let s = t as f64 / denom;
            start[j] + s * (end[j] - start[j])
        }))
    }

    pub fn waypoints(&self) -> &DMatrix<f64> {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.nrows() == 0
    }

    pub fn dof(&self) -> usize {
        self.waypoints.ncols()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.waypoints.row(t).iter().copied().collect()
    }

    pub fn start(&self) -> Vec<f64> {
        self.row(0)
    }

    pub fn goal(&self) -> Vec<f64> {
        self.row(self.len() - 1)
    }

    /// One line per waypoint, comma separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.dof()).map(|j| format!("q{j}")).collect();
        out.push_str(&format!("t,{}\n", header.join(",")));
        for t in 0..self.len() {
            let row: Vec<String> = self.waypoints.row(t).iter().map(f64::to_string).collect();
            out.push_str(&format!("{t},{}\n", row.join(",")));
        }
        out
    }
}

// ---- scene ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Obstacle {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Obstacle {
    /// Signed distance from `x` to the surface and its gradient.
    pub fn signed_distance(&self, x: &Vec3) -> (f64, Vec3) {
        match self {
            Obstacle::Sphere { center, radius } => {
                let d = x - Vec3::from(*center);
                let n = d.norm();
                let grad = if n > 0.0 { d / n } else { Vec3::z() };
                (n - radius, grad)
            }
            Obstacle::Box { min, max } => {
                let lo = Vec3::from(*min);
                let hi = Vec3::from(*max);
                let center = (lo + hi) * 0.5;
                let half = (hi - lo) * 0.5;
                let rel = x - center;
                let q = rel.abs() - half;
                let outside = q.map(|v| v.max(0.0));
                let out_norm = outside.norm();
                if out_norm > 0.0 {
                    let grad = outside.component_mul(&rel.map(f64::signum)) / out_norm;
                    (out_norm, grad)
                } else {
                    let k = q.imax();
                    let mut grad = Vec3::zeros();
                    grad[k] = if rel[k] >= 0.0 { 1.0 } else { -1.0 };
                    (q[k], grad)
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Obstacle::Sphere { radius, .. } if !(*radius > 0.0) => Err(invalid("obstacle sphere radius must be positive")),
            Obstacle::Box { min, max } if (0..3).any(|k| !(min[k] < max[k])) => {
                Err(invalid("obstacle box must have min < max on every axis"))
            }
            _ => Ok(()),
        }
    }
}

/// Environment for one planning problem. The grasp manifold of `object_id`
/// is carried by `object_pose`; its position is the IK target.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub obstacles: Vec<Obstacle>,
    pub object_pose: Pose,
    pub object_id: usize,
    pub start: Option<Vec<f64>>,
}

impl SceneSpec {
    pub fn new(obstacles: Vec<Obstacle>, object_pose: Pose, object_id: usize) -> Result<Self> {
        for o in &obstacles {
            o.validate()?;
        }
        Ok(Self {
            obstacles,
            object_pose,
            object_id,
            start: None,
        })
    }

    pub fn object_center(&self) -> &Vec3 {
        self.object_pose.position()
    }

    /// Minimum signed distance over all obstacles (infinite when empty).
    pub fn signed_distance(&self, x: &Vec3) -> (f64, Vec3) {
        self.obstacles
            .iter()
            .map(|o| o.signed_distance(x))
            .fold((f64::INFINITY, Vec3::zeros()), |best, cur| if cur.0 < best.0 { cur } else { best })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    object_id: usize,
    object: PoseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<Vec<f64>>,
    #[serde(default)]
    obstacle: Vec<Obstacle>,
}

impl SceneSpec {
    /// Parses a TOML scene: `object_id`, an `[object]` pose, optional `start`
    /// angles and `[[obstacle]]` tables of kind `sphere` or `box`.
    pub fn parse(text: &str) -> Result<Self> {
        let file: SceneFile = toml::from_str(text)?;
        let mut scene = Self::new(file.obstacle, file.object.to_pose()?, file.object_id)?;
        scene.start = file.start;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        let file = SceneFile {
            object_id: self.object_id,
            object: PoseSpec::from_pose(&self.object_pose),
            start: self.start.clone(),
            obstacle: self.obstacles.clone(),
        };
        toml::to_string(&file).expect("scene serializes")
    }
}

// ---- configuration ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    Adam,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Ik,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam: AdamParams,
    pub grasp_weight: f64,
    pub smooth_weight: f64,
    pub obstacle_weight: f64,
    /// Clearance below which the obstacle hinge becomes active, meters.
    pub obstacle_margin: f64,
    pub waypoints: usize,
    pub step_mode: StepMode,
    pub init_mode: InitMode,
    pub ik_radius: f64,
    pub ik_max_iters: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 3e-3,
            adam: AdamParams::default(),
            grasp_weight: 10.0,
            smooth_weight: 1.0,
            obstacle_weight: 1.0,
            obstacle_margin: 0.05,
            waypoints: 30,
            step_mode: StepMode::Adam,
            init_mode: InitMode::Ik,
            ik_radius: DEFAULT_IK_RADIUS,
            ik_max_iters: 200,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("planner iterations must be at least 1"));
        }
        if self.waypoints < 3 {
            return Err(invalid("planner needs at least 3 waypoints"));
        }
        if [self.grasp_weight, self.smooth_weight, self.obstacle_weight]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return Err(invalid("cost weights must be nonnegative"));
        }
        if !(self.learning_rate > 0.0) || !(self.obstacle_margin > 0.0) {
            return Err(invalid("learning rate and obstacle margin must be positive"));
        }
        Ok(())
    }
}

// ---- costs ----

/// A scalar cost and its gradient over all waypoints (row 0 always zero).
#[derive(Debug, Clone)]
pub struct CostGrad {
    pub value: f64,
    pub grad: DMatrix<f64>,
}

/// `½‖Kξ + e‖²` with `K` the first-difference operator over the free rows and
/// `e` carrying the fixed start. The gradient is `Kᵀ(Kξ + e)`.
pub fn smoothness_cost(traj: &Trajectory) -> CostGrad {
    let w = traj.waypoints();
    let (t_len, n) = w.shape();
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(t_len, n);
    for t in 1..t_len {
        for j in 0..n {
            let diff = w[(t, j)] - w[(t - 1, j)];
            value += 0.5 * diff * diff;
            grad[(t, j)] += diff;
            grad[(t - 1, j)] -= diff;
        }
    }
    grad.row_mut(0).fill(0.0);
    CostGrad { value, grad }
}

/// Piecewise hinge on clearance `s`: linear inside obstacles, quadratic
/// within the margin, zero beyond. Returns the cost and its derivative.
pub fn hinge(s: f64, margin: f64) -> (f64, f64) {
    if s < 0.0 {
        (-s + 0.5 * margin, -1.0)
    } else if s <= margin {
        ((s - margin).powi(2) / (2.0 * margin), (s - margin) / margin)
    } else {
        (0.0, 0.0)
    }
}

fn fk_rows(chain: &KinematicChain, traj: &Trajectory) -> Result<Vec<FkResult>> {
    (0..traj.len()).map(|t| chain.fk(&traj.row(t))).collect()
}

fn obstacle_from_fk(chain: &KinematicChain, scene: &SceneSpec, margin: f64, fks: &[FkResult]) -> CostGrad {
    let n = chain.dof();
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(fks.len(), n);
    if scene.obstacles.is_empty() {
        return CostGrad { value, grad };
    }
    for (t, fk) in fks.iter().enumerate() {
        for (sphere, center) in chain.spheres().iter().zip(&fk.sphere_centers) {
            let (sd, normal) = scene.signed_distance(center);
            let (c, dc) = hinge(sd - sphere.radius, margin);
            value += c;
            if t == 0 || dc == 0.0 {
                continue;
            }
            let jac = fk.point_jacobian(sphere.link, center);
            let row = jac.transpose() * normal * dc;
            for j in 0..n {
                grad[(t, j)] += row[j];
            }
        }
    }
    CostGrad { value, grad }
}

/// Obstacle cost summed over every waypoint and body sphere.
pub fn obstacle_cost(traj: &Trajectory, chain: &KinematicChain, scene: &SceneSpec, margin: f64) -> Result<CostGrad> {
    let fks = fk_rows(chain, traj)?;
    Ok(obstacle_from_fk(chain, scene, margin, &fks))
}

/// Smallest sphere clearance over the trajectory.
pub fn min_clearance(traj: &Trajectory, chain: &KinematicChain, scene: &SceneSpec) -> Result<f64> {
    let mut best = f64::INFINITY;
    for t in 0..traj.len() {
        let fk = chain.fk(&traj.row(t))?;
        for (sphere, center) in chain.spheres().iter().zip(&fk.sphere_centers) {
            best = best.min(scene.signed_distance(center).0 - sphere.radius);
        }
    }
    Ok(best)
}

/// Field query for a gripper pose: the pose expressed in the object frame.
pub fn object_frame_query(gripper: &Pose, object_pose: &Pose) -> [f64; 7] {
    object_pose.inverse().compose(gripper).to_array()
}

/// Grasp cost of the final configuration and its gradient, which is zero on
/// every row but the last. The last row chains the field's query gradient
/// through the object-frame change and the gripper Jacobian, including the
/// quaternion rate `½ (0, ω) ⊗ q`.
pub fn grasp_cost<F: DistanceField + ?Sized>(
    traj: &Trajectory,
    chain: &KinematicChain,
    field: &F,
    scene: &SceneSpec,
) -> Result<CostGrad> {
    let last = traj.len() - 1;
    let fk = chain.fk(&traj.row(last))?;
    grasp_from_fk(traj.len(), chain, field, scene, &fk)
}

fn grasp_from_fk<F: DistanceField + ?Sized>(
    rows: usize,
    chain: &KinematicChain,
    field: &F,
    scene: &SceneSpec,
    fk: &FkResult,
) -> Result<CostGrad> {
    let n = chain.dof();
    let object = &scene.object_pose;
    let query = object_frame_query(&fk.gripper, object);
    let (value, dq) = field.mean_with_gradient(scene.object_id, &query)?;

    let obj_rot_t = object.rotation_matrix().transpose();
    let obj_inv = object.orientation().inverse().into_inner();
    let qg = fk.gripper.orientation().into_inner();
    let rel = obj_inv * qg;
    let sign = if rel.w < 0.0 { -1.0 } else { 1.0 };

    let jac = fk.gripper_jacobian();
    let mut grad = DMatrix::zeros(rows, n);
    for j in 0..n {
        let v = Vec3::new(jac[(0, j)], jac[(1, j)], jac[(2, j)]);
        let w = Vec3::new(jac[(3, j)], jac[(4, j)], jac[(5, j)]);
        let dp = obj_rot_t * v;
        let dqg = Quaternion::from_parts(0.0, w) * qg * 0.5;
        let dqr = obj_inv * dqg * sign;
        let dqr = [dqr.w, dqr.i, dqr.j, dqr.k];
        let mut g = 0.0;
        for k in 0..3 {
            g += dq[k] * dp[k];
        }
        for k in 0..4 {
            g += dq[3 + k] * dqr[k];
        }
        grad[(rows - 1, j)] = g;
    }
    Ok(CostGrad { value, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub total: f64,
    pub grasp: f64,
    pub smooth: f64,
    pub obstacle: f64,
}

/// Weighted objective with the gradient assembled from the three parts.
pub fn total_cost<F: DistanceField + ?Sized>(
    traj: &Trajectory,
    chain: &KinematicChain,
    field: &F,
    scene: &SceneSpec,
    config: &PlannerConfig,
) -> Result<(CostBreakdown, DMatrix<f64>)> {
    let fks = fk_rows(chain, traj)?;
    let grasp = grasp_from_fk(traj.len(), chain, field, scene, &fks[traj.len() - 1])?;
    let smooth = smoothness_cost(traj);
    let obstacle = obstacle_from_fk(chain, scene, config.obstacle_margin, &fks);
    let grad = grasp.grad * config.grasp_weight
        + smooth.grad * config.smooth_weight
        + obstacle.grad * config.obstacle_weight;
    let costs = CostBreakdown {
        total: config.grasp_weight * grasp.value
            + config.smooth_weight * smooth.value
            + config.obstacle_weight * obstacle.value,
        grasp: grasp.value,
        smooth: smooth.value,
        obstacle: obstacle.value,
    };
    Ok((costs, grad))
}

// ---- update rule ----

/// Smoothness metric `A = KᵀK` restricted to the free rows: tridiagonal with
/// 2 on the diagonal except 1 in the free-goal corner.
pub fn smoothness_metric(free_rows: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(free_rows, free_rows);
    for i in 0..free_rows {
        a[(i, i)] = if i + 1 == free_rows { 1.0 } else { 2.0 };
        if i + 1 < free_rows {
            a[(i, i + 1)] = -1.0;
            a[(i + 1, i)] = -1.0;
        }
    }
    a
}

/// Per-run optimizer state: the factored metric plus Adam moments.
#[derive(Debug, Clone)]
pub struct StepState {
    metric: Cholesky<f64, Dyn>,
    adam: Adam,
}

impl StepState {
    pub fn new(waypoints: usize, dof: usize, adam: AdamParams) -> Result<Self> {
        let free = waypoints.saturating_sub(1);
        if free < 2 {
            return Err(invalid("need at least 3 waypoints"));
        }
        let metric = Cholesky::new(smoothness_metric(free))
            .ok_or_else(|| invalid("smoothness metric is not positive definite"))?;
        Ok(Self {
            metric,
            adam: Adam::new(free * dof, adam),
        })
    }

    /// `A⁻¹ ∇` over the free rows.
    pub fn precondition(&self, grad: &DMatrix<f64>) -> DMatrix<f64> {
        let free = grad.rows(1, grad.nrows() - 1).into_owned();
        self.metric.solve(&free)
    }
}

/// One CHOMP update. The start row never changes and angles are clamped to
/// limits afterwards.
pub fn step(
    traj: &Trajectory,
    grad: &DMatrix<f64>,
    chain: &KinematicChain,
    config: &PlannerConfig,
    state: &mut StepState,
) -> Result<Trajectory> {
    if grad.shape() != traj.waypoints().shape() {
        return Err(invalid(format!(
            "gradient shape {:?} does not match trajectory {:?}",
            grad.shape(),
            traj.waypoints().shape()
        )));
    }
    let pre = state.precondition(grad);
    let delta = match config.step_mode {
        StepMode::Fixed => pre * config.learning_rate,
        StepMode::Adam => {
            // row-major flattening keeps the moment layout independent of storage order
            let flat: Vec<f64> = pre.transpose().iter().copied().collect();
            let mut out = vec![0.0; flat.len()];
            state.adam.direction(&flat, config.learning_rate, &mut out);
            DMatrix::from_row_slice(pre.nrows(), pre.ncols(), &out)
        }
    };
    let mut next = traj.waypoints().clone();
    for t in 1..next.nrows() {
        let mut row: Vec<f64> = (0..next.ncols()).map(|j| next[(t, j)] - delta[(t - 1, j)]).collect();
        chain.clamp(&mut row);
        for (j, v) in row.into_iter().enumerate() {
            next[(t, j)] = v;
        }
    }
    Trajectory::new(next)
}

// ---- driver ----

#[derive(Debug, Clone, PartialEq)]
pub enum InitStatus {
    Constant,
    Ik(IkResult),
    /// IK missed the ball; the planner fell back to a constant trajectory.
    IkFallback(IkResult),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostLogEntry {
    pub iteration: usize,
    pub total: f64,
    pub grasp: f64,
    pub smooth: f64,
    pub obstacle: f64,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    pub initial: Trajectory,
    /// Costs of the iterate entering each update, then of the final iterate.
    pub cost_log: Vec<CostLogEntry>,
    pub best_iteration: usize,
    /// Field value at the returned trajectory's final configuration.
    pub final_grasp_distance: f64,
    pub init: InitStatus,
}

pub fn initial_trajectory(
    chain: &KinematicChain,
    scene: &SceneSpec,
    config: &PlannerConfig,
) -> Result<(Trajectory, InitStatus)> {
    let start = scene.start.clone().unwrap_or_else(|| chain.home().to_vec());
    if start.len() != chain.dof() {
        return Err(Error::LengthMismatch {
            expected: chain.dof(),
            actual: start.len(),
        });
    }
    match config.init_mode {
        InitMode::Constant => Ok((Trajectory::constant(&start, config.waypoints)?, InitStatus::Constant)),
        InitMode::Ik => {
            let ik = chain.ik_to_ball(scene.object_center(), config.ik_radius, &start, config.ik_max_iters)?;
            if ik.converged {
                let traj = Trajectory::interpolated(&start, &ik.angles, config.waypoints)?;
                Ok((traj, InitStatus::Ik(ik)))
            } else {
                log::warn!(
                    "IK initialization stopped {:.3} m from the object; using constant init",
                    ik.distance
                );
                Ok((Trajectory::constant(&start, config.waypoints)?, InitStatus::IkFallback(ik)))
            }
        }
    }
}

/// Runs the optimizer and returns the lowest-total-cost iterate.
pub fn plan<F: DistanceField + ?Sized>(
    chain: &KinematicChain,
    scene: &SceneSpec,
    field: &F,
    config: &PlannerConfig,
) -> Result<PlanResult> {
    config.validate()?;
    let (initial, init) = initial_trajectory(chain, scene, config)?;
    plan_from(chain, scene, field, config, initial, init)
}

/// Like [`plan`] but starting from a caller-supplied trajectory.
pub fn plan_from<F: DistanceField + ?Sized>(
    chain: &KinematicChain,
    scene: &SceneSpec,
    field: &F,
    config: &PlannerConfig,
    initial: Trajectory,
    init: InitStatus,
) -> Result<PlanResult> {
    config.validate()?;
    let mut state = StepState::new(initial.len(), initial.dof(), config.adam)?;
    let mut traj = initial.clone();
    let mut cost_log = Vec::with_capacity(config.iterations + 1);
    let mut best = (f64::INFINITY, 0, traj.clone(), 0.0);
    for iteration in 0..=config.iterations {
        let (costs, grad) = total_cost(&traj, chain, field, scene, config)?;
        cost_log.push(CostLogEntry {
            iteration,
            total: costs.total,
            grasp: costs.grasp,
            smooth: costs.smooth,
            obstacle: costs.obstacle,
        });
        if costs.total < best.0 {
            best = (costs.total, iteration, traj.clone(), costs.grasp);
        }
        if iteration == config.iterations {
            break;
        }
        traj = step(&traj, &grad, chain, config, &mut state)?;
    }
    let (_, best_iteration, trajectory, final_grasp_distance) = best;
    Ok(PlanResult {
        trajectory,
        initial,
        cost_log,
        best_iteration,
        final_grasp_distance,
        init,
    })
}

/// Pose of the gripper at the trajectory's final configuration.
pub fn final_gripper_pose(chain: &KinematicChain, traj: &Trajectory) -> Result<Pose> {
    Ok(chain.fk(&traj.goal())?.gripper)
}
