//! Randomized reaching-and-grasping benchmark: scene generation, the plan
//! suite and the optimizer ablation grid.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::DistanceField;
use crate::grasp::{GraspManifold, GraspOracle};
use crate::kinematics::KinematicChain;
use crate::planner::{
    final_gripper_pose, min_clearance, plan, InitMode, InitStatus, Obstacle, PlannerConfig, SceneSpec, StepMode,
};
use crate::se3::{random_rotation, ControlPointSet, Pose, Vec3};
use crate::seeds::trial_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub scenes: usize,
    pub seed: u64,
    /// Object centers are drawn uniformly from this box.
    pub center_min: [f64; 3],
    pub center_max: [f64; 3],
    /// Largest tilt of the manifold axis away from vertical, radians.
    pub max_tilt: f64,
    pub obstacle_radius: f64,
    /// Horizontal distance from the object center to the obstacle center.
    pub obstacle_offset: f64,
    pub oracle_density: usize,
    pub success_threshold: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            scenes: 30,
            seed: 11,
            center_min: [0.35, -0.5, 0.05],
            center_max: [0.65, 0.5, 0.3],
            max_tilt: std::f64::consts::PI,
            obstacle_radius: 0.05,
            obstacle_offset: 0.22,
            oracle_density: 10_000,
            success_threshold: 0.05,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 {
            return Err(invalid("suite needs at least one scene"));
        }
        if (0..3).any(|k| !(self.center_min[k] <= self.center_max[k])) {
            return Err(invalid("center_min must not exceed center_max"));
        }
        if !(self.obstacle_radius > 0.0) || self.oracle_density == 0 {
            return Err(invalid("obstacle radius and oracle density must be positive"));
        }
        Ok(())
    }
}

/// Scene `index` of the suite: a randomly oriented object and one sphere
/// obstacle beside it that leaves the start configuration clear.
pub fn generate_scene(chain: &KinematicChain, object_id: usize, config: &SuiteConfig, index: usize) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, index as u64));
    let center = Vec3::from_fn(|k, _| {
        let (lo, hi) = (config.center_min[k], config.center_max[k]);
        lo + (hi - lo) * rng.random::<f64>()
    });
    let orientation = loop {
        let q = random_rotation(&mut rng);
        let axis = q * Vec3::z();
        if axis.z.clamp(-1.0, 1.0).acos() <= config.max_tilt {
            break q;
        }
    };
    let object_pose = Pose::new(center, orientation);
    let home = chain.home().to_vec();
    let start_fk = chain.fk(&home)?;
    for _ in 0..1000 {
        let angle = TAU * rng.random::<f64>();
        let lift = (rng.random::<f64>() - 0.5) * 0.1;
        let c = center + Vec3::new(angle.cos(), angle.sin(), 0.0) * config.obstacle_offset + Vec3::new(0.0, 0.0, lift);
        let obstacle = Obstacle::Sphere {
            center: [c.x, c.y, c.z],
            radius: config.obstacle_radius,
        };
        let clear = chain
            .spheres()
            .iter()
            .zip(&start_fk.sphere_centers)
            .all(|(s, p)| obstacle.signed_distance(p).0 - s.radius > 0.1);
        if clear {
            let mut scene = SceneSpec::new(vec![obstacle], object_pose, object_id)?;
            scene.start = Some(home);
            return Ok(scene);
        }
    }
    Err(invalid(format!("could not place an obstacle for scene {index}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneOutcome {
    pub scene: usize,
    pub oracle_distance: f64,
    pub field_distance: f64,
    pub min_clearance: f64,
    pub start_unchanged: bool,
    pub ik_fallback: bool,
    pub best_iteration: usize,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteMetrics {
    pub label: String,
    pub outcomes: Vec<SceneOutcome>,
    pub success_rate: f64,
    pub mean_oracle_distance: f64,
}

impl SuiteMetrics {
    fn new(label: String, outcomes: Vec<SceneOutcome>) -> Self {
        let n = outcomes.len() as f64;
        Self {
            label,
            success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n,
            mean_oracle_distance: outcomes.iter().map(|o| o.oracle_distance).sum::<f64>() / n,
            outcomes,
        }
    }

    pub fn successes(&self) -> usize {
        self.outcomes.iter().filter(|o| o.success).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scene,success,oracle_distance,field_distance,min_clearance,start_unchanged,ik_fallback,best_iteration\n",
        );
        for o in &self.outcomes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                o.scene,
                o.success as u8,
                o.oracle_distance,
                o.field_distance,
                o.min_clearance,
                o.start_unchanged as u8,
                o.ik_fallback as u8,
                o.best_iteration
            ));
        }
        out
    }
}

/// Plans every suite scene and scores the result against the exact oracle of
/// the object manifold placed at the scene's object pose. `manifold` is given
/// in the object frame.
pub fn run_plan_suite<F: DistanceField + ?Sized>(
    chain: &KinematicChain,
    field: &F,
    manifold: &GraspManifold,
    cps: &ControlPointSet,
    object_id: usize,
    planner: &PlannerConfig,
    config: &SuiteConfig,
    label: &str,
) -> Result<SuiteMetrics> {
    config.validate()?;
    planner.validate()?;
    let outcomes = (0..config.scenes)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(chain, object_id, config, i)?;
            let oracle = GraspOracle::new(&manifold.transformed(&scene.object_pose), cps, config.oracle_density)?;
            let result = plan(chain, &scene, field, planner)?;
            let gripper = final_gripper_pose(chain, &result.trajectory)?;
            let oracle_distance = oracle.distance(&gripper);
            let clearance = min_clearance(&result.trajectory, chain, &scene)?;
            let start_unchanged = result.trajectory.start() == result.initial.start();
            Ok(SceneOutcome {
                scene: i,
                oracle_distance,
                field_distance: result.final_grasp_distance,
                min_clearance: clearance,
                start_unchanged,
                ik_fallback: matches!(result.init, InitStatus::IkFallback(_)),
                best_iteration: result.best_iteration,
                success: oracle_distance < config.success_threshold && clearance >= 0.0 && start_unchanged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteMetrics::new(label.to_string(), outcomes))
}

pub const ABLATION_MODES: [(StepMode, InitMode, &str); 4] = [
    (StepMode::Adam, InitMode::Ik, "adam+ik"),
    (StepMode::Fixed, InitMode::Ik, "fixed+ik"),
    (StepMode::Adam, InitMode::Constant, "adam+constant"),
    (StepMode::Fixed, InitMode::Constant, "fixed+constant"),
];

/// The plan suite under every step-mode × init-mode combination, on
/// identical scenes.
pub fn run_ablation<F: DistanceField + ?Sized>(
    chain: &KinematicChain,
    field: &F,
    manifold: &GraspManifold,
    cps: &ControlPointSet,
    object_id: usize,
    planner: &PlannerConfig,
    config: &SuiteConfig,
) -> Result<Vec<SuiteMetrics>> {
    ABLATION_MODES
        .iter()
        .map(|&(step_mode, init_mode, label)| {
            let cfg = PlannerConfig {
                step_mode,
                init_mode,
                ..*planner
            };
            run_plan_suite(chain, field, manifold, cps, object_id, &cfg, config, label)
        })
        .collect()
}

pub fn ablation_table(results: &[SuiteMetrics]) -> String {
    let mut out = String::from("mode,successes,scenes,success_rate,mean_oracle_distance\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.label,
            r.successes(),
            r.outcomes.len(),
            r.success_rate,
            r.mean_oracle_distance
        ));
    }
    out
}
