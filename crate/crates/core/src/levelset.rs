//! Gripper-pose optimization onto a field's zero level set, and the
//! multi-start evaluation that scores it against the exact oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::DistanceField;
use crate::grasp::GraspOracle;
use crate::optim::{Adam, AdamParams};
use crate::se3::{random_pose_in_ball, Pose, Vec3};
use crate::seeds::trial_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelSetConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub adam: AdamParams,
    /// Oracle distance below which a trial counts as a grasp.
    pub success_threshold: f64,
    /// Field value below which a trial counts as having reached the level set.
    pub field_threshold: f64,
    pub start_radius: f64,
    pub seed: u64,
}

impl Default for LevelSetConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            learning_rate: 1e-4,
            adam: AdamParams::default(),
            success_threshold: 0.05,
            field_threshold: 1e-3,
            start_radius: 0.5,
            seed: 7,
        }
    }
}

impl LevelSetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("levelset steps must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("levelset learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PoseOptimization {
    pub pose: Pose,
    /// Start pose followed by the pose after every update.
    pub path: Vec<Pose>,
    /// Field value at each entry of `path`.
    pub values: Vec<f64>,
    pub final_value: f64,
}

/// Adam descent on the mean field output over the 7 raw pose coordinates.
/// The quaternion is renormalized and canonicalized after every update.
pub fn optimize_pose<F: DistanceField + ?Sized>(
    field: &F,
    object_id: usize,
    start: &Pose,
    config: &LevelSetConfig,
) -> Result<PoseOptimization> {
    config.validate()?;
    let mut adam = Adam::new(7, config.adam);
    let mut pose = *start;
    let mut path = Vec::with_capacity(config.steps + 1);
    let mut values = Vec::with_capacity(config.steps + 1);
    let mut step = [0.0; 7];
    for _ in 0..config.steps {
        let x = pose.to_array();
        let (value, grad) = field.mean_with_gradient(object_id, &x)?;
        path.push(pose);
        values.push(value);
        adam.direction(&grad, config.learning_rate, &mut step);
        let mut next = x;
        for (v, s) in next.iter_mut().zip(&step) {
            *v -= s;
        }
        pose = Pose::from_array(&next)?;
    }
    let final_value = field.mean_distance(object_id, &pose.to_array())?;
    path.push(pose);
    values.push(final_value);
    Ok(PoseOptimization {
        pose,
        path,
        values,
        final_value,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub start: Pose,
    pub end: Pose,
    pub final_field_value: f64,
    pub oracle_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetMetrics {
    pub trials: usize,
    pub mean_oracle_distance: f64,
    pub std_oracle_distance: f64,
    /// Fraction with oracle distance below the success threshold.
    pub success_rate: f64,
    /// Fraction with final field value below the field threshold.
    pub level_set_rate: f64,
    pub mean_final_field_value: f64,
    pub outcomes: Vec<TrialOutcome>,
}

impl LevelSetMetrics {
    pub fn to_text(&self) -> String {
        format!(
            "trials {}\nmean_oracle_distance {}\nstd_oracle_distance {}\nsuccess_rate {}\nlevel_set_rate {}\nmean_final_field_value {}\n",
            self.trials,
            self.mean_oracle_distance,
            self.std_oracle_distance,
            self.success_rate,
            self.level_set_rate,
            self.mean_final_field_value
        )
    }

    /// One row per trial: index, start pose, end pose, field value, oracle distance.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from(
            "trial,start_px,start_py,start_pz,start_qw,start_qx,start_qy,start_qz,end_px,end_py,end_pz,end_qw,end_qx,end_qy,end_qz,field_value,oracle_distance\n",
        );
        for (i, t) in self.outcomes.iter().enumerate() {
            let cols: Vec<String> = t
                .start
                .to_array()
                .iter()
                .chain(&t.end.to_array())
                .chain(&[t.final_field_value, t.oracle_distance])
                .map(f64::to_string)
                .collect();
            out.push_str(&format!("{i},{}\n", cols.join(",")));
        }
        out
    }
}

/// Start pose of trial `index`; reproducible in isolation from the master seed.
pub fn trial_start(center: &Vec3, config: &LevelSetConfig, index: usize) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, index as u64));
    random_pose_in_ball(center, config.start_radius, &mut rng)
}

/// Runs `num_trials` seeded optimizations around `oracle`'s manifold and
/// scores each end pose by its exact oracle distance.
pub fn evaluate_levelset<F: DistanceField + ?Sized>(
    field: &F,
    object_id: usize,
    oracle: &GraspOracle,
    center: &Vec3,
    num_trials: usize,
    config: &LevelSetConfig,
) -> Result<LevelSetMetrics> {
    if num_trials == 0 {
        return Err(invalid("num_trials must be at least 1"));
    }
    config.validate()?;
    let outcomes = (0..num_trials)
        .into_par_iter()
        .map(|i| {
            let start = trial_start(center, config, i);
            let run = optimize_pose(field, object_id, &start, config)?;
            Ok(TrialOutcome {
                start,
                end: run.pose,
                final_field_value: run.final_value,
                oracle_distance: oracle.distance(&run.pose),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(outcomes, config))
}

fn summarize(outcomes: Vec<TrialOutcome>, config: &LevelSetConfig) -> LevelSetMetrics {
    let n = outcomes.len() as f64;
    let mean = outcomes.iter().map(|t| t.oracle_distance).sum::<f64>() / n;
    let var = outcomes
        .iter()
        .map(|t| (t.oracle_distance - mean).powi(2))
        .sum::<f64>()
        / n;
    let frac = |pred: &dyn Fn(&TrialOutcome) -> bool| outcomes.iter().filter(|t| pred(t)).count() as f64 / n;
    LevelSetMetrics {
        trials: outcomes.len(),
        mean_oracle_distance: mean,
        std_oracle_distance: var.sqrt(),
        success_rate: frac(&|t| t.oracle_distance < config.success_threshold),
        level_set_rate: frac(&|t| t.final_field_value < config.field_threshold),
        mean_final_field_value: outcomes.iter().map(|t| t.final_field_value).sum::<f64>() / n,
        outcomes,
    }
}
