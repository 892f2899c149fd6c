//! The merged run configuration: one TOML document holding every module's
//! settings plus the artifact paths. The resolved copy written next to a
//! run's outputs reproduces it exactly.

use std::f64::consts::FRAC_PI_6;
use std::path::{Path, PathBuf};

use ngdf::grasp::{DatasetConfig, GraspManifold};
use ngdf::levelset::LevelSetConfig;
use ngdf::planner::PlannerConfig;
use ngdf::se3::Pose;
use ngdf::suite::SuiteConfig;
use ngdf::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    /// One grasp per azimuth at a fixed roll.
    Ring,
    /// Azimuth and a roll interval.
    Ring2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldConfig {
    pub kind: ManifoldKind,
    pub ring_radius: f64,
    pub standoff: f64,
    /// Roll used by `ring`.
    pub roll: f64,
    /// Roll interval used by `ring2d`.
    pub roll_range: [f64; 2],
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self {
            kind: ManifoldKind::Ring,
            ring_radius: 0.05,
            standoff: 0.06,
            roll: 0.0,
            roll_range: [-FRAC_PI_6, FRAC_PI_6],
        }
    }
}

impl ManifoldConfig {
    /// The manifold in its object frame.
    pub fn build(&self) -> ngdf::Result<GraspManifold> {
        let roll = match self.kind {
            ManifoldKind::Ring => (self.roll, self.roll),
            ManifoldKind::Ring2d => (self.roll_range[0], self.roll_range[1]),
        };
        GraspManifold::ring(Pose::identity(), self.ring_radius, self.standoff, roll)
    }
}

/// Input and output artifact locations. Relative paths resolve against the
/// working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub chain: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub control_points: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub levelset_trials: usize,
    pub paths: PathsConfig,
    pub manifold: ManifoldConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub levelset: LevelSetConfig,
    pub planner: PlannerConfig,
    pub suite: SuiteConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            levelset_trials: 50,
            paths: PathsConfig::default(),
            manifold: ManifoldConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            levelset: LevelSetConfig::default(),
            planner: PlannerConfig::default(),
            suite: SuiteConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> ngdf::Result<()> {
        self.manifold.build()?;
        self.dataset.validate()?;
        self.train.validate()?;
        self.levelset.validate()?;
        self.planner.validate()?;
        self.suite.validate()?;
        if self.levelset_trials == 0 {
            return Err(ngdf::Error::InvalidArgument("levelset_trials must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_roundtrips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.paths.dataset = Some("data/ring.txt".into());
        cfg.manifold.kind = ManifoldKind::Ring2d;
        cfg.train.epochs = 3;
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_in_defaults_and_unknown_keys_fail() {
        let cfg: RunConfig = toml::from_str("[train]\nepochs = 2\n").unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.dataset, DatasetConfig::default());
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 2\n").is_err());
    }

    #[test]
    fn manifold_kinds_build_the_expected_roll_ranges() {
        let mut m = ManifoldConfig::default();
        let GraspManifold::AnalyticRing(r) = m.build().unwrap() else { panic!() };
        assert!(r.is_one_dimensional());
        m.kind = ManifoldKind::Ring2d;
        let GraspManifold::AnalyticRing(r) = m.build().unwrap() else { panic!() };
        assert_eq!(r.roll_range, (-FRAC_PI_6, FRAC_PI_6));
    }
}
