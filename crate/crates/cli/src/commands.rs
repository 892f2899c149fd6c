//! Subcommand bodies. Every command writes the resolved configuration to
//! `config.toml` and wall times to `timing.txt`; all other outputs depend
//! only on the configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ngdf::field::{DistanceField, OracleField};
use ngdf::grasp::{generate_dataset, load_dataset, save_dataset, GraspOracle};
use ngdf::kinematics::KinematicChain;
use ngdf::levelset::{evaluate_levelset, optimize_pose, trial_start};
use ngdf::model::FieldModel;
use ngdf::planner::{final_gripper_pose, min_clearance, plan as plan_scene, smoothness_cost, InitStatus, SceneSpec};
use ngdf::se3::{mean, ControlPointSet};
use ngdf::suite::{ablation_table, run_ablation, run_plan_suite};
use ngdf::train::curve_csv;

use crate::config::RunConfig;
use crate::{Common, FieldArgs, FieldKind, GenDataArgs, LevelsetArgs, PlanArgs, SuiteArgs, TrainArgs};

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, configuration or missing inputs.
    Usage(String),
    /// The computation itself failed.
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Runtime(m) => m,
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn resolve(common: &Common, apply: impl FnOnce(&mut RunConfig)) -> Outcome<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(kind) = common.manifold {
        cfg.manifold.kind = kind;
    }
    apply(&mut cfg);
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn existing(path: Option<&PathBuf>, what: &str, flag: &str) -> Outcome<PathBuf> {
    let path = path.ok_or_else(|| Failure::Usage(format!("no {what} given; pass {flag} or set it under [paths]")))?;
    if !path.is_file() {
        return Err(Failure::Usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(path.clone())
}

/// Collects output files and writes them, with the resolved config and the
/// timing file, once the command has finished.
struct Run {
    out: PathBuf,
    started: Instant,
    timing: String,
}

impl Run {
    fn start(out: &Path, command: &str) -> Outcome<Self> {
        std::fs::create_dir_all(out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self {
            out: out.to_path_buf(),
            started: Instant::now(),
            timing: format!("command {command}\n"),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Outcome {
        std::fs::write(self.path(name), contents).map_err(|e| runtime(format!("cannot write {name}: {e}")))
    }

    fn lap(&mut self, phase: &str, since: Instant) {
        writeln!(self.timing, "{phase}_seconds {:.3}", since.elapsed().as_secs_f64()).unwrap();
    }

    fn finish(mut self, cfg: &RunConfig) -> Outcome {
        self.write("config.toml", &cfg.to_toml())?;
        let started = self.started;
        self.lap("total", started);
        self.write("timing.txt", &self.timing)
    }
}

fn control_points(cfg: &RunConfig) -> Outcome<ControlPointSet> {
    match &cfg.paths.control_points {
        Some(path) => ControlPointSet::load(path).map_err(|e| usage(format!("control points {}: {e}", path.display()))),
        None => Ok(ControlPointSet::default()),
    }
}

fn chain(cfg: &RunConfig) -> Outcome<KinematicChain> {
    match &cfg.paths.chain {
        Some(path) => KinematicChain::load(path).map_err(|e| usage(format!("chain {}: {e}", path.display()))),
        None => Ok(KinematicChain::franka_like()),
    }
}

/// The field named on the command line: a checkpoint, or the exact oracle
/// built at `oracle_density`.
fn load_field(cfg: &RunConfig, args: &FieldArgs, cps: &ControlPointSet, oracle_density: usize) -> Outcome<Box<dyn DistanceField>> {
    match args.field {
        FieldKind::Oracle => {
            let manifold = cfg.manifold.build().map_err(usage)?;
            let oracle = GraspOracle::new(&manifold, cps, oracle_density).map_err(usage)?;
            Ok(Box::new(OracleField::new(vec![oracle])))
        }
        FieldKind::Model => {
            let path = existing(cfg.paths.model.as_ref(), "model checkpoint", "--model")?;
            let model = FieldModel::load(&path).map_err(|e| usage(format!("model {}: {e}", path.display())))?;
            if model.architecture().outputs != cps.len() {
                return Err(usage(format!(
                    "model predicts {} distances but there are {} control points",
                    model.architecture().outputs,
                    cps.len()
                )));
            }
            Ok(Box::new(model))
        }
    }
}

/// Summary of the mean target distances: range, quantiles and a 10-bin histogram.
fn generation_report(means: &[f64], ncp: usize) -> String {
    let mut sorted = means.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let quantile = |p: f64| sorted[((n - 1) as f64 * p).round() as usize];
    let max = sorted[n - 1];
    let mut out = format!(
        "records {n}\nncp {ncp}\nmean_distance_min {}\nmean_distance_mean {}\nmean_distance_median {}\nmean_distance_p90 {}\nmean_distance_max {}\nfraction_below_0.05 {}\n",
        sorted[0],
        mean(&sorted),
        quantile(0.5),
        quantile(0.9),
        max,
        sorted.iter().filter(|d| **d < 0.05).count() as f64 / n as f64
    );
    out.push_str("histogram bin_low bin_high count\n");
    let bins = 10;
    let mut counts = vec![0usize; bins];
    for d in &sorted {
        counts[((d / max * bins as f64) as usize).min(bins - 1)] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let lo = max * i as f64 / bins as f64;
        writeln!(out, "bin {lo} {} {c}", lo + max / bins as f64).unwrap();
    }
    out
}

pub fn gen_data(args: &GenDataArgs) -> Outcome {
    let cfg = resolve(&args.common, |c| {
        if let Some(n) = args.n {
            c.dataset.num_queries = n as usize;
        }
        if let Some(r) = args.radius {
            c.dataset.ball_radius = r;
        }
        if let Some(d) = args.density {
            c.dataset.density = d;
        }
        if let Some(s) = args.seed {
            c.dataset.seed = s;
        }
    })?;
    let cps = control_points(&cfg)?;
    let manifold = cfg.manifold.build().map_err(usage)?;
    let mut run = Run::start(&args.common.out, "gen-data")?;
    let t = Instant::now();
    let records = generate_dataset(&manifold, 0, &cps, &cfg.dataset).map_err(runtime)?;
    run.lap("generate", t);
    save_dataset(run.path("dataset.txt"), &records, cps.len()).map_err(runtime)?;
    let means: Vec<f64> = records.iter().map(|r| mean(&r.target_distances)).collect();
    let report = generation_report(&means, cps.len());
    run.write("gen_report.txt", &report)?;
    print!("{report}");
    run.finish(&cfg)
}

pub fn train(args: &TrainArgs) -> Outcome {
    let cfg = resolve(&args.common, |c| {
        if let Some(p) = &args.dataset {
            c.paths.dataset = Some(p.clone());
        }
        if let Some(p) = args.aug_p {
            c.train.augmentation_probability = p;
        }
        if let Some(h) = args.hidden {
            c.train.hidden = h;
        }
        if let Some(w) = args.width {
            c.train.width = w;
        }
        if let Some(e) = args.epochs {
            c.train.epochs = e;
        }
        if let Some(s) = args.seed {
            c.train.seed = s;
        }
    })?;
    let cps = control_points(&cfg)?;
    let path = existing(cfg.paths.dataset.as_ref(), "dataset", "--dataset")?;
    let (records, ncp) = load_dataset(&path).map_err(|e| usage(format!("dataset {}: {e}", path.display())))?;
    if ncp != cps.len() {
        return Err(usage(format!("dataset has {ncp} distances per record but there are {} control points", cps.len())));
    }
    let objects = records.iter().map(|r| r.object_id).max().map_or(0, |m| m + 1);
    let manifold = cfg.manifold.build().map_err(usage)?;
    let manifolds = vec![manifold; objects];
    let mut run = Run::start(&args.common.out, "train")?;
    let t = Instant::now();
    let output = ngdf::train::train(&records, &manifolds, &cps, &cfg.train).map_err(runtime)?;
    run.lap("train", t);
    output.model.save(run.path("model.bin")).map_err(runtime)?;
    run.write("train_curve.csv", &curve_csv(&output.curve))?;
    let m = output.final_metrics();
    let summary = format!(
        "train_records {}\nvalidation_records {}\nfinal_train_l1 {}\nfinal_val_l1 {}\nfinal_val_mean_error {}\n",
        output.train_records, output.validation_records, m.train_l1, m.val_l1, m.val_mean_error
    );
    run.write("train_summary.txt", &summary)?;
    print!("{summary}");
    run.finish(&cfg)
}

pub fn levelset(args: &LevelsetArgs) -> Outcome {
    let cfg = resolve(&args.common, |c| {
        if let Some(p) = &args.field.model {
            c.paths.model = Some(p.clone());
        }
        if let Some(n) = args.trials {
            c.levelset_trials = n as usize;
        }
        if let Some(s) = args.steps {
            c.levelset.steps = s;
        }
        if let Some(lr) = args.lr {
            c.levelset.learning_rate = lr;
        }
        if let Some(s) = args.seed {
            c.levelset.seed = s;
        }
    })?;
    let cps = control_points(&cfg)?;
    let field = load_field(&cfg, &args.field, &cps, cfg.dataset.density)?;
    let manifold = cfg.manifold.build().map_err(usage)?;
    let oracle = GraspOracle::new(&manifold, &cps, cfg.dataset.density).map_err(usage)?;
    let mut run = Run::start(&args.common.out, "levelset")?;
    let t = Instant::now();
    let center = manifold.centroid();
    let metrics = evaluate_levelset(&*field, 0, &oracle, &center, cfg.levelset_trials, &cfg.levelset).map_err(runtime)?;
    let first = optimize_pose(&*field, 0, &trial_start(&center, &cfg.levelset, 0), &cfg.levelset).map_err(runtime)?;
    run.lap("levelset", t);
    run.write("levelset.txt", &metrics.to_text())?;
    run.write("levelset_trials.csv", &metrics.trials_csv())?;
    let mut path_csv = String::from("step,px,py,pz,qw,qx,qy,qz,field_value\n");
    for (i, (p, v)) in first.path.iter().zip(&first.values).enumerate() {
        let cols: Vec<String> = p.to_array().iter().map(f64::to_string).collect();
        writeln!(path_csv, "{i},{},{v}", cols.join(",")).unwrap();
    }
    run.write("levelset_path.csv", &path_csv)?;
    print!("{}", metrics.to_text());
    run.finish(&cfg)
}

fn resolve_suite(args: &SuiteArgs, scene: Option<&PathBuf>) -> Outcome<RunConfig> {
    resolve(&args.common, |c| {
        if let Some(p) = &args.field.model {
            c.paths.model = Some(p.clone());
        }
        if let Some(p) = &args.chain {
            c.paths.chain = Some(p.clone());
        }
        if let Some(p) = scene {
            c.paths.scene = Some(p.clone());
        }
        if let Some(n) = args.scenes {
            c.suite.scenes = n as usize;
        }
        if let Some(s) = args.seed {
            c.suite.seed = s;
        }
    })
}

pub fn plan(args: &PlanArgs) -> Outcome {
    let cfg = resolve_suite(&args.suite, args.scene.as_ref())?;
    let cps = control_points(&cfg)?;
    let chain = chain(&cfg)?;
    let field = load_field(&cfg, &args.suite.field, &cps, cfg.suite.oracle_density)?;
    let manifold = cfg.manifold.build().map_err(usage)?;
    let scene = match &cfg.paths.scene {
        Some(path) => {
            let path = existing(Some(path), "scene", "--scene")?;
            Some(SceneSpec::load(&path).map_err(|e| usage(format!("scene {}: {e}", path.display())))?)
        }
        None => None,
    };
    let mut run = Run::start(&args.suite.common.out, "plan")?;
    let t = Instant::now();
    let summary = match scene {
        Some(scene) => {
            let result = plan_scene(&chain, &scene, &*field, &cfg.planner).map_err(runtime)?;
            let gripper = final_gripper_pose(&chain, &result.trajectory).map_err(runtime)?;
            let oracle = GraspOracle::new(&manifold.transformed(&scene.object_pose), &cps, cfg.suite.oracle_density)
                .map_err(runtime)?;
            let oracle_distance = oracle.distance(&gripper);
            let clearance = min_clearance(&result.trajectory, &chain, &scene).map_err(runtime)?;
            let start_unchanged = result.trajectory.start() == result.initial.start();
            let init = match result.init {
                InitStatus::Constant => "constant",
                InitStatus::Ik(_) => "ik",
                InitStatus::IkFallback(_) => "ik_fallback",
            };
            run.write("trajectory.csv", &result.trajectory.to_csv())?;
            let mut log = String::from("iteration,total,grasp,smooth,obstacle\n");
            for c in &result.cost_log {
                writeln!(log, "{},{},{},{},{}", c.iteration, c.total, c.grasp, c.smooth, c.obstacle).unwrap();
            }
            run.write("cost_log.csv", &log)?;
            let success = oracle_distance < cfg.suite.success_threshold && clearance >= 0.0 && start_unchanged;
            format!(
                "success {}\noracle_distance {oracle_distance}\nfield_distance {}\nmin_clearance {clearance}\nsmoothness_cost {}\nstart_unchanged {}\ninit {init}\niterations {}\nbest_iteration {}\n",
                success as u8,
                result.final_grasp_distance,
                smoothness_cost(&result.trajectory).value,
                start_unchanged as u8,
                cfg.planner.iterations,
                result.best_iteration
            )
        }
        None => {
            let metrics = run_plan_suite(&chain, &*field, &manifold, &cps, 0, &cfg.planner, &cfg.suite, "plan")
                .map_err(runtime)?;
            run.write("plan_suite.csv", &metrics.to_csv())?;
            format!(
                "scenes {}\nsuccesses {}\nsuccess_rate {}\nmean_oracle_distance {}\n",
                metrics.outcomes.len(),
                metrics.successes(),
                metrics.success_rate,
                metrics.mean_oracle_distance
            )
        }
    };
    run.lap("plan", t);
    run.write("plan.txt", &summary)?;
    print!("{summary}");
    run.finish(&cfg)
}

pub fn ablate(args: &SuiteArgs) -> Outcome {
    let cfg = resolve_suite(args, None)?;
    let cps = control_points(&cfg)?;
    let chain = chain(&cfg)?;
    let field = load_field(&cfg, &args.field, &cps, cfg.suite.oracle_density)?;
    let manifold = cfg.manifold.build().map_err(usage)?;
    let mut run = Run::start(&args.common.out, "ablate")?;
    let t = Instant::now();
    let results = run_ablation(&chain, &*field, &manifold, &cps, 0, &cfg.planner, &cfg.suite).map_err(runtime)?;
    run.lap("ablate", t);
    let table = ablation_table(&results);
    run.write("ablation.csv", &table)?;
    for m in &results {
        run.write(&format!("plan_{}.csv", m.label), &m.to_csv())?;
    }
    print!("{table}");
    run.finish(&cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_histogram_counts_every_record() {
        let means: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let report = generation_report(&means, 6);
        let total: usize = report
            .lines()
            .filter(|l| l.starts_with("bin "))
            .map(|l| l.rsplit(' ').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 100);
        assert!(report.contains("mean_distance_max 1\n"));
        assert!(report.contains("fraction_below_0.05 0.04\n"));
    }

    #[test]
    fn failures_map_to_exit_codes() {
        assert_eq!(usage("x").code(), 2);
        assert_eq!(runtime("x").code(), 3);
    }
}
