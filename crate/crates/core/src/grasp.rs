//! Ground-truth grasp manifolds, the brute-force nearest-grasp oracle and
//! supervised dataset generation.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::se3::{control_point_distance, mean, random_pose_in_ball, ControlPointSet, Pose, Vec3};

/// Grasps around a cylinder axis: the gripper origin sits on a circle of
/// radius `ring_radius + standoff` about the axis (the z axis of `axis_pose`),
/// approaching the axis radially. Roll about the approach direction spans
/// `roll_range`; at roll 0 the fingers close along the ring tangent.
#[derive(Debug, Clone, PartialEq)]
pub struct RingManifold {
    pub axis_pose: Pose,
    pub ring_radius: f64,
    pub standoff: f64,
    pub roll_range: (f64, f64),
}

impl RingManifold {
    /// Grasp at azimuth `phi` and roll `roll`.
    pub fn grasp(&self, phi: f64, roll: f64) -> Pose {
        let (s, c) = phi.sin_cos();
        let radial = Vec3::new(c, s, 0.0);
        let tangent = Vec3::new(-s, c, 0.0);
        let approach = -radial;
        let (sr, cr) = roll.sin_cos();
        // gripper axes before roll: x = tangent, y = approach × tangent, z = approach
        let y0 = approach.cross(&tangent);
        let x = tangent * cr + y0 * sr;
        let y = -tangent * sr + y0 * cr;
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, approach]));
        let local = Pose::new(
            radial * (self.ring_radius + self.standoff),
            UnitQuaternion::from_rotation_matrix(&rot),
        );
        self.axis_pose.compose(&local)
    }

    pub fn is_one_dimensional(&self) -> bool {
        self.roll_range.0 == self.roll_range.1
    }

    /// Grid shape `(azimuths, rolls)` for a stratified sample of at most `count`
    /// poses, keeping angular spacing comparable in both parameters.
    pub fn grid_shape(&self, count: usize) -> (usize, usize) {
        if self.is_one_dimensional() {
            return (count, 1);
        }
        let span = (self.roll_range.1 - self.roll_range.0).abs();
        let rolls = ((count as f64 * span / TAU).sqrt().round() as usize).clamp(1, count);
        (count / rolls, rolls)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraspManifold {
    AnalyticRing(RingManifold),
    DiscreteSet(Vec<Pose>),
}

impl GraspManifold {
    pub fn ring(axis_pose: Pose, ring_radius: f64, standoff: f64, roll_range: (f64, f64)) -> Result<Self> {
        if !(ring_radius >= 0.0 && standoff >= 0.0 && ring_radius + standoff > 0.0) {
            return Err(invalid("ring radius and standoff must be nonnegative and not both zero"));
        }
        if !(roll_range.0 <= roll_range.1) {
            return Err(invalid("roll range must be an ordered interval"));
        }
        Ok(Self::AnalyticRing(RingManifold {
            axis_pose,
            ring_radius,
            standoff,
            roll_range,
        }))
    }

    pub fn discrete(grasps: Vec<Pose>) -> Result<Self> {
        if grasps.is_empty() {
            return Err(Error::Empty("grasp set"));
        }
        Ok(Self::DiscreteSet(grasps))
    }

    /// Centroid used for query sampling.
    pub fn centroid(&self) -> Vec3 {
        match self {
            Self::AnalyticRing(r) => *r.axis_pose.position(),
            Self::DiscreteSet(gs) => {
                gs.iter().fold(Vec3::zeros(), |acc, g| acc + g.position()) / gs.len().max(1) as f64
            }
        }
    }

    /// The same manifold carried by the rigid transform `frame`.
    pub fn transformed(&self, frame: &Pose) -> Self {
        match self {
            Self::AnalyticRing(r) => Self::AnalyticRing(RingManifold {
                axis_pose: frame.compose(&r.axis_pose),
                ..r.clone()
            }),
            Self::DiscreteSet(gs) => Self::DiscreteSet(gs.iter().map(|g| frame.compose(g)).collect()),
        }
    }

    /// Deterministic stratified sample. Ring azimuths are `2πk/n`; rolls
    /// span the closed roll interval. Discrete sets ignore `count`.
    pub fn sample(&self, count: usize) -> Result<Vec<Pose>> {
        if count == 0 {
            return Err(invalid("sample count must be at least 1"));
        }
        match self {
            Self::DiscreteSet(gs) if gs.is_empty() => Err(Error::Empty("grasp set")),
            Self::DiscreteSet(gs) => Ok(gs.clone()),
            Self::AnalyticRing(r) => {
                let (n_phi, n_roll) = r.grid_shape(count);
                let mut out = Vec::with_capacity(n_phi * n_roll);
                for i in 0..n_phi {
                    let phi = TAU * i as f64 / n_phi as f64;
                    for k in 0..n_roll {
                        out.push(r.grasp(phi, roll_at(r.roll_range, k, n_roll)));
                    }
                }
                Ok(out)
            }
        }
    }

    /// One grasp drawn uniformly over the manifold parameters.
    pub fn random_grasp<R: Rng + ?Sized>(&self, rng: &mut R) -> Pose {
        match self {
            Self::AnalyticRing(r) => {
                let (lo, hi) = r.roll_range;
                let phi = TAU * rng.random::<f64>();
                let roll = lo + (hi - lo) * rng.random::<f64>();
                r.grasp(phi, roll)
            }
            Self::DiscreteSet(gs) => gs[rng.random_range(0..gs.len())],
        }
    }

    /// Stratified sample with each parameter jittered uniformly inside its cell.
    pub fn sample_jittered<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Pose>> {
        let Self::AnalyticRing(r) = self else {
            return self.sample(count);
        };
        if count == 0 {
            return Err(invalid("sample count must be at least 1"));
        }
        let (n_phi, n_roll) = r.grid_shape(count);
        let (lo, hi) = r.roll_range;
        let mut out = Vec::with_capacity(n_phi * n_roll);
        for i in 0..n_phi {
            for k in 0..n_roll {
                let phi = TAU * (i as f64 + rng.random::<f64>()) / n_phi as f64;
                let roll = lo + (hi - lo) * (k as f64 + rng.random::<f64>()) / n_roll as f64;
                out.push(r.grasp(phi, roll));
            }
        }
        Ok(out)
    }
}

fn roll_at(range: (f64, f64), k: usize, n: usize) -> f64 {
    if n <= 1 {
        0.5 * (range.0 + range.1)
    } else {
        range.0 + (range.1 - range.0) * k as f64 / (n - 1) as f64
    }
}

/// Brute-force nearest-grasp search over a fixed dense sample of a manifold.
///
/// Sample control points are stored column-wise (one array per point
/// coordinate) so the L1 accumulation vectorizes.
#[derive(Debug, Clone)]
pub struct GraspOracle {
    grasps: Vec<Pose>,
    columns: Vec<Vec<f64>>,
    cps: ControlPointSet,
}

impl GraspOracle {
    pub fn new(manifold: &GraspManifold, cps: &ControlPointSet, density: usize) -> Result<Self> {
        if density == 0 {
            return Err(invalid("oracle density must be at least 1"));
        }
        Ok(Self::from_grasps(manifold.sample(density)?, cps))
    }

    pub fn from_grasps(grasps: Vec<Pose>, cps: &ControlPointSet) -> Self {
        let mut columns = vec![Vec::with_capacity(grasps.len()); 3 * cps.len()];
        for g in &grasps {
            for (i, p) in cps.transformed(g).iter().enumerate() {
                for k in 0..3 {
                    columns[3 * i + k].push(p[k]);
                }
            }
        }
        Self {
            grasps,
            columns,
            cps: cps.clone(),
        }
    }

    pub fn grasps(&self) -> &[Pose] {
        &self.grasps
    }

    pub fn control_points(&self) -> &ControlPointSet {
        &self.cps
    }

    /// Index of the sample minimizing the mean control-point distance to `q`.
    /// Ties go to the lowest index.
    pub fn nearest_index(&self, q: &Pose) -> usize {
        let n = self.grasps.len();
        let mut sums = vec![0.0; n];
        for (col, target) in self.columns.iter().zip(
            self.cps
                .transformed(q)
                .iter()
                .flat_map(|p| [p.x, p.y, p.z]),
        ) {
            for (s, v) in sums.iter_mut().zip(col) {
                *s += (v - target).abs();
            }
        }
        let mut best = 0;
        for (i, &s) in sums.iter().enumerate().skip(1) {
            if s < sums[best] {
                best = i;
            }
        }
        best
    }

    /// Nearest sampled grasp and its per-point distance vector.
    pub fn nearest(&self, q: &Pose) -> (Pose, Vec<f64>) {
        let g = self.grasps[self.nearest_index(q)];
        let d = control_point_distance(q, &g, &self.cps);
        (g, d)
    }

    /// Mean control-point distance to the nearest sampled grasp.
    pub fn distance(&self, q: &Pose) -> f64 {
        mean(&self.nearest(q).1)
    }
}

/// One-off nearest-grasp query; builds the dense sample each call.
pub fn nearest_grasp(
    q: &Pose,
    manifold: &GraspManifold,
    cps: &ControlPointSet,
    density: usize,
) -> Result<(Pose, Vec<f64>)> {
    Ok(GraspOracle::new(manifold, cps, density)?.nearest(q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub object_id: usize,
    pub query: Pose,
    pub target_distances: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_queries: usize,
    pub ball_radius: f64,
    pub density: usize,
    pub seed: u64,
    /// Fraction of queries drawn as perturbed manifold grasps instead of
    /// uniformly in the ball.
    pub near_fraction: f64,
    /// Per-axis standard deviation of the position perturbation, meters.
    pub near_position_sigma: f64,
    /// Per-axis standard deviation of the rotation-vector perturbation, radians.
    pub near_rotation_sigma: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_queries: 50_000,
            ball_radius: 0.5,
            density: 10_000,
            seed: 1,
            near_fraction: 0.5,
            near_position_sigma: 0.03,
            near_rotation_sigma: 0.25,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 {
            return Err(invalid("num_queries must be at least 1"));
        }
        if !(self.ball_radius >= 0.0) || self.density == 0 {
            return Err(invalid("ball radius must be nonnegative and density at least 1"));
        }
        if !(0.0..=1.0).contains(&self.near_fraction) {
            return Err(invalid("near_fraction must lie in [0, 1]"));
        }
        if !(self.near_position_sigma >= 0.0 && self.near_rotation_sigma >= 0.0) {
            return Err(invalid("near-manifold perturbation scales must be nonnegative"));
        }
        Ok(())
    }
}

/// A manifold grasp moved by a Gaussian translation and a Gaussian
/// rotation vector applied in the world frame about the grasp origin.
pub fn perturbed_grasp<R: Rng + ?Sized>(
    manifold: &GraspManifold,
    position_sigma: f64,
    rotation_sigma: f64,
    rng: &mut R,
) -> Pose {
    let g = manifold.random_grasp(rng);
    let mut gauss = |sigma: f64| Vec3::from_fn(|_, _| sigma * rng.sample::<f64, _>(rand_distr::StandardNormal));
    let dp = gauss(position_sigma);
    let dr = gauss(rotation_sigma);
    Pose::new(g.position() + dp, UnitQuaternion::from_scaled_axis(dr) * g.orientation())
}

/// Samples queries in a ball around the manifold centroid, mixed with
/// perturbed manifold grasps at `near_fraction`, and labels each with the
/// distance vector of its nearest grasp. Queries are drawn sequentially from
/// one seeded stream; labeling runs in parallel and keeps record order.
pub fn generate_dataset(
    manifold: &GraspManifold,
    object_id: usize,
    cps: &ControlPointSet,
    config: &DatasetConfig,
) -> Result<Vec<DatasetRecord>> {
    config.validate()?;
    let oracle = GraspOracle::new(manifold, cps, config.density)?;
    let center = manifold.centroid();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let queries: Vec<Pose> = (0..config.num_queries)
        .map(|_| {
            if config.near_fraction > 0.0 && rng.random::<f64>() < config.near_fraction {
                perturbed_grasp(manifold, config.near_position_sigma, config.near_rotation_sigma, &mut rng)
            } else {
                random_pose_in_ball(&center, config.ball_radius, &mut rng)
            }
        })
        .collect();
    Ok(label_queries(&oracle, object_id, queries))
}

pub fn label_queries(oracle: &GraspOracle, object_id: usize, queries: Vec<Pose>) -> Vec<DatasetRecord> {
    queries
        .into_par_iter()
        .map(|query| DatasetRecord {
            object_id,
            target_distances: oracle.nearest(&query).1,
            query,
        })
        .collect()
}

const DATASET_HEADER: &str = "# ngdf-dataset v1 ncp=";

pub fn write_dataset<W: Write>(mut out: W, records: &[DatasetRecord], ncp: usize) -> Result<()> {
    writeln!(out, "{DATASET_HEADER}{ncp}")?;
    let mut line = String::new();
    for r in records {
        if r.target_distances.len() != ncp {
            return Err(Error::LengthMismatch {
                expected: ncp,
                actual: r.target_distances.len(),
            });
        }
        line.clear();
        write!(line, "{}", r.object_id).unwrap();
        for v in r.query.to_array().iter().chain(&r.target_distances) {
            write!(line, " {v:.16e}").unwrap();
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[DatasetRecord], ncp: usize) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset(std::io::BufWriter::new(file), records, ncp)
}

/// Reads a dataset file; returns the records and the control-point count.
pub fn read_dataset<R: Read>(input: R) -> Result<(Vec<DatasetRecord>, usize)> {
    let mut lines = BufReader::new(input).lines();
    let header = lines.next().ok_or(Error::Empty("dataset"))??;
    let ncp: usize = header
        .strip_prefix(DATASET_HEADER)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("bad dataset header {header:?}")))?;
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: idx + 2,
            message,
        };
        let mut fields = line.split_whitespace();
        let object_id = fields
            .next()
            .unwrap_or("")
            .parse::<usize>()
            .map_err(|e| parse_err(e.to_string()))?;
        let vals = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(e.to_string()))?;
        if vals.len() != 7 + ncp {
            return Err(parse_err(format!("expected {} values, got {}", 7 + ncp, vals.len())));
        }
        let query = Pose::from_parts([vals[0], vals[1], vals[2]], [vals[3], vals[4], vals[5], vals[6]])
            .map_err(|e| parse_err(e.to_string()))?;
        records.push(DatasetRecord {
            object_id,
            query,
            target_distances: vals[7..].to_vec(),
        });
    }
    Ok((records, ncp))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Vec<DatasetRecord>, usize)> {
    read_dataset(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    fn ring() -> GraspManifold {
        GraspManifold::ring(Pose::identity(), 0.05, 0.06, (0.0, 0.0)).unwrap()
    }

    #[test]
    fn four_samples_at_quarter_turns() {
        let samples = ring().sample(4).unwrap();
        assert_eq!(samples.len(), 4);
        for (g, phi) in samples.iter().zip([0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]) {
            let expected = Vec3::new(phi.cos(), phi.sin(), 0.0) * 0.11;
            assert!((g.position() - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn approach_points_at_axis() {
        let m = GraspManifold::ring(Pose::identity(), 0.05, 0.06, (-FRAC_PI_6, FRAC_PI_6)).unwrap();
        for g in m.sample(500).unwrap() {
            let approach = g.transform_vector(&Vec3::z());
            let p = g.position();
            let radial = Vec3::new(p.x, p.y, 0.0).normalize();
            assert!((approach.dot(&radial) + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_count_rejected() {
        assert!(ring().sample(0).is_err());
        assert!(GraspOracle::new(&ring(), &ControlPointSet::default(), 0).is_err());
    }

    #[test]
    fn discrete_set_returned_verbatim() {
        let gs = vec![
            Pose::identity(),
            Pose::from_translation(Vec3::new(0.1, 0.0, 0.0)),
            Pose::from_translation(Vec3::new(0.0, 0.2, 0.0)),
        ];
        let m = GraspManifold::discrete(gs.clone()).unwrap();
        assert_eq!(m.sample(1000).unwrap(), gs);
        assert!(GraspManifold::discrete(vec![]).is_err());
    }

    #[test]
    fn singleton_nearest_is_that_grasp() {
        let g = Pose::from_parts([0.1, -0.2, 0.3], [0.9, 0.1, -0.3, 0.2]).unwrap();
        let q = Pose::from_parts([0.0, 0.1, 0.0], [0.2, 0.5, 0.1, -0.4]).unwrap();
        let cps = ControlPointSet::default();
        let m = GraspManifold::discrete(vec![g]).unwrap();
        let (found, d) = nearest_grasp(&q, &m, &cps, 1).unwrap();
        assert_eq!(found, g);
        assert_eq!(d, control_point_distance(&q, &g, &cps));
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let g = Pose::from_translation(Vec3::new(0.1, 0.0, 0.0));
        let oracle = GraspOracle::from_grasps(vec![g, g, g], &ControlPointSet::default());
        assert_eq!(oracle.nearest_index(&Pose::identity()), 0);
    }

    #[test]
    fn grid_shape_balances_parameters() {
        let m = RingManifold {
            axis_pose: Pose::identity(),
            ring_radius: 0.05,
            standoff: 0.06,
            roll_range: (-FRAC_PI_2, FRAC_PI_2),
        };
        let (a, b) = m.grid_shape(10_000);
        assert_eq!((a, b), (140, 71));
        assert!(a * b <= 10_000);
    }

    #[test]
    fn dataset_text_roundtrip() {
        let cps = ControlPointSet::default();
        let cfg = DatasetConfig {
            num_queries: 20,
            density: 200,
            ..Default::default()
        };
        let records = generate_dataset(&ring(), 3, &cps, &cfg).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &records, cps.len()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# ngdf-dataset v1 ncp=6\n"));
        let (back, ncp) = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(ncp, 6);
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.object_id, b.object_id);
            assert_eq!(a.target_distances, b.target_distances);
            for (x, y) in a.query.to_array().iter().zip(b.query.to_array()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn malformed_dataset_rejected() {
        assert!(read_dataset("nonsense\n".as_bytes()).is_err());
        let bad = "# ngdf-dataset v1 ncp=2\n0 1 2 3\n";
        assert!(matches!(
            read_dataset(bad.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
