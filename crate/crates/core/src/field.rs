//! The distance-field interface consumed by pose and trajectory optimization.
//!
//! A field maps `(object_id, query)` to one distance per control point. The
//! query is the raw 7-vector `(px, py, pz, qw, qx, qy, qz)` so gradients are
//! taken with respect to exactly what the field sees.

use crate::error::{Error, Result};
use crate::grasp::GraspOracle;
use crate::se3::{quadratic_rotation, rotation_partials, Pose, Vec3};

pub trait DistanceField: Sync {
    fn num_outputs(&self) -> usize;

    fn distances(&self, object_id: usize, query: &[f64; 7]) -> Result<Vec<f64>>;

    /// Mean of the outputs and its gradient with respect to the query.
    fn mean_with_gradient(&self, object_id: usize, query: &[f64; 7]) -> Result<(f64, [f64; 7])>;

    fn mean_distance(&self, object_id: usize, query: &[f64; 7]) -> Result<f64> {
        let d = self.distances(object_id, query)?;
        Ok(d.iter().sum::<f64>() / d.len() as f64)
    }
}

/// Exact nearest-grasp distances wired in as a field. The gradient is taken
/// at the current nearest sample, which is the subgradient of the min.
#[derive(Debug, Clone)]
pub struct OracleField {
    oracles: Vec<GraspOracle>,
}

impl OracleField {
    /// `oracles[k]` serves object id `k`.
    pub fn new(oracles: Vec<GraspOracle>) -> Self {
        Self { oracles }
    }

    fn oracle(&self, object_id: usize) -> Result<&GraspOracle> {
        self.oracles
            .get(object_id)
            .ok_or(Error::UnknownObject(object_id))
    }
}

impl DistanceField for OracleField {
    fn num_outputs(&self) -> usize {
        self.oracles.first().map_or(0, |o| o.control_points().len())
    }

    fn distances(&self, object_id: usize, query: &[f64; 7]) -> Result<Vec<f64>> {
        Ok(self.oracle(object_id)?.nearest(&Pose::from_array(query)?).1)
    }

    fn mean_with_gradient(&self, object_id: usize, query: &[f64; 7]) -> Result<(f64, [f64; 7])> {
        let oracle = self.oracle(object_id)?;
        let q = Pose::from_array(query)?;
        let g = oracle.grasps()[oracle.nearest_index(&q)];
        let wxyz = q.wxyz();
        let rot = quadratic_rotation(wxyz);
        let partials = rotation_partials(wxyz);
        let points = oracle.control_points().points();
        let scale = 1.0 / points.len() as f64;
        let mut value = 0.0;
        let mut grad = [0.0; 7];
        for p in points {
            let diff: Vec3 = rot * p + q.position() - g.transform_point(p);
            let sign = diff.map(crate::model::sign);
            value += diff.abs().sum() * scale;
            for k in 0..3 {
                grad[k] += sign[k] * scale;
            }
            for (j, dr) in partials.iter().enumerate() {
                grad[3 + j] += sign.dot(&(dr * p)) * scale;
            }
        }
        Ok((value, grad))
    }
}

/// Field that returns the same vector everywhere.
#[derive(Debug, Clone)]
pub struct ConstantField {
    pub value: Vec<f64>,
}

impl DistanceField for ConstantField {
    fn num_outputs(&self) -> usize {
        self.value.len()
    }

    fn distances(&self, _object_id: usize, _query: &[f64; 7]) -> Result<Vec<f64>> {
        Ok(self.value.clone())
    }

    fn mean_with_gradient(&self, _object_id: usize, _query: &[f64; 7]) -> Result<(f64, [f64; 7])> {
        let m = self.value.iter().sum::<f64>() / self.value.len().max(1) as f64;
        Ok((m, [0.0; 7]))
    }
}
