//! The grasp-distance network: an MLP from (latent code, raw pose) to one
//! positive distance per control point, with reverse-mode gradients.
//!
//! Parameters live in one flat buffer. Layer `l` stores its weights row-major
//! as `out × in`, followed by its `out` biases. Latent codes are a separate
//! `objects × latent_dim` row-major table.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::DistanceField;
use crate::se3::Pose;

pub const QUERY_DIM: usize = 7;
const MAGIC: &[u8; 8] = b"NGDF0001";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub hidden: usize,
    pub width: usize,
    pub latent_dim: usize,
    /// Number of control points, one output each.
    pub outputs: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: 5,
            width: 256,
            latent_dim: 64,
            outputs: 6,
        }
    }
}

impl Architecture {
    pub fn large(outputs: usize) -> Self {
        Self {
            hidden: 8,
            width: 512,
            latent_dim: 64,
            outputs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.width == 0 || self.outputs == 0 {
            return Err(invalid("hidden, width and outputs must be at least 1"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.latent_dim + QUERY_DIM
    }

    /// (input, output) size of every affine layer, input layer first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.input_dim(), self.width)];
        dims.extend((1..self.hidden).map(|_| (self.width, self.width)));
        dims.push((self.width, self.outputs));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Scalar whose gradient `backward` computes.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Sum of absolute differences to the target vector.
    L1(&'a [f64]),
    /// Mean of the outputs, the planning-time field value.
    MeanOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub value: f64,
    pub params: Vec<f64>,
    pub code: Vec<f64>,
    pub query: [f64; QUERY_DIM],
}

/// Per-layer inputs recorded by a batched forward pass.
struct Tape {
    inputs: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    arch: Architecture,
    params: Vec<f64>,
    codes: Vec<f64>,
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Zero at zero, unlike `f64::signum`.
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn loss_l1(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            actual: pred.len(),
        });
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum())
}

impl FieldModel {
    /// He-normal weights, zero biases, and small Gaussian latent codes.
    pub fn new(arch: Architecture, num_objects: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        if num_objects == 0 {
            return Err(invalid("model needs at least one object"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.num_params());
        for (input, output) in arch.layer_dims() {
            let normal = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("positive std");
            params.extend((0..input * output).map(|_| normal.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, output));
        }
        let normal = Normal::new(0.0, 0.01).expect("positive std");
        let codes = (0..num_objects * arch.latent_dim).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self { arch, params, codes })
    }

    pub fn from_parts(arch: Architecture, params: Vec<f64>, codes: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.num_params() {
            return Err(Error::LengthMismatch {
                expected: arch.num_params(),
                actual: params.len(),
            });
        }
        if arch.latent_dim > 0 && (codes.is_empty() || codes.len() % arch.latent_dim != 0) {
            return Err(invalid("latent code table does not match latent_dim"));
        }
        Ok(Self { arch, params, codes })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn codes(&self) -> &[f64] {
        &self.codes
    }

    pub fn codes_mut(&mut self) -> &mut [f64] {
        &mut self.codes
    }

    pub fn num_objects(&self) -> usize {
        if self.arch.latent_dim == 0 {
            1
        } else {
            self.codes.len() / self.arch.latent_dim
        }
    }

    pub fn code(&self, object_id: usize) -> Result<&[f64]> {
        if object_id >= self.num_objects() {
            return Err(Error::UnknownObject(object_id));
        }
        let d = self.arch.latent_dim;
        Ok(&self.codes[object_id * d..(object_id + 1) * d])
    }

    /// Network input row: latent code followed by the raw query.
    pub fn input_row(&self, object_id: usize, query: &[f64; QUERY_DIM]) -> Result<Vec<f64>> {
        let mut row = self.code(object_id)?.to_vec();
        row.extend_from_slice(query);
        Ok(row)
    }

    fn layer(&self, offset: usize, input: usize, output: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let w = ArrayView2::from_shape((output, input), &self.params[offset..offset + input * output])
            .expect("layer shape");
        let b = &self.params[offset + input * output..offset + (input + 1) * output];
        (w, b)
    }

    fn run(&self, x: Array2<f64>) -> Tape {
        let dims = self.arch.layer_dims();
        let last = dims.len() - 1;
        let mut inputs = Vec::with_capacity(dims.len());
        let mut a = x;
        let mut offset = 0;
        for (l, &(input, output)) in dims.iter().enumerate() {
            let (w, b) = self.layer(offset, input, output);
            offset += (input + 1) * output;
            let mut z = a.dot(&w.t());
            for mut row in z.rows_mut() {
                for (v, bias) in row.iter_mut().zip(b) {
                    *v += bias;
                }
            }
            inputs.push(a);
            if l == last {
                return Tape { inputs, logits: z };
            }
            z.mapv_inplace(|v| v.max(0.0));
            a = z;
        }
        unreachable!("architecture has an output layer")
    }

    /// Outputs for a batch of full input rows (`B × (latent_dim + 7)`).
    pub fn forward_batch(&self, inputs: Array2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.arch.input_dim() {
            return Err(Error::LengthMismatch {
                expected: self.arch.input_dim(),
                actual: inputs.ncols(),
            });
        }
        Ok(self.run(inputs).logits.mapv(softplus))
    }

    pub fn forward_raw(&self, object_id: usize, query: &[f64; QUERY_DIM]) -> Result<Vec<f64>> {
        let row = self.input_row(object_id, query)?;
        let x = Array2::from_shape_vec((1, row.len()), row).expect("row shape");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward(&self, object_id: usize, q: &Pose) -> Result<Vec<f64>> {
        self.forward_raw(object_id, &q.to_array())
    }

    /// Reverse pass for a batch. `d_outputs` is the gradient of the batch
    /// objective with respect to the softplus outputs. Parameter gradients,
    /// when requested, are added into `param_grad`; returns the gradient with
    /// respect to the input rows.
    fn reverse(&self, tape: &Tape, d_outputs: &Array2<f64>, mut param_grad: Option<&mut [f64]>) -> Array2<f64> {
        let dims = self.arch.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut offset = 0;
        for &(input, output) in &dims {
            offsets.push(offset);
            offset += (input + 1) * output;
        }
        let mut dz = d_outputs * &tape.logits.mapv(sigmoid);
        for l in (0..dims.len()).rev() {
            let (input, output) = dims[l];
            let a = &tape.inputs[l];
            let base = offsets[l];
            if let Some(grad) = param_grad.as_deref_mut() {
                let gw = dz.t().dot(a);
                let gb = dz.sum_axis(Axis(0));
                for (g, v) in grad[base..base + input * output].iter_mut().zip(gw.iter()) {
                    *g += v;
                }
                for (g, v) in grad[base + input * output..base + (input + 1) * output]
                    .iter_mut()
                    .zip(gb.iter())
                {
                    *g += v;
                }
            }
            let (w, _) = self.layer(base, input, output);
            let mut da = dz.dot(&w);
            if l == 0 {
                return da;
            }
            da.zip_mut_with(a, |d, &act| {
                if act <= 0.0 {
                    *d = 0.0;
                }
            });
            dz = da;
        }
        unreachable!("architecture has an input layer")
    }

    /// Batched L1 objective: summed loss over rows, and its gradient with
    /// respect to parameters (added into `param_grad`) and input rows.
    pub fn l1_batch(
        &self,
        inputs: Array2<f64>,
        targets: ArrayView2<'_, f64>,
        param_grad: &mut [f64],
    ) -> Result<(f64, Array2<f64>)> {
        if targets.ncols() != self.arch.outputs || targets.nrows() != inputs.nrows() {
            return Err(Error::LengthMismatch {
                expected: self.arch.outputs * inputs.nrows(),
                actual: targets.len(),
            });
        }
        if inputs.ncols() != self.arch.input_dim() {
            return Err(Error::LengthMismatch {
                expected: self.arch.input_dim(),
                actual: inputs.ncols(),
            });
        }
        let tape = self.run(inputs);
        let pred = tape.logits.mapv(softplus);
        let diff = &pred - &targets;
        let loss = diff.iter().map(|d| d.abs()).sum();
        let d_out = diff.mapv(sign);
        let d_in = self.reverse(&tape, &d_out, Some(param_grad));
        Ok((loss, d_in))
    }

    /// Exact gradients of `objective ∘ forward` for a single query.
    pub fn backward(&self, object_id: usize, query: &[f64; QUERY_DIM], objective: Objective<'_>) -> Result<Gradients> {
        self.backward_impl(object_id, query, objective, true)
    }

    /// Objective value and query gradient only; parameter and code gradients
    /// are left empty.
    pub fn query_gradient(
        &self,
        object_id: usize,
        query: &[f64; QUERY_DIM],
        objective: Objective<'_>,
    ) -> Result<(f64, [f64; QUERY_DIM])> {
        let g = self.backward_impl(object_id, query, objective, false)?;
        Ok((g.value, g.query))
    }

    fn backward_impl(
        &self,
        object_id: usize,
        query: &[f64; QUERY_DIM],
        objective: Objective<'_>,
        with_params: bool,
    ) -> Result<Gradients> {
        let row = self.input_row(object_id, query)?;
        let x = Array2::from_shape_vec((1, row.len()), row).expect("row shape");
        let tape = self.run(x);
        let pred = tape.logits.mapv(softplus);
        let n = self.arch.outputs;
        let (value, d_out) = match objective {
            Objective::L1(target) => {
                let value = loss_l1(pred.as_slice().expect("contiguous"), target)?;
                let d = Array2::from_shape_fn((1, n), |(_, k)| sign(pred[[0, k]] - target[k]));
                (value, d)
            }
            Objective::MeanOutput => (pred.sum() / n as f64, Array2::from_elem((1, n), 1.0 / n as f64)),
        };
        let mut params = if with_params { vec![0.0; self.params.len()] } else { Vec::new() };
        let d_in = self.reverse(&tape, &d_out, with_params.then_some(params.as_mut_slice()));
        let d = self.arch.latent_dim;
        let code = if with_params { d_in.slice(s![0, ..d]).to_vec() } else { Vec::new() };
        let mut q = [0.0; QUERY_DIM];
        for (k, v) in q.iter_mut().enumerate() {
            *v = d_in[[0, d + k]];
        }
        Ok(Gradients {
            value,
            params,
            code,
            query: q,
        })
    }

    /// Little-endian checkpoint: magic, (H, W, D, N+1) as u32, parameters in
    /// layer order, then latent codes, all as f64.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        for v in [self.arch.hidden, self.arch.width, self.arch.latent_dim, self.arch.outputs] {
            let v = u32::try_from(v).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
            out.write_all(&v.to_le_bytes())?;
        }
        for v in self.params.iter().chain(&self.codes) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not an NGDF0001 checkpoint".into()));
        }
        let dim = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().expect("4 bytes")) as usize;
        let arch = Architecture {
            hidden: dim(0),
            width: dim(1),
            latent_dim: dim(2),
            outputs: dim(3),
        };
        arch.validate()?;
        let body = &bytes[24..];
        if body.len() % 8 != 0 {
            return Err(Error::Format("checkpoint body is not a whole number of f64".into()));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let n = arch.num_params();
        if values.len() < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let codes = values[n..].to_vec();
        Self::from_parts(arch, values[..n].to_vec(), codes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl DistanceField for FieldModel {
    fn num_outputs(&self) -> usize {
        self.arch.outputs
    }

    fn distances(&self, object_id: usize, query: &[f64; 7]) -> Result<Vec<f64>> {
        self.forward_raw(object_id, query)
    }

    fn mean_with_gradient(&self, object_id: usize, query: &[f64; 7]) -> Result<(f64, [f64; 7])> {
        self.query_gradient(object_id, query, Objective::MeanOutput)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FieldModel {
        let arch = Architecture {
            hidden: 2,
            width: 8,
            latent_dim: 3,
            outputs: 4,
        };
        FieldModel::new(arch, 2, 5).unwrap()
    }

    #[test]
    fn zero_network_outputs_softplus_of_bias() {
        let mut m = small();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let q = Pose::identity().to_array();
        for v in m.forward_raw(0, &q).unwrap() {
            assert!((v - 2f64.ln()).abs() < 1e-15);
        }
        let n = m.params().len();
        let bias = 1.3;
        m.params_mut()[n - 4..].iter_mut().for_each(|p| *p = bias);
        for v in m.forward_raw(1, &q).unwrap() {
            assert!((v - (1.0 + bias.exp()).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_network_bias_gradient_is_sigmoid_times_sign() {
        let mut m = small();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let q = Pose::identity().to_array();
        let target = [0.0, 1.0, 0.0, 1.0];
        let g = m.backward(0, &q, Objective::L1(&target)).unwrap();
        let n = g.params.len();
        let signs = [1.0, -1.0, 1.0, -1.0];
        for k in 0..4 {
            assert!((g.params[n - 4 + k] - 0.5 * signs[k]).abs() < 1e-15);
        }
        assert!(g.params[..n - 4].iter().all(|&v| v == 0.0));
        assert_eq!(g.query, [0.0; 7]);
    }

    #[test]
    fn loss_l1_examples() {
        assert_eq!(loss_l1(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 3.0);
        assert_eq!(loss_l1(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(matches!(loss_l1(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn unknown_object_rejected() {
        let m = small();
        assert!(matches!(m.forward(2, &Pose::identity()), Err(Error::UnknownObject(2))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = small();
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"NGDF0001");
        assert_eq!(bytes.len(), 24 + 8 * (m.params().len() + m.codes().len()));
        let back = FieldModel::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.num_objects(), 2);
        assert!(FieldModel::read_from(&bytes[..30]).is_err());
        assert!(FieldModel::read_from(&b"NGDF0002xxxxxxxxxxxxxxxx"[..]).is_err());
    }

    #[test]
    fn batch_matches_single_rows() {
        let m = small();
        let qa = Pose::from_parts([0.1, 0.2, 0.3], [0.9, 0.1, 0.0, 0.2]).unwrap().to_array();
        let qb = Pose::from_parts([-0.1, 0.0, 0.4], [0.2, 0.5, 0.3, 0.1]).unwrap().to_array();
        let mut rows = m.input_row(0, &qa).unwrap();
        rows.extend(m.input_row(1, &qb).unwrap());
        let x = Array2::from_shape_vec((2, 10), rows).unwrap();
        let out = m.forward_batch(x).unwrap();
        for (r, single) in [(0, m.forward_raw(0, &qa).unwrap()), (1, m.forward_raw(1, &qb).unwrap())] {
            for (a, b) in out.row(r).iter().zip(&single) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
