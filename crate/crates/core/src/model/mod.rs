//! Shared-trunk / split-branch multi-output regressor.
//!
//! The first `split_index` hidden layers are shared by every task. The
//! remaining hidden layers, followed by `branch_layers` and a one-unit linear
//! head, are replicated per task. `split_index == trunk_layers.len()` with no
//! branch layers is a shared trunk with one linear output node per task;
//! `split_index == 0` makes every layer task-specific.
//!
//! Parameters live in one flat vector laid out trunk first, then each task's
//! branch in task order; within a layer the weight matrix (out × in,
//! row-major) precedes the bias.

mod checkpoint;
mod gradcheck;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckReport};

use crate::dataset::TaskId;
use crate::error::{Error, Result};
use crate::linalg::{affine, Matrix};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub trunk_layers: Vec<usize>,
    pub split_index: usize,
    pub branch_layers: Vec<usize>,
    pub tasks: Vec<TaskId>,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArchitecture("input dimension is zero".into()));
        }
        if self.split_index > self.trunk_layers.len() {
            return Err(Error::InvalidArchitecture(format!(
                "split index {} exceeds trunk depth {}",
                self.split_index,
                self.trunk_layers.len()
            )));
        }
        if let Some(i) = self.trunk_layers.iter().position(|&w| w == 0) {
            return Err(Error::InvalidArchitecture(format!("trunk layer {i} has width 0")));
        }
        if let Some(i) = self.branch_layers.iter().position(|&w| w == 0) {
            return Err(Error::InvalidArchitecture(format!("branch layer {i} has width 0")));
        }
        if self.tasks.is_empty() {
            return Err(Error::InvalidArchitecture("no tasks".into()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if self.tasks[..i].contains(t) {
                return Err(Error::InvalidArchitecture(format!("task {t} listed twice")));
            }
        }
        Ok(())
    }

    /// Hidden widths of one task branch (excluding the head).
    pub fn branch_hidden(&self) -> Vec<usize> {
        let mut w = self.trunk_layers[self.split_index..].to_vec();
        w.extend_from_slice(&self.branch_layers);
        w
    }

    pub fn parameter_count(&self) -> usize {
        Layout::new(self).total
    }

    /// Depth of the trunk, i.e. the largest valid split index.
    pub fn depth(&self) -> usize {
        self.trunk_layers.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub relu: bool,
    pub offset: usize,
}

impl LayerShape {
    pub fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.in_dim * self.out_dim
    }

    pub fn bias(&self) -> Range<usize> {
        let start = self.offset + self.in_dim * self.out_dim;
        start..start + self.out_dim
    }

    pub fn len(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub trunk: Vec<LayerShape>,
    pub branches: Vec<Vec<LayerShape>>,
    pub total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut offset = 0;
        let mut push = |in_dim: usize, out_dim: usize, relu: bool| {
            let l = LayerShape {
                in_dim,
                out_dim,
                relu,
                offset,
            };
            offset += l.len();
            l
        };
        let mut trunk = Vec::new();
        let mut width = arch.input_dim;
        for &w in &arch.trunk_layers[..arch.split_index] {
            trunk.push(push(width, w, true));
            width = w;
        }
        let split_width = width;
        let hidden = arch.branch_hidden();
        let mut branches = Vec::with_capacity(arch.tasks.len());
        for _ in &arch.tasks {
            let mut layers = Vec::new();
            let mut w_in = split_width;
            for &w in &hidden {
                layers.push(push(w_in, w, true));
                w_in = w;
            }
            layers.push(push(w_in, 1, false));
            branches.push(layers);
        }
        Self {
            trunk,
            branches,
            total: offset,
        }
    }
}

/// Model parameters as one flat vector plus the architecture that shapes it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    layout: Layout,
    values: Vec<f64>,
}

/// Fan-in scaled uniform initialisation, zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let layout = Layout::new(arch);
    let mut values = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layout.trunk.iter().chain(layout.branches.iter().flatten());
    for l in layers {
        let s = (6.0 / l.in_dim as f64).sqrt();
        for v in &mut values[l.weights()] {
            *v = rng.random_range(-s..s);
        }
    }
    Ok(ModelParams {
        arch: arch.clone(),
        layout,
        values,
    })
}

/// Per-layer inputs and pre-activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    param_count: usize,
    batch: usize,
    trunk_inputs: Vec<Matrix>,
    trunk_pre: Vec<Matrix>,
    split_activation: Matrix,
    branch_inputs: Vec<Vec<Matrix>>,
    branch_pre: Vec<Vec<Matrix>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

impl ModelParams {
    pub fn from_values(arch: &Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(arch);
        if values.len() != layout.total {
            return Err(Error::DimensionMismatch {
                what: "parameter count",
                expected: layout.total,
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite parameter at index {i}")));
        }
        Ok(Self {
            arch: arch.clone(),
            layout,
            values,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.arch.tasks
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Flat index range of the shared trunk.
    pub fn trunk_range(&self) -> Range<usize> {
        let end = self.layout.trunk.last().map_or(0, |l| l.offset + l.len());
        0..end
    }

    /// Flat index range of task `task`'s branch (hidden layers and head).
    pub fn branch_range(&self, task: usize) -> Range<usize> {
        let layers = &self.layout.branches[task];
        let first = layers.first().expect("branch has a head");
        let last = layers.last().expect("branch has a head");
        first.offset..last.offset + last.len()
    }

    /// Parameters of the trunk plus the listed tasks' branches.
    pub fn select_tasks(&self, tasks: &[TaskId]) -> Result<Self> {
        let mut arch = self.arch.clone();
        arch.tasks = tasks.to_vec();
        let mut values = self.values[self.trunk_range()].to_vec();
        for t in tasks {
            let idx = self
                .arch
                .tasks
                .iter()
                .position(|u| u == t)
                .ok_or_else(|| Error::TaskMismatch(format!("model has no task {t}")))?;
            values.extend_from_slice(&self.values[self.branch_range(idx)]);
        }
        Self::from_values(&arch, values)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                what: "input features",
                expected: self.arch.input_dim,
                found: x.cols(),
            });
        }
        Ok(())
    }

    /// Batch forward pass; outputs are `batch × T`.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let n = x.rows();
        let mut trunk_inputs = Vec::with_capacity(self.layout.trunk.len());
        let mut trunk_pre = Vec::with_capacity(self.layout.trunk.len());
        let mut act = x.clone();
        for l in &self.layout.trunk {
            let pre = affine(&act, &self.values[l.weights()], &self.values[l.bias()], l.out_dim);
            let mut next = pre.clone();
            relu_in_place(&mut next);
            trunk_inputs.push(std::mem::replace(&mut act, next));
            trunk_pre.push(pre);
        }
        let t_count = self.arch.tasks.len();
        let mut out = Matrix::zeros(n, t_count);
        let mut branch_inputs = Vec::with_capacity(t_count);
        let mut branch_pre = Vec::with_capacity(t_count);
        for (t, layers) in self.layout.branches.iter().enumerate() {
            let mut inputs = Vec::with_capacity(layers.len());
            let mut pres = Vec::with_capacity(layers.len());
            let mut h = act.clone();
            for l in layers {
                let pre = affine(&h, &self.values[l.weights()], &self.values[l.bias()], l.out_dim);
                let mut next = pre.clone();
                if l.relu {
                    relu_in_place(&mut next);
                }
                inputs.push(std::mem::replace(&mut h, next));
                pres.push(pre);
            }
            for r in 0..n {
                out.set(r, t, h.get(r, 0));
            }
            branch_inputs.push(inputs);
            branch_pre.push(pres);
        }
        let cache = ForwardCache {
            param_count: self.values.len(),
            batch: n,
            trunk_inputs,
            trunk_pre,
            split_activation: act,
            branch_inputs,
            branch_pre,
        };
        Ok((out, cache))
    }

    /// Outputs only, evaluated row-block-parallel. Each row's result is
    /// identical to a batch forward pass over the same row.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        const BLOCK: usize = 256;
        let n = x.rows();
        let blocks: Vec<usize> = (0..n).step_by(BLOCK).collect();
        let parts = blocks
            .par_iter()
            .map(|&start| {
                let rows: Vec<usize> = (start..(start + BLOCK).min(n)).collect();
                self.forward(&x.select_rows(&rows)).map(|(out, _)| out)
            })
            .collect::<Result<Vec<Matrix>>>()?;
        let refs: Vec<&Matrix> = parts.iter().collect();
        if refs.is_empty() {
            return Ok(Matrix::zeros(0, self.arch.tasks.len()));
        }
        Ok(Matrix::vstack(&refs))
    }

    /// Gradient of `Σ outputs ⊙ output_grads` with respect to every
    /// parameter, laid out like [`ModelParams::values`].
    pub fn backward(&self, cache: &ForwardCache, output_grads: &Matrix) -> Result<Vec<f64>> {
        if cache.param_count != self.values.len()
            || cache.branch_pre.len() != self.arch.tasks.len()
            || cache.trunk_pre.len() != self.layout.trunk.len()
        {
            return Err(Error::InvalidArchitecture(
                "forward cache does not match these parameters".into(),
            ));
        }
        if output_grads.rows() != cache.batch || output_grads.cols() != self.arch.tasks.len() {
            return Err(Error::DimensionMismatch {
                what: "output gradient shape",
                expected: cache.batch * self.arch.tasks.len(),
                found: output_grads.rows() * output_grads.cols(),
            });
        }
        let n = cache.batch;
        let mut grads = vec![0.0; self.values.len()];
        let has_trunk = !self.layout.trunk.is_empty();
        let split_width = cache.split_activation.cols();
        let mut d_split = Matrix::zeros(n, split_width);

        for (t, layers) in self.layout.branches.iter().enumerate() {
            let mut d_out = Matrix::from_vec(n, 1, output_grads.column(t));
            for (li, l) in layers.iter().enumerate().rev() {
                let need_input_grad = li > 0 || has_trunk;
                let d_in = self.layer_backward(
                    l,
                    &cache.branch_inputs[t][li],
                    &cache.branch_pre[t][li],
                    &d_out,
                    &mut grads,
                    need_input_grad,
                );
                if li == 0 {
                    if has_trunk {
                        for (acc, v) in d_split.as_mut_slice().iter_mut().zip(d_in.as_slice()) {
                            *acc += v;
                        }
                    }
                } else {
                    d_out = d_in;
                }
            }
        }

        let mut d_out = d_split;
        for (li, l) in self.layout.trunk.iter().enumerate().rev() {
            d_out = self.layer_backward(
                l,
                &cache.trunk_inputs[li],
                &cache.trunk_pre[li],
                &d_out,
                &mut grads,
                li > 0,
            );
        }
        Ok(grads)
    }

    fn layer_backward(
        &self,
        l: &LayerShape,
        input: &Matrix,
        pre: &Matrix,
        d_out: &Matrix,
        grads: &mut [f64],
        need_input_grad: bool,
    ) -> Matrix {
        let n = input.rows();
        let mut d_pre = d_out.clone();
        if l.relu {
            for (g, &z) in d_pre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let (w_range, b_range) = (l.weights(), l.bias());
        {
            let (gw, rest) = grads[w_range.start..b_range.end].split_at_mut(l.in_dim * l.out_dim);
            let gb = &mut rest[..l.out_dim];
            for r in 0..n {
                let x = input.row(r);
                for (o, &dz) in d_pre.row(r).iter().enumerate() {
                    if dz == 0.0 {
                        continue;
                    }
                    gb[o] += dz;
                    let row = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                    for (g, &xk) in row.iter_mut().zip(x) {
                        *g += dz * xk;
                    }
                }
            }
        }
        if !need_input_grad {
            return Matrix::zeros(0, 0);
        }
        let w = &self.values[w_range];
        let mut d_in = Matrix::zeros(n, l.in_dim);
        for r in 0..n {
            let dz_row = d_pre.row(r);
            let out_row = d_in.row_mut(r);
            for (o, &dz) in dz_row.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                let wr = &w[o * l.in_dim..(o + 1) * l.in_dim];
                for (acc, &wk) in out_row.iter_mut().zip(wr) {
                    *acc += dz * wk;
                }
            }
        }
        d_in
    }
}
