//! Recurrent acoustic model: stacked minimal gated units (one forget gate per
//! cell), optionally bidirectional, followed by a linear projection and a
//! log-softmax over the alphabet.
//!
//! Per direction and frame, with `h'` the previous state in processing order:
//!
//! ```text
//! f = sigmoid(W_f x + U_f h' + b_f)
//! c = tanh(W_c x + U_c (f * h') + b_c)
//! h = (1 - f) * h' + f * c
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::{CtcError, LogProbMatrix, LossGrad};
use crate::numeric::sigmoid;

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("feature dimension mismatch: model expects {expected}, got {actual}")]
    InputDim { expected: usize, actual: usize },
    #[error("feature matrix has {len} values, not {frames} x {dim}")]
    FeatureShape { frames: usize, dim: usize, len: usize },
    #[error(transparent)]
    Ctc(#[from] CtcError),
}

/// Dense `frames x dim` feature matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if frames * dim != data.len() {
            return Err(ModelError::FeatureShape {
                frames,
                dim,
                len: data.len(),
            });
        }
        Ok(Self { frames, dim, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub num_layers: usize,
    pub bidirectional: bool,
    /// Alphabet size including blank.
    pub num_labels: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Small unidirectional model.
    pub fn student(input_dim: usize, num_labels: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_units: 32,
            num_layers: 1,
            bidirectional: false,
            num_labels,
            seed,
        }
    }

    /// Bidirectional model with twice the student's units per direction.
    pub fn teacher(input_dim: usize, num_labels: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_units: 64,
            num_layers: 1,
            bidirectional: true,
            num_labels,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_units", self.hidden_units),
            ("num_layers", self.num_layers),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.num_labels < 2 {
            return Err(ModelError::InvalidConfig("num_labels must be at least 2".into()));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CellLayout {
    input: usize,
    hidden: usize,
    w_gate: usize,
    u_gate: usize,
    b_gate: usize,
    w_cand: usize,
    u_cand: usize,
    b_cand: usize,
    reverse: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    /// Indexed by `layer * directions + direction`.
    cells: Vec<CellLayout>,
    proj_in: usize,
    proj_w: usize,
    proj_b: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_units;
        let dirs = cfg.directions();
        let mut offset = 0;
        let mut take = |n: usize| {
            let o = offset;
            offset += n;
            o
        };
        let mut cells = Vec::new();
        for layer in 0..cfg.num_layers {
            let input = if layer == 0 { cfg.input_dim } else { h * dirs };
            for dir in 0..dirs {
                cells.push(CellLayout {
                    input,
                    hidden: h,
                    w_gate: take(input * h),
                    u_gate: take(h * h),
                    b_gate: take(h),
                    w_cand: take(input * h),
                    u_cand: take(h * h),
                    b_cand: take(h),
                    reverse: dir == 1,
                });
            }
        }
        let proj_in = h * dirs;
        let proj_w = take(proj_in * cfg.num_labels);
        let proj_b = take(cfg.num_labels);
        Self {
            cells,
            proj_in,
            proj_w,
            proj_b,
            total: offset,
        }
    }
}

/// A named contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model configuration plus every weight, stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    data: Vec<f64>,
}

impl ModelParams {
    /// Uniform initialization in `[-INIT_SCALE, INIT_SCALE]` from `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let data = (0..layout.total)
            .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        Ok(Self { config, layout, data })
    }

    pub fn from_flat(config: ModelConfig, data: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if data.len() != layout.total {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                layout.total,
                data.len()
            )));
        }
        Ok(Self { config, layout, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    /// Zeroes the output projection, which makes every posterior uniform.
    pub fn zero_projection(&mut self) {
        let end = self.layout.proj_b + self.config.num_labels;
        self.data[self.layout.proj_w..end].fill(0.0);
    }

    /// Tensor names and shapes in storage order.
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let dirs = ["fwd", "bwd"];
        let mut out = Vec::new();
        for (i, c) in self.layout.cells.iter().enumerate() {
            let prefix = format!("layer{}.{}", i / self.config.directions(), dirs[usize::from(c.reverse)]);
            for (name, shape) in [
                ("w_gate", vec![c.input, c.hidden]),
                ("u_gate", vec![c.hidden, c.hidden]),
                ("b_gate", vec![c.hidden]),
                ("w_cand", vec![c.input, c.hidden]),
                ("u_cand", vec![c.hidden, c.hidden]),
                ("b_cand", vec![c.hidden]),
            ] {
                out.push(TensorSpec {
                    name: format!("{prefix}.{name}"),
                    shape,
                });
            }
        }
        out.push(TensorSpec {
            name: "proj.w".into(),
            shape: vec![self.layout.proj_in, self.config.num_labels],
        });
        out.push(TensorSpec {
            name: "proj.b".into(),
            shape: vec![self.config.num_labels],
        });
        out
    }

    fn check_input(&self, x: &FeatureMatrix) -> Result<(), ModelError> {
        if x.dim() != self.config.input_dim {
            return Err(ModelError::InputDim {
                expected: self.config.input_dim,
                actual: x.dim(),
            });
        }
        Ok(())
    }

    /// Per-frame log-posteriors over the alphabet.
    pub fn forward(&self, x: &FeatureMatrix) -> Result<LogProbMatrix, ModelError> {
        self.check_input(x)?;
        let trace = self.run(x);
        Ok(LogProbMatrix::from_logits(x.frames(), self.config.num_labels, trace.logits)?)
    }

    /// Evaluates a loss on the model output and adds the parameter gradient to
    /// `grad`. `loss_fn` receives the posteriors and returns the loss with its
    /// gradient with respect to the logits.
    pub fn accumulate_gradient<F>(&self, x: &FeatureMatrix, grad: &mut [f64], loss_fn: F) -> Result<f64, ModelError>
    where
        F: FnOnce(&LogProbMatrix) -> Result<LossGrad, ModelError>,
    {
        self.check_input(x)?;
        assert_eq!(grad.len(), self.data.len(), "gradient buffer size");
        let trace = self.run(x);
        let post = LogProbMatrix::from_logits(x.frames(), self.config.num_labels, trace.logits.clone())?;
        let LossGrad { loss, grad: d_logits } = loss_fn(&post)?;
        self.backward(x, &trace, &d_logits, grad);
        Ok(loss)
    }

    fn run(&self, x: &FeatureMatrix) -> Trace {
        let t_len = x.frames();
        let dirs = self.config.directions();
        let h = self.config.hidden_units;
        let mut cells = Vec::with_capacity(self.layout.cells.len());
        let mut layer_inputs = Vec::with_capacity(self.config.num_layers);
        let mut input: Vec<f64> = x.data().to_vec();
        for layer in 0..self.config.num_layers {
            let mut out = vec![0.0; t_len * h * dirs];
            for dir in 0..dirs {
                let cell = self.layout.cells[layer * dirs + dir];
                let tr = self.cell_forward(&cell, &input, t_len);
                for t in 0..t_len {
                    out[(t * dirs + dir) * h..(t * dirs + dir + 1) * h].copy_from_slice(&tr.h[t * h..(t + 1) * h]);
                }
                cells.push(tr);
            }
            layer_inputs.push(std::mem::replace(&mut input, out));
        }
        let z = self.config.num_labels;
        let p_in = self.layout.proj_in;
        let w = &self.data[self.layout.proj_w..self.layout.proj_w + p_in * z];
        let b = &self.data[self.layout.proj_b..self.layout.proj_b + z];
        let mut logits = Vec::with_capacity(t_len * z);
        for t in 0..t_len {
            let row = &input[t * p_in..(t + 1) * p_in];
            let mut out = b.to_vec();
            for (i, &v) in row.iter().enumerate() {
                let wr = &w[i * z..(i + 1) * z];
                for (o, &wv) in out.iter_mut().zip(wr) {
                    *o += v * wv;
                }
            }
            logits.extend_from_slice(&out);
        }
        Trace {
            layer_inputs,
            top: input,
            cells,
            logits,
        }
    }

    fn cell_forward(&self, c: &CellLayout, input: &[f64], t_len: usize) -> CellTrace {
        let (n_in, h) = (c.input, c.hidden);
        let p = &self.data;
        let w_gate = &p[c.w_gate..c.w_gate + n_in * h];
        let u_gate = &p[c.u_gate..c.u_gate + h * h];
        let b_gate = &p[c.b_gate..c.b_gate + h];
        let w_cand = &p[c.w_cand..c.w_cand + n_in * h];
        let u_cand = &p[c.u_cand..c.u_cand + h * h];
        let b_cand = &p[c.b_cand..c.b_cand + h];
        let mut tr = CellTrace {
            gate: vec![0.0; t_len * h],
            cand: vec![0.0; t_len * h],
            h: vec![0.0; t_len * h],
        };
        let zeros = vec![0.0; h];
        let mut a_gate = vec![0.0; h];
        let mut a_cand = vec![0.0; h];
        let mut gated = vec![0.0; h];
        for step in 0..t_len {
            let t = if c.reverse { t_len - 1 - step } else { step };
            let x = &input[t * n_in..(t + 1) * n_in];
            let prev: &[f64] = if step == 0 {
                &zeros
            } else {
                let tp = if c.reverse { t + 1 } else { t - 1 };
                &tr.h[tp * h..(tp + 1) * h]
            };
            a_gate.copy_from_slice(b_gate);
            a_cand.copy_from_slice(b_cand);
            for (i, &xv) in x.iter().enumerate() {
                let wg = &w_gate[i * h..(i + 1) * h];
                let wc = &w_cand[i * h..(i + 1) * h];
                for j in 0..h {
                    a_gate[j] += xv * wg[j];
                    a_cand[j] += xv * wc[j];
                }
            }
            for (i, &hv) in prev.iter().enumerate() {
                let ug = &u_gate[i * h..(i + 1) * h];
                for j in 0..h {
                    a_gate[j] += hv * ug[j];
                }
            }
            for j in 0..h {
                a_gate[j] = sigmoid(a_gate[j]);
                gated[j] = a_gate[j] * prev[j];
            }
            for (i, &gv) in gated.iter().enumerate() {
                let uc = &u_cand[i * h..(i + 1) * h];
                for j in 0..h {
                    a_cand[j] += gv * uc[j];
                }
            }
            let mut new_h = vec![0.0; h];
            for j in 0..h {
                a_cand[j] = a_cand[j].tanh();
                new_h[j] = (1.0 - a_gate[j]) * prev[j] + a_gate[j] * a_cand[j];
            }
            tr.gate[t * h..(t + 1) * h].copy_from_slice(&a_gate);
            tr.cand[t * h..(t + 1) * h].copy_from_slice(&a_cand);
            tr.h[t * h..(t + 1) * h].copy_from_slice(&new_h);
        }
        tr
    }

    fn backward(&self, x: &FeatureMatrix, trace: &Trace, d_logits: &[f64], grad: &mut [f64]) {
        let t_len = x.frames();
        let z = self.config.num_labels;
        let p_in = self.layout.proj_in;
        let dirs = self.config.directions();
        let h = self.config.hidden_units;

        // Output projection.
        let w = &self.data[self.layout.proj_w..self.layout.proj_w + p_in * z];
        let mut d_top = vec![0.0; t_len * p_in];
        for t in 0..t_len {
            let dl = &d_logits[t * z..(t + 1) * z];
            let top = &trace.top[t * p_in..(t + 1) * p_in];
            for (k, &g) in dl.iter().enumerate() {
                grad[self.layout.proj_b + k] += g;
            }
            for i in 0..p_in {
                let gw = &mut grad[self.layout.proj_w + i * z..self.layout.proj_w + (i + 1) * z];
                let wr = &w[i * z..(i + 1) * z];
                let mut acc = 0.0;
                for k in 0..z {
                    gw[k] += top[i] * dl[k];
                    acc += wr[k] * dl[k];
                }
                d_top[t * p_in + i] = acc;
            }
        }

        let mut d_out = d_top;
        for layer in (0..self.config.num_layers).rev() {
            let input = &trace.layer_inputs[layer];
            let n_in = self.layout.cells[layer * dirs].input;
            let mut d_in = vec![0.0; t_len * n_in];
            for dir in 0..dirs {
                let idx = layer * dirs + dir;
                let mut d_h = vec![0.0; t_len * h];
                for t in 0..t_len {
                    d_h[t * h..(t + 1) * h].copy_from_slice(&d_out[(t * dirs + dir) * h..(t * dirs + dir + 1) * h]);
                }
                self.cell_backward(&self.layout.cells[idx], &trace.cells[idx], input, t_len, &d_h, &mut d_in, grad);
            }
            d_out = d_in;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn cell_backward(
        &self,
        c: &CellLayout,
        tr: &CellTrace,
        input: &[f64],
        t_len: usize,
        d_h_out: &[f64],
        d_in: &mut [f64],
        grad: &mut [f64],
    ) {
        let (n_in, h) = (c.input, c.hidden);
        let p = &self.data;
        let w_gate = &p[c.w_gate..c.w_gate + n_in * h];
        let u_gate = &p[c.u_gate..c.u_gate + h * h];
        let w_cand = &p[c.w_cand..c.w_cand + n_in * h];
        let u_cand = &p[c.u_cand..c.u_cand + h * h];
        let zeros = vec![0.0; h];
        let mut d_next = vec![0.0; h];
        let mut d_a_gate = vec![0.0; h];
        let mut d_a_cand = vec![0.0; h];
        let mut d_gate = vec![0.0; h];
        let mut d_prev = vec![0.0; h];
        let mut gated = vec![0.0; h];
        for step in (0..t_len).rev() {
            let t = if c.reverse { t_len - 1 - step } else { step };
            let x = &input[t * n_in..(t + 1) * n_in];
            let prev: &[f64] = if step == 0 {
                &zeros
            } else {
                let tp = if c.reverse { t + 1 } else { t - 1 };
                &tr.h[tp * h..(tp + 1) * h]
            };
            let f = &tr.gate[t * h..(t + 1) * h];
            let cand = &tr.cand[t * h..(t + 1) * h];
            for j in 0..h {
                let dh = d_h_out[t * h + j] + d_next[j];
                d_gate[j] = dh * (cand[j] - prev[j]);
                d_prev[j] = dh * (1.0 - f[j]);
                d_a_cand[j] = dh * f[j] * (1.0 - cand[j] * cand[j]);
                gated[j] = f[j] * prev[j];
            }
            // Candidate path: U_c acts on the gated previous state.
            for i in 0..h {
                let uc = &u_cand[i * h..(i + 1) * h];
                let g_uc = &mut grad[c.u_cand + i * h..c.u_cand + (i + 1) * h];
                let mut acc = 0.0;
                for j in 0..h {
                    g_uc[j] += gated[i] * d_a_cand[j];
                    acc += uc[j] * d_a_cand[j];
                }
                d_gate[i] += acc * prev[i];
                d_prev[i] += acc * f[i];
            }
            for j in 0..h {
                d_a_gate[j] = d_gate[j] * f[j] * (1.0 - f[j]);
                grad[c.b_gate + j] += d_a_gate[j];
                grad[c.b_cand + j] += d_a_cand[j];
            }
            for i in 0..h {
                let ug = &u_gate[i * h..(i + 1) * h];
                let g_ug = &mut grad[c.u_gate + i * h..c.u_gate + (i + 1) * h];
                let mut acc = 0.0;
                for j in 0..h {
                    g_ug[j] += prev[i] * d_a_gate[j];
                    acc += ug[j] * d_a_gate[j];
                }
                d_prev[i] += acc;
            }
            let d_x = &mut d_in[t * n_in..(t + 1) * n_in];
            for i in 0..n_in {
                let wg = &w_gate[i * h..(i + 1) * h];
                let wc = &w_cand[i * h..(i + 1) * h];
                let mut acc = 0.0;
                for j in 0..h {
                    acc += wg[j] * d_a_gate[j] + wc[j] * d_a_cand[j];
                }
                d_x[i] += acc;
                let g_wg = &mut grad[c.w_gate + i * h..c.w_gate + (i + 1) * h];
                for j in 0..h {
                    g_wg[j] += x[i] * d_a_gate[j];
                }
                let g_wc = &mut grad[c.w_cand + i * h..c.w_cand + (i + 1) * h];
                for j in 0..h {
                    g_wc[j] += x[i] * d_a_cand[j];
                }
            }
            d_next.copy_from_slice(&d_prev);
        }
    }
}

struct CellTrace {
    gate: Vec<f64>,
    cand: Vec<f64>,
    h: Vec<f64>,
}

struct Trace {
    layer_inputs: Vec<Vec<f64>>,
    top: Vec<f64>,
    cells: Vec<CellTrace>,
    logits: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::{ctc_loss_and_grad, LabelSequence};
    use crate::numeric::logsumexp;

    fn features(frames: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(frames, dim, (0..frames * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_projection_gives_uniform_posteriors() {
        let mut p = ModelParams::init(ModelConfig::student(4, 5, 1)).unwrap();
        p.zero_projection();
        let post = p.forward(&features(6, 4, 2)).unwrap();
        for &v in post.values() {
            assert!((v + 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_are_normalized_and_deterministic() {
        let p = ModelParams::init(ModelConfig::teacher(3, 4, 9)).unwrap();
        let x = features(7, 3, 3);
        let a = p.forward(&x).unwrap();
        let b = p.forward(&x).unwrap();
        assert_eq!(a, b);
        for row in a.rows() {
            assert!(logsumexp(row).abs() < 1e-9);
        }
    }

    #[test]
    fn input_dim_mismatch_is_an_error() {
        let p = ModelParams::init(ModelConfig::student(4, 3, 1)).unwrap();
        assert!(matches!(p.forward(&features(2, 5, 1)), Err(ModelError::InputDim { .. })));
    }

    #[test]
    fn tensor_specs_cover_flat_vector() {
        for cfg in [
            ModelConfig::student(3, 4, 0),
            ModelConfig {
                num_layers: 2,
                ..ModelConfig::teacher(3, 4, 0)
            },
        ] {
            let p = ModelParams::init(cfg).unwrap();
            let total: usize = p.tensor_specs().iter().map(TensorSpec::len).sum();
            assert_eq!(total, p.num_params());
        }
    }

    fn gradient_check(cfg: ModelConfig) {
        let p = ModelParams::init(cfg.clone()).unwrap();
        let x = features(5, cfg.input_dim, 11);
        let target = LabelSequence::from_symbols(vec![1, 2]);
        let loss_fn = |post: &LogProbMatrix| Ok(ctc_loss_and_grad(post, &target, 0)?);
        let mut grad = vec![0.0; p.num_params()];
        p.accumulate_gradient(&x, &mut grad, loss_fn).unwrap();
        let eps = 1e-6;
        for i in 0..p.num_params() {
            let mut plus = p.clone();
            plus.flat_mut()[i] += eps;
            let mut minus = p.clone();
            minus.flat_mut()[i] -= eps;
            let lp = ctc_loss_and_grad(&plus.forward(&x).unwrap(), &target, 0).unwrap().loss;
            let lm = ctc_loss_and_grad(&minus.forward(&x).unwrap(), &target, 0).unwrap().loss;
            let fd = (lp - lm) / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-4);
            assert!((fd - grad[i]).abs() / denom < 1e-4, "param {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn backprop_matches_finite_differences_unidirectional() {
        gradient_check(ModelConfig {
            hidden_units: 3,
            num_layers: 2,
            ..ModelConfig::student(2, 3, 5)
        });
    }

    #[test]
    fn backprop_matches_finite_differences_bidirectional() {
        gradient_check(ModelConfig {
            hidden_units: 3,
            num_layers: 2,
            ..ModelConfig::teacher(2, 3, 6)
        });
    }
}
