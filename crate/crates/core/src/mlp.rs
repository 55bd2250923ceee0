//! Feedforward networks, weight initialization and the Adam optimizer.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{layer_norm_forward, Gradients, Tape, Var};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    fn on_tape(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// Normal with variance `2 / fan_in`.
    HeNormal,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    XavierUniform,
}

/// Shape and behaviour of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    /// Layer normalization (with affine gain and bias) after each hidden linear map.
    pub layer_norm: bool,
    /// Apply the activation after the output layer too.
    pub out_activation: bool,
    pub init: WeightInit,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    w: Matrix,
    b: Matrix,
    ln_gain: Option<Matrix>,
    ln_bias: Option<Matrix>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Multi-layer perceptron with row-batched inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

/// Leaf handles for one registration of an [`Mlp`] on a tape, in
/// [`Mlp::params`] order.
#[derive(Debug, Clone)]
pub struct MlpVars(pub Vec<Var>);

impl Mlp {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut dims = vec![spec.input];
        dims.extend(&spec.hidden);
        dims.push(spec.output);
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let w = init_weights(spec.init, fan_in, fan_out, rng);
                let hidden = i + 1 < n_layers;
                let ln = spec.layer_norm && hidden;
                Layer {
                    w,
                    b: Matrix::zeros(1, fan_out),
                    ln_gain: ln.then(|| Matrix::filled(1, fan_out, 1.0)),
                    ln_bias: ln.then(|| Matrix::zeros(1, fan_out)),
                }
            })
            .collect();
        Self { spec, layers }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.w);
            out.push(&l.b);
            if let (Some(g), Some(b)) = (&l.ln_gain, &l.ln_bias) {
                out.push(g);
                out.push(b);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
            if let (Some(g), Some(b)) = (&mut l.ln_gain, &mut l.ln_bias) {
                out.push(g);
                out.push(b);
            }
        }
        out
    }

    /// Parameter names aligned with [`Mlp::params`].
    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(format!("{prefix}.{i}.w"));
            out.push(format!("{prefix}.{i}.b"));
            if l.ln_gain.is_some() {
                out.push(format!("{prefix}.{i}.ln_gain"));
                out.push(format!("{prefix}.{i}.ln_bias"));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|m| m.rows() * m.cols()).sum()
    }

    /// Forward pass without recording.
    pub fn forward(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols(), self.spec.input, "mlp input width mismatch");
        let n = self.layers.len();
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.matmul(&l.w);
            add_row_in_place(&mut h, &l.b);
            if let (Some(g), Some(b)) = (&l.ln_gain, &l.ln_bias) {
                h = layer_norm_forward(&h, LAYER_NORM_EPS).0;
                mul_row_in_place(&mut h, g);
                add_row_in_place(&mut h, b);
            }
            if i + 1 < n || self.spec.out_activation {
                let act = self.spec.activation;
                h.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            }
        }
        h
    }

    /// Registers every parameter as a leaf.
    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        MlpVars(self.params().into_iter().map(|p| tape.leaf(p.clone())).collect())
    }

    /// Recorded forward pass using previously registered parameters.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Var {
        let n = self.layers.len();
        let mut it = vars.0.iter().copied();
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let w = it.next().expect("weight var");
            let b = it.next().expect("bias var");
            h = tape.matmul(h, w);
            h = tape.add_row(h, b);
            if l.ln_gain.is_some() {
                let g = it.next().expect("ln gain var");
                let bb = it.next().expect("ln bias var");
                h = tape.layer_norm(h, LAYER_NORM_EPS);
                h = tape.mul_row(h, g);
                h = tape.add_row(h, bb);
            }
            if i + 1 < n || self.spec.out_activation {
                h = self.spec.activation.on_tape(tape, h);
            }
        }
        h
    }

    /// Gradients for this network's parameters, zeros where unreachable.
    pub fn collect_grads(&self, grads: &Gradients, vars: &MlpVars) -> Vec<Matrix> {
        self.params()
            .iter()
            .zip(&vars.0)
            .map(|(p, v)| grads.get_or_zeros(*v, p.shape()))
            .collect()
    }
}

fn init_weights<R: Rng + ?Sized>(init: WeightInit, fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let data: Vec<f64> = match init {
        WeightInit::HeNormal => {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect()
        }
        WeightInit::XavierUniform => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
            (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect()
        }
    };
    Matrix::from_vec(fan_in, fan_out, data)
}

fn add_row_in_place(h: &mut Matrix, row: &Matrix) {
    for r in 0..h.rows() {
        for (o, b) in h.row_mut(r).iter_mut().zip(row.as_slice()) {
            *o += b;
        }
    }
}

fn mul_row_in_place(h: &mut Matrix, row: &Matrix) {
    for r in 0..h.rows() {
        for (o, g) in h.row_mut(r).iter_mut().zip(row.as_slice()) {
            *o *= g;
        }
    }
}

pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::frobenius_sq).sum::<f64>().sqrt()
}

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: Option<f64>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, max_grad_norm: Option<f64>) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. Returns the gradient norm before clipping.
    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) -> f64 {
        assert_eq!(params.len(), grads.len(), "param/grad count mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        let norm = global_norm(grads);
        let clip = match self.max_grad_norm {
            Some(max) if norm > max => max / (norm + 1e-12),
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape(), "param/grad shape mismatch");
            let ps = p.as_mut_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for (i, &graw) in g.as_slice().iter().enumerate() {
                let gv = graw * clip;
                ms[i] = self.beta1 * ms[i] + (1.0 - self.beta1) * gv;
                vs[i] = self.beta2 * vs[i] + (1.0 - self.beta2) * gv * gv;
                let mhat = ms[i] / bc1;
                let vhat = vs[i] / bc2;
                ps[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(layer_norm: bool, act: Activation) -> MlpSpec {
        MlpSpec {
            input: 3,
            hidden: vec![5, 4],
            output: 2,
            activation: act,
            layer_norm,
            out_activation: false,
            init: WeightInit::HeNormal,
        }
    }

    #[test]
    fn plain_and_taped_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(spec(true, Activation::Relu), &mut rng);
        let x = Matrix::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let xv = tape.constant(x.clone());
        let out = net.forward_tape(&mut tape, &vars, xv);
        assert!(tape.value(out).max_abs_diff(&net.forward(&x)) < 1e-14);
    }

    #[test]
    fn same_seed_same_params() {
        let a = Mlp::new(spec(true, Activation::Relu), &mut ChaCha8Rng::seed_from_u64(9));
        let b = Mlp::new(spec(true, Activation::Relu), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.param_names("n").len(), a.params().len());
    }

    #[test]
    fn param_count() {
        let net = Mlp::new(spec(true, Activation::Relu), &mut ChaCha8Rng::seed_from_u64(1));
        // (3*5+5 + 2*5) + (5*4+4 + 2*4) + (4*2+2)
        assert_eq!(net.num_params(), 30 + 32 + 10);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = Matrix::from_rows(&[&[1.0, 2.0]]);
        let before = p.clone();
        let mut opt = Adam::new(1e-3, None);
        opt.step(vec![&mut p], &[Matrix::zeros(1, 2)]);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_clips_global_norm() {
        let mut p = Matrix::zeros(1, 2);
        let mut opt = Adam::new(0.1, Some(1.0));
        let norm = opt.step(vec![&mut p], &[Matrix::row_vector(&[30.0, 40.0])]);
        assert_eq!(norm, 50.0);
        // first Adam step moves each coordinate by ~lr regardless of scale
        assert!((p[(0, 0)] + 0.1).abs() < 1e-6);
    }
}
