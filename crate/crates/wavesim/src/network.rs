//! Coordinate network with forward-mode propagation of spatial derivative
//! jets.
//!
//! Every feature travels as a five-plane jet `(value, d/dx, d/dz, d2/dx2,
//! d2/dz2)`; the planes are `N x F` matrices for a batch of `N` points.
//! Linear layers act plane-wise (the bias only enters the value plane) and
//! the sine activation applies the chain rule in closed form. Because the
//! wave operator only needs Laplacian-aligned derivatives, mixed second
//! derivatives are never propagated.
//!
//! The hidden layers produce the feature matrix `H` of the penultimate
//! layer; the bias-free linear output layer that maps `H` to the two field
//! components is applied separately so its weights can be obtained by a
//! least-squares solve instead of gradient descent.

use crate::error::{Error, Result};
use crate::medium::Point;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Network shape: encoder level, hidden widths, input coordinate scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// Maximum dyadic level of the sinusoidal encoding (inclusive).
    pub k_max: usize,
    /// Hidden layer widths; the last entry is the penultimate width `P`.
    pub hidden: Vec<usize>,
    /// Scale applied to input coordinates before encoding; spatial
    /// derivatives throughout the network are taken with respect to the
    /// scaled coordinates. Coordinates in meters with `coord_scale = 1e-3`
    /// put the network in kilometers, keeping `2^k x` in a numerically
    /// benign range for the usual levels and the residual system near unit
    /// scale.
    pub coord_scale: f64,
}

impl Architecture {
    pub fn new(k_max: usize, hidden: Vec<usize>) -> Self {
        Architecture {
            k_max,
            hidden,
            coord_scale: 1e-3,
        }
    }

    /// Encoder output dimension: the two raw coordinates plus four
    /// trigonometric features per level `0..=k_max`.
    pub fn encoder_dim(&self) -> usize {
        2 + 4 * (self.k_max + 1)
    }

    /// Penultimate width.
    pub fn penultimate(&self) -> usize {
        *self.hidden.last().expect("at least one hidden layer")
    }
}

/// Batch of spatial jets: five `N x F` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct JetBatch {
    pub val: Array2<f64>,
    pub dx: Array2<f64>,
    pub dz: Array2<f64>,
    pub dxx: Array2<f64>,
    pub dzz: Array2<f64>,
}

impl JetBatch {
    pub fn zeros(n: usize, dim: usize) -> Self {
        JetBatch {
            val: Array2::zeros((n, dim)),
            dx: Array2::zeros((n, dim)),
            dz: Array2::zeros((n, dim)),
            dxx: Array2::zeros((n, dim)),
            dzz: Array2::zeros((n, dim)),
        }
    }

    pub fn len(&self) -> usize {
        self.val.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.val.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.val.ncols()
    }

    /// Row subrange as a new batch.
    pub fn rows(&self, range: std::ops::Range<usize>) -> JetBatch {
        JetBatch {
            val: self.val.slice(ndarray::s![range.clone(), ..]).to_owned(),
            dx: self.dx.slice(ndarray::s![range.clone(), ..]).to_owned(),
            dz: self.dz.slice(ndarray::s![range.clone(), ..]).to_owned(),
            dxx: self.dxx.slice(ndarray::s![range.clone(), ..]).to_owned(),
            dzz: self.dzz.slice(ndarray::s![range, ..]).to_owned(),
        }
    }
}

/// Trainable parameters. Hidden weights are stored `out x in`; the output
/// layer `w_out` is `P x 2` and carries no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub w_out: Array2<f64>,
    pub arch: Architecture,
}

/// Gradients with respect to the hidden parameters (the output layer is
/// excluded: in hybrid training it is produced by the solver).
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        ParamGrads {
            weights: params.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }
}

/// Intermediate jets recorded by a traced forward pass, consumed by
/// `backprop_params`.
pub struct ForwardTrace {
    /// Input jets of each layer; `inputs[0]` is the encoder output.
    inputs: Vec<JetBatch>,
    /// Pre-activation jets of each layer.
    pres: Vec<JetBatch>,
}

/// Uniform Glorot-style initialization of hidden layers, zero biases, zero
/// output weights (their first useful value comes from the solver).
/// Deterministic for a given seed.
pub fn init_params(arch: &Architecture, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(arch.hidden.len());
    let mut biases = Vec::with_capacity(arch.hidden.len());
    let mut fan_in = arch.encoder_dim();
    for &width in &arch.hidden {
        let limit = (6.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((width, fan_in), |_| rng.random_range(-limit..limit));
        weights.push(w);
        biases.push(Array1::zeros(width));
        fan_in = width;
    }
    NetworkParams {
        weights,
        biases,
        w_out: Array2::zeros((arch.penultimate(), 2)),
        arch: arch.clone(),
    }
}

/// Sinusoidal positional encoding with exact analytic jets.
///
/// Features per point: `[x, z, sin(2^k x), cos(2^k x), sin(2^k z),
/// cos(2^k z)]` for `k = 0..=k_max`, evaluated on the scaled coordinates.
/// Derivative planes are taken with respect to the *scaled* coordinates as
/// well (`d2/dx2 sin(2^k x) = -4^k sin(2^k x)`), so the whole residual
/// pipeline downstream works in the scaled length unit. With the default
/// scale of 1e-3 and inputs in meters, that unit is the kilometer.
pub fn encode_jet(points: &[Point], arch: &Architecture) -> JetBatch {
    let n = points.len();
    let s = arch.coord_scale;
    let dim = arch.encoder_dim();
    let mut jet = JetBatch::zeros(n, dim);
    for (i, p) in points.iter().enumerate() {
        let xs = s * p.x;
        let zs = s * p.z;
        jet.val[[i, 0]] = xs;
        jet.dx[[i, 0]] = 1.0;
        jet.val[[i, 1]] = zs;
        jet.dz[[i, 1]] = 1.0;
        for k in 0..=arch.k_max {
            let f = (1u64 << k) as f64; // 2^k
            let fx = f * xs;
            let fz = f * zs;
            let d = f; // d(2^k x_s)/dx_s
            let col = 2 + 4 * k;
            jet.val[[i, col]] = fx.sin();
            jet.dx[[i, col]] = d * fx.cos();
            jet.dxx[[i, col]] = -d * d * fx.sin();
            jet.val[[i, col + 1]] = fx.cos();
            jet.dx[[i, col + 1]] = -d * fx.sin();
            jet.dxx[[i, col + 1]] = -d * d * fx.cos();
            jet.val[[i, col + 2]] = fz.sin();
            jet.dz[[i, col + 2]] = d * fz.cos();
            jet.dzz[[i, col + 2]] = -d * d * fz.sin();
            jet.val[[i, col + 3]] = fz.cos();
            jet.dz[[i, col + 3]] = -d * fz.sin();
            jet.dzz[[i, col + 3]] = -d * d * fz.cos();
        }
    }
    jet
}

/// One linear layer applied plane-wise.
fn linear_jet(w: &Array2<f64>, b: &Array1<f64>, input: &JetBatch) -> JetBatch {
    let wt = w.t();
    let mut val = input.val.dot(&wt);
    val += b;
    JetBatch {
        val,
        dx: input.dx.dot(&wt),
        dz: input.dz.dot(&wt),
        dxx: input.dxx.dot(&wt),
        dzz: input.dzz.dot(&wt),
    }
}

/// Sine activation on a pre-activation jet:
/// `(sin a, cos(a) ax, cos(a) az, cos(a) axx - sin(a) ax^2,
///   cos(a) azz - sin(a) az^2)`.
fn sine_jet(pre: &JetBatch) -> JetBatch {
    let sin = pre.val.mapv(f64::sin);
    let cos = pre.val.mapv(f64::cos);
    JetBatch {
        dx: &cos * &pre.dx,
        dz: &cos * &pre.dz,
        dxx: &cos * &pre.dxx - &sin * &pre.dx * &pre.dx,
        dzz: &cos * &pre.dzz - &sin * &pre.dz * &pre.dz,
        val: sin,
    }
}

fn check_input_dim(params: &NetworkParams, input: &JetBatch) -> Result<()> {
    let expect = params.weights[0].ncols();
    if input.dim() != expect {
        return Err(Error::Contract(format!(
            "input jet dimension {} does not match first layer fan-in {expect}",
            input.dim()
        )));
    }
    Ok(())
}

/// Forward pass of the hidden stack on a jet batch; returns the
/// penultimate-layer jets (the output layer is not applied).
pub fn forward_jet(params: &NetworkParams, input: &JetBatch) -> Result<JetBatch> {
    check_input_dim(params, input)?;
    let mut h = input.clone();
    for (w, b) in params.weights.iter().zip(&params.biases) {
        h = sine_jet(&linear_jet(w, b, &h));
    }
    Ok(h)
}

/// Forward pass that records the intermediates needed for reverse
/// accumulation.
pub fn forward_jet_traced(
    params: &NetworkParams,
    input: &JetBatch,
) -> Result<(JetBatch, ForwardTrace)> {
    check_input_dim(params, input)?;
    let mut inputs = Vec::with_capacity(params.weights.len());
    let mut pres = Vec::with_capacity(params.weights.len());
    let mut h = input.clone();
    for (w, b) in params.weights.iter().zip(&params.biases) {
        let pre = linear_jet(w, b, &h);
        let out = sine_jet(&pre);
        inputs.push(h);
        pres.push(pre);
        h = out;
    }
    Ok((h, ForwardTrace { inputs, pres }))
}

/// Value-only forward pass (no derivative planes): the plain network
/// evaluation used for field prediction on grids.
pub fn forward_values(params: &NetworkParams, points: &[Point]) -> Array2<f64> {
    let arch = &params.arch;
    let s = arch.coord_scale;
    let n = points.len();
    let mut h = Array2::zeros((n, arch.encoder_dim()));
    for (i, p) in points.iter().enumerate() {
        let xs = s * p.x;
        let zs = s * p.z;
        h[[i, 0]] = xs;
        h[[i, 1]] = zs;
        for k in 0..=arch.k_max {
            let f = (1u64 << k) as f64;
            let col = 2 + 4 * k;
            h[[i, col]] = (f * xs).sin();
            h[[i, col + 1]] = (f * xs).cos();
            h[[i, col + 2]] = (f * zs).sin();
            h[[i, col + 3]] = (f * zs).cos();
        }
    }
    for (w, b) in params.weights.iter().zip(&params.biases) {
        let mut a = h.dot(&w.t());
        a += b;
        h = a.mapv(f64::sin);
    }
    h
}

/// Bias-free output layer: plain matrix product `H W`, column 0 the real
/// part of the field, column 1 the imaginary part.
pub fn output_apply(h_values: &Array2<f64>, w_out: &Array2<f64>) -> Array2<f64> {
    h_values.dot(w_out)
}

/// Reverse accumulation through the jet propagation rules.
///
/// `upstream` holds the gradients of the downstream loss with respect to
/// every plane of the traced forward pass's output. Returns gradients for
/// all hidden weights and biases; the output layer receives none.
pub fn backprop_params(
    params: &NetworkParams,
    trace: &ForwardTrace,
    upstream: &JetBatch,
) -> Result<ParamGrads> {
    let n_layers = params.weights.len();
    if trace.pres.len() != n_layers {
        return Err(Error::Contract(
            "forward trace does not match the parameter stack".into(),
        ));
    }
    let last = &trace.pres[n_layers - 1];
    if upstream.val.dim() != last.val.dim() {
        return Err(Error::Contract(format!(
            "upstream gradient shape {:?} does not match output shape {:?}",
            upstream.val.dim(),
            last.val.dim()
        )));
    }
    let mut grads = ParamGrads::zeros_like(params);
    let mut g = upstream.clone();
    for l in (0..n_layers).rev() {
        let pre = &trace.pres[l];
        let input = &trace.inputs[l];
        let sin = pre.val.mapv(f64::sin);
        let cos = pre.val.mapv(f64::cos);

        // through the sine activation: gradients w.r.t. pre-activation jets
        let ga_val = &g.val * &cos
            - &g.dx * &sin * &pre.dx
            - &g.dz * &sin * &pre.dz
            - &g.dxx * (&sin * &pre.dxx + &cos * &pre.dx * &pre.dx)
            - &g.dzz * (&sin * &pre.dzz + &cos * &pre.dz * &pre.dz);
        let ga_dx = &g.dx * &cos - &g.dxx * 2.0 * &sin * &pre.dx;
        let ga_dz = &g.dz * &cos - &g.dzz * 2.0 * &sin * &pre.dz;
        let ga_dxx = &g.dxx * &cos;
        let ga_dzz = &g.dzz * &cos;

        // through the linear layer: parameter gradients ...
        let mut gw = ga_val.t().dot(&input.val);
        gw += &ga_dx.t().dot(&input.dx);
        gw += &ga_dz.t().dot(&input.dz);
        gw += &ga_dxx.t().dot(&input.dxx);
        gw += &ga_dzz.t().dot(&input.dzz);
        grads.weights[l] = gw;
        grads.biases[l] = ga_val.sum_axis(Axis(0));

        // ... and gradients for the previous layer's output jets
        if l > 0 {
            let w = &params.weights[l];
            g = JetBatch {
                val: ga_val.dot(w),
                dx: ga_dx.dot(w),
                dz: ga_dz.dot(w),
                dxx: ga_dxx.dot(w),
                dzz: ga_dzz.dot(w),
            };
        }
    }
    Ok(grads)
}
