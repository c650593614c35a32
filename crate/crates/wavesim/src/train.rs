//! Training orchestration for both regimes: plain gradient descent on the
//! pointwise loss, and the hybrid scheme where the output weights are
//! solved by damped least squares inside every step and gradients flow
//! through the solve.
//!
//! Both regimes share the batch pipeline: sample collocation and
//! constraint points, push their jets through the hidden stack, assemble
//! the residual system. They differ only in where the output weights come
//! from (current state vs. the solver) and in whether those weights
//! receive an optimizer update.

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::ls::{
    assemble_no_pml, assemble_pml, ls_loss, no_pml_jet_grads, pml_jet_grads, solve_adjoint,
    solve_damped, ConstraintBlock, EpsilonSchedule, LsSystem, MediumSamples, OutputWeights,
    StretchSamples, SystemLayout,
};
use crate::medium::{
    background_wavefield, slowness_perturbation, stretching_state, Domain, PmlSpec, Point,
    SourceSpec, VelocityModel,
};
use crate::network::{
    backprop_params, encode_jet, forward_jet, forward_jet_traced, forward_values, init_params,
    output_apply, Architecture, JetBatch, NetworkParams, ParamGrads,
};
use crate::threads;
use ndarray::{s, Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::Instant;

/// Training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Plain gradient descent on all parameters including the output layer.
    Gd,
    /// Output layer solved by damped least squares every step; gradient
    /// descent on the hidden parameters through the solve.
    Lsgd,
}

/// Run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub pml_enabled: bool,
    /// Collocation points per epoch (fresh draw every epoch).
    pub n_collocation: usize,
    /// Constraint points per epoch.
    pub n_constraint: usize,
    /// Weight of the soft constraint.
    pub beta: f64,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub eps_schedule: EpsilonSchedule,
    pub seed: u64,
    /// Validate every this many epochs (0 disables validation).
    pub val_cadence: usize,
    pub constraint_block: ConstraintBlock,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Lsgd,
            pml_enabled: false,
            n_collocation: 500,
            n_constraint: 64,
            beta: 1.0,
            epochs: 1000,
            lr_start: 0.002,
            lr_end: 0.0007,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            eps_schedule: EpsilonSchedule::default(),
            seed: 0,
            val_cadence: 100,
            constraint_block: ConstraintBlock::BlockDiagonal,
        }
    }
}

impl TrainConfig {
    /// Default constraint budget for a collocation count.
    pub fn default_n_constraint(n: usize) -> usize {
        (n / 20).max(64)
    }
}

/// The physical problem: geometry, absorbing layer, source and medium.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub domain: Domain,
    pub pml: PmlSpec,
    pub source: SourceSpec,
    pub model: VelocityModel,
    /// Background velocity, sampled at the source location.
    pub v0: f64,
}

impl Scenario {
    pub fn new(
        domain: Domain,
        pml: PmlSpec,
        source: SourceSpec,
        model: VelocityModel,
    ) -> Result<Self> {
        let pos = source.position();
        if !(pos.x > domain.x_bl && pos.x < domain.x_br && pos.z > domain.z_bu && pos.z < domain.z_bd)
        {
            return Err(Error::Config(format!(
                "source ({}, {}) must lie strictly inside the interior region",
                pos.x, pos.z
            )));
        }
        if source.omega <= 0.0 {
            return Err(Error::Config("source frequency must be positive".into()));
        }
        let v0 = model.sample(pos);
        Ok(Scenario {
            domain,
            pml,
            source,
            model,
            v0,
        })
    }

    /// Background wavelength `v0 / f`.
    pub fn wavelength(&self) -> f64 {
        self.v0 / self.source.frequency_hz()
    }

    pub fn damping(&self) -> Result<f64> {
        self.pml.damping_coefficient(self.source.omega)
    }

    /// Medium samples at a batch of points, expressed in the network's
    /// scaled length unit (velocities multiplied by `scale`; the background
    /// wavefield value is unit-invariant). Evaluated in parallel with a
    /// deterministic layout.
    pub fn medium_samples(&self, points: &[Point], scale: f64) -> Result<MediumSamples> {
        let c = self.damping()?;
        let v0s = self.v0 * scale;
        let rows: Vec<(f64, f64, f64, f64, f64)> = threads::pool().install(|| {
            points
                .par_iter()
                .map(|&p| {
                    let v = self.model.sample(p) * scale;
                    let (m, dm) = slowness_perturbation(v, v0s);
                    let u0 = if dm == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        background_wavefield(p, &self.source, self.v0, &self.domain, c)?
                    };
                    Ok((v, m, dm, u0.re, u0.im))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(MediumSamples {
            v: rows.iter().map(|r| r.0).collect(),
            m: rows.iter().map(|r| r.1).collect(),
            dm: rows.iter().map(|r| r.2).collect(),
            u0_re: rows.iter().map(|r| r.3).collect(),
            u0_im: rows.iter().map(|r| r.4).collect(),
        })
    }

    /// Stretching factors at a batch of points (absorbing layer enabled).
    /// The factors only depend on the dimensionless product `c l^2` and are
    /// unit-invariant; the gradients are converted to the scaled length
    /// unit of the residual pipeline.
    pub fn stretch_samples(&self, points: &[Point], scale: f64) -> Result<StretchSamples> {
        let c = self.damping()?;
        let inv = 1.0 / scale;
        let rows: Vec<[f64; 10]> = threads::pool().install(|| {
            points
                .par_iter()
                .map(|&p| {
                    let st = stretching_state(p, &self.domain, c)?;
                    Ok([
                        st.e1.re, st.e1.im, st.e2.re, st.e2.im, st.e3.re, st.e3.im,
                        st.de1_dx.re * inv, st.de1_dx.im * inv,
                        st.de2_dz.re * inv, st.de2_dz.im * inv,
                    ])
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let col = |k: usize| -> Array1<f64> { rows.iter().map(|r| r[k]).collect() };
        Ok(StretchSamples {
            e1_re: col(0),
            e1_im: col(1),
            e2_re: col(2),
            e2_im: col(3),
            e3_re: col(4),
            e3_im: col(5),
            de1_dx_re: col(6),
            de1_dx_im: col(7),
            de2_dz_re: col(8),
            de2_dz_im: col(9),
        })
    }
}

/// One epoch's worth of points and precomputed per-point quantities.
#[derive(Debug, Clone)]
pub struct Batch {
    pub points: Vec<Point>,
    pub cpoints: Vec<Point>,
    pub med: MediumSamples,
    pub stretch: Option<StretchSamples>,
    pub gamma: Array1<f64>,
}

/// Uniform i.i.d. collocation points over the sampling rectangle: the full
/// outer domain when the absorbing layer is enabled, the interior region
/// otherwise. Points falling within `1e-6 lambda` of the source are
/// rejected and redrawn.
pub fn sample_collocation(
    scenario: &Scenario,
    pml_enabled: bool,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Point> {
    let d = &scenario.domain;
    let (x0, x1, z0, z1) = if pml_enabled {
        (d.x_min, d.x_max, d.z_min, d.z_max)
    } else {
        (d.x_bl, d.x_br, d.z_bu, d.z_bd)
    };
    let exclusion = 1e-6 * scenario.wavelength();
    let src = scenario.source.position();
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let p = Point::new(rng.random_range(x0..x1), rng.random_range(z0..z1));
        if p.distance_to(src) < exclusion {
            continue;
        }
        points.push(p);
    }
    points
}

/// Area-uniform points on the quarter-wavelength disk around the source,
/// clamped into the sampling rectangle.
pub fn sample_constraint(
    scenario: &Scenario,
    pml_enabled: bool,
    n_c: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Point> {
    let d = &scenario.domain;
    let (x0, x1, z0, z1) = if pml_enabled {
        (d.x_min, d.x_max, d.z_min, d.z_max)
    } else {
        (d.x_bl, d.x_br, d.z_bu, d.z_bd)
    };
    let radius = 0.25 * scenario.wavelength();
    let src = scenario.source.position();
    (0..n_c)
        .map(|_| {
            let r = radius * rng.random_range(0.0f64..1.0).sqrt();
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            Point::new(
                (src.x + r * theta.cos()).clamp(x0, x1),
                (src.z + r * theta.sin()).clamp(z0, z1),
            )
        })
        .collect()
}

/// Draw a fresh batch and precompute its medium data in the scaled length
/// unit of the given architecture.
pub fn make_batch(
    scenario: &Scenario,
    cfg: &TrainConfig,
    arch: &Architecture,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let scale = arch.coord_scale;
    let points = sample_collocation(scenario, cfg.pml_enabled, cfg.n_collocation, rng);
    let cpoints = sample_constraint(scenario, cfg.pml_enabled, cfg.n_constraint, rng);
    let med = scenario.medium_samples(&points, scale)?;
    let stretch = if cfg.pml_enabled {
        Some(scenario.stretch_samples(&points, scale)?)
    } else {
        None
    };
    // gamma is a length; convert to the scaled unit
    let gamma =
        crate::ls::gamma_weights(&cpoints, &scenario.source, scenario.v0).mapv(|g| g * scale);
    Ok(Batch {
        points,
        cpoints,
        med,
        stretch,
        gamma,
    })
}

/// Exponentially decaying learning rate from `lr_start` at epoch 0 to
/// `lr_end` at the final epoch.
pub fn lr_value(cfg: &TrainConfig, epoch: usize) -> f64 {
    let t = epoch as f64 / cfg.epochs.max(1) as f64;
    cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(t)
}

/// Adam moment estimates for all trainable tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    m_out: Array2<f64>,
    v_out: Array2<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        AdamState {
            m_w: params.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: params.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: params.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: params.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            m_out: Array2::zeros(params.w_out.dim()),
            v_out: Array2::zeros(params.w_out.dim()),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of a flat tensor.
fn adam_step_slice(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..theta.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam update over the hidden stack and optionally the output layer.
pub fn adam_update(
    state: &mut AdamState,
    params: &mut NetworkParams,
    grads: &ParamGrads,
    w_out_grad: Option<&Array2<f64>>,
    lr: f64,
    cfg: &TrainConfig,
) {
    state.t += 1;
    let t = state.t;
    for l in 0..params.weights.len() {
        adam_step_slice(
            params.weights[l].as_slice_mut().unwrap(),
            grads.weights[l].as_slice().unwrap(),
            state.m_w[l].as_slice_mut().unwrap(),
            state.v_w[l].as_slice_mut().unwrap(),
            t,
            lr,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
        );
        adam_step_slice(
            params.biases[l].as_slice_mut().unwrap(),
            grads.biases[l].as_slice().unwrap(),
            state.m_b[l].as_slice_mut().unwrap(),
            state.v_b[l].as_slice_mut().unwrap(),
            t,
            lr,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
        );
    }
    if let Some(g) = w_out_grad {
        adam_step_slice(
            params.w_out.as_slice_mut().unwrap(),
            g.as_slice().unwrap(),
            state.m_out.as_slice_mut().unwrap(),
            state.v_out.as_slice_mut().unwrap(),
            t,
            lr,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
        );
    }
}

/// Mutable training state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: NetworkParams,
    pub adam: AdamState,
}

impl TrainState {
    pub fn new(arch: &Architecture, seed: u64) -> Self {
        let params = init_params(arch, seed);
        let adam = AdamState::new(&params);
        TrainState { params, adam }
    }
}

fn system_layout(cfg: &TrainConfig) -> SystemLayout {
    if cfg.pml_enabled {
        SystemLayout::Coupled
    } else {
        SystemLayout::Uncoupled
    }
}

/// Assemble the residual system for a batch under the current parameters.
/// Returns the system together with the forward trace and row split needed
/// for reverse accumulation.
fn assemble_batch(
    state: &NetworkParams,
    scenario: &Scenario,
    cfg: &TrainConfig,
    batch: &Batch,
) -> Result<(LsSystem, crate::network::ForwardTrace, usize)> {
    let n = batch.points.len();
    let mut all = batch.points.clone();
    all.extend_from_slice(&batch.cpoints);
    let enc = encode_jet(&all, &state.arch);
    let (h, trace) = forward_jet_traced(state, &enc)?;
    let h_pde = h.rows(0..n);
    let hc = h.val.slice(s![n.., ..]).to_owned();
    let omega = scenario.source.omega;
    let sys = if cfg.pml_enabled {
        let stretch = batch
            .stretch
            .as_ref()
            .ok_or_else(|| Error::Contract("batch lacks stretching samples".into()))?;
        assemble_pml(
            &h_pde,
            stretch,
            &batch.med,
            &hc,
            &batch.gamma,
            cfg.beta,
            omega,
            cfg.constraint_block,
        )?
    } else {
        assemble_no_pml(&h_pde, &batch.med, &hc, &batch.gamma, cfg.beta, omega)?
    };
    Ok((sys, trace, n))
}

/// Map a gradient with respect to the assembled `D` back onto the jets of
/// the concatenated (collocation + constraint) batch.
fn jet_upstream(
    grad_d: &Array2<f64>,
    cfg: &TrainConfig,
    batch: &Batch,
    omega: f64,
    n: usize,
) -> JetBatch {
    let n_c = batch.cpoints.len();
    let (jet_pde, g_hc) = if cfg.pml_enabled {
        pml_jet_grads(
            grad_d,
            batch.stretch.as_ref().expect("stretch samples"),
            &batch.med,
            &batch.gamma,
            cfg.beta,
            omega,
            n,
            n_c,
            cfg.constraint_block,
        )
    } else {
        no_pml_jet_grads(grad_d, &batch.med, &batch.gamma, cfg.beta, omega, n, n_c)
    };
    let p = jet_pde.dim();
    let mut up = JetBatch::zeros(n + n_c, p);
    up.val.slice_mut(s![..n, ..]).assign(&jet_pde.val);
    up.dx.slice_mut(s![..n, ..]).assign(&jet_pde.dx);
    up.dz.slice_mut(s![..n, ..]).assign(&jet_pde.dz);
    up.dxx.slice_mut(s![..n, ..]).assign(&jet_pde.dxx);
    up.dzz.slice_mut(s![..n, ..]).assign(&jet_pde.dzz);
    up.val.slice_mut(s![n.., ..]).assign(&g_hc);
    up
}

/// One training step on a prepared batch. Returns the epoch loss.
pub fn train_epoch(
    state: &mut TrainState,
    scenario: &Scenario,
    cfg: &TrainConfig,
    batch: &Batch,
    epoch: usize,
) -> Result<f64> {
    let omega = scenario.source.omega;
    let (sys, trace, n) = assemble_batch(&state.params, scenario, cfg, batch)?;
    let lr = lr_value(cfg, epoch);
    match cfg.mode {
        TrainMode::Lsgd => {
            let eps = cfg.eps_schedule.value(epoch);
            let (w_star, ctx) = solve_damped(&sys, eps)
                .map_err(|e| Error::Solver(format!("epoch {epoch}: {e}")))?;
            let loss = ls_loss(&sys, &w_star);
            let res = sys.d.dot(&w_star.w) - &sys.r;
            let g_w = 2.0 * sys.d.t().dot(&res);
            let (grad_d_solve, _) = solve_adjoint(&sys, &ctx, &w_star, &g_w)?;
            let grad_d = 2.0 * res.dot(&w_star.w.t()) + &grad_d_solve;
            let upstream = jet_upstream(&grad_d, cfg, batch, omega, n);
            let pgrads = backprop_params(&state.params, &trace, &upstream)?;
            adam_update(&mut state.adam, &mut state.params, &pgrads, None, lr, cfg);
            state.params.w_out = w_star.to_output_matrix();
            Ok(loss)
        }
        TrainMode::Gd => {
            let w = OutputWeights::from_output_matrix(&state.params.w_out, system_layout(cfg));
            let loss = ls_loss(&sys, &w);
            let res = sys.d.dot(&w.w) - &sys.r;
            let grad_w_stacked = 2.0 * sys.d.t().dot(&res);
            let grad_w_out = OutputWeights {
                w: grad_w_stacked,
                layout: system_layout(cfg),
            }
            .to_output_matrix();
            let grad_d = 2.0 * res.dot(&w.w.t());
            let upstream = jet_upstream(&grad_d, cfg, batch, omega, n);
            let pgrads = backprop_params(&state.params, &trace, &upstream)?;
            adam_update(
                &mut state.adam,
                &mut state.params,
                &pgrads,
                Some(&grad_w_out),
                lr,
                cfg,
            );
            Ok(loss)
        }
    }
}

/// Pointwise evaluation of the training loss from the field and its jets,
/// independent of the system assembly. The dual route used to validate the
/// assembled residuals.
pub fn plain_losses(
    params: &NetworkParams,
    scenario: &Scenario,
    cfg: &TrainConfig,
    batch: &Batch,
) -> Result<f64> {
    let n = batch.points.len();
    let omega = scenario.source.omega;
    let omega2 = omega * omega;
    let enc = encode_jet(&batch.points, &params.arch);
    let h = forward_jet(params, &enc)?;
    let w = &params.w_out;
    let us = h.val.dot(w);
    let us_x = h.dx.dot(w);
    let us_z = h.dz.dot(w);
    let us_xx = h.dxx.dot(w);
    let us_zz = h.dzz.dot(w);

    let mut l_pde = 0.0;
    if cfg.pml_enabled {
        let st = batch
            .stretch
            .as_ref()
            .ok_or_else(|| Error::Contract("batch lacks stretching samples".into()))?;
        for j in 0..n {
            let cplx = |re: f64, im: f64| Complex64::new(re, im);
            let e1 = cplx(st.e1_re[j], st.e1_im[j]);
            let e2 = cplx(st.e2_re[j], st.e2_im[j]);
            let e3 = cplx(st.e3_re[j], st.e3_im[j]);
            let de1 = cplx(st.de1_dx_re[j], st.de1_dx_im[j]);
            let de2 = cplx(st.de2_dz_re[j], st.de2_dz_im[j]);
            let u = cplx(us[[j, 0]], us[[j, 1]]);
            let ux = cplx(us_x[[j, 0]], us_x[[j, 1]]);
            let uz = cplx(us_z[[j, 0]], us_z[[j, 1]]);
            let uxx = cplx(us_xx[[j, 0]], us_xx[[j, 1]]);
            let uzz = cplx(us_zz[[j, 0]], us_zz[[j, 1]]);
            let u0 = cplx(batch.med.u0_re[j], batch.med.u0_im[j]);
            let res = de1 * ux
                + e1 * uxx
                + de2 * uz
                + e2 * uzz
                + e3 * omega2 * (batch.med.m[j] * u + batch.med.dm[j] * u0);
            l_pde += res.norm_sqr();
        }
    } else {
        for j in 0..n {
            let q = omega2 / (batch.med.v[j] * batch.med.v[j]);
            let f = omega2 * batch.med.dm[j];
            let r_re = us_xx[[j, 0]] + us_zz[[j, 0]] + q * us[[j, 0]] + f * batch.med.u0_re[j];
            let r_im = us_xx[[j, 1]] + us_zz[[j, 1]] + q * us[[j, 1]] + f * batch.med.u0_im[j];
            l_pde += r_re * r_re + r_im * r_im;
        }
    }
    l_pde /= n as f64;

    let mut l_c = 0.0;
    if !batch.cpoints.is_empty() && cfg.beta != 0.0 {
        let hc = forward_values(params, &batch.cpoints);
        let uc = output_apply(&hc, w);
        for j in 0..batch.cpoints.len() {
            let g = batch.gamma[j];
            match cfg.constraint_block {
                ConstraintBlock::BlockDiagonal => {
                    l_c += g * g * (uc[[j, 0]] * uc[[j, 0]] + uc[[j, 1]] * uc[[j, 1]]);
                }
                ConstraintBlock::Literal => {
                    let sum = uc[[j, 0]] + uc[[j, 1]];
                    l_c += g * g * sum * sum;
                }
            }
        }
        l_c /= batch.cpoints.len() as f64;
    }
    Ok(l_pde + cfg.beta * l_c)
}

/// Mean `|u_s gamma|` over the constraint points; a diagnostic of how well
/// the near-source constraint is satisfied.
pub fn constraint_residual_mean(params: &NetworkParams, batch: &Batch) -> f64 {
    if batch.cpoints.is_empty() {
        return 0.0;
    }
    let hc = forward_values(params, &batch.cpoints);
    let uc = output_apply(&hc, &params.w_out);
    let mut acc = 0.0;
    for j in 0..batch.cpoints.len() {
        let mag = (uc[[j, 0]] * uc[[j, 0]] + uc[[j, 1]] * uc[[j, 1]]).sqrt();
        acc += mag * batch.gamma[j];
    }
    acc / batch.cpoints.len() as f64
}

/// Predict the scattered field on a grid.
pub fn predict_on_grid(
    params: &NetworkParams,
    nx: usize,
    nz: usize,
    dx: f64,
    dz: f64,
    x_min: f64,
    z_min: f64,
) -> ComplexField {
    let mut field = ComplexField::zeros(nx, nz, dx, dz, x_min, z_min);
    let points: Vec<Point> = (0..nx * nz)
        .map(|i| {
            let iz = i / nx;
            let ix = i % nx;
            Point::new(x_min + ix as f64 * dx, z_min + iz as f64 * dz)
        })
        .collect();
    // chunked, order-preserving parallel evaluation
    let chunks: Vec<Array2<f64>> = threads::pool().install(|| {
        points
            .par_chunks(4096)
            .map(|chunk| output_apply(&forward_values(params, chunk), &params.w_out))
            .collect()
    });
    let mut i = 0;
    for chunk in chunks {
        for row in chunk.rows() {
            let iz = i / nx;
            let ix = i % nx;
            field.set(ix, iz, Complex64::new(row[0], row[1]));
            i += 1;
        }
    }
    field
}

/// Relative L2 validation error of the current prediction against a
/// reference field, interior nodes only.
pub fn validation_error(
    params: &NetworkParams,
    reference: &ComplexField,
    domain: &Domain,
) -> Result<f64> {
    let pred = predict_on_grid(
        params,
        reference.nx,
        reference.nz,
        reference.dx,
        reference.dz,
        reference.x_min,
        reference.z_min,
    );
    pred.relative_l2(reference, domain)
}

/// One metrics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    /// Completed epochs (1-based).
    pub epoch: usize,
    pub loss: f64,
    /// NaN when no validation was run at this epoch.
    pub val_rel_l2: f64,
    pub lr: f64,
    pub epsilon: f64,
    pub seconds: f64,
}

/// Outcome of a full run.
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub metrics: Vec<MetricsRecord>,
    pub final_loss: f64,
}

/// Full training loop: fresh collocation batch every epoch, optimizer
/// step, metrics at the validation cadence and at the final epoch.
pub fn run_train(
    scenario: &Scenario,
    arch: &Architecture,
    cfg: &TrainConfig,
    reference: Option<&ComplexField>,
) -> Result<TrainOutcome> {
    if cfg.val_cadence > 0 && reference.is_none() {
        return Err(Error::Config(
            "validation is enabled but no reference field was provided".into(),
        ));
    }
    let mut state = TrainState::new(arch, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut metrics = Vec::new();
    let start = Instant::now();
    let mut final_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let batch = make_batch(scenario, cfg, arch, &mut rng)?;
        let loss = train_epoch(&mut state, scenario, cfg, &batch, epoch)?;
        final_loss = loss;
        let completed = epoch + 1;
        let validate = cfg.val_cadence > 0
            && (completed % cfg.val_cadence == 0 || completed == cfg.epochs);
        let log_row = validate || completed == cfg.epochs;
        if log_row {
            let val = if validate {
                validation_error(&state.params, reference.unwrap(), &scenario.domain)?
            } else {
                f64::NAN
            };
            metrics.push(MetricsRecord {
                epoch: completed,
                loss,
                val_rel_l2: val,
                lr: lr_value(cfg, epoch),
                epsilon: cfg.eps_schedule.value(epoch),
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(TrainOutcome {
        params: state.params,
        metrics,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_scenario(pml_on: bool) -> Scenario {
        let collar = if pml_on { 200.0 } else { 0.0 };
        let domain = Domain::new(0.0, 1000.0, 0.0, 1000.0, collar).unwrap();
        let model = VelocityModel::two_layer(
            51, 51, 20.0, 20.0, 0.0, 0.0, 1500.0, 2500.0, 500.0,
        );
        let source = SourceSpec::new(500.0, 250.0, 4.0);
        let pml = if pml_on {
            PmlSpec::new(collar, 0.8)
        } else {
            PmlSpec::disabled()
        };
        Scenario::new(domain, pml, source, model).unwrap()
    }

    fn small_cfg(mode: TrainMode, pml: bool) -> TrainConfig {
        TrainConfig {
            mode,
            pml_enabled: pml,
            n_collocation: 40,
            n_constraint: 8,
            epochs: 5,
            val_cadence: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn collocation_sampling_support_and_determinism() {
        let scenario = desk_scenario(false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = sample_collocation(&scenario, false, 1, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = sample_collocation(&scenario, false, 1, &mut rng);
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = sample_collocation(&scenario, false, 2000, &mut rng);
        for p in &pts {
            let (lx, lz) =
                crate::medium::boundary_distances(*p, &scenario.domain).unwrap();
            assert_eq!((lx, lz), (0.0, 0.0));
        }
    }

    #[test]
    fn collocation_mean_near_rectangle_center() {
        let scenario = desk_scenario(false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = sample_collocation(&scenario, false, 100_000, &mut rng);
        let mx = pts.iter().map(|p| p.x).sum::<f64>() / pts.len() as f64;
        let mz = pts.iter().map(|p| p.z).sum::<f64>() / pts.len() as f64;
        assert!((mx - 500.0).abs() < 10.0, "mean x = {mx}");
        assert!((mz - 500.0).abs() < 10.0, "mean z = {mz}");
    }

    #[test]
    fn constraint_sampling_support_and_moment() {
        let scenario = desk_scenario(false);
        let radius = scenario.wavelength() / 4.0;
        let src = scenario.source.position();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts = sample_constraint(&scenario, false, 100_000, &mut rng);
        let gamma = crate::ls::gamma_weights(&pts, &scenario.source, scenario.v0);
        let mut mean_r = 0.0;
        for (p, g) in pts.iter().zip(gamma.iter()) {
            let r = p.distance_to(src);
            assert!(r < radius * (1.0 + 1e-12));
            assert!(*g > 0.0);
            mean_r += r;
        }
        mean_r /= pts.len() as f64;
        // first moment of an area-uniform disk radius is (2/3) R
        let expect = 2.0 / 3.0 * radius;
        assert!((mean_r - expect).abs() < 0.01 * expect, "mean r = {mean_r}");
    }

    #[test]
    fn adam_cases() {
        let arch = Architecture::new(0, vec![1]);
        let mut params = init_params(&arch, 0);
        let before = params.clone();
        let mut adam = AdamState::new(&params);
        let zero = ParamGrads::zeros_like(&params);
        let cfg = TrainConfig::default();
        adam_update(&mut adam, &mut params, &zero, None, 0.1, &cfg);
        assert_eq!(params, before);

        // first step of a fresh state moves by ~ -lr * sign(g)
        let mut adam = AdamState::new(&params);
        let mut grads = ParamGrads::zeros_like(&params);
        grads.weights[0].fill(0.7);
        let w0 = params.weights[0][[0, 0]];
        adam_update(&mut adam, &mut params, &grads, None, 0.1, &cfg);
        let step = params.weights[0][[0, 0]] - w0;
        assert!((step + 0.1).abs() < 1e-6, "first step {step}");
    }

    #[test]
    fn adam_three_step_scalar_trace() {
        // g = 1, 1, 1 with lr = 0.1: every bias-corrected step is
        // lr * 1/(1 + eps'), so theta goes to ~ -0.3
        let mut theta = [0.0f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        for t in 1..=3 {
            adam_step_slice(&mut theta, &[1.0], &mut m, &mut v, t, 0.1, 0.9, 0.999, 1e-8);
            // hand recurrence for the same step
            let m_hand: f64 = 1.0 - 0.9f64.powi(t as i32); // (1-b1) sum b1^k g = m
            let v_hand: f64 = 1.0 - 0.999f64.powi(t as i32);
            let m_hat = m_hand / (1.0 - 0.9f64.powi(t as i32));
            let v_hat = v_hand / (1.0 - 0.999f64.powi(t as i32));
            assert!((m[0] - m_hand).abs() < 1e-15);
            assert!((v[0] - v_hand).abs() < 1e-15);
            assert!((m_hat / (v_hat.sqrt() + 1e-8) - 1.0).abs() < 1e-7);
        }
        assert!((theta[0] + 0.3).abs() < 1e-6, "theta = {}", theta[0]);
    }

    #[test]
    fn lr_schedule_cases() {
        let cfg = TrainConfig {
            epochs: 1000,
            ..TrainConfig::default()
        };
        assert_eq!(lr_value(&cfg, 0), 0.002);
        assert!((lr_value(&cfg, 1000) - 0.0007).abs() < 1e-12);
        let mid = lr_value(&cfg, 500);
        assert!((mid - (0.002f64 * 0.0007).sqrt()).abs() < 1e-9); // ~1.183e-3
    }

    #[test]
    fn keystone_identity_no_pml() {
        let scenario = desk_scenario(false);
        let cfg = small_cfg(TrainMode::Gd, false);
        let arch = Architecture::new(2, vec![12, 6]);
        let mut state = TrainState::new(&arch, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        state
            .params
            .w_out
            .mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let batch = make_batch(&scenario, &cfg, &arch, &mut rng).unwrap();
        let (sys, _, _) = assemble_batch(&state.params, &scenario, &cfg, &batch).unwrap();
        let w = OutputWeights::from_output_matrix(&state.params.w_out, sys.layout);
        let from_system = ls_loss(&sys, &w);
        let pointwise = plain_losses(&state.params, &scenario, &cfg, &batch).unwrap();
        assert!(
            (from_system - pointwise).abs() <= 1e-10 * (1.0 + pointwise),
            "{from_system} vs {pointwise}"
        );
    }

    #[test]
    fn keystone_identity_pml() {
        let scenario = desk_scenario(true);
        let cfg = small_cfg(TrainMode::Gd, true);
        let arch = Architecture::new(2, vec![10, 5]);
        let mut state = TrainState::new(&arch, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        state
            .params
            .w_out
            .mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let batch = make_batch(&scenario, &cfg, &arch, &mut rng).unwrap();
        let (sys, _, _) = assemble_batch(&state.params, &scenario, &cfg, &batch).unwrap();
        let w = OutputWeights::from_output_matrix(&state.params.w_out, sys.layout);
        let from_system = ls_loss(&sys, &w);
        let pointwise = plain_losses(&state.params, &scenario, &cfg, &batch).unwrap();
        assert!(
            (from_system - pointwise).abs() <= 1e-10 * (1.0 + pointwise),
            "{from_system} vs {pointwise}"
        );
    }

    #[test]
    fn homogeneous_medium_stays_at_zero() {
        let domain = Domain::new(0.0, 1000.0, 0.0, 1000.0, 0.0).unwrap();
        let model = VelocityModel::homogeneous(11, 11, 100.0, 100.0, 0.0, 0.0, 1500.0);
        let source = SourceSpec::new(500.0, 500.0, 4.0);
        let scenario = Scenario::new(domain, PmlSpec::disabled(), source, model).unwrap();
        let cfg = small_cfg(TrainMode::Lsgd, false);
        let arch = Architecture::new(1, vec![8]);
        let mut state = TrainState::new(&arch, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for epoch in 0..3 {
            let batch = make_batch(&scenario, &cfg, &arch, &mut rng).unwrap();
            let loss = train_epoch(&mut state, &scenario, &cfg, &batch, epoch).unwrap();
            assert!(loss < 1e-20, "epoch {epoch} loss {loss}");
            assert!(state.params.w_out.iter().all(|&x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn lsgd_step_cannot_beat_damped_optimum() {
        // the solved weights minimize the damped objective on the batch:
        // ls_loss(D, W*) <= ls_loss(D, W_any) + eps (|W_any|^2 - |W*|^2)
        let scenario = desk_scenario(false);
        let cfg = small_cfg(TrainMode::Lsgd, false);
        let arch = Architecture::new(2, vec![10, 6]);
        let state = TrainState::new(&arch, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let batch = make_batch(&scenario, &cfg, &arch, &mut rng).unwrap();
        let (sys, _, _) = assemble_batch(&state.params, &scenario, &cfg, &batch).unwrap();
        let eps = 1e-3;
        let (w_star, _) = solve_damped(&sys, eps).unwrap();
        let base = ls_loss(&sys, &w_star);
        let w_norm: f64 = w_star.w.iter().map(|x| x * x).sum();
        for _ in 0..10 {
            let probe = OutputWeights {
                w: Array2::from_shape_fn(w_star.w.dim(), |_| rng.random_range(-1.0..1.0)),
                layout: w_star.layout,
            };
            let probe_norm: f64 = probe.w.iter().map(|x| x * x).sum();
            let bound = ls_loss(&sys, &probe) + eps * (probe_norm - w_norm);
            assert!(base <= bound + 1e-12 * bound.abs().max(1.0));
        }
    }

    #[test]
    fn deterministic_loss_trace() {
        let scenario = desk_scenario(false);
        let cfg = small_cfg(TrainMode::Lsgd, false);
        let arch = Architecture::new(2, vec![10, 6]);
        let run = |(cfg, arch): (&TrainConfig, &Architecture)| -> Vec<f64> {
            let mut state = TrainState::new(arch, cfg.seed);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
            (0..cfg.epochs)
                .map(|e| {
                    let batch = make_batch(&scenario, cfg, arch, &mut rng).unwrap();
                    train_epoch(&mut state, &scenario, cfg, &batch, e).unwrap()
                })
                .collect()
        };
        let a = run((&cfg, &arch));
        let b = run((&cfg, &arch));
        assert_eq!(a, b);
    }

    #[test]
    fn gd_epoch_loss_equals_pointwise_loss() {
        // the loss reported by a gd step is the pointwise loss of the
        // parameters it started from
        let scenario = desk_scenario(false);
        let cfg = small_cfg(TrainMode::Gd, false);
        let arch = Architecture::new(2, vec![10, 6]);
        let mut state = TrainState::new(&arch, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        state
            .params
            .w_out
            .mapv_inplace(|_| rng.random_range(-0.3..0.3));
        let batch = make_batch(&scenario, &cfg, &arch, &mut rng).unwrap();
        let expected = plain_losses(&state.params, &scenario, &cfg, &batch).unwrap();
        let loss = train_epoch(&mut state, &scenario, &cfg, &batch, 0).unwrap();
        assert!((loss - expected).abs() <= 1e-10 * (1.0 + expected));
    }

    #[test]
    fn full_lsgd_gradient_matches_finite_differences() {
        // end-to-end reverse accumulation through solve and assembly vs
        // central differences of the whole loss on a tiny network
        let scenario = desk_scenario(false);
        let mut cfg = small_cfg(TrainMode::Lsgd, false);
        cfg.n_collocation = 12;
        cfg.n_constraint = 4;
        let arch = Architecture::new(1, vec![8]);
        let state = TrainState::new(&arch, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let batch = make_batch(&scenario, &cfg, &arch, &mut rng).unwrap();
        let eps = 0.05;

        let loss_of = |params: &NetworkParams| -> f64 {
            let (sys, _, _) = assemble_batch(params, &scenario, &cfg, &batch).unwrap();
            let (w, _) = solve_damped(&sys, eps).unwrap();
            ls_loss(&sys, &w)
        };

        // analytic gradient
        let (sys, trace, n) = assemble_batch(&state.params, &scenario, &cfg, &batch).unwrap();
        let (w_star, ctx) = solve_damped(&sys, eps).unwrap();
        let res = sys.d.dot(&w_star.w) - &sys.r;
        let g_w = 2.0 * sys.d.t().dot(&res);
        let (grad_d_solve, _) = solve_adjoint(&sys, &ctx, &w_star, &g_w).unwrap();
        let grad_d = 2.0 * res.dot(&w_star.w.t()) + &grad_d_solve;
        let upstream = jet_upstream(&grad_d, &cfg, &batch, scenario.source.omega, n);
        let grads = backprop_params(&state.params, &trace, &upstream).unwrap();

        let step = 1e-6;
        for (r, c) in [(0usize, 0usize), (3, 5), (7, 2)] {
            let mut plus = state.params.clone();
            plus.weights[0][[r, c]] += step;
            let mut minus = state.params.clone();
            minus.weights[0][[r, c]] -= step;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
            let got = grads.weights[0][[r, c]];
            assert!(
                (got - fd).abs() <= 1e-4 * fd.abs().max(1e-7),
                "weight ({r}, {c}): {got} vs fd {fd}"
            );
        }
        for i in [0usize, 4] {
            let mut plus = state.params.clone();
            plus.biases[0][i] += step;
            let mut minus = state.params.clone();
            minus.biases[0][i] -= step;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
            let got = grads.biases[0][i];
            assert!(
                (got - fd).abs() <= 1e-4 * fd.abs().max(1e-7),
                "bias {i}: {got} vs fd {fd}"
            );
        }
    }

    #[test]
    fn run_train_requires_reference_when_validating() {
        let scenario = desk_scenario(false);
        let cfg = TrainConfig {
            val_cadence: 10,
            ..small_cfg(TrainMode::Lsgd, false)
        };
        let arch = Architecture::new(1, vec![4]);
        assert!(run_train(&scenario, &arch, &cfg, None).is_err());
    }
}
