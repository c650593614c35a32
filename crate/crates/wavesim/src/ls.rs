//! Least-squares machinery for the linear output layer.
//!
//! The wave-equation residual is linear in the output weights `W`, so for a
//! fixed hidden stack the loss is the squared residual of a real linear
//! system `D W = R`. Without an absorbing collar the real and imaginary
//! field components decouple and share one `(N + N_C) x P` matrix with a
//! two-column right-hand side. With the collar the complex stretching
//! factors couple the components and the system doubles to
//! `(2N + N_C') x 2P` with a single right-hand-side column, the first `P`
//! unknowns being the real-part weights.
//!
//! The optimal weights solve the damped normal equations
//! `(D^T D + eps I) W* = D^T R` by Cholesky factorization; the factor is
//! kept so the exact adjoint of the solve can reuse it during reverse
//! accumulation.

use crate::error::{Error, Result};
use crate::medium::{Point, SourceSpec};
use crate::network::JetBatch;
use ndarray::{Array1, Array2, Axis, s};

/// How the soft constraint rows enter the coupled system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintBlock {
    /// Two diagonal blocks `[[D_C, 0], [0, D_C]]`: penalizes
    /// `gamma^2 (u_r^2 + u_i^2)`, the squared magnitude of the field.
    BlockDiagonal,
    /// One row block `[D_C, D_C]`: penalizes `gamma^2 (u_r + u_i)^2`.
    Literal,
}

/// System layout marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemLayout {
    /// `(N + N_C) x P` with a two-column right-hand side.
    Uncoupled,
    /// `(2N + N_C') x 2P` with a one-column right-hand side.
    Coupled,
}

/// Assembled least-squares system.
#[derive(Debug, Clone)]
pub struct LsSystem {
    pub d: Array2<f64>,
    pub r: Array2<f64>,
    pub layout: SystemLayout,
    /// Number of wave-equation residual points.
    pub n: usize,
    /// Number of constraint points.
    pub n_c: usize,
    /// Penultimate width.
    pub p: usize,
    pub constraint_block: ConstraintBlock,
}

impl LsSystem {
    fn check_finite(&self) -> Result<()> {
        if self.d.iter().any(|x| !x.is_finite()) || self.r.iter().any(|x| !x.is_finite()) {
            return Err(Error::Solver("assembled system contains non-finite entries".into()));
        }
        Ok(())
    }
}

/// Output weights in the layout of the system that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputWeights {
    pub w: Array2<f64>,
    pub layout: SystemLayout,
}

impl OutputWeights {
    /// Reshape to the `P x 2` matrix applied after the penultimate layer.
    /// Lossless: in the coupled layout the first `P` stacked entries are
    /// the real-part column.
    pub fn to_output_matrix(&self) -> Array2<f64> {
        match self.layout {
            SystemLayout::Uncoupled => self.w.clone(),
            SystemLayout::Coupled => {
                let p = self.w.nrows() / 2;
                let mut out = Array2::zeros((p, 2));
                for i in 0..p {
                    out[[i, 0]] = self.w[[i, 0]];
                    out[[i, 1]] = self.w[[p + i, 0]];
                }
                out
            }
        }
    }

    /// Inverse of `to_output_matrix` for a given layout.
    pub fn from_output_matrix(w: &Array2<f64>, layout: SystemLayout) -> Self {
        match layout {
            SystemLayout::Uncoupled => OutputWeights {
                w: w.clone(),
                layout,
            },
            SystemLayout::Coupled => {
                let p = w.nrows();
                let mut stacked = Array2::zeros((2 * p, 1));
                for i in 0..p {
                    stacked[[i, 0]] = w[[i, 0]];
                    stacked[[p + i, 0]] = w[[i, 1]];
                }
                OutputWeights {
                    w: stacked,
                    layout,
                }
            }
        }
    }
}

/// Medium quantities sampled at the residual points.
#[derive(Debug, Clone)]
pub struct MediumSamples {
    /// Velocity (m/s).
    pub v: Array1<f64>,
    /// Squared slowness `1/v^2`.
    pub m: Array1<f64>,
    /// Slowness perturbation `1/v^2 - 1/v0^2`.
    pub dm: Array1<f64>,
    /// Background wavefield, real part.
    pub u0_re: Array1<f64>,
    /// Background wavefield, imaginary part.
    pub u0_im: Array1<f64>,
}

/// Stretching factors sampled at the residual points, split into real and
/// imaginary planes for the real-valued assembly.
#[derive(Debug, Clone)]
pub struct StretchSamples {
    pub e1_re: Array1<f64>,
    pub e1_im: Array1<f64>,
    pub e2_re: Array1<f64>,
    pub e2_im: Array1<f64>,
    pub e3_re: Array1<f64>,
    pub e3_im: Array1<f64>,
    pub de1_dx_re: Array1<f64>,
    pub de1_dx_im: Array1<f64>,
    pub de2_dz_re: Array1<f64>,
    pub de2_dz_im: Array1<f64>,
}

/// Source-proximity weights of the soft constraint:
/// `gamma = sqrt(max(0, (lambda/4)^2 - r^2))` with `r` the distance to the
/// source and `lambda` the background wavelength.
pub fn gamma_weights(points: &[Point], src: &SourceSpec, v0: f64) -> Array1<f64> {
    let lambda = v0 / src.frequency_hz();
    let radius = 0.25 * lambda;
    Array1::from_iter(points.iter().map(|p| {
        let r = p.distance_to(src.position());
        (radius * radius - r * r).max(0.0).sqrt()
    }))
}

/// Multiply each row of `m` by the corresponding entry of `scale`.
fn scale_rows(m: &Array2<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for (mut row, &s) in out.axis_iter_mut(Axis(0)).zip(scale.iter()) {
        row *= s;
    }
    out
}

/// Accumulate `rows-scaled` product into `out`: `out += diag(scale) * m`.
fn add_scaled_rows(out: &mut Array2<f64>, m: &Array2<f64>, scale: &Array1<f64>, factor: f64) {
    for ((mut orow, mrow), &s) in out
        .axis_iter_mut(Axis(0))
        .zip(m.axis_iter(Axis(0)))
        .zip(scale.iter())
    {
        orow.scaled_add(factor * s, &mrow);
    }
}

/// Decoupled assembly:
/// `D_PDE = (1/sqrt(N)) (omega^2/v^2 H + lap H)`,
/// `R_PDE = (1/sqrt(N)) (-omega^2 dm U0)`,
/// constraint rows `sqrt(beta/N_C) (H_C o Gamma)` with zero right-hand side.
pub fn assemble_no_pml(
    h: &JetBatch,
    med: &MediumSamples,
    hc: &Array2<f64>,
    gamma: &Array1<f64>,
    beta: f64,
    omega: f64,
) -> Result<LsSystem> {
    let n = h.len();
    let n_c = hc.nrows();
    let p = h.dim();
    if n == 0 {
        return Err(Error::Contract("empty residual batch".into()));
    }
    if med.v.len() != n || gamma.len() != n_c || hc.ncols() != p {
        return Err(Error::Contract("assembly batch sizes are inconsistent".into()));
    }
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let omega2 = omega * omega;

    let mut d = Array2::zeros((n + n_c, p));
    let mut r = Array2::zeros((n + n_c, 2));
    {
        let lap = &h.dxx + &h.dzz;
        let mut d_pde = d.slice_mut(s![..n, ..]);
        d_pde.assign(&lap);
        let q = med.v.mapv(|v| omega2 / (v * v));
        for ((mut row, hrow), &qi) in d_pde
            .axis_iter_mut(Axis(0))
            .zip(h.val.axis_iter(Axis(0)))
            .zip(q.iter())
        {
            row.scaled_add(qi, &hrow);
            row *= inv_sqrt_n;
        }
        for i in 0..n {
            let f = -inv_sqrt_n * omega2 * med.dm[i];
            r[[i, 0]] = f * med.u0_re[i];
            r[[i, 1]] = f * med.u0_im[i];
        }
    }
    if n_c > 0 {
        let cw = (beta / n_c as f64).sqrt();
        let mut d_c = d.slice_mut(s![n.., ..]);
        d_c.assign(hc);
        for (mut row, &g) in d_c.axis_iter_mut(Axis(0)).zip(gamma.iter()) {
            row *= cw * g;
        }
    }
    let sys = LsSystem {
        d,
        r,
        layout: SystemLayout::Uncoupled,
        n,
        n_c,
        p,
        constraint_block: ConstraintBlock::BlockDiagonal,
    };
    sys.check_finite()?;
    Ok(sys)
}

/// Gradients of a scalar loss with respect to the jet planes of `H` (and
/// the constraint values `H_C`), given its gradient with respect to the
/// assembled `D`. The adjoint of `assemble_no_pml` at fixed medium data.
pub fn no_pml_jet_grads(
    grad_d: &Array2<f64>,
    med: &MediumSamples,
    gamma: &Array1<f64>,
    beta: f64,
    omega: f64,
    n: usize,
    n_c: usize,
) -> (JetBatch, Array2<f64>) {
    let p = grad_d.ncols();
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let omega2 = omega * omega;
    let g_pde = grad_d.slice(s![..n, ..]).to_owned();
    let mut jet = JetBatch::zeros(n, p);
    let q = med.v.mapv(|v| inv_sqrt_n * omega2 / (v * v));
    jet.val = scale_rows(&g_pde, &q);
    jet.dxx = &g_pde * inv_sqrt_n;
    jet.dzz = jet.dxx.clone();
    let mut g_hc = Array2::zeros((n_c, p));
    if n_c > 0 {
        let cw = (beta / n_c as f64).sqrt();
        let g_c = grad_d.slice(s![n.., ..]);
        for ((mut row, grow), &g) in g_hc
            .axis_iter_mut(Axis(0))
            .zip(g_c.axis_iter(Axis(0)))
            .zip(gamma.iter())
        {
            row.scaled_add(cw * g, &grow);
        }
    }
    (jet, g_hc)
}

/// Coupled assembly with stretching factors. The residual operator applied
/// to the penultimate features,
/// `Op[H] = de1/dx H_x + e1 H_xx + de2/dz H_z + e2 H_zz + e3 omega^2 m H`,
/// is split into blocks built from the real and imaginary parts of the
/// coefficients; the stacked system reproduces the squared magnitude of the
/// complex residual row by row.
pub fn assemble_pml(
    h: &JetBatch,
    stretch: &StretchSamples,
    med: &MediumSamples,
    hc: &Array2<f64>,
    gamma: &Array1<f64>,
    beta: f64,
    omega: f64,
    constraint_block: ConstraintBlock,
) -> Result<LsSystem> {
    let n = h.len();
    let n_c = hc.nrows();
    let p = h.dim();
    if n == 0 {
        return Err(Error::Contract("empty residual batch".into()));
    }
    if med.v.len() != n || stretch.e1_re.len() != n || gamma.len() != n_c || hc.ncols() != p {
        return Err(Error::Contract("assembly batch sizes are inconsistent".into()));
    }
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let omega2 = omega * omega;

    // real-coefficient block of the operator
    let mut d_re = Array2::zeros((n, p));
    add_scaled_rows(&mut d_re, &h.dx, &stretch.de1_dx_re, 1.0);
    add_scaled_rows(&mut d_re, &h.dxx, &stretch.e1_re, 1.0);
    add_scaled_rows(&mut d_re, &h.dz, &stretch.de2_dz_re, 1.0);
    add_scaled_rows(&mut d_re, &h.dzz, &stretch.e2_re, 1.0);
    let m_e3_re = Array1::from_iter(
        stretch
            .e3_re
            .iter()
            .zip(med.m.iter())
            .map(|(&e, &m)| e * omega2 * m),
    );
    add_scaled_rows(&mut d_re, &h.val, &m_e3_re, 1.0);
    d_re *= inv_sqrt_n;

    // imaginary-coefficient block, negated
    let mut d_im = Array2::zeros((n, p));
    add_scaled_rows(&mut d_im, &h.dx, &stretch.de1_dx_im, 1.0);
    add_scaled_rows(&mut d_im, &h.dxx, &stretch.e1_im, 1.0);
    add_scaled_rows(&mut d_im, &h.dz, &stretch.de2_dz_im, 1.0);
    add_scaled_rows(&mut d_im, &h.dzz, &stretch.e2_im, 1.0);
    let m_e3_im = Array1::from_iter(
        stretch
            .e3_im
            .iter()
            .zip(med.m.iter())
            .map(|(&e, &m)| e * omega2 * m),
    );
    add_scaled_rows(&mut d_im, &h.val, &m_e3_im, 1.0);
    d_im *= -inv_sqrt_n;

    let n_rows_c = match constraint_block {
        ConstraintBlock::BlockDiagonal => 2 * n_c,
        ConstraintBlock::Literal => n_c,
    };
    let mut d = Array2::zeros((2 * n + n_rows_c, 2 * p));
    d.slice_mut(s![..n, ..p]).assign(&d_re);
    d.slice_mut(s![..n, p..]).assign(&d_im);
    d.slice_mut(s![n..2 * n, ..p]).assign(&(-&d_im));
    d.slice_mut(s![n..2 * n, p..]).assign(&d_re);

    let mut r = Array2::zeros((2 * n + n_rows_c, 1));
    for i in 0..n {
        let f = omega2 * med.dm[i];
        r[[i, 0]] = inv_sqrt_n
            * (-stretch.e3_re[i] * f * med.u0_re[i] + stretch.e3_im[i] * f * med.u0_im[i]);
        r[[n + i, 0]] = inv_sqrt_n
            * (-stretch.e3_re[i] * f * med.u0_im[i] - stretch.e3_im[i] * f * med.u0_re[i]);
    }

    if n_c > 0 {
        let cw = (beta / n_c as f64).sqrt();
        let scaled = scale_rows(hc, &gamma.mapv(|g| cw * g));
        match constraint_block {
            ConstraintBlock::BlockDiagonal => {
                d.slice_mut(s![2 * n..2 * n + n_c, ..p]).assign(&scaled);
                d.slice_mut(s![2 * n + n_c.., p..]).assign(&scaled);
            }
            ConstraintBlock::Literal => {
                d.slice_mut(s![2 * n.., ..p]).assign(&scaled);
                d.slice_mut(s![2 * n.., p..]).assign(&scaled);
            }
        }
    }

    let sys = LsSystem {
        d,
        r,
        layout: SystemLayout::Coupled,
        n,
        n_c,
        p,
        constraint_block,
    };
    sys.check_finite()?;
    Ok(sys)
}

/// Adjoint of `assemble_pml`: maps a gradient with respect to the stacked
/// `D` back to gradients for the jet planes of `H` and for `H_C`.
pub fn pml_jet_grads(
    grad_d: &Array2<f64>,
    stretch: &StretchSamples,
    med: &MediumSamples,
    gamma: &Array1<f64>,
    beta: f64,
    omega: f64,
    n: usize,
    n_c: usize,
    constraint_block: ConstraintBlock,
) -> (JetBatch, Array2<f64>) {
    let p = grad_d.ncols() / 2;
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let omega2 = omega * omega;

    // gradient w.r.t. the two operator blocks: d_re appears at (top, left)
    // and (bottom, right); d_im at (top, right) with + and (bottom, left)
    // with -.
    let g11 = grad_d.slice(s![..n, ..p]);
    let g12 = grad_d.slice(s![..n, p..]);
    let g21 = grad_d.slice(s![n..2 * n, ..p]);
    let g22 = grad_d.slice(s![n..2 * n, p..]);
    let g_re = (&g11 + &g22) * inv_sqrt_n;
    let g_im = (&g12 - &g21) * (-inv_sqrt_n);

    let m_e3_re = Array1::from_iter(
        stretch
            .e3_re
            .iter()
            .zip(med.m.iter())
            .map(|(&e, &m)| e * omega2 * m),
    );
    let m_e3_im = Array1::from_iter(
        stretch
            .e3_im
            .iter()
            .zip(med.m.iter())
            .map(|(&e, &m)| e * omega2 * m),
    );

    let mut jet = JetBatch::zeros(n, p);
    add_scaled_rows(&mut jet.dx, &g_re, &stretch.de1_dx_re, 1.0);
    add_scaled_rows(&mut jet.dx, &g_im, &stretch.de1_dx_im, 1.0);
    add_scaled_rows(&mut jet.dxx, &g_re, &stretch.e1_re, 1.0);
    add_scaled_rows(&mut jet.dxx, &g_im, &stretch.e1_im, 1.0);
    add_scaled_rows(&mut jet.dz, &g_re, &stretch.de2_dz_re, 1.0);
    add_scaled_rows(&mut jet.dz, &g_im, &stretch.de2_dz_im, 1.0);
    add_scaled_rows(&mut jet.dzz, &g_re, &stretch.e2_re, 1.0);
    add_scaled_rows(&mut jet.dzz, &g_im, &stretch.e2_im, 1.0);
    add_scaled_rows(&mut jet.val, &g_re, &m_e3_re, 1.0);
    add_scaled_rows(&mut jet.val, &g_im, &m_e3_im, 1.0);

    let mut g_hc = Array2::zeros((n_c, p));
    if n_c > 0 {
        let cw = (beta / n_c as f64).sqrt();
        let (gc_left, gc_right) = match constraint_block {
            ConstraintBlock::BlockDiagonal => (
                grad_d.slice(s![2 * n..2 * n + n_c, ..p]),
                grad_d.slice(s![2 * n + n_c.., p..]),
            ),
            ConstraintBlock::Literal => (
                grad_d.slice(s![2 * n.., ..p]),
                grad_d.slice(s![2 * n.., p..]),
            ),
        };
        let sum = &gc_left + &gc_right;
        for ((mut row, grow), &g) in g_hc
            .axis_iter_mut(Axis(0))
            .zip(sum.axis_iter(Axis(0)))
            .zip(gamma.iter())
        {
            row.scaled_add(cw * g, &grow);
        }
    }
    (jet, g_hc)
}

/// Cholesky factor and bookkeeping returned by `solve_damped`, reused by
/// the adjoint.
#[derive(Debug, Clone)]
pub struct SolveContext {
    /// Lower-triangular Cholesky factor of `D^T D + eps I`.
    factor: Array2<f64>,
    /// Damping actually used (may be 10x the request after a retry).
    pub eps_used: f64,
    /// `||(D^T D + eps I) W* - D^T R|| / ||D^T R||`.
    pub normal_residual: f64,
}

/// In-place lower Cholesky factorization. On failure returns the index of
/// the non-positive pivot.
fn cholesky(a: &Array2<f64>) -> std::result::Result<Array2<f64>, usize> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(j);
        }
        let dsqrt = diag.sqrt();
        l[[j, j]] = dsqrt;
        for i in (j + 1)..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / dsqrt;
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` column by column.
fn cholesky_solve(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        // forward
        for i in 0..n {
            let mut v = x[[i, c]];
            for k in 0..i {
                v -= l[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = v / l[[i, i]];
        }
        // backward
        for i in (0..n).rev() {
            let mut v = x[[i, c]];
            for k in (i + 1)..n {
                v -= l[[k, i]] * x[[k, c]];
            }
            x[[i, c]] = v / l[[i, i]];
        }
    }
    x
}

/// Damped least squares `W* = (D^T D + eps I)^{-1} D^T R`.
///
/// The normal matrix is symmetrized before factorization to suppress
/// round-off asymmetry. A factorization failure is retried once with ten
/// times the damping; a second failure is a hard error carrying the pivot
/// index.
pub fn solve_damped(sys: &LsSystem, eps: f64) -> Result<(OutputWeights, SolveContext)> {
    if eps <= 0.0 {
        return Err(Error::Contract(format!("damping must be positive, got {eps}")));
    }
    let dt = sys.d.t();
    let mut normal = dt.dot(&sys.d);
    let rhs = dt.dot(&sys.r);
    // symmetrize
    let nt = normal.t().to_owned();
    normal += &nt;
    normal *= 0.5;

    let mut eps_used = eps;
    let factor = loop {
        let mut damped = normal.clone();
        for i in 0..damped.nrows() {
            damped[[i, i]] += eps_used;
        }
        match cholesky(&damped) {
            Ok(l) => break l,
            Err(pivot) => {
                if eps_used > eps {
                    return Err(Error::Solver(format!(
                        "cholesky factorization failed at pivot {pivot} even after raising damping to {eps_used}"
                    )));
                }
                eps_used = 10.0 * eps;
            }
        }
    };
    let w = cholesky_solve(&factor, &rhs);

    // normal-equation residual against the damped matrix actually factored
    let mut check = normal.dot(&w);
    check.scaled_add(eps_used, &w);
    check -= &rhs;
    let rhs_norm = rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
    let res_norm = check.iter().map(|x| x * x).sum::<f64>().sqrt();
    let normal_residual = if rhs_norm > 0.0 { res_norm / rhs_norm } else { 0.0 };

    Ok((
        OutputWeights {
            w,
            layout: sys.layout,
        },
        SolveContext {
            factor,
            eps_used,
            normal_residual,
        },
    ))
}

/// Squared residual `|D W - R|^2` summed over all rows and columns.
pub fn ls_loss(sys: &LsSystem, w: &OutputWeights) -> f64 {
    let res = sys.d.dot(&w.w) - &sys.r;
    res.iter().map(|x| x * x).sum()
}

/// Exact adjoint of the damped solve for fixed damping: given the gradient
/// `G` of a downstream loss with respect to `W*`, returns the gradients
/// with respect to `D` and `R`. Reuses the Cholesky factor:
/// `S = (D^T D + eps I)^{-1} G`, `grad_R = D S`,
/// `grad_D = R S^T - D (S W*^T + W* S^T)`.
pub fn solve_adjoint(
    sys: &LsSystem,
    ctx: &SolveContext,
    w_star: &OutputWeights,
    g: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if g.dim() != w_star.w.dim() {
        return Err(Error::Contract(format!(
            "adjoint gradient shape {:?} does not match weights {:?}",
            g.dim(),
            w_star.w.dim()
        )));
    }
    let s_mat = cholesky_solve(&ctx.factor, g);
    let grad_r = sys.d.dot(&s_mat);
    let sym = s_mat.dot(&w_star.w.t()) + w_star.w.dot(&s_mat.t());
    let grad_d = sys.r.dot(&s_mat.t()) - sys.d.dot(&sym);
    Ok((grad_d, grad_r))
}

/// Geometric damping schedule: interpolates from `eps_start` down to
/// `eps_end` over `decay_epochs`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub decay_epochs: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            eps_start: 0.1,
            eps_end: 1e-4,
            decay_epochs: 1000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, epoch: usize) -> f64 {
        if self.decay_epochs == 0 {
            return self.eps_end;
        }
        let t = epoch.min(self.decay_epochs) as f64 / self.decay_epochs as f64;
        self.eps_start * (self.eps_end / self.eps_start).powf(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_system(
        rng: &mut ChaCha8Rng,
        rows: usize,
        cols: usize,
        rhs_cols: usize,
    ) -> LsSystem {
        LsSystem {
            d: Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0)),
            r: Array2::from_shape_fn((rows, rhs_cols), |_| rng.random_range(-1.0..1.0)),
            layout: if rhs_cols == 2 {
                SystemLayout::Uncoupled
            } else {
                SystemLayout::Coupled
            },
            n: rows,
            n_c: 0,
            p: cols,
            constraint_block: ConstraintBlock::BlockDiagonal,
        }
    }

    #[test]
    fn gamma_weight_cases() {
        let src = SourceSpec::new(0.0, 0.0, 4.0);
        let v0 = 1500.0;
        let lambda = v0 / 4.0;
        let g = gamma_weights(
            &[
                Point::new(0.0, 0.0),
                Point::new(lambda / 4.0, 0.0),
                Point::new(lambda / 8.0, 0.0),
                Point::new(lambda, 0.0),
            ],
            &src,
            v0,
        );
        assert!((g[0] - lambda / 4.0).abs() < 1e-12);
        assert!(g[1].abs() < 1e-9);
        assert!((g[2] - lambda * 3.0f64.sqrt() / 8.0).abs() < 1e-9);
        assert_eq!(g[3], 0.0);
    }

    #[test]
    fn assemble_single_point_identity() {
        // one point, one feature, H = 1, lap H = 0, v = 1, omega = 1, N = 1:
        // D_PDE = [1]
        let mut h = JetBatch::zeros(1, 1);
        h.val[[0, 0]] = 1.0;
        let med = MediumSamples {
            v: Array1::ones(1),
            m: Array1::ones(1),
            dm: Array1::zeros(1),
            u0_re: Array1::zeros(1),
            u0_im: Array1::zeros(1),
        };
        let sys = assemble_no_pml(
            &h,
            &med,
            &Array2::zeros((0, 1)),
            &Array1::zeros(0),
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(sys.d.dim(), (1, 1));
        assert!((sys.d[[0, 0]] - 1.0).abs() < 1e-15);
        assert!(sys.r.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn homogeneous_medium_gives_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 20;
        let p = 4;
        let mut h = JetBatch::zeros(n, p);
        for plane in [&mut h.val, &mut h.dxx, &mut h.dzz] {
            plane.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        let med = MediumSamples {
            v: Array1::from_elem(n, 1500.0),
            m: Array1::from_elem(n, 1.0 / 1500.0f64.powi(2)),
            dm: Array1::zeros(n),
            u0_re: Array1::from_elem(n, 0.3),
            u0_im: Array1::from_elem(n, -0.1),
        };
        let hc = Array2::from_shape_fn((5, p), |_| rng.random_range(-1.0..1.0));
        let gamma = Array1::from_elem(5, 10.0);
        let sys = assemble_no_pml(&h, &med, &hc, &gamma, 1.0, 25.0).unwrap();
        let (w, _) = solve_damped(&sys, 1e-6).unwrap();
        assert!(w.w.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn solve_identity_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sys = random_system(&mut rng, 3, 3, 2);
        sys.d = Array2::eye(3);
        let (w, ctx) = solve_damped(&sys, 1e-12).unwrap();
        for (a, b) in w.w.iter().zip(sys.r.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(ctx.normal_residual < 1e-8);
    }

    #[test]
    fn solve_scalar_cases() {
        // D = [[2]], R = [[4]]: eps -> 0 gives w -> 2; eps = 1 gives 8/5
        let sys = LsSystem {
            d: Array2::from_elem((1, 1), 2.0),
            r: Array2::from_elem((1, 1), 4.0),
            layout: SystemLayout::Coupled,
            n: 1,
            n_c: 0,
            p: 1,
            constraint_block: ConstraintBlock::BlockDiagonal,
        };
        let (w, _) = solve_damped(&sys, 1e-14).unwrap();
        assert!((w.w[[0, 0]] - 2.0).abs() < 1e-10);
        let (w, _) = solve_damped(&sys, 1.0).unwrap();
        assert!((w.w[[0, 0]] - 8.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn damped_solution_is_optimal_under_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sys = random_system(&mut rng, 12, 5, 2);
        let eps = 0.01;
        let (w, _) = solve_damped(&sys, eps).unwrap();
        let objective = |w: &Array2<f64>| -> f64 {
            let res = sys.d.dot(w) - &sys.r;
            res.iter().map(|x| x * x).sum::<f64>() + eps * w.iter().map(|x| x * x).sum::<f64>()
        };
        let base = objective(&w.w);
        for _ in 0..100 {
            let mut probe = w.w.clone();
            let mut delta = Array2::from_shape_fn(probe.dim(), |_| rng.random_range(-1.0..1.0));
            let norm = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
            delta *= 1e-3 / norm;
            probe += &delta;
            assert!(objective(&probe) >= base - 1e-14);
        }
    }

    #[test]
    fn ls_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sys = random_system(&mut rng, 6, 3, 2);
        let w = OutputWeights {
            w: Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0)),
            layout: SystemLayout::Uncoupled,
        };
        // exact fit: zero loss
        let mut exact = sys.clone();
        exact.r = exact.d.dot(&w.w);
        assert!(ls_loss(&exact, &w) < 1e-25);
        // zero weights: ||R||^2
        let zero = OutputWeights {
            w: Array2::zeros((3, 2)),
            layout: SystemLayout::Uncoupled,
        };
        let want: f64 = sys.r.iter().map(|x| x * x).sum();
        assert!((ls_loss(&sys, &zero) - want).abs() < 1e-12);
    }

    #[test]
    fn adjoint_scalar_case() {
        // D = [[2]], R = [[4]], eps = 1, G = [[1]]:
        // A = 5, S = 1/5, grad_R = 2/5, grad_D = 4/5 - 2(2 (8/5)/5) = -12/25
        let sys = LsSystem {
            d: Array2::from_elem((1, 1), 2.0),
            r: Array2::from_elem((1, 1), 4.0),
            layout: SystemLayout::Coupled,
            n: 1,
            n_c: 0,
            p: 1,
            constraint_block: ConstraintBlock::BlockDiagonal,
        };
        let (w, ctx) = solve_damped(&sys, 1.0).unwrap();
        let g = Array2::from_elem((1, 1), 1.0);
        let (grad_d, grad_r) = solve_adjoint(&sys, &ctx, &w, &g).unwrap();
        assert!((grad_r[[0, 0]] - 0.4).abs() < 1e-12);
        assert!((grad_d[[0, 0]] - (-12.0 / 25.0)).abs() < 1e-12);
        // zero upstream gradient
        let (gd0, gr0) = solve_adjoint(&sys, &ctx, &w, &Array2::zeros((1, 1))).unwrap();
        assert!(gd0.iter().all(|&x| x == 0.0) && gr0.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eps = 0.05;
        for _ in 0..5 {
            let sys = random_system(&mut rng, 4, 2, 2);
            let loss = |sys: &LsSystem| -> f64 {
                let (w, _) = solve_damped(sys, eps).unwrap();
                ls_loss(sys, &w)
            };
            // analytic: direct residual term + adjoint through the solve
            let (w, ctx) = solve_damped(&sys, eps).unwrap();
            let res = sys.d.dot(&w.w) - &sys.r;
            let g = 2.0 * sys.d.t().dot(&res);
            let (grad_d_solve, grad_r_solve) = solve_adjoint(&sys, &ctx, &w, &g).unwrap();
            let grad_d = 2.0 * res.dot(&w.w.t()) + &grad_d_solve;
            let grad_r = -2.0 * &res + &grad_r_solve;

            let step = 1e-6;
            for idx in [(0, 0), (1, 1), (3, 0)] {
                let mut plus = sys.clone();
                plus.d[idx] += step;
                let mut minus = sys.clone();
                minus.d[idx] -= step;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
                assert!(
                    (grad_d[idx] - fd).abs() < 1e-5 * fd.abs().max(1e-6),
                    "grad_D{idx:?}: {} vs fd {fd}",
                    grad_d[idx]
                );
            }
            for idx in [(0, 0), (2, 1)] {
                let mut plus = sys.clone();
                plus.r[idx] += step;
                let mut minus = sys.clone();
                minus.r[idx] -= step;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
                assert!(
                    (grad_r[idx] - fd).abs() < 1e-5 * fd.abs().max(1e-6),
                    "grad_R{idx:?}: {} vs fd {fd}",
                    grad_r[idx]
                );
            }
        }
    }

    #[test]
    fn epsilon_schedule_cases() {
        let sched = EpsilonSchedule::default();
        assert_eq!(sched.value(0), 0.1);
        assert_eq!(sched.value(1000), 1e-4);
        assert_eq!(sched.value(5000), 1e-4);
        let mid = sched.value(500);
        assert!((mid - (0.1f64 * 1e-4).sqrt()).abs() < 1e-12); // ~3.162e-3
        // non-increasing
        let mut prev = f64::INFINITY;
        for e in 0..1200 {
            let v = sched.value(e);
            assert!(v <= prev + 1e-18);
            assert!(v >= sched.eps_end && v <= sched.eps_start);
            prev = v;
        }
    }

    #[test]
    fn output_weight_reshape_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = Array2::from_shape_fn((7, 2), |_| rng.random_range(-1.0..1.0));
        let stacked = OutputWeights::from_output_matrix(&w, SystemLayout::Coupled);
        assert_eq!(stacked.w.dim(), (14, 1));
        assert_eq!(stacked.w[[0, 0]], w[[0, 0]]);
        assert_eq!(stacked.w[[7, 0]], w[[0, 1]]);
        assert_eq!(stacked.to_output_matrix(), w);
    }

    #[test]
    fn cholesky_failure_reports_pivot() {
        // indefinite matrix: fails at the second pivot
        let mut a = Array2::zeros((2, 2));
        a[[0, 0]] = 1.0;
        a[[1, 1]] = -5.0;
        match cholesky(&a) {
            Err(pivot) => assert_eq!(pivot, 1),
            Ok(_) => panic!("expected failure"),
        }
    }
}
