//! Physical setting: simulation geometry, absorbing-layer stretching
//! factors, velocity rasters and the analytic background wavefield.
//!
//! The absorbing collar damps outgoing waves through complex coordinate
//! stretching. With boundary distances `l_x`, `l_z` (zero inside the
//! interior region) and damping coefficient `c`, the stretching factors are
//!
//! ```text
//! e1 = (1 + c^2 lx^2 lz^2)/(1 + c^2 lx^4) + i c (lx^2 - lz^2)/(1 + c^2 lx^4)
//! e2 = (1 + c^2 lx^2 lz^2)/(1 + c^2 lz^4) + i c (lz^2 - lx^2)/(1 + c^2 lz^4)
//! e3 = 1 - c^2 lx^2 lz^2 - i c (lx^2 + lz^2)
//! ```
//!
//! At interior points all three reduce to 1 and the damped wave operator
//! reduces to the plain Helmholtz operator.

use crate::error::{Error, Result};
use crate::special::hankel_h0_2;
use ndarray::Array2;
use num_complex::Complex64;

/// A point in physical coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub z: f64,
}

impl Point {
    pub fn new(x: f64, z: f64) -> Self {
        Point { x, z }
    }

    pub fn distance_to(&self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

/// Rectangular simulation geometry: an interior region of interest
/// surrounded (optionally) by an absorbing collar.
///
/// `x_bl`/`x_br` are the left/right interior boundaries, `z_bu`/`z_bd` the
/// upper/lower ones (z grows downward). The outer extents include the
/// collar; without a collar they coincide with the interior boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub x_bl: f64,
    pub x_br: f64,
    pub z_bu: f64,
    pub z_bd: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Domain {
    /// Interior rectangle with an absorbing collar of thickness `collar`
    /// on all four sides (`collar = 0` for no collar).
    pub fn new(x_bl: f64, x_br: f64, z_bu: f64, z_bd: f64, collar: f64) -> Result<Self> {
        if !(x_bl < x_br && z_bu < z_bd) {
            return Err(Error::Config(format!(
                "degenerate interior region: x [{x_bl}, {x_br}], z [{z_bu}, {z_bd}]"
            )));
        }
        if collar < 0.0 {
            return Err(Error::Config(format!("negative collar thickness {collar}")));
        }
        Ok(Domain {
            x_bl,
            x_br,
            z_bu,
            z_bd,
            x_min: x_bl - collar,
            x_max: x_br + collar,
            z_min: z_bu - collar,
            z_max: z_bd + collar,
        })
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.z >= self.z_min && p.z <= self.z_max
    }

    pub fn interior_contains(&self, p: Point) -> bool {
        p.x >= self.x_bl && p.x <= self.x_br && p.z >= self.z_bu && p.z <= self.z_bd
    }
}

/// Absorbing-layer parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmlSpec {
    /// Layer thickness in meters.
    pub thickness: f64,
    /// Dimensionless scaling constant of the damping coefficient.
    pub a0: f64,
    /// Reference angular frequency (rad/s). Zero means "use the simulation
    /// frequency", which makes the damping coefficient frequency-free.
    pub omega0: f64,
    pub enabled: bool,
}

impl PmlSpec {
    pub fn disabled() -> Self {
        PmlSpec {
            thickness: 0.0,
            a0: 0.0,
            omega0: 0.0,
            enabled: false,
        }
    }

    pub fn new(thickness: f64, a0: f64) -> Self {
        PmlSpec {
            thickness,
            a0,
            omega0: 0.0,
            enabled: true,
        }
    }

    /// Damping coefficient `c = a0 * omega0 / (omega * L^2)` in 1/m^2.
    pub fn damping_coefficient(&self, omega: f64) -> Result<f64> {
        if !self.enabled {
            return Ok(0.0);
        }
        if self.thickness <= 0.0 {
            return Err(Error::Config(format!(
                "absorbing layer thickness must be positive, got {}",
                self.thickness
            )));
        }
        if omega <= 0.0 {
            return Err(Error::Config(format!(
                "angular frequency must be positive, got {omega}"
            )));
        }
        let omega0 = if self.omega0 > 0.0 { self.omega0 } else { omega };
        Ok(self.a0 * omega0 / (omega * self.thickness * self.thickness))
    }
}

/// Point source at a fixed angular frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub x: f64,
    pub z: f64,
    /// Angular frequency in rad/s.
    pub omega: f64,
}

impl SourceSpec {
    pub fn new(x: f64, z: f64, frequency_hz: f64) -> Self {
        SourceSpec {
            x,
            z,
            omega: 2.0 * std::f64::consts::PI * frequency_hz,
        }
    }

    pub fn frequency_hz(&self) -> f64 {
        self.omega / (2.0 * std::f64::consts::PI)
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.z)
    }
}

/// Distances to the interior region along each axis; both are zero for
/// interior points and at most one max-term per axis is nonzero.
pub fn boundary_distances(p: Point, d: &Domain) -> Result<(f64, f64)> {
    if !d.contains(p) {
        return Err(Error::Domain(format!(
            "point ({}, {}) outside outer extents x [{}, {}], z [{}, {}]",
            p.x, p.z, d.x_min, d.x_max, d.z_min, d.z_max
        )));
    }
    let l_x = (d.x_bl - p.x).max(0.0) + (p.x - d.x_br).max(0.0);
    let l_z = (d.z_bu - p.z).max(0.0) + (p.z - d.z_bd).max(0.0);
    Ok((l_x, l_z))
}

/// Complex stretching factors and the spatial gradients of `e1`, `e2`
/// at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StretchState {
    pub e1: Complex64,
    pub e2: Complex64,
    pub e3: Complex64,
    /// d e1 / dx in 1/m.
    pub de1_dx: Complex64,
    /// d e2 / dz in 1/m.
    pub de2_dz: Complex64,
    pub l_x: f64,
    pub l_z: f64,
}

impl StretchState {
    /// Interior identity: all factors 1, gradients 0.
    pub fn identity() -> Self {
        StretchState {
            e1: Complex64::new(1.0, 0.0),
            e2: Complex64::new(1.0, 0.0),
            e3: Complex64::new(1.0, 0.0),
            de1_dx: Complex64::new(0.0, 0.0),
            de2_dz: Complex64::new(0.0, 0.0),
            l_x: 0.0,
            l_z: 0.0,
        }
    }
}

/// `e1` as a function of the two boundary distances, together with its
/// partial derivative with respect to the first argument. `e2` is the same
/// function with the arguments swapped.
fn e1_and_partial(l_x: f64, l_z: f64, c: f64) -> (Complex64, Complex64) {
    let lx2 = l_x * l_x;
    let lz2 = l_z * l_z;
    let a = 1.0 + c * c * lx2 * lz2;
    let b = 1.0 + c * c * lx2 * lx2;
    let g = c * (lx2 - lz2);
    let e1 = Complex64::new(a / b, g / b);
    let da = 2.0 * c * c * l_x * lz2;
    let db = 4.0 * c * c * lx2 * l_x;
    let dg = 2.0 * c * l_x;
    let de1 = Complex64::new((da * b - a * db) / (b * b), (dg * b - g * db) / (b * b));
    (e1, de1)
}

/// Stretching factors at a point, including the analytic gradients taken
/// through the piecewise-linear boundary distances (slope -1 left of /
/// above the interior, +1 right of / below it, 0 inside).
pub fn stretching_state(p: Point, d: &Domain, c: f64) -> Result<StretchState> {
    let (l_x, l_z) = boundary_distances(p, d)?;
    if l_x == 0.0 && l_z == 0.0 {
        return Ok(StretchState::identity());
    }
    let slope_x = if p.x < d.x_bl {
        -1.0
    } else if p.x > d.x_br {
        1.0
    } else {
        0.0
    };
    let slope_z = if p.z < d.z_bu {
        -1.0
    } else if p.z > d.z_bd {
        1.0
    } else {
        0.0
    };
    let (e1, de1_dlx) = e1_and_partial(l_x, l_z, c);
    let (e2, de2_dlz) = e1_and_partial(l_z, l_x, c);
    let lx2 = l_x * l_x;
    let lz2 = l_z * l_z;
    let e3 = Complex64::new(1.0 - c * c * lx2 * lz2, -c * (lx2 + lz2));
    Ok(StretchState {
        e1,
        e2,
        e3,
        de1_dx: de1_dlx * slope_x,
        de2_dz: de2_dlz * slope_z,
        l_x,
        l_z,
    })
}

/// Regular 2-D raster of acoustic velocities (m/s) with physical origin
/// and spacing. Index order is `values[[iz, ix]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    pub x0: f64,
    pub z0: f64,
    pub values: Array2<f64>,
}

impl VelocityModel {
    pub fn new(
        nx: usize,
        nz: usize,
        dx: f64,
        dz: f64,
        x0: f64,
        z0: f64,
        values: Array2<f64>,
    ) -> Result<Self> {
        if values.dim() != (nz, nx) {
            return Err(Error::Contract(format!(
                "velocity raster shape {:?} does not match (nz, nx) = ({nz}, {nx})",
                values.dim()
            )));
        }
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(
                "velocity raster contains non-positive or non-finite values".into(),
            ));
        }
        Ok(VelocityModel {
            nx,
            nz,
            dx,
            dz,
            x0,
            z0,
            values,
        })
    }

    /// Constant-velocity raster.
    pub fn homogeneous(nx: usize, nz: usize, dx: f64, dz: f64, x0: f64, z0: f64, v: f64) -> Self {
        VelocityModel::new(nx, nz, dx, dz, x0, z0, Array2::from_elem((nz, nx), v)).unwrap()
    }

    /// Two horizontal layers separated at depth `interface_z` (meters).
    pub fn two_layer(
        nx: usize,
        nz: usize,
        dx: f64,
        dz: f64,
        x0: f64,
        z0: f64,
        v_top: f64,
        v_bottom: f64,
        interface_z: f64,
    ) -> Self {
        let mut values = Array2::from_elem((nz, nx), v_top);
        for iz in 0..nz {
            if z0 + iz as f64 * dz >= interface_z {
                values.row_mut(iz).fill(v_bottom);
            }
        }
        VelocityModel::new(nx, nz, dx, dz, x0, z0, values).unwrap()
    }

    /// Procedurally generated heterogeneous raster: velocity increasing
    /// with depth through tilted layers plus smooth lateral perturbations.
    /// A stand-in for a realistic sediment model at desk scale.
    pub fn synthetic_layered(
        nx: usize,
        nz: usize,
        dx: f64,
        dz: f64,
        x0: f64,
        z0: f64,
        v_min: f64,
        v_max: f64,
        seed: u64,
    ) -> Self {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n_layers = 6;
        // per-layer velocity step and lateral waviness
        let phases: Vec<f64> = (0..n_layers)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let amps: Vec<f64> = (0..n_layers).map(|_| rng.random_range(0.02..0.08)).collect();
        let tilts: Vec<f64> = (0..n_layers).map(|_| rng.random_range(-0.15..0.15)).collect();
        let width = (nx - 1) as f64 * dx;
        let depth = (nz - 1) as f64 * dz;
        let mut values = Array2::zeros((nz, nx));
        for iz in 0..nz {
            for ix in 0..nx {
                let xf = ix as f64 * dx / width;
                let zf = iz as f64 * dz / depth;
                // layer index warped by tilt and waviness
                let mut warped = zf;
                for l in 0..n_layers {
                    warped += amps[l] / n_layers as f64
                        * (std::f64::consts::TAU * (l + 1) as f64 * xf + phases[l]).sin()
                        + tilts[l] / n_layers as f64 * (xf - 0.5) * zf;
                }
                let band = (warped * n_layers as f64).floor() / n_layers as f64;
                let frac = band.clamp(0.0, 1.0);
                values[[iz, ix]] = v_min + (v_max - v_min) * frac;
            }
        }
        VelocityModel::new(nx, nz, dx, dz, x0, z0, values).unwrap()
    }

    /// Bilinear interpolation of the raster; points beyond the raster
    /// extents are edge-clamped, which extends the model into the
    /// absorbing collar.
    pub fn sample(&self, p: Point) -> f64 {
        let fx = ((p.x - self.x0) / self.dx).clamp(0.0, (self.nx - 1) as f64);
        let fz = ((p.z - self.z0) / self.dz).clamp(0.0, (self.nz - 1) as f64);
        let ix = (fx.floor() as usize).min(self.nx.saturating_sub(2));
        let iz = (fz.floor() as usize).min(self.nz.saturating_sub(2));
        let tx = fx - ix as f64;
        let tz = fz - iz as f64;
        let ix1 = (ix + 1).min(self.nx - 1);
        let iz1 = (iz + 1).min(self.nz - 1);
        let v00 = self.values[[iz, ix]];
        let v01 = self.values[[iz, ix1]];
        let v10 = self.values[[iz1, ix]];
        let v11 = self.values[[iz1, ix1]];
        (1.0 - tz) * ((1.0 - tx) * v00 + tx * v01) + tz * ((1.0 - tx) * v10 + tx * v11)
    }

    pub fn min_velocity(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Squared slowness and its perturbation against the background medium:
/// `m = 1/v^2`, `dm = 1/v^2 - 1/v0^2` (s^2/m^2).
pub fn slowness_perturbation(v: f64, v0: f64) -> (f64, f64) {
    debug_assert!(v > 0.0 && v0 > 0.0);
    let m = 1.0 / (v * v);
    (m, m - 1.0 / (v0 * v0))
}

/// Analytic background wavefield of the homogeneous medium:
/// `(i/4) H0^(2)(omega r / v0)` damped inside the absorbing collar by
/// `exp(-omega c (lx^2 + lz^2)^(3/2) / (3 v0))`. Exact in the interior,
/// an approximation inside the collar.
pub fn background_wavefield(
    p: Point,
    src: &SourceSpec,
    v0: f64,
    d: &Domain,
    c: f64,
) -> Result<Complex64> {
    let r = p.distance_to(src.position());
    if r == 0.0 {
        return Err(Error::Domain(
            "background wavefield is singular at the source location".into(),
        ));
    }
    let h = hankel_h0_2(src.omega * r / v0)?;
    let kernel = Complex64::new(0.0, 0.25) * h;
    if c == 0.0 {
        return Ok(kernel);
    }
    let (l_x, l_z) = boundary_distances(p, d)?;
    let l2 = l_x * l_x + l_z * l_z;
    if l2 == 0.0 {
        return Ok(kernel);
    }
    let damping = (-src.omega * c * l2.powf(1.5) / (3.0 * v0)).exp();
    Ok(kernel * damping)
}
