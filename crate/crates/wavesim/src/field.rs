//! Complex 2-D grid fields (background, scattered or reference solutions).

use crate::error::{Error, Result};
use crate::medium::{Domain, Point};
use ndarray::Array2;
use num_complex::Complex64;

/// A complex field sampled on a regular grid. Planes are stored as
/// `[[iz, ix]]` with `x = x_min + ix dx`, `z = z_min + iz dz`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    pub x_min: f64,
    pub z_min: f64,
    pub re: Array2<f64>,
    pub im: Array2<f64>,
}

impl ComplexField {
    pub fn zeros(nx: usize, nz: usize, dx: f64, dz: f64, x_min: f64, z_min: f64) -> Self {
        ComplexField {
            nx,
            nz,
            dx,
            dz,
            x_min,
            z_min,
            re: Array2::zeros((nz, nx)),
            im: Array2::zeros((nz, nx)),
        }
    }

    pub fn node(&self, ix: usize, iz: usize) -> Point {
        Point::new(
            self.x_min + ix as f64 * self.dx,
            self.z_min + iz as f64 * self.dz,
        )
    }

    pub fn get(&self, ix: usize, iz: usize) -> Complex64 {
        Complex64::new(self.re[[iz, ix]], self.im[[iz, ix]])
    }

    pub fn set(&mut self, ix: usize, iz: usize, v: Complex64) {
        self.re[[iz, ix]] = v.re;
        self.im[[iz, ix]] = v.im;
    }

    /// True when both fields live on the same grid (within roundoff).
    pub fn same_grid(&self, other: &ComplexField) -> bool {
        self.nx == other.nx
            && self.nz == other.nz
            && (self.dx - other.dx).abs() < 1e-9
            && (self.dz - other.dz).abs() < 1e-9
            && (self.x_min - other.x_min).abs() < 1e-6
            && (self.z_min - other.z_min).abs() < 1e-6
    }

    /// Relative L2 difference over nodes inside the interior region of
    /// `domain` (absorbing collar excluded), real and imaginary parts
    /// stacked. Fails when the reference has zero norm on the mask.
    pub fn relative_l2(&self, reference: &ComplexField, domain: &Domain) -> Result<f64> {
        if !self.same_grid(reference) {
            return Err(Error::Contract("fields live on different grids".into()));
        }
        let tol = 1e-9 * self.dx.abs().max(1.0);
        let mut num = 0.0;
        let mut den = 0.0;
        for iz in 0..self.nz {
            for ix in 0..self.nx {
                let p = self.node(ix, iz);
                if p.x < domain.x_bl - tol
                    || p.x > domain.x_br + tol
                    || p.z < domain.z_bu - tol
                    || p.z > domain.z_bd + tol
                {
                    continue;
                }
                let a = self.get(ix, iz);
                let b = reference.get(ix, iz);
                num += (a - b).norm_sqr();
                den += b.norm_sqr();
            }
        }
        if den == 0.0 {
            return Err(Error::Contract(
                "reference field has zero norm on the interior mask".into(),
            ));
        }
        Ok((num / den).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_l2_cases() {
        let d = Domain::new(0.0, 100.0, 0.0, 100.0, 0.0).unwrap();
        let mut a = ComplexField::zeros(11, 11, 10.0, 10.0, 0.0, 0.0);
        for iz in 0..11 {
            for ix in 0..11 {
                a.set(ix, iz, Complex64::new(1.0 + ix as f64, iz as f64));
            }
        }
        // identical fields
        assert_eq!(a.relative_l2(&a, &d).unwrap(), 0.0);
        // zero prediction vs reference: 1
        let zero = ComplexField::zeros(11, 11, 10.0, 10.0, 0.0, 0.0);
        assert!((zero.relative_l2(&a, &d).unwrap() - 1.0).abs() < 1e-15);
        // homogeneous scaling: 1.1 u vs u gives 0.1
        let mut scaled = a.clone();
        scaled.re *= 1.1;
        scaled.im *= 1.1;
        assert!((scaled.relative_l2(&a, &d).unwrap() - 0.1).abs() < 1e-12);
        // zero reference is a contract violation
        assert!(a.relative_l2(&zero, &d).is_err());
    }

    #[test]
    fn collar_nodes_are_excluded() {
        let d = Domain::new(20.0, 80.0, 20.0, 80.0, 20.0).unwrap();
        let mut a = ComplexField::zeros(11, 11, 10.0, 10.0, 0.0, 0.0);
        let mut b = ComplexField::zeros(11, 11, 10.0, 10.0, 0.0, 0.0);
        for iz in 0..11 {
            for ix in 0..11 {
                b.set(ix, iz, Complex64::new(1.0, 0.0));
                a.set(ix, iz, Complex64::new(1.0, 0.0));
            }
        }
        // corrupt only collar nodes of the prediction: error stays zero
        a.set(0, 0, Complex64::new(100.0, 0.0));
        a.set(10, 10, Complex64::new(-50.0, 3.0));
        assert_eq!(a.relative_l2(&b, &d).unwrap(), 0.0);
    }
}
