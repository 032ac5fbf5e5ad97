use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A discretized Hilbert space: `n` coordinates with a diagonal quadrature
/// weighting `M`, so that `<x, y> = sum_i m_i x_i y_i`.
///
/// Cloning is cheap; the weights are shared.
#[derive(Clone, Debug)]
pub struct Space {
    mass: Arc<[f64]>,
}

impl Space {
    /// Weighted space. Every weight must be finite and strictly positive.
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if let Some((i, m)) = mass
            .iter()
            .enumerate()
            .find(|(_, m)| !(m.is_finite() && **m > 0.0))
        {
            return Err(Error::InvalidSpace(format!(
                "mass weight {m} at index {i} is not strictly positive"
            )));
        }
        Ok(Self { mass: mass.into() })
    }

    /// Uniform weighting `h` on `n` points.
    pub fn uniform(n: usize, h: f64) -> Result<Self> {
        Self::new(vec![h; n])
    }

    /// `R^n` with the identity weighting (the data space).
    pub fn euclidean(n: usize) -> Self {
        Self {
            mass: vec![1.0; n].into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn is_euclidean(&self) -> bool {
        self.mass.iter().all(|&m| m == 1.0)
    }

    /// Same dimension and identical weights.
    pub fn same_as(&self, other: &Space) -> bool {
        Arc::ptr_eq(&self.mass, &other.mass) || self.mass[..] == other.mass[..]
    }

    pub fn check(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(y.len(), self.dim());
        self.mass
            .iter()
            .zip(x.iter().zip(y.iter()))
            .map(|(m, (a, b))| m * a * b)
            .sum()
    }

    pub fn norm_sq(&self, x: &DVector<f64>) -> f64 {
        self.inner(x, x)
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.norm_sq(x).sqrt()
    }

    /// `M x`, the coefficients of the Riesz representer pairing.
    pub fn lower(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(self.mass.iter()).map(|(a, m)| a * m))
    }

    /// `M^{-1} x`.
    pub fn raise(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(self.mass.iter()).map(|(a, m)| a / m))
    }

    /// The `j`-th element of the canonical M-orthonormal basis, `e_j / sqrt(m_j)`.
    pub fn basis(&self, j: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v[j] = 1.0 / self.mass[j].sqrt();
        v
    }

    pub fn zeros(&self) -> DVector<f64> {
        DVector::zeros(self.dim())
    }
}

impl PartialEq for Space {
    fn eq(&self, other: &Self) -> bool {
        self.same_as(other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_mass() {
        assert!(Space::new(vec![1.0, 0.0]).is_err());
        assert!(Space::new(vec![1.0, -2.0]).is_err());
        assert!(Space::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn inner_product_is_weighted() {
        let s = Space::new(vec![2.0, 3.0]).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let y = DVector::from_vec(vec![2.0, -1.0]);
        assert_eq!(s.inner(&x, &y), 2.0 * 2.0 - 3.0);
        assert_eq!(s.inner(&x, &y), s.inner(&y, &x));
        assert!(s.norm_sq(&x) > 0.0);
    }

    #[test]
    fn canonical_basis_is_orthonormal() {
        let s = Space::new(vec![0.5, 4.0, 2.0]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d = s.inner(&s.basis(i), &s.basis(j));
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((d - expected).abs() < 1e-15);
            }
        }
    }
}
