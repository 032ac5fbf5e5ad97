use nalgebra::{DMatrix, DVector};

use super::Space;
use crate::error::{Error, Result};

/// Tolerance on `<e_i, e_j> - delta_ij` accepted by [`Spectrum::new`].
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// Negative eigenvalues down to this magnitude are treated as round-off.
pub const NEGATIVE_TOL: f64 = 1e-12;

/// M-orthonormal eigenpairs `(lambda_i, e_i)` of a self-adjoint operator,
/// sorted by non-increasing eigenvalue.
#[derive(Clone, Debug)]
pub struct Spectrum {
    space: Space,
    values: Vec<f64>,
    /// `n x r`, one eigenvector per column.
    vectors: DMatrix<f64>,
}

impl Spectrum {
    /// Builds a spectrum, sorting the pairs and checking M-orthonormality.
    pub fn new(space: Space, values: Vec<f64>, vectors: DMatrix<f64>) -> Result<Self> {
        if vectors.nrows() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: vectors.nrows(),
            });
        }
        if vectors.ncols() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: vectors.ncols(),
            });
        }
        let spec = Self::sorted(space, values, vectors);
        let defect = spec.orthonormality_defect();
        if defect > ORTHONORMALITY_TOL {
            return Err(Error::NotOrthonormal { defect });
        }
        Ok(spec)
    }

    pub(crate) fn sorted(space: Space, values: Vec<f64>, vectors: DMatrix<f64>) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let n = space.dim();
        let mut sorted_vectors = DMatrix::zeros(n, order.len());
        let mut sorted_values = Vec::with_capacity(order.len());
        for (dst, &src) in order.iter().enumerate() {
            sorted_values.push(values[src]);
            sorted_vectors.set_column(dst, &vectors.column(src));
        }
        Self {
            space,
            values: sorted_values,
            vectors: sorted_vectors,
        }
    }

    pub fn empty(space: Space) -> Self {
        let n = space.dim();
        Self {
            space,
            values: Vec::new(),
            vectors: DMatrix::zeros(n, 0),
        }
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        self.vectors.column(i).into_owned()
    }

    /// `max_ij |<e_i, e_j> - delta_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let mv = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.space.mass()[i] * self.vectors[(i, j)]
        });
        let gram = self.vectors.transpose() * mv;
        let r = gram.nrows();
        let mut defect: f64 = 0.0;
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((gram[(i, j)] - target).abs());
            }
        }
        defect
    }

    /// Coordinates `<e_i, x>` of `x` in the eigenbasis.
    pub fn coordinates(&self, x: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(&self.space.lower(x))
    }

    /// Reassembles `sum_i c_i e_i`.
    pub fn combine(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.vectors * coords
    }

    /// `sum_i f(lambda_i) <e_i, x> e_i`.
    pub fn apply_fn(&self, x: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let mut c = self.coordinates(x);
        for (ci, &l) in c.iter_mut().zip(&self.values) {
            *ci *= f(l);
        }
        self.combine(&c)
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.apply_fn(x, |l| l)
    }

    /// Same eigenvectors, eigenvalues mapped through `f`. Re-sorts.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Spectrum {
        let values = self.values.iter().map(|&l| f(l)).collect();
        Self::sorted(self.space.clone(), values, self.vectors.clone())
    }

    /// Keeps the pairs before the first eigenvalue below `rel_tol * max(lambda_1, 1)`.
    pub fn truncated(&self, rel_tol: f64) -> Spectrum {
        let scale = self.values.first().copied().unwrap_or(0.0).max(1.0);
        let r = self
            .values
            .iter()
            .position(|&l| l < rel_tol * scale)
            .unwrap_or(self.values.len());
        self.leading(r)
    }

    /// First `r` pairs.
    pub fn leading(&self, r: usize) -> Spectrum {
        let r = r.min(self.rank());
        Self {
            space: self.space.clone(),
            values: self.values[..r].to_vec(),
            vectors: self.vectors.columns(0, r).into_owned(),
        }
    }

    /// Coefficient matrix of `sum_i lambda_i e_i <e_i, .>`, i.e. `V diag(lambda) V^T M`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * self.values[j]
        });
        let mut out = scaled * self.vectors.transpose();
        for (j, m) in self.space.mass().iter().enumerate() {
            out.column_mut(j).scale_mut(*m);
        }
        out
    }

    /// `log det(I + A) = sum_i log(1 + lambda_i)` for the operator this spectrum represents.
    pub fn logdet_i_plus(&self) -> Result<f64> {
        let mut acc = 0.0;
        for &l in &self.values {
            if l <= -1.0 {
                return Err(Error::InvalidEigenvalue {
                    value: l,
                    reason: "I + A is not positive definite",
                });
            }
            acc += l.ln_1p();
        }
        Ok(acc)
    }

    /// `A^{1/2} x = sum_i sqrt(lambda_i) <e_i, x> e_i`. Components of `x`
    /// outside the span of the retained vectors map to zero.
    pub fn sqrt_apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.space.check(x)?;
        let roots = self.sqrt_values()?;
        let mut c = self.coordinates(x);
        for (ci, r) in c.iter_mut().zip(&roots) {
            *ci *= r;
        }
        Ok(self.combine(&c))
    }

    /// Square-root spectrum, with round-off negatives clamped to zero.
    pub fn sqrt(&self) -> Result<Spectrum> {
        let roots = self.sqrt_values()?;
        Ok(Self {
            space: self.space.clone(),
            values: roots,
            vectors: self.vectors.clone(),
        })
    }

    fn sqrt_values(&self) -> Result<Vec<f64>> {
        let scale = self.values.first().copied().unwrap_or(0.0).abs().max(1.0);
        self.values
            .iter()
            .map(|&l| {
                if l < -NEGATIVE_TOL * scale {
                    Err(Error::InvalidEigenvalue {
                        value: l,
                        reason: "square root of a negative eigenvalue",
                    })
                } else {
                    Ok(l.max(0.0).sqrt())
                }
            })
            .collect()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}
