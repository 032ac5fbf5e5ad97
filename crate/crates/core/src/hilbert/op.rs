use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::{Space, Spectrum};
use crate::error::{Error, Result};
use crate::rng;

/// Smallest accepted `|u_ii| / max |u_jj|` in a [`OpExpr::ShiftedInverse`] factorization.
pub const PIVOT_TOL: f64 = 1e-14;

/// Relative tolerance for classifying a dense coefficient array as self-adjoint.
const DENSE_SYMMETRY_TOL: f64 = 1e-12;

/// A linear operator between two weighted spaces, kept as an expression tree.
///
/// Adjoints are taken with respect to the weighted inner products of the
/// domain and codomain. Payloads live behind `Arc`, so clones are cheap and
/// share factorization caches.
#[derive(Clone, Debug)]
pub enum OpExpr {
    /// Coefficient array `K` acting on coordinates.
    Dense(Arc<DenseOp>),
    Diagonal(Arc<DiagonalOp>),
    /// `sum_i lambda_i e_i <e_i, .>`.
    LowRankSpectral(Arc<Spectrum>),
    /// Factors applied right to left.
    Composition(Arc<[OpExpr]>),
    /// `(base + shift I)^{-1}`, factorized on first use.
    ShiftedInverse(Arc<ShiftedInverseOp>),
    Adjoint(Arc<OpExpr>),
}

#[derive(Debug)]
pub struct DenseOp {
    matrix: DMatrix<f64>,
    domain: Space,
    codomain: Space,
    self_adjoint: bool,
}

impl DenseOp {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

#[derive(Debug)]
pub struct DiagonalOp {
    values: DVector<f64>,
    space: Space,
}

impl DiagonalOp {
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }
}

#[derive(Debug)]
pub struct ShiftedInverseOp {
    base: OpExpr,
    shift: f64,
    factors: OnceLock<Result<Factors>>,
}

impl ShiftedInverseOp {
    pub fn base(&self) -> &OpExpr {
        &self.base
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    fn factors(&self) -> Result<&Factors> {
        self.factors
            .get_or_init(|| Factors::new(&self.base, self.shift))
            .as_ref()
            .map_err(Clone::clone)
    }
}

struct Factors {
    lu: LU<f64, Dyn, Dyn>,
    lu_t: LU<f64, Dyn, Dyn>,
}

impl std::fmt::Debug for Factors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factors").finish_non_exhaustive()
    }
}

impl Factors {
    fn new(base: &OpExpr, shift: f64) -> Result<Self> {
        let mut a = base.to_dense()?;
        for i in 0..a.nrows() {
            a[(i, i)] += shift;
        }
        let a_t = a.transpose();
        let lu = LU::new(a);
        let u = lu.u();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..u.nrows() {
            let p = u[(i, i)].abs();
            lo = lo.min(p);
            hi = hi.max(p);
        }
        if u.nrows() > 0 && !(hi > 0.0 && lo / hi >= PIVOT_TOL) {
            let pivot_ratio = if hi > 0.0 { lo / hi } else { 0.0 };
            return Err(Error::SingularFactorization { pivot_ratio });
        }
        Ok(Self {
            lu,
            lu_t: LU::new(a_t),
        })
    }

    fn solve(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu
            .solve(x)
            .ok_or(Error::SingularFactorization { pivot_ratio: 0.0 })
    }

    fn solve_transpose(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu_t
            .solve(x)
            .ok_or(Error::SingularFactorization { pivot_ratio: 0.0 })
    }
}

impl OpExpr {
    /// Dense coefficient array mapping `domain` coordinates to `codomain` coordinates.
    pub fn dense(matrix: DMatrix<f64>, domain: Space, codomain: Space) -> Result<Self> {
        if matrix.ncols() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                found: matrix.ncols(),
            });
        }
        if matrix.nrows() != codomain.dim() {
            return Err(Error::DimensionMismatch {
                expected: codomain.dim(),
                found: matrix.nrows(),
            });
        }
        let self_adjoint = domain.same_as(&codomain) && weighted_symmetry_defect(&matrix, &domain) <= DENSE_SYMMETRY_TOL;
        Ok(OpExpr::Dense(Arc::new(DenseOp {
            matrix,
            domain,
            codomain,
            self_adjoint,
        })))
    }

    pub fn dense_square(matrix: DMatrix<f64>, space: Space) -> Result<Self> {
        Self::dense(matrix, space.clone(), space)
    }

    pub fn diagonal(values: DVector<f64>, space: Space) -> Result<Self> {
        space.check(&values)?;
        Ok(OpExpr::Diagonal(Arc::new(DiagonalOp { values, space })))
    }

    pub fn identity(space: Space) -> Self {
        let values = DVector::from_element(space.dim(), 1.0);
        OpExpr::Diagonal(Arc::new(DiagonalOp { values, space }))
    }

    pub fn zero(domain: Space, codomain: Space) -> Self {
        let m = DMatrix::zeros(codomain.dim(), domain.dim());
        let self_adjoint = domain.same_as(&codomain);
        OpExpr::Dense(Arc::new(DenseOp {
            matrix: m,
            domain,
            codomain,
            self_adjoint,
        }))
    }

    pub fn low_rank(spectrum: Spectrum) -> Self {
        OpExpr::LowRankSpectral(Arc::new(spectrum))
    }

    /// `factors[0] * factors[1] * ... * factors[k-1]`; nested compositions are flattened.
    pub fn compose(factors: Vec<OpExpr>) -> Result<Self> {
        let mut flat = Vec::with_capacity(factors.len());
        for f in factors {
            match f {
                OpExpr::Composition(inner) => flat.extend(inner.iter().cloned()),
                other => flat.push(other),
            }
        }
        if flat.is_empty() {
            return Err(Error::InvalidConfig("empty composition".into()));
        }
        for pair in flat.windows(2) {
            let (left, right) = (&pair[0], &pair[1]);
            if left.domain().dim() != right.codomain().dim() {
                return Err(Error::DimensionMismatch {
                    expected: left.domain().dim(),
                    found: right.codomain().dim(),
                });
            }
        }
        Ok(OpExpr::Composition(flat.into()))
    }

    pub fn shifted_inverse(base: OpExpr, shift: f64) -> Result<Self> {
        if base.domain().dim() != base.codomain().dim() {
            return Err(Error::DimensionMismatch {
                expected: base.domain().dim(),
                found: base.codomain().dim(),
            });
        }
        Ok(OpExpr::ShiftedInverse(Arc::new(ShiftedInverseOp {
            base,
            shift,
            factors: OnceLock::new(),
        })))
    }

    pub fn adjoint(&self) -> OpExpr {
        match self {
            OpExpr::Adjoint(inner) => (**inner).clone(),
            other => OpExpr::Adjoint(Arc::new(other.clone())),
        }
    }

    pub fn domain(&self) -> &Space {
        match self {
            OpExpr::Dense(d) => &d.domain,
            OpExpr::Diagonal(d) => &d.space,
            OpExpr::LowRankSpectral(s) => s.space(),
            OpExpr::Composition(fs) => fs[fs.len() - 1].domain(),
            OpExpr::ShiftedInverse(s) => s.base.domain(),
            OpExpr::Adjoint(inner) => inner.codomain(),
        }
    }

    pub fn codomain(&self) -> &Space {
        match self {
            OpExpr::Dense(d) => &d.codomain,
            OpExpr::Diagonal(d) => &d.space,
            OpExpr::LowRankSpectral(s) => s.space(),
            OpExpr::Composition(fs) => fs[0].codomain(),
            OpExpr::ShiftedInverse(s) => s.base.codomain(),
            OpExpr::Adjoint(inner) => inner.domain(),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.domain().check(x)?;
        self.apply_unchecked(x)
    }

    pub fn adjoint_apply(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.codomain().check(y)?;
        self.adjoint_apply_unchecked(y)
    }

    fn apply_unchecked(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(match self {
            OpExpr::Dense(d) => &d.matrix * x,
            OpExpr::Diagonal(d) => d.values.component_mul(x),
            OpExpr::LowRankSpectral(s) => s.apply(x),
            OpExpr::Composition(fs) => {
                let mut v = x.clone();
                for f in fs.iter().rev() {
                    v = f.apply_unchecked(&v)?;
                }
                v
            }
            OpExpr::ShiftedInverse(s) => s.factors()?.solve(x)?,
            OpExpr::Adjoint(inner) => inner.adjoint_apply_unchecked(x)?,
        })
    }

    fn adjoint_apply_unchecked(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(match self {
            OpExpr::Dense(d) => d.domain.raise(&d.matrix.tr_mul(&d.codomain.lower(y))),
            OpExpr::Diagonal(d) => d.values.component_mul(y),
            OpExpr::LowRankSpectral(s) => s.apply(y),
            OpExpr::Composition(fs) => {
                let mut v = y.clone();
                for f in fs.iter() {
                    v = f.adjoint_apply_unchecked(&v)?;
                }
                v
            }
            OpExpr::ShiftedInverse(s) => {
                let space = s.base.domain();
                space.raise(&s.factors()?.solve_transpose(&space.lower(y))?)
            }
            OpExpr::Adjoint(inner) => inner.apply_unchecked(y)?,
        })
    }

    /// Coefficient array `K` with `apply(x) = K x`.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        Ok(match self {
            OpExpr::Dense(d) => d.matrix.clone(),
            OpExpr::Diagonal(d) => DMatrix::from_diagonal(&d.values),
            OpExpr::LowRankSpectral(s) => s.to_dense(),
            OpExpr::Composition(fs) => {
                let mut acc = fs[0].to_dense()?;
                for f in &fs[1..] {
                    acc *= f.to_dense()?;
                }
                acc
            }
            OpExpr::ShiftedInverse(s) => {
                let n = s.base.domain().dim();
                s.factors()?
                    .lu
                    .solve(&DMatrix::identity(n, n))
                    .ok_or(Error::SingularFactorization { pivot_ratio: 0.0 })?
            }
            OpExpr::Adjoint(inner) => {
                let k = inner.to_dense()?;
                let (dom, cod) = (inner.domain(), inner.codomain());
                DMatrix::from_fn(k.ncols(), k.nrows(), |i, j| {
                    k[(j, i)] * cod.mass()[j] / dom.mass()[i]
                })
            }
        })
    }

    /// Structural self-adjointness: true only when it follows from how the
    /// expression was built. Use [`OpExpr::symmetry_defect`] for a numerical check.
    pub fn is_self_adjoint(&self) -> bool {
        match self {
            OpExpr::Dense(d) => d.self_adjoint,
            OpExpr::Diagonal(_) | OpExpr::LowRankSpectral(_) => true,
            OpExpr::ShiftedInverse(s) => s.base.is_self_adjoint(),
            OpExpr::Adjoint(inner) => inner.is_self_adjoint(),
            OpExpr::Composition(fs) => {
                let k = fs.len();
                (0..k.div_ceil(2)).all(|i| {
                    let (a, b) = (&fs[i], &fs[k - 1 - i]);
                    if i == k - 1 - i {
                        a.is_self_adjoint()
                    } else {
                        adjoint_pair(a, b)
                    }
                })
            }
        }
    }

    /// Largest relative value of `|<Ax,y> - <x,A*y>|` over random pairs.
    pub fn adjoint_defect(&self, trials: usize, seed: u64) -> Result<f64> {
        let (dom, cod) = (self.domain(), self.codomain());
        let mut worst: f64 = 0.0;
        for t in 0..trials {
            let mut r = rng::stream_rng(seed, t as u64);
            let x = rng::normal_vector(&mut r, dom.dim());
            let y = rng::normal_vector(&mut r, cod.dim());
            let ax = self.apply(&x)?;
            let aty = self.adjoint_apply(&y)?;
            let lhs = cod.inner(&ax, &y);
            let rhs = dom.inner(&x, &aty);
            let scale = cod.norm(&ax) * cod.norm(&y) + dom.norm(&x) * dom.norm(&aty);
            if scale > 0.0 {
                worst = worst.max((lhs - rhs).abs() / scale);
            }
        }
        Ok(worst)
    }

    /// Largest relative value of `|<Ax,y> - <x,Ay>|` over random pairs.
    pub fn symmetry_defect(&self, trials: usize, seed: u64) -> Result<f64> {
        let space = self.domain();
        if !space.same_as(self.codomain()) {
            return Ok(f64::INFINITY);
        }
        let mut worst: f64 = 0.0;
        for t in 0..trials {
            let mut r = rng::stream_rng(seed, t as u64);
            let x = rng::normal_vector(&mut r, space.dim());
            let y = rng::normal_vector(&mut r, space.dim());
            let ax = self.apply(&x)?;
            let ay = self.apply(&y)?;
            let lhs = space.inner(&ax, &y);
            let rhs = space.inner(&x, &ay);
            let scale = space.norm(&ax) * space.norm(&y) + space.norm(&x) * space.norm(&ay);
            if scale > 0.0 {
                worst = worst.max((lhs - rhs).abs() / scale);
            }
        }
        Ok(worst)
    }

    /// Trace over an M-orthonormal basis of the (common) domain and codomain.
    pub fn trace(&self) -> Result<f64> {
        let space = self.domain();
        if !space.same_as(self.codomain()) {
            return Err(Error::UnsupportedTrace(format!(
                "operator maps a {}-dimensional space into a different {}-dimensional space",
                space.dim(),
                self.codomain().dim()
            )));
        }
        match self {
            OpExpr::Dense(d) => Ok(d.matrix.trace()),
            OpExpr::Diagonal(d) => Ok(d.values.sum()),
            OpExpr::LowRankSpectral(s) => Ok(s.sum()),
            OpExpr::Adjoint(inner) => inner.trace(),
            OpExpr::Composition(fs) => match low_rank_position(fs) {
                Some(j) => cyclic_trace(fs, j),
                None => self.probe_trace(),
            },
            OpExpr::ShiftedInverse(_) => self.probe_trace(),
        }
    }

    fn probe_trace(&self) -> Result<f64> {
        let n = self.domain().dim();
        let mut acc = 0.0;
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            acc += self.apply_unchecked(&e)?[j];
            e[j] = 0.0;
        }
        Ok(acc)
    }
}

fn low_rank_position(fs: &[OpExpr]) -> Option<usize> {
    fs.iter()
        .enumerate()
        .filter_map(|(i, f)| match f {
            OpExpr::LowRankSpectral(s) => Some((i, s.rank())),
            _ => None,
        })
        .min_by_key(|&(_, r)| r)
        .map(|(i, _)| i)
}

/// `tr(F_0 ... L ... F_{k-1}) = sum_i lambda_i <R e_i, e_i>` with `R` the
/// remaining factors rotated to sit in front of `L`.
fn cyclic_trace(fs: &[OpExpr], j: usize) -> Result<f64> {
    let OpExpr::LowRankSpectral(spec) = &fs[j] else {
        unreachable!("index comes from low_rank_position")
    };
    let rest: Vec<OpExpr> = fs[j + 1..].iter().chain(&fs[..j]).cloned().collect();
    let space = spec.space();
    let mut acc = 0.0;
    for (i, &l) in spec.values().iter().enumerate() {
        let e = spec.vector(i);
        let mut v = e.clone();
        for f in rest.iter().rev() {
            v = f.apply_unchecked(&v)?;
        }
        acc += l * space.inner(&v, &e);
    }
    Ok(acc)
}

fn same_node(a: &OpExpr, b: &OpExpr) -> bool {
    match (a, b) {
        (OpExpr::Dense(x), OpExpr::Dense(y)) => Arc::ptr_eq(x, y),
        (OpExpr::Diagonal(x), OpExpr::Diagonal(y)) => Arc::ptr_eq(x, y),
        (OpExpr::LowRankSpectral(x), OpExpr::LowRankSpectral(y)) => Arc::ptr_eq(x, y),
        (OpExpr::Composition(x), OpExpr::Composition(y)) => Arc::ptr_eq(x, y),
        (OpExpr::ShiftedInverse(x), OpExpr::ShiftedInverse(y)) => Arc::ptr_eq(x, y),
        (OpExpr::Adjoint(x), OpExpr::Adjoint(y)) => Arc::ptr_eq(x, y) || same_node(x, y),
        _ => false,
    }
}

/// Whether `a = b*` follows structurally.
fn adjoint_pair(a: &OpExpr, b: &OpExpr) -> bool {
    match (a, b) {
        (OpExpr::Adjoint(x), _) if same_node(x, b) => true,
        (_, OpExpr::Adjoint(y)) if same_node(a, y) => true,
        _ => same_node(a, b) && a.is_self_adjoint(),
    }
}

/// `max |(MK) - (MK)^T| / max |MK|` for a square coefficient array.
fn weighted_symmetry_defect(k: &DMatrix<f64>, space: &Space) -> f64 {
    let m = space.mass();
    let n = k.nrows();
    let mut scale: f64 = 0.0;
    let mut defect: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = m[i] * k[(i, j)];
            let b = m[j] * k[(j, i)];
            scale = scale.max(a.abs());
            defect = defect.max((a - b).abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        defect / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn diagonal_action() {
        let d = OpExpr::diagonal(v(&[2.0, 3.0]), Space::euclidean(2)).unwrap();
        assert_eq!(d.apply(&v(&[1.0, 1.0])).unwrap(), v(&[2.0, 3.0]));
        assert_eq!(d.adjoint_apply(&v(&[1.0, 1.0])).unwrap(), v(&[2.0, 3.0]));
    }

    #[test]
    fn single_factor_composition_is_the_factor() {
        let a = OpExpr::dense_square(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            Space::euclidean(2),
        )
        .unwrap();
        let c = OpExpr::compose(vec![a.clone()]).unwrap();
        let x = v(&[0.5, -1.5]);
        assert_eq!(c.apply(&x).unwrap(), a.apply(&x).unwrap());
    }

    #[test]
    fn composition_applies_right_to_left() {
        let s = Space::euclidean(2);
        let a = OpExpr::dense_square(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), s.clone()).unwrap();
        let d = OpExpr::diagonal(v(&[2.0, 3.0]), s).unwrap();
        // A (D x): swap after scaling
        let c = OpExpr::compose(vec![a, d]).unwrap();
        assert_eq!(c.apply(&v(&[1.0, 1.0])).unwrap(), v(&[3.0, 2.0]));
    }

    #[test]
    fn shifted_inverse_closed_form() {
        let d = OpExpr::diagonal(v(&[1.0, 3.0]), Space::euclidean(2)).unwrap();
        let inv = OpExpr::shifted_inverse(d, 1.0).unwrap();
        let y = inv.apply(&v(&[2.0, 4.0])).unwrap();
        assert!((y - v(&[1.0, 1.0])).norm() < 1e-15);
    }

    #[test]
    fn shifted_inverse_reports_singularity() {
        let d = OpExpr::diagonal(v(&[1.0, -1.0]), Space::euclidean(2)).unwrap();
        let inv = OpExpr::shifted_inverse(d, 1.0).unwrap();
        assert!(matches!(
            inv.apply(&v(&[1.0, 1.0])),
            Err(Error::SingularFactorization { .. })
        ));
    }

    #[test]
    fn dense_adjoint_uses_mass() {
        let space = Space::new(vec![2.0, 2.0]).unwrap();
        let k = OpExpr::dense(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            space,
            Space::euclidean(1),
        )
        .unwrap();
        assert_eq!(k.adjoint_apply(&v(&[4.0])).unwrap(), v(&[2.0, 0.0]));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let d = OpExpr::identity(Space::euclidean(3));
        assert!(matches!(
            d.apply(&v(&[1.0])),
            Err(Error::DimensionMismatch { expected: 3, found: 1 })
        ));
        let k = OpExpr::dense(DMatrix::zeros(1, 3), Space::euclidean(3), Space::euclidean(1)).unwrap();
        assert!(OpExpr::compose(vec![k.clone(), k]).is_err());
    }

    #[test]
    fn trace_examples() {
        let d = OpExpr::diagonal(v(&[1.0, 2.0, 3.0]), Space::euclidean(3)).unwrap();
        assert_eq!(d.trace().unwrap(), 6.0);
        let s = Spectrum::new(Space::euclidean(3), vec![5.0, 2.0], DMatrix::identity(3, 2)).unwrap();
        assert_eq!(OpExpr::low_rank(s).trace().unwrap(), 7.0);
    }

    #[test]
    fn trace_rejects_rectangular() {
        let k = OpExpr::dense(DMatrix::zeros(1, 3), Space::euclidean(3), Space::euclidean(1)).unwrap();
        assert!(matches!(k.trace(), Err(Error::UnsupportedTrace(_))));
    }

    #[test]
    fn structural_self_adjointness() {
        let space = Space::new(vec![1.0, 2.0]).unwrap();
        let g = OpExpr::dense(
            DMatrix::from_row_slice(1, 2, &[1.0, 3.0]),
            space.clone(),
            Space::euclidean(1),
        )
        .unwrap();
        let d = OpExpr::diagonal(v(&[1.0, 4.0]), space).unwrap();
        let h = OpExpr::compose(vec![d.clone(), g.adjoint(), g.clone(), d]).unwrap();
        assert!(h.is_self_adjoint());
        assert!(h.symmetry_defect(4, 1).unwrap() < 1e-14);
        let gram_squared = OpExpr::compose(vec![g.adjoint(), g.clone(), g.adjoint(), g.clone()]).unwrap();
        assert!(gram_squared.is_self_adjoint());
        let lopsided = OpExpr::compose(vec![g.adjoint(), g]).unwrap();
        assert!(lopsided.is_self_adjoint());
    }

    #[test]
    fn adjoint_of_adjoint_is_original() {
        let d = OpExpr::identity(Space::euclidean(2));
        assert!(matches!(d.adjoint().adjoint(), OpExpr::Diagonal(_)));
    }
}
