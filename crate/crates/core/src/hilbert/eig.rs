use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{OpExpr, Space, Spectrum};
use crate::error::{Error, Result};
use crate::rng;

/// Default residual tolerance for [`eig_self_adjoint`].
pub const DEFAULT_EIG_TOL: f64 = 1e-9;

/// Relative weighted-symmetry defect above which the dense path refuses an operator.
const SYMMETRY_TOL: f64 = 1e-8;

const LANCZOS_SEED: u64 = 0x1a2c_2052;

/// How many eigenpairs to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EigRank {
    Full,
    Leading(usize),
}

/// Leading eigenpairs of an operator self-adjoint in its space's inner product.
///
/// `Full` (and any request covering the whole space) goes through a dense
/// symmetric solver on `M^{1/2} K M^{-1/2}`; partial requests use Lanczos with
/// full reorthogonalization in the M inner product. Every returned pair
/// satisfies `|A e - lambda e| <= tol * max(1, |lambda|)`.
pub fn eig_self_adjoint(op: &OpExpr, rank: EigRank, tol: f64) -> Result<Spectrum> {
    let space = op.domain().clone();
    if !space.same_as(op.codomain()) {
        return Err(Error::NotSelfAdjoint {
            defect: f64::INFINITY,
        });
    }
    let n = space.dim();
    match rank {
        EigRank::Leading(0) => Ok(Spectrum::empty(space)),
        EigRank::Leading(k) if k < n => lanczos(op, k, tol),
        _ => {
            let spec = dense_eig(op)?;
            check_residuals(op, &spec, tol, n)?;
            Ok(spec)
        }
    }
}

/// Full spectrum through the symmetric similarity transform `B = M^{1/2} K M^{-1/2}`.
pub(crate) fn dense_eig(op: &OpExpr) -> Result<Spectrum> {
    let space = op.domain().clone();
    let n = space.dim();
    if n == 0 {
        return Ok(Spectrum::empty(space));
    }
    let k = op.to_dense()?;
    let root: Vec<f64> = space.mass().iter().map(|m| m.sqrt()).collect();
    let mut b = DMatrix::from_fn(n, n, |i, j| root[i] * k[(i, j)] / root[j]);
    let scale = b.amax();
    let defect = (&b - b.transpose()).amax();
    if scale > 0.0 && defect > SYMMETRY_TOL * scale {
        return Err(Error::NotSelfAdjoint {
            defect: defect / scale,
        });
    }
    b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)] / root[i]);
    Ok(Spectrum::sorted(space, eig.eigenvalues.iter().copied().collect(), vectors))
}

fn check_residuals(op: &OpExpr, spec: &Spectrum, tol: f64, iterations: usize) -> Result<()> {
    let space = spec.space();
    let mut converged = 0;
    for (i, &l) in spec.values().iter().enumerate() {
        let e = spec.vector(i);
        let r = op.apply(&e)? - &e * l;
        if space.norm(&r) <= tol * l.abs().max(1.0) {
            converged += 1;
        }
    }
    if converged < spec.rank() {
        return Err(Error::NonConvergence {
            requested: spec.rank(),
            converged,
            iterations,
        });
    }
    Ok(())
}

/// Lanczos with full reorthogonalization in the M inner product.
///
/// On breakdown (an invariant Krylov subspace) the iteration restarts from a
/// fresh random vector orthogonal to the current basis. A single Krylov
/// sequence sees each distinct eigenvalue once, so a repeated eigenvalue is
/// only resolved if a restart happens before the leading pairs converge; use
/// the dense path when multiplicities matter.
fn lanczos(op: &OpExpr, k: usize, tol: f64) -> Result<Spectrum> {
    let space = op.domain().clone();
    let n = space.dim();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n.min(4 * k + 8));
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut restarts = 0u64;
    let mut scale: f64 = 0.0;

    let Some(start) = fresh_direction(&space, &basis, restarts) else {
        return Ok(Spectrum::empty(space));
    };
    basis.push(start);

    let mut ritz: Option<(DVector<f64>, DMatrix<f64>)> = None;
    while basis.len() <= n {
        let j = basis.len() - 1;
        let v = &basis[j];
        let mut w = op.apply(v)?;
        let alpha = space.inner(&w, v);
        w -= v * alpha;
        if j > 0 {
            w -= &basis[j - 1] * betas[j - 1];
        }
        for _ in 0..2 {
            for q in &basis {
                let c = space.inner(&w, q);
                w -= q * c;
            }
        }
        alphas.push(alpha);
        let beta = space.norm(&w);
        scale = scale.max(alpha.abs() + beta);

        let (theta, s) = tridiagonal_eig(&alphas, &betas);
        let m = alphas.len();
        let converged = (0..k.min(m))
            .filter(|&i| (beta * s[(m - 1, i)]).abs() <= tol * theta[i].abs().max(1.0))
            .count();
        ritz = Some((theta, s));
        if m >= k && converged == k {
            break;
        }
        if basis.len() == n {
            break;
        }

        if beta <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            restarts += 1;
            match fresh_direction(&space, &basis, restarts) {
                Some(q) => {
                    betas.push(0.0);
                    basis.push(q);
                }
                None => break,
            }
        } else {
            betas.push(beta);
            basis.push(w / beta);
        }
    }

    let (theta, s) = ritz.expect("at least one Lanczos step");
    let m = alphas.len();
    let r = k.min(m);
    let mut vectors = DMatrix::zeros(n, r);
    for i in 0..r {
        let mut y = DVector::zeros(n);
        for (jj, q) in basis.iter().take(m).enumerate() {
            y += q * s[(jj, i)];
        }
        let nrm = space.norm(&y);
        vectors.set_column(i, &(y / nrm));
    }
    let spec = Spectrum::sorted(space, theta.iter().take(r).copied().collect(), vectors);
    check_residuals(op, &spec, tol, m)?;
    if spec.rank() < k {
        return Err(Error::NonConvergence {
            requested: k,
            converged: spec.rank(),
            iterations: m,
        });
    }
    Ok(spec)
}

/// Eigenpairs of the symmetric tridiagonal matrix, sorted descending.
fn tridiagonal_eig(alphas: &[f64], betas: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let m = alphas.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alphas[i]
        } else if i + 1 == j {
            betas[i]
        } else if j + 1 == i {
            betas[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let theta = DVector::from_iterator(m, order.iter().map(|&i| eig.eigenvalues[i]));
    let s = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    (theta, s)
}

/// A normalized random vector orthogonal to `basis`, or `None` once the basis spans the space.
fn fresh_direction(space: &Space, basis: &[DVector<f64>], stream: u64) -> Option<DVector<f64>> {
    if basis.len() >= space.dim() {
        return None;
    }
    let mut r = rng::stream_rng(LANCZOS_SEED, stream);
    let mut v = rng::normal_vector(&mut r, space.dim());
    let initial = space.norm(&v);
    for _ in 0..2 {
        for q in basis {
            let c = space.inner(&v, q);
            v -= q * c;
        }
    }
    let nrm = space.norm(&v);
    if nrm <= 1e-10 * initial {
        return None;
    }
    Some(v / nrm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_spectrum_is_canonical() {
        let d = OpExpr::diagonal(DVector::from_vec(vec![3.0, 1.0]), Space::euclidean(2)).unwrap();
        let s = eig_self_adjoint(&d, EigRank::Full, 1e-12).unwrap();
        assert_eq!(s.values(), &[3.0, 1.0]);
        assert!((s.vector(0)[0].abs() - 1.0).abs() < 1e-14);
        assert!((s.vector(1)[1].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_values() {
        let d = OpExpr::diagonal(DVector::from_vec(vec![2.5, 2.5]), Space::euclidean(2)).unwrap();
        let s = eig_self_adjoint(&d, EigRank::Full, 1e-12).unwrap();
        assert_eq!(s.values(), &[2.5, 2.5]);
        assert!(s.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn weighted_space_vectors_are_m_orthonormal() {
        let space = Space::new(vec![0.5, 2.0, 1.5]).unwrap();
        let d = OpExpr::diagonal(DVector::from_vec(vec![1.0, 5.0, 3.0]), space).unwrap();
        let s = eig_self_adjoint(&d, EigRank::Full, 1e-12).unwrap();
        assert_eq!(s.values(), &[5.0, 3.0, 1.0]);
        assert!(s.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn lanczos_leading_pairs_of_diagonal() {
        let vals: Vec<f64> = (0..40).map(|i| 1.0 / (1.0 + i as f64).powi(2)).collect();
        let d = OpExpr::diagonal(DVector::from_vec(vals.clone()), Space::uniform(40, 0.1).unwrap()).unwrap();
        let s = eig_self_adjoint(&d, EigRank::Leading(3), 1e-10).unwrap();
        assert_eq!(s.rank(), 3);
        for (got, want) in s.values().iter().zip(&vals) {
            assert!((got - want).abs() < 1e-10);
        }
        assert!(s.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn lanczos_restarts_past_a_small_invariant_subspace() {
        // rank-2 operator, five pairs requested: the first Krylov space breaks
        // down after three steps and the remaining pairs come from restarts
        let mut vals = vec![0.0; 10];
        vals[2] = 4.0;
        vals[7] = 1.5;
        let d = OpExpr::diagonal(DVector::from_vec(vals), Space::euclidean(10)).unwrap();
        let s = eig_self_adjoint(&d, EigRank::Leading(5), 1e-10).unwrap();
        assert_eq!(s.rank(), 5);
        assert!((s.values()[0] - 4.0).abs() < 1e-10);
        assert!((s.values()[1] - 1.5).abs() < 1e-10);
        assert!(s.values()[2..].iter().all(|l| l.abs() < 1e-10));
        assert!(s.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn non_symmetric_dense_is_rejected() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let op = OpExpr::dense_square(k, Space::euclidean(2)).unwrap();
        assert!(matches!(
            eig_self_adjoint(&op, EigRank::Full, 1e-10),
            Err(Error::NotSelfAdjoint { .. })
        ));
    }
}
