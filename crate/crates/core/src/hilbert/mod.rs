//! Linear algebra on a discretized Hilbert space with a diagonal
//! quadrature weighting: operator expressions, weighted adjoints,
//! self-adjoint eigendecompositions, traces and `log det(I + A)`.

mod eig;
mod op;
mod space;
mod spectrum;

pub use eig::{eig_self_adjoint, EigRank, DEFAULT_EIG_TOL};
pub(crate) use eig::dense_eig;
pub use op::{DenseOp, DiagonalOp, OpExpr, ShiftedInverseOp, PIVOT_TOL};
pub use space::Space;
pub use spectrum::{Spectrum, NEGATIVE_TOL, ORTHONORMALITY_TOL};
