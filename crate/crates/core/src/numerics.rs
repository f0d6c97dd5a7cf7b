//! Global numeric tolerances.
//!
//! Two tiers: `STRUCTURAL_TOL` guards validated object invariants
//! (hermiticity, unitarity, channel completeness), `ALGEBRAIC_TOL` guards
//! exact algebraic identities checked in tests (trace preservation,
//! factorization round-trips). Eigenvalues of physical states may dip
//! slightly negative from rounding; anything above `EIGEN_FLOOR` is
//! accepted and clipped at readout.

/// Tolerance for validated structural invariants.
pub const STRUCTURAL_TOL: f64 = 1e-10;

/// Tolerance for exact algebraic identities.
pub const ALGEBRAIC_TOL: f64 = 1e-12;

/// Most negative eigenvalue accepted on a state.
pub const EIGEN_FLOOR: f64 = -1e-9;
