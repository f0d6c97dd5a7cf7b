//! Quantum primitives: density operators, unitaries, Kraus channels,
//! tensor products, partial trace and diagonal readout.
//!
//! States are validated on construction (hermiticity and trace always;
//! the eigenvalue floor only under debug assertions, since it needs a
//! full diagonalization). Sub-normalized states — the residue of
//! post-selection — carry their norm explicitly; renormalization is
//! always an explicit caller decision so that loss bookkeeping stays
//! visible.

use crate::error::{Error, Result};
use crate::linalg::{
    self, dagger, hermitian_eigenvalues, identity, kron, trace, CMat, CVec,
};
use crate::numerics::{EIGEN_FLOOR, STRUCTURAL_TOL};
use ndarray::Array2;
use num_complex::Complex64;

/// Trace-`norm` positive-semidefinite Hermitian operator.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    matrix: CMat,
    norm: f64,
}

impl DensityOperator {
    /// A normalized (trace-1) state.
    pub fn new(matrix: CMat) -> Result<Self> {
        Self::with_norm(matrix, 1.0)
    }

    /// A state of explicitly stated trace, e.g. a post-selected branch.
    pub fn with_norm(matrix: CMat, norm: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                context: "density operator",
                expected: matrix.nrows().max(1),
                found: matrix.ncols(),
            });
        }
        let herm = linalg::hermiticity_defect(&matrix);
        if herm > STRUCTURAL_TOL {
            return Err(Error::contract(format!(
                "density operator is not Hermitian (defect {herm:.2e})"
            )));
        }
        let tr = trace(&matrix);
        if (tr.re - norm).abs() > STRUCTURAL_TOL || tr.im.abs() > STRUCTURAL_TOL {
            return Err(Error::contract(format!(
                "density operator trace {tr} differs from stated norm {norm}"
            )));
        }
        let op = DensityOperator { matrix, norm };
        debug_assert!(
            op.min_eigenvalue() >= EIGEN_FLOOR,
            "density operator has eigenvalue {} below the accepted floor",
            op.min_eigenvalue()
        );
        Ok(op)
    }

    /// Skip validation for matrices produced by operations that preserve
    /// validity (unitary conjugation, Kraus sums of valid states).
    pub(crate) fn trusted(matrix: CMat, norm: f64) -> Self {
        DensityOperator { matrix, norm }
    }

    /// Pure computational-basis state |i⟩⟨i|.
    pub fn pure(dim: usize, i: usize) -> Self {
        assert!(i < dim, "basis index out of range");
        DensityOperator::trusted(linalg::basis_projector(dim, i), 1.0)
    }

    /// Pure state |v⟩⟨v| from a normalized ket.
    pub fn from_ket(v: &CVec) -> Result<Self> {
        Self::new(linalg::outer(v, v))
    }

    /// Maximally mixed state I/dim.
    pub fn maximally_mixed(dim: usize) -> Self {
        let m = identity(dim).mapv(|z| z / dim as f64);
        DensityOperator::trusted(m, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    /// Stated trace of the operator (1 for normalized states).
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.matrix)
            .first()
            .copied()
            .unwrap_or(0.0)
    }

    /// Explicitly rescale to trace 1.
    pub fn renormalized(&self) -> Result<Self> {
        if self.norm <= STRUCTURAL_TOL {
            return Err(Error::contract(
                "cannot renormalize a state of (near-)zero norm",
            ));
        }
        Ok(DensityOperator::trusted(
            self.matrix.mapv(|z| z / self.norm),
            1.0,
        ))
    }

    /// Real diagonal entries, with rounding-level negatives clipped to 0.
    pub fn diagonal_populations(&self) -> Vec<f64> {
        self.matrix
            .diag()
            .iter()
            .map(|z| {
                debug_assert!(z.re >= EIGEN_FLOOR, "population {} below floor", z.re);
                z.re.max(0.0)
            })
            .collect()
    }

    /// Tensor product; `self` owns the slow (major) index.
    pub fn tensor(&self, other: &DensityOperator) -> DensityOperator {
        DensityOperator::trusted(kron(&self.matrix, &other.matrix), self.norm * other.norm)
    }

    /// Trace out all factors not listed in `keep`.
    ///
    /// `dims` factorizes the space (slow index first); `keep` lists the
    /// factor positions to retain, in ascending order.
    pub fn partial_trace(&self, keep: &[usize], dims: &[usize]) -> Result<DensityOperator> {
        let total: usize = dims.iter().product();
        if total != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "partial trace factorization",
                expected: self.dim(),
                found: total,
            });
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) || keep.iter().any(|&k| k >= dims.len()) {
            return Err(Error::contract(
                "partial trace `keep` must be ascending factor positions",
            ));
        }
        let kept_dim: usize = keep.iter().map(|&k| dims[k]).product();
        let mut out: CMat = Array2::zeros((kept_dim, kept_dim));

        let decompose = |mut flat: usize| -> (usize, usize) {
            // Returns (kept sub-index, traced sub-index), both mixed-radix.
            let mut kept = 0usize;
            let mut traced = 0usize;
            for (pos, &d) in dims.iter().enumerate().rev() {
                let digit = flat % d;
                flat /= d;
                if keep.contains(&pos) {
                    kept += digit * Self::radix_weight(dims, keep, pos, true);
                } else {
                    traced += digit * Self::radix_weight(dims, keep, pos, false);
                }
            }
            (kept, traced)
        };

        for i in 0..total {
            let (ki, ti) = decompose(i);
            for j in 0..total {
                let (kj, tj) = decompose(j);
                if ti == tj {
                    out[[ki, kj]] += self.matrix[[i, j]];
                }
            }
        }
        Ok(DensityOperator::trusted(out, self.norm))
    }

    /// Mixed-radix weight of factor `pos` within the kept or traced group.
    fn radix_weight(dims: &[usize], keep: &[usize], pos: usize, kept_group: bool) -> usize {
        dims.iter()
            .enumerate()
            .filter(|(p, _)| *p > pos && keep.contains(p) == kept_group)
            .map(|(_, &d)| d)
            .product()
    }
}

/// Validated unitary operator.
#[derive(Debug, Clone)]
pub struct UnitaryOperator {
    matrix: CMat,
}

impl UnitaryOperator {
    pub fn new(matrix: CMat) -> Result<Self> {
        let defect = linalg::unitarity_defect(&matrix);
        if defect > STRUCTURAL_TOL {
            return Err(Error::contract(format!(
                "matrix is not unitary (defect {defect:.2e})"
            )));
        }
        Ok(UnitaryOperator { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        UnitaryOperator {
            matrix: identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    /// U ρ U†.
    pub fn apply(&self, rho: &DensityOperator) -> DensityOperator {
        debug_assert_eq!(self.dim(), rho.dim());
        let m = self.matrix.dot(rho.matrix()).dot(&dagger(&self.matrix));
        DensityOperator::trusted(m, rho.norm())
    }

    /// Tensor product; `self` owns the slow (major) index.
    pub fn tensor(&self, other: &UnitaryOperator) -> UnitaryOperator {
        UnitaryOperator {
            matrix: kron(&self.matrix, &other.matrix),
        }
    }

    /// U_other · U_self (apply `self` first).
    pub fn then(&self, other: &UnitaryOperator) -> UnitaryOperator {
        UnitaryOperator {
            matrix: other.matrix.dot(&self.matrix),
        }
    }

    pub fn dagger(&self) -> UnitaryOperator {
        UnitaryOperator {
            matrix: dagger(&self.matrix),
        }
    }
}

/// A channel or post-selected subchannel as a list of Kraus operators.
#[derive(Debug, Clone)]
pub struct KrausChannel {
    operators: Vec<CMat>,
    complete: bool,
}

impl KrausChannel {
    /// Validates each operator against K†K ≤ I, and completeness
    /// (Σ K†K = I) when `complete` is set.
    pub fn new(operators: Vec<CMat>, complete: bool) -> Result<Self> {
        if operators.is_empty() {
            return Err(Error::contract("a channel needs at least one operator"));
        }
        let din = operators[0].ncols();
        let mut sum: CMat = Array2::zeros((din, din));
        for k in &operators {
            if k.ncols() != din {
                return Err(Error::DimensionMismatch {
                    context: "Kraus operator input dimension",
                    expected: din,
                    found: k.ncols(),
                });
            }
            let ktk = dagger(k).dot(k);
            let top = hermitian_eigenvalues(&ktk).last().copied().unwrap_or(0.0);
            if top > 1.0 + STRUCTURAL_TOL {
                return Err(Error::contract(format!(
                    "Kraus operator exceeds the subchannel condition (max eig {top})"
                )));
            }
            sum += &ktk;
        }
        if complete {
            let defect = linalg::max_abs_diff(&sum, &identity(din));
            if defect > STRUCTURAL_TOL {
                return Err(Error::contract(format!(
                    "channel marked complete but Σ K†K deviates from identity by {defect:.2e}"
                )));
            }
        }
        Ok(KrausChannel {
            operators,
            complete,
        })
    }

    /// Identity channel in dimension `dim`.
    pub fn identity(dim: usize) -> Self {
        KrausChannel {
            operators: vec![identity(dim)],
            complete: true,
        }
    }

    pub fn operators(&self) -> &[CMat] {
        &self.operators
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn input_dim(&self) -> usize {
        self.operators[0].ncols()
    }

    /// Σ K ρ K†, plus the retained probability trace(result).
    ///
    /// For complete channels the retained probability equals the input
    /// norm; for subchannels it is the post-selection weight.
    pub fn apply(&self, rho: &DensityOperator) -> (DensityOperator, f64) {
        let dout = self.operators[0].nrows();
        let mut out: CMat = Array2::zeros((dout, dout));
        for k in self.operators() {
            out += &k.dot(rho.matrix()).dot(&dagger(k));
        }
        let retained = trace(&out).re;
        (DensityOperator::trusted(out, retained), retained)
    }

    /// Sequential composition: `self` first, then `after`.
    pub fn then(&self, after: &KrausChannel) -> KrausChannel {
        let ops = after
            .operators
            .iter()
            .flat_map(|b| self.operators.iter().map(move |a| b.dot(a)))
            .collect();
        KrausChannel {
            operators: ops,
            complete: self.complete && after.complete,
        }
    }

    /// Σ K†K, for completeness diagnostics.
    pub fn completeness_sum(&self) -> CMat {
        let din = self.input_dim();
        let mut sum: CMat = Array2::zeros((din, din));
        for k in &self.operators {
            sum += &dagger(k).dot(k);
        }
        sum
    }
}

/// Trace distance ½‖ρ − σ‖₁.
pub fn trace_distance(a: &DensityOperator, b: &DensityOperator) -> f64 {
    linalg::trace_distance(a.matrix(), b.matrix())
}
