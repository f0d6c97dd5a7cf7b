//! The Leggett-Garg protocol: spin-(N−1)/2 rotation dynamics, the
//! dichotomic observable Q, measurement update rules, two-time settings,
//! correlations, the K3 string, τ-scans and the optimum search.
//!
//! Conventions: times in milliseconds, frequencies in kilohertz; the
//! evolution between two times separated by t is the x-rotation
//! U(t) = exp(i·2π·Ω·t·Sx), i.e. rotation angle φ = 2πΩt. This sign fixes
//! the calibration |0⟩ → |2⟩ at φ = π on the 3-level system and is pinned
//! by `evolution_maps_0_to_2_at_half_millisecond` below.

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::qop::{DensityOperator, KrausChannel, UnitaryOperator};
use ndarray::{Array1, Array2};
use num_complex::Complex64;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Largest system dimension the explorer supports.
pub const MAX_DIMENSION: usize = 32;

/// x-rotation family for an N-level system (spin (N−1)/2).
#[derive(Debug, Clone)]
pub struct RotationDynamics {
    omega_khz: f64,
    dim: usize,
    // Cached eigendecomposition of the real symmetric Sx.
    sx_eigenvalues: Vec<f64>,
    sx_eigenvectors: Array2<f64>,
}

impl RotationDynamics {
    pub fn new(omega_khz: f64, dim: usize) -> Result<Self> {
        if !(omega_khz > 0.0) {
            return Err(Error::parameter("omega_khz", "must be positive"));
        }
        if !(2..=MAX_DIMENSION).contains(&dim) {
            return Err(Error::parameter(
                "dim",
                format!("must be in 2..={MAX_DIMENSION}"),
            ));
        }
        let sx = Self::sx_matrix(dim);
        let (sx_eigenvalues, sx_eigenvectors) = linalg::sym_eigen(&sx);
        Ok(RotationDynamics {
            omega_khz,
            dim,
            sx_eigenvalues,
            sx_eigenvectors,
        })
    }

    /// The 3-level system at the reference drive frequency of 1 kHz.
    pub fn reference_qutrit() -> Self {
        Self::new(1.0, 3).expect("reference parameters are valid")
    }

    pub fn omega_khz(&self) -> f64 {
        self.omega_khz
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spin-(N−1)/2 x operator: tridiagonal with
    /// (Sx)_{k,k+1} = ½·√((k+1)(N−1−k)).
    fn sx_matrix(dim: usize) -> Array2<f64> {
        let mut sx = Array2::zeros((dim, dim));
        for k in 0..dim - 1 {
            let v = 0.5 * (((k + 1) * (dim - 1 - k)) as f64).sqrt();
            sx[[k, k + 1]] = v;
            sx[[k + 1, k]] = v;
        }
        sx
    }

    /// Rotation angle accumulated over `t_ms` milliseconds.
    pub fn angle(&self, t_ms: f64) -> f64 {
        2.0 * std::f64::consts::PI * self.omega_khz * t_ms
    }

    /// U(t) = exp(i·φ(t)·Sx) with φ = 2πΩt; U(0) = identity.
    pub fn evolution_unitary(&self, t_ms: f64) -> UnitaryOperator {
        let phi = self.angle(t_ms);
        let n = self.dim;
        let v = &self.sx_eigenvectors;
        // U = V · diag(e^{iφλ}) · Vᵀ with V real orthogonal.
        let mut u: CMat = Array2::zeros((n, n));
        for (k, &lambda) in self.sx_eigenvalues.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, phi * lambda);
            for i in 0..n {
                let vik = v[[i, k]];
                if vik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    u[[i, j]] += phase * vik * v[[j, k]];
                }
            }
        }
        debug_assert!(linalg::unitarity_defect(&u) < 1e-12);
        UnitaryOperator::new(u).expect("matrix exponential of i·φ·Sx is unitary")
    }
}

/// Measurement times t1, t2 = t1+τ, t3 = t1+2τ.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    t1_ms: f64,
    tau_ms: f64,
}

impl Schedule {
    pub fn new(t1_ms: f64, tau_ms: f64) -> Result<Self> {
        if !(t1_ms >= 0.0) {
            return Err(Error::parameter("t1_ms", "must be non-negative"));
        }
        if !(tau_ms > 0.0) {
            return Err(Error::parameter(
                "tau_ms",
                "must be positive (coincident measurement times are excluded)",
            ));
        }
        Ok(Schedule { t1_ms, tau_ms })
    }

    /// The reference schedule: t1 = 0.5 ms with the given spacing.
    pub fn reference(tau_ms: f64) -> Result<Self> {
        Self::new(0.5, tau_ms)
    }

    pub fn t1_ms(&self) -> f64 {
        self.t1_ms
    }

    pub fn tau_ms(&self) -> f64 {
        self.tau_ms
    }

    pub fn t2_ms(&self) -> f64 {
        self.t1_ms + self.tau_ms
    }

    pub fn t3_ms(&self) -> f64 {
        self.t1_ms + 2.0 * self.tau_ms
    }

    pub fn time(&self, index: TimeIndex) -> f64 {
        match index {
            TimeIndex::T1 => self.t1_ms(),
            TimeIndex::T2 => self.t2_ms(),
            TimeIndex::T3 => self.t3_ms(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeIndex {
    T1,
    T2,
    T3,
}

/// Which two of the three times a setting measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettingPair {
    T1T2,
    T2T3,
    T1T3,
}

impl SettingPair {
    pub const ALL: [SettingPair; 3] = [SettingPair::T1T2, SettingPair::T2T3, SettingPair::T1T3];

    pub fn times(&self) -> (TimeIndex, TimeIndex) {
        match self {
            SettingPair::T1T2 => (TimeIndex::T1, TimeIndex::T2),
            SettingPair::T2T3 => (TimeIndex::T2, TimeIndex::T3),
            SettingPair::T1T3 => (TimeIndex::T1, TimeIndex::T3),
        }
    }

    /// Parses the two-digit form used on the command line: 12, 23, 13.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "12" => Ok(SettingPair::T1T2),
            "23" => Ok(SettingPair::T2T3),
            "13" => Ok(SettingPair::T1T3),
            other => Err(Error::parameter(
                "pair",
                format!("expected one of 12, 23, 13; got `{other}`"),
            )),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SettingPair::T1T2 => "12",
            SettingPair::T2T3 => "23",
            SettingPair::T1T3 => "13",
        }
    }
}

/// Dichotomic observable: a partition of the basis into −1 and +1 states.
#[derive(Debug, Clone)]
pub struct DichotomicObservable {
    dim: usize,
    minus: Vec<bool>,
}

impl DichotomicObservable {
    pub fn new(dim: usize, minus_states: &[usize]) -> Result<Self> {
        if minus_states.is_empty() || minus_states.len() >= dim {
            return Err(Error::parameter(
                "minus_states",
                "must be a non-empty proper subset of the basis",
            ));
        }
        let mut minus = vec![false; dim];
        for &i in minus_states {
            if i >= dim {
                return Err(Error::parameter(
                    "minus_states",
                    format!("index {i} outside dimension {dim}"),
                ));
            }
            minus[i] = true;
        }
        Ok(DichotomicObservable { dim, minus })
    }

    /// Q = −|0⟩⟨0| + Σ_{i>0} |i⟩⟨i|, the protocol's default.
    pub fn ground_vs_rest(dim: usize) -> Self {
        Self::new(dim, &[0]).expect("dim >= 2 always admits this observable")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// +1 or −1 for basis state `i`.
    pub fn value(&self, i: usize) -> f64 {
        if self.minus[i] {
            -1.0
        } else {
            1.0
        }
    }

    /// Projector onto the −1 (arg false) or +1 (arg true) eigenspace.
    pub fn eigenspace_projector(&self, plus: bool) -> CMat {
        let mut p: CMat = Array2::zeros((self.dim, self.dim));
        for i in 0..self.dim {
            if self.minus[i] != plus {
                p[[i, i]] = linalg::C_ONE;
            }
        }
        p
    }
}

/// How a measurement updates the state.
#[derive(Debug, Clone)]
pub enum UpdateRule {
    /// Two projectors onto the Q eigenspaces; coherence inside each
    /// eigenspace survives.
    Luders,
    /// N rank-1 projectors |i⟩⟨i| — the update realized by the
    /// ancilla-based negative-result scheme.
    DephasingInrm,
    /// Caller-supplied complete channel; each operator is one branch.
    CustomKraus(KrausChannel),
}

impl UpdateRule {
    pub fn label(&self) -> &'static str {
        match self {
            UpdateRule::Luders => "luders",
            UpdateRule::DephasingInrm => "inrm",
            UpdateRule::CustomKraus(_) => "custom",
        }
    }
}

/// One branch of a measurement: its Q outcome, the (sub-normalized)
/// post-measurement state and the branch probability.
#[derive(Debug, Clone)]
pub struct MeasurementBranch {
    pub index: usize,
    /// Expectation of Q in the branch: exactly ±1 for projective branches.
    pub sign: f64,
    pub state: DensityOperator,
    pub probability: f64,
}

/// Applies the update rule, returning every branch (including
/// zero-probability ones, so the branch count is rule-determined).
pub fn measure_with_update(
    rho: &DensityOperator,
    rule: &UpdateRule,
    q: &DichotomicObservable,
) -> Result<Vec<MeasurementBranch>> {
    if rho.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            context: "measurement",
            expected: q.dim(),
            found: rho.dim(),
        });
    }
    let projected = |p: &CMat| -> (DensityOperator, f64) {
        let m = p.dot(rho.matrix()).dot(&linalg::dagger(p));
        let prob = linalg::trace(&m).re;
        (DensityOperator::trusted(m, prob), prob)
    };
    let branches = match rule {
        UpdateRule::Luders => {
            let mut out = Vec::with_capacity(2);
            for (index, plus) in [false, true].into_iter().enumerate() {
                let (state, probability) = projected(&q.eigenspace_projector(plus));
                out.push(MeasurementBranch {
                    index,
                    sign: if plus { 1.0 } else { -1.0 },
                    state,
                    probability,
                });
            }
            out
        }
        UpdateRule::DephasingInrm => (0..rho.dim())
            .map(|k| {
                let (state, probability) = projected(&linalg::basis_projector(rho.dim(), k));
                MeasurementBranch {
                    index: k,
                    sign: q.value(k),
                    state,
                    probability,
                }
            })
            .collect(),
        UpdateRule::CustomKraus(ch) => {
            if ch.input_dim() != rho.dim() {
                return Err(Error::DimensionMismatch {
                    context: "custom measurement channel",
                    expected: rho.dim(),
                    found: ch.input_dim(),
                });
            }
            ch.operators()
                .iter()
                .enumerate()
                .map(|(index, k)| {
                    let m = k.dot(rho.matrix()).dot(&linalg::dagger(k));
                    let probability = linalg::trace(&m).re;
                    let state = DensityOperator::trusted(m, probability);
                    // Branch Q expectation; ±1 whenever the branch lies
                    // in a single eigenspace.
                    let pops = state.diagonal_populations();
                    let mass: f64 = pops.iter().sum();
                    let sign = if mass > 1e-15 {
                        pops.iter()
                            .enumerate()
                            .map(|(i, p)| q.value(i) * p)
                            .sum::<f64>()
                            / mass
                    } else {
                        0.0
                    };
                    MeasurementBranch {
                        index,
                        sign,
                        state,
                        probability,
                    }
                })
                .collect()
        }
    };
    let total: f64 = branches.iter().map(|b| b.probability).sum();
    if (total - rho.norm()).abs() > 1e-10 {
        return Err(Error::contract(format!(
            "measurement branches sum to {total}, expected {}",
            rho.norm()
        )));
    }
    Ok(branches)
}

/// Joint probability table of one two-time setting.
#[derive(Debug, Clone)]
pub struct SettingResult {
    joint: Array2<f64>,
    retained_mass: f64,
    times_ms: (f64, f64),
}

impl SettingResult {
    pub fn new(joint: Array2<f64>, retained_mass: f64, times_ms: (f64, f64)) -> Result<Self> {
        if joint.iter().any(|&p| p < -1e-9) {
            return Err(Error::contract("joint table has a negative entry"));
        }
        Ok(SettingResult {
            joint,
            retained_mass,
            times_ms,
        })
    }

    /// P(first outcome i, second outcome j).
    pub fn joint(&self) -> &Array2<f64> {
        &self.joint
    }

    pub fn probability(&self, i: usize, j: usize) -> f64 {
        self.joint[[i, j]]
    }

    /// Total post-selected probability mass in the table.
    pub fn retained_mass(&self) -> f64 {
        self.retained_mass
    }

    pub fn times_ms(&self) -> (f64, f64) {
        self.times_ms
    }

    /// Marginal distribution of the first measurement.
    pub fn first_marginal(&self) -> Vec<f64> {
        self.joint
            .rows()
            .into_iter()
            .map(|row| row.sum())
            .collect()
    }
}

/// Runs one setting: evolve to the earlier time, branch per the update
/// rule, evolve each branch to the later time, read populations.
///
/// Rows are attributed to basis outcomes by the branch populations at the
/// first measurement; for the negative-result rule each branch is a
/// single basis state, so this is the plain branch bookkeeping. For the
/// (t1,t3) pair nothing happens at t2.
pub fn run_setting(
    dynamics: &RotationDynamics,
    schedule: &Schedule,
    rule: &UpdateRule,
    q: &DichotomicObservable,
    pair: SettingPair,
    initial: &DensityOperator,
) -> Result<SettingResult> {
    let n = dynamics.dim();
    if initial.dim() != n {
        return Err(Error::DimensionMismatch {
            context: "run_setting initial state",
            expected: n,
            found: initial.dim(),
        });
    }
    let (first, second) = pair.times();
    let (ta, tb) = (schedule.time(first), schedule.time(second));

    let state_a = dynamics.evolution_unitary(ta).apply(initial);
    let branches = measure_with_update(&state_a, rule, q)?;
    let u_gap = dynamics.evolution_unitary(tb - ta);

    let mut joint = Array2::zeros((n, n));
    let mut retained = 0.0;
    for branch in &branches {
        if branch.probability <= 1e-300 {
            continue;
        }
        retained += branch.probability;
        let row_weights = branch.state.diagonal_populations();
        let pops_b = u_gap.apply(&branch.state).diagonal_populations();
        for (i, wi) in row_weights.iter().enumerate() {
            if *wi == 0.0 {
                continue;
            }
            let scale = wi / branch.probability;
            for (j, pj) in pops_b.iter().enumerate() {
                joint[[i, j]] += scale * pj;
            }
        }
    }
    SettingResult::new(joint, retained, (ta, tb))
}

/// ⟨Q_a Q_b⟩ = Σ_{i,j} q(i)·q(j)·P(i,j) over all table entries.
pub fn correlation(result: &SettingResult, q: &DichotomicObservable) -> f64 {
    let mut c = 0.0;
    for ((i, j), p) in result.joint().indexed_iter() {
        c += q.value(i) * q.value(j) * p;
    }
    c
}

/// The three correlations and their K3 combination.
#[derive(Debug, Clone, Copy)]
pub struct K3Report {
    pub c12: f64,
    pub c23: f64,
    pub c13: f64,
    pub k3: f64,
}

impl K3Report {
    pub fn from_correlations(c12: f64, c23: f64, c13: f64) -> Result<Self> {
        for (name, c) in [("c12", c12), ("c23", c23), ("c13", c13)] {
            if c.abs() > 1.0 + 1e-9 {
                return Err(Error::contract(format!(
                    "correlation {name} = {c} outside [-1, 1]"
                )));
            }
        }
        Ok(K3Report {
            c12,
            c23,
            c13,
            k3: c12 + c23 - c13,
        })
    }
}

/// Runs all three settings and assembles K3 = c12 + c23 − c13.
pub fn k3(
    dynamics: &RotationDynamics,
    schedule: &Schedule,
    rule: &UpdateRule,
    q: &DichotomicObservable,
    initial: &DensityOperator,
) -> Result<K3Report> {
    let mut c = [0.0; 3];
    for (slot, pair) in SettingPair::ALL.iter().enumerate() {
        let result = run_setting(dynamics, schedule, rule, q, *pair, initial)?;
        c[slot] = correlation(&result, q);
    }
    K3Report::from_correlations(c[0], c[1], c[2])
}

/// K3 for the default protocol configuration (|0⟩ start, ground-vs-rest
/// observable) at one τ.
pub fn k3_at_tau(dynamics: &RotationDynamics, t1_ms: f64, rule: &UpdateRule, tau_ms: f64) -> Result<f64> {
    let schedule = Schedule::new(t1_ms, tau_ms)?;
    let q = DichotomicObservable::ground_vs_rest(dynamics.dim());
    let initial = DensityOperator::pure(dynamics.dim(), 0);
    Ok(k3(dynamics, &schedule, rule, &q, &initial)?.k3)
}

/// Inclusive arithmetic grid for τ-scans, in milliseconds.
pub fn tau_grid(start_ms: f64, stop_ms: f64, step_ms: f64) -> Result<Vec<f64>> {
    if !(start_ms > 0.0) {
        return Err(Error::parameter("tau_grid", "start must be positive"));
    }
    if !(step_ms > 0.0) {
        return Err(Error::parameter("tau_grid", "step must be positive"));
    }
    if stop_ms < start_ms {
        return Err(Error::parameter("tau_grid", "stop must be >= start"));
    }
    let count = ((stop_ms - start_ms) / step_ms + 0.5).floor() as usize + 1;
    Ok((0..count).map(|k| start_ms + k as f64 * step_ms).collect())
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::contract("τ grid must not be empty"));
    }
    if grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::contract("τ grid points must be positive"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract("τ grid must be strictly increasing"));
    }
    Ok(())
}

/// K3 at every grid point, in grid order. Uses the worker pool when the
/// `parallel` feature is enabled.
pub fn scan_tau(
    dynamics: &RotationDynamics,
    t1_ms: f64,
    rule: &UpdateRule,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    validate_grid(grid)?;
    #[cfg(feature = "parallel")]
    {
        grid.par_iter()
            .map(|&tau| Ok((tau, k3_at_tau(dynamics, t1_ms, rule, tau)?)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        scan_tau_sequential(dynamics, t1_ms, rule, grid)
    }
}

/// Single-threaded scan; the baseline the parallel path must match.
pub fn scan_tau_sequential(
    dynamics: &RotationDynamics,
    t1_ms: f64,
    rule: &UpdateRule,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    validate_grid(grid)?;
    grid.iter()
        .map(|&tau| Ok((tau, k3_at_tau(dynamics, t1_ms, rule, tau)?)))
        .collect()
}

/// Result of the τ optimum search.
#[derive(Debug, Clone, Copy)]
pub struct OptimizeResult {
    pub tau_ms: f64,
    pub k3: f64,
}

/// Best τ and K3 for the N-level rotation family (Ω = 1 kHz, t1 = 0.5 ms,
/// ground-vs-rest observable, |0⟩ start): 1 µs coarse grid over (0, 0.5]
/// then golden-section refinement to 1e-6 ms. Grid ties break toward
/// smaller τ.
pub fn optimize_k3(dim: usize, rule: &UpdateRule) -> Result<OptimizeResult> {
    let dynamics = RotationDynamics::new(1.0, dim)?;
    let t1_ms = 0.5;
    let eval = |tau: f64| -> Result<f64> { k3_at_tau(&dynamics, t1_ms, rule, tau) };

    let step = 0.001;
    let grid = tau_grid(step, 0.5, step)?;
    let mut best_idx = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (idx, &tau) in grid.iter().enumerate() {
        let v = eval(tau)?;
        if v > best_val {
            best_val = v;
            best_idx = idx;
        }
    }
    let lo = if best_idx == 0 { step / 2.0 } else { grid[best_idx - 1] };
    let hi = if best_idx + 1 < grid.len() {
        grid[best_idx + 1]
    } else {
        grid[best_idx]
    };
    let (tau_ms, k3) = golden_section_max(&eval, lo, hi, 1e-6)?;
    Ok(OptimizeResult { tau_ms, k3 })
}

/// Golden-section search for the maximum of a smooth unimodal function on
/// [a, b]; ties shrink toward the left end.
fn golden_section_max(
    f: &dyn Fn(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    Ok((mid, f(mid)?))
}

/// K3 assembled from a classical hidden-state model: `initial` is the
/// hidden-state distribution at t1, `step12`/`step23` are row-stochastic
/// transition matrices for the two intervals, `signs` assigns ±1 to each
/// hidden state. Macrorealism with non-invasive readout bounds this by 1.
pub fn classical_k3(
    initial: &[f64],
    step12: &Array2<f64>,
    step23: &Array2<f64>,
    signs: &[f64],
) -> Result<f64> {
    let n = initial.len();
    for (name, m) in [("step12", step12), ("step23", step23)] {
        if m.dim() != (n, n) {
            return Err(Error::DimensionMismatch {
                context: "classical transition matrix",
                expected: n,
                found: m.nrows(),
            });
        }
        for row in m.rows() {
            let s: f64 = row.sum();
            if row.iter().any(|&p| p < -1e-12) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::contract(format!("{name} is not row-stochastic")));
            }
        }
    }
    if signs.len() != n || signs.iter().any(|s| s.abs() != 1.0) {
        return Err(Error::contract("signs must be ±1 per hidden state"));
    }
    let p1 = Array1::from(initial.to_vec());
    let q = Array1::from(signs.to_vec());
    let p2 = p1.dot(step12);
    let step13 = step12.dot(step23);

    let corr = |p: &Array1<f64>, t: &Array2<f64>| -> f64 {
        let mut c = 0.0;
        for i in 0..n {
            for j in 0..n {
                c += p[i] * t[[i, j]] * q[i] * q[j];
            }
        }
        c
    };
    Ok(corr(&p1, step12) + corr(&p2, step23) - corr(&p1, &step13))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn reference() -> (RotationDynamics, DichotomicObservable, DensityOperator) {
        let dynamics = RotationDynamics::reference_qutrit();
        let q = DichotomicObservable::ground_vs_rest(3);
        let initial = DensityOperator::pure(3, 0);
        (dynamics, q, initial)
    }

    #[test]
    fn evolution_at_zero_time_is_identity() {
        let (dynamics, _, _) = reference();
        let u = dynamics.evolution_unitary(0.0);
        assert!(linalg::max_abs_diff(u.matrix(), &linalg::identity(3)) < 1e-14);
    }

    #[test]
    fn evolution_maps_0_to_2_at_half_millisecond() {
        // φ = π rotation: the calibration pinning the sign convention.
        let (dynamics, _, initial) = reference();
        let state = dynamics.evolution_unitary(0.5).apply(&initial);
        let pops = state.diagonal_populations();
        assert_abs_diff_eq!(pops[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pops[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pops[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn evolution_matches_closed_form_for_three_levels() {
        // For spin 1: U = I + i·sinφ·Sx + (cosφ−1)·Sx².
        let (dynamics, _, _) = reference();
        let tau = 0.137;
        let phi = dynamics.angle(tau);
        let s = 1.0 / 2f64.sqrt();
        let sx = ndarray::array![[0.0, s, 0.0], [s, 0.0, s], [0.0, s, 0.0]];
        let sx2 = sx.dot(&sx);
        let mut expected: CMat = Array2::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                let re = if i == j { 1.0 } else { 0.0 } + (phi.cos() - 1.0) * sx2[[i, j]];
                let im = phi.sin() * sx[[i, j]];
                expected[[i, j]] = Complex64::new(re, im);
            }
        }
        let u = dynamics.evolution_unitary(tau);
        assert!(linalg::max_abs_diff(u.matrix(), &expected) < 1e-13);
    }

    #[test]
    fn populations_after_quarterish_rotation_match_reference_row() {
        // Acting on |2⟩ for 0.208 ms: the transition row every later
        // cross-check reuses.
        let (dynamics, _, _) = reference();
        let from2 = DensityOperator::pure(3, 2);
        let pops = dynamics
            .evolution_unitary(0.208)
            .apply(&from2)
            .diagonal_populations();
        assert_abs_diff_eq!(pops[0], 0.1364, epsilon = 1e-3);
        assert_abs_diff_eq!(pops[1], 0.4659, epsilon = 1e-3);
        assert_abs_diff_eq!(pops[2], 0.3977, epsilon = 1e-3);
    }

    #[test]
    fn luders_on_ground_state_returns_certain_minus_branch() {
        let (_, q, initial) = reference();
        let branches = measure_with_update(&initial, &UpdateRule::Luders, &q).unwrap();
        assert_eq!(branches.len(), 2);
        assert_eq!(branches[0].sign, -1.0);
        assert_abs_diff_eq!(branches[0].probability, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(branches[1].probability, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dephasing_rule_splits_uniform_superposition_evenly() {
        let third = Complex64::new(1.0 / 3.0, 0.0);
        let rho = DensityOperator::new(Array2::from_elem((3, 3), third)).unwrap();
        let q = DichotomicObservable::ground_vs_rest(3);
        let branches = measure_with_update(&rho, &UpdateRule::DephasingInrm, &q).unwrap();
        assert_eq!(branches.len(), 3);
        for (k, b) in branches.iter().enumerate() {
            assert_abs_diff_eq!(b.probability, 1.0 / 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(b.state.matrix()[[k, k]].re, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn luders_keeps_coherence_inside_plus_subspace() {
        let h = Complex64::new(0.5, 0.0);
        let mut m: CMat = Array2::zeros((3, 3));
        m[[1, 1]] = h;
        m[[2, 2]] = h;
        m[[1, 2]] = h;
        m[[2, 1]] = h;
        let rho = DensityOperator::new(m).unwrap();
        let q = DichotomicObservable::ground_vs_rest(3);
        let branches = measure_with_update(&rho, &UpdateRule::Luders, &q).unwrap();
        let plus = &branches[1];
        assert_abs_diff_eq!(plus.probability, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plus.state.matrix()[[1, 2]].re, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn setting_t1_t2_reproduces_reference_rows() {
        let (dynamics, q, initial) = reference();
        let schedule = Schedule::reference(0.208).unwrap();
        let result = run_setting(
            &dynamics,
            &schedule,
            &UpdateRule::DephasingInrm,
            &q,
            SettingPair::T1T2,
            &initial,
        )
        .unwrap();
        // First measurement is certain to find |2⟩.
        for j in 0..3 {
            assert_abs_diff_eq!(result.probability(0, j), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(result.probability(1, j), 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(result.probability(2, 0), 0.1364, epsilon = 1e-3);
        assert_abs_diff_eq!(result.probability(2, 1), 0.4659, epsilon = 1e-3);
        assert_abs_diff_eq!(result.probability(2, 2), 0.3977, epsilon = 1e-3);
        assert_abs_diff_eq!(result.retained_mass(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn setting_t1_t3_reproduces_reference_rows() {
        let (dynamics, q, initial) = reference();
        let schedule = Schedule::reference(0.208).unwrap();
        let result = run_setting(
            &dynamics,
            &schedule,
            &UpdateRule::DephasingInrm,
            &q,
            SettingPair::T1T3,
            &initial,
        )
        .unwrap();
        assert_abs_diff_eq!(result.probability(2, 0), 0.8682, epsilon = 1e-3);
        assert_abs_diff_eq!(result.probability(2, 1), 0.1272, epsilon = 1e-3);
        assert_abs_diff_eq!(result.probability(2, 2), 0.0046, epsilon = 1e-3);
    }

    #[test]
    fn setting_t2_t3_matches_chained_marginals() {
        // Entry (0,0) is 0.0541 by marginal chaining; the whole table
        // follows from composing the single-step transition matrix.
        let (dynamics, q, initial) = reference();
        let schedule = Schedule::reference(0.208).unwrap();
        let result = run_setting(
            &dynamics,
            &schedule,
            &UpdateRule::DephasingInrm,
            &q,
            SettingPair::T2T3,
            &initial,
        )
        .unwrap();
        let expected = [
            [0.0541, 0.0636, 0.0186],
            [0.2170, 0.0318, 0.2170],
            [0.0542, 0.1853, 0.1582],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(result.probability(i, j), expected[i][j], epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn first_marginal_is_shared_between_settings_with_common_time() {
        let (dynamics, q, initial) = reference();
        let schedule = Schedule::reference(0.31).unwrap();
        for rule in [UpdateRule::Luders, UpdateRule::DephasingInrm] {
            let r12 = run_setting(&dynamics, &schedule, &rule, &q, SettingPair::T1T2, &initial)
                .unwrap();
            let r13 = run_setting(&dynamics, &schedule, &rule, &q, SettingPair::T1T3, &initial)
                .unwrap();
            for (a, b) in r12.first_marginal().iter().zip(r13.first_marginal()) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn unmeasured_gap_equals_single_two_step_evolution() {
        // The (t1,t3) setting must be indistinguishable from evolving
        // straight through 2τ after the first measurement.
        let (dynamics, q, initial) = reference();
        let schedule = Schedule::reference(0.208).unwrap();
        let result = run_setting(
            &dynamics,
            &schedule,
            &UpdateRule::DephasingInrm,
            &q,
            SettingPair::T1T3,
            &initial,
        )
        .unwrap();
        let state_a = dynamics.evolution_unitary(0.5).apply(&initial);
        let pops_direct = dynamics
            .evolution_unitary(2.0 * 0.208)
            .apply(&state_a)
            .diagonal_populations();
        // First measurement finds |2⟩ with certainty, so row 2 must match
        // the direct evolution exactly.
        for j in 0..3 {
            assert_abs_diff_eq!(result.probability(2, j), pops_direct[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn k3_peaks_at_reference_tau() {
        let (dynamics, q, initial) = reference();
        let schedule = Schedule::reference(0.208).unwrap();
        let report = k3(&dynamics, &schedule, &UpdateRule::DephasingInrm, &q, &initial).unwrap();
        assert_abs_diff_eq!(report.k3, 1.7566, epsilon = 1e-3);
        // Frozen high-precision value from an independent implementation.
        assert_abs_diff_eq!(report.k3, 1.756473660611142, epsilon = 1e-9);
        assert_abs_diff_eq!(report.c12, 0.7268224, epsilon = 1e-6);
        assert_abs_diff_eq!(report.c23, 0.2925460, epsilon = 1e-6);
        assert_abs_diff_eq!(report.c13, -0.7371053, epsilon = 1e-6);
        assert_abs_diff_eq!(
            report.k3,
            report.c12 + report.c23 - report.c13,
            epsilon = 0.0
        );
    }

    #[test]
    fn k3_degenerates_to_one_for_vanishing_spacing() {
        let (dynamics, q, initial) = reference();
        let schedule = Schedule::reference(1e-9).unwrap();
        let report = k3(&dynamics, &schedule, &UpdateRule::DephasingInrm, &q, &initial).unwrap();
        assert_abs_diff_eq!(report.c12, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(report.c23, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(report.c13, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(report.k3, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn luders_scan_stays_under_its_ceiling_and_below_dephasing() {
        let dynamics = RotationDynamics::reference_qutrit();
        let grid = tau_grid(0.01, 0.5, 0.005).unwrap();
        let luders = scan_tau(&dynamics, 0.5, &UpdateRule::Luders, &grid).unwrap();
        let inrm = scan_tau(&dynamics, 0.5, &UpdateRule::DephasingInrm, &grid).unwrap();
        let max_l = luders.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let max_i = inrm.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        assert!(max_l <= 1.5 + 1e-6, "Lüders max {max_l} exceeds 1.5");
        assert!(max_i > max_l, "dephasing update must dominate for N=3");
    }

    #[test]
    fn luders_grid_maximum_matches_frozen_value() {
        let dynamics = RotationDynamics::reference_qutrit();
        let grid = tau_grid(0.001, 0.5, 0.001).unwrap();
        let scan = scan_tau(&dynamics, 0.5, &UpdateRule::Luders, &grid).unwrap();
        let max = scan.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(max, 1.3480665, epsilon = 1e-6);
    }

    #[test]
    fn parallel_and_sequential_scans_agree_exactly() {
        let dynamics = RotationDynamics::reference_qutrit();
        let grid = tau_grid(0.02, 0.3, 0.004).unwrap();
        let a = scan_tau(&dynamics, 0.5, &UpdateRule::DephasingInrm, &grid).unwrap();
        let b = scan_tau_sequential(&dynamics, 0.5, &UpdateRule::DephasingInrm, &grid).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1, y.1, "parallel scan must be bitwise reproducible");
        }
    }

    #[test]
    fn scan_rejects_bad_grids() {
        let dynamics = RotationDynamics::reference_qutrit();
        assert!(scan_tau(&dynamics, 0.5, &UpdateRule::Luders, &[]).is_err());
        assert!(scan_tau(&dynamics, 0.5, &UpdateRule::Luders, &[0.0, 0.1]).is_err());
        assert!(scan_tau(&dynamics, 0.5, &UpdateRule::Luders, &[0.2, 0.1]).is_err());
    }

    #[test]
    fn optimizer_finds_the_dephasing_peak() {
        let best = optimize_k3(3, &UpdateRule::DephasingInrm).unwrap();
        assert_abs_diff_eq!(best.k3, 1.7566, epsilon = 5e-4);
        assert_abs_diff_eq!(best.k3, 1.7565025, epsilon = 1e-6);
        assert_abs_diff_eq!(best.tau_ms, 0.207518, epsilon = 1e-4);
    }

    #[test]
    fn optimizer_recovers_two_level_bound() {
        for rule in [UpdateRule::Luders, UpdateRule::DephasingInrm] {
            let best = optimize_k3(2, &rule).unwrap();
            assert_abs_diff_eq!(best.k3, 1.5, epsilon = 1e-3);
        }
    }

    #[test]
    fn optimum_grows_with_dimension() {
        let k3_3 = optimize_k3(3, &UpdateRule::DephasingInrm).unwrap().k3;
        let k3_4 = optimize_k3(4, &UpdateRule::DephasingInrm).unwrap().k3;
        let k3_9 = optimize_k3(9, &UpdateRule::DephasingInrm).unwrap().k3;
        assert!(k3_4 > k3_3);
        assert!(k3_9 > k3_3 && k3_9 < 3.0);
        assert_abs_diff_eq!(k3_4, 2.036721, epsilon = 1e-4);
        assert_abs_diff_eq!(k3_9, 2.591969, epsilon = 1e-4);
    }

    #[test]
    fn custom_kraus_rule_reproduces_dephasing_when_given_projectors() {
        let (dynamics, q, initial) = reference();
        let schedule = Schedule::reference(0.208).unwrap();
        let ops = (0..3).map(|i| linalg::basis_projector(3, i)).collect();
        let custom = UpdateRule::CustomKraus(KrausChannel::new(ops, true).unwrap());
        let a = k3(&dynamics, &schedule, &custom, &q, &initial).unwrap();
        let b = k3(&dynamics, &schedule, &UpdateRule::DephasingInrm, &q, &initial).unwrap();
        assert_abs_diff_eq!(a.k3, b.k3, epsilon = 1e-12);
    }

    #[test]
    fn classical_models_respect_the_macrorealist_bound() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let mut initial = [0.0; 3];
            let mut total = 0.0;
            for p in initial.iter_mut() {
                *p = rng.gen::<f64>();
                total += *p;
            }
            for p in initial.iter_mut() {
                *p /= total;
            }
            let random_stochastic = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mut m = Array2::zeros((3, 3));
                for i in 0..3 {
                    let mut s = 0.0;
                    for j in 0..3 {
                        m[[i, j]] = rng.gen::<f64>();
                        s += m[[i, j]];
                    }
                    for j in 0..3 {
                        m[[i, j]] /= s;
                    }
                }
                m
            };
            let t12 = random_stochastic(&mut rng);
            let t23 = random_stochastic(&mut rng);
            let signs = [
                if rng.gen::<bool>() { 1.0 } else { -1.0 },
                if rng.gen::<bool>() { 1.0 } else { -1.0 },
                if rng.gen::<bool>() { 1.0 } else { -1.0 },
            ];
            let k = classical_k3(&initial, &t12, &t23, &signs).unwrap();
            assert!(k <= 1.0 + 1e-12, "classical model produced K3 = {k}");
        }
    }

    #[test]
    fn tau_grid_is_inclusive_and_validated() {
        let g = tau_grid(0.02, 0.5, 0.002).unwrap();
        assert_eq!(g.len(), 241);
        assert_abs_diff_eq!(g[0], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(*g.last().unwrap(), 0.5, epsilon = 1e-12);
        assert!(tau_grid(0.0, 0.5, 0.01).is_err());
        assert!(tau_grid(0.1, 0.05, 0.01).is_err());
        assert!(tau_grid(0.1, 0.5, 0.0).is_err());
    }

    #[test]
    fn setting_pair_parsing_accepts_only_the_three_settings() {
        assert_eq!(SettingPair::parse("12").unwrap(), SettingPair::T1T2);
        assert_eq!(SettingPair::parse("23").unwrap(), SettingPair::T2T3);
        assert_eq!(SettingPair::parse("13").unwrap(), SettingPair::T1T3);
        assert!(SettingPair::parse("21").is_err());
        assert!(SettingPair::parse("").is_err());
    }
}
