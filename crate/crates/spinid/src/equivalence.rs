//! Output-equivalence machinery for model/state pairs.
//!
//! Two pairs (network, initial state) are output-equivalent when they produce
//! the same magnetization traces for every control waveform. For controllable
//! networks with pairwise-distinct gyromagnetic ratios there are exactly two
//! constructions that preserve the outputs:
//!
//! * relabeling the spins by a permutation (with the state conjugated by the
//!   matching Kronecker-factor permutation), and
//! * negating every exchange constant while flipping the sign of the state's
//!   even-weight Pauli component (the "partner" pair).
//!
//! Both are implemented here, together with a numerical certificate that
//! compares traces over a batch of random schedules. The certificate is a
//! falsification test, not a proof: it reports the largest deviation seen.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    magnetization_trace, observable_trace, random_schedule, ControlSchedule, DensityMatrix,
    DEFAULT_GRID, PSD_TOL,
};
use crate::liealg::graph_connected;
use crate::operators::{
    add_scaled_string, identity, permutation_operator, PauliString, Permutation, SpinNetwork,
};
use crate::{Error, Result};

use num_complex::Complex64;

/// A network together with its initial state.
#[derive(Debug, Clone)]
pub struct ModelStatePair {
    network: SpinNetwork,
    initial_state: DensityMatrix,
}

impl ModelStatePair {
    pub fn new(network: SpinNetwork, initial_state: DensityMatrix) -> Result<Self> {
        if network.dim() != initial_state.dim() {
            return Err(Error::DimensionMismatch {
                left: network.dim(),
                right: initial_state.dim(),
            });
        }
        Ok(Self { network, initial_state })
    }

    pub fn network(&self) -> &SpinNetwork {
        &self.network
    }

    pub fn initial_state(&self) -> &DensityMatrix {
        &self.initial_state
    }

    pub fn n_spins(&self) -> usize {
        self.network.n_spins()
    }
}

/// Decomposition of a state by the parity of the Pauli weight: the identity
/// coefficient (`2^-n` for any unit-trace state), the odd-weight component,
/// and the even-weight component of weight two or more.
#[derive(Debug, Clone)]
pub struct ParitySplit {
    scalar: f64,
    odd: crate::Operator,
    even: crate::Operator,
}

impl ParitySplit {
    /// Coefficient of the identity string.
    pub fn scalar(&self) -> f64 {
        self.scalar
    }

    /// Component over odd-weight strings.
    pub fn odd(&self) -> &crate::Operator {
        &self.odd
    }

    /// Component over even-weight strings of weight at least two.
    pub fn even(&self) -> &crate::Operator {
        &self.even
    }

    /// `scalar * I + odd + even`.
    pub fn reconstruct(&self) -> crate::Operator {
        identity(self.odd.nrows()) * Complex64::new(self.scalar, 0.0) + &self.odd + &self.even
    }
}

/// Split a state by Pauli-weight parity.
pub fn parity_split(rho: &DensityMatrix) -> ParitySplit {
    let n = rho.n_spins();
    let dim = rho.dim();
    let mut scalar = 0.0;
    let mut odd = crate::Operator::zeros(dim, dim);
    let mut even = crate::Operator::zeros(dim, dim);
    for p in PauliString::enumerate(n) {
        let c = p
            .trace_dot(rho.matrix())
            .expect("dimensions agree by construction")
            .re
            / p.norm_sq();
        if c == 0.0 {
            continue;
        }
        match p.weight() {
            0 => scalar = c,
            w if w % 2 == 1 => add_scaled_string(&mut odd, &p, Complex64::new(c, 0.0)),
            _ => add_scaled_string(&mut even, &p, Complex64::new(c, 0.0)),
        }
    }
    ParitySplit { scalar, odd, even }
}

/// Relabel the spins of a pair by `pi`: gyromagnetic ratios and couplings
/// move to the permuted sites and the state is conjugated by the
/// corresponding Kronecker-factor permutation. The result is
/// output-equivalent to the input pair.
pub fn apply_permutation(pair: &ModelStatePair, pi: &Permutation) -> Result<ModelStatePair> {
    let n = pair.n_spins();
    if pi.degree() != n {
        return Err(Error::InvalidPermutation(format!(
            "permutation of degree {} applied to {n} spins",
            pi.degree()
        )));
    }
    let net = pair.network();
    let mut gamma = vec![0.0; n];
    for k in 1..=n {
        gamma[pi.apply(k) - 1] = net.gamma()[k - 1];
    }
    let couplings: Vec<(usize, usize, f64)> = net
        .couplings()
        .map(|((k, l), j)| {
            let a = pi.apply(k);
            let b = pi.apply(l);
            (a.min(b), a.max(b), j)
        })
        .collect();
    let permuted_net = SpinNetwork::new(n, gamma, couplings)?;

    // conjugation by P_(pi^-1) moves the factor at site k to site pi(k)
    let w = permutation_operator(n, &pi.inverse())?;
    let rho = &w * pair.initial_state().matrix() * w.transpose();
    Ok(ModelStatePair {
        network: permuted_net,
        initial_state: DensityMatrix::from_trusted(rho),
    })
}

/// The sign-flip partner of a pair: every exchange constant negated, the
/// even-weight component of the state negated. The partner's outputs match
/// the original's for every control waveform.
///
/// Positivity of the partner state is not guaranteed; the returned flag is
/// true when its smallest eigenvalue clears the usual tolerance, and the
/// state is constructed regardless so it can be propagated and inspected.
pub fn partner_pair(pair: &ModelStatePair) -> (ModelStatePair, bool) {
    let split = parity_split(pair.initial_state());
    let dim = pair.initial_state().dim();
    let flipped =
        identity(dim) * Complex64::new(split.scalar(), 0.0) + split.odd() - split.even();
    let state = DensityMatrix::from_trusted(flipped);
    let psd_ok = state.min_eigenvalue() >= PSD_TOL;
    (
        ModelStatePair { network: pair.network().negated(), initial_state: state },
        psd_ok,
    )
}

/// Outcome of the numerical equivalence certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub equivalent: bool,
    /// Largest output deviation seen; `None` when the pairs have different
    /// spin counts and were never simulated.
    pub max_deviation: Option<f64>,
    /// Number of schedules actually compared.
    pub trials: usize,
    pub tolerance: f64,
    /// Set when the spin counts differ, which decides the verdict by itself.
    pub dimension_mismatch: bool,
}

/// Compare the magnetization outputs of two pairs over `n_schedules` random
/// 8-segment schedules (amplitude bound 2) drawn from `seed`. Pairs with
/// different spin counts are reported as not equivalent without simulation.
pub fn equivalence_test(
    pair_a: &ModelStatePair,
    pair_b: &ModelStatePair,
    n_schedules: usize,
    seed: u64,
    tol: f64,
) -> Result<EquivalenceVerdict> {
    if n_schedules == 0 {
        return Err(Error::InvalidSchedule("need at least one schedule".into()));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidSchedule(format!("invalid tolerance {tol}")));
    }
    if pair_a.n_spins() != pair_b.n_spins() {
        return Ok(EquivalenceVerdict {
            equivalent: false,
            max_deviation: None,
            trials: 0,
            tolerance: tol,
            dimension_mismatch: true,
        });
    }
    let mut worst = 0.0f64;
    for i in 0..n_schedules {
        let sched = random_schedule(8, 2.0, seed.wrapping_add(i as u64));
        let ta = magnetization_trace(
            pair_a.network(),
            &sched,
            pair_a.initial_state(),
            DEFAULT_GRID,
        )?;
        let tb = magnetization_trace(
            pair_b.network(),
            &sched,
            pair_b.initial_state(),
            DEFAULT_GRID,
        )?;
        worst = worst.max(ta.max_deviation(&tb));
    }
    Ok(EquivalenceVerdict {
        equivalent: worst < tol,
        max_deviation: Some(worst),
        trials: n_schedules,
        tolerance: tol,
        dimension_mismatch: false,
    })
}

/// For a pair and its sign-flip partner, the expectation of a weight-`r`
/// string obeys `Tr(P rho(t)) = (-1)^(r-1) Tr(P rho'(t))` along corresponding
/// trajectories. Returns the largest residual of that relation over the given
/// schedules.
pub fn sign_flip_trace_check(
    pair: &ModelStatePair,
    partner: &ModelStatePair,
    string: &PauliString,
    schedules: &[ControlSchedule],
) -> Result<f64> {
    let n = pair.n_spins();
    if partner.n_spins() != n {
        return Err(Error::MismatchedPartner("spin counts differ".into()));
    }
    if string.n_spins() != n {
        return Err(Error::DimensionMismatch { left: 1 << n, right: 1 << string.n_spins() });
    }
    if string.is_identity() {
        return Err(Error::InvalidPauliString(
            "the sign-flip trace relation needs at least one site".into(),
        ));
    }
    for (k, g) in pair.network().gamma().iter().enumerate() {
        if (g - partner.network().gamma()[k]).abs() > 1e-12 {
            return Err(Error::MismatchedPartner(format!(
                "gamma_{} differs between the pairs",
                k + 1
            )));
        }
    }
    for k in 1..=n {
        for l in (k + 1)..=n {
            let a = pair.network().coupling(k, l);
            let b = partner.network().coupling(k, l);
            if (a + b).abs() > 1e-12 {
                return Err(Error::MismatchedPartner(format!(
                    "J_{k}{l} is not negated ({a} vs {b})"
                )));
            }
        }
    }

    let factor = if string.weight() % 2 == 1 { 1.0 } else { -1.0 };
    let obs = string.realize()?;
    let mut worst = 0.0f64;
    for sched in schedules {
        let ta = observable_trace(pair.network(), sched, pair.initial_state(), &obs, DEFAULT_GRID)?;
        let tb = observable_trace(
            partner.network(),
            sched,
            partner.initial_state(),
            &obs,
            DEFAULT_GRID,
        )?;
        for (a, b) in ta.iter().zip(&tb) {
            worst = worst.max((a - factor * b).abs());
        }
    }
    Ok(worst)
}

/// Canonical representative of a pair's equivalence class: spins relabeled so
/// the gyromagnetic ratios increase strictly, and the sign branch chosen so
/// the first nonzero coupling (lexicographic site order) is positive.
///
/// Requires pairwise-distinct ratios and a connected coupling graph, which is
/// the regime where the class has exactly these two degrees of freedom.
pub fn canonicalize(pair: &ModelStatePair) -> Result<ModelStatePair> {
    let net = pair.network();
    let n = net.n_spins();
    if !net.gamma_distinct() {
        return Err(Error::DuplicateGamma);
    }
    if !graph_connected(net) {
        return Err(Error::InvalidNetwork(
            "canonicalization needs a connected coupling graph".into(),
        ));
    }
    // pi sends each site to the rank of its gamma
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| net.gamma()[a].partial_cmp(&net.gamma()[b]).unwrap());
    let mut images = vec![0usize; n];
    for (rank, &site) in order.iter().enumerate() {
        images[site] = rank + 1;
    }
    let pi = Permutation::new(images)?;
    let sorted = apply_permutation(pair, &pi)?;

    let first_nonzero = sorted.network().edges().next().map(|(_, j)| j);
    match first_nonzero {
        Some(j) if j < 0.0 => Ok(partner_pair(&sorted).0),
        _ => Ok(sorted),
    }
}
