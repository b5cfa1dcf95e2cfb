//! Dynamical Lie-algebra closures and the controllability / observability
//! decisions built on them.
//!
//! A model is controllable when `{A, B_x, B_y, B_z}` bracket-generate all of
//! `su(2^n)` (dimension `4^n - 1`; the generators are traceless, so the
//! `u(2^n)` case never arises here). It is observable when the space spanned
//! by iterated adjoint actions of those generators on `i S_v` reaches the
//! same dimension. With pairwise-distinct gyromagnetic ratios,
//! controllability coincides with connectivity of the coupling graph.

use serde::{Deserialize, Serialize};

use crate::operators::{
    build_control, build_drift, check_skew_hermitian, hs_inner, spins_for_dim, total_spin, Axis,
    Operator, SpinNetwork, HERMITICITY_TOL,
};
use crate::{Error, Result};

/// Default spin cap for closure computations (`4^5 - 1 = 1023` basis
/// elements of 32 x 32 matrices).
pub const DEFAULT_SPIN_CAP: usize = 5;

/// Residual-norm threshold for rank decisions, relative to the largest seed
/// norm.
const RESIDUAL_REL_TOL: f64 = 1e-10;

/// Orthonormal basis (Hilbert-Schmidt metric) of a bracket-closed subspace of
/// skew-Hermitian matrices.
#[derive(Debug, Clone)]
pub struct LieBasis {
    elements: Vec<Operator>,
}

impl LieBasis {
    pub fn dimension(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[Operator] {
        &self.elements
    }

    /// Largest deviation of `<e_i, e_j>` from the identity Gram matrix.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.elements.iter().enumerate() {
            for (j, b) in self.elements.iter().enumerate() {
                let g = hs_inner(a, b);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.re - target).abs()).max(g.im.abs());
            }
        }
        worst
    }
}

/// Incremental Gram-Schmidt span with a fixed residual threshold.
struct SpanBuilder {
    basis: Vec<Operator>,
    threshold: f64,
}

impl SpanBuilder {
    fn new(threshold: f64) -> Self {
        Self { basis: Vec::new(), threshold }
    }

    /// Project `candidate` off the current span; keep the normalized residual
    /// when its norm clears the threshold. Re-orthogonalizes once, which is
    /// enough to hold the Gram defect near roundoff.
    ///
    /// The identity component is removed after the projection passes, right
    /// before the rank decision. Brackets are traceless exactly, but their
    /// computed traces cancel only to roundoff, and normalizing small
    /// residuals amplifies that leak coherently along the identity; removing
    /// it last keeps every accepted element traceless, so the basis can never
    /// grow past `dim^2 - 1`.
    fn try_add(&mut self, candidate: Operator) -> bool {
        let mut v = candidate;
        for _ in 0..2 {
            for e in &self.basis {
                let c = hs_inner(e, &v);
                v -= e * c;
            }
        }
        let dim = v.nrows();
        let mean = v.trace() / num_complex::Complex64::new(dim as f64, 0.0);
        for i in 0..dim {
            v[(i, i)] -= mean;
        }
        let norm = v.norm();
        if norm <= self.threshold {
            return false;
        }
        v /= num_complex::Complex64::new(norm, 0.0);
        self.basis.push(v);
        true
    }
}

fn validate_generators(generators: &[Operator], cap: usize) -> Result<usize> {
    let first = generators
        .first()
        .ok_or_else(|| Error::InvalidNetwork("no generators".into()))?;
    let dim = first.nrows();
    let n = spins_for_dim(dim)?;
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    for g in generators {
        if g.nrows() != dim || g.ncols() != dim {
            return Err(Error::DimensionMismatch { left: dim, right: g.nrows() });
        }
        check_skew_hermitian(g, HERMITICITY_TOL.max(1e-12 * crate::operators::max_abs(g)))?;
    }
    Ok(dim)
}

fn closure_threshold(seeds: &[Operator]) -> f64 {
    let max_norm = seeds.iter().map(|s| s.norm()).fold(0.0f64, f64::max);
    RESIDUAL_REL_TOL * max_norm.max(f64::MIN_POSITIVE)
}

/// Core loop shared by both closures: seed the span, then bracket every basis
/// element with every generator (basis index outer, generator index inner,
/// both ascending) until a full pass adds nothing.
fn bracket_closure(seeds: &[Operator], generators: &[Operator], threshold: f64) -> LieBasis {
    let mut span = SpanBuilder::new(threshold);
    for s in seeds {
        span.try_add(s.clone());
    }
    let mut i = 0;
    while i < span.basis.len() {
        for g in generators {
            let e = &span.basis[i];
            let candidate = g * e - e * g;
            span.try_add(candidate);
        }
        i += 1;
    }
    LieBasis { elements: span.basis }
}

/// Smallest bracket-closed subspace containing the given skew-Hermitian
/// generators, as an orthonormal basis. Capped at [`DEFAULT_SPIN_CAP`] spins;
/// use [`span_closure_with_cap`] to override.
pub fn span_closure(generators: &[Operator]) -> Result<LieBasis> {
    span_closure_with_cap(generators, DEFAULT_SPIN_CAP)
}

pub fn span_closure_with_cap(generators: &[Operator], cap: usize) -> Result<LieBasis> {
    validate_generators(generators, cap)?;
    let threshold = closure_threshold(generators);
    Ok(bracket_closure(generators, generators, threshold))
}

/// Connectivity of the coupling graph (edge iff `J_kl != 0`).
pub fn graph_connected(net: &SpinNetwork) -> bool {
    let n = net.n_spins();
    if n == 1 {
        return true;
    }
    let mut adj = vec![Vec::new(); n + 1];
    for ((k, l), _) in net.edges() {
        adj[k].push(l);
        adj[l].push(k);
    }
    let mut seen = vec![false; n + 1];
    let mut stack = vec![1usize];
    seen[1] = true;
    let mut count = 1;
    while let Some(k) = stack.pop() {
        for &l in &adj[k] {
            if !seen[l] {
                seen[l] = true;
                count += 1;
                stack.push(l);
            }
        }
    }
    count == n
}

/// The dynamical Lie algebra `<A, B_x, B_y, B_z>` of a network.
pub fn controllability_closure(net: &SpinNetwork) -> Result<LieBasis> {
    controllability_closure_with_cap(net, DEFAULT_SPIN_CAP)
}

pub fn controllability_closure_with_cap(net: &SpinNetwork, cap: usize) -> Result<LieBasis> {
    if net.n_spins() > cap {
        return Err(Error::CapExceeded { n: net.n_spins(), cap });
    }
    let gens = network_generators(net)?;
    span_closure_with_cap(&gens, cap)
}

/// True iff the dynamical Lie algebra is all of `su(2^n)`.
pub fn is_controllable(net: &SpinNetwork) -> Result<bool> {
    let dim = full_dimension(net.n_spins());
    Ok(controllability_closure(net)?.dimension() == dim)
}

/// Observability space: span of iterated `ad` actions of
/// `{A, B_x, B_y, B_z}` on the seeds `i S_x, i S_y, i S_z`.
pub fn observability_space(net: &SpinNetwork) -> Result<LieBasis> {
    observability_space_with_cap(net, DEFAULT_SPIN_CAP)
}

pub fn observability_space_with_cap(net: &SpinNetwork, cap: usize) -> Result<LieBasis> {
    if net.n_spins() > cap {
        return Err(Error::CapExceeded { n: net.n_spins(), cap });
    }
    let n = net.n_spins();
    let gens = network_generators(net)?;
    let i = num_complex::Complex64::new(0.0, 1.0);
    let seeds: Vec<Operator> = [Axis::X, Axis::Y, Axis::Z]
        .iter()
        .map(|&axis| total_spin(n, axis).map(|s| s * i))
        .collect::<Result<_>>()?;
    let threshold = closure_threshold(&seeds);
    Ok(bracket_closure(&seeds, &gens, threshold))
}

/// True iff the observability space is all of `su(2^n)`.
pub fn is_observable(net: &SpinNetwork) -> Result<bool> {
    let dim = full_dimension(net.n_spins());
    Ok(observability_space(net)?.dimension() == dim)
}

fn network_generators(net: &SpinNetwork) -> Result<Vec<Operator>> {
    Ok(vec![
        build_drift(net)?,
        build_control(net, Axis::X)?,
        build_control(net, Axis::Y)?,
        build_control(net, Axis::Z)?,
    ])
}

/// `dim su(2^n) = 4^n - 1`.
pub fn full_dimension(n: usize) -> usize {
    4usize.pow(n as u32) - 1
}

/// Summary of the structural analysis of one network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub controllable: bool,
    pub observable: bool,
    pub lie_dimension: usize,
    pub observability_dimension: usize,
    pub graph_connected: bool,
    pub gamma_distinct: bool,
}

/// Run both closures and the graph criterion.
pub fn analyze(net: &SpinNetwork) -> Result<AnalysisReport> {
    analyze_with_cap(net, DEFAULT_SPIN_CAP)
}

pub fn analyze_with_cap(net: &SpinNetwork, cap: usize) -> Result<AnalysisReport> {
    let full = full_dimension(net.n_spins());
    let lie = controllability_closure_with_cap(net, cap)?.dimension();
    let obs = observability_space_with_cap(net, cap)?.dimension();
    Ok(AnalysisReport {
        controllable: lie == full,
        observable: obs == full,
        lie_dimension: lie,
        observability_dimension: obs,
        graph_connected: graph_connected(net),
        gamma_distinct: net.gamma_distinct(),
    })
}
