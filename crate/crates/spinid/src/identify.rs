//! Least-squares recovery of exchange constants and gyromagnetic ratios from
//! magnetization traces recorded under known control schedules.
//!
//! With a known, non-scalar initial state the parameters of an observable
//! model are uniquely determined by its outputs, so a local fit against
//! noiseless traces recovers them. With an unknown initial state the outputs
//! determine the pair only up to the sign-flip construction of
//! [`crate::equivalence`]; [`fit_unknown_state`] therefore reports both
//! branches, whose residuals agree to roundoff.
//!
//! The optimizer is a damped least-squares loop: forward finite-difference
//! Jacobians (relative step `1e-6`), damping scaled up tenfold on a rejected
//! step and down tenfold on an accepted one, stopping when the relative
//! objective decrease falls below `1e-12` or after 200 iterations.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{random_schedule, ControlSchedule, DensityMatrix, Trace};
use crate::equivalence::{partner_pair, ModelStatePair};
use crate::liealg::graph_connected;
use crate::operators::{identity, Axis, Operator, SpinNetwork};
use crate::{Error, Result};

/// Records of (schedule, measured trace) sharing one sample grid, plus the
/// structural hypothesis: spin count and the set of possibly-nonzero
/// couplings.
#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    edges: Vec<(usize, usize)>,
    grid: f64,
    records: Vec<(ControlSchedule, Trace)>,
}

impl Dataset {
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        grid: f64,
        records: Vec<(ControlSchedule, Trace)>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDataset("need at least one spin".into()));
        }
        if !(grid.is_finite() && grid > 0.0) {
            return Err(Error::InvalidGrid(grid));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(k, l) in &edges {
            if k >= l || k < 1 || l > n {
                return Err(Error::InvalidDataset(format!(
                    "edge ({k},{l}) is not 1 <= k < l <= {n}"
                )));
            }
            if !seen.insert((k, l)) {
                return Err(Error::InvalidDataset(format!("edge ({k},{l}) listed twice")));
            }
        }
        let bound = n as f64 / 2.0 + 1e-9;
        for (i, (sched, trace)) in records.iter().enumerate() {
            let expect = sched.sample_count(grid)?;
            if trace.len() != expect {
                return Err(Error::InvalidDataset(format!(
                    "record {i}: {} samples but the schedule yields {expect} on grid {grid}",
                    trace.len()
                )));
            }
            if trace.max_abs() > bound {
                return Err(Error::InvalidDataset(format!(
                    "record {i}: output exceeds the spectral bound n/2 = {}",
                    n as f64 / 2.0
                )));
            }
        }
        Ok(Self { n, edges, grid, records })
    }

    pub fn n_spins(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn grid(&self) -> f64 {
        self.grid
    }

    pub fn records(&self) -> &[(ControlSchedule, Trace)] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Largest output magnitude across all records.
    pub fn max_abs_output(&self) -> f64 {
        self.records.iter().map(|(_, t)| t.max_abs()).fold(0.0, f64::max)
    }

    fn residual_len(&self) -> usize {
        self.records.iter().map(|(_, t)| 3 * t.len()).sum()
    }
}

/// Lower-triangular complex factor `T` parameterizing a state as
/// `rho = T^dag T / Tr(T^dag T)`, stored as `dim^2` reals: one per diagonal
/// entry, a (re, im) pair per strictly-lower entry.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFactor {
    dim: usize,
    params: Vec<f64>,
}

impl StateFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn from_params(dim: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != dim * dim {
            return Err(Error::InvalidState(format!(
                "state factor for dim {dim} needs {} reals, got {}",
                dim * dim,
                params.len()
            )));
        }
        Ok(Self { dim, params })
    }

    /// Factor a positive-semidefinite state. Fails when the state has an
    /// eigenvalue meaningfully below zero.
    pub fn from_density(rho: &DensityMatrix) -> Result<Self> {
        let dim = rho.dim();
        if rho.min_eigenvalue() < crate::dynamics::PSD_TOL {
            return Err(Error::InvalidState(
                "cannot factor a state that is not positive semidefinite".into(),
            ));
        }
        // reverse-permuted Cholesky yields rho = T^dag T with T lower-triangular
        let mut rev = Operator::zeros(dim, dim);
        for i in 0..dim {
            rev[(i, dim - 1 - i)] = Complex64::new(1.0, 0.0);
        }
        let flipped = &rev * rho.matrix() * &rev;
        let chol = (0..6)
            .find_map(|attempt| {
                let ridge = if attempt == 0 { 0.0 } else { 1e-14 * 10f64.powi(attempt) };
                Cholesky::new(&flipped + identity(dim) * Complex64::new(ridge, 0.0))
            })
            .ok_or_else(|| Error::InvalidState("state factorization failed".into()))?;
        let upper = &rev * chol.l() * &rev; // upper triangular
        let t = upper.adjoint(); // lower triangular, T^dag T = rho
        let mut params = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..=i {
                if i == j {
                    params.push(t[(i, j)].re);
                } else {
                    params.push(t[(i, j)].re);
                    params.push(t[(i, j)].im);
                }
            }
        }
        Ok(Self { dim, params })
    }

    fn factor_matrix(&self) -> Operator {
        let mut t = Operator::zeros(self.dim, self.dim);
        let mut idx = 0;
        for i in 0..self.dim {
            for j in 0..=i {
                if i == j {
                    t[(i, j)] = Complex64::new(self.params[idx], 0.0);
                    idx += 1;
                } else {
                    t[(i, j)] = Complex64::new(self.params[idx], self.params[idx + 1]);
                    idx += 2;
                }
            }
        }
        t
    }

    /// `T^dag T / Tr(T^dag T)`; PSD and unit trace by construction.
    pub fn to_density(&self) -> Result<DensityMatrix> {
        let t = self.factor_matrix();
        let gram = t.adjoint() * &t;
        let tr = gram.trace().re;
        if !(tr.is_finite() && tr > 1e-300) {
            return Err(Error::InvalidState("state factor has zero norm".into()));
        }
        Ok(DensityMatrix::from_trusted(gram * Complex64::new(1.0 / tr, 0.0)))
    }
}

/// Point in parameter space: couplings on the hypothesis edges, gyromagnetic
/// ratios, and optionally a state factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    j: Vec<f64>,
    gamma: Vec<f64>,
    state: Option<StateFactor>,
}

impl ParameterVector {
    pub fn new(j: Vec<f64>, gamma: Vec<f64>) -> Self {
        Self { j, gamma, state: None }
    }

    pub fn with_state(j: Vec<f64>, gamma: Vec<f64>, state: StateFactor) -> Self {
        Self { j, gamma, state: Some(state) }
    }

    pub fn j(&self) -> &[f64] {
        &self.j
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn state(&self) -> Option<&StateFactor> {
        self.state.as_ref()
    }

    /// Reconstructed initial state, when the vector carries one.
    pub fn initial_state(&self) -> Option<Result<DensityMatrix>> {
        self.state.as_ref().map(StateFactor::to_density)
    }

    /// Network with these parameters on the dataset's hypothesis edges.
    pub fn network(&self, n: usize, edges: &[(usize, usize)]) -> Result<SpinNetwork> {
        if self.j.len() != edges.len() {
            return Err(Error::InvalidDataset(format!(
                "{} couplings for {} hypothesis edges",
                self.j.len(),
                edges.len()
            )));
        }
        let couplings = edges.iter().zip(&self.j).map(|(&(k, l), &j)| (k, l, j));
        SpinNetwork::new(n, self.gamma.clone(), couplings)
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = self.j.clone();
        out.extend_from_slice(&self.gamma);
        if let Some(s) = &self.state {
            out.extend_from_slice(&s.params);
        }
        out
    }

    fn unflatten(&self, flat: &[f64]) -> ParameterVector {
        let nj = self.j.len();
        let ng = self.gamma.len();
        let j = flat[..nj].to_vec();
        let gamma = flat[nj..nj + ng].to_vec();
        let state = self.state.as_ref().map(|s| StateFactor {
            dim: s.dim,
            params: flat[nj + ng..].to_vec(),
        });
        ParameterVector { j, gamma, state }
    }
}

/// Which side of the two-branch ambiguity a fit result describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Branch {
    /// Known-state fit: the estimate is unique.
    #[serde(rename = "known")]
    Known,
    /// Unknown-state fit, as estimated.
    #[serde(rename = "J")]
    Primary,
    /// Unknown-state fit, all couplings negated with the parity-flipped state.
    #[serde(rename = "-J")]
    Partner,
}

/// Outcome of one fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub estimate: ParameterVector,
    /// Root-mean-square trace misfit.
    pub residual: f64,
    pub branch: Branch,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Knobs for the damped least-squares loop.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step decreases the objective by less than this
    /// relative amount.
    pub rel_tol: f64,
    /// Relative forward-difference step for the Jacobian.
    pub fd_step: f64,
    /// Number of starts; the first uses the guess as given, later ones
    /// perturb it (seeded, relative spread `start_spread`).
    pub starts: usize,
    pub seed: u64,
    pub start_spread: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tol: 1e-12,
            fd_step: 1e-6,
            starts: 1,
            seed: 0,
            start_spread: 0.25,
        }
    }
}

/// Sum of squared differences between modeled and recorded magnetization,
/// over every record, sample, and axis. The state comes from `params` when
/// present, otherwise from `fixed_state`.
pub fn objective(
    params: &ParameterVector,
    data: &Dataset,
    fixed_state: Option<&DensityMatrix>,
) -> Result<f64> {
    let r = residuals(params, data, fixed_state)?;
    Ok(r.iter().map(|v| v * v).sum())
}

fn resolve_state(
    params: &ParameterVector,
    fixed_state: Option<&DensityMatrix>,
) -> Result<DensityMatrix> {
    match (params.state(), fixed_state) {
        (Some(s), _) => s.to_density(),
        (None, Some(rho)) => Ok(rho.clone()),
        (None, None) => Err(Error::InvalidState(
            "no initial state: neither in the parameters nor given as fixed".into(),
        )),
    }
}

fn residuals(
    params: &ParameterVector,
    data: &Dataset,
    fixed_state: Option<&DensityMatrix>,
) -> Result<Vec<f64>> {
    let net = params.network(data.n_spins(), data.edges())?;
    let rho0 = resolve_state(params, fixed_state)?;
    if rho0.dim() != net.dim() {
        return Err(Error::DimensionMismatch { left: net.dim(), right: rho0.dim() });
    }
    let mut out = Vec::with_capacity(data.residual_len());
    for (sched, trace) in data.records() {
        let model = crate::dynamics::magnetization_trace(&net, sched, &rho0, data.grid())?;
        for i in 0..trace.len() {
            for axis in Axis::ALL {
                out.push(model.values(axis)[i] - trace.values(axis)[i]);
            }
        }
    }
    Ok(out)
}

struct LmOutcome {
    flat: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
}

/// Damped least squares over the flattened parameter vector.
fn levenberg_loop(
    template: &ParameterVector,
    start: Vec<f64>,
    data: &Dataset,
    fixed_state: Option<&DensityMatrix>,
    opts: &FitOptions,
) -> Result<LmOutcome> {
    let eval = |flat: &[f64]| -> Result<Vec<f64>> {
        residuals(&template.unflatten(flat), data, fixed_state)
    };
    let mut theta = start;
    let mut r = eval(&theta)?;
    let mut obj: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let n_params = theta.len();
    let mut iterations = 0;
    let mut converged = false;

    'outer: for _ in 0..opts.max_iterations {
        iterations += 1;
        if obj < 1e-20 {
            converged = true;
            break;
        }
        // forward-difference Jacobian
        let mut jac = DMatrix::<f64>::zeros(r.len(), n_params);
        for p in 0..n_params {
            let h = opts.fd_step * theta[p].abs().max(1.0);
            let mut shifted = theta.clone();
            shifted[p] += h;
            let rp = eval(&shifted)?;
            for (row, (a, b)) in rp.iter().zip(&r).enumerate() {
                jac[(row, p)] = (a - b) / h;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_column_slice(&r);

        let mut accepted = false;
        for _ in 0..25 {
            let mut damped = jtj.clone();
            for d in 0..n_params {
                damped[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let step = match damped.lu().solve(&(-&jtr)) {
                Some(s) => s,
                None => {
                    lambda = (lambda * 10.0).min(1e14);
                    continue;
                }
            };
            let candidate: Vec<f64> =
                theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            let rc = eval(&candidate)?;
            let oc: f64 = rc.iter().map(|v| v * v).sum();
            if oc < obj {
                let rel = (obj - oc) / obj.max(f64::MIN_POSITIVE);
                theta = candidate;
                r = rc;
                obj = oc;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < opts.rel_tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda = (lambda * 10.0).min(1e14);
        }
        if !accepted {
            // damping exhausted: the point is stationary at this resolution
            converged = true;
            break;
        }
    }
    Ok(LmOutcome { flat: theta, objective: obj, iterations, converged })
}

fn rms(objective: f64, count: usize) -> f64 {
    (objective / count.max(1) as f64).sqrt()
}

fn preflight_warnings(data: &Dataset, guess: &ParameterVector) -> Vec<String> {
    let mut warnings = Vec::new();
    let mut gamma = guess.gamma().to_vec();
    gamma.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if gamma.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-6) {
        warnings.push(
            "near-equal gyromagnetic ratios: couplings may be unidentifiable".to_string(),
        );
    }
    let hypothesis_net = SpinNetwork::new(
        data.n_spins(),
        vec![1.0; data.n_spins()],
        data.edges().iter().map(|&(k, l)| (k, l, 1.0)),
    );
    match hypothesis_net {
        Ok(net) if !graph_connected(&net) => warnings.push(
            "hypothesis coupling graph is disconnected: the model cannot be controllable"
                .to_string(),
        ),
        _ => {}
    }
    warnings
}

fn multi_start(
    template: &ParameterVector,
    data: &Dataset,
    fixed_state: Option<&DensityMatrix>,
    opts: &FitOptions,
) -> Result<LmOutcome> {
    let base = template.flatten();
    let mut best: Option<LmOutcome> = None;
    for s in 0..opts.starts.max(1) {
        let start = if s == 0 {
            base.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(s as u64));
            base.iter()
                .map(|&v| v + opts.start_spread * v.abs().max(1.0) * rng.random_range(-1.0..1.0))
                .collect()
        };
        let outcome = levenberg_loop(template, start, data, fixed_state, opts)?;
        let better = match &best {
            None => true,
            Some(b) => outcome.objective < b.objective,
        };
        if better {
            best = Some(outcome);
        }
    }
    Ok(best.expect("at least one start runs"))
}

/// Fit couplings and gyromagnetic ratios against traces recorded from a known
/// initial state.
pub fn fit_known_state(
    data: &Dataset,
    rho0: &DensityMatrix,
    guess: &ParameterVector,
    opts: &FitOptions,
) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rho0.is_scalar() {
        return Err(Error::ScalarState);
    }
    if rho0.dim() != 1usize << data.n_spins() {
        return Err(Error::DimensionMismatch {
            left: 1usize << data.n_spins(),
            right: rho0.dim(),
        });
    }
    let template = ParameterVector::new(guess.j().to_vec(), guess.gamma().to_vec());
    let mut warnings = preflight_warnings(data, guess);
    let outcome = multi_start(&template, data, Some(rho0), opts)?;
    let estimate = template.unflatten(&outcome.flat);
    let mut post = post_fit_warnings(&estimate);
    warnings.append(&mut post);
    Ok(FitResult {
        residual: rms(outcome.objective, data.residual_len()),
        estimate,
        branch: Branch::Known,
        iterations: outcome.iterations,
        converged: outcome.converged,
        warnings,
    })
}

fn post_fit_warnings(estimate: &ParameterVector) -> Vec<String> {
    let mut gamma = estimate.gamma().to_vec();
    gamma.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if gamma.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-6) {
        vec!["fitted gyromagnetic ratios are nearly equal: the coupling estimates are not trustworthy".to_string()]
    } else {
        Vec::new()
    }
}

/// Fit couplings, ratios, and the initial state simultaneously, then report
/// both output-equivalent branches: the estimate itself and its sign-flip
/// partner. The two residuals agree to roundoff; the caller disambiguates
/// with prior knowledge.
pub fn fit_unknown_state(
    data: &Dataset,
    guess: &ParameterVector,
    opts: &FitOptions,
) -> Result<(FitResult, FitResult)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.max_abs_output() < 1e-12 {
        return Err(Error::ScalarStateData);
    }
    let dim = 1usize << data.n_spins();
    let state_guess = match guess.state() {
        Some(s) => {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch { left: dim, right: s.dim() });
            }
            s.clone()
        }
        None => StateFactor::from_density(&DensityMatrix::maximally_mixed(data.n_spins()))?,
    };
    let template =
        ParameterVector::with_state(guess.j().to_vec(), guess.gamma().to_vec(), state_guess);
    let mut warnings = preflight_warnings(data, guess);
    let outcome = multi_start(&template, data, None, opts)?;
    let estimate = template.unflatten(&outcome.flat);
    warnings.extend(post_fit_warnings(&estimate));

    // sign-flip branch: negate couplings, flip the even component of the state
    let est_state = estimate
        .initial_state()
        .expect("unknown-state estimate carries a state")?;
    let est_net = estimate.network(data.n_spins(), data.edges())?;
    let est_pair = ModelStatePair::new(est_net, est_state)?;
    let (partner, psd_ok) = partner_pair(&est_pair);
    let mut partner_warnings = warnings.clone();
    let partner_j: Vec<f64> = estimate.j().iter().map(|j| -j).collect();
    let partner_params = if psd_ok {
        match StateFactor::from_density(partner.initial_state()) {
            Ok(factor) => ParameterVector::with_state(
                partner_j.clone(),
                estimate.gamma().to_vec(),
                factor,
            ),
            Err(_) => {
                partner_warnings.push(
                    "partner state could not be refactored; couplings and ratios only"
                        .to_string(),
                );
                ParameterVector::new(partner_j.clone(), estimate.gamma().to_vec())
            }
        }
    } else {
        partner_warnings.push(format!(
            "partner state is not positive semidefinite (min eigenvalue {:.3e})",
            partner.initial_state().min_eigenvalue()
        ));
        ParameterVector::new(partner_j, estimate.gamma().to_vec())
    };

    // evaluate the partner objective with its exact (possibly non-PSD) state
    let partner_residuals = residuals(
        &ParameterVector::new(
            partner_params.j().to_vec(),
            partner_params.gamma().to_vec(),
        ),
        data,
        Some(partner.initial_state()),
    )?;
    let partner_obj: f64 = partner_residuals.iter().map(|v| v * v).sum();
    let primary_res = rms(outcome.objective, data.residual_len());
    let partner_res = rms(partner_obj, data.residual_len());
    if (primary_res - partner_res).abs() > 1e-8 {
        partner_warnings.push(format!(
            "branch residuals differ by {:.3e}; the partner construction is suspect",
            (primary_res - partner_res).abs()
        ));
    }

    let primary = FitResult {
        estimate,
        residual: primary_res,
        branch: Branch::Primary,
        iterations: outcome.iterations,
        converged: outcome.converged,
        warnings,
    };
    let secondary = FitResult {
        estimate: partner_params,
        residual: partner_res,
        branch: Branch::Partner,
        iterations: outcome.iterations,
        converged: outcome.converged,
        warnings: partner_warnings,
    };
    Ok((primary, secondary))
}

/// Deterministic probe set: one drift-only schedule (zero amplitudes) to
/// expose the couplings, then `count - 1` random 8-segment schedules with
/// amplitude bound 2.
pub fn design_schedules(count: usize, seed: u64) -> Vec<ControlSchedule> {
    assert!(count >= 1, "need at least one schedule");
    let mut out = Vec::with_capacity(count);
    out.push(random_schedule(8, 0.0, seed));
    for i in 1..count {
        out.push(random_schedule(8, 2.0, seed.wrapping_add(i as u64)));
    }
    out
}

/// Simulate a dataset from a ground-truth pair under the given schedules.
pub fn synthesize_dataset(
    net: &SpinNetwork,
    rho0: &DensityMatrix,
    schedules: &[ControlSchedule],
    edges: &[(usize, usize)],
    grid: f64,
) -> Result<Dataset> {
    let mut records = Vec::with_capacity(schedules.len());
    for sched in schedules {
        let trace = crate::dynamics::magnetization_trace(net, sched, rho0, grid)?;
        records.push((sched.clone(), trace));
    }
    Dataset::new(net.n_spins(), edges.to_vec(), grid, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::identity as op_identity;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn low_purity_state(seed: u64, n: usize) -> DensityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 1usize << n;
        let mut h = Operator::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                h[(i, j)] = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        let h = (&h + h.adjoint()) * c(0.5, 0.0);
        let h = &h - op_identity(dim) * (h.trace() / c(dim as f64, 0.0));
        let h = &h * c(0.05 / h.norm(), 0.0);
        DensityMatrix::new(op_identity(dim) * c(1.0 / dim as f64, 0.0) + h).unwrap()
    }

    fn two_spin_setup(grid: f64) -> (SpinNetwork, DensityMatrix, Dataset, ParameterVector) {
        let net = SpinNetwork::new(2, vec![0.9, 1.7], [(1, 2, 1.2)]).unwrap();
        let rho0 = low_purity_state(4, 2);
        let schedules = design_schedules(6, 10);
        let edges = vec![(1, 2)];
        let data = synthesize_dataset(&net, &rho0, &schedules, &edges, grid).unwrap();
        let truth = ParameterVector::new(vec![1.2], vec![0.9, 1.7]);
        (net, rho0, data, truth)
    }

    #[test]
    fn objective_vanishes_at_truth() {
        let (_, rho0, data, truth) = two_spin_setup(0.02);
        let obj = objective(&truth, &data, Some(&rho0)).unwrap();
        assert!(obj < 1e-18, "objective at truth: {obj:.3e}");
    }

    #[test]
    fn objective_grows_away_from_truth() {
        let (_, rho0, data, _) = two_spin_setup(0.02);
        let off = ParameterVector::new(vec![1.3], vec![0.9, 1.7]);
        assert!(objective(&off, &data, Some(&rho0)).unwrap() > 1e-6);
    }

    #[test]
    fn equal_gamma_hides_couplings_from_the_objective() {
        let net = SpinNetwork::new(2, vec![1.0, 1.0], [(1, 2, 1.0)]).unwrap();
        let rho0 = low_purity_state(6, 2);
        let schedules = design_schedules(4, 3);
        let data = synthesize_dataset(&net, &rho0, &schedules, &[(1, 2)], 0.02).unwrap();
        let a = objective(&ParameterVector::new(vec![1.0], vec![1.0, 1.0]), &data, Some(&rho0))
            .unwrap();
        let b = objective(&ParameterVector::new(vec![0.3], vec![1.0, 1.0]), &data, Some(&rho0))
            .unwrap();
        assert!(a < 1e-18);
        assert!(b < 1e-18, "changing J only should not move the outputs: {b:.3e}");

        // directional derivative along the pure-J direction is flat
        let h = 1e-4;
        let fp = objective(
            &ParameterVector::new(vec![1.0 + h], vec![1.0, 1.0]),
            &data,
            Some(&rho0),
        )
        .unwrap();
        let fm = objective(
            &ParameterVector::new(vec![1.0 - h], vec![1.0, 1.0]),
            &data,
            Some(&rho0),
        )
        .unwrap();
        assert!(((fp - fm) / (2.0 * h)).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_central_difference() {
        let (_, rho0, data, truth) = two_spin_setup(0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..5 {
            let point = ParameterVector::new(
                vec![truth.j()[0] + rng.random_range(-0.3..0.3)],
                vec![
                    truth.gamma()[0] + rng.random_range(-0.3..0.3),
                    truth.gamma()[1] + rng.random_range(-0.3..0.3),
                ],
            );
            let flat = point.flatten();
            for p in 0..flat.len() {
                let h = 1e-5 * flat[p].abs().max(1.0);
                let mut fp = flat.clone();
                fp[p] += h;
                let mut fm = flat.clone();
                fm[p] -= h;
                let op = objective(&point.unflatten(&fp), &data, Some(&rho0)).unwrap();
                let om = objective(&point.unflatten(&fm), &data, Some(&rho0)).unwrap();
                let central = (op - om) / (2.0 * h);

                // forward-difference residual gradient, as the optimizer uses
                let r = residuals(&point, &data, Some(&rho0)).unwrap();
                let hf = 1e-6 * flat[p].abs().max(1.0);
                let mut ff = flat.clone();
                ff[p] += hf;
                let rf = residuals(&point.unflatten(&ff), &data, Some(&rho0)).unwrap();
                let forward: f64 = r
                    .iter()
                    .zip(&rf)
                    .map(|(a, b)| 2.0 * a * (b - a) / hf)
                    .sum();
                let scale = central.abs().max(1e-3);
                assert!(
                    ((central - forward) / scale).abs() < 1e-3,
                    "gradient mismatch: central {central:.6e} vs forward {forward:.6e}"
                );
            }
        }
    }

    #[test]
    fn known_state_fit_recovers_truth() {
        let (_, rho0, data, truth) = two_spin_setup(0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let start = ParameterVector::new(
            vec![truth.j()[0] * (1.0 + 0.2 * rng.random_range(-1.0..1.0))],
            truth
                .gamma()
                .iter()
                .map(|g| g * (1.0 + 0.2 * rng.random_range(-1.0..1.0)))
                .collect(),
        );
        let fit = fit_known_state(&data, &rho0, &start, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.residual < 1e-10);
        assert_abs_diff_eq!(fit.estimate.j()[0], truth.j()[0], epsilon = 1e-6);
        assert_abs_diff_eq!(fit.estimate.gamma()[0], truth.gamma()[0], epsilon = 1e-6);
        assert_abs_diff_eq!(fit.estimate.gamma()[1], truth.gamma()[1], epsilon = 1e-6);
    }

    #[test]
    fn starting_at_truth_stops_immediately() {
        let (_, rho0, data, truth) = two_spin_setup(0.02);
        let fit = fit_known_state(&data, &rho0, &truth, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations <= 2);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn equal_gamma_guess_warns() {
        let (_, rho0, data, _) = two_spin_setup(0.05);
        let guess = ParameterVector::new(vec![1.0], vec![1.0, 1.0]);
        let fit = fit_known_state(&data, &rho0, &guess, &FitOptions::default()).unwrap();
        assert!(fit.warnings.iter().any(|w| w.contains("near-equal")));
    }

    #[test]
    fn scalar_state_is_rejected() {
        let (_, _, data, truth) = two_spin_setup(0.05);
        let err = fit_known_state(
            &data,
            &DensityMatrix::maximally_mixed(2),
            &truth,
            &FitOptions::default(),
        );
        assert!(matches!(err, Err(Error::ScalarState)));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = Dataset::new(2, vec![(1, 2)], 0.05, vec![]).unwrap();
        let err = fit_known_state(
            &data,
            &low_purity_state(1, 2),
            &ParameterVector::new(vec![1.0], vec![1.0, 2.0]),
            &FitOptions::default(),
        );
        assert!(matches!(err, Err(Error::EmptyDataset)));
    }

    #[test]
    fn zero_traces_are_unidentifiable() {
        let net = SpinNetwork::new(2, vec![0.9, 1.7], [(1, 2, 1.2)]).unwrap();
        let schedules = design_schedules(2, 0);
        let data = synthesize_dataset(
            &net,
            &DensityMatrix::maximally_mixed(2),
            &schedules,
            &[(1, 2)],
            0.05,
        )
        .unwrap();
        let err = fit_unknown_state(
            &data,
            &ParameterVector::new(vec![1.0], vec![0.9, 1.7]),
            &FitOptions::default(),
        );
        assert!(matches!(err, Err(Error::ScalarStateData)));
    }

    #[test]
    fn unknown_state_fit_reports_two_equal_branches() {
        let net = SpinNetwork::new(2, vec![0.9, 1.7], [(1, 2, 1.2)]).unwrap();
        let rho0 = low_purity_state(21, 2);
        let schedules = design_schedules(6, 5);
        let data = synthesize_dataset(&net, &rho0, &schedules, &[(1, 2)], 0.05).unwrap();

        // start near the truth, state factor included
        let factor = StateFactor::from_density(&rho0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let jitter: Vec<f64> = factor
            .params()
            .iter()
            .map(|p| p + 0.02 * rng.random_range(-1.0..1.0))
            .collect();
        let guess = ParameterVector::with_state(
            vec![1.1],
            vec![0.95, 1.6],
            StateFactor::from_params(4, jitter).unwrap(),
        );
        let (primary, partner) =
            fit_unknown_state(&data, &guess, &FitOptions::default()).unwrap();
        assert_eq!(primary.branch, Branch::Primary);
        assert_eq!(partner.branch, Branch::Partner);
        assert!((primary.residual - partner.residual).abs() < 1e-8);
        for (a, b) in primary.estimate.j().iter().zip(partner.estimate.j()) {
            assert_abs_diff_eq!(*a, -b, epsilon = 1e-12);
        }
        // one branch should sit near the generating parameters
        let matches_truth = |j: f64| (j - 1.2).abs() < 1e-2;
        assert!(
            matches_truth(primary.estimate.j()[0]) || matches_truth(partner.estimate.j()[0]),
            "neither branch found J = 1.2: {} / {}",
            primary.estimate.j()[0],
            partner.estimate.j()[0]
        );
    }

    #[test]
    fn state_factor_roundtrip() {
        let rho = low_purity_state(31, 2);
        let factor = StateFactor::from_density(&rho).unwrap();
        let back = factor.to_density().unwrap();
        let dev = crate::operators::max_abs(&(back.matrix() - rho.matrix()));
        assert!(dev < 1e-6, "factor roundtrip deviation {dev:.3e}");
    }

    #[test]
    fn design_schedules_contract() {
        let one = design_schedules(1, 9);
        assert_eq!(one.len(), 1);
        for seg in one[0].segments() {
            assert_eq!((seg.ux, seg.uy, seg.uz), (0.0, 0.0, 0.0));
        }
        let six_a = design_schedules(6, 9);
        let six_b = design_schedules(6, 9);
        assert_eq!(six_a.len(), 6);
        for (a, b) in six_a.iter().zip(&six_b) {
            assert_eq!(a, b);
        }
    }

    /// With 6 designed probes the Gauss-Newton Hessian at the truth has full
    /// numerical rank over (J, gamma) for a controllable model.
    #[test]
    fn designed_probes_make_the_problem_well_posed() {
        let (_, rho0, data, truth) = two_spin_setup(0.05);
        let flat = truth.flatten();
        let r0 = residuals(&truth, &data, Some(&rho0)).unwrap();
        let mut jac = DMatrix::<f64>::zeros(r0.len(), flat.len());
        for p in 0..flat.len() {
            let h = 1e-6 * flat[p].abs().max(1.0);
            let mut shifted = flat.clone();
            shifted[p] += h;
            let rp = residuals(&truth.unflatten(&shifted), &data, Some(&rho0)).unwrap();
            for (row, (a, b)) in rp.iter().zip(&r0).enumerate() {
                jac[(row, p)] = (a - b) / h;
            }
        }
        let jtj = jac.transpose() * &jac;
        let eigs = jtj.symmetric_eigen().eigenvalues;
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eigs.iter().cloned().fold(0.0f64, f64::max);
        assert!(min > 1e-8 * max, "rank-deficient normal matrix: {min:.3e} vs {max:.3e}");
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(2, vec![(2, 1)], 0.05, vec![]).is_err());
        assert!(Dataset::new(2, vec![(1, 2), (1, 2)], 0.05, vec![]).is_err());
        assert!(Dataset::new(2, vec![(1, 2)], 0.0, vec![]).is_err());

        let sched = random_schedule(3, 1.0, 0);
        let count = sched.sample_count(0.05).unwrap();
        let times: Vec<f64> = (0..count).map(|i| i as f64 * 0.05).collect();
        let zeros = vec![0.0; count];
        let trace = Trace::new(times, zeros.clone(), zeros.clone(), zeros).unwrap();
        assert!(Dataset::new(2, vec![(1, 2)], 0.05, vec![(sched.clone(), trace)]).is_ok());

        // wrong sample count
        let times: Vec<f64> = (0..count - 1).map(|i| i as f64 * 0.05).collect();
        let zeros = vec![0.0; count - 1];
        let bad = Trace::new(times, zeros.clone(), zeros.clone(), zeros).unwrap();
        assert!(Dataset::new(2, vec![(1, 2)], 0.05, vec![(sched, bad)]).is_err());
    }
}
