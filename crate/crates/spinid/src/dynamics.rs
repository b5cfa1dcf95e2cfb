//! Density-matrix propagation under piecewise-constant controls.
//!
//! The state obeys `rho' = [A + B_x u_x + B_y u_y + B_z u_z, rho]` with the
//! generators of [`crate::operators`]. Controls are piecewise constant, so
//! each segment has the exact propagator `U = exp(L dt)` computed from the
//! eigendecomposition of the Hermitian matrix `iL`; there is no integration
//! truncation error. Segments are resampled onto a uniform grid: a segment of
//! duration `d` becomes `max(1, round(d / grid))` steps of length `grid`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::operators::{
    self, build_control, build_drift, check_hermitian, check_skew_hermitian, hermiticity_defect,
    spins_for_dim, total_spin, trace_product, Axis, Operator, SpinNetwork, HERMITICITY_TOL,
};
use crate::{Error, Result};

/// Default trace sample spacing.
pub const DEFAULT_GRID: f64 = 0.01;
/// Eigenvalues of a density matrix may undershoot zero by at most this much.
pub const PSD_TOL: f64 = -1e-10;
/// Unit-trace tolerance.
pub const TRACE_TOL: f64 = 1e-12;

/// One constant-control interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSegment {
    pub duration: f64,
    pub ux: f64,
    pub uy: f64,
    pub uz: f64,
}

impl ControlSegment {
    pub fn amplitude(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.ux,
            Axis::Y => self.uy,
            Axis::Z => self.uz,
        }
    }
}

/// Piecewise-constant control waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    segments: Vec<ControlSegment>,
}

impl ControlSchedule {
    pub fn new(segments: Vec<ControlSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidSchedule("no segments".into()));
        }
        for (i, seg) in segments.iter().enumerate() {
            if !(seg.duration.is_finite() && seg.duration > 0.0) {
                return Err(Error::InvalidSchedule(format!(
                    "segment {i} has non-positive duration {}",
                    seg.duration
                )));
            }
            if ![seg.ux, seg.uy, seg.uz].iter().all(|u| u.is_finite()) {
                return Err(Error::InvalidSchedule(format!(
                    "segment {i} has non-finite amplitudes"
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[ControlSegment] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Grid steps taken in each segment after resampling.
    pub fn steps_per_segment(&self, grid: f64) -> Result<Vec<usize>> {
        check_grid(grid)?;
        Ok(self
            .segments
            .iter()
            .map(|s| ((s.duration / grid).round() as usize).max(1))
            .collect())
    }

    /// Number of trace samples produced at spacing `grid`, including `t = 0`.
    pub fn sample_count(&self, grid: f64) -> Result<usize> {
        Ok(1 + self.steps_per_segment(grid)?.iter().sum::<usize>())
    }
}

/// Deterministic random schedule: `n_segments` segments with durations
/// uniform in `[0.05, 0.5]` and amplitudes uniform in `[-bound, bound]`.
/// A fixed seed reproduces the schedule exactly; `bound = 0` yields a
/// drift-only probe.
pub fn random_schedule(n_segments: usize, bound: f64, seed: u64) -> ControlSchedule {
    assert!(n_segments >= 1, "need at least one segment");
    assert!(bound >= 0.0 && bound.is_finite(), "amplitude bound must be finite and >= 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let duration = rng.random_range(0.05..=0.5);
        let mut amps = [0.0f64; 3];
        if bound > 0.0 {
            for a in &mut amps {
                *a = rng.random_range(-bound..=bound);
            }
        }
        segments.push(ControlSegment { duration, ux: amps[0], uy: amps[1], uz: amps[2] });
    }
    ControlSchedule { segments }
}

/// Hermitian, positive-semidefinite, unit-trace state.
///
/// [`DensityMatrix::new`] enforces all three; [`DensityMatrix::new_relaxed`]
/// skips the eigenvalue check so that sign-flip partner states, which the
/// construction does not guarantee to be positive, can still be propagated.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: Operator,
}

impl DensityMatrix {
    pub fn new(mat: Operator) -> Result<Self> {
        let dm = Self::new_relaxed(mat)?;
        let min = dm.min_eigenvalue();
        if min < PSD_TOL {
            return Err(Error::InvalidState(format!(
                "not positive semidefinite (min eigenvalue {min:.3e})"
            )));
        }
        Ok(dm)
    }

    /// Validate Hermiticity and unit trace only.
    pub fn new_relaxed(mat: Operator) -> Result<Self> {
        let n = spins_for_dim(mat.nrows())?;
        if mat.ncols() != mat.nrows() {
            return Err(Error::DimensionMismatch { left: mat.nrows(), right: mat.ncols() });
        }
        let _ = n;
        let defect = hermiticity_defect(&mat);
        if defect > HERMITICITY_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (defect {defect:.3e})")));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        Ok(Self { mat })
    }

    /// `I / 2^n`.
    pub fn maximally_mixed(n: usize) -> Self {
        let dim = 1usize << n;
        let scale = Complex64::new(1.0 / dim as f64, 0.0);
        Self { mat: operators::identity(dim) * scale }
    }

    /// Projector onto a pure state; the ket is normalized first.
    pub fn pure(ket: &nalgebra::DVector<Complex64>) -> Result<Self> {
        let norm = ket.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        let k = ket / Complex64::new(norm, 0.0);
        let mat = &k * k.adjoint();
        spins_for_dim(mat.nrows())?;
        Ok(Self { mat })
    }

    /// Internal constructor for states produced by unitary conjugation,
    /// which preserves all invariants.
    pub(crate) fn from_trusted(mat: Operator) -> Self {
        Self { mat }
    }

    pub fn matrix(&self) -> &Operator {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn n_spins(&self) -> usize {
        self.mat.nrows().trailing_zeros() as usize
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .mat
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn is_positive_semidefinite(&self) -> bool {
        self.min_eigenvalue() >= PSD_TOL
    }

    /// True when the state is (numerically) a multiple of the identity, in
    /// which case every magnetization output vanishes identically.
    pub fn is_scalar(&self) -> bool {
        let dim = self.dim();
        let scale = Complex64::new(1.0 / dim as f64, 0.0);
        let dev = &self.mat - operators::identity(dim) * scale;
        operators::max_abs(&dev) < 1e-12
    }

    /// `Tr(O rho)`.
    pub fn expectation(&self, obs: &Operator) -> Result<Complex64> {
        if obs.nrows() != self.dim() {
            return Err(Error::DimensionMismatch { left: obs.nrows(), right: self.dim() });
        }
        Ok(trace_product(obs, &self.mat))
    }
}

/// Magnetization samples on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    times: Vec<f64>,
    mx: Vec<f64>,
    my: Vec<f64>,
    mz: Vec<f64>,
}

impl Trace {
    pub fn new(times: Vec<f64>, mx: Vec<f64>, my: Vec<f64>, mz: Vec<f64>) -> Result<Self> {
        let n = times.len();
        if mx.len() != n || my.len() != n || mz.len() != n {
            return Err(Error::Csv(format!(
                "column lengths differ: t={n}, Mx={}, My={}, Mz={}",
                mx.len(),
                my.len(),
                mz.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Csv("sample times must be strictly increasing".into()));
        }
        Ok(Self { times, mx, my, mz })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.mx,
            Axis::Y => &self.my,
            Axis::Z => &self.mz,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.mx
            .iter()
            .chain(&self.my)
            .chain(&self.mz)
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Largest pointwise difference across all three channels.
    pub fn max_deviation(&self, other: &Trace) -> f64 {
        let mut worst = 0.0f64;
        for axis in Axis::ALL {
            let a = self.values(axis);
            let b = other.values(axis);
            if a.len() != b.len() {
                return f64::INFINITY;
            }
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }
}

/// Exact propagator `U = exp(L dt)` for a skew-Hermitian generator, via the
/// eigendecomposition of `iL`.
pub fn step_exponential(l: &Operator, dt: f64) -> Result<Operator> {
    check_skew_hermitian(l, HERMITICITY_TOL.max(1e-12 * operators::max_abs(l)))?;
    if !dt.is_finite() {
        return Err(Error::InvalidGrid(dt));
    }
    let h = l * Complex64::new(0.0, 1.0); // Hermitian
    let eig = h.symmetric_eigen();
    let dim = l.nrows();
    let mut phases = DMatrix::<Complex64>::zeros(dim, dim);
    for (i, lambda) in eig.eigenvalues.iter().enumerate() {
        phases[(i, i)] = Complex64::new(0.0, -lambda * dt).exp();
    }
    Ok(&eig.eigenvectors * phases * eig.eigenvectors.adjoint())
}

/// The four generators of a network, built once per propagation.
struct Generators {
    drift: Operator,
    bx: Operator,
    by: Operator,
    bz: Operator,
}

impl Generators {
    fn build(net: &SpinNetwork) -> Result<Self> {
        Ok(Self {
            drift: build_drift(net)?,
            bx: build_control(net, Axis::X)?,
            by: build_control(net, Axis::Y)?,
            bz: build_control(net, Axis::Z)?,
        })
    }

    fn segment_generator(&self, seg: &ControlSegment) -> Operator {
        &self.drift
            + &self.bx * Complex64::new(seg.ux, 0.0)
            + &self.by * Complex64::new(seg.uy, 0.0)
            + &self.bz * Complex64::new(seg.uz, 0.0)
    }
}

fn check_grid(grid: f64) -> Result<()> {
    if !(grid.is_finite() && grid > 0.0) {
        return Err(Error::InvalidGrid(grid));
    }
    Ok(())
}

/// Walk the trajectory, handing every sampled state (including `t = 0`) to
/// `visit`. The state is renormalized nowhere: unitary steps preserve trace
/// and spectrum to roundoff.
fn walk<F: FnMut(usize, &Operator)>(
    net: &SpinNetwork,
    sched: &ControlSchedule,
    rho0: &DensityMatrix,
    grid: f64,
    mut visit: F,
) -> Result<()> {
    check_grid(grid)?;
    if rho0.dim() != net.dim() {
        return Err(Error::DimensionMismatch { left: net.dim(), right: rho0.dim() });
    }
    let gens = Generators::build(net)?;
    let mut rho = rho0.matrix().clone();
    let mut idx = 0usize;
    visit(idx, &rho);
    for (seg, steps) in sched.segments().iter().zip(sched.steps_per_segment(grid)?) {
        let u = step_exponential(&gens.segment_generator(seg), grid)?;
        let u_dag = u.adjoint();
        for _ in 0..steps {
            rho = &u * rho * &u_dag;
            idx += 1;
            visit(idx, &rho);
        }
    }
    Ok(())
}

/// Propagate and return the sampled states, `rho(0)` first.
pub fn propagate(
    net: &SpinNetwork,
    sched: &ControlSchedule,
    rho0: &DensityMatrix,
    grid: f64,
) -> Result<Vec<DensityMatrix>> {
    let mut out = Vec::with_capacity(sched.sample_count(grid)?);
    walk(net, sched, rho0, grid, |_, rho| {
        out.push(DensityMatrix::from_trusted(rho.clone()));
    })?;
    Ok(out)
}

/// Total-magnetization outputs `M_v(t_j) = Tr(S_v rho(t_j))` on the grid.
pub fn magnetization_trace(
    net: &SpinNetwork,
    sched: &ControlSchedule,
    rho0: &DensityMatrix,
    grid: f64,
) -> Result<Trace> {
    let n = net.n_spins();
    let sx = total_spin(n, Axis::X)?;
    let sy = total_spin(n, Axis::Y)?;
    let sz = total_spin(n, Axis::Z)?;
    let count = sched.sample_count(grid)?;
    let mut times = Vec::with_capacity(count);
    let mut mx = Vec::with_capacity(count);
    let mut my = Vec::with_capacity(count);
    let mut mz = Vec::with_capacity(count);
    walk(net, sched, rho0, grid, |idx, rho| {
        times.push(idx as f64 * grid);
        mx.push(trace_product(&sx, rho).re);
        my.push(trace_product(&sy, rho).re);
        mz.push(trace_product(&sz, rho).re);
    })?;
    Trace::new(times, mx, my, mz)
}

/// Expectation series `Tr(F rho(t_j))` for a Hermitian observable `F`.
pub fn observable_trace(
    net: &SpinNetwork,
    sched: &ControlSchedule,
    rho0: &DensityMatrix,
    f: &Operator,
    grid: f64,
) -> Result<Vec<f64>> {
    check_hermitian(f, HERMITICITY_TOL.max(1e-12 * operators::max_abs(f)))?;
    if f.nrows() != net.dim() {
        return Err(Error::DimensionMismatch { left: net.dim(), right: f.nrows() });
    }
    let mut out = Vec::with_capacity(sched.sample_count(grid)?);
    walk(net, sched, rho0, grid, |_, rho| {
        out.push(trace_product(f, rho).re);
    })?;
    Ok(out)
}
