//! File formats: model/pair JSON, schedule JSON, trace CSV, dataset
//! directories, and serializable fit reports.
//!
//! Traces are CSV with header `t,Mx,My,Mz`, one row per sample, 15
//! significant digits. All other artifacts are JSON. Writes go through a
//! temp-file-and-rename so readers never see partial files.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlSchedule, ControlSegment, DensityMatrix, Trace};
use crate::identify::{Branch, Dataset, FitResult, ParameterVector};
use crate::operators::{add_scaled_string, identity, Axis, PauliString, SpinNetwork};
use crate::equivalence::ModelStatePair;
use crate::{Error, Result};

/// On-disk model description; `initial_state` is optional and makes the file
/// usable as a pair file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n: usize,
    pub gamma: Vec<f64>,
    pub couplings: Vec<CouplingEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<StateSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingEntry {
    pub k: usize,
    pub l: usize,
    #[serde(rename = "J")]
    pub j: f64,
}

/// A state, either as Pauli-string coefficients added to the scalar part
/// `I / 2^n`, or as a dense complex matrix of `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Strings { strings: Vec<StringTerm> },
    Dense { dense: Vec<Vec<[f64; 2]>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StringTerm {
    pub sites: Vec<(usize, Axis)>,
    pub coeff: f64,
}

impl ModelFile {
    pub fn network(&self) -> Result<SpinNetwork> {
        SpinNetwork::new(
            self.n,
            self.gamma.clone(),
            self.couplings.iter().map(|c| (c.k, c.l, c.j)),
        )
    }

    /// The embedded state, if any. Positivity is enforced here; use the
    /// equivalence layer for deliberately relaxed states.
    pub fn state(&self) -> Result<Option<DensityMatrix>> {
        match &self.initial_state {
            None => Ok(None),
            Some(spec) => Ok(Some(spec.to_state(self.n)?)),
        }
    }

    pub fn pair(&self) -> Result<ModelStatePair> {
        let net = self.network()?;
        let state = self
            .state()?
            .ok_or_else(|| Error::InvalidState("pair file has no initial_state".into()))?;
        ModelStatePair::new(net, state)
    }

    pub fn from_network(net: &SpinNetwork) -> Self {
        Self {
            n: net.n_spins(),
            gamma: net.gamma().to_vec(),
            couplings: net
                .couplings()
                .map(|((k, l), j)| CouplingEntry { k, l, j })
                .collect(),
            initial_state: None,
        }
    }

    pub fn from_pair(pair: &ModelStatePair) -> Self {
        let mut file = Self::from_network(pair.network());
        file.initial_state = Some(StateSpec::from_state(pair.initial_state()));
        file
    }
}

impl StateSpec {
    pub fn to_state(&self, n: usize) -> Result<DensityMatrix> {
        let dim = 1usize << n;
        match self {
            StateSpec::Strings { strings } => {
                let mut mat = identity(dim) * Complex64::new(1.0 / dim as f64, 0.0);
                for term in strings {
                    if !term.coeff.is_finite() {
                        return Err(Error::InvalidState("non-finite coefficient".into()));
                    }
                    let p = PauliString::new(n, term.sites.clone())?;
                    if p.is_identity() {
                        return Err(Error::InvalidState(
                            "the scalar part is implicit; drop the empty-site term".into(),
                        ));
                    }
                    add_scaled_string(&mut mat, &p, Complex64::new(term.coeff, 0.0));
                }
                DensityMatrix::new(mat)
            }
            StateSpec::Dense { dense } => {
                if dense.len() != dim || dense.iter().any(|row| row.len() != dim) {
                    return Err(Error::InvalidState(format!(
                        "dense state must be {dim} x {dim} for n = {n}"
                    )));
                }
                let mut mat = crate::Operator::zeros(dim, dim);
                for (i, row) in dense.iter().enumerate() {
                    for (j, &[re, im]) in row.iter().enumerate() {
                        mat[(i, j)] = Complex64::new(re, im);
                    }
                }
                DensityMatrix::new(mat)
            }
        }
    }

    /// Dense encoding of an existing state.
    pub fn from_state(state: &DensityMatrix) -> Self {
        let m = state.matrix();
        let dense = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
            .collect();
        StateSpec::Dense { dense }
    }
}

/// On-disk control schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub segments: Vec<SegmentEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentEntry {
    pub dt: f64,
    pub ux: f64,
    pub uy: f64,
    pub uz: f64,
}

impl ScheduleFile {
    pub fn schedule(&self) -> Result<ControlSchedule> {
        ControlSchedule::new(
            self.segments
                .iter()
                .map(|s| ControlSegment { duration: s.dt, ux: s.ux, uy: s.uy, uz: s.uz })
                .collect(),
        )
    }

    pub fn from_schedule(sched: &ControlSchedule) -> Self {
        Self {
            segments: sched
                .segments()
                .iter()
                .map(|s| SegmentEntry { dt: s.duration, ux: s.ux, uy: s.uy, uz: s.uz })
                .collect(),
        }
    }
}

/// Structural hypothesis for an identification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisFile {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub known_state: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_guess: Option<GuessEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuessEntry {
    #[serde(rename = "J")]
    pub j: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Serializable view of a fit result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub branch: Branch,
    pub couplings: Vec<CouplingEntry>,
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<StateSpec>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn new(fit: &FitResult, edges: &[(usize, usize)]) -> Self {
        let couplings = edges
            .iter()
            .zip(fit.estimate.j())
            .map(|(&(k, l), &j)| CouplingEntry { k, l, j })
            .collect();
        let initial_state = match fit.estimate.initial_state() {
            Some(Ok(state)) => Some(StateSpec::from_state(&state)),
            _ => None,
        };
        Self {
            branch: fit.branch,
            couplings,
            gamma: fit.estimate.gamma().to_vec(),
            initial_state,
            residual: fit.residual,
            iterations: fit.iterations,
            converged: fit.converged,
            warnings: fit.warnings.clone(),
        }
    }
}

fn fmt_sig15(v: f64) -> String {
    format!("{v:.14e}")
}

/// Serialize a trace as CSV: header `t,Mx,My,Mz`, 15 significant digits.
pub fn trace_to_csv(trace: &Trace) -> String {
    let mut out = String::with_capacity(trace.len() * 80 + 16);
    out.push_str("t,Mx,My,Mz\n");
    for i in 0..trace.len() {
        out.push_str(&fmt_sig15(trace.times()[i]));
        for axis in Axis::ALL {
            out.push(',');
            out.push_str(&fmt_sig15(trace.values(axis)[i]));
        }
        out.push('\n');
    }
    out
}

pub fn trace_from_csv(text: &str) -> Result<Trace> {
    let mut lines = text.lines();
    match lines.next() {
        Some("t,Mx,My,Mz") => {}
        Some(other) => {
            return Err(Error::Csv(format!("unexpected header {other:?}")));
        }
        None => return Err(Error::Csv("empty file".into())),
    }
    let mut times = Vec::new();
    let mut mx = Vec::new();
    let mut my = Vec::new();
    let mut mz = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Csv(format!(
                "row {}: expected 4 fields, got {}",
                idx + 2,
                fields.len()
            )));
        }
        let mut parsed = [0.0f64; 4];
        for (slot, field) in parsed.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .map_err(|_| Error::Csv(format!("row {}: bad number {field:?}", idx + 2)))?;
        }
        times.push(parsed[0]);
        mx.push(parsed[1]);
        my.push(parsed[2]);
        mz.push(parsed[3]);
    }
    Trace::new(times, mx, my, mz)
}

/// Write bytes then rename into place, so the destination is never partial.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Loaded identification inputs: the dataset plus state and guess when given.
#[derive(Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub known_state: Option<DensityMatrix>,
    pub guess: Option<ParameterVector>,
}

/// Read a dataset directory: `hypothesis.json` plus `schedule_<i>.json` /
/// `trace_<i>.csv` pairs for `i = 0, 1, ...` without gaps. The sample grid is
/// inferred from the first trace.
pub fn read_dataset_dir(dir: &Path) -> Result<LoadedDataset> {
    let hyp_path = dir.join("hypothesis.json");
    if !hyp_path.is_file() {
        return Err(Error::InvalidDataset(format!("{} is missing", hyp_path.display())));
    }
    let hyp: HypothesisFile = read_json(&hyp_path)
        .map_err(|e| Error::InvalidDataset(format!("{}: {e}", hyp_path.display())))?;

    let mut records = Vec::new();
    let mut grid = None;
    for i in 0.. {
        let sched_path = dir.join(format!("schedule_{i}.json"));
        let trace_path = dir.join(format!("trace_{i}.csv"));
        if !sched_path.is_file() {
            if trace_path.is_file() {
                return Err(Error::InvalidDataset(format!(
                    "{} exists without {}",
                    trace_path.display(),
                    sched_path.display()
                )));
            }
            break;
        }
        let sched_file: ScheduleFile = read_json(&sched_path)
            .map_err(|e| Error::InvalidDataset(format!("{}: {e}", sched_path.display())))?;
        let sched = sched_file
            .schedule()
            .map_err(|e| Error::InvalidDataset(format!("{}: {e}", sched_path.display())))?;
        let text = fs::read_to_string(&trace_path)
            .map_err(|e| Error::InvalidDataset(format!("{}: {e}", trace_path.display())))?;
        let trace = trace_from_csv(&text)
            .map_err(|e| Error::InvalidDataset(format!("{}: {e}", trace_path.display())))?;
        if trace.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "{}: need at least two samples",
                trace_path.display()
            )));
        }
        let step = trace.times()[1] - trace.times()[0];
        match grid {
            None => grid = Some(step),
            Some(g) if (g - step).abs() > 1e-12 => {
                return Err(Error::InvalidDataset(format!(
                    "{}: grid {step} differs from {g}",
                    trace_path.display()
                )));
            }
            _ => {}
        }
        records.push((sched, trace));
    }
    if records.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "no schedule_<i>.json / trace_<i>.csv pairs in {}",
            dir.display()
        )));
    }

    let edges: Vec<(usize, usize)> = hyp.edges.iter().map(|&[k, l]| (k, l)).collect();
    let dataset = Dataset::new(hyp.n, edges, grid.expect("at least one record"), records)?;

    let known_state = if hyp.known_state {
        let name = hyp.state_file.as_deref().ok_or_else(|| {
            Error::InvalidDataset("known_state is true but state_file is missing".into())
        })?;
        let spec: StateSpec = read_json(&dir.join(name))
            .map_err(|e| Error::InvalidDataset(format!("{name}: {e}")))?;
        Some(spec.to_state(hyp.n)?)
    } else {
        None
    };

    let guess = hyp.initial_guess.as_ref().map(|g| {
        ParameterVector::new(g.j.clone(), g.gamma.clone())
    });
    if let Some(g) = &guess {
        if g.j().len() != dataset.edges().len() || g.gamma().len() != dataset.n_spins() {
            return Err(Error::InvalidDataset(
                "initial_guess does not match the hypothesis shape".into(),
            ));
        }
    }
    Ok(LoadedDataset { dataset, known_state, guess })
}

/// Write a dataset directory in the layout read by [`read_dataset_dir`].
pub fn write_dataset_dir(
    dir: &Path,
    dataset: &Dataset,
    hypothesis: &HypothesisFile,
    state: Option<&StateSpec>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("hypothesis.json"), hypothesis)?;
    if let (Some(spec), Some(name)) = (state, hypothesis.state_file.as_deref()) {
        write_json(&dir.join(name), spec)?;
    }
    for (i, (sched, trace)) in dataset.records().iter().enumerate() {
        write_json(&dir.join(format!("schedule_{i}.json")), &ScheduleFile::from_schedule(sched))?;
        write_atomic(
            &dir.join(format!("trace_{i}.csv")),
            trace_to_csv(trace).as_bytes(),
        )?;
    }
    Ok(())
}

/// Pauli-coefficient view of a state's deviation from `I / 2^n`, for
/// readable pair files.
pub fn state_to_strings(state: &DensityMatrix) -> Result<StateSpec> {
    let coeffs = crate::operators::pauli_decompose(state.matrix())?;
    let strings: Vec<StringTerm> = coeffs
        .terms()
        .filter(|(p, _)| !p.is_identity())
        .map(|(p, c)| StringTerm { sites: p.sites().to_vec(), coeff: c })
        .collect();
    Ok(StateSpec::Strings { strings })
}
