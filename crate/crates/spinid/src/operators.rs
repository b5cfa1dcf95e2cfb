//! Operator algebra for spin-1/2 registers.
//!
//! All spin operators carry the factor-1/2 normalization, so the single-site
//! commutation relations read `[s_x, s_y] = i s_z` cyclically. A
//! [`PauliString`] places such factors at a subset of sites of an `n`-spin
//! register (identity elsewhere) and realizes as the Kronecker product of the
//! `n` two-by-two factors, site 1 being the leftmost. Strings have exactly one
//! nonzero entry per row, which the decomposition and builder routines exploit
//! instead of forming dense products.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense complex matrix; every operator here is `2^n x 2^n`.
pub type Operator = DMatrix<Complex64>;

/// Absolute entrywise tolerance for Hermitian / skew-Hermitian assertions.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Entrywise tolerance for Pauli-basis reconstruction round trips.
pub const DECOMPOSITION_TOL: f64 = 1e-10;
/// Largest register realized as dense matrices (2^10 = 1024).
pub const MAX_SPINS: usize = 10;

const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

/// One of the three spin axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    /// The third axis `c` and the sign `s` in `[s_a, s_b] = s * i * s_c`,
    /// or `None` when the axes coincide.
    pub fn commutation(self, other: Axis) -> Option<(Axis, f64)> {
        use Axis::*;
        match (self, other) {
            (X, Y) => Some((Z, 1.0)),
            (Y, Z) => Some((X, 1.0)),
            (Z, X) => Some((Y, 1.0)),
            (Y, X) => Some((Z, -1.0)),
            (Z, Y) => Some((X, -1.0)),
            (X, Z) => Some((Y, -1.0)),
            (X, X) | (Y, Y) | (Z, Z) => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::X => write!(f, "x"),
            Axis::Y => write!(f, "y"),
            Axis::Z => write!(f, "z"),
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::InvalidPauliString(format!(
                "unknown axis {other:?}, expected x, y, or z"
            ))),
        }
    }
}

/// Factor-1/2 Pauli matrix along `axis`.
pub fn pauli(axis: Axis) -> Operator {
    let h = Complex64::new(0.5, 0.0);
    let ih = Complex64::new(0.0, 0.5);
    match axis {
        Axis::X => Operator::from_row_slice(2, 2, &[C_ZERO, h, h, C_ZERO]),
        Axis::Y => Operator::from_row_slice(2, 2, &[C_ZERO, -ih, ih, C_ZERO]),
        Axis::Z => Operator::from_row_slice(2, 2, &[h, C_ZERO, C_ZERO, -h]),
    }
}

/// A Kronecker product of factor-1/2 Pauli matrices on a subset of sites.
///
/// Sites are 1-based and kept sorted strictly increasing; the empty site list
/// is the `2^n` identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliString {
    n: usize,
    sites: Vec<(usize, Axis)>,
}

impl PauliString {
    pub fn new(n: usize, mut sites: Vec<(usize, Axis)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPauliString("need at least one spin".into()));
        }
        sites.sort_by_key(|&(k, _)| k);
        for window in sites.windows(2) {
            if window[0].0 == window[1].0 {
                return Err(Error::InvalidPauliString(format!(
                    "site {} listed twice",
                    window[0].0
                )));
            }
        }
        if let Some(&(k, _)) = sites.iter().find(|&&(k, _)| k < 1 || k > n) {
            return Err(Error::InvalidPauliString(format!(
                "site {k} out of range 1..={n}"
            )));
        }
        Ok(Self { n, sites })
    }

    /// The identity string (no Pauli factors).
    pub fn identity(n: usize) -> Self {
        Self { n, sites: Vec::new() }
    }

    /// Single-site string with `axis` at site `k`.
    pub fn single(n: usize, k: usize, axis: Axis) -> Result<Self> {
        Self::new(n, vec![(k, axis)])
    }

    pub fn n_spins(&self) -> usize {
        self.n
    }

    pub fn sites(&self) -> &[(usize, Axis)] {
        &self.sites
    }

    /// Number of non-identity factors.
    pub fn weight(&self) -> usize {
        self.sites.len()
    }

    pub fn is_identity(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn axis_at(&self, site: usize) -> Option<Axis> {
        self.sites
            .iter()
            .find(|&&(k, _)| k == site)
            .map(|&(_, axis)| axis)
    }

    /// Hilbert-Schmidt norm squared, `Tr(P P) = 2^(n - 2r)` for weight `r`.
    pub fn norm_sq(&self) -> f64 {
        2f64.powi(self.n as i32 - 2 * self.weight() as i32)
    }

    /// The unique nonzero entry in `row`: its column and value.
    fn row_entry(&self, row: usize) -> (usize, Complex64) {
        let mut col = row;
        let mut val = C_ONE;
        for &(site, axis) in &self.sites {
            let shift = self.n - site;
            let bit = (row >> shift) & 1;
            match axis {
                Axis::X => {
                    col ^= 1 << shift;
                    val *= Complex64::new(0.5, 0.0);
                }
                Axis::Y => {
                    col ^= 1 << shift;
                    val *= if bit == 0 {
                        Complex64::new(0.0, -0.5)
                    } else {
                        Complex64::new(0.0, 0.5)
                    };
                }
                Axis::Z => {
                    val *= if bit == 0 {
                        Complex64::new(0.5, 0.0)
                    } else {
                        Complex64::new(-0.5, 0.0)
                    };
                }
            }
        }
        (col, val)
    }

    /// Dense `2^n x 2^n` realization.
    pub fn realize(&self) -> Result<Operator> {
        if self.n > MAX_SPINS {
            return Err(Error::CapExceeded { n: self.n, cap: MAX_SPINS });
        }
        let dim = 1usize << self.n;
        let mut m = Operator::zeros(dim, dim);
        for row in 0..dim {
            let (col, val) = self.row_entry(row);
            m[(row, col)] = val;
        }
        Ok(m)
    }

    /// `Tr(P X)` computed through the string's one-entry-per-row structure.
    pub fn trace_dot(&self, x: &Operator) -> Result<Complex64> {
        let dim = 1usize << self.n;
        check_square(x)?;
        if x.nrows() != dim {
            return Err(Error::DimensionMismatch { left: dim, right: x.nrows() });
        }
        let mut acc = C_ZERO;
        for row in 0..dim {
            let (col, val) = self.row_entry(row);
            acc += val * x[(col, row)];
        }
        Ok(acc)
    }

    /// All `4^n` strings on `n` spins, identity first, in a fixed canonical
    /// order (site 1 most significant, I < X < Y < Z per site).
    pub fn enumerate(n: usize) -> impl Iterator<Item = PauliString> {
        let total = 4usize.pow(n as u32);
        (0..total).map(move |code| {
            let mut sites = Vec::new();
            for site in 1..=n {
                let digit = (code >> (2 * (n - site))) & 3;
                match digit {
                    0 => {}
                    1 => sites.push((site, Axis::X)),
                    2 => sites.push((site, Axis::Y)),
                    _ => sites.push((site, Axis::Z)),
                }
            }
            PauliString { n, sites }
        })
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return write!(f, "I");
        }
        let parts: Vec<String> = self
            .sites
            .iter()
            .map(|(k, axis)| format!("{k}{axis}"))
            .collect();
        write!(f, "I_{{{}}}", parts.join(","))
    }
}

/// An `n`-spin model: symmetric exchange constants `J_kl` (stored for
/// `k < l`, absent meaning zero) and gyromagnetic ratios `gamma_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinNetwork {
    n: usize,
    gamma: Vec<f64>,
    couplings: BTreeMap<(usize, usize), f64>,
}

impl SpinNetwork {
    /// Build a network from `gamma` (length `n`) and `(k, l, J_kl)` triples.
    /// Pairs may be given in either order and are normalized to `k < l`.
    pub fn new(
        n: usize,
        gamma: Vec<f64>,
        couplings: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidNetwork("need at least one spin".into()));
        }
        if gamma.len() != n {
            return Err(Error::InvalidNetwork(format!(
                "expected {n} gyromagnetic ratios, got {}",
                gamma.len()
            )));
        }
        if let Some(g) = gamma.iter().find(|g| !g.is_finite()) {
            return Err(Error::InvalidNetwork(format!("non-finite gamma {g}")));
        }
        let mut map = BTreeMap::new();
        for (k, l, j) in couplings {
            if k == l {
                return Err(Error::InvalidNetwork(format!("self-coupling at site {k}")));
            }
            let (k, l) = (k.min(l), k.max(l));
            if k < 1 || l > n {
                return Err(Error::InvalidNetwork(format!(
                    "coupling ({k},{l}) out of range 1..={n}"
                )));
            }
            if !j.is_finite() {
                return Err(Error::InvalidNetwork(format!("non-finite J_{k}{l}")));
            }
            if map.insert((k, l), j).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "coupling ({k},{l}) listed twice"
                )));
            }
        }
        Ok(Self { n, gamma, couplings: map })
    }

    pub fn n_spins(&self) -> usize {
        self.n
    }

    /// Hilbert-space dimension `2^n`.
    pub fn dim(&self) -> usize {
        1usize << self.n
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// `J_kl`, symmetric in the pair, zero when absent.
    pub fn coupling(&self, k: usize, l: usize) -> f64 {
        let key = (k.min(l), k.max(l));
        self.couplings.get(&key).copied().unwrap_or(0.0)
    }

    /// All stored couplings, `k < l`, possibly including explicit zeros.
    pub fn couplings(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.couplings.iter().map(|(&kl, &j)| (kl, j))
    }

    /// Graph edges: the pairs with `J_kl != 0`.
    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.couplings().filter(|&(_, j)| j != 0.0)
    }

    /// True when all gyromagnetic ratios are pairwise different.
    pub fn gamma_distinct(&self) -> bool {
        let mut sorted = self.gamma.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.windows(2).all(|w| w[0] != w[1])
    }

    /// Network with every exchange constant negated.
    pub fn negated(&self) -> SpinNetwork {
        let mut flipped = self.clone();
        for j in flipped.couplings.values_mut() {
            *j = -*j;
        }
        flipped
    }
}

/// Total spin along `axis`: the sum of the single-site strings.
pub fn total_spin(n: usize, axis: Axis) -> Result<Operator> {
    if n > MAX_SPINS {
        return Err(Error::CapExceeded { n, cap: MAX_SPINS });
    }
    let dim = 1usize << n;
    let mut m = Operator::zeros(dim, dim);
    for k in 1..=n {
        add_scaled_string(&mut m, &PauliString::single(n, k, axis)?, C_ONE);
    }
    Ok(m)
}

/// Drift generator `A = -i sum_{k<l} J_kl (I_kx,lx + I_ky,ly + I_kz,lz)`.
/// Skew-Hermitian and traceless.
pub fn build_drift(net: &SpinNetwork) -> Result<Operator> {
    if net.n_spins() > MAX_SPINS {
        return Err(Error::CapExceeded { n: net.n_spins(), cap: MAX_SPINS });
    }
    let n = net.n_spins();
    let mut m = Operator::zeros(net.dim(), net.dim());
    for ((k, l), j) in net.edges() {
        let factor = Complex64::new(0.0, -j);
        for axis in Axis::ALL {
            let p = PauliString::new(n, vec![(k, axis), (l, axis)])?;
            add_scaled_string(&mut m, &p, factor);
        }
    }
    Ok(m)
}

/// Control generator `B_v = -i sum_k gamma_k I_kv`. Skew-Hermitian.
pub fn build_control(net: &SpinNetwork, axis: Axis) -> Result<Operator> {
    if net.n_spins() > MAX_SPINS {
        return Err(Error::CapExceeded { n: net.n_spins(), cap: MAX_SPINS });
    }
    let n = net.n_spins();
    let mut m = Operator::zeros(net.dim(), net.dim());
    for (k, &g) in net.gamma().iter().enumerate() {
        if g != 0.0 {
            let p = PauliString::single(n, k + 1, axis)?;
            add_scaled_string(&mut m, &p, Complex64::new(0.0, -g));
        }
    }
    Ok(m)
}

pub(crate) fn add_scaled_string(m: &mut Operator, p: &PauliString, factor: Complex64) {
    let dim = m.nrows();
    for row in 0..dim {
        let (col, val) = p.row_entry(row);
        m[(row, col)] += factor * val;
    }
}

/// `[X, Y] = XY - YX`.
pub fn commutator(x: &Operator, y: &Operator) -> Result<Operator> {
    check_square(x)?;
    check_square(y)?;
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch { left: x.nrows(), right: y.nrows() });
    }
    Ok(x * y - y * x)
}

/// Real coefficients of a Hermitian operator in the Pauli-string basis,
/// `c_P = Tr(P X) / Tr(P P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliCoefficients {
    n: usize,
    terms: BTreeMap<PauliString, f64>,
}

impl PauliCoefficients {
    pub fn n_spins(&self) -> usize {
        self.n
    }

    /// Nonzero terms in canonical string order.
    pub fn terms(&self) -> impl Iterator<Item = (&PauliString, f64)> {
        self.terms.iter().map(|(p, &c)| (p, c))
    }

    pub fn coefficient(&self, p: &PauliString) -> f64 {
        self.terms.get(p).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Dense operator `sum_P c_P P`.
    pub fn reconstruct(&self) -> Result<Operator> {
        let dim = 1usize << self.n;
        let mut m = Operator::zeros(dim, dim);
        for (p, &c) in &self.terms {
            add_scaled_string(&mut m, p, Complex64::new(c, 0.0));
        }
        Ok(m)
    }

}

/// Expand a Hermitian operator over the `4^n` Pauli strings.
///
/// Cost grows as `8^n`; intended for small registers (analysis and state
/// bookkeeping, not propagation).
pub fn pauli_decompose(x: &Operator) -> Result<PauliCoefficients> {
    let n = spins_for_dim(x.nrows())?;
    check_square(x)?;
    let scale = max_abs(x).max(1.0);
    let defect = hermiticity_defect(x);
    if defect > DECOMPOSITION_TOL * scale {
        return Err(Error::NotHermitian { defect });
    }
    let mut terms = BTreeMap::new();
    for p in PauliString::enumerate(n) {
        let c = p.trace_dot(x)? / p.norm_sq();
        if c.re != 0.0 {
            terms.insert(p, c.re);
        }
    }
    Ok(PauliCoefficients { n, terms })
}

/// A permutation of sites `1..=n`, stored as the image list `pi(1), ..., pi(n)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    images: Vec<usize>,
}

impl Permutation {
    pub fn new(images: Vec<usize>) -> Result<Self> {
        let n = images.len();
        if n == 0 {
            return Err(Error::InvalidPermutation("empty image list".into()));
        }
        let mut seen = vec![false; n];
        for &v in &images {
            if v < 1 || v > n || seen[v - 1] {
                return Err(Error::InvalidPermutation(format!(
                    "{images:?} is not a bijection of 1..={n}"
                )));
            }
            seen[v - 1] = true;
        }
        Ok(Self { images })
    }

    pub fn identity(n: usize) -> Self {
        Self { images: (1..=n).collect() }
    }

    /// Swap of sites `a` and `b`.
    pub fn transposition(n: usize, a: usize, b: usize) -> Result<Self> {
        if a < 1 || a > n || b < 1 || b > n || a == b {
            return Err(Error::InvalidPermutation(format!(
                "cannot swap sites {a} and {b} on {n} spins"
            )));
        }
        let mut images: Vec<usize> = (1..=n).collect();
        images.swap(a - 1, b - 1);
        Ok(Self { images })
    }

    pub fn degree(&self) -> usize {
        self.images.len()
    }

    /// `pi(k)` for 1-based `k`.
    pub fn apply(&self, k: usize) -> usize {
        self.images[k - 1]
    }

    pub fn inverse(&self) -> Permutation {
        let mut images = vec![0; self.images.len()];
        for (k, &v) in self.images.iter().enumerate() {
            images[v - 1] = k + 1;
        }
        Self { images }
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(i, &v)| v == i + 1)
    }

    /// All `n!` permutations in lexicographic order of their image lists.
    pub fn all(n: usize) -> Vec<Permutation> {
        let mut out = Vec::new();
        let mut images: Vec<usize> = (1..=n).collect();
        loop {
            out.push(Self { images: images.clone() });
            // next lexicographic permutation
            let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| images[i] < images[i + 1])
            else {
                break;
            };
            let j = (i + 1..n).rev().find(|&j| images[j] > images[i]).unwrap();
            images.swap(i, j);
            images[i + 1..].reverse();
        }
        out
    }
}

/// Orthogonal operator `P_pi` reordering Kronecker factors:
/// `P_pi (K_1 x ... x K_n) P_pi^T = K_pi(1) x ... x K_pi(n)`.
///
/// `P_pi` is a permutation matrix on basis states; it is symmetric (so the
/// transpose above can be dropped) exactly when `pi` is an involution, and
/// composes as `P_pi^m = P_(pi^m)` in general.
pub fn permutation_operator(n: usize, pi: &Permutation) -> Result<Operator> {
    if pi.degree() != n {
        return Err(Error::InvalidPermutation(format!(
            "permutation of degree {} on {n} spins",
            pi.degree()
        )));
    }
    if n > MAX_SPINS {
        return Err(Error::CapExceeded { n, cap: MAX_SPINS });
    }
    let dim = 1usize << n;
    let mut m = Operator::zeros(dim, dim);
    for y in 0..dim {
        let mut c = 0usize;
        for i in 1..=n {
            let bit = (y >> (n - pi.apply(i))) & 1;
            c |= bit << (n - i);
        }
        m[(c, y)] = C_ONE;
    }
    Ok(m)
}

/// Hilbert-Schmidt inner product `<X, Y> = Tr(X^dag Y)`.
pub fn hs_inner(x: &Operator, y: &Operator) -> Complex64 {
    x.dotc(y)
}

/// `Tr(X Y)`.
pub fn trace_product(x: &Operator, y: &Operator) -> Complex64 {
    let mut acc = C_ZERO;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            acc += x[(i, j)] * y[(j, i)];
        }
    }
    acc
}

/// Largest entrywise deviation from `X = X^dag`.
pub fn hermiticity_defect(x: &Operator) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.nrows() {
        for j in i..x.ncols() {
            worst = worst.max((x[(i, j)] - x[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Largest entrywise deviation from `X = -X^dag`.
pub fn skew_hermiticity_defect(x: &Operator) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.nrows() {
        for j in i..x.ncols() {
            worst = worst.max((x[(i, j)] + x[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn check_hermitian(x: &Operator, tol: f64) -> Result<()> {
    let defect = hermiticity_defect(x);
    if defect > tol {
        return Err(Error::NotHermitian { defect });
    }
    Ok(())
}

pub fn check_skew_hermitian(x: &Operator, tol: f64) -> Result<()> {
    let defect = skew_hermiticity_defect(x);
    if defect > tol {
        return Err(Error::NotSkewHermitian { defect });
    }
    Ok(())
}

/// Largest entry magnitude.
pub fn max_abs(x: &Operator) -> f64 {
    x.iter().fold(0.0f64, |acc, c| acc.max(c.norm()))
}

/// Spin count for a `2^n` dimension, rejecting non-powers of two.
pub fn spins_for_dim(dim: usize) -> Result<usize> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(Error::DimensionMismatch { left: dim, right: dim.next_power_of_two().max(2) });
    }
    Ok(dim.trailing_zeros() as usize)
}

fn check_square(x: &Operator) -> Result<()> {
    if x.nrows() != x.ncols() {
        return Err(Error::DimensionMismatch { left: x.nrows(), right: x.ncols() });
    }
    Ok(())
}

/// Complex identity of the given dimension.
pub fn identity(dim: usize) -> Operator {
    Operator::identity(dim, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_op_eq(a: &Operator, b: &Operator, tol: f64) {
        assert_eq!(a.nrows(), b.nrows());
        let dev = max_abs(&(a - b));
        assert!(dev <= tol, "operators differ by {dev:.3e} (tol {tol:.1e})");
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize) -> Operator {
        let mut m = Operator::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        (&m + m.adjoint()) * c(0.5, 0.0)
    }

    #[test]
    fn pauli_matrices_carry_half_factor() {
        let z = pauli(Axis::Z);
        assert_eq!(z[(0, 0)], c(0.5, 0.0));
        assert_eq!(z[(1, 1)], c(-0.5, 0.0));
        let x = pauli(Axis::X);
        assert_eq!(x[(0, 1)], c(0.5, 0.0));
        assert_eq!(x[(1, 0)], c(0.5, 0.0));
        let y = pauli(Axis::Y);
        assert_eq!(y[(0, 1)], c(0.0, -0.5));
        assert_eq!(y[(1, 0)], c(0.0, 0.5));
    }

    #[test]
    fn realize_identity_and_embeddings() {
        let id = PauliString::identity(1).realize().unwrap();
        assert_op_eq(&id, &identity(2), 0.0);

        let zz = PauliString::new(2, vec![(1, Axis::Z), (2, Axis::Z)])
            .unwrap()
            .realize()
            .unwrap();
        let expect = Operator::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(0.25, 0.0),
            c(-0.25, 0.0),
            c(-0.25, 0.0),
            c(0.25, 0.0),
        ]));
        assert_op_eq(&zz, &expect, 0.0);

        let x1 = PauliString::single(2, 1, Axis::X).unwrap().realize().unwrap();
        let mut expect = Operator::zeros(4, 4);
        expect[(0, 2)] = c(0.5, 0.0);
        expect[(1, 3)] = c(0.5, 0.0);
        expect[(2, 0)] = c(0.5, 0.0);
        expect[(3, 1)] = c(0.5, 0.0);
        assert_op_eq(&x1, &expect, 0.0);
    }

    #[test]
    fn realize_rejects_out_of_range_site() {
        assert!(PauliString::new(2, vec![(3, Axis::X)]).is_err());
        assert!(PauliString::new(2, vec![(1, Axis::X), (1, Axis::Y)]).is_err());
    }

    #[test]
    fn realized_strings_are_hermitian() {
        for n in 1..=3 {
            for p in PauliString::enumerate(n) {
                let m = p.realize().unwrap();
                assert!(hermiticity_defect(&m) == 0.0, "{p}");
            }
        }
    }

    #[test]
    fn total_spin_examples() {
        let sz1 = total_spin(1, Axis::Z).unwrap();
        assert_op_eq(&sz1, &pauli(Axis::Z), 0.0);

        let sz2 = total_spin(2, Axis::Z).unwrap();
        let expect = Operator::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(1.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(-1.0, 0.0),
        ]));
        assert_op_eq(&sz2, &expect, 0.0);

        let sx2 = total_spin(2, Axis::X).unwrap();
        assert_abs_diff_eq!(sx2.trace().norm(), 0.0);
        assert_eq!(hermiticity_defect(&sx2), 0.0);
    }

    #[test]
    fn drift_zero_without_couplings() {
        let net = SpinNetwork::new(2, vec![1.0, 2.0], [(1, 2, 0.0)]).unwrap();
        let a = build_drift(&net).unwrap();
        assert_eq!(max_abs(&a), 0.0);
    }

    #[test]
    fn two_spin_drift_spectrum() {
        let net = SpinNetwork::new(2, vec![1.0, 2.0], [(1, 2, 1.0)]).unwrap();
        let a = build_drift(&net).unwrap();
        let ia = &a * c(0.0, 1.0);
        let mut eigs: Vec<f64> = ia.symmetric_eigen().eigenvalues.iter().copied().collect();
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let expect = [-0.75, 0.25, 0.25, 0.25];
        for (got, want) in eigs.iter().zip(expect) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-12);
        }
    }

    #[test]
    fn drift_is_skew_and_decomposes_on_coupling_strings() {
        let net =
            SpinNetwork::new(3, vec![1.0, 2.0, 3.0], [(1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let a = build_drift(&net).unwrap();
        assert!(skew_hermiticity_defect(&a) < 1e-15);
        assert!(a.trace().norm() < 1e-15);

        // i*A is Hermitian with coefficient J_kl on each I_{kv,lv} string.
        let ia = &a * c(0.0, 1.0);
        let coeffs = pauli_decompose(&ia).unwrap();
        let mut seen = 0;
        for (p, v) in coeffs.terms() {
            assert_eq!(p.weight(), 2);
            let (k, ak) = p.sites()[0];
            let (l, al) = p.sites()[1];
            assert_eq!(ak, al);
            assert_abs_diff_eq!(v, net.coupling(k, l), epsilon = 1e-12);
            seen += 1;
        }
        assert_eq!(seen, 6); // two edges, three axes each
    }

    #[test]
    fn control_examples() {
        let net1 = SpinNetwork::new(1, vec![1.0], []).unwrap();
        let bz = build_control(&net1, Axis::Z).unwrap();
        assert_eq!(bz[(0, 0)], c(0.0, -0.5));
        assert_eq!(bz[(1, 1)], c(0.0, 0.5));

        let net2 = SpinNetwork::new(2, vec![1.0, 2.0], []).unwrap();
        let bz2 = build_control(&net2, Axis::Z).unwrap();
        let expect = [-1.5, 0.5, -0.5, 1.5];
        for (i, want) in expect.iter().enumerate() {
            assert_abs_diff_eq!(bz2[(i, i)].im, want, epsilon = 0.0);
        }

        let net0 = SpinNetwork::new(2, vec![0.0, 0.0], [(1, 2, 1.0)]).unwrap();
        assert_eq!(max_abs(&build_control(&net0, Axis::X).unwrap()), 0.0);
    }

    #[test]
    fn commutator_basics() {
        let sx = pauli(Axis::X);
        let sy = pauli(Axis::Y);
        let sz = pauli(Axis::Z);
        let lhs = commutator(&sx, &sy).unwrap();
        assert_op_eq(&lhs, &(&sz * c(0.0, 1.0)), 1e-16);
        assert_eq!(max_abs(&commutator(&sx, &sx).unwrap()), 0.0);

        let xx = PauliString::new(2, vec![(1, Axis::X), (2, Axis::X)]).unwrap();
        let z1 = PauliString::single(2, 1, Axis::Z).unwrap();
        let got = commutator(&xx.realize().unwrap(), &z1.realize().unwrap()).unwrap();
        let yx = PauliString::new(2, vec![(1, Axis::Y), (2, Axis::X)]).unwrap();
        let expect = yx.realize().unwrap() * c(0.0, -1.0);
        assert_op_eq(&got, &expect, 1e-16);

        assert!(commutator(&sx, &identity(4)).is_err());
    }

    /// Single-site bracket case split: `[P, I_kv]` vanishes unless `P` holds a
    /// different axis at site `k`, in which case the axes merge with an `i`
    /// and the cyclic sign. Exhaustive for n <= 3.
    #[test]
    fn single_site_bracket_case_split() {
        for n in 1..=3usize {
            for p in PauliString::enumerate(n) {
                let pm = p.realize().unwrap();
                for site in 1..=n {
                    for axis in Axis::ALL {
                        let q = PauliString::single(n, site, axis).unwrap();
                        let got = commutator(&pm, &q.realize().unwrap()).unwrap();
                        match p.axis_at(site) {
                            None => assert_eq!(max_abs(&got), 0.0),
                            Some(pa) if pa == axis => assert_eq!(max_abs(&got), 0.0),
                            Some(pa) => {
                                let (merged, sign) = pa.commutation(axis).unwrap();
                                let sites: Vec<(usize, Axis)> = p
                                    .sites()
                                    .iter()
                                    .map(|&(k, a)| if k == site { (k, merged) } else { (k, a) })
                                    .collect();
                                let expect = PauliString::new(n, sites)
                                    .unwrap()
                                    .realize()
                                    .unwrap()
                                    * c(0.0, sign);
                                assert_op_eq(&got, &expect, 1e-16);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Double brackets of the drift with two single-site strings isolate a
    /// single coupling: `[iI_lz, [iI_kx, A]] = J_kl * i * I_{kz,lx}` for
    /// `l > k`.
    #[test]
    fn double_bracket_isolates_single_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=4usize {
            let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.5)).collect();
            let mut couplings = Vec::new();
            for k in 1..=n {
                for l in (k + 1)..=n {
                    if rng.random_range(0.0..1.0) < 0.7 {
                        couplings.push((k, l, rng.random_range(-1.5..1.5)));
                    }
                }
            }
            let net = SpinNetwork::new(n, gamma, couplings).unwrap();
            let a = build_drift(&net).unwrap();
            let i = c(0.0, 1.0);
            for k in 1..=n {
                for l in (k + 1)..=n {
                    let ikx = PauliString::single(n, k, Axis::X).unwrap().realize().unwrap() * i;
                    let ilz = PauliString::single(n, l, Axis::Z).unwrap().realize().unwrap() * i;
                    let inner = commutator(&ikx, &a).unwrap();
                    let got = commutator(&ilz, &inner).unwrap();
                    let zx = PauliString::new(n, vec![(k, Axis::Z), (l, Axis::X)])
                        .unwrap()
                        .realize()
                        .unwrap();
                    let expect = zx * c(0.0, net.coupling(k, l));
                    assert_op_eq(&got, &expect, 1e-12);
                }
            }
        }
    }

    #[test]
    fn decompose_identity_and_basis_elements() {
        let coeffs = pauli_decompose(&identity(2)).unwrap();
        assert_eq!(coeffs.len(), 1);
        assert_abs_diff_eq!(coeffs.coefficient(&PauliString::identity(1)), 1.0);

        let coeffs = pauli_decompose(&pauli(Axis::Z)).unwrap();
        assert_eq!(coeffs.len(), 1);
        let z = PauliString::single(1, 1, Axis::Z).unwrap();
        assert_abs_diff_eq!(coeffs.coefficient(&z), 1.0);
    }

    #[test]
    fn decompose_roundtrip_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hermitian(&mut rng, 4);
        let coeffs = pauli_decompose(&h).unwrap();
        let back = coeffs.reconstruct().unwrap();
        let scale = max_abs(&h).max(1.0);
        assert!(max_abs(&(&h - &back)) < DECOMPOSITION_TOL * scale);
    }

    #[test]
    fn decompose_rejects_non_hermitian() {
        let mut m = identity(2);
        m[(0, 1)] = c(0.3, 0.4);
        assert!(matches!(pauli_decompose(&m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn string_orthogonality_and_norms() {
        for n in 1..=3usize {
            let all: Vec<PauliString> = PauliString::enumerate(n).collect();
            for (i, p) in all.iter().enumerate() {
                let pm = p.realize().unwrap();
                assert_abs_diff_eq!(
                    trace_product(&pm, &pm).re,
                    p.norm_sq(),
                    epsilon = 1e-14
                );
                // spot-check orthogonality against a shifted partner
                let q = &all[(i + 7) % all.len()];
                if q != p {
                    let qm = q.realize().unwrap();
                    assert_abs_diff_eq!(trace_product(&pm, &qm).norm(), 0.0, epsilon = 1e-14);
                }
            }
        }
        // n = 4 spot checks of Tr(P P) = 2^(n-2r)
        let p = PauliString::new(4, vec![(1, Axis::X), (3, Axis::Y), (4, Axis::Z)]).unwrap();
        assert_abs_diff_eq!(
            trace_product(&p.realize().unwrap(), &p.realize().unwrap()).re,
            2f64.powi(-2),
            epsilon = 1e-14
        );
    }

    #[test]
    fn permutation_operator_identity_and_swap() {
        let id = permutation_operator(2, &Permutation::identity(2)).unwrap();
        assert_op_eq(&id, &identity(4), 0.0);

        let swap = permutation_operator(2, &Permutation::transposition(2, 1, 2).unwrap()).unwrap();
        let mut expect = Operator::zeros(4, 4);
        expect[(0, 0)] = C_ONE;
        expect[(1, 2)] = C_ONE;
        expect[(2, 1)] = C_ONE;
        expect[(3, 3)] = C_ONE;
        assert_op_eq(&swap, &expect, 0.0);
        assert_op_eq(&(&swap * &swap), &identity(4), 0.0);
    }

    #[test]
    fn permutation_operator_three_cycle_and_conjugation() {
        let pi = Permutation::new(vec![2, 3, 1]).unwrap();
        let p = permutation_operator(3, &pi).unwrap();
        let p3 = &p * &(&p * &p);
        assert_op_eq(&p3, &identity(8), 0.0);

        // conjugation reorders Kronecker factors
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ks: Vec<Operator> = (0..3)
            .map(|_| {
                let mut m = Operator::zeros(2, 2);
                for i in 0..2 {
                    for j in 0..2 {
                        m[(i, j)] = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    }
                }
                m
            })
            .collect();
        let kron3 = |a: &Operator, b: &Operator, c_: &Operator| a.kronecker(b).kronecker(c_);
        let lhs = &p * kron3(&ks[0], &ks[1], &ks[2]) * p.transpose();
        let rhs = kron3(&ks[pi.apply(1) - 1], &ks[pi.apply(2) - 1], &ks[pi.apply(3) - 1]);
        assert_op_eq(&lhs, &rhs, 1e-12);
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::new(vec![1, 1]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
        assert!(Permutation::new(vec![2, 3]).is_err());
        assert_eq!(Permutation::all(3).len(), 6);
        let pi = Permutation::new(vec![3, 1, 2]).unwrap();
        let inv = pi.inverse();
        for k in 1..=3 {
            assert_eq!(inv.apply(pi.apply(k)), k);
        }
    }

    #[test]
    fn permutation_operator_rejects_degree_mismatch() {
        let pi = Permutation::identity(2);
        assert!(matches!(
            permutation_operator(3, &pi),
            Err(Error::InvalidPermutation(_))
        ));
    }

    #[test]
    fn network_validation() {
        assert!(SpinNetwork::new(0, vec![], []).is_err());
        assert!(SpinNetwork::new(2, vec![1.0], []).is_err());
        assert!(SpinNetwork::new(2, vec![1.0, 2.0], [(1, 1, 0.5)]).is_err());
        assert!(SpinNetwork::new(2, vec![1.0, 2.0], [(1, 3, 0.5)]).is_err());
        assert!(SpinNetwork::new(2, vec![1.0, 2.0], [(1, 2, 0.5), (2, 1, 0.3)]).is_err());
        assert!(SpinNetwork::new(2, vec![1.0, f64::NAN], []).is_err());

        let net = SpinNetwork::new(3, vec![1.0, 2.0, 3.0], [(2, 1, 0.7)]).unwrap();
        assert_eq!(net.coupling(1, 2), 0.7);
        assert_eq!(net.coupling(2, 1), 0.7);
        assert_eq!(net.coupling(1, 3), 0.0);
        assert!(net.gamma_distinct());
        assert!(!SpinNetwork::new(2, vec![1.0, 1.0], []).unwrap().gamma_distinct());
    }

    proptest! {
        /// Decomposition round trip on random Hermitian matrices up to n = 4.
        #[test]
        fn decomposition_roundtrip(n in 1usize..=4, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_hermitian(&mut rng, 1 << n);
            let coeffs = pauli_decompose(&h).unwrap();
            let back = coeffs.reconstruct().unwrap();
            let scale = max_abs(&h).max(1.0);
            prop_assert!(max_abs(&(&h - &back)) < DECOMPOSITION_TOL * scale);
        }

        /// Strings realize Hermitian, and their pairwise HS products vanish.
        #[test]
        fn strings_orthogonal(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1usize..=3);
            let all: Vec<PauliString> = PauliString::enumerate(n).collect();
            let i = rng.random_range(0..all.len());
            let j = rng.random_range(0..all.len());
            let pm = all[i].realize().unwrap();
            prop_assert_eq!(hermiticity_defect(&pm), 0.0);
            if i != j {
                let qm = all[j].realize().unwrap();
                prop_assert!(trace_product(&pm, &qm).norm() < 1e-14);
            }
        }
    }
}
