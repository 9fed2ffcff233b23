//! Lindblad channel sets, Kossakowski matrices and the adjoint Liouvillian.
//!
//! The adjoint generator acting on observables is
//!
//! ```text
//! L†[O] = Σ_{n,m} K_{nm} ( L_m O L_n − ½ {L_m L_n, O} )
//! ```
//!
//! with Pauli-string channels `L_n` (Hermitian, unnormalized). In the
//! normalized Pauli basis every term maps a basis string to a single basis
//! string times a phase, so matrix elements are assembled exactly from
//! symplectic products without ever forming `2^ℓ × 2^ℓ` matrices.

use std::fmt;
use std::str::FromStr;

use faer::{Mat, Side};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::pauli::{Pauli, PauliString, MAX_SITES};
use crate::rng;
use crate::topology::Topology;
use crate::C64;

/// Largest ℓ for which the dense `4^ℓ × 4^ℓ` matrix is built.
pub const MAX_DENSE_SITES: usize = 6;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyOrder {
    One,
    Two,
}

/// Ordered set of Pauli-string dissipation channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladSet {
    sites: usize,
    bodies: BodyOrder,
    topology: Option<Topology>,
    operators: Vec<PauliString>,
}

impl LindbladSet {
    /// The `3ℓ` single-site channels, site-major with `X < Y < Z`.
    pub fn one_body(sites: usize) -> Result<Self> {
        if !(1..=MAX_SITES).contains(&sites) {
            return Err(Error::invalid(format!("ℓ = {sites} outside 1..={MAX_SITES}")));
        }
        let mut operators = Vec::with_capacity(3 * sites);
        for site in 0..sites {
            for p in Pauli::NON_IDENTITY {
                operators.push(PauliString::single(sites, site, p)?);
            }
        }
        Ok(LindbladSet { sites, bodies: BodyOrder::One, topology: None, operators })
    }

    /// One-body channels followed by the 9 two-site strings of every edge.
    pub fn two_body(topo: &Topology) -> Result<Self> {
        let sites = topo.sites();
        let mut set = Self::one_body(sites)?;
        for &(a, b) in topo.edges() {
            for pa in Pauli::NON_IDENTITY {
                for pb in Pauli::NON_IDENTITY {
                    let mut v = vec![Pauli::I; sites];
                    v[a] = pa;
                    v[b] = pb;
                    set.operators.push(PauliString::from_paulis(&v)?);
                }
            }
        }
        set.bodies = BodyOrder::Two;
        set.topology = Some(topo.clone());
        Ok(set)
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn count(&self) -> usize {
        self.operators.len()
    }

    pub fn operators(&self) -> &[PauliString] {
        &self.operators
    }

    pub fn bodies(&self) -> BodyOrder {
        self.bodies
    }

    pub fn topology(&self) -> Option<&Topology> {
        self.topology.as_ref()
    }

    /// Number of leading one-body channels.
    pub fn one_body_count(&self) -> usize {
        3 * self.sites
    }

    /// Short label used in file headers.
    pub fn describe(&self) -> String {
        match &self.topology {
            None => "one-body".to_string(),
            Some(t) => format!("two-body:{t}"),
        }
    }
}

/// Distribution of the nonnegative eigenvalues `d_i` of the Kossakowski matrix
/// before the global rescale to `Tr K = 2^ℓ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumSpec {
    /// Independent uniform draws on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Independent unit-mean exponential draws.
    Exponential,
    /// All `d_i` equal, giving `K = d I` exactly.
    Constant,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        SpectrumSpec::Uniform { lo: 0.0, hi: 1.0 }
    }
}

impl fmt::Display for SpectrumSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumSpec::Uniform { lo, hi } if *lo == 0.0 && *hi == 1.0 => write!(f, "uniform"),
            SpectrumSpec::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            SpectrumSpec::Exponential => write!(f, "exponential"),
            SpectrumSpec::Constant => write!(f, "constant"),
        }
    }
}

impl FromStr for SpectrumSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["uniform"] => Ok(SpectrumSpec::default()),
            ["uniform", lo, hi] => {
                let lo: f64 = lo.parse().map_err(|_| Error::parse(format!("bad bound in {s:?}")))?;
                let hi: f64 = hi.parse().map_err(|_| Error::parse(format!("bad bound in {s:?}")))?;
                if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
                    return Err(Error::invalid(format!("need 0 <= lo < hi in {s:?}")));
                }
                Ok(SpectrumSpec::Uniform { lo, hi })
            }
            ["exponential"] => Ok(SpectrumSpec::Exponential),
            ["constant"] => Ok(SpectrumSpec::Constant),
            _ => Err(Error::parse(format!("unknown distribution spec {s:?}"))),
        }
    }
}

/// Positive-semidefinite coupling matrix between channels.
#[derive(Debug, Clone)]
pub struct KossakowskiMatrix {
    sites: usize,
    entries: Mat<C64>,
}

/// Haar-distributed unitary from the QR decomposition of a complex Ginibre
/// matrix, with the phases of `diag(R)` moved into `Q`.
pub fn haar_unitary(n: usize, rng: &mut rng::Rng) -> Mat<C64> {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut g = Mat::<C64>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            g[(i, j)] = C64::new(re * scale, im * scale);
        }
    }
    let qr = g.qr();
    let mut q = qr.compute_Q();
    let r = qr.R();
    for j in 0..n {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

impl KossakowskiMatrix {
    /// `K = U† D U` with Haar `U` and `D` drawn from `spec`, rescaled to `Tr K = 2^ℓ`.
    pub fn sample(n_channels: usize, sites: usize, seed: u64, spec: &SpectrumSpec) -> Result<Self> {
        if n_channels == 0 {
            return Err(Error::invalid("Kossakowski matrix needs at least one channel"));
        }
        if !(1..=MAX_SITES).contains(&sites) {
            return Err(Error::invalid(format!("ℓ = {sites} outside 1..={MAX_SITES}")));
        }
        if let SpectrumSpec::Constant = spec {
            return Ok(Self::scaled_identity(n_channels, sites));
        }
        let mut rng = rng::seeded(seed);
        let diag: Vec<f64> = (0..n_channels)
            .map(|_| match *spec {
                SpectrumSpec::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
                SpectrumSpec::Exponential => Exp1.sample(&mut rng),
                SpectrumSpec::Constant => 1.0,
            })
            .collect();
        let total: f64 = diag.iter().sum();
        if total <= 0.0 {
            return Err(Error::numerical("sampled Kossakowski spectrum has zero trace"));
        }
        let norm = (1usize << sites) as f64 / total;
        let u = haar_unitary(n_channels, &mut rng);
        // K_{nm} = Σ_i conj(U_{in}) d_i U_{im}
        let entries = Mat::<C64>::from_fn(n_channels, n_channels, |n, m| {
            let mut acc = ZERO;
            for (i, &d) in diag.iter().enumerate() {
                acc += u[(i, n)].conj() * u[(i, m)] * d;
            }
            acc * norm
        });
        let mut k = KossakowskiMatrix { sites, entries };
        k.symmetrize();
        Ok(k)
    }

    /// `K = d I` with `d = 2^ℓ / N_ℓ`.
    pub fn scaled_identity(n_channels: usize, sites: usize) -> Self {
        let d = (1usize << sites) as f64 / n_channels as f64;
        Self::from_diagonal(sites, &vec![d; n_channels])
    }

    /// Diagonal `K` with the given channel weights (no trace normalization).
    pub fn from_diagonal(sites: usize, weights: &[f64]) -> Self {
        let n = weights.len();
        let entries =
            Mat::<C64>::from_fn(n, n, |i, j| if i == j { C64::new(weights[i], 0.0) } else { ZERO });
        KossakowskiMatrix { sites, entries }
    }

    /// Wrap an explicit matrix after checking it is square and Hermitian.
    pub fn from_matrix(sites: usize, entries: Mat<C64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::invalid("Kossakowski matrix must be square"));
        }
        let k = KossakowskiMatrix { sites, entries };
        let scale = k.entries.norm_max().max(1.0);
        if k.hermiticity_defect() > 1e-10 * scale {
            return Err(Error::invalid("Kossakowski matrix is not Hermitian"));
        }
        Ok(k)
    }

    fn symmetrize(&mut self) {
        let n = self.dim();
        for i in 0..n {
            self.entries[(i, i)] = C64::new(self.entries[(i, i)].re, 0.0);
            for j in i + 1..n {
                let avg = (self.entries[(i, j)] + self.entries[(j, i)].conj()) * 0.5;
                self.entries[(i, j)] = avg;
                self.entries[(j, i)] = avg.conj();
            }
        }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, n: usize, m: usize) -> C64 {
        self.entries[(n, m)]
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.entries[(i, i)].re).sum()
    }

    /// Mean diagonal weight `d`.
    pub fn mean_diagonal(&self) -> f64 {
        self.trace() / self.dim() as f64
    }

    /// Mean diagonal weight over channels `range`.
    pub fn mean_diagonal_over(&self, range: std::ops::Range<usize>) -> f64 {
        let len = range.len().max(1) as f64;
        range.map(|i| self.entries[(i, i)].re).sum::<f64>() / len
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.entries[(i, j)] - self.entries[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let ev = self
            .entries
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::numerical(format!("Hermitian eigensolver failed: {e:?}")))?;
        Ok(ev.first().copied().unwrap_or(0.0))
    }
}

/// One `(n, m)` term of the generator, with `L_m L_n = phase · q` folded into `weight`.
#[derive(Debug, Clone, Copy)]
struct PairTerm {
    left: PauliString,
    product: PauliString,
    weight: C64,
}

/// Matrix-free adjoint generator in the normalized Pauli basis.
#[derive(Debug, Clone)]
pub struct AdjointGenerator {
    sites: usize,
    terms: Vec<PairTerm>,
    norm_bound: f64,
}

impl AdjointGenerator {
    pub fn new(set: &LindbladSet, k: &KossakowskiMatrix) -> Result<Self> {
        check_len(set.count(), k.dim())?;
        if k.sites() != set.sites() {
            return Err(Error::invalid("Kossakowski matrix and channel set disagree on ℓ"));
        }
        let ops = set.operators();
        let mut terms = Vec::new();
        let mut norm_bound = 0.0;
        for (n, ln) in ops.iter().enumerate() {
            for (m, lm) in ops.iter().enumerate() {
                let knm = k.get(n, m);
                if knm == ZERO {
                    continue;
                }
                let (phase, product) = lm.multiply_unchecked(ln);
                terms.push(PairTerm { left: *lm, product, weight: knm * phase.to_complex() });
                norm_bound += 2.0 * knm.norm();
            }
        }
        Ok(AdjointGenerator { sites: set.sites(), terms, norm_bound })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Basis dimension `4^ℓ`.
    pub fn dim(&self) -> usize {
        1 << (2 * self.sites)
    }

    /// Upper bound on the induced 1-norm of the generator.
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// Sparse image of the basis string `s`, as `(row index, value)` pairs
    /// (rows may repeat).
    pub fn column(&self, s: &PauliString) -> Vec<(usize, C64)> {
        let mut out = Vec::new();
        self.for_each_in_column(s, |row, v| out.push((row, v)));
        out
    }

    /// For each term: `L_m S L_n − ½{L_m L_n, S} = w·(ε − ½(1+η))·S·Q` with
    /// `L_m S = ε S L_m` and `Q S = η S Q`.
    #[inline]
    fn for_each_in_column(&self, s: &PauliString, mut emit: impl FnMut(usize, C64)) {
        for t in &self.terms {
            let eps = if t.left.commutes_unchecked(s) { 1.0 } else { -1.0 };
            let eta = if t.product.commutes_unchecked(s) { 1.0 } else { -1.0 };
            let factor = eps - 0.5 * (1.0 + eta);
            if factor == 0.0 {
                continue;
            }
            let (phase, image) = s.multiply_unchecked(&t.product);
            emit(image.index(), t.weight * phase.to_complex() * factor);
        }
    }

    /// `y = 𝖫 x` for a Pauli-coefficient vector `x`.
    pub fn apply(&self, coeffs: &[C64]) -> Result<Vec<C64>> {
        let dim = self.dim();
        check_len(dim, coeffs.len())?;
        let sites = self.sites;
        let chunk = 256usize;
        let n_chunks = dim.div_ceil(chunk);
        let partials = crate::par::map_range(n_chunks, |c| {
            let mut acc: Vec<(usize, C64)> = Vec::new();
            for col in c * chunk..((c + 1) * chunk).min(dim) {
                let x = coeffs[col];
                if x == ZERO {
                    continue;
                }
                let s = PauliString::from_index(sites, col).expect("index in range");
                self.for_each_in_column(&s, |row, v| acc.push((row, v * x)));
            }
            acc
        });
        let mut out = vec![ZERO; dim];
        for part in partials {
            for (row, v) in part {
                out[row] += v;
            }
        }
        Ok(out)
    }
}

/// Dense adjoint Liouvillian `𝖫_{yx} = Tr(S_y† L†[S_x])`.
#[derive(Debug, Clone)]
pub struct LiouvillianMatrix {
    sites: usize,
    n_channels: usize,
    entries: Mat<C64>,
}

impl LiouvillianMatrix {
    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[(row, col)]
    }

    pub fn apply(&self, coeffs: &[C64]) -> Result<Vec<C64>> {
        check_len(self.dim(), coeffs.len())?;
        let n = self.dim();
        let mut out = vec![ZERO; n];
        for (j, &x) in coeffs.iter().enumerate() {
            if x == ZERO {
                continue;
            }
            let col = self.entries.col(j);
            for (i, o) in out.iter_mut().enumerate() {
                *o += col[i] * x;
            }
        }
        Ok(out)
    }

    /// Largest off-diagonal magnitude.
    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    worst = worst.max(self.entries[(i, j)].norm());
                }
            }
        }
        worst
    }

    pub fn from_matrix(sites: usize, n_channels: usize, entries: Mat<C64>) -> Result<Self> {
        let dim = 1usize << (2 * sites);
        check_len(dim, entries.nrows())?;
        check_len(dim, entries.ncols())?;
        Ok(LiouvillianMatrix { sites, n_channels, entries })
    }
}

/// Assemble the dense adjoint Liouvillian (ℓ ≤ [`MAX_DENSE_SITES`]).
pub fn build_adjoint_superoperator(
    set: &LindbladSet,
    k: &KossakowskiMatrix,
) -> Result<LiouvillianMatrix> {
    if set.sites() > MAX_DENSE_SITES {
        return Err(Error::invalid(format!(
            "dense superoperator capped at ℓ = {MAX_DENSE_SITES}; use the matrix-free generator"
        )));
    }
    let generator = AdjointGenerator::new(set, k)?;
    let sites = set.sites();
    let dim = generator.dim();
    let columns = crate::par::map_range(dim, |col| {
        let s = PauliString::from_index(sites, col).expect("index in range");
        let mut dense = vec![ZERO; dim];
        generator.for_each_in_column(&s, |row, v| dense[row] += v);
        dense
    });
    let entries = Mat::<C64>::from_fn(dim, dim, |i, j| columns[j][i]);
    Ok(LiouvillianMatrix { sites, n_channels: set.count(), entries })
}

/// Matrix-free `𝖫 · coeffs`.
pub fn apply_adjoint(set: &LindbladSet, k: &KossakowskiMatrix, coeffs: &[C64]) -> Result<Vec<C64>> {
    AdjointGenerator::new(set, k)?.apply(coeffs)
}
