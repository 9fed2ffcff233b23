//! Density-matrix simulation of noisy waiting circuits.
//!
//! Site `i` (0-based, leftmost in a Pauli string) is bit `ℓ−1−i` of the
//! computational-basis index, so string text and Kronecker order agree.

use std::fmt;
use std::str::FromStr;

use faer::{Mat, Side};
use rand::Rng as _;
use rand_distr::{Binomial, Distribution};

use crate::error::{check_len, Error, Result};
use crate::pauli::{Pauli, PauliString, MAX_SITES};
use crate::rng;
use crate::spectral::ProductState;
use crate::topology::Topology;
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Tolerances of the CPTP checks.
pub const TRACE_TOL: f64 = 1e-10;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    sites: usize,
    dim: usize,
    /// Row-major `dim × dim`.
    data: Vec<C64>,
}

impl DensityMatrix {
    /// `|0…0⟩⟨0…0|`.
    pub fn zero_state(sites: usize) -> Result<Self> {
        if !(1..=MAX_SITES).contains(&sites) {
            return Err(Error::invalid(format!("ℓ = {sites} outside 1..={MAX_SITES}")));
        }
        let dim = 1usize << sites;
        let mut data = vec![ZERO; dim * dim];
        data[0] = ONE;
        Ok(DensityMatrix { sites, dim, data })
    }

    pub fn maximally_mixed(sites: usize) -> Result<Self> {
        let mut rho = Self::zero_state(sites)?;
        let dim = rho.dim;
        rho.data.iter_mut().for_each(|v| *v = ZERO);
        for i in 0..dim {
            rho.data[i * dim + i] = C64::new(1.0 / dim as f64, 0.0);
        }
        Ok(rho)
    }

    /// Projector onto a computational basis state.
    pub fn basis_state(sites: usize, index: usize) -> Result<Self> {
        let mut rho = Self::zero_state(sites)?;
        if index >= rho.dim {
            return Err(Error::invalid(format!("basis index {index} out of range")));
        }
        rho.data[0] = ZERO;
        rho.data[index * rho.dim + index] = ONE;
        Ok(rho)
    }

    pub fn from_entries(sites: usize, data: Vec<C64>) -> Result<Self> {
        let dim = 1usize << sites;
        check_len(dim * dim, data.len())?;
        Ok(DensityMatrix { sites, dim, data })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// `self += other`; building block for ensemble averages.
    pub fn accumulate(&mut self, other: &DensityMatrix) -> Result<()> {
        if other.sites != self.sites {
            return Err(Error::invalid(format!("cannot add a {}-site state to a {}-site state", other.sites, self.sites)));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim + col]
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.data[i * d + j] - self.data[j * d + i].conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let d = self.dim;
        let m = Mat::<C64>::from_fn(d, d, |i, j| self.data[i * d + j]);
        let ev = m
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::numerical(format!("density-matrix eigensolver failed: {e:?}")))?;
        Ok(ev.first().copied().unwrap_or(0.0))
    }

    /// Hermitian, unit trace, positive semidefinite (within tolerances).
    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_defect();
        if herm > HERMITIAN_TOL {
            return Err(Error::numerical(format!("ρ not Hermitian: defect {herm:.2e}")));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::numerical(format!("trace drifted to {tr}")));
        }
        let min = self.min_eigenvalue()?;
        if min < -POSITIVITY_TOL {
            return Err(Error::numerical(format!("ρ has negative eigenvalue {min:.2e}")));
        }
        Ok(())
    }

    fn bit_of(&self, site: usize) -> usize {
        self.sites - 1 - site
    }

    /// `ρ → A ρ A†` for a local operator on `sites` (first site = most significant local bit).
    fn conjugate(&mut self, op: &[C64], sites: &[usize]) {
        let bits: Vec<usize> = sites.iter().map(|&s| self.bit_of(s)).collect();
        apply_left(&mut self.data, self.dim, op, &bits);
        apply_right_adjoint(&mut self.data, self.dim, op, &bits);
    }

    /// `ρ → Σ_i K_i ρ K_i†`.
    fn apply_kraus(&mut self, kraus: &[Vec<C64>], sites: &[usize]) {
        let bits: Vec<usize> = sites.iter().map(|&s| self.bit_of(s)).collect();
        let mut out = vec![ZERO; self.data.len()];
        for k in kraus {
            let mut term = self.data.clone();
            apply_left(&mut term, self.dim, k, &bits);
            apply_right_adjoint(&mut term, self.dim, k, &bits);
            for (o, t) in out.iter_mut().zip(&term) {
                *o += t;
            }
        }
        self.data = out;
    }

    /// Diagonal of `ρ` as probabilities (negative round-off clipped).
    pub fn probabilities(&self) -> Vec<f64> {
        let p: Vec<f64> = (0..self.dim).map(|i| self.data[i * self.dim + i].re.max(0.0)).collect();
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            p.iter().map(|x| x / total).collect()
        } else {
            p
        }
    }
}

fn offsets(bits: &[usize]) -> (usize, Vec<usize>) {
    let q = bits.len();
    let mask = bits.iter().fold(0usize, |m, &b| m | (1 << b));
    let offs = (0..1usize << q)
        .map(|j| {
            bits.iter().enumerate().fold(0usize, |acc, (t, &b)| if (j >> (q - 1 - t)) & 1 == 1 { acc | (1 << b) } else { acc })
        })
        .collect();
    (mask, offs)
}

fn apply_left(data: &mut [C64], dim: usize, op: &[C64], bits: &[usize]) {
    let (mask, offs) = offsets(bits);
    let q = offs.len();
    let mut v = vec![ZERO; q];
    for col in 0..dim {
        for base in (0..dim).filter(|b| b & mask == 0) {
            for (j, o) in offs.iter().enumerate() {
                v[j] = data[(base | o) * dim + col];
            }
            for (j, o) in offs.iter().enumerate() {
                let mut acc = ZERO;
                for (k, vk) in v.iter().enumerate() {
                    acc += op[j * q + k] * vk;
                }
                data[(base | o) * dim + col] = acc;
            }
        }
    }
}

fn apply_right_adjoint(data: &mut [C64], dim: usize, op: &[C64], bits: &[usize]) {
    let (mask, offs) = offsets(bits);
    let q = offs.len();
    let mut w = vec![ZERO; q];
    for row in 0..dim {
        let r = row * dim;
        for base in (0..dim).filter(|b| b & mask == 0) {
            for (k, o) in offs.iter().enumerate() {
                w[k] = data[r + (base | o)];
            }
            for (j, o) in offs.iter().enumerate() {
                let mut acc = ZERO;
                for (k, wk) in w.iter().enumerate() {
                    acc += wk * op[j * q + k].conj();
                }
                data[r + (base | o)] = acc;
            }
        }
    }
}

/// Gate kinds; sites are 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    U3 { site: usize, theta: f64, phi: f64, lambda: f64 },
    Cnot { control: usize, target: usize },
    H(usize),
    S(usize),
    Sdg(usize),
}

impl Gate {
    pub fn targets(&self) -> Vec<usize> {
        match *self {
            Gate::U3 { site, .. } | Gate::H(site) | Gate::S(site) | Gate::Sdg(site) => vec![site],
            Gate::Cnot { control, target } => vec![control, target],
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Gate::Cnot { .. } => 2,
            _ => 1,
        }
    }

    /// Local unitary, row-major, first target most significant.
    pub fn matrix(&self) -> Vec<C64> {
        match *self {
            Gate::U3 { theta, phi, lambda, .. } => u3_matrix(theta, phi, lambda).to_vec(),
            Gate::H(_) => {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                vec![C64::new(h, 0.0), C64::new(h, 0.0), C64::new(h, 0.0), C64::new(-h, 0.0)]
            }
            Gate::S(_) => vec![ONE, ZERO, ZERO, C64::new(0.0, 1.0)],
            Gate::Sdg(_) => vec![ONE, ZERO, ZERO, C64::new(0.0, -1.0)],
            Gate::Cnot { .. } => {
                let mut m = vec![ZERO; 16];
                m[0] = ONE;
                m[5] = ONE;
                m[2 * 4 + 3] = ONE;
                m[3 * 4 + 2] = ONE;
                m
            }
        }
    }

    pub fn inverse(&self) -> Gate {
        match *self {
            Gate::U3 { site, theta, phi, lambda } => Gate::U3 { site, theta: -theta, phi: -lambda, lambda: -phi },
            Gate::S(s) => Gate::Sdg(s),
            Gate::Sdg(s) => Gate::S(s),
            g => g,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            Gate::U3 { .. } => "u3",
            Gate::Cnot { .. } => "cx",
            Gate::H(_) => "h",
            Gate::S(_) => "s",
            Gate::Sdg(_) => "sdg",
        }
    }
}

/// `U3(θ,φ,λ) = [[cos θ/2, −e^{iλ} sin θ/2], [e^{iφ} sin θ/2, e^{i(φ+λ)} cos θ/2]]`.
pub fn u3_matrix(theta: f64, phi: f64, lambda: f64) -> [C64; 4] {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        C64::new(c, 0.0),
        -C64::from_polar(s, lambda),
        C64::from_polar(s, phi),
        C64::from_polar(c, phi + lambda),
    ]
}

/// Haar-random one-qubit unitary angles (up to global phase).
pub fn haar_u3(site: usize, rng: &mut rng::Rng) -> Gate {
    let u: f64 = rng.gen();
    let tau = std::f64::consts::TAU;
    Gate::U3 { site, theta: 2.0 * u.sqrt().asin(), phi: tau * rng.gen::<f64>(), lambda: tau * rng.gen::<f64>() }
}

/// Kraus channel acting on one or two qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseChannel {
    name: String,
    arity: usize,
    kraus: Vec<Vec<C64>>,
}

fn pauli_local(ps: &[Pauli]) -> Vec<C64> {
    PauliString::from_paulis(ps).expect("valid length").to_dense()
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{what} = {p} outside [0, 1]")));
    }
    Ok(())
}

impl NoiseChannel {
    pub fn new(name: impl Into<String>, arity: usize, kraus: Vec<Vec<C64>>) -> Result<Self> {
        if !(1..=2).contains(&arity) || kraus.is_empty() || kraus.iter().any(|k| k.len() != 1 << (2 * arity)) {
            return Err(Error::invalid("Kraus operators must be 2×2 or 4×4"));
        }
        let ch = NoiseChannel { name: name.into(), arity, kraus };
        let defect = ch.completeness_defect();
        if defect > 1e-10 {
            return Err(Error::invalid(format!("Kraus set not trace preserving (defect {defect:.2e})")));
        }
        Ok(ch)
    }

    /// `ρ → (1−p)ρ + p I/2` on one qubit.
    pub fn depolarizing1(p: f64) -> Result<Self> {
        check_prob(p, "p1")?;
        let mut kraus = vec![pauli_local(&[Pauli::I]).iter().map(|v| v * (1.0 - 0.75 * p).sqrt()).collect()];
        for q in Pauli::NON_IDENTITY {
            kraus.push(pauli_local(&[q]).iter().map(|v| v * (p / 4.0).sqrt()).collect());
        }
        Self::new(format!("depolarizing1({p})"), 1, kraus)
    }

    /// `ρ → (1−p)ρ + p I/4` on two qubits.
    pub fn depolarizing2(p: f64) -> Result<Self> {
        check_prob(p, "p2")?;
        let mut kraus = Vec::with_capacity(16);
        for a in Pauli::ALL {
            for b in Pauli::ALL {
                let w = if a == Pauli::I && b == Pauli::I { 1.0 - 15.0 * p / 16.0 } else { p / 16.0 };
                kraus.push(pauli_local(&[a, b]).iter().map(|v| v * w.sqrt()).collect());
            }
        }
        Self::new(format!("depolarizing2({p})"), 2, kraus)
    }

    /// Uniform mixture of the 9 genuinely two-body Paulis with total weight `p`.
    pub fn correlated2(p: f64) -> Result<Self> {
        check_prob(p, "p2")?;
        let mut kraus = vec![pauli_local(&[Pauli::I, Pauli::I]).iter().map(|v| v * (1.0 - p).sqrt()).collect()];
        for a in Pauli::NON_IDENTITY {
            for b in Pauli::NON_IDENTITY {
                kraus.push(pauli_local(&[a, b]).iter().map(|v| v * (p / 9.0).sqrt()).collect());
            }
        }
        Self::new(format!("correlated2({p})"), 2, kraus)
    }

    pub fn amplitude_damping(gamma: f64) -> Result<Self> {
        check_prob(gamma, "damping")?;
        let k0 = vec![ONE, ZERO, ZERO, C64::new((1.0 - gamma).sqrt(), 0.0)];
        let k1 = vec![ZERO, C64::new(gamma.sqrt(), 0.0), ZERO, ZERO];
        Self::new(format!("amplitude_damping({gamma})"), 1, vec![k0, k1])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn kraus(&self) -> &[Vec<C64>] {
        &self.kraus
    }

    /// `max |Σ K†K − I|`.
    pub fn completeness_defect(&self) -> f64 {
        let n = 1usize << self.arity;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut acc = ZERO;
                for k in &self.kraus {
                    for r in 0..n {
                        acc += k[r * n + i].conj() * k[r * n + j];
                    }
                }
                let target = if i == j { ONE } else { ZERO };
                worst = worst.max((acc - target).norm());
            }
        }
        worst
    }
}

/// Which two-qubit error channel follows each CNOT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TwoQubitNoise {
    #[default]
    Depolarizing,
    Correlated,
}

impl FromStr for TwoQubitNoise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "depolarizing" => Ok(TwoQubitNoise::Depolarizing),
            "correlated" => Ok(TwoQubitNoise::Correlated),
            other => Err(Error::parse(format!("unknown two-qubit noise {other:?}"))),
        }
    }
}

impl fmt::Display for TwoQubitNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TwoQubitNoise::Depolarizing => "depolarizing",
            TwoQubitNoise::Correlated => "correlated",
        })
    }
}

/// Channels attached to gate classes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseModel {
    pub one_qubit: Option<NoiseChannel>,
    pub two_qubit: Option<NoiseChannel>,
    /// Applied to every target of every gate after the gate channel.
    pub damping: Option<NoiseChannel>,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel::default()
    }

    pub fn from_strengths(p1: f64, p2: f64, damping: f64, two: TwoQubitNoise) -> Result<Self> {
        let one_qubit = if p1 > 0.0 { Some(NoiseChannel::depolarizing1(p1)?) } else { check_prob(p1, "p1").map(|_| None)? };
        let two_qubit = if p2 > 0.0 {
            Some(match two {
                TwoQubitNoise::Depolarizing => NoiseChannel::depolarizing2(p2)?,
                TwoQubitNoise::Correlated => NoiseChannel::correlated2(p2)?,
            })
        } else {
            check_prob(p2, "p2").map(|_| None)?
        };
        let damping =
            if damping > 0.0 { Some(NoiseChannel::amplitude_damping(damping)?) } else { check_prob(damping, "damping").map(|_| None)? };
        Ok(NoiseModel { one_qubit, two_qubit, damping })
    }

    pub fn is_noiseless(&self) -> bool {
        self.one_qubit.is_none() && self.two_qubit.is_none() && self.damping.is_none()
    }

    fn channel_for(&self, g: &Gate) -> Option<&NoiseChannel> {
        if g.arity() == 1 {
            self.one_qubit.as_ref()
        } else {
            self.two_qubit.as_ref()
        }
    }
}

/// Apply `g` and then (optionally) `noise` on its targets.
pub fn apply_gate(rho: &mut DensityMatrix, g: &Gate, noise: Option<&NoiseChannel>) -> Result<()> {
    let targets = g.targets();
    if targets.iter().any(|&s| s >= rho.sites()) {
        return Err(Error::invalid(format!("gate {g:?} targets a site outside 0..{}", rho.sites())));
    }
    if targets.len() == 2 && targets[0] == targets[1] {
        return Err(Error::invalid("two-qubit gate on a single site"));
    }
    rho.conjugate(&g.matrix(), &targets);
    if let Some(ch) = noise {
        apply_channel(rho, ch, &targets)?;
    }
    Ok(())
}

/// Apply a channel to the given sites.
pub fn apply_channel(rho: &mut DensityMatrix, ch: &NoiseChannel, sites: &[usize]) -> Result<()> {
    match (ch.arity(), sites.len()) {
        (1, _) => {
            for &s in sites {
                rho.apply_kraus(ch.kraus(), &[s]);
            }
        }
        (2, 2) => rho.apply_kraus(ch.kraus(), sites),
        _ => return Err(Error::invalid(format!("channel {} does not fit {} sites", ch.name(), sites.len()))),
    }
    Ok(())
}

fn apply_noisy(rho: &mut DensityMatrix, g: &Gate, noise: &NoiseModel) -> Result<()> {
    apply_gate(rho, g, noise.channel_for(g))?;
    if let Some(d) = &noise.damping {
        apply_channel(rho, d, &g.targets())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CircuitFamily {
    /// Random one-qubit layers.
    W1,
    /// Random one-qubit layers plus one CNOT per layer.
    W2,
}

impl FromStr for CircuitFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "W1" => Ok(CircuitFamily::W1),
            "W2" => Ok(CircuitFamily::W2),
            other => Err(Error::parse(format!("unknown circuit family {other:?}"))),
        }
    }
}

impl fmt::Display for CircuitFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CircuitFamily::W1 => "W1",
            CircuitFamily::W2 => "W2",
        })
    }
}

/// Layer `index` of the random block; the same `(seed, index)` always gives
/// the same layer, so shallower circuits are prefixes of deeper ones.
pub fn random_layer(family: CircuitFamily, sites: usize, topo: Option<&Topology>, seed: u64, index: usize) -> Result<Vec<Gate>> {
    let mut r = rng::seeded(rng::derive(seed, &[0x1a7e, index as u64]));
    let mut layer: Vec<Gate> = (0..sites).map(|s| haar_u3(s, &mut r)).collect();
    if family == CircuitFamily::W2 {
        let topo = topo.ok_or_else(|| Error::invalid("W2 circuits need a topology"))?;
        if topo.sites() != sites {
            return Err(Error::invalid("topology size differs from ℓ"));
        }
        let edges = topo.edges();
        if edges.is_empty() {
            return Err(Error::invalid("W2 circuits need a topology with at least one edge"));
        }
        let (a, b) = edges[r.gen_range(0..edges.len())];
        let (control, target) = if r.gen::<bool>() { (a, b) } else { (b, a) };
        layer.push(Gate::Cnot { control, target });
    }
    Ok(layer)
}

/// Gate-by-gate inverse of a layer.
pub fn inverse_layer(layer: &[Gate]) -> Vec<Gate> {
    layer.iter().rev().map(Gate::inverse).collect()
}

/// Waiting circuit `W(t) = C(t)† C(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    sites: usize,
    depth: usize,
    layers: Vec<Vec<Gate>>,
}

impl Circuit {
    pub fn new(sites: usize, depth: usize, layers: Vec<Vec<Gate>>) -> Self {
        Circuit { sites, depth, layers }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Depth `t` of the random block.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn layers(&self) -> &[Vec<Gate>] {
        &self.layers
    }

    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.layers.iter().flatten()
    }

    pub fn gate_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn cnot_count(&self) -> usize {
        self.gates().filter(|g| g.arity() == 2).count()
    }

    /// One line per gate: `layer_index gate_kind targets params`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for g in layer {
                let targets: Vec<String> = g.targets().iter().map(|s| s.to_string()).collect();
                let params = match g {
                    Gate::U3 { theta, phi, lambda, .. } => format!(" {theta:.17e} {phi:.17e} {lambda:.17e}"),
                    _ => String::new(),
                };
                out.push_str(&format!("{i} {} {}{params}\n", g.kind_name(), targets.join(",")));
            }
        }
        out
    }

    pub fn from_text(sites: usize, depth: usize, text: &str) -> Result<Self> {
        let mut layers: Vec<Vec<Gate>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::parse(format!("circuit line {}: {line:?}", lineno + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 3 {
                return Err(bad());
            }
            let idx: usize = f[0].parse().map_err(|_| bad())?;
            let targets: Vec<usize> = f[2].split(',').map(|t| t.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            let nums: Vec<f64> = f[3..].iter().map(|t| t.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            let one = |g: fn(usize) -> Gate| if targets.len() == 1 && nums.is_empty() { Ok(g(targets[0])) } else { Err(bad()) };
            let g = match f[1] {
                "u3" if targets.len() == 1 && nums.len() == 3 => {
                    Gate::U3 { site: targets[0], theta: nums[0], phi: nums[1], lambda: nums[2] }
                }
                "cx" if targets.len() == 2 && nums.is_empty() => Gate::Cnot { control: targets[0], target: targets[1] },
                "h" => one(Gate::H)?,
                "s" => one(Gate::S)?,
                "sdg" => one(Gate::Sdg)?,
                _ => return Err(bad()),
            };
            if g.targets().iter().any(|&s| s >= sites) {
                return Err(bad());
            }
            while layers.len() <= idx {
                layers.push(Vec::new());
            }
            layers[idx].push(g);
        }
        Ok(Circuit { sites, depth, layers })
    }
}

/// Random block of `t` layers followed by its exact inverse.
pub fn build_waiting_circuit(family: CircuitFamily, sites: usize, t: usize, topo: Option<&Topology>, seed: u64) -> Result<Circuit> {
    if !(1..=MAX_SITES).contains(&sites) {
        return Err(Error::invalid(format!("ℓ = {sites} outside 1..={MAX_SITES}")));
    }
    let forward: Vec<Vec<Gate>> = (0..t).map(|i| random_layer(family, sites, topo, seed, i)).collect::<Result<_>>()?;
    let mut layers = forward.clone();
    layers.extend(forward.iter().rev().map(|l| inverse_layer(l)));
    Ok(Circuit::new(sites, t, layers))
}

pub fn build_waiting_circuit_w1(sites: usize, t: usize, seed: u64) -> Result<Circuit> {
    build_waiting_circuit(CircuitFamily::W1, sites, t, None, seed)
}

pub fn build_waiting_circuit_w2(sites: usize, t: usize, topo: &Topology, seed: u64) -> Result<Circuit> {
    if topo.edges().is_empty() {
        return Err(Error::invalid("W2 circuits need a topology with at least one edge"));
    }
    build_waiting_circuit(CircuitFamily::W2, sites, t, Some(topo), seed)
}

/// Execute every gate with its noise; optionally validate after each gate.
pub fn run_circuit(rho: &mut DensityMatrix, c: &Circuit, noise: &NoiseModel, validate: bool) -> Result<()> {
    check_len(rho.sites(), c.sites())?;
    for g in c.gates() {
        apply_noisy(rho, g, noise)?;
        if validate {
            rho.validate()?;
        }
    }
    Ok(())
}

/// Run the gates of `layers` in order.
pub fn run_layers(rho: &mut DensityMatrix, layers: &[Vec<Gate>], noise: &NoiseModel) -> Result<()> {
    for g in layers.iter().flatten() {
        apply_noisy(rho, g, noise)?;
    }
    Ok(())
}

/// Noiseless preparation gates for a product state from `|0…0⟩`.
pub fn preparation_gates(spec: &ProductState) -> Vec<Gate> {
    let mut gates = Vec::new();
    for (site, &(basis, flip)) in spec.sites().iter().enumerate() {
        if flip {
            gates.push(Gate::U3 { site, theta: std::f64::consts::PI, phi: 0.0, lambda: std::f64::consts::PI });
        }
        match basis {
            Pauli::X => gates.push(Gate::H(site)),
            Pauli::Y => {
                gates.push(Gate::H(site));
                gates.push(Gate::S(site));
            }
            _ => {}
        }
    }
    gates
}

pub fn prepare_product_state(spec: &ProductState) -> Result<DensityMatrix> {
    let mut rho = DensityMatrix::zero_state(spec.len())?;
    for g in preparation_gates(spec) {
        apply_gate(&mut rho, &g, None)?;
    }
    Ok(rho)
}

/// Masks of `s` in computational-basis bit order.
fn index_masks(s: &PauliString) -> (usize, usize) {
    let l = s.len();
    let mut x = 0usize;
    let mut z = 0usize;
    for site in 0..l {
        let bit = 1usize << (l - 1 - site);
        if (s.x_mask() >> site) & 1 == 1 {
            x |= bit;
        }
        if (s.z_mask() >> site) & 1 == 1 {
            z |= bit;
        }
    }
    (x, z)
}

/// `Tr(ρ σ)` for an unnormalized Pauli string.
pub fn expectation(rho: &DensityMatrix, s: &PauliString) -> Result<f64> {
    check_len(rho.sites(), s.len())?;
    let (x, z) = index_masks(s);
    let base = crate::pauli::Phase::from_exponent((x & z).count_ones()).to_complex();
    let d = rho.dim();
    let mut acc = ZERO;
    for j in 0..d {
        let sign = if (z & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        acc += rho.data[j * d + (j ^ x)] * sign;
    }
    Ok((acc * base).re)
}

/// Per-site measurement basis shared by all `strings`.
pub fn common_basis(strings: &[PauliString]) -> Result<Vec<Pauli>> {
    let l = strings.first().map(|s| s.len()).ok_or_else(|| Error::invalid("no strings to measure"))?;
    let mut basis = vec![Pauli::I; l];
    for s in strings {
        check_len(l, s.len())?;
        for (site, b) in basis.iter_mut().enumerate() {
            let p = s.get(site);
            if p == Pauli::I {
                continue;
            }
            if *b != Pauli::I && *b != p {
                return Err(Error::invalid(format!("site {} measured in both {} and {}", site + 1, b.as_char(), p.as_char())));
            }
            *b = p;
        }
    }
    Ok(basis.into_iter().map(|p| if p == Pauli::I { Pauli::Z } else { p }).collect())
}

/// Rotate each site so that its basis Pauli becomes Z.
pub fn measurement_rotation(basis: &[Pauli]) -> Vec<Gate> {
    let mut gates = Vec::new();
    for (site, p) in basis.iter().enumerate() {
        match p {
            Pauli::X => gates.push(Gate::H(site)),
            Pauli::Y => {
                gates.push(Gate::Sdg(site));
                gates.push(Gate::H(site));
            }
            _ => {}
        }
    }
    gates
}

/// Outcome probabilities after rotating to `basis`.
pub fn rotated_probabilities(rho: &DensityMatrix, basis: &[Pauli]) -> Result<Vec<f64>> {
    check_len(rho.sites(), basis.len())?;
    let mut r = rho.clone();
    for g in measurement_rotation(basis) {
        apply_gate(&mut r, &g, None)?;
    }
    Ok(r.probabilities())
}

/// Multinomial counts over outcomes.
pub fn sample_counts(probs: &[f64], shots: u64, rng: &mut rng::Rng) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = shots;
    let mut mass = 1.0f64;
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == probs.len() || mass <= 0.0 {
            counts[i] = remaining;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let n = Binomial::new(remaining, q).map_err(|e| Error::numerical(format!("binomial draw failed: {e}")))?.sample(rng);
        counts[i] = n;
        remaining -= n;
        mass -= p;
    }
    Ok(counts)
}

/// Parity estimate of `s` from outcome counts (or probabilities when `shots = 0`).
pub fn parity_estimate(s: &PauliString, weights: &[f64]) -> f64 {
    let support = index_masks(s);
    let mask = support.0 | support.1;
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    weights.iter().enumerate().map(|(j, w)| if (j & mask).count_ones() % 2 == 0 { *w } else { -*w }).sum::<f64>() / total
}

/// Estimated expectations of `strings` from `shots` measurements in their
/// common basis; `shots = 0` returns exact values.
pub fn sample_shots(rho: &DensityMatrix, strings: &[PauliString], shots: u64, seed: u64) -> Result<Vec<f64>> {
    let basis = common_basis(strings)?;
    let probs = rotated_probabilities(rho, &basis)?;
    let weights: Vec<f64> = if shots == 0 {
        probs
    } else {
        let mut r = rng::seeded(seed);
        sample_counts(&probs, shots, &mut r)?.into_iter().map(|c| c as f64).collect()
    };
    Ok(strings.iter().map(|s| parity_estimate(s, &weights)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn x_gate_and_cnot() {
        let mut rho = DensityMatrix::zero_state(1).unwrap();
        apply_gate(&mut rho, &Gate::U3 { site: 0, theta: std::f64::consts::PI, phi: 0.0, lambda: std::f64::consts::PI }, None)
            .unwrap();
        assert!((rho.get(1, 1) - ONE).norm() < 1e-15);
        assert!(rho.get(0, 0).norm() < 1e-15);

        // |10⟩: site 0 is the control and the most significant bit
        let mut rho = DensityMatrix::basis_state(2, 0b10).unwrap();
        apply_gate(&mut rho, &Gate::Cnot { control: 0, target: 1 }, None).unwrap();
        assert!((rho.get(0b11, 0b11) - ONE).norm() < 1e-15);
    }

    #[test]
    fn full_depolarization() {
        let mut rho = prepare_product_state(&"x0".parse().unwrap()).unwrap();
        apply_channel(&mut rho, &NoiseChannel::depolarizing1(1.0).unwrap(), &[0]).unwrap();
        let mixed = DensityMatrix::maximally_mixed(1).unwrap();
        assert!(rho.entries().iter().zip(mixed.entries()).all(|(a, b)| (a - b).norm() < 1e-15));
        let mut rho2 = prepare_product_state(&"y1z0".parse().unwrap()).unwrap();
        apply_channel(&mut rho2, &NoiseChannel::depolarizing2(1.0).unwrap(), &[0, 1]).unwrap();
        let mixed2 = DensityMatrix::maximally_mixed(2).unwrap();
        assert!(rho2.entries().iter().zip(mixed2.entries()).all(|(a, b)| (a - b).norm() < 1e-15));
    }

    #[test]
    fn channels_are_trace_preserving() {
        for ch in [
            NoiseChannel::depolarizing1(0.3).unwrap(),
            NoiseChannel::depolarizing2(0.2).unwrap(),
            NoiseChannel::correlated2(0.4).unwrap(),
            NoiseChannel::amplitude_damping(0.25).unwrap(),
        ] {
            assert!(ch.completeness_defect() < 1e-14, "{}", ch.name());
        }
        assert!(NoiseChannel::depolarizing1(1.5).is_err());
        assert!(NoiseChannel::new("bad", 1, vec![vec![ONE, ZERO, ZERO, ZERO]]).is_err());
    }

    #[test]
    fn product_states_have_unit_expectations() {
        let rho = prepare_product_state(&"x0y1z1".parse().unwrap()).unwrap();
        assert!((expectation(&rho, &ps("XII")).unwrap() - 1.0).abs() < 1e-14);
        assert!((expectation(&rho, &ps("IYI")).unwrap() + 1.0).abs() < 1e-14);
        assert!((expectation(&rho, &ps("IIZ")).unwrap() + 1.0).abs() < 1e-14);
        assert!((expectation(&rho, &ps("XYZ")).unwrap() - 1.0).abs() < 1e-14);
        assert!(expectation(&rho, &ps("ZII")).unwrap().abs() < 1e-14);
        let zero = prepare_product_state(&ProductState::all_zero(3).unwrap()).unwrap();
        assert!((expectation(&zero, &ps("ZZI")).unwrap() - 1.0).abs() < 1e-15);
        let mixed = DensityMatrix::maximally_mixed(3).unwrap();
        assert!(expectation(&mixed, &ps("XZY")).unwrap().abs() < 1e-15);
        assert!(expectation(&mixed, &ps("XZ")).is_err());
    }

    #[test]
    fn expectation_matches_dense_trace() {
        let mut r = rng::seeded(3);
        let mut rho = prepare_product_state(&"x0z1".parse().unwrap()).unwrap();
        for i in 0..4 {
            apply_gate(&mut rho, &haar_u3(i % 2, &mut r), None).unwrap();
            apply_gate(&mut rho, &Gate::Cnot { control: i % 2, target: 1 - i % 2 }, None).unwrap();
        }
        for s in crate::pauli::enumerate_strings(2, None).unwrap() {
            let m = s.to_dense();
            let mut tr = ZERO;
            for j in 0..4 {
                for k in 0..4 {
                    tr += rho.get(j, k) * m[k * 4 + j];
                }
            }
            assert!((expectation(&rho, &s).unwrap() - tr.re).abs() < 1e-13);
            assert!(tr.im.abs() < 1e-13);
        }
    }

    #[test]
    fn u3_inverse_and_haar_angles() {
        let mut r = rng::seeded(1);
        for _ in 0..20 {
            let g = haar_u3(0, &mut r);
            let (a, b) = (g.matrix(), g.inverse().matrix());
            for i in 0..2 {
                for j in 0..2 {
                    let p: C64 = (0..2).map(|k| a[i * 2 + k] * b[k * 2 + j]).sum();
                    let target = if i == j { ONE } else { ZERO };
                    assert!((p - target).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn waiting_circuit_shapes() {
        assert_eq!(build_waiting_circuit_w1(3, 0, 1).unwrap().gate_count(), 0);
        assert_eq!(build_waiting_circuit_w1(2, 3, 1).unwrap().gate_count(), 12);
        let topo = Topology::chain(5).unwrap();
        let w2 = build_waiting_circuit_w2(5, 4, &topo, 9).unwrap();
        assert_eq!(w2.cnot_count(), 8);
        assert_eq!(w2.layers()[..4].iter().flatten().filter(|g| g.arity() == 2).count(), 4);
        let edgeless = Topology::custom(3, &[]).unwrap();
        assert!(build_waiting_circuit_w2(3, 2, &edgeless, 1).is_err());
        let short = build_waiting_circuit_w1(3, 2, 5).unwrap();
        let long = build_waiting_circuit_w1(3, 5, 5).unwrap();
        assert_eq!(short.layers()[..2], long.layers()[..2]);
    }

    #[test]
    fn noiseless_waiting_circuits_are_identity() {
        let topo = Topology::chain(3).unwrap();
        let start = prepare_product_state(&"x1y0z1".parse().unwrap()).unwrap();
        for c in [build_waiting_circuit_w1(3, 6, 2).unwrap(), build_waiting_circuit_w2(3, 6, &topo, 2).unwrap()] {
            let mut rho = start.clone();
            run_circuit(&mut rho, &c, &NoiseModel::noiseless(), true).unwrap();
            assert!(rho.entries().iter().zip(start.entries()).all(|(a, b)| (a - b).norm() < 1e-10));
        }
    }

    #[test]
    fn circuit_text_round_trip() {
        let topo = Topology::chain(3).unwrap();
        let c = build_waiting_circuit_w2(3, 3, &topo, 4).unwrap();
        let back = Circuit::from_text(3, 3, &c.to_text()).unwrap();
        assert_eq!(back, c);
        assert!(Circuit::from_text(3, 1, "0 u3 7 0 0 0").is_err());
        assert!(Circuit::from_text(3, 1, "0 zz 1").is_err());
    }

    #[test]
    fn shots_on_deterministic_and_mixed_states() {
        let rho = prepare_product_state(&"z1z0".parse().unwrap()).unwrap();
        let est = sample_shots(&rho, &[ps("ZI"), ps("IZ"), ps("ZZ")], 17, 3).unwrap();
        assert_eq!(est, vec![-1.0, 1.0, -1.0]);
        let mixed = DensityMatrix::maximally_mixed(1).unwrap();
        let mut ok = 0;
        for seed in 0..200 {
            if sample_shots(&mixed, &[ps("Z")], 8192, seed).unwrap()[0].abs() < 0.05 {
                ok += 1;
            }
        }
        assert!(ok >= 198);
        assert!(sample_shots(&rho, &[ps("XI"), ps("ZI")], 10, 1).is_err());
        let exact = sample_shots(&rho, &[ps("ZZ")], 0, 0).unwrap();
        assert_eq!(exact, vec![-1.0]);
    }

    #[test]
    fn shots_converge_to_expectation() {
        let mut r = rng::seeded(11);
        let mut rho = prepare_product_state(&"x0x0".parse().unwrap()).unwrap();
        apply_gate(&mut rho, &haar_u3(0, &mut r), None).unwrap();
        apply_gate(&mut rho, &Gate::Cnot { control: 0, target: 1 }, None).unwrap();
        let strings = [ps("XI"), ps("IX"), ps("XX")];
        let exact: Vec<f64> = strings.iter().map(|s| expectation(&rho, s).unwrap()).collect();
        for seed in 0..20 {
            let est = sample_shots(&rho, &strings, 8192, seed).unwrap();
            for (e, x) in est.iter().zip(&exact) {
                let sigma = ((1.0 - x * x) / 8192.0).sqrt().max(1e-9);
                assert!((e - x).abs() <= 4.0 * sigma + 1e-12);
            }
        }
    }
}
