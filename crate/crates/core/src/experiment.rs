//! Protocol runner and analysis pipeline.
//!
//! A run prepares product states, applies waiting circuits `W(t)` of every
//! depth on the grid, and records Pauli expectation values (exact or from
//! shots) in an append-only trace store. Analysis inverts each trace into
//! complex exponentials, averages decay rates by operator order, fits the
//! two-parameter rate law and compares `(k, p, e)` subclusters with theory.
//!
//! Rates are reported as positive inverse timescales `1/τ = −Re λ`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::circuitsim::{
    self, common_basis, expectation, inverse_layer, random_layer, sample_shots, CircuitFamily, DensityMatrix,
    NoiseModel, TwoQubitNoise,
};
use crate::error::{Error, Result};
use crate::hinv::{self, extract_modes, FilterParams, HinvParams, Mode, TimeTrace, TraceMeta};
use crate::io::{self, Header};
use crate::par;
use crate::pauli::{classify_string, enumerate_ixz, Pauli, PauliString, StringFeatures, MAX_SITES};
use crate::perturbation::{cluster_table_with, turnback_k, ClusterEntry, HierarchyParams};
use crate::rng;
use crate::spectral::{DensePropagator, ProductState};
use crate::topology::Topology;
use crate::C64;

pub const STORE_MAGIC: &str = "hierarchy trace store v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Depolarizing strength after each one-qubit gate.
    pub p1: f64,
    /// Strength of the channel after each CNOT.
    pub p2: f64,
    /// Amplitude damping after every gate on each target.
    pub damping: f64,
    /// `"depolarizing"` or `"correlated"`.
    pub two_qubit: String,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { p1: 0.01, p2: 0.0, damping: 0.0, two_qubit: "correlated".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub circuit: u64,
    pub states: u64,
    pub shots: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { circuit: 1, states: 2, shots: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HinvConfig {
    /// 0 selects a quarter of the trace length.
    pub max_modes: usize,
    pub amp_floor_rel: f64,
    pub amp_floor_abs: f64,
    pub err_ceiling: f64,
    pub positivity_tol: f64,
    pub refine: bool,
    /// Traces with `|y(0)|` below this carry no signal and are flagged.
    pub min_signal: f64,
}

impl Default for HinvConfig {
    fn default() -> Self {
        let f = FilterParams::default();
        HinvConfig {
            max_modes: 0,
            amp_floor_rel: f.amp_floor_rel,
            amp_floor_abs: f.amp_floor_abs,
            err_ceiling: f.err_ceiling,
            positivity_tol: f.positivity_tol,
            refine: true,
            min_signal: 0.1,
        }
    }
}

impl HinvConfig {
    pub fn params(&self) -> AnalysisParams {
        AnalysisParams {
            hinv: HinvParams {
                window: None,
                max_modes: (self.max_modes > 0).then_some(self.max_modes),
                filter: FilterParams {
                    amp_floor_rel: self.amp_floor_rel,
                    amp_floor_abs: self.amp_floor_abs,
                    err_ceiling: self.err_ceiling,
                    positivity_tol: self.positivity_tol,
                },
                refine: self.refine,
            },
            min_signal: self.min_signal,
        }
    }

    /// Append a message for every out-of-range field.
    pub fn check_public(&self, errs: &mut Vec<String>) {
        self.check(errs)
    }

    fn check(&self, errs: &mut Vec<String>) {
        if !(0.0..1.0).contains(&self.amp_floor_rel) {
            errs.push(format!("hinv.amp_floor_rel = {} outside [0, 1)", self.amp_floor_rel));
        }
        if !(self.amp_floor_abs >= 0.0) {
            errs.push(format!("hinv.amp_floor_abs = {} must be ≥ 0", self.amp_floor_abs));
        }
        if !(self.err_ceiling > 0.0) {
            errs.push(format!("hinv.err_ceiling = {} must be > 0", self.err_ceiling));
        }
        if !(self.positivity_tol >= 0.0) {
            errs.push(format!("hinv.positivity_tol = {} must be ≥ 0", self.positivity_tol));
        }
        if !(self.min_signal >= 0.0) {
            errs.push(format!("hinv.min_signal = {} must be ≥ 0", self.min_signal));
        }
    }
}

/// Run configuration (TOML).
///
/// ```toml
/// l = 3
/// topology = "chain"        # chain | complete | chain:5 | custom:4:1-2,2-3
/// family = "W1"             # W1 | W2
/// t_max = 40
/// t_step = 1
/// observables = []          # empty: every non-identity {I,X,Z} string
/// states = []               # explicit specs such as "x0z1z0"
/// state_mode = "aligned"    # aligned | random (used when `states` is empty)
/// n_states = 4              # random mode only
/// shots = 8192              # 0: exact expectation values
/// instances = 1             # random circuits averaged per depth
///
/// [noise]
/// p1 = 0.01
/// p2 = 0.0
/// damping = 0.0
/// two_qubit = "correlated"  # correlated | depolarizing
///
/// [seeds]
/// circuit = 1
/// states = 2
/// shots = 3
///
/// [hinv]
/// max_modes = 0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub l: usize,
    pub topology: String,
    pub family: String,
    pub t_max: usize,
    pub t_step: usize,
    pub observables: Vec<String>,
    pub states: Vec<String>,
    pub state_mode: String,
    pub n_states: usize,
    pub shots: u64,
    /// Independent circuit realizations per state; their output states are
    /// averaged before measurement, as if every shot drew a fresh circuit.
    pub instances: usize,
    pub noise: NoiseConfig,
    pub seeds: SeedConfig,
    pub hinv: HinvConfig,
    /// Check ρ after every gate (slow; meant for small test runs).
    pub validate: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            l: 3,
            topology: "chain".into(),
            family: "W1".into(),
            t_max: 40,
            t_step: 1,
            observables: Vec::new(),
            states: Vec::new(),
            state_mode: "aligned".into(),
            n_states: 4,
            shots: 8192,
            instances: 1,
            noise: NoiseConfig::default(),
            seeds: SeedConfig::default(),
            hinv: HinvConfig::default(),
            validate: false,
        }
    }
}

/// A validated configuration with every field parsed.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub config: ProtocolConfig,
    pub sites: usize,
    pub topology: Topology,
    pub family: CircuitFamily,
    pub times: Vec<usize>,
    pub observables: Vec<PauliString>,
    pub states: Vec<ProductState>,
    pub noise: NoiseModel,
}

impl ProtocolConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::from_toml(&text)
    }

    /// Parse and cross-check every field, reporting all problems at once.
    pub fn validate(&self) -> Result<Protocol> {
        let mut errs = Vec::new();
        let l = self.l;
        if !(2..=MAX_SITES).contains(&l) {
            errs.push(format!("l = {l} outside 2..={MAX_SITES}"));
        }
        let topo_text = if self.topology.contains(':') { self.topology.clone() } else { format!("{}:{l}", self.topology) };
        let topology = match topo_text.parse::<Topology>() {
            Ok(t) if t.sites() != l => {
                errs.push(format!("topology {t} has {} sites but l = {l}", t.sites()));
                None
            }
            Ok(t) => Some(t),
            Err(e) => {
                errs.push(format!("topology: {e}"));
                None
            }
        };
        let family = match self.family.parse::<CircuitFamily>() {
            Ok(f) => Some(f),
            Err(e) => {
                errs.push(format!("family: {e}"));
                None
            }
        };
        if let (Some(CircuitFamily::W2), Some(t)) = (family, &topology) {
            if t.edges().is_empty() {
                errs.push("family W2 needs a topology with at least one edge".into());
            }
        }
        if self.t_step == 0 {
            errs.push("t_step must be ≥ 1".into());
        } else if self.t_max % self.t_step != 0 {
            errs.push(format!("t_max = {} is not a multiple of t_step = {}", self.t_max, self.t_step));
        }
        let mut observables = Vec::new();
        for o in &self.observables {
            match o.parse::<PauliString>() {
                Ok(s) if s.len() != l => errs.push(format!("observable {o:?} has length {} ≠ {l}", s.len())),
                Ok(s) if s.is_identity() => errs.push(format!("observable {o:?} is the identity")),
                Ok(s) => observables.push(s),
                Err(e) => errs.push(format!("observable {o:?}: {e}")),
            }
        }
        if self.observables.is_empty() && (2..=MAX_SITES).contains(&l) {
            observables = enumerate_ixz(l).unwrap_or_default();
        }
        let mut states = Vec::new();
        for s in &self.states {
            match s.parse::<ProductState>() {
                Ok(p) if p.len() != l => errs.push(format!("state {s:?} has {} sites ≠ {l}", p.len())),
                Ok(p) => states.push(p),
                Err(e) => errs.push(format!("state {s:?}: {e}")),
            }
        }
        match self.state_mode.as_str() {
            "aligned" | "random" => {}
            other => errs.push(format!("state_mode {other:?} is neither \"aligned\" nor \"random\"")),
        }
        if self.instances == 0 {
            errs.push("instances must be ≥ 1".into());
        }
        if self.states.is_empty() && self.state_mode == "random" && self.n_states == 0 {
            errs.push("n_states must be ≥ 1".into());
        }
        for (name, p) in [("noise.p1", self.noise.p1), ("noise.p2", self.noise.p2), ("noise.damping", self.noise.damping)] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("{name} = {p} outside [0, 1]"));
            }
        }
        let two = match self.noise.two_qubit.parse::<TwoQubitNoise>() {
            Ok(k) => Some(k),
            Err(e) => {
                errs.push(format!("noise.two_qubit: {e}"));
                None
            }
        };
        self.hinv.check(&mut errs);
        if !observables.is_empty() && self.shots > 0 {
            // Every observable must be readable from some product basis; this only fails for malformed input.
            for o in &observables {
                if let Err(e) = common_basis(std::slice::from_ref(o)) {
                    errs.push(format!("observable {o}: {e}"));
                }
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let noise = NoiseModel::from_strengths(self.noise.p1, self.noise.p2, self.noise.damping, two.unwrap())
            .map_err(|e| Error::Config(vec![e.to_string()]))?;
        if states.is_empty() {
            states = if self.state_mode == "aligned" {
                aligned_states(&observables, self.seeds.states)?
            } else {
                let mut r = rng::seeded(self.seeds.states);
                (0..self.n_states).map(|_| ProductState::random(l, &mut r)).collect::<Result<_>>()?
            };
        }
        Ok(Protocol {
            config: self.clone(),
            sites: l,
            topology: topology.unwrap(),
            family: family.unwrap(),
            times: (0..=self.t_max).step_by(self.t_step).collect(),
            observables,
            states,
            noise,
        })
    }
}

/// Per-site basis of the measurement setting that reads `s` (identity sites read Z).
pub fn setting_of(s: &PauliString) -> Vec<Pauli> {
    s.paulis().into_iter().map(|p| if p == Pauli::I { Pauli::Z } else { p }).collect()
}

/// One product state per distinct measurement setting, with seeded random signs.
pub fn aligned_states(observables: &[PauliString], seed: u64) -> Result<Vec<ProductState>> {
    let settings: BTreeSet<Vec<Pauli>> = observables.iter().map(setting_of).collect();
    let mut r = rng::seeded(seed);
    settings
        .into_iter()
        .map(|b| {
            let sites = b.into_iter().map(|p| (p, rand::Rng::gen::<bool>(&mut r))).collect();
            ProductState::new(sites)
        })
        .collect()
}

impl Protocol {
    /// Observables grouped by measurement setting, in first-appearance order.
    pub fn settings(&self) -> Vec<(Vec<Pauli>, Vec<usize>)> {
        let mut groups: Vec<(Vec<Pauli>, Vec<usize>)> = Vec::new();
        for (i, o) in self.observables.iter().enumerate() {
            let b = setting_of(o);
            match groups.iter_mut().find(|(g, _)| *g == b) {
                Some((_, members)) => members.push(i),
                None => groups.push((b, vec![i])),
            }
        }
        groups
    }

    /// Human-readable execution plan.
    pub fn plan(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "family {} on {} (ℓ = {})", self.family, self.topology, self.sites);
        let _ = writeln!(out, "depths 0..={} step {} ({} points)", self.config.t_max, self.config.t_step, self.times.len());
        let _ = writeln!(out, "{} observables in {} settings", self.observables.len(), self.settings().len());
        let _ = writeln!(out, "{} initial states, {} circuit instance(s) each", self.states.len(), self.config.instances);
        let shots = if self.config.shots == 0 { "exact expectations".to_string() } else { format!("{} shots", self.config.shots) };
        let _ = writeln!(out, "{shots} per (state, depth, setting)");
        let _ = writeln!(
            out,
            "noise p1 = {}, p2 = {} ({}), damping = {}",
            self.config.noise.p1, self.config.noise.p2, self.config.noise.two_qubit, self.config.noise.damping
        );
        let _ = writeln!(out, "{} trace records", self.observables.len() * self.states.len() * self.times.len());
        out
    }

    fn store_header(&self) -> Header {
        let c = &self.config;
        let mut h: Header = vec![
            ("format".into(), STORE_MAGIC.into()),
            ("sites".into(), self.sites.to_string()),
            ("topology".into(), self.topology.to_string()),
            ("family".into(), self.family.to_string()),
            ("time_unit".into(), "1".into()),
            ("t_step".into(), c.t_step.to_string()),
            ("t_max".into(), c.t_max.to_string()),
            ("shots".into(), c.shots.to_string()),
            ("instances".into(), c.instances.to_string()),
            ("noise".into(), format!("p1={} p2={} damping={} two_qubit={}", c.noise.p1, c.noise.p2, c.noise.damping, c.noise.two_qubit)),
            ("seeds".into(), format!("circuit={} states={} shots={}", c.seeds.circuit, c.seeds.states, c.seeds.shots)),
        ];
        h.push(("columns".into(), "observable state t value shots seed".into()));
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub observable: PauliString,
    pub state: String,
    /// Integer time in units of the store's `time_unit`.
    pub t: u64,
    pub value: f64,
    pub shots: u64,
    pub seed: u64,
}

impl TraceRecord {
    fn render(&self) -> String {
        format!("{} {} {} {:.17e} {} {}\n", self.observable, self.state, self.t, self.value, self.shots, self.seed)
    }

    fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::parse(format!("bad trace record {line:?}"));
        if f.len() != 6 {
            return Err(bad());
        }
        Ok(TraceRecord {
            observable: f[0].parse()?,
            state: f[1].to_string(),
            t: f[2].parse().map_err(|_| bad())?,
            value: f[3].parse().map_err(|_| bad())?,
            shots: f[4].parse().map_err(|_| bad())?,
            seed: f[5].parse().map_err(|_| bad())?,
        })
    }
}

/// All records of one run plus the header describing them.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub header: Header,
    pub records: Vec<TraceRecord>,
}

impl TraceSet {
    pub fn sites(&self) -> Option<usize> {
        io::header_get(&self.header, "sites").and_then(|s| s.parse().ok())
    }

    pub fn topology(&self) -> Option<Topology> {
        io::header_get(&self.header, "topology").and_then(|s| s.parse().ok())
    }

    pub fn time_unit(&self) -> f64 {
        io::header_get(&self.header, "time_unit").and_then(|s| s.parse().ok()).unwrap_or(1.0)
    }

    pub fn t_step(&self) -> u64 {
        io::header_get(&self.header, "t_step").and_then(|s| s.parse().ok()).unwrap_or(1).max(1)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            io::header_line(&mut out, k, v);
        }
        for r in &self.records {
            out.push_str(&r.render());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (header, lines) = io::parse_text(text);
        if io::header_get(&header, "format") != Some(STORE_MAGIC) {
            return Err(Error::parse("not a trace store (missing format header)"));
        }
        let records = lines.into_iter().map(TraceRecord::parse).collect::<Result<_>>()?;
        Ok(TraceSet { header, records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Group records into traces on the uniform grid `0, step, 2·step, …`.
    /// The flag is set when the grid has gaps or does not start at 0.
    pub fn traces(&self) -> Vec<(TimeTrace, Option<String>)> {
        let unit = self.time_unit();
        let step = self.t_step();
        let mut order: Vec<(String, String)> = Vec::new();
        let mut groups: HashMap<(String, String), Vec<&TraceRecord>> = HashMap::new();
        for r in &self.records {
            let key = (r.observable.to_string(), r.state.clone());
            let entry = groups.entry(key.clone()).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push(r);
        }
        order
            .into_iter()
            .map(|key| {
                let mut rs = groups.remove(&key).unwrap_or_default();
                rs.sort_by_key(|r| r.t);
                rs.dedup_by_key(|r| r.t);
                let gapless = rs.iter().enumerate().all(|(n, r)| r.t == n as u64 * step);
                let values = rs.iter().map(|r| C64::new(r.value, 0.0)).collect();
                let meta = TraceMeta {
                    observable: key.0.clone(),
                    state: key.1.clone(),
                    shots: rs.first().map_or(0, |r| r.shots),
                    seed: rs.first().map_or(0, |r| r.seed),
                };
                let trace = TimeTrace::new(values, 0, unit * step as f64).expect("positive time unit").with_meta(meta);
                let flag = (!gapless).then(|| "incomplete time grid".to_string());
                (trace, flag)
            })
            .collect()
    }
}

fn state_seed(base: u64, state_index: usize) -> u64 {
    rng::derive(base, &[state_index as u64])
}

/// Output state of every depth for one circuit realization. Shallower
/// circuits reuse the forward layers of deeper ones.
fn run_instance(p: &Protocol, state: &ProductState, seed: u64) -> Result<Vec<DensityMatrix>> {
    let t_max = p.times.last().copied().unwrap_or(0);
    let layers: Vec<_> = (0..t_max)
        .map(|i| random_layer(p.family, p.sites, Some(&p.topology), seed, i))
        .collect::<Result<_>>()?;
    let mut fwd = circuitsim::prepare_product_state(state)?;
    let mut out = Vec::with_capacity(p.times.len());
    let mut depth = 0;
    for &t in &p.times {
        circuitsim::run_layers(&mut fwd, &layers[depth..t], &p.noise)?;
        depth = t;
        let mut rho = fwd.clone();
        let inverse: Vec<_> = layers[..t].iter().rev().map(|l| inverse_layer(l)).collect();
        circuitsim::run_layers(&mut rho, &inverse, &p.noise)?;
        if p.config.validate {
            rho.validate().map_err(|e| Error::numerical(format!("state {state}, depth {t}: {e}")))?;
        }
        out.push(rho);
    }
    Ok(out)
}

/// Records of one state over the whole grid.
fn run_state(p: &Protocol, si: usize) -> Result<Vec<TraceRecord>> {
    let state = &p.states[si];
    let cseed = state_seed(p.config.seeds.circuit, si);
    let n = p.config.instances.max(1);
    let runs = par::map_range(n, |r| run_instance(p, state, if n == 1 { cseed } else { rng::derive(cseed, &[r as u64]) }));
    let mut averaged: Option<Vec<DensityMatrix>> = None;
    for run in runs {
        let run = run?;
        averaged = Some(match averaged {
            None => run,
            Some(mut acc) => {
                for (a, b) in acc.iter_mut().zip(&run) {
                    a.accumulate(b)?;
                }
                acc
            }
        });
    }
    let mut averaged = averaged.unwrap_or_default();
    if n > 1 {
        averaged.iter_mut().for_each(|rho| rho.scale(1.0 / n as f64));
    }
    let snapshots: Vec<(usize, DensityMatrix)> = p.times.iter().copied().zip(averaged).collect();
    let settings = p.settings();
    let state_text = state.to_string();
    let per_t: Vec<Result<Vec<TraceRecord>>> = par::map(&snapshots, |(t, rho)| {
        let mut values = vec![0.0; p.observables.len()];
        let mut seeds = vec![0u64; p.observables.len()];
        for (g, (_, members)) in settings.iter().enumerate() {
            let strings: Vec<PauliString> = members.iter().map(|&i| p.observables[i]).collect();
            let seed = rng::derive(p.config.seeds.shots, &[si as u64, *t as u64, g as u64]);
            let est = if p.config.shots == 0 {
                strings.iter().map(|s| expectation(&rho, s)).collect::<Result<Vec<_>>>()?
            } else {
                sample_shots(&rho, &strings, p.config.shots, seed)?
            };
            for (&i, v) in members.iter().zip(est) {
                values[i] = v;
                seeds[i] = seed;
            }
        }
        Ok(p.observables
            .iter()
            .enumerate()
            .map(|(i, o)| TraceRecord {
                observable: *o,
                state: state_text.clone(),
                t: *t as u64,
                value: values[i],
                shots: p.config.shots,
                seed: seeds[i],
            })
            .collect())
    });
    let mut out = Vec::with_capacity(p.times.len() * p.observables.len());
    for r in per_t {
        out.extend(r?);
    }
    // Canonical order: observable-major, then time.
    let n_obs = p.observables.len();
    let n_t = p.times.len();
    Ok((0..n_obs).flat_map(|i| (0..n_t).map(move |j| (i, j))).map(|(i, j)| out[j * n_obs + i].clone()).collect())
}

/// Run the protocol, appending to `store` state by state. An existing store
/// with the same header is resumed: complete states are kept, the rest recomputed.
pub fn run_protocol(p: &Protocol, store: Option<&Path>) -> Result<TraceSet> {
    let header = p.store_header();
    let per_state = p.observables.len() * p.times.len();
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut done = 0usize;
    if let Some(path) = store.filter(|path| path.exists()) {
        let old = TraceSet::load(path)?;
        if old.header != header {
            return Err(Error::invalid(format!("{} was written by a different configuration", path.display())));
        }
        for (si, state) in p.states.iter().enumerate() {
            let text = state.to_string();
            let rs: Vec<TraceRecord> = old.records.iter().filter(|r| r.state == text).cloned().collect();
            if rs.len() != per_state {
                break;
            }
            records.extend(rs);
            done = si + 1;
        }
    }
    if let Some(path) = store {
        io::write_file(path, &TraceSet { header: header.clone(), records: records.clone() }.render())?;
    }
    for si in done..p.states.len() {
        let rs = run_state(p, si).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("job state #{si} ({}): {m}", p.states[si])),
            other => other,
        })?;
        if let Some(path) = store {
            let chunk: String = rs.iter().map(TraceRecord::render).collect();
            io::append_file(path, &chunk)?;
        }
        records.extend(rs);
    }
    Ok(TraceSet { header, records })
}

/// Binomial shot estimate of an expectation value `y ∈ [−1, 1]`.
pub fn sample_expectation(y: f64, shots: u64, r: &mut rng::Rng) -> Result<f64> {
    let q = ((1.0 + y) / 2.0).clamp(0.0, 1.0);
    let n = Binomial::new(shots, q).map_err(|e| Error::numerical(format!("binomial draw failed: {e}")))?.sample(r);
    Ok(2.0 * n as f64 / shots as f64 - 1.0)
}

/// Traces `Tr(ρ₀ O(n·dt))` of a Liouvillian for every `(observable, state)` pair,
/// optionally with independent binomial shot noise on each sample.
pub fn propagator_trace_set(
    prop: &DensePropagator,
    pairs: &[(PauliString, ProductState)],
    dt: f64,
    len: usize,
    shots: u64,
    seed: u64,
) -> Result<TraceSet> {
    let sites = prop.sites();
    let header: Header = vec![
        ("format".into(), STORE_MAGIC.into()),
        ("sites".into(), sites.to_string()),
        ("time_unit".into(), format!("{dt:.17e}")),
        ("t_step".into(), "1".into()),
        ("shots".into(), shots.to_string()),
        ("columns".into(), "observable state t value shots seed".into()),
    ];
    let per_pair: Vec<Result<Vec<TraceRecord>>> = par::map_range(pairs.len(), |i| {
        let (o, s) = &pairs[i];
        let tr = prop.trace(o, s, 0, dt, len)?;
        let pseed = rng::derive(seed, &[i as u64]);
        let mut r = rng::seeded(pseed);
        tr.values
            .iter()
            .enumerate()
            .map(|(n, v)| {
                let value = if shots == 0 { v.re } else { sample_expectation(v.re, shots, &mut r)? };
                Ok(TraceRecord { observable: *o, state: s.to_string(), t: n as u64, value, shots, seed: pseed })
            })
            .collect()
    });
    let mut records = Vec::new();
    for r in per_pair {
        records.extend(r?);
    }
    Ok(TraceSet { header, records })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisParams {
    pub hinv: HinvParams,
    pub min_signal: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        HinvConfig::default().params()
    }
}

/// Extraction outcome for one trace.
#[derive(Debug, Clone)]
pub struct TraceModes {
    pub observable: PauliString,
    pub state: String,
    pub trace: TimeTrace,
    pub modes: Vec<Mode>,
    /// Why the trace contributed nothing, if it did not.
    pub flag: Option<String>,
    /// RMS of `trace − reconstruct(modes)`.
    pub rms: f64,
    /// `sqrt(mean((1 − y²)/shots))`; 0 for exact traces.
    pub noise_floor: f64,
}

impl TraceModes {
    pub fn order(&self) -> usize {
        self.observable.order()
    }

    /// `|c|`-weighted mean rate of the surviving modes.
    pub fn weighted_rate(&self) -> Option<f64> {
        let w: f64 = self.modes.iter().map(|m| m.amplitude.norm()).sum();
        (w > 0.0).then(|| self.modes.iter().map(|m| m.amplitude.norm() * m.rate()).sum::<f64>() / w)
    }
}

/// Shot-noise floor of a sampled trace.
pub fn shot_noise_floor(trace: &TimeTrace, shots: u64) -> f64 {
    if shots == 0 || trace.is_empty() {
        return 0.0;
    }
    let s: f64 = trace.values.iter().map(|v| (1.0 - v.re * v.re).max(0.0) / shots as f64).sum();
    (s / trace.len() as f64).sqrt()
}

fn analyze_trace(trace: TimeTrace, flag: Option<String>, p: &AnalysisParams) -> Result<TraceModes> {
    let observable: PauliString = trace.meta.observable.parse()?;
    let state = trace.meta.state.clone();
    let floor = shot_noise_floor(&trace, trace.meta.shots);
    let mut out = TraceModes { observable, state, rms: 0.0, noise_floor: floor, modes: Vec::new(), flag, trace };
    if out.flag.is_none() {
        let y0 = out.trace.values.first().map_or(0.0, |v| v.norm());
        if y0 < p.min_signal {
            out.flag = Some(format!("no signal (|y(0)| = {y0:.3e})"));
        } else {
            match extract_modes(&out.trace, &p.hinv) {
                Ok(m) if m.is_empty() => out.flag = Some("no surviving mode".into()),
                Ok(m) => out.modes = m,
                Err(e) => out.flag = Some(format!("inversion failed: {e}")),
            }
        }
    }
    let rec = hinv::reconstruct(&out.modes, out.trace.t0, out.trace.dt, out.trace.len())?;
    out.rms = out.trace.rms_difference(&rec)?;
    Ok(out)
}

/// Harmonic inversion of every trace. Failures are flagged, never fatal.
pub fn extract_rates(set: &TraceSet, p: &AnalysisParams) -> Result<Vec<TraceModes>> {
    let traces = set.traces();
    par::map(&traces, |(t, f)| analyze_trace(t.clone(), f.clone(), p)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderSummary {
    /// `|c|`-weighted mean of `−Re λ`.
    pub mean_rate: f64,
    pub total_weight: f64,
    pub traces: usize,
    pub modes: usize,
    /// Weighted Gaussian kernel density of rates on a uniform grid.
    pub density: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterSummary {
    pub orders: BTreeMap<usize, OrderSummary>,
    /// Orders in `1..=ℓ` without a single mode.
    pub empty: Vec<usize>,
}

impl ClusterSummary {
    pub fn means(&self) -> BTreeMap<usize, f64> {
        self.orders.iter().map(|(&k, s)| (k, s.mean_rate)).collect()
    }

    /// Order with the largest mean rate.
    pub fn argmax(&self) -> Option<usize> {
        self.orders.iter().max_by(|a, b| a.1.mean_rate.total_cmp(&b.1.mean_rate)).map(|(&k, _)| k)
    }
}

fn kde(samples: &[(f64, f64)], points: usize) -> Vec<(f64, f64)> {
    let w: f64 = samples.iter().map(|s| s.1).sum();
    if samples.is_empty() || w <= 0.0 {
        return Vec::new();
    }
    let mean = samples.iter().map(|(x, v)| x * v).sum::<f64>() / w;
    let var = samples.iter().map(|(x, v)| v * (x - mean).powi(2)).sum::<f64>() / w;
    let n_eff = w * w / samples.iter().map(|s| s.1 * s.1).sum::<f64>();
    let mut h = 1.06 * var.sqrt() * n_eff.powf(-0.2);
    if !(h > 0.0) {
        h = 1e-3 * mean.abs().max(1e-9);
    }
    let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let norm = 1.0 / (w * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64;
            let d = samples.iter().map(|(s, v)| v * (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>() * norm;
            (x, d)
        })
        .collect()
}

/// Per-order `|c|`-weighted mean decay rate; `k = 0` is excluded.
pub fn cluster_by_order(rates: &[(PauliString, Vec<Mode>)], sites: usize) -> ClusterSummary {
    let mut acc: BTreeMap<usize, (Vec<(f64, f64)>, usize)> = BTreeMap::new();
    for (o, modes) in rates {
        let k = o.order();
        if k == 0 {
            continue;
        }
        let e = acc.entry(k).or_default();
        e.1 += 1;
        e.0.extend(modes.iter().map(|m| (m.rate(), m.amplitude.norm())));
    }
    let mut summary = ClusterSummary::default();
    for (k, (samples, traces)) in acc {
        let w: f64 = samples.iter().map(|s| s.1).sum();
        if samples.is_empty() || w <= 0.0 {
            continue;
        }
        let mean_rate = samples.iter().map(|(r, v)| r * v).sum::<f64>() / w;
        summary
            .orders
            .insert(k, OrderSummary { mean_rate, total_weight: w, traces, modes: samples.len(), density: kde(&samples, 64) });
    }
    summary.empty = (1..=sites).filter(|k| !summary.orders.contains_key(k)).collect();
    summary
}

/// Modes keyed by observable for the traces that were not flagged.
pub fn mode_lists(entries: &[TraceModes]) -> Vec<(PauliString, Vec<Mode>)> {
    entries.iter().filter(|e| e.flag.is_none()).map(|e| (e.observable, e.modes.clone())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyFit {
    pub alpha: f64,
    pub beta: f64,
    pub sites: usize,
    /// `mean_k − predicted_rate(k)`.
    pub residuals: BTreeMap<usize, f64>,
    pub max_rate: f64,
    pub r_squared: f64,
}

impl HierarchyFit {
    pub fn params(&self) -> Result<HierarchyParams> {
        HierarchyParams::new(self.alpha, self.beta, self.sites)
    }

    pub fn predicted(&self, k: usize) -> f64 {
        basis_row(k as f64, self.sites).iter().zip([self.alpha, self.beta]).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.values().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Real maximizer of the fitted law, if it has a quadratic part.
    pub fn turnback(&self) -> Option<f64> {
        self.params().ok().and_then(|p| turnback_k(&p).ok())
    }
}

fn basis_row(k: f64, sites: usize) -> [f64; 2] {
    let l = sites as f64;
    [(3.0 * l * k - 2.0 * k * k - k) / (9.0 * (l - 1.0)), k / (3.0 * l)]
}

/// Nonnegative least squares of per-order means onto the two-parameter rate law.
pub fn fit_hierarchy(means: &BTreeMap<usize, f64>, sites: usize) -> Result<HierarchyFit> {
    if !(2..=MAX_SITES).contains(&sites) {
        return Err(Error::invalid(format!("ℓ = {sites} outside 2..={MAX_SITES}")));
    }
    let pts: Vec<(usize, f64)> = means.iter().filter(|(&k, _)| k >= 1 && k <= sites).map(|(&k, &m)| (k, m)).collect();
    if pts.len() < 3 {
        return Err(Error::invalid(format!("hierarchy fit needs ≥ 3 distinct orders, got {}", pts.len())));
    }
    let rows: Vec<([f64; 2], f64)> = pts.iter().map(|&(k, m)| (basis_row(k as f64, sites), m)).collect();
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (r, y) in &rows {
        a11 += r[0] * r[0];
        a12 += r[0] * r[1];
        a22 += r[1] * r[1];
        b1 += r[0] * y;
        b2 += r[1] * y;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() <= 1e-12 * a11 * a22 {
        return Err(Error::invalid("degenerate design: fewer than 2 independent orders"));
    }
    let sse = |a: f64, b: f64| rows.iter().map(|(r, y)| (y - r[0] * a - r[1] * b).powi(2)).sum::<f64>();
    let free = ((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det);
    let (alpha, beta) = if free.0 >= 0.0 && free.1 >= 0.0 {
        free
    } else {
        let only_a = ((b1 / a11).max(0.0), 0.0);
        let only_b = (0.0, (b2 / a22).max(0.0));
        if sse(only_a.0, only_a.1) <= sse(only_b.0, only_b.1) {
            only_a
        } else {
            only_b
        }
    };
    let mean_y = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    let ss_tot: f64 = rows.iter().map(|r| (r.1 - mean_y).powi(2)).sum();
    let ss_res = sse(alpha, beta);
    let fit = HierarchyFit {
        alpha,
        beta,
        sites,
        residuals: BTreeMap::new(),
        max_rate: pts.iter().fold(0.0f64, |m, p| m.max(p.1.abs())),
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    };
    let residuals = pts.iter().map(|&(k, m)| (k, m - fit.predicted(k))).collect();
    Ok(HierarchyFit { residuals, ..fit })
}

/// `R²` of a least-squares line through the origin, with the fitted slope.
pub fn fit_line_through_origin(points: &BTreeMap<usize, f64>) -> (f64, f64) {
    let sxx: f64 = points.keys().map(|&k| (k * k) as f64).sum();
    let sxy: f64 = points.iter().map(|(&k, &m)| k as f64 * m).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let n = points.len().max(1) as f64;
    let mean = points.values().sum::<f64>() / n;
    let ss_tot: f64 = points.values().map(|m| (m - mean).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|(&k, &m)| (m - slope * k as f64).powi(2)).sum();
    (slope, if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 })
}

/// Per-observable rate: the `|c|`-weighted rate averaged over its traces.
pub fn observable_rates(entries: &[TraceModes]) -> Vec<(PauliString, f64)> {
    let mut acc: BTreeMap<PauliString, (f64, usize)> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.flag.is_none()) {
        if let Some(r) = e.weighted_rate() {
            let a = acc.entry(e.observable).or_default();
            a.0 += r;
            a.1 += 1;
        }
    }
    acc.into_iter().map(|(o, (s, n))| (o, s / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubclusterEntry {
    pub features: StringFeatures,
    pub members: usize,
    /// Measured class mean minus the measured order-`k` mean.
    pub measured: f64,
    /// Standard error of the class mean.
    pub sem: f64,
    /// Theory class rate minus the theory order-`k` rate.
    pub theory: f64,
    /// `(measured − theory)/σ`, only for classes with ≥ 2 members.
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubclusterReport {
    pub entries: Vec<SubclusterEntry>,
    pub chi2: f64,
    pub dof: usize,
    /// χ² after dropping classes with `|z| > 3`.
    pub chi2_pruned: f64,
    pub dof_pruned: usize,
    pub outliers: Vec<StringFeatures>,
    /// Fraction of classes with a nonzero theory deviation whose measured sign matches.
    pub sign_agreement: f64,
}

/// Outlier threshold for the pruned χ².
pub const OUTLIER_Z: f64 = 3.0;

/// Compare measured `(k, p, e)` class means with the zeroth-order table.
///
/// `table` holds class centers as diagonal elements (negative), e.g. from
/// [`cluster_table_with`]; all reported deviations are in rate units.
pub fn subcluster_analysis(
    rates: &[(PauliString, f64)],
    topo: &Topology,
    table: &BTreeMap<StringFeatures, ClusterEntry>,
) -> Result<SubclusterReport> {
    let mut classes: BTreeMap<StringFeatures, Vec<f64>> = BTreeMap::new();
    let mut by_order: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (o, r) in rates {
        if o.order() == 0 {
            continue;
        }
        classes.entry(classify_string(o, topo)?).or_default().push(*r);
        by_order.entry(o.order()).or_default().push(*r);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let measured_center: BTreeMap<usize, f64> = by_order.iter().map(|(&k, v)| (k, mean(v))).collect();
    let mut theory_center: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (f, e) in table {
        let t = theory_center.entry(f.order).or_default();
        t.0 += -e.center * e.count as f64;
        t.1 += e.count;
    }
    let scale = measured_center.values().fold(1.0f64, |m, c| m.max(c.abs()));
    let floor = 1e-9 * scale;
    let mut entries = Vec::new();
    for (f, members) in &classes {
        let th = table
            .get(f)
            .ok_or_else(|| Error::invalid(format!("class {f:?} missing from the cluster table")))?;
        let (tsum, tcount) = theory_center[&f.order];
        let theory = -th.center - tsum / tcount as f64;
        let m = mean(members);
        let measured = m - measured_center[&f.order];
        let n = members.len();
        let sem = if n >= 2 {
            let var = members.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        let z = (n >= 2).then(|| (measured - theory) / sem.max(floor));
        entries.push(SubclusterEntry { features: *f, members: n, measured, sem, theory, z });
    }
    let chi = |keep: &dyn Fn(f64) -> bool| {
        let zs: Vec<f64> = entries.iter().filter_map(|e| e.z).filter(|z| keep(*z)).collect();
        let dof = zs.len();
        (if dof > 0 { zs.iter().map(|z| z * z).sum::<f64>() / dof as f64 } else { 0.0 }, dof)
    };
    let (chi2, dof) = chi(&|_| true);
    let (chi2_pruned, dof_pruned) = chi(&|z| z.abs() <= OUTLIER_Z);
    let outliers = entries.iter().filter(|e| e.z.is_some_and(|z| z.abs() > OUTLIER_Z)).map(|e| e.features).collect();
    let signed: Vec<&SubclusterEntry> = entries.iter().filter(|e| e.theory.abs() > floor).collect();
    let sign_agreement = if signed.is_empty() {
        1.0
    } else {
        signed.iter().filter(|e| e.measured.signum() == e.theory.signum()).count() as f64 / signed.len() as f64
    };
    Ok(SubclusterReport { entries, chi2, dof, chi2_pruned, dof_pruned, outliers, sign_agreement })
}

/// Everything the analysis produces for one trace set.
#[derive(Debug, Clone)]
pub struct AnalysisResult {
    pub sites: usize,
    pub traces: Vec<TraceModes>,
    pub clusters: ClusterSummary,
    pub fit: std::result::Result<HierarchyFit, String>,
    pub subclusters: Option<SubclusterReport>,
}

impl AnalysisResult {
    pub fn flagged(&self) -> impl Iterator<Item = &TraceModes> {
        self.traces.iter().filter(|t| t.flag.is_some())
    }

    /// Largest per-order mean rate (empirical turnback position).
    pub fn argmax_order(&self) -> Option<usize> {
        self.clusters.argmax()
    }
}

/// Full pipeline on a trace set.
pub fn analyze(set: &TraceSet, p: &AnalysisParams) -> Result<AnalysisResult> {
    let sites = set.sites().ok_or_else(|| Error::invalid("trace store lacks a `sites` header"))?;
    if set.records.is_empty() {
        return Err(Error::invalid("trace store is empty"));
    }
    let traces = extract_rates(set, p)?;
    let clusters = cluster_by_order(&mode_lists(&traces), sites);
    let fit = fit_hierarchy(&clusters.means(), sites).map_err(|e| e.to_string());
    let subclusters = match (set.topology(), &fit) {
        (Some(topo), Ok(f)) if topo.sites() == sites => {
            let (d1, d2) = HierarchyParams { alpha: f.alpha, beta: f.beta, sites }.channel_weights(&topo);
            let table = cluster_table_with(&topo, d1, d2)?;
            Some(subcluster_analysis(&observable_rates(&traces), &topo, &table)?)
        }
        _ => None,
    };
    Ok(AnalysisResult { sites, traces, clusters, fit, subclusters })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x:.10e}"))
}

/// Sectioned text report.
pub fn render_results(r: &AnalysisResult) -> String {
    let mut out = String::new();
    let analyzed = r.traces.iter().filter(|t| t.flag.is_none()).count();
    let _ = writeln!(out, "[summary]\nsites = {}\ntraces = {}\nanalyzed = {}\nflagged = {}", r.sites, r.traces.len(), analyzed, r.traces.len() - analyzed);
    let _ = writeln!(out, "\n[modes]\n# observable state re_lambda im_lambda re_c im_c error");
    for t in &r.traces {
        for m in &t.modes {
            let _ = writeln!(
                out,
                "{} {} {:.10e} {:.10e} {:.10e} {:.10e} {:.3e}",
                t.observable, t.state, m.lambda.re, m.lambda.im, m.amplitude.re, m.amplitude.im, m.error
            );
        }
    }
    let _ = writeln!(out, "\n[flagged]");
    for t in r.flagged() {
        let _ = writeln!(out, "{} {} {}", t.observable, t.state, t.flag.as_deref().unwrap_or(""));
    }
    let _ = writeln!(out, "\n[clusters]\n# k mean_rate traces modes");
    for (k, s) in &r.clusters.orders {
        let _ = writeln!(out, "{k} {:.10e} {} {}", s.mean_rate, s.traces, s.modes);
    }
    for k in &r.clusters.empty {
        let _ = writeln!(out, "# order {k}: no modes");
    }
    let _ = writeln!(out, "\n[fit]");
    match &r.fit {
        Ok(f) => {
            let _ = writeln!(out, "alpha = {:.10e}\nbeta = {:.10e}\nr_squared = {:.10e}", f.alpha, f.beta, f.r_squared);
            let _ = writeln!(out, "max_abs_residual = {:.10e}\nmax_rate = {:.10e}", f.max_abs_residual(), f.max_rate);
            let _ = writeln!(out, "argmax_k_measured = {}", r.argmax_order().map_or("none".into(), |k| k.to_string()));
            let _ = writeln!(out, "turnback_k_predicted = {}", fmt_opt(f.turnback()));
        }
        Err(e) => {
            let _ = writeln!(out, "# not fitted: {e}");
            let _ = writeln!(out, "argmax_k_measured = {}", r.argmax_order().map_or("none".into(), |k| k.to_string()));
        }
    }
    let _ = writeln!(out, "\n[subclusters]\n# k p e members measured sem theory z");
    if let Some(s) = &r.subclusters {
        for e in &s.entries {
            let f = e.features;
            let _ = writeln!(
                out,
                "{} {} {} {} {:.10e} {} {:.10e} {}",
                f.order, f.adjacent_pairs, f.edge_nonidentities, e.members, e.measured, fmt_opt(Some(e.sem).filter(|x| x.is_finite())), e.theory, fmt_opt(e.z)
            );
        }
        let _ = writeln!(out, "\n[chi2]\nchi2_stat = {:.10e}\ndof = {}", s.chi2, s.dof);
        let _ = writeln!(out, "chi2_pruned = {:.10e}\ndof_pruned = {}", s.chi2_pruned, s.dof_pruned);
        let _ = writeln!(out, "sign_agreement = {:.6}", s.sign_agreement);
        for o in &s.outliers {
            let _ = writeln!(out, "# outlier k={} p={} e={}", o.order, o.adjacent_pairs, o.edge_nonidentities);
        }
    } else {
        let _ = writeln!(out, "\n[chi2]\n# not available");
    }
    out
}

/// Results file plus plot-ready CSVs in `dir`.
pub fn write_results(r: &AnalysisResult, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        io::write_file(&path, &text)?;
        written.push(path);
        Ok(())
    };
    put("results.txt", render_results(r))?;

    let mut clusters = String::from("k,mean_rate,predicted_rate,traces,modes\n");
    for (k, s) in &r.clusters.orders {
        let pred = r.fit.as_ref().ok().map(|f| f.predicted(*k));
        let _ = writeln!(clusters, "{k},{:.10e},{},{},{}", s.mean_rate, fmt_opt(pred), s.traces, s.modes);
    }
    put("clusters.csv", clusters)?;

    let mut density = String::from("k,rate,density\n");
    for (k, s) in &r.clusters.orders {
        for (x, d) in &s.density {
            let _ = writeln!(density, "{k},{x:.10e},{d:.10e}");
        }
    }
    put("density.csv", density)?;

    let mut modes = String::from("observable,state,k,rate,frequency,abs_amplitude\n");
    for t in r.traces.iter().filter(|t| t.flag.is_none()) {
        for m in &t.modes {
            let _ = writeln!(modes, "{},{},{},{:.10e},{:.10e},{:.10e}", t.observable, t.state, t.order(), m.rate(), m.lambda.im, m.amplitude.norm());
        }
    }
    put("modes.csv", modes)?;

    let mut recon = String::from("observable,state,t,measured,reconstructed\n");
    for t in r.traces.iter().filter(|t| t.flag.is_none()) {
        let rec = hinv::reconstruct(&t.modes, t.trace.t0, t.trace.dt, t.trace.len())?;
        for (n, (a, b)) in t.trace.values.iter().zip(&rec.values).enumerate() {
            let _ = writeln!(recon, "{},{},{:.10e},{:.10e},{:.10e}", t.observable, t.state, t.trace.time(n), a.re, b.re);
        }
    }
    put("reconstruction.csv", recon)?;

    if let Some(s) = &r.subclusters {
        let mut sub = String::from("k,p,e,members,measured,sem,theory\n");
        for e in &s.entries {
            let f = e.features;
            let _ = writeln!(
                sub,
                "{},{},{},{},{:.10e},{},{:.10e}",
                f.order, f.adjacent_pairs, f.edge_nonidentities, e.members, e.measured, fmt_opt(Some(e.sem).filter(|x| x.is_finite())), e.theory
            );
        }
        put("subclusters.csv", sub)?;
    }
    Ok(written)
}
