//! Zeroth-order cluster positions.
//!
//! For `K = d I` the adjoint Liouvillian of Pauli channels is diagonal in the
//! Pauli basis: every channel that anticommutes with a string contributes
//! `−2d`, every commuting channel contributes nothing. Splitting the mean
//! diagonal weight into `d1` (one-body channels) and `d2` (pair channels) gives
//! a string's rate as
//!
//! ```text
//! 2 [ d1·2k + d2·(6 n₁ + 4 n₂) ]
//! ```
//!
//! where `n₁` / `n₂` count edges with one / two non-identity endpoints. On a
//! chain `n₂ = p` and `n₁ = 2k − e − 2p`.

use std::collections::BTreeMap;

use crate::error::{check_len, Error, Result};
use crate::liouvillian::{KossakowskiMatrix, LindbladSet};
use crate::pauli::{classify_string, enumerate_strings, PauliString, StringFeatures, MAX_SITES};
use crate::topology::Topology;

/// Two-parameter rate law `1/τ_k = α/(9(ℓ−1))·(3ℓk − 2k² − k) + β k/(3ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchyParams {
    pub alpha: f64,
    pub beta: f64,
    pub sites: usize,
}

impl HierarchyParams {
    pub fn new(alpha: f64, beta: f64, sites: usize) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::invalid(format!("α = {alpha}, β = {beta} must be finite and ≥ 0")));
        }
        if alpha == 0.0 && beta == 0.0 {
            return Err(Error::invalid("α and β cannot both vanish"));
        }
        if sites < 2 || sites > MAX_SITES {
            return Err(Error::invalid(format!("ℓ = {sites} outside 2..={MAX_SITES}")));
        }
        Ok(HierarchyParams { alpha, beta, sites })
    }

    /// `(α, β)` reproducing the order-averaged diagonal for channel weights
    /// `d1` (one-body) and `d2` (pair) on `topo`: `β = 12ℓ·d1`, `α = 72|E|·d2/ℓ`.
    pub fn from_channel_weights(topo: &Topology, d1: f64, d2: f64) -> Result<Self> {
        let l = topo.sites() as f64;
        let edges = topo.edges().len() as f64;
        Self::new(72.0 * edges * d2 / l, 12.0 * l * d1, topo.sites())
    }

    /// Inverse of [`HierarchyParams::from_channel_weights`].
    pub fn channel_weights(&self, topo: &Topology) -> (f64, f64) {
        let l = topo.sites() as f64;
        let edges = topo.edges().len() as f64;
        let d2 = if edges > 0.0 { self.alpha * l / (72.0 * edges) } else { 0.0 };
        (self.beta / (12.0 * l), d2)
    }
}

/// Number of channels in `set` anticommuting with `s`.
pub fn count_anticommuting(s: &PauliString, set: &LindbladSet) -> Result<usize> {
    check_len(set.sites(), s.len())?;
    let mut n = 0;
    for l in set.operators() {
        if !l.commutes(s)? {
            n += 1;
        }
    }
    Ok(n)
}

/// `𝖫_xx = −2d · count_anticommuting` for `K = d I`.
pub fn diagonal_element(s: &PauliString, set: &LindbladSet, d: f64) -> Result<f64> {
    Ok(-2.0 * d * count_anticommuting(s, set)? as f64)
}

/// Edges with exactly one / both endpoints in the support of `s`.
pub fn edge_occupancy(s: &PauliString, topo: &Topology) -> Result<(usize, usize)> {
    check_len(topo.sites(), s.len())?;
    let support = s.support();
    let on = |v: usize| (support >> v) & 1 == 1;
    let (mut one, mut two) = (0, 0);
    for &(a, b) in topo.edges() {
        match (on(a), on(b)) {
            (true, true) => two += 1,
            (true, false) | (false, true) => one += 1,
            _ => {}
        }
    }
    Ok((one, two))
}

/// Zeroth-order diagonal of `s` under channel weights `d1`, `d2` (negative).
pub fn string_center(s: &PauliString, topo: &Topology, d1: f64, d2: f64) -> Result<f64> {
    let (one, two) = edge_occupancy(s, topo)?;
    let k = s.order() as f64;
    Ok(-2.0 * (d1 * 2.0 * k + d2 * (6.0 * one as f64 + 4.0 * two as f64)))
}

/// Predicted inverse timescale of order-`k` observables.
pub fn predicted_rate(k: usize, params: &HierarchyParams) -> Result<f64> {
    let l = params.sites;
    if k > l {
        return Err(Error::invalid(format!("order {k} exceeds ℓ = {l}")));
    }
    Ok(rate_at(k as f64, params))
}

/// The rate law at real `k`.
pub fn rate_at(k: f64, params: &HierarchyParams) -> f64 {
    let l = params.sites as f64;
    params.alpha / (9.0 * (l - 1.0)) * (3.0 * l * k - 2.0 * k * k - k) + params.beta * k / (3.0 * l)
}

/// Real maximizer `k* = (3ℓ−1)/4 + 3(ℓ−1)β/(4ℓα)` of the rate law.
pub fn turnback_k(params: &HierarchyParams) -> Result<f64> {
    if params.alpha <= 0.0 {
        return Err(Error::invalid("α = 0: rates grow monotonically in k, no turnback"));
    }
    let l = params.sites as f64;
    Ok((3.0 * l - 1.0) / 4.0 + 3.0 * (l - 1.0) * params.beta / (4.0 * l * params.alpha))
}

/// Integer order with the largest predicted rate (ties resolved to the smaller k).
pub fn argmax_order(params: &HierarchyParams) -> usize {
    (0..=params.sites)
        .map(|k| (k, rate_at(k as f64, params)))
        .fold((0, f64::NEG_INFINITY), |best, (k, r)| if r > best.1 + 1e-12 { (k, r) } else { best })
        .0
}

/// Mean diagonal (negative) over all order-`k` strings on `topo`.
pub fn order_center(k: usize, topo: &Topology, d1: f64, d2: f64) -> Result<f64> {
    let l = topo.sites();
    if k > l {
        return Err(Error::invalid(format!("order {k} exceeds ℓ = {l}")));
    }
    let (lf, kf) = (l as f64, k as f64);
    let pair = if l > 1 {
        topo.edges().len() as f64 * 4.0 * (3.0 * kf * lf - 2.0 * kf * kf - kf) / (lf * (lf - 1.0))
    } else {
        0.0
    };
    Ok(-2.0 * (d1 * 2.0 * kf + d2 * pair))
}

/// Subcluster center `−2[d1·2k + d2·(6(2k − e − 2p) + 4p)]` on a chain.
pub fn subcluster_center(f: &StringFeatures, topo: &Topology, d1: f64, d2: f64) -> Result<f64> {
    if !topo.is_chain_like() {
        return Err(Error::invalid(format!("subcluster centers need a chain, got {topo}")));
    }
    let (k, p, e) = (f.order, f.adjacent_pairs, f.edge_nonidentities);
    let l = topo.sites();
    let edge_sites = topo.edge_sites().len();
    if k > l || e > edge_sites.min(k) || p + 1 > k.max(1) || 2 * k < e + 2 * p {
        return Err(Error::invalid(format!("features (k={k}, p={p}, e={e}) impossible on {topo}")));
    }
    let one = (2 * k - e - 2 * p) as f64;
    Ok(-2.0 * (d1 * 2.0 * k as f64 + d2 * (6.0 * one + 4.0 * p as f64)))
}

/// Mean channel weights `(d1, d2)` over one-body and pair channels of `set`.
pub fn channel_weights(set: &LindbladSet, k: &KossakowskiMatrix) -> Result<(f64, f64)> {
    check_len(set.count(), k.dim())?;
    let split = set.one_body_count();
    let d1 = k.mean_diagonal_over(0..split);
    let d2 = if set.count() > split { k.mean_diagonal_over(split..set.count()) } else { 0.0 };
    Ok((d1, d2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterEntry {
    pub count: usize,
    /// Mean zeroth-order diagonal of the class members.
    pub center: f64,
}

/// Exhaustive `(k, p, e)` classification of all `4^ℓ` strings with class
/// centers for channel weights `d1`, `d2`.
pub fn cluster_table_with(topo: &Topology, d1: f64, d2: f64) -> Result<BTreeMap<StringFeatures, ClusterEntry>> {
    let mut acc: BTreeMap<StringFeatures, (usize, f64)> = BTreeMap::new();
    for s in enumerate_strings(topo.sites(), None)? {
        let f = classify_string(&s, topo)?;
        let c = string_center(&s, topo, d1, d2)?;
        let e = acc.entry(f).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += c;
    }
    Ok(acc.into_iter().map(|(f, (n, s))| (f, ClusterEntry { count: n, center: s / n as f64 })).collect())
}

/// [`cluster_table_with`] in units of `d` (`d1 = d2 = 1`).
pub fn cluster_table(l: usize, topo: &Topology) -> Result<BTreeMap<StringFeatures, ClusterEntry>> {
    if topo.sites() != l {
        return Err(Error::invalid(format!("ℓ = {l} but topology has {} sites", topo.sites())));
    }
    cluster_table_with(topo, 1.0, 1.0)
}
