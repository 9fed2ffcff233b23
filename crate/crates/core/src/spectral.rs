//! Exact diagonalization of the adjoint Liouvillian and propagation of
//! observables.
//!
//! For a product state `ρ₀` and a Pauli observable `σ_x`,
//!
//! ```text
//! Tr(ρ₀ σ_x(t)) = Σ_y w_y (e^{𝖫t})_{yx} = Σ_n e^{λ_n t} (wᵀV)_n (V⁻¹)_{nx}
//! ```
//!
//! with `w_y = Tr(ρ₀ σ_y)`, which factorizes over sites.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use rand::Rng as _;

use crate::error::{check_len, Error, Result};
use crate::hinv::TimeTrace;
use crate::liouvillian::{AdjointGenerator, LiouvillianMatrix};
use crate::pauli::{Pauli, PauliString, MAX_SITES};
use crate::rng;
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Residual tolerance for eigenpairs, relative to `‖𝖫‖_F`.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Right eigendecomposition of a dense Liouvillian.
#[derive(Debug, Clone)]
pub struct Spectrum {
    sites: usize,
    eigenvalues: Vec<C64>,
    /// Unit-norm eigenvectors as columns.
    vectors: Mat<C64>,
    orders: Vec<f64>,
    dominant: Vec<usize>,
    /// Fraction of each eigenvector's weight on order-k strings.
    profiles: Vec<Vec<f64>>,
    max_residual: f64,
}

impl Spectrum {
    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[C64] {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> &Mat<C64> {
        &self.vectors
    }

    pub fn vector(&self, n: usize) -> Vec<C64> {
        self.vectors.col(n).iter().copied().collect()
    }

    /// Average operator order of each eigenvector.
    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    /// Order carrying the largest weight in each eigenvector.
    pub fn dominant_orders(&self) -> &[usize] {
        &self.dominant
    }

    /// Weight fraction of eigenvector `n` on each order `0..=ℓ`.
    pub fn order_profile(&self, n: usize) -> &[f64] {
        &self.profiles[n]
    }

    /// Largest `‖𝖫v − λv‖ / ‖𝖫‖_F` over all pairs.
    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    pub fn max_real(&self) -> f64 {
        self.eigenvalues.iter().fold(f64::NEG_INFINITY, |m, l| m.max(l.re))
    }

    /// Largest distance from a complex eigenvalue's conjugate to its nearest partner.
    pub fn conjugation_defect(&self, imag_tol: f64) -> f64 {
        let mut worst = 0.0f64;
        for l in &self.eigenvalues {
            if l.im.abs() <= imag_tol {
                continue;
            }
            let target = l.conj();
            let d = self.eigenvalues.iter().map(|m| (m - target).norm()).fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
        worst
    }

    /// Mean `−Re λ` per dominant eigenvector order, `k = 0` excluded.
    pub fn cluster_means(&self) -> BTreeMap<usize, OrderCluster> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (l, &k) in self.eigenvalues.iter().zip(&self.dominant) {
            if k == 0 {
                continue;
            }
            let e = acc.entry(k).or_insert((0.0, 0));
            e.0 += -l.re;
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, OrderCluster { mean_rate: s / n as f64, count: n })).collect()
    }

    /// Mean `−Re λ` per order with every eigenvalue weighted by its eigenvector's
    /// weight on that order. `count` is the rounded total weight.
    ///
    /// Unlike [`Spectrum::cluster_means`] this does not pull strongly mixed
    /// eigenvectors into the largest sector.
    pub fn weighted_cluster_means(&self) -> BTreeMap<usize, OrderCluster> {
        let mut acc = vec![(0.0, 0.0); self.sites + 1];
        for (l, prof) in self.eigenvalues.iter().zip(&self.profiles) {
            for (a, w) in acc.iter_mut().zip(prof) {
                a.0 += -l.re * w;
                a.1 += w;
            }
        }
        acc.into_iter()
            .enumerate()
            .skip(1)
            .filter(|(_, (_, w))| *w > 0.0)
            .map(|(k, (s, w))| (k, OrderCluster { mean_rate: s / w, count: w.round() as usize }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderCluster {
    pub mean_rate: f64,
    pub count: usize,
}

fn string_orders(sites: usize) -> Vec<usize> {
    (0..1usize << (2 * sites))
        .map(|i| PauliString::from_index(sites, i).expect("index in range").order())
        .collect()
}

/// `Σ_x k(x)|v_x|² / Σ_x |v_x|²` for a Pauli-coefficient vector.
pub fn average_operator_order(v: &[C64]) -> Result<f64> {
    let sites = sites_for_dim(v.len())?;
    let orders = string_orders(sites);
    let (num, den) = v
        .iter()
        .zip(&orders)
        .fold((0.0, 0.0), |(a, b), (c, &k)| (a + k as f64 * c.norm_sqr(), b + c.norm_sqr()));
    if den == 0.0 {
        return Err(Error::invalid("average order of the zero vector"));
    }
    Ok(num / den)
}

fn sites_for_dim(dim: usize) -> Result<usize> {
    (1..=MAX_SITES)
        .find(|&l| 1usize << (2 * l) == dim)
        .ok_or_else(|| Error::invalid(format!("vector length {dim} is not 4^ℓ")))
}

fn order_profile(v: impl Iterator<Item = C64>, orders: &[usize], sites: usize) -> (f64, usize, Vec<f64>) {
    let mut by_k = vec![0.0; sites + 1];
    for (c, &k) in v.zip(orders) {
        by_k[k] += c.norm_sqr();
    }
    let total: f64 = by_k.iter().sum();
    if total > 0.0 {
        by_k.iter_mut().for_each(|w| *w /= total);
    }
    let avg = by_k.iter().enumerate().map(|(k, w)| k as f64 * w).sum::<f64>();
    let dom = by_k.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k).unwrap_or(0);
    (avg, dom, by_k)
}

/// Full non-Hermitian eigendecomposition, sorted by `Re λ` descending then `Im λ`.
pub fn eigendecompose(l: &LiouvillianMatrix) -> Result<Spectrum> {
    let a = l.matrix();
    let norm = a.norm_l2();
    let eig = a.eigen().map_err(|e| {
        Error::numerical(format!(
            "eigensolver did not converge ({e:?}); ‖𝖫‖_F = {norm:.3e}, max |entry| = {:.3e}",
            a.norm_max()
        ))
    })?;
    let n = a.nrows();
    let s = eig.S();
    let u = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].re.total_cmp(&s[i].re).then(s[i].im.total_cmp(&s[j].im)));
    let eigenvalues: Vec<C64> = order.iter().map(|&i| s[i]).collect();
    let mut vectors = Mat::<C64>::from_fn(n, n, |r, c| u[(r, order[c])]);
    for c in 0..n {
        let nrm = vectors.col(c).norm_l2();
        if nrm > 0.0 {
            for r in 0..n {
                vectors[(r, c)] /= nrm;
            }
        }
    }
    let av = a * &vectors;
    let mut max_residual = 0.0f64;
    for c in 0..n {
        let lam = eigenvalues[c];
        let r: f64 = (0..n).map(|i| (av[(i, c)] - lam * vectors[(i, c)]).norm_sqr()).sum::<f64>().sqrt();
        max_residual = max_residual.max(r / norm.max(f64::MIN_POSITIVE));
    }
    if max_residual > RESIDUAL_TOL {
        return Err(Error::numerical(format!(
            "eigenpair residual {max_residual:.3e} exceeds {RESIDUAL_TOL:e} (‖𝖫‖_F = {norm:.3e})"
        )));
    }
    let sites = l.sites();
    let orders_of = string_orders(sites);
    let mut orders = Vec::with_capacity(n);
    let mut dominant = Vec::with_capacity(n);
    let mut profiles = Vec::with_capacity(n);
    for c in 0..n {
        let (avg, dom, prof) = order_profile(vectors.col(c).iter().copied(), &orders_of, sites);
        orders.push(avg);
        dominant.push(dom);
        profiles.push(prof);
    }
    Ok(Spectrum { sites, eigenvalues, vectors, orders, dominant, profiles, max_residual })
}

/// Product state: each site an eigenstate of X, Y or Z with eigenvalue `(−1)^σ`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProductState {
    sites: Vec<(Pauli, bool)>,
}

impl ProductState {
    pub fn new(sites: Vec<(Pauli, bool)>) -> Result<Self> {
        if sites.is_empty() || sites.len() > MAX_SITES {
            return Err(Error::invalid(format!("product state needs 1..={MAX_SITES} sites")));
        }
        if sites.iter().any(|(p, _)| *p == Pauli::I) {
            return Err(Error::invalid("site basis must be x, y or z"));
        }
        Ok(ProductState { sites })
    }

    /// `|0…0⟩`.
    pub fn all_zero(len: usize) -> Result<Self> {
        Self::new(vec![(Pauli::Z, false); len])
    }

    /// Independent uniform basis and sign per site.
    pub fn random(len: usize, rng: &mut rng::Rng) -> Result<Self> {
        let sites = (0..len).map(|_| (Pauli::NON_IDENTITY[rng.gen_range(0..3)], rng.gen::<bool>())).collect();
        Self::new(sites)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[(Pauli, bool)] {
        &self.sites
    }

    /// `Tr(ρ₀ σ)` for an unnormalized Pauli string.
    pub fn expectation(&self, s: &PauliString) -> Result<f64> {
        check_len(self.len(), s.len())?;
        let mut v = 1.0;
        for (i, &(basis, flip)) in self.sites.iter().enumerate() {
            match s.get(i) {
                Pauli::I => {}
                p if p == basis => {
                    if flip {
                        v = -v;
                    }
                }
                _ => return Ok(0.0),
            }
        }
        Ok(v)
    }

    /// `w_y = Tr(ρ₀ σ_y)` for every basis string, canonical order.
    pub fn weights(&self) -> Vec<f64> {
        let len = self.len();
        (0..1usize << (2 * len))
            .map(|i| self.expectation(&PauliString::from_index(len, i).expect("index in range")).expect("same length"))
            .collect()
    }
}

impl fmt::Display for ProductState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (p, flip) in &self.sites {
            write!(f, "{}{}", p.as_char().to_ascii_lowercase(), u8::from(*flip))?;
        }
        Ok(())
    }
}

impl FromStr for ProductState {
    type Err = Error;

    /// `"x0y1z0"`; separators (space, comma, `|`) are ignored.
    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().filter(|c| !matches!(c, ' ' | ',' | '|' | '_')).collect();
        if chars.is_empty() || chars.len() % 2 != 0 {
            return Err(Error::parse(format!("bad product-state spec {s:?}")));
        }
        let mut sites = Vec::with_capacity(chars.len() / 2);
        for pair in chars.chunks(2) {
            let basis = match pair[0].to_ascii_lowercase() {
                'x' => Pauli::X,
                'y' => Pauli::Y,
                'z' => Pauli::Z,
                _ => return Err(Error::parse(format!("bad basis {:?} in {s:?}", pair[0]))),
            };
            let flip = match pair[1] {
                '0' => false,
                '1' => true,
                _ => return Err(Error::parse(format!("bad quantum number {:?} in {s:?}", pair[1]))),
            };
            sites.push((basis, flip));
        }
        ProductState::new(sites)
    }
}

/// Dense propagator built from an eigendecomposition.
#[derive(Debug, Clone)]
pub struct DensePropagator {
    sites: usize,
    eigenvalues: Vec<C64>,
    v: Mat<C64>,
    vinv: Mat<C64>,
}

impl DensePropagator {
    pub fn new(spectrum: &Spectrum) -> Result<Self> {
        let v = spectrum.vectors().clone();
        let vinv = v.partial_piv_lu().inverse();
        let n = v.nrows();
        let check = &vinv * &v;
        let mut defect = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((check[(i, j)] - C64::new(target, 0.0)).norm());
            }
        }
        if !defect.is_finite() || defect > 1e-6 {
            return Err(Error::numerical(format!("eigenvector matrix is ill-conditioned (‖V⁻¹V − I‖ = {defect:.2e})")));
        }
        Ok(DensePropagator { sites: spectrum.sites(), eigenvalues: spectrum.eigenvalues().to_vec(), v, vinv })
    }

    pub fn from_matrix(l: &LiouvillianMatrix) -> Result<Self> {
        Self::new(&eigendecompose(l)?)
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn eigenvalues(&self) -> &[C64] {
        &self.eigenvalues
    }

    /// `(wᵀV)_n` for a state; reuse across observables.
    pub fn state_row(&self, state: &ProductState) -> Result<Vec<C64>> {
        check_len(self.sites, state.len())?;
        let w = state.weights();
        let n = w.len();
        Ok((0..n)
            .map(|col| {
                let mut acc = ZERO;
                for (row, &wy) in w.iter().enumerate() {
                    if wy != 0.0 {
                        acc += self.v[(row, col)] * wy;
                    }
                }
                acc
            })
            .collect())
    }

    /// Mode decomposition `c_n` of `Tr(ρ₀ σ_x(t)) = Σ_n c_n e^{λ_n t}` given a state row.
    pub fn amplitudes_from_row(&self, row: &[C64], obs: &PauliString) -> Result<Vec<C64>> {
        check_len(self.sites, obs.len())?;
        check_len(self.eigenvalues.len(), row.len())?;
        let x = obs.index();
        Ok(row.iter().enumerate().map(|(n, r)| r * self.vinv[(n, x)]).collect())
    }

    pub fn amplitudes(&self, obs: &PauliString, state: &ProductState) -> Result<Vec<C64>> {
        self.amplitudes_from_row(&self.state_row(state)?, obs)
    }

    /// Sampled trace at times `(t0 + n)·dt`.
    pub fn trace(&self, obs: &PauliString, state: &ProductState, t0: i64, dt: f64, len: usize) -> Result<TimeTrace> {
        let row = self.state_row(state)?;
        self.trace_from_row(&row, obs, t0, dt, len)
    }

    pub fn trace_from_row(&self, row: &[C64], obs: &PauliString, t0: i64, dt: f64, len: usize) -> Result<TimeTrace> {
        let c = self.amplitudes_from_row(row, obs)?;
        let mut values = vec![ZERO; len];
        for (lam, cn) in self.eigenvalues.iter().zip(&c) {
            if *cn == ZERO {
                continue;
            }
            let step = (lam * dt).exp();
            let mut z = cn * (lam * (t0 as f64 * dt)).exp();
            for v in values.iter_mut() {
                *v += z;
                z *= step;
            }
        }
        TimeTrace::new(values, t0, dt)
    }
}

/// Matrix-free propagator: scaled Taylor series of `e^{𝖫h}` using the
/// generator's 1-norm bound to pick the substep.
#[derive(Debug, Clone)]
pub struct TaylorPropagator {
    generator: AdjointGenerator,
    tol: f64,
}

impl TaylorPropagator {
    pub fn new(generator: AdjointGenerator) -> Self {
        TaylorPropagator { generator, tol: 1e-15 }
    }

    pub fn generator(&self) -> &AdjointGenerator {
        &self.generator
    }

    /// `e^{𝖫h} a`.
    pub fn step(&self, a: &[C64], h: f64) -> Result<Vec<C64>> {
        if h == 0.0 {
            return Ok(a.to_vec());
        }
        let bound = self.generator.norm_bound();
        let substeps = ((h.abs() * bound).ceil() as usize).max(1);
        let hs = h / substeps as f64;
        let mut cur = a.to_vec();
        for _ in 0..substeps {
            let mut term = cur.clone();
            let mut sum = cur.clone();
            let mut converged = false;
            for j in 1..=60 {
                term = self.generator.apply(&term)?;
                let f = hs / j as f64;
                term.iter_mut().for_each(|t| *t *= f);
                let tn: f64 = term.iter().map(|t| t.norm()).sum();
                for (s, t) in sum.iter_mut().zip(&term) {
                    *s += t;
                }
                let sn: f64 = sum.iter().map(|t| t.norm()).sum();
                if tn <= self.tol * sn.max(f64::MIN_POSITIVE) || tn == 0.0 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::numerical("Taylor series did not reach tolerance"));
            }
            cur = sum;
        }
        Ok(cur)
    }

    pub fn trace(&self, obs: &PauliString, state: &ProductState, t0: i64, dt: f64, len: usize) -> Result<TimeTrace> {
        let sites = self.generator.sites();
        check_len(sites, obs.len())?;
        check_len(sites, state.len())?;
        if t0 < 0 {
            return Err(Error::invalid("times must be nonnegative"));
        }
        let w = state.weights();
        let mut a = vec![ZERO; self.generator.dim()];
        a[obs.index()] = C64::new(1.0, 0.0);
        a = self.step(&a, t0 as f64 * dt)?;
        let mut values = Vec::with_capacity(len);
        for n in 0..len {
            values.push(w.iter().zip(&a).map(|(&wy, ay)| ay * wy).sum());
            if n + 1 < len {
                a = self.step(&a, dt)?;
            }
        }
        TimeTrace::new(values, t0, dt)
    }
}

/// Either propagation path.
#[derive(Debug, Clone)]
pub enum Propagator {
    Dense(DensePropagator),
    MatrixFree(TaylorPropagator),
}

/// Ground-truth `Tr(ρ₀ O(t))` sampled at `(t0 + n)·dt`.
pub fn propagate_observable(
    prop: &Propagator,
    obs: &PauliString,
    state: &ProductState,
    t0: i64,
    dt: f64,
    len: usize,
) -> Result<TimeTrace> {
    if t0 < 0 || !(dt > 0.0) {
        return Err(Error::invalid("time grid must start at t0 ≥ 0 with dt > 0"));
    }
    let mut tr = match prop {
        Propagator::Dense(d) => d.trace(obs, state, t0, dt, len)?,
        Propagator::MatrixFree(m) => m.trace(obs, state, t0, dt, len)?,
    };
    tr.meta.observable = obs.to_string();
    tr.meta.state = state.to_string();
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouvillian::{build_adjoint_superoperator, KossakowskiMatrix, LindbladSet, SpectrumSpec};
    use crate::topology::Topology;

    fn one_body_identity(l: usize) -> (LindbladSet, KossakowskiMatrix, f64) {
        let set = LindbladSet::one_body(l).unwrap();
        let k = KossakowskiMatrix::scaled_identity(3 * l, l);
        let d = (1usize << l) as f64 / (3 * l) as f64;
        (set, k, d)
    }

    #[test]
    fn diagonal_spectrum_levels() {
        let (set, k, d) = one_body_identity(2);
        let spec = eigendecompose(&build_adjoint_superoperator(&set, &k).unwrap()).unwrap();
        let ev = spec.eigenvalues();
        assert_eq!(ev.len(), 16);
        let count = |target: f64| ev.iter().filter(|l| (l.re - target).abs() < 1e-10 && l.im.abs() < 1e-10).count();
        assert_eq!(count(0.0), 1);
        assert_eq!(count(-4.0 * d), 6);
        assert_eq!(count(-8.0 * d), 9);
        assert!(spec.max_real().abs() < 1e-12);
        assert!(spec.max_residual() < RESIDUAL_TOL);
        // sorted by Re λ descending
        assert!(ev.windows(2).all(|w| w[0].re >= w[1].re - 1e-15));
    }

    #[test]
    fn cluster_means_on_diagonal_model() {
        let (set, k, d) = one_body_identity(3);
        let spec = eigendecompose(&build_adjoint_superoperator(&set, &k).unwrap()).unwrap();
        for means in [spec.cluster_means(), spec.weighted_cluster_means()] {
            let sizes: Vec<usize> = means.values().map(|c| c.count).collect();
            assert_eq!(sizes, vec![9, 27, 27]);
            for (k, c) in means {
                assert!((c.mean_rate - 4.0 * d * k as f64).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn weighted_means_conserve_total_rate() {
        let set = LindbladSet::two_body(&Topology::chain(3).unwrap()).unwrap();
        let k = KossakowskiMatrix::sample(set.count(), 3, 4, &SpectrumSpec::default()).unwrap();
        let l = build_adjoint_superoperator(&set, &k).unwrap();
        let spec = eigendecompose(&l).unwrap();
        let trace: f64 = (0..64).map(|i| -l.get(i, i).re).sum();
        let profile0: f64 = (0..64).map(|n| -spec.eigenvalues()[n].re * spec.order_profile(n)[0]).sum();
        let total: f64 = spec
            .weighted_cluster_means()
            .values()
            .zip(1..)
            .map(|(c, k)| {
                let w: f64 = (0..64).map(|n| spec.order_profile(n)[k]).sum();
                c.mean_rate * w
            })
            .sum();
        assert!((total + profile0 - trace).abs() < 1e-8 * trace);
    }

    #[test]
    fn random_k_is_dissipative_and_conjugation_symmetric() {
        let topo = Topology::chain(3).unwrap();
        let set = LindbladSet::two_body(&topo).unwrap();
        let k = KossakowskiMatrix::sample(set.count(), 3, 2, &SpectrumSpec::default()).unwrap();
        let spec = eigendecompose(&build_adjoint_superoperator(&set, &k).unwrap()).unwrap();
        assert!(spec.max_real() <= 1e-10);
        assert!(spec.max_real() > -1e-10);
        assert!(spec.conjugation_defect(1e-10) < 1e-8);
    }

    #[test]
    fn average_order_examples() {
        let mut v = vec![ZERO; 64];
        v["XIZ".parse::<PauliString>().unwrap().index()] = C64::new(1.0, 0.0);
        assert_eq!(average_operator_order(&v).unwrap(), 2.0);
        let mut v = vec![ZERO; 64];
        v["XII".parse::<PauliString>().unwrap().index()] = C64::new(1.0, 0.0);
        v["XYZ".parse::<PauliString>().unwrap().index()] = C64::new(0.0, 1.0);
        assert_eq!(average_operator_order(&v).unwrap(), 2.0);
        let mut v = vec![ZERO; 64];
        v[0] = C64::new(3.0, 0.0);
        assert_eq!(average_operator_order(&v).unwrap(), 0.0);
        assert!(average_operator_order(&vec![ZERO; 64]).is_err());
        assert!(average_operator_order(&[ZERO; 5]).is_err());
    }

    #[test]
    fn product_state_text_and_weights() {
        let s: ProductState = "x0 y1 z0".parse().unwrap();
        assert_eq!(s.to_string(), "x0y1z0");
        assert_eq!(s.expectation(&"XII".parse().unwrap()).unwrap(), 1.0);
        assert_eq!(s.expectation(&"IYI".parse().unwrap()).unwrap(), -1.0);
        assert_eq!(s.expectation(&"XYZ".parse().unwrap()).unwrap(), -1.0);
        assert_eq!(s.expectation(&"ZII".parse().unwrap()).unwrap(), 0.0);
        assert_eq!(s.expectation(&"III".parse().unwrap()).unwrap(), 1.0);
        let w = s.weights();
        assert_eq!(w.iter().filter(|&&x| x != 0.0).count(), 8);
        assert!("x2".parse::<ProductState>().is_err());
        assert!("w0".parse::<ProductState>().is_err());
        assert!("x".parse::<ProductState>().is_err());
    }

    #[test]
    fn diagonal_model_traces_are_single_exponentials() {
        let (set, k, d) = one_body_identity(3);
        let l = build_adjoint_superoperator(&set, &k).unwrap();
        let dense = Propagator::Dense(DensePropagator::from_matrix(&l).unwrap());
        let mf = Propagator::MatrixFree(TaylorPropagator::new(AdjointGenerator::new(&set, &k).unwrap()));
        let state: ProductState = "x1z0z1".parse().unwrap();
        let obs: PauliString = "XZI".parse().unwrap();
        let dt = 0.05;
        for p in [&dense, &mf] {
            let tr = propagate_observable(p, &obs, &state, 0, dt, 12).unwrap();
            for (n, v) in tr.values.iter().enumerate() {
                let expect = -(-8.0 * d * n as f64 * dt).exp();
                assert!((v - C64::new(expect, 0.0)).norm() < 1e-10, "{n}: {v} vs {expect}");
            }
            let id = propagate_observable(p, &PauliString::identity(3).unwrap(), &state, 0, dt, 5).unwrap();
            assert!(id.values.iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-12));
        }
    }

    #[test]
    fn state_length_checked() {
        let (set, k, _) = one_body_identity(2);
        let prop = DensePropagator::from_matrix(&build_adjoint_superoperator(&set, &k).unwrap()).unwrap();
        let state = ProductState::all_zero(3).unwrap();
        assert!(prop.trace(&"ZZ".parse().unwrap(), &state, 0, 1.0, 4).is_err());
    }
}
