//! Pauli strings on up to [`MAX_SITES`] qubits.
//!
//! A string is stored in symplectic form: two bit masks `x` and `z`, with bit
//! `i` describing site `i + 1`. Site Paulis are `I = (0,0)`, `X = (1,0)`,
//! `Y = (1,1)`, `Z = (0,1)`, i.e. `Y = i X Z`. Products and commutation are
//! therefore a handful of bit operations.
//!
//! The canonical index of a string is its base-4 reading with site 1 as the
//! most significant digit and digit order `I < X < Y < Z`. This index is the
//! row/column label of every Pauli-basis vector and superoperator in the crate.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::topology::Topology;
use crate::C64;

pub const MAX_SITES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
    pub const NON_IDENTITY: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    fn from_bits(x: bool, z: bool) -> Pauli {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    pub fn digit(self) -> usize {
        self as usize
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn from_char(c: char) -> Option<Pauli> {
        match c.to_ascii_uppercase() {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    /// 2x2 matrix, row-major.
    pub fn matrix(self) -> [C64; 4] {
        let o = C64::new(0.0, 0.0);
        let l = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => [l, o, o, l],
            Pauli::X => [o, l, l, o],
            Pauli::Y => [o, -i, i, o],
            Pauli::Z => [l, o, o, -l],
        }
    }
}

/// A power of `i`: one of `1, i, -1, -i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Phase(u8);

impl Phase {
    pub const ONE: Phase = Phase(0);
    pub const I: Phase = Phase(1);
    pub const MINUS_ONE: Phase = Phase(2);
    pub const MINUS_I: Phase = Phase(3);

    pub fn from_exponent(e: u32) -> Phase {
        Phase((e % 4) as u8)
    }

    pub fn exponent(self) -> u8 {
        self.0
    }

    pub fn inverse(self) -> Phase {
        Phase((4 - self.0) % 4)
    }

    pub fn to_complex(self) -> C64 {
        match self.0 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        }
    }
}

impl std::ops::Mul for Phase {
    type Output = Phase;
    fn mul(self, rhs: Phase) -> Phase {
        Phase((self.0 + rhs.0) % 4)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PauliString {
    len: u8,
    x: u16,
    z: u16,
}

fn check_sites(len: usize) -> Result<()> {
    if (1..=MAX_SITES).contains(&len) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "string length {len} outside supported range 1..={MAX_SITES}"
        )))
    }
}

impl PauliString {
    pub fn identity(len: usize) -> Result<Self> {
        check_sites(len)?;
        Ok(PauliString { len: len as u8, x: 0, z: 0 })
    }

    pub fn from_paulis(paulis: &[Pauli]) -> Result<Self> {
        check_sites(paulis.len())?;
        let (mut x, mut z) = (0u16, 0u16);
        for (i, p) in paulis.iter().enumerate() {
            let (bx, bz) = p.bits();
            x |= (bx as u16) << i;
            z |= (bz as u16) << i;
        }
        Ok(PauliString { len: paulis.len() as u8, x, z })
    }

    /// Build from symplectic masks (bit `i` is site `i + 1`).
    pub fn from_masks(len: usize, x: u16, z: u16) -> Result<Self> {
        check_sites(len)?;
        let full = Self::full_mask(len);
        if x & !full != 0 || z & !full != 0 {
            return Err(Error::invalid("mask has bits beyond string length"));
        }
        Ok(PauliString { len: len as u8, x, z })
    }

    /// Single non-identity Pauli `p` on 0-based `site`.
    pub fn single(len: usize, site: usize, p: Pauli) -> Result<Self> {
        let mut v = vec![Pauli::I; len];
        if site >= len {
            return Err(Error::invalid(format!("site {site} out of range")));
        }
        v[site] = p;
        Self::from_paulis(&v)
    }

    pub fn from_index(len: usize, index: usize) -> Result<Self> {
        check_sites(len)?;
        if index >= 1usize << (2 * len) {
            return Err(Error::invalid(format!("index {index} out of range for length {len}")));
        }
        let (mut x, mut z) = (0u16, 0u16);
        for site in 0..len {
            let digit = (index >> (2 * (len - 1 - site))) & 3;
            let (bx, bz) = Pauli::ALL[digit].bits();
            x |= (bx as u16) << site;
            z |= (bz as u16) << site;
        }
        Ok(PauliString { len: len as u8, x, z })
    }

    pub fn index(&self) -> usize {
        let len = self.len();
        (0..len).fold(0usize, |acc, site| (acc << 2) | self.get(site).digit())
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.len as usize
    }

    /// Hilbert-space dimension `2^len`.
    pub fn dim(&self) -> usize {
        1 << self.len
    }

    pub fn x_mask(&self) -> u16 {
        self.x
    }

    pub fn z_mask(&self) -> u16 {
        self.z
    }

    /// Mask of sites carrying a non-identity Pauli.
    pub fn support(&self) -> u16 {
        self.x | self.z
    }

    /// Number of non-identity sites (operator order `k`).
    pub fn order(&self) -> usize {
        self.support().count_ones() as usize
    }

    pub fn is_identity(&self) -> bool {
        self.support() == 0
    }

    /// Pauli on 0-based `site`.
    pub fn get(&self, site: usize) -> Pauli {
        Pauli::from_bits((self.x >> site) & 1 == 1, (self.z >> site) & 1 == 1)
    }

    pub fn paulis(&self) -> Vec<Pauli> {
        (0..self.len()).map(|s| self.get(s)).collect()
    }

    fn full_mask(len: usize) -> u16 {
        ((1u32 << len) - 1) as u16
    }

    fn check_same_len(&self, other: &PauliString) -> Result<()> {
        crate::error::check_len(self.len(), other.len())
    }

    /// Symplectic product parity: `true` iff the strings commute.
    pub fn commutes(&self, other: &PauliString) -> Result<bool> {
        self.check_same_len(other)?;
        Ok(self.commutes_unchecked(other))
    }

    #[inline]
    pub(crate) fn commutes_unchecked(&self, other: &PauliString) -> bool {
        ((self.x & other.z) ^ (self.z & other.x)).count_ones() % 2 == 0
    }

    /// `self * other = phase * product`.
    pub fn multiply(&self, other: &PauliString) -> Result<(Phase, PauliString)> {
        self.check_same_len(other)?;
        Ok(self.multiply_unchecked(other))
    }

    #[inline]
    pub(crate) fn multiply_unchecked(&self, other: &PauliString) -> (Phase, PauliString) {
        let x = self.x ^ other.x;
        let z = self.z ^ other.z;
        // each factor is i^{x z} X^x Z^z; moving Z^{z1} past X^{x2} costs (-1)^{z1 x2}
        let e = (self.x & self.z).count_ones() + (other.x & other.z).count_ones()
            + 2 * (self.z & other.x).count_ones()
            + 4 * 8
            - (x & z).count_ones();
        (Phase::from_exponent(e), PauliString { len: self.len, x, z })
    }

    /// Unnormalized dense matrix `σ_{x1} ⊗ … ⊗ σ_{xℓ}`, row-major, site 1 as
    /// the most significant tensor factor. Built by explicit Kronecker products.
    pub fn to_dense(&self) -> Vec<C64> {
        let mut out = vec![C64::new(1.0, 0.0)];
        let mut dim = 1usize;
        for site in 0..self.len() {
            let m = self.get(site).matrix();
            let nd = dim * 2;
            let mut next = vec![C64::new(0.0, 0.0); nd * nd];
            for r in 0..dim {
                for c in 0..dim {
                    let a = out[r * dim + c];
                    if a == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for i in 0..2 {
                        for j in 0..2 {
                            next[(2 * r + i) * nd + 2 * c + j] = a * m[2 * i + j];
                        }
                    }
                }
            }
            out = next;
            dim = nd;
        }
        out
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in 0..self.len() {
            write!(f, "{}", self.get(s).as_char())?;
        }
        Ok(())
    }
}

impl fmt::Debug for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PauliString({self})")
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let paulis = s
            .trim()
            .chars()
            .map(|c| Pauli::from_char(c).ok_or_else(|| Error::parse(format!("bad Pauli symbol {c:?} in {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        PauliString::from_paulis(&paulis)
    }
}

impl PartialOrd for PauliString {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PauliString {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.len, self.index()).cmp(&(other.len, other.index()))
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// All strings of length `len` (or of exact order `order`), in canonical index order.
pub fn enumerate_strings(len: usize, order: Option<usize>) -> Result<Vec<PauliString>> {
    check_sites(len)?;
    if let Some(k) = order {
        if k > len {
            return Err(Error::invalid(format!("order {k} exceeds length {len}")));
        }
    }
    let total = 1usize << (2 * len);
    let cap = match order {
        Some(k) => binomial(len, k) * 3usize.pow(k as u32),
        None => total,
    };
    let mut out = Vec::with_capacity(cap);
    for idx in 0..total {
        let s = PauliString::from_index(len, idx)?;
        if order.map_or(true, |k| s.order() == k) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Strings built only from `I`, `X`, `Z` (excluding the identity), canonical order.
pub fn enumerate_ixz(len: usize) -> Result<Vec<PauliString>> {
    Ok(enumerate_strings(len, None)?
        .into_iter()
        .filter(|s| !s.is_identity() && (s.x_mask() & s.z_mask()) == 0)
        .collect())
}

/// Structural features of a string relative to a connectivity graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StringFeatures {
    /// Number of non-identity sites `k`.
    pub order: usize,
    /// Edges with non-identities on both endpoints `p`.
    pub adjacent_pairs: usize,
    /// Non-identities sitting on edge sites `e`.
    pub edge_nonidentities: usize,
}

pub fn classify_string(s: &PauliString, topo: &Topology) -> Result<StringFeatures> {
    crate::error::check_len(topo.sites(), s.len())?;
    let support = s.support();
    let on = |site: usize| (support >> site) & 1 == 1;
    let adjacent_pairs = topo.edges().iter().filter(|&&(a, b)| on(a) && on(b)).count();
    let edge_nonidentities = topo.edge_sites().iter().filter(|&&v| on(v)).count();
    Ok(StringFeatures {
        order: s.order(),
        adjacent_pairs,
        edge_nonidentities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn dense_mul(a: &[C64], b: &[C64], n: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let aik = a[i * n + k];
                for j in 0..n {
                    out[i * n + j] += aik * b[k * n + j];
                }
            }
        }
        out
    }

    fn close(a: &[C64], b: &[C64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() < 1e-12)
    }

    #[test]
    fn commutation_examples() {
        assert!(ps("XI").commutes(&ps("XX")).unwrap());
        assert!(!ps("XI").commutes(&ps("YI")).unwrap());
        assert!(ps("XY").commutes(&ps("YX")).unwrap());
        assert!(ps("X").commutes(&ps("XX")).is_err());
    }

    #[test]
    fn xy_yx_commute_by_dense_products() {
        let (a, b) = (ps("XY").to_dense(), ps("YX").to_dense());
        assert!(close(&dense_mul(&a, &b, 4), &dense_mul(&b, &a, 4)));
    }

    #[test]
    fn multiplication_examples() {
        assert_eq!(ps("X").multiply(&ps("Y")).unwrap(), (Phase::I, ps("Z")));
        assert_eq!(ps("ZI").multiply(&ps("ZI")).unwrap(), (Phase::ONE, ps("II")));
        assert_eq!(ps("XY").multiply(&ps("YY")).unwrap(), (Phase::I, ps("ZI")));
        assert!(ps("XY").multiply(&ps("X")).is_err());
    }

    #[test]
    fn xy_times_yy_matches_dense() {
        let prod = dense_mul(&ps("XY").to_dense(), &ps("YY").to_dense(), 4);
        let expect: Vec<C64> = ps("ZI").to_dense().iter().map(|v| v * C64::new(0.0, 1.0)).collect();
        assert!(close(&prod, &expect));
    }

    #[test]
    fn enumeration_counts() {
        let one = enumerate_strings(1, Some(1)).unwrap();
        assert_eq!(one, vec![ps("X"), ps("Y"), ps("Z")]);
        assert_eq!(enumerate_strings(2, None).unwrap().len(), 16);
        assert_eq!(enumerate_strings(5, Some(2)).unwrap().len(), 90);
        assert!(enumerate_strings(9, None).is_err());
        assert!(enumerate_strings(3, Some(4)).is_err());
        assert!(enumerate_strings(0, None).is_err());
    }

    #[test]
    fn order_two_count_matches_exhaustive_scan_at_five_sites() {
        // independent count: walk all base-4 words and count those with exactly two nonzero digits
        let brute = (0..1usize << 10)
            .filter(|&w| (0..5).filter(|i| (w >> (2 * i)) & 3 != 0).count() == 2)
            .count();
        assert_eq!(brute, 90);
        assert_eq!(enumerate_strings(5, Some(2)).unwrap().len(), brute);
    }

    #[test]
    fn canonical_index_order() {
        let all = enumerate_strings(2, None).unwrap();
        let text: Vec<String> = all.iter().map(|s| s.to_string()).collect();
        assert_eq!(&text[..5], &["II", "IX", "IY", "IZ", "XI"]);
        for (i, s) in all.iter().enumerate() {
            assert_eq!(s.index(), i);
        }
    }

    #[test]
    fn classification_examples() {
        let chain = Topology::chain(5).unwrap();
        let f = classify_string(&ps("XIYYI"), &chain).unwrap();
        assert_eq!((f.order, f.adjacent_pairs, f.edge_nonidentities), (3, 1, 1));
        let f = classify_string(&ps("IIIII"), &chain).unwrap();
        assert_eq!((f.order, f.adjacent_pairs, f.edge_nonidentities), (0, 0, 0));
        let f = classify_string(&ps("XXXXX"), &chain).unwrap();
        assert_eq!((f.order, f.adjacent_pairs, f.edge_nonidentities), (5, 4, 2));
        assert!(classify_string(&ps("XX"), &chain).is_err());
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!("XQZ".parse::<PauliString>().is_err());
        assert!("".parse::<PauliString>().is_err());
        assert_eq!(ps("xiz").to_string(), "XIZ");
    }

    #[test]
    fn normalized_strings_have_unit_hilbert_schmidt_norm() {
        for s in enumerate_strings(3, None).unwrap() {
            let m = s.to_dense();
            let n = s.dim();
            let hs: f64 = m.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            assert!((hs - 1.0).abs() < 1e-14);
        }
    }
}
