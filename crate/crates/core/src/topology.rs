//! Qubit connectivity graphs.
//!
//! Sites are 0-based internally and 1-based in every text form
//! (`chain:5`, `complete:4`, `custom:5:1-2,2-3,3-4,4-5`).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pauli::MAX_SITES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Chain,
    Complete,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    kind: TopologyKind,
    sites: usize,
    /// Sorted, each pair `(a, b)` with `a < b`.
    edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Open chain `1-2-…-ℓ`.
    pub fn chain(sites: usize) -> Result<Self> {
        if sites < 2 {
            return Err(Error::invalid(format!("chain needs at least 2 sites, got {sites}")));
        }
        Ok(Topology {
            kind: TopologyKind::Chain,
            sites,
            edges: (0..sites - 1).map(|i| (i, i + 1)).collect(),
        })
    }

    /// All-to-all connectivity.
    pub fn complete(sites: usize) -> Result<Self> {
        if sites < 2 {
            return Err(Error::invalid(format!("complete graph needs at least 2 sites, got {sites}")));
        }
        let mut edges = Vec::with_capacity(sites * (sites - 1) / 2);
        for a in 0..sites {
            for b in a + 1..sites {
                edges.push((a, b));
            }
        }
        Ok(Topology { kind: TopologyKind::Complete, sites, edges })
    }

    /// Arbitrary graph from 1-based edge pairs.
    pub fn custom(sites: usize, edges_one_based: &[(usize, usize)]) -> Result<Self> {
        if sites < 1 {
            return Err(Error::invalid("topology needs at least one site"));
        }
        let mut edges = Vec::with_capacity(edges_one_based.len());
        for &(a, b) in edges_one_based {
            if a == b {
                return Err(Error::invalid(format!("self-loop on site {a}")));
            }
            if a < 1 || b < 1 || a > sites || b > sites {
                return Err(Error::invalid(format!("edge {a}-{b} out of range 1..={sites}")));
            }
            let e = (a.min(b) - 1, a.max(b) - 1);
            if edges.contains(&e) {
                return Err(Error::invalid(format!("duplicate edge {a}-{b}")));
            }
            edges.push(e);
        }
        edges.sort_unstable();
        Ok(Topology { kind: TopologyKind::Custom, sites, edges })
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, site: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == site || b == site).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.sites).map(|s| self.degree(s)).collect()
    }

    /// Sites of minimal degree: the endpoints of a chain. Complete graphs and
    /// regular graphs of degree ≥ 2 (rings) have no edge sites.
    pub fn edge_sites(&self) -> Vec<usize> {
        if self.kind == TopologyKind::Complete || self.edges.is_empty() {
            return Vec::new();
        }
        let deg = self.degrees();
        let min = *deg.iter().min().unwrap_or(&0);
        let max = *deg.iter().max().unwrap_or(&0);
        if min == max && min >= 2 {
            return Vec::new();
        }
        (0..self.sites).filter(|&s| deg[s] == min).collect()
    }

    /// True for simple paths (every open chain, in any labelling).
    pub fn is_chain_like(&self) -> bool {
        if self.edges.len() + 1 != self.sites {
            return false;
        }
        let deg = self.degrees();
        if deg.iter().any(|&d| d > 2 || d == 0) {
            return false;
        }
        // connected tree with max degree 2 is a path
        let mut seen = vec![false; self.sites];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(a, b) in &self.edges {
                let w = if a == v { b } else if b == v { a } else { continue };
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TopologyKind::Chain => write!(f, "chain:{}", self.sites),
            TopologyKind::Complete => write!(f, "complete:{}", self.sites),
            TopologyKind::Custom => {
                write!(f, "custom:{}:", self.sites)?;
                let parts: Vec<String> =
                    self.edges.iter().map(|(a, b)| format!("{}-{}", a + 1, b + 1)).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut parts = s.splitn(3, ':');
        let kind = parts.next().unwrap_or_default();
        let sites: usize = parts
            .next()
            .ok_or_else(|| Error::parse(format!("topology {s:?} lacks a site count")))?
            .trim()
            .parse()
            .map_err(|_| Error::parse(format!("bad site count in topology {s:?}")))?;
        if sites > MAX_SITES {
            return Err(Error::invalid(format!("{sites} sites exceeds the supported {MAX_SITES}")));
        }
        match kind {
            "chain" => Topology::chain(sites),
            "complete" => Topology::complete(sites),
            "custom" => {
                let spec = parts.next().unwrap_or("");
                let mut edges = Vec::new();
                for pair in spec.split(',').filter(|p| !p.trim().is_empty()) {
                    let (a, b) = pair
                        .split_once('-')
                        .ok_or_else(|| Error::parse(format!("bad edge {pair:?}")))?;
                    let a = a.trim().parse().map_err(|_| Error::parse(format!("bad edge {pair:?}")))?;
                    let b = b.trim().parse().map_err(|_| Error::parse(format!("bad edge {pair:?}")))?;
                    edges.push((a, b));
                }
                Topology::custom(sites, &edges)
            }
            other => Err(Error::parse(format!("unknown topology kind {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_edges() {
        assert_eq!(Topology::chain(5).unwrap().edges().len(), 4);
        assert_eq!(Topology::chain(2).unwrap().edges().len(), 1);
        let c7 = Topology::chain(7).unwrap();
        assert_eq!(c7.edges().len(), 6);
        assert_eq!(c7.degree(0), 1);
        assert_eq!(c7.degree(6), 1);
        assert!(Topology::chain(1).is_err());
    }

    #[test]
    fn chain_degree_profile() {
        for l in 3..=8 {
            let deg = Topology::chain(l).unwrap().degrees();
            assert_eq!(deg.iter().filter(|&&d| d == 1).count(), 2);
            assert_eq!(deg.iter().filter(|&&d| d == 2).count(), l - 2);
        }
    }

    #[test]
    fn complete_edges() {
        assert_eq!(Topology::complete(5).unwrap().edges().len(), 10);
        assert_eq!(Topology::complete(2).unwrap().edges().len(), 1);
        assert_eq!(Topology::complete(4).unwrap().edges().len(), 6);
        for l in 2..=8 {
            assert_eq!(Topology::complete(l).unwrap().edges().len(), l * (l - 1) / 2);
        }
        assert!(Topology::complete(1).is_err());
    }

    #[test]
    fn custom_graphs() {
        let c = Topology::custom(3, &[(1, 2), (2, 3)]).unwrap();
        assert_eq!(c.edges(), Topology::chain(3).unwrap().edges());
        assert!(c.is_chain_like());
        let ring = Topology::custom(4, &[(1, 2), (2, 3), (3, 4), (4, 1)]).unwrap();
        assert_eq!(ring.edges().len(), 4);
        assert!(ring.edge_sites().is_empty());
        assert!(!ring.is_chain_like());
        assert!(Topology::custom(2, &[(1, 1)]).is_err());
        assert!(Topology::custom(2, &[(1, 3)]).is_err());
        assert!(Topology::custom(3, &[(1, 2), (2, 1)]).is_err());
    }

    #[test]
    fn edge_sites() {
        assert_eq!(Topology::chain(5).unwrap().edge_sites(), vec![0, 4]);
        assert_eq!(Topology::chain(2).unwrap().edge_sites(), vec![0, 1]);
        assert!(Topology::complete(4).unwrap().edge_sites().is_empty());
        assert!(Topology::complete(2).unwrap().edge_sites().is_empty());
    }

    #[test]
    fn text_forms_round_trip() {
        for s in ["chain:5", "complete:4", "custom:5:1-2,2-3,3-4,4-5", "custom:4:1-2,1-4,2-3,3-4"] {
            let t: Topology = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        let t: Topology = "custom:5:1-2,2-3,3-4,4-5".parse().unwrap();
        assert_eq!(t.edges(), Topology::chain(5).unwrap().edges());
        assert!("ring:4".parse::<Topology>().is_err());
        assert!("chain".parse::<Topology>().is_err());
        assert!("custom:3:1-1".parse::<Topology>().is_err());
    }
}
