//! Directed nomination networks and Katz–Bonacich centrality.
//!
//! A network stores, for every player `i`, the sorted list of players that `i`
//! nominates as friends (`F_i`), in compressed neighbor-list form. Centrality
//! is accumulated as the truncated series
//!
//! ```text
//! S_i = sum_{k >= 1} lambda^k * sum_j (L^k)_{ji}
//! ```
//!
//! i.e. a lambda-discounted count of directed walks that *end* at `i`. The
//! series is evaluated with repeated transpose products `t <- lambda * L' t`,
//! never with dense matrix powers.
//!
//! Note that the literal series counts walks, not distinct individuals, and
//! that a player with no incoming walks has `S_i = 0` regardless of how many
//! friends that player nominates. A player who nominates nobody can still be
//! central if others nominate them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_CENTRALITY_TOL: f64 = 1e-12;
pub const DEFAULT_CENTRALITY_DEPTH: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedNetwork {
    n: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl DirectedNetwork {
    /// Builds a network from `(src, dst)` pairs. Duplicates are dropped;
    /// self-loops and out-of-range indices are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain(
                "network must have at least one player".into(),
            ));
        }
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, &(i, j)) in edges.iter().enumerate() {
            for idx in [i, j] {
                if idx >= n {
                    return Err(Error::OutOfRange {
                        line: k + 1,
                        index: idx,
                        n,
                    });
                }
            }
            if i == j {
                return Err(Error::SelfLoop {
                    line: k + 1,
                    node: i,
                });
            }
            lists[i].push(j);
        }
        Ok(Self::from_friend_lists(lists))
    }

    /// Trusted constructor used by the simulator; lists must be free of
    /// self-loops and in range.
    pub(crate) fn from_friend_lists(mut lists: Vec<Vec<usize>>) -> Self {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for list in lists.iter_mut() {
            list.sort_unstable();
            list.dedup();
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        DirectedNetwork {
            n,
            offsets,
            targets,
        }
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::from_edges(n, &[])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    /// `F_i`, sorted ascending.
    pub fn friends(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Range of edge ids belonging to player `i`; edge ids index per-edge
    /// arrays such as [`RelativeCentrality::values`].
    pub fn edge_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// `Q_i = |F_i|`, the number of nominations made by `i`.
    pub fn friend_count(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn friend_counts(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.friend_count(i)).collect()
    }

    pub fn max_friend_count(&self) -> usize {
        (0..self.n).map(|i| self.friend_count(i)).max().unwrap_or(0)
    }

    /// Checks the bounded-degree condition `max_i Q_i <= cap`.
    pub fn check_friend_cap(&self, cap: usize) -> Result<()> {
        match (0..self.n).find(|&i| self.friend_count(i) > cap) {
            Some(i) => Err(Error::Domain(format!(
                "player {i} nominates {} friends, above the cap of {cap}",
                self.friend_count(i)
            ))),
            None => Ok(()),
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.friends(i).iter().map(move |&j| (i, j)))
    }

    /// `out = L' v`, i.e. `out_i = sum_{j : i in F_j} v_j`.
    pub fn transpose_mul(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            for &i in self.friends(j) {
                out[i] += vj;
            }
        }
    }

    /// Relabels players: node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::Dimension("permutation length differs from n".into()));
        }
        let edges: Vec<_> = self.edges().map(|(i, j)| (perm[i], perm[j])).collect();
        Self::from_edges(self.n, &edges)
    }

    /// Writes the edge list format read by [`load_edge_list`].
    pub fn to_edge_list_string(&self) -> String {
        let mut out = String::with_capacity(self.edge_count() * 8);
        for (i, j) in self.edges() {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }
}

/// Parses the plain-text edge list: one `src dst` pair per line, 0-indexed,
/// `#` starts a comment line, blank lines are ignored.
pub fn parse_edge_list(text: &str, n: usize) -> Result<DirectedNetwork> {
    if n == 0 {
        return Err(Error::Domain(
            "network must have at least one player".into(),
        ));
    }
    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let mut next = |what: &str| -> Result<usize> {
            let tok = fields.next().ok_or_else(|| Error::Parse {
                line,
                message: format!("missing {what} index"),
            })?;
            tok.parse::<usize>().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse {what} index {tok:?}"),
            })
        };
        let src = next("source")?;
        let dst = next("target")?;
        if let Some(extra) = fields.next() {
            return Err(Error::Parse {
                line,
                message: format!("unexpected trailing field {extra:?}"),
            });
        }
        for index in [src, dst] {
            if index >= n {
                return Err(Error::OutOfRange { line, index, n });
            }
        }
        if src == dst {
            return Err(Error::SelfLoop { line, node: src });
        }
        lists[src].push(dst);
    }
    Ok(DirectedNetwork::from_friend_lists(lists))
}

pub fn load_edge_list(path: impl AsRef<Path>, n: usize) -> Result<DirectedNetwork> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityVector {
    pub lambda: f64,
    pub scores: Vec<f64>,
    pub converged: bool,
    /// Number of series terms accumulated.
    pub depth: usize,
}

impl CentralityVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Katz–Bonacich centrality by series accumulation.
///
/// Stops once the sup-norm of the newest term drops below
/// `tol * max(1, |S|_inf)`, or once `max_depth` terms have been added, in which
/// case `converged` is false. Non-finite terms raise [`Error::Divergence`].
pub fn katz_bonacich(
    net: &DirectedNetwork,
    lambda: f64,
    tol: f64,
    max_depth: usize,
) -> Result<CentralityVector> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(format!(
            "attenuation factor must lie in (0, 1), got {lambda}"
        )));
    }
    if !(tol > 0.0) || max_depth == 0 {
        return Err(Error::Domain(
            "centrality tolerance must be positive and max_depth at least 1".into(),
        ));
    }
    let n = net.n();
    let mut term = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut scores = vec![0.0; n];
    let mut converged = false;
    let mut depth = 0;
    while depth < max_depth {
        depth += 1;
        net.transpose_mul(&term, &mut next);
        let mut term_sup = 0.0_f64;
        for (t, &x) in term.iter_mut().zip(&next) {
            *t = lambda * x;
            term_sup = term_sup.max(*t);
        }
        if !term_sup.is_finite() {
            return Err(Error::Divergence { depth });
        }
        let mut score_sup = 0.0_f64;
        for (s, &t) in scores.iter_mut().zip(&term) {
            *s += t;
            score_sup = score_sup.max(*s);
        }
        if !score_sup.is_finite() {
            return Err(Error::Divergence { depth });
        }
        if term_sup < tol * score_sup.max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(CentralityVector {
        lambda,
        scores,
        converged,
        depth,
    })
}

/// Relative centrality `S_j - S_i` for every nomination `i -> j`, stored
/// per edge in the network's edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeCentrality {
    pub values: Vec<f64>,
    /// Observed support `[min, max]` over all friendship pairs; `None` when
    /// the network has no edges.
    pub support: Option<(f64, f64)>,
}

impl RelativeCentrality {
    /// Value for the `k`-th friend of player `i`.
    pub fn get(&self, net: &DirectedNetwork, i: usize, k: usize) -> f64 {
        self.values[net.edge_range(i).start + k]
    }
}

pub fn relative_centrality(
    net: &DirectedNetwork,
    cent: &CentralityVector,
) -> Result<RelativeCentrality> {
    if cent.len() != net.n() {
        return Err(Error::Dimension(format!(
            "centrality has {} entries, network has {} players",
            cent.len(),
            net.n()
        )));
    }
    let s = &cent.scores;
    let values: Vec<f64> = net.edges().map(|(i, j)| s[j] - s[i]).collect();
    let support = values.iter().fold(None, |acc: Option<(f64, f64)>, &v| {
        Some(match acc {
            None => (v, v),
            Some((lo, hi)) => (lo.min(v), hi.max(v)),
        })
    });
    Ok(RelativeCentrality { values, support })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for a single value).
    pub sd: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Stats::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stats { min, max, mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeSummary {
    pub players: usize,
    pub edges: usize,
    pub friends: Stats,
    pub centrality: Stats,
    /// Mean of `S_j` over `j in F_i`, 0 for players with no friends.
    pub friends_centrality: Stats,
}

pub fn degree_summary(net: &DirectedNetwork, cent: &CentralityVector) -> Result<DegreeSummary> {
    if cent.len() != net.n() {
        return Err(Error::Dimension(format!(
            "centrality has {} entries, network has {} players",
            cent.len(),
            net.n()
        )));
    }
    let q: Vec<f64> = (0..net.n()).map(|i| net.friend_count(i) as f64).collect();
    let avg_friend: Vec<f64> = (0..net.n())
        .map(|i| {
            let f = net.friends(i);
            if f.is_empty() {
                0.0
            } else {
                f.iter().map(|&j| cent.scores[j]).sum::<f64>() / f.len() as f64
            }
        })
        .collect();
    Ok(DegreeSummary {
        players: net.n(),
        edges: net.edge_count(),
        friends: Stats::of(&q),
        centrality: Stats::of(&cent.scores),
        friends_centrality: Stats::of(&avg_friend),
    })
}

impl DegreeSummary {
    /// Aligned text table: one row per variable with min, max, mean and SD.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<28} {:>12} {:>12} {:>12} {:>12}\n",
            "Variable", "Min", "Max", "Mean", "Std. Dev."
        );
        for (name, s) in [
            ("KB centrality", &self.centrality),
            ("Ave. friends' KB centrality", &self.friends_centrality),
            ("Number of friends", &self.friends),
        ] {
            out.push_str(&format!(
                "{:<28} {:>12.6} {:>12.6} {:>12.6} {:>12.6}\n",
                name, s.min, s.max, s.mean, s.sd
            ));
        }
        out.push_str(&format!(
            "players = {}, edges = {}\n",
            self.players, self.edges
        ));
        out
    }
}
