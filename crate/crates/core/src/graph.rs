//! Directed communication topology: Laplacian construction, spanning-tree
//! root identification, and the partition of agents into uncompromised and
//! attacked sets under a link-level attack.
//!
//! Edge-direction convention, fixed once here and enforced through
//! [`DiGraph::transmits`]: `adjacency[i][j] = 1` means agent `j` transmits
//! to agent `i` (information flows j → i). Reachability questions ("which
//! agents does a root's information reach") therefore walk the transpose of
//! the adjacency storage. Agents are 0-indexed internally; external formats
//! are 1-indexed and converted at the boundary.

use crate::numerics::RMat;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("adjacency must be {n}x{n}, got {got} entries")]
    BadShape { n: usize, got: usize },
    #[error("adjacency entries must be 0 or 1 (found {value} at ({i},{j}))")]
    NotBinary { i: usize, j: usize, value: i64 },
    #[error("self-loop at agent {0} (diagonal must be zero)")]
    SelfLoop(usize),
    #[error("agent index {index} out of range for {n} agents")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("graph has no spanning-tree root")]
    NoSpanningTree,
    #[error("agent {0} is a spanning-tree root; roots must not be directly attacked")]
    RootAttacked(usize),
    #[error("directly attacked set must be nonempty")]
    EmptyAttackSet,
    #[error("agent {0} is not a spanning-tree root")]
    NotARoot(usize),
    #[error("partition is inconsistent with the graph")]
    InvalidPartition,
}

/// Directed communication graph over `n` agents with unweighted links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiGraph {
    n: usize,
    adjacency: Vec<u8>, // row-major, adjacency[i*n + j] = a_ij
}

impl DiGraph {
    /// Build from row-major 0/1 entries; rejects self-loops and non-binary
    /// values.
    pub fn from_adjacency(n: usize, entries: &[i64]) -> Result<Self, GraphError> {
        if entries.len() != n * n {
            return Err(GraphError::BadShape {
                n,
                got: entries.len(),
            });
        }
        let mut adjacency = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..n {
                let v = entries[i * n + j];
                if v != 0 && v != 1 {
                    return Err(GraphError::NotBinary { i, j, value: v });
                }
                if i == j && v != 0 {
                    return Err(GraphError::SelfLoop(i));
                }
                adjacency[i * n + j] = v as u8;
            }
        }
        Ok(Self { n, adjacency })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    /// The single adjacency accessor: does `from` transmit to `to`?
    pub fn transmits(&self, from: usize, to: usize) -> bool {
        self.adjacency[to * self.n + from] == 1
    }

    /// In-neighbors of `i`: the agents `i` receives information from.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.transmits(j, i)).collect()
    }

    /// Out-neighbors of `i`: the agents that receive from `i`.
    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.transmits(i, j)).collect()
    }

    /// In-degree d_i = |N_i|.
    pub fn in_degree(&self, i: usize) -> usize {
        self.in_neighbors(i).len()
    }

    /// All directed edges as (from, to) pairs, ordered by receiver then sender.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for to in 0..self.n {
            for from in 0..self.n {
                if self.transmits(from, to) {
                    out.push((from, to));
                }
            }
        }
        out
    }

    /// Laplacian L = D − A with D = diag(in-degrees). Integer-exact; every
    /// row sums to zero.
    pub fn laplacian(&self) -> RMat {
        let n = self.n;
        let mut l = RMat::zeros(n, n);
        for i in 0..n {
            l[(i, i)] = self.in_degree(i) as f64;
            for j in 0..n {
                if i != j && self.transmits(j, i) {
                    l[(i, j)] = -1.0;
                }
            }
        }
        l
    }

    /// Agents whose information reaches the whole network: the roots of
    /// directed spanning trees. Empty iff no spanning tree exists.
    pub fn spanning_tree_roots(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.reachable_from(i).len() == self.n)
            .collect()
    }

    /// The node `i` plus every node reachable from it along the
    /// transmission direction.
    pub fn reachable_subgraph(&self, i: usize) -> Result<Vec<usize>, GraphError> {
        if i >= self.n {
            return Err(GraphError::IndexOutOfRange { index: i, n: self.n });
        }
        Ok(self.reachable_from(i))
    }

    fn reachable_from(&self, start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            for v in self.out_neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        (0..self.n).filter(|&v| seen[v]).collect()
    }

    /// Reachability from any of `sources` in the residual graph obtained by
    /// deleting every incoming edge of every node in `blocked`.
    fn reachable_avoiding(&self, sources: &[usize], blocked: &[bool]) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut queue: std::collections::VecDeque<usize> = Default::default();
        for &s in sources {
            if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            for v in self.out_neighbors(u) {
                // edge u→v is an incoming edge of v: deleted if v is blocked
                if !blocked[v] && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

/// Healthy-path partition of the agents under a directly-attacked set.
///
/// An agent is uncompromised (`v_nc`) when a directed path from some root
/// reaches it without passing through any directly attacked agent — the
/// attack compromises every incoming link of the agents in `v_da`, so any
/// path through them is unhealthy. Everything else is attacked (`v_a`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub v_r: Vec<usize>,
    pub v_da: Vec<usize>,
    pub v_nc: Vec<usize>,
    pub v_a: Vec<usize>,
    pub v_nca: Vec<usize>,
    /// perm[k] = original index of the agent in permuted position k;
    /// uncompromised agents occupy the first |v_nc| positions.
    pub perm: Vec<usize>,
}

impl Partition {
    pub fn n_nc(&self) -> usize {
        self.v_nc.len()
    }
    pub fn n_a(&self) -> usize {
        self.v_a.len()
    }
    pub fn is_attacked(&self, agent: usize) -> bool {
        self.v_a.contains(&agent)
    }
}

/// Partition the network under a non-root attack on `v_da`.
pub fn partition_under_attack(g: &DiGraph, v_da: &[usize]) -> Result<Partition, GraphError> {
    let n = g.n_agents();
    if v_da.is_empty() {
        return Err(GraphError::EmptyAttackSet);
    }
    for &i in v_da {
        if i >= n {
            return Err(GraphError::IndexOutOfRange { index: i, n });
        }
    }
    let roots = g.spanning_tree_roots();
    if roots.is_empty() {
        return Err(GraphError::NoSpanningTree);
    }
    if let Some(&hit) = v_da.iter().find(|i| roots.contains(i)) {
        return Err(GraphError::RootAttacked(hit));
    }

    let mut blocked = vec![false; n];
    for &i in v_da {
        blocked[i] = true;
    }
    let healthy = g.reachable_avoiding(&roots, &blocked);

    let v_nc: Vec<usize> = (0..n).filter(|&i| healthy[i]).collect();
    let v_a: Vec<usize> = (0..n).filter(|&i| !healthy[i]).collect();
    let v_nca: Vec<usize> = v_nc
        .iter()
        .copied()
        .filter(|&j| v_a.iter().any(|&i| g.transmits(i, j)))
        .collect();
    let mut v_da_sorted = v_da.to_vec();
    v_da_sorted.sort_unstable();
    v_da_sorted.dedup();

    let perm: Vec<usize> = v_nc.iter().chain(v_a.iter()).copied().collect();
    Ok(Partition {
        v_r: roots,
        v_da: v_da_sorted,
        v_nc,
        v_a,
        v_nca,
        perm,
    })
}

/// The Laplacian reordered by a partition's permutation and cut into the
/// four blocks (uncompromised/attacked on each axis).
#[derive(Debug, Clone)]
pub struct PartitionedLaplacian {
    pub l_nc: RMat,
    pub l_nca: RMat,
    pub l_anc: RMat,
    pub l_a: RMat,
    pub perm: Vec<usize>,
}

impl PartitionedLaplacian {
    pub fn new(g: &DiGraph, p: &Partition) -> Self {
        let l = g.laplacian();
        let n_nc = p.n_nc();
        let n = g.n_agents();
        let mut permuted = RMat::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                permuted[(a, b)] = l[(p.perm[a], p.perm[b])];
            }
        }
        Self {
            l_nc: permuted.view((0, 0), (n_nc, n_nc)).into(),
            l_nca: permuted.view((0, n_nc), (n_nc, n - n_nc)).into(),
            l_anc: permuted.view((n_nc, 0), (n - n_nc, n_nc)).into(),
            l_a: permuted.view((n_nc, n_nc), (n - n_nc, n - n_nc)).into(),
            perm: p.perm.clone(),
        }
    }

    /// Undo the permutation, recovering the original Laplacian exactly.
    pub fn reassemble(&self) -> RMat {
        let n = self.perm.len();
        let n_nc = self.l_nc.nrows();
        let mut permuted = RMat::zeros(n, n);
        permuted.view_mut((0, 0), (n_nc, n_nc)).copy_from(&self.l_nc);
        permuted
            .view_mut((0, n_nc), (n_nc, n - n_nc))
            .copy_from(&self.l_nca);
        permuted
            .view_mut((n_nc, 0), (n - n_nc, n_nc))
            .copy_from(&self.l_anc);
        permuted
            .view_mut((n_nc, n_nc), (n - n_nc, n - n_nc))
            .copy_from(&self.l_a);
        let mut original = RMat::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                original[(self.perm[a], self.perm[b])] = permuted[(a, b)];
            }
        }
        original
    }
}

/// Augmented Laplacian for an attack on a spanning-tree root `i`: a virtual
/// agent (row/column 0) replaces all of `i`'s in-neighbors, coupled with
/// weight d_i. Rows sum to zero.
pub fn augmented_root_laplacian(g: &DiGraph, i: usize) -> Result<RMat, GraphError> {
    if i >= g.n_agents() {
        return Err(GraphError::IndexOutOfRange {
            index: i,
            n: g.n_agents(),
        });
    }
    if !g.spanning_tree_roots().contains(&i) {
        return Err(GraphError::NotARoot(i));
    }
    let n = g.n_agents();
    let l = g.laplacian();
    // L_r = L + Q_r·A zeroes the attacked agent's neighbor couplings and
    // keeps d_i on its diagonal.
    let mut l_r = l;
    for j in 0..n {
        if g.transmits(j, i) {
            l_r[(i, j)] += 1.0;
        }
    }
    let mut out = RMat::zeros(n + 1, n + 1);
    out.view_mut((1, 1), (n, n)).copy_from(&l_r);
    out[(i + 1, 0)] = -(g.in_degree(i) as f64);
    Ok(out)
}

/// Augmented Laplacian for a non-root attack: a virtual agent pinned to the
/// directly attacked agents with weights d_i^nc = |N_i ∩ V_nc|, over the
/// attacked block L_a.
pub fn augmented_attacked_laplacian(g: &DiGraph, p: &Partition) -> Result<RMat, GraphError> {
    let n = g.n_agents();
    if p.perm.len() != n || p.n_nc() + p.n_a() != n {
        return Err(GraphError::InvalidPartition);
    }
    let blocks = PartitionedLaplacian::new(g, p);
    let n_a = p.n_a();
    let mut out = RMat::zeros(n_a + 1, n_a + 1);
    out.view_mut((1, 1), (n_a, n_a)).copy_from(&blocks.l_a);
    for (k, &agent) in p.v_a.iter().enumerate() {
        let d_nc = g
            .in_neighbors(agent)
            .iter()
            .filter(|j| p.v_nc.contains(j))
            .count();
        // only directly attacked agents can have uncompromised in-neighbors
        if d_nc > 0 && !p.v_da.contains(&agent) {
            return Err(GraphError::InvalidPartition);
        }
        out[(k + 1, 0)] = -(d_nc as f64);
    }
    Ok(out)
}
