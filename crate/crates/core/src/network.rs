//! Consensus graphs, doubly stochastic mixing matrices and simulated
//! averaging primitives.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairwise_sum;

/// Resample budget for random regular graphs that come out disconnected.
pub const MAX_RESAMPLES: usize = 64;

const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Star,
    Ring,
    Complete,
    KRegularRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `a_nm = 1/(1 + max(deg n, deg m))`.
    #[default]
    Metropolis,
    /// `a_nm = 1/(1 + max degree)` on every edge.
    Uniform,
}

/// Per-node vectors `v_n`, all of the same length.
pub type NodeVectors = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    nodes: usize,
    edges: Vec<(usize, usize)>,
    weights: DMatrix<f64>,
    lambda2: f64,
}

impl NetworkModel {
    /// Build from an edge list (0-based, undirected) and a weight rule.
    pub fn from_edges(nodes: usize, edges: &[(usize, usize)], rule: WeightRule) -> Result<Self> {
        if nodes < 1 {
            return Err(Error::invalid("network needs at least one node"));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= nodes || b >= nodes {
                return Err(Error::invalid(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::invalid(format!("self-loop at node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        if !is_connected(nodes, &edges) {
            return Err(Error::invalid("graph is disconnected"));
        }
        let mut degree = vec![0usize; nodes];
        for &(a, b) in &edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        let max_degree = degree.iter().copied().max().unwrap_or(0);
        let mut weights = DMatrix::zeros(nodes, nodes);
        for &(a, b) in &edges {
            let w = match rule {
                WeightRule::Metropolis => 1.0 / (1 + degree[a].max(degree[b])) as f64,
                WeightRule::Uniform => 1.0 / (1 + max_degree) as f64,
            };
            weights[(a, b)] = w;
            weights[(b, a)] = w;
        }
        for n in 0..nodes {
            let off: f64 = (0..nodes).filter(|&m| m != n).map(|m| weights[(n, m)]).sum();
            weights[(n, n)] = 1.0 - off;
        }
        let lambda2 = second_eigenvalue_magnitude(&weights);
        Ok(Self {
            nodes,
            edges,
            weights,
            lambda2,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// `|λ₂(A)|`.
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Check every structural invariant of the mixing matrix to `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let a = &self.weights;
        let n = self.nodes;
        for i in 0..n {
            let row: f64 = a.row(i).iter().sum();
            let col: f64 = a.column(i).iter().sum();
            if (row - 1.0).abs() > tol || (col - 1.0).abs() > tol {
                return Err(Error::invalid(format!("row/column {i} does not sum to 1")));
            }
            if a[(i, i)] <= 0.0 {
                return Err(Error::invalid(format!("diagonal entry {i} is not positive")));
            }
            for j in 0..n {
                if a[(i, j)] < 0.0 || (a[(i, j)] - a[(j, i)]).abs() > tol {
                    return Err(Error::invalid(format!("entry ({i}, {j}) breaks symmetry or sign")));
                }
                if i != j && a[(i, j)] > 0.0 && self.edges.binary_search(&(i.min(j), i.max(j))).is_err() {
                    return Err(Error::invalid(format!("entry ({i}, {j}) lies off the graph")));
                }
            }
        }
        if self.lambda2 >= 1.0 {
            return Err(Error::invalid("lambda2 is not below 1"));
        }
        Ok(())
    }

    /// Weight matrix as CSV text, one row per node.
    pub fn weights_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.nodes {
            let row: Vec<String> = self.weights.row(i).iter().map(|v| crate::fmt_sig17(*v)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// One synchronous mixing round `v_n ← Σ_m a_nm v_m`.
    pub fn consensus_round(&self, vecs: &NodeVectors) -> Result<NodeVectors> {
        let mut out = vecs.clone();
        self.mix_into(vecs, &mut out)?;
        Ok(out)
    }

    /// `rounds` mixing rounds; zero rounds returns the input unchanged.
    pub fn consensus(&self, vecs: &NodeVectors, rounds: usize) -> Result<NodeVectors> {
        let mut cur = vecs.clone();
        let mut scratch = vecs.clone();
        for _ in 0..rounds {
            self.mix_into(&cur, &mut scratch)?;
            std::mem::swap(&mut cur, &mut scratch);
        }
        Ok(cur)
    }

    /// In-place variant of [`consensus`](Self::consensus) reusing `scratch`.
    pub(crate) fn consensus_in_place(
        &self,
        vecs: &mut NodeVectors,
        scratch: &mut NodeVectors,
        rounds: usize,
    ) -> Result<()> {
        for _ in 0..rounds {
            self.mix_into(vecs, scratch)?;
            std::mem::swap(vecs, scratch);
        }
        Ok(())
    }

    fn mix_into(&self, src: &NodeVectors, dst: &mut NodeVectors) -> Result<()> {
        let dim = check_shape(src, self.nodes)?;
        dst.resize_with(self.nodes, || vec![0.0; dim]);
        for (n, out) in dst.iter_mut().enumerate() {
            out.clear();
            out.resize(dim, 0.0);
            for (m, v) in src.iter().enumerate() {
                let a = self.weights[(n, m)];
                if a != 0.0 {
                    for (o, x) in out.iter_mut().zip(v) {
                        *o += a * x;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_shape(vecs: &NodeVectors, nodes: usize) -> Result<usize> {
    if vecs.len() != nodes {
        return Err(Error::DimensionMismatch {
            expected: nodes,
            got: vecs.len(),
        });
    }
    let dim = vecs.first().map_or(0, Vec::len);
    if let Some(bad) = vecs.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    Ok(dim)
}

/// Exact network mean computed once by pairwise summation and broadcast,
/// so every node holds bit-identical values.
pub fn all_reduce(vecs: &NodeVectors) -> Result<NodeVectors> {
    let mean = exact_mean(vecs)?;
    Ok(vec![mean; vecs.len()])
}

pub(crate) fn exact_mean(vecs: &NodeVectors) -> Result<Vec<f64>> {
    let dim = check_shape(vecs, vecs.len())?;
    let n = vecs.len() as f64;
    let mut column = vec![0.0; vecs.len()];
    Ok((0..dim)
        .map(|j| {
            for (c, v) in column.iter_mut().zip(vecs) {
                *c = v[j];
            }
            pairwise_sum(&column) / n
        })
        .collect())
}

fn second_eigenvalue_magnitude(a: &DMatrix<f64>) -> f64 {
    if a.nrows() < 2 {
        return 0.0;
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    let lambda = eig[1..].iter().map(|v| v.abs()).fold(0.0, f64::max);
    // Eigensolver round-off on an exactly averaging matrix.
    if lambda < LAMBDA_FLOOR { 0.0 } else { lambda }
}

fn is_connected(nodes: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); nodes];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; nodes];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == nodes
}

/// Build a named topology. `degree` and `seed` are used only by
/// [`TopologyKind::KRegularRandom`].
pub fn build_topology(
    kind: TopologyKind,
    nodes: usize,
    degree: Option<usize>,
    seed: u64,
    rule: WeightRule,
) -> Result<NetworkModel> {
    if nodes < 2 {
        return Err(Error::invalid(format!("topology needs N >= 2, got {nodes}")));
    }
    let edges: Vec<(usize, usize)> = match kind {
        TopologyKind::Star => (1..nodes).map(|m| (0, m)).collect(),
        TopologyKind::Ring => (0..nodes).map(|n| (n, (n + 1) % nodes)).collect(),
        TopologyKind::Complete => (0..nodes)
            .flat_map(|a| (a + 1..nodes).map(move |b| (a, b)))
            .collect(),
        TopologyKind::KRegularRandom => {
            let k = degree.ok_or_else(|| Error::invalid("k_regular_random requires a degree"))?;
            return random_regular(nodes, k, seed, rule);
        }
    };
    NetworkModel::from_edges(nodes, &edges, rule)
}

fn random_regular(nodes: usize, k: usize, seed: u64, rule: WeightRule) -> Result<NetworkModel> {
    if k == 0 || k >= nodes {
        return Err(Error::invalid(format!("degree must satisfy 0 < k < N, got k = {k}, N = {nodes}")));
    }
    if (k * nodes) % 2 != 0 {
        return Err(Error::invalid(format!("k·N must be even, got k = {k}, N = {nodes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RESAMPLES {
        let edges = pair_points(nodes, k, &mut rng);
        if is_connected(nodes, &edges) {
            return NetworkModel::from_edges(nodes, &edges, rule);
        }
    }
    Err(Error::Disconnected(MAX_RESAMPLES))
}

/// Simple k-regular graph by sequential point pairing: each node owns `k`
/// points and random pairs are drawn among the unpaired points, rejecting
/// only the offending pair. Restarts when no admissible pair remains.
fn pair_points(nodes: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    'restart: loop {
        let mut points: Vec<usize> = (0..nodes).flat_map(|n| std::iter::repeat_n(n, k)).collect();
        let mut edges = BTreeSet::new();
        while !points.is_empty() {
            let mut misses = 0usize;
            loop {
                let i = rng.random_range(0..points.len());
                let j = rng.random_range(0..points.len());
                let (a, b) = (points[i], points[j]);
                if i != j && a != b && !edges.contains(&(a.min(b), a.max(b))) {
                    edges.insert((a.min(b), a.max(b)));
                    let (hi, lo) = (i.max(j), i.min(j));
                    points.swap_remove(hi);
                    points.swap_remove(lo);
                    break;
                }
                misses += 1;
                if misses > 4 * points.len() * points.len() && !has_admissible_pair(&points, &edges) {
                    continue 'restart;
                }
            }
        }
        return edges.into_iter().collect();
    }
}

fn has_admissible_pair(points: &[usize], edges: &BTreeSet<(usize, usize)>) -> bool {
    points.iter().enumerate().any(|(i, &a)| {
        points[i + 1..]
            .iter()
            .any(|&b| a != b && !edges.contains(&(a.min(b), a.max(b))))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deviation(vecs: &NodeVectors) -> f64 {
        let mean = exact_mean(vecs).unwrap();
        vecs.iter()
            .flat_map(|v| v.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn lambda2_examples() {
        let complete = build_topology(TopologyKind::Complete, 6, None, 0, WeightRule::Uniform).unwrap();
        assert!(complete.lambda2() < 1e-12);
        let ring = build_topology(TopologyKind::Ring, 4, None, 0, WeightRule::Metropolis).unwrap();
        assert!((ring.lambda2() - 1.0 / 3.0).abs() < 1e-12);
        let star = build_topology(TopologyKind::Star, 3, None, 0, WeightRule::Metropolis).unwrap();
        assert!((star.lambda2() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn regular_graph_is_regular_and_valid() {
        let g = build_topology(TopologyKind::KRegularRandom, 16, Some(6), 11, WeightRule::Metropolis).unwrap();
        let mut deg = vec![0; 16];
        for &(a, b) in g.edges() {
            deg[a] += 1;
            deg[b] += 1;
        }
        assert!(deg.iter().all(|&d| d == 6));
        g.validate(1e-12).unwrap();
        let again = build_topology(TopologyKind::KRegularRandom, 16, Some(6), 11, WeightRule::Metropolis).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn regular_graph_parameter_errors() {
        assert!(build_topology(TopologyKind::KRegularRandom, 5, Some(3), 0, WeightRule::Metropolis).is_err());
        assert!(build_topology(TopologyKind::KRegularRandom, 4, Some(4), 0, WeightRule::Metropolis).is_err());
        assert!(build_topology(TopologyKind::KRegularRandom, 4, None, 0, WeightRule::Metropolis).is_err());
        assert!(build_topology(TopologyKind::Ring, 1, None, 0, WeightRule::Metropolis).is_err());
    }

    #[test]
    fn disconnected_regular_graphs_exhaust_budget() {
        // 1-regular graphs on 4 nodes are perfect matchings, never connected.
        let err = build_topology(TopologyKind::KRegularRandom, 4, Some(1), 3, WeightRule::Metropolis).unwrap_err();
        assert!(matches!(err, Error::Disconnected(MAX_RESAMPLES)));
    }

    #[test]
    fn consensus_examples() {
        let pair = build_topology(TopologyKind::Complete, 2, None, 0, WeightRule::Uniform).unwrap();
        let out = pair.consensus_round(&vec![vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(out, vec![vec![1.0], vec![1.0]]);

        let ring = build_topology(TopologyKind::Ring, 5, None, 0, WeightRule::Metropolis).unwrap();
        let flat = vec![vec![3.5, -1.0]; 5];
        let out = ring.consensus(&flat, 7).unwrap();
        for v in out {
            assert!((v[0] - 3.5).abs() < 1e-14 && (v[1] + 1.0).abs() < 1e-14);
        }
        let input = vec![vec![1.0], vec![2.0], vec![0.0], vec![5.0], vec![9.0]];
        assert_eq!(ring.consensus(&input, 0).unwrap(), input);
    }

    #[test]
    fn ring_contraction_bounded_by_lambda2() {
        let ring = build_topology(TopologyKind::Ring, 8, None, 0, WeightRule::Metropolis).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: NodeVectors = (0..8).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let next = ring.consensus_round(&v).unwrap();
        assert!(deviation(&next) <= (ring.lambda2() + 1e-10) * deviation(&v));
    }

    #[test]
    fn all_reduce_examples() {
        let out = all_reduce(&vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(out, vec![vec![2.0]; 3]);
        assert!(all_reduce(&vec![vec![1.0], vec![2.0, 3.0]]).is_err());
    }

    #[test]
    fn weights_csv_has_one_line_per_node() {
        let ring = build_topology(TopologyKind::Ring, 4, None, 0, WeightRule::Metropolis).unwrap();
        let csv = ring.weights_csv();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 4);
    }
}
