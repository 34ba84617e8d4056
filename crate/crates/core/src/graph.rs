//! Communication graphs built from entity positions, their support matrices,
//! node permutations and support perturbations.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Matrix, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Agent,
    Obstacle,
}

impl EntityKind {
    fn as_str(self) -> &'static str {
        match self {
            EntityKind::Agent => "agent",
            EntityKind::Obstacle => "obstacle",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("communication radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("{positions} positions but {kinds} entity kinds")]
    LengthMismatch { positions: usize, kinds: usize },
    #[error("position of node {0} is not finite")]
    NonFinitePosition(usize),
    #[error("edge ({0}, {1}) listed twice")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self-loops are implicit; edge ({0}, {0}) not allowed")]
    SelfLoop(usize),
    #[error("permutation is not a bijection on 0..{0}")]
    NotAPermutation(usize),
    #[error("edge list parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Undirected communication graph. Node ids are dense `0..n`; every node is
/// implicitly in its own neighbourhood.
#[derive(Clone, Debug, PartialEq)]
pub struct CommGraph {
    kinds: Vec<EntityKind>,
    positions: Vec<[f64; 2]>,
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Connects every pair of entities within `radius` of each other.
    pub fn from_positions(
        positions: &[[f64; 2]],
        kinds: &[EntityKind],
        radius: f64,
    ) -> Result<Self, GraphError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GraphError::BadRadius(radius));
        }
        if positions.len() != kinds.len() {
            return Err(GraphError::LengthMismatch { positions: positions.len(), kinds: kinds.len() });
        }
        if let Some(i) = positions.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(GraphError::NonFinitePosition(i));
        }
        let n = positions.len();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = distance(positions[i], positions[j]);
                if d <= radius {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        Ok(Self { kinds: kinds.to_vec(), positions: positions.to_vec(), neighbors })
    }

    /// Builds a graph from an explicit undirected edge list.
    pub fn from_edges(
        kinds: &[EntityKind],
        positions: Option<&[[f64; 2]]>,
        edges: &[(usize, usize)],
    ) -> Result<Self, GraphError> {
        let n = kinds.len();
        let positions = match positions {
            Some(p) if p.len() != n => {
                return Err(GraphError::LengthMismatch { positions: p.len(), kinds: n })
            }
            Some(p) => p.to_vec(),
            None => vec![[0.0; 2]; n],
        };
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::NodeOutOfRange(i, j, n));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if neighbors[i].contains(&j) {
                return Err(GraphError::DuplicateEdge(i, j));
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self { kinds: kinds.to_vec(), positions, neighbors })
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kinds(&self) -> &[EntityKind] {
        &self.kinds
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// Neighbours of `i`, excluding `i` itself.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// `N_i = {i} ∪ neighbours`, sorted.
    pub fn neighborhood(&self, i: usize) -> Vec<usize> {
        let mut n = self.neighbors[i].clone();
        n.push(i);
        n.sort_unstable();
        n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].contains(&j)
    }

    /// Undirected edges with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = (0..self.len())
            .flat_map(|i| self.neighbors[i].iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn agent_indices(&self) -> Vec<usize> {
        self.kinds.iter().enumerate().filter(|(_, k)| **k == EntityKind::Agent).map(|(i, _)| i).collect()
    }

    /// Row-major `n x n` neighbourhood mask including self-loops.
    pub fn mask(&self) -> Vec<bool> {
        let n = self.len();
        let mut mask = vec![false; n * n];
        for i in 0..n {
            mask[i * n + i] = true;
            for &j in &self.neighbors[i] {
                mask[i * n + j] = true;
            }
        }
        mask
    }

    pub fn support_matrix(&self, kind: SupportKind) -> SupportMatrix {
        let n = self.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            let row_weight = match kind {
                SupportKind::Adjacency => 1.0,
                SupportKind::DegreeNormalized => 1.0 / (self.neighbors[i].len() + 1) as f64,
            };
            m.set(i, i, row_weight);
            for &j in &self.neighbors[i] {
                m.set(i, j, row_weight);
            }
        }
        SupportMatrix(m)
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &Permutation) -> Result<Self, GraphError> {
        if perm.len() != self.len() {
            return Err(GraphError::NotAPermutation(self.len()));
        }
        let inv = perm.inverse();
        let kinds = perm.order.iter().map(|&o| self.kinds[o]).collect();
        let positions = perm.order.iter().map(|&o| self.positions[o]).collect();
        let neighbors = perm
            .order
            .iter()
            .map(|&o| {
                let mut l: Vec<usize> = self.neighbors[o].iter().map(|&j| inv.order[j]).collect();
                l.sort_unstable();
                l
            })
            .collect();
        Ok(Self { kinds, positions, neighbors })
    }

    /// Text snapshot: a `kinds` header, optional `pos` lines, one edge per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::from("# comm-graph v1\nkinds");
        for k in &self.kinds {
            s.push(' ');
            s.push_str(k.as_str());
        }
        s.push('\n');
        for (i, p) in self.positions.iter().enumerate() {
            let _ = writeln!(s, "pos {i} {:?} {:?}", p[0], p[1]);
        }
        for (i, j) in self.edges() {
            let _ = writeln!(s, "{i} {j}");
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut kinds: Option<Vec<EntityKind>> = None;
        let mut positions: Vec<(usize, [f64; 2])> = Vec::new();
        let mut edges = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let err = |msg: &str| GraphError::Parse { line: line_no, msg: msg.to_string() };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("kinds") => {
                    let ks = parts
                        .map(|p| match p {
                            "agent" => Ok(EntityKind::Agent),
                            "obstacle" => Ok(EntityKind::Obstacle),
                            other => Err(err(&format!("unknown entity kind {other:?}"))),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    kinds = Some(ks);
                }
                Some("pos") => {
                    let nums: Vec<&str> = parts.collect();
                    if nums.len() != 3 {
                        return Err(err("expected `pos <node> <x> <y>`"));
                    }
                    let i = nums[0].parse().map_err(|_| err("bad node id"))?;
                    let x = nums[1].parse().map_err(|_| err("bad x coordinate"))?;
                    let y = nums[2].parse().map_err(|_| err("bad y coordinate"))?;
                    positions.push((i, [x, y]));
                }
                Some(first) => {
                    let i = first.parse().map_err(|_| err("bad node id"))?;
                    let j = parts
                        .next()
                        .ok_or_else(|| err("edge needs two endpoints"))?
                        .parse()
                        .map_err(|_| err("bad node id"))?;
                    if parts.next().is_some() {
                        return Err(err("trailing tokens after edge"));
                    }
                    edges.push((i, j));
                }
                None => {}
            }
        }
        let kinds = kinds.ok_or(GraphError::Parse { line: 0, msg: "missing kinds header".into() })?;
        let pos = if positions.is_empty() {
            None
        } else {
            let mut p = vec![[0.0; 2]; kinds.len()];
            for (i, xy) in positions {
                if i >= kinds.len() {
                    return Err(GraphError::NodeOutOfRange(i, i, kinds.len()));
                }
                p[i] = xy;
            }
            Some(p)
        };
        Self::from_edges(&kinds, pos.as_deref(), &edges)
    }

    /// Precomputes the tape-facing view used by attention layers.
    pub fn context(&self) -> GraphContext {
        let n = self.len();
        let mut rel_x = Matrix::zeros(n, n);
        let mut rel_y = Matrix::zeros(n, n);
        for i in 0..n {
            for &j in &self.neighbors[i] {
                rel_x.set(i, j, self.positions[j][0] - self.positions[i][0]);
                rel_y.set(i, j, self.positions[j][1] - self.positions[i][1]);
            }
        }
        GraphContext { n, mask: Arc::from(self.mask()), rel_x, rel_y }
    }
}

/// Neighbourhood mask and edge features (relative positions `p_j - p_i`).
#[derive(Clone, Debug, PartialEq)]
pub struct GraphContext {
    pub n: usize,
    pub mask: Arc<[bool]>,
    pub rel_x: Matrix,
    pub rel_y: Matrix,
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    /// 0/1 adjacency with self-loops.
    Adjacency,
    /// `D^{-1} S` with `D = diag(|N_i|)`.
    DegreeNormalized,
}

/// A matrix whose sparsity is meant to follow a communication graph.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportMatrix(pub Matrix);

impl SupportMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// True if every off-graph, off-diagonal entry is zero.
    pub fn respects(&self, graph: &CommGraph) -> bool {
        let n = graph.len();
        if self.0.shape() != (n, n) {
            return false;
        }
        (0..n).all(|i| (0..n).all(|j| i == j || graph.has_edge(i, j) || self.0.get(i, j) == 0.0))
    }

    /// `S + ΔS` together with `‖ΔS‖_p`.
    pub fn perturb(&self, delta: &Matrix, p: f64) -> Result<(SupportMatrix, f64), TensorError> {
        let perturbed = self.0.add(delta)?;
        Ok((SupportMatrix(perturbed), delta.norm_p(p)))
    }
}

/// Perturbation that deletes the undirected edge `(i, j)` from an adjacency support.
pub fn edge_removal(s: &SupportMatrix, i: usize, j: usize) -> Matrix {
    let n = s.0.rows();
    let mut d = Matrix::zeros(n, n);
    d.set(i, j, -s.0.get(i, j));
    d.set(j, i, -s.0.get(j, i));
    d
}

/// Node relabelling: new node `i` is old node `order[i]`, i.e. `P[i, order[i]] = 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self, GraphError> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &o in &order {
            if o >= n || seen[o] {
                return Err(GraphError::NotAPermutation(n));
            }
            seen[o] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(n: usize) -> Self {
        Self { order: (0..n).collect() }
    }

    pub fn random(n: usize, rng: &mut impl rand::Rng) -> Self {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.order.len()];
        for (i, &o) in self.order.iter().enumerate() {
            inv[o] = i;
        }
        Self { order: inv }
    }

    pub fn matrix(&self) -> Matrix {
        let n = self.order.len();
        let mut p = Matrix::zeros(n, n);
        for (i, &o) in self.order.iter().enumerate() {
            p.set(i, o, 1.0);
        }
        p
    }

    /// `P X`.
    pub fn permute_rows(&self, x: &Matrix) -> Result<Matrix, GraphError> {
        if x.rows() != self.len() {
            return Err(TensorError::ShapeMismatch {
                op: "permute_rows",
                left: (self.len(), self.len()),
                right: x.shape(),
            }
            .into());
        }
        Ok(x.select_rows(&self.order)?)
    }

    /// `P S P^T`.
    pub fn conjugate(&self, s: &Matrix) -> Result<Matrix, GraphError> {
        let n = self.len();
        if s.shape() != (n, n) {
            return Err(TensorError::ShapeMismatch { op: "conjugate", left: (n, n), right: s.shape() }.into());
        }
        Ok(Matrix::from_fn(n, n, |i, j| s.get(self.order[i], self.order[j])))
    }

    /// `(P X, P S P^T)`.
    pub fn apply(&self, x: &Matrix, s: &SupportMatrix) -> Result<(Matrix, SupportMatrix), GraphError> {
        Ok((self.permute_rows(x)?, SupportMatrix(self.conjugate(&s.0)?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const A: EntityKind = EntityKind::Agent;

    fn path3() -> CommGraph {
        CommGraph::from_positions(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], &[A, A, A], 1.0).unwrap()
    }

    #[test]
    fn close_pair_is_connected() {
        let g = CommGraph::from_positions(&[[0.0, 0.0], [0.5, 0.0]], &[A, A], 1.0).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn distant_pair_is_isolated() {
        let g = CommGraph::from_positions(&[[0.0, 0.0], [2.0, 0.0]], &[A, A], 1.0).unwrap();
        assert!(g.edges().is_empty());
        assert_eq!(g.neighborhood(0), vec![0]);
        assert_eq!(g.neighborhood(1), vec![1]);
    }

    #[test]
    fn line_gives_path_graph() {
        let positions = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let g = path3();
        // pairwise-distance oracle
        let mut expected = vec![];
        for i in 0..3 {
            for j in (i + 1)..3 {
                if distance(positions[i], positions[j]) <= 1.0 {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(g.edges(), expected);
        assert!(!g.has_edge(0, 2));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(CommGraph::from_positions(&[[0.0, 0.0]], &[A], 0.0).is_err());
        assert!(CommGraph::from_positions(&[[f64::NAN, 0.0]], &[A], 1.0).is_err());
        assert!(CommGraph::from_positions(&[[0.0, 0.0]], &[A, A], 1.0).is_err());
        assert!(matches!(
            CommGraph::from_edges(&[A, A], None, &[(0, 1), (1, 0)]),
            Err(GraphError::DuplicateEdge(1, 0))
        ));
        assert!(CommGraph::from_edges(&[A, A], None, &[(0, 0)]).is_err());
    }

    #[test]
    fn supports_of_single_node() {
        let g = CommGraph::from_positions(&[[0.0, 0.0]], &[A], 1.0).unwrap();
        assert_eq!(g.support_matrix(SupportKind::Adjacency).0, Matrix::scalar(1.0));
        assert_eq!(g.support_matrix(SupportKind::DegreeNormalized).0, Matrix::scalar(1.0));
    }

    #[test]
    fn path_supports() {
        let g = path3();
        let adj = g.support_matrix(SupportKind::Adjacency);
        assert_eq!(adj.0, Matrix::from_rows(&[[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]]));
        let norm = g.support_matrix(SupportKind::DegreeNormalized);
        let third = 1.0 / 3.0;
        assert_eq!(
            norm.0,
            Matrix::from_rows(&[[0.5, 0.5, 0.0], [third, third, third], [0.0, 0.5, 0.5]])
        );
        for r in 0..3 {
            assert!((norm.0.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(adj.respects(&g) && norm.respects(&g));
    }

    #[test]
    fn identity_permutation_is_noop() {
        let g = path3();
        let s = g.support_matrix(SupportKind::Adjacency);
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]);
        let (px, ps) = Permutation::identity(3).apply(&x, &s).unwrap();
        assert_eq!(px, x);
        assert_eq!(ps, s);
    }

    #[test]
    fn swap_two_rows() {
        let p = Permutation::new(vec![1, 0]).unwrap();
        let x = Matrix::from_rows(&[[1.0], [2.0]]);
        assert_eq!(p.permute_rows(&x).unwrap(), Matrix::from_rows(&[[2.0], [1.0]]));
    }

    #[test]
    fn conjugation_matches_matrix_product_and_preserves_row_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let positions: Vec<[f64; 2]> =
            (0..5).map(|_| [rand::Rng::random::<f64>(&mut rng) * 2.0, rand::Rng::random::<f64>(&mut rng)]).collect();
        let g = CommGraph::from_positions(&positions, &[A; 5], 0.9).unwrap();
        let s = g.support_matrix(SupportKind::DegreeNormalized);
        let p = Permutation::random(5, &mut rng);
        let pm = p.matrix();
        let direct = pm.matmul(&s.0).unwrap().matmul(&pm.transpose()).unwrap();
        let conj = p.conjugate(&s.0).unwrap();
        assert_eq!(direct, conj);
        let sums = |m: &Matrix| {
            let mut v: Vec<f64> = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        assert_eq!(sums(&s.0), sums(&conj));
    }

    #[test]
    fn permutation_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Matrix::from_fn(6, 3, |r, c| (r * 3 + c) as f64 * 0.37 - 1.1);
        let s = SupportMatrix(Matrix::from_fn(6, 6, |r, c| ((r + 2 * c) % 5) as f64 * 0.1));
        for _ in 0..10 {
            let p = Permutation::random(6, &mut rng);
            let (px, ps) = p.apply(&x, &s).unwrap();
            let (x2, s2) = p.inverse().apply(&px, &ps).unwrap();
            assert_eq!(x2, x);
            assert_eq!(s2, s);
        }
        assert!(Permutation::new(vec![0, 0]).is_err());
    }

    #[test]
    fn permuted_graph_matches_conjugated_adjacency() {
        let g = path3();
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        let gp = g.permuted(&p).unwrap();
        let lhs = gp.support_matrix(SupportKind::Adjacency).0;
        let rhs = p.conjugate(&g.support_matrix(SupportKind::Adjacency).0).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn zero_perturbation() {
        let s = path3().support_matrix(SupportKind::Adjacency);
        let (sh, n) = s.perturb(&Matrix::zeros(3, 3), 2.0).unwrap();
        assert_eq!(n, 0.0);
        assert_eq!(sh, s);
    }

    #[test]
    fn removing_an_edge_has_unit_one_norm_per_side() {
        let s = path3().support_matrix(SupportKind::Adjacency);
        let d = edge_removal(&s, 0, 1);
        let (sh, n1) = s.perturb(&d, 1.0).unwrap();
        assert_eq!(n1, 2.0);
        assert_eq!(sh.0.get(0, 1), 0.0);
        assert_eq!(sh.0.get(1, 0), 0.0);
    }

    #[test]
    fn random_perturbation_norm_matches_direct_sum() {
        let s = path3().support_matrix(SupportKind::Adjacency);
        let mut d = Matrix::zeros(3, 3);
        d.set(0, 2, 0.1);
        d.set(1, 1, -0.1);
        d.set(2, 0, 0.1);
        let (_, n2) = s.perturb(&d, 2.0).unwrap();
        assert!((n2 - (3.0f64 * 0.01).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = CommGraph::from_positions(
            &[[0.0, 0.0], [0.4, 0.1], [3.0, 3.0]],
            &[A, A, EntityKind::Obstacle],
            1.0,
        )
        .unwrap();
        let text = g.to_edge_list();
        assert_eq!(CommGraph::from_edge_list(&text).unwrap(), g);
        assert!(matches!(
            CommGraph::from_edge_list("kinds agent\n0 x\n"),
            Err(GraphError::Parse { line: 2, .. })
        ));
    }
}
