//! The k-NN semantic graph over seen and unseen classes and the canonical
//! `(Q, R)` transition blocks derived from it.
//!
//! Node ids: seen classes occupy `0..p` in input order, unseen classes
//! `p..p+q`. Edges are undirected and stored once with the smaller id first.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, EmbeddingTable};
use crate::error::{Error, Result};
use crate::json::Sig17;

/// Tolerance on each row of `[Q | R]` summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGraph {
    seen_names: Vec<String>,
    unseen_names: Vec<String>,
    edges: BTreeMap<(usize, usize), f64>,
}

/// One endpoint of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Seen(usize),
    Unseen(usize),
}

impl SemanticGraph {
    /// Assembles a graph from explicit weighted edges.
    ///
    /// Rejects unseen–unseen edges, self loops, duplicate edges and
    /// nonpositive weights. Unseen nodes without edges are allowed here;
    /// [`transition_system`] decides whether the result is usable.
    pub fn from_edges<I>(seen: Vec<String>, unseen: Vec<String>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, f64)>,
    {
        let mut ids = HashMap::new();
        for name in seen.iter().chain(&unseen) {
            if ids.insert(name.clone(), ids.len()).is_some() {
                return Err(if seen.contains(name) && unseen.contains(name) {
                    Error::NameCollision(name.clone())
                } else {
                    Error::DuplicateName(name.clone())
                });
            }
        }
        let p = seen.len();
        let mut graph = Self {
            seen_names: seen,
            unseen_names: unseen,
            edges: BTreeMap::new(),
        };
        for (a, b, w) in edges {
            let invalid = |reason: &str| Error::InvalidEdge {
                a: a.clone(),
                b: b.clone(),
                reason: reason.to_string(),
            };
            let ia = *ids.get(&a).ok_or_else(|| Error::UnknownClass(a.clone()))?;
            let ib = *ids.get(&b).ok_or_else(|| Error::UnknownClass(b.clone()))?;
            if ia == ib {
                return Err(invalid("self loop"));
            }
            if ia >= p && ib >= p {
                return Err(invalid("unseen classes cannot be adjacent"));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(invalid("weight must be finite and positive"));
            }
            if graph.edges.insert((ia.min(ib), ia.max(ib)), w).is_some() {
                return Err(invalid("duplicate edge"));
            }
        }
        Ok(graph)
    }

    pub fn seen_names(&self) -> &[String] {
        &self.seen_names
    }

    pub fn unseen_names(&self) -> &[String] {
        &self.unseen_names
    }

    fn seen_count(&self) -> usize {
        self.seen_names.len()
    }

    fn node(&self, id: usize) -> Node {
        let p = self.seen_count();
        if id < p {
            Node::Seen(id)
        } else {
            Node::Unseen(id - p)
        }
    }

    fn name(&self, id: usize) -> &str {
        match self.node(id) {
            Node::Seen(i) => &self.seen_names[i],
            Node::Unseen(j) => &self.unseen_names[j],
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// All edges as `(a, b, weight)` with `a` the lower node id.
    pub fn edges(&self) -> impl Iterator<Item = (Node, Node, f64)> + '_ {
        self.edges
            .iter()
            .map(|(&(a, b), &w)| (self.node(a), self.node(b), w))
    }

    pub fn weight(&self, a: Node, b: Node) -> f64 {
        let id = |n: Node| match n {
            Node::Seen(i) => i,
            Node::Unseen(j) => self.seen_count() + j,
        };
        let (a, b) = (id(a), id(b));
        self.edges
            .get(&(a.min(b), a.max(b)))
            .copied()
            .unwrap_or(0.0)
    }

    /// Dense `p × p` weights among seen classes.
    pub fn seen_weight_matrix(&self) -> DMatrix<f64> {
        let p = self.seen_count();
        let mut w = DMatrix::zeros(p, p);
        for (&(a, b), &weight) in &self.edges {
            if b < p {
                w[(a, b)] = weight;
                w[(b, a)] = weight;
            }
        }
        w
    }

    /// Number of edges incident to unseen class `j`.
    pub fn unseen_degree(&self, j: usize) -> usize {
        let id = self.seen_count() + j;
        self.edges.keys().filter(|&&(_, b)| b == id).count()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            seen: &'a [String],
            unseen: &'a [String],
            edges: Vec<(&'a str, &'a str, Sig17)>,
        }
        let dump = Dump {
            seen: &self.seen_names,
            unseen: &self.unseen_names,
            edges: self
                .edges
                .iter()
                .map(|(&(a, b), &w)| (self.name(a), self.name(b), Sig17(w)))
                .collect(),
        };
        serde_json::to_string_pretty(&dump).expect("graph dump serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Dump {
            seen: Vec<String>,
            unseen: Vec<String>,
            edges: Vec<(String, String, f64)>,
        }
        let dump: Dump = serde_json::from_str(text)?;
        Self::from_edges(dump.seen, dump.unseen, dump.edges)
    }
}

/// Indices of the `k` entries with the largest similarity. Equal
/// similarities keep input order.
fn top_k(similarities: &[(usize, f64)], k: usize) -> Vec<(usize, f64)> {
    let mut ranked = similarities.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(k);
    ranked
}

fn check_k(k: usize, what: &str) -> Result<()> {
    if k == 0 {
        return Err(Error::Config(format!("{what} must be positive")));
    }
    Ok(())
}

/// Links each seen class to its `k_seen` most similar seen classes, then
/// symmetrizes the directed weights as `(W + Wᵀ) / 2`.
///
/// Negative cosines are clamped to zero and zero-weight edges dropped.
pub fn build_seen_subgraph(seen: &EmbeddingTable, k_seen: usize) -> Result<SemanticGraph> {
    check_k(k_seen, "k_seen")?;
    let p = seen.len();
    if p <= k_seen {
        return Err(Error::TooFewClasses {
            required: k_seen,
            available: p,
        });
    }
    let vectors = seen.vectors();
    let mut similarity = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i + 1..p {
            let s = cosine_similarity(&vectors[i], &vectors[j])?;
            similarity[(i, j)] = s;
            similarity[(j, i)] = s;
        }
    }

    let mut directed = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let candidates: Vec<(usize, f64)> = (0..p)
            .filter(|&j| j != i)
            .map(|j| (j, similarity[(i, j)]))
            .collect();
        for (j, s) in top_k(&candidates, k_seen) {
            directed[(i, j)] = s.max(0.0);
        }
    }

    let mut edges = BTreeMap::new();
    for i in 0..p {
        for j in i + 1..p {
            let w = 0.5 * (directed[(i, j)] + directed[(j, i)]);
            if w > 0.0 {
                edges.insert((i, j), w);
            }
        }
    }
    Ok(SemanticGraph {
        seen_names: seen.names().to_vec(),
        unseen_names: Vec::new(),
        edges,
    })
}

/// Connects every unseen class to its `k_unseen` most similar seen classes,
/// weighted by the clamped cosine similarity.
///
/// `seen` must hold the prototypes the graph was built from, in graph order.
pub fn attach_unseen(
    graph: &SemanticGraph,
    seen: &EmbeddingTable,
    unseen: &EmbeddingTable,
    k_unseen: usize,
) -> Result<SemanticGraph> {
    check_k(k_unseen, "k_unseen")?;
    if seen.names() != graph.seen_names() {
        return Err(Error::OrderingMismatch(
            "seen prototypes do not match the graph's seen classes".into(),
        ));
    }
    let p = graph.seen_count();
    if p < k_unseen {
        return Err(Error::TooFewClasses {
            required: k_unseen - 1,
            available: p,
        });
    }
    let taken: HashSet<&str> = graph
        .seen_names
        .iter()
        .chain(&graph.unseen_names)
        .map(String::as_str)
        .collect();
    for name in unseen.names() {
        if taken.contains(name.as_str()) {
            return Err(Error::NameCollision(name.clone()));
        }
    }

    let mut out = graph.clone();
    for (name, vector) in unseen.iter() {
        let candidates = seen
            .vectors()
            .iter()
            .enumerate()
            .map(|(i, s)| Ok((i, cosine_similarity(vector, s)?)))
            .collect::<Result<Vec<_>>>()?;
        let id = p + out.unseen_names.len();
        let mut attached = false;
        for (i, s) in top_k(&candidates, k_unseen) {
            if s > 0.0 {
                out.edges.insert((i, id), s);
                attached = true;
            }
        }
        if !attached {
            return Err(Error::IsolatedUnseen(name.to_string()));
        }
        out.unseen_names.push(name.to_string());
    }
    Ok(out)
}

/// Builds the full semantic graph in one call.
pub fn build_graph(
    seen: &EmbeddingTable,
    unseen: &EmbeddingTable,
    k_seen: usize,
    k_unseen: usize,
) -> Result<SemanticGraph> {
    let graph = build_seen_subgraph(seen, k_seen)?;
    attach_unseen(&graph, seen, unseen, k_unseen)
}

/// Transient-to-transient block `Q` and transient-to-absorbing block `R`
/// of an absorbing chain. The `0` and `I` blocks are implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSystem {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    seen_names: Vec<String>,
    unseen_names: Vec<String>,
}

impl TransitionSystem {
    /// Validates and wraps a `(Q, R)` pair.
    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        seen_names: Vec<String>,
        unseen_names: Vec<String>,
    ) -> Result<Self> {
        let (p, nq) = (seen_names.len(), unseen_names.len());
        if p == 0 || nq == 0 {
            return Err(Error::EmptySide {
                seen: p,
                unseen: nq,
            });
        }
        if q.shape() != (p, p) || r.shape() != (p, nq) {
            return Err(Error::InvalidTransition(format!(
                "expected Q {p}x{p} and R {p}x{nq}, got Q {:?} and R {:?}",
                q.shape(),
                r.shape()
            )));
        }
        if q.iter()
            .chain(r.iter())
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return Err(Error::InvalidTransition(
                "entries must be finite and nonnegative".into(),
            ));
        }
        for (i, name) in seen_names.iter().enumerate() {
            let sum = q.row(i).sum() + r.row(i).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidTransition(format!(
                    "row `{name}` sums to {sum}"
                )));
            }
        }
        let ts = Self {
            q,
            r,
            seen_names,
            unseen_names,
        };
        if let Some(i) = ts.first_unreachable() {
            return Err(Error::UnreachableAbsorber(ts.seen_names[i].clone()));
        }
        Ok(ts)
    }

    /// First transient state from which no absorbing state can be reached.
    fn first_unreachable(&self) -> Option<usize> {
        let p = self.seen_names.len();
        let mut reaches: Vec<bool> = (0..p)
            .map(|i| self.r.row(i).iter().any(|&x| x > 0.0))
            .collect();
        let mut stack: Vec<usize> = (0..p).filter(|&i| reaches[i]).collect();
        while let Some(j) = stack.pop() {
            for (i, reached) in reaches.iter_mut().enumerate() {
                if !*reached && self.q[(i, j)] > 0.0 {
                    *reached = true;
                    stack.push(i);
                }
            }
        }
        reaches.iter().position(|&r| !r)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn seen_names(&self) -> &[String] {
        &self.seen_names
    }

    pub fn unseen_names(&self) -> &[String] {
        &self.unseen_names
    }

    /// Number of transient (seen) states.
    pub fn transient_count(&self) -> usize {
        self.seen_names.len()
    }

    /// Number of absorbing (unseen) states.
    pub fn absorbing_count(&self) -> usize {
        self.unseen_names.len()
    }
}

/// Row-normalizes each seen node's incident edge weights into `[Q | R]`.
pub fn transition_system(graph: &SemanticGraph) -> Result<TransitionSystem> {
    let (p, nq) = (graph.seen_count(), graph.unseen_names.len());
    if p == 0 || nq == 0 {
        return Err(Error::EmptySide {
            seen: p,
            unseen: nq,
        });
    }
    let mut full = DMatrix::<f64>::zeros(p, p + nq);
    for (&(a, b), &w) in &graph.edges {
        // a < b, so `a` is always a seen node.
        full[(a, b)] = w;
        if b < p {
            full[(b, a)] = w;
        }
    }
    for i in 0..p {
        let mut row = full.row_mut(i);
        let total: f64 = row.sum();
        if total <= 0.0 {
            return Err(Error::DanglingTransient(graph.seen_names[i].clone()));
        }
        row /= total;
    }
    let q = full.columns(0, p).into_owned();
    let r = full.columns(p, nq).into_owned();
    TransitionSystem::new(q, r, graph.seen_names.clone(), graph.unseen_names.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        EmbeddingTable::new(rows.iter().map(|(n, v)| (n.to_string(), v.to_vec()))).unwrap()
    }

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    pub(crate) fn fixture_graph() -> SemanticGraph {
        SemanticGraph::from_edges(
            names(&["y1", "y2"]),
            names(&["z1", "z2"]),
            [
                ("y1".into(), "y2".into(), 1.0),
                ("y1".into(), "z1".into(), 1.0),
                ("y2".into(), "z2".into(), 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn seen_subgraph_three_nodes() {
        // Pairwise cosines, computed by hand:
        //   c01 = 0.9 / sqrt(0.82)          ≈ 0.99388
        //   c02 = 0
        //   c12 = 0.1 / sqrt(0.82)          ≈ 0.11043
        // Directed 1-NN: 0→1, 1→0, 2→1.
        let seen = table(&[("a", &[1.0, 0.0]), ("b", &[0.9, 0.1]), ("c", &[0.0, 1.0])]);
        let g = build_seen_subgraph(&seen, 1).unwrap();
        let c01 = 0.9 / 0.82f64.sqrt();
        let c12 = 0.1 / 0.82f64.sqrt();
        assert_eq!(g.edge_count(), 2);
        assert!((g.weight(Node::Seen(0), Node::Seen(1)) - c01).abs() < 1e-15);
        assert!((g.weight(Node::Seen(1), Node::Seen(2)) - 0.5 * c12).abs() < 1e-15);
        assert_eq!(g.weight(Node::Seen(0), Node::Seen(2)), 0.0);
    }

    #[test]
    fn identical_prototypes_give_unit_edge() {
        let seen = table(&[("a", &[1.0, 2.0]), ("b", &[1.0, 2.0])]);
        let g = build_seen_subgraph(&seen, 1).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.weight(Node::Seen(0), Node::Seen(1)), 1.0);
    }

    #[test]
    fn k_equal_to_p_is_too_few() {
        let seen = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        assert!(matches!(
            build_seen_subgraph(&seen, 2),
            Err(Error::TooFewClasses { .. })
        ));
        assert!(matches!(
            build_seen_subgraph(&seen, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ties_prefer_earlier_classes() {
        // b and c are equally similar to a; a picks b.
        let seen = table(&[
            ("a", &[1.0, 0.0, 0.0]),
            ("b", &[1.0, 1.0, 0.0]),
            ("c", &[1.0, 0.0, 1.0]),
        ]);
        let g = build_seen_subgraph(&seen, 1).unwrap();
        let w = g.seen_weight_matrix();
        assert!(w[(0, 1)] > 0.0);
        // c's own nearest neighbor is a, so a–c survives at half weight.
        assert!((w[(0, 2)] - 0.5 * std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn negative_similarities_are_dropped() {
        let seen = table(&[("a", &[1.0, 0.0]), ("b", &[-1.0, 0.1])]);
        let g = build_seen_subgraph(&seen, 1).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn unseen_attachment() {
        let seen = table(&[("a", &[1.0, 0.0]), ("b", &[0.6, 0.8])]);
        let g = build_seen_subgraph(&seen, 1).unwrap();
        let unseen = table(&[("u", &[1.0, 0.0])]);
        let g2 = attach_unseen(&g, &seen, &unseen, 1).unwrap();
        assert_eq!(g2.weight(Node::Seen(0), Node::Unseen(0)), 1.0);
        assert_eq!(g2.unseen_degree(0), 1);

        let orth = table(&[("u", &[0.0, 0.0, 1.0])]);
        let seen3 = table(&[("a", &[1.0, 0.0, 0.0]), ("b", &[0.0, 1.0, 0.0])]);
        let g3 = build_seen_subgraph(&seen3, 1).unwrap();
        assert!(matches!(
            attach_unseen(&g3, &seen3, &orth, 2),
            Err(Error::IsolatedUnseen(n)) if n == "u"
        ));
    }

    #[test]
    fn exhaustive_attachment() {
        let seen = table(&[
            ("a", &[1.0, 0.1]),
            ("b", &[0.9, 0.3]),
            ("c", &[0.5, 0.5]),
            ("d", &[0.1, 1.0]),
        ]);
        let g = build_seen_subgraph(&seen, 2).unwrap();
        let unseen = table(&[("u", &[1.0, 1.0])]);
        let g2 = attach_unseen(&g, &seen, &unseen, 4).unwrap();
        assert_eq!(g2.unseen_degree(0), 4);
        assert!(matches!(
            attach_unseen(&g, &seen, &unseen, 5),
            Err(Error::TooFewClasses { .. })
        ));
    }

    #[test]
    fn unseen_name_collision() {
        let seen = table(&[("a", &[1.0, 0.0]), ("b", &[0.6, 0.8])]);
        let g = build_seen_subgraph(&seen, 1).unwrap();
        let unseen = table(&[("a", &[1.0, 1.0])]);
        assert!(matches!(
            attach_unseen(&g, &seen, &unseen, 1),
            Err(Error::NameCollision(_))
        ));
    }

    #[test]
    fn fixture_transition_system() {
        let ts = transition_system(&fixture_graph()).unwrap();
        assert_eq!(ts.q(), &dmatrix![0.0, 0.5; 0.5, 0.0]);
        assert_eq!(ts.r(), &dmatrix![0.5, 0.0; 0.0, 0.5]);
    }

    #[test]
    fn single_edge_transition_system() {
        let g = SemanticGraph::from_edges(
            names(&["y"]),
            names(&["z"]),
            [("y".into(), "z".into(), 0.3)],
        )
        .unwrap();
        let ts = transition_system(&g).unwrap();
        assert_eq!(ts.q(), &dmatrix![0.0]);
        assert_eq!(ts.r(), &dmatrix![1.0]);
    }

    #[test]
    fn unreachable_absorber_is_typed() {
        let g = SemanticGraph::from_edges(
            names(&["y1", "y2"]),
            names(&["z"]),
            [("y1".into(), "y2".into(), 1.0)],
        )
        .unwrap();
        assert!(matches!(
            transition_system(&g),
            Err(Error::UnreachableAbsorber(_))
        ));
    }

    #[test]
    fn dangling_and_empty_sides() {
        let g = SemanticGraph::from_edges(
            names(&["y1", "y2"]),
            names(&["z"]),
            [("y1".into(), "z".into(), 1.0)],
        )
        .unwrap();
        assert!(matches!(
            transition_system(&g),
            Err(Error::DanglingTransient(n)) if n == "y2"
        ));
        let empty = SemanticGraph::from_edges(names(&["y"]), vec![], []).unwrap();
        assert!(matches!(
            transition_system(&empty),
            Err(Error::EmptySide { .. })
        ));
    }

    #[test]
    fn from_edges_rejects_bad_edges() {
        let bad = |edges: Vec<(String, String, f64)>| {
            SemanticGraph::from_edges(names(&["y"]), names(&["z1", "z2"]), edges)
        };
        assert!(matches!(
            bad(vec![("z1".into(), "z2".into(), 1.0)]),
            Err(Error::InvalidEdge { .. })
        ));
        assert!(matches!(
            bad(vec![("y".into(), "z1".into(), 0.0)]),
            Err(Error::InvalidEdge { .. })
        ));
        assert!(matches!(
            bad(vec![("y".into(), "q".into(), 1.0)]),
            Err(Error::UnknownClass(_))
        ));
        assert!(matches!(
            SemanticGraph::from_edges(names(&["y"]), names(&["y"]), []),
            Err(Error::NameCollision(_))
        ));
    }

    #[test]
    fn json_dump_round_trips() {
        let g = fixture_graph();
        let text = g.to_json();
        assert!(text.contains("\"edges\""));
        assert_eq!(SemanticGraph::from_json(&text).unwrap(), g);

        let seen = table(&[("a", &[1.0, 0.0]), ("b", &[0.9, 0.1]), ("c", &[0.0, 1.0])]);
        let g = build_seen_subgraph(&seen, 1).unwrap();
        assert_eq!(SemanticGraph::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn transition_system_validation() {
        let seen = names(&["y"]);
        let unseen = names(&["z"]);
        assert!(matches!(
            TransitionSystem::new(dmatrix![0.5], dmatrix![0.4], seen.clone(), unseen.clone()),
            Err(Error::InvalidTransition(_))
        ));
        assert!(matches!(
            TransitionSystem::new(dmatrix![1.0], dmatrix![0.0], seen, unseen),
            Err(Error::UnreachableAbsorber(_))
        ));
    }
}
