//! Directed acyclic graphs over a small node set, with latent confounders,
//! graph mutilation, and d-separation queries.
//!
//! Nodes are indexed densely and adjacency is stored as per-node bitmasks,
//! which keeps a d-separation query at O(edges) and makes graphs cheap
//! enough to build by the million during family enumeration. Latent
//! confounders are explicit nodes with two outgoing edges and no incoming
//! edges, so a single separation routine covers observed and latent
//! structure alike.

use std::fmt;
use std::sync::Arc;

use crate::{Error, Result};

/// Hard cap imposed by the bitmask representation.
pub const MAX_NODES: usize = 64;

/// Node count cap for the path-enumeration oracle.
pub const ORACLE_MAX_NODES: usize = 12;

/// Handle to a node of a specific [`Dag`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An immutable DAG. Queries are read-only and safe to run from many
/// threads at once; mutilation returns a new graph.
#[derive(Clone)]
pub struct Dag {
    labels: Arc<[String]>,
    observed: u64,
    parents: Box<[u64]>,
    children: Box<[u64]>,
}

/// Incremental construction with validation deferred to [`DagBuilder::build`].
#[derive(Default)]
pub struct DagBuilder {
    labels: Vec<String>,
    observed: Vec<bool>,
    edges: Vec<(usize, usize)>,
}

impl DagBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn add(&mut self, label: &str, observed: bool) -> Result<NodeId> {
        if self.labels.iter().any(|l| l == label) {
            return Err(Error::InvalidArgument(format!(
                "duplicate node label `{label}`"
            )));
        }
        if self.labels.len() >= MAX_NODES {
            return Err(Error::InvalidArgument(format!(
                "graph exceeds {MAX_NODES} nodes"
            )));
        }
        self.labels.push(label.to_string());
        self.observed.push(observed);
        Ok(NodeId(self.labels.len() - 1))
    }

    pub fn node(&mut self, label: &str) -> Result<NodeId> {
        self.add(label, true)
    }

    pub fn latent(&mut self, label: &str) -> Result<NodeId> {
        self.add(label, false)
    }

    /// Adds a node if absent, returning the existing id otherwise.
    /// Labels starting with `U_` are treated as latent.
    pub fn node_or_existing(&mut self, label: &str) -> Result<NodeId> {
        if let Some(i) = self.labels.iter().position(|l| l == label) {
            return Ok(NodeId(i));
        }
        self.add(label, !label.starts_with("U_"))
    }

    pub fn edge(&mut self, from: NodeId, to: NodeId) -> &mut Self {
        self.edges.push((from.0, to.0));
        self
    }

    pub fn build(self) -> Result<Dag> {
        let n = self.labels.len();
        let mut parents = vec![0u64; n].into_boxed_slice();
        let mut children = vec![0u64; n].into_boxed_slice();
        for &(f, t) in &self.edges {
            if f >= n || t >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge endpoint out of range: {f} -> {t}"
                )));
            }
            if f == t {
                return Err(Error::InvalidArgument(format!(
                    "self-loop on `{}`",
                    self.labels[f]
                )));
            }
            children[f] |= 1 << t;
            parents[t] |= 1 << f;
        }
        let mut observed = 0u64;
        for (i, &obs) in self.observed.iter().enumerate() {
            if obs {
                observed |= 1 << i;
            }
        }
        let dag = Dag {
            labels: self.labels.into(),
            observed,
            parents,
            children,
        };
        dag.validate()?;
        Ok(dag)
    }
}

impl Dag {
    /// Direct constructor for enumeration code that guarantees the
    /// invariants by construction.
    pub(crate) fn from_parts(
        labels: Arc<[String]>,
        observed: u64,
        parents: Box<[u64]>,
        children: Box<[u64]>,
    ) -> Self {
        Dag {
            labels,
            observed,
            parents,
            children,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.is_acyclic() {
            return Err(Error::InvalidArgument("graph contains a directed cycle".into()));
        }
        for i in 0..self.node_count() {
            if self.observed & (1 << i) != 0 {
                continue;
            }
            if self.parents[i] != 0 {
                return Err(Error::InvalidArgument(format!(
                    "latent node `{}` has incoming edges",
                    self.labels[i]
                )));
            }
            if self.children[i].count_ones() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "latent node `{}` must confound exactly one pair (two outgoing edges)",
                    self.labels[i]
                )));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count()).map(NodeId)
    }

    pub fn node(&self, label: &str) -> Option<NodeId> {
        self.labels.iter().position(|l| l == label).map(NodeId)
    }

    /// Resolves a label, erroring instead of returning `None`.
    pub fn require(&self, label: &str) -> Result<NodeId> {
        self.node(label)
            .ok_or_else(|| Error::InvalidQuery(format!("unknown node `{label}`")))
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.labels[id.0]
    }

    pub fn is_observed(&self, id: NodeId) -> bool {
        self.observed & (1 << id.0) != 0
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.children[from.0] & (1 << to.0) != 0
    }

    /// All edges, sorted by (from, to) index.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for f in 0..self.node_count() {
            let mut m = self.children[f];
            while m != 0 {
                let t = m.trailing_zeros() as usize;
                m &= m - 1;
                out.push((NodeId(f), NodeId(t)));
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(|m| m.count_ones() as usize).sum()
    }

    /// True iff the graph has no directed cycle (iterative source removal).
    pub fn is_acyclic(&self) -> bool {
        let n = self.node_count();
        let mut removed = 0u64;
        let all = if n == MAX_NODES { !0 } else { (1u64 << n) - 1 };
        loop {
            let mut progressed = false;
            for i in 0..n {
                let bit = 1u64 << i;
                if removed & bit == 0 && self.parents[i] & !removed == 0 {
                    removed |= bit;
                    progressed = true;
                }
            }
            if removed == all {
                return true;
            }
            if !progressed {
                return false;
            }
        }
    }

    fn mask_of(&self, ids: &[NodeId]) -> Result<u64> {
        let mut m = 0u64;
        for id in ids {
            if id.0 >= self.node_count() {
                return Err(Error::InvalidQuery(format!(
                    "node id {} out of range for this graph",
                    id.0
                )));
            }
            m |= 1 << id.0;
        }
        Ok(m)
    }

    /// Removes every edge whose source lies in `cut` (the interventional
    /// graph for an intervention on `cut`). Only observed nodes may be cut.
    pub fn mutilate(&self, cut: &[NodeId]) -> Result<Dag> {
        let cut_mask = self.mask_of(cut)?;
        if cut_mask & !self.observed != 0 {
            return Err(Error::InvalidQuery(
                "mutilation cut must contain only observed nodes".into(),
            ));
        }
        Ok(self.mutilate_mask(cut_mask))
    }

    pub(crate) fn mutilate_mask(&self, cut_mask: u64) -> Dag {
        let mut parents = self.parents.clone();
        let mut children = self.children.clone();
        let mut m = cut_mask;
        while m != 0 {
            let i = m.trailing_zeros() as usize;
            m &= m - 1;
            let mut ch = children[i];
            while ch != 0 {
                let c = ch.trailing_zeros() as usize;
                ch &= ch - 1;
                parents[c] &= !(1u64 << i);
            }
            children[i] = 0;
        }
        Dag {
            labels: self.labels.clone(),
            observed: self.observed,
            parents,
            children,
        }
    }

    /// `set` together with all its ancestors.
    fn ancestors_of_set(&self, set: u64) -> u64 {
        let mut acc = set;
        loop {
            let mut next = acc;
            let mut m = acc;
            while m != 0 {
                let i = m.trailing_zeros() as usize;
                m &= m - 1;
                next |= self.parents[i];
            }
            if next == acc {
                return acc;
            }
            acc = next;
        }
    }

    /// Per-node descendant closure (each set includes the node itself).
    fn descendant_closures(&self) -> Vec<u64> {
        let n = self.node_count();
        let mut desc: Vec<u64> = (0..n).map(|i| (1u64 << i) | self.children[i]).collect();
        loop {
            let mut changed = false;
            for i in 0..n {
                let mut next = desc[i];
                let mut m = self.children[i];
                while m != 0 {
                    let c = m.trailing_zeros() as usize;
                    m &= m - 1;
                    next |= desc[c];
                }
                if next != desc[i] {
                    desc[i] = next;
                    changed = true;
                }
            }
            if !changed {
                return desc;
            }
        }
    }

    fn check_query_sets(&self, a: &[NodeId], b: &[NodeId], c: &[NodeId]) -> Result<(u64, u64, u64)> {
        let (a, b, c) = (self.mask_of(a)?, self.mask_of(b)?, self.mask_of(c)?);
        if a & b != 0 || a & c != 0 || b & c != 0 {
            return Err(Error::InvalidQuery(
                "query sets must be pairwise disjoint".into(),
            ));
        }
        Ok((a, b, c))
    }

    /// True iff every path between `a` and `b` is blocked by `c`.
    ///
    /// Chains and forks are blocked when their middle node is conditioned
    /// on; colliders are blocked unless the collider or one of its
    /// descendants is conditioned on. Sets must be pairwise disjoint.
    pub fn is_dseparated(&self, a: &[NodeId], b: &[NodeId], c: &[NodeId]) -> Result<bool> {
        let (a, b, c) = self.check_query_sets(a, b, c)?;
        Ok(self.dsep_masks(a, b, c))
    }

    /// Bitmask entry point for hot loops; sets are assumed valid.
    ///
    /// Reachability formulation: walk (node, direction) states from `a`,
    /// where `up` states may always turn around at an unconditioned node
    /// and `down` states pass colliders only when the node is an ancestor
    /// of the conditioning set.
    pub(crate) fn dsep_masks(&self, a: u64, b: u64, z: u64) -> bool {
        if a == 0 || b == 0 {
            return true;
        }
        let anc_z = self.ancestors_of_set(z);
        let mut vis_up = 0u64;
        let mut vis_down = 0u64;
        // (node, arrived moving up). Sources start as `up` so both edge
        // directions are explored.
        let mut stack: Vec<(usize, bool)> = Vec::with_capacity(self.node_count() * 2);
        let mut m = a;
        while m != 0 {
            let i = m.trailing_zeros() as usize;
            m &= m - 1;
            stack.push((i, true));
        }
        while let Some((v, up)) = stack.pop() {
            let bit = 1u64 << v;
            if up {
                if vis_up & bit != 0 {
                    continue;
                }
                vis_up |= bit;
                if z & bit == 0 {
                    if b & bit != 0 {
                        return false;
                    }
                    let mut p = self.parents[v] & !vis_up;
                    while p != 0 {
                        let i = p.trailing_zeros() as usize;
                        p &= p - 1;
                        stack.push((i, true));
                    }
                    let mut ch = self.children[v] & !vis_down;
                    while ch != 0 {
                        let i = ch.trailing_zeros() as usize;
                        ch &= ch - 1;
                        stack.push((i, false));
                    }
                }
            } else {
                if vis_down & bit != 0 {
                    continue;
                }
                vis_down |= bit;
                if z & bit == 0 {
                    if b & bit != 0 {
                        return false;
                    }
                    let mut ch = self.children[v] & !vis_down;
                    while ch != 0 {
                        let i = ch.trailing_zeros() as usize;
                        ch &= ch - 1;
                        stack.push((i, false));
                    }
                }
                if anc_z & bit != 0 {
                    // Collider on an active trail: both edges point in.
                    let mut p = self.parents[v] & !vis_up;
                    while p != 0 {
                        let i = p.trailing_zeros() as usize;
                        p &= p - 1;
                        stack.push((i, true));
                    }
                }
            }
        }
        true
    }

    /// Path-enumeration oracle: lists every simple undirected path between
    /// the sets and applies the blocking rules path by path. Exponential;
    /// guarded to small graphs. Kept independent of [`Dag::is_dseparated`]
    /// so the two can check each other.
    pub fn dsep_bruteforce_oracle(&self, a: &[NodeId], b: &[NodeId], c: &[NodeId]) -> Result<bool> {
        if self.node_count() > ORACLE_MAX_NODES {
            return Err(Error::InvalidQuery(format!(
                "oracle refuses graphs with more than {ORACLE_MAX_NODES} nodes"
            )));
        }
        let (a, b, z) = self.check_query_sets(a, b, c)?;
        if a == 0 || b == 0 {
            return Ok(true);
        }
        let desc = self.descendant_closures();
        let n = self.node_count();

        // DFS over simple paths; `path` holds node indices.
        let mut path: Vec<usize> = Vec::with_capacity(n);
        let mut on_path = 0u64;
        let mut starts: Vec<usize> = (0..n).filter(|i| a & (1 << i) != 0).collect();
        starts.sort_unstable();

        fn path_open(dag: &Dag, path: &[usize], z: u64, desc: &[u64]) -> bool {
            for k in 1..path.len() - 1 {
                let (prev, v, next) = (path[k - 1], path[k], path[k + 1]);
                let into_from_prev = dag.children[prev] & (1 << v) != 0;
                let into_from_next = dag.children[next] & (1 << v) != 0;
                let blocked = if into_from_prev && into_from_next {
                    desc[v] & z == 0
                } else {
                    z & (1 << v) != 0
                };
                if blocked {
                    return false;
                }
            }
            true
        }

        fn dfs(
            dag: &Dag,
            v: usize,
            b: u64,
            z: u64,
            desc: &[u64],
            path: &mut Vec<usize>,
            on_path: &mut u64,
        ) -> bool {
            path.push(v);
            *on_path |= 1 << v;
            let found = if b & (1 << v) != 0 {
                path_open(dag, path, z, desc)
            } else {
                let mut adj = (dag.parents[v] | dag.children[v]) & !*on_path;
                let mut hit = false;
                while adj != 0 {
                    let w = adj.trailing_zeros() as usize;
                    adj &= adj - 1;
                    if dfs(dag, w, b, z, desc, path, on_path) {
                        hit = true;
                        break;
                    }
                }
                hit
            };
            path.pop();
            *on_path &= !(1u64 << v);
            found
        }

        for s in starts {
            if dfs(self, s, b, z, &desc, &mut path, &mut on_path) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Serializes to the plain-text edge-list format accepted by
    /// [`Dag::parse`]. Isolated nodes appear as bare label lines.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let mut connected = 0u64;
        for (f, t) in self.edges() {
            connected |= (1 << f.0) | (1 << t.0);
            out.push_str(&format!("{} -> {}\n", self.labels[f.0], self.labels[t.0]));
        }
        for i in 0..self.node_count() {
            if connected & (1 << i) == 0 {
                out.push_str(&self.labels[i]);
                out.push('\n');
            }
        }
        out
    }

    /// Parses the edge-list format: one `from -> to` pair per line,
    /// `#`-prefixed comments, bare labels for isolated nodes. Labels
    /// starting with `U_` become latent nodes.
    pub fn parse(text: &str) -> Result<Dag> {
        let mut b = DagBuilder::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some((from, to)) = line.split_once("->") {
                let (from, to) = (from.trim(), to.trim());
                if from.is_empty() || to.is_empty() || to.contains("->") {
                    return Err(Error::Parse(format!(
                        "line {}: expected `from -> to`, got `{raw}`",
                        lineno + 1
                    )));
                }
                let f = b.node_or_existing(from)?;
                let t = b.node_or_existing(to)?;
                b.edge(f, t);
            } else if line.split_whitespace().count() == 1 {
                b.node_or_existing(line)?;
            } else {
                return Err(Error::Parse(format!(
                    "line {}: expected `from -> to` or a bare node label, got `{raw}`",
                    lineno + 1
                )));
            }
        }
        b.build()
    }
}

impl fmt::Debug for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dag {{ ")?;
        for (from, to) in self.edges() {
            write!(f, "{}->{} ", self.label(from), self.label(to))?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn chain3() -> Dag {
        Dag::parse("A -> B\nB -> C").unwrap()
    }

    fn collider3() -> Dag {
        Dag::parse("A -> B\nC -> B").unwrap()
    }

    /// Figure-1-style fixture with explicit X.
    fn figure1() -> Dag {
        Dag::parse(
            "Z1 -> D\nD -> M\nM -> Y\nD -> Y\nD -> Z2\nZ2 -> M\n\
             X -> Z1\nX -> D\nX -> M\nX -> Y\nX -> Z2",
        )
        .unwrap()
    }

    fn ids(g: &Dag, labels: &[&str]) -> Vec<NodeId> {
        labels.iter().map(|l| g.node(l).unwrap()).collect()
    }

    #[test]
    fn acyclicity() {
        assert!(DagBuilder::new().build().unwrap().is_acyclic());
        assert!(figure1().is_acyclic());
        let mut b = DagBuilder::new();
        let a = b.node("A").unwrap();
        let c = b.node("B").unwrap();
        b.edge(a, c).edge(c, a);
        assert!(b.build().is_err());
    }

    #[test]
    fn chain_and_collider_rules() {
        let g = chain3();
        let (a, b, c) = (ids(&g, &["A"]), ids(&g, &["C"]), ids(&g, &["B"]));
        assert!(g.is_dseparated(&a, &b, &c).unwrap());
        assert!(!g.is_dseparated(&a, &b, &[]).unwrap());

        let g = collider3();
        let (a, b, c) = (ids(&g, &["A"]), ids(&g, &["C"]), ids(&g, &["B"]));
        assert!(g.is_dseparated(&a, &b, &[]).unwrap());
        assert!(!g.is_dseparated(&a, &b, &c).unwrap());
    }

    #[test]
    fn collider_descendant_opens_path() {
        let g = Dag::parse("A -> B\nC -> B\nB -> E").unwrap();
        let (a, b) = (ids(&g, &["A"]), ids(&g, &["C"]));
        assert!(g.is_dseparated(&a, &b, &[]).unwrap());
        assert!(!g.is_dseparated(&a, &b, &ids(&g, &["E"])).unwrap());
    }

    #[test]
    fn figure1_tia_holds() {
        let g = figure1();
        assert!(g
            .is_dseparated(&ids(&g, &["Y"]), &ids(&g, &["Z1"]), &ids(&g, &["D", "X"]))
            .unwrap());
    }

    #[test]
    fn mbias_opens_on_collider_conditioning() {
        // D <- Z1 <- U_Z1Z2 -> Z2 <- U_MZ2 -> M, conditioning on Z2.
        let g = Dag::parse(
            "Z1 -> D\nU_Z1Z2 -> Z1\nU_Z1Z2 -> Z2\nU_MZ2 -> Z2\nU_MZ2 -> M",
        )
        .unwrap();
        let (d, m) = (ids(&g, &["D"]), ids(&g, &["M"]));
        assert!(g.is_dseparated(&d, &m, &[]).unwrap());
        assert!(!g.is_dseparated(&d, &m, &ids(&g, &["Z2"])).unwrap());
    }

    #[test]
    fn overlapping_sets_rejected() {
        let g = chain3();
        let a = ids(&g, &["A"]);
        assert!(matches!(
            g.is_dseparated(&a, &a, &[]),
            Err(Error::InvalidQuery(_))
        ));
        assert!(matches!(
            g.dsep_bruteforce_oracle(&a, &a, &[]),
            Err(Error::InvalidQuery(_))
        ));
    }

    #[test]
    fn mutilation_basics() {
        let g = chain3();
        let cut = g.mutilate(&ids(&g, &["A"])).unwrap();
        assert_eq!(cut.edge_count(), 1);
        assert!(cut.has_edge(g.node("B").unwrap(), g.node("C").unwrap()));

        let same = g.mutilate(&[]).unwrap();
        assert_eq!(same.edges(), g.edges());

        // Figure-1 intervention on {D, M} drops exactly the edges out of D and M.
        let g = figure1();
        let gdm = g.mutilate(&ids(&g, &["D", "M"])).unwrap();
        assert_eq!(gdm.edge_count(), g.edge_count() - 4);
        assert!(!gdm.has_edge(g.node("D").unwrap(), g.node("M").unwrap()));
        assert!(!gdm.has_edge(g.node("M").unwrap(), g.node("Y").unwrap()));

        assert!(g.mutilate(&[NodeId(99)]).is_err());
    }

    #[test]
    fn latent_validation() {
        // A latent with one outgoing edge is rejected.
        assert!(Dag::parse("U_AB -> A").is_err());
        assert!(Dag::parse("U_AB -> A\nU_AB -> B").is_ok());
        assert!(Dag::parse("A -> U_AB\nU_AB -> B\nU_AB -> C").is_err());
    }

    #[test]
    fn parse_roundtrip_and_errors() {
        let g = figure1();
        let again = Dag::parse(&g.to_edge_list()).unwrap();
        assert_eq!(g.edge_count(), again.edge_count());
        for (f, t) in g.edges() {
            let (f2, t2) = (
                again.node(g.label(f)).unwrap(),
                again.node(g.label(t)).unwrap(),
            );
            assert!(again.has_edge(f2, t2));
        }
        assert!(Dag::parse("A -> ").is_err());
        assert!(Dag::parse("A B C").is_err());
        let with_comment = Dag::parse("# top\nA -> B # trailing\n\nC\n").unwrap();
        assert_eq!(with_comment.node_count(), 3);
    }

    #[test]
    fn oracle_guard() {
        let text: String = (0..13).map(|i| format!("N{i}\n")).collect();
        let g = Dag::parse(&text).unwrap();
        assert!(g
            .dsep_bruteforce_oracle(&[NodeId(0)], &[NodeId(1)], &[])
            .is_err());
    }

    /// Random DAG over `n` observed nodes plus a few latent pair confounders.
    pub(crate) fn random_dag(rng: &mut ChaCha12Rng, n_observed: usize, n_latent: usize) -> Dag {
        let mut b = DagBuilder::new();
        let obs: Vec<NodeId> = (0..n_observed)
            .map(|i| b.node(&format!("V{i}")).unwrap())
            .collect();
        for j in 0..n_observed {
            for i in 0..j {
                if rng.random_bool(0.4) {
                    b.edge(obs[i], obs[j]);
                }
            }
        }
        for k in 0..n_latent {
            let i = rng.random_range(0..n_observed);
            let mut j = rng.random_range(0..n_observed - 1);
            if j >= i {
                j += 1;
            }
            let u = b.latent(&format!("U_{k}")).unwrap();
            b.edge(u, obs[i]);
            b.edge(u, obs[j]);
        }
        b.build().unwrap()
    }

    /// Draws disjoint (a, b, c) subsets of the observed nodes.
    pub(crate) fn random_query(
        rng: &mut ChaCha12Rng,
        g: &Dag,
    ) -> (Vec<NodeId>, Vec<NodeId>, Vec<NodeId>) {
        let observed: Vec<NodeId> = g.nodes().filter(|&i| g.is_observed(i)).collect();
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut c = Vec::new();
        for &v in &observed {
            match rng.random_range(0..4u8) {
                0 => a.push(v),
                1 => b.push(v),
                2 => c.push(v),
                _ => {}
            }
        }
        if a.is_empty() {
            a.push(observed[0]);
            b.retain(|&v| v != observed[0]);
            c.retain(|&v| v != observed[0]);
        }
        if b.is_empty() {
            let v = *observed.last().unwrap();
            if !a.contains(&v) {
                b.push(v);
                c.retain(|&x| x != v);
            } else if observed.len() >= 2 {
                let v = observed[observed.len() - 2];
                if !a.contains(&v) {
                    b.push(v);
                    c.retain(|&x| x != v);
                }
            }
        }
        (a, b, c)
    }

    #[test]
    fn oracle_agrees_on_random_graphs() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..200 {
            let g = random_dag(&mut rng, 6, 2);
            for _ in 0..10 {
                let (a, b, c) = random_query(&mut rng, &g);
                if b.is_empty() {
                    continue;
                }
                let fast = g.is_dseparated(&a, &b, &c).unwrap();
                let slow = g.dsep_bruteforce_oracle(&a, &b, &c).unwrap();
                assert_eq!(fast, slow, "disagreement on {g:?} a={a:?} b={b:?} c={c:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn symmetry_and_mutilation_monotonicity(seed in 0u64..1000) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let g = random_dag(&mut rng, 6, 2);
            let (a, b, c) = random_query(&mut rng, &g);
            prop_assume!(!b.is_empty());
            let sep = g.is_dseparated(&a, &b, &c).unwrap();
            prop_assert_eq!(sep, g.is_dseparated(&b, &a, &c).unwrap());

            // Removing edges cannot open a path.
            let observed: Vec<NodeId> = g.nodes().filter(|&i| g.is_observed(i)).collect();
            let cut: Vec<NodeId> = observed
                .into_iter()
                .filter(|_| rng.random_bool(0.5))
                .collect();
            let cut_g = g.mutilate(&cut).unwrap();
            prop_assert!(cut_g.is_acyclic());
            if sep {
                prop_assert!(cut_g.is_dseparated(&a, &b, &c).unwrap());
            }
        }
    }
}
