//! The assumption and testable-implication catalogue.
//!
//! Each entry translates one identifying assumption or testable implication
//! into a structural or separation condition on a graph: a d-separation or
//! d-connection between two node sets given a conditioning set, evaluated
//! either on the full graph or on an interventional graph with the edges
//! out of `D` (or `D` and `M`) removed. The causal-structure assumption is
//! a forbidden-edge check rather than a separation.

use crate::graph::Dag;
use crate::{Error, Result};

/// Which graph a query is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    /// The graph as given.
    Full,
    /// Edges out of `D` removed.
    CutD,
    /// Edges out of `D` and `M` removed.
    CutDm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    DSeparated,
    DConnected,
    /// None of the listed directed edges may be present.
    EdgesAbsent,
}

/// One assumption or testable implication as a checkable graph condition.
#[derive(Debug, Clone)]
pub struct QuerySpec {
    pub id: &'static str,
    pub graph_kind: GraphKind,
    pub relation: Relation,
    pub left: Vec<&'static str>,
    pub right: Vec<&'static str>,
    pub given: Vec<&'static str>,
    /// Used only by [`Relation::EdgesAbsent`].
    pub pairs: Vec<(&'static str, &'static str)>,
}

/// Directed edges ruled out by the causal-structure assumption among
/// `{Y, D, M, Z1, Z2, X}`. `Y` has no outgoing edges at all; `M` may only
/// affect `Y`; `Z2` may only affect `M` and `Y`; `D` may not affect `X`
/// or `Z1`.
pub const FORBIDDEN_EDGES: &[(&str, &str)] = &[
    ("Y", "D"),
    ("Y", "M"),
    ("Y", "X"),
    ("Y", "Z1"),
    ("Y", "Z2"),
    ("M", "D"),
    ("M", "X"),
    ("M", "Z1"),
    ("M", "Z2"),
    ("Z2", "D"),
    ("Z2", "X"),
    ("Z2", "Z1"),
    ("D", "X"),
    ("D", "Z1"),
];

/// Additional forbidden edges once post-treatment covariates `W` exist.
/// `W` is realized after the treatment and before the mediator: `M` (and
/// downstream `Y`, `Z2`) cannot affect it, and it cannot reach back to the
/// pre-treatment variables `D`, `Z1`, `X`. It may be affected by `D`, `Z1`,
/// and `X`, and may itself affect `M`, `Y`, and `Z2`.
pub const FORBIDDEN_EDGES_W: &[(&str, &str)] = &[
    ("M", "W"),
    ("Y", "W"),
    ("Z2", "W"),
    ("W", "D"),
    ("W", "Z1"),
    ("W", "X"),
];

fn sep(
    id: &'static str,
    kind: GraphKind,
    left: &'static str,
    right: &'static str,
    given: &[&'static str],
) -> QuerySpec {
    QuerySpec {
        id,
        graph_kind: kind,
        relation: Relation::DSeparated,
        left: vec![left],
        right: vec![right],
        given: given.to_vec(),
        pairs: Vec::new(),
    }
}

fn conn(
    id: &'static str,
    left: &'static str,
    right: &'static str,
    given: &[&'static str],
) -> QuerySpec {
    QuerySpec {
        relation: Relation::DConnected,
        ..sep(id, GraphKind::Full, left, right, given)
    }
}

fn structural(id: &'static str, pairs: &[(&'static str, &'static str)]) -> QuerySpec {
    QuerySpec {
        id,
        graph_kind: GraphKind::Full,
        relation: Relation::EdgesAbsent,
        left: Vec::new(),
        right: Vec::new(),
        given: Vec::new(),
        pairs: pairs.to_vec(),
    }
}

/// The full catalogue.
///
/// With `explicit_x` the conditioning sets carry `X` (fixture graphs);
/// without it `X` is kept implicit, which is how the enumeration family is
/// built (every condition holds conditionally on `X`, so the node can be
/// dropped). `with_w` adds the entries that involve post-treatment
/// covariates.
pub fn query_table(explicit_x: bool, with_w: bool) -> Vec<QuerySpec> {
    use GraphKind::*;
    let x: &[&str] = if explicit_x { &["X"] } else { &[] };
    let g = |rest: &[&'static str]| -> Vec<&'static str> {
        x.iter().chain(rest.iter()).copied().collect()
    };
    let mut t = vec![
        structural("A1", FORBIDDEN_EDGES),
        conn("A4", "D", "Z1", &g(&[])),
        conn("A5", "M", "Z2", &g(&["D"])),
        sep("A6a", CutDm, "Y", "D", &g(&[])),
        sep("A6b", CutD, "M", "D", &g(&[])),
        sep("A6am", CutDm, "Y", "D", &g(&["Z2"])),
        sep("A6bm", CutD, "M", "D", &g(&["Z2"])),
        sep("A7", CutDm, "Y", "M", &g(&["D"])),
        sep("A8a", CutDm, "Y", "Z1", &g(&[])),
        sep("A8b", CutD, "M", "Z1", &g(&[])),
        sep("A8am", CutDm, "Y", "Z1", &g(&["Z2"])),
        sep("A8bm", CutD, "M", "Z1", &g(&["Z2"])),
        sep("A9", CutDm, "Y", "Z2", &g(&["D"])),
        sep("TIa", Full, "Y", "Z1", &g(&["D"])),
        sep("TIam", Full, "Y", "Z1", &g(&["D", "Z2"])),
        sep("TIb", Full, "M", "Z1", &g(&["D"])),
        sep("TIbm", Full, "M", "Z1", &g(&["D", "Z2"])),
        sep("TIc", Full, "Y", "Z2", &g(&["D", "M"])),
        sep("TId", Full, "Y", "Z1", &g(&["D", "M"])),
    ];
    if with_w {
        let pairs_w: Vec<_> = FORBIDDEN_EDGES
            .iter()
            .chain(FORBIDDEN_EDGES_W.iter())
            .copied()
            .collect();
        t.push(QuerySpec {
            pairs: pairs_w,
            ..structural("A1m", &[])
        });
        t.push(conn("A5m", "M", "Z2", &g(&["D", "W"])));
        t.push(sep("A7m", CutDm, "Y", "M", &g(&["D", "W"])));
        t.push(sep("A9m", CutDm, "Y", "Z2", &g(&["D", "W"])));
        t.push(sep("TIe", Full, "Y", "Z2", &g(&["D", "M", "W"])));
    }
    t
}

/// Looks up one entry of [`query_table`] by id.
pub fn query(id: &str, explicit_x: bool) -> Result<QuerySpec> {
    query_table(explicit_x, true)
        .into_iter()
        .find(|q| q.id == id)
        .ok_or_else(|| Error::InvalidQuery(format!("unknown query id `{id}`")))
}

/// Evaluates a query on a graph, mutilating per the query's graph kind.
///
/// Structural queries skip pairs whose endpoints are absent (a missing node
/// trivially has no outgoing edges); separation queries require every named
/// node to exist.
pub fn check_query(g: &Dag, q: &QuerySpec) -> Result<bool> {
    if q.relation == Relation::EdgesAbsent {
        for (f, t) in &q.pairs {
            if let (Some(f), Some(t)) = (g.node(f), g.node(t)) {
                if g.has_edge(f, t) {
                    return Ok(false);
                }
            }
        }
        return Ok(true);
    }
    let resolve = |labels: &[&str]| -> Result<Vec<_>> {
        labels.iter().map(|l| g.require(l)).collect()
    };
    let (left, right, given) = (resolve(&q.left)?, resolve(&q.right)?, resolve(&q.given)?);
    let target = match q.graph_kind {
        GraphKind::Full => None,
        GraphKind::CutD => Some(g.mutilate(&[g.require("D")?])?),
        GraphKind::CutDm => Some(g.mutilate(&[g.require("D")?, g.require("M")?])?),
    };
    let target = target.as_ref().unwrap_or(g);
    let sep = target.is_dseparated(&left, &right, &given)?;
    Ok(match q.relation {
        Relation::DSeparated => sep,
        Relation::DConnected => !sep,
        Relation::EdgesAbsent => unreachable!(),
    })
}
