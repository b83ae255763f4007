//! Named fixture graphs with explicit `X` (and `W`) nodes.
//!
//! These reproduce the drawn causal models used to illustrate the
//! theorems. Latent noise terms that point at a single node are omitted —
//! they can never lie on a path between observed nodes — while latent
//! pairwise confounders are kept as `U_<a><b>` nodes.
//!
//! `figure5` omits the drawn `Z1 -> W` edge: with it, `Z1 -> W -> Y` is an
//! open path given `{D, X}`, so neither the identifying assumptions nor
//! the testable implications of the post-treatment setup hold on the
//! drawn graph. The variant without the edge is the model on which both
//! sides of the equivalence are satisfied; `figure5-drawn` keeps the edge
//! for the both-sides-fail branch.

use std::collections::BTreeMap;

use crate::graph::Dag;
use crate::{Error, Result};

use super::queries::{check_query, query_table};

pub const FIGURE1: &str = "\
# Baseline mediation model: both the identifying assumptions and the
# testable implications hold.
Z1 -> D
D -> M
M -> Y
D -> Y
D -> Z2
Z2 -> M
X -> Z1
X -> D
X -> M
X -> Y
X -> Z2
";

pub const FIGURE2_LEFT: &str = "\
# Z1 directly affects Z2 while Z2 affects M: conditioning on Z2 is
# required, and the baseline assumptions on the treatment fail.
Z1 -> D
Z1 -> Z2
D -> M
M -> Y
D -> Y
D -> Z2
Z2 -> M
X -> Z1
X -> D
X -> M
X -> Y
X -> Z2
";

pub const FIGURE2_RIGHT: &str = "\
# Z2 is linked to M only through a latent confounder: conditioning on the
# collider Z2 now opens a biasing path (M-bias), so the Z2-conditioned
# implications fail while the baseline ones hold.
Z1 -> D
Z1 -> Z2
D -> M
M -> Y
D -> Y
D -> Z2
X -> Z1
X -> D
X -> M
X -> Y
X -> Z2
U_Z1Z2 -> Z1
U_Z1Z2 -> Z2
U_MZ2 -> M
U_MZ2 -> Z2
";

pub const FIGURE5: &str = "\
# Pre- and post-treatment covariates: W is affected by D and X and
# affects M, Y, and Z2.
Z1 -> D
D -> M
M -> Y
D -> Y
D -> Z2
D -> W
Z2 -> M
W -> Z2
W -> M
W -> Y
X -> Z1
X -> D
X -> M
X -> Y
X -> Z2
X -> W
";

pub const FIGURE5_DRAWN: &str = "\
# As figure5 but with the additional Z1 -> W edge, which opens
# Z1 -> W -> Y given {D, X}: both sides of the equivalence fail.
Z1 -> D
Z1 -> W
D -> M
M -> Y
D -> Y
D -> Z2
D -> W
Z2 -> M
W -> Z2
W -> M
W -> Y
X -> Z1
X -> D
X -> M
X -> Y
X -> Z2
X -> W
";

pub const FIXTURE_NAMES: [&str; 5] = [
    "figure1",
    "figure2-left",
    "figure2-right",
    "figure5",
    "figure5-drawn",
];

pub fn fixture_text(name: &str) -> Result<&'static str> {
    match name {
        "figure1" => Ok(FIGURE1),
        "figure2-left" => Ok(FIGURE2_LEFT),
        "figure2-right" => Ok(FIGURE2_RIGHT),
        "figure5" => Ok(FIGURE5),
        "figure5-drawn" => Ok(FIGURE5_DRAWN),
        _ => Err(Error::InvalidArgument(format!(
            "unknown fixture `{name}` (expected one of {})",
            FIXTURE_NAMES.join(", ")
        ))),
    }
}

pub fn fixture(name: &str) -> Result<Dag> {
    Dag::parse(fixture_text(name)?)
}

/// Evaluates every assumption and testable implication of the fixture's
/// setup, keyed by query id.
pub fn check_fixture(name: &str) -> Result<BTreeMap<String, bool>> {
    let g = fixture(name)?;
    let with_w = name.starts_with("figure5");
    let ids: &[&str] = if with_w {
        &[
            "A1m", "A4", "A5m", "A6a", "A6b", "A7m", "A8a", "A8b", "A9m", "TIa", "TIb", "TIe",
        ]
    } else {
        &[
            "A1", "A4", "A5", "A6a", "A6b", "A7", "A8a", "A8b", "A9", "A6am", "A6bm", "A8am",
            "A8bm", "TIa", "TIam", "TIb", "TIbm", "TIc", "TId",
        ]
    };
    let table = query_table(true, with_w);
    let mut out = BTreeMap::new();
    for id in ids {
        let q = table
            .iter()
            .find(|q| q.id == *id)
            .ok_or_else(|| Error::InvalidQuery(format!("unknown query id `{id}`")))?;
        out.insert(id.to_string(), check_query(&g, q)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DagBuilder;
    use crate::theorems::queries::query;

    #[test]
    fn unknown_fixture_rejected() {
        assert!(fixture("figure9").is_err());
        assert!(check_fixture("figure9").is_err());
    }

    #[test]
    fn figure1_satisfies_baseline_setup() {
        let checks = check_fixture("figure1").unwrap();
        for id in ["A1", "A4", "A5", "A6a", "A6b", "A7", "A8a", "A8b", "A9"] {
            assert!(checks[id], "{id} should hold on figure1");
        }
        for id in ["TIa", "TIb", "TIc"] {
            assert!(checks[id], "{id} should hold on figure1");
        }
    }

    #[test]
    fn figure2_left_violates_treatment_exogeneity_but_passes_z2_setup() {
        let checks = check_fixture("figure2-left").unwrap();
        assert!(!checks["A6b"], "A6b should fail on figure2-left");
        assert!(!checks["TIb"], "TIb should fail on figure2-left");
        for id in ["A6am", "A6bm", "A8am", "A8bm", "TIam", "TIbm", "TIc", "TId"] {
            assert!(checks[id], "{id} should hold on figure2-left");
        }
    }

    #[test]
    fn figure2_right_mbias() {
        let checks = check_fixture("figure2-right").unwrap();
        // Baseline setup holds ...
        for id in ["A6a", "A6b", "A7", "A8a", "A8b", "A9", "TIa", "TIb", "TIc"] {
            assert!(checks[id], "{id} should hold on figure2-right");
        }
        // ... but conditioning on the collider Z2 breaks the alternative one.
        assert!(!checks["TIam"], "TIam should fail on figure2-right");
        assert!(!checks["A6bm"], "A6bm should fail on figure2-right");

        // The collider path itself: D and M are d-connected given {X, Z2}.
        let g = fixture("figure2-right").unwrap();
        let (d, m) = (g.require("D").unwrap(), g.require("M").unwrap());
        let given = [g.require("X").unwrap(), g.require("Z2").unwrap()];
        assert!(!g.is_dseparated(&[d], &[m], &given).unwrap());
    }

    #[test]
    fn figure5_satisfies_posttreatment_setup() {
        let checks = check_fixture("figure5").unwrap();
        for (id, v) in &checks {
            assert!(*v, "{id} should hold on figure5");
        }
        // The drawn variant fails on both sides of the equivalence.
        let drawn = check_fixture("figure5-drawn").unwrap();
        assert!(!drawn["TIa"]);
        assert!(!drawn["TIb"]);
        assert!(!drawn["A8a"]);
        assert!(drawn["TIe"]);
    }

    #[test]
    fn figure1_with_outcome_confounder_fails_tia() {
        // Adding a latent parent of both D and Y d-connects Y and Z1 given
        // {D, X} through the conditioned collider D.
        let g = fixture("figure1").unwrap();
        let mut b = DagBuilder::new();
        let mut ids = std::collections::HashMap::new();
        for n in g.nodes() {
            ids.insert(g.label(n).to_string(), b.node(g.label(n)).unwrap());
        }
        for (f, t) in g.edges() {
            b.edge(ids[g.label(f)], ids[g.label(t)]);
        }
        let u = b.latent("U_DY").unwrap();
        b.edge(u, ids["D"]);
        b.edge(u, ids["Y"]);
        let g = b.build().unwrap();

        let q = query("TIa", true).unwrap();
        assert!(!check_query(&g, &q).unwrap());
        // The oracle agrees on this graph.
        let (y, z1) = (g.require("Y").unwrap(), g.require("Z1").unwrap());
        let given = [g.require("D").unwrap(), g.require("X").unwrap()];
        assert!(!g.dsep_bruteforce_oracle(&[y], &[z1], &given).unwrap());
    }
}
