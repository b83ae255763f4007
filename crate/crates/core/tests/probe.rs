// Temporary probe for the full-family verification counts.
use identest::theorems::{verify_theorem, verify_theorem3_reduced, Theorem};

#[test]
fn probe_all() {
    for t in [Theorem::T1, Theorem::T2, Theorem::L1a, Theorem::L1b] {
        let r = verify_theorem(t);
        println!(
            "{}: family={} pre={} both={} neither={} cex={} elapsed={:.2?}",
            r.theorem,
            r.family_size,
            r.satisfying_preconditions,
            r.both_sides_hold,
            r.neither_side_holds,
            r.counterexample_count,
            r.elapsed
        );
        for c in r.counterexamples.iter().take(3) {
            println!("  cex id={}:\n{}", c.graph_id, c.edges);
        }
        assert!(r.counts_consistent());
    }
    let r = verify_theorem3_reduced(2).unwrap();
    println!(
        "{}: family={} pre={} both={} neither={} cex={} elapsed={:.2?}",
        r.theorem,
        r.family_size,
        r.satisfying_preconditions,
        r.both_sides_hold,
        r.neither_side_holds,
        r.counterexample_count,
        r.elapsed
    );
    for c in r.counterexamples.iter().take(3) {
        println!("  cex id={}:\n{}", c.graph_id, c.edges);
    }
}
