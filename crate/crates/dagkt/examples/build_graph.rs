//! Builds the question-KC graph from a corpus and walks through the
//! similarity computation for one question pair: outcome co-occurrence
//! counts, directed F1 in each direction, and the accepted edges.
//!
//! Run with: cargo run --example build_graph

use dagkt::ingest::{parse_log, ColumnMapping, ParseOptions};

const RAW_CSV: &str = "\
student_id,question_id,kc_ids,correct,order_index
s01,add1,add,1,0
s01,add2,add,1,1
s01,mul1,mul,0,2
s01,add2,add,1,3
s02,add1,add,1,0
s02,mul1,mul,1,1
s02,add2,add,1,2
s02,add1,add,1,3
s03,add2,add,0,0
s03,add1,add,0,1
s03,mul1,mul,1,2
s03,mul1,mul,1,3
s04,mul1,mul,0,0
s04,add1,add,1,1
s04,add2,add,1,2
s04,add2,add,0,3
s05,add1,add,0,0
s05,add2,add,0,1
s05,mul1,mul,1,2
s05,add1,add,1,3
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sequences = parse_log(
        RAW_CSV.as_bytes(),
        &ColumnMapping::default(),
        &ParseOptions::default(),
    )?;

    // only each student's first answer to a question feeds the counts
    let counts = dagkt::graph::accumulate_pair_counts(&sequences);
    let lambda = dagkt::graph::DEFAULT_LAMBDA;
    for (pair, c) in &counts {
        println!(
            "{} -> {}: c11={} c10={} c01={} c00={}  f1={:.4}",
            pair.0,
            pair.1,
            c.count_11,
            c.count_10,
            c.count_01,
            c.count_00,
            dagkt::graph::f1_directed(c, lambda)
        );
    }
    for (a, b) in [("add1", "add2"), ("add1", "mul1"), ("add2", "mul1")] {
        println!(
            "Sim({a}, {b}) = {:.4} over support {}",
            dagkt::graph::similarity(a, b, &counts, lambda),
            dagkt::graph::pair_support(a, b, &counts)
        );
    }

    // same corpus, two thresholds: the stricter one keeps only the pair
    // answered identically by every student
    for omega in [0.3, 0.7] {
        let graph = dagkt::graph::build_graph(&sequences, omega, lambda, 3)?;
        let edges: Vec<String> = graph
            .qq_edges
            .iter()
            .map(|e| format!("{}~{} ({:.3})", e.q1, e.q2, e.sim))
            .collect();
        println!(
            "omega {omega}: {} question-KC edges, similarity edges: {}",
            graph.qk_edges.len(),
            if edges.is_empty() {
                "none".to_string()
            } else {
                edges.join(", ")
            }
        );
    }

    let graph = dagkt::graph::build_graph(&sequences, 0.3, lambda, 3)?;
    print!("{}", dagkt::graph::export_tsv(&graph));
    Ok(())
}
