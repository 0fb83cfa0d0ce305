//! Writes a synthetic corpus as nodes.jsonl / edges.jsonl.
//!
//! cargo run --example make_corpus -- sentinel <out_dir> [commits] [seed]
//! cargo run --example make_corpus -- reference <out_dir> [seed]

use std::path::PathBuf;

use bicrank_core::dataset::DatasetIndex;
use bicrank_core::embedding::hash_matrix;
use bicrank_core::synth::{counted_corpus, sentinel_corpus, REFERENCE_SHAPES};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let usage = "usage: make_corpus (sentinel|reference) <out_dir> [commits] [seed] [--embeddings DIM]";
    let kind = args.first().expect(usage);
    let out = PathBuf::from(args.get(1).expect(usage));
    let num = |i: usize, d: u64| args.get(i).filter(|a| !a.starts_with("--")).map_or(d, |a| a.parse().expect(usage));
    let (nodes, edges) = match kind.as_str() {
        "sentinel" => sentinel_corpus(num(2, 100) as usize, num(3, 0)),
        "reference" => counted_corpus(&REFERENCE_SHAPES, num(2, 0)),
        _ => panic!("{usage}"),
    };
    let index = DatasetIndex::from_records(nodes, edges).expect("generated corpus is valid");
    std::fs::create_dir_all(&out).expect("create output dir");
    index
        .write_jsonl(&out.join("nodes.jsonl"), &out.join("edges.jsonl"))
        .expect("write corpus");
    if let Some(p) = args.iter().position(|a| a == "--embeddings") {
        let dim = args.get(p + 1).and_then(|d| d.parse().ok()).expect(usage);
        hash_matrix(&index, dim, 0)
            .write_binary(&out.join("embeddings.bin"))
            .expect("write embeddings");
    }
    let s = index.summary();
    println!("{} commits, {} nodes, {} edges -> {}", s.commits, s.nodes, s.edges, out.display());
}
