//! Builds scene graphs for the first and last frame of a generated
//! cyclist cut-in, checks them against the grammar and lists the
//! candidate edges of the extended graph with their labels.
//!
//! `cargo run --example scene_graph`

use cornercase::extended::{label_candidates, ExtendedGraph};
use cornercase::graph::{build_scene_graph, validate_grammar, SceneGraph};
use cornercase::scenario::{generate_one, TemplateId};

fn describe(g: &SceneGraph) {
    for e in g.cross_edges() {
        println!(
            "  {}#{} {} {}#{}",
            g.category(e.head).name(),
            e.head,
            e.relation.name(),
            g.category(e.tail).name(),
            e.tail
        );
    }
}

fn main() {
    let s = generate_one(TemplateId::OncomingCyclistCutIn, 0, 7);
    let first = build_scene_graph(&s.frames[0]).expect("valid frame");
    let last = build_scene_graph(s.corner_frame()).expect("valid frame");
    println!("scenario {} ({} frames)", s.id, s.frames.len());
    println!("frame 0, {} nodes:", first.nodes.len());
    describe(&first);
    println!("frame {} (corner case):", s.n());
    describe(&last);
    for g in [&first, &last] {
        assert!(validate_grammar(g).is_empty());
    }

    let ext = label_candidates(&ExtendedGraph::new(first.clone(), s.n()), &last).expect("same nodes");
    println!("{} candidate edges:", ext.candidates.len());
    for c in &ext.candidates {
        println!(
            "  {} {} {} -> {}",
            first.category(c.head).name(),
            c.relation.name(),
            first.category(c.tail).name(),
            c.label.unwrap_or(0)
        );
    }
}
