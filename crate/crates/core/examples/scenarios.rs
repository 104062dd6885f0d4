//! Generates a few scenarios per template and prints their parameters
//! and the corner-case relations of the final frame.
//!
//! `cargo run --example scenarios`

use cornercase::graph::build_scene_graph;
use cornercase::scenario::{generate, validate_scenario, TemplateId};

fn main() {
    for t in TemplateId::ALL {
        for s in generate(t, 42, 2) {
            validate_scenario(&s).expect("generated scenarios validate");
            let g = build_scene_graph(s.corner_frame()).expect("valid frame");
            let params: Vec<String> = s.params.iter().map(|(k, v)| format!("{k}={v:.2}")).collect();
            println!("{} #{}: {} frames, {}", t.name(), s.id, s.frames.len(), params.join(" "));
            for e in g.cross_edges().filter(|e| g.category(e.tail).name() == "Ego") {
                println!("    {} {} Ego", g.category(e.head).name(), e.relation.name());
            }
        }
    }
}
