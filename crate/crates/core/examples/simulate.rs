//! Realizes ground-truth corner cases and their unperturbed
//! continuations, then runs every controller profile on both.
//!
//! `cargo run --release --example simulate`

use cornercase::graph::build_scene_graph;
use cornercase::scenario::generate_corpus;
use cornercase::sim::{realize, run_batch, scr_report, ControllerProfile, ProfileKind, RealizeParams};

fn main() {
    let params = RealizeParams::default();
    let profiles: Vec<ControllerProfile> = ProfileKind::ALL.iter().map(|&k| ControllerProfile::new(k)).collect();
    let (mut corner, mut regular, mut infeasible) = (Vec::new(), Vec::new(), 0);
    for s in generate_corpus(42, 120) {
        let base = build_scene_graph(&s.frames[0]).expect("valid frame");
        let truth = build_scene_graph(s.corner_frame()).expect("valid frame");
        match realize(&base, &truth, s.road(), &params) {
            Ok(scn) => {
                corner.push(scn);
                regular.push(realize(&base, &base, s.road(), &params).expect("identity realizes"));
            }
            Err(_) => infeasible += 1,
        }
    }
    println!("corner cases");
    print!("{}", scr_report(&run_batch(&corner, &profiles), infeasible).to_text());
    println!("\nregular continuations");
    print!("{}", scr_report(&run_batch(&regular, &profiles), 0).to_text());
}
