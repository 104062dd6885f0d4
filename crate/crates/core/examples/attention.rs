//! Fits the edge scorer to a single scene and decodes its prediction
//! back into a corner-case graph.
//!
//! `cargo run --release --example attention`

use cornercase::extended::{decode_prediction, DecodeMode};
use cornercase::model::{forward, ModelDims, ModelParams};
use cornercase::scenario::{generate_one, to_instances, TemplateId};
use cornercase::training::{loss_and_grad, Optimizer, Prepared, TrainConfig};

fn main() {
    let s = generate_one(TemplateId::PedestrianCrossing, 0, 3);
    let inst = to_instances(&s).expect("labels")[0].clone();
    let p = Prepared::new(0, &inst).expect("labelled");

    let cfg = TrainConfig {
        learning_rate: 5e-3,
        model: ModelDims::uniform(16),
        ..TrainConfig::default()
    };
    let mut params = ModelParams::init(cfg.model, cfg.seed);
    let mut opt = Optimizer::new(&cfg, &params);
    println!("{} parameters", params.count());
    for epoch in 1..=300 {
        let (loss, grads) = loss_and_grad(&params, &p, 1.0).expect("finite loss");
        opt.step(&mut params, &grads);
        if epoch % 50 == 0 {
            println!("epoch {epoch}: loss {loss:.5}");
        }
    }

    let mut ext = inst.ext.clone();
    ext.set_predictions(&forward(&params, &p.input).expect("forward"));
    for c in &ext.candidates {
        println!(
            "  {:>2} {:<15} {:>2}  label {}  p = {:.3}",
            c.head,
            c.relation.name(),
            c.tail,
            c.label.unwrap_or(0),
            c.predicted_prob.unwrap_or(f64::NAN)
        );
    }
    let g = decode_prediction(&ext, DecodeMode::ConsistentArgmax).expect("predictions set");
    println!("decoded {} cross edges", g.cross_edges().count());
}
