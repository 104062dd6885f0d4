//! Generates the default corpus, trains the edge scorer and reports
//! held-out metrics.
//!
//! `cargo run --release --example train_eval [n_scenarios]`

use std::time::Instant;

use cornercase::metrics::sweep;
use cornercase::model::forward;
use cornercase::scenario::{corpus_instances, generate_corpus, positive_fraction, DEFAULT_CORPUS_SIZE};
use cornercase::training::{prepare, select_scenarios, train_prepared, TrainConfig};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let n = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_CORPUS_SIZE);
    let cfg = TrainConfig::default();

    let t0 = Instant::now();
    let scenarios = generate_corpus(cfg.seed, n);
    let instances = corpus_instances(&scenarios).expect("corpus labels");
    println!(
        "{} scenarios, {} instances, positive fraction {:.3} ({:.1?})",
        scenarios.len(),
        instances.len(),
        positive_fraction(&instances),
        t0.elapsed()
    );

    let t1 = Instant::now();
    let data = prepare(&instances).expect("labelled instances");
    let (params, log) = train_prepared(&data, &cfg).expect("training");
    println!(
        "trained {} epochs (best {}, val loss {:.4}) in {:.1?}",
        log.epochs.len(),
        log.best_epoch,
        log.best_val_loss,
        t1.elapsed()
    );

    let test = select_scenarios(&data, &log.split.test);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for p in &test {
        scores.extend(forward(&params, &p.input).expect("forward"));
        labels.extend_from_slice(&p.labels);
    }
    let r = sweep(&scores, &labels).expect("both classes present");
    println!(
        "test: accuracy {:.3} precision {:.3} recall {:.3} F1 {:.3} best F1 {:.3} AUC {:.3}",
        r.accuracy, r.precision, r.recall, r.f1, r.best_f1, r.auc
    );
}
