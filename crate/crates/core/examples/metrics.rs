//! Threshold sweep on noisy synthetic scores.
//!
//! `cargo run --example metrics`

use cornercase::metrics::sweep;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<f64> = (0..500).map(|_| f64::from(u8::from(rng.gen_bool(0.3)))).collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|&y| (0.35 * y + rng.gen_range(0.0..0.65_f64)).clamp(0.0, 1.0))
        .collect();
    let r = sweep(&scores, &labels).expect("both classes present");
    println!("n {} positives {}", r.n, r.n_positive);
    println!("AUC {:.4}", r.auc);
    println!(
        "Youden threshold {:.3}: accuracy {:.3} precision {:.3} recall {:.3} F1 {:.3}",
        r.youden_threshold, r.accuracy, r.precision, r.recall, r.f1
    );
    println!("best F1 {:.3} at {:.3}", r.best_f1, r.best_f1_threshold);
    print!("{}", r.roc_csv().lines().take(6).collect::<Vec<_>>().join("\n"));
    println!("\n...");
}
