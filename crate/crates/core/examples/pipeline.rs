//! Runs every pipeline stage on a small configuration in a temporary
//! directory and prints the consolidated report.
//!
//! `cargo run --release --example pipeline`

use cornercase::config::{Overrides, PipelineConfig};
use cornercase::pipeline::run_all;

const SMALL: &str = r#"
schema_version = 1
seed = 42

[generation]
n_scenarios = 120

[train]
epochs = 15

[train.model]
enc_hidden = 16
gat1_out = 16
mid_hidden = 16
mid_out = 16
triple_hidden = 4

[simulation]
min_episodes = 30
"#;

fn main() {
    let out = std::env::temp_dir().join("cornercase-example");
    let cfg = PipelineConfig::from_toml(SMALL)
        .and_then(|c| c.finalize(&Overrides { out: Some(out.clone()), ..Overrides::default() }))
        .expect("valid config");
    run_all(&cfg).expect("pipeline");
    print!("{}", std::fs::read_to_string(cfg.paths().report("report.txt")).expect("report written"));
    println!("artifacts in {}", out.display());
}
