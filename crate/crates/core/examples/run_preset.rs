//! Runs a preset config through the experiment runner and prints its
//! assertions; the same path the `spdelab` binary takes.
//!
//!     cargo run --release --example run_preset -- configs/brackets-ns-good.toml /tmp/out

use std::path::Path;

use spdelab::experiments::{self, parse_override, ExperimentConfig};

fn main() -> spdelab::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .unwrap_or_else(|| "configs/brackets-ns-good.toml".into());
    let out = args.next().unwrap_or_else(|| {
        std::env::temp_dir()
            .join("spdelab-example")
            .display()
            .to_string()
    });
    let cfg = ExperimentConfig::load(
        Path::new(&config),
        &[parse_override(&format!("out_dir=\"{out}\""))?],
    )?;
    let rec = experiments::run(&cfg)?;
    for a in &rec.outcome.assertions {
        println!(
            "{} {}: {}",
            if a.pass { "PASS" } else { "FAIL" },
            a.name,
            a.detail
        );
    }
    println!("bundle {out}, config hash {}", rec.manifest.config_sha256);
    Ok(())
}
