//! Runs the full simulate, calibrate, decompose, reconstruct and evaluate
//! chain from a config file, then runs it again to show stage caching.
//!
//! cargo run --release --example pipeline -- [config.toml]

use std::path::PathBuf;

use pcct::io::pipeline::Method;
use pcct::io::{cmd_pipeline, PipelineConfig};

fn main() -> pcct::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/quick.toml"));
    let mut config = PipelineConfig::load(&path)?;
    config.output_dir = std::env::temp_dir().join("pcct_example_pipeline");
    let setup = config.resolve(path.parent().unwrap())?;

    for pass in 1..=2 {
        println!("pass {pass}");
        for r in cmd_pipeline(&setup, &Method::ALL)? {
            println!(
                "  {:<14} {}",
                r.stage,
                if r.skipped { "up to date".to_string() } else { r.summary }
            );
        }
    }
    let stats = setup.output_dir().join("stats.csv");
    let csv = std::fs::read_to_string(&stats).map_err(|e| pcct::Error::io(&stats, e))?;
    print!("{csv}");
    Ok(())
}
