//! Writes the bundled experiment configs and the config JSON schema.
//!
//! ```text
//! cargo run --example presets -- [repo_root]
//! ```

use std::path::PathBuf;

use tgfield::cli::{self, ExperimentConfig};

fn main() -> tgfield::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let configs = [
        ("static64.json", ExperimentConfig::static_phantom()),
        ("breathing48.json", ExperimentConfig::breathing_phantom()),
        ("smoke_static.json", ExperimentConfig::smoke(false)),
        ("smoke_dynamic.json", ExperimentConfig::smoke(true)),
    ];
    for (name, cfg) in configs {
        let path = root.join("configs").join(name);
        tgfield::io::write_json(&path, &cfg)?;
        println!("{}", path.display());
    }
    let schema = root.join("docs/config.schema.json");
    tgfield::io::write_json(&schema, &cli::config_schema())?;
    println!("{}", schema.display());
    Ok(())
}
