//! Drives the laboratory from a TOML file plus overrides, exactly as the
//! `kglab` binary does, and lists the artifacts written.
//!
//! ```bash
//! cargo run --release --example config_runner -- crates/core/examples/configs/delta_sweep.toml
//! ```

use std::path::PathBuf;

use kglab::runner::{load, run, Command};

fn main() -> kglab::Result<()> {
    let path = std::env::args().nth(1).map(PathBuf::from);
    let out = std::env::temp_dir().join("kglab-config-runner");
    let overrides = vec![format!("output.dir={}", out.display()), "net.n=8".to_string()];
    let cfg = load(path.as_deref(), &overrides)?;
    println!("config hash {}", cfg.hash);
    for command in [Command::Mollifier, Command::Solve, Command::Sweep] {
        let outcome = run(command, &cfg)?;
        print!("{}", outcome.summary);
        for a in &outcome.artifacts {
            println!("  wrote {}", a.display());
        }
    }
    Ok(())
}
