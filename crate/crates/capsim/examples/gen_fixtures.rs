//! Regenerates the committed workload files under `fixtures/` from the
//! builders in `capsim::fixtures`. Run after changing a builder:
//!
//! ```text
//! cargo run --example gen_fixtures
//! ```

use std::path::PathBuf;

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join("fixtures");
    std::fs::create_dir_all(&dir)?;
    for spec in capsim::fixtures::named_specs() {
        let program = capsim::fixtures::build(&spec)?;
        let path = dir.join(format!("{}.json", spec.name));
        capsim::workload::save(&program, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
