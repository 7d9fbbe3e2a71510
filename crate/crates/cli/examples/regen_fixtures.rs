//! Regenerates the bundled fixtures under data/. Run from the workspace
//! root:
//!
//! ```bash
//! cargo run -p conflictkit-cli --example regen_fixtures
//! ```
//!
//! Generation is deterministic; a clean checkout regenerates byte-identical
//! files.

use std::path::Path;

use conflictkit_cli::fixtures::{write_mini_fixtures, write_synthetic_demo};

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mini = root.join("data/mini");
    write_mini_fixtures(&mini).expect("mini fixture generation failed");
    println!("mini fixtures written to {}", mini.display());
    let synthetic = root.join("data/synthetic");
    write_synthetic_demo(&synthetic).expect("synthetic demo generation failed");
    println!("synthetic demo written to {}", synthetic.display());
}
