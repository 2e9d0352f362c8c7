//! Regenerates the bundled demo assets.
//!
//! ```text
//! cargo run -p fairprune --example make_demo -- demo
//! ```

use std::process::ExitCode;

fn main() -> ExitCode {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "demo".into());
    match fairprune::demo::write_demo(&dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
