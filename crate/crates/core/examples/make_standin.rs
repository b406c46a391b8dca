//! Regenerates `data/star_standin.csv`.
//!
//! cargo run -p unconfound --example make_standin -- crates/core/data/star_standin.csv

use unconfound::scenarios::{write_star_standin, StandinConfig};
use unconfound::statcore::Rng;

/// Seed the shipped file was written with.
pub const STANDIN_SEED: u64 = 1985;

fn main() -> unconfound::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/data/star_standin.csv".into());
    write_star_standin(
        &path,
        &StandinConfig::default(),
        &mut Rng::new(STANDIN_SEED),
    )
}
