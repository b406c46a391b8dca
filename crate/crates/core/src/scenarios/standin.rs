//! Synthetic stand-in for the class-size trial extract used by the
//! semi-synthetic workflow. Same schema, made-up numbers: school location
//! shifts scores strongly between sites and little varies within a site.

use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::statcore::{draw_bernoulli, draw_normal, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StandinConfig {
    /// Complete rows.
    pub rows: usize,
    /// Treated among the complete rows.
    pub treated: usize,
    /// Extra rows with one blank cell, removed on ingestion.
    pub incomplete_rows: usize,
    pub effect: f64,
    pub within_sd: f64,
}

impl Default for StandinConfig {
    fn default() -> Self {
        StandinConfig {
            rows: 4165,
            treated: 1498,
            incomplete_rows: 235,
            effect: 25.0,
            within_sd: 8.0,
        }
    }
}

pub const STANDIN_HEADER: [&str; 8] = [
    "id",
    "gender",
    "ethnicity",
    "birth",
    "lunch",
    "school",
    "small",
    "score",
];

const SCHOOLS: [(&str, f64, f64); 4] = [
    // (label, cumulative probability, score shift)
    ("rural", 0.45, 45.0),
    ("suburban", 0.67, -35.0),
    ("urban", 0.76, -50.0),
    ("inner-city", 1.0, 30.0),
];

fn pick_school(u: f64) -> (&'static str, f64) {
    SCHOOLS
        .iter()
        .find(|s| u < s.1)
        .map(|s| (s.0, s.2))
        .unwrap_or((SCHOOLS[3].0, SCHOOLS[3].2))
}

/// Rows of the stand-in file, header excluded.
pub fn star_standin_rows(cfg: &StandinConfig, rng: &mut Rng) -> Result<Vec<Vec<String>>> {
    let total = cfg.rows + cfg.incomplete_rows;
    let mut treated = vec![false; cfg.rows];
    for i in index::sample(rng, cfg.rows, cfg.treated.min(cfg.rows)) {
        treated[i] = true;
    }
    let mut rows = Vec::with_capacity(total);
    for i in 0..total {
        let female = draw_bernoulli(rng, 0.49)? == 1;
        let eth = match rng.uniform() {
            u if u < 0.67 => "cauc",
            u if u < 0.99 => "afam",
            _ => "other",
        };
        let birth = 1979 + draw_bernoulli(rng, 0.7)? as i32 + draw_bernoulli(rng, 0.05)? as i32;
        let free_lunch = draw_bernoulli(rng, 0.48)? == 1;
        let (school, shift) = pick_school(rng.uniform());
        let a = match treated.get(i) {
            Some(&t) => t,
            None => draw_bernoulli(rng, 0.36)? == 1,
        };
        let noise = draw_normal(rng, 0.0, cfg.within_sd)?;
        let score = 1040.0
            + shift
            + if a { cfg.effect } else { 0.0 }
            + if female { 6.0 } else { 0.0 }
            + if free_lunch { -8.0 } else { 0.0 }
            + noise;
        let mut row = vec![
            (i + 1).to_string(),
            if female { "female" } else { "male" }.to_string(),
            eth.to_string(),
            birth.to_string(),
            if free_lunch { "free" } else { "non-free" }.to_string(),
            school.to_string(),
            u8::from(a).to_string(),
            format!("{}", score.round()),
        ];
        if i >= cfg.rows {
            // Blank one of the analysis columns.
            let col = 1 + rng.index(STANDIN_HEADER.len() - 1);
            row[col].clear();
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_star_standin(
    path: impl AsRef<Path>,
    cfg: &StandinConfig,
    rng: &mut Rng,
) -> Result<()> {
    let rows = star_standin_rows(cfg, rng)?;
    let mut w =
        csv::Writer::from_path(path.as_ref()).map_err(|e| std::io::Error::other(e.to_string()))?;
    let to_io = |e: csv::Error| std::io::Error::other(e.to_string());
    w.write_record(STANDIN_HEADER).map_err(to_io)?;
    for r in &rows {
        w.write_record(r).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}
