//! Rate tables stored as CSV: `min_rss_dbm,rate_mbps`, `#` comments.

use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use slash_core::beam_search::{RateStep, RateTable};

const BUNDLED: &str = include_str!("../data/rate_table_80211ad.csv");

#[derive(Deserialize)]
struct Row {
    min_rss_dbm: f64,
    rate_mbps: f64,
}

pub fn parse(reader: impl Read) -> Result<RateTable> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let mut steps = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.with_context(|| format!("rate table row {}", i + 1))?;
        steps.push(RateStep { min_rss: row.min_rss_dbm, rate: row.rate_mbps });
    }
    Ok(RateTable::new(steps)?)
}

pub fn load(path: &Path) -> Result<RateTable> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse(file).with_context(|| format!("reading {}", path.display()))
}

/// The IEEE 802.11ad single-carrier table shipped with the crate.
pub fn bundled() -> RateTable {
    parse(BUNDLED.as_bytes()).expect("bundled rate table is valid")
}
