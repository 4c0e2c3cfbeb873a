//! Identity newtypes shared across the pipeline and the [`ShareTable`]
//! exchanged between vote-share, poll and evaluation stages.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Canonical party label, e.g. `AAP` or `BJP`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Party(String);

/// Catch-all label for plausible parties outside a state's configured universe.
pub const OTHER_PARTY: &str = "OTHER";

impl Party {
    pub fn new(name: impl Into<String>) -> Self {
        Party(name.into())
    }

    pub fn other() -> Self {
        Party(OTHER_PARTY.to_string())
    }

    pub fn is_other(&self) -> bool {
        self.0 == OTHER_PARTY
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Party {
    fn from(s: &str) -> Self {
        Party::new(s)
    }
}

/// Canonical state label, e.g. `Punjab` or `Uttar Pradesh`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(String);

impl State {
    pub fn new(name: impl Into<String>) -> Self {
        State(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for State {
    fn from(s: &str) -> Self {
        State::new(s)
    }
}

/// Per-state vote shares from one source, stored as fractions in `[0, 1]`.
///
/// The source is a free label: a mapping method (`PM`, `NV`, ...), the
/// ensemble (`POLLMSTER`), a pollster, a poll consensus or `ACTUAL`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareTable {
    pub source: String,
    pub state: State,
    pub shares: BTreeMap<Party, f64>,
}

impl ShareTable {
    pub fn new(source: impl Into<String>, state: State, shares: BTreeMap<Party, f64>) -> Self {
        ShareTable { source: source.into(), state, shares }
    }

    /// Build from whole or fractional percentages (`42.0` means 42%).
    pub fn from_percent<I, P>(source: impl Into<String>, state: State, percents: I) -> Self
    where
        I: IntoIterator<Item = (P, f64)>,
        P: Into<Party>,
    {
        let shares = percents.into_iter().map(|(p, v)| (p.into(), v / 100.0)).collect();
        ShareTable { source: source.into(), state, shares }
    }

    pub fn get(&self, party: &Party) -> Option<f64> {
        self.shares.get(party).copied()
    }

    pub fn total(&self) -> f64 {
        self.shares.values().sum()
    }

    pub fn percent(&self, party: &Party) -> Option<f64> {
        self.get(party).map(|v| v * 100.0)
    }
}

/// Round half away from zero to a whole number.
///
/// `f64::round` already rounds half away from zero; the helper exists so the
/// reporting rule has a single name.
pub fn round_whole(x: f64) -> f64 {
    x.round()
}

/// Convert a fraction to a whole percentage.
///
/// The small nudge absorbs representation error from `k / 100.0` inputs so
/// that e.g. `0.145` renders as 15, matching the decimal reading.
pub fn whole_percent(fraction: f64) -> f64 {
    let pct = fraction * 100.0;
    round_whole(pct + pct.signum() * 1e-9)
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("cannot read share table file {path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Deserialize)]
struct PercentRow {
    source: Option<String>,
    state: String,
    party: String,
    percent: f64,
}

/// Read `source,state,party,percent` rows into one table per `(source, state)`.
/// Without a `source` column every row is labelled `default_source`.
pub fn load_percent_tables(path: &std::path::Path, default_source: &str) -> Result<Vec<ShareTable>, TableError> {
    let err = |reason: String| TableError::Read { path: path.display().to_string(), reason };
    let raw = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(raw.as_bytes());
    let mut tables: Vec<ShareTable> = Vec::new();
    for row in reader.deserialize::<PercentRow>() {
        let row = row.map_err(|e| err(e.to_string()))?;
        let source = row.source.unwrap_or_else(|| default_source.to_string());
        let state = State::new(row.state);
        let idx = match tables.iter().position(|t| t.source == source && t.state == state) {
            Some(i) => i,
            None => {
                tables.push(ShareTable::new(source, state, BTreeMap::new()));
                tables.len() - 1
            }
        };
        tables[idx].shares.insert(Party::new(row.party), row.percent / 100.0);
    }
    Ok(tables)
}

/// Tables from `tables` with the given source label, in file order.
pub fn tables_for<'a>(tables: &'a [ShareTable], source: &str) -> Vec<&'a ShareTable> {
    tables.iter().filter(|t| t.source == source).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_percent_rounds_half_away_from_zero() {
        assert_eq!(whole_percent(0.445), 45.0);
        assert_eq!(whole_percent(0.435), 44.0);
        assert_eq!(whole_percent(0.005), 1.0);
        assert_eq!(whole_percent(0.0), 0.0);
        assert_eq!(whole_percent(0.42), 42.0);
        assert_eq!(whole_percent(0.145), 15.0);
    }

    #[test]
    fn from_percent_scales() {
        let t = ShareTable::from_percent("ACTUAL", State::new("Punjab"), [("AAP", 42.0), ("BJP", 7.0)]);
        assert!((t.get(&Party::new("AAP")).unwrap() - 0.42).abs() < 1e-12);
        assert!((t.total() - 0.49).abs() < 1e-12);
    }
}
