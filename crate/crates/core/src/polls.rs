//! Opinion and exit poll ingestion.
//!
//! Pollsters publish a range per party, in seats or in percent. Each range is
//! reduced to its midpoint, a pollster's midpoints are normalized to
//! percentage shares, and pollsters are combined per state and poll type.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Party, ShareTable, State};

#[derive(Debug, Error, PartialEq)]
pub enum PollError {
    #[error("{pollster}/{party}: low {low} exceeds high {high}")]
    InvertedRange { pollster: String, party: String, low: f64, high: f64 },
    #[error("{pollster}/{party}: {reason}")]
    OutOfBounds { pollster: String, party: String, reason: String },
    #[error("{pollster} mixes seat and percent ranges for {state}")]
    MixedUnits { pollster: String, state: String },
    #[error("{pollster} ranges for {state} sum to zero")]
    ZeroTotal { pollster: String, state: String },
    #[error("no poll records")]
    Empty,
    #[error("records span several pollsters, states or poll types")]
    Heterogeneous,
    #[error("cannot read poll file {path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PollType {
    Opinion,
    Exit,
}

impl PollType {
    pub const ALL: [PollType; 2] = [PollType::Opinion, PollType::Exit];

    /// Source label used in share tables and reports.
    pub fn source_label(self) -> &'static str {
        match self {
            PollType::Opinion => "OPINION",
            PollType::Exit => "EXIT",
        }
    }
}

impl fmt::Display for PollType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PollType::Opinion => "opinion",
            PollType::Exit => "exit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PollUnit {
    Seats,
    Percent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollRecord {
    pub pollster: String,
    pub poll_type: PollType,
    pub state: State,
    pub party: Party,
    pub low: f64,
    pub high: f64,
    pub unit: PollUnit,
}

impl PollRecord {
    pub fn validate(&self) -> Result<(), PollError> {
        let oob = |reason: &str| PollError::OutOfBounds {
            pollster: self.pollster.clone(),
            party: self.party.to_string(),
            reason: reason.to_string(),
        };
        if !self.low.is_finite() || !self.high.is_finite() {
            return Err(oob("non-finite bound"));
        }
        if self.low > self.high {
            return Err(PollError::InvertedRange {
                pollster: self.pollster.clone(),
                party: self.party.to_string(),
                low: self.low,
                high: self.high,
            });
        }
        if self.low < 0.0 {
            return Err(oob("negative bound"));
        }
        if self.unit == PollUnit::Percent && self.high > 100.0 {
            return Err(oob("percent above 100"));
        }
        Ok(())
    }
}

/// Midpoint of a validated range.
pub fn median_of_range(r: &PollRecord) -> Result<f64, PollError> {
    r.validate()?;
    Ok((r.low + r.high) / 2.0)
}

#[derive(Debug, Default)]
pub struct PollLoad {
    pub records: Vec<PollRecord>,
    pub rejected: Vec<(usize, String)>,
}

/// Read the poll CSV (`pollster,poll_type,state,party,low,high,unit`).
/// Rows failing validation are rejected individually.
pub fn load_polls(path: &Path) -> Result<PollLoad, PollError> {
    let p = path.display().to_string();
    let raw = fs::read_to_string(path).map_err(|e| PollError::Read { path: p.clone(), reason: e.to_string() })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(raw.as_bytes());
    let mut out = PollLoad::default();
    for (idx, row) in reader.deserialize::<PollRecord>().enumerate() {
        match row {
            Ok(r) => match r.validate() {
                Ok(()) => out.records.push(r),
                Err(e) => out.rejected.push((idx + 1, e.to_string())),
            },
            Err(e) => out.rejected.push((idx + 1, e.to_string())),
        }
    }
    for (row, reason) in &out.rejected {
        tracing::warn!(row, %reason, "poll record rejected");
    }
    Ok(out)
}

/// One pollster's percentage shares for one state and poll type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PollsterShare {
    pub pollster: String,
    pub poll_type: PollType,
    pub state: State,
    pub unit: PollUnit,
    pub shares: BTreeMap<Party, f64>,
}

/// Convert one pollster's ranges for a state into percentages summing to 100.
pub fn pollster_share(records: &[PollRecord]) -> Result<PollsterShare, PollError> {
    let first = records.first().ok_or(PollError::Empty)?;
    if records.iter().any(|r| r.pollster != first.pollster || r.state != first.state || r.poll_type != first.poll_type) {
        return Err(PollError::Heterogeneous);
    }
    if records.iter().any(|r| r.unit != first.unit) {
        return Err(PollError::MixedUnits { pollster: first.pollster.clone(), state: first.state.to_string() });
    }
    let mut medians: BTreeMap<Party, f64> = BTreeMap::new();
    for r in records {
        *medians.entry(r.party.clone()).or_insert(0.0) += median_of_range(r)?;
    }
    let total: f64 = medians.values().sum();
    if total <= 0.0 {
        return Err(PollError::ZeroTotal { pollster: first.pollster.clone(), state: first.state.to_string() });
    }
    Ok(PollsterShare {
        pollster: first.pollster.clone(),
        poll_type: first.poll_type,
        state: first.state.clone(),
        unit: first.unit,
        shares: medians.into_iter().map(|(p, m)| (p, 100.0 * m / total)).collect(),
    })
}

/// Group records by `(state, poll_type, pollster)` and convert each group.
/// Groups that cannot be converted are returned as errors and excluded.
pub fn all_pollster_shares(records: &[PollRecord]) -> (Vec<PollsterShare>, Vec<PollError>) {
    let mut groups: BTreeMap<(State, PollType, String), Vec<PollRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.state.clone(), r.poll_type, r.pollster.clone())).or_default().push(r.clone());
    }
    let mut ok = Vec::new();
    let mut errs = Vec::new();
    for recs in groups.values() {
        match pollster_share(recs) {
            Ok(s) => ok.push(s),
            Err(e) => {
                tracing::warn!(error = %e, "pollster excluded");
                errs.push(e);
            }
        }
    }
    (ok, errs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    #[default]
    Mean,
    Median,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 }
}

/// Combine pollsters for one state and poll type, renormalized to 100.
/// A party a pollster does not list counts as 0 for that pollster.
pub fn consensus_share(
    shares: &[PollsterShare],
    state: &State,
    poll_type: PollType,
    combiner: Combiner,
) -> BTreeMap<Party, f64> {
    let selected: Vec<&PollsterShare> = shares.iter().filter(|s| &s.state == state && s.poll_type == poll_type).collect();
    if selected.is_empty() {
        return BTreeMap::new();
    }
    let parties: BTreeSet<&Party> = selected.iter().flat_map(|s| s.shares.keys()).collect();
    let combined: BTreeMap<Party, f64> = parties
        .into_iter()
        .map(|p| {
            let mut vals: Vec<f64> = selected.iter().map(|s| s.shares.get(p).copied().unwrap_or(0.0)).collect();
            let v = match combiner {
                Combiner::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                Combiner::Median => median(&mut vals),
            };
            (p.clone(), v)
        })
        .collect();
    let total: f64 = combined.values().sum();
    if total <= 0.0 {
        return combined;
    }
    combined.into_iter().map(|(p, v)| (p, 100.0 * v / total)).collect()
}

pub fn consensus_table(shares: &[PollsterShare], state: &State, poll_type: PollType, combiner: Combiner) -> ShareTable {
    let pct = consensus_share(shares, state, poll_type, combiner);
    ShareTable::from_percent(poll_type.source_label(), state.clone(), pct)
}

/// Spread of one party's share across pollsters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dispersion {
    pub state: State,
    pub poll_type: PollType,
    pub party: Party,
    pub min: f64,
    pub min_pollster: String,
    pub max: f64,
    pub max_pollster: String,
    pub spread: f64,
}

pub fn dispersion(shares: &[PollsterShare], state: &State, poll_type: PollType) -> Vec<Dispersion> {
    let selected: Vec<&PollsterShare> = shares.iter().filter(|s| &s.state == state && s.poll_type == poll_type).collect();
    let parties: BTreeSet<&Party> = selected.iter().flat_map(|s| s.shares.keys()).collect();
    parties
        .into_iter()
        .map(|p| {
            let vals: Vec<(f64, &str)> =
                selected.iter().map(|s| (s.shares.get(p).copied().unwrap_or(0.0), s.pollster.as_str())).collect();
            let lo = vals.iter().min_by(|a, b| a.0.total_cmp(&b.0)).expect("at least one pollster");
            let hi = vals.iter().max_by(|a, b| a.0.total_cmp(&b.0)).expect("at least one pollster");
            Dispersion {
                state: state.clone(),
                poll_type,
                party: p.clone(),
                min: lo.0,
                min_pollster: lo.1.to_string(),
                max: hi.0,
                max_pollster: hi.1.to_string(),
                spread: hi.0 - lo.0,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pollster: &str, party: &str, low: f64, high: f64, unit: PollUnit) -> PollRecord {
        PollRecord {
            pollster: pollster.into(),
            poll_type: PollType::Opinion,
            state: State::new("Punjab"),
            party: Party::new(party),
            low,
            high,
            unit,
        }
    }

    #[test]
    fn midpoints() {
        assert_eq!(median_of_range(&rec("X", "A", 56.0, 58.0, PollUnit::Seats)), Ok(57.0));
        assert_eq!(median_of_range(&rec("X", "A", 10.0, 10.0, PollUnit::Seats)), Ok(10.0));
        assert_eq!(median_of_range(&rec("X", "A", 15.0, 20.0, PollUnit::Percent)), Ok(17.5));
        assert!(matches!(median_of_range(&rec("X", "A", 20.0, 15.0, PollUnit::Seats)), Err(PollError::InvertedRange { .. })));
        assert!(rec("X", "A", 90.0, 101.0, PollUnit::Percent).validate().is_err());
        assert!(rec("X", "A", -1.0, 1.0, PollUnit::Seats).validate().is_err());
    }

    #[test]
    fn seat_symmetry() {
        let s = pollster_share(&[rec("X", "A", 58.0, 59.0, PollUnit::Seats), rec("X", "B", 58.0, 59.0, PollUnit::Seats)]).unwrap();
        assert_eq!(s.shares.values().copied().collect::<Vec<_>>(), vec![50.0, 50.0]);
    }

    #[test]
    fn seats_of_117() {
        // AAP median 58.5 of 117 listed seats.
        let s = pollster_share(&[
            rec("X", "AAP", 58.0, 59.0, PollUnit::Seats),
            rec("X", "INC", 30.0, 31.0, PollUnit::Seats),
            rec("X", "SAD", 28.0, 28.0, PollUnit::Seats),
        ])
        .unwrap();
        assert_eq!(s.shares[&Party::new("AAP")], 50.0);
    }

    #[test]
    fn normalized_percent_unchanged() {
        let s = pollster_share(&[
            rec("X", "A", 40.0, 40.0, PollUnit::Percent),
            rec("X", "B", 39.0, 41.0, PollUnit::Percent),
            rec("X", "C", 20.0, 20.0, PollUnit::Percent),
        ])
        .unwrap();
        assert_eq!(s.shares.values().copied().collect::<Vec<_>>(), vec![40.0, 40.0, 20.0]);
    }

    #[test]
    fn mixed_units_and_zero_total_rejected() {
        let mixed = [rec("X", "A", 1.0, 2.0, PollUnit::Seats), rec("X", "B", 1.0, 2.0, PollUnit::Percent)];
        assert!(matches!(pollster_share(&mixed), Err(PollError::MixedUnits { .. })));
        let zero = [rec("X", "A", 0.0, 0.0, PollUnit::Seats)];
        assert!(matches!(pollster_share(&zero), Err(PollError::ZeroTotal { .. })));
        let (ok, errs) = all_pollster_shares(&[mixed[0].clone(), mixed[1].clone(), rec("Y", "A", 1.0, 1.0, PollUnit::Seats)]);
        assert_eq!(ok.len(), 1);
        assert_eq!(errs.len(), 1);
    }

    fn share(pollster: &str, vals: &[(&str, f64)]) -> PollsterShare {
        PollsterShare {
            pollster: pollster.into(),
            poll_type: PollType::Opinion,
            state: State::new("Punjab"),
            unit: PollUnit::Percent,
            shares: vals.iter().map(|(p, v)| (Party::new(*p), *v)).collect(),
        }
    }

    #[test]
    fn consensus_cases() {
        let st = State::new("Punjab");
        let one = [share("X", &[("A", 70.0), ("B", 30.0)])];
        assert_eq!(consensus_share(&one, &st, PollType::Opinion, Combiner::Mean), one[0].shares);
        let two = [share("X", &[("A", 60.0), ("B", 40.0)]), share("Y", &[("A", 40.0), ("B", 60.0)])];
        let c = consensus_share(&two, &st, PollType::Opinion, Combiner::Mean);
        assert_eq!(c.values().copied().collect::<Vec<_>>(), vec![50.0, 50.0]);
        assert!(consensus_share(&two, &st, PollType::Exit, Combiner::Mean).is_empty());
    }

    #[test]
    fn median_combiner() {
        let st = State::new("Punjab");
        let three = [
            share("X", &[("A", 80.0), ("B", 20.0)]),
            share("Y", &[("A", 50.0), ("B", 50.0)]),
            share("Z", &[("A", 40.0), ("B", 60.0)]),
        ];
        let c = consensus_share(&three, &st, PollType::Opinion, Combiner::Median);
        assert!((c[&Party::new("A")] - 50.0).abs() < 1e-12);
    }

    #[test]
    fn dispersion_reports_extremes() {
        let st = State::new("Punjab");
        let s = [share("DB Live", &[("SP", 53.0), ("BJP", 47.0)]), share("Republic TV", &[("SP", 16.0), ("BJP", 84.0)])];
        let d = dispersion(&s, &st, PollType::Opinion);
        let sp = d.iter().find(|d| d.party.as_str() == "SP").unwrap();
        assert_eq!((sp.max_pollster.as_str(), sp.min_pollster.as_str(), sp.spread), ("DB Live", "Republic TV", 37.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_pollster(name: &'static str) -> impl Strategy<Value = PollsterShare> {
            prop::collection::vec(0.0f64..100.0, 2..6).prop_map(move |vs| {
                share(name, &vs.iter().enumerate().map(|(i, v)| (["A", "B", "C", "D", "E"][i], *v + 0.01)).collect::<Vec<_>>())
            })
        }

        proptest! {
            #[test]
            fn pollster_share_sums_to_100(mids in prop::collection::vec((0.0f64..200.0, 0.0f64..5.0), 1..8)) {
                let recs: Vec<_> = mids.iter().enumerate()
                    .map(|(i, (lo, w))| rec("X", &format!("P{i}"), *lo, lo + w, PollUnit::Seats))
                    .collect();
                if let Ok(s) = pollster_share(&recs) {
                    prop_assert!((s.shares.values().sum::<f64>() - 100.0).abs() < 1e-6);
                }
            }

            #[test]
            fn consensus_order_invariant(a in arb_pollster("X"), b in arb_pollster("Y"), c in arb_pollster("Z")) {
                let st = State::new("Punjab");
                let fwd = consensus_share(&[a.clone(), b.clone(), c.clone()], &st, PollType::Opinion, Combiner::Mean);
                let rev = consensus_share(&[c, a, b], &st, PollType::Opinion, Combiner::Mean);
                for (p, v) in &fwd {
                    prop_assert!((v - rev[p]).abs() < 1e-9);
                }
                prop_assert!((fwd.values().sum::<f64>() - 100.0).abs() < 1e-6);
            }
        }
    }
}
