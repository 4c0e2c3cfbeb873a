//! Share-table comparison: absolute deviations in percentage points and
//! winner calls.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{whole_percent, Party, ShareTable, State};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("cannot compare {a} ({state_a}) with {b} ({state_b}): different states")]
    StateMismatch { a: String, state_a: State, b: String, state_b: State },
    #[error("{a} and {b} share no party for {state}")]
    DisjointParties { a: String, b: String, state: State },
    #[error("state {0} is present on only one side of the comparison")]
    UnpairedState(State),
    #[error("nothing to compare")]
    Empty,
}

/// Arithmetic used for deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// Shares are rounded to whole percentages before subtracting.
    WholePercent,
    Full,
}

impl Precision {
    /// Whole-percent when every share in every table is already a whole percentage.
    pub fn detect<'a>(tables: impl IntoIterator<Item = &'a ShareTable>) -> Precision {
        let whole = tables
            .into_iter()
            .flat_map(|t| t.shares.values())
            .all(|v| (v * 100.0 - whole_percent(*v)).abs() < 1e-9);
        if whole { Precision::WholePercent } else { Precision::Full }
    }

    fn percent(self, fraction: f64) -> f64 {
        match self {
            Precision::WholePercent => whole_percent(fraction),
            Precision::Full => fraction * 100.0,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::WholePercent => "whole_percent",
            Precision::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationRow {
    pub state: State,
    pub party: Party,
    pub a_pct: f64,
    pub b_pct: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    /// `None` for reports pooled over several states.
    pub state: Option<State>,
    pub source_a: String,
    pub source_b: String,
    pub precision: Precision,
    pub rows: Vec<DeviationRow>,
    pub mean: f64,
    pub max: f64,
    pub max_at: Option<(State, Party)>,
}

impl DeviationReport {
    fn from_rows(state: Option<State>, a: &str, b: &str, precision: Precision, rows: Vec<DeviationRow>) -> Self {
        let mean = if rows.is_empty() { 0.0 } else { rows.iter().map(|r| r.deviation).sum::<f64>() / rows.len() as f64 };
        let mut max = 0.0;
        let mut max_at = None;
        for r in &rows {
            if max_at.is_none() || r.deviation > max {
                max = r.deviation;
                max_at = Some((r.state.clone(), r.party.clone()));
            }
        }
        DeviationReport { state, source_a: a.to_string(), source_b: b.to_string(), precision, rows, mean, max, max_at }
    }

    pub fn deviation(&self, state: &State, party: &Party) -> Option<f64> {
        self.rows.iter().find(|r| &r.state == state && &r.party == party).map(|r| r.deviation)
    }
}

fn compare(a: &ShareTable, b: &ShareTable, precision: Precision) -> Result<Vec<DeviationRow>, EvalError> {
    if a.state != b.state {
        return Err(EvalError::StateMismatch {
            a: a.source.clone(),
            state_a: a.state.clone(),
            b: b.source.clone(),
            state_b: b.state.clone(),
        });
    }
    if !a.shares.keys().any(|p| b.shares.contains_key(p)) {
        return Err(EvalError::DisjointParties { a: a.source.clone(), b: b.source.clone(), state: a.state.clone() });
    }
    let parties: BTreeSet<&Party> = a.shares.keys().chain(b.shares.keys()).collect();
    Ok(parties
        .into_iter()
        .map(|p| {
            let a_pct = precision.percent(a.get(p).unwrap_or(0.0));
            let b_pct = precision.percent(b.get(p).unwrap_or(0.0));
            DeviationRow { state: a.state.clone(), party: p.clone(), a_pct, b_pct, deviation: (a_pct - b_pct).abs() }
        })
        .collect())
}

/// Per-party `|predicted - actual|` in percentage points. A party listed on
/// only one side is scored against 0.
pub fn abs_error(predicted: &ShareTable, actual: &ShareTable, precision: Precision) -> Result<DeviationReport, EvalError> {
    let rows = compare(predicted, actual, precision)?;
    Ok(DeviationReport::from_rows(Some(predicted.state.clone()), &predicted.source, &actual.source, precision, rows))
}

/// Deviation between two sources, pooled over every state both cover.
pub fn pairwise_model_deviation(a: &[ShareTable], b: &[ShareTable], precision: Precision) -> Result<DeviationReport, EvalError> {
    let first = a.first().ok_or(EvalError::Empty)?;
    let mut rows = Vec::new();
    for ta in a {
        let tb = b.iter().find(|t| t.state == ta.state).ok_or_else(|| EvalError::UnpairedState(ta.state.clone()))?;
        rows.extend(compare(ta, tb, precision)?);
    }
    if let Some(extra) = b.iter().find(|tb| !a.iter().any(|ta| ta.state == tb.state)) {
        return Err(EvalError::UnpairedState(extra.state.clone()));
    }
    let state = (a.len() == 1).then(|| first.state.clone());
    let source_b = b.first().map_or("", |t| t.source.as_str());
    Ok(DeviationReport::from_rows(state, &first.source, source_b, precision, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Winner {
    pub state: State,
    pub source: String,
    /// More than one entry means a tie.
    pub parties: Vec<Party>,
    pub share: f64,
}

impl Winner {
    pub fn is_tie(&self) -> bool {
        self.parties.len() > 1
    }

    pub fn single(&self) -> Option<&Party> {
        match self.parties.as_slice() {
            [p] => Some(p),
            _ => None,
        }
    }
}

/// Party (or tied parties) with the largest share; `None` for an empty table.
pub fn winner(table: &ShareTable) -> Option<Winner> {
    let best = table.shares.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    let tol = 1e-12 * best.abs().max(1.0);
    let parties = table.shares.iter().filter(|(_, v)| (best - **v).abs() <= tol).map(|(p, _)| p.clone()).collect();
    Some(Winner { state: table.state.clone(), source: table.source.clone(), parties, share: best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn punjab(source: &str, v: [f64; 4]) -> ShareTable {
        ShareTable::from_percent(source, State::new("Punjab"), ["AAP", "BJP", "INC", "SAD"].into_iter().zip(v))
    }

    #[test]
    fn exit_vs_actual_aap() {
        let r = abs_error(&punjab("EXIT", [57.0, 3.0, 24.0, 16.0]), &punjab("ACTUAL", [42.0, 7.0, 23.0, 18.0]), Precision::WholePercent)
            .unwrap();
        assert_eq!(r.deviation(&State::new("Punjab"), &Party::new("AAP")), Some(15.0));
    }

    #[test]
    fn llama_vs_actual() {
        let r = abs_error(&punjab("LLAMA2", [42.0, 8.0, 18.0, 32.0]), &punjab("ACTUAL", [42.0, 7.0, 23.0, 18.0]), Precision::WholePercent)
            .unwrap();
        assert_eq!(r.rows.iter().map(|r| r.deviation).collect::<Vec<_>>(), vec![0.0, 1.0, 5.0, 14.0]);
        assert_eq!(r.mean, 5.0);
        assert_eq!(r.max, 14.0);
        assert_eq!(r.max_at, Some((State::new("Punjab"), Party::new("SAD"))));
    }

    #[test]
    fn identical_tables_zero() {
        let t = punjab("X", [40.0, 10.0, 30.0, 20.0]);
        let r = abs_error(&t, &t, Precision::Full).unwrap();
        assert!(r.rows.iter().all(|r| r.deviation == 0.0));
        assert_eq!(r.mean, 0.0);
        let p = pairwise_model_deviation(std::slice::from_ref(&t), std::slice::from_ref(&t), Precision::Full).unwrap();
        assert_eq!(p.max, 0.0);
    }

    #[test]
    fn one_sided_party_scores_against_zero() {
        let a = ShareTable::from_percent("LLAMA2", State::new("UP"), [("BJP", 98.0), ("AIMIM", 2.0)]);
        let b = ShareTable::from_percent("ACTUAL", State::new("UP"), [("BJP", 100.0)]);
        let r = abs_error(&a, &b, Precision::WholePercent).unwrap();
        assert_eq!(r.deviation(&State::new("UP"), &Party::new("AIMIM")), Some(2.0));
    }

    #[test]
    fn disjoint_and_mismatched_rejected() {
        let a = ShareTable::from_percent("A", State::new("UP"), [("BJP", 100.0)]);
        let b = ShareTable::from_percent("B", State::new("UP"), [("SP", 100.0)]);
        assert!(matches!(abs_error(&a, &b, Precision::Full), Err(EvalError::DisjointParties { .. })));
        let c = ShareTable::from_percent("C", State::new("Punjab"), [("BJP", 100.0)]);
        assert!(matches!(abs_error(&a, &c, Precision::Full), Err(EvalError::StateMismatch { .. })));
        assert!(matches!(pairwise_model_deviation(&[a], &[c], Precision::Full), Err(EvalError::UnpairedState(_))));
    }

    #[test]
    fn winners_and_ties() {
        let w = winner(&punjab("ACTUAL", [42.0, 7.0, 23.0, 18.0])).unwrap();
        assert_eq!(w.single(), Some(&Party::new("AAP")));
        let tie = winner(&ShareTable::from_percent("X", State::new("P"), [("A", 50.0), ("B", 50.0)])).unwrap();
        assert!(tie.is_tie());
        assert_eq!(tie.parties.len(), 2);
        assert!(winner(&ShareTable::new("X", State::new("P"), Default::default())).is_none());
    }

    #[test]
    fn precision_detection() {
        assert_eq!(Precision::detect([&punjab("X", [42.0, 7.0, 23.0, 28.0])]), Precision::WholePercent);
        assert_eq!(Precision::detect([&punjab("X", [42.5, 7.0, 23.0, 27.5])]), Precision::Full);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_table(source: &'static str) -> impl Strategy<Value = ShareTable> {
            prop::collection::vec(0.0f64..1.0, 4).prop_map(move |v| {
                ShareTable::new(source, State::new("P"), ["A", "B", "C", "D"].iter().map(|p| Party::new(*p)).zip(v).collect())
            })
        }

        proptest! {
            #[test]
            fn abs_error_symmetric(a in arb_table("A"), b in arb_table("B")) {
                let ab = abs_error(&a, &b, Precision::Full).unwrap();
                let ba = abs_error(&b, &a, Precision::Full).unwrap();
                for (x, y) in ab.rows.iter().zip(&ba.rows) {
                    prop_assert_eq!(x.deviation, y.deviation);
                }
                prop_assert!(ab.mean <= ab.max + 1e-12);
            }

            #[test]
            fn winner_scale_invariant(t in arb_table("A"), c in 0.01f64..100.0) {
                let scaled = ShareTable::new("A", t.state.clone(), t.shares.iter().map(|(p, v)| (p.clone(), v * c)).collect());
                prop_assert_eq!(winner(&t).unwrap().parties, winner(&scaled).unwrap().parties);
            }

            #[test]
            fn pooled_mean_is_row_weighted(a1 in arb_table("A"), b1 in arb_table("B"), a2 in prop::collection::vec(0.0f64..1.0, 2), b2 in prop::collection::vec(0.0f64..1.0, 2)) {
                let q = |s: &'static str, v: &[f64]| ShareTable::new(s, State::new("Q"), [Party::new("X"), Party::new("Y")].into_iter().zip(v.iter().copied()).collect());
                let (a2, b2) = (q("A", &a2), q("B", &b2));
                let pooled = pairwise_model_deviation(&[a1.clone(), a2.clone()], &[b1.clone(), b2.clone()], Precision::Full).unwrap();
                let r1 = abs_error(&a1, &b1, Precision::Full).unwrap();
                let r2 = abs_error(&a2, &b2, Precision::Full).unwrap();
                let expect = (r1.mean * r1.rows.len() as f64 + r2.mean * r2.rows.len() as f64) / (r1.rows.len() + r2.rows.len()) as f64;
                prop_assert!((pooled.mean - expect).abs() < 1e-9);
            }
        }
    }
}
