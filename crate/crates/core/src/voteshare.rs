//! Sentiment aggregation and the sentiment-to-vote-share mappings.
//!
//! For a party `p` among the `n` parties scored in a state:
//!
//! | method | share of `p` |
//! |--------|--------------|
//! | `PM`   | `PM_p / Σ PM` |
//! | `PV`   | `PV_p / Σ PV` |
//! | `TV`   | `TV_p / Σ TV` |
//! | `NM`   | `(Σ_{q≠p} NM_q) / ((n-1) · Σ NM)` |
//! | `NV`   | `(Σ_{q≠p} NV_q) / ((n-1) · Σ NV)` |
//!
//! `PM`/`NM` are summed sentiment magnitudes of positive/negative mentions,
//! `PV`/`NV` count positive/negative mentions, and `TV` counts all mentions.
//! The cross-party forms credit a party with the negativity aimed at its
//! rivals; the `(n-1)` factor makes them sum to one. The ensemble share is
//! the unweighted mean of the valid methods.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonicalizer::CanonicalMention;
use crate::types::{Party, ShareTable, State};

/// Source label of the ensemble share tables.
pub const ENSEMBLE_SOURCE: &str = "POLLMSTER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    PM,
    NM,
    PV,
    NV,
    TV,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::PM, Method::NM, Method::PV, Method::NV, Method::TV];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::PM => "PM",
            Method::NM => "NM",
            Method::PV => "PV",
            Method::NV => "NV",
            Method::TV => "TV",
        }
    }

    /// Methods that credit a party with negativity towards its rivals.
    pub fn is_cross_party(self) -> bool {
        matches!(self, Method::NM | Method::NV)
    }

    fn quantity(self, a: &SentimentAggregate) -> f64 {
        match self {
            Method::PM => a.pm,
            Method::NM => a.nm,
            Method::PV => a.pv as f64,
            Method::NV => a.nv as f64,
            Method::TV => a.tv as f64,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentAggregate {
    pub state: State,
    pub party: Party,
    pub pm: f64,
    pub nm: f64,
    pub pv: u64,
    pub nv: u64,
    pub tv: u64,
}

impl SentimentAggregate {
    pub fn empty(state: State, party: Party) -> Self {
        SentimentAggregate { state, party, pm: 0.0, nm: 0.0, pv: 0, nv: 0, tv: 0 }
    }

    pub fn add(&mut self, sentiment: f64, neutral_in_tv: bool) {
        if sentiment > 0.0 {
            self.pm += sentiment;
            self.pv += 1;
            self.tv += 1;
        } else if sentiment < 0.0 {
            self.nm += -sentiment;
            self.nv += 1;
            self.tv += 1;
        } else if neutral_in_tv {
            self.tv += 1;
        }
    }
}

pub type Aggregates = BTreeMap<(State, Party), SentimentAggregate>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateOptions {
    /// Count mentions with sentiment exactly 0 towards `TV`.
    pub neutral_in_tv: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions { neutral_in_tv: true }
    }
}

pub fn aggregate<'a, I>(mentions: I, opts: AggregateOptions) -> Aggregates
where
    I: IntoIterator<Item = &'a CanonicalMention>,
{
    let mut out = Aggregates::new();
    for m in mentions {
        out.entry((m.state.clone(), m.party.clone()))
            .or_insert_with(|| SentimentAggregate::empty(m.state.clone(), m.party.clone()))
            .add(m.sentiment, opts.neutral_in_tv);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareOptions {
    /// Divide the cross-party methods by `n - 1` so they sum to one.
    pub normalize_cross_party: bool,
    /// Score the `OTHER` bucket as an extra party.
    pub include_other: bool,
}

impl Default for ShareOptions {
    fn default() -> Self {
        ShareOptions { normalize_cross_party: true, include_other: false }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShareError {
    #[error("{method} is undefined for {state}: no qualifying mentions")]
    InvalidMethod { state: State, method: Method },
    #[error("{state} has no parties to score")]
    NoParties { state: State },
    #[error("{state} is unpredictable: no valid mapping method")]
    Unpredictable { state: State },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodShares {
    pub state: State,
    pub method: Method,
    pub shares: BTreeMap<Party, f64>,
    /// False only for cross-party methods computed without the `n - 1` divisor.
    pub normalized: bool,
}

impl MethodShares {
    pub fn to_table(&self) -> ShareTable {
        ShareTable::new(self.method.as_str(), self.state.clone(), self.shares.clone())
    }
}

/// Parties scored for `state`: the configured universe, plus `OTHER` when
/// enabled. An empty universe falls back to the parties present in `aggs`.
pub fn scored_parties(aggs: &Aggregates, state: &State, universe: &[Party], opts: ShareOptions) -> Vec<Party> {
    let mut parties: Vec<Party> = if universe.is_empty() {
        aggs.keys().filter(|(s, p)| s == state && !p.is_other()).map(|(_, p)| p.clone()).collect()
    } else {
        universe.iter().filter(|p| !p.is_other()).cloned().collect()
    };
    if opts.include_other {
        parties.push(Party::other());
    }
    parties
}

pub fn method_share(
    aggs: &Aggregates,
    state: &State,
    universe: &[Party],
    method: Method,
    opts: ShareOptions,
) -> Result<MethodShares, ShareError> {
    let parties = scored_parties(aggs, state, universe, opts);
    if parties.is_empty() {
        return Err(ShareError::NoParties { state: state.clone() });
    }
    let values: Vec<f64> = parties
        .iter()
        .map(|p| aggs.get(&(state.clone(), p.clone())).map_or(0.0, |a| method.quantity(a)))
        .collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(ShareError::InvalidMethod { state: state.clone(), method });
    }

    let n = parties.len();
    let normalized = !method.is_cross_party() || opts.normalize_cross_party;
    let shares = parties
        .into_iter()
        .zip(&values)
        .map(|(p, &v)| {
            let share = if !method.is_cross_party() {
                v / total
            } else if opts.normalize_cross_party {
                if n == 1 { 1.0 } else { (total - v) / ((n - 1) as f64 * total) }
            } else {
                (total - v) / total
            };
            (p, share)
        })
        .collect();
    Ok(MethodShares { state: state.clone(), method, shares, normalized })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    pub state: State,
    pub shares: BTreeMap<Party, f64>,
    /// Per-party mean before renormalization.
    pub raw_mean: BTreeMap<Party, f64>,
    pub methods_used: Vec<Method>,
    pub excluded: Vec<Method>,
    pub renormalized: bool,
}

impl Ensemble {
    pub fn to_table(&self) -> ShareTable {
        ShareTable::new(ENSEMBLE_SOURCE, self.state.clone(), self.shares.clone())
    }
}

/// All five methods for a state; invalid ones are returned as errors.
pub fn all_methods(
    aggs: &Aggregates,
    state: &State,
    universe: &[Party],
    opts: ShareOptions,
) -> Vec<Result<MethodShares, ShareError>> {
    Method::ALL.iter().map(|&m| method_share(aggs, state, universe, m, opts)).collect()
}

/// Ensemble over precomputed method results.
pub fn ensemble_of(state: &State, results: &[Result<MethodShares, ShareError>]) -> Result<Ensemble, ShareError> {
    let valid: Vec<&MethodShares> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    if valid.is_empty() {
        return Err(ShareError::Unpredictable { state: state.clone() });
    }
    let excluded: Vec<Method> = results
        .iter()
        .filter_map(|r| match r {
            Err(ShareError::InvalidMethod { method, .. }) => Some(*method),
            _ => None,
        })
        .collect();

    let mut raw_mean: BTreeMap<Party, f64> = BTreeMap::new();
    for ms in &valid {
        for (p, v) in &ms.shares {
            *raw_mean.entry(p.clone()).or_insert(0.0) += v;
        }
    }
    let k = valid.len() as f64;
    raw_mean.values_mut().for_each(|v| *v /= k);

    let renormalized = !excluded.is_empty();
    let shares = if renormalized {
        let sum: f64 = raw_mean.values().sum();
        raw_mean.iter().map(|(p, v)| (p.clone(), v / sum)).collect()
    } else {
        raw_mean.clone()
    };
    Ok(Ensemble {
        state: state.clone(),
        shares,
        raw_mean,
        methods_used: valid.iter().map(|m| m.method).collect(),
        excluded,
        renormalized,
    })
}

pub fn pollmster_share(
    aggs: &Aggregates,
    state: &State,
    universe: &[Party],
    opts: ShareOptions,
) -> Result<Ensemble, ShareError> {
    ensemble_of(state, &all_methods(aggs, state, universe, opts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(state: &str, party: &str, s: f64) -> CanonicalMention {
        CanonicalMention { tweet_id: String::new(), party: Party::new(party), state: State::new(state), sentiment: s }
    }

    fn agg_with(state: &str, rows: &[(&str, f64, f64, u64, u64, u64)]) -> Aggregates {
        rows.iter()
            .map(|&(p, pm, nm, pv, nv, tv)| {
                let a = SentimentAggregate { state: State::new(state), party: Party::new(p), pm, nm, pv, nv, tv };
                ((State::new(state), Party::new(p)), a)
            })
            .collect()
    }

    fn parties(names: &[&str]) -> Vec<Party> {
        names.iter().map(|n| Party::new(*n)).collect()
    }

    fn shares_vec(ms: &MethodShares, order: &[&str]) -> Vec<f64> {
        order.iter().map(|p| ms.shares[&Party::new(*p)]).collect()
    }

    #[test]
    fn aggregate_hand_sum() {
        let ms = [cm("P", "A", 0.5), cm("P", "A", 0.5), cm("P", "B", -1.0)];
        let aggs = aggregate(&ms, AggregateOptions::default());
        let a = &aggs[&(State::new("P"), Party::new("A"))];
        assert_eq!((a.pm, a.pv, a.tv, a.nm, a.nv), (1.0, 2, 2, 0.0, 0));
        let b = &aggs[&(State::new("P"), Party::new("B"))];
        assert_eq!((b.nm, b.nv, b.tv, b.pm, b.pv), (1.0, 1, 1, 0.0, 0));
    }

    #[test]
    fn neutral_counts_toward_tv_only() {
        let aggs = aggregate(&[cm("P", "A", 0.0)], AggregateOptions::default());
        let a = &aggs[&(State::new("P"), Party::new("A"))];
        assert_eq!((a.pm, a.nm, a.pv, a.nv, a.tv), (0.0, 0.0, 0, 0, 1));
        let off = aggregate(&[cm("P", "A", 0.0)], AggregateOptions { neutral_in_tv: false });
        assert_eq!(off[&(State::new("P"), Party::new("A"))].tv, 0);
        assert!(aggregate(&[], AggregateOptions::default()).is_empty());
    }

    #[test]
    fn single_party_is_whole_share() {
        let aggs = agg_with("P", &[("A", 2.0, 1.0, 3, 1, 5)]);
        for m in Method::ALL {
            let s = method_share(&aggs, &State::new("P"), &parties(&["A"]), m, ShareOptions::default()).unwrap();
            assert_eq!(s.shares[&Party::new("A")], 1.0, "{m}");
        }
    }

    #[test]
    fn pm_two_parties() {
        let aggs = agg_with("P", &[("A", 3.0, 0.0, 0, 0, 0), ("B", 1.0, 0.0, 0, 0, 0)]);
        let s = method_share(&aggs, &State::new("P"), &parties(&["A", "B"]), Method::PM, ShareOptions::default()).unwrap();
        assert_eq!(shares_vec(&s, &["A", "B"]), vec![0.75, 0.25]);
    }

    #[test]
    fn nm_three_parties_normalized_and_raw() {
        let aggs = agg_with("P", &[("A", 0.0, 2.0, 0, 0, 0), ("B", 0.0, 1.0, 0, 0, 0), ("C", 0.0, 1.0, 0, 0, 0)]);
        let u = parties(&["A", "B", "C"]);
        let s = method_share(&aggs, &State::new("P"), &u, Method::NM, ShareOptions::default()).unwrap();
        assert_eq!(shares_vec(&s, &["A", "B", "C"]), vec![0.25, 0.375, 0.375]);
        assert!(s.normalized);
        let raw = method_share(&aggs, &State::new("P"), &u, Method::NM, ShareOptions { normalize_cross_party: false, ..Default::default() }).unwrap();
        assert_eq!(shares_vec(&raw, &["A", "B", "C"]), vec![0.5, 0.75, 0.75]);
        assert!(!raw.normalized);
    }

    #[test]
    fn zero_denominator_is_invalid() {
        let aggs = agg_with("P", &[("A", 1.0, 0.0, 1, 0, 1), ("B", 1.0, 0.0, 1, 0, 1)]);
        let r = method_share(&aggs, &State::new("P"), &parties(&["A", "B"]), Method::NV, ShareOptions::default());
        assert!(matches!(r, Err(ShareError::InvalidMethod { method: Method::NV, .. })));
        let r = method_share(&aggs, &State::new("Q"), &[], Method::PM, ShareOptions::default());
        assert!(matches!(r, Err(ShareError::NoParties { .. })));
    }

    #[test]
    fn ensemble_mean_of_valid_methods() {
        // PM=(0.6,0.4), PV=(0.8,0.2), TV=(0.7,0.3); NM and NV undefined.
        let aggs = agg_with("P", &[("A", 0.6, 0.0, 8, 0, 7), ("B", 0.4, 0.0, 2, 0, 3)]);
        let e = pollmster_share(&aggs, &State::new("P"), &parties(&["A", "B"]), ShareOptions::default()).unwrap();
        assert!((e.shares[&Party::new("A")] - 0.7).abs() < 1e-12);
        assert!((e.shares[&Party::new("B")] - 0.3).abs() < 1e-12);
        assert_eq!(e.methods_used, vec![Method::PM, Method::PV, Method::TV]);
        assert_eq!(e.excluded, vec![Method::NM, Method::NV]);
        assert!(e.renormalized);
    }

    #[test]
    fn ensemble_of_identical_methods_is_identity() {
        let table: BTreeMap<Party, f64> = [(Party::new("A"), 0.6), (Party::new("B"), 0.4)].into_iter().collect();
        let results: Vec<_> = Method::ALL
            .iter()
            .map(|&m| Ok(MethodShares { state: State::new("P"), method: m, shares: table.clone(), normalized: true }))
            .collect();
        let e = ensemble_of(&State::new("P"), &results).unwrap();
        assert_eq!(e.shares, table);
        assert!(!e.renormalized);
    }

    #[test]
    fn no_valid_method_is_unpredictable() {
        let aggs = agg_with("P", &[("A", 0.0, 0.0, 0, 0, 0)]);
        let r = pollmster_share(&aggs, &State::new("P"), &parties(&["A"]), ShareOptions::default());
        assert!(matches!(r, Err(ShareError::Unpredictable { .. })));
    }

    #[test]
    fn other_bucket_is_opt_in() {
        let aggs = agg_with("P", &[("A", 1.0, 0.0, 1, 0, 1), ("OTHER", 1.0, 0.0, 1, 0, 1)]);
        let s = method_share(&aggs, &State::new("P"), &parties(&["A"]), Method::PM, ShareOptions::default()).unwrap();
        assert_eq!(s.shares.len(), 1);
        let with = ShareOptions { include_other: true, ..Default::default() };
        let s = method_share(&aggs, &State::new("P"), &parties(&["A"]), Method::PM, with).unwrap();
        assert_eq!(s.shares[&Party::other()], 0.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        type Row = (f64, f64, u64, u64, u64);

        fn arb_rows() -> impl Strategy<Value = Vec<Row>> {
            prop::collection::vec((0.0f64..50.0, 0.0f64..50.0, 0u64..40, 0u64..40, 0u64..20), 2..=6)
                .prop_map(|rows| rows.into_iter().map(|(pm, nm, pv, nv, neu)| (pm, nm, pv, nv, pv + nv + neu)).collect())
        }

        fn build(rows: &[Row], names: &[Party]) -> Aggregates {
            rows.iter()
                .zip(names)
                .map(|(&(pm, nm, pv, nv, tv), p)| {
                    let a = SentimentAggregate { state: State::new("S"), party: p.clone(), pm, nm, pv, nv, tv };
                    ((State::new("S"), p.clone()), a)
                })
                .collect()
        }

        fn names(n: usize) -> Vec<Party> {
            (0..n).map(|i| Party::new(format!("P{i}"))).collect()
        }

        proptest! {
            #[test]
            fn valid_methods_sum_to_one(rows in arb_rows()) {
                let ps = names(rows.len());
                let s = State::new("S");
                for ms in all_methods(&build(&rows, &ps), &s, &ps, ShareOptions::default()).into_iter().flatten() {
                    prop_assert!((ms.shares.values().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
            }

            #[test]
            fn magnitude_methods_scale_invariant(rows in arb_rows(), c in 0.01f64..100.0) {
                let ps = names(rows.len());
                let s = State::new("S");
                let scaled: Vec<Row> = rows.iter().map(|&(pm, nm, pv, nv, tv)| (pm * c, nm * c, pv, nv, tv)).collect();
                for m in [Method::PM, Method::NM] {
                    let a = method_share(&build(&rows, &ps), &s, &ps, m, ShareOptions::default());
                    let b = method_share(&build(&scaled, &ps), &s, &ps, m, ShareOptions::default());
                    if let (Ok(a), Ok(b)) = (a, b) {
                        for (p, v) in &a.shares {
                            prop_assert!((v - b.shares[p]).abs() <= 1e-9);
                        }
                    }
                }
            }

            #[test]
            fn relabeling_permutes_shares(rows in arb_rows(), seed in any::<u64>()) {
                let n = rows.len();
                let ps = names(n);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.sort_by_key(|i| (seed.rotate_left(*i as u32 * 7) ^ *i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let relabeled: Vec<Party> = perm.iter().map(|&j| ps[j].clone()).collect();
                let s = State::new("S");
                let a = all_methods(&build(&rows, &ps), &s, &ps, ShareOptions::default());
                let b = all_methods(&build(&rows, &relabeled), &s, &ps, ShareOptions::default());
                for (x, y) in a.iter().zip(&b) {
                    match (x, y) {
                        (Ok(x), Ok(y)) => {
                            for i in 0..n {
                                prop_assert!((x.shares[&ps[i]] - y.shares[&relabeled[i]]).abs() <= 1e-12);
                            }
                        }
                        (Err(_), Err(_)) => {}
                        _ => prop_assert!(false, "validity changed under relabeling"),
                    }
                }
            }

            #[test]
            fn pv_equals_tv_when_all_positive(counts in prop::collection::vec(1u64..100, 2..=6)) {
                let ps = names(counts.len());
                let rows: Vec<Row> = counts.iter().map(|&c| (c as f64 * 0.5, 0.0, c, 0, c)).collect();
                let aggs = build(&rows, &ps);
                let s = State::new("S");
                let pv = method_share(&aggs, &s, &ps, Method::PV, ShareOptions::default()).unwrap();
                let tv = method_share(&aggs, &s, &ps, Method::TV, ShareOptions::default()).unwrap();
                prop_assert_eq!(pv.shares, tv.shares);
            }

            #[test]
            fn ensemble_within_method_bounds(rows in arb_rows()) {
                let ps = names(rows.len());
                let s = State::new("S");
                let results = all_methods(&build(&rows, &ps), &s, &ps, ShareOptions::default());
                if let Ok(e) = ensemble_of(&s, &results) {
                    prop_assert!((e.shares.values().sum::<f64>() - 1.0).abs() <= 1e-9);
                    for p in &ps {
                        let vals: Vec<f64> = results.iter().flatten().map(|m| m.shares[p]).collect();
                        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        prop_assert!(e.raw_mean[p] >= lo - 1e-12 && e.raw_mean[p] <= hi + 1e-12);
                    }
                }
            }
        }
    }
}
