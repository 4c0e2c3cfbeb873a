//! Alias tables mapping raw party/state strings to canonical names, plus the
//! frequency and coverage reports used to curate them.
//!
//! Keys are case-folded with surrounding whitespace trimmed and inner runs of
//! whitespace collapsed. City names are ordinary entries of the state table
//! (e.g. `Varanasi -> Uttar Pradesh`).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractor::RawMention;
use crate::types::{Party, State, OTHER_PARTY};

/// Share of raw values the alias tables are expected to resolve.
pub const DEFAULT_COVERAGE_TARGET: f64 = 0.999;

#[derive(Debug, Error, PartialEq)]
pub enum AliasError {
    #[error("{kind:?} alias `{raw}` maps to both `{first}` and `{second}`")]
    Conflict { kind: AliasKind, raw: String, first: String, second: String },
    #[error("{kind:?} alias `{raw}` targets `{canonical}`, which is not in the configured universe")]
    OutsideUniverse { kind: AliasKind, raw: String, canonical: String },
    #[error("cannot read alias file {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("alias file {path} row {row}: unknown kind `{kind}`")]
    UnknownKind { path: String, row: usize, kind: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AliasKind {
    Party,
    State,
}

/// Case-folded, trimmed, whitespace-collapsed lookup key.
pub fn fold(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Parties contesting each state. Defines which parties enter vote-share
/// denominators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyUniverse(pub BTreeMap<State, Vec<Party>>);

impl Default for PartyUniverse {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert(State::new("Punjab"), ["AAP", "BJP", "INC", "SAD"].map(Party::new).to_vec());
        m.insert(State::new("Uttar Pradesh"), ["BJP", "SP", "BSP", "INC", "AAP", "AIMIM"].map(Party::new).to_vec());
        PartyUniverse(m)
    }
}

impl PartyUniverse {
    pub fn states(&self) -> impl Iterator<Item = &State> {
        self.0.keys()
    }

    pub fn parties(&self, state: &State) -> &[Party] {
        self.0.get(state).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, state: &State, party: &Party) -> bool {
        self.parties(state).contains(party)
    }

    /// Every canonical party across states, sorted and deduplicated.
    pub fn all_parties(&self) -> Vec<Party> {
        let mut v: Vec<Party> = self.0.values().flatten().cloned().collect();
        v.sort();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AliasTable {
    pub kind: AliasKind,
    entries: HashMap<String, String>,
    pub coverage_target: f64,
}

impl AliasTable {
    pub fn new(kind: AliasKind) -> Self {
        AliasTable { kind, entries: HashMap::new(), coverage_target: DEFAULT_COVERAGE_TARGET }
    }

    /// A table where each canonical name resolves to itself.
    pub fn with_canonicals<I, S>(kind: AliasKind, canonicals: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut t = AliasTable::new(kind);
        for c in canonicals {
            t.insert(c.as_ref(), c.as_ref()).expect("canonical names are distinct after folding");
        }
        t
    }

    pub fn insert(&mut self, raw: &str, canonical: &str) -> Result<(), AliasError> {
        let key = fold(raw);
        match self.entries.get(&key) {
            Some(existing) if existing != canonical => Err(AliasError::Conflict {
                kind: self.kind,
                raw: raw.to_string(),
                first: existing.clone(),
                second: canonical.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.entries.insert(key, canonical.to_string());
                Ok(())
            }
        }
    }

    pub fn lookup(&self, raw: &str) -> Option<&str> {
        self.entries.get(&fold(raw)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct AliasRow {
    kind: String,
    raw: String,
    canonical: String,
}

/// Party and state alias tables, validated against a party universe.
#[derive(Debug, Clone)]
pub struct AliasTables {
    pub party: AliasTable,
    pub state: AliasTable,
}

impl AliasTables {
    /// Tables that know only the canonical names themselves.
    pub fn seeded(universe: &PartyUniverse) -> Self {
        let mut parties: Vec<String> = universe.all_parties().iter().map(|p| p.to_string()).collect();
        parties.push(OTHER_PARTY.to_string());
        AliasTables {
            party: AliasTable::with_canonicals(AliasKind::Party, parties),
            state: AliasTable::with_canonicals(AliasKind::State, universe.states().map(|s| s.to_string())),
        }
    }

    pub fn add(&mut self, kind: AliasKind, raw: &str, canonical: &str, universe: &PartyUniverse) -> Result<(), AliasError> {
        let known = match kind {
            AliasKind::Party => canonical == OTHER_PARTY || universe.all_parties().iter().any(|p| p.as_str() == canonical),
            AliasKind::State => universe.states().any(|s| s.as_str() == canonical),
        };
        if !known {
            return Err(AliasError::OutsideUniverse { kind, raw: raw.to_string(), canonical: canonical.to_string() });
        }
        match kind {
            AliasKind::Party => self.party.insert(raw, canonical),
            AliasKind::State => self.state.insert(raw, canonical),
        }
    }

    /// Load a CSV of `kind,raw,canonical` rows on top of the canonical seeds.
    pub fn load(path: &Path, universe: &PartyUniverse) -> Result<Self, AliasError> {
        let p = path.display().to_string();
        let raw = fs::read_to_string(path).map_err(|e| AliasError::Read { path: p.clone(), reason: e.to_string() })?;
        Self::from_csv(&raw, &p, universe)
    }

    pub fn from_csv(csv_text: &str, origin: &str, universe: &PartyUniverse) -> Result<Self, AliasError> {
        let mut tables = AliasTables::seeded(universe);
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(csv_text.as_bytes());
        for (idx, row) in reader.deserialize::<AliasRow>().enumerate() {
            let row = row.map_err(|e| AliasError::Read { path: origin.to_string(), reason: e.to_string() })?;
            let kind = match row.kind.to_ascii_lowercase().as_str() {
                "party" => AliasKind::Party,
                "state" => AliasKind::State,
                other => return Err(AliasError::UnknownKind { path: origin.to_string(), row: idx + 1, kind: other.to_string() }),
            };
            tables.add(kind, &row.raw, &row.canonical, universe)?;
        }
        Ok(tables)
    }

    /// The alias tables bundled with the crate.
    pub fn builtin(universe: &PartyUniverse) -> Result<Self, AliasError> {
        Self::from_csv(BUILTIN_ALIASES, "builtin aliases.csv", universe)
    }
}

pub const BUILTIN_ALIASES: &str = include_str!("../assets/aliases.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalMention {
    pub tweet_id: String,
    pub party: Party,
    pub state: State,
    pub sentiment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Unresolved {
    pub tweet_id: String,
    pub party_raw: String,
    pub state_raw: String,
    pub party_resolved: bool,
    pub state_resolved: bool,
}

/// Resolve a mention's party and state. A party outside the resolved state's
/// universe becomes `OTHER`.
pub fn canonicalize(
    m: &RawMention,
    tweet_id: &str,
    tables: &AliasTables,
    universe: &PartyUniverse,
) -> Result<CanonicalMention, Unresolved> {
    let party = tables.party.lookup(&m.party_raw);
    let state = tables.state.lookup(&m.state_raw);
    match (party, state) {
        (Some(p), Some(s)) => {
            let state = State::new(s);
            let party = Party::new(p);
            let party = if universe.contains(&state, &party) { party } else { Party::other() };
            Ok(CanonicalMention { tweet_id: tweet_id.to_string(), party, state, sentiment: m.sentiment })
        }
        (p, s) => Err(Unresolved {
            tweet_id: tweet_id.to_string(),
            party_raw: m.party_raw.clone(),
            state_raw: m.state_raw.clone(),
            party_resolved: p.is_some(),
            state_resolved: s.is_some(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyRow {
    pub value: String,
    pub count: usize,
    pub fraction: f64,
    pub cumulative: f64,
    /// Row belongs to the smallest prefix whose cumulative share reaches the target.
    pub within_target: bool,
}

/// Rank raw values by frequency (grouped by folded key, shown in their most
/// frequent spelling) with cumulative shares.
pub fn frequency_report<S: AsRef<str>>(raws: &[S], coverage_target: f64) -> Vec<FrequencyRow> {
    let total = raws.len();
    if total == 0 {
        return Vec::new();
    }
    // key -> (count, first index, spelling counts)
    let mut groups: HashMap<String, (usize, usize, BTreeMap<String, (usize, usize)>)> = HashMap::new();
    for (i, raw) in raws.iter().enumerate() {
        let raw = raw.as_ref();
        let g = groups.entry(fold(raw)).or_insert((0, i, BTreeMap::new()));
        g.0 += 1;
        let sp = g.2.entry(raw.trim().to_string()).or_insert((0, i));
        sp.0 += 1;
    }
    let mut rows: Vec<(String, usize, usize)> = groups
        .into_values()
        .map(|(count, first, spellings)| {
            let shown = spellings
                .into_iter()
                .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
                .map(|(s, _)| s)
                .unwrap_or_default();
            (shown, count, first)
        })
        .collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

    let mut running = 0usize;
    let mut reached = false;
    rows.into_iter()
        .map(|(value, count, _)| {
            let within_target = !reached;
            running += count;
            let cumulative = running as f64 / total as f64;
            if cumulative >= coverage_target {
                reached = true;
            }
            FrequencyRow { value, count, fraction: count as f64 / total as f64, cumulative, within_target }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub kind: AliasKind,
    pub resolved: usize,
    pub total: usize,
    pub fraction: f64,
    pub target: f64,
    pub below_target: bool,
}

/// Fraction of `raws` the table resolves; `1.0` when there is nothing to resolve.
pub fn coverage<S: AsRef<str>>(table: &AliasTable, raws: &[S]) -> CoverageReport {
    let total = raws.len();
    let resolved = raws.iter().filter(|r| table.lookup(r.as_ref()).is_some()).count();
    let fraction = if total == 0 { 1.0 } else { resolved as f64 / total as f64 };
    let below_target = fraction < table.coverage_target;
    if below_target {
        tracing::warn!(kind = ?table.kind, resolved, total, fraction, target = table.coverage_target, "alias coverage below target");
    }
    CoverageReport { kind: table.kind, resolved, total, fraction, target: table.coverage_target, below_target }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables() -> (AliasTables, PartyUniverse) {
        let u = PartyUniverse::default();
        (AliasTables::builtin(&u).unwrap(), u)
    }

    fn raw(p: &str, s: &str) -> RawMention {
        RawMention { party_raw: p.into(), state_raw: s.into(), sentiment: 0.5 }
    }

    #[test]
    fn frequency_example() {
        let rows = frequency_report(&["UP", "UP", "Uttar Pradesh", "Varanasi"], DEFAULT_COVERAGE_TARGET);
        let got: Vec<_> = rows.iter().map(|r| (r.value.as_str(), r.count, r.cumulative)).collect();
        assert_eq!(got, vec![("UP", 2, 0.5), ("Uttar Pradesh", 1, 0.75), ("Varanasi", 1, 1.0)]);
        assert!(rows.iter().all(|r| r.within_target));
    }

    #[test]
    fn frequency_edges() {
        assert!(frequency_report::<&str>(&[], 0.999).is_empty());
        let rows = frequency_report(&["BJP"; 7], 0.999);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].cumulative, 1.0);
    }

    #[test]
    fn frequency_flags_prefix_reaching_target() {
        let mut raws = vec!["a"; 8];
        raws.extend(["b", "c"]);
        let rows = frequency_report(&raws, 0.85);
        let flags: Vec<_> = rows.iter().map(|r| r.within_target).collect();
        assert_eq!(flags, vec![true, true, false]);
    }

    #[test]
    fn frequency_groups_case_variants() {
        let rows = frequency_report(&["up", "UP", "UP ", "Up"], 0.999);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].value, "UP");
        assert_eq!(rows[0].count, 4);
    }

    #[test]
    fn prompt_party_names_resolve() {
        let (t, u) = tables();
        let m = canonicalize(&raw("Bhartiya Janta Party (BJP)", "Uttar Pradesh (UP)"), "1", &t, &u).unwrap();
        assert_eq!(m.party, Party::new("BJP"));
        assert_eq!(m.state, State::new("Uttar Pradesh"));
    }

    #[test]
    fn cities_resolve_to_state() {
        let (t, u) = tables();
        for city in ["Jaunpur", "Amethi", "Varanasi", " varanasi "] {
            assert_eq!(t.state.lookup(city), Some("Uttar Pradesh"), "{city}");
        }
        let m = canonicalize(&raw("SP", "Jaunpur"), "1", &t, &u).unwrap();
        assert_eq!(m.state, State::new("Uttar Pradesh"));
    }

    #[test]
    fn out_of_universe_state_is_unresolved() {
        let (t, u) = tables();
        let e = canonicalize(&raw("BJP", "Maharashtra"), "9", &t, &u).unwrap_err();
        assert!(e.party_resolved && !e.state_resolved);
    }

    #[test]
    fn party_outside_state_universe_is_other() {
        let (t, u) = tables();
        let m = canonicalize(&raw("Shiromani Akali Dal (SAD)", "UP"), "1", &t, &u).unwrap();
        assert!(m.party.is_other());
    }

    #[test]
    fn canonical_names_are_fixed_points() {
        let (t, u) = tables();
        for p in u.all_parties() {
            assert_eq!(t.party.lookup(p.as_str()), Some(p.as_str()));
        }
        for s in u.states() {
            assert_eq!(t.state.lookup(s.as_str()), Some(s.as_str()));
        }
    }

    #[test]
    fn conflicting_alias_rejected() {
        let u = PartyUniverse::default();
        let mut t = AliasTables::seeded(&u);
        t.add(AliasKind::Party, "Congress", "INC", &u).unwrap();
        assert!(matches!(t.add(AliasKind::Party, "congress", "BJP", &u), Err(AliasError::Conflict { .. })));
        assert!(matches!(t.add(AliasKind::State, "Mumbai", "Maharashtra", &u), Err(AliasError::OutsideUniverse { .. })));
    }

    #[test]
    fn coverage_cases() {
        let (t, _) = tables();
        assert_eq!(coverage(&t.state, &["UP", "Punjab"]).fraction, 1.0);
        assert_eq!(coverage::<&str>(&t.state, &[]).fraction, 1.0);
        let none = coverage(&t.state, &["Goa"; 10]);
        assert_eq!(none.fraction, 0.0);
        assert!(none.below_target);

        let mut raws = vec!["UP"; 999];
        raws.push("Goa");
        let r = coverage(&t.state, &raws);
        assert_eq!(r.fraction, 0.999);
        assert!(!r.below_target);
    }

    proptest::proptest! {
        #[test]
        fn coverage_monotone_in_entries(extra in proptest::collection::vec("[a-z]{1,6}", 0..8), raws in proptest::collection::vec("[a-z]{1,6}", 1..30)) {
            let u = PartyUniverse::default();
            let mut t = AliasTables::seeded(&u);
            let mut last = coverage(&t.state, &raws).fraction;
            for e in extra {
                let _ = t.add(AliasKind::State, &e, "Punjab", &u);
                let now = coverage(&t.state, &raws).fraction;
                proptest::prop_assert!(now >= last);
                last = now;
            }
        }
    }
}
