//! Regenerate `fixtures/synthetic/corpus.jsonl`: 500 synthetic election posts
//! plus exact duplicates and a few malformed lines, from a fixed seed.
//!
//! ```text
//! cargo run -p votecast --example gen_synthetic -- fixtures/synthetic/corpus.jsonl
//! ```

use std::fmt::Write as _;

use chrono::{Duration, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::json;

const SEED: u64 = 2022;
const POSTS: usize = 500;
const DUPLICATES: usize = 24;

struct PartyVoice {
    party: &'static str,
    handles: &'static [&'static str],
    names: &'static [&'static str],
}

const PUNJAB: &[(PartyVoice, u32)] = &[
    (PartyVoice { party: "AAP", handles: &["@AAPPunjab", "@BhagwantMann", "#AAP", "@ArvindKejriwal", "#LokandaCM"], names: &["Kejriwal", "Bhagwant Mann", "Aam Aadmi Party"] }, 40),
    (PartyVoice { party: "INC", handles: &["@INCPunjab", "@CHARANJITCHANNI", "#111CongressDubara", "@RahulGandhi"], names: &["Channi", "Congress", "Rahul Gandhi"] }, 25),
    (PartyVoice { party: "SAD", handles: &["@Officeofbadal", "@HarsimratBadal", "@bsmajithia", "@officialYAD"], names: &["Shiromani Akali Dal", "Sukhbir Badal", "SGPC"] }, 20),
    (PartyVoice { party: "BJP", handles: &["#PunjabwelcomesModiji", "@BJP4India", "#Modigoback"], names: &["BJP", "Modi"] }, 15),
];

const UP: &[(PartyVoice, u32)] = &[
    (PartyVoice { party: "BJP", handles: &["@myogiadityanath", "@BJP4UP", "#BJPwinningUP", "@AmitShah", "@narendramodi"], names: &["Yogi", "BJP", "Modi"] }, 45),
    (PartyVoice { party: "SP", handles: &["@yadavakhilesh", "@samajwadiparty", "#MulayamSinghYadav"], names: &["Akhilesh", "Samajwadi Party", "Shivpal Yadav"] }, 35),
    (PartyVoice { party: "BSP", handles: &["@Mayawati", "@BSPIndia", "@satishmisrabsp"], names: &["Mayawati", "Bahujan Samaj Party", "BSP"] }, 12),
    (PartyVoice { party: "INC", handles: &["@INCUttarPradesh", "@priyankagandhi"], names: &["Priyanka", "Congress"] }, 8),
];

const PUNJAB_PLACES: &[&str] = &["Punjab", "Amritsar", "Ludhiana", "Jalandhar", "Patiala", "Mohali", "#PunjabElections2022"];
const UP_PLACES: &[&str] = &["UP", "Uttar Pradesh", "Lucknow", "Varanasi", "Gorakhpur", "Jaunpur", "Amethi", "#UPElections2022", "#UttarPradeshElections2022"];

const POSITIVE: &[&str] = &[
    "{name} will win big in {place}, great campaign {handle}",
    "Huge support for {name} at the rally in {place} today {handle}",
    "{place} trusts {name}. Development is real {handle}",
    "Proud to vote for {name} this time in {place} {handle}",
    "{handle} {name} zindabad! Landslide coming in {place}",
];
const NEGATIVE: &[&str] = &[
    "{name} has failed {place} again, only jumla {handle}",
    "Corrupt leaders like {name} must go. {place} is angry {handle}",
    "{handle} shame on {name}, lies after lies in {place}",
    "Worst governance by {name}, {place} will never forget {handle}",
    "{name} scam exposed in {place} {handle}",
];
const NEUTRAL: &[&str] = &[
    "{name} to hold a roadshow in {place} tomorrow {handle}",
    "Live updates: {name} files nomination in {place} {handle}",
    "{handle} press conference by {name} in {place} at 4 pm",
    "Polling schedule announced for {place}, {name} responds {handle}",
];
const RIVALRY: &[&str] = &[
    "{name} is the best choice for {place}, {rival} failed everyone {handle}",
    "{rival} vs {name} in {place}: people support {name} {handle}",
];
const NOISE: &[&str] = &[
    "What a match yesterday, cricket fever everywhere",
    "Traffic is terrible near the station this morning",
    "New cafe opened in the market, good coffee",
    "Exams postponed again, students worried",
];
const USERS: &[&str] = &[
    "voter_pb", "desi_analyst", "kisan_voice", "lucknow_diaries", "amritsar_times", "newsdesk24", "youth4change",
    "panjab_patrika", "ganga_kinare", "rajniti_live", "civic_watch", "poll_junkie",
];

fn pick<'a, T>(rng: &mut StdRng, xs: &'a [T]) -> &'a T {
    xs.choose(rng).expect("non-empty list")
}

fn weighted<'a>(rng: &mut StdRng, xs: &'a [(PartyVoice, u32)]) -> &'a PartyVoice {
    &xs.choose_weighted(rng, |(_, w)| *w).expect("weights").0
}

fn fill(template: &str, name: &str, rival: &str, place: &str, handle: &str) -> String {
    template.replace("{name}", name).replace("{rival}", rival).replace("{place}", place).replace("{handle}", handle)
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "fixtures/synthetic/corpus.jsonl".into());
    let mut rng = StdRng::seed_from_u64(SEED);
    let start = Utc.with_ymd_and_hms(2022, 2, 1, 0, 0, 0).single().expect("valid date");
    let span_minutes = 36 * 24 * 60;

    let mut lines: Vec<String> = Vec::with_capacity(POSTS + DUPLICATES + 8);
    for i in 0..POSTS {
        let id = (1_488_000_000_000_000_000u64 + i as u64 * 7_919_113).to_string();
        let created = start + Duration::minutes(rng.gen_range(0..span_minutes));
        let user = pick(&mut rng, USERS);
        let text = if rng.gen_bool(0.05) {
            pick(&mut rng, NOISE).to_string()
        } else {
            let (voices, places) = if rng.gen_bool(0.5) { (PUNJAB, PUNJAB_PLACES) } else { (UP, UP_PLACES) };
            let v = weighted(&mut rng, voices);
            let name = *pick(&mut rng, v.names);
            let handle = *pick(&mut rng, v.handles);
            let place = *pick(&mut rng, places);
            let roll: f64 = rng.gen();
            let template = if roll < 0.15 {
                pick(&mut rng, RIVALRY)
            } else if roll < 0.55 {
                pick(&mut rng, POSITIVE)
            } else if roll < 0.8 {
                pick(&mut rng, NEGATIVE)
            } else {
                pick(&mut rng, NEUTRAL)
            };
            let rival_voice = loop {
                let r = weighted(&mut rng, voices);
                if r.party != v.party {
                    break r;
                }
            };
            let rival = *pick(&mut rng, rival_voice.names);
            fill(template, name, rival, place, handle)
        };
        let rec = json!({
            "id": id,
            "created_at": created.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            "username": user,
            "tweet": text,
        });
        lines.push(rec.to_string());
    }

    // Exact re-deliveries, placed after their originals.
    for _ in 0..DUPLICATES {
        let k = rng.gen_range(0..POSTS);
        let pos = rng.gen_range(k + 1..=lines.len());
        let dup = lines[k].clone();
        lines.insert(pos, dup);
    }

    let malformed = [
        r#"{"id": "1488000000000999001", "created_at": "2022-02-10T10:00:00Z", "username": "broken""#.to_string(),
        r#"{"id": "1488000000000999002", "created_at": "2022-02-11T10:00:00Z", "username": "no_text"}"#.to_string(),
        r#"{"id": "1488000000000999003", "created_at": "yesterday", "username": "bad_time", "tweet": "AAP rally in Punjab"}"#.to_string(),
        r#"{"id": "", "created_at": "2022-02-12T10:00:00Z", "username": "no_id", "tweet": "BJP rally in UP"}"#.to_string(),
    ];
    for (n, m) in malformed.into_iter().enumerate() {
        let pos = (n + 1) * lines.len() / 5;
        lines.insert(pos, m);
    }

    let mut body = String::new();
    for l in &lines {
        let _ = writeln!(body, "{l}");
    }
    std::fs::write(&out, body).expect("write corpus");
    eprintln!("wrote {} lines to {out}", lines.len());
}
