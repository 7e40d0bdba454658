//! Templated navigation corpus in KVRET layout.
//!
//! Every scenario has a KB of distinct POI types; the driver asks for one row
//! by type or by name and may follow up about it. Addresses are drawn fresh
//! per scenario, so most of them only ever appear through the KB.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const POI_NAMES: &[&str] = &[
    "Valero", "Chevron", "Shell", "Sigona Farmers Market", "Cafe Venetia", "Teavana",
    "Willows Market", "Stanford Childrens Health", "Palo Alto Garage R", "Town and Country",
    "Jacks House", "The Clement Hotel", "Tai Pan", "Safeway", "Whole Foods", "Philz Coffee",
    "Peets Coffee", "Dominos", "Pizza Hut", "Panda Express", "Mandarin Roots", "Round Table",
    "Travelers Lodge", "Civic Center Garage", "Dish Parking", "Hacienda Market",
    "Midtown Shopping Center", "Ravenswood Shopping Center", "Coupa", "Jing Jing",
    "Four Seasons", "Comfort Inn", "Trader Joes", "Stanford Express Care",
    "Palo Alto Medical Foundation", "Toms House", "Mikes Place", "Cafe Nero",
];

/// The first six also occur in the KVRET navigation KBs.
const POI_TYPES: &[&str] = &[
    "gas station", "grocery store", "coffee or tea place", "hospital", "parking garage",
    "rest stop", "shopping center", "chinese restaurant", "pizza restaurant", "friends house",
    "fast food", "certain address",
];

const STREETS: &[&str] = &[
    "Alester", "Arcadia", "Amherst", "Alger", "Ames", "Amaranta", "Bollard", "University",
    "Almanor", "Middlefield", "Cowper", "Webster", "Bryant", "Hamilton", "Oak", "Pine",
    "Willow", "Cedar", "Maple", "Elm", "Lytton", "Forest", "Homer", "Channing",
];
const SUFFIXES: &[&str] = &["Ave", "St", "Pl", "Dr", "Ln", "Ct", "Rd", "Way"];
const TRAFFIC: &[&str] = &[
    "no traffic", "heavy traffic", "moderate traffic", "road block nearby", "car collision nearby",
];

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub dialogues: usize,
    pub rows: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dialogues: 500,
            rows: 8,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug)]
struct Poi {
    name: String,
    address: String,
    kind: String,
    distance: String,
    traffic: String,
}

impl Poi {
    fn to_json(&self) -> Value {
        json!({
            "poi": self.name,
            "address": self.address,
            "poi_type": self.kind,
            "distance": self.distance,
            "traffic_info": self.traffic,
        })
    }
}

fn random_kb(rng: &mut impl Rng, rows: usize) -> Vec<Poi> {
    assert!(rows <= POI_TYPES.len(), "at most {} rows", POI_TYPES.len());
    let names: Vec<&str> = POI_NAMES.choose_multiple(rng, rows).copied().collect();
    let kinds: Vec<&str> = POI_TYPES.choose_multiple(rng, rows).copied().collect();
    let mut addresses: Vec<String> = Vec::with_capacity(rows);
    while addresses.len() < rows {
        let a = format!(
            "{} {} {}",
            rng.gen_range(100..1000),
            STREETS.choose(rng).unwrap(),
            SUFFIXES.choose(rng).unwrap()
        );
        if !addresses.contains(&a) {
            addresses.push(a);
        }
    }
    names
        .into_iter()
        .zip(kinds)
        .zip(addresses)
        .map(|((name, kind), address)| Poi {
            name: name.to_string(),
            address,
            kind: kind.to_string(),
            distance: format!("{} miles", rng.gen_range(1..10)),
            traffic: TRAFFIC.choose(rng).unwrap().to_string(),
        })
        .collect()
}

fn opening(rng: &mut impl Rng, p: &Poi) -> (String, String) {
    match rng.gen_range(0..5) {
        0 => (
            format!("Address to the {}.", p.kind),
            format!("{} is located at {}.", p.name, p.address),
        ),
        1 => (
            format!("Where is the nearest {}?", p.kind),
            format!("The nearest {} is {} at {}.", p.kind, p.name, p.address),
        ),
        2 => (
            format!("I need to find a {}.", p.kind),
            format!("There is a {} called {} {} away.", p.kind, p.name, p.distance),
        ),
        3 => (
            format!("What is the address of {}?", p.name),
            format!("The address of {} is {}.", p.name, p.address),
        ),
        _ => (
            format!("How far is {}?", p.name),
            format!("{} is {} away.", p.name, p.distance),
        ),
    }
}

fn follow_up(rng: &mut impl Rng, p: &Poi) -> (String, String) {
    match rng.gen_range(0..3) {
        0 => (
            "How is the traffic on the way?".to_string(),
            format!("There is {} on the way to {}.", p.traffic, p.name),
        ),
        1 => (
            "What is the address?".to_string(),
            format!("{} is at {}.", p.name, p.address),
        ),
        _ => (
            "How far away is it?".to_string(),
            format!("It is {} away.", p.distance),
        ),
    }
}

fn closing(rng: &mut impl Rng) -> (String, String) {
    if rng.gen_bool(0.5) {
        ("Thank you.".to_string(), "You're welcome!".to_string())
    } else {
        ("Thanks, that's all.".to_string(), "Have a good day!".to_string())
    }
}

fn turn(speaker: &str, utterance: &str) -> Value {
    json!({"turn": speaker, "data": {"end_dialogue": false, "utterance": utterance}})
}

/// Generates `config.dialogues` navigation dialogues as a KVRET JSON array.
pub fn generate(config: &SyntheticConfig) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.dialogues);
    for i in 0..config.dialogues {
        let kb = random_kb(&mut rng, config.rows);
        let target = &kb[rng.gen_range(0..kb.len())];
        let mut exchanges = vec![opening(&mut rng, target)];
        if rng.gen_bool(0.6) {
            exchanges.push(follow_up(&mut rng, target));
        }
        if rng.gen_bool(0.5) {
            exchanges.push(closing(&mut rng));
        }
        let turns: Vec<Value> = exchanges
            .iter()
            .flat_map(|(d, c)| {
                // Drivers often leave off the final punctuation.
                let d = if rng.gen_bool(0.3) { d.trim_end_matches(['.', '?']) } else { d };
                [turn("driver", d), turn("assistant", c)]
            })
            .collect();
        out.push(json!({
            "dialogue": turns,
            "scenario": {
                "uuid": format!("synthetic-{}-{i:04}", config.seed),
                "task": {"intent": "navigate"},
                "kb": {
                    "column_names": ["poi", "distance", "traffic_info", "poi_type", "address"],
                    "kb_title": "location information",
                    "items": kb.iter().map(Poi::to_json).collect::<Vec<_>>(),
                },
            },
        }));
    }
    Value::Array(out)
}

/// Splits a generated array into (train, dev, test) by position.
pub fn split(corpus: &Value, dev: usize, test: usize) -> (Value, Value, Value) {
    let all = corpus.as_array().cloned().unwrap_or_default();
    let n = all.len();
    let train_end = n.saturating_sub(dev + test);
    let dev_end = n.saturating_sub(test);
    (
        Value::Array(all[..train_end].to_vec()),
        Value::Array(all[train_end..dev_end].to_vec()),
        Value::Array(all[dev_end..].to_vec()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_kvret, Domain, Split};

    #[test]
    fn generated_corpus_parses() {
        let cfg = SyntheticConfig {
            dialogues: 20,
            rows: 8,
            seed: 3,
        };
        let json = generate(&cfg).to_string();
        let dialogues = parse_kvret(&json, Domain::Navigate, Split::Train).unwrap();
        assert_eq!(dialogues.len(), 20);
        for d in &dialogues {
            assert_eq!(d.kb.num_rows(), 8);
            assert_eq!(d.kb.num_columns(), 5);
            let types: std::collections::HashSet<_> =
                d.kb.rows().iter().map(|r| r[2].clone()).collect();
            assert_eq!(types.len(), 8);
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = SyntheticConfig::default();
        assert_eq!(generate(&cfg), generate(&cfg));
    }
}
