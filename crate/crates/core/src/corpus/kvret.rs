//! Reader for the KVRET dialogue JSON layout: an array of
//! `{ "dialogue": [{turn, data: {utterance}}], "scenario": {uuid, task: {intent}, kb: {items}} }`.

use std::path::Path;
use std::sync::Arc;

use serde_json::Value;

use super::dialogue::{Dialogue, Speaker, Split, Turn};
use super::kb::{Domain, KbTable, NONE_TOKEN};
use super::text::{normalize_value, tokenize, EntityJoiner};
use crate::error::{Error, Result};

const WEEKDAYS: [&str; 7] = [
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
];

/// Loads all dialogues of `domain` from a KVRET file. The split is taken
/// from the file name.
pub fn load_kvret(path: impl AsRef<Path>, domain: Domain) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kvret(&text, domain, Split::from_path(path))
}

pub fn parse_kvret(json: &str, domain: Domain, split: Split) -> Result<Vec<Dialogue>> {
    let root: Value =
        serde_json::from_str(json).map_err(|e| Error::parse("KVRET file", e.to_string()))?;
    let entries = root
        .as_array()
        .ok_or_else(|| Error::parse("KVRET file", "top level is not an array"))?;

    let mut dialogues = Vec::new();
    let mut skipped = 0usize;
    for (i, entry) in entries.iter().enumerate() {
        let scenario = &entry["scenario"];
        let id = scenario["uuid"]
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| format!("dialogue-{i}"));
        let intent = scenario["task"]["intent"].as_str().unwrap_or_default();
        if intent_domain(intent) != Some(domain) {
            continue;
        }
        let items = &scenario["kb"]["items"];
        if items.is_null() {
            skipped += 1;
            continue;
        }
        let kb = parse_kb(domain, items, &id)?;
        if kb.is_empty() {
            skipped += 1;
            continue;
        }
        let turns = parse_turns(&entry["dialogue"], &kb, &id)?;
        if !turns.iter().any(|t| t.speaker == Speaker::Car) {
            skipped += 1;
            continue;
        }
        dialogues.push(Dialogue {
            id,
            turns,
            kb: Arc::new(kb),
            split,
        });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} {domain} dialogues without a KB or without a car turn");
    }
    Ok(dialogues)
}

fn intent_domain(intent: &str) -> Option<Domain> {
    match intent {
        "navigate" => Some(Domain::Navigate),
        "weather" => Some(Domain::Weather),
        _ => None,
    }
}

/// Builds the table for one scenario. Weather items hold one forecast string
/// per weekday; they become one row per (location, weekday).
pub fn parse_kb(domain: Domain, items: &Value, dialogue_id: &str) -> Result<KbTable> {
    let context = format!("KB of dialogue {dialogue_id}");
    let items = items
        .as_array()
        .ok_or_else(|| Error::parse(&context, "`kb.items` is not an array"))?;
    let mut rows = Vec::new();
    for (k, item) in items.iter().enumerate() {
        let obj = item
            .as_object()
            .ok_or_else(|| Error::parse(&context, format!("item {k} is not an object")))?;
        let field = |name: &str| -> Option<String> {
            obj.get(name)
                .and_then(Value::as_str)
                .map(normalize_value)
                .filter(|v| !v.is_empty())
        };
        let subject = field(domain.subject()).ok_or_else(|| {
            Error::parse(
                &context,
                format!("item {k} is missing its `{}` field", domain.subject()),
            )
        })?;
        match domain {
            Domain::Navigate => {
                let row = domain
                    .columns()
                    .iter()
                    .map(|c| field(c).unwrap_or_else(|| NONE_TOKEN.to_string()))
                    .collect();
                rows.push(row);
            }
            Domain::Weather => {
                for day in WEEKDAYS {
                    let Some(forecast) = obj.get(day).and_then(Value::as_str) else {
                        continue;
                    };
                    let parsed = parse_forecast(forecast);
                    rows.push(vec![
                        subject.clone(),
                        day.to_string(),
                        parsed.high,
                        parsed.low,
                        parsed.attribute,
                    ]);
                }
            }
        }
    }
    KbTable::for_domain(domain, rows).map_err(|e| Error::parse(context, e.to_string()))
}

#[derive(Debug, PartialEq)]
pub struct Forecast {
    pub attribute: String,
    pub low: String,
    pub high: String,
}

/// Parses `<attribute phrases>, low of <t>F, high of <t>F`. Missing parts
/// become the `<none>` sentinel; several attribute phrases are joined.
pub fn parse_forecast(text: &str) -> Forecast {
    let mut attribute = Vec::new();
    let mut low = None;
    let mut high = None;
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let lower = part.to_lowercase();
        if let Some(t) = lower.strip_prefix("low of") {
            low = Some(normalize_value(t));
        } else if let Some(t) = lower.strip_prefix("high of") {
            high = Some(normalize_value(t));
        } else {
            let v = normalize_value(part);
            if !v.is_empty() {
                attribute.push(v);
            }
        }
    }
    let or_none = |v: Option<String>| v.filter(|s| !s.is_empty()).unwrap_or_else(|| NONE_TOKEN.to_string());
    Forecast {
        attribute: if attribute.is_empty() {
            NONE_TOKEN.to_string()
        } else {
            attribute.join("_")
        },
        low: or_none(low),
        high: or_none(high),
    }
}

fn parse_turns(raw: &Value, kb: &KbTable, dialogue_id: &str) -> Result<Vec<Turn>> {
    let context = format!("dialogue {dialogue_id}");
    let raw = raw
        .as_array()
        .ok_or_else(|| Error::parse(&context, "`dialogue` is not an array"))?;
    let lexicon = kb.lexicon();
    let joiner = EntityJoiner::new(lexicon.iter().map(String::as_str));
    let mut turns: Vec<Turn> = Vec::new();
    for (i, t) in raw.iter().enumerate() {
        let speaker = match t["turn"].as_str() {
            Some("driver") => Speaker::Driver,
            Some("assistant") | Some("car") => Speaker::Car,
            other => {
                return Err(Error::parse(
                    &context,
                    format!("turn {i} has unknown speaker {other:?}"),
                ))
            }
        };
        let utterance = t["data"]["utterance"].as_str().unwrap_or_default();
        let tokens = joiner.join(&tokenize(utterance));
        if tokens.is_empty() {
            continue;
        }
        match turns.last_mut() {
            Some(last) if last.speaker == speaker => last.tokens.extend(tokens),
            _ => turns.push(Turn { speaker, tokens }),
        }
    }
    Ok(turns)
}
