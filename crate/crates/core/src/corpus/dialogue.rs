use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::kb::KbTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Driver,
    Car,
}

impl Speaker {
    /// Separator token that prefixes this speaker's turns in the flattened history.
    pub fn token(self) -> &'static str {
        match self {
            Speaker::Driver => "<driver>",
            Speaker::Car => "<car>",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    /// Guesses the split from a file name (`kvret_dev_public.json` etc.).
    pub fn from_path(path: &std::path::Path) -> Split {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        if name.contains("dev") || name.contains("valid") {
            Split::Dev
        } else if name.contains("test") {
            Split::Test
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub tokens: Vec<String>,
}

/// One scenario: alternating turns plus the KB the car can consult.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    pub kb: Arc<KbTable>,
    pub split: Split,
}

impl Dialogue {
    pub fn car_turns(&self) -> impl Iterator<Item = (usize, &Turn)> {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.speaker == Speaker::Car)
    }
}
