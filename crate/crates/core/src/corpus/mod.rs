//! Dialogue data: KVRET ingestion, KB restructuring, vocabulary, delexicalized
//! augmentation and training instances.

mod dialogue;
mod instance;
mod kb;
mod kvret;
pub mod synthetic;
mod text;
mod vocab;

use std::io::Write;
use std::path::Path;

pub use dialogue::{Dialogue, Speaker, Split, Turn};
pub use instance::{build_instances, delexicalize, flatten_history, Instance};
pub use kb::{slot_token, Domain, KbTable, NONE_TOKEN};
pub use kvret::{load_kvret, parse_forecast, parse_kb, parse_kvret, Forecast};
pub use text::{normalize_value, tokenize, EntityJoiner};
pub use vocab::{Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

use crate::error::{Error, Result};

/// Writes one JSON object per line.
pub fn write_instances_jsonl(path: impl AsRef<Path>, instances: &[Instance]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_instances_jsonl(path: impl AsRef<Path>) -> Result<Vec<Instance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
