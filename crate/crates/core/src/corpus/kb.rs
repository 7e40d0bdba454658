use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel for a cell the source KB left empty.
pub const NONE_TOKEN: &str = "<none>";

const NAVIGATE_COLUMNS: [&str; 5] = ["poi", "traffic_info", "poi_type", "address", "distance"];
const WEATHER_COLUMNS: [&str; 5] = [
    "location",
    "date",
    "highest_temperature",
    "lowest_temperature",
    "weather_attribute",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Navigate,
    Weather,
}

impl Domain {
    /// Slot columns in canonical order.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Domain::Navigate => &NAVIGATE_COLUMNS,
            Domain::Weather => &WEATHER_COLUMNS,
        }
    }

    /// Column that identifies a row in the raw data.
    pub fn subject(self) -> &'static str {
        match self {
            Domain::Navigate => "poi",
            Domain::Weather => "location",
        }
    }

    /// Domain whose canonical columns are exactly `columns`, in order.
    pub fn from_columns(columns: &[String]) -> Option<Domain> {
        [Domain::Navigate, Domain::Weather]
            .into_iter()
            .find(|d| d.columns().iter().eq(columns.iter()))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Navigate => "navigate",
            Domain::Weather => "weather",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "navigate" | "navigation" | "poi" => Ok(Domain::Navigate),
            "weather" => Ok(Domain::Weather),
            _ => Err(Error::UnknownDomain(s.to_string())),
        }
    }
}

/// Slot-type placeholder for a column, e.g. `<poi>`.
pub fn slot_token(column: &str) -> String {
    format!("<{column}>")
}

/// A knowledge base: `rows.len()` entries over a fixed list of columns.
/// Cell values are single tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbTable {
    pub domain: Domain,
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl KbTable {
    pub fn new(domain: Domain, columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Contract("KB needs at least one column".into()));
        }
        for (k, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::Contract(format!(
                    "KB row {k} has {} cells but the table has {} columns ({})",
                    row.len(),
                    columns.len(),
                    columns.join(", ")
                )));
            }
            if let Some(bad) = row.iter().find(|v| v.is_empty() || v.contains(char::is_whitespace)) {
                return Err(Error::Contract(format!(
                    "KB row {k} has cell `{bad}` that is not a single token"
                )));
            }
        }
        Ok(Self {
            domain,
            columns,
            rows,
        })
    }

    /// Table with the domain's canonical columns.
    pub fn for_domain(domain: Domain, rows: Vec<Vec<String>>) -> Result<Self> {
        Self::new(domain, domain.columns().iter().map(|c| c.to_string()).collect(), rows)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn cell(&self, row: usize, column: usize) -> &str {
        &self.rows[row][column]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Row label shown in traces: the subject cell when present.
    pub fn row_label(&self, row: usize) -> String {
        let col = self.column_index(self.domain.subject()).unwrap_or(0);
        match self.domain {
            Domain::Weather => {
                let date = self.column_index("date").map(|d| self.cell(row, d));
                match date {
                    Some(d) => format!("{}@{}", self.cell(row, col), d),
                    None => self.cell(row, col).to_string(),
                }
            }
            Domain::Navigate => self.cell(row, col).to_string(),
        }
    }

    /// All entity values of the table (sentinel excluded).
    pub fn lexicon(&self) -> BTreeSet<String> {
        self.rows
            .iter()
            .flatten()
            .filter(|v| v.as_str() != NONE_TOKEN)
            .cloned()
            .collect()
    }

    /// First column (in column order) holding `value` in any row.
    pub fn value_column(&self, value: &str) -> Option<usize> {
        if value == NONE_TOKEN {
            return None;
        }
        (0..self.columns.len()).find(|&c| self.rows.iter().any(|r| r[c] == value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(cells: &[&str]) -> Vec<String> {
        cells.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = KbTable::for_domain(Domain::Navigate, vec![row(&["a", "b"])]).unwrap_err();
        assert!(err.to_string().contains("2 cells"));
    }

    #[test]
    fn rejects_multi_word_cells() {
        assert!(KbTable::for_domain(
            Domain::Navigate,
            vec![row(&["valero", "no traffic", "gas_station", "x", "y"])]
        )
        .is_err());
    }

    #[test]
    fn both_domains_have_five_columns() {
        assert_eq!(Domain::Navigate.columns().len(), 5);
        assert_eq!(Domain::Weather.columns().len(), 5);
    }

    #[test]
    fn serde_round_trip_is_identity() {
        let kb = KbTable::for_domain(
            Domain::Navigate,
            vec![row(&["valero", "road_block_nearby", "gas_station", "200_alester_ave", "2_miles"])],
        )
        .unwrap();
        let json = serde_json::to_string(&kb).unwrap();
        assert_eq!(serde_json::from_str::<KbTable>(&json).unwrap(), kb);
    }

    #[test]
    fn domain_parsing() {
        assert_eq!("navigate".parse::<Domain>().unwrap(), Domain::Navigate);
        assert!(matches!("schedule".parse::<Domain>(), Err(Error::UnknownDomain(_))));
    }
}
