//! Newline-delimited JSON dataset files. One case per line:
//!
//! ```text
//! {"case_id": .., "patient_id": .., "label": 0|1, "sample_rate_hz": ..,
//!  "leads": [[..] x 12], "cine": [[..] x 3]?, "truth_window": {"start_ms", "end_ms"}?,
//!  "offset": n?}
//! ```
//!
//! Numbers are written in scientific notation with 17 significant digits so a
//! save/load cycle reproduces every finite value bit for bit.

use std::io::Write;
use std::path::Path;

use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;
use serde_json::Value;

use super::{CineTrajectory, EcgRecord, GroundTruthWindow, Label, Result, SignalError, SyntheticCase};

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub record: EcgRecord,
    pub cine: Option<CineTrajectory>,
    pub truth_window: Option<GroundTruthWindow>,
    /// Start index of the analysis window for pre-aligned series.
    pub offset: Option<usize>,
}

impl DatasetEntry {
    pub fn new(record: EcgRecord) -> Self {
        Self {
            record,
            cine: None,
            truth_window: None,
            offset: None,
        }
    }
}

impl From<SyntheticCase> for DatasetEntry {
    fn from(case: SyntheticCase) -> Self {
        Self {
            record: case.record,
            cine: Some(case.trajectory),
            truth_window: Some(case.truth),
            offset: None,
        }
    }
}

struct Full(f64);

impl Serialize for Full {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

struct Rows<'a>(&'a [Vec<f64>]);

impl Serialize for Rows<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut outer = s.serialize_seq(Some(self.0.len()))?;
        for row in self.0 {
            outer.serialize_element(&Row(row))?;
        }
        outer.end()
    }
}

struct Row<'a>(&'a [f64]);

impl Serialize for Row<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for &v in self.0 {
            seq.serialize_element(&Full(v))?;
        }
        seq.end()
    }
}

struct Window<'a>(&'a GroundTruthWindow);

impl Serialize for Window<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let w = self.0;
        let mut map = s.serialize_map(None)?;
        map.serialize_entry("start_ms", &Full(w.start_ms))?;
        map.serialize_entry("end_ms", &Full(w.end_ms))?;
        if !w.description.is_empty() {
            map.serialize_entry("description", &w.description)?;
        }
        map.end()
    }
}

impl Serialize for DatasetEntry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.record;
        let mut map = s.serialize_map(None)?;
        map.serialize_entry("case_id", &r.case_id)?;
        map.serialize_entry("patient_id", &r.patient_id)?;
        map.serialize_entry("label", &r.label)?;
        map.serialize_entry("sample_rate_hz", &r.sample_rate_hz)?;
        map.serialize_entry("leads", &Rows(&r.leads))?;
        if let Some(cine) = &self.cine {
            map.serialize_entry("cine", &Rows(&cine.path))?;
        }
        if let Some(w) = &self.truth_window {
            map.serialize_entry("truth_window", &Window(w))?;
        }
        if let Some(offset) = self.offset {
            map.serialize_entry("offset", &offset)?;
        }
        map.end()
    }
}

const REQUIRED: [&str; 5] = ["case_id", "patient_id", "label", "sample_rate_hz", "leads"];

#[derive(Deserialize)]
struct Wire {
    case_id: String,
    patient_id: String,
    label: Label,
    sample_rate_hz: u32,
    leads: Vec<Vec<f64>>,
    #[serde(default)]
    cine: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    truth_window: Option<GroundTruthWindow>,
    #[serde(default)]
    offset: Option<usize>,
}

fn parse_line(line: &str, lineno: usize) -> Result<DatasetEntry> {
    let parse_err = |message: String| SignalError::ParseError { line: lineno, message };
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err("expected a JSON object".into()))?;
    if let Some(field) = REQUIRED.iter().find(|f| !obj.contains_key(**f)) {
        return Err(SignalError::SchemaError {
            line: lineno,
            field: field.to_string(),
        });
    }
    let wire: Wire = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
    let record = EcgRecord::new(
        wire.case_id,
        wire.patient_id,
        wire.label,
        wire.sample_rate_hz,
        wire.leads,
    )
    .map_err(|e| parse_err(e.to_string()))?;
    let cine = wire
        .cine
        .map(|path| CineTrajectory::new(record.case_id.clone(), record.sample_rate_hz, path))
        .transpose()
        .map_err(|e| parse_err(e.to_string()))?;
    if let Some(w) = &wire.truth_window {
        GroundTruthWindow::new(w.start_ms, w.end_ms, "").map_err(|e| parse_err(e.to_string()))?;
    }
    Ok(DatasetEntry {
        record,
        cine,
        truth_window: wire.truth_window,
        offset: wire.offset,
    })
}

/// Parses NDJSON text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SignalError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}

pub fn write_dataset<W: Write>(mut out: W, entries: &[DatasetEntry]) -> Result<()> {
    for entry in entries {
        let line = serde_json::to_string(entry).map_err(|e| SignalError::Io(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| SignalError::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| SignalError::Io(e.to_string()))
}

pub fn save_dataset(path: impl AsRef<Path>, entries: &[DatasetEntry]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| SignalError::Io(format!("{}: {e}", path.display())))?;
    write_dataset(std::io::BufWriter::new(file), entries)
}
