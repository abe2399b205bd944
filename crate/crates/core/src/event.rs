//! Event records, the 40-bit binary event format, and dataset traversal.
//!
//! Each event is stored on disk as a 40-bit little-endian word:
//! bits 0-22 timestamp, bit 23 polarity, bits 24-31 x, bits 32-39 y.
//! The word is serialized as 5 bytes, least-significant byte first.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest storable timestamp (23-bit field).
pub const T_RAW_MAX: u32 = (1 << 23) - 1;

const WORD_BYTES: usize = 5;
const WORD_MASK: u64 = (1 << 40) - 1;

/// Direction of the brightness change that triggered an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Polarity {
    Neg,
    Pos,
}

impl Polarity {
    pub fn opposite(self) -> Polarity {
        match self {
            Polarity::Neg => Polarity::Pos,
            Polarity::Pos => Polarity::Neg,
        }
    }

    /// The single format bit for this polarity (NEG=0, POS=1).
    pub fn bit(self) -> u64 {
        match self {
            Polarity::Neg => 0,
            Polarity::Pos => 1,
        }
    }

    pub fn from_bit(bit: u64) -> Polarity {
        if bit & 1 == 0 {
            Polarity::Neg
        } else {
            Polarity::Pos
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarity::Neg => write!(f, "NEG"),
            Polarity::Pos => write!(f, "POS"),
        }
    }
}

/// A single (x, y, t, p) event record.
///
/// `x` and `y` are pixel coordinates (8 bits each by construction);
/// `t_raw` is the timestamp in stored units and must stay below 2^23.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u8,
    pub y: u8,
    pub t_raw: u32,
    pub p: Polarity,
}

impl Event {
    /// Build an event, rejecting timestamps wider than the 23-bit field.
    pub fn new(x: u8, y: u8, t_raw: u32, p: Polarity) -> Result<Event> {
        if t_raw > T_RAW_MAX {
            return Err(Error::FieldOverflow {
                field: "t_raw",
                value: u64::from(t_raw),
                bits: 23,
            });
        }
        Ok(Event { x, y, t_raw, p })
    }
}

/// Encode an event into a 40-bit word.
///
/// Bit 0 is the least-significant bit of the timestamp.
pub fn pack_event(e: Event) -> Result<u64> {
    if e.t_raw > T_RAW_MAX {
        return Err(Error::FieldOverflow {
            field: "t_raw",
            value: u64::from(e.t_raw),
            bits: 23,
        });
    }
    Ok(u64::from(e.t_raw) | (e.p.bit() << 23) | (u64::from(e.x) << 24) | (u64::from(e.y) << 32))
}

/// Decode a 40-bit word back into an event. Exact inverse of [`pack_event`].
///
/// Every 40-bit word is a valid event; wider words are a caller bug.
pub fn unpack_event(word: u64) -> Event {
    assert!(word <= WORD_MASK, "event word {word:#x} wider than 40 bits");
    Event {
        x: ((word >> 24) & 0xff) as u8,
        y: ((word >> 32) & 0xff) as u8,
        t_raw: (word & 0x7f_ffff) as u32,
        p: Polarity::from_bit(word >> 23),
    }
}

/// Interpretation of the stored timestamp field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimestampUnit {
    /// `t_raw` counts microseconds (the common N-Caltech101 distribution unit).
    #[default]
    #[serde(alias = "us")]
    Microseconds,
    /// `t_raw` counts milliseconds (the unit named by the format description).
    #[serde(alias = "ms")]
    Milliseconds,
    /// `t_raw` counts whole seconds.
    #[serde(alias = "s")]
    Seconds,
}

impl TimestampUnit {
    pub fn units_per_second(self) -> f64 {
        match self {
            TimestampUnit::Microseconds => 1e6,
            TimestampUnit::Milliseconds => 1e3,
            TimestampUnit::Seconds => 1.0,
        }
    }

    /// Parse the CLI spelling (`us`, `ms`, `s`).
    pub fn parse(s: &str) -> Option<TimestampUnit> {
        match s {
            "us" | "microseconds" => Some(TimestampUnit::Microseconds),
            "ms" | "milliseconds" => Some(TimestampUnit::Milliseconds),
            "s" | "seconds" => Some(TimestampUnit::Seconds),
            _ => None,
        }
    }
}

impl fmt::Display for TimestampUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimestampUnit::Microseconds => write!(f, "us"),
            TimestampUnit::Milliseconds => write!(f, "ms"),
            TimestampUnit::Seconds => write!(f, "s"),
        }
    }
}

/// Binary format parameters. The byte order is fixed: 5-byte little-endian words.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatParams {
    pub timestamp_unit: TimestampUnit,
}

impl FormatParams {
    pub fn new(timestamp_unit: TimestampUnit) -> FormatParams {
        FormatParams { timestamp_unit }
    }

    pub fn units_per_second(&self) -> f64 {
        self.timestamp_unit.units_per_second()
    }
}

/// An ordered event stream with its timestamp scale and provenance.
///
/// Events are kept non-decreasing in `t_raw`; ingestion sorts stably so
/// that equal timestamps retain file order.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSequence {
    pub events: Vec<Event>,
    pub units_per_second: f64,
    pub label: Option<String>,
    pub source_id: Option<String>,
}

impl EventSequence {
    /// Build a sequence, stably sorting events by timestamp.
    pub fn new(mut events: Vec<Event>, units_per_second: f64) -> EventSequence {
        assert!(
            units_per_second > 0.0,
            "units_per_second must be positive, got {units_per_second}"
        );
        events.sort_by_key(|e| e.t_raw);
        EventSequence {
            events,
            units_per_second,
            label: None,
            source_id: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> EventSequence {
        self.label = Some(label.into());
        self
    }

    pub fn with_source_id(mut self, source_id: impl Into<String>) -> EventSequence {
        self.source_id = Some(source_id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Timestamp of an event in seconds.
    pub fn seconds(&self, e: &Event) -> f64 {
        f64::from(e.t_raw) / self.units_per_second
    }
}

/// Decode a binary event stream. The stream length must be a whole number
/// of 5-byte words; events are stably sorted by timestamp on ingest.
pub fn read_events<R: Read>(mut reader: R, params: &FormatParams) -> Result<EventSequence> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<stream>", e))?;
    decode_events(&bytes, params)
}

/// Decode a binary event buffer (see [`read_events`]).
pub fn decode_events(bytes: &[u8], params: &FormatParams) -> Result<EventSequence> {
    if !bytes.len().is_multiple_of(WORD_BYTES) {
        return Err(Error::TruncatedStream { len: bytes.len() });
    }
    let events = bytes
        .chunks_exact(WORD_BYTES)
        .map(|w| {
            let word = u64::from(w[0])
                | u64::from(w[1]) << 8
                | u64::from(w[2]) << 16
                | u64::from(w[3]) << 24
                | u64::from(w[4]) << 32;
            unpack_event(word)
        })
        .collect();
    Ok(EventSequence::new(events, params.units_per_second()))
}

/// Encode a sequence to the 5-byte-per-event binary stream.
pub fn write_events<W: Write>(mut writer: W, seq: &EventSequence) -> Result<()> {
    let bytes = encode_events(seq)?;
    writer
        .write_all(&bytes)
        .map_err(|e| Error::io("<stream>", e))
}

/// Encode a sequence into a binary event buffer (see [`write_events`]).
pub fn encode_events(seq: &EventSequence) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(seq.len() * WORD_BYTES);
    for e in &seq.events {
        let word = pack_event(*e)?;
        out.extend_from_slice(&word.to_le_bytes()[..WORD_BYTES]);
    }
    Ok(out)
}

/// Read a `.bin` event file, recording the path as the sequence source id.
pub fn read_events_file(path: &Path, params: &FormatParams) -> Result<EventSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_events(&bytes, params)?.with_source_id(path.display().to_string()))
}

/// Write a `.bin` event file.
pub fn write_events_file(path: &Path, seq: &EventSequence) -> Result<()> {
    let bytes = encode_events(seq)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write the `.evt.csv` debug text format: header `x,y,t_raw,p`, one event
/// per row, decimal integers.
pub fn write_events_csv<W: Write>(mut writer: W, seq: &EventSequence) -> Result<()> {
    let mut out = String::from("x,y,t_raw,p\n");
    for e in &seq.events {
        out.push_str(&format!("{},{},{},{}\n", e.x, e.y, e.t_raw, e.p.bit()));
    }
    writer
        .write_all(out.as_bytes())
        .map_err(|e| Error::io("<stream>", e))
}

/// Read the `.evt.csv` debug text format.
pub fn read_events_csv<R: Read>(reader: R, params: &FormatParams) -> Result<EventSequence> {
    let reader = BufReader::new(reader);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        let row = line.trim();
        if row.is_empty() {
            continue;
        }
        if i == 0 {
            if row != "x,y,t_raw,p" {
                return Err(Error::MalformedRow {
                    line: 1,
                    reason: format!("expected header `x,y,t_raw,p`, got `{row}`"),
                });
            }
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::MalformedRow {
                line: i + 1,
                reason: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<u64> {
            s.trim().parse::<u64>().map_err(|_| Error::MalformedRow {
                line: i + 1,
                reason: format!("bad {what} `{s}`"),
            })
        };
        let x = parse(fields[0], "x")?;
        let y = parse(fields[1], "y")?;
        let t = parse(fields[2], "t_raw")?;
        let p = parse(fields[3], "p")?;
        if x > 0xff || y > 0xff || t > u64::from(T_RAW_MAX) || p > 1 {
            return Err(Error::MalformedRow {
                line: i + 1,
                reason: "field exceeds its width".into(),
            });
        }
        events.push(Event {
            x: x as u8,
            y: y as u8,
            t_raw: t as u32,
            p: Polarity::from_bit(p),
        });
    }
    Ok(EventSequence::new(events, params.units_per_second()))
}

/// One labeled event file inside a dataset tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetEntry {
    pub label: String,
    pub path: PathBuf,
}

/// Walk a dataset root laid out as one subdirectory per class with event
/// files inside. Classes and files come back in lexicographic order.
pub fn walk_dataset(root: &Path) -> Result<Vec<DatasetEntry>> {
    let mut classes = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            classes.push(path);
        }
    }
    classes.sort();

    let mut out = Vec::new();
    for class_dir in classes {
        let label = class_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files = Vec::new();
        for entry in fs::read_dir(&class_dir).map_err(|e| Error::io(&class_dir, e))? {
            let entry = entry.map_err(|e| Error::io(&class_dir, e))?;
            let path = entry.path();
            if path.is_file() {
                files.push(path);
            }
        }
        files.sort();
        out.extend(files.into_iter().map(|path| DatasetEntry {
            label: label.clone(),
            path,
        }));
    }
    Ok(out)
}
