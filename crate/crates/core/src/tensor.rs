//! Fixed-kernel event spike tensors for external classifiers.
//!
//! Events accumulate into a (2B, H, W) grid: B temporal bins per polarity,
//! NEG block first, with a trilinear temporal kernel splitting each event's
//! unit weight across the two straddled bins. Cell totals therefore sum to
//! the event count exactly.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventSequence, Polarity};

/// Default temporal bin count.
pub const DEFAULT_BINS: usize = 9;
/// Default grid height (sensor rows).
pub const DEFAULT_HEIGHT: usize = 180;
/// Default grid width (sensor columns).
pub const DEFAULT_WIDTH: usize = 240;

/// A dense (C, H, W) tensor with C = 2 * bins channels, NEG bins first.
#[derive(Clone, Debug, PartialEq)]
pub struct EventTensor {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    pub t_min: u32,
    pub t_max: u32,
    pub source_id: Option<String>,
    values: Vec<f64>,
}

impl EventTensor {
    pub fn zeros(bins: usize, height: usize, width: usize) -> EventTensor {
        assert!(bins >= 1 && height >= 1 && width >= 1);
        EventTensor {
            bins,
            height,
            width,
            t_min: 0,
            t_max: 0,
            source_id: None,
            values: vec![0.0; 2 * bins * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        2 * self.bins
    }

    fn index(&self, channel: usize, y: usize, x: usize) -> usize {
        (channel * self.height + y) * self.width + x
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.values[self.index(channel, y, x)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// First channel of a polarity's bin block.
    pub fn polarity_base(&self, p: Polarity) -> usize {
        match p {
            Polarity::Neg => 0,
            Polarity::Pos => self.bins,
        }
    }
}

/// Accumulate a sequence into a tensor.
///
/// The grid must cover the events: `height > max y`, `width > max x`.
/// Bin coordinate: t* = (t - t_min) / (t_max - t_min) * (B - 1), with the
/// whole weight in bin 0 when the sequence spans a single timestamp.
pub fn build_tensor(
    seq: &EventSequence,
    bins: usize,
    height: usize,
    width: usize,
) -> Result<EventTensor> {
    let mut tensor = EventTensor::zeros(bins, height, width);
    tensor.source_id = seq.source_id.clone();
    if seq.is_empty() {
        return Ok(tensor);
    }
    let t_min = seq.events.first().expect("non-empty").t_raw;
    let t_max = seq.events.last().expect("non-empty").t_raw;
    tensor.t_min = t_min;
    tensor.t_max = t_max;
    let span = f64::from(t_max - t_min);

    for e in &seq.events {
        let (x, y) = (usize::from(e.x), usize::from(e.y));
        if y >= height || x >= width {
            return Err(Error::CoordinateOutOfGrid {
                x: e.x,
                y: e.y,
                width,
                height,
            });
        }
        let t_star = if span == 0.0 {
            0.0
        } else {
            f64::from(e.t_raw - t_min) / span * (bins - 1) as f64
        };
        let lower = t_star.floor();
        let frac = t_star - lower;
        let bin = lower as usize;
        let base = tensor.polarity_base(e.p);
        let idx = tensor.index(base + bin, y, x);
        tensor.values[idx] += 1.0 - frac;
        if bin + 1 < bins {
            let idx = tensor.index(base + bin + 1, y, x);
            tensor.values[idx] += frac;
        }
    }
    Ok(tensor)
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    dims: [usize; 3],
    dtype: String,
    layout: String,
    bins: usize,
    height: usize,
    width: usize,
    t_min: u32,
    t_max: u32,
    source_id: Option<String>,
}

/// Serialize: one JSON header line, then the raw little-endian f32 stream
/// in C,H,W row-major order.
pub fn write_tensor<W: Write>(tensor: &EventTensor, mut writer: W) -> Result<()> {
    let header = TensorHeader {
        dims: [tensor.channels(), tensor.height, tensor.width],
        dtype: "f32".into(),
        layout: "C,H,W".into(),
        bins: tensor.bins,
        height: tensor.height,
        width: tensor.width,
        t_min: tensor.t_min,
        t_max: tensor.t_max,
        source_id: tensor.source_id.clone(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for v in &tensor.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    writer.write_all(&out).map_err(|e| Error::io("<stream>", e))
}

/// Parse the container written by [`write_tensor`].
pub fn read_tensor<R: Read>(reader: R) -> Result<EventTensor> {
    let mut reader = BufReader::new(reader);
    let mut header_line = Vec::new();
    reader
        .read_until(b'\n', &mut header_line)
        .map_err(|e| Error::io("<stream>", e))?;
    if header_line.last() != Some(&b'\n') {
        return Err(Error::TensorMismatch("missing header line".into()));
    }
    header_line.pop();
    let header: TensorHeader = serde_json::from_slice(&header_line)
        .map_err(|e| Error::TensorMismatch(format!("bad header JSON: {e}")))?;
    if header.dims != [2 * header.bins, header.height, header.width] {
        return Err(Error::TensorMismatch(format!(
            "dims {:?} disagree with bins/height/width",
            header.dims
        )));
    }
    if header.dtype != "f32" {
        return Err(Error::TensorMismatch(format!(
            "unsupported dtype `{}`",
            header.dtype
        )));
    }

    let expected = header.dims.iter().product::<usize>() * 4;
    let mut payload = Vec::with_capacity(expected);
    reader
        .read_to_end(&mut payload)
        .map_err(|e| Error::io("<stream>", e))?;
    if payload.len() != expected {
        return Err(Error::TensorMismatch(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
        .collect();
    Ok(EventTensor {
        bins: header.bins,
        height: header.height,
        width: header.width,
        t_min: header.t_min,
        t_max: header.t_max,
        source_id: header.source_id,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;

    fn ev(x: u8, y: u8, t_raw: u32, p: Polarity) -> Event {
        Event { x, y, t_raw, p }
    }

    #[test]
    fn first_event_lands_fully_in_bin_zero() {
        let seq = EventSequence::new(
            vec![ev(3, 2, 100, Polarity::Pos), ev(0, 0, 900, Polarity::Pos)],
            1e6,
        );
        let t = build_tensor(&seq, 9, 4, 8).unwrap();
        assert_eq!(t.get(t.polarity_base(Polarity::Pos), 2, 3), 1.0);
    }

    #[test]
    fn midpoint_event_splits_evenly() {
        // bins 0..8; t* = 3.5 lies between bins 3 and 4:
        // t = t_min + 3.5/8 * span, so span = 16 and t = 7.
        let seq = EventSequence::new(
            vec![
                ev(0, 0, 0, Polarity::Neg),
                ev(1, 0, 7, Polarity::Neg),
                ev(2, 0, 16, Polarity::Neg),
            ],
            1e6,
        );
        let t = build_tensor(&seq, 9, 1, 4).unwrap();
        assert_eq!(t.get(3, 0, 1), 0.5);
        assert_eq!(t.get(4, 0, 1), 0.5);
    }

    #[test]
    fn last_event_lands_fully_in_last_bin() {
        let seq = EventSequence::new(
            vec![ev(0, 0, 0, Polarity::Pos), ev(1, 1, 80, Polarity::Pos)],
            1e6,
        );
        let t = build_tensor(&seq, 9, 2, 2).unwrap();
        assert_eq!(t.get(t.polarity_base(Polarity::Pos) + 8, 1, 1), 1.0);
    }

    #[test]
    fn single_timestamp_degenerates_to_bin_zero() {
        let seq = EventSequence::new(vec![ev(0, 0, 42, Polarity::Neg)], 1e6);
        let t = build_tensor(&seq, 9, 1, 1).unwrap();
        assert_eq!(t.get(0, 0, 0), 1.0);
        assert_eq!(t.sum(), 1.0);
    }

    #[test]
    fn polarity_blocks_are_disjoint() {
        let seq = EventSequence::new(
            vec![
                ev(0, 0, 0, Polarity::Neg),
                ev(0, 0, 50, Polarity::Pos),
                ev(0, 0, 100, Polarity::Pos),
            ],
            1e6,
        );
        let t = build_tensor(&seq, 4, 1, 1).unwrap();
        let neg_mass: f64 = (0..4).map(|c| t.get(c, 0, 0)).sum();
        let pos_mass: f64 = (4..8).map(|c| t.get(c, 0, 0)).sum();
        assert!((neg_mass - 1.0).abs() < 1e-12);
        assert!((pos_mass - 2.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_grid_events_are_rejected() {
        let seq = EventSequence::new(vec![ev(10, 0, 0, Polarity::Pos)], 1e6);
        assert!(matches!(
            build_tensor(&seq, 2, 4, 4),
            Err(Error::CoordinateOutOfGrid { .. })
        ));
    }

    #[test]
    fn empty_tensor_round_trips() {
        let t = EventTensor::zeros(2, 3, 4);
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();
        let back = read_tensor(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn mismatched_payload_is_an_error() {
        let t = EventTensor::zeros(1, 2, 2);
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(matches!(
            read_tensor(buf.as_slice()),
            Err(Error::TensorMismatch(_))
        ));
    }

    #[test]
    fn round_trip_preserves_f32_values() {
        let seq = EventSequence::new(
            (0..50)
                .map(|i| ev(i % 4, i % 3, u32::from(i) * 17 + 1, Polarity::Pos))
                .collect(),
            1e6,
        );
        let t = build_tensor(&seq, 5, 3, 4).unwrap();
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();
        let back = read_tensor(buf.as_slice()).unwrap();
        for (a, b) in t.values().iter().zip(back.values()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let mut buf2 = Vec::new();
        write_tensor(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }
}
