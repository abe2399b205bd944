//! ASCII PLY read/write for integer point clouds.
//!
//! Only the geometry is exchanged: an ASCII `vertex` element with integer
//! x, y, z values. Extra vertex properties are ignored on read; binary PLY
//! is recognized in the header and rejected explicitly.

use std::io::{BufRead, BufReader, Read, Write};

use crate::cloud::{EventPointCloud, Voxel};
use crate::error::{Error, Result};
use crate::event::Polarity;

/// Write a point set as ASCII PLY, vertices in lexicographic order.
pub fn write_ply<W: Write>(mut writer: W, points: &[Voxel]) -> Result<()> {
    let mut sorted: Vec<Voxel> = points.to_vec();
    sorted.sort_unstable();
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", sorted.len()));
    out.push_str("property int x\nproperty int y\nproperty int z\nend_header\n");
    for p in &sorted {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    writer
        .write_all(out.as_bytes())
        .map_err(|e| Error::io("<stream>", e))
}

/// Serialize a cloud to PLY bytes (points are already sorted).
pub fn cloud_to_ply(cloud: &EventPointCloud) -> Vec<u8> {
    let mut out = Vec::new();
    write_ply(&mut out, cloud.points()).expect("in-memory write cannot fail");
    out
}

/// Parse an ASCII PLY vertex list.
pub fn read_ply<R: Read>(reader: R) -> Result<Vec<Voxel>> {
    let mut lines = BufReader::new(reader).lines().enumerate();

    let mut next_line = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(line))) => Ok((i + 1, line)),
            Some((_, Err(e))) => Err(Error::io("<stream>", e)),
            None => Err(Error::MalformedPly(format!("unexpected end of {what}"))),
        }
    };

    let (_, magic) = next_line("header")?;
    if magic.trim() != "ply" {
        return Err(Error::MalformedPly(format!(
            "expected `ply` magic, got `{}`",
            magic.trim()
        )));
    }

    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    let mut format_seen = false;
    loop {
        let (_, line) = next_line("header")?;
        let line = line.trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("format") => {
                let kind = tokens.next().unwrap_or("");
                if kind.starts_with("binary") {
                    return Err(Error::MalformedPly(
                        "binary PLY is not supported, expected `format ascii 1.0`".into(),
                    ));
                }
                if kind != "ascii" {
                    return Err(Error::MalformedPly(format!("unknown format `{kind}`")));
                }
                format_seen = true;
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = tokens.next().unwrap_or("");
                let count: usize = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::MalformedPly(format!("bad element line `{line}`")))?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(Error::MalformedPly("duplicate vertex element".into()));
                    }
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    if vertex_count.is_none() && count > 0 {
                        return Err(Error::MalformedPly(format!(
                            "element `{name}` with data precedes the vertex element"
                        )));
                    }
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if in_vertex_element {
                    let tokens: Vec<&str> = tokens.collect();
                    if tokens.first() == Some(&"list") {
                        return Err(Error::MalformedPly(
                            "list-typed vertex properties are not supported".into(),
                        ));
                    }
                    let name = tokens
                        .last()
                        .ok_or_else(|| Error::MalformedPly(format!("bad property `{line}`")))?;
                    properties.push((*name).to_string());
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::MalformedPly(format!(
                    "unexpected header keyword `{other}`"
                )))
            }
            None => {}
        }
    }
    if !format_seen {
        return Err(Error::MalformedPly("missing `format` line".into()));
    }
    let count = vertex_count.ok_or_else(|| Error::MalformedPly("missing vertex element".into()))?;

    let coord_col = |name: &str| -> Result<usize> {
        properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::MalformedPly(format!("vertex element lacks property `{name}`")))
    };
    let cols = [coord_col("x")?, coord_col("y")?, coord_col("z")?];

    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let (line_no, line) = next_line("vertex data")?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < properties.len() {
            return Err(Error::MalformedPly(format!(
                "vertex row at line {line_no} has {} of {} fields",
                fields.len(),
                properties.len()
            )));
        }
        let mut coords = [0i64; 3];
        for (axis, &col) in cols.iter().enumerate() {
            coords[axis] = parse_integer_coord(fields[col], line_no)?;
        }
        points.push(Voxel::new(coords[0], coords[1], coords[2]));
    }
    Ok(points)
}

/// Read a PLY file into a cloud of the given polarity.
pub fn read_ply_cloud<R: Read>(reader: R, polarity: Polarity) -> Result<EventPointCloud> {
    Ok(EventPointCloud::from_points(polarity, read_ply(reader)?))
}

fn parse_integer_coord(field: &str, line: usize) -> Result<i64> {
    let bad = || Error::NonIntegerCoordinate {
        line,
        value: field.to_string(),
    };
    let value: f64 = field.parse().map_err(|_| bad())?;
    if !value.is_finite() || value.fract() != 0.0 || value.abs() > 2f64.powi(53) {
        return Err(bad());
    }
    Ok(value as i64)
}
