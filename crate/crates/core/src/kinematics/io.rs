//! Delimited-text marker and configuration streams.
//!
//! Marker files start with the header `time_s,f11_x,f11_y,f11_z,...` in
//! [`MARKER_LABELS`] order (millimeters). Columns may be omitted and cells
//! left empty; both read back as missing markers.

use std::path::Path;

use super::{Configuration, MarkerFrame, JOINT_COUNT, JOINT_NAMES, MARKER_LABELS};
use crate::error::{Error, Result};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::parse(path.display().to_string(), format!("{other:?}")),
    }
}

pub fn write_markers(path: &Path, frames: &[MarkerFrame]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["time_s".to_string()];
    for l in MARKER_LABELS {
        for axis in ["x", "y", "z"] {
            header.push(format!("{l}_{axis}"));
        }
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for f in frames {
        let mut row = vec![format!("{}", f.time)];
        for p in &f.positions {
            match p {
                Some(p) => row.extend(p.iter().map(|v| format!("{v}"))),
                None => row.extend(std::iter::repeat(String::new()).take(3)),
            }
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_cell(path: &Path, line: u64, cell: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|e| Error::parse(format!("{} line {line}", path.display()), format!("`{cell}`: {e}")))
}

pub fn read_markers(path: &Path) -> Result<Vec<MarkerFrame>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0).map(str::trim) != Some("time_s") {
        return Err(Error::parse(path.display().to_string(), "first column must be time_s"));
    }
    // (marker index, axis) per column
    let mut columns = Vec::new();
    for name in header.iter().skip(1) {
        let name = name.trim();
        let (label, axis) = name
            .rsplit_once('_')
            .ok_or_else(|| Error::parse(path.display().to_string(), format!("bad column `{name}`")))?;
        let m = super::marker_index(label)
            .ok_or_else(|| Error::parse(path.display().to_string(), format!("unknown marker `{label}`")))?;
        let a = match axis {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            _ => return Err(Error::parse(path.display().to_string(), format!("bad axis in `{name}`"))),
        };
        columns.push((m, a));
    }
    let mut frames = Vec::new();
    for (row_no, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = row_no as u64 + 2;
        let time = parse_cell(path, line, rec.get(0).unwrap_or(""))?;
        let mut partial = [[None::<f64>; 3]; super::MARKER_COUNT];
        for (cell, &(m, a)) in rec.iter().skip(1).zip(&columns) {
            if !cell.trim().is_empty() {
                partial[m][a] = Some(parse_cell(path, line, cell)?);
            }
        }
        let mut frame = MarkerFrame::empty(time);
        for (slot, p) in frame.positions.iter_mut().zip(partial) {
            if let [Some(x), Some(y), Some(z)] = p {
                *slot = Some([x, y, z]);
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Writes `time_s,J1_1,...,Jw_y` rows in radians.
pub fn write_configurations(path: &Path, rows: &[(f64, Configuration)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["time_s"];
    header.extend(JOINT_NAMES);
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (t, x) in rows {
        let mut row = vec![format!("{t}")];
        row.extend(x.0.iter().map(|v| format!("{v}")));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_configurations(path: &Path) -> Result<Vec<(f64, Configuration)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (row_no, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = row_no as u64 + 2;
        if rec.len() != JOINT_COUNT + 1 {
            return Err(Error::parse(
                format!("{} line {line}", path.display()),
                format!("expected {} fields, found {}", JOINT_COUNT + 1, rec.len()),
            ));
        }
        let t = parse_cell(path, line, &rec[0])?;
        let mut x = [0.0; JOINT_COUNT];
        for (v, cell) in x.iter_mut().zip(rec.iter().skip(1)) {
            *v = parse_cell(path, line, cell)?;
        }
        out.push((t, Configuration(x)));
    }
    Ok(out)
}
