//! On-disk session layout.
//!
//! ```text
//! <dir>/session.toml     id, subject, task, frame_rate
//! <dir>/frames/index.csv name,timestamp_s
//! <dir>/frames/*.pgm     binary P5, maxval 255
//! <dir>/events.csv       finger,onset_s,release_s
//! <dir>/markers.csv      see kinematics
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GrayImage, PressEvent, PressEventStream, Session, Task};
use crate::error::{Error, Result};
use crate::kinematics::{read_markers, write_markers};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub id: String,
    pub subject: String,
    pub task: Task,
    pub frame_rate: f64,
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend_from_slice(&image.pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format { offset: pos as u64, detail: "truncated PGM header".into() });
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != "P5" {
        return Err(Error::Format { offset: 0, detail: format!("expected P5, found {}", fields[0].1) });
    }
    let num = |i: usize| -> Result<usize> {
        fields[i].1.parse().map_err(|_| Error::Format {
            offset: fields[i].0 as u64,
            detail: format!("bad number `{}`", fields[i].1),
        })
    };
    let (w, h, max) = (num(1)?, num(2)?, num(3)?);
    if max != 255 {
        return Err(Error::Format { offset: fields[3].0 as u64, detail: format!("maxval {max} is not 255") });
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let end = pos + w * h;
    if bytes.len() < end {
        return Err(Error::Format { offset: bytes.len() as u64, detail: format!("raster needs {} bytes", w * h) });
    }
    GrayImage::new(w, h, bytes[pos..end].to_vec())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::parse(path.display().to_string(), format!("{other:?}")),
    }
}

pub fn write_events(path: &Path, events: &[PressEvent]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["finger", "onset_s", "release_s"]).map_err(|e| csv_err(path, e))?;
    for e in events {
        w.write_record([e.finger.to_string(), e.onset.to_string(), e.release.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_events(path: &Path) -> Result<Vec<PressEvent>> {
    #[derive(Deserialize)]
    struct Row {
        finger: u8,
        onset_s: f64,
        release_s: f64,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize::<Row>()
        .map(|row| {
            let row = row.map_err(|e| csv_err(path, e))?;
            Ok(PressEvent { finger: row.finger, onset: row.onset_s, release: row.release_s })
        })
        .collect()
}

pub fn write_session_dir(dir: &Path, session: &Session) -> Result<()> {
    let frames = dir.join("frames");
    fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    let manifest = SessionManifest {
        id: session.id.clone(),
        subject: session.subject.clone(),
        task: session.task,
        frame_rate: session.frame_rate,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::parse("session manifest", e))?;
    let mpath = dir.join("session.toml");
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    let index = frames.join("index.csv");
    let mut w = csv::Writer::from_path(&index).map_err(|e| csv_err(&index, e))?;
    w.write_record(["name", "timestamp_s"]).map_err(|e| csv_err(&index, e))?;
    for (i, (t, img)) in session.images.iter().enumerate() {
        let name = format!("{i:06}.pgm");
        write_pgm(&frames.join(&name), img)?;
        w.write_record([name, t.to_string()]).map_err(|e| csv_err(&index, e))?;
    }
    w.flush().map_err(|e| Error::io(&index, e))?;
    write_events(&dir.join("events.csv"), &session.events.events)?;
    write_markers(&dir.join("markers.csv"), &session.markers)
}

pub fn read_session_dir(dir: &Path) -> Result<Session> {
    let mpath = dir.join("session.toml");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: SessionManifest =
        toml::from_str(&text).map_err(|e| Error::parse(mpath.display().to_string(), e))?;
    let frames = dir.join("frames");
    let index = frames.join("index.csv");
    let mut r = csv::Reader::from_path(&index).map_err(|e| csv_err(&index, e))?;
    let mut images = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(&index, e))?;
        let (name, t) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|e| Error::parse(index.display().to_string(), format!("timestamp `{t}`: {e}")))?;
        images.push((t, read_pgm(&frames.join(name.trim()))?));
    }
    let session = Session {
        id: manifest.id,
        subject: manifest.subject,
        task: manifest.task,
        frame_rate: manifest.frame_rate,
        images,
        events: PressEventStream { task: manifest.task, events: read_events(&dir.join("events.csv"))? },
        markers: read_markers(&dir.join("markers.csv"))?,
    };
    session.validate()?;
    Ok(session)
}
