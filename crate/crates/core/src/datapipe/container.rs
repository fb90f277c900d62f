//! Binary dataset container. All integers and floats are little-endian;
//! floats are stored as f32.
//!
//! ```text
//! magic        8 bytes  "FMDSET\r\n"
//! version      u32      1
//! k            u32
//! side         u32
//! sessions     u32
//! windows      u32
//! per session  id: u16 len + UTF-8, subject: u16 len + UTF-8,
//!              task u8 (0 piano, 1 typing), frame_rate f32, frames u32
//! per frame    u32 record length, then time f32, 17 × f32 normalized
//!              angles, u8 press mask (bit i = finger i + 1), side² u8 pixels
//! per window   u32 record length (8), session u32, start u32
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AlignedSession, Dataset, Task, WindowRef};
use crate::error::{Error, Result};
use crate::kinematics::JOINT_COUNT;

pub const MAGIC: &[u8; 8] = b"FMDSET\r\n";
pub const VERSION: u32 = 1;

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [VERSION, data.k as u32, data.side as u32, data.sessions.len() as u32, data.windows.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in &data.sessions {
        for text in [&s.id, &s.subject] {
            let len = u16::try_from(text.len()).map_err(|_| Error::invalid(format!("name too long: {text}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        out.push(match s.task {
            Task::Piano => 0,
            Task::Typing => 1,
        });
        out.extend_from_slice(&(s.frame_rate as f32).to_le_bytes());
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    }
    let record_len = (4 + 4 * JOINT_COUNT + 1 + data.side * data.side) as u32;
    for s in &data.sessions {
        for i in 0..s.len() {
            out.extend_from_slice(&record_len.to_le_bytes());
            out.extend_from_slice(&(s.times[i] as f32).to_le_bytes());
            for v in s.configs[i] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            let mask = s.press[i].iter().enumerate().fold(0u8, |m, (b, &p)| m | (p & 1) << b);
            out.push(mask);
            if s.images[i].len() != data.side * data.side {
                return Err(Error::shape(format!("session {} frame {i} has wrong pixel count", s.id)));
            }
            out.extend_from_slice(&s.images[i]);
        }
    }
    for w in &data.windows {
        out.extend_from_slice(&8u32.to_le_bytes());
        out.extend_from_slice(&(w.session as u32).to_le_bytes());
        out.extend_from_slice(&(w.start as u32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, at: usize, detail: impl Into<String>) -> Error {
        Error::Format { offset: at as u64, detail: detail.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(self.pos, format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f64::from(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes"))))
    }

    fn text(&mut self) -> Result<String> {
        let len = usize::from(self.u16()?);
        let at = self.pos;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail(at, "name is not UTF-8"))
    }

    fn record(&mut self, expected: u32) -> Result<()> {
        let at = self.pos;
        let len = self.u32()?;
        if len != expected {
            return Err(self.fail(at, format!("record length {len}, expected {expected}")));
        }
        Ok(())
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(r.fail(0, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(8, format!("unsupported version {version}")));
    }
    let k = r.u32()? as usize;
    let side = r.u32()? as usize;
    let session_count = r.u32()? as usize;
    let window_count = r.u32()? as usize;
    let mut sessions = Vec::new();
    let mut frame_counts = Vec::new();
    for _ in 0..session_count {
        let id = r.text()?;
        let subject = r.text()?;
        let at = r.pos;
        let task = match r.u8()? {
            0 => Task::Piano,
            1 => Task::Typing,
            t => return Err(r.fail(at, format!("unknown task code {t}"))),
        };
        let frame_rate = r.f32()?;
        frame_counts.push(r.u32()? as usize);
        sessions.push(AlignedSession {
            id,
            subject,
            task,
            frame_rate,
            side,
            times: Vec::new(),
            images: Vec::new(),
            configs: Vec::new(),
            press: Vec::new(),
        });
    }
    let record_len = (4 + 4 * JOINT_COUNT + 1 + side * side) as u32;
    for (s, &n) in sessions.iter_mut().zip(&frame_counts) {
        for _ in 0..n {
            r.record(record_len)?;
            s.times.push(r.f32()?);
            let mut c = [0.0; JOINT_COUNT];
            for v in c.iter_mut() {
                *v = r.f32()?;
            }
            s.configs.push(c);
            let mask = r.u8()?;
            s.press.push(std::array::from_fn(|b| (mask >> b) & 1));
            s.images.push(r.take(side * side)?.to_vec());
        }
    }
    let mut windows = Vec::with_capacity(window_count);
    for _ in 0..window_count {
        let at = r.pos;
        r.record(8)?;
        let session = r.u32()? as usize;
        let start = r.u32()? as usize;
        if session >= sessions.len() || start + k > sessions[session].len() {
            return Err(r.fail(at, format!("window ({session}, {start}) out of range")));
        }
        windows.push(WindowRef { session, start });
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, "trailing bytes"));
    }
    Ok(Dataset { k, side, sessions, windows })
}
