use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Volume;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct VolHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
}

/// Writes a `.vol` stream: one JSON header line, then raw `f32le` samples.
pub fn write_volume<W: Write>(mut w: W, v: &Volume) -> Result<()> {
    let header = VolHeader {
        dims: v.dims(),
        spacing: v.spacing(),
        origin: v.origin(),
        dtype: "f32le".into(),
    };
    let line = serde_json::to_string(&header).map_err(|e| Error::format("volume header", e))?;
    let mut buf = Vec::with_capacity(line.len() + 1 + 4 * v.len());
    buf.extend_from_slice(line.as_bytes());
    buf.push(b'\n');
    for x in v.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
        .map_err(|e| Error::io("<volume stream>", e))
}

pub fn read_volume<R: Read>(r: R) -> Result<Volume> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)
        .map_err(|e| Error::io("<volume stream>", e))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::format("volume header", "missing header terminator"));
    }
    line.pop();
    let header: VolHeader =
        serde_json::from_slice(&line).map_err(|e| Error::format("volume header", e))?;
    if header.dtype != "f32le" {
        return Err(Error::format(
            "volume header",
            format!("unsupported dtype {:?}", header.dtype),
        ));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)
        .map_err(|e| Error::io("<volume stream>", e))?;
    let n: usize = header.dims.iter().product();
    if payload.len() != 4 * n {
        return Err(Error::SizeMismatch {
            expected: n,
            found: payload.len() / 4,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(header.dims, header.spacing, header.origin, data)
}

pub fn save_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_volume(&mut w, v)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_volume(f)
}
