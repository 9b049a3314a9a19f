//! Parameter snapshot files.
//!
//! Layout:
//!
//! ```text
//! offset 0   8 bytes   magic "PAUD0001"
//! offset 8   8 bytes   header length H, little-endian u64
//! offset 16  H bytes   UTF-8 JSON header {"layout_version", "spec", "param_count"}
//! then       8 * P     parameters, little-endian IEEE-754 f64, layout order
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec, ParamVector};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PAUD0001";
pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    layout_version: u32,
    spec: ModelSpec,
    param_count: usize,
}

pub fn write_snapshot<W: Write>(mut w: W, model: &Model) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        layout_version: LAYOUT_VERSION,
        spec: model.spec.clone(),
        param_count: model.params.len(),
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for v in model.params.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad snapshot magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 24 {
        return Err(Error::Format(format!("snapshot header too large ({len} bytes)")));
    }
    let mut header = vec![0u8; len as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.layout_version != LAYOUT_VERSION {
        return Err(Error::Format(format!(
            "unsupported layout version {}",
            header.layout_version
        )));
    }
    header.spec.validate()?;
    if header.param_count != header.spec.param_count() {
        return Err(Error::Format("parameter count disagrees with spec".into()));
    }
    let mut values = Vec::with_capacity(header.param_count);
    let mut buf = [0u8; 8];
    for _ in 0..header.param_count {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let params = ParamVector::new(&header.spec, values)?;
    Model::new(header.spec, params)
}
