//! Binary attention parameter files.
//!
//! Layout, all little-endian: magic `CATP`, then `u32` version, heads,
//! span, input channels and residual flag (0 or 1), then every tensor in
//! [`TENSOR_NAMES`](crate::attention::TENSOR_NAMES) order as `f64`.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::attention::AttentionParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CATP";
pub const PARAMS_VERSION: u32 = 1;

pub fn encode_attention_params(p: &AttentionParams) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for v in [PARAMS_VERSION, p.heads as u32, p.span as u32, p.d_in as u32, p.residual as u32] {
        out.write_u32::<LittleEndian>(v).expect("writing to a Vec cannot fail");
    }
    for t in p.tensors() {
        for &v in t {
            out.write_f64::<LittleEndian>(v).expect("writing to a Vec cannot fail");
        }
    }
    out
}

pub fn decode_attention_params(bytes: &[u8]) -> Result<AttentionParams> {
    let mut cur = Cursor::new(bytes);
    let at = |c: &Cursor<&[u8]>| c.position();
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| Error::format(0, "truncated magic"))?;
    if &magic != MAGIC {
        return Err(Error::format(0, "expected 'CATP' magic"));
    }
    let mut header = [0u32; 5];
    for h in header.iter_mut() {
        let pos = at(&cur);
        *h = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::format(pos, "truncated header"))?;
    }
    let [version, heads, span, d_in, residual] = header;
    if version != PARAMS_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    if residual > 1 {
        return Err(Error::format(20, format!("residual flag must be 0 or 1, got {residual}")));
    }
    let mut p = AttentionParams::zeros(d_in as usize, heads as usize, span as usize, residual == 1)
        .map_err(|e| Error::format(8, e.to_string()))?;
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            let pos = at(&cur);
            *v = cur
                .read_f64::<LittleEndian>()
                .map_err(|_| Error::format(pos, "truncated tensor data"))?;
        }
    }
    if (cur.position() as usize) < bytes.len() {
        return Err(Error::format(cur.position(), "unexpected bytes after the tensors"));
    }
    Ok(p)
}

pub fn read_attention_params(path: impl AsRef<Path>) -> Result<AttentionParams> {
    decode_attention_params(&std::fs::read(path)?)
}

pub fn write_attention_params(path: impl AsRef<Path>, p: &AttentionParams) -> Result<()> {
    std::fs::write(path, encode_attention_params(p))?;
    Ok(())
}
