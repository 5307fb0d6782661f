//! Binary weights file.
//!
//! Layout (all integers little-endian `u64` unless noted):
//!
//! ```text
//! magic            8 bytes  "SEQLRPW1"
//! config           6 × u64  vocab, embed, hidden, max_input, max_output, maps_per_text
//! block count      u64
//! per block:
//!   name length    u32, then UTF-8 name
//!   rows, cols     u64, u64
//!   values         rows·cols × f64 (little-endian), row-major
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights};

const MAGIC: &[u8; 8] = b"SEQLRPW1";

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "weights file",
        detail: detail.into(),
    }
}

pub fn write_weights<W: Write>(weights: &ModelWeights, mut out: W) -> Result<()> {
    let c = &weights.config;
    out.write_all(MAGIC)?;
    for v in [c.vocab_size, c.embed_dim, c.hidden_dim, c.max_input_len, c.max_output_len, c.maps_per_text] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    let blocks = weights.blocks();
    out.write_all(&(blocks.len() as u64).to_le_bytes())?;
    for block in blocks {
        out.write_all(&(block.name.len() as u32).to_le_bytes())?;
        out.write_all(block.name.as_bytes())?;
        out.write_all(&(block.rows as u64).to_le_bytes())?;
        out.write_all(&(block.cols as u64).to_le_bytes())?;
        for v in block.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf).map_err(|e| format_err(e.to_string()))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_usize<R: Read>(input: &mut R, field: &str) -> Result<usize> {
    let v = read_u64(input)?;
    usize::try_from(v)
        .ok()
        .filter(|&v| v < 1 << 40)
        .ok_or_else(|| format_err(format!("{field} out of range: {v}")))
}

pub fn read_weights<R: Read>(mut input: R) -> Result<ModelWeights> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| format_err("truncated header"))?;
    if &magic != MAGIC {
        return Err(format_err("bad magic"));
    }
    let config = ModelConfig {
        vocab_size: read_usize(&mut input, "vocab_size")?,
        embed_dim: read_usize(&mut input, "embed_dim")?,
        hidden_dim: read_usize(&mut input, "hidden_dim")?,
        max_input_len: read_usize(&mut input, "max_input_len")?,
        max_output_len: read_usize(&mut input, "max_output_len")?,
        maps_per_text: read_usize(&mut input, "maps_per_text")?,
    };
    let mut weights = ModelWeights::zeros(config)?;
    let count = read_usize(&mut input, "block count")?;

    let mut blocks: HashMap<String, (usize, usize, Vec<f64>)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let mut len = [0u8; 4];
        input.read_exact(&mut len).map_err(|e| format_err(e.to_string()))?;
        let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut name).map_err(|e| format_err(e.to_string()))?;
        let name = String::from_utf8(name).map_err(|_| format_err("block name is not UTF-8"))?;
        let rows = read_usize(&mut input, "rows")?;
        let cols = read_usize(&mut input, "cols")?;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            input.read_exact(&mut buf).map_err(|e| format_err(e.to_string()))?;
            let v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(format_err(format!("non-finite value in {name}")));
            }
            data.push(v);
        }
        if blocks.insert(name.clone(), (rows, cols, data)).is_some() {
            return Err(format_err(format!("duplicate block {name}")));
        }
    }

    let mut problem = None;
    weights.for_each_param_mut(|name, rows, cols, dst| {
        if problem.is_some() {
            return;
        }
        match blocks.remove(name) {
            Some((r, c, data)) if r == rows && c == cols => dst.copy_from_slice(&data),
            Some((r, c, _)) => {
                problem = Some(format!("block {name} is {r}x{c}, expected {rows}x{cols}"));
            }
            None => problem = Some(format!("missing block {name}")),
        }
    });
    if let Some(p) = problem {
        return Err(format_err(p));
    }
    if let Some(extra) = blocks.keys().next() {
        return Err(format_err(format!("unexpected block {extra}")));
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> ModelConfig {
        ModelConfig {
            vocab_size: 8,
            embed_dim: 2,
            hidden_dim: 3,
            max_input_len: 5,
            max_output_len: 4,
            maps_per_text: 2,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let w = ModelWeights::random(micro(), 11, 0.1).unwrap();
        let mut buf = Vec::new();
        write_weights(&w, &mut buf).unwrap();
        let back = read_weights(&buf[..]).unwrap();
        assert_eq!(back, w);
        let mut again = Vec::new();
        write_weights(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let w = ModelWeights::random(micro(), 11, 0.1).unwrap();
        let mut buf = Vec::new();
        write_weights(&w, &mut buf).unwrap();
        assert!(read_weights(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_weights(&bad[..]).is_err());
        assert!(read_weights(&b""[..]).is_err());
    }
}
