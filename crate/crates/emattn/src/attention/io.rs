//! Binary container for attention parameters. Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "EMA1"
//! kind    u32      1 = ema, 2 = ca, 3 = se
//! channels u32
//! hyper   u32      groups for ema, reduction ratio for ca/se
//! buffers f64...   every parameter buffer, flat, in declaration order
//! ```
//!
//! The header fixes every buffer shape, so the payload length is implied;
//! a short or over-long file is rejected rather than truncated.

use super::{AttentionKind, AttentionParams, CaParams, EmaParams, SeParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"EMA1";

fn kind_tag(kind: AttentionKind) -> u32 {
    match kind {
        AttentionKind::Ema => 1,
        AttentionKind::Ca => 2,
        AttentionKind::Se => 3,
    }
}

fn kind_from_tag(tag: u32) -> Result<AttentionKind> {
    match tag {
        1 => Ok(AttentionKind::Ema),
        2 => Ok(AttentionKind::Ca),
        3 => Ok(AttentionKind::Se),
        other => Err(Error::Format(format!("unknown module kind tag {other}"))),
    }
}

pub fn write_params(params: &AttentionParams, w: &mut impl Write) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&kind_tag(params.kind()).to_le_bytes())?;
    let channels = u32::try_from(params.channels())
        .map_err(|_| Error::Format("channel count exceeds u32".into()))?;
    let hyper = u32::try_from(params.hyper())
        .map_err(|_| Error::Format("hyperparameter exceeds u32".into()))?;
    w.write_all(&channels.to_le_bytes())?;
    w.write_all(&hyper.to_le_bytes())?;
    for (_, buf) in params.buffers() {
        for v in buf.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params(r: &mut impl Read) -> Result<AttentionParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected \"EMA1\"",
            magic
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let kind = kind_from_tag(u32::from_le_bytes(word))?;
    r.read_exact(&mut word)?;
    let channels = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let hyper = u32::from_le_bytes(word) as usize;

    // A zero-valued instance supplies the buffer shapes the header implies.
    let template = match kind {
        AttentionKind::Ema => AttentionParams::Ema(EmaParams::zeros(channels, hyper)?),
        AttentionKind::Ca => AttentionParams::Ca(CaParams::zeros(channels, hyper)?),
        AttentionKind::Se => AttentionParams::Se(SeParams::zeros(channels, hyper)?),
    };

    let mut bufs = Vec::new();
    for (name, shape_src) in template.buffers() {
        let dims = shape_src.shape().dims().to_vec();
        let numel = shape_src.numel();
        let mut bytes = vec![0u8; numel * 8];
        r.read_exact(&mut bytes).map_err(|e| {
            Error::Format(format!("payload truncated inside buffer {name}: {e}"))
        })?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        bufs.push(Tensor::from_vec(&dims, data)?);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format(
            "trailing bytes after the final parameter buffer".into(),
        ));
    }

    Ok(match kind {
        AttentionKind::Ema => AttentionParams::Ema(EmaParams::from_buffers(channels, hyper, bufs)?),
        AttentionKind::Ca => AttentionParams::Ca(CaParams::from_buffers(channels, hyper, bufs)?),
        AttentionKind::Se => AttentionParams::Se(SeParams::from_buffers(channels, hyper, bufs)?),
    })
}

pub fn save_params(params: &AttentionParams, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_params(params, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<AttentionParams> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_params(&mut file)
}
