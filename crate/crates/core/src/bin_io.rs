//! Little-endian primitives shared by the versioned binary model formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u8<W: Write>(w: &mut W, v: u8) -> std::io::Result<()> {
    w.write_all(&[v])
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(f64::from_le_bytes(buf))
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf[0])
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    if &buf != magic {
        return Err(Error::Parse {
            line: 0,
            message: format!(
                "bad magic bytes {:?}, expected {:?}",
                buf,
                std::str::from_utf8(magic).unwrap_or("?")
            ),
        });
    }
    Ok(())
}

/// Fails if any bytes remain; the formats are fixed-size per header.
pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut buf = [0u8; 1];
    match r.read(&mut buf) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::Parse {
            line: 0,
            message: "trailing bytes after model payload".into(),
        }),
        Err(e) => Err(truncated(e)),
    }
}

fn truncated(e: std::io::Error) -> Error {
    Error::Parse {
        line: 0,
        message: format!("truncated or unreadable binary payload: {e}"),
    }
}
