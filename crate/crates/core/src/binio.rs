//! Little-endian binary helpers shared by the file formats.

use std::io::{Read, Write};

use crate::error::{Result, SalsaError};

pub(crate) fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| SalsaError::InvalidArgument(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Byte reader that tracks its offset for error messages.
pub(crate) struct ByteReader<R> {
    inner: R,
    pub(crate) offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        let mut filled = 0;
        while filled < n {
            let got = self.inner.read(&mut buf[filled..])?;
            if got == 0 {
                return Err(SalsaError::Format {
                    offset: self.offset + filled as u64,
                    detail: format!("truncated while reading {what}"),
                });
            }
            filled += got;
        }
        self.offset += n as u64;
        Ok(buf)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    pub(crate) fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.offset;
        let b = self.bytes(n * 8, what)?;
        let vals: Vec<f64> = b
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(SalsaError::Format {
                offset: start + 8 * i as u64,
                detail: format!("non-finite value in {what}"),
            });
        }
        Ok(vals)
    }

    /// Next byte, or `None` at end of input.
    pub(crate) fn next_byte(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8; 1];
        if self.inner.read(&mut b)? == 0 {
            return Ok(None);
        }
        self.offset += 1;
        Ok(Some(b[0]))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.offset;
        let b = self.bytes(n * 4, what)?;
        let vals: Vec<f64> = b
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(SalsaError::Format {
                offset: start + 4 * i as u64,
                detail: format!("non-finite value in {what}"),
            });
        }
        Ok(vals)
    }

    /// `u32` length followed by UTF-8 bytes, at most `max_len` long.
    pub(crate) fn string(&mut self, max_len: usize, what: &str) -> Result<String> {
        let at = self.offset;
        let len = self.u32(what)?;
        if len > max_len {
            return Err(SalsaError::Format {
                offset: at,
                detail: format!("implausible {what} length {len}"),
            });
        }
        String::from_utf8(self.bytes(len, what)?).map_err(|_| SalsaError::Format {
            offset: at + 4,
            detail: format!("{what} is not UTF-8"),
        })
    }
}

pub(crate) fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_f32s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    for &v in vals {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}
