//! Binary field snapshots and CSV slice export.
//!
//! Snapshot layout (little-endian):
//!
//! | offset | size | content                       |
//! |--------|------|-------------------------------|
//! | 0      | 8    | magic `NLSLABF1`              |
//! | 8      | 4    | dim (u32)                     |
//! | 12     | 4    | points per axis n (u32)       |
//! | 16     | 8    | half width L (f64)            |
//! | 24     | 8    | time t (f64)                  |
//! | 32     | 16·n^dim | interleaved re, im (f64)  |

use std::io::{Read, Write};

use num_complex::Complex64;

use super::{Field, Grid};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"NLSLABF1";
pub const HEADER_LEN: usize = 32;

pub fn write_snapshot<W: Write>(mut w: W, field: &Field, t: f64) -> Result<()> {
    let g = field.grid();
    let mut header = [0u8; HEADER_LEN];
    header[..8].copy_from_slice(&MAGIC);
    header[8..12].copy_from_slice(&(g.dim() as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(g.n() as u32).to_le_bytes());
    header[16..24].copy_from_slice(&g.half_width().to_le_bytes());
    header[24..32].copy_from_slice(&t.to_le_bytes());
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(16 * field.values().len());
    for z in field.values() {
        body.extend_from_slice(&z.re.to_le_bytes());
        body.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

/// Returns the field (post-blow-up flagged if any sample is non-finite) and its time.
pub fn read_snapshot<R: Read>(mut r: R) -> Result<(Field, f64)> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    if header[..8] != MAGIC {
        return Err(Error::Format("snapshot magic mismatch".into()));
    }
    let word = |a: usize| u32::from_le_bytes(header[a..a + 4].try_into().unwrap()) as usize;
    let float = |a: usize| f64::from_le_bytes(header[a..a + 8].try_into().unwrap());
    let grid = Grid::new(word(8), word(12), float(16))?;
    let t = float(24);
    let mut body = vec![0u8; 16 * grid.len()];
    r.read_exact(&mut body).map_err(|e| Error::Format(format!("truncated snapshot body: {e}")))?;
    let values: Vec<Complex64> = body
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    let field = if values.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Field::new(grid, values)?
    } else {
        Field::new_post_blowup(grid, values)?
    };
    Ok((field, t))
}

/// Writes the line through the origin along axis 0 as `x,re,im,abs`.
pub fn write_slice_csv<W: Write>(w: W, field: &Field) -> Result<()> {
    let g = field.grid();
    let n = g.n();
    let stride = n.pow((g.dim() - 1) as u32);
    // Other axes sit at index n/2, i.e. coordinate 0.
    let offset: usize = (1..g.dim()).map(|a| (n / 2) * n.pow((g.dim() - 1 - a) as u32)).sum();
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["x", "re", "im", "abs"])?;
    for j in 0..n {
        let z = field.values()[offset + j * stride];
        wtr.serialize((g.coordinate(j), z.re, z.im, z.norm()))?;
    }
    wtr.flush()?;
    Ok(())
}
