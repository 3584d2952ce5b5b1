//! FR1 container: magic, little-endian header, band-major f32 payload, packed nodata bits.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{GeoTransform, Grid, Raster};
use crate::error::{RasterError, Result};

pub const RASTER_MAGIC: &[u8; 8] = b"FLRASTR1";
const HEADER_LEN: usize = 3 * 4 + 6 * 8 + 4 + 4;
/// Payloads beyond this many bytes are treated as corrupt dimensions.
const MAX_PAYLOAD: u64 = 1 << 36;

pub fn encode_raster(r: &Raster) -> Vec<u8> {
    let n = r.pixels();
    let mut out = Vec::with_capacity(8 + HEADER_LEN + r.data().len() * 4 + n.div_ceil(8));
    out.extend_from_slice(RASTER_MAGIC);
    for v in [r.width() as u32, r.height() as u32, r.bands() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in r.geo().coefficients() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&r.nodata_value().to_le_bytes());
    out.extend_from_slice(&r.flags().to_le_bytes());
    for v in r.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut bits = vec![0u8; n.div_ceil(8)];
    for (i, &bad) in r.nodata_mask().iter().enumerate() {
        if bad {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, section: &'static str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(RasterError::Truncated { section, needed: len, available });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, "header")?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, "header")?.try_into().unwrap()))
    }
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(8, "magic")?;
    if magic != RASTER_MAGIC {
        return Err(RasterError::BadMagic);
    }
    let (width, height, bands) = (cur.u32()?, cur.u32()?, cur.u32()?);
    let mut c = [0f64; 6];
    for v in &mut c {
        *v = cur.f64()?;
    }
    let nodata_value = f32::from_le_bytes(cur.take(4, "header")?.try_into().unwrap());
    let flags = cur.u32()?;

    let (w, h, b) = (width as u64, height as u64, bands as u64);
    let overflow = || RasterError::DimensionOverflow { width: w, height: h, bands: b };
    let payload = w.checked_mul(h).and_then(|p| p.checked_mul(b)).and_then(|p| p.checked_mul(4)).ok_or_else(overflow)?;
    if payload > MAX_PAYLOAD || usize::try_from(payload).is_err() {
        return Err(overflow());
    }
    if width == 0 || height == 0 || bands == 0 {
        return Err(RasterError::InvalidHeader(format!("empty dimensions {width}x{height}x{bands}")));
    }
    if c[2] != 0.0 || c[4] != 0.0 {
        return Err(RasterError::InvalidHeader("rotation terms must be zero".into()));
    }
    let geo = GeoTransform::new(c[0], c[1], c[3], c[5])?;
    let grid = Grid::new(width as usize, height as usize, geo);

    let raw = cur.take(payload as usize, "payload")?;
    let data = raw.chunks_exact(4).map(|ch| f32::from_le_bytes(ch.try_into().unwrap())).collect();
    let n = grid.len();
    let bits = cur.take(n.div_ceil(8), "nodata mask")?;
    let nodata = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    Ok(Raster::from_parts(grid, bands as usize, data, nodata, nodata_value, flags))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    decode_raster(&fs::read(path)?)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_raster(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_file_name(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("raster")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode_raster(r))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_4x4_layout() {
        let r = Raster::filled(Grid::pixel(4, 4), 1, 0.0).unwrap();
        let bytes = encode_raster(&r);
        assert_eq!(bytes.len(), 8 + 68 + 64 + 2);
        assert_eq!(&bytes[..8], b"FLRASTR1");
        assert_eq!(&bytes[8..12], &4u32.to_le_bytes());
        assert_eq!(decode_raster(&bytes).unwrap(), r);
    }

    #[test]
    fn nodata_bit_survives() {
        let mut r = Raster::filled(Grid::pixel(4, 4), 1, 0.25).unwrap();
        r.set_nodata(0);
        let bytes = encode_raster(&r);
        assert_eq!(bytes[bytes.len() - 2], 1);
        let back = decode_raster(&bytes).unwrap();
        assert!(back.is_nodata(0));
        assert_eq!(back.valid_count(), 15);
    }

    #[test]
    fn distinct_decode_errors() {
        let r = Raster::filled(Grid::pixel(3, 3), 2, 1.0).unwrap();
        let mut bytes = encode_raster(&r);
        let mut bad = bytes.clone();
        bad[..8].copy_from_slice(b"XXXXXXXX");
        assert!(matches!(decode_raster(&bad), Err(RasterError::BadMagic)));
        assert!(matches!(
            decode_raster(&bytes[..bytes.len() - 1]),
            Err(RasterError::Truncated { section: "nodata mask", .. })
        ));
        assert!(matches!(decode_raster(&bytes[..100]), Err(RasterError::Truncated { section: "payload", .. })));
        assert!(matches!(decode_raster(&bytes[..20]), Err(RasterError::Truncated { section: "header", .. })));
        bytes[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_raster(&bytes), Err(RasterError::DimensionOverflow { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.fr1");
        let r = Raster::from_fn(Grid::pixel(5, 3), |x, y| x as f32 - y as f32 * 0.5).unwrap();
        write_raster(&r, &p).unwrap();
        assert_eq!(read_raster(&p).unwrap(), r);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
