//! Dense feature grids viewed as continuous surfaces through bilinear
//! interpolation.
//!
//! Grid point `(i, j)` (row `i`, column `j`) sits at continuous coordinates
//! `(x = j, y = i)`. Outside the grid the surface interpolates towards virtual
//! zero-valued neighbours.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

/// Magic bytes of the binary feature-map format.
pub const PRFM_MAGIC: &[u8; 4] = b"PRFM";
pub const PRFM_VERSION: u16 = 1;

/// `H x W x C` grid of finite reals stored row-major in `(i, j, c)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

/// One-dimensional interpolation kernel `max(0, 1 - |t|)`.
#[inline]
pub fn hat(t: f64) -> f64 {
    (1.0 - t.abs()).max(0.0)
}

/// Bilinear interpolation coefficient of grid point `(i, j)` at `(x, y)`.
#[inline]
pub fn interp_coeff(x: f64, y: f64, i: i64, j: i64) -> f64 {
    hat(x - j as f64) * hat(y - i as f64)
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for a {height}x{width}x{channels} map, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature value at flat index {pos}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    values.push(f(i, j, c));
                }
            }
        }
        Self::new(height, width, channels, values)
    }

    pub fn constant(height: usize, width: usize, channels: usize, v: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![v; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.width + j) * self.channels + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.values[self.index(i, j, c)]
    }

    /// Value at integer grid coordinates, zero outside the grid.
    #[inline]
    pub fn get_padded(&self, i: i64, j: i64, c: usize) -> f64 {
        if i < 0 || j < 0 || i >= self.height as i64 || j >= self.width as i64 {
            0.0
        } else {
            self.get(i as usize, j as usize, c)
        }
    }

    pub fn check_channel(&self, c: usize) -> Result<()> {
        if c < self.channels {
            Ok(())
        } else {
            Err(Error::ChannelOutOfRange {
                channel: c,
                channels: self.channels,
            })
        }
    }

    /// Returns a copy with every value replaced by `f(value)`.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Interpolated value of channel `c` at continuous `(x, y)`.
    pub fn sample(&self, x: f64, y: f64, c: usize) -> Result<f64> {
        self.check_channel(c)?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sample point ({x}, {y}) is not finite"
            )));
        }
        Ok(self.sample_unchecked(x, y, c))
    }

    #[inline]
    pub(crate) fn sample_unchecked(&self, x: f64, y: f64, c: usize) -> f64 {
        let j0 = x.floor();
        let i0 = y.floor();
        let tx = x - j0;
        let ty = y - i0;
        let (j0, i0) = (j0 as i64, i0 as i64);
        let top = (1.0 - tx) * self.get_padded(i0, j0, c) + tx * self.get_padded(i0, j0 + 1, c);
        let bottom =
            (1.0 - tx) * self.get_padded(i0 + 1, j0, c) + tx * self.get_padded(i0 + 1, j0 + 1, c);
        (1.0 - ty) * top + ty * bottom
    }

    /// Writes the map in the `PRFM` binary format. Values are stored as `f32`.
    pub fn write_prfm<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PRFM_MAGIC)?;
        w.write_u16::<LittleEndian>(PRFM_VERSION)?;
        for d in [self.height, self.width, self.channels] {
            w.write_u32::<LittleEndian>(dim_to_u32(d)?)?;
        }
        for &v in &self.values {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        Ok(())
    }

    pub fn read_prfm<R: Read>(mut r: R) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            kind: "PRFM",
            reason,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PRFM_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != PRFM_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let h = r.read_u32::<LittleEndian>()? as usize;
        let w = r.read_u32::<LittleEndian>()? as usize;
        let c = r.read_u32::<LittleEndian>()? as usize;
        let n = h
            .checked_mul(w)
            .and_then(|hw| hw.checked_mul(c))
            .ok_or_else(|| bad("dimension overflow".into()))?;
        let mut raw = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut raw)
            .map_err(|e| bad(format!("truncated payload: {e}")))?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(bad("trailing bytes after payload".into()));
        }
        Self::new(h, w, c, raw.into_iter().map(f64::from).collect())
            .map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| self.write_prfm(w))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_prfm(BufReader::new(f))
    }

    /// Encodes to an in-memory `PRFM` buffer.
    pub fn to_prfm_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_prfm(&mut buf)?;
        Ok(buf)
    }
}

fn dim_to_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))
}
