use std::path::Path;

use crate::error::{read_file, write_file, Error, Result};

const CUBE_MAGIC: &[u8; 4] = b"HSC1";
const LABEL_MAGIC: &[u8; 4] = b"LBL1";
const DTYPE_F32: u32 = 0;
/// Header values beyond this are rejected as overflow.
const MAX_ELEMENTS: u64 = 1 << 32;

/// H x W x B reflectance volume, pixel-major with bands contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
    pub band_wavelengths: Option<Vec<f64>>,
}

impl HyperCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::invalid(format!(
                "cube extents must be positive, got {height}x{width}x{bands}"
            )));
        }
        if values.len() != height * width * bands {
            return Err(Error::shape("hypercube", &[height, width, bands], &[values.len()]));
        }
        Ok(HyperCube {
            height,
            width,
            bands,
            values,
            band_wavelengths: None,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize, band: usize) -> f32 {
        self.values[(x * self.width + y) * self.bands + band]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let start = (x * self.width + y) * self.bands;
        &self.values[start..start + self.bands]
    }

    /// `max - min` of every band over the whole cube.
    pub fn band_ranges(&self) -> Vec<f32> {
        let mut lo = vec![f32::INFINITY; self.bands];
        let mut hi = vec![f32::NEG_INFINITY; self.bands];
        for px in self.values.chunks_exact(self.bands) {
            for (b, &v) in px.iter().enumerate() {
                lo[b] = lo[b].min(v);
                hi[b] = hi[b].max(v);
            }
        }
        hi.iter().zip(&lo).map(|(h, l)| h - l).collect()
    }
}

/// Per-pixel class ids; 0 marks an unlabeled pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

pub const UNLABELED: u16 = 0;

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape("label map", &[height, width], &[labels.len()]));
        }
        Ok(LabelMap { height, width, labels })
    }

    pub fn unlabeled(height: usize, width: usize) -> Self {
        LabelMap {
            height,
            width,
            labels: vec![UNLABELED; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u16] {
        &mut self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[x * self.width + y]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u16) {
        self.labels[x * self.width + y] = label;
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNLABELED).count()
    }

    pub(crate) fn expect_extents(&self, op: &'static str, height: usize, width: usize) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::shape(op, &[height, width], &[self.height, self.width]));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != expected {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                expected: self.pos + n,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            extra => Err(Error::TrailingBytes(extra)),
        }
    }
}

fn checked_count(dims: &[u32]) -> Result<usize> {
    let n = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
    match n {
        Some(n) if n <= MAX_ELEMENTS && dims.iter().all(|&d| d > 0) => Ok(n as usize),
        _ => Err(Error::ExtentOverflow(dims.to_vec())),
    }
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::ExtentOverflow(vec![u32::MAX]))
}

pub fn decode_cube(bytes: &[u8]) -> Result<HyperCube> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(CUBE_MAGIC)?;
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let dtype = r.u32()?;
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let n = checked_count(&dims)?;
    let payload = r.take(n * 4)?;
    r.finish()?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    HyperCube::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, values)
}

pub fn encode_cube(cube: &HyperCube) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + cube.values.len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    for v in [cube.height, cube.width, cube.bands] {
        out.extend_from_slice(&dim_u32(v)?.to_le_bytes());
    }
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for v in &cube.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    decode_cube(&read_file(path)?)
}

pub fn write_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    write_file(path, encode_cube(cube)?)
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(LABEL_MAGIC)?;
    let dims = [r.u32()?, r.u32()?];
    let n = checked_count(&dims)?;
    let payload = r.take(n * 2)?;
    r.finish()?;
    let labels = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    LabelMap::new(dims[0] as usize, dims[1] as usize, labels)
}

pub fn encode_labels(map: &LabelMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + map.labels.len() * 2);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&dim_u32(map.height)?.to_le_bytes());
    out.extend_from_slice(&dim_u32(map.width)?.to_le_bytes());
    for l in &map.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_labels(&read_file(path)?)
}

pub fn write_labels(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path, encode_labels(map)?)
}
