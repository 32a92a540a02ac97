use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Binary image, row-major, values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskImage {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl MaskImage {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!("{} values for {height}x{width}", values.len())));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Parse("mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c) as u8);
            }
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.values[row * self.width + col] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    /// Row/column extent of the set pixels: `(row_min, row_max, col_min, col_max)`.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut out: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    out = Some(match out {
                        None => (r, r, c, c),
                        Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
                    });
                }
            }
        }
        out
    }

    /// Height and width of the set region in pixels.
    pub fn bbox_dims(&self) -> Option<(usize, usize)> {
        self.bbox().map(|(r0, r1, c0, c1)| (r1 - r0 + 1, c1 - c0 + 1))
    }

    /// Hard IoU against another mask of the same shape.
    pub fn iou(&self, other: &MaskImage) -> Result<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch("mask sizes differ".into()));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.values.iter().zip(&other.values) {
            inter += (a & b) as usize;
            union += (a | b) as usize;
        }
        if union == 0 {
            return Err(Error::Undefined("IoU of two empty masks".into()));
        }
        Ok(inter as f64 / union as f64)
    }

    /// Reads an 8-bit PGM (P5 or P2) or PNG, binarized at 128.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"\x89PNG") {
            decode_png(&bytes)
        } else {
            decode_pgm(&bytes)
        }
    }

    /// Writes PGM or PNG by extension, with 0 / 255 levels.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("png") => encode_png(self.height, self.width, &self.to_gray())?,
            _ => encode_pgm(self.height, self.width, &self.to_gray()),
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    fn to_gray(&self) -> Vec<u8> {
        self.values.iter().map(|&v| v * 255).collect()
    }
}

fn binarize(height: usize, width: usize, gray: impl Iterator<Item = u8>) -> Result<MaskImage> {
    MaskImage::new(height, width, gray.map(|g| (g >= 128) as u8).collect())
}

pub(crate) fn encode_pgm(height: usize, width: usize, gray: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

fn decode_pgm(bytes: &[u8]) -> Result<MaskImage> {
    // header: magic, width, height, maxval, separated by whitespace and comments
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad PGM field {s:?}")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Parse(format!("only 8-bit PGM is supported, maxval {maxval}")));
    }
    match fields[0].as_str() {
        "P5" => {
            pos += 1;
            let body = bytes.get(pos..pos + width * height).ok_or_else(|| Error::Parse("truncated PGM body".into()))?;
            binarize(height, width, body.iter().copied())
        }
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let vals: Result<Vec<u8>> = text
                .split_whitespace()
                .take(width * height)
                .map(|t| t.parse::<u8>().map_err(|_| Error::Parse(format!("bad PGM value {t:?}"))))
                .collect();
            let vals = vals?;
            if vals.len() != width * height {
                return Err(Error::Parse("truncated PGM body".into()));
            }
            binarize(height, width, vals.into_iter())
        }
        m => Err(Error::Parse(format!("not a PGM file (magic {m:?})"))),
    }
}

fn encode_png(height: usize, width: usize, gray: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Parse(format!("png: {e}")))?;
        writer.write_image_data(gray).map_err(|e| Error::Parse(format!("png: {e}")))?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<MaskImage> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Parse(format!("png: {e}")))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Parse("png too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Parse(format!("png: {e}")))?;
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    binarize(h, w, buf[..info.buffer_size()].chunks(channels).map(|px| px[0]))
}

/// Real-valued image in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Real> SoftMask<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!("{} values for {height}x{width}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero() || *v > T::one()) {
            return Err(Error::NonFinite("soft mask value outside [0, 1]".into()));
        }
        Ok(Self { height, width, values })
    }

    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<T>) -> Self {
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn from_mask(mask: &MaskImage) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            values: mask.values().iter().map(|&v| if v != 0 { T::one() } else { T::zero() }).collect(),
        }
    }

    /// Pixels with value at least one half.
    pub fn threshold(&self) -> MaskImage {
        let half = T::lit(0.5);
        MaskImage::from_fn(self.height, self.width, |r, c| self.get(r, c) >= half)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = MaskImage::from_fn(5, 7, |r, c| (r + 2 * c) % 3 == 0);
        for name in ["m.pgm", "m.png"] {
            let p = dir.path().join(name);
            m.write(&p).unwrap();
            assert_eq!(MaskImage::read(&p).unwrap(), m, "{name}");
        }
    }

    #[test]
    fn pgm_binarizes_at_128() {
        let bytes = encode_pgm(1, 4, &[0, 127, 128, 255]);
        assert_eq!(decode_pgm(&bytes).unwrap().values(), &[0, 0, 1, 1]);
        let ascii = b"P2\n# comment\n2 1\n255\n200 3\n";
        assert_eq!(decode_pgm(ascii).unwrap().values(), &[1, 0]);
    }

    #[test]
    fn bbox_and_iou() {
        let a = MaskImage::from_fn(6, 6, |r, c| (1..4).contains(&r) && (2..5).contains(&c));
        assert_eq!(a.bbox(), Some((1, 3, 2, 4)));
        assert_eq!(a.bbox_dims(), Some((3, 3)));
        let b = MaskImage::from_fn(6, 6, |r, c| (1..4).contains(&r) && (3..6).contains(&c));
        assert!((a.iou(&b).unwrap() - 6.0 / 12.0).abs() < 1e-15);
        assert!(MaskImage::zeros(2, 2).iou(&MaskImage::zeros(2, 2)).is_err());
    }
}
