//! 8-bit grayscale I/O. PGM is binary P5; PNG must be 8-bit grayscale.

use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// `H×W` intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "GrayImage::new",
                lhs: vec![height, width],
                rhs: vec![data.len()],
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument {
                op: "GrayImage::new",
                msg: format!("intensity {v} outside [0, 1]"),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    /// Builds from `f(row, col)`, clamping into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                let v = f(r, c);
                data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            }
        }
        Self { height, width, data }
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Quantizes to 8 bits with round-to-nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }
}

fn image_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Decodes an 8-bit grayscale PGM (P5) or PNG, chosen by content.
pub fn decode_gray8(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes, path)
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes, path)
    } else if bytes.starts_with(b"P2") {
        Err(image_err(path, "ASCII PGM (P2) is not supported, expected binary P5"))
    } else {
        Err(image_err(path, "unrecognized format, expected binary PGM (P5) or PNG"))
    }
}

fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(image_err(path, format!("malformed PGM header: missing {name}")));
        }
        fields[i] = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| image_err(path, format!("malformed PGM header: bad {name}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval > 255 {
        return Err(image_err(path, format!("16-bit PGM (maxval {maxval}) is not supported, expected 8-bit")));
    }
    if maxval == 0 || width == 0 || height == 0 {
        return Err(image_err(path, "malformed PGM header: zero dimension or maxval"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(image_err(path, "malformed PGM header: no separator before raster"));
    }
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| image_err(path, format!("truncated raster: expected {n} bytes, found {}", bytes.len() - pos)))?;
    let data = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&v| ((v.min(maxval as u8) as u32 * 255 + maxval as u32 / 2) / maxval as u32) as u8)
            .collect()
    };
    Ok((height, width, data))
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let err = |e: png::DecodingError| image_err(path, format!("PNG decode failed: {e}"));
    let mut reader = png::Decoder::new(BufReader::new(Cursor::new(bytes))).read_info().map_err(err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(image_err(path, format!("PNG color type {:?} is not grayscale", info.color_type)));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(image_err(path, format!("PNG bit depth {:?} is not supported, expected 8-bit", info.bit_depth)));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "PNG too large"))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(err)?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for row in buf.chunks(frame.line_size).take(h) {
        data.extend_from_slice(&row[..w]);
    }
    Ok((h, w, data))
}

pub fn encode_pgm(height: usize, width: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn encode_png(height: usize, width: usize, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let wrap = |e: png::EncodingError| Error::Image {
        path: "<png>".into(),
        msg: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(wrap)?;
    writer.write_image_data(data).map_err(wrap)?;
    writer.finish().map_err(wrap)?;
    Ok(out)
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn read_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| image_err(path, e.to_string()))?;
    decode_gray8(&bytes, path)
}

fn write_gray8(path: &Path, height: usize, width: usize, data: &[u8]) -> Result<()> {
    let bytes = if is_png(path) {
        encode_png(height, width, data)?
    } else {
        encode_pgm(height, width, data)
    };
    std::fs::write(path, bytes).map_err(|e| image_err(path, e.to_string()))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let (h, w, data) = read_gray8(path.as_ref())?;
    GrayImage::from_u8(h, w, &data)
}

/// Writes PNG when the extension is `.png`, binary PGM otherwise.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    write_gray8(path.as_ref(), img.height, img.width, &img.to_u8())
}

/// Pixels `>= 128` become foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let (h, w, data) = read_gray8(path.as_ref())?;
    BinaryMask::new(h, w, data.into_iter().map(|v| (v >= 128) as u8).collect())
}

pub fn save_mask(m: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u8> = m.data().iter().map(|&v| v * 255).collect();
    write_gray8(path.as_ref(), m.height(), m.width(), &data)
}
