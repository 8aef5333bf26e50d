//! Binary portable pixmap (P6) and graymap (P5) codecs.
//!
//! Only 8-bit files (maxval 255) are supported. Samples are promoted to
//! `k / 255` so an encode of a decoded file reproduces the original bytes.

use std::fs;
use std::path::Path;

use crate::error::{IqtError, Result};

/// RGB image with samples in `[0, 1]`, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(IqtError::Contract(format!(
                "image extents must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * Self::CHANNELS {
            return Err(IqtError::Contract(format!(
                "{height}x{width}x3 image needs {} samples, got {}",
                height * width * Self::CHANNELS,
                data.len()
            )));
        }
        Ok(ImageBuffer {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        ImageBuffer {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Copy of the `size × size` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(IqtError::Contract(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        ImageBuffer::new(height, width, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], what: &'static str) -> Result<Header> {
    let fmt_err = |offset: usize, msg: String| IqtError::Format {
        what,
        offset: offset as u64,
        msg,
    };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(fmt_err(
            0,
            format!("expected magic {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
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
            return Err(fmt_err(start, format!("expected header field {} as a decimal integer", k + 1)));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| fmt_err(start, "header value out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(fmt_err(pos, "expected a single whitespace byte after maxval".into())),
    }
    Ok(Header {
        width: fields[0],
        height: fields[1],
        maxval: fields[2],
        data_offset: pos,
    })
}

/// Decodes an in-memory P6 file.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    const WHAT: &str = "P6 pixmap";
    let h = parse_header(bytes, b"P6", WHAT)?;
    if h.maxval != 255 {
        return Err(IqtError::Format {
            what: WHAT,
            offset: 0,
            msg: format!("maxval {} unsupported, only 255", h.maxval),
        });
    }
    let needed = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| IqtError::Format {
            what: WHAT,
            offset: 0,
            msg: "image dimensions overflow".into(),
        })?;
    let payload = &bytes[h.data_offset..];
    if payload.len() < needed {
        return Err(IqtError::Format {
            what: WHAT,
            offset: bytes.len() as u64,
            msg: format!("truncated: expected {needed} sample bytes, found {}", payload.len()),
        });
    }
    let data = payload[..needed].iter().map(|&b| b as f32 / 255.0).collect();
    ImageBuffer::new(h.height, h.width, data)
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_bytes());
    out
}

pub fn decode_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IqtError::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| match e {
        IqtError::Format { offset, msg, .. } => IqtError::Format {
            what: "P6 pixmap",
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn write_ppm(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)).map_err(|e| IqtError::io(path, e))
}

/// Encodes an 8-bit graymap (P5).
pub fn encode_pgm(height: usize, width: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != height * width {
        return Err(IqtError::Contract(format!(
            "{height}x{width} graymap needs {} bytes, got {}",
            height * width,
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Decodes an 8-bit P5 graymap into `(height, width, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    const WHAT: &str = "P5 graymap";
    let h = parse_header(bytes, b"P5", WHAT)?;
    if h.maxval != 255 {
        return Err(IqtError::Format {
            what: WHAT,
            offset: 0,
            msg: format!("maxval {} unsupported, only 255", h.maxval),
        });
    }
    let needed = h.width * h.height;
    let payload = &bytes[h.data_offset..];
    if payload.len() < needed {
        return Err(IqtError::Format {
            what: WHAT,
            offset: bytes.len() as u64,
            msg: format!("truncated: expected {needed} bytes, found {}", payload.len()),
        });
    }
    Ok((h.height, h.width, payload[..needed].to_vec()))
}
