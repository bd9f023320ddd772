//! Binary netpbm rasters: P6 colour images and P5 greyscale masks and dumps,
//! both with maxval 255.

use std::path::Path;

use mmnet_core::Tensor;

use crate::error::RunError;

/// Parse failure with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message} at byte {offset}")]
pub struct FormatError {
    pub offset: usize,
    pub message: String,
}

fn fail<T>(offset: usize, message: impl Into<String>) -> Result<T, FormatError> {
    Err(FormatError {
        offset,
        message: message.into(),
    })
}

struct Header {
    width: usize,
    height: usize,
    payload: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header, FormatError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return fail(
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        );
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
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
            return fail(pos, "expected a decimal header field");
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = match text.parse() {
            Ok(v) => v,
            Err(_) => return fail(start, "header field overflows"),
        };
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return fail(pos, "expected whitespace after maxval"),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return fail(pos - 1, format!("unsupported maxval {maxval}"));
    }
    if width == 0 || height == 0 {
        return fail(pos - 1, "zero image extent");
    }
    Ok(Header {
        width,
        height,
        payload: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8], FormatError> {
    let Some(need) = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(channels))
    else {
        return fail(header.payload, "image extent overflows");
    };
    let have = bytes.len() - header.payload;
    if have < need {
        return fail(
            bytes.len(),
            format!("truncated payload: {have} of {need} bytes"),
        );
    }
    if have > need {
        return fail(header.payload + need, "trailing bytes after payload");
    }
    Ok(&bytes[header.payload..])
}

/// Decodes a P6 image into `[3, H, W]` with values in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let h = parse_header(bytes, b"P6")?;
    let data = payload(bytes, &h, 3)?;
    let plane = h.width * h.height;
    let t = Tensor::from_fn(&[3, h.height, h.width], |k| {
        let (c, p) = (k / plane, k % plane);
        f64::from(data[p * 3 + c]) / 255.0
    });
    Ok(t)
}

/// Decodes a P5 raster into `[H, W]` raw values in `[0, 1]`.
pub fn decode_pgm_values(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let h = parse_header(bytes, b"P5")?;
    let data = payload(bytes, &h, 1)?;
    Ok(Tensor::from_fn(&[h.height, h.width], |k| {
        f64::from(data[k]) / 255.0
    }))
}

/// Decodes a P5 mask: bytes above 127 are foreground.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let h = parse_header(bytes, b"P5")?;
    let data = payload(bytes, &h, 1)?;
    Ok(Tensor::from_fn(&[h.height, h.width], |k| {
        f64::from(u8::from(data[k] > 127))
    }))
}

/// `[0, 1]` to a byte, rounding half up. Values outside the range are clamped.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes `[H, W]` values in `[0, 1]` as P5.
pub fn encode_pgm(map: &Tensor) -> Vec<u8> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| quantize(v)));
    out
}

/// Encodes `[3, H, W]` values in `[0, 1]` as P6.
pub fn encode_ppm(image: &Tensor) -> Vec<u8> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for p in 0..plane {
        for c in 0..3 {
            out.push(quantize(image.data()[c * plane + p]));
        }
    }
    out
}

fn read(path: &Path) -> Result<Vec<u8>, RunError> {
    std::fs::read(path).map_err(|e| RunError::io(path, e))
}

fn with_path<T>(path: &Path, r: Result<T, FormatError>) -> Result<T, RunError> {
    r.map_err(|source| RunError::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_ppm(path: &Path) -> Result<Tensor, RunError> {
    with_path(path, decode_ppm(&read(path)?))
}

pub fn read_pgm(path: &Path) -> Result<Tensor, RunError> {
    with_path(path, decode_pgm(&read(path)?))
}

pub fn write_pgm(map: &Tensor, path: &Path) -> Result<(), RunError> {
    if map.rank() != 2 {
        return Err(RunError::Usage(format!(
            "write_pgm expects a 2-D map, got {:?}",
            map.shape()
        )));
    }
    std::fs::write(path, encode_pgm(map)).map_err(|e| RunError::io(path, e))
}

pub fn write_ppm(image: &Tensor, path: &Path) -> Result<(), RunError> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(RunError::Usage(format!(
            "write_ppm expects [3, H, W], got {:?}",
            image.shape()
        )));
    }
    std::fs::write(path, encode_ppm(image)).map_err(|e| RunError::io(path, e))
}

/// Min-max scales a map to `[0, 1]`; a constant map becomes all zeros.
pub fn min_max_scale(map: &Tensor) -> Tensor {
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Tensor::zeros(map.shape());
    }
    map.map(|v| (v - lo) / (hi - lo))
}
