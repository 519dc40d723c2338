//! Native binary netpbm support: 8-bit PGM (P5) and PPM (P6).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded 8-bit raster, interleaved by pixel.
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

pub fn decode(bytes: &[u8], path: &str) -> Result<RasterImage> {
    let bad = |detail: &str| Error::BadImage {
        path: path.to_string(),
        detail: detail.to_string(),
    };

    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| bad("missing magic number"))?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(bad(&format!("unsupported magic `{other}`, want P5 or P6"))),
    };
    let width: usize = parse_field(bytes, &mut pos, "width").map_err(|d| bad(&d))?;
    let height: usize = parse_field(bytes, &mut pos, "height").map_err(|d| bad(&d))?;
    let maxval: usize = parse_field(bytes, &mut pos, "maxval").map_err(|d| bad(&d))?;
    if maxval != 255 {
        return Err(bad(&format!("maxval {maxval}, only 8-bit (255) supported")));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let expected = width * height * channels;
    let raster = bytes
        .get(pos..pos + expected)
        .ok_or_else(|| bad(&format!("raster truncated: need {expected} bytes")))?;
    Ok(RasterImage {
        width,
        height,
        channels,
        pixels: raster.to_vec(),
    })
}

/// Encode an 8-bit RGB image as binary PPM (P6).
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

impl RasterImage {
    /// Planar [C, H, W] tensor of raw byte values (not yet normalized).
    pub fn to_planar_tensor(&self) -> Tensor {
        let hw = self.height * self.width;
        let mut data = vec![0f32; self.channels * hw];
        for p in 0..hw {
            for c in 0..self.channels {
                data[c * hw + p] = self.pixels[p * self.channels + c] as f32;
            }
        }
        Tensor::new(vec![self.channels, self.height, self.width], data).unwrap()
    }
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    } else {
        None
    }
}

fn parse_field(bytes: &[u8], pos: &mut usize, what: &str) -> std::result::Result<usize, String> {
    let tok = next_token(bytes, pos).ok_or_else(|| format!("missing {what}"))?;
    tok.parse().map_err(|_| format!("bad {what} `{tok}`"))
}
