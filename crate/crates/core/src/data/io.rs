//! PFM and binary PPM reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Header tokens and the offset where the payload starts.
fn header_tokens(bytes: &[u8], path: &Path, n: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(n);
    let mut i = 0;
    while tokens.len() < n {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(path, i as u64, "truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::format(path, start as u64, "non-ASCII header"))?;
        tokens.push(tok.to_owned());
    }
    // Exactly one whitespace byte separates the header from the payload.
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(Error::format(path, i as u64, "missing whitespace after header"));
    }
    Ok((tokens, i + 1))
}

fn dims(tokens: &[String], path: &Path) -> Result<(usize, usize)> {
    let parse = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format(path, 0, format!("bad image dimension `{s}`")))
    };
    Ok((parse(&tokens[1])?, parse(&tokens[2])?))
}

/// Encodes a `[1,H,W]` or `[3,H,W]` map as little-endian PFM.
pub fn encode_pfm(map: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = map.dims3()?;
    let tag = match c {
        1 => "Pf",
        3 => "PF",
        _ => return Err(Error::Dimension(format!("PFM holds 1 or 3 channels, got {c}"))),
    };
    if let Some(v) = map.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("PFM payload must be finite, found {v}")));
    }
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(c * h * w * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&(map.at3(ch, y, x) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let (tokens, start) = header_tokens(bytes, path, 4)?;
    let c = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::format(path, 0, format!("unknown PFM tag `{other}`"))),
    };
    let (w, h) = dims(&tokens, path)?;
    let scale: f64 = tokens[3]
        .parse()
        .ok()
        .filter(|s: &f64| *s != 0.0 && s.is_finite())
        .ok_or_else(|| Error::format(path, 0, format!("bad PFM scale `{}`", tokens[3])))?;
    let little = scale < 0.0;
    let need = c * h * w * 4;
    if bytes.len() - start < need {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated payload: need {need} bytes after offset {start}"),
        ));
    }
    if bytes.len() - start > need {
        return Err(Error::format(path, (start + need) as u64, "trailing bytes after payload"));
    }
    let payload = &bytes[start..start + need];
    let mut t = Tensor::zeros([c, h, w]);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (pix, ch) = (k / c, k % c);
        let (row, x) = (pix / w, pix % w);
        let y = h - 1 - row;
        t.data_mut()[(ch * h + y) * w + x] = f64::from(v);
    }
    Ok(t)
}

/// Binary P6 with maxval 255; values are clamped to [0,1] and rounded half up.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::Dimension(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = image.at3(ch, y, x);
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                out.push((v * 255.0 + 0.5).floor() as u8);
            }
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let (tokens, start) = header_tokens(bytes, path, 4)?;
    if tokens[0] != "P6" {
        return Err(Error::format(path, 0, format!("unsupported PPM variant `{}` (only P6)", tokens[0])));
    }
    let (w, h) = dims(&tokens, path)?;
    if tokens[3] != "255" {
        return Err(Error::format(path, 0, format!("unsupported maxval {} (only 255)", tokens[3])));
    }
    let need = 3 * h * w;
    if bytes.len() - start < need {
        return Err(Error::format(path, bytes.len() as u64, format!("truncated payload: need {need} bytes")));
    }
    let p = &bytes[start..start + need];
    Ok(Tensor::from_fn([3, h, w], |i| {
        let (ch, pix) = (i / (h * w), i % (h * w));
        f64::from(p[pix * 3 + ch]) / 255.0
    }))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_pfm(path: &Path, map: &Tensor) -> Result<()> {
    write(path, &encode_pfm(map)?)
}

pub fn read_pfm(path: &Path) -> Result<Tensor> {
    decode_pfm(&read(path)?, path)
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    write(path, &encode_ppm(image)?)
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    decode_ppm(&read(path)?, path)
}

/// Rounds every value to the nearest f32, as a PFM round trip does.
pub fn quantize_f32(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f64::from(v as f32)).collect()).expect("same shape")
}
