//! 8-bit RGB PNG and binary PPM (P6) reading and writing.

use std::fs;
use std::io::{BufReader, BufWriter, Cursor};
use std::path::Path;

use crate::error::{io_err, shape_err, Error, Result};
use crate::tensor::Tensor;

const PNG_MAGIC: &[u8] = &[0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

/// Quantise a `[0, 1]` value to a byte: clamp, scale by 255, round half away from zero.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Tensor> {
    let hw = width * height;
    let mut planar = vec![0f32; 3 * hw];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * hw + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new([1, 3, height, width], planar)
}

fn to_rgb8(t: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let [n, c, h, w] = t.dims4()?;
    if n != 1 || c != 3 {
        return shape_err("save_image", format!("expected [1, 3, H, W], got {:?}", t.shape()));
    }
    let v = t.to_f64_vec();
    let hw = h * w;
    let mut rgb = Vec::with_capacity(3 * hw);
    for i in 0..hw {
        for ch in 0..3 {
            rgb.push(quantize(v[ch * hw + i]));
        }
    }
    Ok((w, h, rgb))
}

pub fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let fmt = |e: png::DecodingError| Error::Format(format!("png: {e}"));
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(fmt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("png: only 8-bit images are supported, got {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => return Err(Error::Format(format!("png: unsupported colour type {other:?}"))),
    };
    from_rgb8(w, h, &rgb)
}

pub fn encode_png(t: &Tensor) -> Result<Vec<u8>> {
    let (w, h, rgb) = to_rgb8(t)?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let fmt = |e: png::EncodingError| Error::Format(format!("png: {e}"));
        let mut writer = enc.write_header().map_err(fmt)?;
        writer.write_image_data(&rgb).map_err(fmt)?;
    }
    Ok(out)
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn ppm_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Format("ppm: truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("ppm: bad header field".into()))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::Format("ppm: only binary P6 is supported".into()));
    }
    let mut pos = 2;
    let w = ppm_token(bytes, &mut pos)?;
    let h = ppm_token(bytes, &mut pos)?;
    let maxval = ppm_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::Format(format!("ppm: maxval {maxval}, only 255 is supported")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("ppm: empty image".into()));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("ppm: missing separator after header".into()));
    }
    pos += 1;
    let data = &bytes[pos..];
    if data.len() < 3 * w * h {
        return Err(Error::Format(format!(
            "ppm: truncated pixel data ({} of {} bytes)",
            data.len(),
            3 * w * h
        )));
    }
    from_rgb8(w, h, &data[..3 * w * h])
}

pub fn encode_ppm(t: &Tensor) -> Result<Vec<u8>> {
    let (w, h, rgb) = to_rgb8(t)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&rgb);
    Ok(out)
}

/// Decode by content: PNG signature or `P6` header.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    if bytes.starts_with(PNG_MAGIC) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else {
        Err(Error::Format("unsupported image format (expected PNG or binary PPM)".into()))
    }
}

/// Load an image as a `[1, 3, H, W]` f32 tensor with values in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Write a `[1, 3, H, W]` tensor as 8-bit PNG or PPM, chosen by extension.
pub fn save_image(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let bytes = match ext.as_deref() {
        Some("png") => encode_png(t)?,
        Some("ppm") => encode_ppm(t)?,
        _ => {
            return Err(Error::Invalid(format!(
                "{}: output extension must be .png or .ppm",
                path.display()
            )))
        }
    };
    fs::write(path, bytes).map_err(io_err(path))
}

/// Whether a path names a file [`load_image`] can read.
pub fn is_image_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm")
    )
}
