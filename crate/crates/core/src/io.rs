//! Raster and float-map file formats.
//!
//! Readers accept PNG (8/16-bit gray, gray+alpha, RGB, RGBA) and binary
//! netpbm (P5/P6, maxval up to 65535). Samples are scaled by the maximum code
//! value. Writers emit 8-bit data unless asked for 16-bit PGM.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Magic prefix of dense float maps.
pub const MAP_MAGIC: &[u8; 8] = b"DFKMAP01";

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp_name = format!(".{}.tmp{}", name.to_string_lossy(), std::process::id());
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => Path::new(&tmp_name).to_path_buf(),
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    decode_image(&bytes)
}

/// Decodes PNG or PPM/PGM bytes, sniffing the format from the header.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else {
        Err(Error::format("expected PNG or binary PPM/PGM data"))
    }
}

/// Saves by extension: `.png`, `.ppm`, `.pgm`.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "png" => encode_png(img)?,
        "ppm" | "pgm" => encode_pnm(img, false),
        _ => {
            return Err(Error::format(format!(
                "unsupported output extension `{ext}`"
            )))
        }
    };
    write_atomic(path, &bytes)
}

/// 16-bit binary PGM/PPM.
pub fn save_pnm16(img: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pnm(img, true))
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn encode_pnm(img: &Image, sixteen_bit: bool) -> Vec<u8> {
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let maxval = if sixteen_bit { 65535 } else { 255 };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", img.width(), img.height()).into_bytes();
    if sixteen_bit {
        for &v in img.data() {
            out.extend_from_slice(&quantize16(v).to_be_bytes());
        }
    } else {
        out.extend(img.data().iter().map(|&v| quantize8(v)));
    }
    out
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = if bytes[1] == b'6' { 3 } else { 1 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::format("truncated netpbm header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("malformed netpbm header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("malformed netpbm header"))?;
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::format("truncated netpbm header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("unsupported maxval {maxval}")));
    }
    let n = width * height * channels;
    let bps = if maxval > 255 { 2 } else { 1 };
    let raster = &bytes[pos..];
    if raster.len() < n * bps {
        return Err(Error::format(format!(
            "truncated raster: need {} bytes, have {}",
            n * bps,
            raster.len()
        )));
    }
    let scale = maxval as f64;
    let data: Vec<f64> = if bps == 1 {
        raster[..n].iter().map(|&b| b as f64 / scale).collect()
    } else {
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    let mut img = Image::new(width, height, channels, data)?;
    img.clamp_unit();
    Ok(img)
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("png: image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(format!("png: {e}")))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let src_channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::format("png: unexpanded palette")),
    };
    let sixteen = info.bit_depth == png::BitDepth::Sixteen;
    let samples: Vec<f64> = if sixteen {
        buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect()
    } else {
        buf[..info.buffer_size()]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect()
    };
    let out_channels = if src_channels >= 3 { 3 } else { 1 };
    let data: Vec<f64> = samples
        .chunks_exact(src_channels)
        .flat_map(|p| p[..out_channels].to_vec())
        .collect();
    let mut img = Image::new(width, height, out_channels, data)?;
    img.clamp_unit();
    Ok(img)
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(if img.channels() == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::format(format!("png: {e}")))?;
        let data: Vec<u8> = img.data().iter().map(|&v| quantize8(v)).collect();
        w.write_image_data(&data)
            .map_err(|e| Error::format(format!("png: {e}")))?;
    }
    Ok(out)
}

/// Dense single-channel float map: 16-byte header then little-endian f32.
pub fn encode_map(map: &Image) -> Result<Vec<u8>> {
    if map.channels() != 1 {
        return Err(Error::invalid("float maps are single-channel"));
    }
    let mut out = Vec::with_capacity(16 + 4 * map.len_pixels());
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    for &v in map.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_map(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 16 || &bytes[..8] != MAP_MAGIC {
        return Err(Error::format("missing DFKMAP01 header"));
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * width * height {
        return Err(Error::format(format!(
            "float map body has {} bytes, expected {}",
            body.len(),
            4 * width * height
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Image::new(width, height, 1, data)
}

pub fn save_map(map: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &encode_map(map)?)
}

pub fn load_map(path: &Path) -> Result<Image> {
    decode_map(&fs::read(path)?)
}

/// Linear rendering of `map` so that `lo → 0` and `hi → 1`.
pub fn render_map(map: &Image, lo: f64, hi: f64) -> Image {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = map
        .data()
        .iter()
        .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
        .collect();
    Image::new(map.width(), map.height(), 1, data).expect("finite map")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_bit_exact() {
        let img = Image::new(
            2,
            2,
            3,
            vec![0.0, 1.0, 0.5, 0.25, 0.75, 0.1, 0.9, 0.3, 0.6, 0.2, 0.4, 0.8],
        )
        .unwrap();
        let a = encode_pnm(&img, false);
        let back = decode_image(&a).unwrap();
        assert_eq!(encode_pnm(&back, false), a);
        // quantized values survive exactly
        let again = decode_image(&encode_pnm(&back, false)).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn pgm_scaling() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&65535u16.to_be_bytes());
        assert_eq!(decode_image(&bytes).unwrap().data(), &[1.0]);

        let mut bytes = b"P5\n# comment\n1 1\n255\n".to_vec();
        bytes.push(128);
        assert_eq!(decode_image(&bytes).unwrap().data(), &[128.0 / 255.0]);
    }

    #[test]
    fn truncated_and_unknown_rejected() {
        assert!(decode_image(b"P6\n2 2\n255\n\x00\x01").is_err());
        assert!(decode_image(b"P6\n2 2").is_err());
        assert!(decode_image(b"GIF89a").is_err());
        assert!(decode_image(b"\x89PNG\r\n\x1a\n\x00\x00").is_err());
    }

    #[test]
    fn png_round_trip() {
        let img = Image::from_fn_rgb(3, 2, |x, y| {
            [x as f64 / 2.0, y as f64, ((x + y) % 2) as f64 * 0.5]
        });
        let q = decode_image(&encode_png(&img).unwrap()).unwrap();
        let q2 = decode_image(&encode_png(&q).unwrap()).unwrap();
        assert_eq!(q, q2);
        for (a, b) in img.data().iter().zip(q.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let gray = img.channel(1);
        let g = decode_image(&encode_png(&gray).unwrap()).unwrap();
        assert_eq!(g.channels(), 1);
    }

    #[test]
    fn map_format_layout() {
        let map = Image::from_fn_gray(3, 2, |x, y| 0.5 + x as f64 * 0.25 + y as f64);
        let bytes = encode_map(&map).unwrap();
        assert_eq!(&bytes[..8], b"DFKMAP01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 16 + 4 * 6);
        assert_eq!(decode_map(&bytes).unwrap(), map);
        assert!(decode_map(&bytes[..20]).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn_gray(4, 3, |x, y| ((x * 3 + y) % 7) as f64 / 6.0);
        for name in ["a.pgm", "a.png"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            save_image(&back, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), back);
        }
        let p16 = dir.path().join("b.pgm");
        save_pnm16(&img, &p16).unwrap();
        let back = load_image(&p16).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(save_image(&img, &dir.path().join("x.bmp")).is_err());
    }
}
