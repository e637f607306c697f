//! PNG (8-bit gray/RGB) and binary PNM (P5/P6) reading and writing.

use std::io::Cursor;
use std::path::Path;

use crate::fsutil;
use crate::imaging::{Image, ImageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    /// Binary PGM (`P5`) for gray, PPM (`P6`) for RGB.
    Pnm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self, ImageError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("png") => Ok(ImageFormat::Png),
            Some("ppm" | "pgm" | "pnm") => Ok(ImageFormat::Pnm),
            _ => Err(ImageError::UnsupportedFormat(format!(
                "cannot infer format from {}",
                path.display()
            ))),
        }
    }
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

pub fn read_image(path: &Path) -> Result<Image, ImageError> {
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

pub fn write_image(path: &Path, img: &Image) -> Result<(), ImageError> {
    let bytes = encode(img, ImageFormat::from_path(path)?)?;
    fsutil::write_atomic(path, &bytes).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Decodes PNG or PNM bytes, detected from the leading magic.
pub fn decode(bytes: &[u8]) -> Result<Image, ImageError> {
    if bytes.len() < 2 {
        return Err(ImageError::Truncated(format!("{} byte(s)", bytes.len())));
    }
    if bytes.starts_with(&PNG_SIGNATURE[..bytes.len().min(8)]) {
        if bytes.len() < PNG_SIGNATURE.len() {
            return Err(ImageError::Truncated("PNG signature".into()));
        }
        return decode_png(bytes);
    }
    match &bytes[..2] {
        b"P5" => decode_pnm(bytes, 1),
        b"P6" => decode_pnm(bytes, 3),
        other => Err(ImageError::UnsupportedFormat(format!(
            "unrecognised magic {:?}",
            String::from_utf8_lossy(other)
        ))),
    }
}

pub fn encode(img: &Image, format: ImageFormat) -> Result<Vec<u8>, ImageError> {
    match format {
        ImageFormat::Pnm => Ok(encode_pnm(img)),
        ImageFormat::Png => encode_png(img),
    }
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

fn decode_pnm(bytes: &[u8], channels: usize) -> Result<Image, ImageError> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                None => return Err(ImageError::Truncated("PNM header".into())),
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::Malformed(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Malformed("header number out of range".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        None => return Err(ImageError::Truncated("PNM header".into())),
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(ImageError::Malformed("missing separator after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::UnsupportedFormat(format!("PNM maxval {maxval} (only 255 supported)")));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Malformed(format!("PNM size {width}x{height}")));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| ImageError::Malformed("PNM size overflows".into()))?;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(ImageError::Truncated(format!(
            "PNM raster has {} of {need} bytes",
            raster.len()
        )));
    }
    Image::new(height, width, channels, raster[..need].to_vec())
}

fn decode_png(bytes: &[u8]) -> Result<Image, ImageError> {
    use png::{ColorType, Transformations};

    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::EXPAND | Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_error)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Malformed("PNG dimensions overflow".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_error)?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let rows = buf.chunks_exact(info.line_size);
    let (channels, pixels): (usize, Vec<u8>) = match info.color_type {
        ColorType::Grayscale => (1, rows.flat_map(|r| r[..w].iter().copied()).collect()),
        ColorType::GrayscaleAlpha => (1, rows.flat_map(|r| r[..2 * w].iter().step_by(2).copied()).collect()),
        ColorType::Rgb => (3, rows.flat_map(|r| r[..3 * w].iter().copied()).collect()),
        ColorType::Rgba => (
            3,
            rows.flat_map(|r| r[..4 * w].chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]))
                .collect(),
        ),
        ColorType::Indexed => {
            return Err(ImageError::UnsupportedFormat("unexpanded indexed PNG".into()));
        }
    };
    Image::new(h, w, channels, pixels)
}

fn png_error(e: png::DecodingError) -> ImageError {
    match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            ImageError::Truncated(format!("PNG stream: {io}"))
        }
        png::DecodingError::Format(f) => {
            let msg = f.to_string();
            if msg.contains("EOF") || msg.contains("end of") || msg.contains("truncat") {
                ImageError::Truncated(msg)
            } else {
                ImageError::Malformed(msg)
            }
        }
        other => ImageError::Malformed(other.to_string()),
    }
}

fn encode_png(img: &Image) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(if img.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| ImageError::Malformed(e.to_string()))?;
        writer
            .write_image_data(img.pixels())
            .map_err(|e| ImageError::Malformed(e.to_string()))?;
        writer.finish().map_err(|e| ImageError::Malformed(e.to_string()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(channels: usize) -> Image {
        let px = (0..5 * 7 * channels).map(|v| (v * 37 % 256) as u8).collect();
        Image::new(5, 7, channels, px).unwrap()
    }

    #[test]
    fn p6_header_parses() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (1, 2, 3));
        assert_eq!(img.pixels(), &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn pnm_comments_are_skipped() {
        let mut bytes = b"P5 # gray\n# size next\n3 1 255\n".to_vec();
        bytes.extend_from_slice(&[9, 8, 7]);
        assert_eq!(decode(&bytes).unwrap().pixels(), &[9, 8, 7]);
    }

    #[test]
    fn error_kinds_are_distinct() {
        assert!(matches!(decode(&[]), Err(ImageError::Truncated(_))));
        assert!(matches!(decode(b"P6\n2 1\n255\n\x01\x02"), Err(ImageError::Truncated(_))));
        assert!(matches!(decode(b"P6\n2 1"), Err(ImageError::Truncated(_))));
        assert!(matches!(decode(b"GIF89a.."), Err(ImageError::UnsupportedFormat(_))));
        assert!(matches!(decode(b"P6\n2 1\n65535\n"), Err(ImageError::UnsupportedFormat(_))));
        assert!(matches!(
            read_image(Path::new("/nonexistent/definitely/missing.png")),
            Err(ImageError::Io { .. })
        ));
    }

    #[test]
    fn png_round_trip_gray_and_rgb() {
        for ch in [1, 3] {
            let img = sample(ch);
            let bytes = encode(&img, ImageFormat::Png).unwrap();
            assert_eq!(decode(&bytes).unwrap(), img);
        }
    }

    #[test]
    fn truncated_png() {
        let bytes = encode(&sample(3), ImageFormat::Png).unwrap();
        for cut in [4, 20, 40] {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, ImageError::Truncated(_) | ImageError::Malformed(_)),
                "cut {cut}: {err:?}"
            );
        }
        assert!(matches!(decode(&bytes[..4]), Err(ImageError::Truncated(_))));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (name, ch) in [("a.ppm", 3), ("b.pgm", 1), ("c.png", 3)] {
            let path = dir.path().join(name);
            let img = sample(ch);
            write_image(&path, &img).unwrap();
            assert_eq!(read_image(&path).unwrap(), img);
        }
        let bad = dir.path().join("x.jpg");
        assert!(matches!(write_image(&bad, &sample(1)), Err(ImageError::UnsupportedFormat(_))));
    }
}
