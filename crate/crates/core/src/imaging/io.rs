//! 8-bit PNG and binary PGM/PPM codecs, plus the unclamped float sidecar.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use super::Image;
use crate::{container, Error, Result};

/// Extension used for unclamped float images.
pub const FLOAT_EXTENSION: &str = "n2nf";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Png,
    Pgm,
    Ppm,
    Float,
}

fn format_of(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => Ok(Format::Png),
        Some("pgm") => Ok(Format::Pgm),
        Some("ppm") => Ok(Format::Ppm),
        Some(FLOAT_EXTENSION) => Ok(Format::Float),
        _ => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "expected .png, .pgm or .ppm".into(),
        }),
    }
}

/// Maps a `[0, 1]` value to a byte: clamp, then `round(v * 255)` with ties up.
pub fn quantize(v: f32) -> u8 {
    let v = f64::from(v);
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

fn dequantize(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| f32::from(b) / 255.0).collect()
}

/// Loads an 8-bit PNG (gray or RGB) or binary PGM/PPM into `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let format = format_of(path)?;
    if format == Format::Float {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "float sidecars are loaded with load_float_image".into(),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Png => decode_png(path, &bytes),
        _ => decode_pnm(path, &bytes),
    }
}

/// Like [`load_image`], but also accepts unclamped float sidecars.
pub fn load_image_any(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if format_of(path)? == Format::Float {
        load_float_image(path)
    } else {
        load_image(path)
    }
}

/// Writes `img` as PNG, PGM (1 channel) or PPM (3 channels) by extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let encoded = match format_of(path)? {
        Format::Png => encode_png(img, &bytes),
        Format::Pgm | Format::Ppm => {
            let (magic, channels) = if format_of(path)? == Format::Pgm {
                ("P5", 1)
            } else {
                ("P6", 3)
            };
            if img.channels() != channels {
                return Err(Error::UnsupportedFormat {
                    path: path.to_path_buf(),
                    reason: format!("{magic} needs {channels} channel(s), image has {}", img.channels()),
                });
            }
            let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
            out.extend_from_slice(&bytes);
            out
        }
        Format::Float => return save_float_image(img, path),
    };
    fs::write(path, encoded).map_err(|e| Error::io(path, e))
}

/// Writes the unclamped values in the checkpoint float container.
pub fn save_float_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let descriptor = format!(
        "image height={} width={} channels={}",
        img.height(),
        img.width(),
        img.channels()
    );
    container::write(path.as_ref(), &descriptor, img.data())
}

pub fn load_float_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let (descriptor, values) = container::read(path)?;
    let bad = || Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: format!("not an image descriptor: {descriptor:?}"),
    };
    let mut fields = descriptor.split_whitespace();
    if fields.next() != Some("image") {
        return Err(bad());
    }
    let mut dims = [0usize; 3];
    for (slot, key) in dims.iter_mut().zip(["height", "width", "channels"]) {
        let field = fields.next().ok_or_else(bad)?;
        let value = field.strip_prefix(key).and_then(|v| v.strip_prefix('=')).ok_or_else(bad)?;
        *slot = value.parse().map_err(|_| bad())?;
    }
    Image::new(dims[0], dims[1], dims[2], values)
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Image> {
    let png_err = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Truncated {
                path: path.to_path_buf(),
                reason: io.to_string(),
            }
        }
        other => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let info = reader.info();
    let (color, depth) = (info.color_type, info.bit_depth);
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            depth: depth as u32,
        });
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("color type {other:?} (only 8-bit gray and RGB are supported)"),
            })
        }
    };
    let size = reader.output_buffer_size().ok_or_else(|| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(frame.buffer_size());
    Image::new(frame.height as usize, frame.width as usize, channels, dequantize(&buf))
}

fn encode_png(img: &Image, bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        encoder.set_color(if img.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        encoder.set_depth(png::BitDepth::Eight);
        // Writing into a Vec cannot fail.
        let mut writer = encoder.write_header().expect("png header");
        writer.write_image_data(bytes).expect("png data");
    }
    out
}

fn decode_pnm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let malformed = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: "only binary P5/P6 are supported".into(),
            })
        }
    };
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        // whitespace and '#' comments
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
            return Err(malformed("expected a decimal number"));
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| malformed("number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = header;
    if maxval != 255 {
        let depth = if maxval > 255 { 16 } else { usize::BITS - maxval.leading_zeros() };
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            depth,
        });
    }
    let expected = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            reason: format!("expected {expected} bytes of pixels, found {}", payload.len()),
        });
    }
    Image::new(height, width, channels, dequantize(&payload[..expected]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn hand_written_pgm() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 64]);
        fs::write(&path, bytes).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (2, 2, 1));
        assert_eq!(img.data(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    }

    #[test]
    fn zero_png_loads_as_zeros() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("z.png");
        save_image(&Image::filled(4, 4, 1, 0.0).unwrap(), &path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.data(), &[0.0; 16]);
    }

    #[test]
    fn ones_saturate_to_255() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("o.ppm");
        save_image(&Image::filled(2, 3, 3, 1.0).unwrap(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.ends_with(&[255; 18]));
        assert_eq!(bytes.len(), b"P6\n3 2\n255\n".len() + 18);
    }

    #[test]
    fn quantization_rounds_half_up_and_clamps() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(f32::NAN), 0);
        for b in 0..=255u8 {
            assert_eq!(quantize(f32::from(b) / 255.0), b);
        }
    }

    #[test]
    fn save_load_is_a_fixed_point() {
        let dir = tempdir().unwrap();
        let img = Image::from_fn(5, 7, 3, |r, c, ch| ((r * 31 + c * 7 + ch * 13) % 97) as f32 / 96.3 - 0.02)
            .unwrap();
        for name in ["a.png", "a.ppm"] {
            let path = dir.path().join(name);
            save_image(&img, &path).unwrap();
            let once = load_image(&path).unwrap();
            for (a, b) in img.clamped().data().iter().zip(once.data()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
            save_image(&once, &path).unwrap();
            assert_eq!(load_image(&path).unwrap(), once);
        }
    }

    #[test]
    fn errors_are_distinct() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(Error::MissingFile(_))
        ));

        let deep = dir.path().join("deep.pgm");
        fs::write(&deep, b"P5 1 1 65535\n\0\0").unwrap();
        assert!(matches!(
            load_image(&deep),
            Err(Error::UnsupportedBitDepth { depth: 16, .. })
        ));

        let short = dir.path().join("short.pgm");
        fs::write(&short, b"P5 4 4 255\n\0\0\0").unwrap();
        assert!(matches!(load_image(&short), Err(Error::Truncated { .. })));

        let png16 = dir.path().join("deep.png");
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            enc.write_header().unwrap().write_image_data(&[0, 0]).unwrap();
        }
        fs::write(&png16, &out).unwrap();
        assert!(matches!(
            load_image(&png16),
            Err(Error::UnsupportedBitDepth { depth: 16, .. })
        ));

        let full = dir.path().join("full.png");
        save_image(&Image::filled(16, 16, 3, 0.3).unwrap(), &full).unwrap();
        let bytes = fs::read(&full).unwrap();
        let cut = dir.path().join("cut.png");
        fs::write(&cut, &bytes[..bytes.len() - 20]).unwrap();
        assert!(matches!(load_image(&cut), Err(Error::Truncated { .. })));
    }

    #[test]
    fn float_sidecar_keeps_unclamped_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.n2nf");
        let img = Image::new(1, 3, 1, vec![-0.25, 0.5, 1.75]).unwrap();
        save_float_image(&img, &path).unwrap();
        assert_eq!(load_float_image(&path).unwrap(), img);
        assert_eq!(load_image_any(&path).unwrap(), img);
        assert!(load_image(&path).is_err());
    }
}
