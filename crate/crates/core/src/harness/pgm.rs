//! Binary PGM (`P5`) reading and writing. Pixels are mapped to `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8], origin: &Path) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::format(origin, "file too short for a PGM header"));
    }
    match &bytes[..2] {
        b"P5" => {}
        b"P1" | b"P2" | b"P3" | b"P4" | b"P6" => {
            return Err(Error::format(
                origin,
                format!(
                    "unsupported netpbm format {}, only binary P5 is supported",
                    String::from_utf8_lossy(&bytes[..2])
                ),
            ))
        }
        _ => return Err(Error::format(origin, "not a PGM file (missing P5 magic)")),
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
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
            return Err(Error::format(origin, format!("malformed header field {}", i + 1)));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(origin, "header value out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(origin, "missing whitespace after maxval"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format(origin, "image has zero size"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(origin, format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval,
        data_start: pos + 1,
    })
}

pub fn decode_pgm(bytes: &[u8], origin: &Path) -> Result<GrayImage> {
    let h = parse_header(bytes, origin)?;
    let count = h.width * h.height;
    let wide = h.maxval > 255;
    let needed = count * if wide { 2 } else { 1 };
    let payload = &bytes[h.data_start..];
    if payload.len() < needed {
        return Err(Error::format(
            origin,
            format!("truncated payload: need {needed} bytes, found {}", payload.len()),
        ));
    }
    let max = f64::from(h.maxval);
    let pixels = if wide {
        payload[..needed]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / max)
            .collect()
    } else {
        payload[..needed].iter().map(|b| f64::from(*b) / max).collect()
    };
    GrayImage::new(h.width, h.height, pixels)
}

pub fn encode_pgm(image: &GrayImage, maxval: u16) -> Result<Vec<u8>> {
    if maxval == 0 {
        return Err(Error::InvalidInput("maxval must be positive".into()));
    }
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval).into_bytes();
    let max = f64::from(maxval);
    for p in image.pixels() {
        let q = (p * max).round().clamp(0.0, max) as u16;
        if maxval > 255 {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    decode_pgm(&fs::read(path)?, path)
}

pub fn save_pgm(path: impl AsRef<Path>, image: &GrayImage, maxval: u16) -> Result<()> {
    fs::write(path, encode_pgm(image, maxval)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mem() -> &'static Path {
        Path::new("<memory>")
    }

    #[test]
    fn decodes_small_image() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 64]);
        let img = decode_pgm(&bytes, mem()).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.pixels(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n1 1\n# depth\n255\n".to_vec();
        bytes.push(51);
        let img = decode_pgm(&bytes, mem()).unwrap();
        assert_eq!(img.pixels(), &[0.2]);
    }

    #[test]
    fn sixteen_bit_is_big_endian() {
        let mut bytes = b"P5 1 1 65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff]);
        assert_eq!(decode_pgm(&bytes, mem()).unwrap().pixels(), &[1.0]);
    }

    #[test]
    fn rejects_ascii_and_truncation() {
        let err = decode_pgm(b"P2 1 1 255\n0", mem()).unwrap_err();
        assert!(err.to_string().contains("unsupported"));
        assert!(decode_pgm(b"P5 2 2 255\n\x00\x01", mem()).is_err());
        assert!(decode_pgm(b"P5 2 x 255\n", mem()).is_err());
        assert!(decode_pgm(b"hello", mem()).is_err());
    }

    proptest! {
        #[test]
        fn save_load_is_identity_on_grid(
            w in 1usize..6,
            h in 1usize..6,
            wide in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let maxval: u16 = if wide { 65535 } else { 255 };
            let mut s = seed;
            let pixels: Vec<f64> = (0..w * h)
                .map(|_| {
                    s = crate::rng::splitmix64(s);
                    (s % (u64::from(maxval) + 1)) as f64 / f64::from(maxval)
                })
                .collect();
            let img = GrayImage::new(w, h, pixels).unwrap();
            let bytes = encode_pgm(&img, maxval).unwrap();
            let back = decode_pgm(&bytes, mem()).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
