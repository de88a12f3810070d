//! Binary PPM (P6, maxval 255) encoding.

use std::path::Path;

use progvid_core::Frame;

use crate::error::{CliError, CliResult};

pub fn encode(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.pixels());
    out
}

/// Reads the next header token, skipping whitespace and `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32, String> {
    let t = token(bytes, pos).ok_or_else(|| format!("missing {what}"))?;
    std::str::from_utf8(t)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("invalid {what} `{}`", String::from_utf8_lossy(t)))
}

pub fn decode(bytes: &[u8]) -> Result<Frame, String> {
    let mut pos = 0;
    if token(bytes, &mut pos) != Some(b"P6".as_slice()) {
        return Err("not a binary PPM (expected `P6`)".into());
    }
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, expected 255"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator after header".into());
    }
    let body = &bytes[pos + 1..];
    let expected = width as usize * height as usize * 3;
    if body.len() != expected {
        return Err(format!("pixel data holds {} bytes, expected {expected}", body.len()));
    }
    Frame::new(width, height, body.to_vec()).map_err(|e| e.to_string())
}

pub fn read(path: &Path) -> CliResult<Frame> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, frame: &Frame) -> CliResult<()> {
    std::fs::write(path, encode(frame)).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_two_by_one() {
        let f = Frame::new(2, 1, vec![255, 0, 0, 1, 2, 3]).unwrap();
        let bytes = encode(&f);
        assert_eq!(bytes, b"P6\n2 1\n255\n\xff\x00\x00\x01\x02\x03".to_vec());
        assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn accepts_comments_and_spacing() {
        let f = decode(b"P6 # comment\n 1\t1 # more\n255\n\x0a\x0b\x0c").unwrap();
        assert_eq!(f.get(0, 0), [10, 11, 12]);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(decode(b"P3\n1 1\n255\n1 2 3").is_err());
        assert!(decode(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(decode(b"P6\n2 2\n255\n\0\0\0").is_err());
        assert!(decode(b"P6\nx 1\n255\n\0\0\0").is_err());
        assert!(decode(b"").is_err());
    }

    #[test]
    fn round_trip_every_byte_value() {
        let pixels: Vec<u8> = (0..=255u8).cycle().take(16 * 16 * 3).collect();
        let f = Frame::new(16, 16, pixels).unwrap();
        let bytes = encode(&f);
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }
}
