//! Binary PGM (P5, 8-bit) encoding.

use crate::error::{Error, Result};

pub fn encode(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

/// Decodes an 8-bit P5 image into `(width, height, pixels)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::Image(format!("expected P5 magic, found `{}`", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Image(format!("bad PGM header field `{s}`")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Image(format!("only 8-bit PGM supported (maxval {maxval})")));
    }
    let n = w * h;
    if bytes.len() < pos + n {
        return Err(Error::Image(format!(
            "raster truncated: need {n} bytes, have {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok((w, h, bytes[pos..pos + n].to_vec()))
}
