use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum PgmError {
    #[error("unsupported magic {0:?}, expected \"P5\"")]
    UnsupportedMagic(String),
    #[error("unsupported maxval {0}, expected 65535")]
    UnsupportedMaxval(u64),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image has zero width or height")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raw 16-bit depth values in millimetres, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub raw: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, raw: Vec<u16>) -> Result<Self, PgmError> {
        if width == 0 || height == 0 {
            return Err(PgmError::Empty);
        }
        if raw.len() != width * height {
            return Err(PgmError::Truncated {
                expected: 2 * width * height,
                found: 2 * raw.len(),
            });
        }
        Ok(Self { width, height, raw })
    }
}

/// Reads whitespace-separated header tokens, skipping `#` comments.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize), PgmError> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(PgmError::Header("header ends early".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
        if tokens.len() == 1 && tokens[0] != "P5" {
            return Err(PgmError::UnsupportedMagic(tokens[0].clone()));
        }
    }
    // exactly one whitespace byte separates the header from the samples
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(PgmError::Header("missing separator after maxval".into()));
    }
    Ok((tokens, i + 1))
}

pub fn decode_pgm16(bytes: &[u8]) -> Result<DepthImage, PgmError> {
    let (tok, offset) = header_tokens(bytes, 4)?;
    let num = |s: &str, what: &str| {
        s.parse::<u64>()
            .map_err(|_| PgmError::Header(format!("{what} {s:?} is not a number")))
    };
    let width = num(&tok[1], "width")? as usize;
    let height = num(&tok[2], "height")? as usize;
    let maxval = num(&tok[3], "maxval")?;
    if maxval != 65535 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PgmError::Empty);
    }
    let expected = 2 * width * height;
    let data = &bytes[offset..];
    if data.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            found: data.len(),
        });
    }
    let raw = data[..expected]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    DepthImage::new(width, height, raw)
}

pub fn encode_pgm16(img: &DepthImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    out.reserve(2 * img.raw.len());
    for v in &img.raw {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn load_pgm16(path: impl AsRef<Path>) -> Result<DepthImage, PgmError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_pgm16(&bytes)
}

pub fn save_pgm16(img: &DepthImage, path: impl AsRef<Path>) -> Result<(), PgmError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&encode_pgm16(img))?;
    f.flush()?;
    Ok(())
}
