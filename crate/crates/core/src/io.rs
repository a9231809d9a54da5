//! Mask files: binary PGM (P5) for 2D and a minimal `MSK1` container for 3D.
//!
//! Binary payloads are stored as 0/255 bytes. Probability payloads are
//! stored as 16-bit values `v` meaning `v / 65535`; PGM uses big-endian
//! samples as the format requires, `MSK1` little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Dims, ProbMap};

const U16_SCALE: f64 = 65535.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskFormat {
    Pgm2d,
    Msk3d,
}

impl MaskFormat {
    /// `.pgm` selects PGM, anything else `MSK1`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("pgm") => MaskFormat::Pgm2d,
            _ => MaskFormat::Msk3d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Binary(BinaryMask),
    Prob(ProbMap),
}

impl Payload {
    pub fn dims(&self) -> Dims {
        match self {
            Payload::Binary(m) => m.dims(),
            Payload::Prob(p) => p.dims(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskFile {
    pub path: PathBuf,
    pub format: MaskFormat,
    pub payload: Payload,
}

fn quantize(p: f64) -> u16 {
    (p * U16_SCALE).round() as u16
}

pub fn encode_mask(payload: &Payload, format: MaskFormat) -> Result<Vec<u8>> {
    let dims = payload.dims();
    let mut out = match format {
        MaskFormat::Pgm2d => {
            if !dims.is_2d() {
                return Err(Error::InvalidDims(dims));
            }
            let maxval = match payload {
                Payload::Binary(_) => 255,
                Payload::Prob(_) => 65535,
            };
            format!("P5\n{} {}\n{}\n", dims.nx, dims.ny, maxval).into_bytes()
        }
        MaskFormat::Msk3d => {
            let kind = match payload {
                Payload::Binary(_) => "u8",
                Payload::Prob(_) => "u16",
            };
            format!("MSK1 {} {} {} {}\n", dims.nx, dims.ny, dims.nz, kind).into_bytes()
        }
    };
    match payload {
        Payload::Binary(m) => out.extend(m.data().iter().map(|&b| if b { 255u8 } else { 0 })),
        Payload::Prob(p) => {
            for &v in p.data() {
                let q = quantize(v);
                out.extend(match format {
                    MaskFormat::Pgm2d => q.to_be_bytes(),
                    MaskFormat::Msk3d => q.to_le_bytes(),
                });
            }
        }
    }
    Ok(out)
}

/// Byte cursor over a header made of whitespace-separated ASCII tokens.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Header<'a> {
    fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::MalformedHeader {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn skip_space(&mut self, comments: bool) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if comments && c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self, what: &str, comments: bool) -> Result<&'a str> {
        self.skip_space(comments);
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.malformed(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| self.malformed(format!("non-ASCII {what}")))
    }

    fn number(&mut self, what: &str, comments: bool) -> Result<usize> {
        let tok = self.token(what, comments)?;
        match tok.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(self.malformed(format!("invalid {what} {tok:?}"))),
        }
    }

    /// Consumes the single whitespace byte that ends the header.
    fn end(&mut self) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(self.malformed("header not terminated by whitespace")),
        }
    }
}

pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<(MaskFormat, Payload)> {
    let mut h = Header {
        bytes,
        pos: 0,
        path,
    };
    let magic = h.token("magic number", false)?;
    let (format, dims, wide) = match magic {
        "P5" => {
            let nx = h.number("width", true)?;
            let ny = h.number("height", true)?;
            let wide = match h.token("maxval", true)? {
                "255" => false,
                "65535" => true,
                other => return Err(h.malformed(format!("unsupported maxval {other}"))),
            };
            (MaskFormat::Pgm2d, Dims::new(nx, ny, 1), wide)
        }
        "MSK1" => {
            let nx = h.number("nx", false)?;
            let ny = h.number("ny", false)?;
            let nz = h.number("nz", false)?;
            let wide = match h.token("sample type", false)? {
                "u8" => false,
                "u16" => true,
                other => return Err(h.malformed(format!("unknown sample type {other}"))),
            };
            if h.bytes.get(h.pos) != Some(&b'\n') {
                return Err(h.malformed("header line must end with a newline"));
            }
            (MaskFormat::Msk3d, Dims::new(nx, ny, nz), wide)
        }
        other => return Err(h.malformed(format!("unknown magic {other:?}"))),
    };
    let data = h.end()?;
    let n = dims
        .nx
        .checked_mul(dims.ny)
        .and_then(|v| v.checked_mul(dims.nz))
        .ok_or_else(|| h.malformed("dimensions overflow"))?;
    let expected = if wide { 2 * n } else { n };
    if data.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: data.len(),
        });
    }
    if data.len() > expected {
        return Err(h.malformed(format!(
            "{} bytes of trailing data after the payload",
            data.len() - expected
        )));
    }
    let payload = if wide {
        let values = data
            .chunks_exact(2)
            .map(|c| {
                let pair = [c[0], c[1]];
                let v = match format {
                    MaskFormat::Pgm2d => u16::from_be_bytes(pair),
                    MaskFormat::Msk3d => u16::from_le_bytes(pair),
                };
                v as f64 / U16_SCALE
            })
            .collect();
        Payload::Prob(ProbMap::new(dims, values)?)
    } else {
        let mut bits = Vec::with_capacity(n);
        for (index, &v) in data.iter().enumerate() {
            match v {
                0 => bits.push(false),
                255 => bits.push(true),
                _ => {
                    return Err(Error::NonBinaryPixel {
                        path: path.to_path_buf(),
                        index,
                        value: v as u16,
                    })
                }
            }
        }
        Payload::Binary(BinaryMask::new(dims, bits)?)
    };
    Ok((format, payload))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (format, payload) = decode_mask(&bytes, path)?;
    Ok(MaskFile {
        path: path.to_path_buf(),
        format,
        payload,
    })
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn write_mask(payload: &Payload, format: MaskFormat, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_mask(payload, format)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn pgm_layout() {
        let m = BinaryMask::new(Dims::new(2, 2, 1), vec![true, false, false, true]).unwrap();
        let bytes = encode_mask(&Payload::Binary(m.clone()), MaskFormat::Pgm2d).unwrap();
        assert_eq!(bytes, b"P5\n2 2\n255\n\xff\x00\x00\xff");
        assert_eq!(decode_mask(&bytes, p()).unwrap().1, Payload::Binary(m));
    }

    #[test]
    fn pgm_comments_and_wide_samples() {
        let bytes = b"P5 # comment\n3 # w\n1\n65535\n\xff\xff\x00\x00\x80\x00";
        let (f, payload) = decode_mask(bytes, p()).unwrap();
        assert_eq!(f, MaskFormat::Pgm2d);
        match payload {
            Payload::Prob(pm) => assert_eq!(pm.data(), &[1.0, 0.0, 32768.0 / 65535.0]),
            _ => panic!("expected probabilities"),
        }
    }

    #[test]
    fn msk_layout() {
        let pm = ProbMap::new(Dims::new(1, 1, 2), vec![1.0, 1.0 / 65535.0]).unwrap();
        let bytes = encode_mask(&Payload::Prob(pm), MaskFormat::Msk3d).unwrap();
        assert_eq!(bytes, b"MSK1 1 1 2 u16\n\xff\xff\x01\x00");
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            decode_mask(b"P5\n2 1\n255\n\x00\x07", p()),
            Err(Error::NonBinaryPixel { index: 1, value: 7, .. })
        ));
        assert!(matches!(
            decode_mask(b"P5\n2 2\n255\n\x00", p()),
            Err(Error::TruncatedPayload { expected: 4, found: 1, .. })
        ));
        for bad in [
            &b"P2\n1 1\n255\n0"[..],
            b"P5\n1 1\n100\n\x00",
            b"P5\n0 1\n255\n",
            b"P5\n1 1\n255",
            b"P5\n1 1\n255\n\x00\x00",
            b"MSK1 1 1 1 f32\n\x00",
            b"MSK1 1 1 1 u8 \x00",
            b"",
        ] {
            assert!(
                matches!(decode_mask(bad, p()), Err(Error::MalformedHeader { .. })),
                "{:?}",
                String::from_utf8_lossy(bad)
            );
        }
        let pm = Payload::Binary(BinaryMask::zeros(Dims::new(2, 2, 2)));
        assert!(encode_mask(&pm, MaskFormat::Pgm2d).is_err());
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let m = Payload::Binary(BinaryMask::from_bits(&[1, 0, 1]));
        write_mask(&m, MaskFormat::from_path(&path), &path).unwrap();
        let back = read_mask(&path).unwrap();
        assert_eq!((back.format, back.payload), (MaskFormat::Pgm2d, m));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(matches!(read_mask(dir.path().join("none")), Err(Error::Io { .. })));
    }

    fn payload(max: usize, flat: bool) -> impl Strategy<Value = Payload> {
        let nz = if flat { 1..2usize } else { 1..max + 1 };
        (1..=max, 1..=max, nz, any::<bool>()).prop_flat_map(|(nx, ny, nz, binary)| {
            let n = nx * ny * nz;
            let dims = Dims::new(nx, ny, nz);
            if binary {
                prop::collection::vec(any::<bool>(), n)
                    .prop_map(move |v| Payload::Binary(BinaryMask::new(dims, v).unwrap()))
                    .boxed()
            } else {
                prop::collection::vec(any::<u16>(), n)
                    .prop_map(move |v| {
                        let data = v.into_iter().map(|q| q as f64 / U16_SCALE).collect();
                        Payload::Prob(ProbMap::new(dims, data).unwrap())
                    })
                    .boxed()
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pgm_round_trip(pl in payload(32, true)) {
            let bytes = encode_mask(&pl, MaskFormat::Pgm2d).unwrap();
            prop_assert_eq!(decode_mask(&bytes, p()).unwrap(), (MaskFormat::Pgm2d, pl));
        }

        #[test]
        fn msk_round_trip(pl in payload(12, false)) {
            let bytes = encode_mask(&pl, MaskFormat::Msk3d).unwrap();
            prop_assert_eq!(decode_mask(&bytes, p()).unwrap(), (MaskFormat::Msk3d, pl));
        }
    }
}
