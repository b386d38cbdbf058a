//! IQ recording files.
//!
//! ```text
//! CNIQ1 {"rate_sps":25000000.0,"format":"sc16","length":4096,"start_phase":0.0,"origin":{...}}\n
//! <length interleaved I,Q pairs, little-endian>
//! ```
//!
//! `float64` payloads round-trip bit for bit. `sc16` and `sc8` map the
//! range [-1, 1] onto the full integer range and clip outside it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::IqBuffer;

pub const MAGIC: &str = "CNIQ1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IqFormat {
    Float64,
    Sc16,
    Sc8,
}

impl IqFormat {
    pub fn bytes_per_sample(self) -> usize {
        match self {
            IqFormat::Float64 => 16,
            IqFormat::Sc16 => 4,
            IqFormat::Sc8 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqHeader {
    pub rate_sps: f64,
    pub format: IqFormat,
    pub length: u64,
    #[serde(default)]
    pub start_phase: f64,
    #[serde(default)]
    pub origin: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum IqFileError {
    #[error("IqFileError: bad header: {0}")]
    Header(String),
    #[error("IqFileError: payload holds {got} samples, header declares {declared}")]
    Truncated { declared: u64, got: u64 },
    #[error("IqFileError: {0}")]
    Io(#[from] io::Error),
}

pub fn write_iq<W: Write>(
    mut w: W,
    buf: &IqBuffer,
    format: IqFormat,
    origin: BTreeMap<String, String>,
) -> Result<(), IqFileError> {
    let header = IqHeader {
        rate_sps: buf.rate_sps,
        format,
        length: buf.len() as u64,
        start_phase: buf.start_phase,
        origin,
    };
    let json = serde_json::to_string(&header).map_err(|e| IqFileError::Header(e.to_string()))?;
    writeln!(w, "{MAGIC} {json}")?;
    let mut payload = Vec::with_capacity(buf.len() * format.bytes_per_sample());
    for s in &buf.samples {
        match format {
            IqFormat::Float64 => {
                payload.extend_from_slice(&s.re.to_le_bytes());
                payload.extend_from_slice(&s.im.to_le_bytes());
            }
            IqFormat::Sc16 => {
                payload.extend_from_slice(&quantize(s.re, i16::MAX as f64).to_le_bytes()[..2]);
                payload.extend_from_slice(&quantize(s.im, i16::MAX as f64).to_le_bytes()[..2]);
            }
            IqFormat::Sc8 => {
                payload.push(quantize(s.re, i8::MAX as f64) as i8 as u8);
                payload.push(quantize(s.im, i8::MAX as f64) as i8 as u8);
            }
        }
    }
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

fn quantize(v: f64, full_scale: f64) -> i32 {
    (v.clamp(-1.0, 1.0) * full_scale).round() as i32
}

pub fn read_iq<R: BufRead>(mut r: R) -> Result<(IqHeader, IqBuffer), IqFileError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let rest = line
        .strip_prefix(MAGIC)
        .and_then(|s| s.strip_prefix(' '))
        .ok_or_else(|| IqFileError::Header(format!("missing {MAGIC} magic")))?;
    let header: IqHeader =
        serde_json::from_str(rest.trim_end_matches('\n')).map_err(|e| IqFileError::Header(e.to_string()))?;
    if !(header.rate_sps > 0.0) {
        return Err(IqFileError::Header(format!("rate_sps {} must be positive", header.rate_sps)));
    }
    let width = header.format.bytes_per_sample();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let got = (payload.len() / width) as u64;
    if got != header.length || payload.len() % width != 0 {
        return Err(IqFileError::Truncated {
            declared: header.length,
            got,
        });
    }
    let samples = payload
        .chunks_exact(width)
        .map(|c| match header.format {
            IqFormat::Float64 => Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            ),
            IqFormat::Sc16 => {
                let fs = i16::MAX as f64;
                Complex64::new(
                    i16::from_le_bytes([c[0], c[1]]) as f64 / fs,
                    i16::from_le_bytes([c[2], c[3]]) as f64 / fs,
                )
            }
            IqFormat::Sc8 => {
                let fs = i8::MAX as f64;
                Complex64::new(c[0] as i8 as f64 / fs, c[1] as i8 as f64 / fs)
            }
        })
        .collect();
    let buf = IqBuffer {
        samples,
        rate_sps: header.rate_sps,
        start_phase: header.start_phase,
    };
    Ok((header, buf))
}

pub fn save(
    path: impl AsRef<Path>,
    buf: &IqBuffer,
    format: IqFormat,
    origin: BTreeMap<String, String>,
) -> Result<(), IqFileError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_iq(&mut w, buf, format, origin)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(IqHeader, IqBuffer), IqFileError> {
    read_iq(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_buffer() -> IqBuffer {
        IqBuffer {
            samples: vec![
                Complex64::new(0.1, -0.2),
                Complex64::new(1.0 / 3.0, f64::MIN_POSITIVE),
                Complex64::new(-1.0, 1.0),
                Complex64::new(1.5, -7.25e-300),
            ],
            rate_sps: 25e6,
            start_phase: 1.234,
        }
    }

    #[test]
    fn float64_round_trips_exactly() {
        let buf = sample_buffer();
        let mut origin = BTreeMap::new();
        origin.insert("node".into(), "emu-1".into());
        let mut bytes = Vec::new();
        write_iq(&mut bytes, &buf, IqFormat::Float64, origin.clone()).unwrap();
        let (header, back) = read_iq(&bytes[..]).unwrap();
        assert_eq!(header.origin, origin);
        assert_eq!(header.length, 4);
        for (a, b) in buf.samples.iter().zip(&back.samples) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        assert_eq!(back.rate_sps.to_bits(), buf.rate_sps.to_bits());
        assert_eq!(back.start_phase.to_bits(), buf.start_phase.to_bits());
    }

    #[test]
    fn integer_formats_quantize_and_clip() {
        let buf = sample_buffer();
        for (format, step) in [(IqFormat::Sc16, 1.0 / 32767.0), (IqFormat::Sc8, 1.0 / 127.0)] {
            let mut bytes = Vec::new();
            write_iq(&mut bytes, &buf, format, BTreeMap::new()).unwrap();
            let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
            assert_eq!(bytes.len() - header_len, 4 * format.bytes_per_sample());
            let (_, back) = read_iq(&bytes[..]).unwrap();
            for (a, b) in buf.samples.iter().zip(&back.samples) {
                assert!((a.re.clamp(-1.0, 1.0) - b.re).abs() <= step / 2.0 + 1e-12);
                assert!((a.im.clamp(-1.0, 1.0) - b.im).abs() <= step / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn short_payload_is_reported() {
        let mut bytes = Vec::new();
        write_iq(&mut bytes, &sample_buffer(), IqFormat::Sc16, BTreeMap::new()).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_iq(&bytes[..]), Err(IqFileError::Truncated { declared: 4, got: 3 })));
        assert!(matches!(read_iq(&b"IQ {}\n"[..]), Err(IqFileError::Header(_))));
    }
}
