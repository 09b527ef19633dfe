//! Minimal WAV reader/writer: PCM 16-bit, 24-bit, and IEEE float32.
//! Multi-channel files are reduced to channel 0 with a warning. Samples
//! are normalized to [-1, 1] floats internally.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Pcm24,
    Float32,
}

pub struct WavContent {
    pub wave: Waveform,
    pub format: SampleFormat,
    /// e.g. a multi-channel file reduced to channel 0
    pub warnings: Vec<String>,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::WavFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn rd_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn rd_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn read_wav(path: &Path) -> Result<WavContent> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(format_err(path, "not a RIFF/WAVE file"));
    }

    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format_tag, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = rd_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or_else(|| format_err(path, "chunk size overflow"))?;
        if body_end > bytes.len() {
            return Err(format_err(path, "truncated chunk"));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(format_err(path, "fmt chunk too small"));
                }
                let mut tag = rd_u16(&body[0..2]);
                let channels = rd_u16(&body[2..4]);
                let rate = rd_u32(&body[4..8]);
                let bits = rd_u16(&body[14..16]);
                // WAVE_FORMAT_EXTENSIBLE: real tag lives in the sub-format GUID
                if tag == 0xFFFE && size >= 40 {
                    tag = rd_u16(&body[24..26]);
                }
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1); // chunks are word-aligned
    }

    let (tag, channels, rate, bits) = fmt.ok_or_else(|| format_err(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| format_err(path, "missing data chunk"))?;
    if channels == 0 || rate == 0 {
        return Err(format_err(path, "invalid channel count or sample rate"));
    }

    let format = match (tag, bits) {
        (1, 16) => SampleFormat::Pcm16,
        (1, 24) => SampleFormat::Pcm24,
        (3, 32) => SampleFormat::Float32,
        _ => {
            return Err(format_err(
                path,
                format!("unsupported format tag {tag} with {bits} bits"),
            ))
        }
    };

    let bytes_per_sample = (bits / 8) as usize;
    let frame_size = bytes_per_sample * channels as usize;
    let n_frames = data.len() / frame_size;
    let mut samples = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let off = f * frame_size; // channel 0
        let s = match format {
            SampleFormat::Pcm16 => {
                i16::from_le_bytes([data[off], data[off + 1]]) as f64 / 32768.0
            }
            SampleFormat::Pcm24 => {
                let v = ((data[off + 2] as i32) << 16 | (data[off + 1] as i32) << 8 | data[off] as i32) << 8 >> 8;
                v as f64 / 8388608.0
            }
            SampleFormat::Float32 => f32::from_le_bytes([
                data[off],
                data[off + 1],
                data[off + 2],
                data[off + 3],
            ]) as f64,
        };
        samples.push(s);
    }
    let mut warnings = Vec::new();
    if channels > 1 {
        warnings.push(format!("{}: {channels} channels, using channel 0", path.display()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(format_err(path, "non-finite samples"));
    }
    Ok(WavContent {
        wave: Waveform::new(samples, rate)?,
        format,
        warnings,
    })
}

/// Write a mono WAV in the given format. Float payloads are written
/// bit-exactly (after f32 narrowing); PCM is clamped and rounded.
pub fn write_wav(path: &Path, wave: &Waveform, format: SampleFormat) -> Result<()> {
    let (tag, bits): (u16, u16) = match format {
        SampleFormat::Pcm16 => (1, 16),
        SampleFormat::Pcm24 => (1, 24),
        SampleFormat::Float32 => (3, 32),
    };
    let bytes_per_sample = (bits / 8) as usize;
    let data_len = wave.len() * bytes_per_sample;
    let byte_rate = wave.sample_rate * bytes_per_sample as u32;

    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &wave.samples {
        match format {
            SampleFormat::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            SampleFormat::Pcm24 => {
                let v = (s * 8388608.0).round().clamp(-8388608.0, 8388607.0) as i32;
                out.extend_from_slice(&v.to_le_bytes()[..3]);
            }
            SampleFormat::Float32 => {
                out.extend_from_slice(&(s as f32).to_le_bytes());
            }
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("refinevoc-wav-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn float32_round_trip_is_bit_exact() {
        let w = Waveform::new(
            (0..1000).map(|i| ((i as f64) * 0.013).sin() as f32 as f64).collect(),
            44100,
        )
        .unwrap();
        let p = tmp("f32.wav");
        write_wav(&p, &w, SampleFormat::Float32).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.format, SampleFormat::Float32);
        assert_eq!(r.wave.sample_rate, 44100);
        assert_eq!(r.wave.samples, w.samples);
    }

    #[test]
    fn pcm16_and_pcm24_round_trip_within_quantization() {
        for (fmt, tol, name) in [
            (SampleFormat::Pcm16, 1.0 / 32768.0, "p16.wav"),
            (SampleFormat::Pcm24, 1.0 / 8388608.0, "p24.wav"),
        ] {
            let w = Waveform::new(
                (0..500).map(|i| 0.9 * ((i as f64) * 0.02).sin()).collect(),
                22050,
            )
            .unwrap();
            let p = tmp(name);
            write_wav(&p, &w, fmt).unwrap();
            let r = read_wav(&p).unwrap();
            assert_eq!(r.wave.len(), w.len());
            for (a, b) in w.samples.iter().zip(&r.wave.samples) {
                assert!((a - b).abs() <= tol, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn truncated_file_errors() {
        let p = tmp("trunc.wav");
        std::fs::write(&p, b"RIFF\x10\x00\x00\x00WAVEfmt ").unwrap();
        assert!(read_wav(&p).is_err());
    }

    #[test]
    fn stereo_reads_channel_zero_with_warning() {
        // hand-built stereo PCM16 file: L channel ramps, R channel zeros
        let n = 100u32;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + n * 4).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&8000u32.to_le_bytes());
        out.extend_from_slice(&32000u32.to_le_bytes());
        out.extend_from_slice(&4u16.to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(n * 4).to_le_bytes());
        for i in 0..n {
            out.extend_from_slice(&(i as i16 * 100).to_le_bytes());
            out.extend_from_slice(&0i16.to_le_bytes());
        }
        let p = tmp("stereo.wav");
        std::fs::write(&p, &out).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.wave.len(), 100);
        assert_eq!(r.warnings.len(), 1);
        assert!((r.wave.samples[50] - 5000.0 / 32768.0).abs() < 1e-9);
    }
}
