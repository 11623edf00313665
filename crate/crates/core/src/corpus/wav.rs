use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::{AudioClip, CorpusError};

/// Reads a PCM16 or float32 WAV file. Multi-channel audio is averaged to mono.
/// The sample rate is taken from the header as-is.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, CorpusError> {
    let path = path.as_ref();
    let malformed = |reason: String| CorpusError::MalformedWav {
        path: path.to_path_buf(),
        reason,
    };
    let map_err = |e: hound::Error| match e {
        hound::Error::Unsupported => CorpusError::UnsupportedEncoding {
            path: path.to_path_buf(),
            reason: "codec not supported".into(),
        },
        hound::Error::IoError(ref io) if io.kind() == std::io::ErrorKind::NotFound => {
            CorpusError::Io(std::io::Error::new(
                io.kind(),
                format!("{}: {io}", path.display()),
            ))
        }
        other => malformed(other.to_string()),
    };

    let mut reader = hound::WavReader::open(path).map_err(map_err)?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 {
        return Err(malformed("zero channels".into()));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_err)?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(map_err)?,
        (fmt, bits) => {
            return Err(CorpusError::UnsupportedEncoding {
                path: path.to_path_buf(),
                reason: format!("{bits}-bit {fmt:?} samples"),
            })
        }
    };
    // hound only reports a short data chunk at the final partial frame.
    if !interleaved.len().is_multiple_of(channels) || (interleaved.len() as u32) < reader.len() {
        return Err(malformed("truncated data chunk".into()));
    }

    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    AudioClip::new(samples, spec.sample_rate).map_err(|e| malformed(e.to_string()))
}

/// Writes a mono PCM16 file. Samples are clamped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => CorpusError::Io(io),
        other => CorpusError::MalformedWav {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_err)?;
    for &s in clip.samples() {
        let v = (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn full_scale_pcm16_maps_below_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(32767i16).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert!((clip.samples()[0] - 0.99997).abs() < 1e-5);
        assert_eq!(clip.samples()[1], -1.0);
    }

    #[test]
    fn ten_seconds_at_16k_is_160000_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ten.wav");
        let clip = AudioClip::new(vec![0.0; 160_000], 16_000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 160_000);
        assert_eq!(back.sample_rate(), 16_000);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8_000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..4 {
            w.write_sample(0.5f32).unwrap();
            w.write_sample(-0.25f32).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.len(), 4);
        assert_eq!(clip.sample_rate(), 8_000);
        assert!(clip.samples().iter().all(|&s| (s - 0.125).abs() < 1e-7));
    }

    #[test]
    fn truncated_data_chunk_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let clip = AudioClip::new(vec![0.25; 1000], 16_000).unwrap();
        write_wav(&path, &clip).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 501];
        std::fs::File::create(&path)
            .unwrap()
            .write_all(cut)
            .unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(CorpusError::MalformedWav { .. })
        ));
    }

    #[test]
    fn garbage_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.wav");
        std::fs::write(&path, b"RIFX not a wave file at all").unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(CorpusError::MalformedWav { .. })
        ));
    }

    #[test]
    fn compressed_codec_is_unsupported() {
        // Minimal RIFF/WAVE header with format tag 0x0055 (MP3).
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36u32 + 4).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&0x0055u16.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&16_000u32.to_le_bytes());
        b.extend_from_slice(&32_000u32.to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&4u32.to_le_bytes());
        b.extend_from_slice(&[0, 0, 0, 0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mp3.wav");
        std::fs::write(&path, b).unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(CorpusError::UnsupportedEncoding { .. })
        ));
    }

    #[test]
    fn unsupported_bit_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(100i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(CorpusError::UnsupportedEncoding { .. })
        ));
    }
}
