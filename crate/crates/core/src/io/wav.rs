//! RIFF PCM WAV via `hound`: 16-bit integer or 32-bit float.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, GseError, Result};
use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

fn wav_err(path: &Path, source: hound::Error) -> GseError {
    GseError::Wav {
        path: path.display().to_string(),
        source,
    }
}

/// Quantize to the file's sample type the same way `write_wav` does, so a
/// waveform that went through this survives a write/read cycle bit-exactly.
pub fn quantize_for(wave: &Waveform, format: WavFormat) -> Waveform {
    let channels = wave
        .channels()
        .iter()
        .map(|ch| ch.iter().map(|&x| dequantize(quantize(x, format), format)).collect())
        .collect();
    Waveform::multichannel(channels, wave.sample_rate()).expect("quantized samples stay finite")
}

#[derive(Clone, Copy)]
enum Sample {
    I16(i16),
    F32(f32),
}

fn quantize(x: f64, format: WavFormat) -> Sample {
    match format {
        WavFormat::Pcm16 => Sample::I16((x * 32768.0).round().clamp(-32768.0, 32767.0) as i16),
        WavFormat::Float32 => Sample::F32(x as f32),
    }
}

fn dequantize(s: Sample, _format: WavFormat) -> f64 {
    match s {
        Sample::I16(v) => v as f64 / 32768.0,
        Sample::F32(v) => v as f64,
    }
}

pub fn write_wav(path: &Path, wave: &Waveform, format: WavFormat) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| super::io_err(parent, e))?;
        }
    }
    let spec = hound::WavSpec {
        channels: wave.n_channels() as u16,
        sample_rate: wave.sample_rate(),
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for i in 0..wave.len() {
        for ch in wave.channels() {
            let r = match quantize(ch[i], format) {
                Sample::I16(v) => w.write_sample(v),
                Sample::F32(v) => w.write_sample(v),
            };
            r.map_err(|e| wav_err(path, e))?;
        }
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut r = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = r.spec();
    let n_ch = spec.channels as usize;
    let flat: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => r
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return input_err(format!(
                "{}: unsupported sample format {fmt:?}/{bits} bit",
                path.display()
            ))
        }
    }
    .map_err(|e| wav_err(path, e))?;
    let mut channels = vec![Vec::with_capacity(flat.len() / n_ch.max(1)); n_ch];
    for (i, x) in flat.into_iter().enumerate() {
        channels[i % n_ch].push(x);
    }
    Waveform::multichannel(channels, spec.sample_rate)
}
