use std::io::{Read, Seek};
use std::path::Path;

use super::{AudioError, Waveform};

/// Read a PCM16 WAV file. Multi-channel files keep only the first channel.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let file = std::fs::File::open(path.as_ref())?;
    read_wav(std::io::BufReader::new(file))
}

pub(crate) fn read_wav<R: Read + Seek>(reader: R) -> Result<Waveform, AudioError> {
    let reader = hound::WavReader::new(reader).map_err(map_hound_read)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedCodec(format!(
            "{:?} {}-bit (only PCM 16-bit is supported)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let mut samples = Vec::with_capacity(reader.len() as usize / channels);
    for (i, s) in reader.into_samples::<i16>().enumerate() {
        let s = s.map_err(map_hound_read)?;
        if i % channels == 0 {
            samples.push(s as f32 / 32768.0);
        }
    }
    if samples.is_empty() {
        return Err(AudioError::EmptyPayload);
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Write a mono PCM16 WAV file. Samples are clamped to [-1, 1] and scaled by 32767.
pub fn save_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(map_hound)?;
    for &s in wave.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

// a read that hits an I/O error mid-stream means the file is truncated or corrupt
fn map_hound_read(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => AudioError::MalformedWav(io.to_string()),
        other => map_hound(other),
    }
}

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            AudioError::MalformedWav("unexpected end of file".into())
        }
        hound::Error::IoError(io) => AudioError::Io(io),
        hound::Error::FormatError(msg) => AudioError::MalformedWav(msg.into()),
        hound::Error::Unsupported => AudioError::UnsupportedCodec("unsupported WAV format".into()),
        other => AudioError::MalformedWav(other.to_string()),
    }
}
