//! 16-bit PCM mono WAV files at 16 kHz.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

fn decode_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(format!("wav decode: {other}")),
    }
}

pub fn read_wav_from<R: Read>(reader: R) -> Result<Waveform> {
    let mut wav = WavReader::new(reader).map_err(decode_err)?;
    let spec = wav.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "unsupported encoding: {:?} with {} bits per sample (need 16-bit integer PCM)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::Format(format!("expected mono audio, found {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Format(format!(
            "expected {SAMPLE_RATE} Hz, found {} Hz",
            spec.sample_rate
        )));
    }
    let samples = wav
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(decode_err)?;
    Ok(Waveform { samples, sample_rate: SAMPLE_RATE })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_wav_from(BufReader::new(file)).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn quantize(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

pub fn write_wav_to<W: Write + Seek>(writer: W, x: &Waveform) -> Result<()> {
    if x.sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidArgument(format!(
            "can only write {SAMPLE_RATE} Hz audio, got {} Hz",
            x.sample_rate
        )));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut wav = WavWriter::new(writer, spec).map_err(decode_err)?;
    for s in &x.samples {
        wav.write_sample(quantize(*s)).map_err(decode_err)?;
    }
    wav.finalize().map_err(decode_err)
}

pub fn write_wav(path: impl AsRef<Path>, x: &Waveform) -> Result<()> {
    let file = File::create(path)?;
    write_wav_to(BufWriter::new(file), x)
}
