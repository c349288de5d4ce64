use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{synth_utterance, synth_visual_features, SyntheticSpeaker};
use crate::dsp::Waveform;
use crate::error::{invalid, Error, Result};
use crate::model::VisualFeatureSequence;
use crate::seed;
use crate::wav::{read_wav, write_wav};

const AVF_MAGIC: &[u8; 4] = b"AVF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Length of each utterance in video frames.
    pub utterance_frames: usize,
    pub visual_dim: usize,
    pub noise_scale: f64,
    pub master_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 10,
            utterances_per_speaker: 20,
            utterance_frames: 100,
            visual_dim: 32,
            noise_scale: 0.05,
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusUtterance {
    pub waveform: Waveform,
    pub visual: VisualFeatureSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpeaker {
    pub speaker: SyntheticSpeaker,
    pub split: Split,
    pub utterances: Vec<CorpusUtterance>,
}

/// Speakers with their utterances, split by identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub speakers: Vec<CorpusSpeaker>,
    pub visual_dim: usize,
}

impl Corpus {
    pub fn speakers_in(&self, split: Split) -> Vec<&CorpusSpeaker> {
        self.speakers.iter().filter(|s| s.split == split).collect()
    }

    /// Shortest utterance, in video frames.
    pub fn min_frames(&self) -> usize {
        self.speakers
            .iter()
            .flat_map(|s| s.utterances.iter().map(|u| u.visual.n_frames()))
            .min()
            .unwrap_or(0)
    }

    /// Writes `speakers.tsv`, `audio/<seed>/<utt>.wav` and `visual/<seed>/<utt>.avf`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut tsv = BufWriter::new(File::create(dir.join("speakers.tsv"))?);
        for spk in &self.speakers {
            let seed = spk.speaker.speaker_seed;
            writeln!(tsv, "{seed}\t{}", spk.split.as_str())?;
            let audio = dir.join("audio").join(seed.to_string());
            let visual = dir.join("visual").join(seed.to_string());
            fs::create_dir_all(&audio)?;
            fs::create_dir_all(&visual)?;
            for (k, utt) in spk.utterances.iter().enumerate() {
                write_wav(audio.join(format!("utt{k:03}.wav")), &utt.waveform)?;
                write_avf(visual.join(format!("utt{k:03}.avf")), &utt.visual)?;
            }
        }
        tsv.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let tsv = fs::read_to_string(dir.join("speakers.tsv"))?;
        let mut speakers = Vec::new();
        let mut visual_dim = None;
        for (line_no, line) in tsv.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Format(format!("speakers.tsv line {}: {line:?}", line_no + 1));
            let (seed, split) = line.split_once('\t').ok_or_else(bad)?;
            let seed: u64 = seed.trim().parse().map_err(|_| bad())?;
            let split: Split = split.trim().parse()?;
            let audio = dir.join("audio").join(seed.to_string());
            let mut names: Vec<String> = fs::read_dir(&audio)?
                .filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().into_string().ok())
                .filter_map(|n| n.strip_suffix(".wav").map(str::to_owned))
                .collect();
            names.sort();
            let mut utterances = Vec::with_capacity(names.len());
            for name in names {
                let waveform = read_wav(audio.join(format!("{name}.wav")))?;
                let visual = read_avf(dir.join("visual").join(seed.to_string()).join(format!("{name}.avf")))?;
                if visual.n_frames() * super::SAMPLES_PER_FRAME != waveform.len() {
                    return Err(Error::Format(format!(
                        "{seed}/{name}: {} visual frames do not cover {} samples",
                        visual.n_frames(),
                        waveform.len()
                    )));
                }
                if *visual_dim.get_or_insert(visual.dim()) != visual.dim() {
                    return Err(Error::Format(format!("{seed}/{name}: inconsistent visual dimension")));
                }
                utterances.push(CorpusUtterance { waveform, visual });
            }
            speakers.push(CorpusSpeaker { speaker: SyntheticSpeaker::from_seed(seed), split, utterances });
        }
        Ok(Self { speakers, visual_dim: visual_dim.unwrap_or(0) })
    }
}

/// Generates a corpus with an 80/20 train/test split by speaker identity.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    if cfg.n_speakers < 6 {
        return invalid(format!("a corpus needs at least 6 speakers, got {}", cfg.n_speakers));
    }
    if cfg.utterances_per_speaker == 0 || cfg.utterance_frames == 0 {
        return invalid("utterance count and length must be positive");
    }
    let mut rng = seed::rng(cfg.master_seed, &[0xC0]);
    let mut seeds = Vec::with_capacity(cfg.n_speakers);
    let mut seen = HashSet::new();
    while seeds.len() < cfg.n_speakers {
        let s: u64 = rng.random();
        if seen.insert(s) {
            seeds.push(s);
        }
    }
    let n_test = ((cfg.n_speakers as f64) * 0.2).round().max(1.0) as usize;
    let mut order: Vec<usize> = (0..cfg.n_speakers).collect();
    order.shuffle(&mut rng);
    let test: HashSet<usize> = order[..n_test].iter().copied().collect();

    let speakers = seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let speaker = SyntheticSpeaker::from_seed(s);
            let utterances = (0..cfg.utterances_per_speaker as u64)
                .map(|u| {
                    let utt = synth_utterance(&speaker, cfg.utterance_frames, u)?;
                    let visual = synth_visual_features(&utt, cfg.visual_dim, cfg.noise_scale)?;
                    Ok(CorpusUtterance { waveform: utt.waveform, visual })
                })
                .collect::<Result<Vec<_>>>()?;
            let split = if test.contains(&i) { Split::Test } else { Split::Train };
            Ok(CorpusSpeaker { speaker, split, utterances })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { speakers, visual_dim: cfg.visual_dim })
}

/// Writes a feature file: `AVF1`, u32 `T_v`, u32 `D_v`, then row-major f32 LE.
pub fn write_avf(path: impl AsRef<Path>, v: &VisualFeatureSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(AVF_MAGIC)?;
    w.write_all(&(v.n_frames() as u32).to_le_bytes())?;
    w.write_all(&(v.dim() as u32).to_le_bytes())?;
    for x in v.values.iter() {
        w.write_all(&(*x as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_avf(path: impl AsRef<Path>) -> Result<VisualFeatureSequence> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[..4] != AVF_MAGIC {
        return Err(bad("missing AVF1 header"));
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    if payload.len() != t * d * 4 {
        return Err(bad(&format!("expected {} payload bytes for {t}x{d}, found {}", t * d * 4, payload.len())));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let values = Array2::from_shape_vec((t, d), values).map_err(|e| bad(&e.to_string()))?;
    VisualFeatureSequence::new(values).map_err(|e| bad(&e.to_string()))
}
