//! Flat `key = value` run configuration.
//!
//! ```text
//! # toy run
//! preset = toy
//! seed = 7
//! lr = 1e-3
//! stages = 1:1500, 2:500
//! phase_only_steps = 500
//! end_to_end_steps = 500
//! ```
//!
//! Blank lines and `#` comments are ignored; unknown keys, repeated keys
//! and malformed values are errors that name the line.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::model::NetConfig;
use crate::training::{CurriculumSchedule, Reduction, Stage, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub schedule: CurriculumSchedule,
    pub stft: StftConfig,
    /// Where the metrics log goes; defaults to the checkpoint path plus `.log`.
    pub metrics_log: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            schedule: CurriculumSchedule {
                stages: vec![Stage { n_interferers: 1, n_steps: 1500 }, Stage { n_interferers: 2, n_steps: 500 }],
                phase_only_steps: 500,
                end_to_end_steps: 500,
            },
            stft: StftConfig::default(),
            metrics_log: None,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Format(format!("line {line}: invalid value {v:?} for {key}")))
}

fn parse_stages(line: usize, v: &str) -> Result<Vec<Stage>> {
    v.split(',')
        .map(|item| {
            let bad = || Error::Format(format!("line {line}: stage {:?} is not interferers:steps", item.trim()));
            let (n, s) = item.trim().split_once(':').ok_or_else(bad)?;
            Ok(Stage { n_interferers: n.trim().parse().map_err(|_| bad())?, n_steps: s.trim().parse().map_err(|_| bad())? })
        })
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut overrides: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {line}: expected key = value, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Format(format!("line {line}: {key} is set twice")));
            }
            seen.push(key.to_string());
            let t = &mut cfg.train;
            match key {
                "preset" => {
                    t.net = match value {
                        "toy" => NetConfig::toy(),
                        "full" => NetConfig::full(),
                        _ => return Err(Error::Format(format!("line {line}: unknown preset {value:?} (toy or full)"))),
                    };
                }
                "visual_dim" | "mag_channels" | "phase_channels" => overrides.push((line, key.into(), value.into())),
                "lambda" => t.loss.lambda = parse(line, key, value)?,
                "magnitude_reduction" => {
                    t.loss.magnitude_reduction = match value {
                        "mean" => Reduction::Mean,
                        "sum" => Reduction::Sum,
                        _ => return Err(Error::Format(format!("line {line}: magnitude_reduction must be mean or sum"))),
                    }
                }
                "lr" => t.adam.lr = parse(line, key, value)?,
                "beta1" => t.adam.beta1 = parse(line, key, value)?,
                "beta2" => t.adam.beta2 = parse(line, key, value)?,
                "batch_size" => t.batch_size = parse(line, key, value)?,
                "segment_frames" => t.segment_frames = parse(line, key, value)?,
                "eval_every" => t.eval_every = parse(line, key, value)?,
                "n_validation" => t.n_validation = parse(line, key, value)?,
                "seed" => t.seed = parse(line, key, value)?,
                "stages" => cfg.schedule.stages = parse_stages(line, value)?,
                "phase_only_steps" => cfg.schedule.phase_only_steps = parse(line, key, value)?,
                "end_to_end_steps" => cfg.schedule.end_to_end_steps = parse(line, key, value)?,
                "stft_window" => cfg.stft.window_len = parse(line, key, value)?,
                "stft_hop" => cfg.stft.hop = parse(line, key, value)?,
                "stft_fft" => cfg.stft.fft_size = parse(line, key, value)?,
                "metrics_log" => cfg.metrics_log = Some(PathBuf::from(value)),
                _ => return Err(Error::Format(format!("line {line}: unknown key {key:?}"))),
            }
        }
        // dimension overrides apply on top of the preset wherever they appear
        for (line, key, value) in overrides {
            let v: usize = parse(line, &key, &value)?;
            match key.as_str() {
                "visual_dim" => cfg.train.net.visual_dim = v,
                "mag_channels" => cfg.train.net.mag_channels = v,
                _ => cfg.train.net.phase_channels = v,
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fmt = |e: Error| Error::Format(e.to_string());
        self.stft.validate().map_err(fmt)?;
        if self.stft != StftConfig::default() {
            return Err(Error::Format(format!(
                "the network needs the default STFT (window 640, hop 160, fft 640), got {:?}",
                self.stft
            )));
        }
        self.train.net.validate().map_err(fmt)?;
        self.schedule.validate().map_err(fmt)?;
        let t = &self.train;
        if t.batch_size == 0 || t.segment_frames == 0 || t.eval_every == 0 || t.n_validation == 0 {
            return Err(Error::Format("batch_size, segment_frames, eval_every and n_validation must be positive".into()));
        }
        if !(t.adam.lr > 0.0) || !(0.0..1.0).contains(&t.adam.beta1) || !(0.0..1.0).contains(&t.adam.beta2) {
            return Err(Error::Format("lr must be positive and beta1, beta2 in [0, 1)".into()));
        }
        if !(t.loss.lambda >= 0.0) {
            return Err(Error::Format(format!("lambda must be non-negative, got {}", t.loss.lambda)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let cfg = RunConfig::parse(
            "# toy run\npreset = toy\nseed = 7\nlr = 1e-3\nstages = 1:1500, 2:500\n\nphase_only_steps = 500 # trailing\nend_to_end_steps = 500\n",
        )
        .unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.adam.lr, 1e-3);
        assert_eq!(cfg.schedule.stages[1], Stage { n_interferers: 2, n_steps: 500 });
        assert_eq!(cfg.train.net, NetConfig::toy());
    }

    #[test]
    fn overrides_apply_after_preset() {
        let cfg = RunConfig::parse("mag_channels = 64\npreset = toy\nmagnitude_reduction = sum").unwrap();
        assert_eq!(cfg.train.net.mag_channels, 64);
        assert_eq!(cfg.train.loss.magnitude_reduction, Reduction::Sum);
    }

    #[test]
    fn errors_name_the_line() {
        let err = |text: &str| RunConfig::parse(text).unwrap_err().to_string();
        assert!(err("seed = 1\nbogus = 3").contains("line 2"));
        assert!(err("seed = x").contains("line 1"));
        assert!(err("\n\nlr").contains("line 3"));
        assert!(err("seed = 1\nseed = 2").contains("twice"));
        assert!(err("stages = 1-5").contains("line 1"));
        assert!(err("stages = 2:5, 1:5").contains("non-decreasing"));
        assert!(err("stft_fft = 1024").contains("STFT"));
        assert!(RunConfig::parse("stft_hop = 128").is_err());
        assert!(err("lambda = -1").contains("lambda"));
        assert!(matches!(RunConfig::parse("x = 1"), Err(Error::Format(_))));
    }
}
