//! Loss, optimizer and the three-phase curriculum.
//!
//! Phase 1 trains the magnitude sub-network alone, walking the curriculum
//! stages from one interferer upwards. Phase 2 freezes it (parameters and
//! normalization statistics) and trains the phase sub-network. Phase 3
//! fine-tunes everything. Phases 2 and 3 use the last stage's interferer
//! count.

use std::fmt;

use ndarray::{concatenate, Array3, Axis};

use crate::autograd::{BnMode, Graph, ParamStore, Scalar, Var};
use crate::dsp::split_mag_phase;
use crate::error::{invalid, Result};
use crate::metrics::bss_eval;
use crate::mixgen::{sample_training_example, MixtureExample, SEGMENT_FRAMES};
use crate::model::{enhance_spectrogram, stack_inputs, to_batch, EnhancementNet, Modes, NetConfig, PhaseSource};
use crate::seed;
use crate::synthdata::{Corpus, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the phase term.
    pub lambda: f64,
    pub magnitude_reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0, magnitude_reduction: Reduction::Mean }
    }
}

/// `|M̂ - M*|` reduced per `cfg`.
pub fn magnitude_loss<T: Scalar>(g: &mut Graph<'_, T>, mhat: Var, mstar: Var, cfg: &LossConfig) -> Result<Var> {
    let d = g.sub(mhat, mstar)?;
    let a = g.abs(d);
    Ok(match cfg.magnitude_reduction {
        Reduction::Mean => g.mean(a),
        Reduction::Sum => g.sum(a),
    })
}

/// Magnitude L1 minus `λ` times the mean over bins of `M* <Φ̂, Φ*>`.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    mhat: Var,
    mstar: Var,
    phihat: Var,
    phistar: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    if cfg.lambda < 0.0 {
        return invalid(format!("phase weight must be non-negative, got {}", cfg.lambda));
    }
    let (b, t, f) = g.shape(mstar);
    if g.shape(phihat) != (b, t, 2 * f) || g.shape(phistar) != (b, t, 2 * f) {
        return invalid(format!(
            "phase shapes {:?} and {:?} do not pair with magnitude {:?}",
            g.shape(phihat),
            g.shape(phistar),
            (b, t, f)
        ));
    }
    let mag = magnitude_loss(g, mhat, mstar, cfg)?;
    let cos = g.pair_dot(phihat, phistar)?;
    let weighted = g.mul(cos, mstar)?;
    let phase = g.mean(weighted);
    let phase = g.scale(phase, -T::of(cfg.lambda));
    g.add(mag, phase)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive moment estimates, one pair per parameter. Each parameter keeps
/// its own update count so that bias correction restarts for parameters
/// that were frozen until now.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub first: Vec<Array3<T>>,
    pub second: Vec<Array3<T>>,
    pub updates: Vec<u64>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, p)| Array3::zeros(p.value.dim())).collect::<Vec<_>>();
        Self { config, first: zeros(), second: zeros(), updates: vec![0; params.len()], step: 0 }
    }

    /// Applies one update to every trainable parameter from its accumulated
    /// gradient.
    pub fn update(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if params.len() != self.first.len() {
            return invalid(format!("optimizer tracks {} parameters, store has {}", self.first.len(), params.len()));
        }
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one, eps) = (T::one(), T::of(c.eps));
        self.step += 1;
        for (i, (_, p)) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            self.updates[i] += 1;
            let k = self.updates[i] as i32;
            let lr_t = T::of(c.lr * (1.0 - c.beta2.powi(k)).sqrt() / (1.0 - c.beta1.powi(k)));
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            ndarray::Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, g, m, v| {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                *w -= lr_t * *m / (v.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Magnitude = 1,
    PhaseOnly = 2,
    EndToEnd = 3,
}

impl Phase {
    pub fn number(self) -> u8 {
        self as u8
    }

    fn modes(self) -> Modes {
        match self {
            Phase::Magnitude => Modes { magnitude: BnMode::Train, phase: None },
            Phase::PhaseOnly => Modes { magnitude: BnMode::Eval, phase: Some(BnMode::Train) },
            Phase::EndToEnd => Modes { magnitude: BnMode::Train, phase: Some(BnMode::Train) },
        }
    }

    /// Marks exactly the parameters this phase trains.
    pub fn set_trainable<T: Scalar>(self, params: &mut ParamStore<T>) {
        params.set_all_trainable(true);
        match self {
            Phase::Magnitude => params.set_trainable(EnhancementNet::<T>::is_phase_param, false),
            Phase::PhaseOnly => params.set_trainable(|n| !EnhancementNet::<T>::is_phase_param(n), false),
            Phase::EndToEnd => {}
        }
    }
}

fn targets<T: Scalar>(examples: &[MixtureExample]) -> Result<(Array3<T>, Array3<T>)> {
    let mut mags = Vec::with_capacity(examples.len());
    let mut phases = Vec::with_capacity(examples.len());
    for e in examples {
        let (m, p) = split_mag_phase(&e.reference);
        mags.push(to_batch::<T>(&m.values));
        phases.push(to_batch::<T>(&p.values));
    }
    let cat = |v: &[Array3<T>]| {
        let views: Vec<_> = v.iter().map(|a| a.view()).collect();
        concatenate(Axis(0), &views).map_err(|e| crate::Error::InvalidArgument(format!("batch shapes differ: {e}")))
    };
    Ok((cat(&mags)?, cat(&phases)?))
}

/// One optimizer step on a mini-batch; returns the batch loss. Parameters
/// outside the phase's trainable subset are left bit-identical.
pub fn train_step<T: Scalar>(
    net: &mut EnhancementNet<T>,
    opt: &mut OptimizerState<T>,
    examples: &[MixtureExample],
    phase: Phase,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    let inputs = examples.iter().map(|e| net.prepare(&e.mixture, &e.visual)).collect::<Result<Vec<_>>>()?;
    let inputs = stack_inputs(&inputs)?;
    let (mstar, phistar) = targets::<T>(examples)?;
    phase.set_trainable(&mut net.params);
    let (loss_value, grads) = {
        let mut g = Graph::new(&net.params);
        let out = net.layout.forward(&mut g, &mut net.bn, &inputs, phase.modes())?;
        let ms = g.constant(mstar);
        let loss = match out.phase {
            Some(phihat) => {
                let ps = g.constant(phistar);
                total_loss(&mut g, out.magnitude, ms, phihat, ps, loss_cfg)?
            }
            None => magnitude_loss(&mut g, out.magnitude, ms, loss_cfg)?,
        };
        let value = g.value(loss)[[0, 0, 0]].to_f64().expect("finite loss");
        (value, g.backward(loss)?)
    };
    if !loss_value.is_finite() {
        return Err(crate::Error::InvalidState(format!("loss diverged to {loss_value}")));
    }
    net.params.zero_grad();
    net.params.accumulate(&grads);
    opt.update(&mut net.params)?;
    Ok(loss_value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub n_interferers: usize,
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurriculumSchedule {
    /// Magnitude-only training, easiest first.
    pub stages: Vec<Stage>,
    pub phase_only_steps: usize,
    pub end_to_end_steps: usize,
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return invalid("a curriculum needs at least one stage");
        }
        let counts: Vec<usize> = self.stages.iter().map(|s| s.n_interferers).collect();
        if counts.iter().any(|n| !(1..=4).contains(n)) {
            return invalid(format!("interferer counts {counts:?} must lie in 1..=4"));
        }
        if counts.windows(2).any(|w| w[1] < w[0]) {
            return invalid(format!("interferer counts {counts:?} must be non-decreasing"));
        }
        Ok(())
    }

    fn final_interferers(&self) -> usize {
        self.stages.last().map_or(1, |s| s.n_interferers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub segment_frames: usize,
    /// Steps between validation lines; each stage also logs at its end.
    pub eval_every: usize,
    /// Held-out two-speaker mixtures used for validation.
    pub n_validation: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::toy(),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 4,
            segment_frames: SEGMENT_FRAMES,
            eval_every: 500,
            n_validation: 8,
            seed: 0,
        }
    }
}

/// One validation point of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    /// Steps taken so far, over all phases.
    pub step: usize,
    /// 1-based curriculum stage; phases 2 and 3 report the last stage.
    pub stage: usize,
    pub phase: u8,
    /// Mean training loss since the previous entry.
    pub loss: f64,
    pub val_sdr_db: f64,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{:.6}\t{:.4}", self.step, self.stage, self.phase, self.loss, self.val_sdr_db)
    }
}

/// Deterministic held-out two-speaker mixtures.
pub fn validation_set(corpus: &Corpus, n: usize, segment_frames: usize, seed_value: u64) -> Result<Vec<MixtureExample>> {
    let cfg = crate::dsp::StftConfig::default();
    (0..n as u64)
        .map(|i| sample_training_example(corpus, Split::Test, 1, segment_frames, seed::derive(seed_value, &[0x7A1, i]), &cfg))
        .collect()
}

/// Mean SDR of the network output (predicted phase) against the reference.
pub fn mean_sdr<T: Scalar>(net: &EnhancementNet<T>, examples: &[MixtureExample], source: &PhaseSource) -> Result<f64> {
    if examples.is_empty() {
        return invalid("no examples to evaluate");
    }
    let mut total = 0.0;
    for e in examples {
        let out = enhance_spectrogram(net, &e.mixture, &e.visual, source)?;
        total += bss_eval(&out.waveform, &e.reference_wave, &e.interferer_waves)?.sdr_db;
    }
    Ok(total / examples.len() as f64)
}

/// Trains a fresh network on the train split of `corpus`. `observe` sees
/// every log entry as soon as it is produced.
pub fn run_curriculum(
    corpus: &Corpus,
    schedule: &CurriculumSchedule,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&LogEntry),
) -> Result<(EnhancementNet<f32>, Vec<LogEntry>)> {
    schedule.validate()?;
    if cfg.batch_size == 0 || cfg.eval_every == 0 || cfg.n_validation == 0 {
        return invalid("batch size, evaluation interval and validation count must be positive");
    }
    if corpus.visual_dim != cfg.net.visual_dim {
        return invalid(format!("corpus visual dimension {} differs from the network's {}", corpus.visual_dim, cfg.net.visual_dim));
    }
    let needed = schedule.final_interferers() + 1;
    if corpus.speakers_in(Split::Train).len() < needed {
        return invalid(format!("the train split needs at least {needed} speakers"));
    }
    let mut net = EnhancementNet::<f32>::new(cfg.net, seed::derive(cfg.seed, &[0x1417]))?;
    let mut opt = OptimizerState::new(&net.params, cfg.adam);
    let validation = validation_set(corpus, cfg.n_validation, cfg.segment_frames, cfg.seed)?;
    let stft = crate::dsp::StftConfig::default();

    let mut plan: Vec<(Phase, usize, Stage)> =
        schedule.stages.iter().enumerate().map(|(i, s)| (Phase::Magnitude, i + 1, *s)).collect();
    let last = (schedule.stages.len(), schedule.final_interferers());
    for (phase, steps) in [(Phase::PhaseOnly, schedule.phase_only_steps), (Phase::EndToEnd, schedule.end_to_end_steps)] {
        plan.push((phase, last.0, Stage { n_interferers: last.1, n_steps: steps }));
    }

    let mut log = Vec::new();
    let mut step = 0usize;
    for (phase, stage_no, stage) in plan {
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for k in 0..stage.n_steps {
            let batch = (0..cfg.batch_size as u64)
                .map(|b| {
                    let s = seed::derive(cfg.seed, &[phase.number() as u64, stage_no as u64, k as u64, b]);
                    sample_training_example(corpus, Split::Train, stage.n_interferers, cfg.segment_frames, s, &stft)
                })
                .collect::<Result<Vec<_>>>()?;
            loss_sum += train_step(&mut net, &mut opt, &batch, phase, &cfg.loss)?;
            loss_n += 1;
            step += 1;
            if (k + 1) % cfg.eval_every == 0 || k + 1 == stage.n_steps {
                let entry = LogEntry {
                    step,
                    stage: stage_no,
                    phase: phase.number(),
                    loss: loss_sum / loss_n as f64,
                    val_sdr_db: mean_sdr(&net, &validation, &PhaseSource::Predicted)?,
                };
                observe(&entry);
                log.push(entry);
                (loss_sum, loss_n) = (0.0, 0);
            }
        }
    }
    net.params.set_all_trainable(true);
    Ok((net, log))
}
