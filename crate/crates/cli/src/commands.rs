use std::ffi::OsString;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use avse::checkpoint;
use avse::config::RunConfig;
use avse::dsp::Waveform;
use avse::metrics::{bss_eval, stoi};
use avse::mixgen::rms;
use avse::model::{enhance, EnhancementNet, PhaseSource};
use avse::synthdata::{build_corpus, read_avf, Corpus, CorpusConfig};
use avse::training::run_curriculum;
use avse::wav::{read_wav, write_wav};
use avse::Error;

use crate::{Command, PhaseArg};

pub const MAX_NOISES: usize = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

/// Validation failures are usage errors; decoding and I/O are runtime errors.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o error: {e}"))
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

fn read(path: &Path) -> Result<Waveform> {
    read_wav(path).map_err(|e| match e {
        Error::Io(io) => CliError::Runtime(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

fn write(path: &Path, x: &Waveform) -> Result<()> {
    if x.peak() > 1.0 {
        eprintln!("avse: warning: {} peaks at {:.3} and will clip", path.display(), x.peak());
    }
    write_wav(path, x).map_err(Into::into)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn writable_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) if !dir.is_dir() => usage(format!("output directory {} does not exist", dir.display())),
        _ => Ok(()),
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { out, speakers, utts, seed, frames, visual_dim } => synth(&out, speakers, utts, seed, frames, visual_dim),
        Command::Mix { reference, noise, out, manifest } => mix(&reference, &noise, &out, manifest),
        Command::Train { corpus, config, out } => train(&corpus, &config, &out),
        Command::Enhance { ckpt, mix, visual, out, phase, gt_wav, gl_iters } => {
            enhance_cmd(&ckpt, &mix, &visual, &out, phase, gt_wav.as_deref(), gl_iters)
        }
        Command::Evaluate { estimate, target, interferers, stoi } => evaluate(&estimate, &target, &interferers, stoi),
    }
}

fn synth(out: &Path, speakers: usize, utts: usize, seed: u64, frames: usize, visual_dim: usize) -> Result<()> {
    if visual_dim == 0 {
        return usage("--visual-dim must be positive");
    }
    let cfg = CorpusConfig {
        n_speakers: speakers,
        utterances_per_speaker: utts,
        utterance_frames: frames,
        visual_dim,
        master_seed: seed,
        ..Default::default()
    };
    let corpus = build_corpus(&cfg)?;
    corpus.save(out)?;
    eprintln!("wrote {speakers} speakers x {utts} utterances to {}", out.display());
    Ok(())
}

fn mix(reference: &Path, noises: &[PathBuf], out: &Path, manifest: Option<PathBuf>) -> Result<()> {
    if noises.is_empty() || noises.len() > MAX_NOISES {
        return usage(format!("need 1 to {MAX_NOISES} --noise files, got {}", noises.len()));
    }
    writable_parent(out)?;
    let target = read(reference)?;
    let target_rms = rms(&target)?;
    if target_rms == 0.0 {
        return usage(format!("{} is silent", reference.display()));
    }
    let mut mixture = target.clone();
    let mut lines = vec![format!("{}\t{:.6}", reference.display(), 1.0)];
    for path in noises {
        let n = read(path)?;
        if n.len() != target.len() {
            return usage(format!("{} has {} samples, {} has {}", path.display(), n.len(), reference.display(), target.len()));
        }
        let r = rms(&n)?;
        if r == 0.0 {
            return usage(format!("{} is silent", path.display()));
        }
        let scale = target_rms / r;
        mixture = mixture.add(&n.scaled(scale))?;
        lines.push(format!("{}\t{scale:.6}", path.display()));
    }
    write(out, &mixture)?;
    let manifest = manifest.unwrap_or_else(|| with_suffix(out, ".manifest.tsv"));
    std::fs::write(&manifest, lines.join("\n") + "\n")?;
    Ok(())
}

fn train(corpus_dir: &Path, config: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config).map_err(|e| CliError::Runtime(format!("{}: {e}", config.display())))?;
    let cfg = RunConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", config.display())))?;
    if !corpus_dir.join("speakers.tsv").is_file() {
        return Err(CliError::Runtime(format!("{} is not a corpus (no speakers.tsv)", corpus_dir.display())));
    }
    writable_parent(out)?;
    let log_path = cfg.metrics_log.clone().unwrap_or_else(|| with_suffix(out, ".log"));
    writable_parent(&log_path)?;
    let corpus = Corpus::load(corpus_dir)?;
    if corpus.visual_dim != cfg.train.net.visual_dim {
        return usage(format!(
            "corpus has {}-dimensional visual features, the config expects {}",
            corpus.visual_dim, cfg.train.net.visual_dim
        ));
    }

    let mut log = BufWriter::new(File::create(&log_path)?);
    writeln!(log, "step\tstage\tphase\tloss\tval_sdr_db")?;
    let mut io_err = None;
    let (net, _) = run_curriculum(&corpus, &cfg.schedule, &cfg.train, |entry| {
        eprintln!("{entry}");
        if io_err.is_none() {
            io_err = writeln!(log, "{entry}").and_then(|_| log.flush()).err();
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    checkpoint::save(out, &net)?;
    eprintln!("wrote {} and {}", out.display(), log_path.display());
    Ok(())
}

fn enhance_cmd(
    ckpt: &Path,
    mix: &Path,
    visual: &Path,
    out: &Path,
    phase: PhaseArg,
    gt_wav: Option<&Path>,
    gl_iters: usize,
) -> Result<()> {
    if phase == PhaseArg::Gt && gt_wav.is_none() {
        return usage("--phase gt requires --gt-wav");
    }
    writable_parent(out)?;
    let net: EnhancementNet<f32> = checkpoint::load(ckpt).map_err(|e| CliError::Runtime(format!("{}: {e}", ckpt.display())))?;
    let mixture = read(mix)?;
    let features = read_avf(visual).map_err(|e| CliError::Runtime(format!("{}: {e}", visual.display())))?;
    let source = match phase {
        PhaseArg::Pr => PhaseSource::Predicted,
        PhaseArg::Mix => PhaseSource::Mixture,
        PhaseArg::Gl => PhaseSource::GriffinLim { iters: gl_iters },
        PhaseArg::Gt => PhaseSource::GroundTruth(read(gt_wav.expect("checked above"))?),
    };
    let result = enhance(&net, &mixture, &features, &source)?;
    write(out, &result.waveform)
}

pub fn header(with_stoi: bool) -> String {
    let mut h = String::from("sir_db\tsdr_db\tsar_db\tpesq");
    if with_stoi {
        h.push_str("\tstoi");
    }
    h
}

fn evaluate(estimate: &Path, target: &Path, interferers: &[PathBuf], with_stoi: bool) -> Result<()> {
    let est = read(estimate)?;
    let tgt = read(target)?;
    let others = interferers.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
    let r = bss_eval(&est, &tgt, &others)?;
    let mut row = format!("{:.2}\t{:.2}\t{:.2}\tn/a", r.sir_db, r.sdr_db, r.sar_db);
    if with_stoi {
        row.push_str(&format!("\t{:.4}", stoi(&est, &tgt)?));
    }
    println!("{}\n{row}", header(with_stoi));
    Ok(())
}
