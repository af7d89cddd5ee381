//! Dataset directories and the synthetic generator.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use padshield::defenses::surakav::BurstSequence;
use padshield::synth::{web_trace, WebTraceParams};

use crate::{CmdError, SynthArgs};

/// Regular, non-hidden files of `dir` sorted by name.
pub fn list(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries =
        fs::read_dir(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if !hidden && entry.file_type()?.is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Burst sequences keyed by file name, or one sequence for every trace.
pub enum References {
    Shared(BurstSequence),
    PerTrace(PathBuf),
}

impl References {
    pub fn open(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Ok(References::PerTrace(path.to_path_buf()))
        } else if path.is_file() {
            Ok(References::Shared(read_bursts(path)?))
        } else {
            bail!("reference path {} does not exist", path.display())
        }
    }

    pub fn for_trace(&self, name: &str) -> Result<BurstSequence> {
        match self {
            References::Shared(b) => Ok(b.clone()),
            References::PerTrace(dir) => read_bursts(&dir.join(name)),
        }
    }
}

pub fn read_bursts(path: &Path) -> Result<BurstSequence> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading reference {}", path.display()))?;
    text.parse()
        .with_context(|| format!("parsing reference {}", path.display()))
}

pub fn synth(args: &SynthArgs) -> Result<(), CmdError> {
    if args.count == 0 {
        return Err(anyhow::anyhow!("invalid count: must be at least 1").into());
    }
    create_dir(&args.out)?;
    if let Some(r) = &args.references {
        create_dir(r)?;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let p = WebTraceParams::default();
    let width = args.count.to_string().len().max(4);
    for i in 0..args.count {
        let name = format!("trace-{i:0width$}");
        let trace = web_trace(&name, &p, &mut rng);
        trace
            .save_undefended(args.out.join(&name))
            .map_err(anyhow::Error::from)?;
        if let Some(dir) = &args.references {
            // Another page load stands in for a generated reference.
            let other = web_trace(&name, &p, &mut rng);
            let bursts = BurstSequence::from_trace(&other).map_err(anyhow::Error::from)?;
            fs::write(dir.join(&name), bursts.to_text())
                .with_context(|| format!("writing reference {name}"))?;
        }
    }
    log::info!("wrote {} traces to {}", args.count, args.out.display());
    Ok(())
}
