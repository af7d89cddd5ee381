//! Parameter presets and command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use padshield::defenses::front::{FrontParams, Slicing};
use padshield::defenses::regulator::RegulatorParams;
use padshield::defenses::surakav::{SurakavParams, DEFAULT_MAX_BURSTS, DEFAULT_SEND_TIMEOUT_US};

const BUILTIN: &str = include_str!("../presets/presets.toml");

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontEntry {
    pub n: Option<u32>,
    pub w_min: Option<f64>,
    pub w_max: Option<f64>,
    pub psi: Option<u32>,
    pub pipelines: Option<u32>,
    pub slicing: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorEntry {
    pub r: Option<f64>,
    pub d: Option<f64>,
    pub t: Option<f64>,
    pub n: Option<u32>,
    pub u: Option<f64>,
    pub c: Option<f64>,
    pub omega: Option<u32>,
    pub send_states: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurakavEntry {
    pub delta: Option<f64>,
    pub q: Option<f64>,
    pub rho: Option<f64>,
    pub scale: Option<f64>,
    pub max_bursts: Option<usize>,
    pub send_timeout_us: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Presets {
    #[serde(default)]
    pub front: BTreeMap<String, FrontEntry>,
    #[serde(default)]
    pub regulator: BTreeMap<String, RegulatorEntry>,
    #[serde(default)]
    pub surakav: BTreeMap<String, SurakavEntry>,
}

impl Presets {
    pub fn builtin() -> Self {
        toml::from_str(BUILTIN).expect("bundled presets parse")
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::builtin()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading presets {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing presets {}", p.display()))
            }
        }
    }
}

fn lookup<'a, T>(table: &'a BTreeMap<String, T>, kind: &str, name: &str) -> Result<&'a T> {
    table.get(name).ok_or_else(|| {
        let known: Vec<&str> = table.keys().map(String::as_str).collect();
        anyhow!(
            "unknown {kind} preset {name:?} (known: {})",
            known.join(", ")
        )
    })
}

fn need<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| {
        anyhow!("missing parameter {field}: set it in the preset or on the command line")
    })
}

/// Per-parameter overrides shared by `generate` and `defend`.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    /// Padding budget N in cells
    #[arg(long)]
    pub n: Option<u32>,
    /// FRONT W_min in seconds
    #[arg(long)]
    pub w_min: Option<f64>,
    /// FRONT W_max in seconds
    #[arg(long)]
    pub w_max: Option<f64>,
    /// PADDING states (per pipeline when pipelined)
    #[arg(long)]
    pub psi: Option<u32>,
    /// Number of FRONT pipelines
    #[arg(long)]
    pub pipelines: Option<u32>,
    /// FRONT slicing: equal-time or equal-mass
    #[arg(long)]
    pub slicing: Option<String>,
    /// RegulaTor initial rate R, cells/s
    #[arg(long)]
    pub r: Option<f64>,
    /// RegulaTor decay D
    #[arg(long)]
    pub d: Option<f64>,
    /// RegulaTor surge threshold T
    #[arg(long)]
    pub t: Option<f64>,
    /// RegulaTor upload ratio U
    #[arg(long)]
    pub u: Option<f64>,
    /// RegulaTor max client wait C, seconds
    #[arg(long)]
    pub c: Option<f64>,
    /// RegulaTor cells per SEND state
    #[arg(long)]
    pub omega: Option<u32>,
    /// RegulaTor SEND state count
    #[arg(long)]
    pub send_states: Option<u32>,
    /// Surakav tolerance δ
    #[arg(long)]
    pub delta: Option<f64>,
    /// Surakav skip probability q (sampled per download when unset)
    #[arg(long)]
    pub q: Option<f64>,
    /// Surakav gap after a skipped response, seconds
    #[arg(long)]
    pub rho: Option<f64>,
    /// Surakav reference length as a multiple of the base trace
    #[arg(long)]
    pub scale: Option<f64>,
    /// Surakav machine burst limit
    #[arg(long)]
    pub max_bursts: Option<usize>,
    /// Surakav SEND timeout in µs
    #[arg(long)]
    pub send_timeout_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontConfig {
    pub params: FrontParams,
    pub pipelines: Option<u32>,
    pub slicing: Slicing,
}

/// What a FRONT run needs: the machine generators use ψ, the reference does not.
pub fn front_config(
    presets: &Presets,
    name: &str,
    o: &ParamArgs,
    reference: bool,
) -> Result<FrontConfig> {
    let e = lookup(&presets.front, "front", name)?;
    let slicing = match o.slicing.as_deref().or(e.slicing.as_deref()) {
        None => Slicing::default(),
        Some(s) => s
            .parse()
            .map_err(|m: String| anyhow!("invalid slicing: {m}"))?,
    };
    let pipelines = o.pipelines.or(e.pipelines);
    let psi = if reference {
        o.psi.or(e.psi).unwrap_or(1)
    } else {
        need(o.psi.or(e.psi), "psi")?
    };
    let params = FrontParams {
        n: need(o.n.or(e.n), "n")?,
        w_min: need(o.w_min.or(e.w_min), "w_min")?,
        w_max: need(o.w_max.or(e.w_max), "w_max")?,
        psi,
    };
    if reference {
        params.validate_reference()?;
    } else if pipelines.is_none_or(|p| p < 2) {
        params.validate()?;
    }
    Ok(FrontConfig {
        params,
        pipelines,
        slicing,
    })
}

pub fn regulator_params(
    presets: &Presets,
    name: &str,
    o: &ParamArgs,
    reference: bool,
) -> Result<RegulatorParams> {
    let e = lookup(&presets.regulator, "regulator", name)?;
    let p = RegulatorParams {
        r: need(o.r.or(e.r), "r")?,
        d: need(o.d.or(e.d), "d")?,
        t: need(o.t.or(e.t), "t")?,
        u: need(o.u.or(e.u), "u")?,
        n: if reference {
            need(o.n.or(e.n), "n")?
        } else {
            o.n.or(e.n).unwrap_or(0)
        },
        c: if reference {
            need(o.c.or(e.c), "c")?
        } else {
            o.c.or(e.c).unwrap_or(f64::INFINITY)
        },
        omega: if reference {
            o.omega.or(e.omega).unwrap_or(1)
        } else {
            need(o.omega.or(e.omega), "omega")?
        },
        send_states: o.send_states.or(e.send_states),
    };
    if reference {
        p.validate_reference()?;
    } else {
        p.validate_machine()?;
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurakavConfig {
    pub params: SurakavParams,
    pub max_bursts: usize,
    pub send_timeout_us: f64,
}

/// The round trip of the reference regulator is twice the one-way delay.
pub fn surakav_config(
    presets: &Presets,
    name: &str,
    o: &ParamArgs,
    delay_us: u64,
) -> Result<SurakavConfig> {
    let e = lookup(&presets.surakav, "surakav", name)?;
    let defaults = SurakavParams::default();
    let params = SurakavParams {
        delta: need(o.delta.or(e.delta), "delta")?,
        q: o.q.or(e.q),
        rho: o.rho.or(e.rho).unwrap_or(defaults.rho),
        rtt: 2.0 * delay_us as f64 / 1e6,
        scale: o.scale.or(e.scale).unwrap_or(defaults.scale),
    };
    if delay_us == 0 {
        bail!("invalid delay: Surakav needs a positive one-way delay");
    }
    params.validate()?;
    let max_bursts = o.max_bursts.or(e.max_bursts).unwrap_or(DEFAULT_MAX_BURSTS);
    if max_bursts == 0 {
        bail!("invalid max_bursts: must be at least 1");
    }
    let send_timeout_us = o
        .send_timeout_us
        .or(e.send_timeout_us)
        .unwrap_or(DEFAULT_SEND_TIMEOUT_US);
    if !(send_timeout_us.is_finite() && send_timeout_us >= 0.0) {
        bail!("invalid send_timeout_us: must be >= 0");
    }
    Ok(SurakavConfig {
        params,
        max_bursts,
        send_timeout_us,
    })
}
