use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use padshield::defenses::front::front_reference;
use padshield::defenses::regulator::{
    gen_regulator_client, gen_regulator_relay, regulator_reference, RegulatorParams,
};
use padshield::defenses::surakav::{gen_surakav_machines, surakav_reference};
use padshield::framework::seeded_rng;
use padshield::trace::strip_trailing_padding;
use padshield::{simulate, Direction, Machine, SimConfig, Trace};

use crate::dataset::{create_dir, file_name, list, References};
use crate::generate::front_machine;
use crate::presets::{
    front_config, regulator_params, surakav_config, FrontConfig, Presets, SurakavConfig,
};
use crate::{CmdError, DefendArgs, Defense};

// Stream for reference transforms, clear of the simulator's runtime streams.
const REFERENCE_STREAM: u64 = 2 << 32;

enum Defender {
    Machines {
        client: Vec<Arc<Machine>>,
        relay: Vec<Arc<Machine>>,
    },
    SurakavMachines(SurakavConfig, References),
    FrontReference(FrontConfig),
    RegulatorReference(RegulatorParams),
    SurakavReference(SurakavConfig, References),
}

/// FNV-1a, so each trace's seed depends only on its name.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn load_machines(paths: &[std::path::PathBuf]) -> Result<Vec<Arc<Machine>>> {
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading machine {}", p.display()))?;
            let m = Machine::deserialize(&text)
                .with_context(|| format!("parsing machine {}", p.display()))?;
            Ok(Arc::new(m))
        })
        .collect()
}

fn references(args: &DefendArgs) -> Result<References> {
    let path = args
        .references
        .as_deref()
        .ok_or_else(|| anyhow!("surakav needs --references"))?;
    References::open(path)
}

fn build(presets: &Presets, args: &DefendArgs) -> Result<Defender, CmdError> {
    let (defense, reference) = match (args.defense, args.reference) {
        (Some(d), None) => (d, false),
        (None, Some(d)) => (d, true),
        _ => {
            if args.client_machines.is_empty() && args.relay_machines.is_empty() {
                return Err(anyhow!(
                    "pick one of --defense, --reference or --client-machine/--relay-machine"
                )
                .into());
            }
            return Ok(Defender::Machines {
                client: load_machines(&args.client_machines)?,
                relay: load_machines(&args.relay_machines)?,
            });
        }
    };
    let preset = args
        .preset
        .as_deref()
        .unwrap_or(defense.default_preset(reference));
    let p = &args.params;
    Ok(match (defense, reference) {
        (Defense::Front, false) => {
            let m = Arc::new(front_machine(&front_config(presets, preset, p, false)?)?);
            Defender::Machines {
                client: vec![Arc::clone(&m)],
                relay: vec![m],
            }
        }
        (Defense::Front, true) => Defender::FrontReference(front_config(presets, preset, p, true)?),
        (Defense::Regulator, false) => {
            let params = regulator_params(presets, preset, p, false)?;
            Defender::Machines {
                client: vec![Arc::new(gen_regulator_client(params.u)?)],
                relay: vec![Arc::new(gen_regulator_relay(&params)?)],
            }
        }
        (Defense::Regulator, true) => {
            Defender::RegulatorReference(regulator_params(presets, preset, p, true)?)
        }
        (Defense::Surakav, false) => Defender::SurakavMachines(
            surakav_config(presets, preset, p, args.delay_us)?,
            references(args)?,
        ),
        (Defense::Surakav, true) => Defender::SurakavReference(
            surakav_config(presets, preset, p, args.delay_us)?,
            references(args)?,
        ),
    })
}

fn real_cells(t: &Trace) -> usize {
    t.count(Direction::Outgoing, false) + t.count(Direction::Incoming, false)
}

fn run_sim(
    base: &Trace,
    client: &[Arc<Machine>],
    relay: &[Arc<Machine>],
    seed: u64,
    delay_us: u64,
) -> Result<Trace> {
    let cfg = SimConfig {
        one_way_delay_us: delay_us,
        drop_stalled: true,
        ..SimConfig::with_seed(seed)
    };
    let out = simulate(base, client, relay, &cfg)?;
    let lost = real_cells(base).saturating_sub(real_cells(&out));
    if lost > 0 {
        log::warn!(
            "{}: {lost} real cells never left a blocked queue and were dropped",
            base.id
        );
    }
    Ok(out)
}

fn defend_one(d: &Defender, base: &Trace, seed: u64, delay_us: u64) -> Result<Trace> {
    let mut rng = seeded_rng(seed, REFERENCE_STREAM);
    let cells = real_cells(base) as f64;
    Ok(match d {
        Defender::Machines { client, relay } => run_sim(base, client, relay, seed, delay_us)?,
        Defender::SurakavMachines(cfg, refs) => {
            let reference = refs
                .for_trace(&base.id)?
                .tiled((cfg.params.scale * cells).ceil() as u64);
            let pair = gen_surakav_machines(&reference, cfg.max_bursts, cfg.send_timeout_us)?;
            if pair.truncated {
                log::debug!("{}: reference truncated to {} bursts", base.id, pair.bursts);
            }
            run_sim(
                base,
                &[Arc::new(pair.client)],
                &[Arc::new(pair.relay)],
                seed,
                delay_us,
            )?
        }
        Defender::FrontReference(cfg) => front_reference(base, &cfg.params, &cfg.params, &mut rng)?,
        Defender::RegulatorReference(p) => regulator_reference(base, p, &mut rng)?,
        Defender::SurakavReference(cfg, refs) => {
            let reference = refs
                .for_trace(&base.id)?
                .tiled((cfg.params.scale * cells).ceil() as u64);
            surakav_reference(base, &reference, &cfg.params, &mut rng)?
        }
    })
}

fn process(d: &Defender, path: &Path, args: &DefendArgs) -> Result<()> {
    let base = Trace::load(path)?;
    if base.has_padding() {
        bail!("input already contains padding");
    }
    let name = file_name(path);
    let seed = args.seed.wrapping_add(fnv1a(&name));
    let mut out = defend_one(d, &base, seed, args.delay_us)?;
    if !args.keep_trailing {
        out = strip_trailing_padding(&out)?;
    }
    out.save_defended(args.out.join(&name))?;
    Ok(())
}

pub fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")
}

pub fn run(presets: &Presets, args: &DefendArgs) -> Result<(), CmdError> {
    let defender = build(presets, args)?;
    let files = list(&args.dataset)?;
    if files.is_empty() {
        return Err(anyhow!("dataset {} has no traces", args.dataset.display()).into());
    }
    create_dir(&args.out)?;
    let failures: Vec<String> = pool(args.workers)?.install(|| {
        files
            .par_iter()
            .filter_map(|f| {
                process(&defender, f, args).err().map(|e| {
                    let name = file_name(f);
                    log::error!("{name}: {e:#}");
                    name
                })
            })
            .collect()
    });
    log::info!(
        "defended {} of {} traces into {}",
        files.len() - failures.len(),
        files.len(),
        args.out.display()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CmdError::Partial(format!(
            "{} of {} traces failed",
            failures.len(),
            files.len()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a_reference_values() {
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a("foobar"), 0x8594_4171_f739_67e8);
    }
}
