use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};

use padshield::defenses::front::{gen_maybenot_front, gen_pipelined_front};
use padshield::defenses::regulator::{gen_regulator_client, gen_regulator_relay};
use padshield::defenses::surakav::gen_surakav_machines;
use padshield::simulator::DEFAULT_DELAY_US;
use padshield::Machine;

use crate::dataset::{create_dir, file_name, list, read_bursts};
use crate::presets::{front_config, regulator_params, surakav_config, FrontConfig, Presets};
use crate::{CmdError, Defense, GenerateArgs};

pub fn front_machine(cfg: &FrontConfig) -> Result<Machine, CmdError> {
    Ok(match cfg.pipelines {
        Some(p) if p >= 2 => gen_pipelined_front(&cfg.params, p, cfg.params.psi, cfg.slicing)?,
        _ => gen_maybenot_front(&cfg.params, cfg.slicing)?,
    })
}

fn write_machine(out: &Path, name: &str, m: &Machine) -> Result<(), CmdError> {
    let path = out.join(name);
    fs::write(&path, m.serialize()).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

pub fn run(presets: &Presets, args: &GenerateArgs) -> Result<(), CmdError> {
    let preset = args
        .preset
        .as_deref()
        .unwrap_or(args.defense.default_preset(false));
    match args.defense {
        Defense::Front => {
            let cfg = front_config(presets, preset, &args.params, false)?;
            let m = front_machine(&cfg)?;
            create_dir(&args.out)?;
            write_machine(&args.out, &format!("{preset}.mbn"), &m)
        }
        Defense::Regulator => {
            let p = regulator_params(presets, preset, &args.params, false)?;
            let relay = gen_regulator_relay(&p)?;
            let client = gen_regulator_client(p.u)?;
            create_dir(&args.out)?;
            write_machine(&args.out, &format!("{preset}.relay.mbn"), &relay)?;
            write_machine(&args.out, &format!("{preset}.client.mbn"), &client)
        }
        Defense::Surakav => {
            let cfg = surakav_config(presets, preset, &args.params, DEFAULT_DELAY_US)?;
            let refs = args
                .references
                .as_deref()
                .ok_or_else(|| anyhow!("surakav needs --references"))?;
            let files = if refs.is_dir() {
                list(refs)?
            } else {
                vec![refs.to_path_buf()]
            };
            if files.is_empty() {
                return Err(anyhow!("no reference files in {}", refs.display()).into());
            }
            create_dir(&args.out)?;
            for f in files {
                let reference = read_bursts(&f)?;
                let pair = gen_surakav_machines(&reference, cfg.max_bursts, cfg.send_timeout_us)?;
                let name = file_name(&f);
                if pair.truncated {
                    log::warn!("{name}: reference truncated to {} bursts", pair.bursts);
                }
                write_machine(&args.out, &format!("{name}.client.mbn"), &pair.client)?;
                write_machine(&args.out, &format!("{name}.relay.mbn"), &pair.relay)?;
            }
            Ok(())
        }
    }
}
