use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use padshield::metrics::{aggregate, lcss, overhead, pearson, summarize, OverheadReport};
use padshield::trace::strip_trailing_padding;
use padshield::{Direction, Trace};

use crate::dataset::{create_dir, file_name, list};
use crate::defend::pool;
use crate::{CmdError, EvaluateArgs};

#[derive(Debug, Clone, Serialize)]
struct PairRow {
    id: String,
    direction: &'static str,
    window_ms: u32,
    correlation: Option<f64>,
    lcss: Option<f64>,
    note: String,
}

#[derive(Debug, Clone, Serialize)]
struct OverheadRow {
    set: &'static str,
    id: String,
    send_bw: Option<f64>,
    recv_bw: Option<f64>,
    overall_bw: Option<f64>,
    latency: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    set: &'static str,
    metric: &'static str,
    direction: &'static str,
    window_ms: Option<u32>,
    count: usize,
    mean: f64,
    lower_whisker: f64,
    q1: f64,
    median: f64,
    q3: f64,
    upper_whisker: f64,
}

fn label(d: Direction) -> &'static str {
    match d {
        Direction::Outgoing => "upload",
        Direction::Incoming => "download",
    }
}

/// Traces keyed by file name; unreadable files are reported and counted.
fn load_set(dir: &Path) -> Result<(BTreeMap<String, Trace>, usize)> {
    let files = list(dir)?;
    if files.is_empty() {
        return Err(anyhow!("dataset {} has no traces", dir.display()));
    }
    let loaded: Vec<_> = files
        .par_iter()
        .map(|f| (file_name(f), Trace::load(f)))
        .collect();
    let mut set = BTreeMap::new();
    let mut failed = 0;
    for (name, r) in loaded {
        match r {
            Ok(t) => {
                set.insert(name, t);
            }
            Err(e) => {
                log::error!("{}: {e}", dir.join(&name).display());
                failed += 1;
            }
        }
    }
    Ok((set, failed))
}

fn compare(id: &str, a: &Trace, b: &Trace, windows: &[u32]) -> Vec<PairRow> {
    let mut rows = Vec::new();
    for &w in windows {
        let (sa, sb) = match (aggregate(a, w), aggregate(b, w)) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(e), _) | (_, Err(e)) => {
                log::error!("{id}: {e}");
                continue;
            }
        };
        for dir in [Direction::Outgoing, Direction::Incoming] {
            let (xa, xb) = (sa.series(dir), sb.series(dir));
            let fa: Vec<f64> = xa.iter().map(|&v| v as f64).collect();
            let fb: Vec<f64> = xb.iter().map(|&v| v as f64).collect();
            let mut notes = Vec::new();
            let correlation = pearson(&fa, &fb)
                .map_err(|e| notes.push(format!("correlation: {e}")))
                .ok();
            let lcss = lcss(xa, xb)
                .map_err(|e| notes.push(format!("lcss: {e}")))
                .ok();
            rows.push(PairRow {
                id: id.to_string(),
                direction: label(dir),
                window_ms: w,
                correlation,
                lcss,
                note: notes.join("; "),
            });
        }
    }
    rows
}

fn overhead_row(set: &'static str, id: &str, t: &Trace, base: Option<&Trace>) -> OverheadRow {
    // Overheads are measured on traces without trailing padding.
    let t = strip_trailing_padding(t).unwrap_or_else(|_| t.clone());
    let r = match base {
        Some(b) => overhead(&t, b),
        None => OverheadReport {
            latency: None,
            ..padshield::metrics::bandwidth_overhead(&t)
        },
    };
    OverheadRow {
        set,
        id: id.to_string(),
        send_bw: r.send_bw,
        recv_bw: r.recv_bw,
        overall_bw: r.overall_bw,
        latency: r.latency,
    }
}

fn summary_row(
    set: &'static str,
    metric: &'static str,
    direction: &'static str,
    window_ms: Option<u32>,
    values: &[f64],
) -> Option<SummaryRow> {
    let s = summarize(values)?;
    Some(SummaryRow {
        set,
        metric,
        direction,
        window_ms,
        count: s.count,
        mean: s.mean,
        lower_whisker: s.lower_whisker,
        q1: s.q1,
        median: s.median,
        q3: s.q3,
        upper_whisker: s.upper_whisker,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &EvaluateArgs) -> Result<(), CmdError> {
    if args.windows.is_empty() || args.windows.contains(&0) {
        return Err(anyhow!("invalid windows: each must be > 0 ms").into());
    }
    let workers = pool(args.workers)?;
    let (a, b, base, mut problems) = workers.install(|| -> Result<_> {
        let (a, fa) = load_set(&args.a)?;
        let (b, fb) = load_set(&args.b)?;
        let (base, fbase) = match &args.base {
            Some(dir) => {
                let (s, f) = load_set(dir)?;
                (Some(s), f)
            }
            None => (None, 0),
        };
        Ok((a, b, base, fa + fb + fbase))
    })?;

    for id in b.keys().filter(|id| !a.contains_key(*id)) {
        log::warn!("{id}: only in {}, skipped", args.b.display());
        problems += 1;
    }
    let matched: Vec<(&String, &Trace, &Trace)> = a
        .iter()
        .filter_map(|(id, ta)| match b.get(id) {
            Some(tb) => Some((id, ta, tb)),
            None => {
                log::warn!("{id}: missing from {}, skipped", args.b.display());
                None
            }
        })
        .collect();
    problems += a.len() - matched.len();

    let pairs: Vec<PairRow> = workers.install(|| {
        matched
            .par_iter()
            .flat_map_iter(|(id, ta, tb)| compare(id, ta, tb, &args.windows))
            .collect()
    });
    problems += matched.len() * args.windows.len() * 2 - pairs.len();

    let mut overheads = Vec::new();
    for (set, traces) in [("a", &a), ("b", &b)] {
        for (id, t) in traces {
            let base_t = base.as_ref().and_then(|m| m.get(id));
            if base.is_some() && base_t.is_none() {
                log::warn!("{id}: no base trace, latency overhead left empty");
            }
            overheads.push(overhead_row(set, id, t, base_t));
        }
    }

    let mut summary = Vec::new();
    for &w in &args.windows {
        for dir in ["upload", "download"] {
            let sel = |f: fn(&PairRow) -> Option<f64>| -> Vec<f64> {
                pairs
                    .iter()
                    .filter(|r| r.window_ms == w && r.direction == dir)
                    .filter_map(f)
                    .collect()
            };
            summary.extend(summary_row(
                "a~b",
                "correlation",
                dir,
                Some(w),
                &sel(|r| r.correlation),
            ));
            summary.extend(summary_row("a~b", "lcss", dir, Some(w), &sel(|r| r.lcss)));
        }
    }
    for set in ["a", "b"] {
        let sel = |f: fn(&OverheadRow) -> Option<f64>| -> Vec<f64> {
            overheads
                .iter()
                .filter(|r| r.set == set)
                .filter_map(f)
                .collect()
        };
        summary.extend(summary_row(
            set,
            "send_bw",
            "upload",
            None,
            &sel(|r| r.send_bw),
        ));
        summary.extend(summary_row(
            set,
            "recv_bw",
            "download",
            None,
            &sel(|r| r.recv_bw),
        ));
        summary.extend(summary_row(
            set,
            "overall_bw",
            "both",
            None,
            &sel(|r| r.overall_bw),
        ));
        summary.extend(summary_row(
            set,
            "latency",
            "both",
            None,
            &sel(|r| r.latency),
        ));
    }

    create_dir(&args.out)?;
    write_csv(&args.out.join("pairs.csv"), &pairs)?;
    write_csv(&args.out.join("overhead.csv"), &overheads)?;
    write_csv(&args.out.join("summary.csv"), &summary)?;
    log::info!(
        "compared {} pairs, wrote reports to {}",
        matched.len(),
        args.out.display()
    );
    if problems > 0 {
        return Err(CmdError::Partial(format!(
            "{problems} traces or rows could not be evaluated"
        )));
    }
    Ok(())
}
