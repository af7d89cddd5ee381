use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use padshield::Machine;

fn padshield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_padshield"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: &str, refs: Option<&Path>) {
    let mut args = vec!["synth", "--count", count, "--seed", "3", "--out", s(dir)];
    if let Some(r) = refs {
        args.extend(["--references", s(r)]);
    }
    assert!(padshield(&args).status.success());
}

#[test]
fn generate_front_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = padshield(&[
        "generate",
        "front",
        "--preset",
        "ft1-maybenot",
        "--out",
        s(tmp.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(tmp.path().join("ft1-maybenot.mbn")).unwrap();
    let m = Machine::deserialize(&text).unwrap();
    assert_eq!(m.len(), 31);
}

#[test]
fn generate_regulator_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let out = padshield(&[
        "generate",
        "regulator",
        "--preset",
        "rt-heavy-maybenot",
        "-o",
        s(tmp.path()),
    ]);
    assert!(out.status.success());
    let relay = fs::read_to_string(tmp.path().join("rt-heavy-maybenot.relay.mbn")).unwrap();
    let relay = Machine::deserialize(&relay).unwrap();
    // 1e6 / 238 µs for SEND_0.
    assert!(relay.serialize().contains("point:4201.68067226"));
    let client = fs::read_to_string(tmp.path().join("rt-heavy-maybenot.client.mbn")).unwrap();
    assert_eq!(Machine::deserialize(&client).unwrap().len(), 4);
}

#[test]
fn invalid_parameter_exits_2_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let out = padshield(&["generate", "front", "--psi", "0", "-o", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains('ψ'));
}

#[test]
fn empty_dataset_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("empty");
    fs::create_dir(&data).unwrap();
    let out = padshield(&[
        "defend",
        "--defense",
        "front",
        "--dataset",
        s(&data),
        "-o",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_trace_fails_the_run_but_not_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "3", None);
    fs::write(data.join("broken"), "header\n").unwrap();
    let o = tmp.path().join("o");
    let out = padshield(&[
        "defend",
        "--defense",
        "front",
        "--dataset",
        s(&data),
        "-o",
        s(&o),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(fs::read_dir(&o).unwrap().count(), 3);
}

#[test]
fn self_comparison_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "5", None);
    let d = tmp.path().join("d");
    let rep = tmp.path().join("rep");
    assert!(padshield(&[
        "defend",
        "--defense",
        "front",
        "--dataset",
        s(&data),
        "-o",
        s(&d)
    ])
    .status
    .success());
    let out = padshield(&[
        "evaluate",
        "--a",
        s(&d),
        "--b",
        s(&d),
        "--base",
        s(&data),
        "-o",
        s(&rep),
        "--windows",
        "25,50",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut r = csv::Reader::from_path(rep.join("pairs.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5 * 2 * 2);
    for row in &rows {
        assert_eq!(&row[3], "1.0");
        assert_eq!(&row[4], "1.0");
    }
    let overhead = fs::read_to_string(rep.join("overhead.csv")).unwrap();
    assert!(overhead.starts_with("set,id,send_bw,recv_bw,overall_bw,latency\n"));
    // FRONT never delays real cells.
    for line in overhead.lines().skip(1) {
        assert!(line.ends_with(",0.0"), "{line}");
    }
    let summary = fs::read_to_string(rep.join("summary.csv")).unwrap();
    assert!(summary.contains("a~b,correlation,download,25,5,1.0"));
}

#[test]
fn missing_pair_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "3", None);
    synth(&b, "3", None);
    fs::remove_file(b.join("trace-0001")).unwrap();
    let rep = tmp.path().join("rep");
    let out = padshield(&["evaluate", "--a", s(&a), "--b", s(&b), "-o", s(&rep)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trace-0001"));
    let pairs = fs::read_to_string(rep.join("pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn every_defense_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let refs = tmp.path().join("refs");
    synth(&data, "4", Some(&refs));
    let runs: [&[&str]; 7] = [
        &["--defense", "front", "--preset", "ft1-pipelined"],
        &["--reference", "front"],
        &["--defense", "regulator", "--preset", "rt-heavy-maybenot"],
        &["--reference", "regulator", "--preset", "rt-heavy-simulated"],
        &["--defense", "surakav", "--references", s(&refs)],
        &[
            "--reference",
            "surakav",
            "--preset",
            "surakav-heavy",
            "--references",
            s(&refs),
        ],
        &[
            "--defense",
            "front",
            "--w-max",
            "4",
            "--slicing",
            "equal-mass",
        ],
    ];
    for (i, extra) in runs.iter().enumerate() {
        let o = tmp.path().join(format!("o{i}"));
        let mut args = vec!["defend", "--dataset", s(&data), "-o", s(&o), "--seed", "1"];
        args.extend_from_slice(extra);
        let out = padshield(&args);
        assert!(
            out.status.success(),
            "{extra:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert_eq!(fs::read_dir(&o).unwrap().count(), 4, "{extra:?}");
    }
}

#[test]
fn custom_machines_from_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "2", None);
    let m = tmp.path().join("m");
    assert!(padshield(&["generate", "front", "-o", s(&m)])
        .status
        .success());
    let file = m.join("ft1-maybenot.mbn");
    let o = tmp.path().join("o");
    let out = padshield(&[
        "defend",
        "--dataset",
        s(&data),
        "-o",
        s(&o),
        "--client-machine",
        s(&file),
    ]);
    assert!(out.status.success());
    let t = padshield::Trace::load(o.join("trace-0000")).unwrap();
    assert!(t.count(padshield::Direction::Outgoing, true) > 0);
    assert_eq!(t.count(padshield::Direction::Incoming, true), 0);
}

#[test]
fn surakav_generate_one_pair_per_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let refs = tmp.path().join("refs");
    synth(&tmp.path().join("data"), "3", Some(&refs));
    let o = tmp.path().join("o");
    assert!(
        padshield(&["generate", "surakav", "--references", s(&refs), "-o", s(&o)])
            .status
            .success()
    );
    assert_eq!(fs::read_dir(&o).unwrap().count(), 6);
}
