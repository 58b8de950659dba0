use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use facegraph::manifest::{self, ManifestReader};
use facegraph::pipeline::{self, CleanMode};
use facegraph::synth::{self, score_cleaning};
use facegraph::AggregationScheme;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_facegraph"));
    c.env_remove("FACEGRAPH_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_stdin(args: &[&str], input: &[u8]) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(out: Output) -> Vec<u8> {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_suite(dir: &TempDir, extra: &[&str]) -> PathBuf {
    let p = path(dir, "in.jsonl");
    let mut args = vec![
        "synth",
        "-o",
        s(&p),
        "--videos",
        "6",
        "--dim",
        "32",
        "--seed",
        "11",
    ];
    args.extend_from_slice(extra);
    ok(run(&args));
    p
}

const HEADER: &str = "{\"version\":1,\"embedding_dim\":2}\n";

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = path(dir, name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn pipes_match_in_process_pipeline() {
    let dir = TempDir::new().unwrap();
    let input = synth_suite(&dir, &["--identities", "2", "--fp-count", "2"]);
    let cleaned = ok(run(&["clean", s(&input)]));
    let verdicts = ok(run_stdin(&["aggregate", "-", "--scheme", "face"], &cleaned));
    let metrics = ok(run_stdin(
        &["evaluate", "-", "--labels", s(&input)],
        &verdicts,
    ));

    let bytes = fs::read(&input).unwrap();
    let (header, rows) = manifest::read_manifest(Cursor::new(&bytes)).unwrap();
    let groups = manifest::group_by_video(rows).unwrap();
    let sets = pipeline::clean_all(&groups, CleanMode::default()).unwrap();
    let mut want_cleaned = Vec::new();
    pipeline::write_cleaned(&mut want_cleaned, header, &groups, &sets).unwrap();
    assert_eq!(cleaned, want_cleaned);

    let report =
        pipeline::run_once(&groups, CleanMode::default(), AggregationScheme::Face).unwrap();
    let mut want = Vec::new();
    pipeline::write_metrics(&mut want, &report).unwrap();
    assert_eq!(metrics, want);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let input = synth_suite(&dir, &["--fp-count", "3"]);
    let a = ok(run(&["--jobs", "1", "clean", s(&input)]));
    let b = ok(run(&["--jobs", "4", "clean", s(&input)]));
    assert_eq!(a, b);
    let va = ok(run_stdin(&["aggregate", "-", "--scheme", "all"], &a));
    let vb = ok(run_stdin(&["aggregate", "-", "--scheme", "all"], &b));
    assert_eq!(va, vb);
}

#[test]
fn synth_is_seeded() {
    let a = ok(run(&[
        "synth", "--videos", "3", "--dim", "16", "--seed", "5",
    ]));
    let b = ok(run(&[
        "synth", "--videos", "3", "--dim", "16", "--seed", "5",
    ]));
    let c = ok(run(&[
        "synth", "--videos", "3", "--dim", "16", "--seed", "6",
    ]));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let env = ok(bin()
        .args(["synth", "--videos", "3", "--dim", "16"])
        .env("FACEGRAPH_SEED", "5")
        .output()
        .unwrap());
    assert_eq!(env, a);
}

#[test]
fn synth_truth_matches_cleaning() {
    let dir = TempDir::new().unwrap();
    let truth = path(&dir, "truth.jsonl");
    let input = synth_suite(
        &dir,
        &[
            "--identities",
            "2",
            "--fp-count",
            "3",
            "--fp-occurrences",
            "2",
            "--truth",
            s(&truth),
        ],
    );
    let report = path(&dir, "report.csv");
    let cleaned = ok(run(&["clean", s(&input), "--report", s(&report)]));
    let truth = synth::read_truth(Cursor::new(fs::read(&truth).unwrap())).unwrap();
    let pairs =
        pipeline::from_annotated(ManifestReader::new(Cursor::new(cleaned)).unwrap()).unwrap();
    assert_eq!(pairs.len(), 6);
    for (_, set) in &pairs {
        assert!(score_cleaning(set, &truth).is_perfect(), "{}", set.video_id);
    }
    let report = fs::read_to_string(&report).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next(),
        Some("video_id,k,n_f,components_kept,components_pruned")
    );
    assert_eq!(lines.next(), Some("vid-00000,22,8,2,3"));
    assert_eq!(lines.count(), 5);
}

#[test]
fn synth_plans_frames_from_source_rate() {
    let out = ok(run(&[
        "synth",
        "--videos",
        "1",
        "--dim",
        "8",
        "--total-frames",
        "300",
    ]));
    let (_, rows) = manifest::read_manifest(Cursor::new(out)).unwrap();
    let frames: Vec<u64> = rows.map(|r| r.unwrap().frame_index).collect();
    assert_eq!(frames.len(), 40);
    assert_eq!(&frames[..4], &[0, 8, 15, 23]);
}

#[test]
fn scheme_all_emits_every_scheme() {
    let dir = TempDir::new().unwrap();
    let input = synth_suite(&dir, &[]);
    let cleaned = ok(run(&["clean", s(&input)]));
    let csv = String::from_utf8(ok(run_stdin(
        &["aggregate", "-", "--scheme", "all"],
        &cleaned,
    )))
    .unwrap();
    assert_eq!(csv.lines().count(), 1 + 6 * 4);
    for scheme in ["avg", "median", "max", "face"] {
        assert_eq!(
            csv.lines()
                .filter(|l| l.split(',').nth(1) == Some(scheme))
                .count(),
            6
        );
    }

    // Several schemes without --scheme is ambiguous.
    let out = run_stdin(&["evaluate", "-", "--labels", s(&input)], csv.as_bytes());
    assert_eq!(out.status.code(), Some(2));
    ok(run_stdin(
        &["evaluate", "-", "--labels", s(&input), "--scheme", "max"],
        csv.as_bytes(),
    ));
}

#[test]
fn face_equals_avg_on_single_component_videos() {
    let dir = TempDir::new().unwrap();
    let input = synth_suite(&dir, &[]);
    let cleaned = ok(run(&["clean", s(&input)]));
    let verdicts = |scheme| {
        let out = ok(run_stdin(&["aggregate", "-", "--scheme", scheme], &cleaned));
        pipeline::read_verdicts(Cursor::new(out))
            .unwrap()
            .into_iter()
            .map(|v| v.score)
            .collect::<Vec<_>>()
    };
    assert_eq!(verdicts("face"), verdicts("avg"));
}

#[test]
fn all_pruned_video_defaults() {
    let dir = TempDir::new().unwrap();
    // Two detections in two frames that are not similar: both singletons are
    // at the 1/2 boundary and get pruned.
    let input = write(
        &dir,
        "m.jsonl",
        &format!(
            "{HEADER}{}\n{}\n",
            r#"{"video_id":"a","frame":0,"face":0,"bbox":[0,0,1,1],"conf":0.9,"embedding":[1,0],"score":0.9,"label":1}"#,
            r#"{"video_id":"a","frame":1,"face":0,"bbox":[0,0,1,1],"conf":0.9,"embedding":[0,1],"score":0.9,"label":1}"#
        ),
    );
    let cleaned = ok(run(&["clean", s(&input)]));
    let csv = String::from_utf8(ok(run_stdin(&["aggregate", "-"], &cleaned))).unwrap();
    assert_eq!(csv.lines().nth(1), Some("a,face,0.5,true"));
    let metrics = ok(run_stdin(
        &["evaluate", "-", "--labels", s(&input)],
        csv.as_bytes(),
    ));
    let report = pipeline::read_metrics(Cursor::new(metrics)).unwrap();
    assert!((report.log_loss - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(report.accuracy, 0.0);
}

#[test]
fn empty_manifest_succeeds() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "e.jsonl", HEADER);
    assert_eq!(ok(run(&["clean", s(&input)])), HEADER.as_bytes());
    let csv = ok(run(&["aggregate", s(&input)]));
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1);
}

#[test]
fn parse_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let zero = write(&dir, "z.jsonl", "");
    assert_eq!(run(&["clean", s(&zero)]).status.code(), Some(2));
    let garbage = write(&dir, "g.jsonl", &format!("{HEADER}not json\n"));
    let out = run(&["clean", s(&garbage)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let dim = write(
        &dir,
        "d.jsonl",
        &format!(
            "{HEADER}{}\n",
            r#"{"video_id":"a","frame":0,"face":0,"bbox":[0,0,1,1],"conf":0.9,"embedding":[1,0,0]}"#
        ),
    );
    assert_eq!(run(&["clean", s(&dim)]).status.code(), Some(2));
    assert_eq!(
        run(&["clean", s(&dim), "--theta", "2"]).status.code(),
        Some(2)
    );
}

#[test]
fn missing_data_exits_three() {
    let dir = TempDir::new().unwrap();
    let no_embedding = write(
        &dir,
        "n.jsonl",
        &format!(
            "{HEADER}{}\n",
            r#"{"video_id":"a","frame":0,"face":0,"bbox":[0,0,1,1],"conf":0.9}"#
        ),
    );
    assert_eq!(run(&["clean", s(&no_embedding)]).status.code(), Some(3));
    // Baseline cleaning does not need embeddings, but aggregation needs scores.
    let cleaned = ok(run(&["clean", s(&no_embedding), "--no-clean"]));
    assert_eq!(
        run_stdin(&["aggregate", "-"], &cleaned).status.code(),
        Some(3)
    );

    let input = synth_suite(&dir, &[]);
    let cleaned = ok(run(&["clean", s(&input)]));
    let mut csv = ok(run_stdin(&["aggregate", "-"], &cleaned));
    csv.extend_from_slice(b"unknown,face,0.5,false\n");
    assert_eq!(
        run_stdin(&["evaluate", "-", "--labels", s(&input)], &csv)
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn sweep_defaults_and_single_cell() {
    let dir = TempDir::new().unwrap();
    let input = synth_suite(&dir, &["--fp-count", "2", "--identities", "2"]);
    let grid = String::from_utf8(ok(run(&["sweep", s(&input)]))).unwrap();
    assert_eq!(
        grid.lines().next(),
        Some("theta,size_frac,log_loss,accuracy,macro_f1,n_videos")
    );
    assert_eq!(grid.lines().count(), 10);

    let cell = String::from_utf8(ok(run(&[
        "sweep",
        s(&input),
        "--thetas",
        "0.8",
        "--size-fracs",
        "1/2",
    ])))
    .unwrap();
    let row: Vec<&str> = cell.lines().nth(1).unwrap().split(',').collect();
    let cleaned = ok(run(&["clean", s(&input)]));
    let verdicts = ok(run_stdin(&["aggregate", "-"], &cleaned));
    let report = pipeline::read_metrics(Cursor::new(ok(run_stdin(
        &["evaluate", "-", "--labels", s(&input)],
        &verdicts,
    ))))
    .unwrap();
    assert_eq!(row[2].parse::<f64>().unwrap(), report.log_loss);
    assert_eq!(row[3].parse::<f64>().unwrap(), report.accuracy);
    assert_eq!(row[5].parse::<usize>().unwrap(), report.n_videos);

    let table = String::from_utf8(ok(run(&["sweep", s(&input), "--format", "table"]))).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().next().unwrap().contains("N_F*1/2"));
}

#[test]
fn no_prune_keeps_everything() {
    let dir = TempDir::new().unwrap();
    let input = synth_suite(&dir, &["--fp-count", "3"]);
    let cleaned = ok(run(&["clean", s(&input), "--no-prune"]));
    let mut rows = ManifestReader::new(Cursor::new(cleaned)).unwrap();
    assert!(rows.all(|r| r.unwrap().annotation.unwrap().kept));
}
