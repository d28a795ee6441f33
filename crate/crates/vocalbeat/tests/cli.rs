use std::fs;
use std::path::Path;

use vocalbeat::cli::{run, EXIT_IO, EXIT_OK, EXIT_USAGE};
use vocalbeat::io::format_annotations;
use vocalbeat::synth::constant_tempo;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn vocalbeat(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(
        std::iter::once("vocalbeat").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

/// Writes a 20-second 120 BPM annotation and its synthesized activations.
fn fixture(dir: &Path) -> (String, String) {
    let ann = path(dir, "clip.beats");
    let act = path(dir, "clip.act");
    fs::write(
        &ann,
        format_annotations(&constant_tempo(120.0, 4, 0.25, 20.0)),
    )
    .unwrap();
    let o = vocalbeat(&["synth", "--ann", &ann, "--seed", "3", "--out", &act]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    (ann, act)
}

#[test]
fn track_then_eval_prints_percentages() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, act) = fixture(dir.path());
    let est = path(dir.path(), "est.txt");
    let o = vocalbeat(&[
        "track",
        "--activations",
        &act,
        "--method",
        "combined",
        "--out",
        &est,
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let written = fs::read_to_string(&est).unwrap();
    assert!(!written.is_empty());
    for line in written.lines() {
        let (time, flag) = line.split_once('\t').unwrap();
        assert!(flag == "0" || flag == "1");
        assert_eq!(time.split_once('.').unwrap().1.len(), 6, "{line}");
    }

    let o = vocalbeat(&["eval", "--est", &est, "--ref", &ann]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(o.stdout.lines().count(), 9, "{}", o.stdout);
    let o = vocalbeat(&[
        "eval",
        "--est",
        &est,
        "--ref",
        &ann,
        "--tolerance",
        "0.07",
        "--skip",
        "0",
    ]);
    let row: Vec<&str> = o
        .stdout
        .lines()
        .nth(1)
        .unwrap()
        .split_whitespace()
        .collect();
    assert_eq!(row[0], "beat");
    let f1 = row[3];
    assert_eq!(f1.split_once('.').unwrap().1.len(), 2, "{f1}");
    assert!(f1.parse::<f64>().unwrap() > 50.0, "{}", o.stdout);
}

#[test]
fn identical_flags_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, act) = fixture(dir.path());
    let act2 = path(dir.path(), "again.act");
    vocalbeat(&["synth", "--ann", &ann, "--seed", "3", "--out", &act2]);
    assert_eq!(fs::read(&act).unwrap(), fs::read(&act2).unwrap());
    for method in [
        "default",
        "salience",
        "past",
        "combined",
        "online-dbn",
        "offline-dbn",
    ] {
        let runs: Vec<Vec<u8>> = (0..2)
            .map(|k| {
                let out = path(dir.path(), &format!("{method}{k}.txt"));
                let o = vocalbeat(&[
                    "track",
                    "--activations",
                    &act,
                    "--method",
                    method,
                    "--seed",
                    "9",
                    "--out",
                    &out,
                ]);
                assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
                fs::read(&out).unwrap()
            })
            .collect();
        assert_eq!(runs[0], runs[1], "{method}");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let (_, act) = fixture(dir.path());
    let out = path(dir.path(), "x.txt");
    let o = vocalbeat(&[
        "track",
        "--activations",
        &act,
        "--method",
        "fastest",
        "--out",
        &out,
    ]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("Usage"), "{}", o.stderr);
    assert_eq!(
        vocalbeat(&["track", "--activations", &act]).code,
        EXIT_USAGE
    );
    assert_eq!(vocalbeat(&["dance"]).code, EXIT_USAGE);
    assert_eq!(vocalbeat(&[]).code, EXIT_USAGE);

    let config = path(dir.path(), "bad.toml");
    fs::write(&config, "particles = 0\n").unwrap();
    let o = vocalbeat(&[
        "track",
        "--activations",
        &act,
        "--method",
        "default",
        "--config",
        &config,
        "--out",
        &out,
    ]);
    assert_eq!(o.code, EXIT_USAGE, "{}", o.stderr);
}

#[test]
fn io_and_parse_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = path(dir.path(), "missing.act");
    let out = path(dir.path(), "x.txt");
    let o = vocalbeat(&[
        "track",
        "--activations",
        &missing,
        "--method",
        "default",
        "--out",
        &out,
    ]);
    assert_eq!(o.code, EXIT_IO);
    assert!(o.stderr.contains("missing.act"), "{}", o.stderr);

    let garbled = path(dir.path(), "garbled.act");
    fs::write(&garbled, "# fps=50\n0.1,0.2\nnot a row\n").unwrap();
    let o = vocalbeat(&[
        "track",
        "--activations",
        &garbled,
        "--method",
        "default",
        "--out",
        &out,
    ]);
    assert_eq!(o.code, EXIT_IO);
    assert!(o.stderr.contains("line 3"), "{}", o.stderr);

    let headerless = path(dir.path(), "headerless.act");
    fs::write(&headerless, "0.1,0.2\n").unwrap();
    let o = vocalbeat(&[
        "track",
        "--activations",
        &headerless,
        "--method",
        "default",
        "--out",
        &out,
    ]);
    assert_eq!(o.code, EXIT_IO);

    let o = vocalbeat(&["eval", "--est", &missing, "--ref", &missing]);
    assert_eq!(o.code, EXIT_IO);
}

#[test]
fn help_exits_cleanly() {
    let o = vocalbeat(&["--help"]);
    assert_eq!(o.code, EXIT_OK);
    for command in ["track", "eval", "synth", "bench"] {
        assert!(o.stdout.contains(command));
    }
}

#[test]
fn bench_over_a_corpus_directory() {
    let dir = tempfile::tempdir().unwrap();
    for (k, bpm) in [95.0, 140.0].into_iter().enumerate() {
        let ann = path(dir.path(), &format!("c{k}.beats"));
        fs::write(&ann, format_annotations(&constant_tempo(bpm, 3, 0.1, 12.0))).unwrap();
        let act = path(dir.path(), &format!("c{k}.act"));
        assert_eq!(
            vocalbeat(&["synth", "--ann", &ann, "--out", &act]).code,
            EXIT_OK
        );
    }
    let report = path(dir.path(), "report.txt");
    let o = vocalbeat(&[
        "bench",
        "--corpus",
        dir.path().to_str().unwrap(),
        "--methods",
        "default,offline-dbn",
        "--seeds",
        "0,1",
        "--out",
        &report,
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(fs::read_to_string(&report).unwrap(), o.stdout);
    assert!(o.stdout.contains("offline-dbn"), "{}", o.stdout);
    assert!(!o.stdout.contains("salience"), "{}", o.stdout);
}
