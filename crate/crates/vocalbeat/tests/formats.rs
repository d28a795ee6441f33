use proptest::prelude::*;
use vocalbeat::io::{
    format_activations, format_annotations, parse_activations, parse_annotations, read_activations,
    write_activations, ActivationFile,
};
use vocalbeat_core::eval::Annotation;
use vocalbeat_core::ActivationFrame;

/// Values with at most six decimals, as the text format stores them.
fn six_decimals() -> impl Strategy<Value = f64> {
    (0u32..=1_000_000).prop_map(|m| m as f64 / 1e6)
}

fn activation_file() -> impl Strategy<Value = ActivationFile> {
    (
        1u32..200,
        proptest::collection::vec((six_decimals(), six_decimals()), 0..300),
    )
        .prop_map(|(fps, rows)| ActivationFile {
            fps,
            frames: rows
                .into_iter()
                .map(|(b, d)| ActivationFrame::new(b, d).unwrap())
                .collect(),
        })
}

proptest! {
    #[test]
    fn activation_files_round_trip(file in activation_file()) {
        let text = format_activations(&file);
        let header = format!("# fps={}\n", file.fps);
        prop_assert!(text.starts_with(&header));
        prop_assert_eq!(text.lines().count(), file.frames.len() + 1);
        prop_assert_eq!(parse_activations(&text).unwrap(), file);
    }

    #[test]
    fn any_values_are_stable_after_one_write(
        fps in 1u32..200,
        rows in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..100),
    ) {
        let file = ActivationFile {
            fps,
            frames: rows.into_iter().map(|(b, d)| ActivationFrame::new(b, d).unwrap()).collect(),
        };
        let once = format_activations(&file);
        let back = parse_activations(&once).unwrap();
        for (a, b) in file.frames.iter().zip(&back.frames) {
            prop_assert!((a.beat - b.beat).abs() <= 5e-7 && (a.downbeat - b.downbeat).abs() <= 5e-7);
        }
        prop_assert_eq!(format_activations(&back), once);
    }

    #[test]
    fn annotations_round_trip(
        gaps in proptest::collection::vec(1u32..2_000_000, 1..60),
        meter in 2usize..7,
    ) {
        let mut beats = Vec::new();
        let mut t = 0u64;
        for g in gaps {
            t += g as u64;
            beats.push(t as f64 / 1e6);
        }
        let downbeats = beats.iter().copied().step_by(meter).collect();
        let annotation = Annotation::new(beats, downbeats).unwrap();
        prop_assert_eq!(parse_annotations(&format_annotations(&annotation)).unwrap(), annotation);
    }
}

#[test]
fn files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.act");
    let file = ActivationFile {
        fps: 100,
        frames: vec![
            ActivationFrame::new(0.5, 0.25).unwrap(),
            ActivationFrame::new(1.0, 0.0).unwrap(),
        ],
    };
    write_activations(&path, &file).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        "# fps=100\n0.500000,0.250000\n1.000000,0.000000\n"
    );
    assert_eq!(read_activations(&path).unwrap(), file);
}

#[test]
fn malformed_files_are_rejected() {
    for text in [
        "",
        "0.1,0.2\n",
        "# fps=0\n",
        "# fps=-3\n",
        "# fps=50\n0.1\n",
        "# fps=50\n0.1,0.2,0.3\n",
        "# fps=50\n1.5,0.2\n",
        "# fps=50\n0.1,-0.2\n",
        "# fps=50\nnan,0.2\n",
    ] {
        assert!(parse_activations(text).is_err(), "{text:?}");
    }
}
