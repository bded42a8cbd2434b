mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{build_archive, even_stripes, fixture_config, make_scene, SceneSpec, CLEAN};

fn corrseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrseg")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn blocks(path: &Path) {
    image::RgbImage::from_fn(336, 336, |x, y| {
        let c = ((x / 112) + 3 * (y / 112)) as u8;
        image::Rgb([25 * c, 200 - 20 * c, 60 + 30 * (c % 4)])
    })
    .save(path)
    .unwrap();
}

#[test]
fn vocabulary_is_required_exactly_once() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    blocks(&img);
    let none = corrseg(&["segment", &s(&img), "--provider", "synthetic"]);
    assert_eq!(none.status.code(), Some(2));
    let both = corrseg(&[
        "segment",
        &s(&img),
        "--provider",
        "synthetic",
        "--classes",
        "a,b",
        "--classes-file",
        "x.json",
    ]);
    assert_eq!(both.status.code(), Some(2));
}

#[test]
fn unreadable_image_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = corrseg(&[
        "segment",
        "/nonexistent.png",
        "--provider",
        "synthetic",
        "--classes",
        "a,b",
        "--out",
        &s(&out),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("nonexistent.png"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn invalid_configuration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    blocks(&img);
    let r = corrseg(&[
        "segment",
        &s(&img),
        "--provider",
        "synthetic",
        "--classes",
        "a,b",
        "--stride",
        "400",
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("stride"));
    let r = corrseg(&["segment", &s(&img), "--provider", "nowhere", "--classes", "a,b"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    blocks(&img);
    let out = s(&dir.path().join("seg"));
    let args = [
        "segment",
        &s(&img),
        "--provider",
        "synthetic",
        "--classes",
        "sky,road",
        "--out",
        &out,
    ];
    assert_eq!(corrseg(&args).status.code(), Some(0));
    for ext in ["labels.png", "overlay.png", "config.json"] {
        assert!(dir.path().join(format!("seg.{ext}")).exists(), "{ext}");
    }
    assert_eq!(corrseg(&args).status.code(), Some(1));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(corrseg(&forced).status.code(), Some(0));
}

#[test]
fn eval_limit_and_report_files() {
    let scenes: Vec<_> = (0..3)
        .map(|i| {
            make_scene(SceneSpec {
                rows: 21,
                cols: 21,
                stripes: even_stripes(21, &[0, 1, 2]),
                unsegmented_rows: None,
                seed: 70 + i,
            })
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    build_archive(&scenes, CLEAN, &fixture_config(), 3)
        .write(&fx, false)
        .unwrap();
    let ds = common::write_dataset(&dir.path().join("data"), &scenes, 3);
    let cfg = dir.path().join("pipeline.json");
    std::fs::write(&cfg, serde_json::to_string(&fixture_config()).unwrap()).unwrap();
    let report = s(&dir.path().join("report"));
    let provider = format!("fixture:{}", s(&fx));
    let r = corrseg(&[
        "eval",
        "--dataset",
        &s(&ds),
        "--config",
        &s(&cfg),
        "--provider",
        &provider,
        "--limit",
        "2",
        "--out",
        &report,
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{report}.json")).unwrap()).unwrap();
    assert_eq!(json["samples_evaluated"], 2);
    assert_eq!(json["miou"], 1.0);
    assert!(Path::new(&format!("{report}.txt")).exists());
}
