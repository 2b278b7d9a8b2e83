mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use waffle_core::corpus::DatasetManifest;
use waffle_core::embedstore::{read_embeddings, write_embeddings, EmbeddingMatrix};
use waffle_core::eval::ResultsDocument;

fn waffle(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_waffle"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Stands in for the exporter: embeds every line of the prompt files with
/// random vectors.
fn export(dir: &Path, prompt_files: &[&str], dim: usize) -> PathBuf {
    let mut prompts: Vec<String> = Vec::new();
    for f in prompt_files {
        for line in fs::read_to_string(dir.join(f)).unwrap().lines() {
            if !prompts.iter().any(|p| p == line) {
                prompts.push(line.to_owned());
            }
        }
    }
    let mut rng = common::rng(1);
    let data: Vec<f32> = prompts.iter().flat_map(|_| common::gaussian(&mut rng, dim)).collect();
    let path = dir.join("text.wemb");
    write_embeddings(&path, &EmbeddingMatrix::new(dim, data, prompts).unwrap()).unwrap();
    path
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("classes.txt"), "waffle\npeking duck\ntabby cat\n").unwrap();
    fs::write(
        p.join("descriptors.json"),
        r#"{"waffle": ["a round shape", "a grid pattern"], "peking duck": ["glossy skin"], "tabby cat": ["is striped", "has whiskers", "a long tail"]}"#,
    )
    .unwrap();
    let mut rng = common::rng(2);
    let images = common::unit_rows(&mut rng, 12, 8);
    write_embeddings(p.join("images.wemb"), &images).unwrap();
    DatasetManifest {
        name: "toy".into(),
        image_embedding_path: "images.wemb".into(),
        labels: (0..12).map(|i| i % 3).collect(),
    }
    .save(p.join("manifest.json"))
    .unwrap();
    dir
}

const DATA: [&str; 4] = ["--class-list", "classes.txt", "--dataset-manifest", "manifest.json"];

#[test]
fn prompts_feed_a_cache_that_runs_end_to_end() {
    let dir = setup();
    let p = dir.path();
    let prompts = |method: &str, out: &str| {
        ok(&waffle(
            p,
            &["prompts", "--method", method, "--class-list", "classes.txt", "--descriptors", "descriptors.json", "--out", out],
        ))
    };
    prompts("waffle", "waffle.txt");
    let first = fs::read_to_string(p.join("waffle.txt")).unwrap();
    prompts("waffle", "waffle.txt");
    assert_eq!(first, fs::read_to_string(p.join("waffle.txt")).unwrap());
    // 7 default seeds x 30 shared descriptors x 3 classes
    assert_eq!(first.lines().count(), 7 * 30 * 3);
    assert!(first.lines().next().unwrap().starts_with("A photo of a waffle, which has "));

    prompts("clip", "clip.txt");
    prompts("dclip", "dclip.txt");
    assert_eq!(fs::read_to_string(p.join("clip.txt")).unwrap(), "A photo of a waffle.\nA photo of a peking duck.\nA photo of a tabby cat.\n");
    assert!(fs::read_to_string(p.join("dclip.txt")).unwrap().contains("A photo of a tabby cat, which is striped.\n"));

    let cache = export(p, &["waffle.txt", "clip.txt", "dclip.txt"], 8);
    let cache = cache.to_str().unwrap();

    let mut args = vec!["classify", "--method", "waffle", "--seed", "0", "--text-cache", cache, "--out", "results.json", "--scores-out", "scores.wemb"];
    args.extend(DATA);
    let line = ok(&waffle(p, &args));
    assert!(line.starts_with("toy waffle seed 0: "), "{line}");
    let scores = read_embeddings(p.join("scores.wemb")).unwrap();
    assert_eq!((scores.rows(), scores.dim()), (12, 3));
    assert_eq!(ResultsDocument::load(p.join("results.json")).unwrap().records.len(), 1);

    let mut args = vec!["eval", "--method", "clip", "waffle", "dclip", "--text-cache", cache, "--descriptors", "descriptors.json", "--out", "results.json", "--backbone", "ViT-B/32"];
    args.extend(DATA);
    let table = ok(&waffle(p, &args));
    assert!(table.contains("toy waffle: "), "{table}");
    assert!(table.lines().any(|l| l.starts_with("ViT-B/32") && l.ends_with("Avg")), "{table}");
    let clip_row = table.lines().find(|l| l.starts_with("clip ")).unwrap();
    assert!(clip_row.ends_with("±0.00"), "{clip_row}");
    let doc = ResultsDocument::load(p.join("results.json")).unwrap();
    assert_eq!(doc.records.iter().filter(|r| r.backbone == "ViT-B/32").count(), 21);

    let mut args = vec!["flips", "--base-method", "waffle", "--method", "waffle", "--text-cache", cache];
    args.extend(DATA);
    let flips = ok(&waffle(p, &args));
    assert!(flips.trim_end().ends_with("waffle -> waffle: positive 0.00 negative 0.00"), "{flips}");

    let missing = {
        let mut args = vec!["classify", "--method", "prompt_ensemble", "--text-cache", cache];
        args.extend(DATA);
        waffle(p, &args)
    };
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing from the text embedding cache"));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = setup();
    let p = dir.path();
    fs::write(
        p.join("run.json"),
        r#"{"method": "waffle", "class_list": "classes.txt", "seeds": [4], "waffle": {"pair_count": 2, "mode": "words_only"}}"#,
    )
    .unwrap();
    let from_file = ok(&waffle(p, &["prompts", "--config", "run.json"]));
    assert_eq!(from_file.lines().count(), 2 * 3);
    let overridden = ok(&waffle(p, &["prompts", "--config", "run.json", "--pair-count", "3", "--seeds", "0..2"]));
    assert!(overridden.lines().count() > 3 * 3);
}

#[test]
fn gen_writes_descriptor_files() {
    let dir = setup();
    let p = dir.path();
    ok(&waffle(p, &["gen", "--kind", "waffle", "--class-list", "classes.txt", "--pair-count", "2", "--out", "w.json"]));
    let w: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("w.json")).unwrap()).unwrap();
    assert_eq!(w["waffle"].as_array().unwrap().len(), 4);
    assert_eq!(w["waffle"], w["tabby cat"]);
    for kind in ["scrambled", "interchanged", "random", "same"] {
        let out = format!("{kind}.json");
        ok(&waffle(p, &["gen", "--kind", kind, "--class-list", "classes.txt", "--descriptors", "descriptors.json", "--seed", "3", "--out", &out]));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join(&out)).unwrap()).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 3, "{kind}");
    }
    let missing = waffle(p, &["gen", "--kind", "scrambled", "--class-list", "classes.txt", "--out", "x.json"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn fmt_check_and_exit_codes() {
    let dir = setup();
    let p = dir.path();
    let out = ok(&waffle(p, &["fmt-check", "images.wemb"]));
    assert!(out.contains("12 rows x 8 dims"));

    let mut bytes = fs::read(p.join("images.wemb")).unwrap();
    bytes[0] = b'X';
    fs::write(p.join("bad.wemb"), &bytes).unwrap();
    fs::copy(p.join("images.wemb.keys"), p.join("bad.wemb.keys")).unwrap();
    let bad = waffle(p, &["fmt-check", "bad.wemb"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bad.wemb"));

    assert_eq!(waffle(p, &["fmt-check", "absent.wemb"]).status.code(), Some(2));
    assert_eq!(waffle(p, &["classify", "--method", "dclip", "--class-list", "classes.txt"]).status.code(), Some(1));
    assert_eq!(waffle(p, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(waffle(p, &["prompts", "--method", "clip", "--class-list", "absent.txt"]).status.code(), Some(2));
    assert!(waffle(p, &["--help"]).status.success());
}

#[test]
fn concept_flag_overrides_derivation() {
    let dir = setup();
    let p = dir.path();
    let out = ok(&waffle(p, &["concept", "--class-list", "classes.txt", "--concept", "Food", "--out", "c.json"]));
    assert_eq!(out.trim(), "Food");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("c.json")).unwrap()).unwrap();
    assert_eq!(v["concept"], "Food");
    assert_eq!(waffle(p, &["concept", "--class-list", "classes.txt"]).status.code(), Some(1));
}
