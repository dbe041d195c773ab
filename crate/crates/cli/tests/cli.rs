//! End-to-end CLI smoke tests on a tiny configuration: artifact layout,
//! exit codes, stage locks, and rerun determinism.

use std::path::Path;
use std::process::Command;

fn memseal(run_dir: &Path, args: &[&str]) -> std::process::Output {
    let mut all = vec!["--run-dir", run_dir.to_str().unwrap()];
    all.extend_from_slice(args);
    Command::new(env!("CARGO_BIN_EXE_memseal"))
        .args(&all)
        .output()
        .expect("binary runs")
}

fn tiny_overrides() -> Vec<&'static str> {
    vec![
        "--seed",
        "11",
        "--set",
        "demo.items=40",
        "--set",
        "demo.image_size=[32,32]",
        "--set",
        "protect.rate=0.1",
        "--set",
        "protect.foreground_per_class=8",
        "--set",
        "protect.candidates_per_style=1",
        "--set",
        "diffusion.timesteps=64",
        "--set",
        "diffusion.beta_end=0.1",
        "--set",
        "diffusion.base_channels=8",
        "--set",
        "diffusion.cond_dim=16",
        "--set",
        "diffusion.batch_size=4",
        "--set",
        "diffusion.max_steps=60",
        "--set",
        "diffusion.checkpoint_every=60",
        "--set",
        "diffusion.sample_steps=12",
        "--set",
        "verify.n=6",
        "--set",
        "verify.clean_holdout=30",
        "--set",
        "verify.generated_holdout=6",
    ]
}

fn hash_dir(dir: &Path) -> u64 {
    let mut paths: Vec<_> = walk(dir);
    paths.sort();
    let mut h = 0xcbf29ce484222325u64;
    for p in paths {
        for b in p.file_name().unwrap().to_string_lossy().as_bytes() {
            h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
        }
        for b in std::fs::read(&p).unwrap() {
            h = (h ^ b as u64).wrapping_mul(0x100000001b3);
        }
    }
    h
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path);
            }
        }
    }
    out
}

#[test]
fn full_lifecycle_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let extra = tiny_overrides();

    let out = memseal(&run_dir, &[extra.as_slice(), &["demo"]].concat());
    assert!(out.status.success(), "demo: {}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("demo/manifest.jsonl").is_file());
    assert!(run_dir.join("run_config.json").is_file());

    let out = memseal(&run_dir, &[extra.as_slice(), &["protect"]].concat());
    assert!(out.status.success(), "protect: {}", String::from_utf8_lossy(&out.stderr));
    for artifact in [
        "protect/manifest.jsonl",
        "protect/template/template.png",
        "protect/template/mask.png",
        "protect/template/spec.json",
        "protect/triggers.json",
        "protect/validation.json",
        "protect/templated_set/manifest.jsonl",
    ] {
        assert!(run_dir.join(artifact).is_file(), "missing {artifact}");
    }

    let out = memseal(
        &run_dir,
        &[extra.as_slice(), &["attack", "--kind", "corrupt:jpeg:90"]].concat(),
    );
    assert!(out.status.success(), "attack: {}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("attack/manifest.jsonl").is_file());

    let out = memseal(&run_dir, &[extra.as_slice(), &["finetune", "--name", "suspect"]].concat());
    assert!(out.status.success(), "finetune: {}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("finetune-suspect/model.ckpt").is_file());
    assert!(run_dir.join("finetune-suspect/loss.csv").is_file());

    // an undertrained model must not be flagged: exit code 3 distinguishes
    // fail-to-reject from hard failures
    let out = memseal(&run_dir, &[extra.as_slice(), &["verify"]].concat());
    assert_eq!(
        out.status.code(),
        Some(3),
        "verify stdout: {} stderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(run_dir.join("verify/verdict.json").is_file());

    let out = memseal(&run_dir, &[extra.as_slice(), &["report"]].concat());
    assert!(out.status.success(), "report: {}", String::from_utf8_lossy(&out.stderr));
    let report_text = std::fs::read_to_string(run_dir.join("report/report.json")).unwrap();
    assert!(report_text.contains("multi_query_reject"));
}

#[test]
fn protect_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let extra = tiny_overrides();

    let run_a = tmp.path().join("a");
    let run_b = tmp.path().join("b");
    for run_dir in [&run_a, &run_b] {
        let out = memseal(run_dir, &[extra.as_slice(), &["demo"]].concat());
        assert!(out.status.success());
        let out = memseal(run_dir, &[extra.as_slice(), &["protect"]].concat());
        assert!(out.status.success());
    }
    assert_eq!(
        hash_dir(&run_a.join("protect")),
        hash_dir(&run_b.join("protect")),
        "protect artifacts must be byte-identical across reruns with one seed"
    );
}

#[test]
fn missing_upstream_artifact_is_a_stage_dependency_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let out = memseal(&run_dir, &["protect"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("missing upstream artifact") && stderr.contains("demo"),
        "stderr: {stderr}"
    );
    // machine-readable error JSON
    assert!(stderr.trim_start().starts_with('{'), "stderr: {stderr}");
}

#[test]
fn stage_lock_blocks_concurrent_writers() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    std::fs::create_dir_all(&run_dir).unwrap();
    std::fs::write(run_dir.join(".demo.lock"), "").unwrap();
    let out = memseal(&run_dir, &[tiny_overrides().as_slice(), &["demo"]].concat());
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("locked"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_override_fails_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let out = memseal(&tmp.path().join("x"), &["--set", "no.such=1", "demo"]);
    assert!(!out.status.success());
}
