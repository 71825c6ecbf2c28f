use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bitfusion::image::{Manifest, Memory};
use bitfusion::refmodel::{act_ref, gemm_ref, requant_ref};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bitfusion"));
    c.env_remove("BITFUSION_ARCH");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn load(image: &Path) -> Memory {
    let manifest = Manifest::from_json(&std::fs::read_to_string(image.with_extension("json")).unwrap()).unwrap();
    Memory::from_image(&std::fs::read(image).unwrap(), &manifest).unwrap()
}

#[test]
fn compile_then_simulate_matches_reference() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(bin().arg("compile").arg(fixture("fc.toml")).arg("--out-dir").arg(d).output().unwrap());
    for f in ["program.bfis", "program.bfasm", "image.bin", "image.json", "listing.txt"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let stdout = ok(bin()
        .arg("simulate")
        .arg(d.join("program.bfis"))
        .arg("--image")
        .arg(d.join("image.bin"))
        .arg("--out-dir")
        .arg(d.join("sim"))
        .output()
        .unwrap());
    assert!(stdout.contains("cycles"));
    let mem = load(&d.join("sim/result.bin"));
    let x = mem.read_tensor("input").unwrap();
    let w = mem.read_tensor("fc1.w").unwrap();
    let expect = requant_ref(&act_ref(&gemm_ref(&x, &w).unwrap()), 2, 8, true);
    assert_eq!(mem.read_tensor("fc1.out").unwrap(), expect);
    let csv = std::fs::read_to_string(d.join("sim/report.csv")).unwrap();
    assert!(csv.starts_with("block,name,cycles,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn simulating_a_network_checks_the_reference() {
    let out = ok(bin().arg("simulate").arg(fixture("fc.toml")).output().unwrap());
    assert!(out.contains("reference       match"), "{out}");
}

#[test]
fn empty_network_takes_zero_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("empty.toml");
    std::fs::write(&net, "[input]\nshape = [1, 4]\nbits = 8\n").unwrap();
    let out = ok(bin().arg("simulate").arg(&net).arg("--out-dir").arg(dir.path()).output().unwrap());
    assert!(out.contains("cycles          0 "), "{out}");
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("total,,0,"));
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}

#[test]
fn bandwidth_sweep_never_slows_down() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(bin()
        .args(["sweep", "bandwidth"])
        .arg(fixture("gemv.toml"))
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap());
    assert_eq!(column(&out, "bandwidth"), vec![32.0, 128.0, 512.0]);
    let cycles = column(&out, "cycles");
    assert!(cycles.windows(2).all(|w| w[1] <= w[0]), "{cycles:?}");
    assert!(cycles[0] > cycles[2]);
    for v in [32, 128, 512] {
        assert!(dir.path().join(format!("sweep-bandwidth-{v}.csv")).exists());
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("sweep-bandwidth.csv")).unwrap(), out);
}

#[test]
fn batch_sweep_amortizes_weights() {
    let out = ok(bin()
        .args(["sweep", "batch", "--values", "1,4,16"])
        .arg(fixture("gemv.toml"))
        .output()
        .unwrap());
    let w = column(&out, "weight_bits_per_inference");
    assert!(w[1] < w[0] && w[2] < w[1], "{w:?}");
}

#[test]
fn reruns_are_identical() {
    let run = || ok(bin().args(["sweep", "batch", "--values", "1,2"]).arg(fixture("fc.toml")).output().unwrap());
    assert_eq!(run(), run());
}

#[test]
fn asm_disasm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bin_path = dir.path().join("t.bfis");
    ok(bin().arg("asm").arg(fixture("tiled_fc.bfasm")).arg("-o").arg(&bin_path).output().unwrap());
    let text = ok(bin().arg("disasm").arg(&bin_path).output().unwrap());
    let original = std::fs::read_to_string(fixture("tiled_fc.bfasm")).unwrap();
    assert_eq!(
        bitfusion::isa::assemble(&text).unwrap(),
        bitfusion::isa::assemble(&original).unwrap()
    );
    ok(bin().arg("validate").arg(&bin_path).arg(fixture("tiled_fc.bfasm")).output().unwrap());
}

#[test]
fn errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bfasm");
    std::fs::write(&bad, "setup ibits=8 wbits=8\nloop id=0 iters=2\nloop id=0 iters=2\nblock-end\n").unwrap();
    let out = bin().arg("validate").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.bfasm") && err.contains("duplicate loop id"), "{err}");

    std::fs::write(&bad, "loop id=0 iters=two\n").unwrap();
    let out = bin().arg("asm").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.bfasm:1"));

    let out = bin().arg("simulate").arg(dir.path().join("missing.toml")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));
}

#[test]
fn arch_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let arch = dir.path().join("arch.toml");
    std::fs::write(&arch, "rows = 2\ncols = 2\n").unwrap();
    let small = ok(bin().env("BITFUSION_ARCH", &arch).arg("simulate").arg(fixture("fc.toml")).output().unwrap());
    let default = ok(bin().arg("simulate").arg(fixture("fc.toml")).output().unwrap());
    let flag = ok(bin().arg("--arch").arg(&arch).arg("simulate").arg(fixture("fc.toml")).output().unwrap());
    assert_ne!(small, default);
    assert_eq!(small, flag);

    std::fs::write(&arch, "rows = 0\n").unwrap();
    let out = bin().arg("--arch").arg(&arch).arg("simulate").arg(fixture("fc.toml")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("arch.toml"));
}
