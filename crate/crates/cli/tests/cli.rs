use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_monodream");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("MONODREAM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_world_is_deterministic_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.plan");
    let b = dir.path().join("b.plan");
    for p in [&a, &b] {
        let o = run(&["gen-world", "--seed", "7", "--rooms", "2x3", "--out", path(p)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = std::fs::read_to_string(&a).unwrap();
    assert_eq!(ta, std::fs::read_to_string(&b).unwrap());
    let plan = monodream::world::parse_floorplan(&ta).unwrap();
    assert_eq!(plan.rooms.len(), 6);
    let manifest = std::fs::read_to_string(dir.path().join("a.plan.manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(v["command"], "gen-world");
    assert!(v["config"].as_str().unwrap().contains("seed=7"));
}

#[test]
fn seed_env_applies_when_no_flag_is_given() {
    let dir = tempfile::tempdir().unwrap();
    let env = dir.path().join("env.plan");
    let flag = dir.path().join("flag.plan");
    let o = Command::new(BIN)
        .args(["gen-world", "--out", path(&env)])
        .env("MONODREAM_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(run(&["gen-world", "--seed", "11", "--out", path(&flag)]).status.code(), Some(0));
    assert_eq!(std::fs::read(&env).unwrap(), std::fs::read(&flag).unwrap());
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    let bad = run(&["no-such-command"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(!bad.stderr.is_empty());
    assert_eq!(run(&["gen-world", "--rooms", "2by2", "--out", "/tmp/x"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let o = run(&["report", "--run", path(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no run found"));
    assert_eq!(run(&["eval", "--run", path(&missing)]).status.code(), Some(2));
    assert_eq!(run(&["train", "--out", path(dir.path()), "--set", "bogus.key=1"]).status.code(), Some(1));
}

#[test]
fn render_writes_ppms_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("p.plan");
    assert_eq!(run(&["gen-world", "--seed", "3", "--out", path(&plan)]).status.code(), Some(0));
    let out = dir.path().join("pano");
    let o = run(&[
        "render", "--plan", path(&plan), "--pose", "1.5,1.5,90", "--pano", "--depth", "--image-size", "16", "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ppms: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ppm"))
        .collect();
    assert_eq!(ppms.len(), 4);
    for e in ppms {
        let img = monodream::sensors::read_ppm(&std::fs::read(e.path()).unwrap()).unwrap();
        assert_eq!((img.width, img.height), (16, 16));
    }
    assert!(out.join("manifest.txt").exists());
    assert!(out.join("manifest.json").exists());

    let single = dir.path().join("one");
    let o = run(&["render", "--plan", path(&plan), "--pose", "1.5,1.5,0", "--out", path(&single)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(single.join("view_rgb.ppm").exists());
    assert_eq!(run(&["render", "--plan", path(&plan), "--pose", "1,2", "--out", path(&single)]).status.code(), Some(1));
}

#[test]
fn grad_check_passes() {
    let o = run(&["grad-check", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().count() >= 5);
    assert!(!text.contains("FAIL"));
}

#[test]
fn report_renders_every_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "label,ir,pi,pd,fpi,fpd,depth,seed,status,ne,osr,sr,spl,episodes\n\
               baseline,0,0,0,0,0,default,0,ok,3.0,0.5,0.25,0.2,4\n\
               baseline,0,0,0,0,0,default,1,ok,2.0,0.5,0.75,0.6,4\n";
    std::fs::write(dir.path().join("ablation.csv"), csv).unwrap();
    let o = run(&["report", "--run", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for col in ["Row", "IR", "PI", "PD", "FPI", "FPD", "Depth", "NE", "OSR", "SR", "SPL", "Seeds"] {
        assert!(text.contains(col), "missing {col}:\n{text}");
    }
    assert!(text.contains("baseline"));
    assert!(text.contains("50.0"), "{text}");

    std::fs::write(dir.path().join("ablation.csv"), "label,ir,pi,pd,fpi,fpd,depth,seed,status,ne,osr,sr,spl,episodes\n")
        .unwrap();
    assert_eq!(run(&["report", "--run", path(dir.path())]).status.code(), Some(1));
}

#[test]
fn build_data_then_train_and_eval_a_tiny_run() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "--plans", "2", "--episodes-per-plan", "1", "--epochs", "1", "--max-steps", "2", "--batch-size", "4",
        "--dagger-fraction", "0",
    ];
    let data = dir.path().join("data");
    let mut args = vec!["build-data", "--out", path(&data)];
    args.extend(common);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("samples.jsonl").exists());
    assert!(data.join("manifest.json").exists());

    let runs = dir.path().join("runs");
    let mut args = vec!["train", "--out", path(&runs)];
    args.extend(common);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run_dir = std::fs::read_dir(&runs).unwrap().next().unwrap().unwrap().path();
    assert!(run_dir.join("epoch1.ckpt").exists());
    assert!(run_dir.join("manifest.json").exists());

    let o = run(&["eval", "--run", path(&run_dir), "--eval-plans", "1", "--eval-episodes-per-plan", "1", "--eval-max-steps", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("SR"));
    assert!(run_dir.join("metrics.json").exists());
}
