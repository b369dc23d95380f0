use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rieszlab"))
}

#[test]
fn selftest_passes() {
    let out = bin().args(["selftest", "--seed", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn invalid_levels_are_a_runtime_error() {
    let out = bin().args(["sweep", "--dim", "1", "--levels", "8,4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_csv_svg_and_dumps() {
    let dir = std::env::temp_dir().join(format!("rieszlab-cli-{}", std::process::id()));
    let config = dir.join("run.conf");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(&config, "# small sweep\ndim = 1\nlevels = 2,4,8\ndump-mesh = true\n").unwrap();
    let out = bin()
        .args(["sweep", "--dump-matrix", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(dir.join("sweep_1d_p1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let svg = std::fs::read_to_string(dir.join("sweep_1d_p1.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 6);
    assert!(dir.join("mesh_1d_p1_r8.txt").exists());
    let mtx = std::fs::read_to_string(dir.join("mass_1d_p1_r8.mtx")).unwrap();
    assert!(mtx.starts_with("%%MatrixMarket"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn uniform_table_exit_code_reflects_properties() {
    let out = bin().args(["uniform-table"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("PASS CG1"));
    assert!(text.contains("level,cells,order,dofs,iterations,published"));
}
