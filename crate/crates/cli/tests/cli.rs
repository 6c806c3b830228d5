use std::path::Path;
use std::process::{Command, Output};

fn mpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpr")).args(args).output().expect("spawn mpr")
}

fn stdout_of(args: &[&str]) -> String {
    let out = mpr(args);
    assert!(out.status.success(), "mpr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Header and data rows, comments dropped.
fn table(csv: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().expect("header row").split(',').map(str::to_string).collect();
    (header, lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name} in {header:?}"))
}

const SMALL_LINEARITY: &[&str] = &["linearity", "--input-dim", "128", "--rows", "10", "--anchors", "3,6", "--trials", "2"];

#[test]
fn identical_settings_give_identical_bytes() {
    let a = stdout_of(SMALL_LINEARITY);
    assert_eq!(a, stdout_of(SMALL_LINEARITY));
    let reseeded: Vec<&str> = SMALL_LINEARITY.iter().copied().chain(["--seed", "1"]).collect();
    assert_ne!(a, stdout_of(&reseeded));
}

#[test]
fn csv_starts_with_config_hash_and_header() {
    let out = stdout_of(SMALL_LINEARITY);
    let first = out.lines().next().unwrap();
    let hash = first.strip_prefix("# mpr linearity config-hash: sha256:").expect("hash comment");
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    let (header, rows) = table(&out);
    assert_eq!(header, ["anchors", "method", "tau", "mean_linearity_error", "std_error", "retained_fraction", "trials"]);
    assert_eq!(rows.len(), 4);
}

#[test]
fn noiseless_linearity_is_exact() {
    let args: Vec<&str> = SMALL_LINEARITY.iter().copied().chain(["--noiseless"]).collect();
    let (header, rows) = table(&stdout_of(&args));
    let err = column(&header, "mean_linearity_error");
    for row in rows {
        assert!(row[err].parse::<f64>().unwrap() < 1e-6, "{row:?}");
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "seed = 4\ninput_dim = 128\nrows = 10\nanchors = [3]\ntrials = 1\n").unwrap();
    let p = path.to_str().unwrap();
    let from_file = stdout_of(&["linearity", "--config", p]);
    assert!(from_file.contains("\"seed\":4"));
    let overridden = stdout_of(&["linearity", "--config", p, "--seed", "9"]);
    assert!(overridden.contains("\"seed\":9") && overridden.contains("\"input_dim\":128"));
}

#[test]
fn bad_config_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "seed = 4\n# comment\ntrials = \"ten\"\n").unwrap();
    let out = mpr(&["goodbits", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:3:"), "{err}");

    std::fs::write(&path, "seed = 4\nsets = 3\n").unwrap();
    let out = mpr(&["goodbits", "--config", path.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml:2: `sets` does not apply"));
}

#[test]
fn invalid_requests_exit_nonzero_with_a_message() {
    for args in [
        &["srls-vs-mds", "--anchors", "2", "--trials", "1"][..],
        &["design-refs", "--tau", "6"],
        &["linearity", "--bits", "0"],
        &["rsvd", "--anchors", "3,5"],
    ] {
        let out = mpr(args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("mpr: error:"), "{args:?}");
    }
}

#[test]
fn known_anchors_help_at_each_count() {
    let out = stdout_of(&["srls-vs-mds", "--input-dim", "256", "--anchors", "3,8,15", "--trials", "30"]);
    let (header, rows) = table(&out);
    let (k, method, snr) = (column(&header, "anchors"), column(&header, "method"), column(&header, "mean_SNR_dB"));
    for pair in rows.chunks(2) {
        assert_eq!((pair[0][method].as_str(), pair[1][method].as_str()), ("SR-LS-known-anchors", "MDS-joint"));
        let (s, m): (f64, f64) = (pair[0][snr].parse().unwrap(), pair[1][snr].parse().unwrap());
        assert!(s >= m, "K={}: {s} < {m}", pair[0][k]);
    }
}

#[test]
fn noiseless_good_bits_reach_the_cap() {
    let out = stdout_of(&["goodbits", "--noiseless", "--anchors", "5", "--trials", "5"]);
    let (header, rows) = table(&out);
    let (method, bits) = (column(&header, "method"), column(&header, "mean_good_bits"));
    for row in rows.iter().filter(|r| r[method] != "raw") {
        assert!(row[bits].parse::<f64>().unwrap() > 40.0, "{row:?}");
    }
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    let (_, rows) = table(&std::fs::read_to_string(path).unwrap());
    rows.iter().map(|r| r.iter().map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn rsvd_exports_manifest_and_factors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rsvd");
    let status = mpr(&["rsvd", "--out", out.to_str().unwrap(), "--noiseless", "--projections", "2,5", "--trials", "2"]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));

    let (header, rows) = table(&std::fs::read_to_string(out.join("rsvd.csv")).unwrap());
    assert_eq!(header, ["projections", "mean_error", "std_error", "prototype_error", "trials"]);
    assert_eq!(rows.len(), 2);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("rsvd_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["anchors"], 5);
    assert_eq!(manifest["trial_seeds"].as_array().unwrap().len(), 2);
    let files = manifest["factor_files"].as_array().unwrap();
    assert_eq!(files.len(), 12);
    for f in files {
        assert!(out.join(f.as_str().unwrap()).exists());
    }

    // K projector rows give 2K components over a 10 x 1000 matrix
    let u = read_matrix(&out.join("factors/k5_optical_u.csv"));
    let s = read_matrix(&out.join("factors/k5_optical_s.csv"));
    let vt = read_matrix(&out.join("factors/k5_optical_vt.csv"));
    assert_eq!((u.len(), u[0].len(), s.len(), vt.len(), vt[0].len()), (10, 10, 10, 10, 1000));
    assert!(s.windows(2).all(|w| w[0][0] >= w[1][0]));
}

#[test]
fn digit_run_reports_singular_vector_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("digits");
    let status = mpr(&["rsvd", "--matrix", "digits", "--rows", "120", "--out", out.to_str().unwrap()]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let (header, rows) = table(&std::fs::read_to_string(out.join("rsvd_vectors.csv")).unwrap());
    assert_eq!(header, ["projections", "vector", "optical_error", "prototype_error"]);
    assert_eq!(rows.len(), 7);
    assert!(rows[0][2].parse::<f64>().unwrap() < 0.1, "{:?}", rows[0]);
}

#[test]
fn scaling_and_design_tables() {
    let out = stdout_of(&["scaling", "--anchors", "10,20", "--trials", "3", "--keep-probability", "0.9"]);
    let (header, rows) = table(&out);
    assert_eq!(header, ["keep_probability", "anchors", "mean_error", "std_error", "normalized", "trials"]);
    assert_eq!(rows.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let status = mpr(&["design-refs", "--sets", "20", "--out", dir.path().to_str().unwrap()]);
    assert!(status.status.success());
    let (header, rows) = table(&std::fs::read_to_string(dir.path().join("design-refs.csv")).unwrap());
    assert_eq!(rows[0][column(&header, "valid")], "20");
    assert!(dir.path().join("reference_set.txt").exists());
}
