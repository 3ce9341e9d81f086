//! End-to-end tests of the `patch-meso` binary: flag surface, config
//! diagnostics, artifact determinism, and the closed-form ledger numbers.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_patch-meso")
}

/// Fresh scratch directory per test.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("patch-meso-cli-{}-{name}", std::process::id()));
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_lists_every_flag() {
    let dir = scratch("help");
    let out = run_in(&dir, &["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for flag in [
        "--config",
        "--out",
        "--seed",
        "--which",
        "--delta-t",
        "--q",
        "--n",
        "--a",
        "--cos-ell",
        "--mode",
        "--threads",
        "--big-n",
        "--t-end",
        "--dt-micro",
        "--n-min",
        "--n-max",
        "--a-list",
        "--cos-ell-list",
        "--delta-t-list",
        "--q-list",
        "--alpha",
        "--beta",
        "--gamma",
        "--domain-width",
        "--h",
        "--big-h",
        "--init-amplitude",
        "--noise-std",
        "--as-printed",
        "--snapshot-times",
        "--topology",
        "--patches",
        "--payload",
        "--cadence",
    ] {
        assert!(text.contains(flag), "help is missing `{flag}`:\n{text}");
    }
    for sub in ["eig", "evolve", "bounds", "figures", "gl2d", "comms"] {
        assert!(text.contains(sub), "help is missing subcommand `{sub}`");
    }
}

#[test]
fn unknown_flags_are_rejected() {
    let dir = scratch("badflag");
    let out = run_in(&dir, &["eig", "--definitely-not-a-flag"]);
    assert!(!out.status.success());
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = scratch("cfgerr");

    fs::write(dir.join("bad_key.cfg"), "[patch]\nwidth = 3\n").unwrap();
    let out = run_in(&dir, &["eig", "--config", "bad_key.cfg"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("bad_key.cfg:2"), "{err}");
    assert!(err.contains("unknown key `width`"), "{err}");

    fs::write(dir.join("bad_section.cfg"), "\n[nope]\nn = 3\n").unwrap();
    let out = run_in(&dir, &["eig", "--config", "bad_section.cfg"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("bad_section.cfg:2"), "{err}");
    assert!(err.contains("unknown section"), "{err}");

    fs::write(dir.join("bad_value.cfg"), "[patch]\nn = twenty\n").unwrap();
    let out = run_in(&dir, &["eig", "--config", "bad_value.cfg"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("bad_value.cfg:2"), "{err}");
    assert!(err.contains("bad value `twenty`"), "{err}");

    fs::write(dir.join("dup.cfg"), "[patch]\nn = 6\nn = 8\n").unwrap();
    let out = run_in(&dir, &["eig", "--config", "dup.cfg"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("dup.cfg:3"), "{}", stderr(&out));
}

#[test]
fn eig_writes_deterministic_artifacts() {
    let dir = scratch("eig");
    let out = run_in(&dir, &["eig", "--n", "6", "--a", "2", "--out", "one"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("biorthonormality residual"), "{text}");
    assert!(text.contains("transition identity residual"), "{text}");

    let again = run_in(&dir, &["eig", "--n", "6", "--a", "2", "--out", "two"]);
    assert!(again.status.success());
    for name in ["modes.csv", "spectrum.csv"] {
        let first = fs::read(dir.join("one").join(name)).unwrap();
        let second = fs::read(dir.join("two").join(name)).unwrap();
        assert_eq!(first, second, "{name} differs between identical runs");
    }

    let spectrum = fs::read_to_string(dir.join("one/spectrum.csv")).unwrap();
    let mut lines = spectrum.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,l_k,family,scaled_wavenumber,lambda_analytic,lambda_numeric,\
         lambda_abs_diff,eigenvector_max_diff"
    );
    // 2n - 1 = 11 modes.
    assert_eq!(lines.count(), 11);
    // Deviation columns stay at oracle agreement level.
    for line in spectrum.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert!(fields[6].parse::<f64>().unwrap() < 1e-10, "{line}");
        assert!(fields[7].parse::<f64>().unwrap() < 1e-8, "{line}");
    }
}

#[test]
fn degenerate_geometries_fail_with_a_stderr_note() {
    let dir = scratch("degen");
    let out = run_in(&dir, &["eig", "--n", "4", "--a", "1"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("degenerate"), "{err}");
}

#[test]
fn evolve_trajectories_close_the_triangle() {
    let dir = scratch("evolve");
    let out = run_in(
        &dir,
        &["evolve", "--n", "6", "--a", "2", "--delta-t", "0.5", "--t-end", "1", "--out", "t"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["exact.csv", "meso.csv", "direct.csv", "differences.csv"] {
        assert!(dir.join("t").join(name).exists(), "missing {name}");
    }
    let diffs = fs::read_to_string(dir.join("t/differences.csv")).unwrap();
    let last = diffs.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    // Independent integrator agrees with the closed form far below the
    // mesoscale truncation error.
    let exact_vs_direct: f64 = fields[2].parse().unwrap();
    assert!(exact_vs_direct < 1e-7, "{last}");
    let exact_vs_meso: f64 = fields[1].parse().unwrap();
    assert!(exact_vs_meso > exact_vs_direct, "{last}");
}

#[test]
fn bounds_respects_flag_overrides_over_config() {
    let dir = scratch("bounds");
    // The config asks for a two-geometry sweep; the flag narrows it to one.
    fs::write(dir.join("sweep.cfg"), "[sweep]\nn_min = 6\nn_max = 7\na_list = 0\n").unwrap();
    let out = run_in(
        &dir,
        &["bounds", "--config", "sweep.cfg", "--n-max", "6", "--out", "b"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let pen = fs::read_to_string(dir.join("b/penetration.csv")).unwrap();
    assert_eq!(pen.lines().next().unwrap(), "n,a,n_minus_a,cos_ell,delta_t,q,j,r_jmax");
    // Header plus 2n + 1 = 13 offsets for the single geometry.
    assert_eq!(pen.lines().count(), 14);
    let macro_table = fs::read_to_string(dir.join("b/macro_bounds.csv")).unwrap();
    assert_eq!(macro_table.lines().count(), 2);
}

#[test]
fn figures_validates_the_which_name() {
    let dir = scratch("which");
    let missing = run_in(&dir, &["figures"]);
    assert!(!missing.status.success());
    assert!(stderr(&missing).contains("penetrate20"), "{}", stderr(&missing));

    let unknown = run_in(&dir, &["figures", "--which", "nosuch"]);
    assert!(!unknown.status.success());
    assert!(stderr(&unknown).contains("unknown figure `nosuch`"), "{}", stderr(&unknown));
}

#[test]
fn canned_sweep_figures_have_the_published_shape() {
    let dir = scratch("canned");
    let out = run_in(&dir, &["figures", "--which", "penetrate20", "--out", "f"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let pen = fs::read_to_string(dir.join("f/penetrate20.csv")).unwrap();
    // 20 core half-widths x 5 edge weights x 4 Taylor orders x 41 offsets.
    assert_eq!(pen.lines().count(), 1 + 20 * 5 * 4 * 41);
    assert!(pen.lines().skip(1).all(|l| l.starts_with("20,")));

    let out = run_in(&dir, &["figures", "--which", "error1", "--out", "f"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let er = fs::read_to_string(dir.join("f/error1.csv")).unwrap();
    assert_eq!(er.lines().next().unwrap(), "n,a,n_minus_a,cos_ell,delta_t,q,e_max");
    // 204 geometries minus 32 degenerate ones, times 4 exchange intervals.
    assert_eq!(er.lines().count(), 1 + (204 - 32) * 4);
    // The degenerate skips go to standard error.
    assert!(stderr(&out).contains("skipped"), "{}", stderr(&out));
}

#[test]
fn eigenvector_figures_pick_four_modes_each() {
    let dir = scratch("eigfig");
    for (name, file) in
        [("nobuff", "nobuff.csv"), ("patch", "patch.csv"), ("action", "action.csv")]
    {
        let out = run_in(&dir, &["figures", "--which", name, "--out", "f"]);
        assert!(out.status.success(), "{name}: {}", stderr(&out));
        let text = fs::read_to_string(dir.join("f").join(file)).unwrap();
        // Four modes over the full patch, 41 points each, plus the header.
        assert_eq!(text.lines().count(), 1 + 4 * 41, "{name}");
    }
}

#[test]
fn gl2d_runs_from_config_with_flag_overrides() {
    let dir = scratch("gl2d");
    fs::write(
        dir.join("small.cfg"),
        "[gl]\ndomain_width = 5.0\nbig_h = 2.5\nn = 3\ndelta_t = 5e-3\nt_end = 0.02\n\
         seed = 7\nsnapshot_times = 0.01, 0.02\n\n[output]\ndir = from_file\n",
    )
    .unwrap();

    let meso = run_in(&dir, &["gl2d", "--config", "small.cfg"]);
    assert!(meso.status.success(), "{}", stderr(&meso));
    assert!(stdout(&meso).contains("4 exchange rounds"), "{}", stdout(&meso));
    assert!(dir.join("from_file/gl_macro.csv").exists());
    assert!(dir.join("from_file/gl_fields.csv").exists());

    // Same run again: byte-identical artifacts.
    let again = run_in(&dir, &["gl2d", "--config", "small.cfg", "--out", "again"]);
    assert!(again.status.success());
    assert_eq!(
        fs::read(dir.join("from_file/gl_macro.csv")).unwrap(),
        fs::read(dir.join("again/gl_macro.csv")).unwrap()
    );

    // Continuous coupling refreshes every micro step: 20 rounds, not 4.
    let cont = run_in(&dir, &["gl2d", "--config", "small.cfg", "--mode", "continuous"]);
    assert!(cont.status.success());
    assert!(stdout(&cont).contains("20 exchange rounds"), "{}", stdout(&cont));

    // A different seed changes the data.
    let reseeded = run_in(&dir, &["gl2d", "--config", "small.cfg", "--seed", "9", "--out", "s"]);
    assert!(reseeded.status.success());
    assert_ne!(
        fs::read(dir.join("from_file/gl_macro.csv")).unwrap(),
        fs::read(dir.join("s/gl_macro.csv")).unwrap()
    );
}

#[test]
fn comms_reports_the_closed_form_ledger() {
    let dir = scratch("comms");
    let out = run_in(&dir, &["comms", "--out", "c"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    // 4 x 4 periodic grid, 400 micro rounds vs 2 meso rounds.
    assert!(text.contains("micro cadence: 400 rounds, 25600 messages"), "{text}");
    assert!(text.contains("meso cadence:  2 rounds, 128 messages"), "{text}");
    assert!(text.contains("reduction factor: 200"), "{text}");

    let meso = fs::read_to_string(dir.join("c/comms_meso.csv")).unwrap();
    assert_eq!(meso.lines().next().unwrap(), "edge_src,edge_dst,messages,scalars,max_age");
    // 64 directed edges plus the header.
    assert_eq!(meso.lines().count(), 65);

    let ring = run_in(
        &dir,
        &["comms", "--topology", "ring", "--patches", "8", "--cadence", "meso", "--out", "r"],
    );
    assert!(ring.status.success());
    let ring_csv = fs::read_to_string(dir.join("r/comms_meso.csv")).unwrap();
    assert_eq!(ring_csv.lines().count(), 17);
    assert!(!dir.join("r/comms_micro.csv").exists());
}
