use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use microsim::fixture::{generate, FixtureSpec};
use microsim::manifest::without_timings;
use tempfile::TempDir;

fn fixture() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let spec = FixtureSpec {
        zones: 5,
        persons: 4000,
        survey: 500,
        seed: 11,
    };
    let fx = generate(dir.path(), &spec).unwrap();
    (dir, fx.config)
}

fn microsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microsim")).args(args).output().unwrap()
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "-q"];
    args.extend_from_slice(extra);
    microsim(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Scales one zone's rows of `variable` in the constraints file by `factor`.
fn perturb(config: &Path, variable: &str, zone: &str, factor: f64) {
    let path = config.with_file_name("constraints.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut out = String::new();
    for line in text.lines() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[0] == zone && cells[1] == variable {
            let v: f64 = cells[3].parse().unwrap();
            out.push_str(&format!("{},{},{},{}\n", cells[0], cells[1], cells[2], v * factor));
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out).unwrap();
}

#[test]
fn pipeline_writes_every_output() {
    let (dir, config) = fixture();
    let out = dir.path().join("out");
    let o = run("pipeline", &config, &out, &["--dump-weights"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    for f in [
        "consistency.csv",
        "population.csv",
        "convergence.csv",
        "weights.csv",
        "validation_internal.csv",
        "validation_external.csv",
        "validation_shares.csv",
        "scatter_sex_age.csv",
        "scatter_nace.csv",
        "indicators.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
        assert!(manifest.contains(&format!("output.{f}.sha256 = ")), "{f} not in manifest");
    }
    assert!(manifest.contains("seed = 2011\n"));
    assert!(manifest.contains("input.survey.sha256 = "));
    assert!(manifest.contains("convergence.converged = 5\n"));
    assert!(!fs::read_dir(&out).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));

    let indicators = fs::read_to_string(out.join("indicators.csv")).unwrap();
    for row in indicators.lines().skip(1) {
        let cells: Vec<&str> = row.split(',').collect();
        for rate in &cells[3..9] {
            if let Ok(x) = rate.parse::<f64>() {
                assert!((0.0..=1.0).contains(&x), "{row}");
            }
        }
        let (h, a, m0): (f64, f64, f64) = (cells[6].parse().unwrap(), cells[7].parse().unwrap(), cells[8].parse().unwrap());
        assert_eq!(m0, h * a);
    }
}

#[test]
fn reruns_are_identical() {
    let (dir, config) = fixture();
    let out = dir.path().join("out");
    assert_eq!(code(&run("pipeline", &config, &out, &[])), 0);
    let first = without_timings(&fs::read_to_string(out.join("manifest.txt")).unwrap());
    let pop = fs::read(out.join("population.csv")).unwrap();
    assert_eq!(code(&run("pipeline", &config, &out, &["--threads", "3"])), 0);
    assert_eq!(first, without_timings(&fs::read_to_string(out.join("manifest.txt")).unwrap()));
    assert_eq!(pop, fs::read(out.join("population.csv")).unwrap());

    // another seed keeps zone totals
    let other = dir.path().join("other");
    assert_eq!(code(&run("synthesize", &config, &other, &["--seed", "99"])), 0);
    let totals = |p: &Path| {
        let mut t = std::collections::BTreeMap::new();
        for l in fs::read_to_string(p).unwrap().lines().skip(1) {
            let c: Vec<&str> = l.split(',').collect();
            *t.entry(c[0].to_string()).or_insert(0u64) += c[2].parse::<u64>().unwrap();
        }
        t
    };
    assert_eq!(totals(&out.join("population.csv")), totals(&other.join("population.csv")));
}

#[test]
fn small_disagreement_warns_and_large_needs_override() {
    let (dir, config) = fixture();
    perturb(&config, "marital", "Z02", 0.98);
    let out = dir.path().join("out");
    let o = run("check", &config, &out, &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let issues = fs::read_to_string(out.join("consistency_issues.csv")).unwrap();
    assert!(issues.contains("zone_total_disagreement,,,Z02,"), "{issues}");
    // synthesis rescales to the first variable and carries on
    assert_eq!(code(&run("synthesize", &config, &out, &[])), 2);

    perturb(&config, "marital", "Z03", 0.9);
    let o = run("synthesize", &config, &out, &[]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&run("synthesize", &config, &out, &["--allow-inconsistent"])), 2);
}

#[test]
fn malformed_csv_reports_line() {
    let (dir, config) = fixture();
    let path = config.with_file_name("survey.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    text = text.replacen(",married,", ",wed,", 1);
    let line = text.lines().position(|l| l.contains(",wed,")).unwrap() + 1;
    fs::write(&path, text).unwrap();
    let o = run("pipeline", &config, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(&format!("line {line}")), "{}", stderr(&o));

    fs::write(config.with_file_name("constraints.csv"), "zone_id,variable,category,count\nZ01,sex_age,M20-29,abc\n")
        .unwrap();
    let o = run("check", &config, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn truncated_fitting_flags_non_convergence() {
    let (dir, config) = fixture();
    let out = dir.path().join("out");
    let o = run("synthesize", &config, &out, &["--max-iters", "1"]);
    assert_eq!(code(&o), 2);
    let conv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(conv.contains(",false"));
    assert_eq!(code(&run("synthesize", &config, &out, &["--max-iters", "1", "--strict"])), 1);
}

#[test]
fn stages_run_separately_and_compare() {
    let (dir, config) = fixture();
    let earlier = dir.path().join("earlier");
    let later = dir.path().join("later");
    assert_eq!(code(&run("synthesize", &config, &earlier, &[])), 0);
    assert_eq!(code(&run("indicators", &config, &earlier, &[])), 0);
    assert_eq!(code(&run("synthesize", &config, &later, &["--seed", "5"])), 0);
    assert_eq!(code(&run("validate", &config, &later, &[])), 0);
    assert!(later.join("validation_internal.csv").exists());
    let cmp = earlier.to_str().unwrap();
    assert_eq!(code(&run("indicators", &config, &later, &["--compare", cmp])), 0);
    let diff = fs::read_to_string(later.join("indicators_diff.csv")).unwrap();
    assert!(diff.starts_with("zone_id,metric,earlier,later,pct_change\n"));
    assert_eq!(diff.lines().filter(|l| l.starts_with("Z01,")).count(), 6);
    // an explicit population file
    let pop = earlier.join("population.csv");
    let o = run("indicators", &config, &dir.path().join("third"), &["--population", pop.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(earlier.join("indicators.csv")).unwrap(),
        fs::read(dir.path().join("third/indicators.csv")).unwrap()
    );
}

#[test]
fn missing_external_is_fine() {
    let (dir, config) = fixture();
    let text = fs::read_to_string(&config).unwrap();
    let text = text.replace("external = \"external.csv\"\n", "");
    fs::write(&config, text).unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&run("pipeline", &config, &out, &[])), 0);
    assert!(out.join("validation_internal.csv").exists());
    assert!(!out.join("validation_external.csv").exists());
}

#[test]
fn empty_zone_gives_missing_cells() {
    let (dir, config) = fixture();
    perturb(&config, "sex_age", "Z04", 0.0);
    perturb(&config, "marital", "Z04", 0.0);
    perturb(&config, "activity", "Z04", 0.0);
    perturb(&config, "education", "Z04", 0.0);
    let out = dir.path().join("out");
    let o = run("pipeline", &config, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ind = fs::read_to_string(out.join("indicators.csv")).unwrap();
    let row = ind.lines().find(|l| l.starts_with("Z04,")).unwrap();
    assert_eq!(row, "Z04,,,,,,,,,0");
    let pop = fs::read_to_string(out.join("population.csv")).unwrap();
    assert!(!pop.contains("Z04,"));
}

#[test]
fn config_problems() {
    let (dir, config) = fixture();
    let text = fs::read_to_string(&config).unwrap();
    fs::write(&config, format!("colour = 1\n{text}")).unwrap();
    let o = run("check", &config, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown config key 'colour'"));

    fs::write(&config, text.replace("tolerance = 1e-6", "tolerance = -1")).unwrap();
    assert_eq!(code(&run("check", &config, &dir.path().join("out"), &[])), 1);
    assert_eq!(code(&microsim(&["check"])), 2, "clap usage errors exit 2");
}

#[test]
fn generate_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let o = microsim(&["generate", "--out", out.to_str().unwrap(), "--zones", "3", "--persons", "900", "--survey", "200"]);
    assert_eq!(code(&o), 0);
    for f in ["config.toml", "constraints.csv", "survey.csv", "external.csv", "crosswalk.csv"] {
        assert!(out.join(f).exists());
    }
}
