//! Acceptance suite. Runs every shipped scenario through the `mfred` binary,
//! checks the artifacts against independent oracles where one exists, and
//! prints one line per criterion.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` are expected to fail; the suite
//! fails if one of them starts passing, so the list stays honest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use mfred_cli::output::stable_manifest;
use mfred_core::finite::{box_grid, eval_u, time_grid};
use mfred_core::ode::{IntegratorSpec, NewtonSpec};
use mfred_core::zoo::demo_finite_a;

/// The printed three-quarter form of the quadratic-family inequality has a
/// wrong cross coefficient and is violated by the model it is stated for.
const KNOWN_UNATTAINABLE: &[u32] = &[5];

struct Run {
    code: i32,
    secs: f64,
    dir: PathBuf,
}

impl Run {
    fn report(&self) -> Value {
        read_json(&self.dir.join("report.json"))
    }

    fn check(&self, name: &str) -> Value {
        self.report()["checks"]
            .as_array()
            .and_then(|cs| cs.iter().find(|c| c["name"] == name).cloned())
            .unwrap_or_else(|| panic!("{}: no check named `{name}`", self.dir.display()))
    }

    fn table(&self, name: &str) -> Table {
        Table::read(&self.dir.join(format!("{name}.csv")))
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Table {
        let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let header = r.headers().unwrap().iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.unwrap().iter().map(|c| c.parse::<f64>().unwrap()).collect())
            .collect();
        Table { header, rows }
    }

    fn col(&self, name: &str) -> Vec<f64> {
        let k = self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
        self.rows.iter().map(|r| r[k]).collect()
    }
}

fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run_scenario(name: &str, out: &Path) -> Run {
    let dir = out.join(name);
    let started = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_mfred"))
        .arg("run")
        .arg("--config")
        .arg(scenario_dir().join(format!("{name}.json")))
        .arg("--out")
        .arg(&dir)
        .arg("--quiet")
        .status()
        .expect("spawning mfred");
    Run {
        code: status.code().unwrap_or(-1),
        secs: started.elapsed().as_secs_f64(),
        dir,
    }
}

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: impl Into<String>) -> Line {
    Line {
        pass,
        detail: detail.into(),
    }
}

fn margin(check: &Value) -> f64 {
    check["worst_margin"].as_f64().unwrap_or(f64::NEG_INFINITY)
}

/// Generator of the linear characteristic system of demo-finite-A.
fn demo_a_generator() -> DMatrix<f64> {
    #[rustfmt::skip]
    let g = DMatrix::from_row_slice(4, 4, &[
        0.5, 0.5, 0.5, 0.5,
        0.5, 0.5, 0.5, 0.5,
        1.0, 1.0, 0.0, 0.0,
        1.0, 1.0, 0.0, 0.0,
    ]);
    g
}

/// Exact value of demo-finite-A: with `G` the generator of the linear
/// characteristic system and `S = [[1, 1], [1, 1]]`,
/// `U(t, x) = (E21 + E22 S)(E11 + E12 S)^{-1} x` for `E = exp(tG)`.
fn demo_a_value(t: f64, x: &[f64]) -> Vec<f64> {
    let e = (demo_a_generator() * t).exp();
    let s = DMatrix::from_element(2, 2, 1.0);
    let top = e.view((0, 0), (2, 2)) + e.view((0, 2), (2, 2)) * &s;
    let bottom = e.view((2, 0), (2, 2)) + e.view((2, 2), (2, 2)) * &s;
    let foot = top.lu().solve(&DVector::from_column_slice(x)).unwrap();
    (bottom * foot).iter().copied().collect()
}

fn demo_a_error(dt: f64, grid: &[Vec<f64>], times: &[f64]) -> f64 {
    let model = demo_finite_a();
    let spec = IntegratorSpec::rk4(dt);
    let mut worst: f64 = 0.0;
    for &t in times {
        for x in grid {
            let got = eval_u(&model, t, x, &spec, &NewtonSpec::default()).unwrap().u;
            for (a, b) in got.iter().zip(demo_a_value(t, x)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

fn criterion_1(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let r = run_scenario("c01-reduction-identity", out);
    let identity = margin(&r.check("reduction-identity(demo-finite-A)"));
    let refinement = r.check("rk4 refinement ratio >= 8");
    let grid = box_grid(-2.0, 2.0, 9, 2);
    let times = time_grid(1.0, 11);
    let exact_err = demo_a_error(1e-3, &grid, &times);
    let (coarse, fine) = (demo_a_error(0.05, &grid, &times), demo_a_error(0.025, &grid, &times));
    let ratio = coarse / fine;
    let pass = r.code == 0
        && -identity <= 1e-6
        && refinement["pass"] == true
        && exact_err <= 1e-6
        && ratio >= 8.0
        && r.secs < 10.0;
    let detail = format!(
        "identity {:.2e}, vs exact {exact_err:.2e}, oracle ratio {ratio:.2} (dt 0.05 -> 0.025), {:.1}s",
        -identity, r.secs
    );
    runs.insert("c01-reduction-identity".into(), r);
    line(pass, detail)
}

fn criterion_2(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let r = run_scenario("c02-fiber-evolution", out);
    let check = r.check("fiber-evolution");
    // Oracle: X(t) = (E11 + E12 S) x, so L dX(t) = L (E11 + E12 S)(x - x').
    let pairs = r.table("fiber_pairs");
    let mut worst: f64 = 0.0;
    for row in &pairs.rows {
        let d = [row[1] - row[3], row[2] - row[4]];
        for t in time_grid(1.0, 101) {
            // Columns of the flow applied to unit vectors, by linearity.
            let e1 = demo_a_flow(t, [1.0, 0.0]);
            let e2 = demo_a_flow(t, [0.0, 1.0]);
            let dx = [e1[0] * d[0] + e2[0] * d[1], e1[1] * d[0] + e2[1] * d[1]];
            worst = worst.max((dx[0] + dx[1]).abs());
        }
    }
    let pass = r.code == 0
        && check["pass"] == true
        && check["samples"] == 20
        && -margin(&check) <= 1e-8
        && worst <= 1e-8
        && pairs.rows.len() == 20
        && r.secs < 5.0;
    let detail = format!("sup |L dX| {:.2e}, exact {worst:.2e}, {:.2}s", -margin(&check), r.secs);
    runs.insert("c02-fiber-evolution".into(), r);
    line(pass, detail)
}

/// State part of the exact characteristic from `x`; no Newton involved.
fn demo_a_flow(t: f64, x: [f64; 2]) -> [f64; 2] {
    let s = x[0] + x[1];
    let y = (demo_a_generator() * t).exp() * DVector::from_vec(vec![x[0], x[1], s, s]);
    [y[0], y[1]]
}

fn criterion_3(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let r = run_scenario("c03-monotone-transfer", out);
    let reduced = r.check("monotone(demo-finite-A~)");
    let pair = r.check("pair-reduction(demo-finite-A)");
    let pass = r.code == 0
        && reduced["pass"] == true
        && pair["pass"] == true
        && reduced["samples"] == 10_000
        && margin(&reduced) >= -1e-10;
    let detail = format!("reduced model margin {:.3e} over {} pairs", margin(&reduced), reduced["samples"]);
    runs.insert("c03-monotone-transfer".into(), r);
    line(pass, detail)
}

fn criterion_4(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let pos = run_scenario("c04-power-conditions", out);
    let abc = pos.check("abc(demo-power)");
    let mono = pos.check("h-monotone(demo-power)");
    let neg_b = run_scenario("c04-negative-b", out);
    let neg_a = run_scenario("c04-negative-a", out);
    let wb = neg_b.check("abc(demo-power)")["witness"].clone();
    let wa = neg_a.check("abc(demo-power)")["witness"].clone();
    // Oracle for the second control: z^2 e^{-z} decreases for z > 2.
    let za: Vec<f64> = wa["points"][0]
        .as_array()
        .map(|p| p.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default();
    let decreasing = za.len() == 2 && za[0] > 2.0 && za[1] * za[1] * (-za[1]).exp() < za[0] * za[0] * (-za[0]).exp();
    let pass = pos.code == 0
        && abc["pass"] == true
        && margin(&abc) >= -1e-10
        && mono["pass"] == true
        && margin(&mono) >= -1e-10
        && mono["samples"] == 10_000
        && neg_b.code == 2
        && wb["label"] == "b not constant"
        && neg_a.code == 2
        && wa["label"] == "a z^{4(q-1)/q} decreasing"
        && decreasing;
    let detail = format!(
        "abc margin {:.1e}, h-monotone {:.2e}; controls: {}, {} at z {:?}",
        margin(&abc),
        margin(&mono),
        wb["label"],
        wa["label"],
        za
    );
    runs.insert("c04-power-conditions".into(), pos);
    runs.insert("c04-negative-b".into(), neg_b);
    runs.insert("c04-negative-a".into(), neg_a);
    line(pass, detail)
}

fn criterion_5(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let r = run_scenario("c05-quadratic-chain", out);
    let printed = r.check("quadratic chain (3/4 form)");
    let half = r.check("quadratic chain (1/2 form)");
    let mono = r.check("quadratic monotone");
    let pass = printed["pass"] == true && margin(&printed) >= -1e-10 && printed["samples"] == 10_000;
    let detail = format!(
        "3/4 form margin {:.3e}; 1/2 form {:.2e}; monotone {:.2e}",
        margin(&printed),
        margin(&half),
        margin(&mono)
    );
    runs.insert("c05-quadratic-chain".into(), r);
    line(pass, detail)
}

fn criterion_6(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let a = run_scenario("c06a-boundary-power", out);
    let b = run_scenario("c06b-boundary-quadratic", out);
    // The seed z = 0 sits on the boundary of the half line.
    let za = a.table("characteristics").col("Z0");
    let drift_a = za.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    // Parabola seeds: z2 = z1^2 / (2 z0) on the boundary.
    let tb = b.table("characteristics");
    let (z0, z1, z2) = (tb.col("Z0"), tb.col("Z1"), tb.col("Z2"));
    let drift_b = (0..z0.len()).fold(0.0f64, |m, k| m.max((z2[k] - z1[k] * z1[k] / (2.0 * z0[k])).abs()));
    let pass = a.code == 0 && b.code == 0 && drift_a <= 1e-10 && drift_b <= 1e-8;
    let detail = format!("power drift {drift_a:.2e}, quadratic drift {drift_b:.2e}");
    runs.insert("c06a-boundary-power".into(), a);
    runs.insert("c06b-boundary-quadratic".into(), b);
    line(pass, detail)
}

fn criterion_7(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let r = run_scenario("c07-moment-consistency", out);
    let t = r.table("moments");
    let (level, err) = (t.col("level"), t.col("error"));
    let sup = |l: f64| {
        level
            .iter()
            .zip(&err)
            .filter(|(k, _)| **k == l)
            .fold(0.0f64, |m, (_, e)| m.max(*e))
    };
    let (coarse, fine) = (sup(0.0), sup(1.0));
    let pass = r.code == 0 && coarse <= 1e-3 && fine < coarse && r.secs < 60.0;
    let detail = format!("sup error {coarse:.3e} -> {fine:.3e} under (dt, 1/M) halving, {:.1}s", r.secs);
    runs.insert("c07-moment-consistency".into(), r);
    line(pass, detail)
}

fn criterion_8(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let r = run_scenario("c08-controls-equivalence", out);
    let report = r.report();
    let updates = report["summary"]["updates"].as_u64().unwrap_or(u64::MAX);
    let equivalence = margin(&r.check("coupling equivalence"));
    let v = r.table("value");
    let (ts, xs, us) = (v.col("t"), v.col("x"), v.col("u"));
    let mut worst: f64 = 0.0;
    for k in 0..ts.len() {
        if xs[k].abs() <= 4.0 {
            let exact = xs[k] * xs[k] / (2.0 * (2.0 - ts[k]));
            worst = worst.max((us[k] - exact).abs());
        }
    }
    let pass = r.code == 0 && updates <= 2 && -equivalence <= 5e-3 && worst <= 1e-4;
    let detail = format!("{updates} picard updates, coupling gap {:.2e}, |u - exact| {worst:.2e}", -equivalence);
    runs.insert("c08-controls-equivalence".into(), r);
    line(pass, detail)
}

fn criterion_9(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let r = run_scenario("c09-reduced-closed-form", out);
    let t = r.table("reduced");
    let (ts, psi, z) = (t.col("t"), t.col("psi"), t.col("z"));
    let worst = ts
        .iter()
        .zip(&psi)
        .fold(0.0f64, |m, (t, p)| m.max((p - 1.0 / (1.0 + 0.5 * (1.0 - t))).abs()));
    let band = &r.report()["summary"]["band"];
    let (lo, hi) = (band["lower"].as_f64().unwrap_or(f64::NAN), band["upper"].as_f64().unwrap_or(f64::NAN));
    let slack = 1e-9 * (1.0 + hi);
    let inside = psi.iter().chain(&z).all(|v| *v >= lo - slack && *v <= hi + slack);
    let pass = r.code == 0 && worst <= 1e-8 && inside;
    let detail = format!("|psi - closed form| {worst:.2e}, band (c0, C0) = ({lo:.4}, {hi:.4})");
    runs.insert("c09-reduced-closed-form".into(), r);
    line(pass, detail)
}

fn criterion_10(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let small = run_scenario("c10-pq-small", out);
    let summary = small.report()["summary"].clone();
    let (c0, big_c0) = (
        summary["band"]["lower"].as_f64().unwrap_or(f64::NAN),
        summary["band"]["upper"].as_f64().unwrap_or(f64::NAN),
    );
    let guesses: Vec<f64> = summary["guesses"]
        .as_array()
        .map(|g| g.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default();
    let in_range = guesses.len() == 5 && guesses.iter().all(|g| *g >= 0.5 * c0 - 1e-12 && *g <= 2.0 * big_c0 + 1e-12);
    let t = small.table("runs");
    let (run, conv, psi, z, tr, det) = (t.col("run"), t.col("converged"), t.col("psi"), t.col("z"), t.col("trace"), t.col("det"));
    let per_run = run.iter().filter(|r| **r == 0.0).count();
    let mut spread: f64 = 0.0;
    for k in 0..run.len() {
        let i = k % per_run.max(1);
        spread = spread.max((psi[k] - psi[i]).abs()).max((z[k] - z[i]).abs());
    }
    let all_converged = conv.iter().all(|c| *c == 1.0);
    let negative = tr.iter().all(|v| *v < 0.0) && det.iter().all(|v| *v > 0.0);

    let large = run_scenario("c10b-pq-large", out);
    let report = large.report();
    let witness = &large.check("p=q uniqueness criterion")["witness"]["label"];
    let text = report.to_string().to_lowercase();
    let claims_nonunique = text.contains("non-unique") || text.contains("not unique");
    let pass = small.code == 0
        && in_range
        && all_converged
        && per_run > 0
        && run.len() == 5 * per_run
        && spread <= 1e-6
        && negative
        && large.code == 2
        && witness == "criterion fails"
        && !claims_nonunique;
    let detail = format!(
        "spread {spread:.2e} over 5 starts in [{:.3}, {:.3}], tr<0 det>0: {negative}; large delta: {witness}",
        0.5 * c0,
        2.0 * big_c0
    );
    runs.insert("c10-pq-small".into(), small);
    runs.insert("c10b-pq-large".into(), large);
    line(pass, detail)
}

/// Least-squares slope of `log e` against `log eps`.
fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn criterion_11(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let r = run_scenario("c11-noise-expansion", out);
    let t = r.table("expansion");
    let slope = log_log_slope(&t.col("eps"), &t.col("sup_error"));
    let pass = r.code == 0 && (1.8..=2.2).contains(&slope) && t.rows.len() == 5 && r.secs < 300.0;
    let detail = format!("log-log slope {slope:.3}, {:.0}s", r.secs);
    runs.insert("c11-noise-expansion".into(), r);
    line(pass, detail)
}

fn criterion_12(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let r = run_scenario("c12-noise-stability", out);
    let t = r.table("stability");
    let (gap, bound) = (t.col("gap"), t.col("bound"));
    let worst = gap.iter().zip(&bound).map(|(g, b)| g / b).fold(0.0f64, f64::max);
    let pass = r.code == 0 && t.rows.len() == 3 && worst <= 1.05;
    let detail = format!("max gap / bound {worst:.3} over {} magnitudes", t.rows.len());
    runs.insert("c12-noise-stability".into(), r);
    line(pass, detail)
}

/// Reruns every scenario and compares artifacts byte for byte; manifests
/// are compared without their clock fields.
fn criterion_13(out: &Path, runs: &mut BTreeMap<String, Run>) -> Line {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            if p.extension()? != "json" {
                return None;
            }
            Some(p.file_stem()?.to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    let second = out.join("rerun");
    let mut mismatches = Vec::new();
    let mut files = 0;
    for name in &names {
        if !runs.contains_key(name) {
            let first = run_scenario(name, out);
            runs.insert(name.clone(), first);
        }
        let a = &runs[name];
        let b = run_scenario(name, &second);
        if a.code != b.code {
            mismatches.push(format!("{name}: exit {} vs {}", a.code, b.code));
        }
        let mut entries: Vec<_> = std::fs::read_dir(&a.dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        entries.sort();
        for f in entries {
            files += 1;
            let (pa, pb) = (a.dir.join(&f), b.dir.join(&f));
            let same = if f == "manifest.json" {
                let ta = std::fs::read_to_string(&pa).unwrap();
                let tb = std::fs::read_to_string(&pb).unwrap_or_default();
                stable_manifest(&ta).ok() == stable_manifest(&tb).ok()
            } else {
                std::fs::read(&pa).ok() == std::fs::read(&pb).ok()
            };
            if !same {
                mismatches.push(format!("{name}/{}", f.to_string_lossy()));
            }
        }
    }
    let pass = mismatches.is_empty() && files > 0;
    let detail = if pass {
        format!("{} scenarios, {files} files identical", names.len())
    } else {
        format!("differ: {}", mismatches.join(", "))
    };
    line(pass, detail)
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes this
    // target skips it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let mut runs = BTreeMap::new();
    type Criterion = fn(&Path, &mut BTreeMap<String, Run>) -> Line;
    let criteria: [Criterion; 13] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
        criterion_11,
        criterion_12,
        criterion_13,
    ];
    let mut unexpected = Vec::new();
    for (k, c) in criteria.iter().enumerate() {
        let id = k as u32 + 1;
        let l = c(out, &mut runs);
        let known = KNOWN_UNATTAINABLE.contains(&id);
        let tag = match (l.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (unexpected)",
        };
        println!("criterion {id:>2}: {tag:<17} {}", l.detail);
        if l.pass == known {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("acceptance: unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
