//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Replica counts and tolerances are pinned below. `BPRE_ACCEPT_SCALE`
//! divides every replica count (for quick local runs); the tolerances never
//! change. Criteria listed in `KNOWN_RED` are expected to fail at these sizes
//! and do not fail the process; any other failure does.

use std::cell::OnceCell;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bpre::branching::{lemma_checks, simulate_population, survival_quenched};
use bpre::enumerate::{fold_sequences, SeqView};
use bpre::oracle::{exact_conditional_pmf, exact_survival, exact_walk_functional};
use bpre::renewal::{grid, harmonic_check, harmonic_points, renewal_table, SeriesOptions, Side};
use bpre::survival::{conditioned_population, estimate_survival, ConditionOptions};
use bpre::tilting::{change_of_measure_check, solve_beta, tilted_env, DEFAULT_TOL};
use bpre::walk::{baxter_check, dual_path, estimate_walk_functional, prob_min_nonneg, WalkPath};
use bpre::{Atom, EnvironmentLaw, Error, Method, OffspringLaw, StreamSpec, TiltSolution};
use bpre_cli::{fill_defaults, run_verify, Cli, Command, Suite};
use clap::Parser;
use rand::Rng;

const SEED: u64 = 0x5eed_2026;

const C3_REPS: u64 = 1_000_000;
const C3_FIXTURES: usize = 40;
const C3_NS: [usize; 3] = [4, 8, 12];
const C3_Z: f64 = 3.0;
const PMF_ZMAX: usize = 256;
const C4_REPS: u64 = 400_000;
const C5_ENVS: usize = 100_000;
const C6_REPS: u64 = 1_000_000;
const LIMIT_REPS: u64 = 10_000_000;
const COND_REPS: u64 = 200_000;

/// Criteria that fail at the pinned sizes for reasons recorded in the
/// decisions notes; reported but not fatal.
const KNOWN_RED: &[u32] = &[12, 13];

struct Line {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

fn scale() -> u64 {
    std::env::var("BPRE_ACCEPT_SCALE")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&s: &u64| s >= 1)
        .unwrap_or(1)
}

fn reps(r: u64) -> u64 {
    (r / scale()).max(1000)
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn load(name: &str) -> EnvironmentLaw {
    EnvironmentLaw::from_file(&fixture(name)).expect("fixture loads")
}

fn z(est: f64, se: f64, exact: f64) -> f64 {
    let d = est - exact;
    if d == 0.0 {
        0.0
    } else if se > 0.0 {
        d / se
    } else {
        f64::INFINITY
    }
}

fn c1() -> (bool, String) {
    let env = load("pm1_env.json");
    let t0 = Instant::now();
    let sol = solve_beta(&env, DEFAULT_TOL).expect("solvable");
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    let db = (sol.beta - 0.5 * (7.0f64 / 3.0).ln()).abs();
    let dg = (sol.gamma - 2.0 * 0.21f64.sqrt()).abs();
    (
        db <= 1e-10 && dg <= 1e-10 && ms < 1.0,
        format!("|dbeta| = {db:.1e}, |dgamma| = {dg:.1e} (tol 1e-10), {ms:.3} ms (< 1 ms)"),
    )
}

fn c2() -> (bool, String) {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for name in ["reference_env.json", "mixed_env.json"] {
        let env = load(name);
        let sol = solve_beta(&env, DEFAULT_TOL).unwrap();
        let fs: [&(dyn Fn(&SeqView) -> f64 + Sync); 5] = [
            &|_| 1.0,
            &|v| if v.sums[1..].iter().all(|&s| s >= 0.0) { 1.0 } else { 0.0 },
            &|v| (0.5 * v.sums[v.sums.len() - 1]).exp(),
            &|v| v.sums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            &|v| survival_quenched(&env, v.atoms).value,
        ];
        for n in 1..=6 {
            for f in fs {
                let (l, r) = change_of_measure_check(&env, &sol, n, f).unwrap();
                worst = worst.max((l - r).abs());
                count += 1;
            }
        }
    }
    (worst <= 1e-10, format!("{count} identities, max |lhs - rhs| = {worst:.2e} (tol 1e-10)"))
}

fn random_law<R: Rng>(rng: &mut R) -> OffspringLaw {
    match rng.random_range(0..4) {
        0 => OffspringLaw::geometric(rng.random_range(0.3..0.8)).unwrap(),
        1 => OffspringLaw::binary(rng.random_range(0.1..0.9)).unwrap(),
        2 => OffspringLaw::poisson(rng.random_range(0.3..2.0)).unwrap(),
        _ => {
            let k = rng.random_range(2..=5);
            let mut p: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
            OffspringLaw::explicit(p).unwrap()
        }
    }
}

fn random_env<R: Rng>(rng: &mut R, atoms: usize) -> EnvironmentLaw {
    let mut w: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    let atoms = w
        .into_iter()
        .map(|weight| Atom {
            weight,
            law: random_law(rng),
        })
        .collect();
    EnvironmentLaw::new(atoms).unwrap()
}

/// Random env with a tilt root whose exact conditional pmf at length `n`
/// is available, so every estimator has an oracle.
fn oracle_env<R: Rng>(rng: &mut R, n: usize) -> EnvironmentLaw {
    loop {
        let k = rng.random_range(2..=3);
        let env = random_env(rng, k);
        let xs = env.log_means();
        let spread = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) > 0.0;
        if !(env.mean_log() < 0.0 && spread && env.annealed_mean() < 1.2 && solve_beta(&env, DEFAULT_TOL).is_ok()) {
            continue;
        }
        if env.all_linear_fractional() || exact_conditional_pmf(&env, n, PMF_ZMAX).is_ok() {
            return env;
        }
    }
}

fn c3() -> (bool, String) {
    let mut envs: Vec<(String, EnvironmentLaw)> = ["reference_env.json", "pm1_env.json", "binary_env.json", "mixed_env.json", "explicit_env.json"]
        .iter()
        .map(|n| (n.to_string(), load(n)))
        .collect();
    let mut rng = StreamSpec::new(SEED, "acceptance/fixtures").rng();
    while envs.len() < C3_FIXTURES {
        let i = envs.len();
        envs.push((format!("random{i}"), oracle_env(&mut rng, C3_NS[i % 3])));
    }
    let r = reps(C3_REPS);
    let mut comparisons = 0;
    let mut worst = (0.0f64, String::new());
    let mut fails = Vec::new();
    let mut skipped = 0;
    let mut record = |label: String, zv: f64, comparisons: &mut usize| {
        *comparisons += 1;
        if zv.abs() > worst.0 {
            worst = (zv.abs(), label.clone());
        }
        if zv.abs() > C3_Z {
            fails.push(format!("{label} z={zv:.2}"));
        }
    };
    for (i, (name, env)) in envs.iter().enumerate() {
        let n = C3_NS[i % 3];
        let s = StreamSpec::new(SEED, format!("acceptance/c3/{i}"));
        let sol = solve_beta(env, DEFAULT_TOL).unwrap_or_else(|_| TiltSolution::identity(env));
        let exact = exact_survival(env, n).unwrap().value;
        for m in [Method::Naive, Method::QuenchedCond, Method::TiltedIs] {
            let e = estimate_survival(env, &sol, n, r, m, &s.child(m.as_str())).unwrap();
            record(format!("{name}/n{n}/survival/{}", m.as_str()), z(e.value, e.stderr, exact), &mut comparisons);
        }
        let nonneg = |v: &SeqView| if v.sums[1..].iter().all(|&x| x >= 0.0) { 1.0 } else { 0.0 };
        let exact_l = exact_walk_functional(env, n, 0.0, "min-nonneg", nonneg).unwrap().value;
        let e = prob_min_nonneg(env, &sol, n, r, &s.child("lmin")).unwrap();
        record(format!("{name}/n{n}/min-nonneg"), z(e.value, e.stderr, exact_l), &mut comparisons);

        let f = |v: &SeqView| {
            let s = &v.sums[1..];
            if s.iter().all(|&x| x < 0.0) {
                s[s.len() - 1].exp()
            } else {
                0.0
            }
        };
        let exact_f = exact_walk_functional(env, n, 0.0, "exp-max-neg", f).unwrap().value;
        let e = estimate_walk_functional(env, n, 0.0, r, &s.child("walk"), |p: &WalkPath| {
            if p.upper() < 0.0 {
                p.end().exp()
            } else {
                0.0
            }
        });
        record(format!("{name}/n{n}/walk"), z(e.value, e.stderr, exact_f), &mut comparisons);

        // the kernel DP is quadratic in zmax, the mixture for linear-fractional laws is not
        let zmaxes: &[usize] = if env.all_linear_fractional() { &[4096] } else { &[PMF_ZMAX, 4 * PMF_ZMAX] };
        let pmf = zmaxes.iter().find_map(|&zmax| match exact_conditional_pmf(env, n, zmax) {
            Ok(p) => Some(p),
            Err(Error::TailMass { .. }) => None,
            Err(e) => panic!("{name}: {e}"),
        });
        let Some(pmf) = pmf else {
            skipped += 1;
            continue;
        };
        let sample = conditioned_population(env, &sol, n, r, &ConditionOptions::default(), &s.child("pmf"), |d| d.z[n]).unwrap();
        let (p1, p1_se) = sample.mean_with_stderr(|&zn| (zn == 1) as u8 as f64);
        record(format!("{name}/n{n}/pmf.z1"), z(p1, p1_se, pmf.pmf[1]), &mut comparisons);
        let (m, m_se) = sample.mean_with_stderr(|&zn| zn as f64);
        record(format!("{name}/n{n}/pmf.mean"), z(m, m_se, pmf.mean), &mut comparisons);
    }
    let mut detail = format!(
        "{} fixtures, {comparisons} comparisons at reps={r}, max |z| = {:.2} ({}), {} conditional-pmf oracles unavailable",
        envs.len(),
        worst.0,
        worst.1,
        skipped
    );
    if !fails.is_empty() {
        detail.push_str(&format!("; beyond {C3_Z} sigma: {}", fails.join(", ")));
    }
    (fails.is_empty(), detail)
}

fn c4() -> (bool, String) {
    let env = load("mixed_env.json");
    let n = 6;
    let r = reps(C4_REPS);
    let s = StreamSpec::new(SEED, "acceptance/c4");
    let mut rng = s.child("env").rng();
    let seq = env.sample_environment(n, &mut rng);
    let s_n: f64 = seq.iter().map(|&a| env.log_means()[a]).sum();
    let (mut q, mut a) = (bpre::stats::MeanAcc::new(), bpre::stats::MeanAcc::new());
    let mut rng = s.child("quenched").rng();
    for _ in 0..r {
        let p = simulate_population(&env, &seq, u64::MAX / 4, &mut rng).unwrap();
        q.push(p.z.get(n).copied().unwrap_or(0) as f64);
    }
    let mut rng = s.child("annealed").rng();
    for _ in 0..r {
        let e = env.sample_environment(n, &mut rng);
        let p = simulate_population(&env, &e, u64::MAX / 4, &mut rng).unwrap();
        a.push(p.z.get(n).copied().unwrap_or(0) as f64);
    }
    let zq = z(q.mean, q.stderr(), s_n.exp());
    let za = z(a.mean, a.stderr(), env.annealed_mean().powi(n as i32));
    (
        zq.abs() <= 4.0 && za.abs() <= 4.0,
        format!("quenched z = {zq:.2}, annealed z = {za:.2} (|z| <= 4, n = {n}, reps = {r})"),
    )
}

fn c5() -> (bool, String) {
    let mut rng = StreamSpec::new(SEED, "acceptance/c5").rng();
    let count = (C5_ENVS as u64 / scale()).max(1000) as usize;
    let (mut first, mut lemma) = (0, 0);
    for _ in 0..count {
        let k = rng.random_range(1..=4);
        let env = random_env(&mut rng, k);
        let n = rng.random_range(1..=60);
        let seq = env.sample_environment(n, &mut rng);
        let q = survival_quenched(&env, &seq);
        let mut sum = 0.0;
        let mut low: f64 = 0.0;
        for &i in &seq {
            sum += env.log_means()[i];
            low = low.min(sum);
        }
        if q.log_value > low + 1e-12 * low.abs().max(1.0) {
            first += 1;
        }
        let s = rng.random_range(0.001..0.999);
        if !lemma_checks(&env, &seq, s, 1e-12).unwrap().passed() {
            lemma += 1;
        }
    }
    (
        first == 0 && lemma == 0,
        format!("{count} environments: first-moment violations {first}, lemma/Agresti violations {lemma}"),
    )
}

fn c6() -> (bool, String) {
    let ssrw = load("ssrw_env.json");
    let r = reps(C6_REPS);
    let s = StreamSpec::new(SEED, "acceptance/c6");
    let opts = SeriesOptions::new(4096, r);
    let xs: Vec<f64> = (0..=5).map(f64::from).collect();
    let u = renewal_table(&ssrw, Side::U, &xs, opts, &s.child("u")).unwrap();
    let mut zu: f64 = 0.0;
    for (i, &x) in u.x.iter().enumerate() {
        let spread = u.stderr[i] + u.truncation_bar[i];
        zu = zu.max(z(u.estimate[i], spread, x + 1.0).abs());
    }
    let v0 = renewal_table(&ssrw, Side::V, &[0.0], opts, &s.child("v0")).unwrap();
    let unit = u.estimate[0] == 1.0 && v0.estimate[0] == 1.0;
    let mut zh: f64 = 0.0;
    let mut points = 0;
    let reference = load("reference_env.json");
    let tilted = tilted_env(&reference, &solve_beta(&reference, DEFAULT_TOL).unwrap()).unwrap();
    for (label, env) in [("ssrw", &ssrw), ("reference", &tilted)] {
        for side in [Side::U, Side::V] {
            let g = grid(side, 5.0, 1.0);
            let pts = harmonic_points(env, side, &g);
            let t = renewal_table(env, side, &pts, opts, &s.child(&format!("h/{label}/{side:?}"))).unwrap();
            for &x in &g {
                if side == Side::V && x == 0.0 {
                    // v is harmonic only strictly inside the half-line
                    continue;
                }
                zh = zh.max(harmonic_check(env, x, &t).z.abs());
                points += 1;
            }
        }
    }
    (
        zu <= 3.0 && zh <= 4.0 && unit,
        format!("u(x) = x+1 max |z| = {zu:.2} (<= 3), harmonic max |z| = {zh:.2} over {points} points (<= 4), u(0) = {}, v(0) = {}", u.estimate[0], v0.estimate[0]),
    )
}

fn c7() -> (bool, String) {
    let b = baxter_check(&load("ssrw_env.json"), 1.0, 0.5, 16).unwrap();
    (b.gap <= 2e-3, format!("gap = {:.3e} (<= 2e-3), lhs = {:.6}, rhs = {:.6}", b.gap, b.lhs, b.rhs))
}

fn c8() -> (bool, String) {
    let mut paths = 0u64;
    let mut mismatch = 0u64;
    for n in 1..=12usize {
        for mask in 0u32..(1 << n) {
            let inc: Vec<f64> = (0..n).map(|k| if mask >> k & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let p = WalkPath::from_increments(0.0, inc);
            let d = dual_path(&p).unwrap();
            if (d.upper() < 0.0) != (p.tau() == n) {
                mismatch += 1;
            }
            paths += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for name in ["pm1_env.json", "ssrw_env.json"] {
        let env = load(name);
        for n in 1..=12 {
            let lhs = fold_sequences(&env, n, 0.0, 1e7, || 0.0, |a, v| {
                if v.sums[1..].iter().all(|&s| s < 0.0) {
                    *a += v.weight * v.sums[n].exp();
                }
            }, |a, b| *a += b)
            .unwrap();
            let rhs = fold_sequences(&env, n, 0.0, 1e7, || 0.0, |a, v| {
                if v.sums[..n].iter().all(|&s| s > v.sums[n]) {
                    *a += v.weight * v.sums[n].exp();
                }
            }, |a, b| *a += b)
            .unwrap();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    (
        mismatch == 0 && worst <= 1e-12,
        format!("{paths} sign paths, {mismatch} event mismatches; max functional gap {worst:.1e} (tol 1e-12)"),
    )
}

fn verify(suites: &[Suite]) -> Vec<bpre::harness::Check> {
    let r = reps(LIMIT_REPS).to_string();
    let cr = reps(COND_REPS).to_string();
    let env_path = fixture("reference_env.json");
    let mut argv = vec!["bpre".to_string(), "--env".into(), env_path.display().to_string(), "--seed".into(), SEED.to_string(), "--reps".into(), r];
    argv.extend(["verify".into(), "--cond-reps".into(), cr]);
    let cli = fill_defaults(Cli::try_parse_from(argv).unwrap());
    let Command::Verify(v) = &cli.command else { unreachable!() };
    let env = EnvironmentLaw::from_file(&env_path).unwrap();
    run_verify(&env, &cli.global, v, suites).unwrap().checks
}

fn summarize(checks: &[bpre::harness::Check], names: &[&str]) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for want in names {
        let c = checks
            .iter()
            .find(|c| c.name == *want)
            .unwrap_or_else(|| panic!("check {want} missing"));
        pass &= c.pass;
        parts.push(format!(
            "{} {} {:.4} vs {:.4}",
            c.name,
            if c.pass { "ok" } else { "FAILED" },
            c.statistic,
            c.threshold
        ));
    }
    (pass, parts.join("; "))
}

fn c14() -> (bool, String) {
    let bin = env!("CARGO_BIN_EXE_bpre");
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first/");
    let second = dir.path().join("second/");
    let env = fixture("reference_env.json");
    let status = std::process::Command::new(bin)
        .env("BPRE_LOG", "error")
        .args(["--env", env.to_str().unwrap(), "--reps", "20000", "--out"])
        .arg(format!("{}/", first.display()))
        .args(["verify", "--suite", "all"])
        .status()
        .unwrap();
    let replay = std::process::Command::new(bin)
        .env("BPRE_LOG", "error")
        .arg("replay")
        .arg("--from")
        .arg(first.join("manifest.json"))
        .arg("--out")
        .arg(format!("{}/", second.display()))
        .status()
        .unwrap();
    let mut files: Vec<_> = std::fs::read_dir(&first)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|f| f != "manifest.json")
        .collect();
    files.sort();
    let mut differ = Vec::new();
    for f in &files {
        let a = std::fs::read(first.join(f)).unwrap();
        let b = std::fs::read(second.join(f)).unwrap_or_default();
        if a != b {
            differ.push(f.to_string_lossy().into_owned());
        }
    }
    let same_code = status.code() == replay.code();
    (
        same_code && differ.is_empty() && !files.is_empty(),
        format!(
            "{} output files compared, {} differ, exit codes {:?}/{:?}",
            files.len(),
            differ.len(),
            status.code(),
            replay.code()
        ),
    )
}

fn main() {
    let mut lines: Vec<Line> = Vec::new();
    let mut run = |id: u32, title: &'static str, f: &dyn Fn() -> (bool, String)| {
        let t0 = Instant::now();
        let (pass, detail) = f();
        let line = Line {
            id,
            title,
            pass,
            detail,
            secs: t0.elapsed().as_secs_f64(),
        };
        println!(
            "{} [{:02}] {}: {} ({:.1} s){}",
            if line.pass { "PASS" } else { "FAIL" },
            line.id,
            line.title,
            line.detail,
            line.secs,
            if !line.pass && KNOWN_RED.contains(&line.id) { " [known red]" } else { "" }
        );
        lines.push(line);
    };
    if scale() > 1 {
        println!("note: replica counts divided by BPRE_ACCEPT_SCALE = {}", scale());
    }
    run(1, "tilt closed form", &c1);
    run(2, "change of measure", &c2);
    run(3, "oracle equivalence", &c3);
    run(4, "quenched and annealed means", &c4);
    run(5, "inequality suite", &c5);
    run(6, "renewal and harmonic", &c6);
    run(7, "Baxter identity", &c7);
    run(8, "duality", &c8);
    // suites are computed inside the first criterion that needs them, so its time includes them
    let limit = OnceCell::new();
    let limit = || limit.get_or_init(|| verify(&[Suite::Theorem1, Suite::Corollary]));
    run(9, "Theorem 1 stabilization", &|| {
        summarize(limit(), &["theorem1.stabilization", "theorem1.kappa_positive", "theorem1.anchor"])
    });
    run(10, "Corollary scaling", &|| summarize(limit(), &["corollary.stabilization", "corollary.consistency"]));
    let cond = OnceCell::new();
    let cond = || cond.get_or_init(|| verify(&[Suite::Theorem2, Suite::Theorem3]));
    run(11, "Theorem 2 conditional law", &|| {
        summarize(cond(), &["theorem2.tv_decreasing", "theorem2.moment_bounded", "theorem2.anchor"])
    });
    run(12, "Theorem 3 flatness", &|| summarize(cond(), &["theorem3.median_decreasing", "theorem3.w_positive"]));
    run(13, "Prop 2.1 scaling", &|| {
        summarize(
            &verify(&[Suite::Prop21]),
            &["prop21.stabilization.x0", "prop21.level.x0", "prop21.stabilization.x2", "prop21.level.x2"],
        )
    });
    run(14, "manifest replay determinism", &c14);

    let unexpected: Vec<u32> = lines
        .iter()
        .filter(|l| !l.pass && !KNOWN_RED.contains(&l.id))
        .map(|l| l.id)
        .collect();
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("acceptance: {passed}/{} criteria pass; unexpected failures: {unexpected:?}", lines.len());
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
