//! Acceptance suite. Each criterion runs in turn and prints one line:
//! `PASS` or `FAIL`, its name, the measured quantity and the wall time.
//! The process exits non-zero if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use daglattice::decode::{self, LengthSelect};
use daglattice::oracle::{self, ArgmaxMode, FiniteDifferenceMethod};
use daglattice::pipeline::{self, AcousticFeatures, DurationPlan};
use daglattice::{build_random, build_random_target, dp, DagLattice, TargetSequence};
use ndarray::{Array1, Array2};
use serde_json::Value;

const TOL: f64 = 1e-9;

type Outcome = Result<String, String>;

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

/// A deterministic sweep over graphs with at most 8 vertices and targets of
/// at most 6 tokens, every one structurally feasible.
fn family(count: usize, hidden_dim: usize, salt: u64) -> Vec<(DagLattice, TargetSequence)> {
    (0..count)
        .map(|i| {
            let l = 1 + i % 8;
            let vocab = 1 + (i / 8) % 5;
            let (lo, hi) = if l == 1 { (1, 1) } else { (2, l.min(6)) };
            let spread = ((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 40) as usize;
            let m = lo + spread % (hi - lo + 1);
            let seed = salt.wrapping_mul(1_000_003).wrapping_add(i as u64);
            (
                build_random(l, vocab, hidden_dim, seed),
                build_random_target(m, vocab, seed ^ 0x5eed),
            )
        })
        .collect()
}

fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn likelihood() -> Outcome {
    let instances = family(240, 0, 1);
    let mut worst = 0.0_f64;
    for (lattice, target) in &instances {
        let nll = dp::nll(lattice, target).map_err(|e| e.to_string())?;
        let reference = -oracle::enumerate_logprob(lattice, target).map_err(|e| e.to_string())?;
        worst = worst.max((nll - reference).abs());
    }
    let detail = format!("{} instances, max |nll - oracle| = {worst:.3e}", instances.len());
    if worst <= TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn posterior() -> Outcome {
    let instances = family(240, 0, 2);
    let (mut gamma_dev, mut xi_dev, mut row_dev) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (lattice, target) in &instances {
        let post = dp::posterior(lattice, target, true).map_err(|e| e.to_string())?;
        let reference = oracle::enumerate_posterior(lattice, target).map_err(|e| e.to_string())?;
        gamma_dev = gamma_dev.max(max_abs_diff(&post.gamma, &reference.gamma));
        let (xi, ref_xi) = (post.xi.expect("requested"), reference.xi.expect("always built"));
        xi_dev = xi_dev.max(max_abs_diff(&xi, &ref_xi));
        for row in post.gamma.rows() {
            row_dev = row_dev.max((row.sum() - 1.0).abs());
        }
    }
    let detail = format!(
        "{} instances, gamma dev {gamma_dev:.3e}, xi dev {xi_dev:.3e}, row-sum dev {row_dev:.3e}",
        instances.len()
    );
    if gamma_dev <= TOL && xi_dev <= TOL && row_dev <= TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn expected_states() -> Outcome {
    let (mut dev, mut hull, mut count) = (0.0_f64, 0.0_f64, 0);
    for (d, salt) in [(1, 3), (3, 4), (8, 5)] {
        for (lattice, target) in family(80, d, salt) {
            let z = dp::expected_states(&lattice, &target).map_err(|e| e.to_string())?.z;
            let reference = oracle::Enumerator::default()
                .expected_states(&lattice, &target)
                .map_err(|e| e.to_string())?;
            dev = dev.max(max_abs_diff(&z, &reference));
            let states = lattice.hidden_states().expect("built with hidden states");
            for (c, column) in states.columns().into_iter().enumerate() {
                let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for &x in z.column(c) {
                    hull = hull.max(lo - x).max(x - hi);
                }
            }
            count += 1;
        }
    }
    let detail = format!("{count} instances, max dev {dev:.3e}, hull excess {hull:.3e}");
    if dev <= TOL && hull <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn best_path() -> Outcome {
    let instances = family(240, 0, 6);
    let (mut dev, mut mismatches) = (0.0_f64, 0);
    for (lattice, target) in &instances {
        let best = decode::best_path(lattice, target).map_err(|e| e.to_string())?;
        let (path, _, score) =
            oracle::enumerate_argmax(lattice, ArgmaxMode::Target(target)).map_err(|e| e.to_string())?;
        dev = dev.max((best.score - score).abs());
        if best.path != path {
            mismatches += 1;
        }
    }
    let detail = format!(
        "{} instances, max score dev {dev:.3e}, path mismatches {mismatches}",
        instances.len()
    );
    if dev <= TOL && mismatches == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient() -> Outcome {
    let instances = family(64, 0, 7);
    let (mut worst, mut entries) = (0.0_f64, 0);
    for (lattice, target) in &instances {
        let check = oracle::check_gradient(lattice, target, 1e-6, 1e-8).map_err(|e| e.to_string())?;
        if check.method != FiniteDifferenceMethod::Enumerated {
            return Err(format!("unexpected method {:?}", check.method));
        }
        worst = worst.max(check.max_rel_error);
        entries += check.entries_checked;
    }
    let detail = format!(
        "{} instances, {entries} entries, max rel error {worst:.3e}",
        instances.len()
    );
    if worst <= 1e-5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn joint_viterbi() -> Outcome {
    let mut slack = f64::NEG_INFINITY;
    let mut count = 0;
    for select in [LengthSelect::Normalized, LengthSelect::Raw] {
        for i in 0..64u64 {
            let l = 1 + (i % 8) as usize;
            let lattice = build_random(l, 1 + (i % 5) as usize, 0, 8_000 + i);
            let jv = decode::joint_viterbi(&lattice, select).map_err(|e| e.to_string())?;
            let (_, _, score) = oracle::enumerate_argmax(&lattice, ArgmaxMode::GreedyTokens { length: jv.path.len() })
                .map_err(|e| e.to_string())?;
            slack = slack.max(score - jv.joint_logprob);
            count += 1;
        }
    }
    let detail = format!("{count} instances, max oracle excess {slack:.3e}");
    if slack <= TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_vs_sum() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for salt in 1..=7 {
        for (lattice, target) in family(240, 0, salt) {
            let best = decode::best_path(&lattice, &target).map_err(|e| e.to_string())?;
            let nll = dp::nll(&lattice, &target).map_err(|e| e.to_string())?;
            worst = worst.max(best.score + nll);
            count += 1;
        }
    }
    let detail = format!("{count} instances, max (best + nll) = {worst:.3e}");
    if worst <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cli(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_daglattice"))
        .args(args)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn scaling() -> Outcome {
    let (code, stdout) = cli(&[
        "bench",
        "--sizes",
        "256,512,1024",
        "--target-len",
        "32",
        "--repeats",
        "5",
    ]);
    if code != 0 {
        return Err(format!("bench exited {code}"));
    }
    let report: Value = serde_json::from_slice(&stdout).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = report["outputs"]["rows"]
        .as_array()
        .ok_or("missing rows")?
        .iter()
        .filter_map(|row| row["ratio_to_prev"].as_f64())
        .collect();
    let detail = format!("ratios {ratios:.2?}");
    if ratios.len() == 2 && ratios.iter().all(|r| (3.0..=6.0).contains(r)) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism(dir: &Path) -> Outcome {
    let lattice = dir.join("det.dalt");
    let target = dir.join("det.json");
    let (l, t) = (lattice.to_str().unwrap(), target.to_str().unwrap());
    let (code, _) = cli(&[
        "generate",
        "--graph-size",
        "24",
        "--vocab-size",
        "7",
        "--seed",
        "99",
        "--out",
        l,
        "--target-len",
        "9",
        "--target-out",
        t,
    ]);
    if code != 0 {
        return Err(format!("generate exited {code}"));
    }
    let runs: Vec<Vec<&str>> = vec![
        vec!["decode", "--lattice", l, "--strategy", "lookahead"],
        vec!["decode", "--lattice", l, "--strategy", "lookahead", "--max-steps", "5"],
        vec![
            "decode",
            "--lattice",
            l,
            "--strategy",
            "viterbi",
            "--length-select",
            "normalized",
        ],
        vec![
            "decode",
            "--lattice",
            l,
            "--strategy",
            "viterbi",
            "--length-select",
            "raw",
        ],
        vec!["bestpath", "--lattice", l, "--target", t],
        vec!["glance", "--lattice", l, "--target", t, "--tau", "0.3", "--seed", "7"],
        vec![
            "glance",
            "--lattice",
            l,
            "--target",
            t,
            "--tau",
            "0.75",
            "--seed",
            "123",
        ],
        vec!["tau-schedule", "--step", "250", "--total-steps", "1000"],
    ];
    for args in &runs {
        let mut full = vec!["--no-timing"];
        full.extend(args);
        let (c1, first) = cli(&full);
        let (c2, second) = cli(&full);
        if c1 != 0 || c2 != 0 || first != second {
            return Err(format!("{} differs (exit {c1}/{c2})", args.join(" ")));
        }
    }
    Ok(format!("{} commands byte-identical across runs", runs.len()))
}

fn glance_contract() -> Outcome {
    let single = build_random(1, 10, 0, 5);
    let wide = build_random(12, 10, 0, 5);
    let mut checked = 0;
    for tenths in 0..=10usize {
        let tau = tenths as f64 / 10.0;
        for m in 1..=10usize {
            let want = (tenths * m).div_ceil(10);
            let got = decode::unmasked_count(tau, m);
            let target = build_random_target(m, 10, (tenths * 31 + m) as u64);
            let lattice = if m == 1 { &single } else { &wide };
            let assignment = decode::glance_assign(lattice, &target, tau, 17).map_err(|e| e.to_string())?;
            let revealed = assignment.observed_mask.iter().filter(|&&b| b).count();
            if got != want || revealed != want {
                return Err(format!("tau {tau}, M {m}: want {want}, count {got}, mask {revealed}"));
            }
            checked += 1;
        }
    }
    let start = decode::tau_schedule(0, 1000, 0.5, 0.1).map_err(|e| e.to_string())?;
    let end = decode::tau_schedule(1000, 1000, 0.5, 0.1).map_err(|e| e.to_string())?;
    let detail = format!("{checked} (tau, M) pairs exact, schedule endpoints {start} -> {end}");
    if start == 0.5 && end == 0.1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn features(m: usize, frames: usize, bins: usize, seed: u64) -> AcousticFeatures {
    let lattice = build_random(frames.max(m) + bins + 1, 1, frames.max(m) + bins, seed);
    let h = lattice.hidden_states().expect("hidden states");
    AcousticFeatures {
        mel: Array2::from_shape_fn((frames, bins), |(r, c)| h[[r, c]]),
        duration: Array1::from_shape_fn(m, |i| h[[i, bins]] * 3.0),
        pitch: Array1::from_shape_fn(m, |i| h[[i + 1, bins]]),
        energy: Array1::from_shape_fn(m, |i| h[[i, bins + 1]]),
    }
}

fn pipeline_arithmetic() -> Outcome {
    for seed in 0..1000u64 {
        let tokens = 1 + (seed % 12) as usize;
        let plan = DurationPlan(build_random_target(tokens, 6, seed).tokens().to_vec());
        let states = Array2::from_shape_fn((tokens, 3), |(i, j)| (i * 3 + j) as f64);
        let frames = pipeline::length_regulate(states.view(), &plan).map_err(|e| e.to_string())?;
        if frames.frames.nrows() != plan.0.iter().sum::<usize>() {
            return Err(format!("plan {:?} gave {} rows", plan.0, frames.frames.nrows()));
        }
    }

    let mut worst = 0.0_f64;
    for seed in 0..20u64 {
        let lattice = build_random(8, 5, 0, 600 + seed);
        let target = build_random_target(5, 5, 700 + seed);
        let pred = features(5, 11, 4, 800 + seed);
        let gt = features(5, 11, 4, 900 + seed);
        let mut combined = Vec::new();
        for mu in [0.0, 1.0, 5.0] {
            let loss = pipeline::daspeech_loss(&lattice, &target, &pred, &gt, mu).map_err(|e| e.to_string())?;
            worst = worst.max((loss.combined - (loss.nll + mu * loss.tts.total)).abs());
            combined.push(loss.combined);
        }
        let slope = combined[1] - combined[0];
        worst = worst.max((combined[2] - (combined[0] + 5.0 * slope)).abs());
    }
    let detail = format!("1000 plans exact, affinity dev {worst:.3e} over 20 instances");
    if worst <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("oracle likelihood", Box::new(likelihood)),
        ("oracle posterior", Box::new(posterior)),
        ("oracle expected states", Box::new(expected_states)),
        ("best path", Box::new(best_path)),
        ("gradient check", Box::new(gradient)),
        ("joint viterbi optimality", Box::new(joint_viterbi)),
        ("max vs sum", Box::new(max_vs_sum)),
        ("forward scaling", Box::new(scaling)),
        ("cli determinism", Box::new(|| determinism(dir.path()))),
        ("glance contract", Box::new(glance_contract)),
        ("pipeline arithmetic", Box::new(pipeline_arithmetic)),
    ];
    let mut failed = Vec::new();
    for (name, run) in &criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {detail} ({secs:.2}s)"),
            Err(detail) => {
                println!("FAIL  {name:<26} {detail} ({secs:.2}s)");
                failed.push(*name);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed.len(),
        criteria.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
