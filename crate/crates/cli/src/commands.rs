use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use daglattice::decode::{self, LengthSelect};
use daglattice::lattice::{self, LatticeFormat};
use daglattice::oracle::{self, ArgmaxMode, Enumerator};
use daglattice::{build_random, build_random_target, dp, pipeline, Error};
use serde_json::{json, Value};

use crate::report::{exit, matrix, num, tensor3, Failure, RunReport};
use crate::{inputs, FileFormat, LatticeTarget, OracleMode, StateSource, Strategy};

fn path_str(p: &Path) -> Value {
    json!(p.display().to_string())
}

fn one_based(vertices: &[usize]) -> Value {
    json!(vertices.iter().map(|v| v + 1).collect::<Vec<_>>())
}

fn with_files(command: &'static str, io: &LatticeTarget) -> RunReport {
    let mut report = RunReport::new(command);
    report
        .input("lattice", path_str(&io.lattice))
        .input("target", path_str(&io.target));
    report
}

pub fn validate(path: &Path) -> Result<RunReport, Failure> {
    let lattice = inputs::lattice(path, true)?;
    let result = daglattice::validate(&lattice);
    let mut report = RunReport::new("validate");
    report
        .input("lattice", path_str(path))
        .output("valid", result.is_valid())
        .output("graph_size", lattice.graph_size())
        .output("vocab_size", lattice.vocab_size())
        .output("hidden_dim", lattice.hidden_dim())
        .output(
            "violations",
            Value::Array(result.violations.iter().map(|v| json!(v.to_string())).collect()),
        );
    if result.is_valid() {
        Ok(report)
    } else {
        Err(Failure {
            report: Some(Box::new(report)),
            ..Failure::new(exit::SHAPE, format!("{} violation(s)", result.violations.len()))
        })
    }
}

pub fn generate(
    graph_size: usize,
    vocab_size: usize,
    hidden_dim: usize,
    seed: u64,
    out: &Path,
    format: Option<FileFormat>,
    target: Option<(usize, &Path)>,
) -> Result<RunReport, Failure> {
    if graph_size == 0 || vocab_size == 0 {
        return Err(Failure::new(
            exit::PARSE,
            "graph_size and vocab_size must be at least 1",
        ));
    }
    let format = match format {
        Some(FileFormat::Json) => LatticeFormat::Json,
        Some(FileFormat::Binary) => LatticeFormat::Binary,
        None => LatticeFormat::from_path(out),
    };
    let lattice = build_random(graph_size, vocab_size, hidden_dim, seed);
    lattice::save(&lattice, out, format)?;
    let mut report = RunReport::new("generate");
    report.seed = Some(seed);
    report
        .input("graph_size", graph_size)
        .input("vocab_size", vocab_size)
        .input("hidden_dim", hidden_dim)
        .output("lattice", path_str(out));
    if let Some((len, path)) = target {
        if len == 0 {
            return Err(Failure::new(exit::PARSE, "target_len must be at least 1"));
        }
        let tokens = build_random_target(len, vocab_size, seed.wrapping_add(1));
        std::fs::write(path, serde_json::to_vec(&tokens).expect("plain ids")).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        report.output("target", path_str(path));
    }
    Ok(report)
}

pub fn score(io: &LatticeTarget, skip: bool) -> Result<RunReport, Failure> {
    let lattice = inputs::lattice(&io.lattice, skip)?;
    let target = inputs::target(&io.target)?;
    let nll = dp::nll(&lattice, &target)?;
    let mut report = with_files("score", io);
    report.output("nll", num(nll)).output("log_marginal", num(-nll));
    if nll.is_finite() {
        Ok(report)
    } else {
        Err(Failure {
            report: Some(Box::new(report)),
            ..Failure::new(
                exit::INFEASIBLE,
                format!(
                    "no path of length {} exists in a lattice of {} vertices",
                    target.len(),
                    lattice.graph_size()
                ),
            )
        })
    }
}

pub fn posterior(io: &LatticeTarget, pairwise: bool, skip: bool) -> Result<RunReport, Failure> {
    let lattice = inputs::lattice(&io.lattice, skip)?;
    let target = inputs::target(&io.target)?;
    let table = dp::posterior(&lattice, &target, pairwise)?;
    let mut report = with_files("posterior", io);
    report
        .input("pairwise", pairwise)
        .output("log_marginal", num(table.log_marginal))
        .output("gamma", matrix(&table.gamma));
    if let Some(xi) = &table.xi {
        report.output("xi", tensor3(xi));
    }
    Ok(report)
}

pub fn expect(io: &LatticeTarget, skip: bool) -> Result<RunReport, Failure> {
    let lattice = inputs::lattice(&io.lattice, skip)?;
    let target = inputs::target(&io.target)?;
    let states = dp::expected_states(&lattice, &target)?;
    let mut report = with_files("expect", io);
    report.output("z", matrix(&states.z));
    Ok(report)
}

pub fn bestpath(io: &LatticeTarget, skip: bool) -> Result<RunReport, Failure> {
    let lattice = inputs::lattice(&io.lattice, skip)?;
    let target = inputs::target(&io.target)?;
    let best = decode::best_path(&lattice, &target)?;
    let mut report = with_files("bestpath", io);
    report
        .output("path", one_based(best.path.vertices()))
        .output("score", num(best.score));
    Ok(report)
}

pub fn glance(io: &LatticeTarget, tau: f64, seed: u64, skip: bool) -> Result<RunReport, Failure> {
    let lattice = inputs::lattice(&io.lattice, skip)?;
    let target = inputs::target(&io.target)?;
    let assignment = decode::glance_assign(&lattice, &target, tau, seed)?;
    let mut report = with_files("glance", io);
    report.seed = Some(seed);
    report
        .input("tau", num(tau))
        .output("path", one_based(assignment.path.vertices()))
        .output("observed_mask", json!(assignment.observed_mask))
        .output("unmasked", assignment.observed_mask.iter().filter(|&&b| b).count());
    Ok(report)
}

pub fn tau_schedule(step: u64, total_steps: u64, tau_start: f64, tau_end: f64) -> Result<RunReport, Failure> {
    let tau = decode::tau_schedule(step, total_steps, tau_start, tau_end)?;
    let mut report = RunReport::new("tau-schedule");
    report
        .input("step", step)
        .input("total_steps", total_steps)
        .input("tau_start", num(tau_start))
        .input("tau_end", num(tau_end))
        .output("tau", num(tau));
    Ok(report)
}

pub fn decode(
    path: &Path,
    strategy: Strategy,
    length_select: LengthSelect,
    max_steps: Option<usize>,
    skip: bool,
) -> Result<RunReport, Failure> {
    let lattice = inputs::lattice(path, skip)?;
    let result = match strategy {
        Strategy::Lookahead => decode::lookahead(&lattice, max_steps)?,
        Strategy::Viterbi => decode::joint_viterbi(&lattice, length_select)?,
    };
    let mut report = RunReport::new("decode");
    report.input("lattice", path_str(path));
    match strategy {
        Strategy::Lookahead => {
            report.input("strategy", "lookahead");
            if let Some(steps) = max_steps {
                report.input("max_steps", steps);
            }
        }
        Strategy::Viterbi => {
            report
                .input("strategy", "viterbi")
                .input("length_select", json!(length_select));
        }
    }
    report
        .output("path", one_based(result.path.vertices()))
        .output("tokens", json!(result.tokens))
        .output("length", result.path.len())
        .output("joint_logprob", num(result.joint_logprob))
        .output("truncated", result.truncated);
    Ok(report)
}

pub fn pipeline(
    io: &LatticeTarget,
    durations: &Path,
    states: StateSource,
    tts: Option<&Path>,
    mu: f64,
    skip: bool,
) -> Result<RunReport, Failure> {
    let lattice = inputs::lattice(&io.lattice, skip)?;
    let target = inputs::target(&io.target)?;
    let plan = inputs::durations(durations)?;
    let token_states = match states {
        StateSource::Expected => dp::expected_states(&lattice, &target)?.z,
        StateSource::Best => {
            let best = decode::best_path(&lattice, &target)?;
            pipeline::gather_path_states(&lattice, &best.path)?
        }
    };
    let frames = pipeline::length_regulate(token_states.view(), &plan)?;
    let mut report = with_files("pipeline", io);
    report
        .input("durations", path_str(durations))
        .input(
            "states",
            match states {
                StateSource::Expected => "expected",
                StateSource::Best => "best",
            },
        )
        .output("num_frames", frames.frames.nrows())
        .output("frames", matrix(&frames.frames));
    if let Some(tts_path) = tts {
        let (pred, gt) = inputs::tts(tts_path)?;
        let loss = pipeline::daspeech_loss(&lattice, &target, &pred, &gt, mu)?;
        report.input("tts", path_str(tts_path)).input("mu", num(mu)).output(
            "loss",
            json!({
                "nll": num(loss.nll),
                "l1": num(loss.tts.l1),
                "dur_mse": num(loss.tts.dur_mse),
                "pitch_mse": num(loss.tts.pitch_mse),
                "energy_mse": num(loss.tts.energy_mse),
                "tts_total": num(loss.tts.total),
                "combined": num(loss.combined),
            }),
        );
    }
    Ok(report)
}

pub fn gradcheck(io: &LatticeTarget, step: f64, tolerance: f64, skip: bool) -> Result<RunReport, Failure> {
    if step.is_nan() || step <= 0.0 {
        return Err(Failure::new(exit::PARSE, "step must be positive"));
    }
    let lattice = inputs::lattice(&io.lattice, skip)?;
    let target = inputs::target(&io.target)?;
    let check = oracle::check_gradient(&lattice, &target, step, 1e-8)?;
    let mut report = with_files("gradcheck", io);
    report
        .input("step", num(step))
        .input("tolerance", num(tolerance))
        .output("max_rel_error", num(check.max_rel_error))
        .output("max_abs_error", num(check.max_abs_error))
        .output("method", serde_json::to_value(check.method).expect("enum"))
        .output("entries_checked", check.entries_checked)
        .output("passed", check.max_rel_error <= tolerance);
    Ok(report)
}

pub fn oracle(
    path: &Path,
    target_path: Option<&Path>,
    mode: OracleMode,
    length: Option<usize>,
    cap: usize,
    skip: bool,
) -> Result<RunReport, Failure> {
    let lattice = inputs::lattice(path, skip)?;
    let target = target_path.map(inputs::target).transpose()?;
    let enumerator = Enumerator::new(cap);
    let mut report = RunReport::new("oracle");
    report.input("lattice", path_str(path)).input("cap", cap);
    if let Some(p) = target_path {
        report.input("target", path_str(p));
    }
    let need_target = || {
        target
            .as_ref()
            .ok_or_else(|| Failure::new(exit::PARSE, "this oracle mode needs --target"))
    };
    match mode {
        OracleMode::Logprob => {
            let target = need_target()?;
            let log_marginal = enumerator.logprob(&lattice, target)?;
            let count = enumerator.paths(lattice.graph_size(), target.len())?.paths.len();
            report
                .input("mode", "logprob")
                .output("log_marginal", num(log_marginal))
                .output("nll", num(-log_marginal))
                .output("num_paths", count);
        }
        OracleMode::Posterior => {
            let table = enumerator.posterior(&lattice, need_target()?)?;
            report
                .input("mode", "posterior")
                .output("log_marginal", num(table.log_marginal))
                .output("gamma", matrix(&table.gamma));
            if let Some(xi) = &table.xi {
                report.output("xi", tensor3(xi));
            }
        }
        OracleMode::Argmax => {
            report.input("mode", "argmax");
            let mode = match (&target, length) {
                (Some(t), _) => ArgmaxMode::Target(t),
                (None, Some(length)) => {
                    report.input("length", length);
                    ArgmaxMode::GreedyTokens { length }
                }
                (None, None) => return Err(Failure::new(exit::PARSE, "argmax needs --target or --length")),
            };
            let (best, tokens, score) = enumerator.argmax(&lattice, mode)?;
            report
                .output("path", one_based(best.vertices()))
                .output("tokens", json!(tokens))
                .output("score", num(score));
        }
    }
    Ok(report)
}

pub fn bench(
    sizes: &[usize],
    target_len: usize,
    repeats: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<RunReport, Failure> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Failure::new(exit::PARSE, "sizes must be positive"));
    }
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Failure::new(exit::PARSE, "sizes must be in ascending order"));
    }
    if target_len == 0 || repeats == 0 || vocab_size == 0 {
        return Err(Failure::new(
            exit::PARSE,
            "target-len, repeats and vocab-size must be at least 1",
        ));
    }
    let target = build_random_target(target_len, vocab_size, seed.wrapping_add(1));
    let mut rows = Vec::with_capacity(sizes.len());
    let mut prev_ms: Option<f64> = None;
    for &size in sizes {
        let lattice = build_random(size, vocab_size, 0, seed);
        black_box(dp::forward(&lattice, &target)?);
        let start = Instant::now();
        for _ in 0..repeats {
            black_box(dp::forward(black_box(&lattice), black_box(&target))?);
        }
        let mean_ms = start.elapsed().as_secs_f64() * 1e3 / repeats as f64;
        let ratio = prev_ms.map(|p| mean_ms / p);
        rows.push(json!({
            "L": size,
            "mean_ms": num(mean_ms),
            "ratio_to_prev": ratio.map_or(Value::Null, num),
        }));
        prev_ms = Some(mean_ms);
    }
    let mut report = RunReport::new("bench");
    report.seed = Some(seed);
    report
        .input("sizes", json!(sizes))
        .input("target_len", target_len)
        .input("repeats", repeats)
        .input("vocab_size", vocab_size)
        .output("rows", Value::Array(rows));
    Ok(report)
}
