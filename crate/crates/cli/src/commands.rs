//! One function per subcommand. Each writes its files under `out` and
//! returns the lines to print.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rgtn::discovery::{fourth_order_specs, success_rate, SpecResult, TrialSetup};
use rgtn::graph::save_structure;
use rgtn::io::{load_tensor, save_tensor};
use rgtn::metrics::{append_row, mpsnr, relative_error, ResultsRow, DEFAULT_PEAK};
use rgtn::synth::{add_noise, gen_mask, gen_structure, realize, synthetic_video};
use rgtn::tensor::frobenius_norm;
use rgtn::search::SearchOutcome;
use rgtn::{rg_search, trals, Init, Problem};

use crate::config::{RunConfig, SynthKind, METHODS};
use crate::error::CliError;

pub const TENSOR_FILE: &str = "tensor.rgt";
pub const MASK_FILE: &str = "mask.rgt";
pub const TRUTH_FILE: &str = "truth.json";
pub const STRUCTURE_FILE: &str = "structure.json";
pub const SIGNATURE_FILE: &str = "signature.json";
pub const REPORT_FILE: &str = "report.json";
pub const COMPLETED_FILE: &str = "completed.rgt";
pub const RESULTS_FILE: &str = "results.tsv";
pub const SUCCESS_FILE: &str = "success.tsv";
pub const TRIALS_FILE: &str = "trials.jsonl";

fn write_json(path: PathBuf, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn input_path(p: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    p.clone().ok_or_else(|| CliError::Config(format!("input.{key} is required")))
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let s = &cfg.synth;
    let mut lines = Vec::new();
    let clean = match s.kind {
        SynthKind::Network => {
            let truth = gen_structure(&s.truth.with_seed(cfg.seed))?;
            save_structure(out.join(TRUTH_FILE), &truth)?;
            realize(&truth)?
        }
        SynthKind::Video => synthetic_video(s.video_rank, cfg.seed)?,
    };
    let data = add_noise(&clean, s.noise_rel * frobenius_norm(&clean), cfg.seed ^ 0x5EED)?;
    save_tensor(out.join(TENSOR_FILE), &data)?;
    lines.push(format!("tensor {:?} seed {}", data.shape(), cfg.seed));
    if s.missing_fraction > 0.0 {
        let mask = gen_mask(data.shape(), s.missing_fraction, cfg.seed)?;
        save_tensor(out.join(MASK_FILE), &mask)?;
        lines.push(format!("mask {:?} missing {}", mask.shape(), s.missing_fraction));
    }
    Ok(lines)
}

/// Writes the structure, hardened signature and report of a finished
/// search. Returns the abort message when the search stopped early.
fn write_outcome(cfg: &RunConfig, out: &Path, outcome: &SearchOutcome) -> Result<Option<String>, CliError> {
    let tau = outcome.report.best_tau;
    save_structure(out.join(STRUCTURE_FILE), &outcome.best)?;
    write_json(out.join(SIGNATURE_FILE), &outcome.best.harden(cfg.search.eps_diag, cfg.search.delta_gate, tau)?)?;
    write_json(out.join(REPORT_FILE), &outcome.report)?;
    Ok(outcome.report.aborted.clone())
}

fn row(method: &str, cfg: &RunConfig, re_bound: Option<f64>, cr: f64, re: f64, mpsnr: Option<f64>, seconds: f64) -> ResultsRow {
    ResultsRow { method: method.into(), dataset: cfg.dataset.clone(), re_bound, cr, re, mpsnr, seconds }
}

fn search_problem(cfg: &RunConfig, with_mask: bool) -> Result<Problem, CliError> {
    let data = load_tensor(input_path(&cfg.input.tensor, "tensor")?)?;
    let mut p = Problem::full(data);
    if with_mask {
        p.mask = Some(load_tensor(input_path(&cfg.input.mask, "mask")?)?);
    }
    p.temporal_mode = cfg.input.temporal_mode;
    p.spatial_modes = cfg.input.spatial_modes;
    p.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(p)
}

pub fn search(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let p = search_problem(cfg, cfg.input.mask.is_some())?;
    let clock = Instant::now();
    let outcome = rg_search(&p, &cfg.search, Init::Preset)?;
    let seconds = clock.elapsed().as_secs_f64();
    let aborted = write_outcome(cfg, out, &outcome)?;
    let re = p.masked_relative_error(&outcome.best.reconstruct(outcome.report.best_tau)?);
    let cr = outcome.best.compression_ratio();
    append_row(out.join(RESULTS_FILE), &row("rgtn", cfg, None, cr, re, None, seconds))?;
    if let Some(msg) = aborted {
        return Err(CliError::Aborted(msg));
    }
    Ok(vec![format!("RE {re:.4e} CR {cr:.4}% in {seconds:.1}s")])
}

pub fn complete(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let p = search_problem(cfg, true)?;
    let clock = Instant::now();
    let outcome = rg_search(&p, &cfg.search, Init::Preset)?;
    let seconds = clock.elapsed().as_secs_f64();
    let aborted = write_outcome(cfg, out, &outcome)?;
    let x = outcome.best.reconstruct(outcome.report.best_tau)?;
    save_tensor(out.join(COMPLETED_FILE), &x)?;
    // the unobserved entries of the input are treated as ground truth
    let re = relative_error(&p.data, &x)?;
    let db = match p.temporal_mode {
        Some(t) => Some(mpsnr(&p.data, &x, t, DEFAULT_PEAK)?.mean_db.unwrap_or(f64::INFINITY)),
        None => None,
    };
    append_row(out.join(RESULTS_FILE), &row("rgtn", cfg, None, outcome.best.compression_ratio(), re, db, seconds))?;
    if let Some(msg) = aborted {
        return Err(CliError::Aborted(msg));
    }
    let mut line = format!("RE {re:.4e}");
    if let Some(db) = db {
        line.push_str(&format!(" MPSNR {db:.2} dB"));
    }
    line.push_str(&format!(" in {seconds:.1}s"));
    Ok(vec![line])
}

pub fn reveal(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let r = &cfg.reveal;
    let specs = if r.specs.is_empty() { fourth_order_specs(r.dims, cfg.seed) } else { r.specs.clone() };
    let setup = TrialSetup { trials: r.trials, rank_tol: r.rank_tol, noise_rel: r.noise_rel };
    let results: Vec<SpecResult> = success_rate(&specs, &setup, &cfg.search);
    let mut table = String::from("spec\ttrials\tmatches\tfraction\n");
    let mut log = String::new();
    let mut lines = Vec::new();
    for res in &results {
        table.push_str(&format!("{}\t{}\t{}\t{}\n", res.spec_id, res.trials, res.matches, res.fraction));
        lines.push(format!("{}: {}/{}", res.spec_id, res.matches, res.trials));
        for o in &res.outcomes {
            log.push_str(&serde_json::to_string(o).map_err(|e| CliError::Io(e.to_string()))?);
            log.push('\n');
        }
    }
    std::fs::write(out.join(SUCCESS_FILE), table)?;
    std::fs::write(out.join(TRIALS_FILE), log)?;
    Ok(lines)
}

pub fn compare(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let c = &cfg.compare;
    if let Some(bad) = c.methods.iter().find(|m| !METHODS.contains(&m.as_str())) {
        return Err(CliError::Config(format!("unknown method {bad:?}; expected one of {METHODS:?}")));
    }
    let p = search_problem(cfg, cfg.input.mask.is_some())?;
    let mut rows = Vec::new();
    for method in &c.methods {
        match method.as_str() {
            "rgtn" => {
                // one search serves every bound; the row records whether it met it
                let clock = Instant::now();
                let outcome = rg_search(&p, &cfg.search, Init::Preset)?;
                let seconds = clock.elapsed().as_secs_f64();
                if let Some(msg) = write_outcome(cfg, out, &outcome)? {
                    return Err(CliError::Aborted(msg));
                }
                let re = p.masked_relative_error(&outcome.best.reconstruct(outcome.report.best_tau)?);
                for &bound in &c.re_bounds {
                    rows.push(row("rgtn", cfg, Some(bound), outcome.best.compression_ratio(), re, None, seconds));
                }
            }
            _ => {
                for &bound in &c.re_bounds {
                    let clock = Instant::now();
                    let fit = trals::rank_schedule(&p, bound, c.max_rank, c.max_iters, c.tol, cfg.seed)?;
                    let seconds = clock.elapsed().as_secs_f64();
                    let (cr, re) = match fit {
                        Some((_, o)) => (o.report.cr_percent, o.report.re),
                        None => (f64::NAN, f64::NAN),
                    };
                    rows.push(row("trals", cfg, Some(bound), cr, re, None, seconds));
                }
            }
        }
    }
    let mut lines = Vec::new();
    for r in &rows {
        append_row(out.join(RESULTS_FILE), r)?;
        lines.push(format!("{} RE<={} CR {:.4}% RE {:.4e} {:.1}s", r.method, r.re_bound.unwrap_or(f64::NAN), r.cr, r.re, r.seconds));
    }
    Ok(lines)
}
