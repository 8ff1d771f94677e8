//! Experiment harness: run configuration and the `dp`, `duality`, `sample`,
//! `strategy` and `metrics` commands.
//!
//! Every command writes CSV files and a plain-text summary into the output
//! directory. Summaries start with the full configuration, one `# key=value`
//! line per setting, so that (config, seed) identifies every output byte.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use pathdual::dp::{DpTolerance, History, ValueModel};
use pathdual::functionals::{builtin_terminal, eval_fn, ExperimentParams, TerminalFunction};
use pathdual::measure::{make_choice_tables, map_sample_range, write_bookkeeping, ChoiceTables, MeasureConfig, Termination};
use pathdual::paths::{hausdorff_distance, uniform_distance, Absorption, Path, PathBuilder};
use pathdual::stochastics::{mix64, sample_scaled_bm, Estimate, QvMode, RngStream};
use pathdual::strategy::{run_capital, GridHedge, PathOutcome, SuperhedgeReport, SwitchingWalk};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("{key}={value}: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("{key}={value}: at least 100 samples are needed for a standard error")]
    TooFewSamples { key: &'static str, value: usize },
}

/// All settings of one run. Parsed from `key=value` lines; `#` starts a
/// comment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub terminal: String,
    /// Clamp level `B`.
    pub clamp: f64,
    pub s: f64,
    pub n: usize,
    pub l: usize,
    pub g: usize,
    pub eps: f64,
    pub seed: u64,
    pub m_measure: usize,
    pub m_strategy: usize,
    pub m_sample: usize,
    pub synthetic_paths: usize,
    pub metric_pairs: usize,
    pub resolution: f64,
    pub margin_frac: f64,
    pub n_steps: usize,
    pub quantile_samples: usize,
    pub quantile_seed: u64,
    pub run_logs: usize,
    /// Path CSV file or directory for `strategy`; measure samples if unset.
    pub paths: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = MeasureConfig::default();
        Self {
            terminal: "capped_max".into(),
            clamp: 2.0,
            s: 1.0,
            n: 2,
            l: 64,
            g: 16,
            eps: 0.05,
            seed: 1,
            m_measure: 100_000,
            m_strategy: 10_000,
            m_sample: 100,
            synthetic_paths: 1000,
            metric_pairs: 1000,
            resolution: 1e-3,
            margin_frac: 0.05,
            n_steps: m.n_steps,
            quantile_samples: m.quantile_samples,
            quantile_seed: m.quantile_seed,
            run_logs: 10,
            paths: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue { key: key.into(), value: value.into(), msg: e.to_string() })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: idx + 1, text: raw.into() })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Ok(Self::parse(&text)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "terminal" => self.terminal = value.into(),
            "clamp" => self.clamp = parse_value(key, value)?,
            "s" => self.s = parse_value(key, value)?,
            "n" => self.n = parse_value(key, value)?,
            "l" => self.l = parse_value(key, value)?,
            "g" => self.g = parse_value(key, value)?,
            "eps" => self.eps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "m_measure" => self.m_measure = parse_value(key, value)?,
            "m_strategy" => self.m_strategy = parse_value(key, value)?,
            "m_sample" => self.m_sample = parse_value(key, value)?,
            "synthetic_paths" => self.synthetic_paths = parse_value(key, value)?,
            "metric_pairs" => self.metric_pairs = parse_value(key, value)?,
            "resolution" => self.resolution = parse_value(key, value)?,
            "margin_frac" => self.margin_frac = parse_value(key, value)?,
            "n_steps" => self.n_steps = parse_value(key, value)?,
            "quantile_samples" => self.quantile_samples = parse_value(key, value)?,
            "quantile_seed" => self.quantile_seed = parse_value(key, value)?,
            "run_logs" => self.run_logs = parse_value(key, value)?,
            "paths" => self.paths = (!value.is_empty()).then(|| PathBuf::from(value)),
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("terminal", self.terminal.clone()),
            ("clamp", format!("{:?}", self.clamp)),
            ("s", format!("{:?}", self.s)),
            ("n", self.n.to_string()),
            ("l", self.l.to_string()),
            ("g", self.g.to_string()),
            ("eps", format!("{:?}", self.eps)),
            ("seed", self.seed.to_string()),
            ("m_measure", self.m_measure.to_string()),
            ("m_strategy", self.m_strategy.to_string()),
            ("m_sample", self.m_sample.to_string()),
            ("synthetic_paths", self.synthetic_paths.to_string()),
            ("metric_pairs", self.metric_pairs.to_string()),
            ("resolution", format!("{:?}", self.resolution)),
            ("margin_frac", format!("{:?}", self.margin_frac)),
            ("n_steps", self.n_steps.to_string()),
            ("quantile_samples", self.quantile_samples.to_string()),
            ("quantile_seed", self.quantile_seed.to_string()),
            ("run_logs", self.run_logs.to_string()),
            ("paths", self.paths.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
        ]
    }

    /// `# key=value` lines for report headers.
    pub fn header(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, value) in [("m_measure", self.m_measure), ("m_strategy", self.m_strategy)] {
            if value < 100 {
                return Err(ConfigError::TooFewSamples { key, value });
            }
        }
        let bad = |key: &str, value: String, msg: &str| Err(ConfigError::BadValue { key: key.into(), value, msg: msg.into() });
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return bad("resolution", self.resolution.to_string(), "must be positive");
        }
        if !(self.margin_frac >= 0.0 && self.margin_frac.is_finite()) {
            return bad("margin_frac", self.margin_frac.to_string(), "must be non-negative");
        }
        if self.n_steps == 0 {
            return bad("n_steps", "0".into(), "must be positive");
        }
        if self.quantile_samples == 0 {
            return bad("quantile_samples", "0".into(), "must be positive");
        }
        Ok(())
    }

    pub fn terminal_function(&self) -> Result<TerminalFunction> {
        Ok(builtin_terminal(&self.terminal, self.clamp, self.n)?)
    }

    pub fn params(&self) -> Result<ExperimentParams> {
        let t = self.terminal_function()?;
        Ok(ExperimentParams::derive(self.s, self.n, self.l, self.eps, self.g, &t)?)
    }

    pub fn model(&self) -> Result<Arc<ValueModel>> {
        self.validate()?;
        let t = self.terminal_function()?;
        let params = ExperimentParams::derive(self.s, self.n, self.l, self.eps, self.g, &t)?;
        Ok(Arc::new(ValueModel::new(t, params)?))
    }

    pub fn measure_config(&self) -> MeasureConfig {
        MeasureConfig { n_steps: self.n_steps, quantile_samples: self.quantile_samples, qv_mode: QvMode::Exact, quantile_seed: self.quantile_seed }
    }

    fn hedge(&self, model: Arc<ValueModel>, tol: &DpTolerance) -> GridHedge {
        let margin = self.margin_frac * model.terminal().bound() + tol.total;
        GridHedge::with_margin(model, margin)
    }
}

/// Seed of an auxiliary sample family, decorrelated from the measure streams.
fn family_seed(seed: u64, family: u64) -> u64 {
    mix64(seed ^ mix64(family))
}

const SYNTHETIC_FAMILY: u64 = 1;
const METRIC_FAMILY: u64 = 2;

fn create(out: &FsPath, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_summary(out: &FsPath, name: &str, cfg: &RunConfig, body: &str) -> Result<()> {
    let mut w = create(out, name)?;
    w.write_all(cfg.header().as_bytes())?;
    w.write_all(body.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn write_quantities(out: &FsPath, name: &str, rows: &[(&str, f64)]) -> Result<()> {
    let mut w = create(out, name)?;
    writeln!(w, "quantity,value")?;
    for (k, v) in rows {
        writeln!(w, "{k},{v:?}")?;
    }
    w.flush()?;
    Ok(())
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub stage: usize,
    pub x: f64,
    pub v: f64,
    pub continuous: f64,
    pub walk: f64,
    pub gap: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpReport {
    pub ue0: f64,
    pub tolerance: DpTolerance,
    pub gaps: Vec<GapRow>,
    pub slices: usize,
    pub passed: bool,
    pub summary: String,
}

/// `U^e_0` with its tolerance, the stage-0 walk table, and the walk/continuous
/// gap at stage 0 and at probe histories of stage 1.
pub fn cmd_dp(cfg: &RunConfig, out: &FsPath) -> Result<DpReport> {
    let model = cfg.model()?;
    let tolerance = model.tolerance_report()?;
    let params = *model.params();
    let table = model.build_walk_table(&History::empty())?;
    let mut w = create(out, "walk_table_stage0.csv")?;
    table.write_csv(&mut w)?;
    w.flush()?;

    let mut probes = vec![History::empty()];
    if params.n > 1 {
        for x in [0.5, 1.0, 1.5] {
            for k in [1, params.g / 2, params.g - 1] {
                let v = k as f64 / params.g as f64;
                probes.push(History::new(vec![x], vec![v])?);
            }
        }
    }
    let mut gaps = Vec::with_capacity(probes.len());
    for hist in &probes {
        let r = model.check_always(hist)?;
        gaps.push(GapRow {
            stage: hist.stage(),
            x: hist.last_x(),
            v: hist.last_v(),
            continuous: r.continuous,
            walk: r.walk,
            gap: r.gap,
            bound: r.bound,
        });
    }
    let mut w = create(out, "gap_report.csv")?;
    writeln!(w, "stage,x,v,continuous,walk,gap,bound,exceeded")?;
    for g in &gaps {
        writeln!(w, "{},{:?},{:?},{:?},{:?},{:?},{:?},{}", g.stage, g.x, g.v, g.continuous, g.walk, g.gap, g.bound, g.gap > g.bound)?;
    }
    w.flush()?;
    let t = &tolerance;
    write_quantities(
        out,
        "dp_report.csv",
        &[("ue0", t.ue0), ("ue0_fine", t.ue0_fine), ("tol_interp", t.interp), ("tol_vgrid", t.vgrid), ("tol_quad", t.quad), ("tol_total", t.total)],
    )?;

    let passed = gaps.iter().all(|g| g.gap <= g.bound);
    let worst = gaps.iter().map(|g| g.gap).fold(0.0, f64::max);
    let mut summary = String::new();
    writeln!(summary, "U^e_0 = {:?}", t.ue0)?;
    writeln!(summary, "U^e_0 with 2G = {:?}", t.ue0_fine)?;
    writeln!(summary, "tolerance = {:?} (interp {:?}, vgrid {:?}, quad {:?})", t.total, t.interp, t.vgrid, t.quad)?;
    writeln!(summary, "walk/continuous gap: worst {:?} over {} probes, bound {:?}", worst, gaps.len(), gaps[0].bound)?;
    writeln!(summary, "slices = {}", model.cached_slices())?;
    writeln!(summary, "result = {}", verdict(passed))?;
    write_summary(out, "dp_summary.txt", cfg, &summary)?;
    Ok(DpReport { ue0: t.ue0, tolerance, gaps, slices: model.cached_slices(), passed, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    pub ue0: f64,
    pub tolerance: DpTolerance,
    pub ep: Estimate,
    pub capital: f64,
    pub margin: f64,
    pub gap: f64,
    pub gap_bound: f64,
    pub ordering: bool,
    pub measure_hedge: SuperhedgeReport,
    pub synthetic_hedge: SuperhedgeReport,
    pub synthetic_rejected: usize,
    pub passed: bool,
    pub summary: String,
}

/// The three sides of the duality: `U^e_0`, `E_P[F_N]` on `m_measure`
/// samples, and the superhedge (initial capital `U^e_0 + margin`) checked on
/// the first `m_strategy` samples and on the synthetic walk family.
pub fn cmd_duality(cfg: &RunConfig, out: &FsPath) -> Result<DualityReport> {
    let model = cfg.model()?;
    let tolerance = model.tolerance_report()?;
    let params = *model.params();
    let terminal = model.terminal().clone();
    let hedge = cfg.hedge(Arc::clone(&model), &tolerance);
    let tables = make_choice_tables(Arc::clone(&model), cfg.measure_config());

    let total = cfg.m_measure.max(cfg.m_strategy) as u64;
    let rows = map_sample_range(&tables, 0..total, cfg.seed, |id, s| {
        let f = eval_fn(&terminal, &params, &s.path);
        let outcome = ((id as usize) < cfg.m_strategy).then(|| hedge.outcome(&s.path));
        (f, outcome)
    })?;
    let ep = Estimate::from_samples(rows.iter().take(cfg.m_measure).map(|r| r.0));
    let outcomes: Vec<PathOutcome> = rows.into_iter().filter_map(|r| r.1).collect::<Result<_, _>>()?;
    let measure_hedge = SuperhedgeReport::from_outcomes(outcomes, hedge.slack(), hedge.required_rate());

    let (synthetic, synthetic_rejected) = SwitchingWalk::default().sample(&params, cfg.synthetic_paths, family_seed(cfg.seed, SYNTHETIC_FAMILY));
    let outcomes: Vec<PathOutcome> = synthetic.par_iter().map(|p| hedge.outcome(p)).collect::<Result<_, _>>()?;
    let synthetic_hedge = SuperhedgeReport::from_outcomes(outcomes, hedge.slack(), hedge.required_rate());

    let ue0 = tolerance.ue0;
    let capital = ue0 + hedge.margin();
    let gap = capital - ep.mean;
    let c = terminal.bound();
    let gap_bound = cfg.margin_frac * c + params.measure_slack(&terminal) + tolerance.total;
    let ordering = ep.mean - 4.0 * ep.stderr <= ue0 && ue0 <= capital;
    let synthetic_ok = cfg.synthetic_paths == 0 || synthetic_hedge.passed;
    let passed = gap <= gap_bound && ordering && measure_hedge.passed && synthetic_ok;

    write_quantities(
        out,
        "duality.csv",
        &[
            ("ue0", ue0),
            ("tol_total", tolerance.total),
            ("ep_mean", ep.mean),
            ("ep_stderr", ep.stderr),
            ("capital", capital),
            ("margin", hedge.margin()),
            ("gap", gap),
            ("gap_bound", gap_bound),
            ("measure_success_rate", measure_hedge.rate),
            ("measure_strict_rate", measure_hedge.strict_successes as f64 / measure_hedge.n.max(1) as f64),
            ("measure_ci_half_width", measure_hedge.half_width),
            ("synthetic_success_rate", synthetic_hedge.rate),
            ("synthetic_strict_rate", synthetic_hedge.strict_successes as f64 / synthetic_hedge.n.max(1) as f64),
            ("synthetic_ci_half_width", synthetic_hedge.half_width),
            ("required_rate", measure_hedge.required),
        ],
    )?;
    measure_hedge.write_csv(create(out, "hedge_measure.csv")?)?;
    synthetic_hedge.write_csv(create(out, "hedge_synthetic.csv")?)?;

    let mut summary = String::new();
    writeln!(summary, "U^e_0 = {ue0:?} (tolerance {:?})", tolerance.total)?;
    writeln!(summary, "E_P[F_N] = {:?} ± {:?} over {} paths", ep.mean, ep.stderr, ep.n)?;
    writeln!(summary, "initial capital = {capital:?} (margin {:?})", hedge.margin())?;
    writeln!(summary, "gap = {gap:?}, bound {gap_bound:?}")?;
    writeln!(summary, "ordering E_P - 4se <= U^e_0 <= capital: {}", verdict(ordering))?;
    for (name, r) in [("measure", &measure_hedge), ("synthetic", &synthetic_hedge)] {
        writeln!(
            summary,
            "{name} hedge: success {}/{} = {:?}, strict {}, bankrupt {}, CI [{:?}, {:?}], required {:?}: {}",
            r.successes,
            r.n,
            r.rate,
            r.strict_successes,
            r.bankruptcies,
            r.ci_low,
            r.ci_high,
            r.required,
            verdict(r.passed)
        )?;
    }
    writeln!(summary, "synthetic draws rejected = {synthetic_rejected}")?;
    writeln!(summary, "result = {}", verdict(passed))?;
    write_summary(out, "duality_summary.txt", cfg, &summary)?;
    Ok(DualityReport {
        ue0,
        tolerance,
        ep,
        capital,
        margin: hedge.margin(),
        gap,
        gap_bound,
        ordering,
        measure_hedge,
        synthetic_hedge,
        synthetic_rejected,
        passed,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleReport {
    pub count: usize,
    pub completed: usize,
    pub absorbed: usize,
    pub time_exhausted: usize,
    pub summary: String,
}

const SAMPLE_CHUNK: u64 = 1000;

/// Dumps `m_sample` paths from `P` (streams `0..m_sample` of the seed) with
/// a manifest and the stage bookkeeping.
pub fn cmd_sample(cfg: &RunConfig, out: &FsPath) -> Result<SampleReport> {
    let model = cfg.model()?;
    let tables = make_choice_tables(model, cfg.measure_config());
    let dir = out.join("paths");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = create(out, "manifest.csv")?;
    writeln!(manifest, "id,file,termination,terminal")?;
    let mut book = create(out, "bookkeeping.csv")?;
    let mut counts = [0usize; 3];
    let m = cfg.m_sample as u64;
    let mut first = true;
    let mut start = 0;
    while start < m {
        let end = (start + SAMPLE_CHUNK).min(m);
        let samples = map_sample_range(&tables, start..end, cfg.seed, |_, s| s.clone())?;
        for (offset, s) in samples.iter().enumerate() {
            let id = start + offset as u64;
            let name = format!("path_{id:06}.csv");
            let mut w = create(&dir, &name)?;
            s.path.write_csv(&mut w)?;
            w.flush()?;
            writeln!(manifest, "{id},paths/{name},{},{:?}", s.termination.as_str(), s.path.terminal())?;
            counts[match s.termination {
                Termination::Completed => 0,
                Termination::Absorbed => 1,
                Termination::TimeExhausted => 2,
            }] += 1;
        }
        let mut chunk = Vec::new();
        write_bookkeeping(&mut chunk, samples.iter().enumerate().map(|(k, s)| (start + k as u64, s)))?;
        let text = String::from_utf8(chunk).expect("bookkeeping is UTF-8");
        let body = if first { text.as_str() } else { text.split_once('\n').map_or("", |(_, rest)| rest) };
        book.write_all(body.as_bytes())?;
        first = false;
        start = end;
    }
    if first {
        write_bookkeeping(&mut book, std::iter::empty())?;
    }
    manifest.flush()?;
    book.flush()?;
    let [completed, absorbed, time_exhausted] = counts;
    let mut summary = String::new();
    writeln!(summary, "samples = {}", cfg.m_sample)?;
    writeln!(summary, "completed = {completed}, absorbed = {absorbed}, time_exhausted = {time_exhausted}")?;
    write_summary(out, "sample_summary.txt", cfg, &summary)?;
    Ok(SampleReport { count: cfg.m_sample, completed, absorbed, time_exhausted, summary })
}

/// Path files named by a manifest (`file` column, relative to the manifest),
/// all `*.csv` in a directory in name order, or a single path file.
pub fn path_files(source: &FsPath) -> Result<Vec<PathBuf>> {
    let manifest = if source.is_file() { source.to_path_buf() } else { source.join("manifest.csv") };
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
        if !text.starts_with("id,file") {
            return Ok(vec![manifest]);
        }
        let root = manifest.parent().unwrap_or(FsPath::new("."));
        return text
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let file = l.split(',').nth(1).with_context(|| format!("manifest row {l:?} has no file column"))?;
                Ok(root.join(file))
            })
            .collect();
    }
    let mut files: Vec<PathBuf> = fs::read_dir(source)
        .with_context(|| format!("reading {}", source.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    files.sort();
    if files.is_empty() {
        bail!("no path files in {}", source.display());
    }
    Ok(files)
}

fn load_paths(source: &FsPath) -> Result<Vec<Path>> {
    path_files(source)?
        .iter()
        .map(|f| Path::load(f, Absorption::Strict).with_context(|| format!("invalid path file {}", f.display())))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub hedge: SuperhedgeReport,
    pub initial_capital: f64,
    pub summary: String,
}

/// Runs the superhedge on the configured path source, logging the first
/// `run_logs` runs event by event.
pub fn cmd_strategy(cfg: &RunConfig, out: &FsPath) -> Result<StrategyReport> {
    let paths = match &cfg.paths {
        Some(src) => load_paths(src)?,
        None => Vec::new(),
    };
    let model = cfg.model()?;
    let tolerance = model.tolerance_report()?;
    let hedge = cfg.hedge(Arc::clone(&model), &tolerance);
    let report = if cfg.paths.is_some() {
        pathdual::strategy::verify_superhedge(&hedge, &paths)?
    } else {
        let tables = make_choice_tables(Arc::clone(&model), cfg.measure_config());
        let outcomes = map_sample_range(&tables, 0..cfg.m_strategy as u64, cfg.seed, |_, s| hedge.outcome(&s.path))?;
        SuperhedgeReport::from_outcomes(outcomes.into_iter().collect::<Result<_, _>>()?, hedge.slack(), hedge.required_rate())
    };

    if cfg.run_logs > 0 {
        let dir = out.join("runs");
        fs::create_dir_all(&dir)?;
        let logged: Vec<Path> = if cfg.paths.is_some() {
            paths.iter().take(cfg.run_logs).cloned().collect()
        } else {
            let tables = make_choice_tables(Arc::clone(&model), cfg.measure_config());
            let n = cfg.run_logs.min(cfg.m_strategy) as u64;
            map_sample_range(&tables, 0..n, cfg.seed, |_, s| s.path.clone())?
        };
        for (k, path) in logged.iter().enumerate() {
            let run = run_capital(&hedge, path)?;
            run.write_csv(create(&dir, &format!("run_{k:06}.csv"))?)?;
        }
    }
    report.write_csv(create(out, "hedge.csv")?)?;
    let mut summary = String::new();
    writeln!(summary, "initial capital = {:?} (U^e_0 {:?}, margin {:?})", hedge.ue0() + hedge.margin(), hedge.ue0(), hedge.margin())?;
    writeln!(
        summary,
        "success {}/{} = {:?}, strict {}, bankrupt {}, CI [{:?}, {:?}], required {:?}",
        report.successes, report.n, report.rate, report.strict_successes, report.bankruptcies, report.ci_low, report.ci_high, report.required
    )?;
    writeln!(summary, "result = {}", verdict(report.passed))?;
    write_summary(out, "strategy_summary.txt", cfg, &summary)?;
    Ok(StrategyReport { hedge: report, initial_capital: hedge.ue0() + hedge.margin(), summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub pairs: usize,
    pub resolution: f64,
    /// Pairs with `ρ_H > ρ_U + resolution`.
    pub hausdorff_above_uniform: usize,
    pub asymmetric: usize,
    pub uniform_triangle_violations: usize,
    pub hausdorff_triangle_violations: usize,
    pub passed: bool,
    pub summary: String,
}

/// A positive Brownian-type path from 1 with 64 knots.
pub fn random_path<R: Rng + ?Sized>(rng: &mut R) -> Path {
    let qv = rng.random_range(0.02..0.6);
    let piece = sample_scaled_bm(rng, 1.0, qv, 64, 0.0, 1.0, QvMode::Gaussian);
    let mut b = PathBuilder::new();
    b.extend_piece(&piece.times, &piece.values);
    b.finish_flat().expect("sampled pieces are valid paths")
}

/// Checks the metric properties of `ρ_U` and `ρ_H` on `metric_pairs`
/// random pairs `(a_k, b_k)`, using `a_{k+1}` as the third point of the
/// triangle inequality.
pub fn cmd_metrics(cfg: &RunConfig, out: &FsPath) -> Result<MetricsReport> {
    cfg.validate()?;
    let m = cfg.metric_pairs;
    let res = cfg.resolution;
    let seed = family_seed(cfg.seed, METRIC_FAMILY);
    let paths: Vec<Path> = (0..2 * m as u64 + 1).into_par_iter().map(|k| random_path(&mut RngStream::new(seed, k).rng())).collect();
    let rows: Vec<[f64; 8]> = (0..m)
        .into_par_iter()
        .map(|k| {
            let (a, b, c) = (&paths[2 * k], &paths[2 * k + 1], &paths[2 * k + 2]);
            [
                uniform_distance(a, b),
                uniform_distance(b, a),
                hausdorff_distance(a, b, res),
                uniform_distance(b, c),
                uniform_distance(a, c),
                hausdorff_distance(b, c, res),
                hausdorff_distance(a, c, res),
                hausdorff_distance(b, a, res),
            ]
        })
        .collect();
    let mut w = create(out, "metrics.csv")?;
    writeln!(w, "pair,rho_u,rho_u_rev,rho_h,rho_h_rev,rho_u_bc,rho_u_ac,rho_h_bc,rho_h_ac")?;
    let (mut above, mut asym, mut tri_u, mut tri_h) = (0, 0, 0, 0);
    for (k, r) in rows.iter().enumerate() {
        let [u_ab, u_ba, h_ab, u_bc, u_ac, h_bc, h_ac, h_ba] = *r;
        writeln!(w, "{k},{u_ab:?},{u_ba:?},{h_ab:?},{h_ba:?},{u_bc:?},{u_ac:?},{h_bc:?},{h_ac:?}")?;
        above += usize::from(h_ab > u_ab + res);
        asym += usize::from(u_ab.to_bits() != u_ba.to_bits() || h_ab.to_bits() != h_ba.to_bits());
        // The right-hand sum is rounded: a few ulps and nothing more.
        tri_u += usize::from(u_ac > (u_ab + u_bc) * (1.0 + 4.0 * f64::EPSILON));
        tri_h += usize::from(h_ac > h_ab + h_bc + 2.0 * res);
    }
    w.flush()?;
    let passed = above == 0 && asym == 0 && tri_u == 0 && tri_h == 0;
    let mut summary = String::new();
    writeln!(summary, "pairs = {m}, resolution = {res:?}")?;
    writeln!(summary, "rho_H > rho_U + resolution: {above}")?;
    writeln!(summary, "asymmetric pairs: {asym}")?;
    writeln!(summary, "rho_U triangle violations: {tri_u}")?;
    writeln!(summary, "rho_H triangle violations beyond 2*resolution: {tri_h}")?;
    writeln!(summary, "result = {}", verdict(passed))?;
    write_summary(out, "metrics_summary.txt", cfg, &summary)?;
    Ok(MetricsReport {
        pairs: m,
        resolution: res,
        hausdorff_above_uniform: above,
        asymmetric: asym,
        uniform_triangle_violations: tri_u,
        hausdorff_triangle_violations: tri_h,
        passed,
        summary,
    })
}

/// Measure tables for a configuration, for callers that sample directly.
pub fn choice_tables(cfg: &RunConfig) -> Result<ChoiceTables> {
    Ok(make_choice_tables(cfg.model()?, cfg.measure_config()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_key_value_lines() {
        let cfg = RunConfig::parse("# demo\nn = 1\nterminal=capped_terminal # inline\n\neps=0.1\n").unwrap();
        assert_eq!(cfg.n, 1);
        assert_eq!(cfg.terminal, "capped_terminal");
        assert_eq!(cfg.eps, 0.1);
        assert_eq!(cfg.l, 64);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(RunConfig::parse("n 2"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::parse("colour=red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(RunConfig::parse("n=two"), Err(ConfigError::BadValue { .. })));
        let cfg = RunConfig::parse("m_measure=50").unwrap();
        assert_eq!(cfg.validate(), Err(ConfigError::TooFewSamples { key: "m_measure", value: 50 }));
    }

    #[test]
    fn header_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("g", "8").unwrap();
        cfg.set("paths", "/tmp/x").unwrap();
        let text: String = cfg.header().lines().map(|l| l.trim_start_matches("# ").to_string() + "\n").collect();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }
}
