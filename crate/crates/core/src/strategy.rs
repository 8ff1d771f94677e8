//! Simple trading strategies, their capital processes, and the grid-hitting
//! superhedge.
//!
//! A simple strategy holds a stake `h_n` between consecutive stopping times
//! `τ_n ≤ τ_{n+1}`; its capital is
//! `K_t = c + Σ_n h_n (ω(τ_{n+1} ∧ t) − ω(τ_n ∧ t))`, and play stops for good
//! the moment the capital would turn negative.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::dp::{v_candidates, DpError, HistKey, History, ValueModel, WalkTable};
use crate::functionals::{eval_fn, ExperimentParams};
use crate::paths::{check_regularity, grid_hitting_times, quadratic_variation, Absorption, GridHits, Path};
use crate::stochastics::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("stake {stake} at t={time} exceeds the bound {bound}")]
    UnboundedBet { time: f64, stake: f64, bound: f64 },
    #[error("stopping times decrease: {prev} then {next}")]
    NonMonotone { prev: f64, next: f64 },
    #[error("stopping time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("price grid step {0} does not divide the initial price 1")]
    OffGrid(f64),
    #[error(transparent)]
    Dp(#[from] DpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Stake reset to 0 at the start of a stage window.
    WindowStart,
    /// Bet placed at a visit to the price grid.
    GridHit,
    /// Final zero stake: play stops.
    EndGame,
    /// A stake from a fixed schedule.
    Scheduled,
    /// Capital reached 0; all later stakes are void.
    Bankruptcy,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::WindowStart => "window_start",
            EventKind::GridHit => "grid_hit",
            EventKind::EndGame => "end_game",
            EventKind::Scheduled => "scheduled",
            EventKind::Bankruptcy => "bankruptcy",
        }
    }
}

/// A stake change at a stopping time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetEvent {
    pub time: f64,
    pub stake: f64,
    pub kind: EventKind,
    /// Grid level `X` for grid hits.
    pub level: Option<i64>,
}

/// A simple trading strategy: stopping times with bets, plus initial
/// capital. `events` must be adapted: the stake chosen at `τ` may depend on
/// the path only through `ω|[0,τ]`.
pub trait SimpleStrategy {
    fn initial_capital(&self) -> f64;
    /// Largest admissible `|stake|`.
    fn stake_bound(&self) -> f64;
    fn events(&self, path: &Path) -> Result<Vec<BetEvent>, StrategyError>;
}

/// Deterministic stopping times with fixed stakes.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedStrategy {
    pub capital: f64,
    pub bets: Vec<(f64, f64)>,
    pub bound: f64,
}

impl SimpleStrategy for FixedStrategy {
    fn initial_capital(&self) -> f64 {
        self.capital
    }

    fn stake_bound(&self) -> f64 {
        self.bound
    }

    fn events(&self, _path: &Path) -> Result<Vec<BetEvent>, StrategyError> {
        Ok(self.bets.iter().map(|&(time, stake)| BetEvent { time, stake, kind: EventKind::Scheduled, level: None }).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub time: f64,
    pub kind: EventKind,
    pub level: Option<i64>,
    pub stake: f64,
    pub price: f64,
    /// Capital at `time`, before the new stake takes effect.
    pub capital: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRun {
    pub initial_capital: f64,
    pub log: Vec<LogEntry>,
    /// `(t, K_t)` at every knot and event; `K` is linear in between.
    pub trajectory: Vec<(f64, f64)>,
    pub bankrupt_at: Option<f64>,
}

impl StrategyRun {
    pub fn capital_at(&self, t: f64) -> f64 {
        let tr = &self.trajectory;
        let k = tr.partition_point(|(s, _)| *s <= t);
        if k == 0 {
            return tr[0].1;
        }
        if k == tr.len() {
            return tr[k - 1].1;
        }
        let (t0, k0) = tr[k - 1];
        let (t1, k1) = tr[k];
        if t == t0 || t1 == t0 {
            k0
        } else {
            k0 + (k1 - k0) * (t - t0) / (t1 - t0)
        }
    }

    pub fn final_capital(&self) -> f64 {
        self.trajectory.last().expect("trajectory is never empty").1
    }

    /// Run log with columns `time,event_type,X,bet,price,capital`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,event_type,X,bet,price,capital")?;
        for e in &self.log {
            let level = e.level.map(|x| x.to_string()).unwrap_or_default();
            writeln!(w, "{:?},{},{level},{:?},{:?},{:?}", e.time, e.kind.as_str(), e.stake, e.price, e.capital)?;
        }
        Ok(())
    }
}

/// Runs `strategy` on `path` exactly: between consecutive knots and events
/// both the price and the capital are linear.
pub fn run_capital(strategy: &dyn SimpleStrategy, path: &Path) -> Result<StrategyRun, StrategyError> {
    let events = strategy.events(path)?;
    let bound = strategy.stake_bound();
    let mut prev = 0.0;
    for e in &events {
        if !(0.0..=1.0).contains(&e.time) {
            return Err(StrategyError::TimeOutOfRange(e.time));
        }
        if e.time < prev {
            return Err(StrategyError::NonMonotone { prev, next: e.time });
        }
        if !e.stake.is_finite() || e.stake.abs() > bound {
            return Err(StrategyError::UnboundedBet { time: e.time, stake: e.stake, bound });
        }
        prev = e.time;
    }

    let mut times: Vec<f64> = path.times().iter().copied().chain(events.iter().map(|e| e.time)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let c = strategy.initial_capital();
    let mut log = Vec::with_capacity(events.len() + 1);
    let mut trajectory = Vec::with_capacity(times.len());
    let mut capital = c;
    let mut stake = 0.0;
    let mut next_event = 0;
    let mut bankrupt_at = None;
    for (idx, &t) in times.iter().enumerate() {
        let price = path.eval_unchecked(t);
        trajectory.push((t, capital));
        while next_event < events.len() && events[next_event].time <= t {
            let e = events[next_event];
            stake = e.stake;
            log.push(LogEntry { time: t, kind: e.kind, level: e.level, stake, price, capital });
            next_event += 1;
        }
        let Some(&t_next) = times.get(idx + 1) else { break };
        let next = capital + stake * (path.eval_unchecked(t_next) - price);
        if next < 0.0 {
            let hit = t + (t_next - t) * capital / (capital - next);
            trajectory.push((hit, 0.0));
            log.push(LogEntry { time: hit, kind: EventKind::Bankruptcy, level: None, stake: 0.0, price: path.eval_unchecked(hit), capital: 0.0 });
            if hit < 1.0 {
                trajectory.push((1.0, 0.0));
            }
            bankrupt_at = Some(hit);
            break;
        }
        capital = next;
    }
    Ok(StrategyRun { initial_capital: c, log, trajectory, bankrupt_at })
}

/// One stage window of the grid hedge on a particular path.
#[derive(Debug, Clone)]
pub struct Window {
    pub stage: usize,
    /// `v_i`, and the end of play in this window, `v_{i+1} ∧ (1 − ε)`.
    pub start: f64,
    pub end: f64,
    /// Grid visits `T_{i,j}`, `j ≤ L`, strictly before `end`.
    pub hits: GridHits,
    /// `None` when the window starts beyond the tabulated grid.
    pub table: Option<Arc<WalkTable>>,
}

/// The grid-hitting superhedge: in stage `i` it bets
/// `[Ū_i(X+1, j+1) − Ū_i(X, j)]/h` at the `j`-th grid visit `T_{i,j}` (at
/// level `X·h`), using the walk table of the snapped history.
#[derive(Debug, Clone)]
pub struct GridHedge {
    model: Arc<ValueModel>,
    ue0: f64,
    margin: f64,
}

/// Initial capital `U^e_0 + margin`, with `margin = margin_frac·C` plus the
/// reported numerical tolerance of `U^e_0`.
pub fn build_superhedge(model: Arc<ValueModel>, margin_frac: f64) -> Result<GridHedge, StrategyError> {
    let tol = model.tolerance_report()?;
    let margin = margin_frac * model.terminal().bound() + tol.total;
    Ok(GridHedge { ue0: tol.ue0, margin, model })
}

impl GridHedge {
    /// A hedge with an explicit margin and no tolerance added.
    pub fn with_margin(model: Arc<ValueModel>, margin: f64) -> Self {
        let ue0 = model.eval_ue0();
        Self { model, ue0, margin }
    }

    pub fn model(&self) -> &ValueModel {
        &self.model
    }

    pub fn ue0(&self) -> f64 {
        self.ue0
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Nearest candidate time after `prev`; stays below 1 unless `v == 1`.
    fn snap_v(&self, prev: f64, v: f64) -> f64 {
        let g = self.model.params().g;
        let cands = v_candidates(prev, g);
        let width = (1.0 - prev) / g as f64;
        let top = if v >= 1.0 { g } else { g - 1 };
        let k = (((v - prev) / width).round().max(0.0) as usize).min(top);
        cands[k]
    }

    /// Stage windows with their grid visits and walk tables.
    pub fn windows(&self, path: &Path) -> Result<Vec<Window>, StrategyError> {
        let params = self.model.params();
        let step = self.model.step();
        let stop = 1.0 - params.eps;
        let profile = quadratic_variation(path);
        let v_at = |i: usize| -> f64 {
            if i == 0 {
                0.0
            } else {
                profile.time_change(params.s * i as f64 / params.n as f64).map_or(1.0, |t| t.min(1.0))
            }
        };
        let mut hist = History::empty();
        let mut windows = Vec::with_capacity(params.n);
        let mut v_i = 0.0;
        for i in 0..params.n {
            if v_i >= stop {
                break;
            }
            let v_next = v_at(i + 1);
            let end = v_next.min(stop);
            let mut hits = grid_hitting_times(path, v_i, end, step);
            let keep = hits.times.iter().take_while(|t| **t < end).count().min(params.l + 1);
            hits.times.truncate(keep);
            hits.levels.truncate(keep);
            let table = match self.model.build_walk_table(&hist) {
                Ok(t) => Some(Arc::new(t)),
                Err(DpError::GridOverflow { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            windows.push(Window { stage: i, start: v_i, end, hits, table });
            if v_next >= 1.0 {
                break;
            }
            let x_next = path.eval_unchecked(v_next);
            let snapped_v = self.snap_v(hist.last_v(), v_next);
            hist.push(self.model.snap_x(x_next) as f64 * step, snapped_v)?;
            v_i = v_next;
        }
        Ok(windows)
    }

    pub fn history_key<'a>(&self, window: &'a Window) -> Option<&'a HistKey> {
        window.table.as_ref().map(|t| &t.key)
    }
}

impl SimpleStrategy for GridHedge {
    fn initial_capital(&self) -> f64 {
        self.ue0 + self.margin
    }

    fn stake_bound(&self) -> f64 {
        self.model.terminal().bound() / self.model.step()
    }

    fn events(&self, path: &Path) -> Result<Vec<BetEvent>, StrategyError> {
        let params = self.model.params();
        let step = self.model.step();
        let l = params.l;
        let mut events: Vec<BetEvent> = Vec::new();
        let mut push = |e: BetEvent| {
            if let Some(last) = events.last_mut() {
                if last.time == e.time {
                    *last = e;
                    return;
                }
            }
            events.push(e);
        };
        for w in self.windows(path)? {
            push(BetEvent { time: w.start, stake: 0.0, kind: EventKind::WindowStart, level: None });
            let Some(table) = &w.table else { continue };
            for (j, (&t, &x)) in w.hits.times.iter().zip(&w.hits.levels).enumerate() {
                let stake = if x <= 0 || j >= l {
                    0.0
                } else {
                    let xu = x as usize;
                    match (table.get(xu + 1, j + 1), table.get(xu, j)) {
                        (Some(up), Some(here)) => (up - here) / step,
                        _ => 0.0,
                    }
                };
                push(BetEvent { time: t, stake, kind: EventKind::GridHit, level: Some(x) });
            }
        }
        push(BetEvent { time: 1.0 - params.eps, stake: 0.0, kind: EventKind::EndGame, level: None });
        Ok(events)
    }
}

/// Result of the hedge on one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    /// `K_{1−ε}`.
    pub capital: f64,
    /// `F_N(ω)`.
    pub payoff: f64,
    /// `K_{1−ε} ≥ F_N − N·A`.
    pub success: bool,
    /// `K_{1−ε} ≥ F_N`.
    pub strict: bool,
    pub bankrupt: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperhedgeReport {
    pub outcomes: Vec<PathOutcome>,
    pub n: usize,
    pub successes: usize,
    pub strict_successes: usize,
    pub bankruptcies: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub half_width: f64,
    /// `N·A` with `A = 3f(ε) + g(ε)`.
    pub slack: f64,
    /// `1 − 2Nε`.
    pub required: f64,
    pub passed: bool,
}

/// Exact (Clopper–Pearson) two-sided interval for a binomial proportion.
pub fn clopper_pearson(successes: usize, n: usize, level: f64) -> (f64, f64) {
    assert!(n > 0 && successes <= n && (0.0..1.0).contains(&level));
    let alpha = 1.0 - level;
    let (k, n) = (successes as f64, n as f64);
    let low = if successes == 0 { 0.0 } else { Beta::new(k, n - k + 1.0).expect("valid shape").inverse_cdf(alpha / 2.0) };
    let high = if successes as f64 == n { 1.0 } else { Beta::new(k + 1.0, n - k).expect("valid shape").inverse_cdf(1.0 - alpha / 2.0) };
    (low, high)
}

/// Runs the hedge on every path and checks `K_{1−ε} ≥ F_N − N·A`.
pub fn verify_superhedge(hedge: &GridHedge, paths: &[Path]) -> Result<SuperhedgeReport, StrategyError> {
    let outcomes: Vec<PathOutcome> = paths.par_iter().map(|path| hedge.outcome(path)).collect::<Result<_, _>>()?;
    Ok(SuperhedgeReport::from_outcomes(outcomes, hedge.slack(), hedge.required_rate()))
}

impl GridHedge {
    /// `N·A`, the pathwise allowance of the superhedging induction.
    pub fn slack(&self) -> f64 {
        let params = self.model.params();
        params.n as f64 * params.stage_slack(self.model.terminal())
    }

    /// `1 − 2Nε`.
    pub fn required_rate(&self) -> f64 {
        let params = self.model.params();
        1.0 - 2.0 * params.n as f64 * params.eps
    }

    /// Capital at `1 − ε` against the payoff on one path.
    pub fn outcome(&self, path: &Path) -> Result<PathOutcome, StrategyError> {
        let params = self.model.params();
        let run = run_capital(self, path)?;
        let capital = run.capital_at(1.0 - params.eps);
        let payoff = eval_fn(self.model.terminal(), params, path);
        let slack = self.slack();
        Ok(PathOutcome {
            capital,
            payoff,
            success: capital >= payoff - slack,
            strict: capital >= payoff,
            bankrupt: run.bankrupt_at.is_some(),
        })
    }
}

impl SuperhedgeReport {
    pub fn from_outcomes(outcomes: Vec<PathOutcome>, slack: f64, required: f64) -> Self {
        let n = outcomes.len();
        let successes = outcomes.iter().filter(|o| o.success).count();
        let strict_successes = outcomes.iter().filter(|o| o.strict).count();
        let bankruptcies = outcomes.iter().filter(|o| o.bankrupt).count();
        let rate = successes as f64 / n.max(1) as f64;
        let (ci_low, ci_high) = if n > 0 { clopper_pearson(successes, n, 0.95) } else { (0.0, 1.0) };
        let half_width = 0.5 * (ci_high - ci_low);
        Self {
            outcomes,
            n,
            successes,
            strict_successes,
            bankruptcies,
            rate,
            ci_low,
            ci_high,
            half_width,
            slack,
            required,
            passed: n > 0 && rate >= required - half_width,
        }
    }

    /// Per-path CSV with columns `path,capital,payoff,success,strict,bankrupt`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "path,capital,payoff,success,strict,bankrupt")?;
        for (i, o) in self.outcomes.iter().enumerate() {
            writeln!(w, "{i},{:?},{:?},{},{},{}", o.capital, o.payoff, o.success, o.strict, o.bankrupt)?;
        }
        Ok(())
    }
}

/// Lévy-type modulus `c·√(δ·ln(e·S/δ))` on `[0, S]`.
pub fn brownian_modulus(c: f64, s: f64) -> impl Fn(f64) -> f64 {
    move |d: f64| if d <= 0.0 { 0.0 } else { c * (d * (std::f64::consts::E * s / d.min(s)).ln()).sqrt() }
}

/// Random walks on the price grid whose speed switches between a calm and a
/// wild regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchingWalk {
    /// Ratio of wild to calm volatility.
    pub vol_ratio: f64,
    pub switch_prob: f64,
    /// Total qv is uniform on `[min_qv_frac·S, S]`.
    pub min_qv_frac: f64,
    /// Constant of the path modulus used for rejection.
    pub modulus_const: f64,
    pub modulus_levels: usize,
}

impl Default for SwitchingWalk {
    fn default() -> Self {
        Self { vol_ratio: 4.0, switch_prob: 0.05, min_qv_frac: 0.6, modulus_const: 3.0, modulus_levels: 256 }
    }
}

impl SwitchingWalk {
    /// One walk: a straight move from 1 to the nearest grid level, then ±h
    /// steps until the qv budget is spent or the price hits 0, all before
    /// time `1 − ε`; flat afterwards.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, params: &ExperimentParams) -> Path {
        let h = params.step();
        let budget = params.s * rng.random_range(self.min_qv_frac..=1.0);
        let mut level = (1.0 / h).round() as i64;
        let lead = 1.0 - level as f64 * h;
        let steps = ((budget - lead * lead) / (h * h)).floor().max(0.0) as usize;
        let mut durations = vec![1.0];
        let mut levels = vec![level];
        let mut wild = rng.random_bool(0.5);
        for _ in 0..steps {
            if level == 0 {
                break;
            }
            if rng.random_bool(self.switch_prob) {
                wild = !wild;
            }
            let speed = if wild { self.vol_ratio * self.vol_ratio } else { 1.0 };
            durations.push(rng.random_range(0.5..1.5) / speed);
            level += if rng.random_bool(0.5) { 1 } else { -1 };
            levels.push(level);
        }
        let horizon = (1.0 - params.eps) * rng.random_range(0.3..0.95);
        let scale = horizon / durations.iter().sum::<f64>();
        let mut times = vec![0.0];
        let mut values = vec![1.0];
        let mut t = 0.0;
        for (d, l) in durations.iter().zip(&levels) {
            t += d * scale;
            times.push(t);
            values.push(*l as f64 * h);
        }
        times.push(1.0);
        values.push(values[values.len() - 1]);
        Path::new(times, values, Absorption::Strict).expect("walk paths are valid")
    }

    /// `m` walks, each redrawn until it uses at most `S` of quadratic
    /// variation and respects the path modulus; also returns the number of
    /// rejected draws.
    pub fn sample(&self, params: &ExperimentParams, m: usize, seed: u64) -> (Vec<Path>, usize) {
        let modulus = brownian_modulus(self.modulus_const, params.s);
        let h = params.step();
        let drawn: Vec<(Path, usize)> = (0..m as u64)
            .into_par_iter()
            .map(|id| {
                let mut rng = RngStream::new(seed, id).rng();
                let mut rejected = 0;
                loop {
                    let path = self.draw(&mut rng, params);
                    let reg = check_regularity(&path, params.s, &modulus, self.modulus_levels, h);
                    if !reg.in_a1 && !reg.in_a2 {
                        return (path, rejected);
                    }
                    rejected += 1;
                }
            })
            .collect();
        let rejected = drawn.iter().map(|d| d.1).sum();
        (drawn.into_iter().map(|d| d.0).collect(), rejected)
    }
}

/// A ±h walk from 1 when `1/h` is an integer: exactly `L` steps per stage,
/// so every stage boundary `v_i` is a grid visit. Absorbed at 0, finished
/// before `1 − ε`.
pub fn grid_conforming_walk<R: Rng + ?Sized>(rng: &mut R, params: &ExperimentParams) -> Result<Path, StrategyError> {
    let h = params.step();
    let start = (1.0 / h).round();
    if start * h != 1.0 {
        return Err(StrategyError::OffGrid(h));
    }
    let steps = params.n * params.l;
    let durations: Vec<f64> = (0..steps).map(|_| rng.random_range(0.2..1.8)).collect();
    let scale = (1.0 - params.eps) * rng.random_range(0.5..0.95) / durations.iter().sum::<f64>();
    let mut level = start as i64;
    let mut times = vec![0.0];
    let mut values = vec![1.0];
    let mut t = 0.0;
    for d in durations {
        if level == 0 {
            break;
        }
        level += if rng.random_bool(0.5) { 1 } else { -1 };
        t += d * scale;
        times.push(t);
        values.push(level as f64 * h);
    }
    times.push(1.0);
    values.push(level as f64 * h);
    Ok(Path::new(times, values, Absorption::Strict).expect("walk paths are valid"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::builtin_terminal;

    fn p(times: &[f64], values: &[f64]) -> Path {
        Path::new(times.to_vec(), values.to_vec(), Absorption::Strict).unwrap()
    }

    fn hedge(name: &str, n: usize, l: usize, g: usize) -> GridHedge {
        let t = builtin_terminal(name, 2.0, n).unwrap();
        let params = ExperimentParams::derive(1.0, n, l, 0.05, g, &t).unwrap();
        GridHedge::with_margin(Arc::new(ValueModel::new(t, params).unwrap()), 0.0)
    }

    /// ±h walk from 1 with `h = 1/8`, one step per `dt`.
    fn walk(steps: &[i32], dt: f64) -> Path {
        let mut times = vec![0.0];
        let mut values = vec![1.0];
        for s in steps {
            let x: f64 = values[values.len() - 1];
            if x == 0.0 {
                break;
            }
            times.push(times[times.len() - 1] + dt);
            values.push(x + *s as f64 / 8.0);
        }
        times.push(1.0);
        values.push(values[values.len() - 1]);
        p(&times, &values)
    }

    #[test]
    fn capital_formula_examples() {
        let path = p(&[0.0, 0.5, 1.0], &[1.0, 1.4, 0.9]);
        let none = FixedStrategy { capital: 0.3, bets: vec![], bound: 10.0 };
        let run = run_capital(&none, &path).unwrap();
        assert!(run.trajectory.iter().all(|(_, k)| *k == 0.3));
        let hold = FixedStrategy { capital: 0.3, bets: vec![(0.0, 1.0)], bound: 10.0 };
        let run = run_capital(&hold, &path).unwrap();
        assert!((run.final_capital() - (0.3 + 0.9 - 1.0)).abs() < 1e-15);
        assert!((run.capital_at(0.25) - (0.3 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let path = Path::constant();
        let big = FixedStrategy { capital: 1.0, bets: vec![(0.1, 11.0)], bound: 10.0 };
        assert!(matches!(run_capital(&big, &path), Err(StrategyError::UnboundedBet { .. })));
        let back = FixedStrategy { capital: 1.0, bets: vec![(0.5, 1.0), (0.2, 1.0)], bound: 10.0 };
        assert!(matches!(run_capital(&back, &path), Err(StrategyError::NonMonotone { .. })));
    }

    #[test]
    fn bankruptcy_stops_play_at_zero() {
        let path = p(&[0.0, 0.5, 1.0], &[1.0, 0.2, 2.0]);
        let long = FixedStrategy { capital: 0.4, bets: vec![(0.0, 1.0)], bound: 10.0 };
        let run = run_capital(&long, &path).unwrap();
        let hit = run.bankrupt_at.unwrap();
        assert!((hit - 0.5 * 0.4 / 0.8).abs() < 1e-15);
        assert_eq!(run.final_capital(), 0.0);
        assert!(run.trajectory.iter().all(|(_, k)| *k >= 0.0));
    }

    #[test]
    fn constant_payoff_never_bets() {
        let h = hedge("constant(0.7)", 2, 16, 4);
        let path = walk(&[1, -1, 1, 1, 1, -1, -1, -1, 1, 1, 1, 1], 0.01);
        let run = run_capital(&h, &path).unwrap();
        assert!(run.log.iter().all(|e| e.stake.abs() < 1e-13));
        assert!((run.final_capital() - h.initial_capital()).abs() < 1e-12);
    }

    #[test]
    fn absorbed_walk_stops_betting() {
        let h = hedge("capped_max", 1, 32, 4);
        let path = walk(&[-1; 12], 0.01);
        let events = h.events(&path).unwrap();
        let zero_hit = events.iter().position(|e| e.level == Some(0)).unwrap();
        assert!(events[zero_hit..].iter().all(|e| e.stake == 0.0));
    }

    #[test]
    fn clopper_pearson_reference_values() {
        // Reference: scipy.stats.beta.ppf
        let (lo, hi) = clopper_pearson(8, 10, 0.95);
        assert!((lo - 0.4439045376923585).abs() < 1e-9, "{lo}");
        assert!((hi - 0.974789273673148).abs() < 1e-9, "{hi}");
        assert_eq!(clopper_pearson(0, 5, 0.95).0, 0.0);
        assert_eq!(clopper_pearson(5, 5, 0.95).1, 1.0);
    }

    #[test]
    fn run_log_csv() {
        let h = hedge("capped_terminal", 1, 32, 4);
        let path = walk(&[1, 1, -1, 1], 0.05);
        let run = run_capital(&h, &path).unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,event_type,X,bet,price,capital"));
        assert!(lines.next().unwrap().starts_with("0.0,window_start,,0.0,1.0,"));
        // h = 1/√32: the first visit is 6h ≈ 1.0607.
        assert!(lines.next().unwrap().contains(",grid_hit,6,"));
        assert!(text.lines().last().unwrap().contains("end_game"));
    }

    #[test]
    fn switching_walks_respect_budget() {
        let t = builtin_terminal("capped_max", 2.0, 2).unwrap();
        let params = ExperimentParams::derive(1.0, 2, 64, 0.05, 16, &t).unwrap();
        let (paths, _) = SwitchingWalk::default().sample(&params, 50, 3);
        for path in &paths {
            assert_eq!(path.values()[0], 1.0);
            assert!(quadratic_variation(path).total() <= 1.0 + 1e-12);
            let (t_last, _) = path.times().iter().zip(path.values()).rev().find(|(_, v)| **v != path.terminal()).unwrap();
            assert!(*t_last < 0.95);
        }
    }

    #[test]
    fn conforming_walk_window_identity() {
        let h = hedge("capped_max", 2, 32, 4);
        let mut rng = RngStream::new(11, 0).rng();
        let path = grid_conforming_walk(&mut rng, h.model().params()).unwrap();
        let run = run_capital(&h, &path).unwrap();
        let step = h.model().step();
        for w in h.windows(&path).unwrap() {
            let table = w.table.as_ref().unwrap();
            let end_level = (path.eval_unchecked(w.end) / step).round() as usize;
            let j_end = w.hits.len();
            let x0 = w.hits.levels[0] as usize;
            let total = run.capital_at(w.end) - run.capital_at(w.hits.times[0]);
            assert!((total - (table.entry(end_level, j_end) - table.entry(x0, 0))).abs() < 1e-12);
        }
    }

    #[test]
    fn events_depend_only_on_the_past() {
        let h = hedge("capped_max", 2, 32, 4);
        let before = |ev: Vec<BetEvent>, cut: f64| ev.into_iter().filter(|e| e.time <= cut).collect::<Vec<_>>();
        let mut checked = 0;
        for seed in 0..10 {
            let mut rng = RngStream::new(5, seed).rng();
            let path = grid_conforming_walk(&mut rng, h.model().params()).unwrap();
            for cut in [0.2, 0.4, 0.6] {
                let x_cut = path.eval_unchecked(cut);
                if x_cut == 0.0 {
                    continue;
                }
                let mut times: Vec<f64> = path.times().iter().copied().filter(|t| *t < cut).collect();
                let mut values: Vec<f64> = times.iter().map(|t| path.eval_unchecked(*t)).collect();
                times.extend([cut, 0.7, 1.0]);
                values.extend([x_cut, 2.5, 0.3]);
                let other = p(&times, &values);
                assert_eq!(before(h.events(&path).unwrap(), cut), before(h.events(&other).unwrap(), cut));
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn capital_matches_stake_sum() {
        let h = hedge("capped_terminal", 2, 32, 4);
        let mut rng = RngStream::new(9, 0).rng();
        let path = grid_conforming_walk(&mut rng, h.model().params()).unwrap();
        let run = run_capital(&h, &path).unwrap();
        let events = h.events(&path).unwrap();
        let mut k = h.initial_capital();
        for (a, b) in events.iter().zip(events.iter().skip(1).map(|e| e.time).chain([1.0])) {
            k += a.stake * (path.eval_unchecked(b) - path.eval_unchecked(a.time));
        }
        assert!(run.bankrupt_at.is_none());
        assert!((run.final_capital() - k).abs() < 1e-12);
    }
}
