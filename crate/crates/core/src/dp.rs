//! Backward induction for the stage values.
//!
//! For a history `(x_1,v_1),…,(x_i,v_i)` the recursion alternates
//!
//! * `U^m_i(h, x) = max_{v ∈ grid(v_i)} U^e_{i+1}(h + (x, v))`, and
//! * `U^e_i(h) = E U^m_i(h, ξ)` with `ξ` a Brownian motion started at `x_i`,
//!   absorbed at 0 and run for quadratic variation `S/N` (or `U^m_i(h, x_i)`
//!   when `v_i = 1`),
//!
//! ending with `U^e_N = U`. Values are tabulated on the price grid
//! `{X·h : X = 0..X_max+L}` with `h = √(S/NL)` and cached per history in
//! [`Slice`]s. Histories are snapped to that grid before lookup; times are
//! taken as given, and callers keep them on the nested candidate grids so
//! that lookups hit the cache.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use thiserror::Error;

use crate::functionals::{ExperimentParams, FunctionalError, TerminalFunction};
use crate::stochastics::absorbed_grid_weights;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("malformed history: {0}")]
    MalformedHistory(String),
    #[error("walk start X={start} lies beyond X_max={x_max}")]
    GridOverflow { start: usize, x_max: usize },
    #[error(transparent)]
    Params(#[from] FunctionalError),
}

/// Checkpoints `(x_j, v_j)`, `j = 1..i`, observed so far.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    xs: Vec<f64>,
    vs: Vec<f64>,
}

impl History {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(xs: Vec<f64>, vs: Vec<f64>) -> Result<Self, DpError> {
        if xs.len() != vs.len() {
            return Err(DpError::MalformedHistory(format!("{} prices but {} times", xs.len(), vs.len())));
        }
        let mut h = Self::empty();
        for (x, v) in xs.into_iter().zip(vs) {
            h.push(x, v)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, x: f64, v: f64) -> Result<(), DpError> {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(DpError::MalformedHistory(format!("price {x} is not a finite nonnegative number")));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(DpError::MalformedHistory(format!("time {v} outside [0, 1]")));
        }
        if v < self.last_v() {
            return Err(DpError::MalformedHistory(format!("times decrease: {} then {v}", self.last_v())));
        }
        if self.last_v() == 1.0 && x != self.last_x() {
            return Err(DpError::MalformedHistory(format!("price moves after time 1: {} then {x}", self.last_x())));
        }
        self.xs.push(x);
        self.vs.push(v);
        Ok(())
    }

    pub fn extended(&self, x: f64, v: f64) -> Result<Self, DpError> {
        let mut h = self.clone();
        h.push(x, v)?;
        Ok(h)
    }

    /// Number of checkpoints `i`.
    pub fn stage(&self) -> usize {
        self.xs.len()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn vs(&self) -> &[f64] {
        &self.vs
    }

    /// `v_i`, with `v_0 = 0`.
    pub fn last_v(&self) -> f64 {
        self.vs.last().copied().unwrap_or(0.0)
    }

    /// `x_i`, with `x_0 = 1`.
    pub fn last_x(&self) -> f64 {
        self.xs.last().copied().unwrap_or(1.0)
    }
}

/// Cache key: prices as grid indices, times bit-exact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct HistKey {
    xs: Vec<u32>,
    vs: Vec<u64>,
}

impl HistKey {
    pub fn stage(&self) -> usize {
        self.xs.len()
    }

    pub fn x_indices(&self) -> &[u32] {
        &self.xs
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.vs.iter().map(|b| f64::from_bits(*b))
    }

    pub fn last_v(&self) -> f64 {
        self.vs.last().map_or(0.0, |b| f64::from_bits(*b))
    }

    pub fn child(&self, x: u32, v: f64) -> Self {
        let mut k = self.clone();
        k.xs.push(x);
        k.vs.push(v.to_bits());
        k
    }
}

/// `grid(v) = {v + (1−v)·k/G : k = 0..G}`; the last point is exactly 1.
/// Writing the step as `(1−v)·(k/G)` makes grids with `G' = mG` contain the
/// coarser grid bit for bit.
pub fn v_candidates(v: f64, g: usize) -> Vec<f64> {
    (0..=g).map(|k| if k == g { 1.0 } else { v + (1.0 - v) * (k as f64 / g as f64) }).collect()
}

/// `Σ w_k u_k` for probability weights, kept inside `[min u, max u]`
/// (the weights sum to 1 only up to rounding).
fn weighted_mean(w: &[f64], u: &[f64]) -> f64 {
    let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    w.iter().zip(u).map(|(w, u)| w * u).sum::<f64>().clamp(lo, hi)
}

/// Tabulated values for one history `h` at stage `i`, over the price grid.
#[derive(Debug, Clone)]
pub struct Slice {
    pub candidates: Vec<f64>,
    /// `U^m_i(h, X·h)`.
    pub um: Vec<f64>,
    /// Index into `candidates` of the smallest maximizer, per `X`.
    pub argmax: Vec<u16>,
    /// `U^e_{i+1}(h + (X·h, v_k))` as `ue[k][X]`; kept only when `i+1 < N`
    /// (at the last stage the terminal function is evaluated directly).
    pub ue: Option<Vec<Vec<f64>>>,
    /// `max_X |Δ² um| / 8`: interpolation error bound for `um`.
    pub curvature: f64,
}

/// Linear interpolation of a grid row at `x`, held constant past the end.
pub fn interp_row(row: &[f64], step: f64, x: f64) -> f64 {
    let p = (x / step).max(0.0);
    let k = p.floor() as usize;
    if k + 1 >= row.len() {
        return row[row.len() - 1];
    }
    let f = p - k as f64;
    if f == 0.0 {
        row[k]
    } else {
        row[k] * (1.0 - f) + row[k + 1] * f
    }
}

/// Value function of one experiment, with lazily built and memoized slices.
pub struct ValueModel {
    terminal: TerminalFunction,
    params: ExperimentParams,
    /// `kernels[X]`: grid weights of the absorbed law started at `X·h`.
    kernels: Vec<Vec<f64>>,
    cache: RwLock<HashMap<HistKey, Arc<Slice>>>,
}

impl std::fmt::Debug for ValueModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValueModel")
            .field("terminal", &self.terminal)
            .field("params", &self.params)
            .field("cached_slices", &self.cached_slices())
            .finish()
    }
}

impl ValueModel {
    pub fn new(terminal: TerminalFunction, params: ExperimentParams) -> Result<Self, DpError> {
        params.validate(&terminal)?;
        let len = params.grid_len();
        let step = params.step();
        let a = params.stage_qv();
        let kernels = (0..len).into_par_iter().map(|x| absorbed_grid_weights(x as f64 * step, a, step, len)).collect();
        Ok(Self { terminal, params, kernels, cache: RwLock::new(HashMap::new()) })
    }

    pub fn terminal(&self) -> &TerminalFunction {
        &self.terminal
    }

    pub fn params(&self) -> &ExperimentParams {
        &self.params
    }

    pub fn step(&self) -> f64 {
        self.params.step()
    }

    pub fn cached_slices(&self) -> usize {
        self.cache.read().expect("cache poisoned").len()
    }

    /// Nearest grid index, clamped to the grid.
    pub fn snap_x(&self, x: f64) -> u32 {
        ((x / self.step()).round().max(0.0) as usize).min(self.params.grid_len() - 1) as u32
    }

    pub fn key(&self, hist: &History) -> HistKey {
        HistKey { xs: hist.xs().iter().map(|x| self.snap_x(*x)).collect(), vs: hist.vs().iter().map(|v| v.to_bits()).collect() }
    }

    fn check_stage(&self, hist: &History, max: usize) -> Result<(), DpError> {
        if hist.stage() > max {
            return Err(DpError::MalformedHistory(format!("history has {} checkpoints, at most {max} allowed", hist.stage())));
        }
        Ok(())
    }

    fn key_prices(&self, key: &HistKey) -> Vec<f64> {
        key.xs.iter().map(|x| *x as f64 * self.step()).collect()
    }

    /// `U` at the history extended by `(x, 1)` until it has `N` checkpoints.
    fn terminal_extension(&self, xs: &[f64], vs: &[f64], x: f64) -> f64 {
        let n = self.params.n;
        let mut xs = xs.to_vec();
        let mut vs = vs.to_vec();
        xs.resize(n, x);
        vs.resize(n, 1.0);
        self.terminal.eval(&xs, &vs)
    }

    /// `E[row(ξ)]` for `ξ` the absorbed law from grid index `x`.
    pub fn kernel_expectation(&self, x: u32, row: &[f64]) -> f64 {
        weighted_mean(&self.kernels[x as usize], row)
    }

    /// The slice of a snapped history at stage `i = key.stage() < N`.
    pub fn slice(&self, key: &HistKey) -> Arc<Slice> {
        if let Some(s) = self.cache.read().expect("cache poisoned").get(key) {
            return Arc::clone(s);
        }
        let slice = Arc::new(self.build_slice(key));
        let mut cache = self.cache.write().expect("cache poisoned");
        Arc::clone(cache.entry(key.clone()).or_insert(slice))
    }

    fn build_slice(&self, key: &HistKey) -> Slice {
        let n = self.params.n;
        let i = key.stage();
        assert!(i < n, "no slice at stage {i} = N");
        let len = self.params.grid_len();
        let step = self.step();
        let v_i = key.last_v();
        let candidates = v_candidates(v_i, self.params.g);
        let prices = self.key_prices(key);
        let times: Vec<f64> = key.times().collect();

        let ue: Vec<Vec<f64>> = if i + 1 == n {
            candidates
                .iter()
                .map(|&v| {
                    let mut xs = prices.clone();
                    let mut vs = times.clone();
                    xs.push(0.0);
                    vs.push(v);
                    (0..len)
                        .map(|x| {
                            xs[i] = x as f64 * step;
                            self.terminal.eval(&xs, &vs)
                        })
                        .collect()
                })
                .collect()
        } else {
            candidates
                .iter()
                .map(|&v| {
                    if v == 1.0 {
                        let mut vs = times.clone();
                        vs.push(1.0);
                        (0..len).map(|x| self.terminal_extension(&prices, &vs, x as f64 * step)).collect()
                    } else {
                        (0..len as u32)
                            .into_par_iter()
                            .map(|x| {
                                let child = self.slice(&key.child(x, v));
                                self.kernel_expectation(x, &child.um)
                            })
                            .collect()
                    }
                })
                .collect()
        };

        let mut um = vec![f64::NEG_INFINITY; len];
        let mut argmax = vec![0u16; len];
        for (k, row) in ue.iter().enumerate() {
            for x in 0..len {
                if row[x] > um[x] {
                    um[x] = row[x];
                    argmax[x] = k as u16;
                }
            }
        }
        let curvature = um.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs() / 8.0).fold(0.0, f64::max);
        Slice { candidates, um, argmax, ue: (i + 1 < n).then_some(ue), curvature }
    }

    /// `U^m_i(h, x)`; `x` is placed on the grid by linear interpolation.
    pub fn eval_um(&self, hist: &History, x: f64) -> Result<f64, DpError> {
        self.check_stage(hist, self.params.n - 1)?;
        if !(x >= 0.0 && x.is_finite()) {
            return Err(DpError::MalformedHistory(format!("price {x} is not a finite nonnegative number")));
        }
        if hist.last_v() == 1.0 && hist.stage() > 0 && x != hist.last_x() {
            return Err(DpError::MalformedHistory(format!("price moves after time 1: {} then {x}", hist.last_x())));
        }
        let slice = self.slice(&self.key(hist));
        Ok(interp_row(&slice.um, self.step(), x))
    }

    /// `U^e_i(h)` for `1 ≤ i ≤ N`, on the snapped history.
    pub fn eval_ue(&self, hist: &History) -> Result<f64, DpError> {
        self.check_stage(hist, self.params.n)?;
        if hist.stage() == 0 {
            return Err(DpError::MalformedHistory("stage-0 value has no history; use eval_ue0".into()));
        }
        let key = self.key(hist);
        if hist.stage() == self.params.n {
            return Ok(self.terminal.eval(&self.key_prices(&key), hist.vs()));
        }
        let slice = self.slice(&key);
        let x = key.xs[key.stage() - 1];
        if hist.last_v() == 1.0 {
            return Ok(slice.um[x as usize]);
        }
        Ok(self.kernel_expectation(x, &slice.um))
    }

    /// `U^e_0`: the absorbed-law expectation from `x = 1` of the stage-0 row.
    pub fn eval_ue0(&self) -> f64 {
        let slice = self.slice(&HistKey::default());
        let w = absorbed_grid_weights(1.0, self.params.stage_qv(), self.step(), self.params.grid_len());
        weighted_mean(&w, &slice.um)
    }

    /// Largest slice curvature bound per stage among cached slices.
    fn curvature_by_stage(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.params.n];
        for (k, s) in self.cache.read().expect("cache poisoned").iter() {
            out[k.stage()] = f64::max(out[k.stage()], s.curvature);
        }
        out
    }

    /// Numerical tolerance attached to `U^e_0`: interpolation, v-grid
    /// refinement (`G → 2G`) and the kernel mass defect.
    pub fn tolerance_report(&self) -> Result<DpTolerance, DpError> {
        let ue0 = self.eval_ue0();
        let interp = self.curvature_by_stage().iter().sum();
        let mut fine_params = self.params;
        fine_params.g *= 2;
        let fine = ValueModel::new(self.terminal.clone(), fine_params)?;
        let ue0_fine = fine.eval_ue0();
        let kernel_mass = self.kernels.iter().map(|w| (w.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
        let quad = kernel_mass * self.terminal.bound() * self.params.n as f64;
        let vgrid = (ue0_fine - ue0).abs();
        Ok(DpTolerance { ue0, ue0_fine, interp, vgrid, quad, total: interp + vgrid + quad })
    }

    /// Walk table for stage `i = hist.stage() < N` on the snapped history.
    pub fn build_walk_table(&self, hist: &History) -> Result<WalkTable, DpError> {
        self.check_stage(hist, self.params.n - 1)?;
        let key = self.key(hist);
        let start = self.snap_x(hist.last_x()) as usize;
        if start > self.params.x_max {
            return Err(DpError::GridOverflow { start, x_max: self.params.x_max });
        }
        let slice = self.slice(&key);
        let degenerate = hist.stage() > 0 && hist.last_v() == 1.0;
        Ok(WalkTable::from_terminal_row(hist.stage(), key, self.step(), slice.um.clone(), self.params.l, degenerate))
    }

    /// Compares `U^e_i(h)` with the walk-table value at the start of stage
    /// `i`, against the bound `g(ε)`.
    pub fn check_always(&self, hist: &History) -> Result<AlwaysReport, DpError> {
        let table = self.build_walk_table(hist)?;
        let continuous = if hist.stage() == 0 { self.eval_ue0() } else { self.eval_ue(hist)? };
        let start = (hist.last_x() / self.step() + 1e-9).floor() as usize;
        let walk = table.get(start, 0).ok_or(DpError::GridOverflow { start, x_max: self.params.x_max })?;
        let gap = (continuous - walk).abs();
        let bound = self.params.walk_gap_bound(&self.terminal);
        Ok(AlwaysReport { continuous, walk, gap, bound, exceeded: gap > bound })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpTolerance {
    pub ue0: f64,
    /// `U^e_0` recomputed with a v-grid twice as fine.
    pub ue0_fine: f64,
    pub interp: f64,
    pub vgrid: f64,
    pub quad: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlwaysReport {
    pub continuous: f64,
    pub walk: f64,
    pub gap: f64,
    pub bound: f64,
    pub exceeded: bool,
}

/// `Ū_i(X, j)`: the stage-`i` value after `j` walk steps at level `X`.
///
/// Row `L` is the stage row `U^m_i(h, X·h)`; earlier rows average the two
/// neighbours one step later, and level 0 is absorbing. Row `j` is stored
/// for `X = 0..=X_max+j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkTable {
    pub stage: usize,
    pub key: HistKey,
    pub step: f64,
    rows: Vec<Vec<f64>>,
}

impl WalkTable {
    /// Builds all rows from the terminal row. When `degenerate` (the stage
    /// starts at time 1) every row is a copy of the terminal row.
    pub fn from_terminal_row(stage: usize, key: HistKey, step: f64, terminal: Vec<f64>, l: usize, degenerate: bool) -> Self {
        assert!(terminal.len() > l, "terminal row shorter than the walk length");
        let mut rows = vec![Vec::new(); l + 1];
        rows[l] = terminal;
        for j in (0..l).rev() {
            let next = &rows[j + 1];
            let width = next.len() - 1;
            let row = if degenerate {
                next[..width].to_vec()
            } else {
                let mut row = Vec::with_capacity(width);
                row.push(next[0]);
                for x in 1..width {
                    row.push(0.5 * (next[x - 1] + next[x + 1]));
                }
                row
            };
            rows[j] = row;
        }
        Self { stage, key, step, rows }
    }

    pub fn l(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn width(&self, j: usize) -> usize {
        self.rows[j].len()
    }

    pub fn get(&self, x: usize, j: usize) -> Option<f64> {
        self.rows.get(j).and_then(|r| r.get(x)).copied()
    }

    pub fn entry(&self, x: usize, j: usize) -> f64 {
        self.get(x, j).unwrap_or_else(|| panic!("walk table has no entry at X={x}, j={j}"))
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j]
    }

    /// CSV with columns `X,j,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "X,j,value")?;
        for (j, row) in self.rows.iter().enumerate() {
            for (x, v) in row.iter().enumerate() {
                writeln!(w, "{x},{j},{v:?}")?;
            }
        }
        Ok(())
    }
}
