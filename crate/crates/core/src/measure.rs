//! The explicit martingale measure `P` under which `E_P F_N ≈ U^e_0`.
//!
//! Stage `i` of a sample runs a Brownian piece with quadratic variation
//! `S/N − Δ` on `[v_i, v*_i]`, then picks the next checkpoint time
//! `v_{i+1} = V_{i+1}(h, ω(v*_i))` and runs a second piece with quadratic
//! variation `Δ` on `[v*_i, v_{i+1}]`. Both pieces are absorbed at 0.
//!
//! `V_{i+1}` is the smallest interior candidate time whose value is within
//! `ε` of the stage maximum; `V*_i` sits just below the `ε`-quantile of
//! `V_{i+1}(h, ξ)` so that the second piece fits with probability `≥ 1 − ε`.

use std::collections::HashMap;
use std::io::Write;
use std::ops::Range;
use std::sync::{Arc, RwLock};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dp::{interp_row, v_candidates, DpError, HistKey, History, ValueModel};
use crate::functionals::eval_fn;
use crate::paths::{Path, PathBuilder, PathError};
use crate::stochastics::{mix64, sample_scaled_bm, AbsorbedTerminal, Estimate, QvMode, RngStream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("no candidate time strictly between v={v} and 1; refine the v-grid")]
    GridExhausted { v: f64 },
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Path(#[from] PathError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureConfig {
    /// Knots per Brownian piece.
    pub n_steps: usize,
    /// Draws of `ξ` per history when estimating the `ε`-quantile.
    pub quantile_samples: usize,
    pub qv_mode: QvMode,
    pub quantile_seed: u64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self { n_steps: 1024, quantile_samples: 10_000, qv_mode: QvMode::Exact, quantile_seed: 0x5eed }
    }
}

/// The choice functions `V_{i+1}` and `V*_i`, with `V*` memoized per
/// snapped history.
pub struct ChoiceTables {
    model: Arc<ValueModel>,
    cfg: MeasureConfig,
    v_star: RwLock<HashMap<HistKey, f64>>,
}

impl std::fmt::Debug for ChoiceTables {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChoiceTables").field("cfg", &self.cfg).field("memoized", &self.memoized()).finish()
    }
}

fn key_stream(key: &HistKey) -> u64 {
    let mut h = mix64(key.stage() as u64);
    for x in key.x_indices() {
        h = mix64(h ^ *x as u64);
    }
    for v in key.times() {
        h = mix64(h ^ v.to_bits());
    }
    h
}

pub fn make_choice_tables(model: Arc<ValueModel>, cfg: MeasureConfig) -> ChoiceTables {
    ChoiceTables { model, cfg, v_star: RwLock::new(HashMap::new()) }
}

impl ChoiceTables {
    pub fn model(&self) -> &ValueModel {
        &self.model
    }

    pub fn config(&self) -> &MeasureConfig {
        &self.cfg
    }

    pub fn memoized(&self) -> usize {
        self.v_star.read().expect("memo poisoned").len()
    }

    /// Candidate times after `v_i` and `U^e_{i+1}(h + (x, v))` at each.
    /// At the last stage `U` is evaluated at `x` directly; earlier stages
    /// interpolate the tabulated values in `x`.
    pub fn candidate_values(&self, key: &HistKey, x: f64) -> (Vec<f64>, Vec<f64>) {
        let params = self.model.params();
        let cands = v_candidates(key.last_v(), params.g);
        let i = key.stage();
        let values = if i + 1 == params.n {
            let step = self.model.step();
            let mut xs: Vec<f64> = key.x_indices().iter().map(|k| *k as f64 * step).collect();
            let mut vs: Vec<f64> = key.times().collect();
            xs.push(x);
            vs.push(0.0);
            cands
                .iter()
                .map(|&v| {
                    vs[i] = v;
                    self.model.terminal().eval(&xs, &vs)
                })
                .collect()
        } else {
            let slice = self.model.slice(key);
            let ue = slice.ue.as_ref().expect("inner stages keep candidate rows");
            ue.iter().map(|row| interp_row(row, self.model.step(), x)).collect()
        };
        (cands, values)
    }

    fn choose_key(&self, key: &HistKey, x: f64) -> Result<f64, MeasureError> {
        let v_i = key.last_v();
        let (cands, values) = self.candidate_values(key, x);
        let target = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let interior: Vec<usize> = (1..cands.len() - 1).filter(|&k| cands[k] > v_i && cands[k] < 1.0).collect();
        if interior.is_empty() {
            return Err(MeasureError::GridExhausted { v: v_i });
        }
        let eps = self.model.params().eps;
        if let Some(&k) = interior.iter().find(|&&k| values[k] >= target - eps) {
            return Ok(cands[k]);
        }
        let mut best = interior[0];
        for &k in &interior[1..] {
            if values[k] > values[best] {
                best = k;
            }
        }
        Ok(cands[best])
    }

    /// `V_{i+1}(h, x)` for a history at stage `i < N` (snapped to the grid).
    pub fn choose_next_v(&self, hist: &History, x: f64) -> Result<f64, MeasureError> {
        self.choose_key(&self.model.key(hist), x)
    }

    /// `V*_i(h)`: the `ε`-quantile of `V_{i+1}(h, ξ)` over seeded draws of
    /// `ξ`, lowered by half a candidate step so it lies strictly inside
    /// `(v_i, quantile)`.
    pub fn v_star(&self, hist: &History) -> Result<f64, MeasureError> {
        let key = self.model.key(hist);
        if let Some(v) = self.v_star.read().expect("memo poisoned").get(&key) {
            return Ok(*v);
        }
        let params = self.model.params();
        let start = match key.x_indices().last() {
            Some(x) => *x as f64 * self.model.step(),
            None => 1.0,
        };
        let law = AbsorbedTerminal::new(start, params.stage_qv());
        let mut rng = RngStream::new(self.cfg.quantile_seed, key_stream(&key)).rng();
        let n = self.cfg.quantile_samples.max(1);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let xi = law.sample(&mut rng);
            draws.push(self.choose_key(&key, xi)?);
        }
        draws.sort_by(f64::total_cmp);
        let q = draws[((params.eps * n as f64).floor() as usize).min(n - 1)];
        let v_i = key.last_v();
        let v = q - (1.0 - v_i) / (2.0 * params.g as f64);
        let mut memo = self.v_star.write().expect("memo poisoned");
        Ok(*memo.entry(key).or_insert(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    Completed,
    Absorbed,
    TimeExhausted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Absorbed => "absorbed",
            Termination::TimeExhausted => "time_exhausted",
        }
    }
}

/// What happened during stage `i` of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    /// `v_i` and `x_i = ω(v_i)`.
    pub v: f64,
    pub x: f64,
    pub v_star: f64,
    /// `ω(v*_i)`.
    pub x_star: f64,
    /// `v_{i+1}` and `ω(v_{i+1})`.
    pub v_next: f64,
    pub x_next: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSample {
    pub path: Path,
    pub stages: Vec<StageRecord>,
    pub termination: Termination,
}

impl MeasureSample {
    /// Checkpoints `(x_i, v_i)`, `i = 1..N`, from the bookkeeping. A stage
    /// that ends at time 1 or at 0 stops the sample; later checkpoints are
    /// `(ω(1), 1)`, matching what the time change reads off the path.
    pub fn checkpoints(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(n);
        let mut vs = Vec::with_capacity(n);
        for r in self.stages.iter().take_while(|r| r.v_next < 1.0 && r.x_next > 0.0) {
            xs.push(r.x_next);
            vs.push(r.v_next);
        }
        xs.resize(n, self.path.terminal());
        vs.resize(n, 1.0);
        (xs, vs)
    }
}

/// Draws one path from `P`.
pub fn sample_measure_path<R: Rng + ?Sized>(rng: &mut R, tables: &ChoiceTables) -> Result<MeasureSample, MeasureError> {
    let model = tables.model();
    let params = model.params();
    let cfg = tables.config();
    let (stage_qv, delta) = (params.stage_qv(), params.delta_qv);
    let mut builder = PathBuilder::new();
    let mut hist = History::empty();
    let mut stages = Vec::with_capacity(params.n);
    let (mut v, mut x) = (0.0, 1.0);
    let mut termination = Termination::Completed;
    for i in 0..params.n {
        let v_star = tables.v_star(&hist)?;
        let first = sample_scaled_bm(rng, x, stage_qv - delta, cfg.n_steps, v, v_star, cfg.qv_mode);
        builder.extend_piece(&first.times, &first.values);
        if first.absorbed {
            stages.push(StageRecord { stage: i, v, x, v_star, x_star: 0.0, v_next: 1.0, x_next: 0.0 });
            termination = Termination::Absorbed;
            break;
        }
        let x_star = first.end_value();
        let chosen = tables.choose_next_v(&hist, x_star)?;
        let v_next = if chosen > v_star { chosen } else { 1.0 };
        let second = sample_scaled_bm(rng, x_star, delta, cfg.n_steps, v_star, v_next, cfg.qv_mode);
        builder.extend_piece(&second.times, &second.values);
        let x_next = second.end_value();
        stages.push(StageRecord { stage: i, v, x, v_star, x_star, v_next, x_next });
        if second.absorbed {
            termination = Termination::Absorbed;
            break;
        }
        if v_next == 1.0 {
            termination = Termination::TimeExhausted;
            break;
        }
        hist.push(model.snap_x(x_next) as f64 * model.step(), v_next)?;
        v = v_next;
        x = x_next;
    }
    Ok(MeasureSample { path: builder.finish_flat()?, stages, termination })
}

/// Samples `m` paths on streams `0..m` of `seed` and maps each to a summary;
/// results are in stream order whatever the scheduling.
pub fn map_samples<T, F>(tables: &ChoiceTables, m: usize, seed: u64, f: F) -> Result<Vec<T>, MeasureError>
where
    T: Send,
    F: Fn(u64, &MeasureSample) -> T + Sync,
{
    map_sample_range(tables, 0..m as u64, seed, f)
}

/// [`map_samples`] over an arbitrary range of stream ids.
pub fn map_sample_range<T, F>(tables: &ChoiceTables, ids: Range<u64>, seed: u64, f: F) -> Result<Vec<T>, MeasureError>
where
    T: Send,
    F: Fn(u64, &MeasureSample) -> T + Sync,
{
    // Warm the stage-0 quantile so workers do not race to compute it.
    tables.v_star(&History::empty())?;
    ids.into_par_iter()
        .map(|id| {
            let mut rng = RngStream::new(seed, id).rng();
            sample_measure_path(&mut rng, tables).map(|s| f(id, &s))
        })
        .collect()
}

/// Mean and standard error of `F_N` over `m` samples from `P`.
pub fn estimate_ep(tables: &ChoiceTables, m: usize, seed: u64) -> Result<Estimate, MeasureError> {
    assert!(m >= 2, "need at least two samples");
    let model = tables.model();
    let values = map_samples(tables, m, seed, |_, s| eval_fn(model.terminal(), model.params(), &s.path))?;
    Ok(Estimate::from_samples(values))
}

/// Bookkeeping CSV, one row per stage reached.
pub fn write_bookkeeping<'a, W: Write, I>(mut w: W, samples: I) -> std::io::Result<()>
where
    I: IntoIterator<Item = (u64, &'a MeasureSample)>,
{
    writeln!(w, "path,stage,v,v_star,x,x_star,v_next,x_next,termination")?;
    for (id, s) in samples {
        for r in &s.stages {
            writeln!(
                w,
                "{id},{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                r.stage,
                r.v,
                r.v_star,
                r.x,
                r.x_star,
                r.v_next,
                r.x_next,
                s.termination.as_str()
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{builtin_terminal, checkpoints, ExperimentParams};
    use crate::paths::quadratic_variation;

    fn tables(name: &str, n: usize, l: usize, g: usize, cfg: MeasureConfig) -> ChoiceTables {
        let t = builtin_terminal(name, 2.0, n).unwrap();
        let p = ExperimentParams::derive(1.0, n, l, 0.05, g, &t).unwrap();
        make_choice_tables(Arc::new(ValueModel::new(t, p).unwrap()), cfg)
    }

    fn small_cfg() -> MeasureConfig {
        MeasureConfig { n_steps: 64, quantile_samples: 2000, ..MeasureConfig::default() }
    }

    #[test]
    fn constant_payoff_picks_first_interior_candidate() {
        let t = tables("constant(0.5)", 2, 8, 4, small_cfg());
        assert_eq!(t.choose_next_v(&History::empty(), 1.3).unwrap(), 0.25);
        let h = History::new(vec![1.0], vec![0.25]).unwrap();
        assert_eq!(t.choose_next_v(&h, 0.4).unwrap(), 0.25 + 0.75 * 0.25);
        let vs = t.v_star(&History::empty()).unwrap();
        assert_eq!(vs, 0.25 - 1.0 / 8.0);
        let e = estimate_ep(&t, 50, 3).unwrap();
        assert_eq!((e.mean, e.stderr), (0.5, 0.0));
    }

    #[test]
    fn chosen_time_is_near_optimal_or_interior_best() {
        let t = tables("capped_max", 2, 16, 8, small_cfg());
        let key = t.model().key(&History::empty());
        for x in [0.3, 1.0, 1.7, 2.5] {
            let v = t.choose_next_v(&History::empty(), x).unwrap();
            let (cands, values) = t.candidate_values(&key, x);
            let k = cands.iter().position(|c| *c == v).unwrap();
            assert!(k > 0 && k < cands.len() - 1);
            let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let interior_best = values[1..cands.len() - 1].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(values[k] >= best - 0.05 || values[k] == interior_best);
        }
    }

    #[test]
    fn quantile_rule_and_memo_are_deterministic() {
        let t = tables("capped_range", 2, 16, 8, small_cfg());
        let h = History::empty();
        let a = t.v_star(&h).unwrap();
        assert_eq!(t.memoized(), 1);
        let fresh = tables("capped_range", 2, 16, 8, small_cfg());
        assert_eq!(fresh.v_star(&h).unwrap().to_bits(), a.to_bits());
        assert!(a > 0.0 && a < 1.0);
        // at most an ε fraction of fresh draws fall at or below V*
        let law = AbsorbedTerminal::new(1.0, 0.5);
        let mut rng = RngStream::new(99, 0).rng();
        let below = (0..2000).filter(|_| t.choose_next_v(&h, law.sample(&mut rng)).unwrap() <= a).count();
        assert!((below as f64) / 2000.0 <= 0.05 + 4.0 * (0.05f64 * 0.95 / 2000.0).sqrt());
    }

    #[test]
    fn samples_respect_construction() {
        let t = tables("capped_terminal", 2, 16, 8, small_cfg());
        let params = *t.model().params();
        let mut seen = HashMap::new();
        for id in 0..300 {
            let mut rng = RngStream::new(17, id).rng();
            let s = sample_measure_path(&mut rng, &t).unwrap();
            *seen.entry(s.termination).or_insert(0) += 1;
            let mut last = 0.0;
            for r in &s.stages {
                assert!(last <= r.v && r.v < r.v_star && r.v_star < r.v_next, "{r:?}");
                last = r.v_next;
            }
            let (xs, vs) = checkpoints(&params, &s.path);
            let (bx, bv) = s.checkpoints(params.n);
            for j in 0..params.n {
                assert!((xs[j] - bx[j]).abs() < 1e-9 && (vs[j] - bv[j]).abs() < 1e-9, "{xs:?} {vs:?} vs {bx:?} {bv:?}");
            }
            let qv = quadratic_variation(&s.path).total();
            match s.termination {
                Termination::Completed => assert!((qv - params.s).abs() < 1e-9),
                Termination::TimeExhausted => assert!(qv < params.s),
                Termination::Absorbed => assert_eq!(s.path.terminal(), 0.0),
            }
        }
        // absorption before qv 1 from 1 has probability 2Φ(−1) ≈ 0.32
        let absorbed = *seen.get(&Termination::Absorbed).unwrap_or(&0) as f64 / 300.0;
        assert!((absorbed - 0.3173).abs() < 4.0 * (0.3173f64 * 0.6827 / 300.0).sqrt(), "{seen:?}");
    }

    #[test]
    fn bookkeeping_csv_has_one_row_per_stage() {
        let t = tables("capped_terminal", 2, 8, 4, small_cfg());
        let mut rng = RngStream::new(1, 1).rng();
        let s = sample_measure_path(&mut rng, &t).unwrap();
        let mut buf = Vec::new();
        write_bookkeeping(&mut buf, [(7, &s)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + s.stages.len());
        assert!(text.lines().nth(1).unwrap().starts_with("7,0,0.0,"));
    }
}
