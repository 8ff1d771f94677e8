//! Price paths on `[0, 1]`: piecewise-linear interpolation of knots, started
//! at 1 and absorbed at 0.
//!
//! Besides evaluation this module carries everything that looks at a path as
//! a whole: the uniform and Hausdorff metrics, the realized quadratic
//! variation and its inverse (the time change), hitting times of a price
//! grid, and the regularity flags used to decide whether a path is "typical".

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path as FsPath;

use thiserror::Error;

/// Relative tolerance used when deciding whether a quadratic-variation level
/// has been reached. Sums of squared increments are not exact in floating
/// point, so a level that was constructed to be hit exactly may be missed by
/// a few ulps.
pub const QV_REL_TOL: f64 = 1e-10;

/// Relative tolerance (in units of the grid step) for a price to count as
/// lying on a grid level.
pub const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("times and values differ in length ({times} vs {values})")]
    LengthMismatch { times: usize, values: usize },
    #[error("a path needs at least two knots, got {0}")]
    TooShort(usize),
    #[error("path must start at 1, got {0}")]
    BadStart(f64),
    #[error("negative value {value} at knot {index}")]
    NegativeValue { index: usize, value: f64 },
    #[error("non-finite entry at knot {0}")]
    NonFinite(usize),
    #[error("times not strictly increasing at knot {0}")]
    NonMonotoneTime(usize),
    #[error("time grid must run from 0 to 1, got [{first}, {last}]")]
    BadEndpoints { first: f64, last: f64 },
    #[error("path leaves 0 at knot {index} after being absorbed at knot {absorbed_at}")]
    NotAbsorbed { absorbed_at: usize, index: usize },
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("path file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("path file: {0}")]
    Io(String),
}

/// How `make_path` treats a path that moves again after touching 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Absorption {
    /// Reject with [`PathError::NotAbsorbed`].
    #[default]
    Strict,
    /// Overwrite everything after the first zero with 0.
    Coerce,
}

/// A positive continuous price path, linear between knots.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Path {
    /// Validates knots and builds a path. See [`Absorption`] for the
    /// treatment of paths that leave 0.
    pub fn new(times: Vec<f64>, values: Vec<f64>, absorption: Absorption) -> Result<Self, PathError> {
        if times.len() != values.len() {
            return Err(PathError::LengthMismatch { times: times.len(), values: values.len() });
        }
        if times.len() < 2 {
            return Err(PathError::TooShort(times.len()));
        }
        for (k, (t, v)) in times.iter().zip(&values).enumerate() {
            if !t.is_finite() || !v.is_finite() {
                return Err(PathError::NonFinite(k));
            }
        }
        let (first, last) = (times[0], times[times.len() - 1]);
        if first != 0.0 || last != 1.0 {
            return Err(PathError::BadEndpoints { first, last });
        }
        if let Some(k) = (1..times.len()).find(|&k| times[k] <= times[k - 1]) {
            return Err(PathError::NonMonotoneTime(k));
        }
        if values[0] != 1.0 {
            return Err(PathError::BadStart(values[0]));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(PathError::NegativeValue { index, value });
        }
        let mut values = values;
        if let Some(absorbed_at) = values.iter().position(|v| *v == 0.0) {
            if let Some(index) = (absorbed_at + 1..values.len()).find(|&k| values[k] != 0.0) {
                match absorption {
                    Absorption::Strict => return Err(PathError::NotAbsorbed { absorbed_at, index }),
                    Absorption::Coerce => values[absorbed_at..].iter_mut().for_each(|v| *v = 0.0),
                }
            }
        }
        Ok(Self { times, values })
    }

    /// The constant path `ω ≡ 1`.
    pub fn constant() -> Self {
        Self { times: vec![0.0, 1.0], values: vec![1.0, 1.0] }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Terminal price `ω(1)`.
    pub fn terminal(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `ω(t)` by linear interpolation; exact at knots.
    pub fn eval(&self, t: f64) -> Result<f64, PathError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(PathError::TimeOutOfRange(t));
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        let k = self.segment_index(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let (a, b) = (self.values[k], self.values[k + 1]);
        if t == t0 {
            return a;
        }
        if t == t1 {
            return b;
        }
        a + (b - a) * (t - t0) / (t1 - t0)
    }

    /// Index `k` of the segment `[t_k, t_{k+1}]` containing `t` (the last
    /// segment for `t = 1`).
    pub(crate) fn segment_index(&self, t: f64) -> usize {
        let n = self.times.len();
        match self.times.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(k) => k.min(n - 2),
            Err(k) => k.saturating_sub(1).min(n - 2),
        }
    }

    /// Reads a two-column `t,value` CSV with a header row.
    pub fn read_csv<R: BufRead>(reader: R, absorption: Absorption) -> Result<Self, PathError> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| PathError::Io(e.to_string()))?;
            let line = line.trim();
            if idx == 0 || line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let mut next = |name: &str| -> Result<f64, PathError> {
                let raw = cols.next().ok_or_else(|| PathError::Parse {
                    line: idx + 1,
                    msg: format!("missing column {name}"),
                })?;
                raw.trim().parse::<f64>().map_err(|e| PathError::Parse {
                    line: idx + 1,
                    msg: format!("{name}: {e}"),
                })
            };
            times.push(next("t")?);
            values.push(next("value")?);
        }
        Self::new(times, values, absorption)
    }

    pub fn load(path: &FsPath, absorption: Absorption) -> Result<Self, PathError> {
        let file = std::fs::File::open(path).map_err(|e| PathError::Io(format!("{}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(file), absorption)
    }

    /// Writes the knots as `t,value` CSV. Floats are printed in shortest
    /// round-trip form so that `read_csv` reproduces the path bit for bit.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,value")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t:?},{v:?}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Path({} knots, ω(1)={})", self.len(), self.terminal())
    }
}

/// Incremental construction of a path from consecutive pieces.
///
/// Pieces must be contiguous: each starts where the previous one ended (same
/// time and value), and that shared knot is stored once.
#[derive(Debug, Clone)]
pub struct PathBuilder {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Default for PathBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl PathBuilder {
    pub fn new() -> Self {
        Self { times: vec![0.0], values: vec![1.0] }
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("builder is never empty")
    }

    pub fn last_value(&self) -> f64 {
        *self.values.last().expect("builder is never empty")
    }

    /// Appends a knot strictly after the current end.
    pub fn push(&mut self, t: f64, v: f64) {
        debug_assert!(t > self.last_time(), "knot at {t} not after {}", self.last_time());
        self.times.push(t);
        self.values.push(v);
    }

    /// Appends a piece whose first knot coincides with the current end.
    pub fn extend_piece(&mut self, times: &[f64], values: &[f64]) {
        debug_assert_eq!(times[0], self.last_time());
        for (t, v) in times.iter().zip(values).skip(1) {
            self.push(*t, *v);
        }
    }

    /// Holds the current value until time 1.
    pub fn finish_flat(mut self) -> Result<Path, PathError> {
        if self.last_time() < 1.0 {
            let v = self.last_value();
            self.push(1.0, v);
        }
        Path::new(self.times, self.values, Absorption::Strict)
    }
}

/// `sup_t |ω(t) − ω'(t)|`, exact for piecewise-linear paths: the gap is
/// linear between the union of both knot grids.
pub fn uniform_distance(a: &Path, b: &Path) -> f64 {
    let mut best = 0.0_f64;
    for &t in a.times.iter().chain(&b.times) {
        best = best.max((a.eval_unchecked(t) - b.eval_unchecked(t)).abs());
    }
    best
}

/// ℓ∞ distance from the point `(t0, x0)` to the segment joining
/// `(t1, a)` and `(t2, b)`.
///
/// `max(|t − t0|, |x(t) − x0|)` is convex and piecewise linear in `t`, so
/// the minimum sits at an endpoint, a kink, or a crossing of the two terms.
fn point_segment_linf(t0: f64, x0: f64, t1: f64, a: f64, t2: f64, b: f64) -> f64 {
    let slope = (b - a) / (t2 - t1);
    let x_at = |t: f64| a + slope * (t - t1);
    let cost = |t: f64| (t - t0).abs().max((x_at(t) - x0).abs());
    let mut best = cost(t1).min(cost(t2));
    let mut consider = |t: f64| {
        if t > t1 && t < t2 {
            best = best.min(cost(t));
        }
    };
    consider(t0);
    if slope != 0.0 {
        consider(t1 + (x0 - a) / slope);
    }
    // t − t0 = ±(a + slope (t − t1) − x0)
    for sign in [1.0, -1.0] {
        let denom = 1.0 - sign * slope;
        if denom != 0.0 {
            consider((t0 + sign * (a - slope * t1 - x0)) / denom);
        }
    }
    best
}

/// Distance from `(t0, x0)` to `graph(ω) ∪ {1}×[0,∞)`.
fn point_to_extended_graph(t0: f64, x0: f64, path: &Path) -> f64 {
    let mut best = (1.0 - t0).min((x0 - path.eval_unchecked(t0)).abs());
    let times = &path.times;
    // Only segments meeting [t0 − best, t0 + best] can do better.
    let mut k = path.segment_index((t0 - best).max(0.0));
    while k + 1 < times.len() && times[k] <= t0 + best {
        let d = point_segment_linf(t0, x0, times[k], path.values[k], times[k + 1], path.values[k + 1]);
        best = best.min(d);
        k += 1;
    }
    best
}

/// Samples the graph of `path` so that consecutive points are at most
/// `resolution` apart in both coordinates.
fn graph_points(path: &Path, resolution: f64) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(path.len());
    for k in 0..path.len() - 1 {
        let (t1, t2) = (path.times[k], path.times[k + 1]);
        let (a, b) = (path.values[k], path.values[k + 1]);
        let span = (t2 - t1).max((b - a).abs());
        let pieces = ((span / resolution).ceil() as usize).max(1);
        for p in 0..pieces {
            let s = p as f64 / pieces as f64;
            pts.push((t1 + s * (t2 - t1), a + s * (b - a)));
        }
    }
    pts.push((1.0, path.terminal()));
    pts
}

fn directed_hausdorff(from: &Path, to: &Path, resolution: f64) -> f64 {
    graph_points(from, resolution)
        .into_iter()
        .map(|(t, x)| point_to_extended_graph(t, x, to))
        .fold(0.0, f64::max)
}

/// Hausdorff distance (ℓ∞ norm on `[0,1]×[0,∞)`) between the extended graphs
/// `graph(ω) ∪ {1}×[0,∞)`.
///
/// Each graph is sampled at `resolution`; the distance from a sample point to
/// the other extended graph is computed exactly (segment by segment, the ray
/// contributing `1 − t`). The ray points themselves are at distance 0 from the
/// other set. The result underestimates the true distance by at most
/// `resolution`.
pub fn hausdorff_distance(a: &Path, b: &Path, resolution: f64) -> f64 {
    assert!(resolution > 0.0, "resolution must be positive");
    directed_hausdorff(a, b, resolution).max(directed_hausdorff(b, a, resolution))
}

/// Running sum of squared increments on the path's own knot grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QvProfile {
    times: Vec<f64>,
    qv: Vec<f64>,
}

impl QvProfile {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn qv(&self) -> &[f64] {
        &self.qv
    }

    pub fn total(&self) -> f64 {
        self.qv[self.qv.len() - 1]
    }

    /// First time the (linearly interpolated) quadratic variation reaches
    /// `level`; `None` stands for +∞ (the level is never reached).
    ///
    /// Knots whose qv lies within `QV_REL_TOL·level` of the level count as
    /// hitting it; among those the one nearest the level wins, so a
    /// near-flat last increment does not move the answer to an earlier knot.
    pub fn time_change(&self, level: f64) -> Option<f64> {
        assert!(level >= 0.0, "qv level must be non-negative");
        if level == 0.0 {
            return Some(0.0);
        }
        let tol = QV_REL_TOL * level;
        let lo = self.qv.partition_point(|&q| q < level - tol);
        if lo == self.qv.len() {
            return None;
        }
        let hi = self.qv.partition_point(|&q| q <= level + tol);
        if hi > lo {
            let k = (lo..hi).min_by(|a, b| (self.qv[*a] - level).abs().total_cmp(&(self.qv[*b] - level).abs())).expect("band is non-empty");
            return Some(self.times[k]);
        }
        let (q0, q1) = (self.qv[lo - 1], self.qv[lo]);
        let (t0, t1) = (self.times[lo - 1], self.times[lo]);
        let frac = ((level - q0) / (q1 - q0)).clamp(0.0, 1.0);
        Some((t0 + frac * (t1 - t0)).min(t1))
    }
}

pub fn quadratic_variation(path: &Path) -> QvProfile {
    let mut qv = Vec::with_capacity(path.len());
    let mut acc = 0.0;
    qv.push(0.0);
    for w in path.values.windows(2) {
        let d = w[1] - w[0];
        acc += d * d;
        qv.push(acc);
    }
    QvProfile { times: path.times.clone(), qv }
}

/// `φ_s(ω)`: first time the quadratic variation of `ω` reaches `s`, or `None`
/// (+∞) if it never does.
pub fn time_change(path: &Path, s: f64) -> Option<f64> {
    quadratic_variation(path).time_change(s)
}

/// Successive hits of the price grid `{k·step : k ∈ ℕ₀}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridHits {
    pub times: Vec<f64>,
    pub levels: Vec<i64>,
}

impl GridHits {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn on_grid(x: f64, step: f64) -> Option<i64> {
    let k = (x / step).round();
    ((x / step - k).abs() <= GRID_TOL).then_some(k as i64)
}

/// First time at or after `from` (inside segment `seg` onwards) at which the
/// path reaches one of the levels `lo·step` or `hi·step`, and which one.
fn first_exit(path: &Path, from: f64, mut seg: usize, lo: Option<i64>, hi: i64, step: f64, stop: f64) -> Option<(f64, i64, usize)> {
    let hi_x = hi as f64 * step;
    let lo_x = lo.map(|l| l as f64 * step);
    let n = path.len();
    let mut t_start = from;
    let mut a = path.eval_unchecked(from);
    while seg + 1 < n {
        let (t1, b) = (path.times[seg + 1], path.values[seg + 1]);
        if t_start > stop {
            return None;
        }
        let hit = |level_x: f64, level: i64| -> Option<(f64, i64)> {
            let t = if (b - level_x).abs() <= GRID_TOL * step {
                t1
            } else {
                t_start + (t1 - t_start) * (level_x - a) / (b - a)
            };
            Some((t, level))
        };
        let found = if b >= hi_x - GRID_TOL * step && a < hi_x {
            hit(hi_x, hi)
        } else if let (Some(lx), Some(l)) = (lo_x, lo) {
            if b <= lx + GRID_TOL * step && a > lx {
                hit(lx, l)
            } else {
                None
            }
        } else {
            None
        };
        if let Some((t, level)) = found {
            return (t <= stop).then_some((t, level, seg));
        }
        seg += 1;
        t_start = t1;
        a = b;
    }
    None
}

/// Stopping times at which the path visits the grid `step·ℕ₀`, starting the
/// search at `start` and truncating at `stop` (inclusive).
///
/// `T_0` is the first grid visit at or after `start`; each later `T_j` is the
/// first visit to a grid level different from the previous one. Because paths
/// are continuous, consecutive levels differ by exactly one. A visit to level
/// 0 ends the list (the path is absorbed there).
pub fn grid_hitting_times(path: &Path, start: f64, stop: f64, step: f64) -> GridHits {
    assert!(step > 0.0, "grid step must be positive");
    assert!((0.0..=1.0).contains(&start) && start <= stop && stop <= 1.0, "bad window [{start}, {stop}]");
    let mut hits = GridHits::default();
    let x0 = path.eval_unchecked(start);
    let mut seg = path.segment_index(start);
    let (t, level) = match on_grid(x0, step) {
        Some(k) => (start, k),
        None => {
            let below = (x0 / step).floor() as i64;
            match first_exit(path, start, seg, Some(below), below + 1, step, stop) {
                Some((t, level, s)) => {
                    seg = s;
                    (t, level)
                }
                None => return hits,
            }
        }
    };
    hits.times.push(t);
    hits.levels.push(level);
    let mut current = (t, level);
    while current.1 > 0 {
        let (t, level) = current;
        let lo = Some(level - 1);
        match first_exit(path, t, seg, lo, level + 1, step, stop) {
            Some((t_next, next, s)) => {
                seg = s;
                // A hit at a knot belongs to the next segment's start.
                if t_next >= path.times[(seg + 1).min(path.len() - 1)] {
                    seg = (seg + 1).min(path.len() - 2);
                }
                hits.times.push(t_next);
                hits.levels.push(next);
                current = (t_next, next);
            }
            None => break,
        }
    }
    hits
}

/// Modulus of continuity `f`, increasing with `f(0+) = 0`.
pub trait Modulus {
    fn at(&self, delta: f64) -> f64;
}

impl<F: Fn(f64) -> f64> Modulus for F {
    fn at(&self, delta: f64) -> f64 {
        self(delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regularity {
    /// Total quadratic variation exceeds the budget `S`.
    pub in_a1: bool,
    /// The time-changed path breaks the modulus at some sampled pair of
    /// qv levels.
    pub in_a2: bool,
}

/// Flags a path as atypical. The time-changed path `s ↦ ω(φ_s)` is sampled at
/// `levels + 1` equally spaced qv levels in `[0, S]`, held constant after the
/// total quadratic variation is used up, and every sampled pair is checked
/// against `modulus` with additive slack `tol`.
pub fn check_regularity(path: &Path, budget: f64, modulus: &dyn Modulus, levels: usize, tol: f64) -> Regularity {
    assert!(budget > 0.0 && levels >= 1);
    let profile = quadratic_variation(path);
    let in_a1 = profile.total() > budget;
    let samples: Vec<f64> = (0..=levels)
        .map(|k| {
            let s = budget * k as f64 / levels as f64;
            let t = profile.time_change(s).unwrap_or(1.0);
            path.eval_unchecked(t)
        })
        .collect();
    let mut in_a2 = false;
    'outer: for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let lag = budget * (j - i) as f64 / levels as f64;
            if (samples[i] - samples[j]).abs() > modulus.at(lag) + tol {
                in_a2 = true;
                break 'outer;
            }
        }
    }
    Regularity { in_a1, in_a2 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(times: &[f64], values: &[f64]) -> Path {
        Path::new(times.to_vec(), values.to_vec(), Absorption::Strict).unwrap()
    }

    fn linear(n: usize, from: f64, to: f64) -> Path {
        let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let values = times.iter().map(|t| from + (to - from) * t).collect();
        Path::new(times, values, Absorption::Strict).unwrap()
    }

    #[test]
    fn make_path_validation() {
        assert_eq!(p(&[0.0, 1.0], &[1.0, 1.0]), Path::constant());
        assert!(matches!(
            Path::new(vec![0.0, 1.0], vec![1.0, -0.1], Absorption::Strict),
            Err(PathError::NegativeValue { index: 1, .. })
        ));
        assert!(matches!(
            Path::new(vec![0.0, 0.5, 1.0], vec![1.0, 0.0, 0.3], Absorption::Strict),
            Err(PathError::NotAbsorbed { absorbed_at: 1, index: 2 })
        ));
        let coerced = Path::new(vec![0.0, 0.5, 1.0], vec![1.0, 0.0, 0.3], Absorption::Coerce).unwrap();
        assert_eq!(coerced.values(), &[1.0, 0.0, 0.0]);
        assert!(matches!(Path::new(vec![0.0, 1.0], vec![2.0, 1.0], Absorption::Strict), Err(PathError::BadStart(_))));
        assert!(matches!(
            Path::new(vec![0.0, 0.6, 0.5, 1.0], vec![1.0; 4], Absorption::Strict),
            Err(PathError::NonMonotoneTime(2))
        ));
        assert!(matches!(Path::new(vec![0.0, 0.9], vec![1.0; 2], Absorption::Strict), Err(PathError::BadEndpoints { .. })));
        assert!(matches!(Path::new(vec![0.0], vec![1.0], Absorption::Strict), Err(PathError::TooShort(1))));
    }

    #[test]
    fn eval_interpolates() {
        assert_eq!(Path::constant().eval(0.37).unwrap(), 1.0);
        let up = p(&[0.0, 1.0], &[1.0, 2.0]);
        assert_eq!(up.eval(0.5).unwrap(), 1.5);
        assert_eq!(up.eval(0.0).unwrap(), 1.0);
        assert_eq!(up.eval(1.0).unwrap(), 2.0);
        assert!(matches!(up.eval(1.5), Err(PathError::TimeOutOfRange(_))));
        let kinked = p(&[0.0, 0.25, 1.0], &[1.0, 3.0, 0.0]);
        assert_eq!(kinked.eval(0.25).unwrap(), 3.0);
        assert!((kinked.eval(0.625).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_distance_examples() {
        let flat = Path::constant();
        let up = p(&[0.0, 1.0], &[1.0, 2.0]);
        assert_eq!(uniform_distance(&flat, &flat), 0.0);
        assert_eq!(uniform_distance(&flat, &up), 1.0);
        let zig = p(&[0.0, 0.3, 1.0], &[1.0, 1.6, 1.0]);
        assert!((uniform_distance(&flat, &zig) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn point_segment_distance_matches_dense_scan() {
        let cases = [
            (0.3, 0.5, 0.0, 1.0, 1.0, 2.0),
            (0.9, 0.0, 0.2, 0.4, 0.5, 0.1),
            (0.5, 3.0, 0.4, 2.9, 0.6, 2.95),
            (0.0, 1.0, 0.5, 0.0, 0.7, 5.0),
        ];
        for (t0, x0, t1, a, t2, b) in cases {
            let exact = point_segment_linf(t0, x0, t1, a, t2, b);
            let scan = (0..=100_000)
                .map(|k| {
                    let t = t1 + (t2 - t1) * k as f64 / 100_000.0;
                    let x = a + (b - a) * (t - t1) / (t2 - t1);
                    (t - t0).abs().max((x - x0).abs())
                })
                .fold(f64::INFINITY, f64::min);
            assert!((exact - scan).abs() < 1e-4, "{exact} vs {scan}");
            assert!(exact <= scan + 1e-15);
        }
    }

    #[test]
    fn hausdorff_constant_graphs() {
        let one = Path::constant();
        let high = p(&[0.0, 1.0], &[1.0, 1.0]);
        assert_eq!(hausdorff_distance(&one, &high, 1e-3), 0.0);
        // ω ≡ 1 against a path that jumps to 1.5 right away: the ray only
        // helps for t > 0.5.
        let lifted = p(&[0.0, 1e-9, 1.0], &[1.0, 1.5, 1.5]);
        let d = hausdorff_distance(&one, &lifted, 1e-3);
        assert!((d - 0.5).abs() < 1e-3, "{d}");
    }

    #[test]
    fn quadratic_variation_examples() {
        let qv = quadratic_variation(&Path::constant());
        assert_eq!(qv.total(), 0.0);
        let lin = linear(1000, 1.0, 2.0);
        assert!((quadratic_variation(&lin).total() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn time_change_examples() {
        assert_eq!(time_change(&Path::constant(), 0.0), Some(0.0));
        assert_eq!(time_change(&Path::constant(), 0.1), None);
        // walk with per-step qv q = 0.01
        let h = 0.1;
        let steps = [1, -1, -1, 1, 1, 1, -1, 1];
        let n = steps.len();
        let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let mut values = vec![1.0];
        for s in steps {
            let last: f64 = *values.last().unwrap();
            values.push(last + s as f64 * h);
        }
        let path = p(&times, &values);
        for k in 1..=n {
            assert_eq!(time_change(&path, k as f64 * h * h), Some(times[k]), "k={k}");
        }
        // half-way inside a step
        let t = time_change(&path, 2.5 * h * h).unwrap();
        assert!((t - 2.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn grid_hits_linear_path() {
        let up = p(&[0.0, 1.0], &[1.0, 2.0]);
        let hits = grid_hitting_times(&up, 0.0, 1.0, 0.25);
        assert_eq!(hits.levels, vec![4, 5, 6, 7, 8]);
        for (t, want) in hits.times.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert!((t - want).abs() < 1e-12);
        }
        let flat = grid_hitting_times(&Path::constant(), 0.0, 1.0, 0.25);
        assert_eq!(flat.levels, vec![4]);
        assert_eq!(flat.times, vec![0.0]);
    }

    #[test]
    fn grid_hits_stop_at_absorption() {
        let down = p(&[0.0, 0.5, 1.0], &[1.0, 0.0, 0.0]);
        let hits = grid_hitting_times(&down, 0.0, 1.0, 0.25);
        assert_eq!(hits.levels, vec![4, 3, 2, 1, 0]);
        assert!((hits.times[4] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grid_hits_off_grid_start_and_window() {
        // start at 1 with step 0.3: first hit is 0.9 or 1.2
        let path = p(&[0.0, 0.5, 1.0], &[1.0, 1.3, 0.7]);
        let hits = grid_hitting_times(&path, 0.0, 1.0, 0.3);
        assert_eq!(hits.levels, vec![4, 3]);
        assert!((hits.times[0] - 0.5 * (0.2 / 0.3)).abs() < 1e-12);
        // truncated window sees only the first hit
        let early = grid_hitting_times(&path, 0.0, 0.4, 0.3);
        assert_eq!(early.levels, vec![4]);
        // window starting later, on the way down from 1.18
        let late = grid_hitting_times(&path, 0.6, 1.0, 0.3);
        assert_eq!(late.levels, vec![3]);
    }

    #[test]
    fn regularity_flags() {
        let f = |d: f64| 10.0 * d.sqrt();
        let flat = check_regularity(&Path::constant(), 1.0, &f, 64, 0.0);
        assert!(!flat.in_a1 && !flat.in_a2);
        // ±h walk with total qv 2S
        let h = 0.1;
        let n = 200;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let values: Vec<f64> = (0..=n).map(|k| if k % 2 == 0 { 1.0 } else { 1.0 + h }).collect();
        let walk = p(&times, &values);
        let r = check_regularity(&walk, 1.0, &f, 64, 0.0);
        assert!(r.in_a1);
        assert!(!r.in_a2);
        // ω∘φ climbs 3 over 9 units of qv: slope 1/3 beats a 0.1·s modulus
        let jump = p(&[0.0, 0.5, 0.5 + 1e-6, 1.0], &[1.0, 1.0, 4.0, 4.0]);
        let tight = |d: f64| 0.1 * d;
        let r = check_regularity(&jump, 20.0, &tight, 64, 0.0);
        assert!(r.in_a2 && !r.in_a1);
        assert!(!check_regularity(&jump, 20.0, &|d: f64| d.sqrt(), 64, 0.0).in_a2);
    }

    #[test]
    fn csv_round_trip() {
        let path = p(&[0.0, 0.1234567890123, 1.0], &[1.0, 1.0 / 3.0, 0.7]);
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let back = Path::read_csv(&buf[..], Absorption::Strict).unwrap();
        assert_eq!(back, path);
        let bad = "t,value\n0,1\n0.5,-1\n1,1\n";
        assert!(Path::read_csv(bad.as_bytes(), Absorption::Strict).is_err());
        let junk = "t,value\n0,1\nfoo,1\n";
        assert!(matches!(Path::read_csv(junk.as_bytes(), Absorption::Strict), Err(PathError::Parse { line: 3, .. })));
    }
}
