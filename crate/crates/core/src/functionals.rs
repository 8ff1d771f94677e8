//! Terminal functions `U(x₁,…,x_N; v₁,…,v_N)` and the path functional
//! `F_N(ω) = U(ω(v₁),…,ω(v_N); v₁,…,v_N)` with `v_i = φ_{iS/N}(ω) ∧ 1`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::paths::{quadratic_variation, Path};
use crate::stochastics::calibrate_delta;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error("unknown terminal function `{0}` (expected capped_terminal, capped_max, capped_range or constant(c))")]
    UnknownTerminal(String),
    #[error("bad terminal argument: {0}")]
    BadArgument(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Declared modulus of continuity of a terminal function, with respect to
/// the ℓ∞ distance `max_j (|x_j − x'_j| ∨ |v_j − v'_j|)`.
#[derive(Clone)]
pub enum ModulusSpec {
    Zero,
    Lipschitz(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ModulusSpec {
    pub fn at(&self, delta: f64) -> f64 {
        match self {
            ModulusSpec::Zero => 0.0,
            ModulusSpec::Lipschitz(k) => k * delta,
            ModulusSpec::Custom(f) => f(delta),
        }
    }

    /// Largest `δ` with `f(δ) ≤ eps` (`+∞` for the zero modulus).
    pub fn inverse(&self, eps: f64) -> f64 {
        match self {
            ModulusSpec::Zero => f64::INFINITY,
            ModulusSpec::Lipschitz(k) => eps / k,
            ModulusSpec::Custom(f) => {
                let (mut lo, mut hi) = (0.0, 1.0);
                while f(hi) <= eps {
                    lo = hi;
                    hi *= 2.0;
                    if hi > 1e12 {
                        return f64::INFINITY;
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) <= eps {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
        }
    }
}

impl fmt::Debug for ModulusSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModulusSpec::Zero => write!(f, "Zero"),
            ModulusSpec::Lipschitz(k) => write!(f, "Lipschitz({k})"),
            ModulusSpec::Custom(_) => write!(f, "Custom"),
        }
    }
}

type TerminalFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// A bounded terminal payoff on checkpoints `(x_i, v_i)`.
///
/// Prices are clamped at `B` before the payoff is evaluated, so
/// `U(x ∧ B; v) = U(x; v)` holds by construction.
#[derive(Clone)]
pub struct TerminalFunction {
    name: String,
    arity: usize,
    bound: f64,
    clamp: f64,
    modulus: ModulusSpec,
    eval: Arc<TerminalFn>,
}

impl fmt::Debug for TerminalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalFunction")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .field("bound", &self.bound)
            .field("clamp", &self.clamp)
            .field("modulus", &self.modulus)
            .finish()
    }
}

impl TerminalFunction {
    /// A user-supplied payoff. `bound` is `sup U`; the caller is responsible
    /// for `0 ≤ f ≤ bound` and for the declared modulus (see
    /// [`audit_modulus`]).
    pub fn custom<F>(name: &str, arity: usize, bound: f64, clamp: f64, modulus: ModulusSpec, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        assert!(arity >= 1 && bound >= 0.0 && clamp > 0.0);
        Self { name: name.to_string(), arity, bound, clamp, modulus, eval: Arc::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// `C = sup U`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Clamp level `B`.
    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    pub fn modulus(&self) -> &ModulusSpec {
        &self.modulus
    }

    pub fn eval(&self, xs: &[f64], vs: &[f64]) -> f64 {
        assert_eq!(xs.len(), self.arity, "{}: expected {} prices", self.name, self.arity);
        assert_eq!(vs.len(), self.arity, "{}: expected {} times", self.name, self.arity);
        let mut clamped = [0.0; 8];
        if xs.len() <= clamped.len() {
            for (c, x) in clamped.iter_mut().zip(xs) {
                *c = x.min(self.clamp);
            }
            (self.eval)(&clamped[..xs.len()], vs)
        } else {
            let clamped: Vec<f64> = xs.iter().map(|x| x.min(self.clamp)).collect();
            (self.eval)(&clamped, vs)
        }
    }
}

/// Built-in payoffs:
///
/// * `capped_terminal`: `x_N ∧ B`
/// * `capped_max`: `(max_i x_i) ∧ B`
/// * `capped_range`: `(max_i x_i − min_i x_i) ∧ B`
/// * `constant(c)`: `c`
pub fn builtin_terminal(spec: &str, clamp: f64, arity: usize) -> Result<TerminalFunction, FunctionalError> {
    if clamp <= 0.0 || !clamp.is_finite() {
        return Err(FunctionalError::BadArgument(format!("clamp level B must be positive, got {clamp}")));
    }
    if arity == 0 {
        return Err(FunctionalError::BadArgument("arity must be at least 1".into()));
    }
    let spec = spec.trim();
    let t = match spec {
        "capped_terminal" => TerminalFunction::custom(spec, arity, clamp, clamp, ModulusSpec::Lipschitz(1.0), |xs, _| {
            xs[xs.len() - 1]
        }),
        "capped_max" => TerminalFunction::custom(spec, arity, clamp, clamp, ModulusSpec::Lipschitz(1.0), |xs, _| {
            xs.iter().copied().fold(0.0, f64::max)
        }),
        "capped_range" => TerminalFunction::custom(spec, arity, clamp, clamp, ModulusSpec::Lipschitz(2.0), |xs, _| {
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        }),
        other => {
            let c = other
                .strip_prefix("constant(")
                .and_then(|rest| rest.strip_suffix(')'))
                .ok_or_else(|| FunctionalError::UnknownTerminal(other.to_string()))?
                .trim()
                .parse::<f64>()
                .map_err(|e| FunctionalError::BadArgument(format!("{other}: {e}")))?;
            if !(c >= 0.0 && c.is_finite()) {
                return Err(FunctionalError::BadArgument(format!("constant must be finite and ≥ 0, got {c}")));
            }
            TerminalFunction::custom(other, arity, c, clamp, ModulusSpec::Zero, move |_, _| c)
        }
    };
    Ok(t)
}

/// Discretization and error-budget parameters of one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentParams {
    /// Total quadratic-variation budget `S`.
    pub s: f64,
    /// Number of stages `N`.
    pub n: usize,
    /// Walk steps per stage `L`.
    pub l: usize,
    pub eps: f64,
    /// v-grid resolution `G`.
    pub g: usize,
    /// Spatial tolerance `δ` with `f(δ) ≤ ε`.
    pub delta_x: f64,
    /// Quadratic-variation slack `Δ ∈ (0, S/N)`.
    pub delta_qv: f64,
    /// Walk-space cap `X_max`.
    pub x_max: usize,
}

impl ExperimentParams {
    /// Fills in `δ`, `Δ` and `X_max` from the terminal function:
    /// `δ = sup{δ : f(δ) ≤ ε}`, `Δ` from [`calibrate_delta`] capped at
    /// `S/(2N)`, and `X_max = ⌈B/h⌉ + L` with `h = √(S/NL)`.
    pub fn derive(s: f64, n: usize, l: usize, eps: f64, g: usize, terminal: &TerminalFunction) -> Result<Self, FunctionalError> {
        if !(s > 0.0 && s.is_finite()) || n == 0 || l == 0 {
            return Err(FunctionalError::InvalidParams(format!("need S > 0, N ≥ 1, L ≥ 1 (S={s}, N={n}, L={l})")));
        }
        let stage = s / n as f64;
        let delta_x = terminal.modulus().inverse(eps).min(stage.sqrt());
        let delta_qv = calibrate_delta(delta_x, eps).min(0.5 * stage);
        let step = (stage / l as f64).sqrt();
        let x_max = (terminal.clamp() / step).ceil() as usize + l;
        let params = Self { s, n, l, eps, g, delta_x, delta_qv, x_max };
        params.validate(terminal)?;
        Ok(params)
    }

    pub fn validate(&self, terminal: &TerminalFunction) -> Result<(), FunctionalError> {
        let bad = |msg: String| Err(FunctionalError::InvalidParams(msg));
        if !self.s.is_finite() || self.s <= 0.0 || self.n == 0 || self.l == 0 {
            return bad(format!("need S > 0, N ≥ 1, L ≥ 1 (S={}, N={}, L={})", self.s, self.n, self.l));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return bad(format!("ε must lie in (0, ½), got {}", self.eps));
        }
        if self.g < 2 {
            return bad(format!("G must be at least 2, got {}", self.g));
        }
        if !(self.delta_qv > 0.0 && self.delta_qv < self.stage_qv()) {
            return bad(format!("Δ must lie in (0, S/N) = (0, {}), got {}", self.stage_qv(), self.delta_qv));
        }
        if terminal.arity() != self.n {
            return bad(format!("terminal `{}` has arity {} but N = {}", terminal.name(), terminal.arity(), self.n));
        }
        let need = terminal.clamp() + self.l as f64 * self.step();
        if (self.x_max as f64) * self.step() < need * (1.0 - 1e-12) {
            return bad(format!(
                "X_max·h = {} must cover B + L·h = {need}",
                self.x_max as f64 * self.step()
            ));
        }
        Ok(())
    }

    /// Quadratic variation per stage, `S/N`.
    pub fn stage_qv(&self) -> f64 {
        self.s / self.n as f64
    }

    /// Walk step in price, `h = √(S/NL)`.
    pub fn step(&self) -> f64 {
        (self.stage_qv() / self.l as f64).sqrt()
    }

    /// Number of x-grid points used by the value recursion (`X_max + L + 1`).
    pub fn grid_len(&self) -> usize {
        self.x_max + self.l + 1
    }

    /// `g(ε) = f(ε) + 3Cε/√(S/N)`: accuracy of the walk approximation.
    pub fn walk_gap_bound(&self, terminal: &TerminalFunction) -> f64 {
        terminal.modulus().at(self.eps) + 3.0 * terminal.bound() * self.eps / self.stage_qv().sqrt()
    }

    /// Per-stage slack `A = 3f(ε) + g(ε)` of the superhedging induction.
    pub fn stage_slack(&self, terminal: &TerminalFunction) -> f64 {
        3.0 * terminal.modulus().at(self.eps) + self.walk_gap_bound(terminal)
    }

    /// `N(3C+3)ε`: slack of the martingale-measure lower bound at stage 0.
    pub fn measure_slack(&self, terminal: &TerminalFunction) -> f64 {
        self.n as f64 * (3.0 * terminal.bound() + 3.0) * self.eps
    }
}

/// Checkpoints `(x_i, v_i)`, `i = 1..N`, of a path: `v_i = φ_{iS/N}(ω) ∧ 1`
/// and `x_i = ω(v_i)`.
pub fn checkpoints(params: &ExperimentParams, path: &Path) -> (Vec<f64>, Vec<f64>) {
    let profile = quadratic_variation(path);
    let mut xs = Vec::with_capacity(params.n);
    let mut vs = Vec::with_capacity(params.n);
    for i in 1..=params.n {
        let level = params.s * i as f64 / params.n as f64;
        let v = profile.time_change(level).map_or(1.0, |t| t.min(1.0));
        vs.push(v);
        xs.push(path.eval_unchecked(v));
    }
    (xs, vs)
}

/// `F_N(ω)`.
pub fn eval_fn(terminal: &TerminalFunction, params: &ExperimentParams, path: &Path) -> f64 {
    let (xs, vs) = checkpoints(params, path);
    terminal.eval(&xs, &vs)
}

/// `F ∧ n`.
pub fn truncate<F: Fn(&Path) -> f64>(functional: F, n: f64) -> impl Fn(&Path) -> f64 {
    move |path| functional(path).min(n)
}

/// Hausdorff distance between `{(v,x)} ∪ {1}×[0,∞)` and
/// `{(v',x')} ∪ {1}×[0,∞)`: `(|v−v'| ∨ |x−x'|) ∧ (1 − v∧v')`.
pub fn rho_h_point(p: (f64, f64), q: (f64, f64)) -> f64 {
    let (v, x) = p;
    let (w, y) = q;
    (v - w).abs().max((x - y).abs()).min(1.0 - v.min(w))
}

/// Distance between checkpoint vectors, coordinate-wise maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointMetric {
    /// `max_j (|x_j − x'_j| ∨ |v_j − v'_j|)`.
    Uniform,
    /// `max_j ρ_H((v_j,x_j),(v'_j,x'_j))`.
    Hausdorff,
}

impl CheckpointMetric {
    pub fn distance(self, xs: &[f64], vs: &[f64], ys: &[f64], ws: &[f64]) -> f64 {
        let mut d = 0.0_f64;
        for j in 0..xs.len() {
            let dj = match self {
                CheckpointMetric::Uniform => (xs[j] - ys[j]).abs().max((vs[j] - ws[j]).abs()),
                CheckpointMetric::Hausdorff => rho_h_point((vs[j], xs[j]), (ws[j], ys[j])),
            };
            d = d.max(dj);
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusAudit {
    pub probes: usize,
    pub violations: usize,
    /// Largest `|U(p) − U(q)| − f(ρ(p,q))` seen.
    pub worst_excess: f64,
}

fn random_checkpoints<R: Rng>(rng: &mut R, n: usize, x_hi: f64) -> (Vec<f64>, Vec<f64>) {
    let xs = (0..n).map(|_| rng.random::<f64>() * x_hi).collect();
    let mut vs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    vs.sort_by(f64::total_cmp);
    (xs, vs)
}

/// Probes the declared modulus on random nearby pairs.
pub fn audit_modulus<R: Rng>(terminal: &TerminalFunction, metric: CheckpointMetric, probes: usize, rng: &mut R) -> ModulusAudit {
    let n = terminal.arity();
    let x_hi = 1.5 * terminal.clamp();
    let mut audit = ModulusAudit { probes, violations: 0, worst_excess: f64::NEG_INFINITY };
    for _ in 0..probes {
        let (xs, vs) = random_checkpoints(rng, n, x_hi);
        let scale = 10f64.powf(-3.0 * rng.random::<f64>());
        let ys: Vec<f64> = xs.iter().map(|x| (x + scale * (2.0 * rng.random::<f64>() - 1.0)).max(0.0)).collect();
        let mut ws: Vec<f64> = vs.iter().map(|v| (v + scale * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0)).collect();
        ws.sort_by(f64::total_cmp);
        let gap = (terminal.eval(&xs, &vs) - terminal.eval(&ys, &ws)).abs();
        let excess = gap - terminal.modulus().at(metric.distance(&xs, &vs, &ys, &ws));
        audit.worst_excess = audit.worst_excess.max(excess);
        if excess > 1e-12 {
            audit.violations += 1;
        }
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::Absorption;
    use crate::stochastics::RngStream;

    fn walk_path(h: f64, steps: &[i32]) -> Path {
        let n = steps.len();
        let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let mut values = vec![1.0];
        for s in steps {
            let last: f64 = *values.last().unwrap();
            values.push(last + *s as f64 * h);
        }
        Path::new(times, values, Absorption::Strict).unwrap()
    }

    #[test]
    fn builtins_evaluate() {
        let c = builtin_terminal("constant(0.7)", 2.0, 3).unwrap();
        assert_eq!(c.eval(&[5.0, 0.0, 1.0], &[0.1, 0.2, 0.9]), 0.7);
        assert_eq!(c.bound(), 0.7);
        let t = builtin_terminal("capped_terminal", 2.0, 2).unwrap();
        assert_eq!(t.eval(&[1.0, 3.0], &[0.5, 0.7]), 2.0);
        assert_eq!(t.eval(&[1.0, 1.5], &[0.5, 0.7]), 1.5);
        let r = builtin_terminal("capped_range", 2.0, 3).unwrap();
        assert_eq!(r.eval(&[1.2, 1.2, 1.2], &[0.1, 0.2, 0.3]), 0.0);
        assert!((r.eval(&[0.5, 1.5, 1.0], &[0.1, 0.2, 0.3]) - 1.0).abs() < 1e-15);
        let m = builtin_terminal("capped_max", 2.0, 2).unwrap();
        assert_eq!(m.eval(&[1.5, 0.5], &[0.1, 0.2]), 1.5);
        assert!(matches!(builtin_terminal("call", 2.0, 1), Err(FunctionalError::UnknownTerminal(_))));
        assert!(builtin_terminal("constant(x)", 2.0, 1).is_err());
    }

    #[test]
    fn clamp_extension_holds() {
        let m = builtin_terminal("capped_range", 2.0, 2).unwrap();
        let v = [0.2, 0.4];
        assert_eq!(m.eval(&[0.5, 7.0], &v), m.eval(&[0.5, 2.0], &v));
    }

    #[test]
    fn declared_moduli_hold_in_uniform_metric() {
        let mut rng = RngStream::new(1, 0).rng();
        for name in ["capped_terminal", "capped_max", "capped_range", "constant(0.3)"] {
            let t = builtin_terminal(name, 2.0, 3).unwrap();
            let audit = audit_modulus(&t, CheckpointMetric::Uniform, 5_000, &mut rng);
            assert_eq!(audit.violations, 0, "{name}: {audit:?}");
        }
    }

    #[test]
    fn hausdorff_point_metric_collapses_near_one() {
        // Two checkpoints at v = 1 are at ρ_H distance 0 whatever their
        // prices, so no modulus can hold in that metric for x_N ∧ B.
        assert_eq!(rho_h_point((1.0, 0.0), (1.0, 2.0)), 0.0);
        assert!((rho_h_point((0.2, 1.0), (0.3, 1.05)) - 0.1).abs() < 1e-15);
        assert!((rho_h_point((0.95, 1.0), (0.97, 1.5)) - 0.05).abs() < 1e-15);
        let t = builtin_terminal("capped_terminal", 2.0, 1).unwrap();
        let gap = (t.eval(&[0.0], &[1.0]) - t.eval(&[2.0], &[1.0])).abs();
        assert_eq!(gap, 2.0);
    }

    #[test]
    fn eval_fn_examples() {
        let c = builtin_terminal("constant(0.4)", 2.0, 2).unwrap();
        let t = builtin_terminal("capped_terminal", 2.0, 1).unwrap();
        let p2 = ExperimentParams::derive(0.08, 2, 4, 0.05, 4, &c).unwrap();
        let p1 = ExperimentParams::derive(0.08, 1, 8, 0.05, 4, &t).unwrap();
        let h = 0.1;
        let path = walk_path(h, &[1, 1, 1, 1, -1, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(eval_fn(&c, &p2, &path), 0.4);
        // qv S = 0.08 is reached after 8 steps of 0.01
        let want = path.values()[8].min(2.0);
        assert!((eval_fn(&t, &p1, &path) - want).abs() < 1e-12);
        // constant path: never reaches any level
        let (xs, vs) = checkpoints(&p2, &Path::constant());
        assert_eq!(xs, vec![1.0, 1.0]);
        assert_eq!(vs, vec![1.0, 1.0]);
    }

    #[test]
    fn eval_fn_ignores_regridding() {
        let t = builtin_terminal("capped_max", 3.0, 2).unwrap();
        let params = ExperimentParams::derive(0.08, 2, 4, 0.05, 4, &t).unwrap();
        let path = walk_path(0.1, &[1, -1, 1, 1, 1, -1, -1, 1, 1, 1]);
        // same knot values, different times
        let n = path.len();
        let warped: Vec<f64> = (0..n).map(|k| (k as f64 / (n - 1) as f64).powf(1.7)).collect();
        let other = Path::new(warped, path.values().to_vec(), Absorption::Strict).unwrap();
        assert_eq!(eval_fn(&t, &params, &path), eval_fn(&t, &params, &other));
    }

    #[test]
    fn truncation() {
        let f = |p: &Path| p.terminal() * 3.0;
        let path = walk_path(0.1, &[1, 1]);
        assert_eq!(truncate(f, 0.0)(&path), 0.0);
        assert_eq!(truncate(f, 100.0)(&path), f(&path));
        for n in 0..5 {
            assert!(truncate(f, n as f64)(&path) <= truncate(f, n as f64 + 1.0)(&path));
        }
    }

    #[test]
    fn derived_params() {
        let t = builtin_terminal("capped_terminal", 2.0, 2).unwrap();
        let p = ExperimentParams::derive(1.0, 2, 64, 0.05, 16, &t).unwrap();
        assert!((p.step() - (1.0f64 / 128.0).sqrt()).abs() < 1e-15);
        assert_eq!(p.x_max, 23 + 64);
        assert_eq!(p.delta_x, 0.05);
        assert!(p.delta_qv > 0.0 && p.delta_qv < 0.5);
        let mut bad = p;
        bad.x_max = 10;
        assert!(bad.validate(&t).is_err());
        let wrong_arity = builtin_terminal("capped_terminal", 2.0, 3).unwrap();
        assert!(p.validate(&wrong_arity).is_err());
    }

    #[test]
    fn custom_modulus_inverse() {
        let m = ModulusSpec::Custom(Arc::new(|d: f64| 10.0 * d.sqrt()));
        let d = m.inverse(0.5);
        assert!((d - 0.0025).abs() < 1e-12);
        assert_eq!(ModulusSpec::Zero.inverse(0.1), f64::INFINITY);
    }
}
