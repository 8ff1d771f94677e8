//! Randomness and Brownian analytics.
//!
//! Every Monte-Carlo path draws from its own [`RngStream`], so results do not
//! depend on how paths are scheduled across workers. Expectations under
//! Brownian motion absorbed at 0 are computed from the reflection-principle
//! density with composite Gauss–Legendre quadrature.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

/// Default number of quadrature nodes for absorbed expectations.
pub const DEFAULT_QUAD_NODES: usize = 256;

/// Half-width of the integration window, in standard deviations.
const QUAD_SPAN_SD: f64 = 8.0;

const PANEL_ORDER: usize = 16;

/// A reproducible random stream: one per Monte-Carlo path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// SplitMix64 finalizer; used to turn structured keys into stream ids.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn norm_inv_cdf(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Gauss–Legendre nodes and weights of order `n` on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_ORDER))
}

/// Composite Gauss–Legendre rule on `[lo, hi]` with roughly `nodes` points
/// (rounded up to a multiple of the panel order).
pub fn composite_rule(lo: f64, hi: f64, nodes: usize) -> impl Iterator<Item = (f64, f64)> {
    let (xs, ws) = panel_rule();
    let panels = nodes.div_ceil(PANEL_ORDER).max(1);
    let width = (hi - lo) / panels as f64;
    (0..panels).flat_map(move |p| {
        let mid = lo + width * (p as f64 + 0.5);
        xs.iter().zip(ws).map(move |(x, w)| (mid + 0.5 * width * x, 0.5 * width * w))
    })
}

/// Law of `W_{τ∧a}` for a Brownian motion started at `x` and stopped at its
/// first visit `τ` to 0: an atom at 0 plus a density on `(0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsorbedTerminal {
    pub x: f64,
    pub a: f64,
    pub atom0: f64,
}

impl AbsorbedTerminal {
    pub fn new(x: f64, a: f64) -> Self {
        assert!(x >= 0.0 && a > 0.0, "need x ≥ 0 and a > 0, got x={x}, a={a}");
        let atom0 = if x == 0.0 { 1.0 } else { 2.0 * norm_cdf(-x / a.sqrt()) };
        Self { x, a, atom0 }
    }

    /// Reflection-principle density at `y > 0`.
    pub fn density(&self, y: f64) -> f64 {
        if y <= 0.0 || self.x == 0.0 {
            return 0.0;
        }
        let sd = self.a.sqrt();
        (norm_pdf((y - self.x) / sd) - norm_pdf((y + self.x) / sd)) / sd
    }

    /// Integration window carrying all but ~1e-15 of the density.
    pub fn window(&self) -> (f64, f64) {
        let span = QUAD_SPAN_SD * self.a.sqrt();
        ((self.x - span).max(0.0), self.x + span)
    }

    /// Quadrature nodes `(y, weight·density(y))` over the window.
    pub fn weighted_nodes(&self, quad_nodes: usize) -> Vec<(f64, f64)> {
        if self.x == 0.0 {
            return Vec::new();
        }
        let (lo, hi) = self.window();
        composite_rule(lo, hi, quad_nodes).map(|(y, w)| (y, w * self.density(y))).collect()
    }

    /// `∫ density`; equals `1 − atom0` up to quadrature error.
    pub fn density_mass(&self, quad_nodes: usize) -> f64 {
        self.weighted_nodes(quad_nodes).iter().map(|(_, w)| w).sum()
    }

    /// Exact draw: Gaussian endpoint, killed with the Brownian-bridge
    /// probability `exp(−2xy/a)` of having touched 0 on the way.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.x == 0.0 {
            return 0.0;
        }
        let z: f64 = rng.sample(StandardNormal);
        let y = self.x + self.a.sqrt() * z;
        if y <= 0.0 {
            return 0.0;
        }
        let u: f64 = rng.random();
        if u < (-2.0 * self.x * y / self.a).exp() {
            0.0
        } else {
            y
        }
    }
}

pub fn absorbed_terminal(x: f64, a: f64) -> AbsorbedTerminal {
    AbsorbedTerminal::new(x, a)
}

fn gauss_mass(lo: f64, hi: f64) -> f64 {
    // Φ(hi) − Φ(lo) without cancellation in the upper tail
    if lo > 0.0 {
        norm_cdf(-lo) - norm_cdf(-hi)
    } else {
        norm_cdf(hi) - norm_cdf(lo)
    }
}

/// Weights `w` on the grid `{k·step : k < len}` with
/// `Σ_k w_k u_k = E ũ(W^x_{τ∧a})`, where `ũ` interpolates `u` linearly
/// between grid points and is held at `u_{len−1}` beyond the grid.
///
/// Each cell integral of the reflected density against the hat basis is
/// taken in closed form, so the weights are exact up to rounding.
pub fn absorbed_grid_weights(x: f64, a: f64, step: f64, len: usize) -> Vec<f64> {
    assert!(len >= 2 && step > 0.0);
    let law = AbsorbedTerminal::new(x, a);
    let mut w = vec![0.0; len];
    w[0] = law.atom0;
    if x == 0.0 {
        return w;
    }
    let s = a.sqrt();
    let (lo, hi) = law.window();
    let first = ((lo / step).floor() as usize).min(len - 1);
    let last = ((hi / step).ceil() as usize).min(len - 1);
    for k in first..last {
        let y0 = k as f64 * step;
        let y1 = y0 + step;
        let mut left = 0.0;
        let mut right = 0.0;
        for (m, sign) in [(x, 1.0), (-x, -1.0)] {
            let (za, zb) = ((y0 - m) / s, (y1 - m) / s);
            let i0 = gauss_mass(za, zb);
            let tilt = s * (norm_pdf(za) - norm_pdf(zb));
            // ∫ (y1 − y) g and ∫ (y − y0) g over the cell
            left += sign * ((y1 - m) * i0 - tilt);
            right += sign * ((m - y0) * i0 + tilt);
        }
        w[k] += left / step;
        w[k + 1] += right / step;
    }
    let edge = (len - 1) as f64 * step;
    if edge < hi {
        w[len - 1] += norm_cdf((x - edge) / s) - norm_cdf((-x - edge) / s);
    }
    w
}

/// `E u(W^x_{τ∧a})` for Brownian motion absorbed at 0.
pub fn absorbed_expectation<U: Fn(f64) -> f64>(u: U, x: f64, a: f64, quad_nodes: usize) -> f64 {
    let law = AbsorbedTerminal::new(x, a);
    let mut acc = law.atom0 * u(0.0);
    for (y, w) in law.weighted_nodes(quad_nodes) {
        acc += w * u(y);
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusReport {
    pub difference: f64,
    /// `f(δ) + Cδ/√a` with `δ = x' − x`.
    pub bound: f64,
    pub violated: bool,
}

/// Checks the continuity bound for `x ↦ E u(W^x_{τ∧a})` at one pair of
/// starting points; `quad_tol` absorbs quadrature error.
pub fn modulus_bound_check<U: Fn(f64) -> f64, F: Fn(f64) -> f64>(
    u: U,
    modulus: F,
    bound_c: f64,
    x: f64,
    x_prime: f64,
    a: f64,
    quad_nodes: usize,
    quad_tol: f64,
) -> ModulusReport {
    assert!(0.0 <= x && x <= x_prime, "need 0 ≤ x ≤ x'");
    let delta = x_prime - x;
    let difference = if delta == 0.0 {
        0.0
    } else {
        (absorbed_expectation(&u, x, a, quad_nodes) - absorbed_expectation(&u, x_prime, a, quad_nodes)).abs()
    };
    let bound = if delta == 0.0 { 0.0 } else { modulus(delta) + bound_c * delta / a.sqrt() };
    ModulusReport { difference, bound, violated: difference > bound + quad_tol }
}

/// Points per decade of the log grid searched by [`calibrate_delta`].
const DELTA_GRID_PER_DECADE: f64 = 1000.0;

/// Largest `Δ` on a log grid such that `4Φ(−δ/√Δ) ≤ ε`, a bound on
/// `P(sup_{[0,Δ]} |W| ≥ δ)`. Returns `+∞` when the constraint is vacuous;
/// callers cap the result below `S/N`.
pub fn calibrate_delta(delta: f64, eps: f64) -> f64 {
    assert!(delta > 0.0 && eps > 0.0, "need δ > 0 and ε > 0");
    if eps >= 2.0 {
        return f64::INFINITY;
    }
    let z = -norm_inv_cdf(eps / 4.0);
    let exact = (delta / z).powi(2);
    let ok = |d: f64| 4.0 * norm_cdf(-delta / d.sqrt()) <= eps;
    let mut k = (exact.log10() * DELTA_GRID_PER_DECADE).floor();
    let at = |k: f64| 10f64.powf(k / DELTA_GRID_PER_DECADE);
    while !ok(at(k)) {
        k -= 1.0;
    }
    while ok(at(k + 1.0)) {
        k += 1.0;
    }
    at(k)
}

/// How increments of a sampled Brownian piece are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QvMode {
    /// i.i.d. Gaussian increments with variance `total_qv / n_steps`.
    #[default]
    Gaussian,
    /// Gaussian increments rescaled jointly so that their squares sum to
    /// `total_qv` exactly. The direction is uniform on the sphere, so the
    /// partial sums remain a martingale.
    Exact,
}

/// A sampled piece of path on `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub absorbed: bool,
}

impl Segment {
    pub fn end_value(&self) -> f64 {
        *self.values.last().expect("segment has knots")
    }
}

/// Discrete scaled Brownian motion from `x0` over `[t_start, t_end]` with
/// `n_steps` uniform knots, absorbed at its first non-positive crossing (the
/// crossing point is inserted as an exact 0 knot).
pub fn sample_scaled_bm<R: Rng + ?Sized>(
    rng: &mut R,
    x0: f64,
    total_qv: f64,
    n_steps: usize,
    t_start: f64,
    t_end: f64,
    mode: QvMode,
) -> Segment {
    assert!(total_qv > 0.0 && n_steps >= 1 && t_start < t_end);
    if x0 <= 0.0 {
        return Segment { times: vec![t_start, t_end], values: vec![0.0, 0.0], absorbed: true };
    }
    let mut incs: Vec<f64> = (0..n_steps).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let scale = match mode {
        QvMode::Gaussian => (total_qv / n_steps as f64).sqrt(),
        QvMode::Exact => {
            let ss: f64 = incs.iter().map(|z| z * z).sum();
            (total_qv / ss).sqrt()
        }
    };
    incs.iter_mut().for_each(|z| *z *= scale);

    let dt = (t_end - t_start) / n_steps as f64;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    times.push(t_start);
    values.push(x0);
    let mut x = x0;
    for (k, inc) in incs.iter().enumerate() {
        let t_prev = times[times.len() - 1];
        let t = if k + 1 == n_steps { t_end } else { t_start + dt * (k + 1) as f64 };
        let next = x + inc;
        if next <= 0.0 {
            let t_hit = t_prev + (t - t_prev) * x / (x - next);
            if t_hit > t_prev && t_hit < t {
                times.push(t_hit);
                values.push(0.0);
            } else if t_hit >= t {
                times.push(t);
                values.push(0.0);
            } else {
                *values.last_mut().unwrap() = 0.0;
            }
            if *times.last().unwrap() < t_end {
                times.push(t_end);
                values.push(0.0);
            }
            return Segment { times, values, absorbed: true };
        }
        x = next;
        times.push(t);
        values.push(x);
    }
    Segment { times, values, absorbed: false }
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Welford accumulation in iteration order; a constant sample gives that
    /// constant exactly and zero error.
    pub fn from_samples<I: IntoIterator<Item = f64>>(samples: I) -> Self {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for x in samples {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        let stderr = if n >= 2 { (m2 / (n - 1) as f64 / n as f64).sqrt() } else { f64::NAN };
        Self { n, mean, stderr }
    }
}

/// Symmetric ±1 walk from `start`, absorbed at 0; `steps + 1` positions.
pub fn sample_absorbed_walk<R: Rng + ?Sized>(rng: &mut R, start: u64, steps: usize) -> Vec<u64> {
    let mut walk = Vec::with_capacity(steps + 1);
    let mut x = start;
    walk.push(x);
    for _ in 0..steps {
        if x > 0 {
            if rng.random::<bool>() {
                x += 1;
            } else {
                x -= 1;
            }
        }
        walk.push(x);
    }
    walk
}
