//! Time stepping for every evolution in the library: the fast flow with a
//! frozen slow input, the coupled slow-fast pair, adversary-driven flows,
//! piecewise-constant-controlled ODEs, and Young slow equations.
//!
//! All schemes are explicit Euler. Additive noise (fast, adversary) enters
//! through exact path increments; the multiplicative slow coefficient is
//! evaluated at the left endpoint, which is the convergent choice for Young
//! integrals against paths of Hurst index above one half.

use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::noise::{generate_fbm, FbmMethod, FbmSpec};
use crate::path::SamplePath;
use crate::rng::derive_stream;
use serde::{Deserialize, Serialize};

/// Fast-grid refinement relative to the stiffness scale: integrators require
/// `dt_fast <= epsilon / FAST_RESOLUTION`.
pub const FAST_RESOLUTION: f64 = 32.0;

/// Factor in the blow-up guard `|state| > BLOW_UP_FACTOR * (1 + |state0|)`.
/// Bounded coefficients keep true solutions far below this; tripping it means
/// a misconfigured (unstable or under-resolved) system.
pub const BLOW_UP_FACTOR: f64 = 1.0e6;

/// Scalar coefficient field for the slow equation, applied coordinatewise:
/// component i of the output is a function of x[i] (and y[i] where the field
/// reads the fast variable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoeffField {
    Zero,
    Constant { value: f64 },
    /// a_x * x + a_y * y + sin_amp * sin(x).
    LinearSin { a_x: f64, a_y: f64, sin_amp: f64 },
    /// offset + amp * cos(x); bounded with two bounded derivatives.
    CosSlow { offset: f64, amp: f64 },
    /// y^2, a purely fast observable.
    FastSquare,
}

impl CoeffField {
    pub fn validate(&self) -> Result<()> {
        let params: &[f64] = match self {
            CoeffField::Zero | CoeffField::FastSquare => &[],
            CoeffField::Constant { value } => std::slice::from_ref(value),
            CoeffField::LinearSin { a_x, a_y, sin_amp } => &[*a_x, *a_y, *sin_amp],
            CoeffField::CosSlow { offset, amp } => &[*offset, *amp],
        };
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::parameter("coefficient field parameters must be finite"));
        }
        Ok(())
    }

    /// Whether the field reads the fast variable at all.
    pub fn reads_fast(&self) -> bool {
        match self {
            CoeffField::Zero | CoeffField::Constant { .. } | CoeffField::CosSlow { .. } => false,
            CoeffField::LinearSin { a_y, .. } => *a_y != 0.0,
            CoeffField::FastSquare => true,
        }
    }

    /// Coordinatewise pairing needs matching dimensions when y is read.
    pub fn check_dims(&self, dim_x: usize, dim_y: usize) -> Result<()> {
        if self.reads_fast() && dim_x != dim_y {
            return Err(Error::DimensionMismatch { expected: dim_x, got: dim_y });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            CoeffField::Zero => out.fill(0.0),
            CoeffField::Constant { value } => out.fill(*value),
            CoeffField::LinearSin { a_x, a_y, sin_amp } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let mut v = a_x * x[i] + sin_amp * x[i].sin();
                    if *a_y != 0.0 {
                        v += a_y * y[i];
                    }
                    *o = v;
                }
            }
            CoeffField::CosSlow { offset, amp } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = offset + amp * x[i].cos();
                }
            }
            CoeffField::FastSquare => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = y[i] * y[i];
                }
            }
        }
    }
}

/// Full description of one slow-fast system realization.
///
/// The slow equation is dX = f(X,Y) dt + g(X,Y) dB with B of Hurst index
/// `hurst_slow`; the fast equation is dY = (1/eps) b(X,Y) dt +
/// eps^{-hurst_fast} sigma dB-hat. Coefficient fields act coordinatewise and
/// sigma acts as a matrix on the fast noise increment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowFastConfig {
    pub epsilon: f64,
    pub hurst_slow: f64,
    pub hurst_fast: f64,
    pub f: CoeffField,
    pub g: CoeffField,
    pub b: DriftSpec,
    pub sigma: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub t_horizon: f64,
    pub dt_slow: f64,
    pub dt_fast: f64,
    pub seed: u64,
}

impl SlowFastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::parameter(format!("epsilon must be finite and > 0, got {}", self.epsilon)));
        }
        if !(self.hurst_slow > 0.5 && self.hurst_slow < 1.0) {
            return Err(Error::parameter(format!(
                "slow Hurst index must lie in (1/2, 1), got {}",
                self.hurst_slow
            )));
        }
        if !(self.hurst_fast > 1.0 - self.hurst_slow && self.hurst_fast < 1.0) {
            return Err(Error::parameter(format!(
                "fast Hurst index must lie in (1 - H, 1) = ({}, 1), got {}",
                1.0 - self.hurst_slow,
                self.hurst_fast
            )));
        }
        self.f.validate()?;
        self.g.validate()?;
        self.b.validate()?;
        let dim_x = self.x0.len();
        let dim_y = self.b.dim_y();
        if dim_x == 0 {
            return Err(Error::Empty("x0".into()));
        }
        if self.y0.len() != dim_y {
            return Err(Error::DimensionMismatch { expected: dim_y, got: self.y0.len() });
        }
        self.f.check_dims(dim_x, dim_y)?;
        self.g.check_dims(dim_x, dim_y)?;
        check_invertible(&self.sigma, dim_y)?;
        if self.x0.iter().chain(&self.y0).any(|v| !v.is_finite()) {
            return Err(Error::parameter("initial states must be finite"));
        }
        if !(self.t_horizon > 0.0) || !self.t_horizon.is_finite() {
            return Err(Error::parameter(format!("t_horizon must be finite and > 0, got {}", self.t_horizon)));
        }
        if !(self.dt_slow > 0.0 && self.dt_slow <= self.t_horizon) {
            return Err(Error::parameter(format!("dt_slow must lie in (0, T], got {}", self.dt_slow)));
        }
        check_stiffness(self.dt_fast, self.epsilon)?;
        exact_ratio(self.dt_slow, self.dt_fast).ok_or_else(|| {
            Error::parameter(format!(
                "dt_slow = {} must be an integer multiple of dt_fast = {}",
                self.dt_slow, self.dt_fast
            ))
        })?;
        exact_ratio(self.t_horizon, self.dt_slow).ok_or_else(|| {
            Error::parameter(format!(
                "t_horizon = {} must be an integer multiple of dt_slow = {}",
                self.t_horizon, self.dt_slow
            ))
        })?;
        Ok(())
    }

    /// Fast substeps per slow step.
    pub fn sub_steps(&self) -> usize {
        exact_ratio(self.dt_slow, self.dt_fast).expect("validated config")
    }

    pub fn n_slow_steps(&self) -> usize {
        exact_ratio(self.t_horizon, self.dt_slow).expect("validated config")
    }
}

/// `a / b` when it is a positive integer up to 1e-9 relative error.
fn exact_ratio(a: f64, b: f64) -> Option<usize> {
    let q = a / b;
    let r = q.round();
    if r >= 1.0 && r <= 1e15 && (q - r).abs() <= 1e-9 * r {
        Some(r as usize)
    } else {
        None
    }
}

fn check_stiffness(dt_fast: f64, epsilon: f64) -> Result<()> {
    let required = epsilon / FAST_RESOLUTION;
    if !(dt_fast > 0.0) || dt_fast > required * (1.0 + 1e-9) {
        return Err(Error::Stiffness { dt: dt_fast, required });
    }
    Ok(())
}

/// Rejects non-square or numerically singular matrices (LU with partial
/// pivoting; a pivot below 1e-12 of the largest entry counts as singular).
fn check_invertible(sigma: &[Vec<f64>], n: usize) -> Result<()> {
    if sigma.len() != n || sigma.iter().any(|row| row.len() != n) {
        return Err(Error::parameter(format!("sigma must be a {n}x{n} matrix")));
    }
    let mut a: Vec<f64> = sigma.iter().flatten().copied().collect();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::parameter("sigma entries must be finite"));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::parameter("sigma is singular (zero matrix)"));
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty pivot range");
        if a[pivot_row * n + col].abs() <= 1e-12 * scale {
            return Err(Error::parameter("sigma is numerically singular"));
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
        }
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
        }
    }
    Ok(())
}

fn mat_vec(m: &[Vec<f64>], v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_guard(state: &[f64], guard: f64, time: f64) -> Result<()> {
    let mag = l2_norm(state);
    if !mag.is_finite() || mag > guard {
        return Err(Error::BlowUp { time, magnitude: mag, guard });
    }
    Ok(())
}

/// Deterministic path of an external forcing (the "adversary"): an absolutely
/// continuous perturbation fed to a flow through its increments.
///
/// A path anchored at the time origin must start at zero; a window of a longer
/// adversary (restart legs of the flow property) starts wherever the parent
/// left it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryPath {
    pub path: SamplePath,
    pub derivative: Option<DerivativeSpec>,
}

/// Declared weighted-derivative bound `sup_t t^beta |d adversary / dt|` for
/// adversaries with an algebraically blowing-up derivative at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeSpec {
    pub beta: f64,
    pub weighted_sup: f64,
}

impl AdversaryPath {
    pub fn new(path: SamplePath, derivative: Option<DerivativeSpec>) -> Result<Self> {
        if path.t0 == 0.0 && path.row(0).iter().any(|v| *v != 0.0) {
            return Err(Error::parameter("an adversary anchored at time 0 must start at 0"));
        }
        if let Some(d) = derivative {
            if !(d.beta >= 0.0 && d.beta < 1.0) || !d.weighted_sup.is_finite() || d.weighted_sup < 0.0 {
                return Err(Error::parameter(format!(
                    "derivative spec needs beta in [0,1) and a finite weighted sup, got beta = {}, sup = {}",
                    d.beta, d.weighted_sup
                )));
            }
        }
        Ok(AdversaryPath { path, derivative })
    }

    /// The zero adversary on the given grid.
    pub fn zero(t0: f64, dt: f64, dim: usize, n_points: usize) -> Result<Self> {
        AdversaryPath::new(SamplePath::zeros(t0, dt, dim, n_points)?, None)
    }

    /// Scalar adversary with derivative `coeff * t^{-beta}`, i.e. value
    /// `coeff * t^{1-beta} / (1-beta)`; its weighted-derivative sup is `coeff`.
    pub fn power_law(coeff: f64, beta: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(beta >= 0.0 && beta < 1.0) {
            return Err(Error::parameter(format!("beta must lie in [0,1), got {beta}")));
        }
        let values = (0..=n_steps)
            .map(|i| coeff * (i as f64 * dt).powf(1.0 - beta) / (1.0 - beta))
            .collect();
        AdversaryPath::new(
            SamplePath::scalar(0.0, dt, values)?,
            Some(DerivativeSpec { beta, weighted_sup: coeff.abs() }),
        )
    }

    /// Restriction to the index window `[i0, i1]`; increments match the parent
    /// bitwise, which is what the flow consumes.
    pub fn window(&self, i0: usize, i1: usize) -> Result<Self> {
        Ok(AdversaryPath { path: self.path.slice(i0, i1)?, derivative: self.derivative })
    }
}

/// Piecewise-constant control: value `values[i]` on
/// `[breakpoints[i], breakpoints[i+1])`, zero outside the covered span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl ControlSchedule {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if breakpoints.len() < 2 || values.len() + 1 != breakpoints.len() {
            return Err(Error::parameter(format!(
                "need k+1 breakpoints for k pieces, got {} breakpoints and {} pieces",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::parameter("breakpoints must be finite and strictly increasing"));
        }
        let dim = values[0].len();
        if dim == 0 || values.iter().any(|v| v.len() != dim) {
            return Err(Error::parameter("piece values must share one nonzero dimension"));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::parameter("piece values must be finite"));
        }
        Ok(ControlSchedule { breakpoints, values })
    }

    /// Everywhere-zero control, for baselines.
    pub fn zero(dim: usize, t_end: f64) -> Result<Self> {
        ControlSchedule::new(vec![0.0, t_end], vec![vec![0.0; dim]])
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Largest Euclidean norm over pieces, i.e. the sup norm in time.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| l2_norm(v)).fold(0.0, f64::max)
    }

    /// Jumps of the extended-by-zero control at times strictly after 0.
    pub fn n_discontinuities(&self) -> usize {
        let k = self.values.len();
        let mut count = 0;
        for i in 0..=k {
            let left: &[f64] = if i == 0 { &[] } else { &self.values[i - 1] };
            let right: &[f64] = if i == k { &[] } else { &self.values[i] };
            let zero = vec![0.0; self.dim()];
            let l = if left.is_empty() { &zero[..] } else { left };
            let r = if right.is_empty() { &zero[..] } else { right };
            if self.breakpoints[i] > 0.0 && l != r {
                count += 1;
            }
        }
        count
    }

    pub fn value_at(&self, t: f64) -> Vec<f64> {
        for i in 0..self.values.len() {
            if t >= self.breakpoints[i] && t < self.breakpoints[i + 1] {
                return self.values[i].clone();
            }
        }
        vec![0.0; self.dim()]
    }

    /// Exact integral of the control over `[a, b]`, summed piece by piece so
    /// breakpoints interior to integration steps are handled without error.
    pub fn integral_over(&self, a: f64, b: f64, out: &mut [f64]) {
        out.fill(0.0);
        for (i, v) in self.values.iter().enumerate() {
            let lo = self.breakpoints[i].max(a);
            let hi = self.breakpoints[i + 1].min(b);
            if hi > lo {
                let len = hi - lo;
                for (o, c) in out.iter_mut().zip(v) {
                    *o += c * len;
                }
            }
        }
    }
}

/// Fast equation with the slow input frozen at `x`:
/// dY = (1/eps) b(x, Y) dt + eps^{-hurst_fast} sigma dB-hat, explicit Euler on
/// the grid of `noise`, which must resolve the 1/eps stiffness.
pub fn integrate_fast_frozen(
    x: &[f64],
    b: &DriftSpec,
    sigma: &[Vec<f64>],
    epsilon: f64,
    hurst_fast: f64,
    noise: &SamplePath,
    y0: &[f64],
    span: f64,
) -> Result<SamplePath> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::parameter(format!("epsilon must be finite and > 0, got {epsilon}")));
    }
    if !(hurst_fast > 0.0 && hurst_fast < 1.0) {
        return Err(Error::parameter(format!("fast Hurst index must lie in (0,1), got {hurst_fast}")));
    }
    check_stiffness(noise.dt, epsilon)?;
    let dim = b.dim_y();
    if y0.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: y0.len() });
    }
    if noise.dim != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: noise.dim });
    }
    check_invertible(sigma, dim)?;
    crate::drift::evaluate_drift(b, x, y0)?;
    let n_steps = exact_ratio(span, noise.dt)
        .ok_or_else(|| Error::GridMismatch(format!("span {span} is not a multiple of the noise step {}", noise.dt)))?;
    if n_steps + 1 > noise.n_points() {
        return Err(Error::GridMismatch(format!(
            "span {span} needs {} noise points, path has {}",
            n_steps + 1,
            noise.n_points()
        )));
    }

    let h_eff = noise.dt / epsilon;
    let noise_scale = epsilon.powf(-hurst_fast);
    let guard = BLOW_UP_FACTOR * (1.0 + l2_norm(y0));
    let mut y = y0.to_vec();
    let mut bv = vec![0.0; dim];
    let mut db = vec![0.0; dim];
    let mut dr = vec![0.0; dim];
    let mut values = Vec::with_capacity((n_steps + 1) * dim);
    values.extend_from_slice(&y);
    for k in 0..n_steps {
        b.eval_unchecked(x, &y, &mut bv);
        increment_into(noise, k, &mut db);
        mat_vec(sigma, &db, &mut dr);
        for i in 0..dim {
            y[i] = y[i] + bv[i] * h_eff + noise_scale * dr[i];
        }
        check_guard(&y, guard, noise.time(k + 1))?;
        values.extend_from_slice(&y);
    }
    SamplePath::new(noise.t0, noise.dt, dim, values)
}

fn increment_into(path: &SamplePath, k: usize, out: &mut [f64]) {
    let next = path.row(k + 1);
    let cur = path.row(k);
    for (i, o) in out.iter_mut().enumerate() {
        *o = next[i] - cur[i];
    }
}

/// Independent-coordinate fractional noise pair for one realization of a
/// slow-fast config: B on the slow grid (Hurst `hurst_slow`, dim of x) and
/// B-hat on the fast grid (Hurst `hurst_fast`, dim of y).
pub fn generate_noise_pair(cfg: &SlowFastConfig, stream: u64) -> Result<(SamplePath, SamplePath)> {
    cfg.validate()?;
    let slow = generate_fbm(&FbmSpec {
        hurst: cfg.hurst_slow,
        dim: cfg.x0.len(),
        n_steps: cfg.n_slow_steps(),
        dt: cfg.dt_slow,
        method: FbmMethod::CirculantEmbedding,
        seed: cfg.seed,
        stream: derive_stream("slow-noise", &[stream]),
    })?;
    let fast = generate_fbm(&FbmSpec {
        hurst: cfg.hurst_fast,
        dim: cfg.b.dim_y(),
        n_steps: cfg.n_slow_steps() * cfg.sub_steps(),
        dt: cfg.dt_fast,
        method: FbmMethod::CirculantEmbedding,
        seed: cfg.seed,
        stream: derive_stream("fast-noise", &[stream]),
    })?;
    Ok((slow, fast))
}

/// Coupled slow-fast system on internally generated noise (stream 0).
pub fn integrate_slow_fast(cfg: &SlowFastConfig) -> Result<(SamplePath, SamplePath)> {
    let (slow, fast) = generate_noise_pair(cfg, 0)?;
    integrate_slow_fast_with_noise(cfg, &slow, &fast)
}

/// Coupled slow-fast system on caller-provided noise, so experiments can share
/// one realization between systems.
///
/// Left-point scheme: over one slow step, f and g are evaluated at the left
/// state pair, and the fast variable advances through the substeps with the
/// slow input frozen at the left slow state. Returns X on the slow grid and Y
/// on the fast grid.
pub fn integrate_slow_fast_with_noise(
    cfg: &SlowFastConfig,
    slow_noise: &SamplePath,
    fast_noise: &SamplePath,
) -> Result<(SamplePath, SamplePath)> {
    cfg.validate()?;
    let dim_x = cfg.x0.len();
    let dim_y = cfg.b.dim_y();
    let n_slow = cfg.n_slow_steps();
    let m = cfg.sub_steps();
    if slow_noise.dim != dim_x {
        return Err(Error::DimensionMismatch { expected: dim_x, got: slow_noise.dim });
    }
    if fast_noise.dim != dim_y {
        return Err(Error::DimensionMismatch { expected: dim_y, got: fast_noise.dim });
    }
    if slow_noise.n_points() < n_slow + 1 || fast_noise.n_points() < n_slow * m + 1 {
        return Err(Error::GridMismatch(format!(
            "need {} slow and {} fast noise points, got {} and {}",
            n_slow + 1,
            n_slow * m + 1,
            slow_noise.n_points(),
            fast_noise.n_points()
        )));
    }
    for (name, want, got) in [("slow", cfg.dt_slow, slow_noise.dt), ("fast", cfg.dt_fast, fast_noise.dt)] {
        if (want - got).abs() > 1e-12 * want {
            return Err(Error::GridMismatch(format!("{name} noise step {got} does not match config step {want}")));
        }
    }

    let h_eff = cfg.dt_fast / cfg.epsilon;
    let noise_scale = cfg.epsilon.powf(-cfg.hurst_fast);
    let guard_x = BLOW_UP_FACTOR * (1.0 + l2_norm(&cfg.x0));
    let guard_y = BLOW_UP_FACTOR * (1.0 + l2_norm(&cfg.y0));

    let mut x = cfg.x0.clone();
    let mut y = cfg.y0.clone();
    let mut fv = vec![0.0; dim_x];
    let mut gv = vec![0.0; dim_x];
    let mut db = vec![0.0; dim_x];
    let mut bv = vec![0.0; dim_y];
    let mut dbh = vec![0.0; dim_y];
    let mut dr = vec![0.0; dim_y];
    let mut xs = Vec::with_capacity((n_slow + 1) * dim_x);
    let mut ys = Vec::with_capacity((n_slow * m + 1) * dim_y);
    xs.extend_from_slice(&x);
    ys.extend_from_slice(&y);

    for k in 0..n_slow {
        // Left-point evaluation: both coefficients see (X_k, Y_{t_k}) before
        // the fast variable moves.
        cfg.f.eval(&x, &y, &mut fv);
        cfg.g.eval(&x, &y, &mut gv);
        increment_into(slow_noise, k, &mut db);

        for j in 0..m {
            let idx = k * m + j;
            cfg.b.eval_unchecked(&x, &y, &mut bv);
            increment_into(fast_noise, idx, &mut dbh);
            mat_vec(&cfg.sigma, &dbh, &mut dr);
            for i in 0..dim_y {
                y[i] = y[i] + bv[i] * h_eff + noise_scale * dr[i];
            }
            check_guard(&y, guard_y, fast_noise.time(idx + 1))?;
            ys.extend_from_slice(&y);
        }

        for i in 0..dim_x {
            x[i] = x[i] + fv[i] * cfg.dt_slow + gv[i] * db[i];
        }
        check_guard(&x, guard_x, slow_noise.time(k + 1))?;
        xs.extend_from_slice(&x);
    }

    Ok((
        SamplePath::new(slow_noise.t0, cfg.dt_slow, dim_x, xs)?,
        SamplePath::new(fast_noise.t0, cfg.dt_fast, dim_y, ys)?,
    ))
}

/// Left-point Young-Euler scheme dX = f(X) dt + g(X) dB on a sub-grid of the
/// noise path: `dt` must be an integer multiple of the noise step, and the
/// increment over a step is the exact path increment between sub-grid points.
pub fn integrate_young<F, G>(
    mut f: F,
    mut g: G,
    noise: &SamplePath,
    x0: &[f64],
    t_horizon: f64,
    dt: f64,
) -> Result<SamplePath>
where
    F: FnMut(&[f64], &mut [f64]),
    G: FnMut(&[f64], &mut [f64]),
{
    let dim = x0.len();
    if dim == 0 {
        return Err(Error::Empty("x0".into()));
    }
    if noise.dim != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: noise.dim });
    }
    let stride = exact_ratio(dt, noise.dt)
        .ok_or_else(|| Error::GridMismatch(format!("dt = {dt} is not a multiple of the noise step {}", noise.dt)))?;
    let n_steps = exact_ratio(t_horizon, dt)
        .ok_or_else(|| Error::GridMismatch(format!("horizon {t_horizon} is not a multiple of dt = {dt}")))?;
    if n_steps * stride + 1 > noise.n_points() {
        return Err(Error::GridMismatch(format!(
            "horizon {t_horizon} needs {} noise points, path has {}",
            n_steps * stride + 1,
            noise.n_points()
        )));
    }

    let guard = BLOW_UP_FACTOR * (1.0 + l2_norm(x0));
    let mut x = x0.to_vec();
    let mut fv = vec![0.0; dim];
    let mut gv = vec![0.0; dim];
    let mut values = Vec::with_capacity((n_steps + 1) * dim);
    values.extend_from_slice(&x);
    for k in 0..n_steps {
        f(&x, &mut fv);
        g(&x, &mut gv);
        let left = noise.row(k * stride);
        let right = noise.row((k + 1) * stride);
        for i in 0..dim {
            let db = right[i] - left[i];
            x[i] = x[i] + fv[i] * dt + gv[i] * db;
        }
        check_guard(&x, guard, noise.t0 + (k + 1) as f64 * dt)?;
        values.extend_from_slice(&x);
    }
    SamplePath::new(noise.t0, dt, dim, values)
}

/// Flow driven by an adversary and a rough path:
/// dY = b(x, Y) dt + d adversary + sigma d rough, explicit Euler. Both driving
/// paths must live on one grid; integration starts at their common origin and
/// runs for `span`.
pub fn integrate_adversary_flow(
    b: &DriftSpec,
    x: &[f64],
    sigma: &[Vec<f64>],
    adversary: &AdversaryPath,
    rough: &SamplePath,
    y0: &[f64],
    span: f64,
) -> Result<SamplePath> {
    let dim = b.dim_y();
    let adv = &adversary.path;
    if y0.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: y0.len() });
    }
    if adv.dim != dim || rough.dim != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: adv.dim.min(rough.dim) });
    }
    if (adv.dt - rough.dt).abs() > 1e-12 * adv.dt || (adv.t0 - rough.t0).abs() > 1e-9 * adv.dt.max(1.0) {
        return Err(Error::GridMismatch(format!(
            "adversary grid (t0={}, dt={}) differs from rough grid (t0={}, dt={})",
            adv.t0, adv.dt, rough.t0, rough.dt
        )));
    }
    check_invertible(sigma, dim)?;
    crate::drift::evaluate_drift(b, x, y0)?;
    let n_steps = exact_ratio(span, adv.dt)
        .ok_or_else(|| Error::GridMismatch(format!("span {span} is not a multiple of the grid step {}", adv.dt)))?;
    if n_steps + 1 > adv.n_points() || n_steps + 1 > rough.n_points() {
        return Err(Error::GridMismatch(format!(
            "span {span} needs {} grid points, paths have {} and {}",
            n_steps + 1,
            adv.n_points(),
            rough.n_points()
        )));
    }

    let dt = adv.dt;
    let guard = BLOW_UP_FACTOR * (1.0 + l2_norm(y0));
    let mut y = y0.to_vec();
    let mut bv = vec![0.0; dim];
    let mut da = vec![0.0; dim];
    let mut db = vec![0.0; dim];
    let mut dr = vec![0.0; dim];
    let mut values = Vec::with_capacity((n_steps + 1) * dim);
    values.extend_from_slice(&y);
    for k in 0..n_steps {
        b.eval_unchecked(x, &y, &mut bv);
        increment_into(adv, k, &mut da);
        increment_into(rough, k, &mut db);
        mat_vec(sigma, &db, &mut dr);
        for i in 0..dim {
            y[i] = y[i] + bv[i] * dt + da[i] + dr[i];
        }
        check_guard(&y, guard, adv.time(k + 1))?;
        values.extend_from_slice(&y);
    }
    SamplePath::new(adv.t0, dt, dim, values)
}

/// Controlled ODE dx = b(x_frozen, x) dt + d adversary + u dt over the full
/// adversary grid. The control integral over each step is computed exactly
/// from the piecewise-constant schedule, so control breakpoints need not sit
/// on the grid. With the zero schedule this reproduces the adversary flow
/// without rough input.
pub fn integrate_controlled_ode(
    b: &DriftSpec,
    x: &[f64],
    adversary: &AdversaryPath,
    control: &ControlSchedule,
    y0: &[f64],
) -> Result<SamplePath> {
    let dim = b.dim_y();
    let adv = &adversary.path;
    if y0.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: y0.len() });
    }
    if adv.dim != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: adv.dim });
    }
    if control.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: control.dim() });
    }
    crate::drift::evaluate_drift(b, x, y0)?;

    let dt = adv.dt;
    let n_steps = adv.n_points() - 1;
    let mut y = y0.to_vec();
    let mut bv = vec![0.0; dim];
    let mut da = vec![0.0; dim];
    let mut du = vec![0.0; dim];
    let mut values = Vec::with_capacity((n_steps + 1) * dim);
    values.extend_from_slice(&y);
    for k in 0..n_steps {
        b.eval_unchecked(x, &y, &mut bv);
        increment_into(adv, k, &mut da);
        control.integral_over(adv.time(k), adv.time(k + 1), &mut du);
        for i in 0..dim {
            y[i] = y[i] + bv[i] * dt + da[i] + du[i];
        }
        values.extend_from_slice(&y);
    }
    SamplePath::new(adv.t0, dt, dim, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::generate_wiener;

    fn sup_norm(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    fn linear_drift() -> DriftSpec {
        DriftSpec::Linear { rate: 1.0, dim_y: 1 }
    }

    fn unit_sigma() -> Vec<Vec<f64>> {
        vec![vec![1.0]]
    }

    fn base_config() -> SlowFastConfig {
        SlowFastConfig {
            epsilon: 0.25,
            hurst_slow: 0.7,
            hurst_fast: 0.6,
            f: CoeffField::LinearSin { a_x: -1.0, a_y: 1.0, sin_amp: 0.0 },
            g: CoeffField::Constant { value: 1.0 },
            b: DriftSpec::MeanField { rate: 1.0, map: crate::drift::MeanFieldMap::Sin, dim: 1 },
            sigma: vec![vec![1.0]],
            x0: vec![0.5],
            y0: vec![0.0],
            t_horizon: 1.0,
            dt_slow: 1.0 / 32.0,
            dt_fast: 1.0 / 128.0,
            seed: 2024,
        }
    }

    fn var_with_se(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        (m2, ((m4 - m2 * m2).max(0.0) / n).sqrt())
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        assert!(base_config().validate().is_ok());

        let mut c = base_config();
        c.hurst_slow = 0.4;
        assert!(matches!(c.validate(), Err(Error::Parameter(_))), "H <= 1/2 must be rejected");

        let mut c = base_config();
        c.hurst_fast = 0.25;
        assert!(c.validate().is_err(), "fast Hurst below 1 - H must be rejected");

        let mut c = base_config();
        c.dt_fast = c.epsilon / 8.0;
        match c.validate() {
            Err(Error::Stiffness { required, .. }) => {
                assert!((required - c.epsilon / FAST_RESOLUTION).abs() < 1e-15, "error must name the required step");
            }
            other => panic!("expected a stiffness error, got {other:?}"),
        }

        let mut c = base_config();
        c.dt_fast = c.dt_slow / 3.7;
        assert!(c.validate().is_err(), "dt_slow must be an integer multiple of dt_fast");

        let mut c = base_config();
        c.sigma = vec![vec![0.0]];
        assert!(c.validate().is_err(), "singular sigma must be rejected");

        let mut c = base_config();
        c.y0 = vec![0.0, 0.0];
        assert!(matches!(c.validate(), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn invertibility_check_sees_rank_deficiency() {
        assert!(check_invertible(&[vec![1.0, 2.0], vec![2.0, 4.0]], 2).is_err());
        assert!(check_invertible(&[vec![0.0, 1.0], vec![1.0, 0.0]], 2).is_ok(), "permutations are invertible");
        assert!(check_invertible(&[vec![1.0, 2.0], vec![2.0, 4.0 + 1e-6]], 2).is_ok());
        assert!(check_invertible(&[vec![1.0]], 2).is_err(), "shape mismatch");
    }

    #[test]
    fn fast_frozen_ou_variance_reaches_one_half() {
        // b = -y, sigma = 1, eps = 1, Wiener noise: discrete OU with stationary
        // variance 1/(2 - dt); T = 8 leaves a e^{-16}-size transient. The
        // empirical variance over paths must land within 3 SE of 1/2, with the
        // SE estimated from the sample itself.
        let b = linear_drift();
        let sigma = unit_sigma();
        let dt = 1.0 / 32.0;
        let n_paths = 2000;
        let mut finals = Vec::with_capacity(n_paths);
        for p in 0..n_paths as u64 {
            let w = generate_wiener(0.0, dt, 256, 910, p).unwrap();
            let y = integrate_fast_frozen(&[], &b, &sigma, 1.0, 0.5, &w, &[0.0], 8.0).unwrap();
            finals.push(y.at(y.n_points() - 1));
        }
        let (v, se) = var_with_se(&finals);
        assert!(
            (v - 0.5).abs() < 3.0 * se.max(1e-3),
            "terminal variance {v} is not within 3 SE ({se:.4}) of 1/2"
        );
    }

    #[test]
    fn fast_frozen_epsilon_scaling_matches_law() {
        // Speeding up (eps = 1/4, horizon 1) must agree in law with running
        // four times longer at eps = 1: for fBm the rescaled increments
        // eps^{-H} dB(eps s) have the law of dB(s), and the two discrete
        // chains coincide step for step in distribution.
        let b = linear_drift();
        let sigma = unit_sigma();
        let hurst = 0.7;
        let n_paths = 1200;
        let mut fast_eps = Vec::with_capacity(n_paths);
        let mut slow_eps = Vec::with_capacity(n_paths);
        for p in 0..n_paths as u64 {
            let spec_a = FbmSpec {
                hurst,
                dim: 1,
                n_steps: 128,
                dt: 1.0 / 128.0,
                method: FbmMethod::CirculantEmbedding,
                seed: 911,
                stream: derive_stream("scaling-a", &[p]),
            };
            let ya = integrate_fast_frozen(&[], &b, &sigma, 0.25, hurst, &generate_fbm(&spec_a).unwrap(), &[0.0], 1.0)
                .unwrap();
            fast_eps.push(ya.at(ya.n_points() - 1));
            let spec_b = FbmSpec {
                hurst,
                dim: 1,
                n_steps: 128,
                dt: 1.0 / 32.0,
                method: FbmMethod::CirculantEmbedding,
                seed: 911,
                stream: derive_stream("scaling-b", &[p]),
            };
            let yb = integrate_fast_frozen(&[], &b, &sigma, 1.0, hurst, &generate_fbm(&spec_b).unwrap(), &[0.0], 4.0)
                .unwrap();
            slow_eps.push(yb.at(yb.n_points() - 1));
        }
        let (va, sa) = var_with_se(&fast_eps);
        let (vb, sb) = var_with_se(&slow_eps);
        let se = (sa * sa + sb * sb).sqrt();
        assert!(
            (va - vb).abs() < 4.0 * se,
            "marginal variances {va:.4} and {vb:.4} differ by more than 4 SE ({se:.4})"
        );
    }

    #[test]
    fn fast_frozen_zero_noise_decays_like_the_linear_ode() {
        let b = linear_drift();
        let epsilon = 0.5f64;
        let dt = epsilon / 128.0;
        let n = (1.0 / dt).round() as usize;
        let zero = SamplePath::zeros(0.0, dt, 1, n + 1).unwrap();
        let y = integrate_fast_frozen(&[], &b, &unit_sigma(), epsilon, 0.7, &zero, &[1.0], 1.0).unwrap();
        let last = y.at(y.n_points() - 1);
        let discrete = (1.0 - dt / epsilon).powi(n as i32);
        assert!((last - discrete).abs() < 1e-12 * discrete, "Euler product must be reproduced exactly");
        let exact = (-1.0 / epsilon).exp();
        assert!(
            (last - exact).abs() < 2.0 * dt / epsilon,
            "terminal value {last} vs e^{{-T/eps}} = {exact}: outside the Euler error budget"
        );
    }

    #[test]
    fn fast_frozen_rejects_a_stiff_grid() {
        let w = generate_wiener(0.0, 0.25, 8, 1, 0).unwrap();
        match integrate_fast_frozen(&[], &linear_drift(), &unit_sigma(), 0.25, 0.7, &w, &[0.0], 2.0) {
            Err(Error::Stiffness { dt, required }) => {
                assert_eq!(dt, 0.25);
                assert!((required - 0.25 / FAST_RESOLUTION).abs() < 1e-15);
            }
            other => panic!("expected a stiffness error, got {other:?}"),
        }
    }

    #[test]
    fn slow_fast_keeps_x_constant_when_coefficients_vanish() {
        let mut cfg = base_config();
        cfg.f = CoeffField::Zero;
        cfg.g = CoeffField::Zero;
        let (x, y) = integrate_slow_fast(&cfg).unwrap();
        assert!(x.values().iter().all(|v| *v == 0.5), "X must stay at x0 bitwise");
        let y_span: f64 = y.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(y_span > 0.1, "the fast variable should still move");
    }

    #[test]
    fn slow_fast_matches_young_when_g_reads_only_x() {
        // f = 0 and g = g(x) decouple the slow equation into dX = g(X) dB;
        // the slow-fast stepper and the Young stepper then perform identical
        // arithmetic and must agree bitwise on the shared noise.
        let mut cfg = base_config();
        cfg.f = CoeffField::Zero;
        cfg.g = CoeffField::CosSlow { offset: 1.0, amp: 0.5 };
        let (slow, fast) = generate_noise_pair(&cfg, 3).unwrap();
        let (x, _) = integrate_slow_fast_with_noise(&cfg, &slow, &fast).unwrap();
        let young = integrate_young(
            |_, out| out.fill(0.0),
            |x, out| out[0] = 1.0 + 0.5 * x[0].cos(),
            &slow,
            &cfg.x0,
            cfg.t_horizon,
            cfg.dt_slow,
        )
        .unwrap();
        assert_eq!(x.values(), young.values(), "the two code paths must agree bitwise");
    }

    #[test]
    fn slow_fast_self_converges_under_grid_refinement() {
        // Fixed noise realization, three nested grids. Successive differences
        // at T must shrink like dt (ratio about 2); the coarsest difference
        // must already sit inside the declared tolerance 0.1.
        let mut ratios = Vec::new();
        let mut coarse_diffs = Vec::new();
        for stream in 0..9 {
            let mut fine = base_config();
            fine.dt_slow = 1.0 / 64.0;
            fine.dt_fast = 1.0 / 512.0;
            fine.g = CoeffField::CosSlow { offset: 1.0, amp: 0.3 };
            let (slow, fast) = generate_noise_pair(&fine, stream).unwrap();
            let mut at_t = Vec::new();
            for level in 0..3usize {
                let stride = 1 << (2 - level);
                let mut cfg = fine.clone();
                cfg.dt_slow = fine.dt_slow * stride as f64;
                cfg.dt_fast = fine.dt_fast * stride as f64;
                let (x, _) = integrate_slow_fast_with_noise(
                    &cfg,
                    &slow.restride(stride).unwrap(),
                    &fast.restride(stride).unwrap(),
                )
                .unwrap();
                at_t.push(x.at(x.n_points() - 1));
            }
            let d01 = (at_t[0] - at_t[1]).abs();
            let d12 = (at_t[1] - at_t[2]).abs();
            coarse_diffs.push(d01);
            if d12 > 1e-14 {
                ratios.push(d01 / d12);
            }
        }
        ratios.sort_by(f64::total_cmp);
        let median = ratios[ratios.len() / 2];
        assert!(median >= 1.5, "median refinement ratio {median:.2} is below 1.5 (ratios {ratios:?})");
        assert!(
            coarse_diffs.iter().all(|d| *d < 0.1),
            "coarse-grid self-convergence differences exceed the declared tolerance: {coarse_diffs:?}"
        );
    }

    #[test]
    fn slow_fast_is_adapted_to_the_noise() {
        // Replacing every noise row after a cutoff with the cutoff row (zero
        // future increments) must leave the trajectory up to the cutoff
        // bitwise unchanged.
        let cfg = base_config();
        let (slow, fast) = generate_noise_pair(&cfg, 5).unwrap();
        let (x_full, y_full) = integrate_slow_fast_with_noise(&cfg, &slow, &fast).unwrap();

        let cut_slow = 20usize;
        let cut_fast = cut_slow * cfg.sub_steps();
        let freeze = |p: &SamplePath, cut: usize| {
            let mut v = p.values().to_vec();
            let frozen: Vec<f64> = p.row(cut).to_vec();
            for i in cut + 1..p.n_points() {
                v[i * p.dim..(i + 1) * p.dim].copy_from_slice(&frozen);
            }
            SamplePath::new(p.t0, p.dt, p.dim, v).unwrap()
        };
        let (x_cut, y_cut) =
            integrate_slow_fast_with_noise(&cfg, &freeze(&slow, cut_slow), &freeze(&fast, cut_fast)).unwrap();
        assert_eq!(
            &x_full.values()[..=cut_slow],
            &x_cut.values()[..=cut_slow],
            "future noise leaked into the slow past"
        );
        assert_eq!(
            &y_full.values()[..=cut_fast],
            &y_cut.values()[..=cut_fast],
            "future noise leaked into the fast past"
        );
    }

    #[test]
    fn slow_fast_blow_up_is_reported_with_a_time() {
        let mut cfg = base_config();
        cfg.f = CoeffField::LinearSin { a_x: 25.0, a_y: 0.0, sin_amp: 0.0 };
        cfg.g = CoeffField::Zero;
        cfg.x0 = vec![1.0];
        cfg.t_horizon = 2.0;
        match integrate_slow_fast(&cfg) {
            Err(Error::BlowUp { time, magnitude, guard }) => {
                assert!(time > 0.0 && time < 2.0, "blow-up time {time} should be interior");
                assert!(magnitude > guard);
                assert!((guard - 2.0e6).abs() < 1.0, "guard must be 1e6 (1 + |x0|)");
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn young_reduces_to_an_ode_solver_without_noise() {
        let dt = 1.0 / 128.0;
        let zero = SamplePath::zeros(0.0, dt, 1, 129).unwrap();
        let x = integrate_young(
            |x, out| out[0] = -x[0],
            |_, out| out.fill(0.0),
            &zero,
            &[1.0],
            1.0,
            dt,
        )
        .unwrap();
        let last = x.at(x.n_points() - 1);
        assert!(
            (last - (-1.0f64).exp()).abs() < 2.0 * dt,
            "terminal value {last} vs e^{{-1}}: outside the Euler error budget"
        );
    }

    #[test]
    fn young_with_unit_diffusion_returns_the_noise_itself() {
        // g = 1, f = 0: the left-point sums telescope, so X - x0 equals B up
        // to float associativity (a few ulps per step).
        let spec = FbmSpec {
            hurst: 0.75,
            dim: 1,
            n_steps: 512,
            dt: 1.0 / 512.0,
            method: FbmMethod::CirculantEmbedding,
            seed: 912,
            stream: 0,
        };
        let b = generate_fbm(&spec).unwrap();
        let x = integrate_young(|_, out| out.fill(0.0), |_, out| out.fill(1.0), &b, &[2.0], 1.0, b.dt).unwrap();
        let max_b = b.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 4.0 * f64::EPSILON * (2.0 + max_b) * b.n_points() as f64;
        for i in 0..b.n_points() {
            let err = (x.at(i) - (2.0 + b.at(i))).abs();
            assert!(err <= tol, "X - x0 drifted from B by {err:.3e} at index {i}");
        }
    }

    #[test]
    fn young_self_converges_on_fixed_paths() {
        // dX = (-X + sin X) dt + dB, H = 0.7: quadrupling the step changes the
        // endpoint by less than dt^{2H-1} on every one of 20 fixed paths.
        let dt = 1.0 / 64.0;
        let mut worst = 0.0f64;
        for p in 0..20 {
            let spec = FbmSpec {
                hurst: 0.7,
                dim: 1,
                n_steps: 256,
                dt: 1.0 / 256.0,
                method: FbmMethod::CirculantEmbedding,
                seed: 913,
                stream: p,
            };
            let b = generate_fbm(&spec).unwrap();
            let f = |x: &[f64], out: &mut [f64]| out[0] = -x[0] + x[0].sin();
            let g = |_: &[f64], out: &mut [f64]| out.fill(1.0);
            let coarse = integrate_young(f, g, &b, &[0.3], 1.0, dt).unwrap();
            let fine = integrate_young(f, g, &b, &[0.3], 1.0, dt / 4.0).unwrap();
            worst = worst.max((coarse.at(coarse.n_points() - 1) - fine.at(fine.n_points() - 1)).abs());
        }
        let budget = dt.powf(2.0 * 0.7 - 1.0);
        assert!(worst < budget, "worst dt vs dt/4 difference {worst:.4} exceeds dt^{{2H-1}} = {budget:.4}");
    }

    #[test]
    fn adversary_flow_decays_without_forcing() {
        let dt = 1.0 / 128.0;
        let adv = AdversaryPath::zero(0.0, dt, 1, 129).unwrap();
        let rough = SamplePath::zeros(0.0, dt, 1, 129).unwrap();
        let y = integrate_adversary_flow(&linear_drift(), &[], &unit_sigma(), &adv, &rough, &[3.0], 1.0).unwrap();
        let last = y.at(y.n_points() - 1);
        assert!((last - 3.0 * (-1.0f64).exp()).abs() < 6.0 * dt);
    }

    #[test]
    fn adversary_flow_restarts_exactly() {
        // Flow property on the grid: integrating [0,2] equals integrating
        // [0,1] and then [1,2] from the midpoint state, bitwise, because both
        // legs consume identical increment values.
        let n = 128usize;
        let dt = 2.0 / n as f64;
        let spec = FbmSpec {
            hurst: 0.8,
            dim: 1,
            n_steps: n,
            dt,
            method: FbmMethod::CirculantEmbedding,
            seed: 914,
            stream: 0,
        };
        let adv = AdversaryPath::new(generate_fbm(&spec).unwrap(), None).unwrap();
        let rough = generate_wiener(0.0, dt, n, 914, 1).unwrap();
        let b = linear_drift();
        let sigma = unit_sigma();

        let full = integrate_adversary_flow(&b, &[], &sigma, &adv, &rough, &[0.7], 2.0).unwrap();
        let first =
            integrate_adversary_flow(&b, &[], &sigma, &adv.window(0, n / 2).unwrap(), &rough.slice(0, n / 2).unwrap(), &[0.7], 1.0)
                .unwrap();
        let mid = first.row(first.n_points() - 1).to_vec();
        let second = integrate_adversary_flow(
            &b,
            &[],
            &sigma,
            &adv.window(n / 2, n).unwrap(),
            &rough.slice(n / 2, n).unwrap(),
            &mid,
            1.0,
        )
        .unwrap();
        assert_eq!(&full.values()[..=n / 2], first.values(), "first leg must match bitwise");
        assert_eq!(&full.values()[n / 2..], second.values(), "second leg must match bitwise");
    }

    #[test]
    fn adversary_flow_obeys_the_a_priori_bound() {
        // For b = -y the discrete variation-of-constants form gives
        // sup |Y| <= |y0| + 2 |adversary|_inf + 2 |rough|_inf; assert the
        // rounder bound 2 (1 + |y0| + |adversary|_inf + |rough|_inf).
        let n = 64usize;
        let dt = 1.0 / n as f64;
        let b = linear_drift();
        let sigma = unit_sigma();
        for p in 0..100u64 {
            let spec = FbmSpec {
                hurst: 0.8,
                dim: 1,
                n_steps: n,
                dt,
                method: FbmMethod::CirculantEmbedding,
                seed: 915,
                stream: 2 * p,
            };
            let adv = AdversaryPath::new(generate_fbm(&spec).unwrap(), None).unwrap();
            let rough = generate_wiener(0.0, dt, n, 915, 2 * p + 1).unwrap();
            let y0 = [-2.0 + 0.04 * p as f64];
            let y = integrate_adversary_flow(&b, &[], &sigma, &adv, &rough, &y0, 1.0).unwrap();
            let sup_y = sup_norm(y.values());
            let bound = 2.0 * (1.0 + y0[0].abs() + sup_norm(adv.path.values()) + sup_norm(rough.values()));
            assert!(sup_y <= bound, "a-priori bound violated: sup |Y| = {sup_y:.3} > {bound:.3} at path {p}");
        }
    }

    #[test]
    fn control_schedule_integrates_exactly_and_counts_jumps() {
        let m = 5.0;
        let delta = 0.125;
        let u = ControlSchedule::new(vec![0.0, delta, 2.0 * delta], vec![vec![m], vec![-m]]).unwrap();
        assert_eq!(u.sup_norm(), m);
        assert_eq!(u.n_discontinuities(), 2, "sign flip and switch-off");
        let mut out = [0.0];
        u.integral_over(0.0, 2.0 * delta, &mut out);
        assert_eq!(out[0], 0.0, "the two pieces cancel exactly");
        u.integral_over(0.0, 1.5 * delta, &mut out);
        assert!((out[0] - 0.5 * m * delta).abs() < 1e-15, "mid-piece integral must be exact");
        u.integral_over(delta / 2.0, delta, &mut out);
        assert_eq!(out[0], m * delta / 2.0);
        assert_eq!(u.value_at(0.13), vec![-m]);
        assert_eq!(u.value_at(0.9), vec![0.0], "outside the covered span the control is zero");

        assert!(ControlSchedule::new(vec![0.0, 0.0], vec![vec![1.0]]).is_err());
        assert!(ControlSchedule::new(vec![0.0, 1.0], vec![]).is_err());
    }

    #[test]
    fn adversary_paths_validate_origin_and_power_law() {
        let bad = SamplePath::scalar(0.0, 0.5, vec![0.3, 0.5, 0.1]).unwrap();
        assert!(AdversaryPath::new(bad, None).is_err(), "nonzero start at t0 = 0 must be rejected");

        let adv = AdversaryPath::power_law(2.0, 0.4, 1.0 / 64.0, 64).unwrap();
        assert_eq!(adv.path.at(0), 0.0);
        let d = adv.derivative.unwrap();
        assert_eq!(d.weighted_sup, 2.0);
        // Value at t = 1 is coeff / (1 - beta).
        assert!((adv.path.at(64) - 2.0 / 0.6).abs() < 1e-12);
        // Windows keep their (nonzero) start because the flow reads increments.
        let w = adv.window(32, 64).unwrap();
        assert_eq!(w.path.at(0), adv.path.at(32));
    }

    #[test]
    fn controlled_ode_with_zero_control_is_the_adversary_flow() {
        let n = 64usize;
        let dt = 1.0 / n as f64;
        let spec = FbmSpec {
            hurst: 0.8,
            dim: 1,
            n_steps: n,
            dt,
            method: FbmMethod::CirculantEmbedding,
            seed: 916,
            stream: 0,
        };
        let adv = AdversaryPath::new(generate_fbm(&spec).unwrap(), None).unwrap();
        let b = linear_drift();
        let controlled =
            integrate_controlled_ode(&b, &[], &adv, &ControlSchedule::zero(1, 1.0).unwrap(), &[0.4]).unwrap();
        let rough = SamplePath::zeros(0.0, dt, 1, n + 1).unwrap();
        let flow = integrate_adversary_flow(&b, &[], &unit_sigma(), &adv, &rough, &[0.4], 1.0).unwrap();
        assert_eq!(controlled.values(), flow.values(), "zero control must reproduce the flow bitwise");
    }

    #[test]
    fn controlled_ode_perturbation_grows_at_most_linearly_in_time() {
        // |x^{s,u}(t) - x^s(t)|^2 <= C (1 + |u|_inf^2) t with C = 1 for the
        // contractive drift b = -y; the fitted constant is identical across
        // adversaries because the gap dynamics are linear and adversary-free.
        let n = 64usize;
        let dt = 1.0 / n as f64;
        let m = 2.0;
        let u = ControlSchedule::new(vec![0.0, 0.25, 0.5], vec![vec![m], vec![-m]]).unwrap();
        let zero_u = ControlSchedule::zero(1, 1.0).unwrap();
        let b = linear_drift();
        let mut fitted = Vec::new();
        for p in 0..50u64 {
            let spec = FbmSpec {
                hurst: 0.8,
                dim: 1,
                n_steps: n,
                dt,
                method: FbmMethod::CirculantEmbedding,
                seed: 917,
                stream: p,
            };
            let adv = AdversaryPath::new(generate_fbm(&spec).unwrap(), None).unwrap();
            let with_u = integrate_controlled_ode(&b, &[], &adv, &u, &[0.4]).unwrap();
            let without = integrate_controlled_ode(&b, &[], &adv, &zero_u, &[0.4]).unwrap();
            let mut c_fit = 0.0f64;
            for k in 1..=n {
                let gap_sq = (with_u.at(k) - without.at(k)).powi(2);
                let budget = (1.0 + m * m) * with_u.time(k);
                assert!(gap_sq <= budget * (1.0 + 1e-9), "perturbation bound violated at step {k} of path {p}");
                c_fit = c_fit.max(gap_sq / budget);
            }
            fitted.push(c_fit);
        }
        let spread = fitted.iter().fold(0.0f64, |m, c| m.max(*c)) - fitted.iter().fold(1.0f64, |m, c| m.min(*c));
        assert!(spread < 1e-9, "fitted constants should not depend on the adversary, spread = {spread:.2e}");
    }

    #[test]
    fn controlled_ode_is_stable_under_integral_perturbation() {
        // Replacing the control by any path w close to its primitive moves the
        // solution by at most e^{Lip(b)} |primitive - w|_inf.
        let n = 128usize;
        let dt = 1.0 / n as f64;
        let m = 2.0;
        let u = ControlSchedule::new(vec![0.0, 0.25, 0.5], vec![vec![m], vec![-m]]).unwrap();
        let spec = FbmSpec {
            hurst: 0.8,
            dim: 1,
            n_steps: n,
            dt,
            method: FbmMethod::CirculantEmbedding,
            seed: 918,
            stream: 0,
        };
        let adv = AdversaryPath::new(generate_fbm(&spec).unwrap(), None).unwrap();
        let b = linear_drift();

        let jitter = 1e-3;
        let mut primitive = vec![0.0; n + 1];
        let mut w_values = vec![0.0; n + 1];
        let mut buf = [0.0];
        for k in 0..=n {
            let t = k as f64 * dt;
            u.integral_over(0.0, t, &mut buf);
            primitive[k] = buf[0];
            w_values[k] = buf[0] + jitter * (7.3 * t).sin();
        }
        let controlled = integrate_controlled_ode(&b, &[], &adv, &u, &[0.4]).unwrap();
        let w_path = SamplePath::scalar(0.0, dt, w_values.clone()).unwrap();
        let perturbed =
            integrate_adversary_flow(&b, &[], &unit_sigma(), &adv, &w_path, &[0.4], 1.0).unwrap();

        let d_inf: f64 = (0..=n).map(|k| (primitive[k] - w_values[k]).abs()).fold(0.0, f64::max);
        let gap: f64 = (0..=n).map(|k| (controlled.at(k) - perturbed.at(k)).abs()).fold(0.0, f64::max);
        assert!(
            gap <= 1.0f64.exp() * d_inf,
            "stability bound violated: gap {gap:.3e} vs e^Lip * |D|_inf = {:.3e}",
            1.0f64.exp() * d_inf
        );
        assert!(gap > 0.0, "the perturbation should actually move the path");
    }

    #[test]
    fn synchronous_coupling_contracts_two_flows() {
        // Same adversary and rough path, different starts, b = -y in S(1,0,0):
        // the discrete gap is (1 - dt)^k times the initial gap, below the
        // continuous envelope e^{-t}.
        let n = 192usize;
        let dt = 3.0 / n as f64;
        let spec = FbmSpec {
            hurst: 0.8,
            dim: 1,
            n_steps: n,
            dt,
            method: FbmMethod::CirculantEmbedding,
            seed: 919,
            stream: 0,
        };
        let adv = AdversaryPath::new(generate_fbm(&spec).unwrap(), None).unwrap();
        let rough = generate_wiener(0.0, dt, n, 919, 1).unwrap();
        let b = linear_drift();
        let sigma = unit_sigma();
        let ya = integrate_adversary_flow(&b, &[], &sigma, &adv, &rough, &[3.0], 3.0).unwrap();
        let yb = integrate_adversary_flow(&b, &[], &sigma, &adv, &rough, &[-1.0], 3.0).unwrap();
        let gap0 = 4.0;
        for k in 0..=n {
            let gap = (ya.at(k) - yb.at(k)).abs();
            let envelope = gap0 * (-ya.time(k)).exp();
            assert!(
                gap <= envelope * (1.0 + 1e-9),
                "synchronous gap {gap:.6} above e^{{-t}} envelope {envelope:.6} at step {k}"
            );
            let discrete = gap0 * (1.0 - dt).powi(k as i32);
            assert!((gap - discrete).abs() <= 1e-9 * gap0, "gap must follow the exact discrete product");
        }
    }
}
