//! Long-time behaviour experiments: Wasserstein and total-variation decay
//! toward the invariant measure, the explicit two-stage coupling with its
//! drift correction and cost record, the universal control construction, and
//! quenched decay under Riemann-Liouville noise with a fixed adversary.
//!
//! Experiments are re-entrant and parallelize over paths; every aggregate is
//! order-independent, so results do not depend on the worker count.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{ContractivityCertificate, DriftSpec};
use crate::error::{Error, Result};
use crate::integrate::{
    integrate_adversary_flow, integrate_controlled_ode, AdversaryPath, ControlSchedule,
    DerivativeSpec,
};
use crate::measures::{
    estimate_invariant_measure, sliced_wasserstein, tv_histogram, wasserstein_1d, BinRule,
    EmpiricalMeasure, MeasureProvenance,
};
use crate::noise::{
    default_past_depth, generate_fbm, generate_riemann_liouville, generate_wiener,
    mvn_increment_decomposition, FbmMethod, FbmSpec,
};
use crate::path::SamplePath;
use crate::rng::derive_stream;

/// Ensemble states blowing past this multiple of the initial scale abort the
/// experiment, mirroring the integrator guard.
const ENSEMBLE_GUARD: f64 = 1.0e6;

/// Distance-versus-time record of one decay experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    /// Per-point standard error; zero when the ensemble statistic is exact.
    pub se: Vec<f64>,
    pub n_paths: usize,
}

impl DecayCurve {
    pub fn new(times: Vec<f64>, distances: Vec<f64>, se: Vec<f64>, n_paths: usize) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Empty("decay curve times".into()));
        }
        if times.len() != distances.len() || times.len() != se.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), got: distances.len().min(se.len()) });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::parameter("decay curve times must be strictly increasing"));
        }
        if distances.iter().chain(se.iter()).any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::parameter("distances and standard errors must be finite and >= 0"));
        }
        if n_paths == 0 {
            return Err(Error::Empty("ensemble".into()));
        }
        Ok(DecayCurve { times, distances, se, n_paths })
    }

    pub fn n_points(&self) -> usize {
        self.times.len()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# n_paths: {}", self.n_paths)?;
        writeln!(w, "t,distance,se")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{},{},{}",
                crate::path::fmt_f64(self.times[i]),
                crate::path::fmt_f64(self.distances[i]),
                crate::path::fmt_f64(self.se[i])
            )?;
        }
        Ok(())
    }

    /// Least-squares fit of `log distance` against `t` (exponential model) or
    /// `log t` (algebraic model). The fit window keeps points with a positive
    /// distance whose standard error is at most a quarter of the value, so an
    /// SE-dominated tail cannot bias the rate toward zero; the algebraic
    /// model additionally needs `t > 0`.
    pub fn fit(&self, model: FitModel) -> Result<RateFit> {
        let mut window = Vec::new();
        for i in 0..self.times.len() {
            let d = self.distances[i];
            if d <= 0.0 || self.se[i] > 0.25 * d {
                continue;
            }
            if model == FitModel::Algebraic && self.times[i] <= 0.0 {
                continue;
            }
            window.push(i);
        }
        if window.len() < 3 {
            return Err(Error::Empty(format!(
                "fit window has {} points after dropping SE-dominated entries; need 3",
                window.len()
            )));
        }
        let xs: Vec<f64> = window
            .iter()
            .map(|&i| match model {
                FitModel::Exponential => self.times[i],
                FitModel::Algebraic => self.times[i].ln(),
            })
            .collect();
        let ys: Vec<f64> = window.iter().map(|&i| self.distances[i].ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        if sxx <= 0.0 {
            return Err(Error::parameter("fit window collapses to a single abscissa"));
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let e = y - (intercept + slope * x);
                e * e
            })
            .sum();
        let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        let r_squared = if ss_tot <= 1e-30 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
        let fit = RateFit {
            model,
            amplitude: intercept.exp(),
            rate: -slope,
            r_squared,
            window,
        };
        if !fit.rate.is_finite() || !fit.amplitude.is_finite() {
            return Err(Error::parameter("fit produced a non-finite rate"));
        }
        Ok(fit)
    }

    /// Fits both models and returns the one with the higher r^2.
    pub fn fit_best(&self) -> Result<RateFit> {
        let exp = self.fit(FitModel::Exponential);
        let alg = self.fit(FitModel::Algebraic);
        match (exp, alg) {
            (Ok(e), Ok(a)) => Ok(if e.r_squared >= a.r_squared { e } else { a }),
            (Ok(e), Err(_)) => Ok(e),
            (Err(_), Ok(a)) => Ok(a),
            (Err(e), Err(_)) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    /// distance ~ amplitude * exp(-rate * t)
    Exponential,
    /// distance ~ amplitude * t^{-rate}
    Algebraic,
}

/// Log-scale least-squares fit of a decay curve. `rate` is the positive decay
/// constant of the model; `window` lists the curve indices the fit kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: FitModel,
    pub amplitude: f64,
    pub rate: f64,
    pub r_squared: f64,
    pub window: Vec<usize>,
}

impl RateFit {
    /// Fit of a curve indistinguishable from zero (or too short to regress):
    /// amplitude 0 represents it exactly, with no rate information.
    pub fn degenerate(model: FitModel) -> Self {
        RateFit { model, amplitude: 0.0, rate: 0.0, r_squared: 1.0, window: Vec::new() }
    }
}

/// Shared knobs of the decay experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    /// Ensemble integration step.
    pub dt: f64,
    pub seed: u64,
    /// Run without a passing contractivity certificate.
    pub force: bool,
    /// Largest admissible certified repulsivity; larger lambda is refused.
    pub lambda_cap: f64,
    /// Burn-in for the stationary reference cloud.
    pub burn_in: f64,
    /// Step for the coupling runs inside the TV experiment.
    pub girsanov_dt: f64,
    /// Block count for ensemble standard errors.
    pub n_blocks: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            dt: 1.0 / 64.0,
            seed: 0,
            force: false,
            lambda_cap: 1.0,
            burn_in: 12.0,
            girsanov_dt: 1.0 / 512.0,
            n_blocks: 8,
        }
    }
}

fn require_certificate(
    certificate: Option<&ContractivityCertificate>,
    lambda_cap: f64,
    force: bool,
) -> Result<f64> {
    match certificate {
        Some(c) if c.passes() && c.lambda <= lambda_cap => Ok(c.lambda.max(0.0)),
        _ if force => Ok(certificate.map(|c| c.lambda.max(0.0)).unwrap_or(0.0)),
        Some(c) if !c.passes() => Err(Error::parameter(format!(
            "drift certificate fails with {} violation witnesses; set force to run anyway",
            c.violations.len()
        ))),
        Some(c) => Err(Error::parameter(format!(
            "certified repulsivity lambda = {} exceeds the experiment cap {lambda_cap}; set force to run anyway",
            c.lambda
        ))),
        None => Err(Error::parameter(
            "decay experiments need a passing contractivity certificate; set force to run anyway",
        )),
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// Gauss-Jordan inverse with partial pivoting; errors on rank deficiency.
fn invert_matrix(m: &[Vec<f64>], dim: usize) -> Result<Vec<Vec<f64>>> {
    if m.len() != dim || m.iter().any(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: m.len() });
    }
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    for col in 0..dim {
        let pivot = (col..dim)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty pivot range");
        if a[pivot][col].abs() <= 1e-12 * scale {
            return Err(Error::parameter("sigma is numerically singular"));
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..dim {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..dim {
            if i == col {
                continue;
            }
            let f = a[i][col];
            if f == 0.0 {
                continue;
            }
            for j in 0..dim {
                a[i][j] -= f * a[col][j];
                inv[i][j] -= f * inv[col][j];
            }
        }
    }
    Ok(inv)
}

fn grid_indices(t_grid: &[f64], dt: f64) -> Result<Vec<usize>> {
    if t_grid.is_empty() {
        return Err(Error::Empty("time grid".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::parameter("time grid must be strictly increasing"));
    }
    t_grid
        .iter()
        .map(|&t| {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::parameter(format!("grid times must be finite and >= 0, got {t}")));
            }
            let idx = (t / dt).round();
            if (idx * dt - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::GridMismatch(format!(
                    "grid time {t} does not sit on the dt = {dt} lattice"
                )));
            }
            Ok(idx as usize)
        })
        .collect()
}

/// Euler evolution of a synchronously coupled pair (shared noise increments)
/// recorded at the requested grid indices; returns the two recorded state
/// blocks, grid-time-major.
#[allow(clippy::too_many_arguments)]
fn evolve_shared_pair(
    b: &DriftSpec,
    x: &[f64],
    sigma: &[Vec<f64>],
    noise: &SamplePath,
    y0_a: &[f64],
    y0_b: &[f64],
    grid_idx: &[usize],
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = b.dim_y();
    let n_steps = *grid_idx.last().expect("non-empty grid");
    let guard = ENSEMBLE_GUARD * (1.0 + l2(y0_a) + l2(y0_b));
    let mut ya = y0_a.to_vec();
    let mut yb = y0_b.to_vec();
    let mut bva = vec![0.0; dim];
    let mut bvb = vec![0.0; dim];
    let mut db = vec![0.0; dim];
    let mut sdb = vec![0.0; dim];
    let mut rec_a = Vec::with_capacity(grid_idx.len() * dim);
    let mut rec_b = Vec::with_capacity(grid_idx.len() * dim);
    let mut next = 0;
    for k in 0..=n_steps {
        if next < grid_idx.len() && k == grid_idx[next] {
            rec_a.extend_from_slice(&ya);
            rec_b.extend_from_slice(&yb);
            next += 1;
        }
        if k == n_steps {
            break;
        }
        b.eval_unchecked(x, &ya, &mut bva);
        b.eval_unchecked(x, &yb, &mut bvb);
        let r0 = noise.row(k);
        let r1 = noise.row(k + 1);
        for c in 0..dim {
            db[c] = r1[c] - r0[c];
        }
        mat_vec(sigma, &db, &mut sdb);
        for c in 0..dim {
            ya[c] = ya[c] + bva[c] * dt + sdb[c];
            yb[c] = yb[c] + bvb[c] * dt + sdb[c];
        }
        if l2(&ya).max(l2(&yb)) > guard {
            return Err(Error::BlowUp {
                time: (k + 1) as f64 * dt,
                magnitude: l2(&ya).max(l2(&yb)),
                guard,
            });
        }
    }
    Ok((rec_a, rec_b))
}

fn cloud_at(rows: &[Vec<f64>], j: usize, dim: usize, label: &str) -> Result<EmpiricalMeasure> {
    let mut samples = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        samples.extend_from_slice(&r[j * dim..(j + 1) * dim]);
    }
    EmpiricalMeasure::new(samples, dim, MeasureProvenance::synthetic(label))
}

fn cloud_distance(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: f64, seed: u64) -> Result<f64> {
    if a.dim == 1 {
        wasserstein_1d(a, b, p)
    } else {
        sliced_wasserstein(a, b, p, 64, seed)
    }
}

/// Block standard error of a cloud-to-cloud distance: the ensemble is split
/// into `n_blocks` contiguous blocks and the spread of per-block distances
/// estimates the sampling error of the pooled value. `j_a` and `j_b` pick the
/// recorded grid time on each side (a stationary reference holds only j = 0).
#[allow(clippy::too_many_arguments)]
fn block_se(
    rows_a: &[Vec<f64>],
    rows_b: &[Vec<f64>],
    j_a: usize,
    j_b: usize,
    dim: usize,
    p: f64,
    seed: u64,
    n_blocks: usize,
) -> Result<f64> {
    let n = rows_a.len();
    let per = n / n_blocks;
    let mut vals = Vec::with_capacity(n_blocks);
    for blk in 0..n_blocks {
        let lo = blk * per;
        let hi = lo + per;
        let ca = cloud_at(&rows_a[lo..hi], j_a, dim, "block-a")?;
        let cb = cloud_at(&rows_b[lo..hi], j_b, dim, "block-b")?;
        vals.push(cloud_distance(&ca, &cb, p, seed)?);
    }
    let m = vals.iter().sum::<f64>() / n_blocks as f64;
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n_blocks as f64 - 1.0);
    Ok((var / n_blocks as f64).sqrt())
}

/// Synchronous-coupling Wasserstein decay: two ensembles started at `y0_a`
/// and `y0_b`, each pair sharing its fractional noise, compared marginal
/// cloud against marginal cloud at every grid time, then fitted to
/// `amplitude * exp(-rate t)`.
///
/// Refuses to run without a passing certificate whose repulsivity stays below
/// `opts.lambda_cap`, unless `opts.force` is set.
#[allow(clippy::too_many_arguments)]
pub fn wasserstein_decay_experiment(
    b: &DriftSpec,
    x: &[f64],
    sigma: &[Vec<f64>],
    hurst: f64,
    y0_a: &[f64],
    y0_b: &[f64],
    t_grid: &[f64],
    n_paths: usize,
    p: f64,
    certificate: Option<&ContractivityCertificate>,
    opts: &ExperimentOptions,
) -> Result<(DecayCurve, RateFit)> {
    require_certificate(certificate, opts.lambda_cap, opts.force)?;
    let dim = b.dim_y();
    if y0_a.len() != dim || y0_b.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: y0_a.len().min(y0_b.len()) });
    }
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::parameter(format!("hurst must lie in (0,1), got {hurst}")));
    }
    if !(p >= 1.0) {
        return Err(Error::parameter(format!("wasserstein order must be >= 1, got {p}")));
    }
    if n_paths < 2 * opts.n_blocks || n_paths % opts.n_blocks != 0 {
        return Err(Error::parameter(format!(
            "n_paths = {n_paths} must be a multiple of n_blocks = {} with at least 2 per block",
            opts.n_blocks
        )));
    }
    crate::drift::evaluate_drift(b, x, y0_a)?;
    let grid_idx = grid_indices(t_grid, opts.dt)?;
    let n_steps = *grid_idx.last().expect("non-empty grid");

    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let noise = generate_fbm(&FbmSpec {
                hurst,
                dim,
                n_steps: n_steps.max(1),
                dt: opts.dt,
                method: FbmMethod::CirculantEmbedding,
                seed: opts.seed,
                stream: derive_stream("wasserstein-decay", &[i as u64]),
            })?;
            evolve_shared_pair(b, x, sigma, &noise, y0_a, y0_b, &grid_idx, opts.dt)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows_a: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
    let rows_b: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();

    let mut distances = Vec::with_capacity(grid_idx.len());
    let mut ses = Vec::with_capacity(grid_idx.len());
    for j in 0..grid_idx.len() {
        let ca = cloud_at(&rows_a, j, dim, "wasserstein-decay-a")?;
        let cb = cloud_at(&rows_b, j, dim, "wasserstein-decay-b")?;
        distances.push(cloud_distance(&ca, &cb, p, opts.seed)?);
        ses.push(block_se(&rows_a, &rows_b, j, j, dim, p, opts.seed, opts.n_blocks)?);
    }
    let curve = DecayCurve::new(t_grid.to_vec(), distances, ses, n_paths)?;
    let fit = match curve.fit(FitModel::Exponential) {
        Ok(f) => f,
        Err(Error::Empty(_)) => RateFit::degenerate(FitModel::Exponential),
        Err(e) => return Err(e),
    };
    Ok((curve, fit))
}

/// One run of the explicit coupling over a unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovCouplingRecord {
    pub initial_gap: f64,
    pub terminal_gap: f64,
    /// sup over the grid of |phi|, the drift-correction magnitude.
    pub sup_phi: f64,
    /// sup of the finite-difference derivative |phi_{k+1} - phi_k| / dt.
    pub sup_phi_dot: f64,
    /// First grid time at which the pair coincides exactly, if any.
    pub coalescence_time: Option<f64>,
    /// sqrt|X - Z| sampled along the run, subsampled to at most 129 points.
    pub gap_sqrt: Vec<f64>,
    /// max over the grid of sqrt gap minus the linear envelope
    /// (1 - t) sqrt(initial gap); <= 0 when the decay is clean.
    pub envelope_margin: f64,
    pub dt: f64,
    pub lambda: f64,
}

/// Integrates the coupled pair (X, Z) over one unit interval with the drift
/// correction `phi(s) = -(4 sqrt|X_0 - Z_0| / sqrt|X_s - Z_s| + lambda)
/// sigma^{-1} (X_s - Z_s)` applied to Z, so the gap obeys
/// `sqrt|X_s - Z_s| <= (1 - 2s) sqrt|X_0 - Z_0|` whenever `lambda` dominates
/// the one-sided constant of `b`; the recorded envelope uses the weaker slope
/// 1, leaving a factor-two margin for discretization.
///
/// The correction step contracts the gap by the exact factor
/// `exp(-c dt)` with the coefficient frozen over the step, which cannot
/// overshoot the coalescence singularity; once the factor underflows the pair
/// is merged exactly and evolves synchronously. `noise` (shared by both
/// states) shifts the trajectory but cancels in the gap, so it may be omitted
/// when only the coupling mechanics matter.
#[allow(clippy::too_many_arguments)]
pub fn girsanov_coupling_run(
    b: &DriftSpec,
    x: &[f64],
    sigma: &[Vec<f64>],
    lambda: f64,
    x_state: &[f64],
    z_state: &[f64],
    dt: f64,
    noise: Option<&SamplePath>,
) -> Result<GirsanovCouplingRecord> {
    let dim = b.dim_y();
    if x_state.len() != dim || z_state.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x_state.len().min(z_state.len()) });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::parameter(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::parameter(format!("dt must be finite and > 0, got {dt}")));
    }
    if x_state.iter().chain(z_state).any(|v| !v.is_finite()) {
        return Err(Error::parameter("coupling states must be finite"));
    }
    let n = (1.0 / dt).round();
    if (n * dt - 1.0).abs() > 1e-9 {
        return Err(Error::GridMismatch(format!("dt = {dt} does not divide the unit interval")));
    }
    let n = n as usize;
    if let Some(path) = noise {
        if path.dim != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: path.dim });
        }
        if (path.dt - dt).abs() > 1e-12 * dt {
            return Err(Error::GridMismatch(format!(
                "noise grid step {} differs from the coupling step {dt}",
                path.dt
            )));
        }
        if path.n_points() < n + 1 {
            return Err(Error::GridMismatch(format!(
                "noise path has {} points, the unit interval needs {}",
                path.n_points(),
                n + 1
            )));
        }
    }
    let sig_inv = invert_matrix(sigma, dim)?;
    crate::drift::evaluate_drift(b, x, x_state)?;

    let mut xs = x_state.to_vec();
    let mut zs = z_state.to_vec();
    let mut d: Vec<f64> = xs.iter().zip(&zs).map(|(a, b)| a - b).collect();
    let h0 = l2(&d);
    let r0 = h0.sqrt();
    let mut coalesced = h0 == 0.0;
    let mut coalescence_time = if coalesced { Some(0.0) } else { None };

    let mut bx = vec![0.0; dim];
    let mut bz = vec![0.0; dim];
    let mut db = vec![0.0; dim];
    let mut sdb = vec![0.0; dim];
    let mut phi = vec![0.0; dim];
    let mut phi_prev = vec![0.0; dim];
    let mut sup_phi = 0.0f64;
    let mut sup_phi_dot = 0.0f64;
    let mut envelope_margin = f64::NEG_INFINITY;
    let mut gap_sqrt_full = Vec::with_capacity(n + 1);

    for k in 0..=n {
        let t_k = k as f64 * dt;
        for c in 0..dim {
            d[c] = xs[c] - zs[c];
        }
        let h = l2(&d);
        if h == 0.0 && !coalesced {
            coalesced = true;
            coalescence_time = Some(t_k);
        }
        let rh = h.sqrt();
        gap_sqrt_full.push(rh);
        envelope_margin = envelope_margin.max(rh - (1.0 - t_k) * r0);

        if coalesced || h == 0.0 {
            phi.iter_mut().for_each(|v| *v = 0.0);
        } else {
            let coeff = 4.0 * (r0 / rh) + lambda;
            mat_vec(&sig_inv, &d, &mut phi);
            phi.iter_mut().for_each(|v| *v *= -coeff);
        }
        sup_phi = sup_phi.max(l2(&phi));
        if k > 0 {
            let diff: f64 = phi
                .iter()
                .zip(&phi_prev)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            sup_phi_dot = sup_phi_dot.max(diff / dt);
        }
        phi_prev.copy_from_slice(&phi);
        if k == n {
            break;
        }

        b.eval_unchecked(x, &xs, &mut bx);
        b.eval_unchecked(x, &zs, &mut bz);
        if let Some(path) = noise {
            let a = path.row(k);
            let b2 = path.row(k + 1);
            for c in 0..dim {
                db[c] = b2[c] - a[c];
            }
            mat_vec(sigma, &db, &mut sdb);
        }
        for c in 0..dim {
            xs[c] = xs[c] + bx[c] * dt + sdb[c];
        }
        if coalesced {
            zs.copy_from_slice(&xs);
            continue;
        }
        for c in 0..dim {
            zs[c] = zs[c] + bz[c] * dt + sdb[c];
        }
        let exponent = (4.0 * (r0 / rh) + lambda) * dt;
        if exponent >= 700.0 {
            zs.copy_from_slice(&xs);
            coalesced = true;
            coalescence_time = Some((k + 1) as f64 * dt);
            continue;
        }
        let factor = (-exponent).exp();
        let mut all_zero = true;
        for c in 0..dim {
            let gap = xs[c] - zs[c];
            zs[c] = xs[c] - factor * gap;
            if xs[c] - zs[c] != 0.0 {
                all_zero = false;
            }
        }
        if all_zero {
            coalesced = true;
            coalescence_time = Some((k + 1) as f64 * dt);
        }
    }

    let tol = r0 * dt * (8.0 + 2.0 * lambda) + 1e-12 * (1.0 + r0);
    if envelope_margin > tol {
        return Err(Error::Diagnostic(format!(
            "square-root coupling envelope violated by {envelope_margin:.3e} (tolerance {tol:.3e}): \
             lambda understates the drift's one-sided constant or dt = {dt} is too coarse"
        )));
    }

    let stride = (gap_sqrt_full.len() / 128).max(1);
    let mut gap_sqrt: Vec<f64> = gap_sqrt_full.iter().step_by(stride).copied().collect();
    if (gap_sqrt_full.len() - 1) % stride != 0 {
        gap_sqrt.push(*gap_sqrt_full.last().expect("non-empty gap record"));
    }
    let terminal_gap = {
        let mut g = vec![0.0; dim];
        for c in 0..dim {
            g[c] = xs[c] - zs[c];
        }
        l2(&g)
    };
    Ok(GirsanovCouplingRecord {
        initial_gap: h0,
        terminal_gap,
        sup_phi,
        sup_phi_dot,
        coalescence_time,
        gap_sqrt,
        envelope_margin,
        dt,
        lambda,
    })
}

/// Rule supplying the coupling threshold delta(t) of the TV bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeltaRule {
    /// delta(t) = exp(-c t / 2) with c fitted by a synchronous-coupling
    /// Wasserstein probe on the same drift.
    FromWassersteinRate,
    /// delta(t) = exp(-rate t / 2) with the rate supplied directly.
    FixedRate { rate: f64 },
}

/// Output of the two-stage total-variation bound experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvDecayReport {
    /// The coupling upper bound on the TV distance at each grid time t:
    /// fraction of pairs whose synchronous gap at t - 1 exceeds delta(t),
    /// plus the mean clamped Pinsker cost of coupling the rest over the final
    /// unit interval. Grid times below 1 report the trivial bound 1.
    pub bound: DecayCurve,
    /// Histogram TV between the same marginal clouds, for domination checks.
    pub histogram: DecayCurve,
    /// Exponential fit of the bound, restricted to its non-saturated part
    /// (values below 0.98): a bound clamped at one carries no rate
    /// information. `window` indexes into `bound`.
    pub fit: RateFit,
    pub frac_uncoupled: Vec<f64>,
    pub mean_cost: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Decay rate feeding the delta rule.
    pub wasserstein_rate: f64,
}

/// Two-stage TV decay bound toward the invariant measure. For each grid time
/// t >= 1: synchronous coupling of an ensemble started at `initial` against a
/// stationary cloud up to t - 1, then the explicit coupling run over the
/// final unit interval on every pair whose gap is below delta(t), so the
/// reported value bounds the TV distance at t itself. The per-pair TV
/// contribution is 1 for uncoupled pairs and
/// `min(1, sqrt(sup|phi|^2 + sup|phi'|^2) / 2)` for coupled ones, the proof's
/// surrogate for the Girsanov cost. Grid times below 1 leave no room for the
/// coupling interval and report the trivial bound 1.
#[allow(clippy::too_many_arguments)]
pub fn tv_decay_experiment(
    b: &DriftSpec,
    x: &[f64],
    sigma: &[Vec<f64>],
    hurst: f64,
    initial: &[f64],
    t_grid: &[f64],
    n_paths: usize,
    delta_rule: &DeltaRule,
    certificate: Option<&ContractivityCertificate>,
    opts: &ExperimentOptions,
) -> Result<TvDecayReport> {
    let lambda = require_certificate(certificate, opts.lambda_cap, opts.force)?;
    let dim = b.dim_y();
    if initial.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: initial.len() });
    }
    if n_paths < 2 * opts.n_blocks {
        return Err(Error::parameter(format!("n_paths = {n_paths} is too small for the block SE")));
    }
    grid_indices(t_grid, opts.dt)?;
    // The bound at t needs the synchronous gap at t - 1 and the histogram
    // needs the marginal cloud at t, so record the ensemble on the union.
    let mut record_times: Vec<f64> = t_grid.to_vec();
    for &t in t_grid {
        if t >= 1.0 {
            record_times.push(t - 1.0);
        }
    }
    record_times.sort_by(f64::total_cmp);
    record_times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    let grid_idx = grid_indices(&record_times, opts.dt)?;
    let pos_of = |t: f64| -> usize {
        record_times
            .iter()
            .position(|r| (r - t).abs() <= 1e-12)
            .expect("every queried time was recorded")
    };

    let c_hat = match delta_rule {
        DeltaRule::FixedRate { rate } => {
            if !(rate > &0.0) {
                return Err(Error::parameter(format!("delta rule rate must be > 0, got {rate}")));
            }
            *rate
        }
        DeltaRule::FromWassersteinRate => {
            let probe_paths = (n_paths.min(400) / opts.n_blocks).max(2) * opts.n_blocks;
            let shifted: Vec<f64> = initial.iter().map(|v| v + 1.0).collect();
            let (_, fit) = wasserstein_decay_experiment(
                b,
                x,
                sigma,
                hurst,
                initial,
                &shifted,
                t_grid,
                probe_paths,
                1.0,
                certificate,
                opts,
            )?;
            if !(fit.rate > 0.0) {
                return Err(Error::Diagnostic(format!(
                    "wasserstein probe fitted a non-decaying rate {}; the delta rule needs decay",
                    fit.rate
                )));
            }
            fit.rate
        }
    };

    let stationary = estimate_invariant_measure(
        b,
        x,
        sigma,
        hurst,
        opts.burn_in,
        n_paths,
        derive_stream("tv-stationary", &[opts.seed]),
        certificate,
    )?;

    let n_steps = *grid_idx.last().expect("non-empty grid");
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let noise = generate_fbm(&FbmSpec {
                hurst,
                dim,
                n_steps: n_steps.max(1),
                dt: opts.dt,
                method: FbmMethod::CirculantEmbedding,
                seed: opts.seed,
                stream: derive_stream("tv-decay", &[i as u64]),
            })?;
            evolve_shared_pair(b, x, sigma, &noise, initial, stationary.row(i), &grid_idx, opts.dt)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows_a: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
    let rows_b: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();

    let mut bound = Vec::with_capacity(grid_idx.len());
    let mut bound_se = Vec::with_capacity(grid_idx.len());
    let mut hist = Vec::with_capacity(grid_idx.len());
    let mut frac_uncoupled = Vec::with_capacity(grid_idx.len());
    let mut mean_cost = Vec::with_capacity(grid_idx.len());
    let mut deltas = Vec::with_capacity(grid_idx.len());
    for &t in t_grid.iter() {
        let delta = (-c_hat * t / 2.0).exp();
        deltas.push(delta);
        if t < 1.0 {
            // No room for the unit coupling interval: the trivial bound.
            bound.push(1.0);
            bound_se.push(0.0);
            frac_uncoupled.push(1.0);
            mean_cost.push(0.0);
        } else {
            // Per-pair TV contribution: uncoupled pairs count 1, coupled
            // pairs their clamped coupling cost. The bound is the plain mean,
            // so its SE is the iid standard error of the contributions.
            let js = pos_of(t - 1.0);
            let contributions: Vec<f64> = (0..n_paths)
                .into_par_iter()
                .map(|i| -> Result<f64> {
                    let a = &rows_a[i][js * dim..(js + 1) * dim];
                    let bb = &rows_b[i][js * dim..(js + 1) * dim];
                    let gap: f64 = a
                        .iter()
                        .zip(bb)
                        .map(|(u, v)| (u - v) * (u - v))
                        .sum::<f64>()
                        .sqrt();
                    if gap > delta {
                        return Ok(1.0);
                    }
                    let rec =
                        girsanov_coupling_run(b, x, sigma, lambda, a, bb, opts.girsanov_dt, None)?;
                    let cost = 0.5
                        * (rec.sup_phi * rec.sup_phi + rec.sup_phi_dot * rec.sup_phi_dot).sqrt();
                    Ok(cost.min(1.0))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = n_paths as f64;
            let mean = contributions.iter().sum::<f64>() / n;
            let var =
                contributions.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            bound.push(mean);
            bound_se.push((var / n).sqrt());
            let unc = contributions.iter().filter(|v| **v >= 1.0).count();
            frac_uncoupled.push(unc as f64 / n);
            mean_cost.push(
                contributions.iter().filter(|v| **v < 1.0).sum::<f64>()
                    / (n_paths - unc).max(1) as f64,
            );
        }

        let jt = pos_of(t);
        let ca = cloud_at(&rows_a, jt, dim, "tv-decay-a")?;
        let cb = cloud_at(&rows_b, jt, dim, "tv-decay-b")?;
        hist.push(tv_histogram(&ca, &cb, BinRule::FreedmanDiaconis)?);
    }
    let bound_curve = DecayCurve::new(t_grid.to_vec(), bound, bound_se, n_paths)?;
    let hist_curve = DecayCurve::new(t_grid.to_vec(), hist, vec![0.0; t_grid.len()], n_paths)?;
    // A bound clamped at one is vacuous, so the rate is fitted on the
    // non-saturated part of the curve only; the full curve is still reported.
    let kept: Vec<usize> = (0..bound_curve.n_points())
        .filter(|&j| bound_curve.distances[j] < 0.98)
        .collect();
    let fit = if kept.len() >= 3 {
        let sub = DecayCurve::new(
            kept.iter().map(|&j| bound_curve.times[j]).collect(),
            kept.iter().map(|&j| bound_curve.distances[j]).collect(),
            kept.iter().map(|&j| bound_curve.se[j]).collect(),
            n_paths,
        )?;
        match sub.fit(FitModel::Exponential) {
            Ok(mut f) => {
                f.window = f.window.iter().map(|&i| kept[i]).collect();
                f
            }
            Err(Error::Empty(_)) => RateFit::degenerate(FitModel::Exponential),
            Err(e) => return Err(e),
        }
    } else {
        RateFit::degenerate(FitModel::Exponential)
    };
    Ok(TvDecayReport {
        bound: bound_curve,
        histogram: hist_curve,
        fit,
        frac_uncoupled,
        mean_cost,
        deltas,
        wasserstein_rate: c_hat,
    })
}

/// Start of one quenched-decay ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuenchedInitial {
    Point { y0: Vec<f64> },
    /// Each path starts from its own row of the stationary reference cloud.
    InvariantDraw,
}

/// Quenched decay: an ensemble driven by Riemann-Liouville noise plus one
/// fixed adversary, measured against the stationary cloud of the genuine
/// fractional dynamics at every grid time, fitted to `amplitude * t^{-rate}`.
/// The adversary must declare its weighted-derivative seminorm (the zero
/// adversary trivially has none to declare).
#[allow(clippy::too_many_arguments)]
pub fn quenched_decay_experiment(
    b: &DriftSpec,
    x: &[f64],
    sigma: &[Vec<f64>],
    hurst: f64,
    adversary: &AdversaryPath,
    y0: &QuenchedInitial,
    t_grid: &[f64],
    n_paths: usize,
    certificate: Option<&ContractivityCertificate>,
    opts: &ExperimentOptions,
) -> Result<(DecayCurve, RateFit)> {
    require_certificate(certificate, opts.lambda_cap, opts.force)?;
    let dim = b.dim_y();
    let adv_zero = adversary.path.values().iter().all(|v| *v == 0.0);
    if !adv_zero && adversary.derivative.is_none() && !opts.force {
        return Err(Error::parameter(
            "quenched adversary must declare a finite weighted-derivative seminorm; set force to run anyway",
        ));
    }
    if n_paths < 2 * opts.n_blocks || n_paths % opts.n_blocks != 0 {
        return Err(Error::parameter(format!(
            "n_paths = {n_paths} must be a multiple of n_blocks = {}",
            opts.n_blocks
        )));
    }
    let dt = adversary.path.dt;
    let grid_idx = grid_indices(t_grid, dt)?;
    let n_steps = *grid_idx.last().expect("non-empty grid");
    if n_steps + 1 > adversary.path.n_points() {
        return Err(Error::GridMismatch(format!(
            "adversary covers {} grid points, the experiment needs {}",
            adversary.path.n_points(),
            n_steps + 1
        )));
    }
    let span = n_steps as f64 * dt;

    let stationary = estimate_invariant_measure(
        b,
        x,
        sigma,
        hurst,
        opts.burn_in,
        n_paths,
        derive_stream("quenched-stationary", &[opts.seed]),
        certificate,
    )?;

    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let rough = generate_riemann_liouville(&FbmSpec {
                hurst,
                dim,
                n_steps,
                dt,
                method: FbmMethod::RiemannLiouvilleKernel,
                seed: opts.seed,
                stream: derive_stream("quenched-decay", &[i as u64]),
            })?;
            let start = match y0 {
                QuenchedInitial::Point { y0 } => y0.clone(),
                QuenchedInitial::InvariantDraw => stationary.row(i).to_vec(),
            };
            let flow = integrate_adversary_flow(b, x, sigma, adversary, &rough, &start, span)?;
            let mut rec = Vec::with_capacity(grid_idx.len() * dim);
            for &idx in &grid_idx {
                rec.extend_from_slice(flow.row(idx));
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let pi_rows: Vec<Vec<f64>> = (0..n_paths).map(|i| stationary.row(i).to_vec()).collect();

    let mut distances = Vec::with_capacity(grid_idx.len());
    let mut ses = Vec::with_capacity(grid_idx.len());
    for j in 0..grid_idx.len() {
        let cloud = cloud_at(&rows, j, dim, "quenched-decay")?;
        distances.push(cloud_distance(&cloud, &stationary, 1.0, opts.seed)?);
        ses.push(block_se(&rows, &pi_rows, j, 0, dim, 1.0, opts.seed, opts.n_blocks)?);
    }
    let curve = DecayCurve::new(t_grid.to_vec(), distances, ses, n_paths)?;
    let fit = match curve.fit(FitModel::Algebraic) {
        Ok(f) => f,
        Err(Error::Empty(_)) => RateFit::degenerate(FitModel::Algebraic),
        Err(e) => return Err(e),
    };
    Ok((curve, fit))
}

/// The universal two-piece control: `+m e` on `[0, delta]`, `-m e` on
/// `(delta, 2 delta]` with `delta = 1/(2N)` and
/// `m = (2 r_bar + 1) / ((1 - 2 eta) delta)`, so the displacement profile is
/// a triangle of height `(2 r_bar + 1) / (1 - 2 eta)` and the net integral
/// vanishes.
pub fn build_universal_control(
    r_bar: f64,
    eta: f64,
    n: usize,
    unit_vector: &[f64],
) -> Result<ControlSchedule> {
    if !(r_bar > 0.0) || !r_bar.is_finite() {
        return Err(Error::parameter(format!("r_bar must be finite and > 0, got {r_bar}")));
    }
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::parameter(format!("eta must lie in (0, 1/2), got {eta}")));
    }
    if n == 0 {
        return Err(Error::parameter("subdivision count must be >= 1"));
    }
    if unit_vector.is_empty() {
        return Err(Error::Empty("unit vector".into()));
    }
    if (l2(unit_vector) - 1.0).abs() > 1e-9 {
        return Err(Error::parameter(format!(
            "direction must be a unit vector, |e| = {}",
            l2(unit_vector)
        )));
    }
    let delta = 1.0 / (2.0 * n as f64);
    let magnitude = (2.0 * r_bar + 1.0) / ((1.0 - 2.0 * eta) * delta);
    let up: Vec<f64> = unit_vector.iter().map(|e| magnitude * e).collect();
    let down: Vec<f64> = unit_vector.iter().map(|e| -magnitude * e).collect();
    ControlSchedule::new(vec![0.0, delta, 2.0 * delta], vec![up, down])
}

/// Subdivision count for the control experiment: the smallest power of two at
/// least the sum of the state scale and the control's triangle height, so the
/// drift travel over one subinterval stays O(1) against the push.
pub fn control_subdivision(r_bar: f64, eta: f64, state_bound: f64) -> usize {
    let height = (2.0 * r_bar + 1.0) / (1.0 - 2.0 * eta);
    let scale = (state_bound.abs() + height).ceil().max(4.0) as usize;
    scale.next_power_of_two()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRun {
    /// Time fraction of [0, 1] spent outside the ball of radius r_bar.
    pub occupation: f64,
    /// Exterior time of each kept subinterval trajectory.
    pub sub_occupation: Vec<f64>,
    pub triggered: Vec<bool>,
    pub first_trigger: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub runs: Vec<ControlRun>,
    pub eta: f64,
    pub r_bar: f64,
    pub n_subintervals: usize,
    pub min_occupation: f64,
}

fn occupation_time(path: &SamplePath, r_bar: f64) -> f64 {
    let steps = path.n_points() - 1;
    let mut occ = 0.0;
    for k in 0..steps {
        if l2(path.row(k)) > r_bar {
            occ += path.dt;
        }
    }
    occ
}

fn outward_unit(state: &[f64]) -> Vec<f64> {
    let norm = l2(state);
    if norm < 1e-12 {
        let mut e = vec![0.0; state.len()];
        e[0] = 1.0;
        return e;
    }
    state.iter().map(|v| v / norm).collect()
}

fn shift_and_scale_schedule(base: &ControlSchedule, t0: f64, scale: f64) -> Result<ControlSchedule> {
    let breakpoints: Vec<f64> = base.breakpoints().iter().map(|b| b + t0).collect();
    let values: Vec<Vec<f64>> = base
        .pieces()
        .iter()
        .map(|p| p.iter().map(|v| scale * v).collect())
        .collect();
    ControlSchedule::new(breakpoints, values)
}

/// For each (adversary, start) pair: run the uncontrolled flow subinterval by
/// subinterval; whenever a subinterval's exterior occupation falls below
/// eta / N, replay it with the universal control pushed outward from the
/// subinterval's start state. Failures to reach total occupation eta are
/// reported, not raised: they falsify the construction.
#[allow(clippy::too_many_arguments)]
pub fn control_experiment(
    b: &DriftSpec,
    x: &[f64],
    r_bar: f64,
    eta: f64,
    n: usize,
    adversaries: &[AdversaryPath],
    x0_list: &[Vec<f64>],
    magnitude_scale: f64,
) -> Result<ControlReport> {
    if adversaries.is_empty() || adversaries.len() != x0_list.len() {
        return Err(Error::parameter(format!(
            "need matching non-empty adversary and start lists, got {} and {}",
            adversaries.len(),
            x0_list.len()
        )));
    }
    if !(magnitude_scale >= 1.0) || !magnitude_scale.is_finite() {
        return Err(Error::parameter(format!(
            "magnitude scale must be >= 1 (1 is the proof's control), got {magnitude_scale}"
        )));
    }
    let dim = b.dim_y();
    let delta = 1.0 / (2.0 * n as f64);
    let runs: Vec<ControlRun> = adversaries
        .par_iter()
        .zip(x0_list.par_iter())
        .map(|(adversary, x0)| -> Result<ControlRun> {
            if x0.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: x0.len() });
            }
            let adv = &adversary.path;
            if adv.t0 != 0.0 {
                return Err(Error::parameter("control adversaries must start at time 0"));
            }
            let dt = adv.dt;
            let per = ((1.0 / n as f64) / dt).round();
            if (per * dt - 1.0 / n as f64).abs() > 1e-9 * dt {
                return Err(Error::GridMismatch(format!(
                    "adversary step {dt} does not divide the subinterval length 1/{n}"
                )));
            }
            let per = per as usize;
            if n * per + 1 > adv.n_points() {
                return Err(Error::GridMismatch(format!(
                    "adversary covers {} points, the unit interval needs {}",
                    adv.n_points(),
                    n * per + 1
                )));
            }
            let zero_ctl = ControlSchedule::zero(dim, 1.0)?;
            let mut state = x0.clone();
            let mut sub_occupation = Vec::with_capacity(n);
            let mut triggered = Vec::with_capacity(n);
            let mut first_trigger = None;
            for k in 0..n {
                let window = adversary.window(k * per, (k + 1) * per)?;
                let free = integrate_controlled_ode(b, x, &window, &zero_ctl, &state)?;
                let occ_free = occupation_time(&free, r_bar);
                if occ_free + 1e-12 >= eta / n as f64 {
                    sub_occupation.push(occ_free);
                    triggered.push(false);
                    state = free.row(free.n_points() - 1).to_vec();
                } else {
                    let e = outward_unit(&state);
                    let base = build_universal_control(r_bar, eta, n, &e)?;
                    let start = window.path.t0;
                    let ctl = shift_and_scale_schedule(&base, start, magnitude_scale)?;
                    debug_assert!((start - k as f64 * per as f64 * dt).abs() <= 1e-12 * (1.0 + start.abs()));
                    let pushed = integrate_controlled_ode(b, x, &window, &ctl, &state)?;
                    sub_occupation.push(occupation_time(&pushed, r_bar));
                    triggered.push(true);
                    if first_trigger.is_none() {
                        first_trigger = Some(k);
                    }
                    state = pushed.row(pushed.n_points() - 1).to_vec();
                }
            }
            let occupation = sub_occupation.iter().sum();
            Ok(ControlRun { occupation, sub_occupation, triggered, first_trigger })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_occupation = runs.iter().map(|r| r.occupation).fold(f64::INFINITY, f64::min);
    let _ = delta;
    Ok(ControlReport { runs, eta, r_bar, n_subintervals: n, min_occupation })
}

/// Standard adversary battery: four of five entries are scaled smooth parts
/// of the increment decomposition (finite weighted-derivative seminorm by
/// construction), every fifth is an analytic power law. Smooth parts are
/// built on a coarse grid over a short past and linearly upsampled; a
/// truncated past only shrinks the adversary, so every entry is itself a
/// legitimate adversary.
pub fn standard_adversary_battery(
    count: usize,
    hurst: f64,
    dt: f64,
    n_steps: usize,
    scale: f64,
    seed: u64,
) -> Result<Vec<AdversaryPath>> {
    if count == 0 {
        return Err(Error::Empty("battery".into()));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::parameter(format!("scale must be finite and > 0, got {scale}")));
    }
    let horizon = n_steps as f64 * dt;
    // Coarse generation grid: ~1/128 steps, an exact power-of-two multiple of dt.
    let mut factor = 1usize;
    while factor * 2 * ((horizon / dt) as usize) >= 128 * ((horizon / dt) as usize) / ((1.0 / dt) as usize).max(1) && dt * (factor * 2) as f64 <= 1.0 / 128.0 + 1e-12 {
        factor *= 2;
    }
    let dt_c = dt * factor as f64;
    let coarse_steps = n_steps / factor;
    if coarse_steps * factor != n_steps {
        return Err(Error::GridMismatch(format!(
            "n_steps = {n_steps} is not divisible by the coarse factor {factor}"
        )));
    }
    let depth = (8.0 * horizon.max(1.0)).min(default_past_depth(horizon));
    let past_steps = (depth / dt_c).round() as usize;
    let beta = (1.0 - hurst + 0.05).clamp(0.0, 0.95);

    (0..count)
        .map(|i| {
            if i % 5 == 4 {
                let pl_beta = if (i / 5) % 2 == 0 { 0.3 } else { 0.45 };
                let sign = if (i / 10) % 2 == 0 { 1.0 } else { -1.0 };
                AdversaryPath::power_law(sign * scale, pl_beta, dt, n_steps)
            } else {
                let w = generate_wiener(
                    -depth,
                    dt_c,
                    past_steps + coarse_steps,
                    seed,
                    derive_stream("adversary-battery", &[i as u64]),
                )?;
                let d = mvn_increment_decomposition(&w, 0.0, horizon, hurst, f64::INFINITY)?;
                let coarse = d.smooth.values();
                let mut vals = Vec::with_capacity(n_steps + 1);
                for k in 0..coarse_steps {
                    let a = coarse[k];
                    let b = coarse[k + 1];
                    for r in 0..factor {
                        vals.push(scale * (a + (b - a) * r as f64 / factor as f64));
                    }
                }
                vals.push(scale * coarse[coarse_steps]);
                let path = SamplePath::new(0.0, dt, 1, vals)?;
                let mut weighted_sup = 0.0f64;
                for k in 0..coarse_steps {
                    let t = ((k + 1) as f64 * dt_c).max(dt_c);
                    let slope = scale * (coarse[k + 1] - coarse[k]).abs() / dt_c;
                    weighted_sup = weighted_sup.max(t.powf(beta) * slope);
                }
                AdversaryPath::new(path, Some(DerivativeSpec { beta, weighted_sup }))
            }
        })
        .collect()
}
