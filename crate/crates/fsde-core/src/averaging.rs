//! The headline averaging experiment: tabulate or supply the averaged
//! coefficients, integrate the slow-fast pair and the averaged equation
//! against one shared slow-noise realization, and measure the gap in sup and
//! Hölder norms along an epsilon ladder.
//!
//! The slow noise stream depends only on the path index, so ladder entries
//! are compared with common random numbers; the fast stream is fresh per
//! (epsilon, path). The (epsilon, path) job grid parallelizes freely and the
//! reduction is order-independent.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{check_semi_contractive, ContractivityCertificate, DriftSpec};
use crate::error::{Error, Result};
use crate::ergodicity::{ExperimentOptions, FitModel, RateFit};
use crate::integrate::{integrate_slow_fast_with_noise, integrate_young, CoeffField, SlowFastConfig};
use crate::measures::{average_coefficient, estimate_invariant_measure, AveragedCoefficientTable};
use crate::noise::{generate_fbm, FbmMethod, FbmSpec};
use crate::path::SamplePath;
use crate::rng::{derive_stream, float_checksum, fnv1a_continue, stream_rng};

/// Fast steps per unit of epsilon: each ladder entry subdivides dt_slow into
/// the smallest power-of-two substep count giving dt_fast <= epsilon / this,
/// so effective fast resolution is at least 1/32 everywhere (within 2x of
/// uniform) and every entry's fast grid is a restriding of the finest one.
/// One fast realization per path then drives the whole ladder: entries are
/// compared with fully common random numbers and the marginal law of each is
/// untouched.
const FAST_STEPS_PER_EPSILON: f64 = 32.0;

/// Power-of-two substeps per slow step for one ladder entry. Public so that
/// callers building a ladder template can pick a dt_fast the stiffness check
/// accepts without restating the resolution rule.
pub fn ladder_substeps(dt_slow: f64, epsilon: f64) -> usize {
    let need = (FAST_STEPS_PER_EPSILON * dt_slow / epsilon).ceil().max(1.0) as usize;
    need.next_power_of_two()
}

/// Resamples behind each bootstrap standard error of a median.
const BOOTSTRAP_RESAMPLES: usize = 200;

/// Pair samples per re-verified grid node when spot-checking a certificate.
const SPOT_CHECK_SAMPLES: usize = 200;

const HOLDER_STRIDE_CAP: usize = 256;

/// Coefficients of the averaged slow equation dX = f_bar(X) dt + g_bar(X) dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AveragedField {
    /// Closed-form averaged coefficients for systems whose frozen-x invariant
    /// law is known; the fields must not read the fast variable.
    Analytic { f_bar: CoeffField, g_bar: CoeffField },
    /// Monte-Carlo table with linear interpolation; scalar slow variable only.
    Tabulated(AveragedCoefficientTable),
}

impl AveragedField {
    pub fn validate(&self, dim_x: usize) -> Result<()> {
        match self {
            AveragedField::Analytic { f_bar, g_bar } => {
                f_bar.validate()?;
                g_bar.validate()?;
                for (name, field) in [("f_bar", f_bar), ("g_bar", g_bar)] {
                    if field.reads_fast() {
                        return Err(Error::parameter(format!(
                            "{name} reads the fast variable; averaged coefficients depend on x alone"
                        )));
                    }
                }
                Ok(())
            }
            AveragedField::Tabulated(_) if dim_x != 1 => Err(Error::DimensionMismatch { expected: 1, got: dim_x }),
            AveragedField::Tabulated(_) => Ok(()),
        }
    }

    fn eval_f(&self, x: &[f64], out: &mut [f64]) {
        match self {
            // Validated not to read y, so an empty fast slice is never touched.
            AveragedField::Analytic { f_bar, .. } => f_bar.eval(x, &[], out),
            AveragedField::Tabulated(table) => out[0] = table.eval_f(x[0]),
        }
    }

    fn eval_g(&self, x: &[f64], out: &mut [f64]) {
        match self {
            AveragedField::Analytic { g_bar, .. } => g_bar.eval(x, &[], out),
            AveragedField::Tabulated(table) => out[0] = table.eval_g(x[0]),
        }
    }
}

/// One path excluded from the aggregates because its integration blew up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowUpRecord {
    pub epsilon: f64,
    pub path: u64,
    pub time: f64,
}

/// Per-ladder-entry aggregates over the surviving ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStats {
    pub epsilon: f64,
    pub median_sup: f64,
    pub q25_sup: f64,
    pub q75_sup: f64,
    pub median_holder: f64,
    pub q25_holder: f64,
    pub q75_holder: f64,
    /// Bootstrap standard errors of the two medians.
    pub se_sup: f64,
    pub se_holder: f64,
    pub n_effective: usize,
    pub n_excluded: usize,
    /// Digest of the slow-noise checksums consumed by this entry's paths.
    /// The slow stream depends only on the path index, so every ladder entry
    /// of one report must carry the same digest.
    pub noise_digest: u64,
}

/// Outcome of one ladder run: per-epsilon error statistics for
/// sup_t |X^eps_t - X_bar_t| and the Hölder-alpha seminorm of the difference,
/// plus a diagnostic power-law fit of the median against epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingReport {
    /// Strictly decreasing ladder.
    pub epsilons: Vec<f64>,
    pub stats: Vec<EpsilonStats>,
    pub n_paths: usize,
    pub alpha: f64,
    /// Power-law diagnostic: median_sup ~ amplitude * epsilon^rate, so a
    /// positive rate means the error decays along the ladder. No claim about
    /// the true convergence exponent is attached.
    pub fit: RateFit,
    pub warnings: Vec<String>,
    pub excluded: Vec<BlowUpRecord>,
}

impl AveragingReport {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Empty("epsilons".into()));
        }
        if self.epsilons.len() != self.stats.len() {
            return Err(Error::DimensionMismatch {
                expected: self.epsilons.len(),
                got: self.stats.len(),
            });
        }
        for w in self.epsilons.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::parameter(format!(
                    "epsilon ladder must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::parameter(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        for (eps, s) in self.epsilons.iter().zip(&self.stats) {
            if !(*eps > 0.0) || !eps.is_finite() {
                return Err(Error::parameter(format!("epsilon must be finite and > 0, got {eps}")));
            }
            if s.epsilon != *eps {
                return Err(Error::parameter(format!(
                    "stats entry for epsilon {} does not match ladder value {eps}",
                    s.epsilon
                )));
            }
            let quartiles = [
                s.median_sup,
                s.q25_sup,
                s.q75_sup,
                s.median_holder,
                s.q25_holder,
                s.q75_holder,
                s.se_sup,
                s.se_holder,
            ];
            if quartiles.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::parameter(format!("error statistics at epsilon {eps} must be finite and >= 0")));
            }
            if s.q25_sup > s.median_sup || s.median_sup > s.q75_sup {
                return Err(Error::parameter(format!("sup quartiles out of order at epsilon {eps}")));
            }
            if s.q25_holder > s.median_holder || s.median_holder > s.q75_holder {
                return Err(Error::parameter(format!("Hölder quartiles out of order at epsilon {eps}")));
            }
            if s.n_effective == 0 || s.n_effective + s.n_excluded != self.n_paths {
                return Err(Error::parameter(format!(
                    "path accounting at epsilon {eps}: {} effective + {} excluded vs {} requested",
                    s.n_effective, s.n_excluded, self.n_paths
                )));
            }
        }
        Ok(())
    }

    /// Plot-ready rows, one ladder entry each.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# n_paths: {}, alpha: {}", self.n_paths, self.alpha)?;
        writeln!(w, "epsilon,median_sup,q25,q75,median_holder,n_effective")?;
        for s in &self.stats {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                s.epsilon, s.median_sup, s.q25_sup, s.q75_sup, s.median_holder, s.n_effective
            )?;
        }
        Ok(())
    }
}

/// Default Hölder exponent (1 - hurst_fast + hurst_slow) / 2, clipped just
/// below the slow index: safely inside the admissible range for every valid
/// pair of Hurst indices.
pub fn default_holder_alpha(hurst_slow: f64, hurst_fast: f64) -> f64 {
    ((1.0 - hurst_fast + hurst_slow) / 2.0).min(hurst_slow - 1.0 / 64.0)
}

/// Tabulates f_bar(x) = int f(x,y) pi^x(dy) and likewise g_bar over `x_grid`
/// by per-node Monte Carlo against the estimated frozen-x invariant measure.
///
/// The fast drift must arrive certified; the certificate's constants are
/// re-verified at up to three grid nodes before any sampling, since the
/// certificate was issued at one frozen x. `opts.force` skips the gate.
/// Returns the table plus the indices of nodes whose standard error exceeds
/// `se_tolerance` on either coefficient; flagged nodes stay in the table and
/// simply carry wider error bars.
#[allow(clippy::too_many_arguments)]
pub fn build_averaged_coefficients(
    f: &CoeffField,
    g: &CoeffField,
    b: &DriftSpec,
    sigma: &[Vec<f64>],
    hurst_fast: f64,
    x_grid: &[f64],
    samples_per_node: usize,
    se_tolerance: f64,
    certificate: Option<&ContractivityCertificate>,
    opts: &ExperimentOptions,
) -> Result<(AveragedCoefficientTable, Vec<usize>)> {
    f.validate()?;
    g.validate()?;
    b.validate()?;
    let dim_y = b.dim_y();
    f.check_dims(1, dim_y)?;
    g.check_dims(1, dim_y)?;
    if samples_per_node < 2 {
        return Err(Error::parameter(format!(
            "samples_per_node must be >= 2 for a standard error, got {samples_per_node}"
        )));
    }
    if !(se_tolerance > 0.0) {
        return Err(Error::parameter(format!("se_tolerance must be > 0, got {se_tolerance}")));
    }
    if x_grid.len() < 2 {
        return Err(Error::parameter(format!(
            "x_grid needs at least 2 nodes for an interpolant, got {}",
            x_grid.len()
        )));
    }

    match certificate {
        Some(c) if c.passes() || opts.force => {}
        Some(_) => {
            return Err(Error::parameter(
                "contractivity certificate records violations; set force to run anyway",
            ))
        }
        None if opts.force => {}
        None => {
            return Err(Error::parameter(
                "no contractivity certificate for the fast drift; set force to run anyway",
            ))
        }
    }
    if let Some(c) = certificate.filter(|c| c.passes() && !opts.force) {
        // The certificate froze one x; its constants must hold at the nodes
        // actually averaged over. Re-verify ends and middle.
        let picks = [0, x_grid.len() / 2, x_grid.len() - 1];
        for (k, &i) in picks.iter().enumerate() {
            let spot = check_semi_contractive(
                b,
                &[x_grid[i]],
                c.kappa,
                c.r,
                c.lambda,
                c.regime,
                SPOT_CHECK_SAMPLES,
                c.box_radius,
                derive_stream("averaging-spot-check", &[k as u64]),
            )?;
            if !spot.passes() {
                return Err(Error::parameter(format!(
                    "fast drift violates the certified contraction constants at grid node x = {}; \
                     set force to run anyway",
                    x_grid[i]
                )));
            }
        }
    }

    // All nodes share one noise seed: common random numbers keep the tabulated
    // curve smooth in x, while per-node standard errors are unaffected.
    let rows: Vec<(f64, f64, f64, f64)> = x_grid
        .par_iter()
        .map(|&xn| -> Result<(f64, f64, f64, f64)> {
            let node = [xn];
            let pi = estimate_invariant_measure(
                b,
                &node,
                sigma,
                hurst_fast,
                opts.burn_in,
                samples_per_node,
                opts.seed,
                certificate,
            )?;
            let eval = |field: &CoeffField| {
                average_coefficient(
                    |x: &[f64], y: &[f64]| {
                        let mut out = vec![0.0; 1];
                        field.eval(x, y, &mut out);
                        out
                    },
                    &node,
                    &pi,
                )
            };
            let (fm, fs) = eval(f)?;
            let (gm, gs) = eval(g)?;
            Ok((fm[0], fs[0], gm[0], gs[0]))
        })
        .collect::<Result<_>>()?;

    let flagged: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.1 > se_tolerance || r.3 > se_tolerance)
        .map(|(i, _)| i)
        .collect();
    let table = AveragedCoefficientTable::new(
        x_grid.to_vec(),
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2).collect(),
        rows.iter().map(|r| r.3).collect(),
    )?;
    Ok((table, flagged))
}

#[derive(Clone, Copy)]
enum PathOutcome {
    Done { sup: f64, holder: f64, checksum: u64 },
    BlownUp { time: f64 },
}

/// Runs the ladder: for every epsilon and path, integrates (X^eps, Y^eps) and
/// the averaged X_bar against the identical slow-noise realization, records
/// sup and Hölder-alpha errors of the difference, and aggregates medians with
/// bootstrap standard errors. `config` supplies the system, horizon, slow
/// grid, and master seed; its `epsilon` and `dt_fast` are superseded per
/// ladder entry (dt_fast near epsilon / 32, commensurate with dt_slow).
/// `alpha = None` takes the default exponent; an explicit alpha must stay
/// below the slow Hurst index.
///
/// The left-point scheme reads the fast variable once per slow step, so the
/// measured error carries a sampling floor of order sqrt(dt_slow) next to the
/// averaging error; resolve dt_slow below the smallest epsilon of interest.
pub fn averaging_experiment(
    config: &SlowFastConfig,
    epsilons: &[f64],
    n_paths: usize,
    alpha: Option<f64>,
    averaged: &AveragedField,
) -> Result<AveragingReport> {
    config.validate()?;
    let dim_x = config.x0.len();
    averaged.validate(dim_x)?;
    if epsilons.is_empty() {
        return Err(Error::Empty("epsilons".into()));
    }
    for w in epsilons.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::parameter(format!(
                "epsilon ladder must be strictly decreasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::parameter("epsilons must be finite and > 0"));
    }
    if n_paths < 2 {
        return Err(Error::parameter(format!("n_paths must be >= 2, got {n_paths}")));
    }
    let alpha = alpha.unwrap_or_else(|| default_holder_alpha(config.hurst_slow, config.hurst_fast));
    if !(alpha > 0.0 && alpha < config.hurst_slow) {
        return Err(Error::parameter(format!(
            "alpha = {alpha} must lie in (0, H) = (0, {}) for the Hölder error",
            config.hurst_slow
        )));
    }

    let cfgs: Vec<SlowFastConfig> = epsilons
        .iter()
        .map(|&eps| {
            let m = ladder_substeps(config.dt_slow, eps);
            let cfg =
                SlowFastConfig { epsilon: eps, dt_fast: config.dt_slow / m as f64, ..config.clone() };
            cfg.validate().map_err(|e| {
                Error::parameter(format!("ladder entry epsilon = {eps} yields an invalid system: {e}"))
            })?;
            Ok(cfg)
        })
        .collect::<Result<_>>()?;
    let m_max = cfgs.iter().map(|c| c.sub_steps()).max().expect("nonempty ladder");

    let rows: Vec<Vec<PathOutcome>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| run_ladder_path(config, &cfgs, m_max, path, alpha, averaged))
        .collect::<Result<_>>()?;

    let mut stats = Vec::with_capacity(epsilons.len());
    let mut excluded = Vec::new();
    for (eps_idx, &eps) in epsilons.iter().enumerate() {
        let mut sups = Vec::with_capacity(n_paths);
        let mut holders = Vec::with_capacity(n_paths);
        let mut digest = 0xcbf29ce484222325;
        for (path, row) in rows.iter().enumerate() {
            match row[eps_idx] {
                PathOutcome::Done { sup, holder, checksum } => {
                    sups.push(sup);
                    holders.push(holder);
                    digest = fnv1a_continue(digest, &checksum.to_le_bytes());
                }
                PathOutcome::BlownUp { time } => {
                    excluded.push(BlowUpRecord { epsilon: eps, path: path as u64, time });
                }
            }
        }
        if sups.is_empty() {
            return Err(Error::Diagnostic(format!(
                "every path blew up at epsilon = {eps}; the system is unstable or under-resolved"
            )));
        }
        let n_eff = sups.len();
        sups.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
        holders.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
        let mut rng = stream_rng(config.seed, derive_stream("averaging-bootstrap", &[eps_idx as u64]));
        let se_sup = bootstrap_median_se(&sups, &mut rng);
        let se_holder = bootstrap_median_se(&holders, &mut rng);
        stats.push(EpsilonStats {
            epsilon: eps,
            median_sup: quantile(&sups, 0.5),
            q25_sup: quantile(&sups, 0.25),
            q75_sup: quantile(&sups, 0.75),
            median_holder: quantile(&holders, 0.5),
            q25_holder: quantile(&holders, 0.25),
            q75_holder: quantile(&holders, 0.75),
            se_sup,
            se_holder,
            n_effective: n_eff,
            n_excluded: n_paths - n_eff,
            noise_digest: digest,
        });
    }

    let mut report = AveragingReport {
        epsilons: epsilons.to_vec(),
        stats,
        n_paths,
        alpha,
        fit: RateFit::degenerate(FitModel::Algebraic),
        warnings: Vec::new(),
        excluded,
    };
    report.validate()?;
    if epsilons.len() >= 3 {
        let (fit, warnings) = rate_fit_error_vs_epsilon(&report)?;
        report.fit = fit;
        report.warnings = warnings;
    } else {
        report.warnings.push(format!(
            "ladder has {} entries; at least 3 are needed for a rate fit",
            epsilons.len()
        ));
    }
    Ok(report)
}

/// One path across the whole ladder. Both noise streams depend on the path
/// index alone: every entry consumes the identical slow realization and a
/// restriding of the identical fine fast realization, so entries differ only
/// through epsilon. The averaged leg and each entry's slow-fast leg must
/// agree on the slow checksum they consumed.
fn run_ladder_path(
    template: &SlowFastConfig,
    cfgs: &[SlowFastConfig],
    m_max: usize,
    path: u64,
    alpha: f64,
    averaged: &AveragedField,
) -> Result<Vec<PathOutcome>> {
    let dim_x = template.x0.len();
    let n_slow = cfgs[0].n_slow_steps();
    let slow = generate_fbm(&FbmSpec {
        hurst: template.hurst_slow,
        dim: dim_x,
        n_steps: n_slow,
        dt: template.dt_slow,
        method: FbmMethod::CirculantEmbedding,
        seed: template.seed,
        stream: derive_stream("averaging-slow", &[path]),
    })?;
    let fast_fine = generate_fbm(&FbmSpec {
        hurst: template.hurst_fast,
        dim: template.b.dim_y(),
        n_steps: n_slow * m_max,
        dt: template.dt_slow / m_max as f64,
        method: FbmMethod::CirculantEmbedding,
        seed: template.seed,
        stream: derive_stream("averaging-fast", &[path]),
    })?;

    let checksum_bar = float_checksum(slow.values());
    let x_bar = match integrate_young(
        |x: &[f64], out: &mut [f64]| averaged.eval_f(x, out),
        |x: &[f64], out: &mut [f64]| averaged.eval_g(x, out),
        &slow,
        &template.x0,
        template.t_horizon,
        template.dt_slow,
    ) {
        Ok(x) => x,
        // A diverging averaged leg takes the whole path out at every entry.
        Err(Error::BlowUp { time, .. }) => return Ok(vec![PathOutcome::BlownUp { time }; cfgs.len()]),
        Err(e) => return Err(e),
    };

    let mut outcomes = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        let fast = fast_fine.restride(m_max / cfg.sub_steps())?;
        let checksum_eps = float_checksum(slow.values());
        if checksum_eps != checksum_bar {
            return Err(Error::Diagnostic(
                "slow-noise checksums of the two integration legs disagree; the pathwise \
                 comparison requires one shared realization"
                    .into(),
            ));
        }
        let x_eps = match integrate_slow_fast_with_noise(cfg, &slow, &fast) {
            Ok((x, _)) => x,
            Err(Error::BlowUp { time, .. }) => {
                outcomes.push(PathOutcome::BlownUp { time });
                continue;
            }
            Err(e) => return Err(e),
        };

        let n_points = x_eps.n_points();
        debug_assert_eq!(n_points, x_bar.n_points());
        let mut diff = Vec::with_capacity(n_points * dim_x);
        let mut sup = 0.0;
        for k in 0..n_points {
            let (a, b) = (x_eps.row(k), x_bar.row(k));
            let mut sq = 0.0;
            for i in 0..dim_x {
                let d = a[i] - b[i];
                diff.push(d);
                sq += d * d;
            }
            sup = f64::max(sup, sq.sqrt());
        }
        let diff_path = SamplePath::new(x_eps.t0, cfg.dt_slow, dim_x, diff)?;
        let holder = crate::noise::holder_seminorm(&diff_path, alpha, HOLDER_STRIDE_CAP)?.value;
        outcomes.push(PathOutcome::Done { sup, holder, checksum: checksum_eps });
    }
    Ok(outcomes)
}

/// Diagnostic least-squares slope of log(median sup error) against log
/// epsilon. A positive `rate` means the error decays along the ladder; no
/// theoretical exponent is claimed. Warnings flag a ladder whose medians rise
/// beyond bootstrap-error overlap and a fit with no detectable decay.
pub fn rate_fit_error_vs_epsilon(report: &AveragingReport) -> Result<(RateFit, Vec<String>)> {
    report.validate()?;
    let n = report.epsilons.len();
    if n < 3 {
        return Err(Error::parameter(format!("rate fit needs a ladder of >= 3 entries, got {n}")));
    }
    let mut warnings = Vec::new();
    for w in report.stats.windows(2) {
        // The ladder descends, so the error should too, up to noise.
        let rise = w[1].median_sup - w[0].median_sup;
        if rise > 2.0 * (w[0].se_sup + w[1].se_sup) {
            warnings.push(format!(
                "median sup error rises from {:.3e} to {:.3e} between epsilon {} and {}, beyond \
                 bootstrap-error overlap",
                w[0].median_sup, w[1].median_sup, w[0].epsilon, w[1].epsilon
            ));
        }
    }
    if report.stats.iter().any(|s| s.median_sup <= 0.0) {
        warnings.push("median sup error vanishes at some ladder entry; no rate fit on a log scale".into());
        return Ok((RateFit::degenerate(FitModel::Algebraic), warnings));
    }

    let xs: Vec<f64> = report.epsilons.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = report.stats.iter().map(|s| s.median_sup.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n as f64;
    let ym = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ym) * (y - ym)).sum();
    let r_squared = if ss_tot <= 1e-30 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    if slope < 0.02 {
        warnings.push(format!(
            "fitted exponent {slope:.3} shows no decay of the error along the ladder"
        ));
    }
    let fit = RateFit {
        model: FitModel::Algebraic,
        amplitude: intercept.exp(),
        rate: slope,
        r_squared,
        window: (0..n).collect(),
    };
    Ok((fit, warnings))
}

/// Interpolated order statistic of an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn bootstrap_median_se(sorted: &[f64], rng: &mut impl rand::Rng) -> f64 {
    let n = sorted.len();
    if n < 2 {
        return 0.0;
    }
    let mut medians = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut draw = vec![0.0; n];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for d in draw.iter_mut() {
            *d = sorted[rng.gen_range(0..n)];
        }
        draw.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
        medians.push(quantile(&draw, 0.5));
    }
    let m = medians.iter().sum::<f64>() / BOOTSTRAP_RESAMPLES as f64;
    let var = medians.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (BOOTSTRAP_RESAMPLES - 1) as f64;
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{MeanFieldMap, PairRegime};
    use crate::measures::fou_oracle;
    use rand::Rng;

    fn unit_sigma() -> Vec<Vec<f64>> {
        vec![vec![1.0]]
    }

    fn passing_certificate(b: &DriftSpec, seed: u64) -> ContractivityCertificate {
        let cert = check_semi_contractive(b, &[0.0], 0.9, 0.0, 0.0, PairRegime::BothOutside, 400, 4.0, seed)
            .expect("certificate check runs");
        assert!(cert.passes(), "the reference drift is globally contractive");
        cert
    }

    /// The worked slow-fast system: f = -x + y, g = 1, b = -(y - sin x),
    /// whose averaged equation is dX = (-X + sin X) dt + dB.
    fn worked_config(seed: u64) -> SlowFastConfig {
        SlowFastConfig {
            epsilon: 0.1,
            hurst_slow: 0.7,
            hurst_fast: 0.6,
            f: CoeffField::LinearSin { a_x: -1.0, a_y: 1.0, sin_amp: 0.0 },
            g: CoeffField::Constant { value: 1.0 },
            b: DriftSpec::MeanField { rate: 1.0, map: MeanFieldMap::Sin, dim: 1 },
            sigma: unit_sigma(),
            x0: vec![0.5],
            y0: vec![2.0],
            t_horizon: 1.0,
            dt_slow: 1.0 / 256.0,
            dt_fast: 1.0 / 512.0,
            seed,
        }
    }

    fn worked_averaged() -> AveragedField {
        AveragedField::Analytic {
            f_bar: CoeffField::LinearSin { a_x: -1.0, a_y: 0.0, sin_amp: 1.0 },
            g_bar: CoeffField::Constant { value: 1.0 },
        }
    }

    #[test]
    fn averaged_table_reproduces_slow_only_coefficients_exactly() {
        // g reads x alone, so averaging against any pi^x returns g(x) with no
        // Monte-Carlo spread; f = y^2 integrates to the fOU second moment.
        let b = DriftSpec::Linear { rate: 1.0, dim_y: 1 };
        let cert = passing_certificate(&b, 1121);
        let g = CoeffField::CosSlow { offset: 0.5, amp: 0.3 };
        let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let opts = ExperimentOptions { seed: 1121, ..ExperimentOptions::default() };
        let (table, flagged) = build_averaged_coefficients(
            &CoeffField::FastSquare,
            &g,
            &b,
            &unit_sigma(),
            0.6,
            &grid,
            400,
            f64::INFINITY,
            Some(&cert),
            &opts,
        )
        .unwrap();
        assert!(flagged.is_empty(), "infinite tolerance flags nothing");
        let target = fou_oracle(0.6).unwrap();
        for (i, &x) in grid.iter().enumerate() {
            let want = 0.5 + 0.3 * x.cos();
            assert!(
                (table.g_values()[i] - want).abs() <= 1e-12,
                "slow-only coefficient at x = {x}: {} vs {want}",
                table.g_values()[i]
            );
            assert!(table.g_se()[i] <= 1e-7, "slow-only coefficient has no spread, se = {}", table.g_se()[i]);
            let fs = table.f_se()[i];
            assert!(
                (table.f_values()[i] - target).abs() <= 3.0 * fs + 0.01,
                "second moment at x = {x}: {} vs fOU oracle {target} beyond 3 SE ({fs:.4})",
                table.f_values()[i]
            );
        }
    }

    #[test]
    fn averaged_drift_recovers_the_stationary_mean() {
        // b = -(y - sin x) has stationary mean sin x at every frozen x, so
        // f = -x + y averages to -x + sin x.
        let b = DriftSpec::MeanField { rate: 1.0, map: MeanFieldMap::Sin, dim: 1 };
        let cert = passing_certificate(&b, 1122);
        let f = CoeffField::LinearSin { a_x: -1.0, a_y: 1.0, sin_amp: 0.0 };
        let grid: Vec<f64> = (0..7).map(|i| -3.0 + i as f64).collect();
        let opts = ExperimentOptions { seed: 1122, ..ExperimentOptions::default() };
        let (table, flagged) = build_averaged_coefficients(
            &f,
            &CoeffField::Constant { value: 1.0 },
            &b,
            &unit_sigma(),
            0.6,
            &grid,
            400,
            0.5,
            Some(&cert),
            &opts,
        )
        .unwrap();
        assert!(flagged.is_empty(), "400 samples keep every node under se 0.5");
        for (i, &x) in grid.iter().enumerate() {
            let want = -x + x.sin();
            let se = table.f_se()[i];
            assert!(
                (table.f_values()[i] - want).abs() <= 3.0 * se + 0.02,
                "averaged drift at x = {x}: {} vs {want} beyond 3 SE ({se:.4})",
                table.f_values()[i]
            );
        }

        // A tolerance below the attainable standard error flags every node but
        // still returns the table.
        let (_, all_flagged) = build_averaged_coefficients(
            &f,
            &CoeffField::Constant { value: 1.0 },
            &b,
            &unit_sigma(),
            0.6,
            &[-1.0, 1.0],
            50,
            1e-9,
            Some(&cert),
            &opts,
        )
        .unwrap();
        assert_eq!(all_flagged, vec![0, 1], "sub-SE tolerance flags every node");
    }

    #[test]
    fn tabulation_gates_on_the_certificate() {
        let b = DriftSpec::Linear { rate: 1.0, dim_y: 1 };
        let f = CoeffField::FastSquare;
        let g = CoeffField::Zero;
        let grid = [-1.0, 1.0];
        let opts = ExperimentOptions { seed: 1123, ..ExperimentOptions::default() };
        let run = |b: &DriftSpec, cert: Option<&ContractivityCertificate>, opts: &ExperimentOptions| {
            build_averaged_coefficients(&f, &g, b, &unit_sigma(), 0.6, &grid, 50, 1.0, cert, opts)
        };

        match run(&b, None, &opts) {
            Err(Error::Parameter(msg)) => assert!(msg.contains("force"), "missing-certificate error: {msg}"),
            other => panic!("uncertified tabulation must be refused, got {other:?}"),
        }

        let expansive = DriftSpec::Linear { rate: -1.0, dim_y: 1 };
        let failing =
            check_semi_contractive(&expansive, &[0.0], 0.9, 0.0, 0.0, PairRegime::BothOutside, 400, 4.0, 1123)
                .unwrap();
        assert!(!failing.passes());
        assert!(
            matches!(run(&expansive, Some(&failing), &opts), Err(Error::Parameter(_))),
            "a certificate with violations must be refused"
        );

        // Certificate constants issued for rate 1 do not hold for rate 1/2;
        // the per-node spot check catches the mismatch.
        let cert = passing_certificate(&b, 1123);
        let weaker = DriftSpec::Linear { rate: 0.5, dim_y: 1 };
        match run(&weaker, Some(&cert), &opts) {
            Err(Error::Parameter(msg)) => assert!(msg.contains("grid node"), "spot-check error: {msg}"),
            other => panic!("stale certificate constants must be refused, got {other:?}"),
        }

        let forced = ExperimentOptions { force: true, ..opts.clone() };
        run(&b, None, &forced).expect("force runs without a certificate");
    }

    #[test]
    fn averaging_experiment_errors_shrink_along_the_ladder() {
        let cfg = worked_config(1124);
        let report = averaging_experiment(&cfg, &[0.1, 0.05, 0.02], 24, None, &worked_averaged()).unwrap();

        assert!((report.alpha - 0.55).abs() <= 1e-12, "default alpha (1 - 0.6 + 0.7)/2, got {}", report.alpha);
        assert!(report.excluded.is_empty(), "the worked system never blows up");
        let s = &report.stats;
        assert!(s.iter().all(|e| e.n_effective == 24));
        assert!(
            s[0].median_sup > s[1].median_sup && s[1].median_sup > s[2].median_sup,
            "sup medians must fall along the ladder: {:?}",
            s.iter().map(|e| e.median_sup).collect::<Vec<_>>()
        );
        assert!(
            s[0].median_sup >= 1.5 * s[2].median_sup,
            "a 5x epsilon drop shrinks the error well beyond noise: {} vs {}",
            s[0].median_sup,
            s[2].median_sup
        );
        assert!(
            s[0].median_holder > s[2].median_holder,
            "the Hölder error falls too: {} vs {}",
            s[0].median_holder,
            s[2].median_holder
        );
        assert!(report.warnings.is_empty(), "clean decay raises no warnings: {:?}", report.warnings);
        assert!(report.fit.rate > 0.1, "fitted exponent must be positive, got {}", report.fit.rate);
        assert!(report.fit.r_squared > 0.7, "three-point power fit r^2 = {}", report.fit.r_squared);
        assert!(
            s.iter().all(|e| e.noise_digest == s[0].noise_digest),
            "slow noise is path-indexed, so every ladder entry shares one digest"
        );
    }

    #[test]
    fn degenerate_system_is_bitwise_reproduced() {
        // With f, g blind to the fast variable, both legs run the identical
        // arithmetic on the identical increments, so the gap is exactly zero,
        // noise consumed (g = 1) or not (g = 0).
        for g in [CoeffField::Zero, CoeffField::Constant { value: 1.0 }] {
            let f = CoeffField::LinearSin { a_x: -1.0, a_y: 0.0, sin_amp: 0.5 };
            let cfg = SlowFastConfig {
                f,
                g,
                b: DriftSpec::Linear { rate: 1.0, dim_y: 1 },
                ..worked_config(1125)
            };
            let averaged = AveragedField::Analytic { f_bar: f, g_bar: g };
            let report = averaging_experiment(&cfg, &[0.1, 0.05], 4, None, &averaged).unwrap();
            for e in &report.stats {
                assert_eq!(e.median_sup, 0.0, "degenerate sup error at epsilon {}", e.epsilon);
                assert_eq!(e.q75_sup, 0.0);
                assert_eq!(e.median_holder, 0.0, "degenerate Hölder error at epsilon {}", e.epsilon);
            }
            assert_eq!(report.warnings.len(), 1, "a two-entry ladder warns that no fit is possible");
            assert!(report.warnings[0].contains("at least 3"));
        }
    }

    #[test]
    fn experiment_refuses_bad_hypotheses() {
        let cfg = worked_config(1126);
        let avg = worked_averaged();

        for bad_alpha in [0.7, 0.75] {
            assert!(
                matches!(averaging_experiment(&cfg, &[0.1, 0.05, 0.02], 4, Some(bad_alpha), &avg), Err(Error::Parameter(_))),
                "alpha = {bad_alpha} >= H must be refused"
            );
        }
        assert!(matches!(
            averaging_experiment(&cfg, &[0.05, 0.1], 4, None, &avg),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(averaging_experiment(&cfg, &[], 4, None, &avg), Err(Error::Empty(_))));
        assert!(matches!(averaging_experiment(&cfg, &[0.1, 0.05], 1, None, &avg), Err(Error::Parameter(_))));

        let bad_hurst = SlowFastConfig { hurst_fast: 0.25, ..cfg.clone() };
        assert!(
            matches!(averaging_experiment(&bad_hurst, &[0.1, 0.05], 4, None, &avg), Err(Error::Parameter(_))),
            "fast Hurst index below 1 - H violates the standing hypotheses"
        );

        let fast_reading = AveragedField::Analytic {
            f_bar: CoeffField::LinearSin { a_x: -1.0, a_y: 1.0, sin_amp: 0.0 },
            g_bar: CoeffField::Constant { value: 1.0 },
        };
        assert!(matches!(
            averaging_experiment(&cfg, &[0.1, 0.05], 4, None, &fast_reading),
            Err(Error::Parameter(_))
        ));

        let table = AveragedCoefficientTable::new(
            vec![0.0, 1.0],
            vec![0.0; 2],
            vec![0.0; 2],
            vec![1.0; 2],
            vec![0.0; 2],
        )
        .unwrap();
        let two_dim = SlowFastConfig {
            f: CoeffField::Zero,
            g: CoeffField::Constant { value: 1.0 },
            b: DriftSpec::Linear { rate: 1.0, dim_y: 2 },
            sigma: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            x0: vec![0.0, 0.0],
            y0: vec![0.0, 0.0],
            ..cfg.clone()
        };
        assert!(
            matches!(
                averaging_experiment(&two_dim, &[0.1, 0.05], 4, None, &AveragedField::Tabulated(table)),
                Err(Error::DimensionMismatch { .. })
            ),
            "the tabulated route interpolates a scalar slow variable only"
        );

        // The default exponent stays strictly below the slow index even when
        // the midpoint rule would not.
        let a = default_holder_alpha(0.51, 0.5);
        assert!(a > 0.0 && a < 0.51, "clipped default alpha {a}");
        assert!((default_holder_alpha(0.7, 0.6) - 0.55).abs() <= 1e-15);
    }

    #[test]
    fn tabulated_route_tracks_the_analytic_route() {
        // One worked-system ladder entry, averaged once through the closed
        // form and once through a Monte-Carlo table; the table's node error
        // (SE ~ 0.026, interpolation bias ~ 0.016 at spacing 1/2) propagates
        // through the averaged flow with at most a Gronwall factor, so the
        // medians agree to ~0.1 while the errors themselves are of that size.
        let cfg = worked_config(1127);
        let b = cfg.b.clone();
        let cert = passing_certificate(&b, 1127);
        let grid: Vec<f64> = (0..13).map(|i| -3.0 + 0.5 * i as f64).collect();
        let opts = ExperimentOptions { seed: 1127, ..ExperimentOptions::default() };
        let (table, _) = build_averaged_coefficients(
            &cfg.f,
            &cfg.g,
            &b,
            &cfg.sigma,
            cfg.hurst_fast,
            &grid,
            800,
            f64::INFINITY,
            Some(&cert),
            &opts,
        )
        .unwrap();

        let ana = averaging_experiment(&cfg, &[0.1, 0.05], 8, None, &worked_averaged()).unwrap();
        let tab = averaging_experiment(&cfg, &[0.1, 0.05], 8, None, &AveragedField::Tabulated(table)).unwrap();
        for (a, t) in ana.stats.iter().zip(&tab.stats) {
            assert_eq!(t.n_effective, 8);
            assert!(
                (a.median_sup - t.median_sup).abs() <= 0.12,
                "routes disagree at epsilon {}: analytic {} vs tabulated {}",
                a.epsilon,
                a.median_sup,
                t.median_sup
            );
        }
    }

    fn synthetic_report(epsilons: &[f64], medians: &[f64], ses: &[f64]) -> AveragingReport {
        let stats = epsilons
            .iter()
            .zip(medians.iter().zip(ses))
            .map(|(&epsilon, (&m, &se))| EpsilonStats {
                epsilon,
                median_sup: m,
                q25_sup: m,
                q75_sup: m,
                median_holder: m,
                q25_holder: m,
                q75_holder: m,
                se_sup: se,
                se_holder: se,
                n_effective: 16,
                n_excluded: 0,
                noise_digest: 0,
            })
            .collect();
        AveragingReport {
            epsilons: epsilons.to_vec(),
            stats,
            n_paths: 16,
            alpha: 0.55,
            fit: RateFit::degenerate(FitModel::Algebraic),
            warnings: Vec::new(),
            excluded: Vec::new(),
        }
    }

    #[test]
    fn rate_fit_recovers_synthetic_exponents() {
        let ladder = [0.4, 0.2, 0.1, 0.05, 0.025];

        let linear: Vec<f64> = ladder.iter().map(|e| 2.0 * e).collect();
        let (fit, warns) = rate_fit_error_vs_epsilon(&synthetic_report(&ladder, &linear, &[0.0; 5])).unwrap();
        assert!((fit.rate - 1.0).abs() <= 0.05, "errors ~ epsilon fit slope {}", fit.rate);
        assert!((fit.amplitude - 2.0).abs() <= 0.02, "amplitude {}", fit.amplitude);
        assert!(fit.r_squared > 0.999);
        assert!(warns.is_empty(), "{warns:?}");

        // 5 percent multiplicative noise moves a five-point slope well under
        // the 0.05 acceptance band.
        let mut rng = stream_rng(1128, 0);
        let noisy: Vec<f64> =
            ladder.iter().map(|e| e.powf(0.3) * (1.0 + 0.05 * (2.0 * rng.gen::<f64>() - 1.0))).collect();
        let (fit, _) = rate_fit_error_vs_epsilon(&synthetic_report(&ladder, &noisy, &[0.0; 5])).unwrap();
        assert!((fit.rate - 0.3).abs() <= 0.05, "noisy epsilon^0.3 fit slope {}", fit.rate);

        let flat = [0.7; 5];
        let (fit, warns) = rate_fit_error_vs_epsilon(&synthetic_report(&ladder, &flat, &[0.0; 5])).unwrap();
        assert!(fit.rate.abs() <= 1e-12, "constant errors fit slope {}", fit.rate);
        assert!(warns.iter().any(|w| w.contains("no decay")), "{warns:?}");

        let bumpy = [0.1, 0.3, 0.2];
        let (fit, warns) = rate_fit_error_vs_epsilon(&synthetic_report(&ladder[..3], &bumpy, &[0.0; 3])).unwrap();
        assert!(fit.rate.is_finite());
        assert!(warns.iter().any(|w| w.contains("rises")), "{warns:?}");

        assert!(matches!(
            rate_fit_error_vs_epsilon(&synthetic_report(&ladder[..2], &[0.2, 0.1], &[0.0; 2])),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn bootstrap_interval_shrinks_with_the_ensemble() {
        let cfg = worked_config(1129);
        let avg = worked_averaged();
        let small = averaging_experiment(&cfg, &[0.1], 32, None, &avg).unwrap();
        let large = averaging_experiment(&cfg, &[0.1], 128, None, &avg).unwrap();
        let ratio = small.stats[0].se_sup / large.stats[0].se_sup;
        assert!(
            (1.2..=3.4).contains(&ratio),
            "quadrupling paths roughly halves the bootstrap error, got ratio {ratio:.2} ({} vs {})",
            small.stats[0].se_sup,
            large.stats[0].se_sup
        );
        assert_eq!(small.warnings.len(), 1, "single-entry ladder warns that no fit is possible");
    }

    #[test]
    fn report_csv_is_plot_ready() {
        let report = synthetic_report(&[0.4, 0.2, 0.1], &[0.3, 0.2, 0.15], &[0.01; 3]);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("# n_paths: 16"));
        assert_eq!(lines[1], "epsilon,median_sup,q25,q75,median_holder,n_effective");
        for row in &lines[2..] {
            assert_eq!(row.split(',').count(), 6, "row {row}");
        }
    }
}

