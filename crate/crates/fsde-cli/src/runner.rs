//! Run lifecycle: dispatch one parsed config to the library, collect result
//! files in memory, then persist everything atomically (tmp + rename) into
//! the output directory together with a replay record and a summary. A run
//! that dies after the directory exists always leaves a FAILED marker; a
//! completed run with failing acceptance checks keeps its results and is
//! reported as such so the caller can exit 4.

use crate::config::{
    self, AdversarySection, AveragingParams, CertifyDriftParams, CertifySection, ControlParams,
    ExperimentConfig, ExperimentSpec, InvariantMeasureParams, NoiseValidateParams,
    QuenchedDecayParams, RouteSection, TvDecayParams, WassersteinDecayParams,
};
use crate::failure::{Failure, Result};
use fsde_core::averaging::{averaging_experiment, build_averaged_coefficients};
use fsde_core::drift::check_semi_contractive;
use fsde_core::ergodicity::{
    control_experiment, control_subdivision, quenched_decay_experiment,
    standard_adversary_battery, tv_decay_experiment, wasserstein_decay_experiment,
};
use fsde_core::measures::{default_burn_in, estimate_invariant_measure, fou_oracle};
use fsde_core::noise::{fgn_covariance, generate_fbm, FbmSpec};
use fsde_core::rng::derive_stream;
use fsde_core::{
    AveragedField, ContractivityCertificate, DecayCurve, DriftSpec, ExperimentOptions, FitModel,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    checks: Vec<Check>,
    warnings: Vec<String>,
    metrics: Value,
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: &'a str,
    config_hash: &'a str,
    version: &'a str,
    status: &'a str,
    checks: &'a [Check],
    warnings: &'a [String],
    metrics: &'a Value,
    files: &'a [String],
}

pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let hash = config::config_hash(&cfg.spec, cfg.seed);
    fs::create_dir_all(out_dir)?;
    match execute(cfg, &hash) {
        Ok(art) => {
            let mut files = Vec::new();
            for (name, bytes) in &art.files {
                write_atomic(out_dir, name, bytes)?;
                files.push(name.clone());
            }
            let mut replay = serde_json::to_vec_pretty(&config::replay_document(cfg, &hash))
                .expect("replay document serializes");
            replay.push(b'\n');
            write_atomic(out_dir, "replay.json", &replay)?;
            files.push("replay.json".into());
            let status = if art.checks.iter().all(|c| c.passed) { "ok" } else { "failed-acceptance" };
            let summary = Summary {
                kind: cfg.spec.kind(),
                config_hash: &hash,
                version: env!("CARGO_PKG_VERSION"),
                status,
                checks: &art.checks,
                warnings: &art.warnings,
                metrics: &art.metrics,
                files: &files,
            };
            let mut bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
            bytes.push(b'\n');
            write_atomic(out_dir, "summary.json", &bytes)?;
            files.push("summary.json".into());
            // A marker from an earlier failed run in the same directory is
            // stale once a complete result set exists.
            let _ = fs::remove_file(out_dir.join("FAILED"));
            Ok(RunOutcome {
                out_dir: out_dir.to_path_buf(),
                files,
                checks: art.checks,
                warnings: art.warnings,
            })
        }
        Err(f) => {
            let marker = format!("{} error: {f}\nconfig: {hash}\n", f.label());
            let _ = fs::write(out_dir.join("FAILED"), marker);
            Err(f)
        }
    }
}

fn execute(cfg: &ExperimentConfig, hash: &str) -> Result<Artifacts> {
    match &cfg.spec {
        ExperimentSpec::NoiseValidate(p) => run_noise_validate(p, cfg.seed, hash),
        ExperimentSpec::CertifyDrift(p) => run_certify_drift(p, cfg.seed, hash),
        ExperimentSpec::WassersteinDecay(p) => run_wasserstein(p, cfg.seed, hash),
        ExperimentSpec::TvDecay(p) => run_tv(p, cfg.seed, hash),
        ExperimentSpec::QuenchedDecay(p) => run_quenched(p, cfg.seed, hash),
        ExperimentSpec::Control(p) => run_control(p, cfg.seed, hash),
        ExperimentSpec::Averaging(p) => run_averaging(p, cfg.seed, hash),
        ExperimentSpec::InvariantMeasure(p) => run_invariant_measure(p, cfg.seed, hash),
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn prelude(kind: &str, hash: &str) -> String {
    format!("# kind: {kind}\n# config: {hash}\n")
}

fn decay_csv(kind: &str, hash: &str, curve: &DecayCurve) -> Vec<u8> {
    let mut buf = prelude(kind, hash).into_bytes();
    curve.write_csv(&mut buf).expect("writing to a vec cannot fail");
    buf
}

fn json_file(value: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    bytes
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn build_certificate(
    section: &Option<CertifySection>,
    b: &DriftSpec,
    x: &[f64],
    seed: u64,
) -> Result<Option<ContractivityCertificate>> {
    section
        .as_ref()
        .map(|c| {
            check_semi_contractive(
                b,
                x,
                c.kappa,
                c.r,
                c.lambda,
                c.regime,
                c.n_samples,
                c.box_radius(),
                seed,
            )
        })
        .transpose()
        .map_err(Into::into)
}

fn run_noise_validate(p: &NoiseValidateParams, seed: u64, hash: &str) -> Result<Artifacts> {
    let mut csv = prelude("noise-validate", hash);
    csv.push_str("hurst,statistic,lag,empirical,expected,se,z\n");
    let mut max_abs_z: f64 = 0.0;
    let mut push_row = |h: f64, stat: &str, lag: usize, emp: f64, exp: f64, se: f64| {
        let z = if se > 0.0 {
            (emp - exp) / se
        } else if emp == exp {
            0.0
        } else {
            f64::INFINITY
        };
        max_abs_z = max_abs_z.max(z.abs());
        csv.push_str(&format!("{h},{stat},{lag},{emp},{exp},{se},{z}\n"));
    };
    for (hi, &h) in p.hursts.iter().enumerate() {
        // One stream per (hurst, path): adding paths or reordering the hurst
        // loop never perturbs existing draws.
        let stats: Vec<(Vec<f64>, f64)> = (0..p.n_paths as u64)
            .into_par_iter()
            .map(|path| -> fsde_core::Result<(Vec<f64>, f64)> {
                let spec = FbmSpec {
                    hurst: h,
                    dim: 1,
                    n_steps: p.n_steps,
                    dt: p.dt,
                    method: p.method,
                    seed,
                    stream: derive_stream("noise-validate", &[hi as u64, path]),
                };
                let b = generate_fbm(&spec)?;
                let v = b.values();
                let lag_means = p
                    .lags
                    .iter()
                    .map(|&l| {
                        let windows = p.n_steps + 1 - l;
                        let mut acc = 0.0;
                        for k in 0..windows {
                            let d = v[k + l] - v[k];
                            acc += d * d;
                        }
                        acc / windows as f64
                    })
                    .collect();
                let mut cov = 0.0;
                for k in 0..p.n_steps - 1 {
                    cov += (v[k + 1] - v[k]) * (v[k + 2] - v[k + 1]);
                }
                Ok((lag_means, cov / (p.n_steps - 1) as f64))
            })
            .collect::<fsde_core::Result<_>>()?;
        for (li, &lag) in p.lags.iter().enumerate() {
            let vals: Vec<f64> = stats.iter().map(|s| s.0[li]).collect();
            let (mean, se) = mean_se(&vals);
            let expected = (lag as f64 * p.dt).powf(2.0 * h);
            push_row(h, "variance", lag, mean, expected, se);
        }
        let vals: Vec<f64> = stats.iter().map(|s| s.1).collect();
        let (mean, se) = mean_se(&vals);
        let expected = p.dt.powf(2.0 * h) * fgn_covariance(1, h)?;
        push_row(h, "increment-covariance", 1, mean, expected, se);
    }
    let passed = max_abs_z <= p.tolerance_se;
    Ok(Artifacts {
        files: vec![("residuals.csv".into(), csv.into_bytes())],
        checks: vec![check(
            "residuals-within-tolerance",
            passed,
            format!("max |z| = {max_abs_z:.2} against tolerance {}", p.tolerance_se),
        )],
        warnings: Vec::new(),
        metrics: json!({ "max_abs_z": max_abs_z }),
    })
}

fn run_certify_drift(p: &CertifyDriftParams, seed: u64, hash: &str) -> Result<Artifacts> {
    let cert = check_semi_contractive(
        &p.b,
        &p.x,
        p.kappa,
        p.r,
        p.lambda,
        p.regime,
        p.n_samples,
        p.section().box_radius(),
        seed,
    )?;
    let passed = cert.passes();
    let detail = format!(
        "worst margin {:.3e} over {} samples, {} violation witnesses",
        cert.worst_margin,
        cert.n_samples,
        cert.violations.len()
    );
    let metrics = json!({ "worst_margin": cert.worst_margin, "n_violations": cert.violations.len() });
    let file = json_file(&json!({ "config_hash": hash, "certificate": cert }));
    Ok(Artifacts {
        files: vec![("certificate.json".into(), file)],
        checks: vec![check("certificate-passes", passed, detail)],
        warnings: Vec::new(),
        metrics,
    })
}

fn run_wasserstein(p: &WassersteinDecayParams, seed: u64, hash: &str) -> Result<Artifacts> {
    let cert = build_certificate(&p.certificate, &p.b, &p.x, seed)?;
    let opts = p.options.resolve(seed);
    let (curve, fit) = wasserstein_decay_experiment(
        &p.b, &p.x, &p.sigma, p.hurst, &p.y0_a, &p.y0_b, &p.t_grid, p.n_paths, p.p,
        cert.as_ref(), &opts,
    )?;
    let mut files = vec![
        ("decay.csv".into(), decay_csv("wasserstein-decay", hash, &curve)),
        (
            "fit.json".into(),
            json_file(&json!({
                "config_hash": hash,
                "exponential": fit,
                "algebraic": curve.fit(FitModel::Algebraic).ok(),
                "best": curve.fit_best().ok(),
            })),
        ),
    ];
    if let Some(c) = &cert {
        files.push(("certificate.json".into(), json_file(&json!({ "config_hash": hash, "certificate": c }))));
    }
    let first = curve.distances[0];
    let last = *curve.distances.last().expect("non-empty curve");
    Ok(Artifacts {
        files,
        checks: vec![check(
            "gap-shrinks",
            last <= first,
            format!("distance {first:.4e} at t = {} down to {last:.4e} at t = {}", curve.times[0], curve.times.last().unwrap()),
        )],
        warnings: Vec::new(),
        metrics: json!({
            "rate": fit.rate,
            "r_squared": fit.r_squared,
            "first_distance": first,
            "last_distance": last,
        }),
    })
}

fn run_tv(p: &TvDecayParams, seed: u64, hash: &str) -> Result<Artifacts> {
    let cert = build_certificate(&p.certificate, &p.b, &p.x, seed)?;
    let opts = p.options.resolve(seed);
    let report = tv_decay_experiment(
        &p.b, &p.x, &p.sigma, p.hurst, &p.initial, &p.t_grid, p.n_paths, &p.delta_rule,
        cert.as_ref(), &opts,
    )?;
    let mut csv = prelude("tv-decay", hash);
    csv.push_str("t,bound,bound_se,histogram,histogram_se,frac_uncoupled,mean_cost,delta\n");
    let mut worst_gap = f64::INFINITY;
    for i in 0..report.bound.times.len() {
        let gap = report.bound.distances[i] - report.histogram.distances[i];
        worst_gap = worst_gap.min(gap);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            report.bound.times[i],
            report.bound.distances[i],
            report.bound.se[i],
            report.histogram.distances[i],
            report.histogram.se[i],
            report.frac_uncoupled[i],
            report.mean_cost[i],
            report.deltas[i],
        ));
    }
    let mut files = vec![
        ("tv.csv".into(), csv.into_bytes()),
        ("report.json".into(), json_file(&json!({ "config_hash": hash, "report": report }))),
    ];
    if let Some(c) = &cert {
        files.push(("certificate.json".into(), json_file(&json!({ "config_hash": hash, "certificate": c }))));
    }
    Ok(Artifacts {
        files,
        checks: vec![check(
            "bound-dominates-histogram",
            worst_gap >= -1e-12,
            format!("smallest bound minus histogram gap is {worst_gap:.4e}"),
        )],
        warnings: Vec::new(),
        metrics: json!({
            "wasserstein_rate": report.wasserstein_rate,
            "bound_rate": report.fit.rate,
            "final_bound": report.bound.distances.last(),
        }),
    })
}

fn run_quenched(p: &QuenchedDecayParams, seed: u64, hash: &str) -> Result<Artifacts> {
    let cert = build_certificate(&p.certificate, &p.b, &p.x, seed)?;
    let opts = p.options.resolve(seed);
    let t_max = *p.t_grid.last().expect("validated non-empty grid");
    let n_steps = (t_max / opts.dt).round() as usize;
    if n_steps == 0 || (n_steps as f64 * opts.dt - t_max).abs() > 1e-9 * t_max.max(1.0) {
        return Err(Failure::Schema(format!(
            "t_grid end {t_max} must be a multiple of the integration dt {}",
            opts.dt
        )));
    }
    let adversary = match &p.adversary {
        AdversarySection::Zero => {
            fsde_core::AdversaryPath::zero(0.0, opts.dt, p.b.dim_y(), n_steps + 1)?
        }
        AdversarySection::PowerLaw { coeff, beta } => {
            fsde_core::AdversaryPath::power_law(*coeff, *beta, opts.dt, n_steps)?
        }
        AdversarySection::Battery { index, scale } => {
            let mut batch =
                standard_adversary_battery(index + 1, p.hurst, opts.dt, n_steps, *scale, seed)?;
            batch.pop().expect("battery of index + 1 entries")
        }
    };
    let (curve, fit) = quenched_decay_experiment(
        &p.b, &p.x, &p.sigma, p.hurst, &adversary, &p.y0, &p.t_grid, p.n_paths,
        cert.as_ref(), &opts,
    )?;
    let mut files = vec![
        ("decay.csv".into(), decay_csv("quenched-decay", hash, &curve)),
        (
            "fit.json".into(),
            json_file(&json!({
                "config_hash": hash,
                "algebraic": fit,
                "exponential": curve.fit(FitModel::Exponential).ok(),
                "best": curve.fit_best().ok(),
            })),
        ),
    ];
    if let Some(c) = &cert {
        files.push(("certificate.json".into(), json_file(&json!({ "config_hash": hash, "certificate": c }))));
    }
    let first = curve.distances[0];
    let last = *curve.distances.last().expect("non-empty curve");
    Ok(Artifacts {
        files,
        checks: vec![check(
            "gap-shrinks",
            last <= first,
            format!("distance {first:.4e} down to {last:.4e} over the grid"),
        )],
        warnings: Vec::new(),
        metrics: json!({
            "rate": fit.rate,
            "r_squared": fit.r_squared,
            "first_distance": first,
            "last_distance": last,
        }),
    })
}

fn run_control(p: &ControlParams, seed: u64, hash: &str) -> Result<Artifacts> {
    let dim = p.b.dim_y();
    let x0_list = p
        .x0_list
        .clone()
        .unwrap_or_else(|| vec![vec![0.0; dim]; p.battery.count]);
    let state_bound = x0_list
        .iter()
        .map(|x0| x0.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let n = p
        .subdivision
        .unwrap_or_else(|| control_subdivision(p.r_bar, p.eta, state_bound));
    let n_steps = (1.0 / p.battery.dt).round() as usize;
    if n_steps == 0 || (n_steps as f64 * p.battery.dt - 1.0).abs() > 1e-9 {
        return Err(Failure::Schema(format!(
            "battery dt {} must divide the unit control horizon",
            p.battery.dt
        )));
    }
    let adversaries = standard_adversary_battery(
        p.battery.count,
        p.battery.hurst,
        p.battery.dt,
        n_steps,
        p.battery.scale,
        seed,
    )?;
    let report = control_experiment(
        &p.b, &p.x, p.r_bar, p.eta, n, &adversaries, &x0_list, p.magnitude_scale,
    )?;
    let mut csv = prelude("control", hash);
    csv.push_str("run,occupation\n");
    for (i, r) in report.runs.iter().enumerate() {
        csv.push_str(&format!("{i},{}\n", r.occupation));
    }
    let delta = 1.0 / (2.0 * n as f64);
    let magnitude = (2.0 * p.r_bar + 1.0) / ((1.0 - 2.0 * p.eta) * delta) * p.magnitude_scale;
    Ok(Artifacts {
        files: vec![
            ("occupations.csv".into(), csv.into_bytes()),
            ("control.json".into(), json_file(&json!({ "config_hash": hash, "report": report }))),
        ],
        checks: vec![check(
            "occupation-reaches-eta",
            report.min_occupation + 1e-12 >= p.eta,
            format!(
                "smallest exterior occupation {:.4} against target {} over {} runs",
                report.min_occupation,
                p.eta,
                report.runs.len()
            ),
        )],
        warnings: Vec::new(),
        metrics: json!({
            "min_occupation": report.min_occupation,
            "n_subintervals": n,
            "control_magnitude": magnitude,
        }),
    })
}

fn run_averaging(p: &AveragingParams, seed: u64, hash: &str) -> Result<Artifacts> {
    let template = p.system.template(&p.epsilons, seed)?;
    let mut warnings = Vec::new();
    let mut files = Vec::new();
    let field = match &p.averaged {
        RouteSection::Analytic { f_bar, g_bar } => {
            AveragedField::Analytic { f_bar: *f_bar, g_bar: *g_bar }
        }
        RouteSection::Tabulated {
            x_min,
            x_max,
            n_nodes,
            samples_per_node,
            se_tolerance,
            certificate,
            force,
        } => {
            let grid: Vec<f64> = (0..*n_nodes)
                .map(|i| x_min + (x_max - x_min) * i as f64 / (*n_nodes as f64 - 1.0))
                .collect();
            let cert = build_certificate(certificate, &p.system.b, &p.system.x0, seed)?;
            let opts = ExperimentOptions { seed, force: *force, ..ExperimentOptions::default() };
            let (table, flagged) = build_averaged_coefficients(
                &p.system.f,
                &p.system.g,
                &p.system.b,
                &p.system.sigma,
                p.system.hurst_fast,
                &grid,
                *samples_per_node,
                *se_tolerance,
                cert.as_ref(),
                &opts,
            )?;
            if !flagged.is_empty() {
                warnings.push(format!(
                    "{} table nodes exceed the SE tolerance {se_tolerance}: indices {flagged:?}",
                    flagged.len()
                ));
            }
            let mut csv = prelude("averaging", hash).into_bytes();
            table.write_csv(&mut csv).expect("writing to a vec cannot fail");
            files.push(("averaged-table.csv".into(), csv));
            if let Some(c) = cert {
                files.push(("certificate.json".into(), json_file(&json!({ "config_hash": hash, "certificate": c }))));
            }
            AveragedField::Tabulated(table)
        }
    };
    let report = averaging_experiment(&template, &p.epsilons, p.n_paths, p.alpha, &field)?;
    warnings.extend(report.warnings.iter().cloned());
    for ex in &report.excluded {
        warnings.push(format!(
            "path {} excluded at epsilon {}: blow-up at t = {}",
            ex.path, ex.epsilon, ex.time
        ));
    }
    let mut csv = prelude("averaging", hash).into_bytes();
    report.write_csv(&mut csv).expect("writing to a vec cannot fail");
    files.push(("report.csv".into(), csv));
    files.push(("report.json".into(), json_file(&json!({ "config_hash": hash, "report": report }))));
    // Monotone up to bootstrap overlap, the same allowance the rate fit uses.
    let sup_ok = report
        .stats
        .windows(2)
        .all(|w| w[1].median_sup <= w[0].median_sup + 2.0 * (w[0].se_sup + w[1].se_sup));
    let holder_ok = report
        .stats
        .windows(2)
        .all(|w| w[1].median_holder <= w[0].median_holder + 2.0 * (w[0].se_holder + w[1].se_holder));
    let ladder = report
        .stats
        .iter()
        .map(|s| format!("{:.4e}", s.median_sup))
        .collect::<Vec<_>>()
        .join(" -> ");
    let holder_ladder = report
        .stats
        .iter()
        .map(|s| format!("{:.4e}", s.median_holder))
        .collect::<Vec<_>>()
        .join(" -> ");
    let last = report.stats.last().expect("validated report is non-empty");
    let mut metrics = json!({
        "fit_rate": report.fit.rate,
        "fit_r_squared": report.fit.r_squared,
        "n_excluded": report.excluded.len(),
        "alpha": report.alpha,
    });
    if last.median_sup > 0.0 {
        metrics["error_ratio_top_to_bottom"] = json!(report.stats[0].median_sup / last.median_sup);
    }
    Ok(Artifacts {
        files,
        checks: vec![
            check("sup-error-monotone", sup_ok, format!("median sup errors {ladder}")),
            check("holder-error-monotone", holder_ok, format!("median Holder errors {holder_ladder}")),
        ],
        warnings,
        metrics,
    })
}

fn run_invariant_measure(p: &InvariantMeasureParams, seed: u64, hash: &str) -> Result<Artifacts> {
    let cert = build_certificate(&p.certificate, &p.b, &p.x, seed)?;
    let burn_in = p.burn_in.unwrap_or_else(|| {
        cert.as_ref()
            .filter(|c| c.passes())
            .map(|c| default_burn_in(c.kappa))
            .unwrap_or(10.0)
    });
    let measure =
        estimate_invariant_measure(&p.b, &p.x, &p.sigma, p.hurst, burn_in, p.n_samples, seed, cert.as_ref())?;
    let mean = measure.mean();
    let dim = mean.len();
    let mut variance = Vec::with_capacity(dim);
    let mut variance_se = Vec::with_capacity(dim);
    for c in 0..dim {
        let (v, se) = measure.variance_with_se(c);
        variance.push(v);
        variance_se.push(se);
    }
    // Closed-form stationary variance exists for the linear drift: scaling
    // the unit-rate fractional OU variance by rate^{-2H} per sigma row.
    let oracle: Option<Vec<f64>> = match &p.b {
        DriftSpec::Linear { rate, .. } if *rate > 0.0 => {
            let v = fou_oracle(p.hurst)?;
            Some(
                (0..dim)
                    .map(|i| p.sigma[i].iter().map(|s| s * s).sum::<f64>() * rate.powf(-2.0 * p.hurst) * v)
                    .collect(),
            )
        }
        _ => None,
    };
    let mut csv = prelude("invariant-measure", hash).into_bytes();
    measure.write_csv(&mut csv).expect("writing to a vec cannot fail");
    let files = vec![
        ("measure.csv".into(), csv),
        (
            "moments.json".into(),
            json_file(&json!({
                "config_hash": hash,
                "mean": mean,
                "variance": variance,
                "variance_se": variance_se,
                "oracle_variance": oracle,
                "burn_in": burn_in,
            })),
        ),
    ];
    let mut checks = Vec::new();
    if let Some(oracle) = &oracle {
        let max_z = (0..dim)
            .map(|i| (variance[i] - oracle[i]).abs() / variance_se[i].max(1e-300))
            .fold(0.0, f64::max);
        checks.push(check(
            "matches-analytic-variance",
            max_z <= 4.0,
            format!("largest variance deviation is {max_z:.2} SE from the closed form"),
        ));
    }
    Ok(Artifacts {
        files,
        checks,
        warnings: Vec::new(),
        metrics: json!({ "burn_in": burn_in, "variance": variance }),
    })
}
