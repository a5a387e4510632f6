//! The experiment catalog: the eight kinds with their parameter tables, and
//! named presets embedded as full config documents. `list` renders this;
//! config parsing uses it for kind validation with nearest-match hints.

use crate::failure::{Failure, Result};

pub const KINDS: [&str; 8] = [
    "noise-validate",
    "certify-drift",
    "wasserstein-decay",
    "tv-decay",
    "quenched-decay",
    "control",
    "averaging",
    "invariant-measure",
];

pub struct KindDoc {
    pub name: &'static str,
    pub summary: &'static str,
    /// One line per parameter: name, type, default where one exists.
    pub params: &'static [&'static str],
}

pub const DOCS: [KindDoc; 8] = [
    KindDoc {
        name: "noise-validate",
        summary: "Squared-increment law and lag-1 increment covariance of the fractional noise generator, as z-scores across an ensemble.",
        params: &[
            "hursts: list of Hurst indices in (0,1)",
            "n_paths, n_steps: ensemble shape (n_paths >= 2)",
            "dt: grid step (default 1)",
            "method: circulant-embedding | cholesky | riemann-liouville-kernel (default circulant-embedding)",
            "lags: increment lags in steps (default [1, 2, 4, ..., 64])",
            "tolerance_se: largest accepted |z| (default 4)",
        ],
    },
    KindDoc {
        name: "certify-drift",
        summary: "Sampling-based semi-contractivity certificate for a fast drift at one frozen slow state; violations fail acceptance.",
        params: &[
            "b: drift table, x: frozen slow state",
            "kappa, r, lambda (default 0): contraction constants to certify",
            "regime: both-outside | one-outside (default both-outside)",
            "n_samples (default 4096), box_radius (default 4 max(r, 1))",
        ],
    },
    KindDoc {
        name: "wasserstein-decay",
        summary: "Synchronous-coupling Wasserstein gap between two point-started ensembles over a time grid, with an exponential rate fit.",
        params: &[
            "b, x, sigma, hurst: the frozen-x fast system",
            "y0_a, y0_b: the two start points",
            "t_grid, n_paths, p (default 1): distance grid and order",
            "certificate: inline contraction check gating the run (optional)",
            "options: dt, burn_in, force, lambda_cap, girsanov_dt, n_blocks overrides",
        ],
    },
    KindDoc {
        name: "tv-decay",
        summary: "Two-stage coupling upper bound on total variation toward the invariant law, checked against the histogram distance it must dominate.",
        params: &[
            "b, x, sigma, hurst, initial: system and start point",
            "t_grid, n_paths",
            "delta_rule: from-wasserstein-rate | fixed-rate (default from-wasserstein-rate)",
            "certificate, options: as in wasserstein-decay",
        ],
    },
    KindDoc {
        name: "quenched-decay",
        summary: "Decay toward the stationary cloud under Riemann-Liouville noise plus one fixed adversary path, with an algebraic rate fit.",
        params: &[
            "b, x, sigma, hurst: the frozen-x fast system",
            "adversary: zero | power-law {coeff, beta} | battery {index, scale}",
            "y0: point {y0} | invariant-draw",
            "t_grid, n_paths, certificate, options",
        ],
    },
    KindDoc {
        name: "control",
        summary: "Universal two-piece control against an adversary battery: exterior occupation time of the controlled flow must reach eta on every run.",
        params: &[
            "b, x, r_bar, eta: system, exit radius, occupation target",
            "subdivision: subinterval count N (default: resolution rule)",
            "magnitude_scale: multiple of the constructed magnitude (default 1)",
            "battery: count, hurst, dt (default 1/256), scale",
            "x0_list: one start per battery entry (default: origin)",
        ],
    },
    KindDoc {
        name: "averaging",
        summary: "Slow-fast ladder: pathwise sup and Holder errors between the full system and its averaged equation under shared noise, per epsilon.",
        params: &[
            "system: hurst_slow, hurst_fast, f, g, b, sigma, x0, y0, t_horizon, dt_slow",
            "epsilons: strictly decreasing ladder",
            "n_paths, alpha (default (1 - hurst_fast + hurst_slow) / 2)",
            "averaged: analytic {f_bar, g_bar} | tabulated {x_min, x_max, n_nodes, samples_per_node, se_tolerance, certificate, force}",
        ],
    },
    KindDoc {
        name: "invariant-measure",
        summary: "Empirical invariant measure of the frozen-x fast dynamics after a certified burn-in, with moments and the linear-drift oracle check.",
        params: &[
            "b, x, sigma, hurst: the frozen-x fast system",
            "burn_in (default: max(10/kappa, 10)), n_samples",
            "certificate: inline contraction check (optional)",
        ],
    },
];

pub struct Preset {
    pub name: &'static str,
    pub kind: &'static str,
    pub summary: &'static str,
    pub toml: &'static str,
}

pub const PRESETS: [Preset; 3] = [
    Preset {
        name: "noise-self-check",
        kind: "noise-validate",
        summary: "Generator self test at H in {0.55, 0.7, 0.9}, 200 paths of 4096 steps.",
        toml: include_str!("../presets/noise-self-check.toml"),
    },
    Preset {
        name: "geometric-ergodicity",
        kind: "wasserstein-decay",
        summary: "Exponential Wasserstein contraction of the linear fast system at H = 0.7.",
        toml: include_str!("../presets/geometric-ergodicity.toml"),
    },
    Preset {
        name: "averaging-convergence",
        kind: "averaging",
        summary: "Averaging ladder for the mean-field test system, epsilon from 0.1 down to 0.01.",
        toml: include_str!("../presets/averaging-convergence.toml"),
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn check_kind(kind: &str) -> Result<()> {
    if KINDS.contains(&kind) {
        return Ok(());
    }
    let nearest = KINDS
        .iter()
        .min_by_key(|k| levenshtein(kind, k))
        .expect("kind list is non-empty");
    Err(Failure::Schema(format!(
        "unknown experiment kind \"{kind}\"; nearest match is \"{nearest}\""
    )))
}

/// Classic two-row edit distance; the kind names are short enough that
/// nothing fancier is warranted.
fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// The `list` text: versioned so downstream tooling can key on it.
pub fn render_list() -> String {
    let mut s = format!("fsde experiment catalog (v{})\n\n", env!("CARGO_PKG_VERSION"));
    s.push_str("kinds:\n");
    for doc in &DOCS {
        s.push_str(&format!("  {}\n      {}\n", doc.name, doc.summary));
        for p in doc.params {
            s.push_str(&format!("      - {p}\n"));
        }
    }
    s.push_str("\npresets (run directly with `fsde run <name>`, dump with `fsde list --preset <name>`):\n");
    for p in &PRESETS {
        s.push_str(&format!("  {:24} {:18} {}\n", p.name, p.kind, p.summary));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config;

    #[test]
    fn every_kind_is_documented_and_listed() {
        assert_eq!(DOCS.len(), KINDS.len());
        let rendered = render_list();
        for kind in KINDS {
            assert!(rendered.contains(kind), "catalog must list {kind}");
        }
        for p in &PRESETS {
            assert!(rendered.contains(p.name), "catalog must list preset {}", p.name);
        }
    }

    #[test]
    fn unknown_kind_suggests_the_nearest_one() {
        let err = check_kind("avraging").unwrap_err();
        assert!(err.to_string().contains("\"averaging\""), "got: {err}");
        let err = check_kind("tv").unwrap_err();
        assert!(err.to_string().contains("\"tv-decay\""), "got: {err}");
    }

    #[test]
    fn presets_parse_validate_and_match_their_declared_kind() {
        for p in &PRESETS {
            let cfg = config::parse_str(p.toml, false)
                .unwrap_or_else(|e| panic!("preset {} must parse: {e}", p.name));
            assert_eq!(cfg.spec.kind(), p.kind, "preset {} kind drifted", p.name);
            config::validate(&cfg).unwrap_or_else(|e| panic!("preset {} must validate: {e}", p.name));
        }
    }
}
