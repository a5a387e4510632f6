//! Experiment configuration: one TOML (or JSON) document per run, parsed in
//! two stages so an unknown kind can name its nearest match before the
//! kind-specific schema is applied. The identity of an experiment is
//! (kind, params, seed); its hash is embedded in every output file, and the
//! replay record is a config document extended with a `replay` table.

use crate::catalog;
use crate::failure::{Failure, Result};
use fsde_core::averaging::ladder_substeps;
use fsde_core::drift::PairRegime;
use fsde_core::ergodicity::ExperimentOptions;
use fsde_core::noise::FbmMethod;
use fsde_core::rng::fnv1a;
use fsde_core::{CoeffField, DeltaRule, DriftSpec, QuenchedInitial, SlowFastConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::PathBuf;

/// One fully parsed run description. `out` and `workers` steer execution
/// only; they are excluded from the config hash and the replay record.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub spec: ExperimentSpec,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

/// Kind dispatch plus the kind's parameter table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum ExperimentSpec {
    NoiseValidate(NoiseValidateParams),
    CertifyDrift(CertifyDriftParams),
    WassersteinDecay(WassersteinDecayParams),
    TvDecay(TvDecayParams),
    QuenchedDecay(QuenchedDecayParams),
    Control(ControlParams),
    Averaging(AveragingParams),
    InvariantMeasure(InvariantMeasureParams),
}

impl ExperimentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentSpec::NoiseValidate(_) => "noise-validate",
            ExperimentSpec::CertifyDrift(_) => "certify-drift",
            ExperimentSpec::WassersteinDecay(_) => "wasserstein-decay",
            ExperimentSpec::TvDecay(_) => "tv-decay",
            ExperimentSpec::QuenchedDecay(_) => "quenched-decay",
            ExperimentSpec::Control(_) => "control",
            ExperimentSpec::Averaging(_) => "averaging",
            ExperimentSpec::InvariantMeasure(_) => "invariant-measure",
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_tolerance_se() -> f64 {
    4.0
}

fn default_lags() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32, 64]
}

fn default_method() -> FbmMethod {
    FbmMethod::CirculantEmbedding
}

fn default_regime() -> PairRegime {
    PairRegime::BothOutside
}

fn default_cert_samples() -> usize {
    4096
}

fn default_delta_rule() -> DeltaRule {
    DeltaRule::FromWassersteinRate
}

fn default_se_tolerance() -> f64 {
    0.05
}

fn default_battery_dt() -> f64 {
    1.0 / 256.0
}

/// Squared-increment law and lag-1 increment covariance of the generated
/// noise, in standard-error units across an ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseValidateParams {
    pub hursts: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    #[serde(default = "one")]
    pub dt: f64,
    #[serde(default = "default_method")]
    pub method: FbmMethod,
    #[serde(default = "default_lags")]
    pub lags: Vec<usize>,
    /// Largest residual z-score the run accepts.
    #[serde(default = "default_tolerance_se")]
    pub tolerance_se: f64,
}

/// Sampling-based semi-contractivity check of a fast drift at one frozen
/// slow state. A certificate with violations is a completed run that fails
/// acceptance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyDriftParams {
    pub b: DriftSpec,
    pub x: Vec<f64>,
    pub kappa: f64,
    pub r: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_regime")]
    pub regime: PairRegime,
    #[serde(default = "default_cert_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub box_radius: Option<f64>,
}

impl CertifyDriftParams {
    pub fn section(&self) -> CertifySection {
        CertifySection {
            kappa: self.kappa,
            r: self.r,
            lambda: self.lambda,
            regime: self.regime,
            n_samples: self.n_samples,
            box_radius: self.box_radius,
        }
    }
}

/// Inline certificate request reused by the experiments that gate on one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    pub kappa: f64,
    pub r: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_regime")]
    pub regime: PairRegime,
    #[serde(default = "default_cert_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub box_radius: Option<f64>,
}

impl CertifySection {
    pub fn box_radius(&self) -> f64 {
        self.box_radius.unwrap_or(4.0 * self.r.max(1.0))
    }
}

/// Overrides of the shared experiment knobs; anything absent keeps the
/// library default. The master seed is not an override: it always comes from
/// the config's top-level `seed`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptionsSection {
    pub dt: Option<f64>,
    pub burn_in: Option<f64>,
    pub force: bool,
    pub lambda_cap: Option<f64>,
    pub girsanov_dt: Option<f64>,
    pub n_blocks: Option<usize>,
}

impl OptionsSection {
    pub fn resolve(&self, seed: u64) -> ExperimentOptions {
        let mut o = ExperimentOptions { seed, force: self.force, ..ExperimentOptions::default() };
        if let Some(v) = self.dt {
            o.dt = v;
        }
        if let Some(v) = self.burn_in {
            o.burn_in = v;
        }
        if let Some(v) = self.lambda_cap {
            o.lambda_cap = v;
        }
        if let Some(v) = self.girsanov_dt {
            o.girsanov_dt = v;
        }
        if let Some(v) = self.n_blocks {
            o.n_blocks = v;
        }
        o
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WassersteinDecayParams {
    pub b: DriftSpec,
    pub x: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub hurst: f64,
    pub y0_a: Vec<f64>,
    pub y0_b: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub n_paths: usize,
    #[serde(default = "one")]
    pub p: f64,
    #[serde(default)]
    pub certificate: Option<CertifySection>,
    #[serde(default)]
    pub options: OptionsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvDecayParams {
    pub b: DriftSpec,
    pub x: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub hurst: f64,
    pub initial: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub n_paths: usize,
    #[serde(default = "default_delta_rule")]
    pub delta_rule: DeltaRule,
    #[serde(default)]
    pub certificate: Option<CertifySection>,
    #[serde(default)]
    pub options: OptionsSection,
}

/// Adversary selector for the quenched experiment; the path itself is built
/// on the experiment grid at run time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AdversarySection {
    Zero,
    /// Derivative `coeff * t^{-beta}`; scalar drifts only.
    PowerLaw { coeff: f64, beta: f64 },
    /// Entry `index` of the standard battery at the experiment's Hurst index.
    Battery {
        index: usize,
        #[serde(default = "one")]
        scale: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchedDecayParams {
    pub b: DriftSpec,
    pub x: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub hurst: f64,
    pub adversary: AdversarySection,
    pub y0: QuenchedInitial,
    pub t_grid: Vec<f64>,
    pub n_paths: usize,
    #[serde(default)]
    pub certificate: Option<CertifySection>,
    #[serde(default)]
    pub options: OptionsSection,
}

/// Adversary battery request for the control experiment; paths run on [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySection {
    pub count: usize,
    pub hurst: f64,
    #[serde(default = "default_battery_dt")]
    pub dt: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlParams {
    pub b: DriftSpec,
    pub x: Vec<f64>,
    pub r_bar: f64,
    pub eta: f64,
    /// Subinterval count N; the resolution rule picks one when absent.
    #[serde(default)]
    pub subdivision: Option<usize>,
    #[serde(default = "one")]
    pub magnitude_scale: f64,
    pub battery: BatterySection,
    /// One start state per battery entry; defaults to the origin for all.
    #[serde(default)]
    pub x0_list: Option<Vec<Vec<f64>>>,
}

/// The slow-fast system without the per-ladder-entry dials: epsilon and
/// dt_fast are chosen per ladder entry by the experiment itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
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
}

impl SystemSection {
    /// Ladder template: the top rung's epsilon with a dt_fast the stiffness
    /// check accepts, so validation sees a complete system.
    pub fn template(&self, epsilons: &[f64], seed: u64) -> Result<SlowFastConfig> {
        let eps0 = *epsilons
            .first()
            .ok_or_else(|| Failure::schema("averaging needs a non-empty epsilon ladder"))?;
        let m = ladder_substeps(self.dt_slow, eps0);
        Ok(SlowFastConfig {
            epsilon: eps0,
            hurst_slow: self.hurst_slow,
            hurst_fast: self.hurst_fast,
            f: self.f,
            g: self.g,
            b: self.b.clone(),
            sigma: self.sigma.clone(),
            x0: self.x0.clone(),
            y0: self.y0.clone(),
            t_horizon: self.t_horizon,
            dt_slow: self.dt_slow,
            dt_fast: self.dt_slow / m as f64,
            seed,
        })
    }
}

/// Averaged-equation route: closed-form coefficients, or a Monte-Carlo table
/// built before the ladder runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RouteSection {
    Analytic {
        f_bar: CoeffField,
        g_bar: CoeffField,
    },
    Tabulated {
        x_min: f64,
        x_max: f64,
        n_nodes: usize,
        samples_per_node: usize,
        #[serde(default = "default_se_tolerance")]
        se_tolerance: f64,
        #[serde(default)]
        certificate: Option<CertifySection>,
        #[serde(default)]
        force: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragingParams {
    pub system: SystemSection,
    pub epsilons: Vec<f64>,
    pub n_paths: usize,
    /// Hölder exponent of the pathwise error seminorm; the default rule
    /// (1 - hurst_fast + hurst_slow) / 2 applies when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub averaged: RouteSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantMeasureParams {
    pub b: DriftSpec,
    pub x: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub hurst: f64,
    /// Defaults to the certificate rule max(10/kappa, 10), or 10 uncertified.
    #[serde(default)]
    pub burn_in: Option<f64>,
    pub n_samples: usize,
    #[serde(default)]
    pub certificate: Option<CertifySection>,
}

const TOP_LEVEL_KEYS: [&str; 6] = ["kind", "params", "seed", "out", "workers", "replay"];

/// Parses one config document. `json` selects the fallback input format;
/// the primary format is TOML.
pub fn parse_str(text: &str, json: bool) -> Result<ExperimentConfig> {
    let value: Value = if json {
        serde_json::from_str(text).map_err(|e| Failure::Schema(format!("invalid JSON: {e}")))?
    } else {
        let t: toml::Value =
            toml::from_str(text).map_err(|e| Failure::Schema(format!("invalid TOML: {e}")))?;
        serde_json::to_value(t).map_err(|e| Failure::Schema(format!("invalid config: {e}")))?
    };
    from_value(value)
}

pub fn from_value(value: Value) -> Result<ExperimentConfig> {
    let map = value
        .as_object()
        .ok_or_else(|| Failure::schema("config root must be a table"))?;
    for key in map.keys() {
        if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
            return Err(Failure::Schema(format!(
                "unknown top-level key \"{key}\"; expected {}",
                TOP_LEVEL_KEYS.join(", ")
            )));
        }
    }
    let kind = map
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Failure::schema("config needs a string field \"kind\""))?;
    catalog::check_kind(kind)?;
    let params = map
        .get("params")
        .cloned()
        .ok_or_else(|| Failure::schema("config needs a [params] table"))?;
    let spec: ExperimentSpec = serde_json::from_value(json!({ "kind": kind, "params": params }))
        .map_err(|e| Failure::Schema(format!("invalid parameters for kind \"{kind}\": {e}")))?;
    let seed = match map.get("seed") {
        None => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Failure::schema("\"seed\" must be a non-negative integer"))?,
    };
    let out = match map.get("out") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => return Err(Failure::schema("\"out\" must be a string path")),
    };
    let workers = match map.get("workers") {
        None => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| Failure::schema("\"workers\" must be a non-negative integer"))?
                as usize,
        ),
    };
    // A replay record carries the hash of the config it was written from; a
    // mismatch means the record was edited after the fact.
    if let Some(recorded) = map.get("replay").and_then(|r| r.get("config_hash")) {
        let recorded = recorded
            .as_str()
            .ok_or_else(|| Failure::schema("replay.config_hash must be a string"))?;
        let actual = config_hash(&spec, seed);
        if recorded != actual {
            return Err(Failure::Schema(format!(
                "replay record hash {recorded} does not match its own config (now {actual}); the record was edited"
            )));
        }
    }
    Ok(ExperimentConfig { spec, seed, out, workers })
}

/// FNV-1a over the canonical JSON of (kind, params, seed). Stable across
/// TOML/JSON input and across replay round trips because it hashes the typed
/// re-serialization, not the source text.
pub fn config_hash(spec: &ExperimentSpec, seed: u64) -> String {
    let mut root = serde_json::to_value(spec).expect("spec serializes");
    root["seed"] = json!(seed);
    format!("{:016x}", fnv1a(root.to_string().as_bytes()))
}

/// The replay record: a runnable config document with the resolved seed baked
/// in, plus provenance. `out` and `workers` are execution knobs and stay out.
pub fn replay_document(cfg: &ExperimentConfig, hash: &str) -> Value {
    let spec = serde_json::to_value(&cfg.spec).expect("spec serializes");
    json!({
        "kind": spec["kind"],
        "params": spec["params"],
        "seed": cfg.seed,
        "replay": {
            "tool": "fsde",
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": hash,
        },
    })
}

fn require(ok: bool, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Failure::Schema(msg.into()))
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    require(!t_grid.is_empty(), "t_grid must be non-empty")?;
    require(
        t_grid.windows(2).all(|w| w[1] > w[0]) && t_grid.iter().all(|t| *t >= 0.0 && t.is_finite()),
        "t_grid must be non-negative and strictly increasing",
    )
}

fn check_hurst(h: f64) -> Result<()> {
    require(h > 0.0 && h < 1.0, format!("hurst must lie in (0,1), got {h}"))
}

/// Cheap structural checks before any computation; everything the core
/// library validates itself is left to it (those errors also exit 2).
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    match &cfg.spec {
        ExperimentSpec::NoiseValidate(p) => {
            require(!p.hursts.is_empty(), "hursts must be non-empty")?;
            for &h in &p.hursts {
                check_hurst(h)?;
            }
            require(p.n_paths >= 2, "n_paths must be >= 2 for a standard error")?;
            require(p.n_steps >= 2, "n_steps must be >= 2")?;
            require(p.dt > 0.0 && p.dt.is_finite(), "dt must be finite and > 0")?;
            require(!p.lags.is_empty(), "lags must be non-empty")?;
            require(
                p.lags.iter().all(|l| *l >= 1 && *l < p.n_steps),
                "each lag must lie in [1, n_steps)",
            )?;
            require(p.tolerance_se > 0.0, "tolerance_se must be > 0")
        }
        ExperimentSpec::CertifyDrift(p) => {
            p.b.validate()?;
            require(!p.x.is_empty(), "frozen slow state x must be non-empty")
        }
        ExperimentSpec::WassersteinDecay(p) => {
            p.b.validate()?;
            check_hurst(p.hurst)?;
            check_grid(&p.t_grid)?;
            require(!p.x.is_empty(), "frozen slow state x must be non-empty")
        }
        ExperimentSpec::TvDecay(p) => {
            p.b.validate()?;
            check_hurst(p.hurst)?;
            check_grid(&p.t_grid)?;
            require(!p.x.is_empty(), "frozen slow state x must be non-empty")
        }
        ExperimentSpec::QuenchedDecay(p) => {
            p.b.validate()?;
            check_hurst(p.hurst)?;
            check_grid(&p.t_grid)?;
            require(!p.x.is_empty(), "frozen slow state x must be non-empty")?;
            if matches!(p.adversary, AdversarySection::PowerLaw { .. }) {
                require(p.b.dim_y() == 1, "a power-law adversary needs a scalar drift")?;
            }
            Ok(())
        }
        ExperimentSpec::Control(p) => {
            p.b.validate()?;
            require(p.eta > 0.0 && p.eta < 0.5, "eta must lie in (0, 1/2)")?;
            require(p.r_bar > 0.0 && p.r_bar.is_finite(), "r_bar must be finite and > 0")?;
            require(p.battery.count >= 1, "battery count must be >= 1")?;
            check_hurst(p.battery.hurst)?;
            if let Some(list) = &p.x0_list {
                require(
                    list.len() == p.battery.count,
                    format!("x0_list has {} rows for {} adversaries", list.len(), p.battery.count),
                )?;
            }
            Ok(())
        }
        ExperimentSpec::Averaging(p) => {
            require(
                p.epsilons.iter().all(|e| *e > 0.0 && e.is_finite())
                    && p.epsilons.windows(2).all(|w| w[1] < w[0]),
                "epsilon ladder must be positive and strictly decreasing",
            )?;
            require(p.n_paths >= 1, "n_paths must be >= 1")?;
            if let Some(a) = p.alpha {
                require(a > 0.0 && a < 1.0, format!("alpha must lie in (0,1), got {a}"))?;
            }
            if let RouteSection::Tabulated { x_min, x_max, n_nodes, samples_per_node, se_tolerance, .. } =
                &p.averaged
            {
                require(x_max > x_min, "tabulation needs x_max > x_min")?;
                require(*n_nodes >= 2, "tabulation needs >= 2 nodes")?;
                require(*samples_per_node >= 2, "tabulation needs >= 2 samples per node")?;
                require(*se_tolerance > 0.0, "se_tolerance must be > 0")?;
            }
            // Builds the top-rung system and runs the full core validation.
            p.system.template(&p.epsilons, cfg.seed)?.validate()?;
            Ok(())
        }
        ExperimentSpec::InvariantMeasure(p) => {
            p.b.validate()?;
            check_hurst(p.hurst)?;
            require(!p.x.is_empty(), "frozen slow state x must be non-empty")?;
            require(p.n_samples >= 1, "n_samples must be >= 1")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CERTIFY_TOML: &str = r#"
kind = "certify-drift"
seed = 9

[params]
x = [0.0]
kappa = 0.8
r = 1.0

[params.b]
kind = "linear"
rate = 1.0
dim_y = 1
"#;

    #[test]
    fn toml_config_parses_with_defaults_filled() {
        let cfg = parse_str(CERTIFY_TOML, false).expect("valid config");
        assert_eq!(cfg.seed, 9);
        assert!(cfg.out.is_none() && cfg.workers.is_none());
        let ExperimentSpec::CertifyDrift(p) = &cfg.spec else {
            panic!("kind should dispatch to certify-drift");
        };
        assert_eq!(p.n_samples, 4096, "default sample count");
        assert_eq!(p.regime, PairRegime::BothOutside, "default regime");
        assert_eq!(p.section().box_radius(), 4.0, "default box radius is 4 max(r, 1)");
        validate(&cfg).expect("structurally valid");
    }

    #[test]
    fn json_fallback_parses_the_same_document() {
        let json_text = r#"{
            "kind": "certify-drift",
            "seed": 9,
            "params": {
                "b": {"kind": "linear", "rate": 1.0, "dim_y": 1},
                "x": [0.0], "kappa": 0.8, "r": 1.0
            }
        }"#;
        let a = parse_str(CERTIFY_TOML, false).unwrap();
        let b = parse_str(json_text, true).unwrap();
        assert_eq!(
            config_hash(&a.spec, a.seed),
            config_hash(&b.spec, b.seed),
            "hash is format-independent"
        );
    }

    #[test]
    fn unknown_kind_reports_the_nearest_match() {
        let text = CERTIFY_TOML.replace("certify-drift", "certify-dirft");
        let err = parse_str(&text, false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(
            err.to_string().contains("certify-drift"),
            "nearest match should be named, got: {err}"
        );
    }

    #[test]
    fn unknown_keys_are_rejected_at_both_levels() {
        // Appending would land inside [params.b]; top-level keys go first.
        let top = format!("extra = 1\n{CERTIFY_TOML}");
        assert!(parse_str(&top, false).unwrap_err().to_string().contains("extra"));
        let nested = CERTIFY_TOML.replace("kappa = 0.8", "kappa = 0.8\nkapa = 0.1");
        let err = parse_str(&nested, false).unwrap_err();
        assert!(err.to_string().contains("kapa"), "param-level typo should surface: {err}");
    }

    #[test]
    fn hash_survives_a_replay_round_trip() {
        let cfg = parse_str(CERTIFY_TOML, false).unwrap();
        let hash = config_hash(&cfg.spec, cfg.seed);
        let doc = replay_document(&cfg, &hash);
        let replayed = from_value(doc).expect("replay record is a valid config");
        assert_eq!(config_hash(&replayed.spec, replayed.seed), hash);
    }

    #[test]
    fn edited_replay_records_are_refused() {
        let cfg = parse_str(CERTIFY_TOML, false).unwrap();
        let hash = config_hash(&cfg.spec, cfg.seed);
        let mut doc = replay_document(&cfg, &hash);
        doc["seed"] = json!(1234);
        let err = from_value(doc).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("edited"), "got: {err}");
    }

    #[test]
    fn averaging_template_passes_core_validation() {
        let text = r#"
kind = "averaging"
seed = 3

[params]
epsilons = [0.1, 0.05]
n_paths = 4

[params.system]
hurst_slow = 0.7
hurst_fast = 0.6
sigma = [[1.0]]
x0 = [0.5]
y0 = [0.0]
t_horizon = 1.0
dt_slow = 0.015625

[params.system.f]
kind = "linear-sin"
a_x = -1.0
a_y = 1.0
sin_amp = 0.0

[params.system.g]
kind = "constant"
value = 1.0

[params.system.b]
kind = "mean-field"
rate = 1.0
map = "sin"
dim = 1

[params.averaged]
kind = "analytic"

[params.averaged.f_bar]
kind = "linear-sin"
a_x = -1.0
a_y = 0.0
sin_amp = 1.0

[params.averaged.g_bar]
kind = "constant"
value = 1.0
"#;
        let cfg = parse_str(text, false).expect("valid averaging config");
        validate(&cfg).expect("template validates");
        let ExperimentSpec::Averaging(p) = &cfg.spec else { panic!("wrong kind") };
        let template = p.system.template(&p.epsilons, cfg.seed).unwrap();
        // dt_fast honors the stiffness rule at the top rung.
        assert!(template.dt_fast <= 0.1 / 32.0 + 1e-15);
    }

    #[test]
    fn ladder_order_is_enforced_before_any_computation() {
        let text = r#"
kind = "averaging"
[params]
epsilons = [0.05, 0.1]
n_paths = 4
[params.system]
hurst_slow = 0.7
hurst_fast = 0.6
sigma = [[1.0]]
x0 = [0.5]
y0 = [0.0]
t_horizon = 1.0
dt_slow = 0.015625
[params.system.f]
kind = "linear-sin"
a_x = -1.0
a_y = 1.0
sin_amp = 0.0
[params.system.g]
kind = "constant"
value = 1.0
[params.system.b]
kind = "mean-field"
rate = 1.0
map = "sin"
dim = 1
[params.averaged]
kind = "analytic"
[params.averaged.f_bar]
kind = "zero"
[params.averaged.g_bar]
kind = "zero"
"#;
        let cfg = parse_str(text, false).expect("parses");
        let err = validate(&cfg).unwrap_err();
        assert!(err.to_string().contains("strictly decreasing"), "got: {err}");
    }
}
