//! Drift fields for the fast equation and numerical certification of the
//! contraction classes.
//!
//! A drift is "semi-contractive" with data (kappa, R, lambda) when
//! `<b(u)-b(v), u-v> <= -kappa |u-v|^2` whenever both points lie outside the
//! ball B_R, and `<= lambda |u-v|^2` otherwise. The weaker "large scale"
//! variant demands the contraction whenever at least one point is outside an
//! enlarged ball; [`enlarge_radius`] computes the radius trade constructively.
//!
//! Certification is sampling-based: low-discrepancy (Kronecker) pairs in a box
//! plus a deterministic grid near the critical sphere. Failures return witness
//! pairs, not just a flag.

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Coordinatewise map of the slow state used by the mean-field drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanFieldMap {
    Sin,
    Identity,
    Zero,
}

impl MeanFieldMap {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            MeanFieldMap::Sin => x.sin(),
            MeanFieldMap::Identity => x,
            MeanFieldMap::Zero => 0.0,
        }
    }

    fn lipschitz(self) -> f64 {
        match self {
            MeanFieldMap::Sin | MeanFieldMap::Identity => 1.0,
            MeanFieldMap::Zero => 0.0,
        }
    }
}

/// Drift field b(x, y) of the fast equation. All variants are deterministic
/// and side-effect free; x is ignored by the variants that do not model
/// feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftSpec {
    /// b(y) = -rate * y.
    Linear { rate: f64, dim_y: usize },
    /// b(x, y) = -rate * (y - m(x)), m applied coordinatewise; dim_x == dim_y.
    MeanField { rate: f64, map: MeanFieldMap, dim: usize },
    /// Negative gradient of a |y|^4 - b |y|^2 inside |y| <= rho, blended C^1
    /// over [rho, 5 rho / 4] to the linear field -kappa_out y with
    /// kappa_out = 6.25 a rho^2 - 2 b (the well's radial factor at the blend
    /// end, so the blended factor is monotone and the Jacobian globally
    /// bounded).
    DoubleWell { a: f64, b: f64, rho: f64, dim_y: usize },
    /// b(y) = y - y^3 coordinatewise. Only locally Lipschitz.
    Cubic { dim_y: usize },
    /// Tabulated scalar drift with linear interpolation between nodes and
    /// constant-slope extrapolation beyond them.
    Table { ys: Vec<f64>, values: Vec<f64> },
}

impl DriftSpec {
    pub fn dim_y(&self) -> usize {
        match self {
            DriftSpec::Linear { dim_y, .. }
            | DriftSpec::DoubleWell { dim_y, .. }
            | DriftSpec::Cubic { dim_y } => *dim_y,
            DriftSpec::MeanField { dim, .. } => *dim,
            DriftSpec::Table { .. } => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_y() == 0 {
            return Err(Error::parameter("drift dimension must be positive"));
        }
        match self {
            DriftSpec::Linear { rate, .. } | DriftSpec::MeanField { rate, .. } => {
                if !rate.is_finite() {
                    return Err(Error::parameter("drift rate must be finite"));
                }
            }
            DriftSpec::DoubleWell { a, b, rho, .. } => {
                if !(*a > 0.0) || *b < 0.0 || !(*rho > 0.0) {
                    return Err(Error::parameter("double-well needs a > 0, b >= 0, rho > 0"));
                }
                // The cutoff must lie beyond the wells so the radial factor
                // is already positive where the blend starts.
                if 4.0 * a * rho * rho - 2.0 * b <= 0.0 {
                    return Err(Error::parameter(format!(
                        "double-well cutoff rho = {rho} lies inside the wells (need rho^2 > b / (2a) = {})",
                        b / (2.0 * a)
                    )));
                }
            }
            DriftSpec::Cubic { .. } => {}
            DriftSpec::Table { ys, values } => {
                if ys.len() < 2 || ys.len() != values.len() {
                    return Err(Error::parameter("drift table needs >= 2 matching nodes"));
                }
                if ys.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::parameter("drift table nodes must increase strictly"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::parameter("drift table values must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Writes b(x, y) into `out` without dimension checks (callers validate
    /// once up front).
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            DriftSpec::Linear { rate, .. } => {
                for (o, yi) in out.iter_mut().zip(y) {
                    *o = -rate * yi;
                }
            }
            DriftSpec::MeanField { rate, map, .. } => {
                for ((o, yi), xi) in out.iter_mut().zip(y).zip(x) {
                    *o = -rate * (yi - map.apply(*xi));
                }
            }
            DriftSpec::DoubleWell { a, b, rho, .. } => {
                let r2: f64 = y.iter().map(|v| v * v).sum();
                let c = double_well_factor(r2.sqrt(), *a, *b, *rho);
                for (o, yi) in out.iter_mut().zip(y) {
                    *o = -c * yi;
                }
            }
            DriftSpec::Cubic { .. } => {
                for (o, yi) in out.iter_mut().zip(y) {
                    *o = yi - yi * yi * yi;
                }
            }
            DriftSpec::Table { ys, values } => {
                out[0] = table_eval(ys, values, y[0]);
            }
        }
    }

    /// Global Lipschitz bound in y, where one exists.
    pub fn global_lipschitz(&self) -> Option<f64> {
        match self {
            DriftSpec::Linear { rate, .. } => Some(rate.abs()),
            DriftSpec::MeanField { rate, map, .. } => Some(rate.abs() * 1.0f64.max(map.lipschitz())),
            DriftSpec::DoubleWell { a, b, rho, .. } => Some(double_well_lipschitz(*a, *b, *rho, 1.25 * rho)),
            DriftSpec::Cubic { .. } => None,
            DriftSpec::Table { ys, values } => Some(
                ys.windows(2)
                    .zip(values.windows(2))
                    .map(|(yw, vw)| ((vw[1] - vw[0]) / (yw[1] - yw[0])).abs())
                    .fold(0.0, f64::max),
            ),
        }
    }

    /// Lipschitz bound in y on the ball of the given radius.
    pub fn lipschitz_on_ball(&self, radius: f64) -> f64 {
        match self {
            DriftSpec::Cubic { .. } => 1.0f64.max(3.0 * radius * radius - 1.0),
            DriftSpec::DoubleWell { a, b, rho, .. } => double_well_lipschitz(*a, *b, *rho, radius),
            _ => self.global_lipschitz().expect("non-cubic drifts are globally Lipschitz"),
        }
    }
}

/// Radial factor c(r) with b(y) = -c(|y|) y for the blended double well.
/// kappa_out equals the well factor at the blend end 5 rho / 4, so both blend
/// terms grow: c is monotone over the shell (no expansive pocket) and C^1 at
/// both knots (the smoothstep has zero slope there).
fn double_well_factor(r: f64, a: f64, b: f64, rho: f64) -> f64 {
    let kappa_out = 6.25 * a * rho * rho - 2.0 * b;
    if r <= rho {
        4.0 * a * r * r - 2.0 * b
    } else if r >= 1.25 * rho {
        kappa_out
    } else {
        let s = (r - rho) / (0.25 * rho);
        let w = s * s * (3.0 - 2.0 * s);
        (1.0 - w) * (4.0 * a * r * r - 2.0 * b) + w * kappa_out
    }
}

/// Jacobian norm bound |c| + |c'| r scanned over a radius grid.
fn double_well_lipschitz(a: f64, b: f64, rho: f64, radius: f64) -> f64 {
    let top = radius.min(1.25 * rho);
    let n = 400;
    let h = top / n as f64;
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        let r = i as f64 * h;
        let c = double_well_factor(r, a, b, rho);
        let dc = if i == 0 || i == n {
            0.0
        } else {
            (double_well_factor(r + h, a, b, rho) - double_well_factor(r - h, a, b, rho)) / (2.0 * h)
        };
        worst = worst.max(c.abs() + dc.abs() * r);
    }
    worst
}

fn table_eval(ys: &[f64], values: &[f64], y: f64) -> f64 {
    let n = ys.len();
    if y <= ys[0] {
        let slope = (values[1] - values[0]) / (ys[1] - ys[0]);
        return values[0] + slope * (y - ys[0]);
    }
    if y >= ys[n - 1] {
        let slope = (values[n - 1] - values[n - 2]) / (ys[n - 1] - ys[n - 2]);
        return values[n - 1] + slope * (y - ys[n - 1]);
    }
    let k = ys.partition_point(|v| *v <= y) - 1;
    let w = (y - ys[k]) / (ys[k + 1] - ys[k]);
    values[k] + w * (values[k + 1] - values[k])
}

/// Evaluates b(x, y) with dimension checks.
pub fn evaluate_drift(b: &DriftSpec, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    b.validate()?;
    if y.len() != b.dim_y() {
        return Err(Error::DimensionMismatch { expected: b.dim_y(), got: y.len() });
    }
    if let DriftSpec::MeanField { dim, .. } = b {
        if x.len() != *dim {
            return Err(Error::DimensionMismatch { expected: *dim, got: x.len() });
        }
    }
    let mut out = vec![0.0; b.dim_y()];
    b.eval_unchecked(x, y, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::parameter("drift evaluated to a nonfinite value"));
    }
    Ok(out)
}

/// Which pairs a certificate constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairRegime {
    /// The defining class: contract when both points are outside B_R, expand
    /// at most at rate lambda otherwise.
    BothOutside,
    /// The enlarged-radius variant: contract whenever at least one point is
    /// outside B_R; pairs fully inside are unconstrained.
    OneOutside,
}

/// Witness pair of a failed contraction inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub margin: f64,
}

/// Outcome of a sampling-based contraction check. A failing certificate is a
/// valid output; `violations` holds every witness found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractivityCertificate {
    pub kappa: f64,
    pub r: f64,
    pub lambda: f64,
    pub regime: PairRegime,
    pub n_samples: usize,
    /// Smallest slack (rhs - lhs) over all constrained pairs; >= 0 iff no
    /// violations, up to the recorded floating-point allowance.
    pub worst_margin: f64,
    pub violations: Vec<ViolationPair>,
    pub box_radius: f64,
    pub seed: u64,
    pub scheme: String,
    pub frozen_x: Vec<f64>,
}

impl ContractivityCertificate {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Kronecker (R_d) low-discrepancy direction vector: powers of the unique
/// positive root of x^{d+1} = x + 1.
fn kronecker_alphas(d: usize) -> Vec<f64> {
    let mut phi = 1.5f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    let mut alphas = Vec::with_capacity(d);
    let mut a = 1.0;
    for _ in 0..d {
        a /= phi;
        alphas.push(a);
    }
    alphas
}

/// Checks the contraction inequality for `b` frozen at slow state `x` over
/// quasi-random pairs in the centered box of radius `box_radius`, plus a
/// deterministic grid of pairs straddling the critical sphere |y| = r.
#[allow(clippy::too_many_arguments)]
pub fn check_semi_contractive(
    b: &DriftSpec,
    x: &[f64],
    kappa: f64,
    r: f64,
    lambda: f64,
    regime: PairRegime,
    n_samples: usize,
    box_radius: f64,
    seed: u64,
) -> Result<ContractivityCertificate> {
    b.validate()?;
    if n_samples == 0 {
        return Err(Error::parameter("n_samples must be >= 1"));
    }
    if !(box_radius > r) {
        return Err(Error::parameter("box_radius must exceed the critical radius"));
    }
    if !(kappa > 0.0) || r < 0.0 || lambda < 0.0 {
        return Err(Error::parameter("need kappa > 0, r >= 0, lambda >= 0"));
    }
    let d = b.dim_y();
    let alphas = kronecker_alphas(2 * d);
    let mut rng = stream_rng(seed, 0);
    let offsets: Vec<f64> = (0..2 * d).map(|_| rng.gen::<f64>()).collect();

    let mut bu = vec![0.0; d];
    let mut bv = vec![0.0; d];
    let mut worst = f64::INFINITY;
    let mut violations = Vec::new();
    let mut evaluated = 0usize;

    let check_pair = |u: &[f64],
                          v: &[f64],
                          bu: &mut [f64],
                          bv: &mut [f64],
                          worst: &mut f64,
                          violations: &mut Vec<ViolationPair>,
                          evaluated: &mut usize| {
        let nu = u.iter().map(|t| t * t).sum::<f64>().sqrt();
        let nv = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        let gap2: f64 = u.iter().zip(v).map(|(a, c)| (a - c) * (a - c)).sum();
        let rhs = match regime {
            PairRegime::BothOutside => {
                if nu >= r && nv >= r {
                    -kappa * gap2
                } else {
                    lambda * gap2
                }
            }
            PairRegime::OneOutside => {
                if nu.max(nv) > r {
                    -kappa * gap2
                } else {
                    return; // unconstrained pair
                }
            }
        };
        b.eval_unchecked(x, u, bu);
        b.eval_unchecked(x, v, bv);
        let lhs: f64 = bu.iter().zip(bv.iter()).zip(u.iter().zip(v)).map(|((a, c), (p, q))| (a - c) * (p - q)).sum();
        let margin = rhs - lhs;
        *evaluated += 1;
        if margin < *worst {
            *worst = margin;
        }
        // Floating-point allowance scaled to the pair's magnitude; boundary
        // cases that are exactly tight must not read as violations.
        let tol = 1e-10 * (1.0 + gap2) * (1.0 + kappa.max(lambda));
        if margin < -tol {
            violations.push(ViolationPair { u: u.to_vec(), v: v.to_vec(), margin });
        }
    };

    let mut u = vec![0.0; d];
    let mut v = vec![0.0; d];
    for k in 0..n_samples {
        for i in 0..d {
            let t = (offsets[i] + (k as f64 + 1.0) * alphas[i]).fract();
            u[i] = box_radius * (2.0 * t - 1.0);
            let t2 = (offsets[d + i] + (k as f64 + 1.0) * alphas[d + i]).fract();
            v[i] = box_radius * (2.0 * t2 - 1.0);
        }
        check_pair(&u, &v, &mut bu, &mut bv, &mut worst, &mut violations, &mut evaluated);
    }

    // Boundary grid: pairs on and just off the critical sphere, where the
    // regime switches. Directions are deterministic low-discrepancy points
    // pushed to the sphere.
    if r > 0.0 {
        let radii: Vec<f64> = [0.96, 1.0, 1.04].iter().map(|f| f * r).collect();
        let dirs = sphere_directions(d, 8);
        for du in &dirs {
            for dv in &dirs {
                for ru in &radii {
                    for rv in &radii {
                        for i in 0..d {
                            u[i] = ru * du[i];
                            v[i] = rv * dv[i];
                        }
                        if u == v {
                            continue;
                        }
                        check_pair(&u, &v, &mut bu, &mut bv, &mut worst, &mut violations, &mut evaluated);
                    }
                }
            }
        }
    }

    Ok(ContractivityCertificate {
        kappa,
        r,
        lambda,
        regime,
        n_samples: evaluated,
        worst_margin: if worst.is_finite() { worst } else { 0.0 },
        violations,
        box_radius,
        seed,
        scheme: "kronecker-box pairs + critical-sphere grid, fp allowance 1e-10 scaled".into(),
        frozen_x: x.to_vec(),
    })
}

/// Deterministic unit directions: +-e_i axes plus normalized Kronecker cube
/// points.
fn sphere_directions(d: usize, extra: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..d {
        let mut plus = vec![0.0; d];
        plus[i] = 1.0;
        let mut minus = vec![0.0; d];
        minus[i] = -1.0;
        dirs.push(plus);
        dirs.push(minus);
    }
    if d > 1 {
        let alphas = kronecker_alphas(d);
        for k in 0..extra {
            let mut p: Vec<f64> = (0..d)
                .map(|i| 2.0 * ((k as f64 + 1.0) * alphas[i] + 0.37).fract() - 1.0)
                .collect();
            let norm = p.iter().map(|t| t * t).sum::<f64>().sqrt();
            if norm > 1e-6 {
                p.iter_mut().for_each(|t| *t /= norm);
                dirs.push(p);
            }
        }
    }
    dirs
}

/// Smallest 0.01-grid radius R-bar >= R + 1 such that contraction at rate
/// kappa outside B_R survives (at the reduced rate kappa_bar) whenever one
/// point of the pair is outside B_R-bar. `lip_on_ball` is the Lipschitz bound
/// of the drift on B_{R+1}.
pub fn enlarge_radius(kappa: f64, kappa_bar: f64, r: f64, lip_on_ball: f64) -> Result<f64> {
    if !(kappa > 0.0) || lip_on_ball < 0.0 || r < 0.0 {
        return Err(Error::parameter("need kappa > 0, r >= 0, lip_on_ball >= 0"));
    }
    if !(kappa_bar > 0.0 && kappa_bar < kappa) {
        return Err(Error::parameter(format!(
            "kappa_bar must lie in (0, kappa): got {kappa_bar} with kappa {kappa}"
        )));
    }
    let beta_star = (kappa_bar + lip_on_ball) / (kappa + lip_on_ball);
    let exact = (r + 1.0 + beta_star * r) / (1.0 - beta_star);
    let floor = (r + 1.0).max(exact);
    Ok((floor * 100.0).ceil() / 100.0)
}

/// Off-diagonal constant D = (kappa_tilde + lambda) (2 R-bar)^2, the uniform
/// bound absorbing pairs inside the enlarged ball.
pub fn offdiagonal_constants(kappa_tilde: f64, lambda: f64, r_bar: f64) -> f64 {
    (kappa_tilde + lambda) * (2.0 * r_bar) * (2.0 * r_bar)
}
