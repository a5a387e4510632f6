//! Path seminorms: the weighted-derivative seminorm
//! `sup_{t>=1} t^alpha |f'(t)| + sup_{t>=1} t^{1+alpha} |f''(t)|`
//! for paths smooth away from the origin, and the Holder quotient
//! `sup |f(t)-f(s)| / |t-s|^alpha`.

use crate::error::{Error, Result};
use crate::path::SamplePath;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SeminormKind {
    Holder { alpha: f64 },
    Omega { alpha: f64 },
}

/// Where the supremum was attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SeminormArg {
    Time(f64),
    Pair(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminormReport {
    pub kind: SeminormKind,
    pub value: f64,
    pub arg: SeminormArg,
}

/// Weighted-derivative seminorm over `t >= 1`, derivatives by second-order
/// central differences, boundary points excluded. The path must extend beyond
/// t = 1. `arg` is the grid time of the larger of the two weighted sups.
pub fn omega_seminorm(path: &SamplePath, alpha: f64) -> Result<SeminormReport> {
    let n = path.n_points();
    let dt = path.dt;
    if path.t_end() <= 1.0 {
        return Err(Error::SeminormUndefined(format!(
            "path ends at t = {} but the seminorm involves t >= 1 only",
            path.t_end()
        )));
    }
    let mut sup_d1 = 0.0f64;
    let mut arg_d1 = 1.0;
    let mut sup_d2 = 0.0f64;
    let mut arg_d2 = 1.0;
    for i in 1..n - 1 {
        let t = path.time(i);
        if t < 1.0 {
            continue;
        }
        let mut d1_sq = 0.0;
        let mut d2_sq = 0.0;
        for c in 0..path.dim {
            let prev = path.row(i - 1)[c];
            let here = path.row(i)[c];
            let next = path.row(i + 1)[c];
            let d1 = (next - prev) / (2.0 * dt);
            let d2 = (next - 2.0 * here + prev) / (dt * dt);
            d1_sq += d1 * d1;
            d2_sq += d2 * d2;
        }
        let w1 = t.powf(alpha) * d1_sq.sqrt();
        let w2 = t.powf(1.0 + alpha) * d2_sq.sqrt();
        if w1 > sup_d1 {
            sup_d1 = w1;
            arg_d1 = t;
        }
        if w2 > sup_d2 {
            sup_d2 = w2;
            arg_d2 = t;
        }
    }
    Ok(SeminormReport {
        kind: SeminormKind::Omega { alpha },
        value: sup_d1 + sup_d2,
        arg: SeminormArg::Time(if sup_d1 >= sup_d2 { arg_d1 } else { arg_d2 }),
    })
}

/// Holder quotient over grid pairs. Exact over all pairs for paths of up to
/// 2048 points; above that, strides are subsampled geometrically (ratio 5/4)
/// beyond `stride_cap` while every offset up to `stride_cap` stays exact.
pub fn holder_seminorm(path: &SamplePath, alpha: f64, stride_cap: usize) -> Result<SeminormReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::parameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let n = path.n_points();
    let dt = path.dt;
    let strides: Vec<usize> = if n <= 2048 {
        (1..n).collect()
    } else {
        let mut s = Vec::new();
        let mut k = 1usize;
        while k < n {
            s.push(k);
            k = if k < stride_cap.max(1) { k + 1 } else { (k * 5 / 4).max(k + 1) };
        }
        s
    };
    let mut sup = 0.0f64;
    let mut arg = (path.time(0), path.time(0));
    for &s in &strides {
        let denom = (s as f64 * dt).powf(alpha);
        for i in 0..n - s {
            let mut diff_sq = 0.0;
            for c in 0..path.dim {
                let d = path.row(i + s)[c] - path.row(i)[c];
                diff_sq += d * d;
            }
            let q = diff_sq.sqrt() / denom;
            if q > sup {
                sup = q;
                arg = (path.time(i), path.time(i + s));
            }
        }
    }
    Ok(SeminormReport {
        kind: SeminormKind::Holder { alpha },
        value: sup,
        arg: SeminormArg::Pair(arg.0, arg.1),
    })
}
