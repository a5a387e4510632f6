use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};

/// Magic bytes of the binary path record.
pub const PATH_MAGIC: &[u8; 6] = b"FPATH1";

/// A uniformly sampled trajectory of a vector-valued process.
///
/// `values` is row-major `n_points x dim`; the grid time of row `i` is
/// `t0 + i * dt`, always computed as that product and never by repeated
/// addition, so the grid carries no accumulated floating-point drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub t0: f64,
    pub dt: f64,
    pub dim: usize,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(t0: f64, dt: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::parameter(format!("dt must be finite and > 0, got {dt}")));
        }
        if dim == 0 {
            return Err(Error::parameter("dim must be >= 1"));
        }
        if values.is_empty() || values.len() % dim != 0 {
            return Err(Error::parameter(format!(
                "values length {} is not a positive multiple of dim {}",
                values.len(),
                dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter("values must all be finite"));
        }
        Ok(SamplePath { t0, dt, dim, values })
    }

    /// Scalar path helper.
    pub fn scalar(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        SamplePath::new(t0, dt, 1, values)
    }

    pub fn n_points(&self) -> usize {
        self.values.len() / self.dim
    }

    /// Grid time of index `i`, exactly `t0 + i * dt`.
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Final grid time.
    pub fn t_end(&self) -> f64 {
        self.time(self.n_points() - 1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Scalar value at index `i`; the path must be one-dimensional.
    pub fn at(&self, i: usize) -> f64 {
        debug_assert_eq!(self.dim, 1, "at() requires a scalar path");
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column `c` as a fresh vector.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_points()).map(|i| self.row(i)[c]).collect()
    }

    /// Increment row(i+1) - row(i).
    pub fn increment(&self, i: usize) -> Vec<f64> {
        self.row(i + 1)
            .iter()
            .zip(self.row(i))
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Index of the grid point at time `t`, requiring `t` to lie on the grid
    /// within a relative tolerance of one part in 1e6 of dt.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = (t - self.t0) / self.dt;
        let i = x.round();
        if (x - i).abs() > 1e-6 || i < 0.0 || (i as usize) >= self.n_points() {
            return Err(Error::GridMismatch(format!(
                "time {t} is not a grid point of (t0={}, dt={}, n={})",
                self.t0,
                self.dt,
                self.n_points()
            )));
        }
        Ok(i as usize)
    }

    /// All-zero path, e.g. a switched-off noise input.
    pub fn zeros(t0: f64, dt: f64, dim: usize, n_points: usize) -> Result<Self> {
        SamplePath::new(t0, dt, dim, vec![0.0; dim * n_points])
    }

    /// Window `[i0, i1]` (inclusive) as a path starting at `time(i0)`.
    /// Values are copied verbatim, so increments match the parent bitwise.
    pub fn slice(&self, i0: usize, i1: usize) -> Result<Self> {
        if i0 >= i1 || i1 >= self.n_points() {
            return Err(Error::parameter(format!(
                "slice [{i0}, {i1}] not inside 0..{}",
                self.n_points()
            )));
        }
        SamplePath::new(
            self.time(i0),
            self.dt,
            self.dim,
            self.values[i0 * self.dim..(i1 + 1) * self.dim].to_vec(),
        )
    }

    /// Every `stride`-th row: the same realization viewed on a grid coarsened
    /// by `stride`. Requires the step count to be divisible by `stride`.
    pub fn restride(&self, stride: usize) -> Result<Self> {
        let steps = self.n_points() - 1;
        if stride == 0 || steps % stride != 0 {
            return Err(Error::GridMismatch(format!(
                "stride {stride} does not divide {steps} steps"
            )));
        }
        let mut values = Vec::with_capacity((steps / stride + 1) * self.dim);
        for i in (0..=steps).step_by(stride) {
            values.extend_from_slice(self.row(i));
        }
        SamplePath::new(self.t0, self.dt * stride as f64, self.dim, values)
    }

    /// Writes `t, v_1..v_dim` rows. Floats are serialized with enough digits to
    /// round-trip exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t")?;
        for c in 0..self.dim {
            write!(w, ",v_{}", c + 1)?;
        }
        writeln!(w)?;
        for i in 0..self.n_points() {
            write!(w, "{}", fmt_f64(self.time(i)))?;
            for v in self.row(i) {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Binary record: magic "FPATH1", then dim, n (u64 little-endian), then
    /// t0, dt and the row-major values as little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(PATH_MAGIC)?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.n_points() as u64).to_le_bytes())?;
        w.write_all(&self.t0.to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        read_exact(&mut r, &mut magic)?;
        if &magic != PATH_MAGIC {
            return Err(Error::parameter("bad magic in binary path record"));
        }
        let dim = read_u64(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let t0 = read_f64(&mut r)?;
        let dt = read_f64(&mut r)?;
        let mut values = vec![0.0; n.checked_mul(dim).ok_or_else(|| Error::parameter("path record too large"))?];
        for v in values.iter_mut() {
            *v = read_f64(&mut r)?;
        }
        SamplePath::new(t0, dt, dim, values)
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    // Shortest representation that parses back to the same bits.
    let mut s = format!("{v}");
    if s.parse::<f64>() != Ok(v) {
        s = format!("{v:.17e}");
    }
    s
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::parameter(format!("truncated binary path record: {e}")))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_times_have_no_accumulated_drift() {
        let n = 1_000_000usize;
        let dt = 0.1;
        let p = SamplePath::scalar(0.0, dt, vec![0.0; n]).unwrap();
        // Repeated addition of 0.1 drifts by ~1e-9 over 1e6 steps; the grid
        // formula must stay at one multiplication's rounding.
        let direct = (n as f64 - 1.0) * dt;
        assert_eq!(p.t_end(), direct);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SamplePath::scalar(0.0, 0.0, vec![1.0]).is_err());
        assert!(SamplePath::scalar(0.0, -1.0, vec![1.0]).is_err());
        assert!(SamplePath::scalar(0.0, 1.0, vec![]).is_err());
        assert!(SamplePath::scalar(0.0, 1.0, vec![f64::NAN]).is_err());
        assert!(SamplePath::new(0.0, 1.0, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let p = SamplePath::new(0.25, 0.125, 2, vec![0.1, -0.2, 3.5e-13, 4.0, 5.0, -6.25]).unwrap();
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        let q = SamplePath::read_binary(&buf[..]).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let p = SamplePath::new(0.0, 0.5, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "t,v_1,v_2");
        assert_eq!(lines[1], "0,1,2");
        assert_eq!(lines[2], "0.5,3,4");
    }

    #[test]
    fn slice_and_restride_preserve_values_bitwise() {
        let vals: Vec<f64> = (0..9).map(|i| (i as f64 * 0.77).sin()).collect();
        let p = SamplePath::scalar(0.0, 0.25, vals.clone()).unwrap();
        let w = p.slice(2, 6).unwrap();
        assert_eq!(w.t0, 0.5);
        assert_eq!(w.values(), &vals[2..7]);
        let c = p.restride(4).unwrap();
        assert_eq!(c.dt, 1.0);
        assert_eq!(c.values(), &[vals[0], vals[4], vals[8]]);
        assert!(p.restride(3).is_err(), "stride must divide the step count");
    }

    #[test]
    fn index_of_accepts_grid_points_only() {
        let p = SamplePath::scalar(1.0, 0.25, vec![0.0; 9]).unwrap();
        assert_eq!(p.index_of(1.75).unwrap(), 3);
        assert!(p.index_of(1.8).is_err());
        assert!(p.index_of(10.0).is_err());
    }
}
