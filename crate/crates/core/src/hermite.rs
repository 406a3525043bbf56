//! Piecewise cubic Hermite tracks with vector values. Used both for the
//! state history function and for dense storage of integrated trajectories.

use crate::error::{Error, Result};
use crate::util::cell_index;

#[derive(Debug, Clone)]
pub struct CubicHermite {
    t: Vec<f64>,
    v: Vec<Vec<f64>>,
    /// left-sided slopes, used at a segment's right end
    dl: Vec<Vec<f64>>,
    /// right-sided slopes, used at a segment's left end
    dr: Vec<Vec<f64>>,
}

impl CubicHermite {
    pub fn new(t: Vec<f64>, v: Vec<Vec<f64>>, d: Vec<Vec<f64>>) -> Result<Self> {
        let dl = d.clone();
        CubicHermite::with_sided_slopes(t, v, dl, d)
    }

    /// Track with possibly different one-sided slopes at the nodes, for
    /// trajectories whose derivative jumps at control-cell boundaries.
    pub fn with_sided_slopes(
        t: Vec<f64>,
        v: Vec<Vec<f64>>,
        dl: Vec<Vec<f64>>,
        dr: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if t.len() < 2 || t.len() != v.len() || t.len() != dl.len() || t.len() != dr.len() {
            return Err(Error::invalid("hermite track needs matching arrays"));
        }
        let dim = v[0].len();
        if v.iter().any(|r| r.len() != dim)
            || dl.iter().any(|r| r.len() != dim)
            || dr.iter().any(|r| r.len() != dim)
        {
            return Err(Error::invalid("hermite track dimension mismatch"));
        }
        for i in 1..t.len() {
            if t[i] <= t[i - 1] {
                return Err(Error::invalid("hermite breakpoints must increase"));
            }
        }
        Ok(CubicHermite { t, v, dl, dr })
    }

    /// Constant track over `[a, b]`.
    pub fn constant(a: f64, b: f64, value: Vec<f64>) -> Self {
        let dim = value.len();
        CubicHermite {
            t: vec![a, b],
            v: vec![value.clone(), value],
            dl: vec![vec![0.0; dim], vec![0.0; dim]],
            dr: vec![vec![0.0; dim], vec![0.0; dim]],
        }
    }

    pub fn dim(&self) -> usize {
        self.v[0].len()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.t[0], *self.t.last().unwrap())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.t
    }

    pub fn node_values(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Right-sided node slopes.
    pub fn node_slopes(&self) -> &[Vec<f64>] {
        &self.dr
    }

    pub fn end_value(&self) -> &[f64] {
        self.v.last().unwrap()
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        self.eval_with_slope(x).0
    }

    /// Value and derivative. At interior breakpoints the shared slope makes
    /// the track C1, so the one-sided convention is invisible there.
    pub fn eval_with_slope(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = self.domain();
        let x = x.clamp(a, b);
        let i = cell_index(&self.t, x);
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let dt = t1 - t0;
        let s = (x - t0) / dt;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let g00 = (6.0 * s2 - 6.0 * s) / dt;
        let g01 = (-6.0 * s2 + 6.0 * s) / dt;
        let g10 = 3.0 * s2 - 4.0 * s + 1.0;
        let g11 = 3.0 * s2 - 2.0 * s;
        let n = self.dim();
        let mut val = vec![0.0; n];
        let mut slope = vec![0.0; n];
        for k in 0..n {
            let (p0, p1) = (self.v[i][k], self.v[i + 1][k]);
            let (m0, m1) = (self.dr[i][k], self.dl[i + 1][k]);
            val[k] = h00 * p0 + h10 * m0 * dt + h01 * p1 + h11 * m1 * dt;
            slope[k] = g00 * p0 + g10 * m0 + g01 * p1 + g11 * m1;
        }
        (val, slope)
    }

    pub fn eval_checked(&self, x: f64, tol: f64) -> Result<Vec<f64>> {
        let (a, b) = self.domain();
        if x < a - tol || x > b + tol {
            return Err(Error::invalid(format!(
                "argument {x} outside [{a}, {b}]"
            )));
        }
        Ok(self.eval(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_nodes_exactly() {
        let h = CubicHermite::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![1.0], vec![3.0], vec![2.0]],
            vec![vec![0.5], vec![-1.0], vec![0.0]],
        )
        .unwrap();
        assert_eq!(h.eval(0.0), vec![1.0]);
        assert_eq!(h.eval(1.0), vec![3.0]);
        assert_eq!(h.eval(2.0), vec![2.0]);
    }

    #[test]
    fn constant_track() {
        let h = CubicHermite::constant(-1.0, 0.0, vec![4.0, 5.0]);
        let (v, d) = h.eval_with_slope(-0.3);
        assert_eq!(v, vec![4.0, 5.0]);
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_segment_slope() {
        // value 1+t on [-1, 0]
        let h = CubicHermite::new(
            vec![-1.0, 0.0],
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        let (v, d) = h.eval_with_slope(-0.5);
        assert!((v[0] - 0.5).abs() < 1e-15);
        assert!((d[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let h = CubicHermite::new(
            vec![0.0, 0.7, 1.3, 2.0],
            vec![vec![0.2], vec![-0.4], vec![0.9], vec![0.1]],
            vec![vec![1.0], vec![0.3], vec![-2.0], vec![0.5]],
        )
        .unwrap();
        for k in 1..20 {
            let x = 0.05 + k as f64 * 0.096;
            let (_, d) = h.eval_with_slope(x);
            let e = 1e-6;
            let fd = (h.eval(x + e)[0] - h.eval(x - e)[0]) / (2.0 * e);
            assert!((d[0] - fd).abs() < 1e-6, "at {x}: {d:?} vs {fd}");
        }
    }
}
