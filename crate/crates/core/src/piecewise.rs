//! Piecewise-linear building blocks: monotone time changes with jumps and
//! their right inverses, and continuous vector-valued paths.

use crate::error::{Error, Result};
use crate::util::cell_index;

/// Monotone nondecreasing function on an interval, linear between nodes, with
/// possible jump discontinuities at the nodes.
///
/// Conventions match the usual ones for distribution-style functions: the
/// function is right continuous on the open interval, its value at the left
/// endpoint is the pre-jump value and at the right endpoint the post-jump
/// value. `lo[i]`/`hi[i]` store the left/right limits at node `t[i]`; the
/// graph is the segment from `(t[i], hi[i])` to `(t[i+1], lo[i+1])`.
#[derive(Debug, Clone)]
pub struct Monotone {
    t: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Monotone {
    pub fn with_jumps(t: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if t.len() < 2 || t.len() != lo.len() || t.len() != hi.len() {
            return Err(Error::invalid("monotone function needs matching node arrays"));
        }
        for i in 0..t.len() {
            if !t[i].is_finite() || !lo[i].is_finite() || !hi[i].is_finite() {
                return Err(Error::invalid("non-finite node in monotone function"));
            }
            if hi[i] < lo[i] {
                return Err(Error::invalid(format!(
                    "downward jump at t={}: {} -> {}",
                    t[i], lo[i], hi[i]
                )));
            }
            if i + 1 < t.len() {
                if t[i + 1] <= t[i] {
                    return Err(Error::invalid("node abscissae must be strictly increasing"));
                }
                if lo[i + 1] < hi[i] {
                    return Err(Error::invalid(format!(
                        "decreasing segment after t={}: {} -> {}",
                        t[i],
                        hi[i],
                        lo[i + 1]
                    )));
                }
            }
        }
        Ok(Monotone { t, lo, hi })
    }

    /// Continuous piecewise-linear monotone function through `(t[i], v[i])`.
    pub fn continuous(t: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let lo = v.clone();
        Monotone::with_jumps(t, lo, v)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.t[0], *self.t.last().unwrap())
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo[0], *self.hi.last().unwrap())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.t
    }

    fn clamp_check(&self, x: f64, tol: f64) -> Result<f64> {
        let (a, b) = self.domain();
        if x < a - tol || x > b + tol {
            return Err(Error::invalid(format!(
                "argument {x} outside domain [{a}, {b}]"
            )));
        }
        Ok(x.clamp(a, b))
    }

    /// Function value with the endpoint conventions described above.
    pub fn value(&self, x: f64) -> f64 {
        let (a, b) = self.domain();
        let x = x.clamp(a, b);
        if x == a {
            return self.lo[0];
        }
        if x == b {
            return *self.hi.last().unwrap();
        }
        let i = cell_index(&self.t, x);
        if x == self.t[i] {
            return self.hi[i];
        }
        self.segment_at(i, x)
    }

    /// Left limit at `x` (equals the value at the left endpoint).
    pub fn left_limit(&self, x: f64) -> f64 {
        let (a, b) = self.domain();
        let x = x.clamp(a, b);
        if x == a {
            return self.lo[0];
        }
        let i = cell_index(&self.t, x);
        if x == self.t[i] {
            return self.lo[i];
        }
        if i + 1 < self.t.len() && x == self.t[i + 1] {
            return self.lo[i + 1];
        }
        self.segment_at(i, x)
    }

    /// Right limit at `x` (equals the value at the right endpoint).
    pub fn right_limit(&self, x: f64) -> f64 {
        let (a, b) = self.domain();
        let x = x.clamp(a, b);
        if x == b {
            return *self.hi.last().unwrap();
        }
        let i = cell_index(&self.t, x);
        if x == self.t[i] {
            return self.hi[i];
        }
        self.segment_at(i, x)
    }

    fn segment_at(&self, i: usize, x: f64) -> f64 {
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let (v0, v1) = (self.hi[i], self.lo[i + 1]);
        let w = (x - t0) / (t1 - t0);
        v0 + w * (v1 - v0)
    }

    /// Jump discontinuities `(t, pre, post)` with `post > pre`, including the
    /// endpoint jumps seen only as limits.
    pub fn jumps(&self) -> Vec<(f64, f64, f64)> {
        self.t
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .filter(|(_, (l, h))| *h > *l)
            .map(|(&t, (&l, &h))| (t, l, h))
            .collect()
    }

    /// Maximal intervals `(t_start, t_end, value)` on which the function is
    /// constant, scanning flat segments.
    pub fn plateaus(&self) -> Vec<(f64, f64, f64)> {
        let mut out: Vec<(f64, f64, f64)> = Vec::new();
        for i in 0..self.t.len() - 1 {
            if self.lo[i + 1] == self.hi[i] {
                let (s, e, v) = (self.t[i], self.t[i + 1], self.hi[i]);
                match out.last_mut() {
                    Some(last) if last.1 == s && last.2 == v => last.1 = e,
                    _ => out.push((s, e, v)),
                }
            }
        }
        out
    }

    pub fn is_continuous(&self, tol: f64) -> bool {
        self.lo.iter().zip(&self.hi).all(|(l, h)| h - l <= tol)
    }

    /// Right inverse `B(s) = inf{t : A(t) > s}` with the endpoint conventions
    /// `B(range.0) = domain.0`, `B(range.1) = domain.1`. Jumps of `A` become
    /// plateaus of `B` and plateaus of `A` become jumps of `B`; the
    /// construction is exact on the piecewise-linear representation.
    pub fn right_inverse(&self) -> Monotone {
        let n = self.t.len();
        let mut bt: Vec<f64> = Vec::with_capacity(2 * n);
        let mut blo: Vec<f64> = Vec::with_capacity(2 * n);
        let mut bhi: Vec<f64> = Vec::with_capacity(2 * n);
        let push = |s: f64, tl: f64, th: f64, bt: &mut Vec<f64>, blo: &mut Vec<f64>, bhi: &mut Vec<f64>| {
            if let Some(&last) = bt.last() {
                if last == s {
                    let k = bt.len() - 1;
                    blo[k] = blo[k].min(tl);
                    bhi[k] = bhi[k].max(th);
                    return;
                }
            }
            bt.push(s);
            blo.push(tl);
            bhi.push(th);
        };
        for i in 0..n {
            // jump of A at t[i] -> plateau of B over the skipped values
            if self.hi[i] > self.lo[i] {
                push(self.lo[i], self.t[i], self.t[i], &mut bt, &mut blo, &mut bhi);
                push(self.hi[i], self.t[i], self.t[i], &mut bt, &mut blo, &mut bhi);
            } else {
                push(self.lo[i], self.t[i], self.t[i], &mut bt, &mut blo, &mut bhi);
            }
            if i + 1 < n && self.lo[i + 1] == self.hi[i] {
                // plateau of A -> jump of B at the shared value
                push(self.hi[i], self.t[i], self.t[i + 1], &mut bt, &mut blo, &mut bhi);
            }
        }
        Monotone {
            t: bt,
            lo: blo,
            hi: bhi,
        }
    }

    /// Checked evaluation used where out-of-domain arguments are user errors.
    pub fn value_checked(&self, x: f64, tol: f64) -> Result<f64> {
        Ok(self.value(self.clamp_check(x, tol)?))
    }
}

/// Continuous (up to explicit duplicate nodes) piecewise-linear path with
/// values in R^d. A repeated abscissa encodes a jump; evaluation is then
/// right continuous.
#[derive(Debug, Clone)]
pub struct PwlCurve {
    s: Vec<f64>,
    v: Vec<Vec<f64>>,
}

impl PwlCurve {
    pub fn new(s: Vec<f64>, v: Vec<Vec<f64>>) -> Result<Self> {
        if s.len() != v.len() || s.len() < 2 {
            return Err(Error::invalid("path needs matching node/value arrays"));
        }
        let dim = v[0].len();
        for w in &s {
            if !w.is_finite() {
                return Err(Error::invalid("non-finite path node"));
            }
        }
        for i in 1..s.len() {
            if s[i] < s[i - 1] {
                return Err(Error::invalid("path nodes must be nondecreasing"));
            }
        }
        if v.iter().any(|row| row.len() != dim) {
            return Err(Error::invalid("inconsistent path value dimension"));
        }
        Ok(PwlCurve { s, v })
    }

    pub fn dim(&self) -> usize {
        self.v[0].len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.s
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.s[0], *self.s.last().unwrap())
    }

    pub fn end_value(&self) -> &[f64] {
        self.v.last().unwrap()
    }

    /// Right-continuous evaluation.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let (a, b) = self.domain();
        let x = x.clamp(a, b);
        // last node with s <= x
        let mut i = match self
            .s
            .binary_search_by(|n| n.partial_cmp(&x).unwrap())
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        // skip to the last duplicate (right continuity at jumps)
        while i + 1 < self.s.len() && self.s[i + 1] == x {
            i += 1;
        }
        if i + 1 >= self.s.len() {
            return self.v.last().unwrap().clone();
        }
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        if s1 == s0 || x == s0 {
            return self.v[i].clone();
        }
        let w = (x - s0) / (s1 - s0);
        self.v[i]
            .iter()
            .zip(&self.v[i + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_with_jump() -> Monotone {
        // t on [0,1], jump at 0.5 from 0.5 to 2.5, then linear to 3
        Monotone::with_jumps(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.5, 3.0],
            vec![0.0, 2.5, 3.0],
        )
        .unwrap()
    }

    #[test]
    fn identity_inverse() {
        let a = Monotone::continuous(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let b = a.right_inverse();
        for k in 0..=10 {
            let s = k as f64 / 10.0;
            assert!((b.value(s) - s).abs() < 1e-15);
        }
    }

    #[test]
    fn jump_becomes_plateau() {
        let a = step_with_jump();
        let b = a.right_inverse();
        assert!((b.value(0.3) - 0.3).abs() < 1e-15);
        assert!((b.value(0.5) - 0.5).abs() < 1e-15);
        assert!((b.value(1.7) - 0.5).abs() < 1e-15);
        assert!((b.value(2.5) - 0.5).abs() < 1e-15);
        assert!((b.value(2.75) - 0.75).abs() < 1e-15);
        assert!((b.value(3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn plateau_becomes_jump() {
        // rises to 1 on [0, 0.5], flat on [0.5, 1], rises to 2 on [1, 1.5]
        let a = Monotone::continuous(vec![0.0, 0.5, 1.0, 1.5], vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        let b = a.right_inverse();
        assert!((b.left_limit(1.0) - 0.5).abs() < 1e-15);
        assert!((b.value(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(b.jumps().len(), 1);
        // paper example: one jump flattens
        let a2 = Monotone::with_jumps(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.5, 3.0],
            vec![0.0, 2.5, 3.0],
        )
        .unwrap();
        let b2 = a2.right_inverse();
        assert!((b2.value(0.2) - 0.2).abs() < 1e-15);
        assert!((b2.value(1.0) - 0.5).abs() < 1e-15);
        assert!((b2.value(2.9) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn double_inverse_round_trip() {
        let a = step_with_jump();
        let back = a.right_inverse().right_inverse();
        for k in 0..=40 {
            let t = k as f64 / 40.0;
            assert!(
                (a.value(t) - back.value(t)).abs() < 1e-14,
                "mismatch at t={t}"
            );
        }
    }

    #[test]
    fn curve_jump_nodes() {
        let c = PwlCurve::new(
            vec![0.0, 1.0, 1.0, 2.0],
            vec![vec![0.0], vec![1.0], vec![5.0], vec![6.0]],
        )
        .unwrap();
        assert_eq!(c.eval(0.5), vec![0.5]);
        assert_eq!(c.eval(1.0), vec![5.0]);
        assert_eq!(c.eval(1.5), vec![5.5]);
    }
}
