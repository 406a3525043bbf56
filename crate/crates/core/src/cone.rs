//! Control cones: per-component sign patterns (orthant-type products of half
//! lines) or finite unions of finitely generated convex cones, each contained
//! in a single orthant. The orthant containment makes the l1-sphere of every
//! sub-cone the convex hull of its l1-normalized generators, so linear
//! maximization reduces to generator enumeration.

use crate::error::{Error, Result};
use crate::util::{dot, l1_norm, sub};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignPattern {
    /// component >= 0
    NonNeg,
    /// component <= 0
    NonPos,
    /// unconstrained component
    Free,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ControlCone {
    Orthant { signs: Vec<SignPattern> },
    /// Union of convex sub-cones, each generated by the listed vectors.
    Generators { subcones: Vec<Vec<Vec<f64>>> },
}

impl ControlCone {
    pub fn nonneg(dim: usize) -> Self {
        ControlCone::Orthant {
            signs: vec![SignPattern::NonNeg; dim],
        }
    }

    pub fn free(dim: usize) -> Self {
        ControlCone::Orthant {
            signs: vec![SignPattern::Free; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlCone::Orthant { signs } => signs.len(),
            ControlCone::Generators { subcones } => subcones
                .first()
                .and_then(|s| s.first())
                .map_or(0, |g| g.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlCone::Orthant { signs } => {
                if signs.is_empty() {
                    return Err(Error::invalid("cone dimension must be positive"));
                }
            }
            ControlCone::Generators { subcones } => {
                if subcones.is_empty() || subcones.iter().any(|s| s.is_empty()) {
                    return Err(Error::invalid("generator cone needs a nonempty generator list"));
                }
                let m = self.dim();
                for sub in subcones {
                    for g in sub {
                        if g.len() != m {
                            return Err(Error::invalid("generator dimension mismatch"));
                        }
                        if l1_norm(g) == 0.0 {
                            return Err(Error::invalid("zero generator in cone"));
                        }
                    }
                    // all generators of a sub-cone must share a sign pattern
                    for j in 0..m {
                        let mut pos = false;
                        let mut neg = false;
                        for g in sub {
                            pos |= g[j] > 0.0;
                            neg |= g[j] < 0.0;
                        }
                        if pos && neg {
                            return Err(Error::invalid(format!(
                                "sub-cone generators mix signs in component {j}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, w: &[f64], tol: f64) -> bool {
        match self {
            ControlCone::Orthant { signs } => signs.iter().zip(w).all(|(s, &x)| match s {
                SignPattern::NonNeg => x >= -tol,
                SignPattern::NonPos => x <= tol,
                SignPattern::Free => true,
            }),
            ControlCone::Generators { subcones } => subcones.iter().any(|gens| {
                let (coeffs, _) = nnls(gens, w);
                let mut resid = w.to_vec();
                for (c, g) in coeffs.iter().zip(gens) {
                    for (r, gj) in resid.iter_mut().zip(g) {
                        *r -= c * gj;
                    }
                }
                l1_norm(&resid) <= tol * (1.0 + l1_norm(w))
            }),
        }
    }

    /// Euclidean projection onto the cone. For generator cones this projects
    /// onto each convex sub-cone with nonnegative least squares and keeps the
    /// closest result.
    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        match self {
            ControlCone::Orthant { signs } => signs
                .iter()
                .zip(w)
                .map(|(s, &x)| match s {
                    SignPattern::NonNeg => x.max(0.0),
                    SignPattern::NonPos => x.min(0.0),
                    SignPattern::Free => x,
                })
                .collect(),
            ControlCone::Generators { subcones } => {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for gens in subcones {
                    let (coeffs, _) = nnls(gens, w);
                    let mut p = vec![0.0; w.len()];
                    for (c, g) in coeffs.iter().zip(gens) {
                        for (pi, gj) in p.iter_mut().zip(g) {
                            *pi += c * gj;
                        }
                    }
                    let d2 = sub(w, &p).iter().map(|x| x * x).sum::<f64>();
                    if best.as_ref().map_or(true, |(bd, _)| d2 < *bd) {
                        best = Some((d2, p));
                    }
                }
                best.map(|(_, p)| p).unwrap_or_else(|| vec![0.0; w.len()])
            }
        }
    }

    /// max { c·w : w in cone, ||w||_1 = 1 } and a maximizing direction.
    ///
    /// Returns value `-inf` only for the degenerate empty cone, which
    /// `validate` rejects. For orthant kinds the candidates are signed unit
    /// coordinate vectors; for generator kinds the l1-normalized generators.
    pub fn linmax(&self, c: &[f64]) -> (f64, Vec<f64>) {
        match self {
            ControlCone::Orthant { signs } => {
                let mut best = f64::NEG_INFINITY;
                let mut arg = vec![0.0; c.len()];
                for (j, s) in signs.iter().enumerate() {
                    let cands: &[f64] = match s {
                        SignPattern::NonNeg => &[1.0],
                        SignPattern::NonPos => &[-1.0],
                        SignPattern::Free => &[1.0, -1.0],
                    };
                    for &sgn in cands {
                        let val = sgn * c[j];
                        if val > best {
                            best = val;
                            arg = vec![0.0; c.len()];
                            arg[j] = sgn;
                        }
                    }
                }
                (best, arg)
            }
            ControlCone::Generators { subcones } => {
                let mut best = f64::NEG_INFINITY;
                let mut arg = vec![0.0; c.len()];
                for sub in subcones {
                    for g in sub {
                        let norm = l1_norm(g);
                        let val = dot(c, g) / norm;
                        if val > best {
                            best = val;
                            arg = g.iter().map(|x| x / norm).collect();
                        }
                    }
                }
                (best, arg)
            }
        }
    }
}

/// Nonnegative least squares: minimize ||sum_i x_i g_i - b||_2 over x >= 0.
/// Classic active-set iteration; the generator counts here are tiny.
/// Returns the coefficients and the squared residual.
pub fn nnls(generators: &[Vec<f64>], b: &[f64]) -> (Vec<f64>, f64) {
    let p = generators.len();
    let m = b.len();
    let mut x = vec![0.0; p];
    let mut passive = vec![false; p];
    let resid = |x: &[f64]| -> Vec<f64> {
        let mut r = b.to_vec();
        for (xi, g) in x.iter().zip(generators) {
            for (rj, gj) in r.iter_mut().zip(g) {
                *rj -= xi * gj;
            }
        }
        r
    };
    let max_iter = 3 * p + 10;
    for _ in 0..max_iter {
        let r = resid(&x);
        // gradient of the objective is -G^T r
        let mut best_j = None;
        let mut best_w = 1e-12 * (1.0 + l1_norm(b));
        for j in 0..p {
            if !passive[j] {
                let w = dot(&generators[j], &r);
                if w > best_w {
                    best_w = w;
                    best_j = Some(j);
                }
            }
        }
        let Some(j) = best_j else { break };
        passive[j] = true;
        // inner loop: solve unconstrained LS on the passive set, step back
        // while any passive coefficient would go negative
        loop {
            let idx: Vec<usize> = (0..p).filter(|&k| passive[k]).collect();
            let z = ls_solve(generators, b, &idx);
            if z.iter().all(|&v| v > 0.0) {
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = z[k];
                }
                break;
            }
            // largest feasible step from x toward z
            let mut alpha = 1.0f64;
            for (k, &i) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    let a = x[i] / (x[i] - z[k]);
                    alpha = alpha.min(a);
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                x[i] += alpha * (z[k] - x[i]);
                if x[i] <= 1e-14 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
        let _ = m;
    }
    let r = resid(&x);
    let r2 = r.iter().map(|v| v * v).sum();
    (x, r2)
}

/// Dense least squares over the selected columns via normal equations with
/// partial-pivot Gaussian elimination. Problem sizes are a handful at most.
fn ls_solve(generators: &[Vec<f64>], b: &[f64], idx: &[usize]) -> Vec<f64> {
    let k = idx.len();
    if k == 0 {
        return Vec::new();
    }
    let mut a = vec![vec![0.0; k + 1]; k];
    for (r, &ir) in idx.iter().enumerate() {
        for (c, &ic) in idx.iter().enumerate() {
            a[r][c] = dot(&generators[ir], &generators[ic]);
        }
        a[r][k] = dot(&generators[ir], b);
        // tiny ridge keeps degenerate generator sets solvable
        a[r][r] += 1e-12;
    }
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        let d = a[col][col];
        if d.abs() < 1e-300 {
            continue;
        }
        for row in 0..k {
            if row != col {
                let f = a[row][col] / d;
                for c in col..=k {
                    a[row][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..k)
        .map(|r| {
            if a[r][r].abs() < 1e-300 {
                0.0
            } else {
                a[r][k] / a[r][r]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthant_linmax_vertex() {
        let k = ControlCone::nonneg(2);
        let (v, w) = k.linmax(&[3.0, -1.0]);
        assert_eq!(v, 3.0);
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn single_ray_linmax() {
        let k = ControlCone::Generators {
            subcones: vec![vec![vec![1.0, 1.0]]],
        };
        let (v, w) = k.linmax(&[1.0, 0.0]);
        assert!((v - 0.5).abs() < 1e-15);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn generator_membership_and_projection() {
        let k = ControlCone::Generators {
            subcones: vec![vec![vec![2.0, 1.0], vec![1.0, 3.0]]],
        };
        k.validate().unwrap();
        assert!(k.contains(&[3.0, 4.0], 1e-9)); // 2.0*(1,...)? combination exists
        assert!(!k.contains(&[-1.0, 0.0], 1e-9));
        let p = k.project(&[-1.0, 0.0]);
        assert!(k.contains(&p, 1e-8));
        let p2 = k.project(&p);
        assert!(p2.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn linmax_matches_generator_grid() {
        // dense grid over normalized convex combinations of the generators
        let gens = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let k = ControlCone::Generators {
            subcones: vec![gens.clone()],
        };
        let c = vec![0.7, -0.3];
        let (v, _) = k.linmax(&c);
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let a = i as f64 / 1000.0;
            let w: Vec<f64> = gens[0]
                .iter()
                .zip(&gens[1])
                .map(|(g0, g1)| a * g0 + (1.0 - a) * g1)
                .collect();
            let n = l1_norm(&w);
            grid_best = grid_best.max(dot(&c, &w) / n);
        }
        assert!((v - grid_best).abs() < 1e-6);
    }

    #[test]
    fn nnls_exact_fit() {
        let gens = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (x, r2) = nnls(&gens, &[2.0, 3.0]);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 3.0).abs() < 1e-9);
        assert!(r2 < 1e-15);
    }
}
