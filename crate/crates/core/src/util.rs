//! Small numeric helpers shared across the crate.

/// Sum of absolute component values. This is the norm used for control
/// variation everywhere in the crate.
pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

/// a += c * b
pub fn axpy(a: &mut [f64], c: f64, b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += c * y;
    }
}

/// Row vector times Jacobian: (qᵀ J)ᵀ, with `jac[row][col]`.
pub fn vec_jac(q: &[f64], jac: &[Vec<f64>]) -> Vec<f64> {
    let cols = if jac.is_empty() { 0 } else { jac[0].len() };
    let mut out = vec![0.0; cols];
    for (qi, row) in q.iter().zip(jac) {
        for (o, j) in out.iter_mut().zip(row) {
            *o += qi * j;
        }
    }
    out
}

/// Index of the cell containing `x` in a sorted node array: the largest `i`
/// with `nodes[i] <= x`, clamped to a valid cell index `0..=len-2`.
pub fn cell_index(nodes: &[f64], x: f64) -> usize {
    debug_assert!(nodes.len() >= 2);
    match nodes.binary_search_by(|n| n.partial_cmp(&x).unwrap()) {
        Ok(i) => i.min(nodes.len() - 2),
        Err(0) => 0,
        Err(i) => (i - 1).min(nodes.len() - 2),
    }
}

/// Merge two sorted breakpoint lists, dropping near-duplicates (absolute
/// tolerance `tol`).
pub fn merge_breaks(a: &[f64], b: &[f64], tol: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = if i < a.len() && (j >= b.len() || a[i] <= b[j]) {
            let v = a[i];
            i += 1;
            v
        } else {
            let v = b[j];
            j += 1;
            v
        };
        if out.last().map_or(true, |&last| next - last > tol) {
            out.push(next);
        }
    }
    out
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
