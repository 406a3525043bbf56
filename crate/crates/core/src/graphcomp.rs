//! Extended controls (time-space parameterizations), the rectilinear graph
//! completion of a BV control, canonical reparameterization, and block
//! concatenation.

use crate::cone::ControlCone;
use crate::dynamics::Grid;
use crate::error::{Error, Result};
use crate::measure::VectorMeasure;
use crate::piecewise::{Monotone, PwlCurve};
use crate::report::ValidationReport;
use crate::util::{l1_norm, linf_norm, merge_breaks, sub};

const TIME_EPS: f64 = 1e-12;

/// A time-space control: cellwise-constant derivatives `(w0, w)` of the time
/// component and the per-block space components on a parameter mesh. The
/// implied paths start at `phi0(0) = 0`, `phi_1(0) = 0`, and chain block
/// starts to the previous block end.
#[derive(Debug, Clone)]
pub struct ExtendedControl {
    pub grid: Grid,
    mesh: Vec<f64>,
    w0: Vec<f64>,
    w: Vec<Vec<Vec<f64>>>,
    phi0_nodes: Vec<f64>,
    phi_nodes: Vec<Vec<Vec<f64>>>,
}

impl ExtendedControl {
    pub fn new(grid: Grid, mesh: Vec<f64>, w0: Vec<f64>, w: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if mesh.len() < 2 {
            return Err(Error::invalid("control mesh needs at least one cell"));
        }
        if mesh[0].abs() > TIME_EPS {
            return Err(Error::invalid("control mesh must start at 0"));
        }
        for win in mesh.windows(2) {
            if win[1] <= win[0] {
                return Err(Error::invalid("control mesh must increase"));
            }
        }
        let cells = mesh.len() - 1;
        if w0.len() != cells || w.len() != cells {
            return Err(Error::invalid("one derivative per mesh cell required"));
        }
        for (k, cell) in w.iter().enumerate() {
            if cell.len() != grid.num_periods {
                return Err(Error::invalid("one space derivative per block required"));
            }
            if cell.iter().any(|wl| wl.len() != grid.control_dim) {
                return Err(Error::invalid("space derivative dimension mismatch"));
            }
            if w0[k] < 0.0 {
                return Err(Error::invalid(format!("negative time speed in cell {k}")));
            }
        }
        let mut ec = ExtendedControl {
            grid,
            mesh,
            w0,
            w,
            phi0_nodes: Vec::new(),
            phi_nodes: Vec::new(),
        };
        ec.rebuild_nodes();
        Ok(ec)
    }

    fn rebuild_nodes(&mut self) {
        let cells = self.num_cells();
        let nb = self.grid.num_periods;
        let m = self.grid.control_dim;
        let mut phi0 = vec![0.0; cells + 1];
        for k in 0..cells {
            phi0[k + 1] = phi0[k] + self.w0[k] * self.cell_len(k);
        }
        // block l starts where block l-1 ends
        let mut phi = vec![vec![vec![0.0; m]; nb]; cells + 1];
        let mut start = vec![0.0; m];
        for l in 0..nb {
            phi[0][l] = start.clone();
            for k in 0..cells {
                let len = self.cell_len(k);
                for j in 0..m {
                    phi[k + 1][l][j] = phi[k][l][j] + self.w[k][l][j] * len;
                }
            }
            start = phi[cells][l].clone();
        }
        self.phi0_nodes = phi0;
        self.phi_nodes = phi;
    }

    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }

    pub fn num_cells(&self) -> usize {
        self.mesh.len() - 1
    }

    pub fn cell_len(&self, k: usize) -> f64 {
        self.mesh[k + 1] - self.mesh[k]
    }

    pub fn s_end(&self) -> f64 {
        *self.mesh.last().unwrap()
    }

    pub fn w0(&self) -> &[f64] {
        &self.w0
    }

    pub fn w(&self) -> &[Vec<Vec<f64>>] {
        &self.w
    }

    pub fn cell_of(&self, s: f64) -> usize {
        crate::util::cell_index(&self.mesh, s)
    }

    /// Total speed of a cell: `w0 + sum_l ||w_l||_1`.
    pub fn rate(&self, k: usize) -> f64 {
        self.w0[k] + self.w[k].iter().map(|wl| l1_norm(wl)).sum::<f64>()
    }

    pub fn max_rate(&self) -> f64 {
        (0..self.num_cells()).fold(0.0, |m, k| m.max(self.rate(k)))
    }

    pub fn phi0_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.s_end());
        let k = self.cell_of(s);
        self.phi0_nodes[k] + self.w0[k] * (s - self.mesh[k])
    }

    pub fn phi0_end(&self) -> f64 {
        *self.phi0_nodes.last().unwrap()
    }

    pub fn phi0_nodes(&self) -> &[f64] {
        &self.phi0_nodes
    }

    /// `phi_l(s)` for block `l` in `1..=N`.
    pub fn phi_at(&self, l: usize, s: f64) -> Vec<f64> {
        let s = s.clamp(0.0, self.s_end());
        let k = self.cell_of(s);
        let ds = s - self.mesh[k];
        self.phi_nodes[k][l - 1]
            .iter()
            .zip(&self.w[k][l - 1])
            .map(|(p, w)| p + w * ds)
            .collect()
    }

    pub fn phi_end(&self, l: usize) -> Vec<f64> {
        self.phi_nodes.last().unwrap()[l - 1].clone()
    }

    pub fn phi0_curve(&self) -> Monotone {
        Monotone::continuous(self.mesh.clone(), self.phi0_nodes.clone()).unwrap()
    }

    pub fn phi_curve(&self, l: usize) -> PwlCurve {
        let v: Vec<Vec<f64>> = self.phi_nodes.iter().map(|n| n[l - 1].clone()).collect();
        PwlCurve::new(self.mesh.clone(), v).unwrap()
    }

    /// Concatenated time change on `[0, N*S]`, continuous by construction.
    pub fn tau_tilde(&self) -> Monotone {
        let s_end = self.s_end();
        let mut t = Vec::new();
        let mut v = Vec::new();
        for l in 0..self.grid.num_periods {
            let off_s = l as f64 * s_end;
            let off_t = l as f64 * self.grid.period;
            for (i, &s) in self.mesh.iter().enumerate() {
                if l > 0 && i == 0 {
                    continue; // boundary node shared with previous block
                }
                t.push(off_s + s);
                v.push(off_t + self.phi0_nodes[i]);
            }
        }
        Monotone::continuous(t, v).unwrap()
    }

    /// Concatenated space path on `[0, N*S]`.
    pub fn phi_tilde(&self) -> PwlCurve {
        let blocks: Vec<PwlCurve> = (1..=self.grid.num_periods)
            .map(|l| self.phi_curve(l))
            .collect();
        tilde_concatenate(&blocks, Some(1e-9)).unwrap()
    }

    /// Maximal parameter intervals on which `phi0` is constant, with the
    /// plateau value: the jump intervals of the induced time change.
    pub fn plateaus(&self) -> Vec<(f64, f64, f64)> {
        let mut out: Vec<(f64, f64, f64)> = Vec::new();
        for k in 0..self.num_cells() {
            if self.w0[k] == 0.0 {
                let (a, b) = (self.mesh[k], self.mesh[k + 1]);
                match out.last_mut() {
                    Some(last) if last.1 == a => last.1 = b,
                    _ => out.push((a, b, self.phi0_nodes[k])),
                }
            }
        }
        out
    }

    pub fn is_canonical(&self, tol: f64) -> bool {
        (0..self.num_cells()).all(|k| (self.rate(k) - 1.0).abs() <= tol)
            && (self.phi0_end() - self.grid.period).abs() <= tol
    }
}

/// Metadata of a rectilinear graph completion: the variation ramp `V`, the
/// parameter change `psi(r) = r + V(r)`, and the jump intervals.
#[derive(Debug, Clone)]
pub struct GraphCompletionMeta {
    pub variation: Monotone,
    pub psi: Monotone,
    /// `(r, s_lo, s_hi)` jump intervals in parameter space.
    pub jumps: Vec<(f64, f64, f64)>,
}

/// Rectilinear graph completion of the BV control with measure `mu`: bridge
/// every jump of the stacked control by a straight segment, parameterized so
/// that the total speed is one everywhere.
pub fn rectilinear_gc(
    mu: &VectorMeasure,
    grid: &Grid,
    cone: &ControlCone,
) -> Result<(ExtendedControl, GraphCompletionMeta)> {
    if (mu.horizon() - grid.horizon()).abs() > 1e-9 {
        return Err(Error::invalid("measure horizon must equal N*h"));
    }
    if mu.dim() != grid.control_dim {
        return Err(Error::invalid("measure dimension mismatch"));
    }
    for a in mu.atoms() {
        if !cone.contains(&a.mass, 1e-9) {
            return Err(Error::invalid(format!(
                "atom mass at t={} outside the control cone",
                a.t
            )));
        }
    }
    for v in mu.density_values() {
        if !cone.contains(v, 1e-9) {
            return Err(Error::invalid("density value outside the control cone"));
        }
    }
    let h = grid.period;
    let nb = grid.num_periods;
    let m = grid.control_dim;
    let tv = mu.tv_measure();

    // r-mesh: density breakpoints folded into [0, h] per block, plus the
    // fold of every atom (grid-time atoms fold to r = h of the earlier block)
    let mut r_mesh = vec![0.0, h];
    for l in 1..=nb {
        let off = (l - 1) as f64 * h;
        let folded: Vec<f64> = mu
            .density_breaks()
            .iter()
            .map(|b| b - off)
            .filter(|r| *r > TIME_EPS && *r < h - TIME_EPS)
            .collect();
        r_mesh = merge_breaks(&r_mesh, &folded, TIME_EPS);
    }
    let fold_atom = |t: f64| -> (usize, f64) {
        let l = grid.block_of(t.max(TIME_EPS));
        (l, t - (l - 1) as f64 * h)
    };
    let atom_rs: Vec<f64> = mu.atoms().iter().map(|a| fold_atom(a.t).1).collect();
    let mut sorted_rs = atom_rs.clone();
    sorted_rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    r_mesh = merge_breaks(&r_mesh, &sorted_rs, TIME_EPS);

    // jump of V at r: total variation of atoms folding there
    let v_jump = |r: f64| -> f64 {
        mu.atoms()
            .iter()
            .filter(|a| (fold_atom(a.t).1 - r).abs() <= TIME_EPS)
            .map(|a| l1_norm(&a.mass))
            .sum()
    };
    // slope of V on (r_a, r_b): stacked density variation
    let v_slope = |r_a: f64, r_b: f64| -> f64 {
        let len = r_b - r_a;
        (1..=nb)
            .map(|l| {
                let off = (l - 1) as f64 * h;
                tv.mass_oo(off + r_a, off + r_b) / len
            })
            .sum()
    };

    let n_nodes = r_mesh.len();
    let mut v_lo = vec![0.0; n_nodes];
    let mut v_hi = vec![0.0; n_nodes];
    for i in 0..n_nodes {
        v_hi[i] = v_lo[i] + v_jump(r_mesh[i]);
        if i + 1 < n_nodes {
            v_lo[i + 1] = v_hi[i] + v_slope(r_mesh[i], r_mesh[i + 1]) * (r_mesh[i + 1] - r_mesh[i]);
        }
    }
    let variation = Monotone::with_jumps(r_mesh.clone(), v_lo.clone(), v_hi.clone())?;
    let psi_lo: Vec<f64> = r_mesh.iter().zip(&v_lo).map(|(r, v)| r + v).collect();
    let psi_hi: Vec<f64> = r_mesh.iter().zip(&v_hi).map(|(r, v)| r + v).collect();
    let psi = Monotone::with_jumps(r_mesh.clone(), psi_lo.clone(), psi_hi.clone())?;

    // assemble the control cellwise in parameter space
    let mut mesh: Vec<f64> = vec![0.0];
    let mut w0: Vec<f64> = Vec::new();
    let mut w: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut jumps: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..n_nodes {
        let delta = psi_hi[i] - psi_lo[i];
        if delta > 0.0 {
            // bridge cell for all atoms folding to this r
            let mut cell = vec![vec![0.0; m]; nb];
            for a in mu.atoms() {
                let (l, r) = fold_atom(a.t);
                if (r - r_mesh[i]).abs() <= TIME_EPS {
                    for j in 0..m {
                        cell[l - 1][j] = a.mass[j] / delta;
                    }
                }
            }
            jumps.push((r_mesh[i], psi_lo[i], psi_hi[i]));
            mesh.push(psi_hi[i]);
            w0.push(0.0);
            w.push(cell);
        }
        if i + 1 < n_nodes {
            let (r_a, r_b) = (r_mesh[i], r_mesh[i + 1]);
            let s_len = psi_lo[i + 1] - psi_hi[i];
            let speed = (r_b - r_a) / s_len; // = 1/(1 + stacked density)
            let mid = 0.5 * (r_a + r_b);
            let mut cell = vec![vec![0.0; m]; nb];
            for l in 1..=nb {
                let off = (l - 1) as f64 * h;
                let cell_mass = mu.mass_oo(off + r_a, off + r_b);
                for j in 0..m {
                    cell[l - 1][j] = cell_mass[j] / (r_b - r_a) * speed;
                }
                let _ = mid;
            }
            mesh.push(psi_lo[i + 1]);
            w0.push(speed);
            w.push(cell);
        }
    }
    let ec = ExtendedControl::new(*grid, mesh, w0, w)?;
    Ok((
        ec,
        GraphCompletionMeta {
            variation,
            psi,
            jumps,
        },
    ))
}

/// Check the defining properties of an extended control, and when the source
/// control's measure is supplied, the graph-completion matching conditions by
/// a sampling scan.
pub fn validate_extended_control(
    ec: &ExtendedControl,
    reference: Option<&VectorMeasure>,
    cone: &ControlCone,
    tol: f64,
) -> ValidationReport {
    let mut report = ValidationReport::new(tol);
    let neg_w0 = ec
        .w0()
        .iter()
        .fold(0.0f64, |m, &x| m.max((-x).max(0.0)));
    let endpoint = (ec.phi0_end() - ec.grid.period).abs();
    report.record("(i) time component", neg_w0.max(endpoint), "phi0 monotone onto [0, h]");
    // chaining holds by construction of the implied paths
    report.record("(ii) chaining", 0.0, "block starts copied from block ends");
    let mut worst_cone = 0.0f64;
    let mut loc = String::from("-");
    for k in 0..ec.num_cells() {
        for l in 0..ec.grid.num_periods {
            let wl = &ec.w()[k][l];
            let p = cone.project(wl);
            let dev = l1_norm(&sub(wl, &p));
            if dev > worst_cone {
                worst_cone = dev;
                loc = format!("cell {k}, block {}", l + 1);
            }
        }
    }
    report.record("(iii) cone directions", worst_cone, loc);

    if let Some(mu) = reference {
        let u_end = mu.total();
        let dev_end = linf_norm(&sub(&ec.phi_end(ec.grid.num_periods), &u_end));
        report.record("gc endpoint match", dev_end, "phi_N(S) = u(T)");
        let tau = ec.tau_tilde();
        let sigma = tau.right_inverse();
        let phi = ec.phi_tilde();
        let mut worst = 0.0f64;
        let mut wloc = String::from("-");
        let samples = 1000;
        for k in 0..=samples {
            let t = mu.horizon() * k as f64 / samples as f64;
            let s = sigma.value(t);
            let got = phi.eval(s);
            let want = mu.distribution(t).unwrap();
            let dev = linf_norm(&sub(&got, &want));
            if dev > worst {
                worst = dev;
                wloc = format!("t={t:.4}");
            }
        }
        report.record("gc membership scan", worst, wloc);
    }
    report
}

/// Canonical parameterization: rescale by the total variation of the control
/// path so every remaining cell has unit speed; idle cells are removed.
pub fn canonicalize(ec: &ExtendedControl) -> Result<ExtendedControl> {
    let cells = ec.num_cells();
    let mut mesh = vec![0.0];
    let mut w0: Vec<f64> = Vec::new();
    let mut w: Vec<Vec<Vec<f64>>> = Vec::new();
    for k in 0..cells {
        let rate = ec.rate(k);
        if rate == 0.0 {
            continue; // idle cell: zero speed in every component
        }
        let len = ec.cell_len(k) * rate;
        let new_w0 = ec.w0()[k] / rate;
        let new_wl: Vec<Vec<f64>> = ec.w()[k]
            .iter()
            .map(|wl| wl.iter().map(|x| x / rate).collect())
            .collect();
        // merge with the previous cell when the derivative is identical
        let same_as_last = !w0.is_empty()
            && *w0.last().unwrap() == new_w0
            && w.last().unwrap() == &new_wl;
        if same_as_last {
            *mesh.last_mut().unwrap() += len;
        } else {
            let end = *mesh.last().unwrap() + len;
            mesh.push(end);
            w0.push(new_w0);
            w.push(new_wl);
        }
    }
    if w0.is_empty() {
        return Err(Error::invalid(
            "control is identically zero and cannot be canonicalized",
        ));
    }
    ExtendedControl::new(ec.grid, mesh, w0, w)
}

/// Run the same curve at a different speed: `delta` maps the old parameter
/// interval onto the new one, strictly increasing and piecewise linear.
pub fn reparameterize(ec: &ExtendedControl, delta: &Monotone) -> Result<ExtendedControl> {
    let (d0, d1) = delta.domain();
    if !delta.is_continuous(0.0) {
        return Err(Error::invalid("reparameterization must be continuous"));
    }
    if d0.abs() > TIME_EPS || (d1 - ec.s_end()).abs() > 1e-9 {
        return Err(Error::invalid("reparameterization must cover [0, S]"));
    }
    if delta.value(d0).abs() > TIME_EPS {
        return Err(Error::invalid("reparameterization must start at 0"));
    }
    let old_refined = merge_breaks(ec.mesh(), delta.nodes(), TIME_EPS);
    let mut mesh = Vec::with_capacity(old_refined.len());
    let mut w0 = Vec::new();
    let mut w = Vec::new();
    for (i, &s) in old_refined.iter().enumerate() {
        mesh.push(delta.value(s));
        if i + 1 < old_refined.len() {
            let (a, b) = (s, old_refined[i + 1]);
            let slope = (delta.value(b) - delta.value(a)) / (b - a);
            if slope <= 0.0 {
                return Err(Error::invalid("reparameterization must be strictly increasing"));
            }
            let k = ec.cell_of(0.5 * (a + b));
            w0.push(ec.w0()[k] / slope);
            w.push(
                ec.w()[k]
                    .iter()
                    .map(|wl| wl.iter().map(|x| x / slope).collect())
                    .collect(),
            );
        }
    }
    ExtendedControl::new(ec.grid, mesh, w0, w)
}

/// Concatenate per-block paths defined on a common interval `[0, S]` into one
/// path on `[0, N*S]`. With `chain_tol` set, block boundaries must match and
/// are merged; otherwise mismatching boundaries become jump nodes.
pub fn tilde_concatenate(blocks: &[PwlCurve], chain_tol: Option<f64>) -> Result<PwlCurve> {
    if blocks.is_empty() {
        return Err(Error::invalid("nothing to concatenate"));
    }
    let (a0, b0) = blocks[0].domain();
    if a0.abs() > TIME_EPS {
        return Err(Error::invalid("blocks must start at parameter 0"));
    }
    for b in blocks {
        let (a, bb) = b.domain();
        if a.abs() > TIME_EPS || (bb - b0).abs() > 1e-9 {
            return Err(Error::invalid("blocks must share the parameter interval"));
        }
    }
    let s_end = b0;
    let mut s = Vec::new();
    let mut v = Vec::new();
    for (l, blk) in blocks.iter().enumerate() {
        let off = l as f64 * s_end;
        for (i, (&si, vi)) in blk.nodes().iter().zip(blk.values()).enumerate() {
            if l > 0 && i == 0 {
                let prev: &Vec<f64> = v.last().unwrap();
                let gap = linf_norm(&sub(vi, prev));
                if let Some(tol) = chain_tol {
                    if gap > tol {
                        return Err(Error::invalid(format!(
                            "chain mismatch {gap:.3e} at block {}",
                            l + 1
                        )));
                    }
                    continue; // merged boundary node
                }
                if gap == 0.0 {
                    continue;
                }
                // fall through: duplicate node encodes the jump
            }
            s.push(off + si);
            v.push(vi.clone());
        }
    }
    PwlCurve::new(s, v)
}

/// Largest cellwise deviation between two controls over the union mesh,
/// comparing time speeds and all block derivatives.
pub fn control_deviation(a: &ExtendedControl, b: &ExtendedControl) -> f64 {
    let mesh = merge_breaks(a.mesh(), b.mesh(), TIME_EPS);
    let mut worst = (a.s_end() - b.s_end()).abs();
    for win in mesh.windows(2) {
        let mid = 0.5 * (win[0] + win[1]);
        if mid > a.s_end() || mid > b.s_end() {
            break;
        }
        let (ka, kb) = (a.cell_of(mid), b.cell_of(mid));
        worst = worst.max((a.w0()[ka] - b.w0()[kb]).abs());
        for l in 0..a.grid.num_periods {
            worst = worst.max(linf_norm(&sub(&a.w()[ka][l], &b.w()[kb][l])));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Atom;

    fn grid2() -> Grid {
        Grid::new(1, 2, 1, 1.0).unwrap()
    }

    #[test]
    fn zero_measure_gc() {
        let grid = grid2();
        let mu = VectorMeasure::zero(2.0, 1);
        let (ec, meta) = rectilinear_gc(&mu, &grid, &ControlCone::nonneg(1)).unwrap();
        assert!((ec.s_end() - 1.0).abs() < 1e-15);
        assert!((ec.phi0_at(0.7) - 0.7).abs() < 1e-15);
        assert!(meta.jumps.is_empty());
        assert!(ec.is_canonical(1e-12));
    }

    #[test]
    fn single_atom_gc_matches_hand_computation() {
        let grid = grid2();
        let mu = VectorMeasure::new(
            2.0,
            1,
            vec![Atom {
                t: 0.5,
                mass: vec![2.0],
            }],
            vec![],
            vec![],
        )
        .unwrap();
        let (ec, meta) = rectilinear_gc(&mu, &grid, &ControlCone::nonneg(1)).unwrap();
        assert!((ec.s_end() - 3.0).abs() < 1e-15);
        assert_eq!(meta.jumps.len(), 1);
        let (r, s_lo, s_hi) = meta.jumps[0];
        assert!((r - 0.5).abs() < 1e-15);
        assert!((s_lo - 0.5).abs() < 1e-15 && (s_hi - 2.5).abs() < 1e-15);
        // phi0 flat on the plateau
        assert!((ec.phi0_at(1.5) - 0.5).abs() < 1e-15);
        // block 1 ramps 0 -> 2 over the plateau, block 2 stays at 2
        assert!((ec.phi_at(1, 1.5)[0] - 1.0).abs() < 1e-15);
        assert!((ec.phi_at(1, 2.5)[0] - 2.0).abs() < 1e-15);
        assert!((ec.phi_at(2, 2.7)[0] - 2.0).abs() < 1e-15);
        assert!(ec.is_canonical(1e-12));
    }

    #[test]
    fn mixed_measure_gc_is_canonical_and_matches_graph() {
        let grid = grid2();
        let mu = VectorMeasure::new(
            2.0,
            1,
            vec![
                Atom {
                    t: 0.3,
                    mass: vec![1.0],
                },
                Atom {
                    t: 1.7,
                    mass: vec![-0.5],
                },
            ],
            vec![0.0, 0.8, 2.0],
            vec![vec![0.5], vec![-0.2]],
        )
        .unwrap();
        let cone = ControlCone::free(1);
        let (ec, _) = rectilinear_gc(&mu, &grid, &cone).unwrap();
        for k in 0..ec.num_cells() {
            assert!(
                (ec.rate(k) - 1.0).abs() <= 1e-12,
                "cell {k} rate {}",
                ec.rate(k)
            );
        }
        let rep = validate_extended_control(&ec, Some(&mu), &cone, 1e-9);
        assert!(rep.passed(), "{}", rep.summary());
    }

    #[test]
    fn canonicalize_idempotent_and_rate_independent() {
        let grid = grid2();
        let mu = VectorMeasure::new(
            2.0,
            1,
            vec![Atom {
                t: 0.5,
                mass: vec![2.0],
            }],
            vec![0.0, 2.0],
            vec![vec![0.3]],
        )
        .unwrap();
        let (ec, _) = rectilinear_gc(&mu, &grid, &ControlCone::nonneg(1)).unwrap();
        let canon = canonicalize(&ec).unwrap();
        assert!(control_deviation(&ec, &canon) < 1e-12);
        // uniform factor-2 slowdown has the same canonical form
        let slow = ExtendedControl::new(
            grid,
            ec.mesh().iter().map(|s| 2.0 * s).collect(),
            ec.w0().iter().map(|w| w / 2.0).collect(),
            ec.w()
                .iter()
                .map(|cell| {
                    cell.iter()
                        .map(|wl| wl.iter().map(|x| x / 2.0).collect())
                        .collect()
                })
                .collect(),
        )
        .unwrap();
        let canon2 = canonicalize(&slow).unwrap();
        assert!(control_deviation(&canon, &canon2) < 1e-12);
    }

    #[test]
    fn reparameterize_preserves_canonical_form() {
        let grid = grid2();
        let mu = VectorMeasure::new(
            2.0,
            1,
            vec![Atom {
                t: 0.5,
                mass: vec![2.0],
            }],
            vec![0.0, 2.0],
            vec![vec![0.3]],
        )
        .unwrap();
        let (ec, _) = rectilinear_gc(&mu, &grid, &ControlCone::nonneg(1)).unwrap();
        let s_end = ec.s_end();
        // kinked speed-up: delta maps [0,S] onto [0, 1.5 S]
        let delta = Monotone::continuous(
            vec![0.0, 0.4 * s_end, s_end],
            vec![0.0, 0.8 * s_end, 1.5 * s_end],
        )
        .unwrap();
        let rep = reparameterize(&ec, &delta).unwrap();
        assert!((rep.s_end() - 1.5 * s_end).abs() < 1e-12);
        let c1 = canonicalize(&ec).unwrap();
        let c2 = canonicalize(&rep).unwrap();
        assert!(control_deviation(&c1, &c2) < 1e-12);
        // identity leaves the control unchanged
        let id = Monotone::continuous(vec![0.0, s_end], vec![0.0, s_end]).unwrap();
        let same = reparameterize(&ec, &id).unwrap();
        assert!(control_deviation(&ec, &same) < 1e-15);
    }

    #[test]
    fn concatenate_identity_and_step() {
        let c1 = PwlCurve::new(vec![0.0, 1.0], vec![vec![1.0], vec![1.0]]).unwrap();
        let single = tilde_concatenate(std::slice::from_ref(&c1), None).unwrap();
        assert_eq!(single.eval(0.5), vec![1.0]);
        let c2 = PwlCurve::new(vec![0.0, 1.0], vec![vec![2.0], vec![2.0]]).unwrap();
        let stepped = tilde_concatenate(&[c1.clone(), c2.clone()], None).unwrap();
        assert_eq!(stepped.eval(0.5), vec![1.0]);
        assert_eq!(stepped.eval(1.5), vec![2.0]);
        assert_eq!(stepped.eval(1.0), vec![2.0]); // right continuous at the seam
        assert!(tilde_concatenate(&[c1, c2], Some(1e-9)).is_err());
    }
}
