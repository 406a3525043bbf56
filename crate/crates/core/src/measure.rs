//! Vector-valued Borel measures on the control horizon: finitely many atoms
//! plus a piecewise-constant density, their distribution functions, attached
//! jump controls, and validation of the impulse-control conditions.

use crate::cone::ControlCone;
use crate::dynamics::Grid;
use crate::error::{Error, Result};
use crate::report::ValidationReport;
use crate::util::{l1_norm, merge_breaks};

pub const TOL_MEAS: f64 = 1e-9;
/// Atom times closer than this are treated as the same instant.
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Atom {
    pub t: f64,
    pub mass: Vec<f64>,
}

/// Finite regular vector measure on `[0, horizon]`: sorted atoms plus a
/// piecewise-constant density on a breakpoint mesh.
#[derive(Debug, Clone)]
pub struct VectorMeasure {
    horizon: f64,
    dim: usize,
    atoms: Vec<Atom>,
    breaks: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl VectorMeasure {
    pub fn new(
        horizon: f64,
        dim: usize,
        mut atoms: Vec<Atom>,
        breaks: Vec<f64>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("measure horizon must be positive"));
        }
        atoms.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        for w in atoms.windows(2) {
            if w[1].t - w[0].t < TIME_EPS {
                return Err(Error::invalid("atom times must be strictly increasing"));
            }
        }
        for a in &atoms {
            if a.t < 0.0 || a.t > horizon + TIME_EPS {
                return Err(Error::invalid(format!("atom at {} outside [0, {horizon}]", a.t)));
            }
            if a.mass.len() != dim {
                return Err(Error::invalid("atom mass dimension mismatch"));
            }
        }
        let (breaks, values) = if breaks.is_empty() {
            (vec![0.0, horizon], vec![vec![0.0; dim]])
        } else {
            (breaks, values)
        };
        if breaks.len() < 2 || values.len() + 1 != breaks.len() {
            return Err(Error::invalid("density needs one value per mesh cell"));
        }
        if (breaks[0]).abs() > TIME_EPS || (breaks[breaks.len() - 1] - horizon).abs() > 1e-9 {
            return Err(Error::invalid("density mesh must span [0, horizon]"));
        }
        for w in breaks.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("density breakpoints must increase"));
            }
        }
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("density value dimension mismatch"));
        }
        Ok(VectorMeasure {
            horizon,
            dim,
            atoms,
            breaks,
            values,
        })
    }

    pub fn zero(horizon: f64, dim: usize) -> Self {
        VectorMeasure::new(horizon, dim, Vec::new(), Vec::new(), Vec::new()).unwrap()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density_breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn density_values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn atom_at(&self, t: f64) -> Option<&Atom> {
        self.atoms.iter().find(|a| (a.t - t).abs() <= TIME_EPS)
    }

    fn density_integral(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if b <= a {
            return out;
        }
        for i in 0..self.values.len() {
            let lo = self.breaks[i].max(a);
            let hi = self.breaks[i + 1].min(b);
            if hi > lo {
                for (o, v) in out.iter_mut().zip(&self.values[i]) {
                    *o += v * (hi - lo);
                }
            }
        }
        out
    }

    /// Distribution `u(t) = mu([0, t])`, atoms at `t` included.
    pub fn distribution(&self, t: f64) -> Result<Vec<f64>> {
        if t < -TIME_EPS || t > self.horizon + 1e-9 {
            return Err(Error::invalid(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        let mut u = self.density_integral(0.0, t);
        for a in &self.atoms {
            if a.t <= t + TIME_EPS {
                for (ui, m) in u.iter_mut().zip(&a.mass) {
                    *ui += m;
                }
            }
        }
        Ok(u)
    }

    /// Left limit `u^-(t) = mu([0, t))`, zero at `t = 0`.
    pub fn distribution_left(&self, t: f64) -> Result<Vec<f64>> {
        if t < -TIME_EPS || t > self.horizon + 1e-9 {
            return Err(Error::invalid(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        let mut u = self.density_integral(0.0, t);
        for a in &self.atoms {
            if a.t < t - TIME_EPS {
                for (ui, m) in u.iter_mut().zip(&a.mass) {
                    *ui += m;
                }
            }
        }
        Ok(u)
    }

    /// Measure of the half-open interval `(a, b]`.
    pub fn mass_oc(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = self.density_integral(a, b);
        for at in &self.atoms {
            if at.t > a + TIME_EPS && at.t <= b + TIME_EPS {
                for (o, m) in out.iter_mut().zip(&at.mass) {
                    *o += m;
                }
            }
        }
        out
    }

    /// Measure of the open interval `(a, b)`.
    pub fn mass_oo(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = self.density_integral(a, b);
        for at in &self.atoms {
            if at.t > a + TIME_EPS && at.t < b - TIME_EPS {
                for (o, m) in out.iter_mut().zip(&at.mass) {
                    *o += m;
                }
            }
        }
        out
    }

    pub fn total(&self) -> Vec<f64> {
        self.distribution(self.horizon).unwrap()
    }

    /// Componentwise l1 total variation measure: atom masses and density
    /// values replaced by their l1 norms.
    pub fn tv_measure(&self) -> ScalarMeasure {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                t: a.t,
                mass: vec![l1_norm(&a.mass)],
            })
            .collect();
        let values = self.values.iter().map(|v| vec![l1_norm(v)]).collect();
        ScalarMeasure(
            VectorMeasure::new(self.horizon, 1, atoms, self.breaks.clone(), values).unwrap(),
        )
    }

    pub fn range_in_cone(&self, cone: &ControlCone, tol: f64) -> bool {
        self.atoms.iter().all(|a| cone.contains(&a.mass, tol))
            && self.values.iter().all(|v| cone.contains(v, tol))
    }
}

/// Nonnegative scalar measure, stored as a one-dimensional vector measure.
#[derive(Debug, Clone)]
pub struct ScalarMeasure(pub VectorMeasure);

impl ScalarMeasure {
    pub fn new(
        horizon: f64,
        atoms: Vec<(f64, f64)>,
        breaks: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if atoms.iter().any(|&(_, m)| m < 0.0) || values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("scalar measure must be nonnegative"));
        }
        let atoms = atoms
            .into_iter()
            .map(|(t, m)| Atom { t, mass: vec![m] })
            .collect();
        let values = values.into_iter().map(|v| vec![v]).collect();
        Ok(ScalarMeasure(VectorMeasure::new(
            horizon, 1, atoms, breaks, values,
        )?))
    }

    pub fn zero(horizon: f64) -> Self {
        ScalarMeasure(VectorMeasure::zero(horizon, 1))
    }

    pub fn horizon(&self) -> f64 {
        self.0.horizon()
    }

    pub fn atom_at(&self, t: f64) -> f64 {
        self.0.atom_at(t).map_or(0.0, |a| a.mass[0])
    }

    pub fn distribution(&self, t: f64) -> Result<f64> {
        Ok(self.0.distribution(t)?[0])
    }

    pub fn distribution_left(&self, t: f64) -> Result<f64> {
        Ok(self.0.distribution_left(t)?[0])
    }

    pub fn mass_oc(&self, a: f64, b: f64) -> f64 {
        self.0.mass_oc(a, b)[0]
    }

    pub fn mass_oo(&self, a: f64, b: f64) -> f64 {
        self.0.mass_oo(a, b)[0]
    }

    pub fn total(&self) -> f64 {
        self.0.total()[0]
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.0.atoms().iter().map(|a| (a.t, a.mass[0]))
    }
}

/// One attached control `omega : [0,1] -> R^m`, piecewise constant.
#[derive(Debug, Clone)]
pub struct AttachedControl {
    pub breaks: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl AttachedControl {
    pub fn zero(dim: usize) -> Self {
        AttachedControl {
            breaks: vec![0.0, 1.0],
            values: vec![vec![0.0; dim]],
        }
    }

    pub fn constant(value: Vec<f64>) -> Self {
        AttachedControl {
            breaks: vec![0.0, 1.0],
            values: vec![value],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.breaks.len() < 2
            || self.values.len() + 1 != self.breaks.len()
            || (self.breaks[0]).abs() > TIME_EPS
            || (self.breaks[self.breaks.len() - 1] - 1.0).abs() > TIME_EPS
        {
            return Err(Error::invalid("attached control must tile [0, 1]"));
        }
        for w in self.breaks.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("attached control breakpoints must increase"));
            }
        }
        if self.values.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("attached control dimension mismatch"));
        }
        Ok(())
    }

    pub fn value_at(&self, s: f64) -> &[f64] {
        let i = crate::util::cell_index(&self.breaks, s.clamp(0.0, 1.0));
        &self.values[i]
    }

    pub fn integral(&self) -> Vec<f64> {
        let dim = self.values[0].len();
        let mut out = vec![0.0; dim];
        for (i, v) in self.values.iter().enumerate() {
            let w = self.breaks[i + 1] - self.breaks[i];
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
        }
        out
    }

    pub fn norm_integral(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (self.breaks[i + 1] - self.breaks[i]) * l1_norm(v))
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|&x| x == 0.0))
    }
}

/// Family of attached controls keyed by the jump parameter `r` in `[0, h]`;
/// each entry holds one control per block. Absent keys mean the zero family.
#[derive(Debug, Clone, Default)]
pub struct AttachedFamily {
    entries: Vec<(f64, Vec<AttachedControl>)>,
}

impl AttachedFamily {
    pub fn new(mut entries: Vec<(f64, Vec<AttachedControl>)>) -> Self {
        entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        AttachedFamily { entries }
    }

    pub fn empty() -> Self {
        AttachedFamily::default()
    }

    pub fn entries(&self) -> &[(f64, Vec<AttachedControl>)] {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(r, _)| *r)
    }

    pub fn get(&self, r: f64) -> Option<&Vec<AttachedControl>> {
        self.entries
            .iter()
            .find(|(key, _)| (key - r).abs() <= TIME_EPS)
            .map(|(_, v)| v)
    }

    pub fn control(&self, r: f64, block: usize, dim: usize) -> AttachedControl {
        self.get(r)
            .and_then(|v| v.get(block - 1).cloned())
            .unwrap_or_else(|| AttachedControl::zero(dim))
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        for (r, per_block) in &self.entries {
            if *r < -TIME_EPS || *r > grid.period + TIME_EPS {
                return Err(Error::invalid(format!(
                    "attached key {r} outside [0, {}]",
                    grid.period
                )));
            }
            if per_block.len() != grid.num_periods {
                return Err(Error::invalid("attached family needs one control per block"));
            }
            for c in per_block {
                c.validate(grid.control_dim)?;
            }
        }
        Ok(())
    }
}

/// An impulse control: the driving measure, its variation measure, and the
/// attached jump controls, over fixed grid constants.
#[derive(Debug, Clone)]
pub struct ImpulseControl {
    pub grid: Grid,
    pub mu: VectorMeasure,
    pub nu: ScalarMeasure,
    pub attached: AttachedFamily,
}

impl ImpulseControl {
    pub fn new(
        grid: Grid,
        mu: VectorMeasure,
        nu: ScalarMeasure,
        attached: AttachedFamily,
    ) -> Result<Self> {
        if (mu.horizon() - grid.horizon()).abs() > 1e-9 || (nu.horizon() - grid.horizon()).abs() > 1e-9 {
            return Err(Error::invalid("measure horizon must equal N*h"));
        }
        if mu.dim() != grid.control_dim {
            return Err(Error::invalid("measure dimension must equal control dimension"));
        }
        attached.validate(&grid)?;
        Ok(ImpulseControl {
            grid,
            mu,
            nu,
            attached,
        })
    }

    /// Canonical completion of a bare measure: variation measure `|mu|` and
    /// constant attached controls at every atom. Atoms at interior grid times
    /// are assigned to the later block (the `r = 0` key of block `l+1`).
    pub fn from_measure(grid: Grid, mu: VectorMeasure) -> Result<Self> {
        let nu = mu.tv_measure();
        let h = grid.period;
        let n_blocks = grid.num_periods;
        let m = grid.control_dim;
        let mut by_key: Vec<(f64, Vec<AttachedControl>)> = Vec::new();
        let mut add = |r: f64, block: usize, mass: &[f64]| {
            let entry = by_key
                .iter_mut()
                .find(|(key, _)| (*key - r).abs() <= TIME_EPS);
            let per_block = match entry {
                Some((_, v)) => v,
                None => {
                    by_key.push((r, vec![AttachedControl::zero(m); n_blocks]));
                    &mut by_key.last_mut().unwrap().1
                }
            };
            per_block[block - 1] = AttachedControl::constant(mass.to_vec());
        };
        for a in mu.atoms() {
            let ratio = a.t / h;
            let nearest = ratio.round();
            if (ratio - nearest).abs() <= TIME_EPS && nearest >= 0.0 {
                // grid-time atom: r in {0, h}; later block by default,
                // except t = T which only block N can carry
                let l = nearest as usize;
                if l < n_blocks {
                    add(0.0, l + 1, &a.mass);
                } else {
                    add(h, n_blocks, &a.mass);
                }
            } else {
                let l = grid.block_of(a.t);
                let r = a.t - (l - 1) as f64 * h;
                add(r, l, &a.mass);
            }
        }
        let attached = AttachedFamily::new(by_key);
        ImpulseControl::new(grid, mu, nu, attached)
    }

    /// A strict-sense control: density only, variation `|mu|`, no attached
    /// jump controls.
    pub fn strict(grid: Grid, mu: VectorMeasure) -> Result<Self> {
        if !mu.atoms().is_empty() {
            return Err(Error::invalid("strict-sense control cannot carry atoms"));
        }
        let nu = mu.tv_measure();
        ImpulseControl::new(grid, mu, nu, AttachedFamily::empty())
    }

    pub fn is_strict_sense(&self) -> bool {
        self.nu.0.atoms().is_empty()
    }
}

/// Check the defining conditions of an impulse control and report one row per
/// condition with the worst residual.
pub fn validate_impulse_control(c: &ImpulseControl, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::new(tol);
    let grid = &c.grid;
    let h = grid.period;
    let n_blocks = grid.num_periods;
    let m = grid.control_dim;

    // (i) per key: the per-parameter total speed is constant in s
    let mut worst_i = 0.0f64;
    let mut loc_i = String::from("-");
    for (r, per_block) in c.attached.entries() {
        let mut mesh: Vec<f64> = vec![0.0, 1.0];
        for ctl in per_block {
            mesh = merge_breaks(&mesh, &ctl.breaks, 1e-12);
        }
        let total: f64 = per_block.iter().map(|ctl| ctl.norm_integral()).sum();
        for w in mesh.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let speed: f64 = per_block.iter().map(|ctl| l1_norm(ctl.value_at(mid))).sum();
            let dev = (speed - total).abs();
            if dev > worst_i {
                worst_i = dev;
                loc_i = format!("r={r}, s={mid:.4}");
            }
        }
    }
    report.record("(i) constant speed", worst_i, loc_i);

    // interior atom keys: stored keys plus atoms of nu mapped into (0, h)
    let mut interior: Vec<(f64, usize)> = Vec::new(); // (r, block)
    for (t, _) in c.nu.atoms() {
        let ratio = t / h;
        if (ratio - ratio.round()).abs() > TIME_EPS {
            let l = grid.block_of(t);
            interior.push((t - (l - 1) as f64 * h, l));
        }
    }
    for (r, _) in c.attached.entries() {
        if *r > TIME_EPS && *r < h - TIME_EPS {
            for l in 1..=n_blocks {
                if !interior
                    .iter()
                    .any(|(rr, ll)| (rr - r).abs() <= TIME_EPS && *ll == l)
                {
                    interior.push((*r, l));
                }
            }
        }
    }

    // (ii.1)/(iii.1): interior atoms match the attached integrals
    let mut worst_ii1 = 0.0f64;
    let mut loc_ii1 = String::from("-");
    let mut worst_iii1 = 0.0f64;
    let mut loc_iii1 = String::from("-");
    for &(r, l) in &interior {
        let t = r + (l - 1) as f64 * h;
        let ctl = c.attached.control(r, l, m);
        let dev = (ctl.norm_integral() - c.nu.atom_at(t)).abs();
        if dev > worst_ii1 {
            worst_ii1 = dev;
            loc_ii1 = format!("t={t}");
        }
        let mu_atom = c
            .mu
            .atom_at(t)
            .map(|a| a.mass.clone())
            .unwrap_or_else(|| vec![0.0; m]);
        let integ = ctl.integral();
        for j in 0..m {
            let dev = (integ[j] - mu_atom[j]).abs();
            if dev > worst_iii1 {
                worst_iii1 = dev;
                loc_iii1 = format!("t={t}, j={j}");
            }
        }
    }
    report.record("(ii.1) atom speeds", worst_ii1, loc_ii1);
    report.record("(iii.1) atom masses", worst_iii1, loc_iii1);

    // (ii.2)/(iii.2): grid-time atoms split across the two adjacent keys
    let mut worst_ii2 = 0.0f64;
    let mut loc_ii2 = String::from("-");
    let mut worst_iii2 = 0.0f64;
    let mut loc_iii2 = String::from("-");
    for l in 0..=n_blocks {
        let t = l as f64 * h;
        let end_ctl = if l >= 1 {
            c.attached.control(h, l, m)
        } else {
            AttachedControl::zero(m)
        };
        let start_ctl = if l + 1 <= n_blocks {
            c.attached.control(0.0, l + 1, m)
        } else {
            AttachedControl::zero(m)
        };
        let dev = (end_ctl.norm_integral() + start_ctl.norm_integral() - c.nu.atom_at(t)).abs();
        if dev > worst_ii2 {
            worst_ii2 = dev;
            loc_ii2 = format!("t={t}");
        }
        let mu_atom = c
            .mu
            .atom_at(t)
            .map(|a| a.mass.clone())
            .unwrap_or_else(|| vec![0.0; m]);
        let (ie, is) = (end_ctl.integral(), start_ctl.integral());
        for j in 0..m {
            let dev = (ie[j] + is[j] - mu_atom[j]).abs();
            if dev > worst_iii2 {
                worst_iii2 = dev;
                loc_iii2 = format!("t={t}, j={j}");
            }
        }
    }
    report.record("(ii.2) grid speeds", worst_ii2, loc_ii2);
    report.record("(iii.2) grid masses", worst_iii2, loc_iii2);

    // continuous parts agree: nu density equals l1 norm of mu density
    let mesh = merge_breaks(c.mu.density_breaks(), c.nu.0.density_breaks(), 1e-12);
    let mut worst_c = 0.0f64;
    let mut loc_c = String::from("-");
    for w in mesh.windows(2) {
        let len = w[1] - w[0];
        let mu_cell = c.mu.mass_oo(w[0], w[1]);
        let nu_cell = c.nu.mass_oo(w[0], w[1]);
        let dev = (nu_cell - l1_norm(&mu_cell)).abs() / len.max(1e-12);
        if dev > worst_c {
            worst_c = dev;
            loc_c = format!("cell [{:.4}, {:.4}]", w[0], w[1]);
        }
    }
    report.record("nu^c = |mu^c|", worst_c, loc_c);

    // domination: nu >= |mu| on atoms (densities covered above)
    let mut worst_d = 0.0f64;
    let mut loc_d = String::from("-");
    for a in c.mu.atoms() {
        let dev = (l1_norm(&a.mass) - c.nu.atom_at(a.t)).max(0.0);
        if dev > worst_d {
            worst_d = dev;
            loc_d = format!("t={}", a.t);
        }
    }
    report.record("nu >= |mu|", worst_d, loc_d);

    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> Grid {
        Grid::new(1, 2, 1, 1.0).unwrap()
    }

    #[test]
    fn tv_of_single_atom() {
        let mu = VectorMeasure::new(
            1.0,
            2,
            vec![Atom {
                t: 0.5,
                mass: vec![1.0, -2.0],
            }],
            vec![],
            vec![],
        )
        .unwrap();
        let tv = mu.tv_measure();
        assert_eq!(tv.atom_at(0.5), 3.0);
        assert_eq!(tv.total(), 3.0);
    }

    #[test]
    fn tv_of_zero_measure() {
        let mu = VectorMeasure::zero(1.0, 3);
        assert_eq!(mu.tv_measure().total(), 0.0);
    }

    #[test]
    fn tv_matches_partition_oracle() {
        // density (2, -1) on [0,1] plus atom (0.5, (1, 0))
        let mu = VectorMeasure::new(
            1.0,
            2,
            vec![Atom {
                t: 0.5,
                mass: vec![1.0, 0.0],
            }],
            vec![0.0, 1.0],
            vec![vec![2.0, -1.0]],
        )
        .unwrap();
        let tv = mu.tv_measure();
        assert!((tv.0.density_values()[0][0] - 3.0).abs() < 1e-15);
        assert_eq!(tv.atom_at(0.5), 1.0);
        // brute-force partition total variation of the distribution
        let parts = 40_000;
        let mut total = 0.0;
        let mut prev = mu.distribution(0.0).unwrap();
        for k in 1..=parts {
            let t = k as f64 / parts as f64;
            let cur = mu.distribution(t).unwrap();
            total += l1_norm(&crate::util::sub(&cur, &prev));
            prev = cur;
        }
        assert!((tv.total() - total).abs() < 1e-9, "tv {} vs oracle {total}", tv.total());
        assert!((tv.total() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn distribution_conventions() {
        let mu = VectorMeasure::new(
            1.0,
            1,
            vec![Atom {
                t: 0.5,
                mass: vec![2.0],
            }],
            vec![],
            vec![],
        )
        .unwrap();
        assert_eq!(mu.distribution(0.4).unwrap(), vec![0.0]);
        assert_eq!(mu.distribution(0.5).unwrap(), vec![2.0]);
        assert_eq!(mu.distribution_left(0.5).unwrap(), vec![0.0]);
        assert!(mu.distribution(1.5).is_err());
    }

    #[test]
    fn lebesgue_distribution() {
        let mu = VectorMeasure::new(1.0, 1, vec![], vec![0.0, 1.0], vec![vec![1.0]]).unwrap();
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            assert!((mu.distribution(t).unwrap()[0] - t).abs() < 1e-15);
        }
    }

    #[test]
    fn mixed_distribution_matches_partition_oracle() {
        let mu = VectorMeasure::new(
            2.0,
            1,
            vec![
                Atom {
                    t: 0.25,
                    mass: vec![1.5],
                },
                Atom {
                    t: 1.5,
                    mass: vec![-0.5],
                },
            ],
            vec![0.0, 1.0, 2.0],
            vec![vec![0.5], vec![-0.25]],
        )
        .unwrap();
        // oracle: fine Riemann sum of the density plus atom indicator sums
        let probe = 1.3;
        let parts = 200_000;
        let mut s = 0.0;
        for k in 0..parts {
            let t = probe * (k as f64 + 0.5) / parts as f64;
            let cell = if t < 1.0 { 0.5 } else { -0.25 };
            s += cell * probe / parts as f64;
        }
        s += 1.5; // atom at 0.25 <= probe
        let got = mu.distribution(probe).unwrap()[0];
        // the blind partition misses the density break by O(probe/parts)
        assert!((got - s).abs() < 1e-5, "{got} vs {s}");
    }

    #[test]
    fn strict_sense_control_validates() {
        let grid = grid2();
        let mu = VectorMeasure::new(2.0, 1, vec![], vec![0.0, 2.0], vec![vec![0.7]]).unwrap();
        let c = ImpulseControl::strict(grid, mu).unwrap();
        let rep = validate_impulse_control(&c, TOL_MEAS);
        assert!(rep.passed(), "{}", rep.summary());
    }

    #[test]
    fn constant_attached_atom_validates() {
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
        let c = ImpulseControl::from_measure(grid, mu).unwrap();
        let rep = validate_impulse_control(&c, TOL_MEAS);
        assert!(rep.passed(), "{}", rep.summary());
    }

    #[test]
    fn halved_variation_atom_fails_ii1() {
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
        let nu = ScalarMeasure::new(2.0, vec![(0.5, 1.0)], vec![], vec![]).unwrap();
        let attached = AttachedFamily::new(vec![(
            0.5,
            vec![
                AttachedControl::constant(vec![2.0]),
                AttachedControl::zero(1),
            ],
        )]);
        let c = ImpulseControl::new(grid, mu, nu, attached).unwrap();
        let rep = validate_impulse_control(&c, TOL_MEAS);
        assert!(!rep.passed());
        assert!(!rep.get("(ii.1) atom speeds").unwrap().pass);
    }

    #[test]
    fn later_block_default_for_grid_atoms() {
        let grid = grid2();
        let mu = VectorMeasure::new(
            2.0,
            1,
            vec![Atom {
                t: 1.0,
                mass: vec![3.0],
            }],
            vec![],
            vec![],
        )
        .unwrap();
        let c = ImpulseControl::from_measure(grid, mu).unwrap();
        assert!(c.attached.control(0.0, 2, 1).integral()[0] == 3.0);
        assert!(c.attached.control(1.0, 1, 1).is_zero());
        assert!(validate_impulse_control(&c, TOL_MEAS).passed());
    }
}
