//! Integration of the auxiliary time-space block system driven by an
//! extended control: fixed-step RK4 on the control mesh, blocks solved
//! sequentially so each block reads the previous blocks' stored trajectories.

use crate::dynamics::DelayDynamics;
use crate::error::{Error, Result};
use crate::graphcomp::ExtendedControl;
use crate::hermite::CubicHermite;
use crate::util::{all_finite, l1_norm};

pub const DEFAULT_SUBSTEPS: usize = 8;

/// An extended control together with the integrated block trajectories.
/// `tau_l(s) = (l-1)h + phi0(s)` is exact by construction; `y_l` is stored
/// densely with derivatives for cubic interpolation; `beta_l` is piecewise
/// linear with exact cell increments.
#[derive(Debug, Clone)]
pub struct ExtendedProcess {
    pub control: ExtendedControl,
    mesh: Vec<f64>,
    y: Vec<CubicHermite>,
    beta: Vec<Vec<f64>>,
}

impl ExtendedProcess {
    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }

    pub fn s_end(&self) -> f64 {
        *self.mesh.last().unwrap()
    }

    pub fn num_blocks(&self) -> usize {
        self.y.len()
    }

    pub fn tau_at(&self, l: usize, s: f64) -> f64 {
        (l - 1) as f64 * self.control.grid.period + self.control.phi0_at(s)
    }

    pub fn y_at(&self, l: usize, s: f64) -> Vec<f64> {
        self.y[l - 1].eval(s)
    }

    pub fn y_track(&self, l: usize) -> &CubicHermite {
        &self.y[l - 1]
    }

    pub fn beta_at(&self, l: usize, s: f64) -> f64 {
        let i = crate::util::cell_index(&self.mesh, s.clamp(0.0, self.s_end()));
        let k = self.control.cell_of(s.clamp(0.0, self.s_end()));
        self.beta[l - 1][i] + l1_norm(&self.control.w()[k][l - 1]) * (s - self.mesh[i])
    }

    pub fn beta_end(&self, l: usize) -> f64 {
        *self.beta[l - 1].last().unwrap()
    }

    pub fn y_end(&self, l: usize) -> Vec<f64> {
        self.y[l - 1].end_value().to_vec()
    }

    /// Evaluate the concatenated state path at a parameter in `[0, N*S]`.
    pub fn y_tilde(&self, s_tilde: f64) -> Vec<f64> {
        let (l, s) = self.split_tilde(s_tilde);
        self.y_at(l, s)
    }

    pub fn beta_tilde(&self, s_tilde: f64) -> f64 {
        let (l, s) = self.split_tilde(s_tilde);
        self.beta_at(l, s)
    }

    /// Block index and local parameter for a concatenated parameter value.
    pub fn split_tilde(&self, s_tilde: f64) -> (usize, f64) {
        let s_end = self.s_end();
        let nb = self.num_blocks();
        let total = nb as f64 * s_end;
        let st = s_tilde.clamp(0.0, total);
        let mut l = (st / s_end).floor() as usize + 1;
        if l > nb {
            l = nb;
        }
        let local = st - (l - 1) as f64 * s_end;
        (l, local.clamp(0.0, s_end))
    }
}

/// Integrate the block system for `ec` under `dyn_`: classical RK4 with
/// `substeps` steps per control cell, the control held constant per cell, the
/// variation component accumulated exactly.
pub fn integrate_acs(
    ec: &ExtendedControl,
    dyn_: &DelayDynamics,
    substeps: usize,
) -> Result<ExtendedProcess> {
    if dyn_.grid != ec.grid {
        return Err(Error::invalid("control and dynamics grids disagree"));
    }
    let substeps = substeps.max(1);
    let nb = ec.grid.num_periods;
    let n = dyn_.state_dim;
    let h = ec.grid.period;

    // refined mesh shared by all blocks
    let mut mesh: Vec<f64> = vec![0.0];
    for k in 0..ec.num_cells() {
        let (a, b) = (ec.mesh()[k], ec.mesh()[k + 1]);
        for j in 1..=substeps {
            mesh.push(a + (b - a) * j as f64 / substeps as f64);
        }
    }
    let nn = mesh.len();

    let mut tracks: Vec<CubicHermite> = Vec::with_capacity(nb);
    let mut betas: Vec<Vec<f64>> = Vec::with_capacity(nb);
    let mut y_start = dyn_.x0.clone();
    let mut beta_start = 0.0;

    for l in 1..=nb {
        let tau_off = (l - 1) as f64 * h;
        // delay slots at parameter s for current state y
        let slots_at = |s: f64, y: &[f64], tracks: &[CubicHermite]| -> Result<Vec<Vec<f64>>> {
            let tau_l = tau_off + ec.phi0_at(s);
            let mut slots = Vec::with_capacity(ec.grid.delay_depth + 1);
            for k in 0..=ec.grid.delay_depth {
                if k == 0 {
                    slots.push(y.to_vec());
                } else if l as isize - k as isize >= 1 {
                    slots.push(tracks[l - 1 - k].eval(s));
                } else {
                    let (v, _) = dyn_.history_at(tau_l - k as f64 * h)?;
                    slots.push(v);
                }
            }
            Ok(slots)
        };
        // control is held at the step's own cell; at cell boundaries the
        // right-hand side is one-sided
        let rhs = |s: f64, y: &[f64], cell: usize, tracks: &[CubicHermite]| -> Result<Vec<f64>> {
            let tau_l = tau_off + ec.phi0_at(s);
            let slots = slots_at(s, y, tracks)?;
            let (f, g) = dyn_.eval_rhs(tau_l, &slots)?;
            let w0 = ec.w0()[cell];
            let wl = &ec.w()[cell][l - 1];
            let mut dy: Vec<f64> = f.iter().map(|fi| fi * w0).collect();
            for (j, gj) in g.iter().enumerate() {
                for (d, gc) in dy.iter_mut().zip(gj) {
                    *d += gc * wl[j];
                }
            }
            Ok(dy)
        };

        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(nn);
        let mut der_l: Vec<Vec<f64>> = Vec::with_capacity(nn);
        let mut der_r: Vec<Vec<f64>> = Vec::with_capacity(nn);
        let mut beta: Vec<f64> = Vec::with_capacity(nn);
        let mut y = y_start.clone();
        let mut b = beta_start;
        vals.push(y.clone());
        der_l.push(Vec::new()); // patched to the first right slope below
        der_r.push(Vec::new());
        beta.push(b);
        for i in 0..nn - 1 {
            let (s0, s1) = (mesh[i], mesh[i + 1]);
            let ds = s1 - s0;
            let cell = ec.cell_of(0.5 * (s0 + s1));
            let k1 = rhs(s0, &y, cell, &tracks)?;
            der_r[i] = k1.clone();
            if i == 0 {
                der_l[0] = k1.clone();
            }
            let mut y2 = y.clone();
            crate::util::axpy(&mut y2, 0.5 * ds, &k1);
            let k2 = rhs(s0 + 0.5 * ds, &y2, cell, &tracks)?;
            let mut y3 = y.clone();
            crate::util::axpy(&mut y3, 0.5 * ds, &k2);
            let k3 = rhs(s0 + 0.5 * ds, &y3, cell, &tracks)?;
            let mut y4 = y.clone();
            crate::util::axpy(&mut y4, ds, &k3);
            let k4 = rhs(s1, &y4, cell, &tracks)?;
            for c in 0..n {
                y[c] += ds / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            if !all_finite(&y) {
                return Err(Error::numeric(format!(
                    "state blew up in block {l} near s={s1}"
                )));
            }
            b += l1_norm(&ec.w()[cell][l - 1]) * ds;
            vals.push(y.clone());
            der_l.push(rhs(s1, &y, cell, &tracks)?);
            der_r.push(Vec::new());
            beta.push(b);
        }
        let last = der_l.last().unwrap().clone();
        *der_r.last_mut().unwrap() = last;
        y_start = y;
        beta_start = b;
        tracks.push(CubicHermite::with_sided_slopes(
            mesh.clone(),
            vals,
            der_l,
            der_r,
        )?);
        betas.push(beta);
    }

    Ok(ExtendedProcess {
        control: ec.clone(),
        mesh,
        y: tracks,
        beta: betas,
    })
}

/// Self-convergence order of the integrator on the given scenario: compare
/// runs at `substeps` and `2*substeps` against a fine reference and fit the
/// observed order. Exact integrations report the cap.
pub fn richardson_check(ec: &ExtendedControl, dyn_: &DelayDynamics, substeps: usize) -> Result<f64> {
    const ORDER_CAP: f64 = 8.0;
    let coarse = integrate_acs(ec, dyn_, substeps)?;
    let mid = integrate_acs(ec, dyn_, substeps * 2)?;
    let fine = integrate_acs(ec, dyn_, substeps * 8)?;
    let err = |p: &ExtendedProcess| -> f64 {
        let mut e = 0.0f64;
        for l in 1..=ec.grid.num_periods {
            let a = p.y_end(l);
            let b = fine.y_end(l);
            e = e.max(crate::util::linf_norm(&crate::util::sub(&a, &b)));
            // interior probe
            let s = 0.37 * ec.s_end();
            e = e.max(crate::util::linf_norm(&crate::util::sub(
                &p.y_at(l, s),
                &fine.y_at(l, s),
            )));
        }
        e
    };
    let e1 = err(&coarse);
    let e2 = err(&mid);
    if e2 < 1e-14 || e1 < 1e-14 {
        return Ok(ORDER_CAP);
    }
    Ok((e1 / e2).log2().min(ORDER_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::ControlCone;
    use crate::dynamics::{dynamics_var_names, Grid};
    use crate::expr::parse_expression;
    use crate::graphcomp::rectilinear_gc;
    use crate::hermite::CubicHermite as Hist;
    use crate::measure::{Atom, VectorMeasure};

    fn make_dyn(f: &str, g: &str, grid: Grid) -> DelayDynamics {
        let names = dynamics_var_names(1, grid.delay_depth);
        let vars: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        DelayDynamics::new(
            grid,
            1,
            vec![parse_expression(f, &vars).unwrap()],
            vec![vec![parse_expression(g, &vars).unwrap()]],
            Hist::constant(-(grid.delay_depth as f64) * grid.period, 0.0, vec![1.0]),
            vec![1.0],
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn frozen_system_stays_put() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "0", grid);
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
        let (ec, _) = rectilinear_gc(&mu, &grid, &ControlCone::nonneg(1)).unwrap();
        let ep = integrate_acs(&ec, &d, 4).unwrap();
        assert!((ep.y_end(1)[0] - 1.0).abs() < 1e-14);
        assert!((ep.y_end(2)[0] - 1.0).abs() < 1e-14);
        // variation still accumulates
        assert!((ep.beta_end(2) - 2.0).abs() < 1e-12);
        // canonical frame: S = h + total variation
        assert!((ep.s_end() - (1.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn single_atom_jump_matches_hand_integration() {
        // g depends on the delayed state, which is the constant history 1
        // during the jump, so the jump adds exactly the atom mass 2.
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "x1", grid);
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
        let (ec, _) = rectilinear_gc(&mu, &grid, &ControlCone::nonneg(1)).unwrap();
        let ep = integrate_acs(&ec, &d, 8).unwrap();
        // block 1 jumps from 1 to 3 across the plateau [0.5, 2.5]
        assert!((ep.y_at(1, 0.5)[0] - 1.0).abs() < 1e-12);
        assert!((ep.y_at(1, 2.5)[0] - 3.0).abs() < 1e-12);
        assert!((ep.y_end(1)[0] - 3.0).abs() < 1e-12);
        // block 2 sees zero space derivative on the plateau and flat after
        assert!((ep.y_end(2)[0] - 3.0).abs() < 1e-12);
        // chaining is exact
        assert!((ep.y_at(2, 0.0)[0] - ep.y_end(1)[0]).abs() == 0.0);
    }

    #[test]
    fn tau_is_exact() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "x1", grid);
        let mu = VectorMeasure::new(2.0, 1, vec![], vec![0.0, 2.0], vec![vec![0.4]]).unwrap();
        let (ec, _) = rectilinear_gc(&mu, &grid, &ControlCone::nonneg(1)).unwrap();
        let ep = integrate_acs(&ec, &d, 4).unwrap();
        for k in 0..=20 {
            let s = ep.s_end() * k as f64 / 20.0;
            assert_eq!(ep.tau_at(2, s), 1.0 + ec.phi0_at(s));
        }
    }

    #[test]
    fn richardson_order_linear_scenario() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("-0.8*x0 + 0.3*x1", "0.5*x0", grid);
        let mu = VectorMeasure::new(2.0, 1, vec![], vec![0.0, 2.0], vec![vec![0.6]]).unwrap();
        let (ec, _) = rectilinear_gc(&mu, &grid, &ControlCone::nonneg(1)).unwrap();
        let order = richardson_check(&ec, &d, 2).unwrap();
        assert!(order >= 3.8, "observed order {order}");
    }

    #[test]
    fn richardson_exact_case_is_capped() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "0", grid);
        let mu = VectorMeasure::new(2.0, 1, vec![], vec![0.0, 2.0], vec![vec![0.6]]).unwrap();
        let (ec, _) = rectilinear_gc(&mu, &grid, &ControlCone::nonneg(1)).unwrap();
        let order = richardson_check(&ec, &d, 2).unwrap();
        assert_eq!(order, 8.0);
    }

    #[test]
    fn richardson_order_bilinear_scenario() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0.2*x0*x1 - 0.5*x0", "0.3 + 0.2*x1", grid);
        let mu = VectorMeasure::new(2.0, 1, vec![], vec![0.0, 2.0], vec![vec![0.5]]).unwrap();
        let (ec, _) = rectilinear_gc(&mu, &grid, &ControlCone::nonneg(1)).unwrap();
        let order = richardson_check(&ec, &d, 2).unwrap();
        assert!(order >= 3.5, "observed order {order}");
    }
}
