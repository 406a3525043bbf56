//! The two directions of the impulse/extended correspondence: read an
//! impulse trajectory off an extended process through the inverse time
//! change, extract the impulse control from a canonical process, build the
//! canonical process of an impulse control, and approximate impulsive
//! trajectories by strict-sense ones.

use crate::dynamics::DelayDynamics;
use crate::error::{Error, Result};
use crate::extsys::{integrate_acs, ExtendedProcess};
use crate::graphcomp::{canonicalize, ExtendedControl};
use crate::measure::{
    validate_impulse_control, Atom, AttachedControl, AttachedFamily, ImpulseControl,
    ScalarMeasure, VectorMeasure, TOL_MEAS,
};
use crate::piecewise::{Monotone, PwlCurve};
use crate::util::{l1_norm, merge_breaks};

const TIME_EPS: f64 = 1e-12;

/// A right-continuous BV state/variation pair on `[-Mh, T]`, realized as an
/// extended process read through the inverse time change.
#[derive(Debug, Clone)]
pub struct ImpulseTrajectory {
    process: ExtendedProcess,
    sigma: Monotone,
    jump_table: Vec<JumpMarker>,
}

#[derive(Debug, Clone)]
pub struct JumpMarker {
    pub t: f64,
    pub x_pre: Vec<f64>,
    pub x_post: Vec<f64>,
    pub v_pre: f64,
    pub v_post: f64,
}

impl ImpulseTrajectory {
    pub fn grid(&self) -> &crate::dynamics::Grid {
        &self.process.control.grid
    }

    pub fn process(&self) -> &ExtendedProcess {
        &self.process
    }

    /// The inverse time change mapping `[0, T]` onto the concatenated
    /// parameter interval.
    pub fn time_change(&self) -> &Monotone {
        &self.sigma
    }

    pub fn jump_table(&self) -> &[JumpMarker] {
        &self.jump_table
    }

    fn history_value(&self, dyn_: &DelayDynamics, t: f64) -> Result<Vec<f64>> {
        Ok(dyn_.history_at(t)?.0)
    }

    /// State value, right continuous; history values for `t < 0`.
    pub fn x(&self, t: f64) -> Vec<f64> {
        if t < 0.0 {
            unreachable!("use x_with_history for negative times")
        }
        self.process.y_tilde(self.sigma.value(t))
    }

    pub fn x_with_history(&self, dyn_: &DelayDynamics, t: f64) -> Result<Vec<f64>> {
        if t < 0.0 {
            self.history_value(dyn_, t)
        } else {
            Ok(self.x(t))
        }
    }

    /// Left limit of the state at `t > 0`.
    pub fn x_minus(&self, t: f64) -> Vec<f64> {
        self.process.y_tilde(self.sigma.left_limit(t))
    }

    pub fn v(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.process.beta_tilde(self.sigma.value(t))
    }

    pub fn v_minus(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.process.beta_tilde(self.sigma.left_limit(t))
    }

    pub fn x_end(&self) -> Vec<f64> {
        self.x(self.grid().horizon())
    }

    pub fn v_end(&self) -> f64 {
        self.v(self.grid().horizon())
    }
}

/// Fast-time state and variation arcs attached to the jumps.
#[derive(Debug, Clone)]
pub struct JumpArc {
    pub block: usize,
    pub r: f64,
    /// physical jump time `r + (block-1) h`
    pub t: f64,
    /// samples of the unit jump parameter
    pub s: Vec<f64>,
    pub zeta: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
}

impl JumpArc {
    pub fn zeta_at(&self, s: f64) -> Vec<f64> {
        let i = crate::util::cell_index(&self.s, s.clamp(0.0, 1.0));
        let (a, b) = (self.s[i], self.s[i + 1]);
        let w = if b > a { (s.clamp(0.0, 1.0) - a) / (b - a) } else { 0.0 };
        self.zeta[i]
            .iter()
            .zip(&self.zeta[i + 1])
            .map(|(p, q)| p + w * (q - p))
            .collect()
    }

    pub fn theta_at(&self, s: f64) -> f64 {
        let i = crate::util::cell_index(&self.s, s.clamp(0.0, 1.0));
        let (a, b) = (self.s[i], self.s[i + 1]);
        let w = if b > a { (s.clamp(0.0, 1.0) - a) / (b - a) } else { 0.0 };
        self.theta[i] + w * (self.theta[i + 1] - self.theta[i])
    }

    pub fn start(&self) -> (&[f64], f64) {
        (&self.zeta[0], self.theta[0])
    }

    pub fn end(&self) -> (&[f64], f64) {
        (self.zeta.last().unwrap(), *self.theta.last().unwrap())
    }
}

#[derive(Debug, Clone, Default)]
pub struct JumpArcSet {
    pub arcs: Vec<JumpArc>,
}

impl JumpArcSet {
    pub fn get(&self, block: usize, r: f64) -> Option<&JumpArc> {
        self.arcs
            .iter()
            .find(|a| a.block == block && (a.r - r).abs() <= TIME_EPS)
    }

    pub fn active_keys(&self) -> Vec<f64> {
        let mut keys: Vec<f64> = Vec::new();
        for a in &self.arcs {
            if !keys.iter().any(|k| (k - a.r).abs() <= TIME_EPS) {
                keys.push(a.r);
            }
        }
        keys.sort_by(|x, y| x.partial_cmp(y).unwrap());
        keys
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }
}

/// An impulse control together with its trajectory and jump arcs.
#[derive(Debug, Clone)]
pub struct ImpulseProcess {
    pub control: ImpulseControl,
    pub trajectory: ImpulseTrajectory,
    pub jumps: JumpArcSet,
    /// set when a non-canonical input was canonicalized on the way in
    pub canonicalized_input: bool,
}

/// Read the impulse trajectory `(x, v) = (y~, beta~) o sigma~` off an
/// extended process.
pub fn gc_solution(ep: &ExtendedProcess) -> ImpulseTrajectory {
    let tau = ep.control.tau_tilde();
    let sigma = tau.right_inverse();
    let mut jump_table = Vec::new();
    for (t, s_lo, s_hi) in sigma.jumps() {
        let marker = JumpMarker {
            t,
            x_pre: ep.y_tilde(s_lo),
            x_post: ep.y_tilde(s_hi),
            v_pre: ep.beta_tilde(s_lo),
            v_post: ep.beta_tilde(s_hi),
        };
        // the time change also pauses in blocks whose state does not move;
        // only actual trajectory jumps are listed
        let moved = crate::util::linf_norm(&crate::util::sub(&marker.x_post, &marker.x_pre))
            + (marker.v_post - marker.v_pre).abs();
        if moved > 1e-13 {
            jump_table.push(marker);
        }
    }
    ImpulseTrajectory {
        process: ep.clone(),
        sigma,
        jump_table,
    }
}

/// Jump arcs of a canonical process: restrictions of the block trajectories
/// to the time-change plateaus, rescaled to the unit interval.
pub fn extract_jump_arcs(ep: &ExtendedProcess) -> JumpArcSet {
    let ec = &ep.control;
    let h = ec.grid.period;
    let mut arcs = Vec::new();
    for (a, b, r) in ec.plateaus() {
        let delta = b - a;
        let nodes: Vec<f64> = ep
            .mesh()
            .iter()
            .copied()
            .filter(|&s| s >= a - TIME_EPS && s <= b + TIME_EPS)
            .collect();
        for l in 1..=ec.grid.num_periods {
            let s: Vec<f64> = nodes.iter().map(|&s| ((s - a) / delta).clamp(0.0, 1.0)).collect();
            let zeta: Vec<Vec<f64>> = nodes.iter().map(|&sn| ep.y_at(l, sn)).collect();
            let theta: Vec<f64> = nodes.iter().map(|&sn| ep.beta_at(l, sn)).collect();
            arcs.push(JumpArc {
                block: l,
                r,
                t: r + (l - 1) as f64 * h,
                s,
                zeta,
                theta,
            });
        }
    }
    JumpArcSet { arcs }
}

/// Extract the impulse control represented by a canonical extended process:
/// distribution functions through the inverse time change and attached
/// controls from the plateau restrictions. Non-canonical inputs are
/// canonicalized first (flagged on the output).
pub fn extended_to_impulse(
    ep: &ExtendedProcess,
    dyn_: &DelayDynamics,
    substeps: usize,
) -> Result<ImpulseProcess> {
    let mut canonicalized = false;
    let owned;
    let ep = if ep.control.is_canonical(1e-9) {
        ep
    } else {
        canonicalized = true;
        let canon = canonicalize(&ep.control)?;
        owned = integrate_acs(&canon, dyn_, substeps)?;
        &owned
    };
    let ec = &ep.control;
    let grid = ec.grid;
    let h = grid.period;
    let nb = grid.num_periods;
    let m = grid.control_dim;
    let horizon = grid.horizon();

    // atoms and attached controls from the plateaus
    let mut mu_atoms: Vec<Atom> = Vec::new();
    let mut nu_atoms: Vec<(f64, f64)> = Vec::new();
    let mut attached_entries: Vec<(f64, Vec<AttachedControl>)> = Vec::new();
    let mut add_atom = |t: f64, mass: Vec<f64>, tv: f64| {
        if tv <= 0.0 && l1_norm(&mass) == 0.0 {
            return;
        }
        match mu_atoms.iter_mut().find(|a| (a.t - t).abs() <= TIME_EPS) {
            Some(a) => {
                for (x, m) in a.mass.iter_mut().zip(&mass) {
                    *x += m;
                }
                let entry = nu_atoms
                    .iter_mut()
                    .find(|(tt, _)| (tt - t).abs() <= TIME_EPS)
                    .unwrap();
                entry.1 += tv;
            }
            None => {
                mu_atoms.push(Atom { t, mass });
                nu_atoms.push((t, tv));
            }
        }
    };
    for (a, b, r) in ec.plateaus() {
        let delta = b - a;
        // per-block attached control: breakpoints from the control mesh
        let mut per_block = Vec::with_capacity(nb);
        let cells: Vec<usize> = (0..ec.num_cells())
            .filter(|&k| ec.mesh()[k] >= a - TIME_EPS && ec.mesh()[k + 1] <= b + TIME_EPS)
            .collect();
        for l in 1..=nb {
            let mut breaks = vec![0.0];
            let mut values = Vec::new();
            for &k in &cells {
                breaks.push(((ec.mesh()[k + 1] - a) / delta).min(1.0));
                values.push(ec.w()[k][l - 1].iter().map(|x| x * delta).collect());
            }
            *breaks.last_mut().unwrap() = 1.0;
            let ctl = AttachedControl { breaks, values };
            let mass = ctl.integral();
            let tv = ctl.norm_integral();
            add_atom(r + (l - 1) as f64 * h, mass, tv);
            per_block.push(ctl);
        }
        attached_entries.push((r, per_block));
    }

    // continuous part from the rising cells, folded into physical time
    let mut t_breaks: Vec<f64> = vec![0.0, horizon];
    for k in 0..ec.num_cells() {
        if ec.w0()[k] > 0.0 {
            for l in 1..=nb {
                let off = (l - 1) as f64 * h;
                let ta = off + ec.phi0_at(ec.mesh()[k]);
                let tb = off + ec.phi0_at(ec.mesh()[k + 1]);
                t_breaks = merge_breaks(&t_breaks, &[ta, tb], TIME_EPS);
            }
        }
    }
    let mut dens_values: Vec<Vec<f64>> = vec![vec![0.0; m]; t_breaks.len() - 1];
    let mut nu_dens: Vec<f64> = vec![0.0; t_breaks.len() - 1];
    for k in 0..ec.num_cells() {
        if ec.w0()[k] > 0.0 {
            for l in 1..=nb {
                let off = (l - 1) as f64 * h;
                let ta = off + ec.phi0_at(ec.mesh()[k]);
                let tb = off + ec.phi0_at(ec.mesh()[k + 1]);
                let dens: Vec<f64> = ec.w()[k][l - 1].iter().map(|x| x / ec.w0()[k]).collect();
                let dens_tv = l1_norm(&dens);
                for (i, win) in t_breaks.windows(2).enumerate() {
                    let mid = 0.5 * (win[0] + win[1]);
                    if mid > ta && mid < tb {
                        dens_values[i] = dens.clone();
                        nu_dens[i] = dens_tv;
                    }
                }
            }
        }
    }

    let mu = VectorMeasure::new(horizon, m, mu_atoms, t_breaks.clone(), dens_values)?;
    let nu = ScalarMeasure::new(horizon, nu_atoms, t_breaks, nu_dens)?;
    let control = ImpulseControl::new(grid, mu, nu, AttachedFamily::new(attached_entries))?;
    let report = validate_impulse_control(&control, TOL_MEAS);
    if !report.passed() {
        return Err(Error::numeric(format!(
            "extracted impulse control failed validation:\n{}",
            report.summary()
        )));
    }
    Ok(ImpulseProcess {
        control,
        trajectory: gc_solution(ep),
        jumps: extract_jump_arcs(ep),
        canonicalized_input: canonicalized,
    })
}

/// Per-parameter fold of the variation measure: the scalar time change
/// `phi(r) = r + sum_l nu_l([0, r])` used to build the canonical control.
fn variation_fold(c: &ImpulseControl) -> Result<Monotone> {
    let grid = &c.grid;
    let h = grid.period;
    let nb = grid.num_periods;
    let m = grid.control_dim;
    let mut r_mesh = vec![0.0, h];
    for l in 1..=nb {
        let off = (l - 1) as f64 * h;
        let folded: Vec<f64> = c
            .nu
            .0
            .density_breaks()
            .iter()
            .map(|b| b - off)
            .filter(|r| *r > TIME_EPS && *r < h - TIME_EPS)
            .collect();
        r_mesh = merge_breaks(&r_mesh, &folded, TIME_EPS);
    }
    let mut interior: Vec<f64> = Vec::new();
    for (t, _) in c.nu.atoms() {
        let ratio = t / h;
        if (ratio - ratio.round()).abs() > TIME_EPS {
            let l = grid.block_of(t);
            interior.push(t - (l - 1) as f64 * h);
        }
    }
    interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
    r_mesh = merge_breaks(&r_mesh, &interior, TIME_EPS);

    let jump_at = |r: f64| -> f64 {
        if r.abs() <= TIME_EPS {
            (1..=nb)
                .map(|l| c.attached.control(0.0, l, m).norm_integral())
                .sum()
        } else if (r - h).abs() <= TIME_EPS {
            (1..=nb)
                .map(|l| c.attached.control(h, l, m).norm_integral())
                .sum()
        } else {
            (1..=nb)
                .map(|l| c.nu.atom_at(r + (l - 1) as f64 * h))
                .sum()
        }
    };
    let n_nodes = r_mesh.len();
    let mut lo = vec![0.0; n_nodes];
    let mut hi = vec![0.0; n_nodes];
    for i in 0..n_nodes {
        hi[i] = lo[i] + jump_at(r_mesh[i]);
        if i + 1 < n_nodes {
            let (ra, rb) = (r_mesh[i], r_mesh[i + 1]);
            let dens: f64 = (1..=nb)
                .map(|l| {
                    let off = (l - 1) as f64 * h;
                    c.nu.mass_oo(off + ra, off + rb)
                })
                .sum();
            lo[i + 1] = hi[i] + (rb - ra) + dens;
        }
    }
    Monotone::with_jumps(r_mesh, lo, hi)
}

/// Build the canonical extended process of a valid impulse control and
/// integrate the block system under it.
pub fn impulse_to_extended(
    c: &ImpulseControl,
    dyn_: &DelayDynamics,
    substeps: usize,
) -> Result<ExtendedProcess> {
    let report = validate_impulse_control(c, TOL_MEAS);
    if !report.passed() {
        return Err(Error::invalid(format!(
            "impulse control failed validation:\n{}",
            report.summary()
        )));
    }
    let grid = c.grid;
    let h = grid.period;
    let nb = grid.num_periods;
    let m = grid.control_dim;
    let phi = variation_fold(c)?;
    let r_mesh = phi.nodes().to_vec();

    let mut mesh: Vec<f64> = vec![0.0];
    let mut w0: Vec<f64> = Vec::new();
    let mut w: Vec<Vec<Vec<f64>>> = Vec::new();
    for (i, &r) in r_mesh.iter().enumerate() {
        let s_lo = phi.left_limit(r).min(phi.value(r));
        let s_lo = if i == 0 { 0.0 } else { s_lo };
        let s_hi = if i == 0 {
            phi.right_limit(0.0)
        } else {
            phi.value(r)
        };
        let delta = s_hi - s_lo;
        if delta > 0.0 {
            // jump interval: slopes come from the attached controls
            let key = if r.abs() <= TIME_EPS {
                0.0
            } else if (r - h).abs() <= TIME_EPS {
                h
            } else {
                r
            };
            let ctls: Vec<AttachedControl> =
                (1..=nb).map(|l| c.attached.control(key, l, m)).collect();
            let mut gamma_breaks = vec![0.0, 1.0];
            for ctl in &ctls {
                gamma_breaks = merge_breaks(&gamma_breaks, &ctl.breaks, 1e-12);
            }
            for gwin in gamma_breaks.windows(2) {
                let gmid = 0.5 * (gwin[0] + gwin[1]);
                let cell: Vec<Vec<f64>> = ctls
                    .iter()
                    .map(|ctl| ctl.value_at(gmid).iter().map(|x| x / delta).collect())
                    .collect();
                mesh.push(s_lo + gwin[1] * delta);
                w0.push(0.0);
                w.push(cell);
            }
        }
        if i + 1 < r_mesh.len() {
            let (ra, rb) = (r, r_mesh[i + 1]);
            let s_next = phi.left_limit(rb);
            let s_len = s_next - s_hi;
            let speed = (rb - ra) / s_len;
            let mut cell = vec![vec![0.0; m]; nb];
            for l in 1..=nb {
                let off = (l - 1) as f64 * h;
                let mass = c.mu.mass_oo(off + ra, off + rb);
                for j in 0..m {
                    cell[l - 1][j] = mass[j] / s_len;
                }
            }
            mesh.push(s_next);
            w0.push(speed);
            w.push(cell);
        }
    }
    let ec = ExtendedControl::new(grid, mesh, w0, w)?;
    integrate_acs(&ec, dyn_, substeps)
}

/// Simulate an impulse control: canonical process, trajectory, jump arcs.
pub fn simulate_impulse(
    c: &ImpulseControl,
    dyn_: &DelayDynamics,
    substeps: usize,
) -> Result<ImpulseProcess> {
    let ep = impulse_to_extended(c, dyn_, substeps)?;
    let trajectory = gc_solution(&ep);
    let jumps = extract_jump_arcs(&ep);
    Ok(ImpulseProcess {
        control: c.clone(),
        trajectory,
        jumps,
        canonicalized_input: false,
    })
}

/// A strict-sense process approximating an impulse process.
#[derive(Debug, Clone)]
pub struct StrictApproximation {
    pub epsilon: f64,
    /// the absolutely continuous control path `u_i` over physical time
    pub control_path: PwlCurve,
    pub trajectory: ImpulseTrajectory,
    pub variation_total: f64,
}

/// Replace the time-change plateaus by steep strictly increasing ramps of
/// width proportional to `2^-level` and re-integrate. Strict-sense inputs are
/// reproduced exactly for every level; as the level grows the trajectories
/// converge to the impulse solution away from the jump times.
pub fn strict_sense_approximation(
    c: &ImpulseControl,
    dyn_: &DelayDynamics,
    level: u32,
    substeps: usize,
) -> Result<StrictApproximation> {
    let ep = impulse_to_extended(c, dyn_, substeps)?;
    let ec = &ep.control;
    let grid = ec.grid;
    let h = grid.period;
    let eps = 0.5f64.powi(level as i32);

    let plateaus = ec.plateaus();
    // safe squeeze width per plateau: half the gap to the neighbour jumps
    let mut jump_rs: Vec<f64> = plateaus.iter().map(|&(_, _, r)| r).collect();
    jump_rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let width_for = |r: f64| -> f64 {
        let mut left_gap = r;
        let mut right_gap = h - r;
        for &jr in &jump_rs {
            if jr < r - TIME_EPS {
                left_gap = left_gap.min(r - jr);
            }
            if jr > r + TIME_EPS {
                right_gap = right_gap.min(jr - r);
            }
        }
        if r <= TIME_EPS {
            0.5 * eps * right_gap
        } else {
            0.5 * eps * left_gap
        }
    };

    // rebuild phi0 as a strictly increasing node polyline, then re-derive
    // the time speeds on the refined mesh; space speeds are untouched
    let phi0 = ec.phi0_curve();
    let mut cut_points: Vec<f64> = Vec::new();
    struct Patch {
        s_from: f64,
        s_to: f64,
        v_from: f64,
        v_to: f64,
    }
    let mut patches: Vec<Patch> = Vec::new();
    let sigma = phi0.right_inverse();
    for &(_a, b, r) in &plateaus {
        let width = width_for(r);
        if width <= 0.0 {
            continue;
        }
        if r <= TIME_EPS {
            // initial plateau: ramp forward into the rising part
            let s_to = sigma.value(width);
            patches.push(Patch {
                s_from: 0.0,
                s_to,
                v_from: 0.0,
                v_to: width,
            });
            cut_points.push(s_to);
        } else {
            let s_from = sigma.value(r - width);
            patches.push(Patch {
                s_from,
                s_to: b,
                v_from: r - width,
                v_to: r,
            });
            cut_points.push(s_from);
        }
    }
    cut_points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let refined = merge_breaks(ec.mesh(), &cut_points, TIME_EPS);

    let phi0_i = |s: f64| -> f64 {
        for p in &patches {
            if s >= p.s_from - TIME_EPS && s <= p.s_to + TIME_EPS {
                if p.s_to - p.s_from <= TIME_EPS {
                    return p.v_to;
                }
                let w = (s - p.s_from) / (p.s_to - p.s_from);
                return p.v_from + w * (p.v_to - p.v_from);
            }
        }
        ec.phi0_at(s)
    };

    let mut w0 = Vec::with_capacity(refined.len() - 1);
    let mut w = Vec::with_capacity(refined.len() - 1);
    for win in refined.windows(2) {
        let (s0, s1) = (win[0], win[1]);
        w0.push((phi0_i(s1) - phi0_i(s0)) / (s1 - s0));
        let k = ec.cell_of(0.5 * (s0 + s1));
        w.push(ec.w()[k].clone());
    }
    let ec_i = ExtendedControl::new(grid, refined, w0, w)?;
    let ep_i = integrate_acs(&ec_i, dyn_, substeps)?;

    // u_i = phi~ o sigma~_i is piecewise linear over physical time
    let mut t_nodes: Vec<f64> = Vec::new();
    let mut u_vals: Vec<Vec<f64>> = Vec::new();
    for l in 1..=grid.num_periods {
        let off = (l - 1) as f64 * h;
        for (i, &s) in ec_i.mesh().iter().enumerate() {
            if l > 1 && i == 0 {
                continue;
            }
            let t = off + ec_i.phi0_at(s);
            if let Some(&last) = t_nodes.last() {
                if t - last <= TIME_EPS {
                    continue;
                }
            }
            t_nodes.push(t);
            u_vals.push(ec_i.phi_at(l, s));
        }
    }
    let control_path = PwlCurve::new(t_nodes, u_vals)?;
    let variation_total = ep_i.beta_end(grid.num_periods);
    Ok(StrictApproximation {
        epsilon: eps,
        control_path,
        trajectory: gc_solution(&ep_i),
        variation_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::ControlCone;
    use crate::dynamics::{dynamics_var_names, Grid};
    use crate::expr::parse_expression;
    use crate::graphcomp::{control_deviation, rectilinear_gc};
    use crate::hermite::CubicHermite;

    fn make_dyn(f: &str, g: &str, grid: Grid) -> DelayDynamics {
        let names = dynamics_var_names(1, grid.delay_depth);
        let vars: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        DelayDynamics::new(
            grid,
            1,
            vec![parse_expression(f, &vars).unwrap()],
            vec![vec![parse_expression(g, &vars).unwrap()]],
            CubicHermite::constant(-(grid.delay_depth as f64) * grid.period, 0.0, vec![1.0]),
            vec![1.0],
            100.0,
        )
        .unwrap()
    }

    fn atom_measure() -> VectorMeasure {
        VectorMeasure::new(
            2.0,
            1,
            vec![Atom {
                t: 0.5,
                mass: vec![2.0],
            }],
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn gc_solution_single_atom_jump() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "x1", grid);
        let (ec, _) = rectilinear_gc(&atom_measure(), &grid, &ControlCone::nonneg(1)).unwrap();
        let ep = integrate_acs(&ec, &d, 8).unwrap();
        let traj = gc_solution(&ep);
        assert!((traj.x(0.4)[0] - 1.0).abs() < 1e-12);
        assert!((traj.x(0.5)[0] - 3.0).abs() < 1e-12);
        assert!((traj.x_minus(0.5)[0] - 1.0).abs() < 1e-12);
        assert!((traj.x(2.0)[0] - 3.0).abs() < 1e-12);
        assert!((traj.v(0.4) - 0.0).abs() < 1e-12);
        assert!((traj.v(0.5) - 2.0).abs() < 1e-12);
        assert_eq!(traj.jump_table().len(), 1);
        assert!((traj.jump_table()[0].t - 0.5).abs() < 1e-12);
    }

    #[test]
    fn frozen_system_constant_state() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "0", grid);
        let (ec, _) = rectilinear_gc(&atom_measure(), &grid, &ControlCone::nonneg(1)).unwrap();
        let ep = integrate_acs(&ec, &d, 4).unwrap();
        let traj = gc_solution(&ep);
        for k in 0..=10 {
            let t = 2.0 * k as f64 / 10.0;
            assert!((traj.x(t)[0] - 1.0).abs() < 1e-13);
        }
        assert!((traj.v_end() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_control() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "x1", grid);
        let mu = VectorMeasure::new(
            2.0,
            1,
            vec![
                Atom {
                    t: 0.5,
                    mass: vec![2.0],
                },
                Atom {
                    t: 1.25,
                    mass: vec![-0.5],
                },
            ],
            vec![0.0, 0.75, 2.0],
            vec![vec![0.4], vec![-0.1]],
        )
        .unwrap();
        let c = ImpulseControl::from_measure(grid, mu).unwrap();
        let ep = impulse_to_extended(&c, &d, 6).unwrap();
        assert!(ep.control.is_canonical(1e-9));
        let back = extended_to_impulse(&ep, &d, 6).unwrap();
        assert!(!back.canonicalized_input);
        // distribution residuals
        for k in 0..=50 {
            let t = 2.0 * k as f64 / 50.0;
            let a = c.mu.distribution(t).unwrap();
            let b = back.control.mu.distribution(t).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-9, "mu mismatch at t={t}");
            let an = c.nu.distribution(t).unwrap();
            let bn = back.control.nu.distribution(t).unwrap();
            assert!((an - bn).abs() < 1e-9, "nu mismatch at t={t}");
        }
        // attached integrals
        for (r, per_block) in back.control.attached.entries() {
            for (li, ctl) in per_block.iter().enumerate() {
                let orig = c.attached.control(*r, li + 1, 1);
                let a = ctl.integral();
                let b = orig.integral();
                assert!((a[0] - b[0]).abs() < 1e-9);
            }
        }
        // process round trip
        let ep2 = impulse_to_extended(&back.control, &d, 6).unwrap();
        assert!(control_deviation(&ep.control, &ep2.control) < 1e-9);
    }

    #[test]
    fn strict_sense_exact_for_absolutely_continuous() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "x1", grid);
        let mu = VectorMeasure::new(2.0, 1, vec![], vec![0.0, 2.0], vec![vec![0.7]]).unwrap();
        let c = ImpulseControl::strict(grid, mu.clone()).unwrap();
        for level in [2, 5, 9] {
            let approx = strict_sense_approximation(&c, &d, level, 6).unwrap();
            for k in 0..=20 {
                let t = 2.0 * k as f64 / 20.0;
                let u = approx.control_path.eval(t)[0];
                let want = mu.distribution(t).unwrap()[0];
                assert!((u - want).abs() < 1e-12, "level {level}, t={t}");
            }
            assert!((approx.variation_total - 1.4).abs() < 1e-12);
        }
    }

    #[test]
    fn strict_sense_converges_on_atom_scenario() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "x1", grid);
        let c = ImpulseControl::from_measure(grid, atom_measure()).unwrap();
        let exact = simulate_impulse(&c, &d, 8).unwrap();
        let probes = [0.2, 0.7, 1.2, 1.7];
        let mut prev = f64::INFINITY;
        for level in [4u32, 6, 8, 10, 12] {
            let approx = strict_sense_approximation(&c, &d, level, 8).unwrap();
            let mut worst: f64 = 0.0;
            for &t in &probes {
                worst = worst
                    .max((approx.trajectory.x(t)[0] - exact.trajectory.x(t)[0]).abs());
            }
            assert!(worst <= prev + 1e-14, "level {level}: {worst} vs {prev}");
            prev = worst;
            assert!((approx.variation_total - 2.0).abs() < 1e-12);
        }
        assert!(prev <= 1e-3, "final error {prev}");
    }

    #[test]
    fn jump_arc_variation_increment() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "x1", grid);
        let c = ImpulseControl::from_measure(grid, atom_measure()).unwrap();
        let proc = simulate_impulse(&c, &d, 8).unwrap();
        let arc = proc.jumps.get(1, 0.5).unwrap();
        let (z0, th0) = arc.start();
        let (z1, th1) = arc.end();
        assert!((th1 - th0 - 2.0).abs() < 1e-12);
        assert!((z0[0] - 1.0).abs() < 1e-12 && (z1[0] - 3.0).abs() < 1e-12);
        // inactive block's arc is flat in theta
        let arc2 = proc.jumps.get(2, 0.5).unwrap();
        assert!((arc2.theta_at(1.0) - arc2.theta_at(0.0)).abs() < 1e-12);
    }
}
