//! Adjoint arcs of the time-space system, Hamiltonians, adjoint-based cost
//! gradients, transport of multipliers to the impulse side, and the
//! maximum-principle checkers on both sides.

use crate::cone::ControlCone;
use crate::dynamics::{DelayDynamics, MayerProblemData, StackedDerivatives};
use crate::equivalence::{ImpulseProcess, ImpulseTrajectory};
use crate::error::{Error, Result};
use crate::extsys::ExtendedProcess;
use crate::hermite::CubicHermite;
use crate::piecewise::Monotone;
use crate::report::ValidationReport;
use crate::util::{dot, l1_norm, linf_norm, sub, vec_jac};

pub type PMPReport = ValidationReport;

/// Default tolerance for checking optimizer outputs; analytic fixtures are
/// checked much tighter.
pub const TOL_PMP_NUMERIC: f64 = 1e-3;
pub const TOL_PMP_ANALYTIC: f64 = 1e-8;

// ---------------------------------------------------------------------------
// stacked evaluation helpers

fn stacked_slots_ep(
    ep: &ExtendedProcess,
    dyn_: &DelayDynamics,
    l: usize,
    s: f64,
) -> Result<Vec<Vec<f64>>> {
    let tau_l = ep.tau_at(l, s);
    dyn_.stacked_slots(l, tau_l, |b| ep.y_at(b, s))
}

/// Values and first derivatives of the stacked maps of block `l` at `s`.
pub fn stacked_grad(
    ep: &ExtendedProcess,
    dyn_: &DelayDynamics,
    l: usize,
    s: f64,
) -> Result<StackedDerivatives> {
    let tau_l = ep.tau_at(l, s);
    let slots = stacked_slots_ep(ep, dyn_, l, s)?;
    dyn_.eval_rhs_grad(tau_l, &slots)
}

/// Per-block values of the stacked maps at one parameter.
pub struct BlockData {
    /// `f[l-1]`: drift of block `l`
    pub f: Vec<Vec<f64>>,
    /// `g[l-1][j]`: control channel `j` of block `l`
    pub g: Vec<Vec<Vec<f64>>>,
}

pub fn block_values(ep: &ExtendedProcess, dyn_: &DelayDynamics, s: f64) -> Result<BlockData> {
    let nb = ep.control.grid.num_periods;
    let mut f = Vec::with_capacity(nb);
    let mut g = Vec::with_capacity(nb);
    for l in 1..=nb {
        let tau_l = ep.tau_at(l, s);
        let slots = stacked_slots_ep(ep, dyn_, l, s)?;
        let (fl, gl) = dyn_.eval_rhs(tau_l, &slots)?;
        f.push(fl);
        g.push(gl);
    }
    Ok(BlockData { f, g })
}

// ---------------------------------------------------------------------------
// Hamiltonians

/// Unmaximized Hamiltonian at given block data, multipliers, and speeds.
pub fn hamiltonian(
    data: &BlockData,
    q0s: &[f64],
    qs: &[Vec<f64>],
    d: f64,
    w0: f64,
    w: &[Vec<f64>],
) -> f64 {
    let mut h = w0 * q0s.iter().sum::<f64>();
    for l in 0..data.f.len() {
        h += w0 * dot(&qs[l], &data.f[l]);
        for (j, gj) in data.g[l].iter().enumerate() {
            h += dot(&qs[l], gj) * w[l][j];
        }
        h += d * l1_norm(&w[l]);
    }
    h
}

/// Slow component: `sum_l q0_l + sum_l q_l . F_l`.
pub fn drift_hamiltonian(data: &BlockData, q0s: &[f64], qs: &[Vec<f64>]) -> f64 {
    q0s.iter().sum::<f64>()
        + data
            .f
            .iter()
            .zip(qs)
            .map(|(fl, ql)| dot(ql, fl))
            .sum::<f64>()
}

/// `c_l` with `c_l^j = q_l . G_{j,l}`: the gain of block `l` per control
/// channel.
pub fn block_gain(data: &BlockData, qs: &[Vec<f64>], l: usize) -> Vec<f64> {
    data.g[l - 1].iter().map(|gj| dot(&qs[l - 1], gj)).collect()
}

/// Fast component: the best unit-variation jump direction across blocks.
/// Concentration on a single block and extreme ray is exact because the
/// objective is linear and every sub-cone lies in one orthant.
pub fn impulse_hamiltonian(data: &BlockData, qs: &[Vec<f64>], d: f64, cone: &ControlCone) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for l in 1..=data.f.len() {
        let c = block_gain(data, qs, l);
        let (v, _) = cone.linmax(&c);
        best = best.max(v);
    }
    best + d
}

// ---------------------------------------------------------------------------
// adjoint integration

/// Adjoint arcs: `q0_l` scalar and `q_l` vector per block, on the process
/// mesh, with the scalar multipliers of the variation bound and the cost.
#[derive(Debug, Clone)]
pub struct ExtendedMultipliers {
    pub lambda: f64,
    pub d: f64,
    pub terminal_normal: Vec<f64>,
    q0: Vec<CubicHermite>,
    q: Vec<CubicHermite>,
}

impl ExtendedMultipliers {
    pub fn q_at(&self, l: usize, s: f64) -> Vec<f64> {
        self.q[l - 1].eval(s)
    }

    pub fn q0_at(&self, l: usize, s: f64) -> f64 {
        self.q0[l - 1].eval(s)[0]
    }

    pub fn q_all(&self, s: f64) -> Vec<Vec<f64>> {
        (0..self.q.len()).map(|i| self.q[i].eval(s)).collect()
    }

    pub fn q0_all(&self, s: f64) -> Vec<f64> {
        (0..self.q0.len()).map(|i| self.q0[i].eval(s)[0]).collect()
    }

    pub fn sup_q(&self) -> f64 {
        let mut m = 0.0f64;
        for track in &self.q {
            for v in track.node_values() {
                m = m.max(linf_norm(v));
            }
        }
        m
    }
}

/// Backward integration of the block adjoint system. `q_terminal` is the
/// value of the last block at the end parameter, `q0_terminal` likewise for
/// the time adjoint; earlier blocks chain their end values to the next
/// block's start value.
fn integrate_adjoint_core(
    ep: &ExtendedProcess,
    dyn_: &DelayDynamics,
    q_terminal: Vec<f64>,
    q0_terminal: f64,
) -> Result<(Vec<CubicHermite>, Vec<CubicHermite>)> {
    let ec = &ep.control;
    let nb = ec.grid.num_periods;
    let m_depth = ec.grid.delay_depth;
    let n = dyn_.state_dim;
    let mesh = ep.mesh().to_vec();
    let nn = mesh.len();

    // cache stacked derivatives per (block, node mid/stage) on demand
    let grads_at = |l: usize, s: f64| stacked_grad(ep, dyn_, l, s);

    // ---- vector adjoints, blocks from last to first
    let mut q_tracks: Vec<Option<CubicHermite>> = vec![None; nb];
    for l in (1..=nb).rev() {
        let terminal = if l == nb {
            q_terminal.clone()
        } else {
            q_tracks[l].as_ref().unwrap().eval(0.0)
        };
        // -dq_l/ds = sum_{i=l..(l+M)^N} q_i . [ D_{i-l} f^i w0 + sum_j D_{i-l} g^i_j w_i^j ]
        let rhs = |s: f64, ql: &[f64], cell: usize, tracks: &[Option<CubicHermite>]| -> Result<Vec<f64>> {
            let w0 = ec.w0()[cell];
            let mut total = vec![0.0; n];
            let hi = (l + m_depth).min(nb);
            for i in l..=hi {
                let qi: Vec<f64> = if i == l {
                    ql.to_vec()
                } else {
                    tracks[i - 1].as_ref().unwrap().eval(s)
                };
                let sd = grads_at(i, s)?;
                let slot = i - l;
                let mut row = vec_jac(&qi, &sd.df_dx[slot]);
                for v in row.iter_mut() {
                    *v *= w0;
                }
                let wi = &ec.w()[cell][i - 1];
                for (j, dg) in sd.dg_dx.iter().enumerate() {
                    let gj = vec_jac(&qi, &dg[slot]);
                    for (r, gv) in row.iter_mut().zip(&gj) {
                        *r += gv * wi[j];
                    }
                }
                for (t, r) in total.iter_mut().zip(&row) {
                    *t += r;
                }
            }
            // -dq/ds = total
            Ok(total.iter().map(|v| -v).collect())
        };

        let mut vals = vec![Vec::new(); nn];
        let mut der_l = vec![Vec::new(); nn];
        let mut der_r = vec![Vec::new(); nn];
        let mut q = terminal;
        vals[nn - 1] = q.clone();
        for i in (0..nn - 1).rev() {
            let (s0, s1) = (mesh[i], mesh[i + 1]);
            let ds = s0 - s1; // negative: backward
            let cell = ec.cell_of(0.5 * (s0 + s1));
            let k1 = rhs(s1, &q, cell, &q_tracks)?;
            der_l[i + 1] = k1.clone();
            let mut y2 = q.clone();
            crate::util::axpy(&mut y2, 0.5 * ds, &k1);
            let k2 = rhs(s1 + 0.5 * ds, &y2, cell, &q_tracks)?;
            let mut y3 = q.clone();
            crate::util::axpy(&mut y3, 0.5 * ds, &k2);
            let k3 = rhs(s1 + 0.5 * ds, &y3, cell, &q_tracks)?;
            let mut y4 = q.clone();
            crate::util::axpy(&mut y4, ds, &k3);
            let k4 = rhs(s0, &y4, cell, &q_tracks)?;
            for c in 0..n {
                q[c] += ds / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            if !crate::util::all_finite(&q) {
                return Err(Error::numeric(format!("adjoint blew up in block {l}")));
            }
            vals[i] = q.clone();
            der_r[i] = rhs(s0, &q, cell, &q_tracks)?;
        }
        der_l[0] = der_r[0].clone();
        der_r[nn - 1] = der_l[nn - 1].clone();
        q_tracks[l - 1] = Some(CubicHermite::with_sided_slopes(
            mesh.clone(),
            vals,
            der_l,
            der_r,
        )?);
    }
    let q_tracks: Vec<CubicHermite> = q_tracks.into_iter().map(|t| t.unwrap()).collect();

    // ---- time adjoints (their right sides involve only the q's)
    let mut q0_tracks: Vec<Option<CubicHermite>> = vec![None; nb];
    for l in (1..=nb).rev() {
        let terminal = if l == nb {
            q0_terminal
        } else {
            q0_tracks[l].as_ref().unwrap().eval(0.0)[0]
        };
        let rhs = |s: f64, cell: usize| -> Result<f64> {
            let w0 = ec.w0()[cell];
            let wl = &ec.w()[cell][l - 1];
            let sd = grads_at(l, s)?;
            let ql = q_tracks[l - 1].eval(s);
            let mut total = dot(&ql, &sd.df_dt) * w0;
            for (j, dg) in sd.dg_dt.iter().enumerate() {
                total += dot(&ql, dg) * wl[j];
            }
            if l <= m_depth {
                // sensitivity of the shared history row read by blocks 1..l
                let tau_l = ep.tau_at(l, s);
                let (_, xi_slope) = dyn_.history_at(tau_l - m_depth as f64 * ec.grid.period)?;
                for b in 1..=l {
                    let slot = m_depth - l + b;
                    let qb = q_tracks[b - 1].eval(s);
                    let sdb = grads_at(b, s)?;
                    let mut row = vec_jac(&qb, &sdb.df_dx[slot]);
                    for v in row.iter_mut() {
                        *v *= w0;
                    }
                    let wb = &ec.w()[cell][b - 1];
                    for (j, dg) in sdb.dg_dx.iter().enumerate() {
                        let gj = vec_jac(&qb, &dg[slot]);
                        for (r, gv) in row.iter_mut().zip(&gj) {
                            *r += gv * wb[j];
                        }
                    }
                    total += dot(&row, &xi_slope);
                }
            }
            Ok(-total) // dq0/ds = -RHS of the stated equation
        };
        let mut vals = vec![Vec::new(); nn];
        let mut der_l = vec![Vec::new(); nn];
        let mut der_r = vec![Vec::new(); nn];
        let mut q0 = terminal;
        vals[nn - 1] = vec![q0];
        for i in (0..nn - 1).rev() {
            let (s0, s1) = (mesh[i], mesh[i + 1]);
            let ds = s0 - s1;
            let cell = ec.cell_of(0.5 * (s0 + s1));
            let k1 = rhs(s1, cell)?;
            der_l[i + 1] = vec![k1];
            let k2 = rhs(s1 + 0.5 * ds, cell)?;
            let k3 = k2;
            let k4 = rhs(s0, cell)?;
            q0 += ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            vals[i] = vec![q0];
            der_r[i] = vec![rhs(s0, cell)?];
        }
        der_l[0] = der_r[0].clone();
        der_r[nn - 1] = der_l[nn - 1].clone();
        q0_tracks[l - 1] = Some(CubicHermite::with_sided_slopes(
            mesh.clone(),
            vals,
            der_l,
            der_r,
        )?);
    }
    let q0_tracks: Vec<CubicHermite> = q0_tracks.into_iter().map(|t| t.unwrap()).collect();
    Ok((q_tracks, q0_tracks))
}

/// Build certificate multipliers: backward adjoint from the transversality
/// value `-lambda grad Phi - normal`, with the free additive constant of the
/// time adjoint pinned so the drift Hamiltonian vanishes where the time
/// component actually moves.
pub fn integrate_extended_adjoint(
    ep: &ExtendedProcess,
    dyn_: &DelayDynamics,
    problem: &MayerProblemData,
    lambda: f64,
    d: f64,
    terminal_normal: Vec<f64>,
) -> Result<ExtendedMultipliers> {
    let y_end = ep.y_end(ep.control.grid.num_periods);
    let (_, grad_phi) = problem.cost_gradient(&y_end)?;
    let mut q_term: Vec<f64> = grad_phi.iter().map(|g| -lambda * g).collect();
    for (qt, nrm) in q_term.iter_mut().zip(&terminal_normal) {
        *qt -= nrm;
    }
    let (q, q0_raw) = integrate_adjoint_core(ep, dyn_, q_term, 0.0)?;
    // pin the additive constant: weighted average of the raw drift
    // Hamiltonian over moving-time cells
    let ec = &ep.control;
    let nb = ec.grid.num_periods;
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..ec.num_cells() {
        let w0 = ec.w0()[k];
        if w0 > 0.0 {
            let mid = 0.5 * (ec.mesh()[k] + ec.mesh()[k + 1]);
            let data = block_values(ep, dyn_, mid)?;
            let q0s: Vec<f64> = (0..nb).map(|i| q0_raw[i].eval(mid)[0]).collect();
            let qs: Vec<Vec<f64>> = (0..nb).map(|i| q[i].eval(mid)).collect();
            let hdr = drift_hamiltonian(&data, &q0s, &qs);
            let weight = w0 * ec.cell_len(k);
            num += weight * hdr;
            den += weight;
        }
    }
    let chi = if den > 0.0 { -num / (nb as f64 * den) } else { 0.0 };
    let q0 = q0_raw
        .into_iter()
        .map(|track| {
            let t = track.breakpoints().to_vec();
            let v: Vec<Vec<f64>> = track
                .node_values()
                .iter()
                .map(|row| vec![row[0] + chi])
                .collect();
            let d_ = track.node_slopes().to_vec();
            CubicHermite::new(t, v, d_).unwrap()
        })
        .collect();
    Ok(ExtendedMultipliers {
        lambda,
        d,
        terminal_normal,
        q0,
        q,
    })
}

// ---------------------------------------------------------------------------
// cost gradient for the transcription solver

/// Sensitivities of the scalar objective to the terminal state, final
/// variation, and final time-component value.
#[derive(Debug, Clone)]
pub struct TerminalSensitivity {
    pub dcost_dy: Vec<f64>,
    pub dcost_dbeta: f64,
    pub dcost_dtau: f64,
}

/// Time adjoint for the gradient of the integrator's frozen-offset
/// discretization: every block reads the same time component at the same
/// parameter, so one arc collects all blocks' time sensitivities. (The
/// chained per-block arcs are the certificate objects; on the feasible set
/// the two differ only along the end-time constraint normal.)
fn integrate_time_adjoint_total(
    ep: &ExtendedProcess,
    dyn_: &DelayDynamics,
    q_tracks: &[CubicHermite],
    terminal: f64,
) -> Result<CubicHermite> {
    let ec = &ep.control;
    let nb = ec.grid.num_periods;
    let m_depth = ec.grid.delay_depth;
    let h = ec.grid.period;
    let mesh = ep.mesh().to_vec();
    let nn = mesh.len();
    let rhs = |s: f64, cell: usize| -> Result<f64> {
        let w0 = ec.w0()[cell];
        let mut total = 0.0;
        for b in 1..=nb {
            let wb = &ec.w()[cell][b - 1];
            let qb = q_tracks[b - 1].eval(s);
            let sd = stacked_grad(ep, dyn_, b, s)?;
            total += dot(&qb, &sd.df_dt) * w0;
            for (j, dg) in sd.dg_dt.iter().enumerate() {
                total += dot(&qb, dg) * wb[j];
            }
            // history rows move with the time component too
            for k in 1..=m_depth {
                if (b as isize) - (k as isize) < 1 {
                    let tau_b = ep.tau_at(b, s);
                    let (_, xi_slope) = dyn_.history_at(tau_b - k as f64 * h)?;
                    let mut row = vec_jac(&qb, &sd.df_dx[k]);
                    for v in row.iter_mut() {
                        *v *= w0;
                    }
                    for (j, dg) in sd.dg_dx.iter().enumerate() {
                        let gj = vec_jac(&qb, &dg[k]);
                        for (r, gv) in row.iter_mut().zip(&gj) {
                            *r += gv * wb[j];
                        }
                    }
                    total += dot(&row, &xi_slope);
                }
            }
        }
        Ok(-total)
    };
    let mut vals = vec![Vec::new(); nn];
    let mut der_l = vec![Vec::new(); nn];
    let mut der_r = vec![Vec::new(); nn];
    let mut q0 = terminal;
    vals[nn - 1] = vec![q0];
    for i in (0..nn - 1).rev() {
        let (s0, s1) = (mesh[i], mesh[i + 1]);
        let ds = s0 - s1;
        let cell = ec.cell_of(0.5 * (s0 + s1));
        let k1 = rhs(s1, cell)?;
        der_l[i + 1] = vec![k1];
        let k2 = rhs(s1 + 0.5 * ds, cell)?;
        let k4 = rhs(s0, cell)?;
        q0 += ds / 6.0 * (k1 + 4.0 * k2 + k4);
        vals[i] = vec![q0];
        der_r[i] = vec![rhs(s0, cell)?];
    }
    der_l[0] = der_r[0].clone();
    der_r[nn - 1] = der_l[nn - 1].clone();
    CubicHermite::with_sided_slopes(mesh, vals, der_l, der_r)
}

#[derive(Debug, Clone)]
pub struct CellGradient {
    pub w0: Vec<f64>,
    pub w: Vec<Vec<Vec<f64>>>,
}

/// Gradient of a Mayer-type objective with respect to every cell's speeds,
/// by one backward adjoint pass and per-cell quadrature. The l1 norm inside
/// the variation term is smoothed with width `smooth_eps`; the dynamics use
/// the exact norms.
pub fn cost_gradient(
    ep: &ExtendedProcess,
    dyn_: &DelayDynamics,
    terminal: &TerminalSensitivity,
    smooth_eps: f64,
) -> Result<CellGradient> {
    let ec = &ep.control;
    let nb = ec.grid.num_periods;
    let m = ec.grid.control_dim;
    let q_term: Vec<f64> = terminal.dcost_dy.iter().map(|g| -g).collect();
    let (q, q0) = integrate_adjoint_core(ep, dyn_, q_term, -terminal.dcost_dtau)?;
    let d = -terminal.dcost_dbeta;

    let mesh = ep.mesh();
    let mut grad_w0 = vec![0.0; ec.num_cells()];
    let mut grad_w = vec![vec![vec![0.0; m]; nb]; ec.num_cells()];
    // node values of the integrands over the refined mesh, integrated with
    // the composite Simpson rule cell by cell
    let mut node_drift: Vec<f64> = Vec::with_capacity(mesh.len());
    let mut node_gain: Vec<Vec<Vec<f64>>> = Vec::with_capacity(mesh.len());
    for &s in mesh {
        let data = block_values(ep, dyn_, s)?;
        let q0s: Vec<f64> = (0..nb).map(|i| q0[i].eval(s)[0]).collect();
        let qs: Vec<Vec<f64>> = (0..nb).map(|i| q[i].eval(s)).collect();
        node_drift.push(drift_hamiltonian(&data, &q0s, &qs));
        node_gain.push(
            (1..=nb)
                .map(|l| block_gain(&data, &qs, l))
                .collect::<Vec<_>>(),
        );
    }
    let mut idx = 0usize; // first refined node of the current cell
    for k in 0..ec.num_cells() {
        let cell_end = ec.mesh()[k + 1];
        let mut last = idx;
        while last + 1 < mesh.len() && mesh[last + 1] <= cell_end + 1e-12 {
            last += 1;
        }
        let simpson = |vals: &dyn Fn(usize) -> f64| -> f64 {
            let mut total = 0.0;
            let mut i = idx;
            while i + 2 <= last {
                let (s0, s1, s2) = (mesh[i], mesh[i + 1], mesh[i + 2]);
                if ((s1 - s0) - (s2 - s1)).abs() < 1e-12 {
                    total += (s2 - s0) / 6.0 * (vals(i) + 4.0 * vals(i + 1) + vals(i + 2));
                    i += 2;
                } else {
                    total += 0.5 * (s1 - s0) * (vals(i) + vals(i + 1));
                    i += 1;
                }
            }
            if i + 1 <= last {
                total += 0.5 * (mesh[i + 1] - mesh[i]) * (vals(i) + vals(i + 1));
            }
            total
        };
        grad_w0[k] = -simpson(&|i| node_drift[i]);
        for l in 0..nb {
            for j in 0..m {
                let gain = -simpson(&|i| node_gain[i][l][j]);
                let wv = ec.w()[k][l][j];
                let smooth_sign = wv / (wv * wv + smooth_eps * smooth_eps).sqrt();
                grad_w[k][l][j] = gain - d * smooth_sign * ec.cell_len(k);
            }
        }
        idx = last;
    }
    Ok(CellGradient {
        w0: grad_w0,
        w: grad_w,
    })
}

// ---------------------------------------------------------------------------
// extended-side checker

/// Evaluate the extended maximum-principle conditions along the process and
/// report per-condition worst residuals.
pub fn check_extended_pmp(
    ep: &ExtendedProcess,
    dyn_: &DelayDynamics,
    problem: &MayerProblemData,
    cone: &ControlCone,
    mult: &ExtendedMultipliers,
    tol: f64,
) -> Result<PMPReport> {
    let mut report = PMPReport::new(tol);
    let ec = &ep.control;
    let nb = ec.grid.num_periods;

    // nontriviality
    let nt = mult.lambda + mult.sup_q();
    report.record_flag(
        "(A) nontriviality",
        if nt > 1e-6 { 0.0 } else { 1.0 },
        format!("lambda + sup|q| = {nt:.3e}"),
        nt > 1e-6,
    );

    // transversality and normal-cone membership
    let y_end = ep.y_end(nb);
    let (_, grad_phi) = problem.cost_gradient(&y_end)?;
    let q_end = mult.q_at(nb, ep.s_end());
    let mut tv = vec![0.0; y_end.len()];
    for i in 0..y_end.len() {
        tv[i] = q_end[i] + mult.lambda * grad_phi[i] + mult.terminal_normal[i];
    }
    let cone_resid = problem
        .target
        .normal_cone_residual(&y_end, &mult.terminal_normal, 1e-6)?;
    report.record(
        "(C) transversality",
        linf_norm(&tv).max(cone_resid),
        "q_N(S) + lambda grad Phi + normal = 0",
    );

    // complementarity of the variation bound
    let slack = problem.budget - ep.beta_end(nb);
    report.record(
        "(C) complementarity",
        (mult.d * slack).abs(),
        format!("d = {:.3e}, slack = {:.3e}", mult.d, slack),
    );

    let mut worst = [0.0f64; 8];
    let mut locs: [String; 8] = Default::default();
    let upd = |idx: usize, val: f64, s: f64, worst: &mut [f64; 8], locs: &mut [String; 8]| {
        if val > worst[idx] {
            worst[idx] = val;
            locs[idx] = format!("s={s:.5}");
        }
    };

    // node conditions
    for &s in ep.mesh() {
        let data = block_values(ep, dyn_, s)?;
        let q0s = mult.q0_all(s);
        let qs = mult.q_all(s);
        let hdr = drift_hamiltonian(&data, &q0s, &qs);
        let himp = impulse_hamiltonian(&data, &qs, mult.d, cone);
        upd(0, hdr.max(himp).abs(), s, &mut worst, &mut locs); // (D) max = 0
        for l in 1..=nb {
            let (v, _) = cone.linmax(&block_gain(&data, &qs, l));
            upd(1, (v + mult.d).max(0.0), s, &mut worst, &mut locs); // (D) per-block <= 0
        }
    }

    // cell-midpoint conditions (stated almost everywhere)
    for k in 0..ec.num_cells() {
        let s = 0.5 * (ec.mesh()[k] + ec.mesh()[k + 1]);
        let data = block_values(ep, dyn_, s)?;
        let q0s = mult.q0_all(s);
        let qs = mult.q_all(s);
        let w0 = ec.w0()[k];
        let w = &ec.w()[k];
        let hdr = drift_hamiltonian(&data, &q0s, &qs);
        let himp = impulse_hamiltonian(&data, &qs, mult.d, cone);
        let hmax = hdr.max(himp);
        let h_here = hamiltonian(&data, &q0s, &qs, mult.d, w0, w);
        upd(2, (h_here - hmax).abs(), s, &mut worst, &mut locs); // (E) maximality
        let mut gain_part = 0.0;
        let mut var_part = 0.0;
        for l in 1..=nb {
            let norm_wl = l1_norm(&w[l - 1]);
            var_part += norm_wl;
            let c = block_gain(&data, &qs, l);
            for j in 0..c.len() {
                gain_part += c[j] * w[l - 1][j];
            }
            if norm_wl > 1e-12 {
                let (v, _) = cone.linmax(&c);
                upd(3, (v + mult.d).abs(), s, &mut worst, &mut locs); // active blocks
            }
        }
        upd(4, (w0 * hdr).abs(), s, &mut worst, &mut locs); // drift rest
        upd(
            5,
            (gain_part + mult.d * var_part).abs(),
            s,
            &mut worst,
            &mut locs,
        ); // impulse rest
        if hdr < -tol {
            upd(6, w0, s, &mut worst, &mut locs); // negative drift forces w0 = 0
            upd(
                6,
                (gain_part + mult.d * var_part - himp).abs().max(himp.abs()),
                s,
                &mut worst,
                &mut locs,
            );
        }
        if himp < -tol {
            upd(7, var_part, s, &mut worst, &mut locs); // negative impulse forces w = 0
            upd(7, hdr.abs(), s, &mut worst, &mut locs);
        }
    }
    let names = [
        "(D) max H = 0",
        "(D) block gains <= 0",
        "(E) maximality",
        "(E) active gains zero",
        "(F) drift rest",
        "(F) impulse rest",
        "(F) drift switch",
        "(F) impulse switch",
    ];
    for (i, name) in names.iter().enumerate() {
        report.record(*name, worst[i], locs[i].clone());
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// impulse-side multipliers and checker

/// Adjoint arcs over a jump: restriction of the extended adjoints to the
/// plateau, rescaled to the unit interval.
#[derive(Debug, Clone)]
pub struct AdjointJumpArc {
    pub block: usize,
    pub r: f64,
    pub t: f64,
    pub s: Vec<f64>,
    pub eta: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
}

impl AdjointJumpArc {
    pub fn eta_at(&self, s: f64) -> Vec<f64> {
        interp_rows(&self.s, &self.eta, s)
    }

    pub fn alpha_at(&self, s: f64) -> f64 {
        interp_rows(&self.s, &self.alpha.iter().map(|a| vec![*a]).collect::<Vec<_>>(), s)[0]
    }
}

fn interp_rows(s: &[f64], rows: &[Vec<f64>], x: f64) -> Vec<f64> {
    let i = crate::util::cell_index(s, x.clamp(0.0, 1.0));
    let (a, b) = (s[i], s[i + 1]);
    let w = if b > a { (x.clamp(0.0, 1.0) - a) / (b - a) } else { 0.0 };
    rows[i]
        .iter()
        .zip(&rows[i + 1])
        .map(|(p, q)| p + w * (q - p))
        .collect()
}

/// BV multiplier paths on physical time: compositions of the extended
/// adjoints with the inverse time change, zero after the horizon, plus the
/// jump-adjoint arcs.
#[derive(Debug, Clone)]
pub struct ImpulseMultipliers {
    pub lambda: f64,
    pub d: f64,
    pub terminal_normal: Vec<f64>,
    sigma: Monotone,
    s_end: f64,
    horizon: f64,
    q0: Vec<CubicHermite>,
    q: Vec<CubicHermite>,
    pub arcs: Vec<AdjointJumpArc>,
}

impl ImpulseMultipliers {
    fn split(&self, s_tilde: f64) -> (usize, f64) {
        let nb = self.q.len();
        let total = nb as f64 * self.s_end;
        let st = s_tilde.clamp(0.0, total);
        let mut l = (st / self.s_end).floor() as usize + 1;
        if l > nb {
            l = nb;
        }
        (l, (st - (l - 1) as f64 * self.s_end).clamp(0.0, self.s_end))
    }

    pub fn p(&self, t: f64) -> Vec<f64> {
        if t > self.horizon + 1e-12 {
            return vec![0.0; self.q[0].dim()];
        }
        let (l, s) = self.split(self.sigma.value(t.max(0.0)));
        self.q[l - 1].eval(s)
    }

    pub fn p_minus(&self, t: f64) -> Vec<f64> {
        if t > self.horizon + 1e-12 {
            return vec![0.0; self.q[0].dim()];
        }
        let (l, s) = self.split(self.sigma.left_limit(t.max(0.0)));
        self.q[l - 1].eval(s)
    }

    pub fn p0(&self, t: f64) -> f64 {
        if t > self.horizon + 1e-12 {
            return 0.0;
        }
        let (l, s) = self.split(self.sigma.value(t.max(0.0)));
        self.q0[l - 1].eval(s)[0]
    }

    pub fn p0_minus(&self, t: f64) -> f64 {
        if t > self.horizon + 1e-12 {
            return 0.0;
        }
        let (l, s) = self.split(self.sigma.left_limit(t.max(0.0)));
        self.q0[l - 1].eval(s)[0]
    }

    pub fn sup_p(&self) -> f64 {
        let mut m = 0.0f64;
        for track in &self.q {
            for v in track.node_values() {
                m = m.max(linf_norm(v));
            }
        }
        m
    }

    pub fn arc(&self, block: usize, r: f64) -> Option<&AdjointJumpArc> {
        self.arcs
            .iter()
            .find(|a| a.block == block && (a.r - r).abs() <= 1e-12)
    }
}

/// Transport extended multipliers to the impulse side through the time
/// change of the trajectory.
pub fn impulse_multipliers(
    mult: &ExtendedMultipliers,
    ep: &ExtendedProcess,
    trajectory: &ImpulseTrajectory,
) -> ImpulseMultipliers {
    let ec = &ep.control;
    let h = ec.grid.period;
    let mut arcs = Vec::new();
    for (a, b, r) in ec.plateaus() {
        let delta = b - a;
        let nodes: Vec<f64> = ep
            .mesh()
            .iter()
            .copied()
            .filter(|&s| s >= a - 1e-12 && s <= b + 1e-12)
            .collect();
        for l in 1..=ec.grid.num_periods {
            arcs.push(AdjointJumpArc {
                block: l,
                r,
                t: r + (l - 1) as f64 * h,
                s: nodes.iter().map(|&s| ((s - a) / delta).clamp(0.0, 1.0)).collect(),
                eta: nodes.iter().map(|&s| mult.q_at(l, s)).collect(),
                alpha: nodes.iter().map(|&s| mult.q0_at(l, s)).collect(),
            });
        }
    }
    ImpulseMultipliers {
        lambda: mult.lambda,
        d: mult.d,
        terminal_normal: mult.terminal_normal.clone(),
        sigma: trajectory.time_change().clone(),
        s_end: ep.s_end(),
        horizon: ec.grid.horizon(),
        q0: mult.q0.clone(),
        q: mult.q.clone(),
        arcs,
    }
}

/// Delay slots of the jump system at `(r, l, s)`: arcs of lower blocks at
/// the same jump parameter, with history rows from the initial data.
pub fn jump_slots(
    proc: &ImpulseProcess,
    dyn_: &DelayDynamics,
    r: f64,
    l: usize,
    s: f64,
) -> Result<Vec<Vec<f64>>> {
    let grid = &proc.control.grid;
    let h = grid.period;
    let mut slots = Vec::with_capacity(grid.delay_depth + 1);
    for k in 0..=grid.delay_depth {
        let b = l as isize - k as isize;
        if b >= 1 {
            let arc = proc
                .jumps
                .get(b as usize, r)
                .ok_or_else(|| Error::invalid(format!("no jump arc for block {b} at r={r}")))?;
            slots.push(arc.zeta_at(s));
        } else if b == 0 {
            // the block-zero row: initial state exactly at the end of the
            // final-period jump, history otherwise
            if (r - h).abs() <= 1e-12 && (s - 1.0).abs() <= 1e-12 {
                slots.push(dyn_.x0.clone());
            } else {
                slots.push(dyn_.history_at(r - h)?.0);
            }
        } else {
            let a = (-b) as usize;
            slots.push(dyn_.history_at(r - (a + 1) as f64 * h)?.0);
        }
    }
    Ok(slots)
}

/// Evaluate the impulse-side maximum-principle conditions: pointwise gain
/// bounds, support and constancy conditions, jump-arc conditions, and the
/// integral adjoint equations as residual checks.
pub fn check_impulse_pmp(
    proc: &ImpulseProcess,
    dyn_: &DelayDynamics,
    problem: &MayerProblemData,
    cone: &ControlCone,
    imult: &ImpulseMultipliers,
    tol: f64,
) -> Result<PMPReport> {
    let mut report = PMPReport::new(tol);
    let grid = &proc.control.grid;
    let h = grid.period;
    let nb = grid.num_periods;
    let m = grid.control_dim;
    let horizon = grid.horizon();
    let traj = &proc.trajectory;

    // (i) nontriviality
    let nt = imult.lambda + imult.sup_p();
    report.record_flag(
        "(i) nontriviality",
        if nt > 1e-6 { 0.0 } else { 1.0 },
        format!("lambda + sup|p| = {nt:.3e}"),
        nt > 1e-6,
    );

    // stacked data along the trajectory
    let bar_slots = |t: f64| -> Result<Vec<Vec<f64>>> {
        let mut slots = Vec::with_capacity(grid.delay_depth + 1);
        for k in 0..=grid.delay_depth {
            let tk = t - k as f64 * h;
            slots.push(traj.x_with_history(dyn_, tk)?);
        }
        Ok(slots)
    };

    // (iii) transversality at the endpoint
    let x_end = traj.x_end();
    let (_, grad_phi) = problem.cost_gradient(&x_end)?;
    let p_end = imult.p(horizon);
    let mut tv = vec![0.0; x_end.len()];
    for i in 0..x_end.len() {
        tv[i] = p_end[i] + imult.lambda * grad_phi[i] + imult.terminal_normal[i];
    }
    let cone_resid = problem
        .target
        .normal_cone_residual(&x_end, &imult.terminal_normal, 1e-6)?;
    report.record(
        "(iii) transversality",
        linf_norm(&tv).max(cone_resid),
        "p(T) + lambda grad Phi + normal = 0",
    );

    // (iv) gain bound over a time grid; (v) zero gain on the support
    let mut worst_iv = 0.0f64;
    let mut loc_iv = String::from("-");
    let gain_at = |t: f64| -> Result<f64> {
        let slots = bar_slots(t)?;
        let (_, g) = dyn_.eval_rhs(t, &slots)?;
        let p = imult.p(t);
        let c: Vec<f64> = g.iter().map(|gj| dot(&p, gj)).collect();
        Ok(cone.linmax(&c).0 + imult.d)
    };
    let t_samples = 200;
    for k in 0..=t_samples {
        let t = horizon * k as f64 / t_samples as f64;
        let v = gain_at(t)?.max(0.0);
        if v > worst_iv {
            worst_iv = v;
            loc_iv = format!("t={t:.4}");
        }
    }
    report.record("(iv) gain bound", worst_iv, loc_iv);

    let mut worst_v = 0.0f64;
    let mut loc_v = String::from("-");
    for (t, mass) in proc.control.nu.atoms() {
        if mass > 1e-12 {
            let v = gain_at(t)?.abs();
            if v > worst_v {
                worst_v = v;
                loc_v = format!("atom t={t:.4}");
            }
        }
    }
    let nu_breaks = proc.control.nu.0.density_breaks().to_vec();
    for win in nu_breaks.windows(2) {
        let mid = 0.5 * (win[0] + win[1]);
        if proc.control.nu.mass_oo(win[0], win[1]) > 1e-10 {
            let v = gain_at(mid)?.abs();
            if v > worst_v {
                worst_v = v;
                loc_v = format!("density t={mid:.4}");
            }
        }
    }
    report.record("(v) support gain zero", worst_v, loc_v);

    // (vi) constancy of the reduced Hamiltonian over the period
    let mut worst_vi = 0.0f64;
    let mut loc_vi = String::from("-");
    let ham_sum = |r: f64| -> Result<f64> {
        let mut total = 0.0;
        for l in 1..=nb {
            let t = r + (l - 1) as f64 * h;
            let slots = bar_slots(t)?;
            let (f, _) = dyn_.eval_rhs(t, &slots)?;
            total += imult.p0(t) + dot(&imult.p(t), &f);
        }
        Ok(total)
    };
    let r_samples = 40;
    for k in 1..r_samples {
        let r = h * k as f64 / r_samples as f64;
        // skip jump parameters: p is discontinuous there
        if proc.jumps.active_keys().iter().any(|&jr| (jr - r).abs() < 1e-9) {
            continue;
        }
        let v = ham_sum(r)?.abs();
        if v > worst_vi {
            worst_vi = v;
            loc_vi = format!("r={r:.4}");
        }
    }
    let start_mass: f64 = (1..=nb)
        .map(|l| proc.control.attached.control(0.0, l, m).norm_integral())
        .sum();
    if start_mass <= 1e-12 {
        let v = ham_sum(0.0)?.abs();
        if v > worst_vi {
            worst_vi = v;
            loc_vi = "r=0".into();
        }
    }
    let end_mass: f64 = (1..=nb)
        .map(|l| {
            proc.control.attached.control(h, l, m).norm_integral()
                + proc.control.attached.control(0.0, l, m).norm_integral()
        })
        .sum();
    if end_mass <= 1e-12 {
        let v = ham_sum(h)?.abs();
        if v > worst_vi {
            worst_vi = v;
            loc_vi = "r=h".into();
        }
    }
    report.record("(vi) period constancy", worst_vi, loc_vi);

    // (vii)/(viii): jump-arc conditions
    let mut worst_vii = 0.0f64;
    let mut loc_vii = String::from("-");
    let mut worst_viii = 0.0f64;
    let mut loc_viii = String::from("-");
    for r in proc.jumps.active_keys() {
        let total_mass: f64 = (1..=nb)
            .map(|l| {
                proc.jumps
                    .get(l, r)
                    .map(|a| a.end().1 - a.start().1)
                    .unwrap_or(0.0)
            })
            .sum();
        if total_mass <= 1e-12 {
            continue;
        }
        let key = if r.abs() <= 1e-12 {
            0.0
        } else if (r - h).abs() <= 1e-12 {
            h
        } else {
            r
        };
        let arc0 = proc.jumps.get(1, r).unwrap();
        for sk in 0..arc0.s.len().saturating_sub(1) {
            let s = 0.5 * (arc0.s[sk] + arc0.s[sk + 1]);
            let mut per_block_gain = vec![f64::NEG_INFINITY; nb];
            let mut sum_alpha = 0.0;
            let mut sum_eta_f = 0.0;
            for l in 1..=nb {
                let slots = jump_slots(proc, dyn_, r, l, s)?;
                let t = r + (l - 1) as f64 * h;
                let (f, g) = dyn_.eval_rhs(t, &slots)?;
                let arc = imult
                    .arc(l, r)
                    .ok_or_else(|| Error::invalid("missing adjoint jump arc"))?;
                let eta = arc.eta_at(s);
                sum_alpha += arc.alpha_at(s);
                sum_eta_f += dot(&eta, &f);
                let c: Vec<f64> = g.iter().map(|gj| dot(&eta, gj)).collect();
                per_block_gain[l - 1] = cone.linmax(&c).0 + imult.d;
            }
            let best = per_block_gain.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = (sum_alpha + sum_eta_f - best).max(0.0).max(best.abs());
            if v > worst_vii {
                worst_vii = v;
                loc_vii = format!("r={r:.4}, s={s:.3}");
            }
            for i in 1..=nb {
                let omega = proc.control.attached.control(key, i, m);
                if l1_norm(omega.value_at(s)) > 1e-12 {
                    let v = (best - per_block_gain[i - 1]).abs();
                    if v > worst_viii {
                        worst_viii = v;
                        loc_viii = format!("r={r:.4}, s={s:.3}, block {i}");
                    }
                }
            }
        }
    }
    report.record("(vii) arc hamiltonian", worst_vii, loc_vii);
    report.record("(viii) active block attains max", worst_viii, loc_viii);

    // (ii) boundary identities of the arc chain
    let mut worst_b = 0.0f64;
    for l in 1..=nb {
        let t = l as f64 * h;
        let (want_p, want_p0) = if l == nb {
            match imult.arc(nb, h) {
                Some(arc) => (arc.eta_at(1.0), arc.alpha_at(1.0)),
                None => (imult.p(horizon), imult.p0(horizon)),
            }
        } else {
            match imult.arc(l + 1, 0.0) {
                Some(arc) => (arc.eta_at(1.0), arc.alpha_at(1.0)),
                None => (imult.p(t), imult.p0(t)),
            }
        };
        worst_b = worst_b
            .max(linf_norm(&sub(&imult.p(t), &want_p)))
            .max((imult.p0(t) - want_p0).abs());
    }
    report.record("(ii) boundary chain", worst_b, "p at grid times");

    // (ii) integral adjoint equations as residuals
    let (eq_p_res, eq_p0_res) = adjoint_integral_residuals(proc, dyn_, imult)?;
    report.record("(eq_p) integral equation", eq_p_res.0, eq_p_res.1);
    report.record("(eq_p0) integral equation", eq_p0_res.0, eq_p0_res.1);

    Ok(report)
}

/// Residuals of the advance-type integral equations for `(p0, p)` checked
/// at sample times inside every period.
fn adjoint_integral_residuals(
    proc: &ImpulseProcess,
    dyn_: &DelayDynamics,
    imult: &ImpulseMultipliers,
) -> Result<((f64, String), (f64, String))> {
    let grid = &proc.control.grid;
    let h = grid.period;
    let nb = grid.num_periods;
    let m_depth = grid.delay_depth;
    let horizon = grid.horizon();
    let traj = &proc.trajectory;
    let n = dyn_.state_dim;

    // integrand breakpoints: atoms of nu shifted by every delay offset,
    // density breakpoints, grid times
    let mut splits: Vec<f64> = vec![0.0, horizon];
    for l in 0..=nb {
        splits = crate::util::merge_breaks(&splits, &[l as f64 * h], 1e-12);
    }
    for (t, _) in proc.control.nu.atoms() {
        for i in 0..=(m_depth.max(1)) {
            let shifted = t - i as f64 * h;
            if shifted > 0.0 && shifted < horizon {
                splits = crate::util::merge_breaks(&splits, &[shifted], 1e-12);
            }
        }
    }
    for b in proc.control.mu.density_breaks() {
        for i in 0..=(m_depth.max(1)) {
            let shifted = b - i as f64 * h;
            if shifted > 0.0 && shifted < horizon {
                splits = crate::util::merge_breaks(&splits, &[shifted], 1e-12);
            }
        }
    }

    let bar = |t: f64| -> Result<StackedDerivatives> {
        let mut slots = Vec::with_capacity(m_depth + 1);
        for k in 0..=m_depth {
            slots.push(traj.x_with_history(dyn_, t - k as f64 * h)?);
        }
        dyn_.eval_rhs_grad(t, &slots)
    };
    let dens_at = |t: f64| -> Vec<f64> {
        let breaks = proc.control.mu.density_breaks();
        let i = crate::util::cell_index(breaks, t.clamp(0.0, horizon));
        proc.control.mu.density_values()[i].clone()
    };

    // dp integrand at t' for the equation anchored in block l
    let p_integrand = |tp: f64| -> Result<Vec<f64>> {
        let mut total = vec![0.0; n];
        for i in 0..=m_depth {
            let ti = tp + i as f64 * h;
            if ti > horizon + 1e-12 {
                continue; // p vanishes beyond the horizon
            }
            let sd = bar(ti)?;
            let p = imult.p(ti);
            let row_f = vec_jac(&p, &sd.df_dx[i]);
            for (tot, v) in total.iter_mut().zip(&row_f) {
                *tot += v;
            }
            let dens = dens_at(ti);
            for (j, dg) in sd.dg_dx.iter().enumerate() {
                let row_g = vec_jac(&p, &dg[i]);
                for (tot, v) in total.iter_mut().zip(&row_g) {
                    *tot += v * dens[j];
                }
            }
        }
        Ok(total)
    };
    let p0_integrand = |tp: f64, l: usize| -> Result<f64> {
        let sd = bar(tp)?;
        let p = imult.p(tp);
        let dens = dens_at(tp);
        let mut total = dot(&p, &sd.df_dt);
        for (j, dg) in sd.dg_dt.iter().enumerate() {
            total += dot(&p, dg) * dens[j];
        }
        if tp <= m_depth as f64 * h + 1e-12 {
            for i in 0..l {
                let ti = tp - i as f64 * h;
                if ti <= 1e-12 {
                    continue;
                }
                let hist_arg = tp - m_depth as f64 * h;
                if hist_arg < -(m_depth as f64) * h - 1e-9 || hist_arg > 1e-9 {
                    continue;
                }
                let (_, xi_slope) = dyn_.history_at(hist_arg.min(0.0))?;
                let sdi = bar(ti)?;
                let pi = imult.p(ti);
                let slot = m_depth - i;
                let mut row = vec_jac(&pi, &sdi.df_dx[slot]);
                let densi = dens_at(ti);
                for (j, dg) in sdi.dg_dx.iter().enumerate() {
                    let rg = vec_jac(&pi, &dg[slot]);
                    for (rr, v) in row.iter_mut().zip(&rg) {
                        *rr += v * densi[j];
                    }
                }
                total += dot(&row, &xi_slope);
            }
        }
        Ok(total)
    };

    let segment_integral = |a: f64, b: f64, f: &dyn Fn(f64) -> Result<Vec<f64>>| -> Result<Vec<f64>> {
        // composite Simpson with a fixed panel count per segment
        let panels = 16;
        let mut total = vec![0.0; n];
        let dt = (b - a) / panels as f64;
        for k in 0..panels {
            let (x0, x2) = (a + k as f64 * dt, a + (k + 1) as f64 * dt);
            let x1 = 0.5 * (x0 + x2);
            let (f0, f1, f2) = (f(x0 + 1e-13)?, f(x1)?, f(x2 - 1e-13)?);
            for c in 0..n {
                total[c] += dt / 6.0 * (f0[c] + 4.0 * f1[c] + f2[c]);
            }
        }
        Ok(total)
    };

    let mut worst_p = 0.0f64;
    let mut loc_p = String::from("-");
    let mut worst_p0 = 0.0f64;
    let mut loc_p0 = String::from("-");
    for l in 1..=nb {
        let t_lo = (l - 1) as f64 * h;
        // eta_l^0(1) / alpha_l^0(1): value right after the block-start jump
        let (anchor_p, anchor_p0) = match imult.arc(l, 0.0) {
            Some(arc) => (arc.eta_at(1.0), arc.alpha_at(1.0)),
            None => (imult.p(t_lo), imult.p0(t_lo)),
        };
        for frac in [0.23, 0.52, 0.86] {
            let t = t_lo + frac * h;
            // accumulate over integrand segments within [t_lo, t]
            let mut int_p = vec![0.0; n];
            let mut int_p0 = 0.0;
            for win in splits.windows(2) {
                let (a, b) = (win[0].max(t_lo), win[1].min(t));
                if b <= a + 1e-12 {
                    continue;
                }
                let seg = segment_integral(a, b, &|x| p_integrand(x))?;
                for (acc, v) in int_p.iter_mut().zip(&seg) {
                    *acc += v;
                }
                let seg0 = segment_integral(a, b, &|x| p0_integrand(x, l).map(|v| vec![v]))?;
                int_p0 += seg0[0];
            }
            // jump sums over the open-left half interval
            let mut jump_p = vec![0.0; n];
            let mut jump_p0 = 0.0;
            for r in proc.jumps.active_keys() {
                if r > 1e-12 && r <= t - t_lo + 1e-12 {
                    if let Some(arc) = imult.arc(l, r) {
                        let e0 = arc.eta_at(0.0);
                        let e1 = arc.eta_at(1.0);
                        for c in 0..n {
                            jump_p[c] += e0[c] - e1[c];
                        }
                        jump_p0 += arc.alpha_at(0.0) - arc.alpha_at(1.0);
                    }
                }
            }
            let want_p: Vec<f64> = (0..n)
                .map(|c| anchor_p[c] - int_p[c] - jump_p[c])
                .collect();
            let got_p = imult.p(t);
            let dev = linf_norm(&sub(&got_p, &want_p));
            if dev > worst_p {
                worst_p = dev;
                loc_p = format!("t={t:.4}");
            }
            let want_p0 = anchor_p0 - int_p0 - jump_p0;
            let dev0 = (imult.p0(t) - want_p0).abs();
            if dev0 > worst_p0 {
                worst_p0 = dev0;
                loc_p0 = format!("t={t:.4}");
            }
        }
    }
    Ok(((worst_p, loc_p), (worst_p0, loc_p0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{dynamics_var_names, terminal_var_names, Grid, Target};
    use crate::equivalence::{gc_solution, impulse_to_extended, simulate_impulse};
    use crate::expr::parse_expression;
    use crate::graphcomp::ExtendedControl;
    use crate::measure::{Atom, ImpulseControl, VectorMeasure};

    fn make_dyn(f: &str, g: &str, grid: Grid) -> DelayDynamics {
        let names = dynamics_var_names(1, grid.delay_depth);
        let vars: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        DelayDynamics::new(
            grid,
            1,
            vec![parse_expression(f, &vars).unwrap()],
            vec![vec![parse_expression(g, &vars).unwrap()]],
            crate::hermite::CubicHermite::constant(
                -(grid.delay_depth.max(1) as f64) * grid.period,
                0.0,
                vec![1.0],
            ),
            vec![1.0],
            100.0,
        )
        .unwrap()
    }

    fn scalar_problem(phi: &str, budget: f64) -> MayerProblemData {
        let names = terminal_var_names(1);
        let vars: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        MayerProblemData::new(
            parse_expression(phi, &vars).unwrap(),
            Target::free(1),
            budget,
        )
        .unwrap()
    }

    fn atom_control(grid: Grid, t: f64, mass: f64) -> ImpulseControl {
        let mu = VectorMeasure::new(
            grid.horizon(),
            1,
            vec![Atom {
                t,
                mass: vec![mass],
            }],
            vec![],
            vec![],
        )
        .unwrap();
        ImpulseControl::from_measure(grid, mu).unwrap()
    }

    #[test]
    fn frozen_fixture_certificate_is_exact() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "0", grid);
        let problem = scalar_problem("x", 5.0);
        let c = atom_control(grid, 0.5, 2.0);
        let ep = impulse_to_extended(&c, &d, 6).unwrap();
        let mult =
            integrate_extended_adjoint(&ep, &d, &problem, 1.0, 0.0, vec![0.0]).unwrap();
        // q identically -1, chained; chi = 0
        for k in 0..=10 {
            let s = ep.s_end() * k as f64 / 10.0;
            assert!((mult.q_at(1, s)[0] + 1.0).abs() < 1e-14);
            assert!((mult.q_at(2, s)[0] + 1.0).abs() < 1e-14);
            assert!(mult.q0_at(1, s).abs() < 1e-12);
        }
        let cone = ControlCone::nonneg(1);
        let report = check_extended_pmp(&ep, &d, &problem, &cone, &mult, 1e-8).unwrap();
        assert!(report.passed(), "{}", report.summary());
        // impulse side
        let proc = simulate_impulse(&c, &d, 6).unwrap();
        let imult = impulse_multipliers(&mult, &ep, &proc.trajectory);
        let report = check_impulse_pmp(&proc, &d, &problem, &cone, &imult, 1e-8).unwrap();
        assert!(report.passed(), "{}", report.summary());
    }

    #[test]
    fn budget_fixture_certificate_is_exact() {
        // constant channel pointing down, full budget spent in one jump:
        // q = -1, block gain 1, so d = -1 closes every condition
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "-1", grid);
        let problem = scalar_problem("x", 1.0);
        let c = atom_control(grid, 0.5, 1.0);
        let ep = impulse_to_extended(&c, &d, 6).unwrap();
        assert!((ep.beta_end(2) - 1.0).abs() < 1e-12);
        let mult =
            integrate_extended_adjoint(&ep, &d, &problem, 1.0, -1.0, vec![0.0]).unwrap();
        let cone = ControlCone::nonneg(1);
        let report = check_extended_pmp(&ep, &d, &problem, &cone, &mult, 1e-8).unwrap();
        assert!(report.passed(), "{}", report.summary());
        let proc = simulate_impulse(&c, &d, 6).unwrap();
        let imult = impulse_multipliers(&mult, &ep, &proc.trajectory);
        let report = check_impulse_pmp(&proc, &d, &problem, &cone, &imult, 1e-8).unwrap();
        assert!(report.passed(), "{}", report.summary());
        // support condition is tight: gain + d = 0 everywhere here
        assert!((imult.p(0.3)[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn delayed_gain_adjoint_matches_hand_integration() {
        // g reads the delayed state; only block 2 carries an atom, so
        // q_2 = -1 and q_1 ramps by the plateau mass of block 2
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "x1", grid);
        let problem = scalar_problem("x", 5.0);
        let c = atom_control(grid, 1.5, 2.0);
        let ep = impulse_to_extended(&c, &d, 8).unwrap();
        let mult =
            integrate_extended_adjoint(&ep, &d, &problem, 1.0, 0.0, vec![0.0]).unwrap();
        // plateau is [0.5, 2.5] with w_2 = 1 there
        let q1 = |s: f64| -> f64 {
            let covered = (2.5f64.min(ep.s_end()) - s.max(0.5)).max(0.0);
            -1.0 - covered
        };
        for &s in &[0.0, 0.2, 0.5, 1.3, 2.5, 2.9, 3.0] {
            assert!(
                (mult.q_at(1, s)[0] - q1(s)).abs() < 1e-12,
                "q1({s}) = {} want {}",
                mult.q_at(1, s)[0],
                q1(s)
            );
            assert!((mult.q_at(2, s)[0] + 1.0).abs() < 1e-12);
        }
        // multiplier transport: p = q~ composed with the time change
        let traj = gc_solution(&ep);
        let imult = impulse_multipliers(&mult, &ep, &traj);
        assert!((imult.p(0.2)[0] - q1(0.2)).abs() < 1e-12);
        assert!((imult.p(1.7)[0] - mult.q_at(2, 2.7)[0]).abs() < 1e-12);
        assert!((imult.p(2.5)[0] + 1.0).abs() < 1e-12);
        // drift hamiltonian transport consistency off plateaus
        for &r in &[0.1, 0.3, 0.8] {
            let s = traj.time_change().value(r);
            let data = block_values(&ep, &d, s).unwrap();
            let hdr_ext = drift_hamiltonian(&data, &mult.q0_all(s), &mult.q_all(s));
            let mut hdr_imp = 0.0;
            for l in 1..=2usize {
                let t = r + (l - 1) as f64;
                let mut slots = Vec::new();
                for k in 0..=1usize {
                    slots.push(traj.x_with_history(&d, t - k as f64).unwrap());
                }
                let (f, _) = d.eval_rhs(t, &slots).unwrap();
                hdr_imp += imult.p0(t) + dot(&imult.p(t), &f);
            }
            assert!((hdr_ext - hdr_imp).abs() < 1e-10, "transport at r={r}");
        }
    }

    #[test]
    fn block_coupling_respects_delay_depth() {
        // single atom in the last block: with one delay the first block's
        // adjoint sees it only через the chained start value and stays flat
        let grid = Grid::new(1, 3, 1, 1.0).unwrap();
        let d = make_dyn("0", "x1", grid);
        let problem = scalar_problem("x", 5.0);
        let c = atom_control(grid, 2.5, 2.0);
        let ep = impulse_to_extended(&c, &d, 6).unwrap();
        let mult =
            integrate_extended_adjoint(&ep, &d, &problem, 1.0, 0.0, vec![0.0]).unwrap();
        for k in 0..=8 {
            let s = ep.s_end() * k as f64 / 8.0;
            assert!((mult.q_at(3, s)[0] + 1.0).abs() < 1e-12);
            assert!((mult.q_at(1, s)[0] + 3.0).abs() < 1e-12, "q1 must stay flat");
        }
        let q2_at_0 = mult.q_at(2, 0.0)[0];
        assert!((q2_at_0 + 3.0).abs() < 1e-12);
    }

    #[test]
    fn adjoint_scales_linearly_in_lambda() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("-0.3*x0", "x1", grid);
        let problem = scalar_problem("x", 5.0);
        let c = atom_control(grid, 0.75, 1.5);
        let ep = impulse_to_extended(&c, &d, 6).unwrap();
        let m1 = integrate_extended_adjoint(&ep, &d, &problem, 1.0, 0.0, vec![0.0]).unwrap();
        let m2 = integrate_extended_adjoint(&ep, &d, &problem, 2.0, 0.0, vec![0.0]).unwrap();
        for k in 0..=10 {
            let s = ep.s_end() * k as f64 / 10.0;
            for l in 1..=2 {
                assert!((2.0 * m1.q_at(l, s)[0] - m2.q_at(l, s)[0]).abs() < 1e-10);
                assert!((2.0 * m1.q0_at(l, s) - m2.q0_at(l, s)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn impulse_hamiltonian_matches_grid_search() {
        let cone = ControlCone::Generators {
            subcones: vec![vec![vec![2.0, 1.0], vec![1.0, 3.0]]],
        };
        // hand-built block data: two blocks, two channels, two states
        let data = BlockData {
            f: vec![vec![0.1, -0.2], vec![0.0, 0.3]],
            g: vec![
                vec![vec![1.0, 0.5], vec![-0.3, 0.2]],
                vec![vec![0.4, -0.1], vec![0.7, 0.6]],
            ],
        };
        let qs = vec![vec![0.8, -0.4], vec![-0.2, 0.9]];
        let d = -0.15;
        let fast = impulse_hamiltonian(&data, &qs, d, &cone);
        // dense grid over mass split and generator mixes
        let gens = [[2.0, 1.0], [1.0, 3.0]];
        let dir = |alpha: f64| -> Vec<f64> {
            let raw: Vec<f64> = (0..2)
                .map(|j| alpha * gens[0][j] + (1.0 - alpha) * gens[1][j])
                .collect();
            let nrm = l1_norm(&raw);
            raw.iter().map(|x| x / nrm).collect()
        };
        let mut best = f64::NEG_INFINITY;
        let steps = 120;
        for ti in 0..=steps {
            let t = ti as f64 / steps as f64;
            for a1 in 0..=steps {
                for a2 in 0..=steps {
                    let w1: Vec<f64> = dir(a1 as f64 / steps as f64)
                        .iter()
                        .map(|x| t * x)
                        .collect();
                    let w2: Vec<f64> = dir(a2 as f64 / steps as f64)
                        .iter()
                        .map(|x| (1.0 - t) * x)
                        .collect();
                    let mut v = d * (l1_norm(&w1) + l1_norm(&w2));
                    for j in 0..2 {
                        v += dot(&qs[0], &data.g[0][j]) * w1[j];
                        v += dot(&qs[1], &data.g[1][j]) * w2[j];
                    }
                    best = best.max(v);
                }
            }
        }
        assert!((fast - best).abs() < 1e-6, "fast {fast} vs grid {best}");
    }

    #[test]
    fn trivial_impulse_hamiltonian_values() {
        let cone = ControlCone::nonneg(1);
        let data = BlockData {
            f: vec![vec![0.0]],
            g: vec![vec![vec![0.0]]],
        };
        let qs = vec![vec![0.0]];
        assert_eq!(impulse_hamiltonian(&data, &qs, -1.0, &cone), -1.0);
        let data2 = BlockData {
            f: vec![vec![0.0], vec![0.0]],
            g: vec![vec![vec![0.0]], vec![vec![0.0]]],
        };
        let q0s = vec![0.7, 0.7];
        let qs2 = vec![vec![0.0], vec![0.0]];
        assert!((drift_hamiltonian(&data2, &q0s, &qs2) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn cost_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("-0.4*x0 + 0.2*tanh(x1)", "0.5 + 0.3*x1", grid);
        let problem = scalar_problem("x^2", 5.0);
        // a smooth-ish control with both time and space speeds
        let mesh: Vec<f64> = (0..=10).map(|k| 0.25 * k as f64).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let w0: Vec<f64> = (0..10).map(|_| rng.gen_range(0.2..0.6)).collect();
        let w: Vec<Vec<Vec<f64>>> = (0..10)
            .map(|_| {
                (0..2)
                    .map(|_| vec![rng.gen_range(0.0..0.4)])
                    .collect()
            })
            .collect();
        let ec = ExtendedControl::new(grid, mesh, w0, w).unwrap();
        let substeps = 8;
        let cbeta = 0.7;
        let ctau = 0.4;
        let objective = |ec: &ExtendedControl| -> f64 {
            let ep = crate::extsys::integrate_acs(ec, &d, substeps).unwrap();
            let y = ep.y_end(2)[0];
            let beta = ep.beta_end(2);
            let tau = ec.phi0_end();
            problem.cost(&[y]).unwrap() + 0.5 * cbeta * beta * beta + 0.5 * ctau * tau * tau
        };
        let ep = crate::extsys::integrate_acs(&ec, &d, substeps).unwrap();
        let y_end = ep.y_end(2);
        let (_, dphi) = problem.cost_gradient(&y_end).unwrap();
        let term = TerminalSensitivity {
            dcost_dy: dphi,
            dcost_dbeta: cbeta * ep.beta_end(2),
            dcost_dtau: ctau * ec.phi0_end(),
        };
        let grad = cost_gradient(&ep, &d, &term, 1e-6).unwrap();
        let fd_step = 1e-5;
        let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..12 {
            let k = rng2.gen_range(0..10);
            // w0 component
            let mut lo = ec.clone();
            let mut hi = ec.clone();
            let mut w0lo = ec.w0().to_vec();
            let mut w0hi = ec.w0().to_vec();
            w0lo[k] -= fd_step;
            w0hi[k] += fd_step;
            lo = ExtendedControl::new(grid, ec.mesh().to_vec(), w0lo, ec.w().to_vec()).unwrap();
            hi = ExtendedControl::new(grid, ec.mesh().to_vec(), w0hi, ec.w().to_vec()).unwrap();
            let fd = (objective(&hi) - objective(&lo)) / (2.0 * fd_step);
            let scale = 1.0f64.max(fd.abs());
            assert!(
                (grad.w0[k] - fd).abs() / scale < 1e-4,
                "cell {k} w0: adjoint {} fd {fd}",
                grad.w0[k]
            );
            // a space component
            let l = rng2.gen_range(0..2);
            let mut wlo = ec.w().to_vec();
            let mut whi = ec.w().to_vec();
            wlo[k][l][0] -= fd_step;
            whi[k][l][0] += fd_step;
            let lo2 =
                ExtendedControl::new(grid, ec.mesh().to_vec(), ec.w0().to_vec(), wlo).unwrap();
            let hi2 =
                ExtendedControl::new(grid, ec.mesh().to_vec(), ec.w0().to_vec(), whi).unwrap();
            let fd2 = (objective(&hi2) - objective(&lo2)) / (2.0 * fd_step);
            let scale2 = 1.0f64.max(fd2.abs());
            assert!(
                (grad.w[k][l][0] - fd2).abs() / scale2 < 1e-4,
                "cell {k} block {l}: adjoint {} fd {fd2}",
                grad.w[k][l][0]
            );
        }
    }

    #[test]
    fn zero_dynamics_gradient_is_pure_penalty() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let d = make_dyn("0", "0", grid);
        let mesh = vec![0.0, 1.0, 2.0];
        let ec = ExtendedControl::new(
            grid,
            mesh,
            vec![0.5, 0.5],
            vec![vec![vec![0.2], vec![0.0]], vec![vec![0.0], vec![0.3]]],
        )
        .unwrap();
        let ep = crate::extsys::integrate_acs(&ec, &d, 4).unwrap();
        let term = TerminalSensitivity {
            dcost_dy: vec![0.0],
            dcost_dbeta: 2.0,
            dcost_dtau: 3.0,
        };
        let grad = cost_gradient(&ep, &d, &term, 1e-9).unwrap();
        // drift part: q0 = -3 constant over both blocks, so dJ/dw0 = 6 per
        // unit cell; gain part zero, variation part 2 * sign(w)
        assert!((grad.w0[0] - 6.0).abs() < 1e-12);
        assert!((grad.w0[1] - 6.0).abs() < 1e-12);
        assert!((grad.w[0][0][0] - 2.0).abs() < 1e-9);
        assert!((grad.w[1][1][0] - 2.0).abs() < 1e-9);
        assert!(grad.w[0][1][0].abs() < 1e-9);
    }
}
