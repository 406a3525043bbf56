//! Problem data: the delay dynamics `f`, `g_j`, the state history, and the
//! Mayer cost with its endpoint target. Also the stacked per-block
//! evaluation used by the time-space system and the Hamiltonians.

use crate::error::{Error, Result};
use crate::expr::ExpressionAst;
use crate::hermite::CubicHermite;

/// Shared grid constants: control dimension `m`, number of delay periods `N`
/// covering the horizon, delay depth `M`, and the period length `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub control_dim: usize,
    pub num_periods: usize,
    pub delay_depth: usize,
    pub period: f64,
}

impl Grid {
    pub fn new(control_dim: usize, num_periods: usize, delay_depth: usize, period: f64) -> Result<Self> {
        if control_dim == 0 {
            return Err(Error::invalid("control dimension must be positive"));
        }
        if num_periods == 0 {
            return Err(Error::invalid("horizon must cover at least one period"));
        }
        if num_periods < delay_depth {
            return Err(Error::invalid("need at least as many periods as delays"));
        }
        if !(period > 0.0) {
            return Err(Error::invalid("period must be positive"));
        }
        Ok(Grid {
            control_dim,
            num_periods,
            delay_depth,
            period,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.num_periods as f64 * self.period
    }

    /// Block index `l` in `1..=N` owning time `t`, with grid times assigned
    /// to the earlier block (time `lh` belongs to block `l`).
    pub fn block_of(&self, t: f64) -> usize {
        let l = (t / self.period).ceil() as usize;
        l.clamp(1, self.num_periods)
    }
}

/// Values and first derivatives of `f` and all `g_j` at one stacked point.
#[derive(Debug, Clone)]
pub struct StackedDerivatives {
    pub f: Vec<f64>,
    /// `g[j]` is the j-th control channel, an n-vector.
    pub g: Vec<Vec<f64>>,
    pub df_dt: Vec<f64>,
    pub dg_dt: Vec<Vec<f64>>,
    /// `df_dx[k][row][col]`: Jacobian of `f` w.r.t. delay slot `k` (0 = current).
    pub df_dx: Vec<Vec<Vec<f64>>>,
    /// `dg_dx[j][k][row][col]`
    pub dg_dx: Vec<Vec<Vec<Vec<f64>>>>,
}

/// The delay control system data over a fixed grid.
#[derive(Debug, Clone)]
pub struct DelayDynamics {
    pub grid: Grid,
    pub state_dim: usize,
    f: Vec<ExpressionAst>,
    g: Vec<Vec<ExpressionAst>>,
    /// State history on `[-Mh, 0]`; a constant dummy when `M = 0`.
    pub history: CubicHermite,
    pub x0: Vec<f64>,
    /// Declared bound on the sup norms of `f` and the `g_j`, used only as a
    /// sampled sanity check.
    pub bound: f64,
}

/// Variable names for dynamics expressions: `t`, then one name per delay
/// slot and state component.
pub fn dynamics_var_names(state_dim: usize, delay_depth: usize) -> Vec<String> {
    let mut names = vec!["t".to_string()];
    for k in 0..=delay_depth {
        if state_dim == 1 {
            names.push(format!("x{k}"));
        } else {
            for i in 0..state_dim {
                names.push(format!("x{k}_{i}"));
            }
        }
    }
    names
}

/// Variable names for terminal-cost and target expressions.
pub fn terminal_var_names(state_dim: usize) -> Vec<String> {
    if state_dim == 1 {
        vec!["x".to_string()]
    } else {
        (0..state_dim).map(|i| format!("x_{i}")).collect()
    }
}

impl DelayDynamics {
    pub fn new(
        grid: Grid,
        state_dim: usize,
        f: Vec<ExpressionAst>,
        g: Vec<Vec<ExpressionAst>>,
        history: CubicHermite,
        x0: Vec<f64>,
        bound: f64,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::invalid("state dimension must be positive"));
        }
        if f.len() != state_dim {
            return Err(Error::invalid("drift must have one component per state"));
        }
        if g.len() != grid.control_dim || g.iter().any(|gj| gj.len() != state_dim) {
            return Err(Error::invalid(
                "control channels must be m maps with n components each",
            ));
        }
        if x0.len() != state_dim {
            return Err(Error::invalid("initial state dimension mismatch"));
        }
        if grid.delay_depth > 0 {
            let (a, b) = history.domain();
            let want_a = -(grid.delay_depth as f64) * grid.period;
            if history.dim() != state_dim {
                return Err(Error::invalid("history dimension mismatch"));
            }
            if (a - want_a).abs() > 1e-9 || b.abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "history must cover [{want_a}, 0], got [{a}, {b}]"
                )));
            }
        }
        let nvars = 1 + state_dim * (grid.delay_depth + 1);
        for ast in f.iter().chain(g.iter().flatten()) {
            if ast.vars().len() != nvars {
                return Err(Error::invalid("dynamics expression variable count mismatch"));
            }
        }
        Ok(DelayDynamics {
            grid,
            state_dim,
            f,
            g,
            history,
            x0,
            bound,
        })
    }

    /// History value and slope at `t` in `[-Mh, 0]`.
    pub fn history_at(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let eps = 1e-9 * (1.0 + self.grid.period);
        let (a, b) = if self.grid.delay_depth == 0 {
            (0.0, 0.0)
        } else {
            self.history.domain()
        };
        if t < a - eps || t > b + eps {
            return Err(Error::invalid(format!(
                "history argument {t} outside [{a}, {b}]"
            )));
        }
        if self.grid.delay_depth == 0 {
            return Ok((self.x0.clone(), vec![0.0; self.state_dim]));
        }
        Ok(self.history.eval_with_slope(t.clamp(a, b)))
    }

    fn pack_point(&self, t: f64, slots: &[Vec<f64>]) -> Vec<f64> {
        let mut p = Vec::with_capacity(1 + self.state_dim * slots.len());
        p.push(t);
        for s in slots {
            p.extend_from_slice(s);
        }
        p
    }

    /// Plain values of `f` and all `g_j` at `(t, slots)` where `slots[k]` is
    /// the state delayed by `k` periods.
    pub fn eval_rhs(&self, t: f64, slots: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        debug_assert_eq!(slots.len(), self.grid.delay_depth + 1);
        let p = self.pack_point(t, slots);
        let mut fv = Vec::with_capacity(self.state_dim);
        for ast in &self.f {
            fv.push(ast.eval(&p)?);
        }
        let mut gv = Vec::with_capacity(self.g.len());
        for gj in &self.g {
            let mut col = Vec::with_capacity(self.state_dim);
            for ast in gj {
                col.push(ast.eval(&p)?);
            }
            gv.push(col);
        }
        Ok((fv, gv))
    }

    /// Values plus time partials and per-slot Jacobians.
    pub fn eval_rhs_grad(&self, t: f64, slots: &[Vec<f64>]) -> Result<StackedDerivatives> {
        let p = self.pack_point(t, slots);
        let n = self.state_dim;
        let nk = self.grid.delay_depth + 1;
        let unpack = |grad: &[f64]| -> (f64, Vec<Vec<f64>>) {
            let dt = grad[0];
            let mut per_slot = Vec::with_capacity(nk);
            for k in 0..nk {
                per_slot.push(grad[1 + k * n..1 + (k + 1) * n].to_vec());
            }
            (dt, per_slot)
        };
        let mut f = vec![0.0; n];
        let mut df_dt = vec![0.0; n];
        let mut df_dx = vec![vec![vec![0.0; n]; n]; nk];
        for (row, ast) in self.f.iter().enumerate() {
            let (v, grad) = ast.eval_with_derivatives(&p)?;
            f[row] = v;
            let (dt, slots_g) = unpack(&grad);
            df_dt[row] = dt;
            for k in 0..nk {
                df_dx[k][row] = slots_g[k].clone();
            }
        }
        let mut g = Vec::with_capacity(self.g.len());
        let mut dg_dt = Vec::with_capacity(self.g.len());
        let mut dg_dx = Vec::with_capacity(self.g.len());
        for gj in &self.g {
            let mut gv = vec![0.0; n];
            let mut gt = vec![0.0; n];
            let mut gx = vec![vec![vec![0.0; n]; n]; nk];
            for (row, ast) in gj.iter().enumerate() {
                let (v, grad) = ast.eval_with_derivatives(&p)?;
                gv[row] = v;
                let (dt, slots_g) = unpack(&grad);
                gt[row] = dt;
                for k in 0..nk {
                    gx[k][row] = slots_g[k].clone();
                }
            }
            g.push(gv);
            dg_dt.push(gt);
            dg_dx.push(gx);
        }
        Ok(StackedDerivatives {
            f,
            g,
            df_dt,
            dg_dt,
            df_dx,
            dg_dx,
        })
    }

    /// Fill the delay slots for block `l` at extended time `tau_l`, reading
    /// states of blocks `l-k` from `block_state` and history rows from the
    /// initial data. `block_state(b)` must be valid for `b` in
    /// `max(1, l-M)..=l`.
    pub fn stacked_slots(
        &self,
        l: usize,
        tau_l: f64,
        mut block_state: impl FnMut(usize) -> Vec<f64>,
    ) -> Result<Vec<Vec<f64>>> {
        let m_depth = self.grid.delay_depth;
        let mut slots = Vec::with_capacity(m_depth + 1);
        for k in 0..=m_depth {
            if l as isize - k as isize >= 1 {
                slots.push(block_state(l - k));
            } else {
                let (v, _) = self.history_at(tau_l - k as f64 * self.grid.period)?;
                slots.push(v);
            }
        }
        Ok(slots)
    }

    /// Stacked values `F_l` and `G_{j,l}` for block `l`: `f` and the `g_j`
    /// with real state in the slots reachable inside the horizon and history
    /// values in the rest.
    pub fn eval_stacked(
        &self,
        l: usize,
        tau_l: f64,
        states: &[Vec<f64>],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if l == 0 || l > self.grid.num_periods {
            return Err(Error::invalid(format!("block index {l} out of range")));
        }
        let slots = self.stacked_slots(l, tau_l, |b| states[b - 1].clone())?;
        self.eval_rhs(tau_l, &slots)
    }

    /// Sample `f`, `g` on a box around the initial data and report the worst
    /// sup norm against the declared bound.
    pub fn bound_check(&self, samples: usize) -> Result<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        let mut worst: f64 = 0.0;
        let radius = 1.0 + crate::util::linf_norm(&self.x0);
        for _ in 0..samples {
            let t = rng.gen_range(0.0..self.grid.horizon());
            let slots: Vec<Vec<f64>> = (0..=self.grid.delay_depth)
                .map(|_| {
                    (0..self.state_dim)
                        .map(|_| rng.gen_range(-3.0 * radius..3.0 * radius))
                        .collect()
                })
                .collect();
            if let Ok((f, g)) = self.eval_rhs(t, &slots) {
                worst = worst.max(crate::util::linf_norm(&f));
                for gj in &g {
                    worst = worst.max(crate::util::linf_norm(gj));
                }
            }
        }
        Ok(worst)
    }
}

/// Endpoint target set.
#[derive(Debug, Clone)]
pub enum Target {
    /// Componentwise box; `None` bounds are unconstrained.
    Box {
        lo: Vec<Option<f64>>,
        hi: Vec<Option<f64>>,
    },
    /// Smooth sublevel set `{ x : psi(x) <= 0 }`.
    LevelSet { psi: ExpressionAst },
}

impl Target {
    pub fn free(state_dim: usize) -> Self {
        Target::Box {
            lo: vec![None; state_dim],
            hi: vec![None; state_dim],
        }
    }

    /// Per-face hinge violations; empty when inside the target.
    pub fn violations(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Target::Box { lo, hi } => {
                let mut out = Vec::new();
                for i in 0..x.len() {
                    if let Some(l) = lo[i] {
                        out.push((l - x[i]).max(0.0));
                    }
                    if let Some(h) = hi[i] {
                        out.push((x[i] - h).max(0.0));
                    }
                }
                Ok(out)
            }
            Target::LevelSet { psi } => Ok(vec![psi.eval(x)?.max(0.0)]),
        }
    }

    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        let v = self.violations(x)?;
        Ok(v.iter().map(|a| a * a).sum::<f64>().sqrt())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool> {
        Ok(self.distance(x)? <= tol)
    }

    /// Distance of `normal` from the normal cone at `x`. Boxes admit sums of
    /// outward face rays at active faces; level sets nonnegative multiples of
    /// the constraint gradient.
    pub fn normal_cone_residual(&self, x: &[f64], normal: &[f64], active_tol: f64) -> Result<f64> {
        match self {
            Target::Box { lo, hi } => {
                let mut resid: f64 = 0.0;
                for i in 0..x.len() {
                    let lo_active = lo[i].map_or(false, |l| (x[i] - l).abs() <= active_tol);
                    let hi_active = hi[i].map_or(false, |h| (x[i] - h).abs() <= active_tol);
                    let ni = normal[i];
                    let ok = (ni == 0.0)
                        || (ni < 0.0 && lo_active)
                        || (ni > 0.0 && hi_active);
                    if !ok {
                        resid = resid.max(ni.abs());
                    }
                }
                Ok(resid)
            }
            Target::LevelSet { psi } => {
                let (val, grad) = psi.eval_with_derivatives(x)?;
                if val < -active_tol {
                    return Ok(crate::util::linf_norm(normal));
                }
                let g2: f64 = grad.iter().map(|g| g * g).sum();
                if g2 < 1e-14 {
                    return Ok(crate::util::linf_norm(normal));
                }
                let c = (crate::util::dot(normal, &grad) / g2).max(0.0);
                let mut r: f64 = 0.0;
                for i in 0..normal.len() {
                    r = r.max((normal[i] - c * grad[i]).abs());
                }
                Ok(r)
            }
        }
    }
}

/// Mayer problem: terminal cost, target set, and variation budget.
#[derive(Debug, Clone)]
pub struct MayerProblemData {
    pub phi: ExpressionAst,
    pub target: Target,
    pub budget: f64,
}

impl MayerProblemData {
    pub fn new(phi: ExpressionAst, target: Target, budget: f64) -> Result<Self> {
        if budget < 0.0 {
            return Err(Error::invalid("budget must be nonnegative"));
        }
        Ok(MayerProblemData { phi, target, budget })
    }

    pub fn cost(&self, x: &[f64]) -> Result<f64> {
        self.phi.eval(x)
    }

    pub fn cost_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.phi.eval_with_derivatives(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    fn scalar_dyn(f: &str, g: &str) -> DelayDynamics {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let vars: Vec<String> = dynamics_var_names(1, 1);
        let vars_ref: Vec<&str> = vars.iter().map(|s| s.as_str()).collect();
        DelayDynamics::new(
            grid,
            1,
            vec![parse_expression(f, &vars_ref).unwrap()],
            vec![vec![parse_expression(g, &vars_ref).unwrap()]],
            CubicHermite::constant(-1.0, 0.0, vec![1.0]),
            vec![1.0],
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn stacked_uses_history_for_early_blocks() {
        // f = delayed state; l=1 reads history, l=2 reads block 1
        let d = scalar_dyn("x1", "0");
        let states = vec![vec![5.0], vec![7.0]];
        let (f1, _) = d.eval_stacked(1, 0.3, &states).unwrap();
        assert_eq!(f1, vec![1.0]); // history is constant 1
        let (f2, _) = d.eval_stacked(2, 1.3, &states).unwrap();
        assert_eq!(f2, vec![5.0]); // block 1 state
    }

    #[test]
    fn stacked_no_history_slot_at_last_block() {
        let d = scalar_dyn("x0", "0");
        let states = vec![vec![5.0], vec![7.0]];
        let (f2, _) = d.eval_stacked(2, 1.9, &states).unwrap();
        assert_eq!(f2, vec![7.0]);
    }

    #[test]
    fn history_slope() {
        let grid = Grid::new(1, 2, 1, 1.0).unwrap();
        let vars = dynamics_var_names(1, 1);
        let vr: Vec<&str> = vars.iter().map(|s| s.as_str()).collect();
        let hist = CubicHermite::new(
            vec![-1.0, 0.0],
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        let d = DelayDynamics::new(
            grid,
            1,
            vec![parse_expression("0", &vr).unwrap()],
            vec![vec![parse_expression("0", &vr).unwrap()]],
            hist,
            vec![1.0],
            10.0,
        )
        .unwrap();
        let (v, s) = d.history_at(-0.5).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15);
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert!(d.history_at(0.5).is_err());
    }

    #[test]
    fn box_target_normals() {
        let t = Target::Box {
            lo: vec![Some(0.0)],
            hi: vec![Some(2.0)],
        };
        assert_eq!(t.normal_cone_residual(&[2.0], &[1.5], 1e-6).unwrap(), 0.0);
        assert!(t.normal_cone_residual(&[1.0], &[1.5], 1e-6).unwrap() > 0.0);
        assert_eq!(t.normal_cone_residual(&[0.0], &[-0.5], 1e-6).unwrap(), 0.0);
    }
}
