//! The minimum-energy steering problem: quadratic cost evaluation,
//! projection onto the set of endpoint-feasible controls, and two solvers.
//!
//! With a linear neutral map the control-to-state map is affine, so the
//! equality-constrained problem
//!
//! ```text
//! min (w_s/2) int |x_u - x_d|^2 + (w_e/2) int |u|^2   s.t.  x_u(T) = x_d
//! ```
//!
//! is solved exactly by the null-space method: the feasible set is
//! parametrized as `u_part + Z v` with `Z` spanning the null space of the
//! endpoint map, and the reduced quadratic is solved directly. The penalty
//! path replaces the constraint with quadratic penalties of increasing
//! weight, each stage minimized by gradient descent with backtracking, and
//! is finished by one feasibility projection; it only needs forward solves
//! and serves as the general-interface fallback and as a cross-check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::evolution::{mild_solve_with, ControlSignal, KernelTable, SteeringProblem, Trajectory};
use crate::spectral::SpectralState;
use crate::steering::{assemble_steering_matrix_with, SteeringMatrix, FEASIBILITY_TOL};

/// Weights of the quadratic cost: `state` multiplies the tracking integral,
/// `energy` the control energy. The default `(0, 1)` is the pure
/// minimum-energy problem.
#[derive(Clone, Copy, Debug)]
pub struct CostWeights {
    pub state: f64,
    pub energy: f64,
}

impl CostWeights {
    pub fn new(state: f64, energy: f64) -> Result<Self> {
        if !(state >= 0.0) || !state.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "state weight must be nonnegative, got {state}"
            )));
        }
        if !(energy > 0.0) || !energy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "energy weight must be positive (coercivity), got {energy}"
            )));
        }
        Ok(CostWeights { state, energy })
    }

    pub fn min_energy() -> Self {
        CostWeights {
            state: 0.0,
            energy: 1.0,
        }
    }
}

/// Trapezoid node weights for the state integral.
fn trapezoid_weights(m_steps: usize, dt: f64) -> Vec<f64> {
    (0..=m_steps)
        .map(|m| {
            if m == 0 || m == m_steps {
                0.5 * dt
            } else {
                dt
            }
        })
        .collect()
}

/// Quadratic cost of a trajectory/control pair: the state integral by
/// trapezoid quadrature on the nodes, the energy integral exactly for the
/// piecewise-constant control.
pub fn cost(
    traj: &Trajectory,
    u: &ControlSignal,
    w: &CostWeights,
    xd: &SpectralState,
) -> Result<f64> {
    if traj.grid() != u.grid() {
        return Err(Error::InvalidArgument(
            "trajectory and control grids differ".into(),
        ));
    }
    if traj.modes() != xd.len() {
        return Err(Error::InvalidArgument(
            "target dimension does not match the trajectory".into(),
        ));
    }
    let m_steps = traj.grid().steps();
    let theta = trapezoid_weights(m_steps, traj.grid().dt());
    let mut state_term = 0.0;
    if w.state > 0.0 {
        for m in 0..=m_steps {
            let d = traj.state_at(m) - xd.coeffs();
            state_term += theta[m] * d.norm_squared();
        }
    }
    Ok(0.5 * w.state * state_term + 0.5 * w.energy * u.l2_norm_sq())
}

/// Project a control onto the endpoint-feasible set by repeated
/// minimum-norm corrections: `u <- u + H^+ (x_d - x_u(T))` until the defect
/// falls below the feasibility tolerance. With a linear neutral map the
/// first correction already lands up to the neutral coupling, so the loop
/// is short; stagnation raises a projection failure.
pub fn project_feasible(prob: &SteeringProblem, u: &ControlSignal) -> Result<ControlSignal> {
    let table = KernelTable::build(prob)?;
    let smat = assemble_steering_matrix_with(prob, &table)?;
    project_feasible_with(prob, &table, &smat, u, 50)
}

/// [`project_feasible`] against prebuilt operators, for callers that run
/// many projections on one problem.
pub fn project_feasible_with(
    prob: &SteeringProblem,
    table: &KernelTable,
    smat: &SteeringMatrix,
    u: &ControlSignal,
    cap: usize,
) -> Result<ControlSignal> {
    let tol = FEASIBILITY_TOL * prob.xd.norm().max(f64::MIN_POSITIVE.sqrt());
    let mut current = u.clone();
    let mut prev_defect = f64::INFINITY;
    let mut stall = 0usize;
    for it in 0..=cap {
        let traj = mild_solve_with(prob, table, &current)?;
        let defect = prob.xd.coeffs() - traj.endpoint();
        let d_norm = defect.norm();
        if d_norm <= tol {
            return Ok(current);
        }
        if d_norm >= 0.9 * prev_defect {
            stall += 1;
            if stall >= 3 {
                return Err(Error::ProjectionFailure {
                    defect: d_norm,
                    tolerance: tol,
                    iterations: it,
                });
            }
        } else {
            stall = 0;
        }
        prev_defect = d_norm;
        let (corr, _residual) = smat.apply_pinv(&defect);
        let stacked = smat.stack(&current) + corr;
        current = smat.unstack(&stacked);
    }
    Err(Error::ProjectionFailure {
        defect: prev_defect,
        tolerance: tol,
        iterations: cap,
    })
}

/// Which solver realizes the minimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MinEnergyMethod {
    /// Exact equality-constrained quadratic solve (linear neutral map).
    NullSpace,
    /// Quadratic-penalty continuation finished by a feasibility projection.
    Penalty,
}

/// Solve report: the achieved cost, endpoint feasibility and the
/// optimality diagnostics of the chosen path.
#[derive(Clone, Debug)]
pub struct MinEnergyReport {
    pub method: MinEnergyMethod,
    pub cost: f64,
    /// `|x(T) - x_d| / |x_d|`.
    pub endpoint_error: f64,
    /// Null-space path: reduced-gradient norm plus constraint violation.
    pub kkt_residual: Option<f64>,
    /// Penalty path: endpoint defect after the last stage, before the
    /// finishing projection.
    pub penalty_defect: Option<f64>,
    /// The reduced system was rank-deficient and a pseudo-inverse was used.
    pub degenerate: bool,
    /// Whether the sufficient existence condition held (the solve proceeds
    /// either way; the condition is not necessary).
    pub existence_condition: bool,
}

/// Affine model of the control-to-state map for a linear neutral term:
/// `x(t_m) = a_m + L_m u` with the maps realized through unit-impulse
/// responses (the discrete scheme is a convolution on the uniform grid).
struct AffineModel {
    /// free trajectory, (M+1) x P
    a_nodes: DMatrix<f64>,
    /// endpoint map, P x (M N)
    c_end: DMatrix<f64>,
    /// per-node maps, only when the state cost is active
    l_nodes: Option<Vec<DMatrix<f64>>>,
    /// lag responses per control mode: r[n] is (M+1) x P, row l = response
    /// at lag l to a unit control on one subinterval
    responses: Vec<DMatrix<f64>>,
    theta: Vec<f64>,
    dt: f64,
    n_controls: usize,
    m_steps: usize,
}

impl AffineModel {
    fn build(prob: &SteeringProblem, table: &KernelTable, with_state_maps: bool) -> Result<Self> {
        let m_steps = prob.grid.steps();
        let p = prob.modes();
        let n = prob.n_controls();
        let dt = prob.grid.dt();

        let free = mild_solve_with(prob, table, &ControlSignal::zero(prob.grid, n))?;
        let a_nodes = free.states().clone();

        // unit-impulse responses from the zero state
        let mut impulse_prob = prob.clone();
        impulse_prob.x0 = SpectralState::zero(p);
        let mut responses = Vec::with_capacity(n);
        for k in 0..n {
            let mut uv = DMatrix::zeros(m_steps, n);
            uv[(0, k)] = 1.0;
            let u = ControlSignal::new(uv, prob.grid)?;
            let traj = mild_solve_with(&impulse_prob, table, &u)?;
            responses.push(traj.states().clone());
        }

        let mut c_end = DMatrix::zeros(p, m_steps * n);
        for j in 0..m_steps {
            let lag = m_steps - j;
            for k in 0..n {
                for i in 0..p {
                    c_end[(i, j * n + k)] = responses[k][(lag, i)];
                }
            }
        }

        let l_nodes = if with_state_maps {
            let mut all = Vec::with_capacity(m_steps + 1);
            for m in 0..=m_steps {
                let mut lm = DMatrix::zeros(p, m_steps * n);
                for j in 0..m {
                    let lag = m - j;
                    for k in 0..n {
                        for i in 0..p {
                            lm[(i, j * n + k)] = responses[k][(lag, i)];
                        }
                    }
                }
                all.push(lm);
            }
            Some(all)
        } else {
            None
        };

        Ok(AffineModel {
            a_nodes,
            c_end,
            l_nodes,
            responses,
            theta: trapezoid_weights(m_steps, dt),
            dt,
            n_controls: n,
            m_steps,
        })
    }

    fn endpoint_defect_map(&self, xd: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let a_end = self.a_nodes.row(self.m_steps).transpose();
        (self.c_end.clone(), xd - a_end)
    }

    /// State at node m for a stacked control, via the lag responses.
    fn state_at(&self, m: usize, u: &DVector<f64>) -> DVector<f64> {
        let p = self.a_nodes.ncols();
        let mut x = self.a_nodes.row(m).transpose();
        for j in 0..m {
            let lag = m - j;
            for k in 0..self.n_controls {
                let uv = u[j * self.n_controls + k];
                if uv != 0.0 {
                    for i in 0..p {
                        x[i] += uv * self.responses[k][(lag, i)];
                    }
                }
            }
        }
        x
    }

    /// Value and gradient of `J(u) + (rho/2) |C u - b|^2` on stacked
    /// controls; `rho = 0` gives the plain cost.
    fn objective_grad(
        &self,
        w: &CostWeights,
        xd: &DVector<f64>,
        rho: f64,
        u: &DVector<f64>,
    ) -> (f64, DVector<f64>) {
        let mut value = 0.5 * w.energy * self.dt * u.norm_squared();
        let mut grad = u * (w.energy * self.dt);
        if w.state > 0.0 {
            let l_nodes = self
                .l_nodes
                .as_ref()
                .expect("state maps assembled for state-weighted cost");
            for m in 0..=self.m_steps {
                let d = self.state_at(m, u) - xd;
                value += 0.5 * w.state * self.theta[m] * d.norm_squared();
                grad += l_nodes[m].transpose() * d * (w.state * self.theta[m]);
            }
        }
        if rho > 0.0 {
            let a_end = self.a_nodes.row(self.m_steps).transpose();
            let defect = &self.c_end * u + a_end - xd;
            value += 0.5 * rho * defect.norm_squared();
            grad += self.c_end.transpose() * defect * rho;
        }
        (value, grad)
    }
}

/// Size guard for the dense null-space factorization with an active state
/// weight (the reduced Hessian is (MN - P)^2).
const NULLSPACE_STATE_LIMIT: usize = 768;

/// Gradient-descent parameters of the penalty stages.
const PENALTY_GRAD_TOL: f64 = 1e-8;
const PENALTY_MAX_ITERS: usize = 4000;
const PENALTY_STAGES: [f64; 3] = [1e2, 1e4, 1e6];

/// Solve the minimum-energy problem (14): returns the control, its cost and
/// a diagnostic report. The existence condition `1 - H |A^{-vs}| > 0` is
/// checked and reported but does not gate the solve (it is sufficient, not
/// necessary).
pub fn solve_min_energy(
    prob: &SteeringProblem,
    w: &CostWeights,
    method: MinEnergyMethod,
) -> Result<(ControlSignal, f64, MinEnergyReport)> {
    let table = KernelTable::build(prob)?;
    let smat = assemble_steering_matrix_with(prob, &table)?;
    let existence_condition = prob.h.lipschitz()
        * prob.op.negative_power_norm(prob.h.varsigma())
        < 1.0;
    if !existence_condition {
        log::warn!("existence condition violated; proceeding (sufficient, not necessary)");
    }

    let with_state = w.state > 0.0;
    if with_state && prob.grid.steps() * prob.n_controls() > NULLSPACE_STATE_LIMIT
        && method == MinEnergyMethod::NullSpace
    {
        return Err(Error::InvalidArgument(format!(
            "null-space path with a state weight is limited to M*N <= {NULLSPACE_STATE_LIMIT}; use the penalty method"
        )));
    }
    let model = AffineModel::build(prob, &table, with_state)?;
    let (c, b) = model.endpoint_defect_map(prob.xd.coeffs());

    let (u_stacked, kkt_residual, penalty_defect, degenerate) = match method {
        MinEnergyMethod::NullSpace => {
            let (u, kkt, degen) = null_space_solve(&model, w, prob.xd.coeffs(), &c, &b)?;
            (u, Some(kkt), None, degen)
        }
        MinEnergyMethod::Penalty => {
            let (u, defect) = penalty_solve(&model, w, prob.xd.coeffs(), &c, &b);
            (u, None, Some(defect), false)
        }
    };

    let mut control = smat.unstack(&u_stacked);
    if method == MinEnergyMethod::Penalty {
        control = project_feasible_with(prob, &table, &smat, &control, 50)?;
    }

    let traj = mild_solve_with(prob, &table, &control)?;
    let j_value = cost(&traj, &control, w, &prob.xd)?;
    let denom = prob.xd.norm().max(f64::MIN_POSITIVE.sqrt());
    let endpoint_error = (traj.endpoint() - prob.xd.coeffs()).norm() / denom;
    let report = MinEnergyReport {
        method,
        cost: j_value,
        endpoint_error,
        kkt_residual,
        penalty_defect,
        degenerate,
        existence_condition,
    };
    Ok((control, j_value, report))
}

/// Null-space solve of the equality-constrained quadratic: particular
/// solution from the pseudo-inverse, orthonormal null-space basis from
/// Householder completion of the row space, direct symmetric solve of the
/// reduced system. Returns (u, kkt residual, degeneracy flag).
fn null_space_solve(
    model: &AffineModel,
    w: &CostWeights,
    xd: &DVector<f64>,
    c: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, f64, bool)> {
    let n = c.ncols();
    let svd = c.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max <= 0.0 {
        return Err(Error::UncontrollableDiscretization { sigma_max });
    }
    let threshold = crate::steering::RANK_TOL * sigma_max;
    let kept: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > threshold)
        .collect();
    let rank = kept.len();
    let mut degenerate = rank < c.nrows();

    // minimum-norm particular solution
    let ut_b = svd.u.as_ref().expect("svd u").transpose() * b;
    let v_t = svd.v_t.as_ref().expect("svd v_t");
    let mut u_part = DVector::zeros(n);
    for &i in &kept {
        let coeff = ut_b[i] / svd.singular_values[i];
        u_part += v_t.row(i).transpose() * coeff;
    }

    // orthonormal null-space basis: complete the rank columns of V to a full
    // basis by Householder reflectors
    let z = null_space_basis(v_t, &kept, n);

    let v_star: DVector<f64> = if w.state == 0.0 {
        // reduced Hessian is (w_e dt) I: v = -Z' u_part (zero up to rounding)
        let g_red = z.transpose() * &u_part;
        -g_red
    } else {
        let l_nodes = model.l_nodes.as_ref().expect("state maps");
        // omega = sum theta_m L_m' L_m restricted to the null space
        let cols = z.ncols();
        let mut h_red = DMatrix::identity(cols, cols) * (w.energy * model.dt);
        for m in 0..=model.m_steps {
            let lz = &l_nodes[m] * &z;
            h_red += lz.transpose() * lz * (w.state * model.theta[m]);
        }
        let (_, g_full) = model.objective_grad(w, xd, 0.0, &u_part);
        let g_red = z.transpose() * g_full;
        match h_red.clone().cholesky() {
            Some(chol) => -chol.solve(&g_red),
            None => {
                degenerate = true;
                let hsvd = h_red.svd(true, true);
                -hsvd
                    .solve(&g_red, 1e-12)
                    .map_err(|e| Error::InvalidArgument(format!("reduced solve failed: {e}")))?
            }
        }
    };

    let u = &u_part + &z * v_star;
    let (_, g_at_u) = model.objective_grad(w, xd, 0.0, &u);
    let reduced_grad = (z.transpose() * g_at_u).norm();
    let constraint_violation = (c * &u - b).norm();
    Ok((u, reduced_grad.max(constraint_violation), degenerate))
}

/// Orthonormal basis of the null space of the endpoint map: apply the
/// Householder reflectors that triangularize the kept rows of V^T to the
/// trailing identity columns.
fn null_space_basis(v_t: &DMatrix<f64>, kept: &[usize], n: usize) -> DMatrix<f64> {
    let rank = kept.len();
    // V_r: n x rank with orthonormal columns
    let mut v_r = DMatrix::zeros(n, rank);
    for (col, &i) in kept.iter().enumerate() {
        v_r.set_column(col, &v_t.row(i).transpose());
    }
    // Householder QR of V_r; reflectors stored in-place
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(rank);
    let mut work = v_r;
    for k in 0..rank {
        let mut v = DVector::zeros(n);
        for i in k..n {
            v[i] = work[(i, k)];
        }
        let alpha = -v[k].signum() * v.norm();
        v[k] -= alpha;
        let v_norm = v.norm();
        if v_norm > 0.0 {
            v /= v_norm;
            for col in k..rank {
                let mut dot = 0.0;
                for i in k..n {
                    dot += v[i] * work[(i, col)];
                }
                for i in k..n {
                    work[(i, col)] -= 2.0 * dot * v[i];
                }
            }
        }
        reflectors.push(v);
    }
    // apply Q = H_0 ... H_{rank-1} to the trailing identity columns
    let mut z = DMatrix::zeros(n, n - rank);
    for (col, j) in (rank..n).enumerate() {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        for v in reflectors.iter().rev() {
            let dot = v.dot(&e);
            if dot != 0.0 {
                e -= v * (2.0 * dot);
            }
        }
        z.set_column(col, &e);
    }
    z
}

/// Quadratic-penalty continuation: stages of increasing penalty weight,
/// each minimized by gradient descent with a Barzilai-Borwein trial step
/// and Armijo backtracking. Returns the last iterate and its endpoint
/// defect before the finishing projection.
fn penalty_solve(
    model: &AffineModel,
    w: &CostWeights,
    xd: &DVector<f64>,
    c: &DMatrix<f64>,
    b: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let n = c.ncols();
    let mut u = DVector::zeros(n);
    for &stage in &PENALTY_STAGES {
        let rho = stage * w.energy;
        let (mut value, mut grad) = model.objective_grad(w, xd, rho, &u);
        let mut step = 1.0 / (w.energy * model.dt + rho);
        for _ in 0..PENALTY_MAX_ITERS {
            if grad.norm() <= PENALTY_GRAD_TOL {
                break;
            }
            // Armijo backtracking along the steepest descent direction
            let g_sq = grad.norm_squared();
            let mut t = step;
            let mut accepted = false;
            for _ in 0..60 {
                let candidate = &u - &grad * t;
                let (cand_value, cand_grad) = model.objective_grad(w, xd, rho, &candidate);
                if cand_value <= value - 1e-4 * t * g_sq {
                    // Barzilai-Borwein step for the next iteration
                    let du = &candidate - &u;
                    let dg = &cand_grad - &grad;
                    let dgg = dg.dot(&du);
                    step = if dgg > 0.0 {
                        (du.norm_squared() / dgg).clamp(1e-14, 1e10)
                    } else {
                        t * 2.0
                    };
                    u = candidate;
                    value = cand_value;
                    grad = cand_grad;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
    }
    let defect = (c * &u - b).norm();
    (u, defect)
}
