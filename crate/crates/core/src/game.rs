//! Pricing/offloading game between one requesting vehicle (follower) and the
//! PV and RSU providers (leaders).
//!
//! The follower splits its task: a fraction `ε` goes to the RSUs and `1 − ε`
//! to the PVs. Completion times are linear in the split, `T_pa = (1−ε)Γ_pa`
//! and `T_RSU = εΓ_RSU`, and the follower's utility is concave in `ε`, so its
//! best response has a three-piece closed form. The leaders then play a price
//! game, solved by alternating damped gradient ascent with a closed-form
//! jump when the two completion times are balanced.
//!
//! Prices are per *price unit* of task data (default 1 GB = 2^30 bytes).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{GB_BITS, MB_BITS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("no offloading split meets the deadline (needs ε ≥ {lo:.6} and ε ≤ {hi:.6})")]
    Infeasible { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusTermSign {
    /// Consensus energy added to provider utility.
    PlusAsPrinted,
    /// Consensus energy charged as a cost.
    #[default]
    MinusAsDefined,
}

impl ConsensusTermSign {
    fn factor(self) -> f64 {
        match self {
            ConsensusTermSign::PlusAsPrinted => 1.0,
            ConsensusTermSign::MinusAsDefined => -1.0,
        }
    }
}

/// How the follower treats its completion-time tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeadlineMode {
    /// Restrict `ε` so that both completion times stay within `T_max`; no
    /// such `ε` is an error.
    #[default]
    Enforce,
    /// Optimize over all of `[0, 1]` and only report deadline misses.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    PvBinding,
    RsuBinding,
    Balanced,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::PvBinding => "pv_binding",
            Regime::RsuBinding => "rsu_binding",
            Regime::Balanced => "balanced",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameSolverParams {
    /// Step sizes, applied to a curvature-normalized gradient.
    pub lr_mu1: f64,
    pub lr_mu2: f64,
    /// Price divisors used when a provider's utility is not positive.
    pub shrink_omega1: f64,
    pub shrink_omega2: f64,
    /// Relative-squared-change termination threshold.
    pub tol_theta: f64,
    /// Cap on the total number of inner price updates.
    pub max_iters: u64,
    pub price_floor: f64,
    pub consensus_term_sign: ConsensusTermSign,
    pub deadline: DeadlineMode,
    /// Size of one price unit of task data, in MB.
    pub price_unit_mb: f64,
    /// Relative tolerance on |T_pa − T_RSU| / max(T_pa, T_RSU) for balance.
    pub balance_rel_tol: f64,
    pub init_epsilon: f64,
    pub init_p_pa: f64,
    pub init_p_rsu: f64,
}

impl Default for GameSolverParams {
    fn default() -> Self {
        Self {
            lr_mu1: 0.5,
            lr_mu2: 0.5,
            shrink_omega1: 2.0,
            shrink_omega2: 2.0,
            tol_theta: 1e-8,
            max_iters: 100_000,
            price_floor: 0.1,
            consensus_term_sign: ConsensusTermSign::default(),
            deadline: DeadlineMode::default(),
            price_unit_mb: GB_BITS / MB_BITS,
            balance_rel_tol: 1e-9,
            init_epsilon: 0.5,
            init_p_pa: 0.2,
            init_p_rsu: 0.5,
        }
    }
}

impl GameSolverParams {
    pub fn price_unit_bits(&self) -> f64 {
        self.price_unit_mb * MB_BITS
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let bad = |m: &str| Err(GameError::InvalidParams(m.to_string()));
        if !(self.lr_mu1 > 0.0 && self.lr_mu2 > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.shrink_omega1 > 1.0 && self.shrink_omega2 > 1.0) {
            return bad("shrink factors must exceed 1");
        }
        if !(self.tol_theta > 0.0) {
            return bad("tol_theta must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.price_floor > 0.0 && self.price_floor.is_finite()) {
            return bad("price_floor must be positive");
        }
        if !(self.price_unit_mb > 0.0 && self.price_unit_mb.is_finite()) {
            return bad("price_unit_mb must be positive");
        }
        if !(self.balance_rel_tol >= 0.0) {
            return bad("balance_rel_tol must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.init_epsilon) {
            return bad("init_epsilon must lie in [0, 1]");
        }
        if !(self.init_p_pa >= self.price_floor && self.init_p_rsu >= self.price_floor) {
            return bad("initial prices must be at least the price floor");
        }
        Ok(())
    }
}

/// Everything the game needs about one requesting vehicle and the providers
/// serving it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffloadInstance {
    pub rv_id: u32,
    pub task_bits: f64,
    pub t_max: f64,
    pub alpha: f64,
    /// Seconds per unit split on the PV side (slowest PV).
    pub gamma_pa: f64,
    /// Seconds per unit split on the RSU side (slowest RSU).
    pub gamma_rsu: f64,
    /// MB/s from the RV to the bottleneck PV.
    pub rate_pv: f64,
    /// MB/s from the RV to the bottleneck RSU.
    pub rate_rsu: f64,
    /// Σ κ_v f² φ C over the PVs: joules per offloaded bit.
    pub pv_energy_per_bit: f64,
    /// Σ κ_r f² φ C over the RSUs: joules per offloaded bit.
    pub rsu_energy_per_bit: f64,
    /// Σ κ_v φ f² over the PVs, as it enters the balanced-regime closed form.
    pub pv_m_sum: f64,
    /// Σ κ_r φ f² over the RSUs, as it enters the balanced-regime closed form.
    pub rsu_m_sum: f64,
    /// Consensus energy attributed to this RV's transaction on each chain.
    pub consensus_energy_pv: f64,
    pub consensus_energy_rsu: f64,
    pub xi_v: f64,
    pub xi_r: f64,
    pub tx_power_w: f64,
    pub price_unit_bits: f64,
    pub consensus_sign: ConsensusTermSign,
}

impl OffloadInstance {
    pub fn validate(&self) -> Result<(), GameError> {
        let bad = |m: &str| {
            Err(GameError::InvalidInstance(format!(
                "rv {}: {m}",
                self.rv_id
            )))
        };
        for (name, v) in [
            ("gamma_pa", self.gamma_pa),
            ("gamma_rsu", self.gamma_rsu),
            ("rate_pv", self.rate_pv),
            ("rate_rsu", self.rate_rsu),
            ("task_bits", self.task_bits),
            ("alpha", self.alpha),
            ("price_unit_bits", self.price_unit_bits),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("t_max", self.t_max),
            ("pv_energy_per_bit", self.pv_energy_per_bit),
            ("rsu_energy_per_bit", self.rsu_energy_per_bit),
            ("consensus_energy_pv", self.consensus_energy_pv),
            ("consensus_energy_rsu", self.consensus_energy_rsu),
            ("xi_v", self.xi_v),
            ("xi_r", self.xi_r),
            ("tx_power_w", self.tx_power_w),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be non-negative"));
            }
        }
        Ok(())
    }

    /// Task size in price units.
    pub fn d_units(&self) -> f64 {
        self.task_bits / self.price_unit_bits
    }

    fn d_mb(&self) -> f64 {
        self.task_bits / MB_BITS
    }

    /// PV marginal compute cost per price unit.
    pub fn pv_unit_cost(&self) -> f64 {
        self.xi_v * self.pv_energy_per_bit * self.price_unit_bits
    }

    /// RSU marginal compute cost per price unit.
    pub fn rsu_unit_cost(&self) -> f64 {
        self.xi_r * self.rsu_energy_per_bit * self.price_unit_bits
    }

    /// RV transmission energy cost of sending the whole task to the PVs.
    pub fn pv_comm_cost(&self) -> f64 {
        self.xi_v * self.tx_power_w * self.d_mb() / self.rate_pv
    }

    /// RV transmission energy cost of sending the whole task to the RSUs.
    pub fn rsu_comm_cost(&self) -> f64 {
        self.xi_v * self.tx_power_w * self.d_mb() / self.rate_rsu
    }

    /// Marginal net cost difference between the PV and RSU routes.
    pub fn a_coefficient(&self, p_pa: f64, p_rsu: f64) -> f64 {
        let d = self.d_units();
        (d * p_pa + self.pv_comm_cost()) - (d * p_rsu + self.rsu_comm_cost())
    }

    fn split(&self, a: f64) -> Split {
        Split {
            alpha: self.alpha,
            t_max: self.t_max,
            gamma_p: self.gamma_pa,
            gamma_r: self.gamma_rsu,
            a,
        }
    }
}

/// `(T_pa, T_RSU)` for split `ε`.
pub fn completion_times(inst: &OffloadInstance, epsilon: f64) -> (f64, f64) {
    ((1.0 - epsilon) * inst.gamma_pa, epsilon * inst.gamma_rsu)
}

pub fn rv_utility(inst: &OffloadInstance, epsilon: f64, p_pa: f64, p_rsu: f64) -> f64 {
    let (tp, tr) = completion_times(inst, epsilon);
    let t = tp.max(tr);
    let d = inst.d_units();
    inst.alpha * (inst.t_max - t * t)
        - (1.0 - epsilon) * d * p_pa
        - epsilon * d * p_rsu
        - (epsilon * inst.rsu_comm_cost() + (1.0 - epsilon) * inst.pv_comm_cost())
}

pub fn pv_utility(inst: &OffloadInstance, epsilon: f64, p_pa: f64) -> f64 {
    let share = 1.0 - epsilon;
    share * inst.d_units() * p_pa - inst.xi_v * inst.pv_energy_per_bit * share * inst.task_bits
        + inst.consensus_sign.factor() * inst.xi_v * inst.consensus_energy_pv
}

pub fn rsu_utility(inst: &OffloadInstance, epsilon: f64, p_rsu: f64) -> f64 {
    inst.d_units() * epsilon * p_rsu
        - inst.xi_r * inst.rsu_energy_per_bit * epsilon * inst.task_bits
        + inst.consensus_sign.factor() * inst.xi_r * inst.consensus_energy_rsu
}

/// A two-target split problem: maximize
/// `α(T_max − max((1−ε)Γ_p, εΓ_r)²) + ε·A + const` over `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub alpha: f64,
    pub t_max: f64,
    pub gamma_p: f64,
    pub gamma_r: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonChoice {
    pub epsilon: f64,
    pub regime: Regime,
    /// `∂ε/∂A` at this point (zero when balanced or clamped).
    pub slope: f64,
    /// Set when `A` sits on a breakpoint or `ε` was clamped, i.e. where
    /// `ε(A)` is not differentiable.
    pub boundary: bool,
    pub deadline_met: bool,
}

impl Split {
    pub fn balance_point(&self) -> f64 {
        self.gamma_p / (self.gamma_p + self.gamma_r)
    }

    /// Breakpoints of `ε(A)`: clamp at 0, enter balance, leave balance,
    /// clamp at 1.
    pub fn breakpoints(&self) -> [f64; 4] {
        let (gp, gr, al) = (self.gamma_p, self.gamma_r, self.alpha);
        let g = gp * gr / (gp + gr);
        [
            -2.0 * al * gp * gp,
            -2.0 * al * g * gp,
            2.0 * al * g * gr,
            2.0 * al * gr * gr,
        ]
    }

    /// Deadline-feasible interval `[lo, hi]` of `ε`.
    pub fn feasible_interval(&self) -> (f64, f64) {
        let lo = (1.0 - self.t_max / self.gamma_p).max(0.0);
        let hi = (self.t_max / self.gamma_r).min(1.0);
        (lo, hi)
    }

    fn regime_at(&self, eps: f64, bal_tol: f64) -> Regime {
        let tp = (1.0 - eps) * self.gamma_p;
        let tr = eps * self.gamma_r;
        let m = tp.max(tr);
        if m == 0.0 || (tp - tr).abs() <= bal_tol * m {
            Regime::Balanced
        } else if tp > tr {
            Regime::PvBinding
        } else {
            Regime::RsuBinding
        }
    }

    pub fn optimum(&self, mode: DeadlineMode, bal_tol: f64) -> Result<EpsilonChoice, GameError> {
        let (gp, gr, al, a) = (self.gamma_p, self.gamma_r, self.alpha, self.a);
        let eb = self.balance_point();
        let e1 = 1.0 + a / (2.0 * al * gp * gp);
        let e2 = a / (2.0 * al * gr * gr);
        let (mut eps, mut slope) = if e1 <= eb {
            (e1, 1.0 / (2.0 * al * gp * gp))
        } else if e2 >= eb {
            (e2, 1.0 / (2.0 * al * gr * gr))
        } else {
            (eb, 0.0)
        };
        let mut clamped = false;
        if eps < 0.0 || eps > 1.0 {
            eps = eps.clamp(0.0, 1.0);
            clamped = true;
        }
        let (lo, hi) = self.feasible_interval();
        let deadline_met;
        match mode {
            DeadlineMode::Enforce => {
                if lo > hi {
                    return Err(GameError::Infeasible { lo, hi });
                }
                if eps < lo || eps > hi {
                    eps = eps.clamp(lo, hi);
                    clamped = true;
                }
                deadline_met = true;
            }
            DeadlineMode::Report => {
                deadline_met = eps >= lo && eps <= hi;
            }
        }
        if clamped {
            slope = 0.0;
        }
        let near = |x: f64, b: f64| (x - b).abs() <= 1e-12 * b.abs().max(x.abs()).max(1e-300);
        let boundary = clamped || self.breakpoints().iter().any(|&b| near(a, b));
        let regime = if slope == 0.0 && !clamped {
            Regime::Balanced
        } else {
            self.regime_at(eps, bal_tol)
        };
        Ok(EpsilonChoice {
            epsilon: eps,
            regime,
            slope,
            boundary,
            deadline_met,
        })
    }
}

/// Follower best response to prices `(p_pa, p_rsu)`.
pub fn optimal_epsilon(
    inst: &OffloadInstance,
    p_pa: f64,
    p_rsu: f64,
    params: &GameSolverParams,
) -> Result<EpsilonChoice, GameError> {
    inst.split(inst.a_coefficient(p_pa, p_rsu))
        .optimum(params.deadline, params.balance_rel_tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriceGradients {
    pub d_pv: f64,
    pub d_rsu: f64,
    pub d_eps_d_p_pa: f64,
    pub d_eps_d_p_rsu: f64,
    pub choice: EpsilonChoice,
}

/// Analytic `∂U_pa/∂p_pa` and `∂U_RSU/∂p_RSU` with the follower's response
/// substituted. `choice.boundary` flags points where `ε*` is not
/// differentiable and the values are one-sided at best.
pub fn price_gradients(
    inst: &OffloadInstance,
    p_pa: f64,
    p_rsu: f64,
    params: &GameSolverParams,
) -> Result<PriceGradients, GameError> {
    let choice = optimal_epsilon(inst, p_pa, p_rsu, params)?;
    let d = inst.d_units();
    let de_pa = d * choice.slope;
    let de_rsu = -d * choice.slope;
    let eps = choice.epsilon;
    let d_pv = (1.0 - eps) * d - d * (p_pa - inst.pv_unit_cost()) * de_pa;
    let d_rsu = eps * d + d * (p_rsu - inst.rsu_unit_cost()) * de_rsu;
    Ok(PriceGradients {
        d_pv,
        d_rsu,
        d_eps_d_p_pa: de_pa,
        d_eps_d_p_rsu: de_rsu,
        choice,
    })
}

/// The offset term of the balanced-regime price maps.
pub fn balanced_m(inst: &OffloadInstance) -> f64 {
    let ratio = inst.gamma_rsu / (inst.gamma_rsu + inst.gamma_pa);
    inst.xi_v * (ratio * inst.task_bits * inst.pv_m_sum + inst.consensus_energy_pv)
        - inst.xi_v * (ratio * inst.task_bits * inst.rsu_m_sum + inst.consensus_energy_rsu)
}

/// Balanced regime: RSU price given the PV price.
pub fn rsu_price_from_pv(inst: &OffloadInstance, p_pa: f64) -> f64 {
    let (gp, gr) = (inst.gamma_pa, inst.gamma_rsu);
    p_pa * gr / gp - (gr + gp) / (inst.d_units() * gp) * balanced_m(inst)
}

/// Balanced regime: PV price given the RSU price (inverse of
/// [`rsu_price_from_pv`]).
pub fn pv_price_from_rsu(inst: &OffloadInstance, p_rsu: f64) -> f64 {
    let (gp, gr) = (inst.gamma_pa, inst.gamma_rsu);
    p_rsu * gp / gr + (gr + gp) / (inst.d_units() * gr) * balanced_m(inst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedForm {
    pub p_pa: f64,
    pub p_rsu: f64,
    pub clamped: bool,
}

/// Balanced-regime price pair anchored at `p_pa`. The two maps are mutual
/// inverses, so the pair is a fixed point of both.
pub fn closed_form_equilibrium(inst: &OffloadInstance, p_pa: f64, floor: f64) -> ClosedForm {
    let mut pp = p_pa;
    let mut clamped = false;
    if pp < floor {
        pp = floor;
        clamped = true;
    }
    let mut pr = rsu_price_from_pv(inst, pp);
    if pr < floor {
        pr = floor;
        pp = pv_price_from_rsu(inst, pr).max(floor);
        clamped = true;
    }
    ClosedForm {
        p_pa: pp,
        p_rsu: pr,
        clamped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffloadSolution {
    pub rv_id: u32,
    pub epsilon: f64,
    pub p_pa: f64,
    pub p_rsu: f64,
    pub u_rv: f64,
    pub u_pv: f64,
    pub u_rsu: f64,
    pub regime: Regime,
    pub iterations: u64,
    pub converged: bool,
    pub deadline_met: bool,
    pub t_pa: f64,
    pub t_rsu: f64,
}

impl OffloadSolution {
    /// Evaluate all utilities at a given price pair with the follower's best
    /// response.
    pub fn at_prices(
        inst: &OffloadInstance,
        p_pa: f64,
        p_rsu: f64,
        params: &GameSolverParams,
    ) -> Result<Self, GameError> {
        let c = optimal_epsilon(inst, p_pa, p_rsu, params)?;
        let (t_pa, t_rsu) = completion_times(inst, c.epsilon);
        Ok(Self {
            rv_id: inst.rv_id,
            epsilon: c.epsilon,
            p_pa,
            p_rsu,
            u_rv: rv_utility(inst, c.epsilon, p_pa, p_rsu),
            u_pv: pv_utility(inst, c.epsilon, p_pa),
            u_rsu: rsu_utility(inst, c.epsilon, p_rsu),
            regime: c.regime,
            iterations: 0,
            converged: true,
            deadline_met: c.deadline_met,
            t_pa,
            t_rsu,
        })
    }
}

fn rel_sq_change(new: f64, old: f64) -> f64 {
    let d = new - old;
    if old == 0.0 {
        d * d
    } else {
        d * d / (old * old)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Pv,
    Rsu,
}

/// One provider's inner price loop. Returns the new price and the number of
/// updates, or `None` when the iteration budget ran out.
fn price_loop(
    inst: &OffloadInstance,
    params: &GameSolverParams,
    side: Side,
    pp: &mut f64,
    pr: &mut f64,
    budget: &mut u64,
) -> Result<Option<u64>, GameError> {
    let (mu, omega) = match side {
        Side::Pv => (params.lr_mu1, params.shrink_omega1),
        Side::Rsu => (params.lr_mu2, params.shrink_omega2),
    };
    let d = inst.d_units();
    let mut steps = 0;
    loop {
        if *budget == 0 {
            return Ok(None);
        }
        *budget -= 1;
        steps += 1;
        let g = price_gradients(inst, *pp, *pr, params)?;
        let eps = g.choice.epsilon;
        let (p, u) = match side {
            Side::Pv => (*pp, pv_utility(inst, eps, *pp)),
            Side::Rsu => (*pr, rsu_utility(inst, eps, *pr)),
        };
        let next = if g.choice.regime != Regime::Balanced || g.choice.boundary {
            if u <= 0.0 {
                p / omega
            } else {
                let grad = if g.choice.boundary {
                    one_sided_gradient(inst, params, side, *pp, *pr)?
                } else {
                    match side {
                        Side::Pv => g.d_pv,
                        Side::Rsu => g.d_rsu,
                    }
                };
                // Scale by the curvature of the regime's quadratic so one
                // unit step is a Newton step.
                let gamma = match g.choice.regime {
                    Regime::RsuBinding => inst.gamma_rsu,
                    _ => inst.gamma_pa,
                };
                let s = d / (2.0 * inst.alpha * gamma * gamma);
                p + mu * grad / (2.0 * d * s)
            }
        } else if u < 0.0 {
            p / omega
        } else {
            match side {
                Side::Pv => pv_price_from_rsu(inst, *pr),
                Side::Rsu => rsu_price_from_pv(inst, *pp),
            }
        };
        let next = next.max(params.price_floor);
        let change = rel_sq_change(next, p);
        match side {
            Side::Pv => *pp = next,
            Side::Rsu => *pr = next,
        }
        if change < params.tol_theta {
            return Ok(Some(steps));
        }
    }
}

fn one_sided_gradient(
    inst: &OffloadInstance,
    params: &GameSolverParams,
    side: Side,
    pp: f64,
    pr: f64,
) -> Result<f64, GameError> {
    let h = 1e-7 * pp.max(pr).max(1.0);
    Ok(match side {
        Side::Pv => {
            let e0 = optimal_epsilon(inst, pp, pr, params)?.epsilon;
            let e1 = optimal_epsilon(inst, pp + h, pr, params)?.epsilon;
            (pv_utility(inst, e1, pp + h) - pv_utility(inst, e0, pp)) / h
        }
        Side::Rsu => {
            let e0 = optimal_epsilon(inst, pp, pr, params)?.epsilon;
            let e1 = optimal_epsilon(inst, pp, pr + h, params)?.epsilon;
            (rsu_utility(inst, e1, pr + h) - rsu_utility(inst, e0, pr)) / h
        }
    })
}

/// Equilibrium search from the configured initial point.
pub fn solve_stackelberg(
    inst: &OffloadInstance,
    params: &GameSolverParams,
) -> Result<OffloadSolution, GameError> {
    solve_stackelberg_from(
        inst,
        params,
        params.init_epsilon,
        params.init_p_pa,
        params.init_p_rsu,
    )
}

/// Equilibrium search from an explicit initial point.
pub fn solve_stackelberg_from(
    inst: &OffloadInstance,
    params: &GameSolverParams,
    init_epsilon: f64,
    init_p_pa: f64,
    init_p_rsu: f64,
) -> Result<OffloadSolution, GameError> {
    params.validate()?;
    inst.validate()?;
    let mut eps = init_epsilon;
    let mut pp = init_p_pa.max(params.price_floor);
    let mut pr = init_p_rsu.max(params.price_floor);
    let mut budget = params.max_iters;
    let mut converged = false;
    loop {
        let before = (pp, pr);
        let a = price_loop(inst, params, Side::Pv, &mut pp, &mut pr, &mut budget)?;
        let b = price_loop(inst, params, Side::Rsu, &mut pp, &mut pr, &mut budget)?;
        let (Some(_), Some(_)) = (a, b) else {
            break;
        };
        let next = optimal_epsilon(inst, pp, pr, params)?.epsilon;
        let eps_change = rel_sq_change(next, eps);
        eps = next;
        let settled = rel_sq_change(pp, before.0) < params.tol_theta
            && rel_sq_change(pr, before.1) < params.tol_theta;
        if eps_change < params.tol_theta && settled {
            converged = true;
            break;
        }
    }
    let mut sol = OffloadSolution::at_prices(inst, pp, pr, params)?;
    sol.iterations = params.max_iters - budget;
    sol.converged = converged;
    Ok(sol)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn symmetric() -> OffloadInstance {
        OffloadInstance {
            rv_id: 1,
            task_bits: 20.0 * MB_BITS,
            t_max: 0.5,
            alpha: 1.0,
            gamma_pa: 0.3,
            gamma_rsu: 0.3,
            rate_pv: 150.0,
            rate_rsu: 150.0,
            pv_energy_per_bit: 1e-9,
            rsu_energy_per_bit: 1e-9,
            pv_m_sum: 1e-9,
            rsu_m_sum: 1e-9,
            consensus_energy_pv: 0.1,
            consensus_energy_rsu: 0.1,
            xi_v: 0.05,
            xi_r: 0.05,
            tx_power_w: 0.28,
            price_unit_bits: GB_BITS,
            consensus_sign: ConsensusTermSign::MinusAsDefined,
        }
    }

    fn report() -> GameSolverParams {
        GameSolverParams {
            deadline: DeadlineMode::Report,
            ..GameSolverParams::default()
        }
    }

    #[test]
    fn completion_time_edges() {
        let i = symmetric();
        assert_eq!(completion_times(&i, 1.0).0, 0.0);
        assert_eq!(completion_times(&i, 0.0).1, 0.0);
        let (a, b) = completion_times(&i, 0.5);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_everything_gives_zero_utility() {
        let mut i = symmetric();
        i.alpha = 1e-300;
        i.t_max = 0.0;
        i.xi_v = 0.0;
        for e in [0.0, 0.3, 1.0] {
            assert!(rv_utility(&i, e, 0.0, 0.0).abs() < 1e-290);
        }
    }

    #[test]
    fn symmetric_split_is_half() {
        let i = symmetric();
        let c = optimal_epsilon(&i, 0.7, 0.7, &report()).unwrap();
        assert_eq!(c.epsilon, 0.5);
        assert_eq!(c.regime, Regime::Balanced);
    }

    #[test]
    fn expensive_rsu_pushes_work_to_pvs() {
        let i = symmetric();
        let c = optimal_epsilon(&i, 0.5, 40.0, &report()).unwrap();
        assert!(c.epsilon < 0.5);
        assert_eq!(c.regime, Regime::PvBinding);
    }

    #[test]
    fn deadline_enforcement() {
        let mut i = symmetric();
        i.t_max = 0.1;
        let p = GameSolverParams::default();
        assert!(matches!(
            optimal_epsilon(&i, 1.0, 1.0, &p),
            Err(GameError::Infeasible { .. })
        ));
        i.t_max = 0.2;
        let c = optimal_epsilon(&i, 1.0, 40.0, &p).unwrap();
        assert!((c.epsilon - (1.0 - 0.2 / 0.3)).abs() < 1e-15);
        assert!(c.boundary);
    }

    #[test]
    fn no_energy_pv_utility_is_payment() {
        let mut i = symmetric();
        i.xi_v = 0.0;
        assert_eq!(pv_utility(&i, 0.25, 2.0), 0.75 * i.d_units() * 2.0);
        assert_eq!(
            rsu_utility(&i, 1.0, 3.0) + i.xi_r * i.consensus_energy_rsu,
            i.d_units() * 3.0 - i.xi_r * 1e-9 * i.task_bits
        );
        assert_eq!(pv_utility(&symmetric(), 1.0, 5.0), -0.05 * 0.1);
    }

    #[test]
    fn balanced_maps_are_inverse() {
        let mut i = symmetric();
        i.gamma_rsu = 0.6;
        i.consensus_energy_pv = 0.0;
        i.consensus_energy_rsu = 0.0;
        i.pv_m_sum = 0.0;
        i.rsu_m_sum = 0.0;
        assert_eq!(rsu_price_from_pv(&i, 1.5), 3.0);
        let mut j = symmetric();
        j.pv_m_sum = 3e-9;
        let pr = rsu_price_from_pv(&j, 2.0);
        assert!((pv_price_from_rsu(&j, pr) - 2.0).abs() < 1e-12);
        let s = symmetric();
        assert_eq!(rsu_price_from_pv(&s, 0.8), 0.8);
    }

    #[test]
    fn symmetric_solver_mirrors_prices() {
        let i = symmetric();
        let s = solve_stackelberg(&i, &report()).unwrap();
        assert!(s.converged);
        assert!((s.epsilon - 0.5).abs() < 1e-12);
        assert!((s.p_pa - s.p_rsu).abs() < 1e-9);
    }
}
