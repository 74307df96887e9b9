//! Glue between a scenario and the game: pick the computing set and the
//! consensus committee, price consensus per transaction, build one
//! [`OffloadInstance`] per requesting vehicle, and evaluate the offloading
//! schemes (the equilibrium scheme and its baselines).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelError};
use crate::consensus::{
    consensus_compute_energy, consensus_tx_energy, pbft_block_energy, ChainCosts, Committee,
    ConsensusError, ConsensusKind,
};
use crate::game::{
    self, GameError, GameSolverParams, OffloadInstance, OffloadSolution, Regime, Split,
};
use crate::scenario::{ParkedVehicle, RequestingVehicle, Rsu, ScenarioConfig, MB_BITS};
use crate::selection::{self, ConsensusSet, PvGraph, SelectionError, Strategy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OffloadError {
    #[error("no parked vehicle is likely to stay long enough to compute")]
    EmptyComputingSet,
    #[error("RV {rv} and provider {provider}: {source}")]
    Channel {
        rv: u32,
        provider: u32,
        source: ChannelError,
    },
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Knobs an experiment may turn when building a market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketOptions {
    pub strategy: Strategy,
    /// Force the PV committee to this size (grown or shrunk by quality).
    pub committee_size: Option<usize>,
    pub consensus: ConsensusKind,
    /// Override every RV→PV rate (MB/s).
    pub rate_pv: Option<f64>,
    /// Override every RV→RSU rate (MB/s).
    pub rate_rsu: Option<f64>,
    pub selection_seed: u64,
}

impl Default for MarketOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Cds,
            committee_size: None,
            consensus: ConsensusKind::Hotstuff,
            rate_pv: None,
            rate_rsu: None,
            selection_seed: 0,
        }
    }
}

/// Per-block consensus energy of one chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockEnergy {
    pub compute_j: f64,
    pub tx_j: f64,
    pub tx_per_block: u64,
}

impl BlockEnergy {
    pub fn block_j(&self) -> f64 {
        self.compute_j + self.tx_j
    }

    /// Energy attributed to one transaction.
    pub fn per_tx_j(&self) -> f64 {
        self.block_j() / self.tx_per_block as f64
    }

    /// Energy attributed to `v` transactions.
    pub fn for_txs(&self, v: usize) -> f64 {
        v as f64 / self.tx_per_block as f64 * self.block_j()
    }

    fn compute(
        kind: ConsensusKind,
        m: &Committee,
        c: &ChainCosts,
        cfg: &ScenarioConfig,
    ) -> Result<Self, ConsensusError> {
        let (compute_j, tx_j) = match kind {
            ConsensusKind::Hotstuff => (
                consensus_compute_energy(m, c)?,
                consensus_tx_energy(m, c, &cfg.channel)?,
            ),
            ConsensusKind::Pbft => pbft_block_energy(m, c, &cfg.channel)?,
        };
        Ok(Self {
            compute_j,
            tx_j,
            tx_per_block: c.tx_per_block,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Market {
    pub computing_pvs: Vec<ParkedVehicle>,
    pub graph: PvGraph,
    pub committee: ConsensusSet,
    pub pv_committee: Committee,
    pub rsu_committee: Committee,
    pub pv_chain: BlockEnergy,
    pub rsu_chain: BlockEnergy,
    pub instances: Vec<OffloadInstance>,
}

pub fn build_market(cfg: &ScenarioConfig, opts: &MarketOptions) -> Result<Market, OffloadError> {
    let mut sel = cfg.selection;
    sel.strategy = opts.strategy;
    let pcs = selection::filter_by_stay(&cfg.pvs, &cfg.parking, &sel)?;
    if pcs.is_empty() {
        return Err(OffloadError::EmptyComputingSet);
    }
    let graph = selection::build_graph(&pcs, &cfg.channel, &sel)?;
    let cds = selection::select_cds(&graph)?;
    let committee = match (opts.strategy, opts.committee_size) {
        (Strategy::Cds, None) => cds,
        (Strategy::Cds, Some(n)) => selection::resize_committee(&graph, &cds, n)?,
        (s, n) => {
            let n = n.unwrap_or(cds.len()).min(graph.len());
            selection::select_baseline(&graph, s, n, opts.selection_seed)?
        }
    };
    let pv_committee = Committee::from_set(&committee, &graph)?;
    let rsu_committee = Committee::from_rsus(&cfg.rsus)?;
    let pv_chain = BlockEnergy::compute(
        opts.consensus,
        &pv_committee,
        &ChainCosts::vehicle(&cfg.costs),
        cfg,
    )?;
    let rsu_chain = BlockEnergy::compute(
        opts.consensus,
        &rsu_committee,
        &ChainCosts::rsu(&cfg.costs),
        cfg,
    )?;
    let instances = cfg
        .rvs
        .iter()
        .map(|rv| {
            build_instance(
                rv,
                &pcs,
                &cfg.rsus,
                cfg,
                pv_chain.per_tx_j(),
                rsu_chain.per_tx_j(),
                opts,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Market {
        computing_pvs: pcs,
        graph,
        committee,
        pv_committee,
        rsu_committee,
        pv_chain,
        rsu_chain,
        instances,
    })
}

struct Provider {
    id: u32,
    position: crate::scenario::Point,
    cpu_freq_hz: f64,
    cycles_per_bit: f64,
}

/// Γ (slowest provider's seconds per unit split) and the rate to it.
fn bottleneck(
    rv: &RequestingVehicle,
    providers: &[Provider],
    cfg: &ScenarioConfig,
    rate_override: Option<f64>,
) -> Result<(f64, f64), OffloadError> {
    let total_f: f64 = providers.iter().map(|p| p.cpu_freq_hz).sum();
    let d_mb = rv.task_size_bits / MB_BITS;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for p in providers {
        let rate = match rate_override {
            Some(r) => r,
            None => channel::rate(rv.position, p.position, &cfg.channel).map_err(|source| {
                OffloadError::Channel {
                    rv: rv.id,
                    provider: p.id,
                    source,
                }
            })?,
        };
        let phi = p.cpu_freq_hz / total_f;
        let g = rv.task_size_bits * phi * p.cycles_per_bit / p.cpu_freq_hz + d_mb / rate;
        if g > best.0 {
            best = (g, rate);
        }
    }
    Ok(best)
}

/// Energy aggregates `(Σ κ f² φ C, Σ κ φ f²)` over a provider set.
fn energy_sums(providers: &[Provider], kappa: f64) -> (f64, f64) {
    let total_f: f64 = providers.iter().map(|p| p.cpu_freq_hz).sum();
    providers.iter().fold((0.0, 0.0), |(e, m), p| {
        let phi = p.cpu_freq_hz / total_f;
        let f2 = p.cpu_freq_hz * p.cpu_freq_hz;
        (
            e + kappa * f2 * phi * p.cycles_per_bit,
            m + kappa * phi * f2,
        )
    })
}

pub fn build_instance(
    rv: &RequestingVehicle,
    pcs: &[ParkedVehicle],
    rsus: &[Rsu],
    cfg: &ScenarioConfig,
    consensus_energy_pv: f64,
    consensus_energy_rsu: f64,
    opts: &MarketOptions,
) -> Result<OffloadInstance, OffloadError> {
    let pvs: Vec<Provider> = pcs
        .iter()
        .map(|p| Provider {
            id: p.id,
            position: p.position,
            cpu_freq_hz: p.cpu_freq_hz,
            cycles_per_bit: p.cycles_per_bit,
        })
        .collect();
    let rs: Vec<Provider> = rsus
        .iter()
        .map(|r| Provider {
            id: r.id,
            position: r.position,
            cpu_freq_hz: r.cpu_freq_hz,
            cycles_per_bit: r.cycles_per_bit,
        })
        .collect();
    let (gamma_pa, rate_pv) = bottleneck(rv, &pvs, cfg, opts.rate_pv)?;
    let (gamma_rsu, rate_rsu) = bottleneck(rv, &rs, cfg, opts.rate_rsu)?;
    let (pv_e, pv_m) = energy_sums(&pvs, cfg.costs.kappa_v);
    let (rsu_e, rsu_m) = energy_sums(&rs, cfg.costs.kappa_r);
    Ok(OffloadInstance {
        rv_id: rv.id,
        task_bits: rv.task_size_bits,
        t_max: rv.max_tolerance_s,
        alpha: rv.alpha,
        gamma_pa,
        gamma_rsu,
        rate_pv,
        rate_rsu,
        pv_energy_per_bit: pv_e,
        rsu_energy_per_bit: rsu_e,
        pv_m_sum: pv_m,
        rsu_m_sum: rsu_m,
        consensus_energy_pv,
        consensus_energy_rsu,
        xi_v: cfg.costs.xi_v,
        xi_r: cfg.costs.xi_r,
        tx_power_w: cfg.channel.tx_power_w,
        price_unit_bits: cfg.game.price_unit_bits(),
        consensus_sign: cfg.game.consensus_term_sign,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffloadScheme {
    /// Split between PVs and RSUs at the price equilibrium.
    Bpvec,
    /// Split between on-board execution and the RSUs.
    RsuAndLocal,
    RsuOnly,
    PvOnly,
    LocalOnly,
    /// PV/RSU split at fixed prices (no price game).
    FixedPrice {
        p_pa: f64,
        p_rsu: f64,
    },
}

impl OffloadScheme {
    pub fn name(&self) -> String {
        match self {
            OffloadScheme::Bpvec => "bpvec".into(),
            OffloadScheme::RsuAndLocal => "rsu_and_local".into(),
            OffloadScheme::RsuOnly => "rsu_only".into(),
            OffloadScheme::PvOnly => "pv_only".into(),
            OffloadScheme::LocalOnly => "local_only".into(),
            OffloadScheme::FixedPrice { p_pa, p_rsu } => format!("fixed_price_{p_pa}_{p_rsu}"),
        }
    }
}

/// The RV's own computer, used by the local-execution baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalRv {
    pub cpu_freq_hz: f64,
    pub cycles_per_bit: f64,
    pub kappa: f64,
}

impl LocalRv {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            cpu_freq_hz: cfg.local.cpu_freq_hz,
            cycles_per_bit: cfg.local.cycles_per_bit,
            kappa: cfg.costs.kappa_v,
        }
    }

    /// Seconds to run the whole task locally.
    pub fn gamma(&self, inst: &OffloadInstance) -> f64 {
        inst.task_bits * self.cycles_per_bit / self.cpu_freq_hz
    }

    /// Energy cost `ξ_v κ f² C D` of running the whole task locally.
    pub fn energy_cost(&self, inst: &OffloadInstance) -> f64 {
        inst.xi_v * self.kappa * self.cpu_freq_hz.powi(2) * self.cycles_per_bit * inst.task_bits
    }
}

/// What one RV experiences under one scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchemeOutcome {
    /// Share sent to the RSUs.
    pub epsilon: f64,
    /// Share executed on board.
    pub local_share: f64,
    pub p_pa: f64,
    pub p_rsu: f64,
    pub u_rv: f64,
    pub u_pv: f64,
    pub u_rsu: f64,
    pub regime: Option<Regime>,
    pub converged: bool,
    pub deadline_met: bool,
    pub iterations: u64,
}

impl SchemeOutcome {
    fn from_solution(s: &OffloadSolution) -> Self {
        Self {
            epsilon: s.epsilon,
            local_share: 0.0,
            p_pa: s.p_pa,
            p_rsu: s.p_rsu,
            u_rv: s.u_rv,
            u_pv: s.u_pv,
            u_rsu: s.u_rsu,
            regime: Some(s.regime),
            converged: s.converged,
            deadline_met: s.deadline_met,
            iterations: s.iterations,
        }
    }
}

/// Utilities of a baseline scheme at prices `(p_pa, p_rsu)`. Providers a
/// scheme does not use get utility 0 (no payment, no work, no ledger entry).
pub fn baseline_scheme_utilities(
    scheme: OffloadScheme,
    inst: &OffloadInstance,
    local: &LocalRv,
    p_pa: f64,
    p_rsu: f64,
    params: &GameSolverParams,
) -> Result<SchemeOutcome, GameError> {
    let fixed = |eps: f64| -> SchemeOutcome {
        let (tp, tr) = game::completion_times(inst, eps);
        let t = tp.max(tr);
        SchemeOutcome {
            epsilon: eps,
            local_share: 0.0,
            p_pa,
            p_rsu,
            u_rv: game::rv_utility(inst, eps, p_pa, p_rsu),
            u_pv: if eps < 1.0 {
                game::pv_utility(inst, eps, p_pa)
            } else {
                0.0
            },
            u_rsu: if eps > 0.0 {
                game::rsu_utility(inst, eps, p_rsu)
            } else {
                0.0
            },
            regime: None,
            converged: true,
            deadline_met: t <= inst.t_max,
            iterations: 0,
        }
    };
    Ok(match scheme {
        OffloadScheme::Bpvec | OffloadScheme::FixedPrice { .. } => {
            SchemeOutcome::from_solution(&OffloadSolution::at_prices(inst, p_pa, p_rsu, params)?)
        }
        OffloadScheme::RsuOnly => fixed(1.0),
        OffloadScheme::PvOnly => fixed(0.0),
        OffloadScheme::LocalOnly => {
            let g = local.gamma(inst);
            SchemeOutcome {
                epsilon: 0.0,
                local_share: 1.0,
                p_pa,
                p_rsu,
                u_rv: inst.alpha * (inst.t_max - g * g) - local.energy_cost(inst),
                u_pv: 0.0,
                u_rsu: 0.0,
                regime: None,
                converged: true,
                deadline_met: g <= inst.t_max,
                iterations: 0,
            }
        }
        OffloadScheme::RsuAndLocal => {
            let g_loc = local.gamma(inst);
            let e_loc = local.energy_cost(inst);
            let rsu_cost = inst.d_units() * p_rsu + inst.rsu_comm_cost();
            let split = Split {
                alpha: inst.alpha,
                t_max: inst.t_max,
                gamma_p: g_loc,
                gamma_r: inst.gamma_rsu,
                a: e_loc - rsu_cost,
            };
            let c = split.optimum(params.deadline, params.balance_rel_tol)?;
            let eps = c.epsilon;
            let t = ((1.0 - eps) * g_loc).max(eps * inst.gamma_rsu);
            SchemeOutcome {
                epsilon: eps,
                local_share: 1.0 - eps,
                p_pa,
                p_rsu,
                u_rv: inst.alpha * (inst.t_max - t * t) - (1.0 - eps) * e_loc - eps * rsu_cost,
                u_pv: 0.0,
                u_rsu: if eps > 0.0 {
                    game::rsu_utility(inst, eps, p_rsu)
                } else {
                    0.0
                },
                regime: Some(c.regime),
                converged: true,
                deadline_met: c.deadline_met,
                iterations: 0,
            }
        }
    })
}

/// Evaluate a scheme for one RV. Schemes without their own prices use the
/// price equilibrium.
pub fn evaluate_scheme(
    scheme: OffloadScheme,
    inst: &OffloadInstance,
    local: &LocalRv,
    params: &GameSolverParams,
) -> Result<SchemeOutcome, GameError> {
    match scheme {
        OffloadScheme::Bpvec => {
            let s = game::solve_stackelberg(inst, params)?;
            Ok(SchemeOutcome::from_solution(&s))
        }
        OffloadScheme::FixedPrice { p_pa, p_rsu } => {
            baseline_scheme_utilities(scheme, inst, local, p_pa, p_rsu, params)
        }
        _ => {
            let s = game::solve_stackelberg(inst, params)?;
            let mut out = baseline_scheme_utilities(scheme, inst, local, s.p_pa, s.p_rsu, params)?;
            out.converged = s.converged;
            out.iterations = s.iterations;
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::tests::symmetric;
    use crate::game::DeadlineMode;

    fn local() -> LocalRv {
        LocalRv {
            cpu_freq_hz: 0.8e9,
            cycles_per_bit: 24.0,
            kappa: 1e-27,
        }
    }

    fn report() -> GameSolverParams {
        GameSolverParams {
            deadline: DeadlineMode::Report,
            ..GameSolverParams::default()
        }
    }

    #[test]
    fn pv_only_has_no_rsu_payment() {
        let o = baseline_scheme_utilities(
            OffloadScheme::PvOnly,
            &symmetric(),
            &local(),
            1.0,
            2.0,
            &report(),
        )
        .unwrap();
        assert_eq!(o.u_rsu, 0.0);
        assert_eq!(o.epsilon, 0.0);
    }

    #[test]
    fn fast_local_cpu_approaches_alpha_tmax() {
        let mut l = local();
        l.cpu_freq_hz = 1e15;
        l.kappa = 0.0;
        let i = symmetric();
        let o = baseline_scheme_utilities(OffloadScheme::LocalOnly, &i, &l, 1.0, 1.0, &report())
            .unwrap();
        assert!((o.u_rv - i.alpha * i.t_max).abs() < 1e-9);
    }

    #[test]
    fn split_schemes_dominate_their_corners() {
        let i = symmetric();
        let p = report();
        let l = local();
        let b = evaluate_scheme(OffloadScheme::Bpvec, &i, &l, &p).unwrap();
        for s in [OffloadScheme::RsuOnly, OffloadScheme::PvOnly] {
            let o = evaluate_scheme(s, &i, &l, &p).unwrap();
            assert!(b.u_rv >= o.u_rv - 1e-12);
        }
        let rl = evaluate_scheme(OffloadScheme::RsuAndLocal, &i, &l, &p).unwrap();
        let ro = evaluate_scheme(OffloadScheme::RsuOnly, &i, &l, &p).unwrap();
        let lo = evaluate_scheme(OffloadScheme::LocalOnly, &i, &l, &p).unwrap();
        assert!(rl.u_rv >= ro.u_rv - 1e-12);
        assert!(rl.u_rv >= lo.u_rv - 1e-12);
    }
}
