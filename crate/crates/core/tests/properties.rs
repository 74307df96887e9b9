//! Property tests for the invariants each module promises.

use proptest::prelude::*;

use bpvec_core::channel;
use bpvec_core::consensus::{consensus_total_energy, pbft_baseline_energy, ChainCosts, Committee};
use bpvec_core::game::{
    completion_times, optimal_epsilon, rv_utility, ConsensusTermSign, DeadlineMode,
    GameSolverParams, OffloadInstance,
};
use bpvec_core::parking::{
    residence_cdf, stay_probability, GammaArgMode, HourMixture, ParkingMixtureTable, StayQuery,
};
use bpvec_core::scenario::{
    compute_capacity_shares, default_scenario, parse_scenario, save_scenario,
    synthesize_population, ChannelParams, ConsensusCostParams, GenerationParams, Point,
    ScenarioConfig, GB_BITS, MB_BITS,
};
use bpvec_core::selection::{self, SelectionParams};
use bpvec_core::special;

fn mixture() -> impl Strategy<Value = HourMixture> {
    (
        0.5..6.0f64,
        0.2..4.0f64,
        0.5..6.0f64,
        0.2..4.0f64,
        0.0..1.0f64,
    )
        .prop_map(|(kappa_s, theta_s_h, kappa_l, theta_l_h, d1)| HourMixture {
            kappa_s,
            theta_s_h,
            kappa_l,
            theta_l_h,
            d1,
            d2: 1.0 - d1,
        })
}

fn instance() -> impl Strategy<Value = OffloadInstance> {
    (
        (5.0..40.0f64, 0.05..0.5f64, 0.1..3.0f64),
        (0.05..0.8f64, 0.05..0.8f64, 20.0..250.0f64, 20.0..250.0f64),
        (0.0..5.0f64, 0.0..5.0f64),
    )
        .prop_map(
            |((mb, t_max, alpha), (gp, gr, rp, rr), (cp, cr))| OffloadInstance {
                rv_id: 1,
                task_bits: mb * MB_BITS,
                t_max,
                alpha,
                gamma_pa: gp,
                gamma_rsu: gr,
                rate_pv: rp,
                rate_rsu: rr,
                pv_energy_per_bit: cp / (1e-3 * GB_BITS),
                rsu_energy_per_bit: cr / (1e-3 * GB_BITS),
                pv_m_sum: 1e-9,
                rsu_m_sum: 1e-9,
                consensus_energy_pv: 0.1,
                consensus_energy_rsu: 0.1,
                xi_v: 1e-3,
                xi_r: 1e-3,
                tx_power_w: 0.28,
                price_unit_bits: GB_BITS,
                consensus_sign: ConsensusTermSign::MinusAsDefined,
            },
        )
}

fn random_pvs(n: usize, side: f64, seed: u64) -> Vec<bpvec_core::scenario::ParkedVehicle> {
    let gen = GenerationParams::default();
    let mut s = seed;
    (0..n)
        .map(|i| {
            let mut p = gen.sample_pv(seed, i, i as u32 + 1);
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let x = (s >> 11) as f64 / (1u64 << 53) as f64 * side;
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let y = (s >> 11) as f64 / (1u64 << 53) as f64 * side;
            p.position = Point::new(x, y);
            p
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenario_round_trips(n_pv in 1usize..12, n_rsu in 1usize..5, n_rv in 1usize..8, seed in any::<u64>()) {
        let cfg = ScenarioConfig::synthetic(n_pv, n_rsu, n_rv, seed);
        let text = save_scenario(&cfg).unwrap();
        let back = parse_scenario(&text).unwrap();
        prop_assert_eq!(back.config_hash(), cfg.config_hash());
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn population_is_prefix_stable(seed in any::<u64>(), n in 1usize..10) {
        let gen = GenerationParams::default();
        let small = synthesize_population(&gen, seed, n, 1, 1);
        let large = synthesize_population(&gen, seed, n + 5, 3, 4);
        prop_assert_eq!(&small.pvs[..], &large.pvs[..n]);
    }

    #[test]
    fn capacity_shares_sum_to_one(n_pv in 1usize..30, n_rsu in 1usize..10, seed in any::<u64>()) {
        let cfg = ScenarioConfig::synthetic(n_pv, n_rsu, 1, seed);
        let (a, b) = compute_capacity_shares(&cfg.pvs, &cfg.rsus).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().chain(&b).all(|&s| s > 0.0 && s <= 1.0));
    }

    #[test]
    fn rate_decreases_with_distance(d1 in 1.0..500.0f64, extra in 0.1..500.0f64) {
        let ch = ChannelParams::default();
        let near = channel::rate(Point::new(0.0, 0.0), Point::new(d1, 0.0), &ch).unwrap();
        let far = channel::rate(Point::new(0.0, 0.0), Point::new(d1 + extra, 0.0), &ch).unwrap();
        prop_assert!(far < near);
        prop_assert!(far > 0.0);
    }

    #[test]
    fn residence_cdf_is_a_cdf(m in mixture(), a in 0.0..40_000.0f64, b in 0.0..40_000.0f64) {
        let tbl = ParkingMixtureTable::uniform(m, GammaArgMode::ThetaPowKappa);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let fl = residence_cdf(lo, 9, &tbl).unwrap();
        let fh = residence_cdf(hi, 9, &tbl).unwrap();
        prop_assert!((0.0..=1.0).contains(&fl) && (0.0..=1.0).contains(&fh));
        prop_assert!(fl <= fh + 1e-15);
    }

    #[test]
    fn stay_probability_is_monotone(m in mixture(), t in 0.0..20_000.0f64, a in 0.0..20_000.0f64, b in 0.0..20_000.0f64) {
        let tbl = ParkingMixtureTable::uniform(m, GammaArgMode::ThetaPowKappa);
        let q = |tau: f64| stay_probability(&StayQuery { parked_so_far_s: t, horizon_s: tau, arrival_hour: 14 }, &tbl).unwrap().probability;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(q(hi) <= q(lo) + 1e-15);
        prop_assert_eq!(q(0.0), 1.0);
    }

    #[test]
    fn incomplete_gammas_are_complementary(k in 0.1..20.0f64, x in 0.0..60.0f64) {
        let p = special::regularized_lower_gamma(k, x).unwrap();
        let q = special::regularized_upper_gamma(k, x).unwrap();
        prop_assert!((p + q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cds_is_dominating_and_connected(n in 2usize..35, side in 100.0..600.0f64, seed in any::<u64>()) {
        let ch = ChannelParams::default();
        let g = selection::build_graph(&random_pvs(n, side, seed), &ch, &SelectionParams::default_for(&ch)).unwrap();
        prop_assume!(g.components().iter().all(|&c| c == 0));
        let cds = selection::select_cds(&g).unwrap();
        prop_assert!(selection::is_dominating(&g, &cds.members));
        prop_assert!(selection::is_connected(&g, &cds.members));
        prop_assert!(cds.members.contains(&cds.leader));
    }

    #[test]
    fn optimal_epsilon_beats_any_split(inst in instance(), pp in 0.1..10.0f64, pr in 0.1..10.0f64, e in 0.0..=1.0f64) {
        let params = GameSolverParams { deadline: DeadlineMode::Report, ..GameSolverParams::default() };
        let c = optimal_epsilon(&inst, pp, pr, &params).unwrap();
        prop_assert!((0.0..=1.0).contains(&c.epsilon));
        prop_assert!(rv_utility(&inst, c.epsilon, pp, pr) >= rv_utility(&inst, e, pp, pr) - 1e-12);
        let (tp, tr) = completion_times(&inst, c.epsilon);
        prop_assert!(tp >= 0.0 && tr >= 0.0);
    }

    #[test]
    fn consensus_energy_is_linear_in_transactions(n in 1usize..14, v in 1u64..10_000, seed in any::<u64>()) {
        let ch = ChannelParams::default();
        let chain = ChainCosts::vehicle(&ConsensusCostParams::default());
        let pvs = random_pvs(n, 150.0, seed);
        let m = Committee {
            ids: pvs.iter().map(|p| p.id).collect(),
            cpu_freq_hz: pvs.iter().map(|p| p.cpu_freq_hz).collect(),
            positions: pvs.iter().map(|p| p.position).collect(),
        };
        let one = consensus_total_energy(1, &m, &chain, &ch).unwrap();
        let many = consensus_total_energy(v, &m, &chain, &ch).unwrap();
        prop_assert!((many - v as f64 * one).abs() <= 1e-9 * many);
        if n >= 4 {
            prop_assert!(many < pbft_baseline_energy(v, &m, &chain, &ch).unwrap());
        }
    }
}

#[test]
fn default_scenario_is_valid() {
    let cfg = default_scenario();
    cfg.validate().unwrap();
    assert_eq!(parse_scenario(&save_scenario(&cfg).unwrap()).unwrap(), cfg);
}
