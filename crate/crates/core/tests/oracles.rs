//! Derived examples checked against independent references: long-horizon
//! integration, closed-form first integrals and direct quadrature.

use epibubble::analysis::{build_timeline, check_propositions, evaluate, ScenarioSet, Verdict};
use epibubble::epidemic::{
    first_integral_i, first_integral_r, infection_peak, simulate_epidemic, steady_state_recovered,
    EpidemicParams, EpidemicState,
};
use epibubble::market::{
    cohort_holdings_quadrature, cohort_quadrature_series, excess_supply, locate_price_extremum,
    simulate_depression, simulate_myopic, Phase, SupplyCurve,
};
use epibubble::numerics::Grid;
use epibubble::rational::{simulate_re_given_t1, solve_plateau, solve_rational, PhaseEnd};
use epibubble::Error;

fn grid() -> Grid {
    Grid::horizon(300.0, 1e-2).unwrap()
}

fn defaults() -> (EpidemicParams, SupplyCurve) {
    (EpidemicParams::default(), SupplyCurve::default())
}

/// `R` after integrating until `I < 1e-10·N`.
fn long_run_r(p: &EpidemicParams, dt: f64) -> f64 {
    let n = p.total();
    let mut horizon = 1000.0;
    loop {
        let traj = simulate_epidemic(p, &Grid::horizon(horizon, dt).unwrap()).unwrap();
        let last = traj.states.last().unwrap();
        if last.i < 1e-10 * n {
            return last.r;
        }
        horizon *= 2.0;
        assert!(horizon < 1e5, "epidemic did not die out");
    }
}

#[test]
fn default_epidemic_settles_on_the_final_size() {
    let p = EpidemicParams::default();
    let traj = simulate_epidemic(&p, &grid()).unwrap();
    let last = traj.states.last().unwrap();
    assert!(last.i < 1e-6);
    let r_inf = steady_state_recovered(&p, 1e-9).unwrap();
    assert!((last.r - r_inf).abs() / r_inf < 1e-5);
    assert!((r_inf - 993.0).abs() < 0.5, "R∞ = {r_inf}");
    assert!((long_run_r(&p, 0.01) - r_inf).abs() <= 1e-5 * p.total());
}

#[test]
fn final_size_matches_integration_on_a_grid() {
    for beta in [2.5e-4, 5e-4, 1e-3] {
        for gamma in [0.05, 0.1, 0.2] {
            let p = EpidemicParams {
                beta,
                gamma,
                ..Default::default()
            };
            let root = steady_state_recovered(&p, 1e-9).unwrap();
            let long = long_run_r(&p, 0.05);
            assert!(
                (root - long).abs() / long < 1e-5,
                "β={beta} γ={gamma}: {root} vs {long}"
            );
        }
    }
}

#[test]
fn final_size_with_tiny_susceptible_remainder() {
    let p = EpidemicParams {
        beta: 1e-2,
        gamma: 0.1,
        ..Default::default()
    };
    let root = steady_state_recovered(&p, 1e-9).unwrap();
    assert!((root - long_run_r(&p, 0.01)).abs() < 1e-4);
}

#[test]
fn final_size_without_infection_is_exact() {
    let p = EpidemicParams {
        n1: 1000.0,
        n2: 0.0,
        n3: 0.0,
        ..Default::default()
    };
    assert_eq!(steady_state_recovered(&p, 1e-12).unwrap(), 0.0);
}

#[test]
fn first_integral_examples() {
    let p = EpidemicParams::default();
    let init = p.initial_state();
    assert_eq!(first_integral_i(&init, &p).unwrap(), p.n2);
    let at_threshold = EpidemicState {
        s: 200.0,
        i: 0.0,
        r: 0.0,
    };
    let k: f64 = 200.0;
    let expected = -k + k * k.ln() + 1000.0 - k * 999f64.ln();
    let i_star = first_integral_i(&at_threshold, &p).unwrap();
    assert!((i_star - expected).abs() < 1e-12 * expected);
    assert!((i_star - 478.3).abs() < 0.05);

    let traj = simulate_epidemic(&p, &grid()).unwrap();
    let max_i = traj.states.iter().map(|s| s.i).fold(f64::MIN, f64::max);
    assert!((max_i - i_star).abs() / i_star < 1e-4);
    let peak = infection_peak(&p, &traj).unwrap();
    assert!((peak.i_star - i_star).abs() / i_star < 1e-5);
    assert!((peak.s_star - 200.0).abs() / 200.0 < 1e-4);
    assert!(first_integral_i(
        &EpidemicState {
            s: 0.0,
            i: 1.0,
            r: 0.0
        },
        &p
    )
    .is_err());
}

#[test]
fn first_integrals_hold_between_any_two_nodes() {
    let p = EpidemicParams::default();
    let traj = simulate_epidemic(&p, &grid()).unwrap();
    let n = p.total();
    for s in traj.states.iter().step_by(97) {
        assert!((first_integral_i(s, &p).unwrap() - s.i).abs() <= 1e-6 * n);
        assert!((first_integral_r(s, &p).unwrap() - s.r).abs() <= 1e-6 * n);
    }
}

#[test]
fn epidemic_monotonicity_and_unimodal_infection() {
    let p = EpidemicParams::default();
    let g = grid();
    let traj = simulate_epidemic(&p, &g).unwrap();
    for w in traj.states.windows(2) {
        assert!(w[1].s <= w[0].s);
        assert!(w[1].r >= w[0].r);
    }
    let peak = infection_peak(&p, &traj).unwrap();
    for (k, w) in traj.states.windows(2).enumerate() {
        let t = g.time(k + 1);
        if t < peak.t_star - g.dt() {
            assert!(w[1].i >= w[0].i);
        } else if g.time(k) > peak.t_star + g.dt() {
            assert!(w[1].i <= w[0].i);
        }
    }
}

#[test]
fn subcritical_epidemic_decays_from_the_start() {
    let p = EpidemicParams {
        gamma: 0.6,
        ..Default::default()
    };
    let traj = simulate_epidemic(&p, &grid()).unwrap();
    assert!(!infection_peak(&p, &traj).unwrap().exists);
    assert!(traj.states.windows(2).all(|w| w[1].i < w[0].i));
}

#[test]
fn myopic_default_price_cycle() {
    let (p, c) = defaults();
    let traj = simulate_myopic(&p, &c, &grid()).unwrap();
    assert_eq!(traj.nodes[0].state.p, c.p0);
    let last = traj.last().state.p;
    assert!(last >= c.p0 && last <= 1.01 * c.p0);
    let ps: Vec<f64> = traj.nodes.iter().map(|n| n.state.p).collect();
    let peaks = ps
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] >= w[2] && w[1] > c.p0 * (1.0 + 1e-6))
        .count();
    assert_eq!(peaks, 1);
    for n in &traj.nodes {
        let phi = excess_supply(n.state.p, &c).unwrap();
        assert!((phi - n.state.x).abs() <= 1e-9 * n.state.x.abs().max(1.0));
    }
}

fn max_rel_gap(q: &[f64], x: impl Iterator<Item = f64>) -> f64 {
    q.iter()
        .zip(x)
        .filter(|(_, x)| *x != 0.0)
        .map(|(q, x)| (q - x).abs() / x.abs())
        .fold(0.0, f64::max)
}

#[test]
fn quadrature_reproduces_holdings_at_the_price_peak() {
    let (p, c) = defaults();
    let traj = simulate_myopic(&p, &c, &grid()).unwrap();
    let k = traj
        .nodes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.state.p.total_cmp(&b.1.state.p))
        .unwrap()
        .0;
    let t = traj.nodes[k].t;
    let q = cohort_holdings_quadrature(&traj, &p, t).unwrap();
    assert!((q - traj.nodes[k].state.x).abs() / traj.nodes[k].state.x < 1e-4);
    assert_eq!(cohort_holdings_quadrature(&traj, &p, 0.0).unwrap(), 0.0);
    let other = EpidemicParams { beta: 1e-3, ..p };
    assert!(matches!(
        cohort_holdings_quadrature(&traj, &other, t),
        Err(Error::Consistency(_))
    ));
}

#[test]
fn quadrature_in_the_no_recovery_limit() {
    let c = SupplyCurve::default();
    let p = EpidemicParams {
        gamma: 1e-9,
        ..Default::default()
    };
    let g = Grid::horizon(60.0, 1e-2).unwrap();
    let traj = simulate_myopic(&p, &c, &g).unwrap();
    // With no recovery the holdings are cumulative buying.
    let mut cumulative = vec![0.0];
    for w in traj.nodes.windows(2) {
        let f = |n: &epibubble::market::MarketNode| {
            p.beta * n.state.epidemic.i * n.state.epidemic.s * p.endowment / n.state.p
        };
        let last = *cumulative.last().unwrap();
        cumulative.push(last + 0.5 * (w[1].t - w[0].t) * (f(&w[0]) + f(&w[1])));
    }
    assert!(max_rel_gap(&cumulative, traj.nodes.iter().map(|n| n.state.x)) < 1e-4);
}

#[test]
fn quadrature_matches_every_scenario() {
    let (p, c) = defaults();
    let myopic = simulate_myopic(&p, &c, &grid()).unwrap();
    let q = cohort_quadrature_series(&myopic);
    assert!(max_rel_gap(&q, myopic.nodes.iter().map(|n| n.state.x)) < 1e-4);

    let steep = SupplyCurve { kappa: 1000.0, ..c };
    let bust = simulate_depression(&p, &steep, &grid()).unwrap();
    let q = cohort_quadrature_series(&bust);
    assert!(max_rel_gap(&q, bust.nodes.iter().map(|n| n.state.x)) < 1e-4);

    // For RE the kernel gives the holdings of agents still infected.
    let (re, _) = solve_rational(&p, &c, &grid()).unwrap();
    let q = cohort_quadrature_series(&re);
    assert!(max_rel_gap(&q, re.nodes.iter().map(|n| n.split.unwrap().z)) < 1e-4);
}

#[test]
fn frozen_markets() {
    let c = SupplyCurve::default();
    for p in [
        EpidemicParams {
            n2: 0.0,
            ..Default::default()
        },
        EpidemicParams {
            beta: 0.0,
            ..Default::default()
        },
    ] {
        for traj in [
            simulate_myopic(&p, &c, &grid()).unwrap(),
            simulate_depression(&p, &c, &grid()).unwrap(),
        ] {
            assert!(traj
                .nodes
                .iter()
                .all(|n| n.state.p == c.p0 && n.state.x == 0.0));
        }
    }
}

#[test]
fn depression_at_steep_supply_is_a_u_shape_leading_the_epidemic() {
    let p = EpidemicParams::default();
    let c = SupplyCurve {
        kappa: 1000.0,
        ..Default::default()
    };
    let bust = simulate_depression(&p, &c, &grid()).unwrap();
    let ps: Vec<f64> = bust.nodes.iter().map(|n| n.state.p).collect();
    assert!(ps.iter().all(|&x| x <= c.p0));
    let troughs = ps
        .windows(3)
        .filter(|w| w[1] < w[0] && w[1] <= w[2])
        .count();
    assert_eq!(troughs, 1);
    assert!((ps.last().unwrap() - c.p0).abs() <= 0.01 * c.p0);
    let peak = infection_peak(&p, &simulate_epidemic(&p, &grid()).unwrap()).unwrap();
    let (t_trough, _) = locate_price_extremum(&bust).unwrap();
    assert!(t_trough < peak.t_star - grid().dt());
}

#[test]
fn depression_with_flat_supply_hits_the_floor() {
    let p = EpidemicParams::default();
    let c = SupplyCurve {
        kappa: 1.0,
        ..Default::default()
    };
    assert!(matches!(
        simulate_depression(&p, &c, &grid()),
        Err(Error::PriceFloor { .. })
    ));
}

#[test]
fn boom_and_bust_verdicts_are_antisymmetric() {
    let p = EpidemicParams::default();
    let c = SupplyCurve {
        kappa: 1000.0,
        ..Default::default()
    };
    let g = grid();
    let peak = infection_peak(&p, &simulate_epidemic(&p, &g).unwrap()).unwrap();
    let boom = simulate_myopic(&p, &c, &g).unwrap();
    let bust = simulate_depression(&p, &c, &g).unwrap();
    let tb = build_timeline(&boom, None, &peak).unwrap();
    let td = build_timeline(&bust, None, &peak).unwrap();
    assert_eq!(tb.t_p_star_m, td.t_p_star_m);
    assert_eq!(tb.ordering, td.ordering);
    let rb = check_propositions(&boom, None, &tb);
    let rd = check_propositions(&bust, None, &td);
    assert_eq!(rd.claims.len(), 1);
    assert_eq!(rb.claims[0].verdict, Verdict::Pass);
    assert_eq!(rd.claims[0].verdict, rb.claims[0].verdict);
}

#[test]
fn shooting_diagnoses_early_and_late_starts() {
    let (p, c) = defaults();
    let g = grid();
    let (_, early) = simulate_re_given_t1(&p, &c, 0.0, &g).unwrap();
    assert_eq!(early.ended_by, PhaseEnd::Absorbed);
    assert_eq!(early.at_t1.h, 0.0);

    let t_i = infection_peak(&p, &simulate_epidemic(&p, &g).unwrap())
        .unwrap()
        .t_star;
    let (_, late) = simulate_re_given_t1(&p, &c, 2.0 * t_i, &g).unwrap();
    assert_eq!(late.ended_by, PhaseEnd::FlowReversed);
    assert!(late.at_end_phase.h > 0.0);

    let sol = solve_plateau(&p, &c, &g, 1e-13).unwrap();
    let (_, at) = simulate_re_given_t1(&p, &c, sol.t1, &g).unwrap();
    let (_, before) = simulate_re_given_t1(&p, &c, sol.t1 - g.dt(), &g).unwrap();
    assert_eq!(at.ended_by, PhaseEnd::FlowReversed);
    assert_eq!(before.ended_by, PhaseEnd::Absorbed);
}

#[test]
fn rational_path_structure() {
    let (p, c) = defaults();
    let g = grid();
    let (re, sol) = solve_rational(&p, &c, &g).unwrap();
    let myopic = simulate_myopic(&p, &c, &g).unwrap();
    let (t_p, p_m) = locate_price_extremum(&myopic).unwrap();
    let t_i = infection_peak(&p, &simulate_epidemic(&p, &g).unwrap())
        .unwrap()
        .t_star;
    assert!(sol.t1 < t_p && t_p < sol.t2 && sol.t2 < t_i);
    assert!(sol.p_star < p_m);

    let phi_star = excess_supply(sol.p_star, &c).unwrap();
    let mut prev_total = f64::NEG_INFINITY;
    for n in &re.nodes {
        let split = n.split.unwrap();
        match n.phase {
            Phase::Pre => {
                assert!(split.z + split.h >= prev_total);
                prev_total = split.z + split.h;
            }
            Phase::Plateau => {
                assert!((n.state.p - sol.p_star).abs() <= 1e-6 * sol.p_star);
                assert!((split.z + split.h - phi_star).abs() <= 1e-6 * phi_star);
            }
            Phase::Post => assert_eq!(split.h, 0.0),
            Phase::Na => panic!("rational nodes are always tagged"),
        }
    }
    let last = re.last().state.p;
    assert!((last - c.p0).abs() <= 0.01 * c.p0);
    let phases: Vec<Phase> = re.nodes.iter().map(|n| n.phase).collect();
    let switches = phases.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(switches, 2);
}

#[test]
fn no_epidemic_means_no_plateau() {
    let p = EpidemicParams {
        n2: 0.0,
        ..Default::default()
    };
    let err = solve_plateau(&p, &SupplyCurve::default(), &grid(), 1e-13).unwrap_err();
    assert!(matches!(err, Error::NoPlateau(_)));
}

#[test]
fn default_evaluation_passes_all_claims() {
    let (p, c) = defaults();
    let ev = evaluate(&p, &c, &grid(), ScenarioSet::BOOM).unwrap();
    assert_eq!(ev.report.claims.len(), 5);
    assert!(ev.report.all_pass(), "{:#?}", ev.report);
    assert_eq!(ev.refinements, 0);
    let tl = ev.timeline.unwrap();
    assert!(tl
        .ordering
        .entries()
        .iter()
        .all(|(_, v)| *v == Some(Verdict::Pass)));
    let (m, re) = ev.half_rise_times().unwrap();
    assert!(re < m);
}

#[test]
fn myopic_only_timeline_reduces_to_the_lead() {
    let (p, c) = defaults();
    let ev = evaluate(
        &p,
        &c,
        &grid(),
        ScenarioSet::only(epibubble::market::Scenario::Myopic),
    )
    .unwrap();
    let tl = ev.timeline.unwrap();
    assert_eq!(tl.ordering.tp_before_ti, Some(Verdict::Pass));
    assert_eq!(tl.ordering.t1_before_tp, None);
    assert_eq!(tl.t1, None);
}

#[test]
fn no_epidemic_timeline_reports_no_boom() {
    let p = EpidemicParams {
        n2: 0.0,
        ..Default::default()
    };
    let ev = evaluate(&p, &SupplyCurve::default(), &grid(), ScenarioSet::BOOM).unwrap();
    let tl = ev.timeline.unwrap();
    assert!(!tl.boom);
    assert_eq!(tl.t_p_star_m, None);
    assert!(ev.rational.is_none());
}

#[test]
fn price_peak_time_is_stable_under_refinement() {
    let (p, c) = defaults();
    let g = grid();
    let (a, _) = locate_price_extremum(&simulate_myopic(&p, &c, &g).unwrap()).unwrap();
    let (b, _) = locate_price_extremum(&simulate_myopic(&p, &c, &g.halved()).unwrap()).unwrap();
    assert!((a - b).abs() < g.dt());
}

mod sweep {
    use epibubble::analysis::{
        parameter_sweep, summarize_sweep, RowStatus, ScenarioSet, SweepSpec, Verdict,
    };
    use epibubble::epidemic::EpidemicParams;
    use epibubble::market::SupplyCurve;

    use super::grid;

    #[test]
    fn default_grid_orders_every_row() {
        let (p, c) = (EpidemicParams::default(), SupplyCurve::default());
        let spec = SweepSpec::default_grid();
        let rows = parameter_sweep(&p, &c, &grid(), &spec, ScenarioSet::BOOM, 4).unwrap();
        assert_eq!(rows.len(), 9);
        for r in &rows {
            assert_eq!(r.status, RowStatus::Ok);
            let tl = r.timeline.unwrap();
            assert!(
                tl.ordering
                    .entries()
                    .iter()
                    .all(|(_, v)| *v == Some(Verdict::Pass)),
                "row {}",
                r.index
            );
        }
        let again = parameter_sweep(&p, &c, &grid(), &spec, ScenarioSet::BOOM, 1).unwrap();
        assert_eq!(
            serde_json::to_string(&rows).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn subcritical_row_reports_no_boom() {
        let p = EpidemicParams::default();
        let spec = SweepSpec {
            n1: vec![999.0, 150.0],
            ..Default::default()
        };
        let rows = parameter_sweep(
            &p,
            &SupplyCurve::default(),
            &grid(),
            &spec,
            ScenarioSet::BOOM,
            2,
        )
        .unwrap();
        assert_eq!(rows[0].status, RowStatus::Ok);
        assert_eq!(rows[1].status, RowStatus::NoBoom);
        assert_eq!(summarize_sweep(&rows).no_boom, 1);
    }

    #[test]
    fn plateau_widens_with_recovery_rate() {
        let p = EpidemicParams::default();
        let spec = SweepSpec {
            gamma: vec![0.05, 0.1, 0.2],
            ..Default::default()
        };
        let rows = parameter_sweep(
            &p,
            &SupplyCurve::default(),
            &grid(),
            &spec,
            ScenarioSet::BOOM,
            3,
        )
        .unwrap();
        let widths: Vec<f64> = rows.iter().map(|r| r.plateau_width.unwrap()).collect();
        let summary = summarize_sweep(&rows);
        let monotone = widths.windows(2).all(|w| w[1] > w[0]);
        assert_eq!(summary.width_violations.is_empty(), monotone, "{widths:?}");
        assert!(summary.acceleration_violations.is_empty());
    }
}
