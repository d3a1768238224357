//! Each claim check must reject a deliberately broken input.

use epibubble::analysis::{
    build_timeline, check_propositions, EventTimeline, Verdict, CLAIM_ORDERING, CLAIM_PROP1,
    CLAIM_PROP2, CLAIM_REMARK1, CLAIM_REMARK2,
};
use epibubble::epidemic::{infection_peak, simulate_epidemic, EpidemicParams};
use epibubble::market::{simulate_myopic, MarketTrajectory, Phase, SupplyCurve};
use epibubble::numerics::Grid;
use epibubble::rational::solve_rational;

struct Base {
    myopic: MarketTrajectory,
    rational: MarketTrajectory,
    timeline: EventTimeline,
}

fn base() -> Base {
    let p = EpidemicParams::default();
    let c = SupplyCurve::default();
    let g = Grid::horizon(300.0, 1e-2).unwrap();
    let peak = infection_peak(&p, &simulate_epidemic(&p, &g).unwrap()).unwrap();
    let myopic = simulate_myopic(&p, &c, &g).unwrap();
    let (rational, _) = solve_rational(&p, &c, &g).unwrap();
    let timeline = build_timeline(&myopic, Some(&rational), &peak).unwrap();
    Base {
        myopic,
        rational,
        timeline,
    }
}

fn verdict(
    m: &MarketTrajectory,
    re: &MarketTrajectory,
    tl: &EventTimeline,
    claim: &str,
) -> Verdict {
    check_propositions(m, Some(re), tl).verdict(claim).unwrap()
}

/// Moves each price to a scattered node; the permutation is fixed.
fn scatter_prices(traj: &mut MarketTrajectory) {
    let prices: Vec<f64> = traj.nodes.iter().map(|n| n.state.p).collect();
    let n = prices.len();
    for (k, node) in traj.nodes.iter_mut().enumerate() {
        node.state.p = prices[(k * 7919 + 13) % n];
    }
}

#[test]
fn unbroken_inputs_pass() {
    let b = base();
    let report = check_propositions(&b.myopic, Some(&b.rational), &b.timeline);
    assert!(report.all_pass(), "{report:#?}");
}

#[test]
fn scattered_prices_break_the_shape_claims() {
    let b = base();
    let mut m = b.myopic.clone();
    scatter_prices(&mut m);
    assert_eq!(
        verdict(&m, &b.rational, &b.timeline, CLAIM_PROP1),
        Verdict::Fail
    );
    let mut re = b.rational.clone();
    scatter_prices(&mut re);
    assert_eq!(
        verdict(&b.myopic, &re, &b.timeline, CLAIM_PROP2),
        Verdict::Fail
    );
}

#[test]
fn out_of_order_events_fail_the_chain() {
    let b = base();
    let mut tl = b.timeline;
    std::mem::swap(&mut tl.t1, &mut tl.t2);
    assert_eq!(
        verdict(&b.myopic, &b.rational, &tl, CLAIM_ORDERING),
        Verdict::Fail
    );

    // Stored pairwise verdicts are not trusted.
    let mut tl = b.timeline;
    tl.t_p_star_m = tl.t_i_star.map(|t| t + 1.0);
    assert_eq!(
        verdict(&b.myopic, &b.rational, &tl, CLAIM_ORDERING),
        Verdict::Fail
    );

    let mut tl = b.timeline;
    tl.t_p_star_m = tl.t_i_star.map(|t| t + 1.0);
    tl.ordering.tp_before_ti = Some(Verdict::Fail);
    assert_eq!(
        verdict(&b.myopic, &b.rational, &tl, CLAIM_PROP1),
        Verdict::Fail
    );
}

#[test]
fn a_single_bent_plateau_node_fails_flatness() {
    let b = base();
    let mut re = b.rational.clone();
    let k = re
        .nodes
        .iter()
        .position(|n| n.phase == Phase::Plateau)
        .unwrap()
        + 5;
    assert_eq!(re.nodes[k].phase, Phase::Plateau);
    re.nodes[k].state.p *= 1.0 + 1e-3;
    assert_eq!(
        verdict(&b.myopic, &re, &b.timeline, CLAIM_PROP2),
        Verdict::Fail
    );
}

#[test]
fn swapped_paths_fail_the_faster_rise() {
    let b = base();
    let mut m = b.myopic.clone();
    let mut re = b.rational.clone();
    std::mem::swap(&mut m.nodes, &mut re.nodes);
    assert_eq!(verdict(&m, &re, &b.timeline, CLAIM_REMARK1), Verdict::Fail);
}

#[test]
fn swapped_peak_prices_fail_the_lower_peak() {
    let b = base();
    let mut tl = b.timeline;
    std::mem::swap(&mut tl.p_star_m, &mut tl.p_star_re);
    assert_eq!(
        verdict(&b.myopic, &b.rational, &tl, CLAIM_REMARK2),
        Verdict::Fail
    );
}
