//! Rational cured agents and the broad market top.
//!
//! Agents cured while the price is still rising keep their shares and wait
//! for the top. Holdings split into `z` (currently infected) and `h` (cured,
//! waiting). The run has three phases:
//!
//! 1. `[0, t1]`: nobody sells, `z' = βISw/P - γz`, `h' = γz`, `P = φ⁻¹(z + h)`.
//! 2. `[t1, t2]`: the price sits at `P* = P(t1)`; waiting holders feed the net
//!    buying of the infected, `z' = βISw/P* - γz = -h'`.
//! 3. after `t2`: everyone cured sells at once, `h = 0`, `P = φ⁻¹(z)`.
//!
//! `t1` is found by shooting: too early and the waiting inventory is absorbed
//! while net buying is still positive; too late and net buying turns negative
//! with inventory left over. At the solution both happen together.
//!
//! Phase switches may fall between grid nodes. A switch inside a step is
//! handled by splitting that step in two RK4 sub-steps, so stored nodes stay
//! on the grid while `t1` and `t2` are resolved well below `dt`.

use serde::{Deserialize, Serialize};

use crate::epidemic::{sir_derivatives, EpidemicParams, EpidemicState};
use crate::error::{Error, Result};
use crate::market::{
    clearing_price_at, excess_supply, HoldingsSplit, MarketNode, MarketState, MarketTrajectory,
    Phase, PlateauMeta, Scenario, SupplyCurve,
};
use crate::numerics::{locate_in_step, rk4_step, Grid};

/// Closure tolerance on the net flow at `t2`, relative to `γ·φ(P*)`.
pub const FLOW_TOLERANCE: f64 = 1e-4;
/// Closure tolerance on the waiting inventory at `t2`, relative to `φ(P*)`.
pub const ABSORPTION_TOLERANCE: f64 = 1e-4;
/// Default bracket width on `t1` for [`solve_plateau`].
pub const DEFAULT_T1_TOLERANCE: f64 = 1e-13;

/// Coarse scan segments used to check the shooting sign is monotone.
const SCAN_SEGMENTS: usize = 16;
const MAX_SHOTS: usize = 400;

type Field5 = Box<dyn FnMut(f64, &[f64; 5]) -> Result<[f64; 5]>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct REState {
    pub epidemic: EpidemicState,
    pub z: f64,
    pub h: f64,
    pub p: f64,
}

/// What closed the plateau phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseEnd {
    /// Waiting inventory ran out while net buying was still positive.
    Absorbed,
    /// Net buying turned non-positive with inventory left.
    FlowReversed,
    /// Neither happened before the end of the grid.
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauDiagnosis {
    pub t1: f64,
    pub p_star: f64,
    pub ended_by: PhaseEnd,
    /// Time phase 2 ended (the end of the grid for [`PhaseEnd::Horizon`]).
    pub t_end_phase: f64,
    pub at_t1: REState,
    pub at_end_phase: REState,
    /// `βISw/P* - γz` where phase 2 ended.
    pub flow_at_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauSolution {
    pub t1: f64,
    pub t2: f64,
    pub p_star: f64,
    /// Net flow `βISw/P* - γz` at `t2`.
    pub residual_flow: f64,
    /// Waiting inventory `h` at `t2`.
    pub residual_absorption: f64,
    /// Number of shooting runs.
    pub iterations: usize,
}

fn phase1_field(params: EpidemicParams, curve: SupplyCurve) -> Field5 {
    Box::new(move |t, y| {
        let p = clearing_price_at(y[3] + y[4], &curve, t)?;
        let [ds, di, dr] = sir_derivatives(&EpidemicState::from_slice(y), &params);
        let buying = params.beta * y[1] * y[0] * params.endowment / p;
        Ok([
            ds,
            di,
            dr,
            buying - params.gamma * y[3],
            params.gamma * y[3],
        ])
    })
}

fn plateau_flow(params: &EpidemicParams, p_star: f64, y: &[f64; 5]) -> f64 {
    params.beta * y[1] * y[0] * params.endowment / p_star - params.gamma * y[3]
}

fn phase2_field(params: EpidemicParams, p_star: f64) -> Field5 {
    Box::new(move |_, y| {
        let [ds, di, dr] = sir_derivatives(&EpidemicState::from_slice(y), &params);
        let flow = plateau_flow(&params, p_star, y);
        Ok([ds, di, dr, flow, -flow])
    })
}

fn phase3_field(params: EpidemicParams, curve: SupplyCurve) -> Field5 {
    Box::new(move |t, y| {
        let p = clearing_price_at(y[3], &curve, t)?;
        let [ds, di, dr] = sir_derivatives(&EpidemicState::from_slice(y), &params);
        let buying = params.beta * y[1] * y[0] * params.endowment / p;
        Ok([ds, di, dr, buying - params.gamma * y[3], 0.0])
    })
}

fn re_state(y: &[f64; 5], p: f64) -> REState {
    REState {
        epidemic: EpidemicState::from_slice(y),
        z: y[3],
        h: y[4],
        p,
    }
}

/// Sub-steps shorter than this fraction of `dt` are skipped.
fn negligible(span: f64, dt: f64) -> bool {
    span <= 1e-12 * dt
}

struct Run {
    nodes: Vec<MarketNode>,
    diagnosis: PlateauDiagnosis,
}

/// Integrates the rational scenario for a given switch time `t1`.
///
/// With `record == false` only the diagnosis is produced and integration
/// stops when phase 2 ends.
fn run_rational(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    grid: &Grid,
    t1: f64,
    record: bool,
) -> Result<Run> {
    params.validate()?;
    curve.validate()?;
    if !(t1 >= grid.t_start() && t1 <= grid.t_end()) {
        return Err(Error::Domain(format!(
            "t1 = {t1} outside the grid [{}, {}]",
            grid.t_start(),
            grid.t_end()
        )));
    }
    let dt = grid.dt();
    let mut nodes = Vec::with_capacity(if record { grid.len() } else { 0 });
    let push = |nodes: &mut Vec<MarketNode>, t: f64, y: &[f64; 5], p: f64| {
        if record {
            nodes.push(MarketNode {
                t,
                state: MarketState {
                    epidemic: EpidemicState::from_slice(y),
                    x: y[3] + y[4],
                    p,
                },
                phase: Phase::Na,
                split: Some(HoldingsSplit { z: y[3], h: y[4] }),
            });
        }
    };

    // Phase 1.
    let st0 = params.initial_state();
    let mut y = [st0.s, st0.i, st0.r, 0.0, 0.0];
    let mut f1 = phase1_field(*params, *curve);
    push(&mut nodes, grid.time(0), &y, curve.p0);
    let k1 = grid.floor_index(t1);
    for k in 0..k1 {
        let t = grid.time(k);
        y = rk4_step(&mut f1, t, &y, grid.time(k + 1) - t)?;
        push(
            &mut nodes,
            grid.time(k + 1),
            &y,
            clearing_price_at(y[3] + y[4], curve, grid.time(k + 1))?,
        );
    }
    let mut t = grid.time(k1);
    if !negligible(t1 - t, dt) {
        y = rk4_step(&mut f1, t, &y, t1 - t)?;
        t = t1;
    }
    let p_star = clearing_price_at(y[3] + y[4], curve, t)?;
    let at_t1 = re_state(&y, p_star);

    // Phase 2.
    let mut f2 = phase2_field(*params, p_star);
    let flow = |y: &[f64; 5]| plateau_flow(params, p_star, y);
    let mut next = k1 + 1;
    let mut end: Option<(PhaseEnd, f64, [f64; 5])> = if y[4] <= 0.0 {
        Some((PhaseEnd::Absorbed, t, y))
    } else if flow(&y) <= 0.0 {
        Some((PhaseEnd::FlowReversed, t, y))
    } else {
        None
    };
    while end.is_none() && next <= grid.steps() {
        let t_next = grid.time(next);
        let span = t_next - t;
        if negligible(span, dt) {
            next += 1;
            continue;
        }
        let y_next = rk4_step(&mut f2, t, &y, span)?;
        let absorbed = y_next[4] <= 0.0;
        let reversed = flow(&y_next) <= 0.0;
        if reversed {
            // `h` only falls while the flow is positive, so its minimum over
            // the phase sits at the reversal.
            let (s_r, y_r) = locate_in_step(&mut f2, t, &y, span, flow)?;
            if y_r[4] <= 0.0 {
                let (s_a, y_a) = locate_in_step(&mut f2, t, &y, s_r, |y| y[4])?;
                end = Some((PhaseEnd::Absorbed, t + s_a, y_a));
            } else {
                end = Some((PhaseEnd::FlowReversed, t + s_r, y_r));
            }
        } else if absorbed {
            let (s_a, y_a) = locate_in_step(&mut f2, t, &y, span, |y| y[4])?;
            end = Some((PhaseEnd::Absorbed, t + s_a, y_a));
        } else {
            y = y_next;
            t = t_next;
            push(&mut nodes, t, &y, p_star);
            next += 1;
        }
    }

    let (ended_by, t2, y2) = end.unwrap_or((PhaseEnd::Horizon, t, y));
    let diagnosis = PlateauDiagnosis {
        t1,
        p_star,
        ended_by,
        t_end_phase: t2,
        at_t1,
        at_end_phase: re_state(&y2, p_star),
        flow_at_end: flow(&y2),
    };
    if !record {
        return Ok(Run { nodes, diagnosis });
    }

    // Phase 3. Whatever inventory is left is sold at t2.
    if ended_by != PhaseEnd::Horizon {
        let mut f3 = phase3_field(*params, *curve);
        let mut y = y2;
        y[4] = 0.0;
        let mut t = t2;
        // The event may sit exactly on the node that follows it.
        if next <= grid.steps() && negligible(grid.time(next) - t, dt) {
            push(&mut nodes, grid.time(next), &y2, p_star);
            next += 1;
        }
        while next <= grid.steps() {
            let t_next = grid.time(next);
            y = rk4_step(&mut f3, t, &y, t_next - t)?;
            t = t_next;
            push(&mut nodes, t, &y, clearing_price_at(y[3], curve, t)?);
            next += 1;
        }
    }

    for n in &mut nodes {
        n.phase = if n.t <= t1 {
            Phase::Pre
        } else if n.t <= t2 || ended_by == PhaseEnd::Horizon {
            Phase::Plateau
        } else {
            Phase::Post
        };
    }
    Ok(Run { nodes, diagnosis })
}

fn into_trajectory(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    grid: &Grid,
    run: Run,
) -> MarketTrajectory {
    let d = run.diagnosis;
    MarketTrajectory {
        params: *params,
        curve: *curve,
        grid: *grid,
        scenario: Scenario::Rational,
        nodes: run.nodes,
        plateau: Some(PlateauMeta {
            t1: d.t1,
            t2: d.t_end_phase,
            p_star: d.p_star,
        }),
    }
}

/// Full three-phase run for a given `t1` plus the diagnosis of how phase 2
/// ended. `t1` may lie anywhere on `[t_start, t_end]`.
pub fn simulate_re_given_t1(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    t1: f64,
    grid: &Grid,
) -> Result<(MarketTrajectory, PlateauDiagnosis)> {
    let run = run_rational(params, curve, grid, t1, true)?;
    let diagnosis = run.diagnosis;
    Ok((into_trajectory(params, curve, grid, run), diagnosis))
}

/// Shooting side of a trial `t1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Early,
    Late,
}

fn side_of(d: &PlateauDiagnosis) -> Result<Side> {
    match d.ended_by {
        PhaseEnd::Absorbed => Ok(Side::Early),
        PhaseEnd::FlowReversed => Ok(Side::Late),
        PhaseEnd::Horizon => Err(Error::NoPlateau(format!(
            "plateau starting at t1 = {} does not close before t_end",
            d.t1
        ))),
    }
}

/// Solves for the plateau `(t1, t2, P*)`.
///
/// A coarse scan over grid nodes checks the shooting sign is monotone, node
/// bisection narrows `t1` to one grid step, and bisection on the continuous
/// switch time closes the bracket to `tol`. The reported solution is the
/// late end of the final bracket, where `t2` is the flow reversal and the
/// leftover inventory is at most the bracket's worth of accumulation.
pub fn solve_plateau(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    grid: &Grid,
    tol: f64,
) -> Result<PlateauSolution> {
    params.validate()?;
    curve.validate()?;
    if !params.has_outbreak() {
        return Err(Error::NoPlateau(
            "no outbreak: need beta > 0, n2 > 0 and n1 > gamma/beta".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tol must be positive, got {tol}")));
    }
    let mut shots = 0usize;
    let mut shoot = |t1: f64| -> Result<PlateauDiagnosis> {
        shots += 1;
        if shots > MAX_SHOTS {
            return Err(Error::Convergence {
                iterations: MAX_SHOTS,
                best: t1,
            });
        }
        Ok(run_rational(params, curve, grid, t1, false)?.diagnosis)
    };
    let too_coarse = |reason: String| Error::GridTooCoarse {
        reason,
        suggested_dt: grid.dt() / 2.0,
    };

    // Coarse monotonicity scan.
    let steps = grid.steps();
    let segments = SCAN_SEGMENTS.min(steps);
    let scan: Vec<usize> = (0..=segments).map(|j| j * steps / segments).collect();
    let mut sides = Vec::with_capacity(scan.len());
    for &k in &scan {
        sides.push(side_of(&shoot(grid.time(k))?)?);
    }
    if sides[0] != Side::Early || *sides.last().unwrap() != Side::Late {
        return Err(Error::NoPlateau(format!(
            "shooting sign does not change over [{}, {}]",
            grid.t_start(),
            grid.t_end()
        )));
    }
    let first_late = sides.iter().position(|s| *s == Side::Late).unwrap();
    if sides[first_late..].contains(&Side::Early) {
        return Err(too_coarse("shooting sign is not monotone in t1".into()));
    }

    // Node bisection.
    let (mut k_lo, mut k_hi) = (scan[first_late - 1], scan[first_late]);
    while k_hi - k_lo > 1 {
        let mid = (k_lo + k_hi) / 2;
        match side_of(&shoot(grid.time(mid))?)? {
            Side::Early => k_lo = mid,
            Side::Late => k_hi = mid,
        }
    }

    // Continuous refinement inside the last grid step.
    let (mut lo, mut hi) = (grid.time(k_lo), grid.time(k_hi));
    let mut late = shoot(hi)?;
    let mut early = shoot(lo)?;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let d = shoot(mid)?;
        match side_of(&d)? {
            Side::Early => {
                lo = mid;
                early = d;
            }
            Side::Late => {
                hi = mid;
                late = d;
            }
        }
    }
    if side_of(&early)? != Side::Early || side_of(&late)? != Side::Late {
        return Err(too_coarse(
            "shooting sign flipped inside the final bracket".into(),
        ));
    }
    if (late.t_end_phase - early.t_end_phase).abs() > grid.dt() {
        return Err(too_coarse(format!(
            "absorption ({}) and flow reversal ({}) do not meet within one step",
            early.t_end_phase, late.t_end_phase
        )));
    }

    let supply = excess_supply(late.p_star, curve)?;
    let solution = PlateauSolution {
        t1: late.t1,
        t2: late.t_end_phase,
        p_star: late.p_star,
        residual_flow: late.flow_at_end,
        residual_absorption: late.at_end_phase.h,
        iterations: shots,
    };
    if solution.residual_flow.abs() > FLOW_TOLERANCE * params.gamma * supply {
        return Err(too_coarse(format!(
            "flow residual {} too large",
            solution.residual_flow
        )));
    }
    if solution.residual_absorption.abs() > ABSORPTION_TOLERANCE * supply {
        return Err(too_coarse(format!(
            "absorption residual {} too large",
            solution.residual_absorption
        )));
    }
    Ok(solution)
}

/// Stitched three-phase price path at the solved plateau.
pub fn re_price_path(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    grid: &Grid,
) -> Result<MarketTrajectory> {
    Ok(solve_rational(params, curve, grid)?.0)
}

/// Solves the plateau and returns the full path with its solution.
pub fn solve_rational(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    grid: &Grid,
) -> Result<(MarketTrajectory, PlateauSolution)> {
    let sol = solve_plateau(params, curve, grid, DEFAULT_T1_TOLERANCE)?;
    let (traj, diag) = simulate_re_given_t1(params, curve, sol.t1, grid)?;
    debug_assert_eq!(diag.t_end_phase, sol.t2);
    Ok((traj, sol))
}
