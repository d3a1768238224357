//! Event timelines, machine-checked claims and parameter sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epidemic::{infection_peak, simulate_epidemic, EpidemicParams, InfectionPeak};
use crate::error::{Error, Result};
use crate::market::{
    excess_supply, locate_price_extremum, simulate_depression, simulate_myopic, MarketTrajectory,
    Phase, Scenario, SupplyCurve,
};
use crate::numerics::Grid;
use crate::rational::{solve_rational, PlateauSolution};

/// Long-run price band, as a fraction of `P0`.
pub const LONG_RUN_BAND: f64 = 0.01;
/// Relative height a local extremum needs to count as a price peak.
pub const PEAK_PROMINENCE: f64 = 1e-6;
/// Relative flatness required of the plateau.
pub const PLATEAU_FLATNESS: f64 = 1e-6;
/// Number of leading steps over which the RE-over-M dominance may be weak.
pub const DOMINANCE_WARMUP_STEPS: f64 = 10.0;
/// Automatic `dt/2` reruns when an ordering verdict is inconclusive.
pub const MAX_REFINEMENTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeakMode {
    Max,
    Min,
}

/// Vertex of the parabola through the discrete extremum and its neighbours.
pub fn refine_peak(samples: &[(f64, f64)], mode: PeakMode) -> Result<(f64, f64)> {
    if samples.len() < 3 {
        return Err(Error::Domain(format!(
            "peak refinement needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    let sign = match mode {
        PeakMode::Max => 1.0,
        PeakMode::Min => -1.0,
    };
    let k = samples
        .iter()
        .enumerate()
        .max_by(|a, b| (sign * a.1 .1).total_cmp(&(sign * b.1 .1)))
        .map(|(k, _)| k)
        .unwrap();
    if k == 0 || k + 1 == samples.len() {
        return Err(Error::BoundaryExtremum { index: k });
    }
    let (t0, y0) = samples[k];
    let (tm, ym) = samples[k - 1];
    let (tp, yp) = samples[k + 1];
    let h = 0.5 * (tp - tm);
    let curvature = ym - 2.0 * y0 + yp;
    if curvature == 0.0 {
        return Ok((t0, y0));
    }
    let u = (0.5 * (ym - yp) / curvature).clamp(-1.0, 1.0);
    let value = y0 + 0.5 * u * (yp - ym) + 0.5 * u * u * curvature;
    Ok((t0 + u * h, value))
}

/// Outcome of one check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    Skipped,
}

impl Verdict {
    /// `a < b` judged at resolution `dt`: gaps within `dt` are inconclusive.
    pub fn strictly_before(a: f64, b: f64, dt: f64) -> Self {
        let gap = b - a;
        if !gap.is_finite() {
            Verdict::Inconclusive
        } else if gap > dt {
            Verdict::Pass
        } else if gap < -dt {
            Verdict::Fail
        } else {
            Verdict::Inconclusive
        }
    }

    fn combine(items: impl IntoIterator<Item = Verdict>) -> Verdict {
        let mut out = Verdict::Pass;
        let mut any = false;
        for v in items {
            any = true;
            out = match (out, v) {
                (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
                (Verdict::Inconclusive, _) | (_, Verdict::Inconclusive) => Verdict::Inconclusive,
                (Verdict::Skipped, x) | (x, Verdict::Skipped) => x,
                _ => Verdict::Pass,
            };
        }
        if any {
            out
        } else {
            Verdict::Skipped
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Skipped => "skipped",
        }
    }
}

/// Verdicts on the chain `t1 < t_P* < t2 < t_I*` (and `t_P* < t_I*`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Ordering {
    pub t1_before_tp: Option<Verdict>,
    pub tp_before_t2: Option<Verdict>,
    pub t2_before_ti: Option<Verdict>,
    pub tp_before_ti: Option<Verdict>,
}

impl Ordering {
    fn compute(
        t_i: Option<f64>,
        t_p: Option<f64>,
        t1: Option<f64>,
        t2: Option<f64>,
        dt: f64,
    ) -> Self {
        let v = |a: Option<f64>, b: Option<f64>| Some(Verdict::strictly_before(a?, b?, dt));
        Self {
            t1_before_tp: v(t1, t_p),
            tp_before_t2: v(t_p, t2),
            t2_before_ti: v(t2, t_i),
            tp_before_ti: v(t_p, t_i),
        }
    }

    pub fn entries(&self) -> [(&'static str, Option<Verdict>); 4] {
        [
            ("t1_lt_tp", self.t1_before_tp),
            ("tp_lt_t2", self.tp_before_t2),
            ("t2_lt_ti", self.t2_before_ti),
            ("tp_lt_ti", self.tp_before_ti),
        ]
    }

    pub fn any_inconclusive(&self) -> bool {
        self.entries()
            .iter()
            .any(|(_, v)| *v == Some(Verdict::Inconclusive))
    }
}

/// Dated events of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventTimeline {
    /// Scenario the price extremum comes from (myopic or depression).
    pub scenario: Scenario,
    pub boom: bool,
    pub dt: f64,
    pub t_end: f64,
    pub t_i_star: Option<f64>,
    pub i_star: Option<f64>,
    /// Price extremum time (a trough for the depression run).
    pub t_p_star_m: Option<f64>,
    pub p_star_m: Option<f64>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub p_star_re: Option<f64>,
    pub ordering: Ordering,
}

/// Collects and orders the extrema of a run.
///
/// `primary` is a myopic or depression trajectory; `rational`, when given,
/// must share its parameters and grid.
pub fn build_timeline(
    primary: &MarketTrajectory,
    rational: Option<&MarketTrajectory>,
    peak: &InfectionPeak,
) -> Result<EventTimeline> {
    if primary.scenario == Scenario::Rational {
        return Err(Error::Consistency(
            "primary trajectory must be myopic or depression".into(),
        ));
    }
    if let Some(re) = rational {
        primary.ensure_compatible(re)?;
        if re.scenario != Scenario::Rational || re.plateau.is_none() {
            return Err(Error::Consistency(
                "second trajectory must be a solved rational path".into(),
            ));
        }
    }
    let dt = primary.grid.dt();
    let t_end = primary.grid.t_end();
    let boom = peak.exists;
    if !boom {
        return Ok(EventTimeline {
            scenario: primary.scenario,
            boom,
            dt,
            t_end,
            t_i_star: None,
            i_star: None,
            t_p_star_m: None,
            p_star_m: None,
            t1: None,
            t2: None,
            p_star_re: None,
            ordering: Ordering::default(),
        });
    }
    let (t_p, p_star) = locate_price_extremum(primary)?;
    let plateau = rational.and_then(|r| r.plateau);
    let (t1, t2, p_re) = match plateau {
        Some(m) => (Some(m.t1), Some(m.t2), Some(m.p_star)),
        None => (None, None, None),
    };
    let t_i = Some(peak.t_star);
    Ok(EventTimeline {
        scenario: primary.scenario,
        boom,
        dt,
        t_end,
        t_i_star: t_i,
        i_star: Some(peak.i_star),
        t_p_star_m: Some(t_p),
        p_star_m: Some(p_star),
        t1,
        t2,
        p_star_re: p_re,
        ordering: Ordering::compute(t_i, Some(t_p), t1, t2, dt),
    })
}

/// One checked claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub claim: String,
    pub verdict: Verdict,
    /// Signed distance from the threshold; positive means satisfied.
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PropertyReport {
    pub claims: Vec<ClaimCheck>,
}

impl PropertyReport {
    pub fn get(&self, claim: &str) -> Option<&ClaimCheck> {
        self.claims.iter().find(|c| c.claim == claim)
    }

    pub fn verdict(&self, claim: &str) -> Option<Verdict> {
        self.get(claim).map(|c| c.verdict)
    }

    /// No claim failed or stayed inconclusive.
    pub fn all_pass(&self) -> bool {
        self.claims
            .iter()
            .all(|c| matches!(c.verdict, Verdict::Pass | Verdict::Skipped))
    }

    pub fn count(&self, v: Verdict) -> usize {
        self.claims.iter().filter(|c| c.verdict == v).count()
    }
}

fn check(claim: &str, verdict: Verdict, margin: f64, detail: String) -> ClaimCheck {
    ClaimCheck {
        claim: claim.to_string(),
        verdict,
        margin,
        detail,
    }
}

fn skipped(claim: &str, why: &str) -> ClaimCheck {
    check(claim, Verdict::Skipped, f64::NAN, why.to_string())
}

fn pass_if(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

pub const CLAIM_PROP1: &str = "prop1_fever_peak";
pub const CLAIM_PROP1_MIRROR: &str = "prop1_depression_trough";
pub const CLAIM_PROP2: &str = "prop2_broad_peak";
pub const CLAIM_REMARK1: &str = "remark1_faster_rise";
pub const CLAIM_REMARK2: &str = "remark2_lower_peak";
pub const CLAIM_ORDERING: &str = "ordering_chain";

/// Interior local extrema of the price standing out from `P0` by more than
/// [`PEAK_PROMINENCE`]; maxima for `sign = 1`, minima for `sign = -1`.
pub fn count_price_extrema(traj: &MarketTrajectory, sign: f64) -> usize {
    let p0 = traj.curve.p0;
    let ps: Vec<f64> = traj.nodes.iter().map(|n| sign * n.state.p).collect();
    let level = sign * p0 + PEAK_PROMINENCE * p0;
    ps.windows(3)
        .filter(|w| w[1] > w[0] && w[1] >= w[2] && w[1] > level)
        .count()
}

fn check_prop1(primary: &MarketTrajectory, timeline: &EventTimeline) -> ClaimCheck {
    let (name, sign) = match primary.scenario {
        Scenario::Depression => (CLAIM_PROP1_MIRROR, -1.0),
        _ => (CLAIM_PROP1, 1.0),
    };
    if !timeline.boom {
        return skipped(name, "no outbreak, no price cycle");
    }
    let p0 = primary.curve.p0;
    let p_end = primary.last().state.p;
    let drift = sign * (p_end - p0);
    let long_run_ok = drift >= 0.0 && drift <= LONG_RUN_BAND * p0;
    let extrema = count_price_extrema(primary, sign);
    let lead = timeline
        .ordering
        .tp_before_ti
        .unwrap_or(Verdict::Inconclusive);
    let lead_gap = match (timeline.t_p_star_m, timeline.t_i_star) {
        (Some(tp), Some(ti)) => ti - tp - timeline.dt,
        _ => f64::NAN,
    };
    let verdict = Verdict::combine([pass_if(long_run_ok), pass_if(extrema == 1), lead]);
    check(
        name,
        verdict,
        lead_gap.min(LONG_RUN_BAND * p0 - drift.abs()),
        format!(
            "P(t_end) - P0 = {:e}; interior extrema = {extrema}; t_I* - t_P* - dt = {lead_gap:e}",
            p_end - p0
        ),
    )
}

fn check_prop2(rational: &MarketTrajectory) -> ClaimCheck {
    let Some(meta) = rational.plateau else {
        return check(
            CLAIM_PROP2,
            Verdict::Fail,
            f64::NAN,
            "no plateau metadata".into(),
        );
    };
    let p_star = meta.p_star;
    let supply = excess_supply(p_star, &rational.curve).unwrap_or(f64::NAN);
    let mut worst_flat: f64 = 0.0;
    let mut worst_clear: f64 = 0.0;
    let mut plateau_nodes = 0usize;
    for n in rational.nodes.iter().filter(|n| n.phase == Phase::Plateau) {
        plateau_nodes += 1;
        worst_flat = worst_flat.max((n.state.p - p_star).abs() / p_star);
        worst_clear = worst_clear.max((supply - n.state.x).abs() / supply.abs().max(1.0));
    }
    let overshoot = rational
        .nodes
        .iter()
        .map(|n| (n.state.p - p_star) / p_star)
        .fold(f64::NEG_INFINITY, f64::max);
    let ok = plateau_nodes > 0
        && meta.t2 > meta.t1
        && worst_flat <= PLATEAU_FLATNESS
        && worst_clear <= PLATEAU_FLATNESS
        && overshoot <= PLATEAU_FLATNESS;
    check(
        CLAIM_PROP2,
        pass_if(ok),
        PLATEAU_FLATNESS - worst_flat.max(worst_clear).max(overshoot),
        format!(
            "{plateau_nodes} plateau nodes; max |P-P*|/P* = {worst_flat:e}; clearing {worst_clear:e}; overshoot {overshoot:e}"
        ),
    )
}

fn check_remark1(myopic: &MarketTrajectory, rational: &MarketTrajectory) -> ClaimCheck {
    let Some(meta) = rational.plateau else {
        return check(
            CLAIM_REMARK1,
            Verdict::Fail,
            f64::NAN,
            "no plateau metadata".into(),
        );
    };
    let dt = myopic.grid.dt();
    let warmup = DOMINANCE_WARMUP_STEPS * dt;
    let mut min_gap = f64::INFINITY;
    let mut ok = true;
    let mut checked = 0usize;
    for (m, r) in myopic.nodes.iter().zip(&rational.nodes) {
        if m.t <= 0.0 || m.t > meta.t1 {
            continue;
        }
        checked += 1;
        let gap = r.state.p - m.state.p;
        if m.t > warmup {
            min_gap = min_gap.min(gap);
            ok &= gap > 0.0;
        } else {
            ok &= gap >= 0.0;
        }
    }
    check(
        CLAIM_REMARK1,
        pass_if(ok && checked > 0),
        min_gap,
        format!("{checked} nodes on (0, t1]; min P_RE - P_M beyond warm-up = {min_gap:e}"),
    )
}

fn check_remark2(timeline: &EventTimeline) -> ClaimCheck {
    match (timeline.p_star_re, timeline.p_star_m) {
        (Some(re), Some(m)) => check(
            CLAIM_REMARK2,
            pass_if(re < m),
            m - re,
            format!("P*_RE = {re}, P*_M = {m}"),
        ),
        _ => check(
            CLAIM_REMARK2,
            Verdict::Fail,
            f64::NAN,
            "peak prices missing".into(),
        ),
    }
}

fn check_ordering(timeline: &EventTimeline) -> ClaimCheck {
    let (Some(t1), Some(tp), Some(t2), Some(ti)) = (
        timeline.t1,
        timeline.t_p_star_m,
        timeline.t2,
        timeline.t_i_star,
    ) else {
        return check(
            CLAIM_ORDERING,
            Verdict::Fail,
            f64::NAN,
            "event times missing".into(),
        );
    };
    // Recomputed from the times so a tampered verdict cannot pass.
    let dt = timeline.dt;
    let chain = [
        Verdict::strictly_before(t1, tp, dt),
        Verdict::strictly_before(tp, t2, dt),
        Verdict::strictly_before(t2, ti, dt),
    ];
    let min_gap = (tp - t1).min(t2 - tp).min(ti - t2) - dt;
    check(
        CLAIM_ORDERING,
        Verdict::combine(chain),
        min_gap,
        format!("t1 = {t1}, t_P* = {tp}, t2 = {t2}, t_I* = {ti}"),
    )
}

/// Checks the fever-peak, broad-peak and comparison claims on a run.
///
/// `primary` is the myopic run (or the depression run, which gets the
/// mirrored fever-peak check only).
pub fn check_propositions(
    primary: &MarketTrajectory,
    rational: Option<&MarketTrajectory>,
    timeline: &EventTimeline,
) -> PropertyReport {
    let mut claims = vec![check_prop1(primary, timeline)];
    if primary.scenario == Scenario::Depression {
        return PropertyReport { claims };
    }
    let reason = if !timeline.boom {
        Some("no outbreak, no plateau")
    } else if rational.is_none() {
        Some("rational scenario not run")
    } else {
        None
    };
    match (reason, rational) {
        (None, Some(re)) => {
            claims.push(check_prop2(re));
            claims.push(check_remark1(primary, re));
            claims.push(check_remark2(timeline));
            claims.push(check_ordering(timeline));
        }
        (why, _) => {
            let why = why.unwrap_or("rational scenario not run");
            for c in [CLAIM_PROP2, CLAIM_REMARK1, CLAIM_REMARK2, CLAIM_ORDERING] {
                claims.push(skipped(c, why));
            }
        }
    }
    PropertyReport { claims }
}

/// First time the price reaches `level`, linearly interpolated between nodes.
pub fn first_crossing(traj: &MarketTrajectory, level: f64) -> Option<f64> {
    let nodes = &traj.nodes;
    if nodes.first()?.state.p >= level {
        return Some(nodes[0].t);
    }
    nodes.windows(2).find_map(|w| {
        let (a, b) = (w[0].state.p, w[1].state.p);
        (a < level && b >= level).then(|| w[0].t + (level - a) / (b - a) * (w[1].t - w[0].t))
    })
}

/// Which scenarios a run includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub myopic: bool,
    pub depression: bool,
    pub rational: bool,
}

impl ScenarioSet {
    pub const ALL: Self = Self {
        myopic: true,
        depression: true,
        rational: true,
    };
    pub const BOOM: Self = Self {
        myopic: true,
        depression: false,
        rational: true,
    };

    pub fn only(s: Scenario) -> Self {
        Self {
            myopic: s == Scenario::Myopic,
            depression: s == Scenario::Depression,
            rational: s == Scenario::Rational,
        }
    }
}

/// Everything computed for one parameter point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub params: EpidemicParams,
    pub curve: SupplyCurve,
    /// Grid actually used, after any automatic refinement.
    pub grid: Grid,
    pub refinements: usize,
    pub peak: InfectionPeak,
    pub myopic: Option<MarketTrajectory>,
    pub rational: Option<MarketTrajectory>,
    pub plateau: Option<PlateauSolution>,
    pub depression: Option<MarketTrajectory>,
    pub timeline: Option<EventTimeline>,
    pub depression_timeline: Option<EventTimeline>,
    pub report: PropertyReport,
}

impl Evaluation {
    /// Time to reach `(P0 + P*_RE)/2` under M and under RE.
    pub fn half_rise_times(&self) -> Option<(f64, f64)> {
        let (m, re, sol) = (
            self.myopic.as_ref()?,
            self.rational.as_ref()?,
            self.plateau?,
        );
        let level = 0.5 * (self.curve.p0 + sol.p_star);
        Some((first_crossing(m, level)?, first_crossing(re, level)?))
    }

    fn inconclusive(&self) -> bool {
        self.timeline.is_some_and(|t| t.ordering.any_inconclusive())
            || self
                .depression_timeline
                .is_some_and(|t| t.ordering.any_inconclusive())
    }
}

fn evaluate_once(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    grid: &Grid,
    set: ScenarioSet,
) -> Result<Evaluation> {
    let epi = simulate_epidemic(params, grid)?;
    let peak = infection_peak(params, &epi)?;
    let boom = peak.exists;

    // The rational timeline needs the myopic peak for comparison.
    let myopic = if set.myopic || set.rational {
        Some(simulate_myopic(params, curve, grid)?)
    } else {
        None
    };
    let (rational, plateau) = if set.rational && boom {
        let (t, s) = solve_rational(params, curve, grid)?;
        (Some(t), Some(s))
    } else {
        (None, None)
    };
    let depression = if set.depression {
        Some(simulate_depression(params, curve, grid)?)
    } else {
        None
    };

    let mut report = PropertyReport::default();
    let timeline = match &myopic {
        Some(m) => {
            let tl = build_timeline(m, rational.as_ref(), &peak)?;
            let r = check_propositions(m, rational.as_ref(), &tl);
            report.claims.extend(r.claims.into_iter().filter(|c| {
                // Only report the RE claims when the RE scenario was asked for.
                set.rational || c.claim == CLAIM_PROP1
            }));
            Some(tl)
        }
        None => None,
    };
    let depression_timeline = match &depression {
        Some(d) => {
            let tl = build_timeline(d, None, &peak)?;
            report
                .claims
                .extend(check_propositions(d, None, &tl).claims);
            Some(tl)
        }
        None => None,
    };
    Ok(Evaluation {
        params: *params,
        curve: *curve,
        grid: *grid,
        refinements: 0,
        peak,
        myopic,
        rational,
        plateau,
        depression,
        timeline,
        depression_timeline,
        report,
    })
}

/// Runs the selected scenarios, builds the timelines and checks the claims.
/// An inconclusive ordering verdict triggers up to [`MAX_REFINEMENTS`]
/// reruns at half the step.
pub fn evaluate(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    grid: &Grid,
    set: ScenarioSet,
) -> Result<Evaluation> {
    let mut grid = *grid;
    let mut eval = evaluate_once(params, curve, &grid, set)?;
    let mut refinements = 0;
    while eval.inconclusive() && refinements < MAX_REFINEMENTS {
        grid = grid.halved();
        refinements += 1;
        log::info!("inconclusive ordering, rerunning with dt = {}", grid.dt());
        eval = evaluate_once(params, curve, &grid, set)?;
    }
    eval.refinements = refinements;
    Ok(eval)
}

/// Value lists to sweep; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SweepSpec {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub n1: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl SweepSpec {
    /// 3×3 grid over `β ∈ {2.5e-4, 5e-4, 1e-3}` and `κ ∈ {5, 10, 20}`.
    pub fn default_grid() -> Self {
        Self {
            beta: vec![2.5e-4, 5e-4, 1e-3],
            kappa: vec![5.0, 10.0, 20.0],
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty() && self.gamma.is_empty() && self.n1.is_empty() && self.kappa.is_empty()
    }

    /// Grid points in row-major order (`beta` outermost, `kappa` innermost).
    pub fn points(&self, base: &EpidemicParams, curve: &SupplyCurve) -> Vec<SweepPoint> {
        let or_base = |v: &Vec<f64>, b: f64| if v.is_empty() { vec![b] } else { v.clone() };
        let mut out = Vec::new();
        for &beta in &or_base(&self.beta, base.beta) {
            for &gamma in &or_base(&self.gamma, base.gamma) {
                for &n1 in &or_base(&self.n1, base.n1) {
                    for &kappa in &or_base(&self.kappa, curve.kappa) {
                        out.push(SweepPoint {
                            beta,
                            gamma,
                            n1,
                            kappa,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub gamma: f64,
    pub n1: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Ok,
    NoBoom,
    Error,
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub index: usize,
    pub point: SweepPoint,
    pub status: RowStatus,
    pub error: Option<String>,
    pub dt_used: Option<f64>,
    pub timeline: Option<EventTimeline>,
    pub plateau_width: Option<f64>,
    /// Times to reach `(P0 + P*_RE)/2` under M and RE.
    pub half_rise_m: Option<f64>,
    pub half_rise_re: Option<f64>,
    pub claims: BTreeMap<String, Verdict>,
}

impl SweepResult {
    pub fn all_pass(&self) -> bool {
        self.claims
            .values()
            .all(|v| matches!(v, Verdict::Pass | Verdict::Skipped))
    }
}

/// Comparative-statics reading of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SweepSummary {
    pub rows: usize,
    pub ok: usize,
    pub no_boom: usize,
    pub errors: usize,
    pub claim_passes: usize,
    pub claim_failures: usize,
    pub claim_inconclusive: usize,
    /// Rows where RE reached the half-rise level later than M.
    pub acceleration_violations: Vec<usize>,
    /// Row pairs (lower γ, higher γ) where the plateau did not widen.
    pub width_violations: Vec<(usize, usize)>,
}

fn point_params(
    base: &EpidemicParams,
    curve: &SupplyCurve,
    pt: &SweepPoint,
) -> (EpidemicParams, SupplyCurve) {
    (
        EpidemicParams {
            beta: pt.beta,
            gamma: pt.gamma,
            n1: pt.n1,
            ..*base
        },
        SupplyCurve {
            kappa: pt.kappa,
            ..*curve
        },
    )
}

fn sweep_row(index: usize, point: SweepPoint, outcome: Result<Evaluation>) -> SweepResult {
    let mut row = SweepResult {
        index,
        point,
        status: RowStatus::Ok,
        error: None,
        dt_used: None,
        timeline: None,
        plateau_width: None,
        half_rise_m: None,
        half_rise_re: None,
        claims: BTreeMap::new(),
    };
    match outcome {
        Err(e) => {
            row.status = RowStatus::Error;
            row.error = Some(e.to_string());
        }
        Ok(ev) => {
            row.dt_used = Some(ev.grid.dt());
            row.timeline = ev.timeline;
            if !ev.peak.exists {
                row.status = RowStatus::NoBoom;
            }
            row.plateau_width = ev.plateau.map(|s| s.t2 - s.t1);
            if let Some((m, re)) = ev.half_rise_times() {
                row.half_rise_m = Some(m);
                row.half_rise_re = Some(re);
            }
            row.claims = ev
                .report
                .claims
                .iter()
                .map(|c| (c.claim.clone(), c.verdict))
                .collect();
        }
    }
    row
}

/// Evaluates every grid point on `workers` threads. Rows come back in grid
/// order whatever the scheduling; a failing point is recorded in its row.
pub fn parameter_sweep(
    base: &EpidemicParams,
    curve: &SupplyCurve,
    grid: &Grid,
    spec: &SweepSpec,
    set: ScenarioSet,
    workers: usize,
) -> Result<Vec<SweepResult>> {
    let points = spec.points(base, curve);
    let eval = |(index, pt): (usize, &SweepPoint)| {
        let (params, curve) = point_params(base, curve, pt);
        let outcome = params
            .validate()
            .and_then(|_| curve.validate())
            .and_then(|_| evaluate(&params, &curve, grid, set));
        sweep_row(index, *pt, outcome)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("cannot start sweep workers: {e}")))?;
    Ok(pool.install(|| points.par_iter().enumerate().map(eval).collect()))
}

pub fn summarize_sweep(rows: &[SweepResult]) -> SweepSummary {
    let mut s = SweepSummary {
        rows: rows.len(),
        ..Default::default()
    };
    for r in rows {
        match r.status {
            RowStatus::Ok => s.ok += 1,
            RowStatus::NoBoom => s.no_boom += 1,
            RowStatus::Error => s.errors += 1,
        }
        for v in r.claims.values() {
            match v {
                Verdict::Pass => s.claim_passes += 1,
                Verdict::Fail => s.claim_failures += 1,
                Verdict::Inconclusive => s.claim_inconclusive += 1,
                Verdict::Skipped => {}
            }
        }
        if let (Some(m), Some(re)) = (r.half_rise_m, r.half_rise_re) {
            if re >= m {
                s.acceleration_violations.push(r.index);
            }
        }
    }
    // Plateau width against gamma, other coordinates held fixed.
    let mut groups: BTreeMap<(u64, u64, u64), Vec<&SweepResult>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.plateau_width.is_some()) {
        let key = (
            r.point.beta.to_bits(),
            r.point.n1.to_bits(),
            r.point.kappa.to_bits(),
        );
        groups.entry(key).or_default().push(r);
    }
    for mut g in groups.into_values() {
        g.sort_by(|a, b| a.point.gamma.total_cmp(&b.point.gamma));
        for w in g.windows(2) {
            if w[1].plateau_width <= w[0].plateau_width {
                s.width_violations.push((w[0].index, w[1].index));
            }
        }
    }
    s
}
