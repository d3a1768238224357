//! The acceptance suite behind `epibubble verify`.
//!
//! Every criterion is evaluated on the configured base point (the built-in
//! defaults unless overridden). Criteria that need specific step sizes or a
//! steeper supply curve use them regardless of the configured grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    count_price_extrema, evaluate, parameter_sweep, Evaluation, RowStatus, ScenarioSet,
    SweepResult, SweepSpec, Verdict, CLAIM_ORDERING, CLAIM_PROP1, CLAIM_PROP1_MIRROR,
    CLAIM_REMARK2,
};
use crate::config::{OutputFormat, ScenarioConfig};
use crate::epidemic::{
    first_integral_i, first_integral_r, infection_peak, simulate_epidemic, steady_state_recovered,
    EpidemicParams,
};
use crate::error::{Error, Result};
use crate::market::{
    cohort_quadrature_series, simulate_myopic, MarketTrajectory, Phase, SupplyCurve,
};
use crate::numerics::Grid;
use crate::output::{self, ManifestEntry, TimelineRecord};
use crate::rational::simulate_re_given_t1;

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub measured: String,
}

impl CriterionResult {
    fn new(id: u8, name: &str, pass: bool, measured: String) -> Self {
        Self {
            id,
            name: name.to_string(),
            pass,
            measured,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured
        )
    }
}

/// Supply slope for the depression check; a flat curve lets the short
/// position push the price to zero.
pub const DEPRESSION_KAPPA: f64 = 100.0;
const LONG_RUN_HORIZON: f64 = 4000.0;
const LONG_RUN_DT: f64 = 0.05;

/// Largest `|F(node) - F(0)|` of the two first integrals.
pub fn first_integral_drift(params: &EpidemicParams, grid: &Grid) -> Result<(f64, f64)> {
    let traj = simulate_epidemic(params, grid)?;
    let (mut di, mut dr) = (0.0f64, 0.0f64);
    for s in &traj.states {
        di = di.max((first_integral_i(s, params)? - s.i).abs());
        dr = dr.max((first_integral_r(s, params)? - s.r).abs());
    }
    Ok((di, dr))
}

/// Largest relative gap between the cohort quadrature and the state `x`.
pub fn quadrature_gap(traj: &MarketTrajectory) -> f64 {
    let q = cohort_quadrature_series(traj);
    traj.nodes
        .iter()
        .zip(&q)
        .map(|(n, q)| {
            let x = n.state.x;
            if x == 0.0 && *q == 0.0 {
                0.0
            } else {
                (q - x).abs() / x.abs()
            }
        })
        .fold(0.0, f64::max)
}

fn interior_extrema(values: &[f64]) -> (usize, usize) {
    let maxima = values
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] >= w[2])
        .count();
    let minima = values
        .windows(3)
        .filter(|w| w[1] < w[0] && w[1] <= w[2])
        .count();
    (maxima, minima)
}

struct Context {
    params: EpidemicParams,
    curve: SupplyCurve,
    grid: Grid,
    base: Evaluation,
    sweep: Vec<SweepResult>,
    /// Kept as a result so a floor breach fails only its own criterion.
    depression: Result<Evaluation>,
}

fn c1_conservation(ctx: &Context) -> Result<CriterionResult> {
    let traj = simulate_epidemic(&ctx.params, &ctx.grid)?;
    let n = ctx.params.total();
    let err = traj
        .states
        .iter()
        .map(|s| (s.total() - n).abs())
        .fold(0.0, f64::max);
    Ok(CriterionResult::new(
        1,
        "conservation",
        err <= 1e-8 * n,
        format!("max |S+I+R-N| = {err:e} (bound {:e})", 1e-8 * n),
    ))
}

fn c2_first_integrals(ctx: &Context) -> Result<CriterionResult> {
    let n = ctx.params.total();
    let t_end = ctx.grid.t_end();
    let (i1, r1) = first_integral_drift(&ctx.params, &Grid::horizon(t_end, 1e-3)?)?;
    let (i2, r2) = first_integral_drift(&ctx.params, &Grid::horizon(t_end, 5e-4)?)?;
    let bound_ok = i1 <= 1e-6 * n && r1 <= 1e-6 * n;
    let (ri, rr) = (i1 / i2, r1 / r2);
    Ok(CriterionResult::new(
        2,
        "first integrals",
        bound_ok && ri >= 8.0 && rr >= 8.0,
        format!("drift at dt=1e-3: I {i1:e}, R {r1:e}; shrink on halving: I {ri:.3}x, R {rr:.3}x (need 8x)"),
    ))
}

/// `R` at the end of a long run, for comparison with the final-size root.
pub fn long_run_recovered(params: &EpidemicParams) -> Result<f64> {
    let traj = simulate_epidemic(params, &Grid::horizon(LONG_RUN_HORIZON, LONG_RUN_DT)?)?;
    Ok(traj.states.last().map(|s| s.r).unwrap_or(f64::NAN))
}

fn c3_final_size(ctx: &Context) -> Result<CriterionResult> {
    let mut worst = 0.0f64;
    let mut points = vec![ctx.params];
    for beta in [2.5e-4, 5e-4, 1e-3] {
        for gamma in [0.05, 0.1, 0.2] {
            points.push(EpidemicParams {
                beta,
                gamma,
                ..ctx.params
            });
        }
    }
    for p in &points {
        let root = steady_state_recovered(p, 1e-12)?;
        let long = long_run_recovered(p)?;
        worst = worst.max((root - long).abs() / long.abs().max(f64::MIN_POSITIVE));
    }
    Ok(CriterionResult::new(
        3,
        "final size",
        worst <= 1e-5,
        format!(
            "worst relative gap over {} points = {worst:e}",
            points.len()
        ),
    ))
}

fn c4_infection_peak(ctx: &Context) -> Result<CriterionResult> {
    let traj = simulate_epidemic(&ctx.params, &ctx.grid)?;
    let peak = infection_peak(&ctx.params, &traj)?;
    let k = ctx.params.threshold()?;
    let gap = (peak.s_star - k).abs();
    let is: Vec<f64> = traj.states.iter().map(|s| s.i).collect();
    let (maxima, minima) = interior_extrema(&is);
    let sub = EpidemicParams {
        gamma: 1.2 * ctx.params.beta * ctx.params.n1,
        ..ctx.params
    };
    let sub_peak = infection_peak(&sub, &simulate_epidemic(&sub, &ctx.grid)?)?;
    Ok(CriterionResult::new(
        4,
        "infection peak",
        peak.exists && gap <= 1e-4 * k && maxima == 1 && minima == 0 && !sub_peak.exists,
        format!(
            "|S(t_I*) - γ/β| = {gap:e} (bound {:e}); I maxima {maxima}, minima {minima}; subcritical peak reported: {}",
            1e-4 * k,
            sub_peak.exists
        ),
    ))
}

fn row_verdict(row: &SweepResult, claim: &str) -> Verdict {
    row.claims.get(claim).copied().unwrap_or(Verdict::Fail)
}

fn sweep_claim(ctx: &Context, claim: &str) -> (usize, Vec<usize>) {
    let boom: Vec<&SweepResult> = ctx
        .sweep
        .iter()
        .filter(|r| r.status == RowStatus::Ok)
        .collect();
    let bad = ctx
        .sweep
        .iter()
        .filter(|r| {
            r.status == RowStatus::Error
                || (r.status == RowStatus::Ok && row_verdict(r, claim) != Verdict::Pass)
        })
        .map(|r| r.index)
        .collect();
    (boom.len(), bad)
}

fn c5_fever_peak(ctx: &Context) -> Result<CriterionResult> {
    let base = ctx.base.report.verdict(CLAIM_PROP1) == Some(Verdict::Pass);
    let (boom, bad) = sweep_claim(ctx, CLAIM_PROP1);
    Ok(CriterionResult::new(
        5,
        "fever peak",
        base && boom >= 9 && bad.is_empty(),
        format!(
            "defaults {}; {boom} boom sweep points, failing rows {bad:?}",
            pass_word(base)
        ),
    ))
}

fn c6_kernel_oracle(ctx: &Context) -> Result<CriterionResult> {
    let t_end = ctx.grid.t_end();
    let e1 = quadrature_gap(&simulate_myopic(
        &ctx.params,
        &ctx.curve,
        &Grid::horizon(t_end, 1e-2)?,
    )?);
    let e2 = quadrature_gap(&simulate_myopic(
        &ctx.params,
        &ctx.curve,
        &Grid::horizon(t_end, 5e-3)?,
    )?);
    Ok(CriterionResult::new(
        6,
        "kernel oracle",
        e1 <= 1e-4 && e2 <= 0.5 * e1,
        format!(
            "max relative gap {e1:e} at dt=1e-2, {e2:e} at dt=5e-3 (ratio {:.3})",
            e1 / e2
        ),
    ))
}

fn c7_plateau(ctx: &Context) -> Result<CriterionResult> {
    let (Some(re), Some(sol)) = (&ctx.base.rational, ctx.base.plateau) else {
        return Ok(CriterionResult::new(
            7,
            "plateau closure",
            false,
            "no plateau".into(),
        ));
    };
    let (_, diag) = simulate_re_given_t1(&ctx.params, &ctx.curve, sol.t1, &ctx.base.grid)?;
    let phi = crate::market::excess_supply(sol.p_star, &ctx.curve)?;
    let end = diag.at_end_phase;
    let flow = ctx.params.beta * end.epidemic.i * end.epidemic.s * ctx.params.endowment
        / sol.p_star
        - ctx.params.gamma * end.z;
    let flat = re
        .nodes
        .iter()
        .filter(|n| n.phase == Phase::Plateau)
        .map(|n| (n.state.p - sol.p_star).abs() / sol.p_star)
        .fold(0.0, f64::max);
    let ok =
        end.h.abs() <= 1e-4 * phi && flow.abs() <= 1e-4 * ctx.params.gamma * phi && flat <= 1e-6;
    Ok(CriterionResult::new(
        7,
        "plateau closure",
        ok,
        format!(
            "h(t2) = {:e}, flow(t2) = {flow:e}, flatness = {flat:e}",
            end.h
        ),
    ))
}

fn c8_faster_rise(ctx: &Context) -> Result<CriterionResult> {
    let (Some(m), Some(re), Some(sol)) = (&ctx.base.myopic, &ctx.base.rational, ctx.base.plateau)
    else {
        return Ok(CriterionResult::new(
            8,
            "faster rise",
            false,
            "missing runs".into(),
        ));
    };
    let dt = ctx.base.grid.dt();
    let mut ok = true;
    let mut min_gap = f64::INFINITY;
    for (a, b) in m.nodes.iter().zip(&re.nodes) {
        if a.t <= 0.0 || a.t > sol.t1 {
            continue;
        }
        let gap = b.state.p - a.state.p;
        if a.t > 10.0 * dt {
            ok &= gap > 0.0;
            min_gap = min_gap.min(gap);
        } else {
            ok &= gap >= 0.0;
        }
    }
    Ok(CriterionResult::new(
        8,
        "faster rise",
        ok,
        format!("min P_RE - P_M on (10dt, t1] = {min_gap:e}"),
    ))
}

fn c9_lower_peak(ctx: &Context) -> Result<CriterionResult> {
    let base = ctx.base.report.verdict(CLAIM_REMARK2) == Some(Verdict::Pass);
    let (boom, bad) = sweep_claim(ctx, CLAIM_REMARK2);
    Ok(CriterionResult::new(
        9,
        "lower RE peak",
        base && boom > 0 && bad.is_empty(),
        format!("defaults {}; failing sweep rows {bad:?}", pass_word(base)),
    ))
}

fn c10_ordering(ctx: &Context) -> Result<CriterionResult> {
    let base = ctx.base.report.verdict(CLAIM_ORDERING) == Some(Verdict::Pass);
    let (boom, bad) = sweep_claim(ctx, CLAIM_ORDERING);
    Ok(CriterionResult::new(
        10,
        "ordering chain",
        base && boom > 0 && bad.is_empty(),
        format!("defaults {}; failing sweep rows {bad:?}", pass_word(base)),
    ))
}

fn c11_depression(ctx: &Context) -> Result<CriterionResult> {
    let ev = match &ctx.depression {
        Ok(ev) => ev,
        Err(e) => {
            return Ok(CriterionResult::new(
                11,
                "depression mirror",
                false,
                format!("kappa={DEPRESSION_KAPPA}: engine error: {e}"),
            ))
        }
    };
    let Some(d) = &ev.depression else {
        return Ok(CriterionResult::new(
            11,
            "depression mirror",
            false,
            "missing run".into(),
        ));
    };
    let verdict = ev.report.verdict(CLAIM_PROP1_MIRROR);
    let minima = count_price_extrema(d, -1.0);
    let maxima = count_price_extrema(d, 1.0);
    let p_end = d.last().state.p;
    let ok = verdict == Some(Verdict::Pass) && minima == 1 && maxima == 0;
    Ok(CriterionResult::new(
        11,
        "depression mirror",
        ok,
        format!(
            "kappa={DEPRESSION_KAPPA}: trough before infection peak {}; P(t_end) - P0 = {:e}; interior minima {minima}",
            pass_word(verdict == Some(Verdict::Pass)),
            p_end - d.curve.p0
        ),
    ))
}

/// `(t_P*, t1)` for each step size.
pub fn event_times(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    t_end: f64,
    dts: &[f64],
) -> Result<Vec<(f64, f64)>> {
    dts.iter()
        .map(|&dt| {
            let ev = evaluate(params, curve, &Grid::horizon(t_end, dt)?, ScenarioSet::BOOM)?;
            let tl = ev
                .timeline
                .ok_or_else(|| Error::Consistency("no timeline".into()))?;
            match (tl.t_p_star_m, tl.t1) {
                (Some(tp), Some(t1)) => Ok((tp, t1)),
                _ => Err(Error::Consistency("event times missing".into())),
            }
        })
        .collect()
}

fn c12_convergence(ctx: &Context) -> Result<CriterionResult> {
    let t = event_times(
        &ctx.params,
        &ctx.curve,
        ctx.grid.t_end(),
        &[2e-2, 1e-2, 5e-3],
    )?;
    let d = |k: usize, f: fn(&(f64, f64)) -> f64| (f(&t[k]) - f(&t[k + 1])).abs();
    let (p1, p2) = (d(0, |x| x.0), d(1, |x| x.0));
    let (q1, q2) = (d(0, |x| x.1), d(1, |x| x.1));
    Ok(CriterionResult::new(
        12,
        "event-time convergence",
        p2 <= 0.5 * p1 && q2 <= 0.5 * q1,
        format!("t_P* differences {p1:e} -> {p2:e}; t1 differences {q1:e} -> {q2:e}"),
    ))
}

fn c13_determinism(ctx: &Context) -> Result<CriterionResult> {
    let again = evaluate(&ctx.params, &ctx.curve, &ctx.grid, ScenarioSet::BOOM)?;
    let same_runs = again.myopic == ctx.base.myopic
        && again.rational == ctx.base.rational
        && again.timeline == ctx.base.timeline;
    let spec = SweepSpec::default_grid();
    let serial = parameter_sweep(
        &ctx.params,
        &ctx.curve,
        &ctx.grid,
        &spec,
        ScenarioSet::BOOM,
        1,
    )?;
    let same_sweep = serial == ctx.sweep;
    Ok(CriterionResult::new(
        13,
        "determinism",
        same_runs && same_sweep,
        format!(
            "repeat run identical: {same_runs}; sweep 1 worker vs pool identical: {same_sweep}"
        ),
    ))
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

/// Results of a suite run together with the files it wrote.
#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub criteria: Vec<CriterionResult>,
    pub manifest: Vec<ManifestEntry>,
    pub timeline: Option<TimelineRecord>,
}

impl VerifyOutcome {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }
}

/// Runs every criterion and writes its data artifacts into `out_dir`.
pub fn run_suite(cfg: &ScenarioConfig, workers: usize, out_dir: &Path) -> Result<VerifyOutcome> {
    let grid = cfg.grid()?;
    let (params, curve) = (cfg.params, cfg.curve);
    let base = evaluate(&params, &curve, &grid, ScenarioSet::BOOM)?;
    let sweep = parameter_sweep(
        &params,
        &curve,
        &grid,
        &SweepSpec::default_grid(),
        ScenarioSet::BOOM,
        workers,
    )?;
    let steep = SupplyCurve {
        kappa: DEPRESSION_KAPPA,
        ..curve
    };
    let depression = evaluate(
        &params,
        &steep,
        &grid,
        ScenarioSet::only(crate::market::Scenario::Depression),
    );
    let ctx = Context {
        params,
        curve,
        grid,
        base,
        sweep,
        depression,
    };

    let checks: [fn(&Context) -> Result<CriterionResult>; 13] = [
        c1_conservation,
        c2_first_integrals,
        c3_final_size,
        c4_infection_peak,
        c5_fever_peak,
        c6_kernel_oracle,
        c7_plateau,
        c8_faster_rise,
        c9_lower_peak,
        c10_ordering,
        c11_depression,
        c12_convergence,
        c13_determinism,
    ];
    let mut criteria = Vec::with_capacity(checks.len());
    for (k, check) in checks.iter().enumerate() {
        let result = check(&ctx).unwrap_or_else(|e| {
            CriterionResult::new(k as u8 + 1, "error", false, format!("engine error: {e}"))
        });
        log::info!("{}", result.line());
        criteria.push(result);
    }

    let mut manifest = Vec::new();
    let bust = ctx
        .depression
        .as_ref()
        .ok()
        .and_then(|ev| ev.depression.as_ref());
    for traj in [ctx.base.myopic.as_ref(), ctx.base.rational.as_ref(), bust]
        .into_iter()
        .flatten()
    {
        let stem = match traj.scenario {
            crate::market::Scenario::Depression => format!("depression_kappa{DEPRESSION_KAPPA}"),
            s => s.name().to_string(),
        };
        manifest.push(output::write_timeseries(
            traj,
            OutputFormat::Csv,
            &out_dir.join(format!("{stem}.csv")),
        )?);
        manifest.push(output::write_dat(
            traj,
            &out_dir.join(format!("{stem}.dat")),
        )?);
    }
    let timeline = ctx
        .base
        .timeline
        .map(|tl| TimelineRecord::new(&tl, &ctx.base.report));
    if let Some(tl) = &timeline {
        manifest.push(output::write_json(
            tl,
            "timeline/json",
            &out_dir.join("timeline.json"),
        )?);
    }
    manifest.push(output::write_sweep_table(
        &ctx.sweep,
        &out_dir.join("sweep_summary.csv"),
    )?);
    manifest.push(write_verify_table(&criteria, &out_dir.join("verify.csv"))?);
    Ok(VerifyOutcome {
        criteria,
        manifest,
        timeline,
    })
}

fn write_verify_table(criteria: &[CriterionResult], path: &Path) -> Result<ManifestEntry> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
    for c in criteria {
        w.serialize(c).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(ManifestEntry {
        path: path.to_path_buf(),
        kind: "verify/csv".into(),
        rows: Some(criteria.len()),
    })
}
