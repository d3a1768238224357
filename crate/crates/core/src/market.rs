//! The speculative asset market driven by the contagion.
//!
//! Each newly infected agent spends its endowment `w` on the asset at the
//! current price, and each cured agent sells. A cohort infected at time `v`
//! decays at rate `γ`, so the shares held by all infected cohorts
//!
//! ```text
//! X(t) = β ∫₀ᵗ w·I(v)S(v)/P(v) · e^{-γ(t-v)} dv
//! ```
//!
//! obey the state equation `X' = β I S w / P - γ X`. The price clears the
//! excess supply curve, `φ(P) = X`.

use serde::{Deserialize, Serialize};

use crate::epidemic::{sir_derivatives, EpidemicParams, EpidemicState};
use crate::error::{Error, Result};
use crate::numerics::{integrate_fixed_step, locate_in_step, Grid};

/// Shape of the excess supply map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SupplyForm {
    /// `φ(P) = κ (P - P0)`.
    #[default]
    Linear,
}

/// Excess supply `φ`: increasing, with `φ(P0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupplyCurve {
    pub p0: f64,
    pub kappa: f64,
    pub form: SupplyForm,
}

impl Default for SupplyCurve {
    fn default() -> Self {
        Self {
            p0: 1.0,
            kappa: 10.0,
            form: SupplyForm::Linear,
        }
    }
}

impl SupplyCurve {
    pub fn linear(p0: f64, kappa: f64) -> Result<Self> {
        let c = Self {
            p0,
            kappa,
            form: SupplyForm::Linear,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p0.is_finite() && self.p0 > 0.0) {
            return Err(Error::InvalidParameter {
                field: "p0",
                reason: format!("must be finite and > 0, got {}", self.p0),
            });
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::InvalidParameter {
                field: "kappa",
                reason: format!("must be finite and > 0, got {}", self.kappa),
            });
        }
        Ok(())
    }

    /// Holdings at which the clearing price would hit zero.
    pub fn floor(&self) -> f64 {
        match self.form {
            SupplyForm::Linear => -self.kappa * self.p0,
        }
    }
}

/// `φ(p)`.
pub fn excess_supply(p: f64, curve: &SupplyCurve) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::Domain(format!("price must be > 0, got {p}")));
    }
    Ok(match curve.form {
        SupplyForm::Linear => curve.kappa * (p - curve.p0),
    })
}

/// `φ⁻¹(x)`; the linear form inverts in closed form.
pub fn clearing_price(x: f64, curve: &SupplyCurve) -> Result<f64> {
    clearing_price_at(x, curve, f64::NAN)
}

pub(crate) fn clearing_price_at(x: f64, curve: &SupplyCurve, t: f64) -> Result<f64> {
    let floor = curve.floor();
    if !(x > floor) {
        return Err(Error::PriceFloor { x, floor, t });
    }
    Ok(match curve.form {
        SupplyForm::Linear => curve.p0 + x / curve.kappa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Cured agents sell at once.
    Myopic,
    /// Infected pessimists short the asset and cover when cured.
    Depression,
    /// Cured agents hold until the top and sell on the plateau.
    Rational,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Myopic => "myopic",
            Scenario::Depression => "depression",
            Scenario::Rational => "rational",
        }
    }

    /// +1 when infected agents buy, -1 when they sell short.
    pub(crate) fn demand_sign(&self) -> f64 {
        match self {
            Scenario::Depression => -1.0,
            _ => 1.0,
        }
    }
}

/// Phase tag of a node in the rational scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Plateau,
    Post,
    Na,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::Plateau => "plateau",
            Phase::Post => "post",
            Phase::Na => "na",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pre" => Phase::Pre,
            "plateau" => Phase::Plateau,
            "post" => Phase::Post,
            "na" => Phase::Na,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub epidemic: EpidemicState,
    /// Speculative holdings.
    pub x: f64,
    /// Clearing price.
    pub p: f64,
}

/// Split of rational-scenario holdings: `z` held by the infected, `h` by cured
/// agents waiting for the top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldingsSplit {
    pub z: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketNode {
    pub t: f64,
    pub state: MarketState,
    pub phase: Phase,
    pub split: Option<HoldingsSplit>,
}

/// Plateau endpoints attached to a rational trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauMeta {
    pub t1: f64,
    pub t2: f64,
    pub p_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketTrajectory {
    pub params: EpidemicParams,
    pub curve: SupplyCurve,
    pub grid: Grid,
    pub scenario: Scenario,
    pub nodes: Vec<MarketNode>,
    pub plateau: Option<PlateauMeta>,
}

impl MarketTrajectory {
    pub fn price_samples(&self) -> Vec<(f64, f64)> {
        self.nodes.iter().map(|n| (n.t, n.state.p)).collect()
    }

    pub fn infected_samples(&self) -> Vec<(f64, f64)> {
        self.nodes
            .iter()
            .map(|n| (n.t, n.state.epidemic.i))
            .collect()
    }

    pub fn last(&self) -> &MarketNode {
        self.nodes
            .last()
            .expect("trajectory always holds the initial node")
    }

    /// Price at grid node `k`.
    pub fn price(&self, k: usize) -> f64 {
        self.nodes[k].state.p
    }

    /// Checks that two trajectories describe the same economy on the same grid.
    pub fn ensure_compatible(&self, other: &MarketTrajectory) -> Result<()> {
        if self.params != other.params || self.grid != other.grid {
            return Err(Error::Consistency(format!(
                "{} and {} trajectories differ in parameters or grid",
                self.scenario.name(),
                other.scenario.name()
            )));
        }
        Ok(())
    }
}

/// Vector field of `(S, I, R, X)` with infected demand of sign `sign`.
pub(crate) fn holdings_field(
    params: EpidemicParams,
    curve: SupplyCurve,
    sign: f64,
) -> impl FnMut(f64, &[f64; 4]) -> Result<[f64; 4]> {
    move |t, y| {
        clearing_price_at(y[3], &curve, t)?;
        let p = clearing_price(sign * y[3], &curve)?;
        let [ds, di, dr] = sir_derivatives(&EpidemicState::from_slice(y), &params);
        let buying = params.beta * y[1] * y[0] * params.endowment / p;
        Ok([ds, di, dr, sign * buying - params.gamma * y[3]])
    }
}

/// `X'` at state `y = (S, I, R, X)`.
fn holdings_flow(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    sign: f64,
    y: &[f64; 4],
) -> Result<f64> {
    let p = clearing_price(sign * y[3], curve)?;
    Ok(sign * params.beta * y[1] * y[0] * params.endowment / p - params.gamma * y[3])
}

fn simulate_holdings(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    grid: &Grid,
    scenario: Scenario,
) -> Result<MarketTrajectory> {
    params.validate()?;
    curve.validate()?;
    let st0 = params.initial_state();
    let y0 = [st0.s, st0.i, st0.r, 0.0];
    let ys = integrate_fixed_step(
        holdings_field(*params, *curve, scenario.demand_sign()),
        y0,
        grid,
    )?;
    let nodes = ys
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let t = grid.time(k);
            Ok(MarketNode {
                t,
                state: MarketState {
                    epidemic: EpidemicState::from_slice(y),
                    x: y[3],
                    p: clearing_price_at(y[3], curve, t)?,
                },
                phase: Phase::Na,
                split: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MarketTrajectory {
        params: *params,
        curve: *curve,
        grid: *grid,
        scenario,
        nodes,
        plateau: None,
    })
}

/// Scenario M: cured agents sell immediately.
pub fn simulate_myopic(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    grid: &Grid,
) -> Result<MarketTrajectory> {
    simulate_holdings(params, curve, grid, Scenario::Myopic)
}

/// Mirror of scenario M: infected pessimists short and cover on recovery.
///
/// Each new pessimist shorts `w/P̃` shares, where `P̃ = φ⁻¹(-X)` is the price
/// the mirrored boom would have reached. The position is then exactly `-X`
/// of the boom run, so `X' = -β I S w / φ⁻¹(-X) - γ X` and `P = φ⁻¹(X) ≤ P0`.
pub fn simulate_depression(
    params: &EpidemicParams,
    curve: &SupplyCurve,
    grid: &Grid,
) -> Result<MarketTrajectory> {
    simulate_holdings(params, curve, grid, Scenario::Depression)
}

/// Trapezoidal quadrature of the cohort integral
/// `β ∫₀ᵗ w I(v)S(v)/P(v) e^{-γ(t-v)} dv` from the stored samples.
///
/// For the myopic and depression scenarios this reproduces the state `X`
/// (with the depression sign); for the rational scenario it reproduces the
/// infected holdings `z`.
pub fn cohort_holdings_quadrature(
    trajectory: &MarketTrajectory,
    params: &EpidemicParams,
    t: f64,
) -> Result<f64> {
    if trajectory.params != *params {
        return Err(Error::Consistency(
            "trajectory was simulated with different parameters".into(),
        ));
    }
    let k_end = trajectory
        .grid
        .index_of(t)
        .ok_or_else(|| Error::Domain(format!("t = {t} is not a grid node")))?;
    Ok(cohort_quadrature_series(trajectory)[k_end])
}

/// Quadrature of the cohort integral at every node.
pub fn cohort_quadrature_series(trajectory: &MarketTrajectory) -> Vec<f64> {
    let p = &trajectory.params;
    let sign = trajectory.scenario.demand_sign();
    let curve = trajectory.curve;
    let integrand = |n: &MarketNode| {
        let e = &n.state.epidemic;
        let price = match trajectory.scenario {
            Scenario::Depression => clearing_price(-n.state.x, &curve).unwrap_or(f64::NAN),
            _ => n.state.p,
        };
        sign * p.beta * e.i * e.s * p.endowment / price
    };
    let mut out = Vec::with_capacity(trajectory.nodes.len());
    let mut acc = 0.0;
    out.push(acc);
    for w in trajectory.nodes.windows(2) {
        let h = w[1].t - w[0].t;
        let decay = (-p.gamma * h).exp();
        acc = acc * decay + 0.5 * h * (integrand(&w[0]) * decay + integrand(&w[1]));
        out.push(acc);
    }
    out
}

/// Price extremum of a myopic (maximum) or depression (minimum) run, located
/// where the holdings flow `X'` changes sign, by root-finding inside the RK4
/// step that brackets the discrete extremum.
pub fn locate_price_extremum(trajectory: &MarketTrajectory) -> Result<(f64, f64)> {
    let sign = match trajectory.scenario {
        Scenario::Myopic => 1.0,
        Scenario::Depression => -1.0,
        Scenario::Rational => {
            return Err(Error::Domain(
                "the rational price path has a plateau, not an isolated extremum".into(),
            ))
        }
    };
    let nodes = &trajectory.nodes;
    let k = nodes
        .iter()
        .enumerate()
        .max_by(|a, b| (sign * a.1.state.p).total_cmp(&(sign * b.1.state.p)))
        .map(|(k, _)| k)
        .expect("non-empty trajectory");
    if k == 0 || k + 1 == nodes.len() {
        return Err(Error::BoundaryExtremum { index: k });
    }
    let params = trajectory.params;
    let curve = trajectory.curve;
    // Scaled flow is positive while the price moves away from P0.
    let away = |y: &[f64; 4]| sign * holdings_flow(&params, &curve, sign, y).unwrap_or(f64::NAN);
    let as_array = |n: &MarketNode| {
        let e = n.state.epidemic;
        [e.s, e.i, e.r, n.state.x]
    };
    let start = if away(&as_array(&nodes[k])) > 0.0 {
        k
    } else {
        k - 1
    };
    let y = as_array(&nodes[start]);
    let t = nodes[start].t;
    let h = nodes[start + 1].t - t;

    let mut field = holdings_field(params, curve, sign);
    let (s, y_star) = locate_in_step(&mut field, t, &y, h, away)?;
    Ok((t + s, clearing_price_at(y_star[3], &curve, t + s)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::invert_monotone;

    #[test]
    fn supply_examples() {
        let c = SupplyCurve::default();
        assert_eq!(excess_supply(1.0, &c).unwrap(), 0.0);
        assert_eq!(excess_supply(1.5, &c).unwrap(), 5.0);
        assert!(matches!(excess_supply(0.0, &c), Err(Error::Domain(_))));
        assert!(SupplyCurve::linear(1.0, 0.0).is_err());
    }

    #[test]
    fn clearing_examples() {
        let c = SupplyCurve::default();
        assert_eq!(clearing_price(0.0, &c).unwrap(), 1.0);
        assert_eq!(clearing_price(5.0, &c).unwrap(), 1.5);
        assert_eq!(clearing_price(-5.0, &c).unwrap(), 0.5);
        assert!(matches!(
            clearing_price(-10.0, &c),
            Err(Error::PriceFloor { .. })
        ));
    }

    #[test]
    fn clearing_matches_generic_inversion() {
        let c = SupplyCurve::linear(1.3, 7.0).unwrap();
        for x in [-9.0, -1.0, 0.0, 0.5, 12.0, 400.0] {
            let closed = clearing_price(x, &c).unwrap();
            let generic = invert_monotone(|p| c.kappa * (p - c.p0), x, 1e-12, 1e6, 1e-13).unwrap();
            assert!(
                (closed - generic).abs() <= 1e-9 * closed.max(1.0),
                "{x}: {closed} vs {generic}"
            );
            assert!((excess_supply(closed, &c).unwrap() - x).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn frozen_markets_stay_at_p0() {
        let grid = Grid::horizon(100.0, 0.1).unwrap();
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
            for tr in [
                simulate_myopic(&p, &c, &grid).unwrap(),
                simulate_depression(&p, &c, &grid).unwrap(),
            ] {
                assert!(tr
                    .nodes
                    .iter()
                    .all(|n| n.state.p == 1.0 && n.state.x == 0.0));
            }
        }
    }

    #[test]
    fn quadrature_rejects_off_grid_time() {
        let grid = Grid::horizon(10.0, 0.1).unwrap();
        let p = EpidemicParams::default();
        let tr = simulate_myopic(&p, &SupplyCurve::default(), &grid).unwrap();
        assert_eq!(cohort_holdings_quadrature(&tr, &p, 0.0).unwrap(), 0.0);
        assert!(matches!(
            cohort_holdings_quadrature(&tr, &p, 0.05),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn depression_floor_is_an_error() {
        let grid = Grid::horizon(300.0, 0.01).unwrap();
        let c = SupplyCurve::linear(1.0, 1.0).unwrap();
        let err = simulate_depression(&EpidemicParams::default(), &c, &grid).unwrap_err();
        assert!(matches!(err, Error::PriceFloor { .. }), "{err:?}");
    }

    #[test]
    fn depression_mirrors_the_boom_bit_for_bit() {
        let grid = Grid::horizon(300.0, 0.01).unwrap();
        let p = EpidemicParams::default();
        let c = SupplyCurve::linear(1.0, 1000.0).unwrap();
        let boom = simulate_myopic(&p, &c, &grid).unwrap();
        let bust = simulate_depression(&p, &c, &grid).unwrap();
        for (a, b) in boom.nodes.iter().zip(&bust.nodes) {
            assert_eq!(a.state.x, -b.state.x);
            assert!(((a.state.p - c.p0) - (c.p0 - b.state.p)).abs() < 1e-15);
        }
        let (tp, _) = locate_price_extremum(&boom).unwrap();
        let (tt, _) = locate_price_extremum(&bust).unwrap();
        assert_eq!(tp, tt);
    }
}
