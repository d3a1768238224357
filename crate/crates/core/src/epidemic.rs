//! SIR contagion of an investment idea.
//!
//! Susceptible agents `S` catch the idea from infected agents `I` at rate
//! `β·I·S` and drop it at rate `γ·I`, joining the recovered mass `R`:
//!
//! ```text
//! S' = -β I S,   I' = β I S - γ I,   R' = γ I,   S + I + R = N
//! ```
//!
//! Besides the integrator this module carries the two first integrals of the
//! system, the final-size solver and the infection-peak detector.

use serde::{Deserialize, Serialize};

use crate::analysis::{refine_peak, PeakMode};
use crate::error::{Error, Result};
use crate::numerics::{find_root_bracketed, integrate_fixed_step, Bracket, Grid};

/// Rates and initial masses of the contagion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpidemicParams {
    /// Transmission rate per agent and unit time.
    pub beta: f64,
    /// Recovery rate per unit time.
    pub gamma: f64,
    /// Initial susceptible mass.
    pub n1: f64,
    /// Initial infected mass.
    pub n2: f64,
    /// Initial recovered mass.
    pub n3: f64,
    /// Currency each agent invests when infected.
    pub endowment: f64,
}

impl Default for EpidemicParams {
    fn default() -> Self {
        Self {
            beta: 5e-4,
            gamma: 0.1,
            n1: 999.0,
            n2: 1.0,
            n3: 0.0,
            endowment: 1.0,
        }
    }
}

impl EpidemicParams {
    /// Validates every field.
    ///
    /// `beta = 0` passes: it is the frozen, contagion-free limit used as a
    /// regression anchor. Operations that need `γ/β` reject it themselves.
    pub fn validate(&self) -> Result<()> {
        fn check(field: &'static str, v: f64, ok: bool, bound: &str) -> Result<()> {
            if v.is_finite() && ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    field,
                    reason: format!("must be finite and {bound}, got {v}"),
                })
            }
        }
        check("beta", self.beta, self.beta >= 0.0, ">= 0")?;
        check("gamma", self.gamma, self.gamma > 0.0, "> 0")?;
        check("n1", self.n1, self.n1 > 0.0, "> 0")?;
        check("n2", self.n2, self.n2 >= 0.0, ">= 0")?;
        check("n3", self.n3, self.n3 >= 0.0, ">= 0")?;
        check("endowment", self.endowment, self.endowment > 0.0, "> 0")
    }

    /// Total population `N = N1 + N2 + N3`.
    pub fn total(&self) -> f64 {
        self.n1 + self.n2 + self.n3
    }

    /// Susceptible threshold `γ/β` below which infections shrink.
    pub fn threshold(&self) -> Result<f64> {
        if self.beta > 0.0 {
            Ok(self.gamma / self.beta)
        } else {
            Err(Error::Domain("gamma/beta undefined for beta = 0".into()))
        }
    }

    /// True when the infected mass has an interior maximum (`N1 > γ/β`, with
    /// someone infected to start it).
    pub fn has_outbreak(&self) -> bool {
        self.beta > 0.0 && self.n2 > 0.0 && self.n1 > self.gamma / self.beta
    }

    pub fn initial_state(&self) -> EpidemicState {
        EpidemicState {
            s: self.n1,
            i: self.n2,
            r: self.n3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpidemicState {
    pub s: f64,
    pub i: f64,
    pub r: f64,
}

impl EpidemicState {
    pub fn total(&self) -> f64 {
        self.s + self.i + self.r
    }

    pub(crate) fn to_array(self) -> [f64; 3] {
        [self.s, self.i, self.r]
    }

    pub(crate) fn from_slice(y: &[f64]) -> Self {
        Self {
            s: y[0],
            i: y[1],
            r: y[2],
        }
    }
}

/// Rates `(S', I', R')` at `state`.
pub fn sir_derivatives(state: &EpidemicState, params: &EpidemicParams) -> [f64; 3] {
    let infections = params.beta * state.i * state.s;
    let recoveries = params.gamma * state.i;
    [-infections, infections - recoveries, recoveries]
}

/// Sampled SIR path together with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicTrajectory {
    pub params: EpidemicParams,
    pub grid: Grid,
    pub states: Vec<EpidemicState>,
}

impl EpidemicTrajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.grid.times()
    }

    pub fn last(&self) -> &EpidemicState {
        self.states
            .last()
            .expect("trajectory always holds the initial node")
    }
}

pub fn simulate_epidemic(params: &EpidemicParams, grid: &Grid) -> Result<EpidemicTrajectory> {
    params.validate()?;
    let p = *params;
    let ys = integrate_fixed_step(
        |_, y: &[f64; 3]| Ok(sir_derivatives(&EpidemicState::from_slice(y), &p)),
        p.initial_state().to_array(),
        grid,
    )?;
    Ok(EpidemicTrajectory {
        params: p,
        grid: *grid,
        states: ys.iter().map(|y| EpidemicState::from_slice(y)).collect(),
    })
}

/// `-S + (γ/β) ln S + C_I` with `C_I = N1 + N2 - (γ/β) ln N1`; equals `I`
/// along every exact trajectory.
pub fn first_integral_i(state: &EpidemicState, params: &EpidemicParams) -> Result<f64> {
    if !(state.s > 0.0) {
        return Err(Error::Domain(format!(
            "first integral needs S > 0, got {}",
            state.s
        )));
    }
    let k = params.threshold()?;
    let c_i = params.n1 + params.n2 - k * params.n1.ln();
    Ok(-state.s + k * state.s.ln() + c_i)
}

/// `-(γ/β) ln S + C_R` with `C_R = N3 + (γ/β) ln N1`; equals `R` along every
/// exact trajectory.
pub fn first_integral_r(state: &EpidemicState, params: &EpidemicParams) -> Result<f64> {
    if !(state.s > 0.0) {
        return Err(Error::Domain(format!(
            "first integral needs S > 0, got {}",
            state.s
        )));
    }
    let k = params.threshold()?;
    let c_r = params.n3 + k * params.n1.ln();
    Ok(-k * state.s.ln() + c_r)
}

/// Final recovered mass `R∞`, the root of `R = -(γ/β) ln(N - R) + C_R`.
///
/// The implicit equation has two roots for an outbreak; the returned one has
/// `S∞ = N - R∞ < γ/β`, the state the dynamics actually settle in. With no
/// initial infection nothing moves and `R∞ = N3`.
///
/// The root is found in `u = ln S∞`, where the equation reads
/// `(γ/β) u - e^u + N - C_R = 0` and stays well conditioned even when `S∞`
/// is far below the resolution of `R` near `N`. `tol` bounds that residual.
pub fn steady_state_recovered(params: &EpidemicParams, tol: f64) -> Result<f64> {
    params.validate()?;
    if params.n2 == 0.0 {
        return Ok(params.n3);
    }
    let k = params.threshold()?;
    let n = params.total();
    let c_r = params.n3 + k * params.n1.ln();
    let residual = |u: f64| k * u - u.exp() + n - c_r;

    // S∞ >= N1 exp(-(N - N3)/k) since R∞ <= N; the residual increases on u < ln k.
    let lo = params.n1.ln() - (n - params.n3) / k - 1.0;
    let hi = k.min(n - params.n3).ln();
    let bracket = Bracket::new(&mut { residual }, lo, hi).map_err(|e| match e {
        Error::Bracket { .. } => Error::Convergence {
            iterations: 0,
            best: n - hi.exp(),
        },
        other => other,
    })?;
    let tol_u = 1e-15 * lo.abs().max(hi.abs()).max(1.0);
    let u = find_root_bracketed(residual, bracket, tol_u, 400)?;
    // Rounding floor of the residual evaluation.
    let floor = 8.0 * f64::EPSILON * (k * u.abs() + n + c_r.abs());
    if residual(u).abs() > tol.max(floor) {
        return Err(Error::Convergence {
            iterations: 400,
            best: n - u.exp(),
        });
    }
    Ok(n - u.exp())
}

/// Peak of the infected mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfectionPeak {
    pub exists: bool,
    pub t_star: f64,
    pub s_star: f64,
    pub i_star: f64,
}

impl InfectionPeak {
    fn absent() -> Self {
        Self {
            exists: false,
            t_star: f64::NAN,
            s_star: f64::NAN,
            i_star: f64::NAN,
        }
    }
}

/// Refined infection peak of `trajectory`.
///
/// A peak exists only when `N1 > γ/β`. The time is the vertex of the parabola
/// through the three nodes around the discrete maximum of `I`; `S` at that
/// time comes from the parabola through the same nodes.
pub fn infection_peak(
    params: &EpidemicParams,
    trajectory: &EpidemicTrajectory,
) -> Result<InfectionPeak> {
    if trajectory.params != *params {
        return Err(Error::Consistency(
            "trajectory was simulated with different parameters".into(),
        ));
    }
    if !params.has_outbreak() {
        return Ok(InfectionPeak::absent());
    }
    let samples: Vec<(f64, f64)> = trajectory
        .times()
        .zip(&trajectory.states)
        .map(|(t, st)| (t, st.i))
        .collect();
    let (t_star, i_star) = refine_peak(&samples, PeakMode::Max)?;
    let s_star = quadratic_at(&trajectory.grid, &trajectory.states, t_star, |st| st.s);
    Ok(InfectionPeak {
        exists: true,
        t_star,
        s_star,
        i_star,
    })
}

/// Quadratic interpolation of `value` through the three nodes nearest `t`.
pub(crate) fn quadratic_at<T>(grid: &Grid, nodes: &[T], t: f64, value: impl Fn(&T) -> f64) -> f64 {
    let n = nodes.len();
    let k = (((t - grid.t_start()) / grid.dt()).round() as usize).clamp(1, n - 2);
    let t0 = grid.time(k);
    let u = (t - t0) / grid.dt();
    let (ym, y0, yp) = (value(&nodes[k - 1]), value(&nodes[k]), value(&nodes[k + 1]));
    y0 + 0.5 * u * (yp - ym) + 0.5 * u * u * (yp - 2.0 * y0 + ym)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults_grid(dt: f64) -> Grid {
        Grid::horizon(300.0, dt).unwrap()
    }

    #[test]
    fn derivative_examples() {
        let p = EpidemicParams::default();
        let d = sir_derivatives(
            &EpidemicState {
                s: 999.0,
                i: 1.0,
                r: 0.0,
            },
            &p,
        );
        assert!((d[0] + 0.4995).abs() < 1e-12);
        assert!((d[1] - 0.3995).abs() < 1e-12);
        assert!((d[2] - 0.1).abs() < 1e-12);

        let d = sir_derivatives(
            &EpidemicState {
                s: 500.0,
                i: 0.0,
                r: 500.0,
            },
            &p,
        );
        assert_eq!(d, [0.0, 0.0, 0.0]);

        let d = sir_derivatives(
            &EpidemicState {
                s: 200.0,
                i: 50.0,
                r: 750.0,
            },
            &p,
        );
        assert!(d[1].abs() < 1e-12);
    }

    #[test]
    fn no_initial_infection_is_frozen() {
        let p = EpidemicParams {
            n2: 0.0,
            ..Default::default()
        };
        let tr = simulate_epidemic(&p, &defaults_grid(1.0)).unwrap();
        assert!(tr.states.iter().all(|s| s.s == 999.0 && s.i == 0.0));
    }

    #[test]
    fn zero_beta_is_pure_recovery() {
        let p = EpidemicParams {
            beta: 0.0,
            ..Default::default()
        };
        let grid = Grid::horizon(50.0, 0.01).unwrap();
        let tr = simulate_epidemic(&p, &grid).unwrap();
        for (t, st) in tr.times().zip(&tr.states) {
            assert_eq!(st.s, 999.0);
            assert!((st.i - (-0.1 * t).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn first_integral_examples() {
        let p = EpidemicParams::default();
        assert_eq!(first_integral_i(&p.initial_state(), &p).unwrap(), 1.0);
        // -200 + 200 ln 200 + 1000 - 200 ln 999, evaluated independently.
        let expected = -200.0 + 200.0 * 200f64.ln() + 1000.0 - 200.0 * 999f64.ln();
        let at_peak = first_integral_i(
            &EpidemicState {
                s: 200.0,
                i: 0.0,
                r: 0.0,
            },
            &p,
        )
        .unwrap();
        assert!((at_peak - expected).abs() < 1e-9);
        assert!((at_peak - 478.3).abs() < 0.05);
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
    fn final_size_examples() {
        let p = EpidemicParams::default();
        let r_inf = steady_state_recovered(&p, 1e-9).unwrap();
        assert!((r_inf - 993.0).abs() < 0.5, "{r_inf}");
        assert!(p.total() - r_inf < p.threshold().unwrap());

        let p0 = EpidemicParams {
            n1: 1000.0,
            n2: 0.0,
            n3: 0.0,
            ..Default::default()
        };
        assert_eq!(steady_state_recovered(&p0, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn subcritical_has_no_peak() {
        let p = EpidemicParams {
            gamma: 0.6,
            ..Default::default()
        };
        let tr = simulate_epidemic(&p, &defaults_grid(0.1)).unwrap();
        let peak = infection_peak(&p, &tr).unwrap();
        assert!(!peak.exists);
        assert!(tr.states.windows(2).all(|w| w[1].i < w[0].i));
    }

    #[test]
    fn peak_rejects_foreign_trajectory() {
        let p = EpidemicParams::default();
        let tr = simulate_epidemic(&p, &defaults_grid(0.1)).unwrap();
        let other = EpidemicParams { beta: 1e-3, ..p };
        assert!(matches!(
            infection_peak(&other, &tr),
            Err(Error::Consistency(_))
        ));
    }
}
