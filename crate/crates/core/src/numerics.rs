//! Numerical kernels shared by the simulators: fixed-step classical RK4,
//! bracketed scalar root finding and inversion of monotone maps.
//!
//! Everything here is a pure function of its inputs. The integrator works on
//! fixed-size state arrays so the hot loop never allocates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed between `(t_end - t_start) / dt` and an integer.
const GRID_INTEGRALITY_TOL: f64 = 1e-9;

/// Uniform time grid `t_start, t_start + dt, ..., t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    t_start: f64,
    t_end: f64,
    dt: f64,
    steps: usize,
}

impl Grid {
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite() && dt.is_finite()) {
            return Err(Error::InvalidGrid(
                "grid bounds and step must be finite".into(),
            ));
        }
        if dt <= 0.0 {
            return Err(Error::InvalidGrid(format!("dt must be > 0, got {dt}")));
        }
        if t_end <= t_start {
            return Err(Error::InvalidGrid(format!(
                "t_end ({t_end}) must exceed t_start ({t_start})"
            )));
        }
        let ratio = (t_end - t_start) / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > GRID_INTEGRALITY_TOL * ratio.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "span {} is not an integral multiple of dt = {dt}",
                t_end - t_start
            )));
        }
        Ok(Self {
            t_start,
            t_end,
            dt,
            steps: steps as usize,
        })
    }

    /// Grid on `[0, horizon]`.
    pub fn horizon(horizon: f64, dt: f64) -> Result<Self> {
        Self::new(0.0, horizon, dt)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, both endpoints included.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Time of node `k`. The last node is pinned to `t_end`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_end
        } else {
            self.t_start + k as f64 * self.dt
        }
    }

    /// Index of the node at `t`, if `t` sits on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let pos = (t - self.t_start) / self.dt;
        let k = pos.round();
        if k < 0.0 || k > self.steps as f64 {
            return None;
        }
        let k = k as usize;
        let slack = 1e-9 * self.dt.max(1e-9 * t.abs());
        ((self.time(k) - t).abs() <= slack).then_some(k)
    }

    /// Index of the last node at or before `t` (clamped to the grid).
    pub fn floor_index(&self, t: f64) -> usize {
        if let Some(k) = self.index_of(t) {
            return k;
        }
        let pos = ((t - self.t_start) / self.dt).floor();
        pos.clamp(0.0, self.steps as f64) as usize
    }

    /// Same span, half the step.
    pub fn halved(&self) -> Self {
        Self {
            dt: self.dt / 2.0,
            steps: self.steps * 2,
            ..*self
        }
    }

    /// Iterator over node times.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.time(k))
    }
}

/// A sign-changing interval for scalar root finding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Bracket {
    /// Evaluates `f` at both ends and checks the sign condition.
    pub fn new(f: &mut impl FnMut(f64) -> f64, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Domain(format!(
                "bracket needs lo < hi, got [{lo}, {hi}]"
            )));
        }
        let b = Self {
            lo,
            hi,
            f_lo: f(lo),
            f_hi: f(hi),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let signs_ok = self.f_lo * self.f_hi <= 0.0;
        if !(self.lo < self.hi) || !signs_ok || self.f_lo.is_nan() || self.f_hi.is_nan() {
            return Err(Error::Bracket {
                lo: self.lo,
                hi: self.hi,
                f_lo: self.f_lo,
                f_hi: self.f_hi,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// One classical RK4 step of size `h` from `(t, y)`.
///
/// Fails with [`Error::IntegrationFailure`] as soon as a stage derivative is
/// not finite.
pub fn rk4_step<const N: usize, F>(field: &mut F, t: f64, y: &[f64; N], h: f64) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let half = 0.5 * h;
    let k1 = checked(field(t, y)?, t)?;
    let k2 = checked(field(t + half, &axpy(y, half, &k1))?, t + half)?;
    let k3 = checked(field(t + half, &axpy(y, half, &k2))?, t + half)?;
    let k4 = checked(field(t + h, &axpy(y, h, &k3))?, t + h)?;

    let sixth = h / 6.0;
    let mut out = *y;
    for i in 0..N {
        out[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationFailure { t: t + h });
    }
    Ok(out)
}

fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += a * k[i];
    }
    out
}

fn checked<const N: usize>(d: [f64; N], t: f64) -> Result<[f64; N]> {
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(Error::IntegrationFailure { t })
    }
}

/// Integrates `y' = field(t, y)` with classical RK4 on `grid`, returning one
/// state per node (both endpoints included).
pub fn integrate_fixed_step<const N: usize, F>(
    mut field: F,
    y0: [f64; N],
    grid: &Grid,
) -> Result<Vec<[f64; N]>>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial state must be finite".into()));
    }
    let mut out = Vec::with_capacity(grid.len());
    out.push(y0);
    let mut y = y0;
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let h = grid.time(k + 1) - t;
        y = rk4_step(&mut field, t, &y, h)?;
        out.push(y);
    }
    Ok(out)
}

/// Locates the first time inside one RK4 step where `event` turns non-positive.
///
/// `event(y)` must be positive at `y` and non-positive at the end of the full
/// step of size `h`. Returns the sub-step length `s ∈ (0, h]` and the state
/// reached by a single RK4 step of length `s`.
pub fn locate_in_step<const N: usize, F, G>(
    field: &mut F,
    t: f64,
    y: &[f64; N],
    h: f64,
    mut event: G,
) -> Result<(f64, [f64; N])>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    G: FnMut(&[f64; N]) -> f64,
{
    // Bisection on the sub-step length. Stage failures inside the step map to
    // "not crossed" so the search stays inside the well-defined part.
    let mut lo = 0.0;
    let mut hi = h;
    let mut state_hi = rk4_step(field, t, y, h)?;
    while hi - lo > h * 1e-13 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = rk4_step(field, t, y, mid)?;
        if event(&s) <= 0.0 {
            hi = mid;
            state_hi = s;
        } else {
            lo = mid;
        }
    }
    Ok((hi, state_hi))
}

/// Generic safeguarded secant/bisection search; `done(width, x, fx)` decides
/// termination.
fn bracket_search(
    f: &mut impl FnMut(f64) -> f64,
    bracket: Bracket,
    max_iter: usize,
    min_step: f64,
    mut done: impl FnMut(f64, f64, f64) -> bool,
) -> Result<f64> {
    bracket.validate()?;
    let Bracket {
        mut lo,
        mut hi,
        mut f_lo,
        mut f_hi,
    } = bracket;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    let best =
        |lo: f64, hi: f64, f_lo: f64, f_hi: f64| if f_lo.abs() <= f_hi.abs() { lo } else { hi };

    let mut use_secant = true;
    for _ in 0..max_iter {
        let width = hi - lo;
        let x_best = best(lo, hi, f_lo, f_hi);
        let f_best = if x_best == lo { f_lo } else { f_hi };
        if done(width, x_best, f_best) {
            return Ok(x_best);
        }

        let mid = lo + 0.5 * width;
        let mut x = if use_secant {
            let s = hi - f_hi * (hi - lo) / (f_hi - f_lo);
            if s.is_finite() && s > lo && s < hi {
                s
            } else {
                mid
            }
        } else {
            mid
        };
        // Keep every probe a minimum distance from the ends so the bracket
        // always shrinks by at least `min_step`.
        let guard = (0.5 * min_step).min(0.25 * width);
        x = x.clamp(lo + guard, hi - guard);
        if x <= lo || x >= hi {
            // Bracket has collapsed to adjacent floats.
            return Ok(x_best);
        }

        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.is_nan() {
            return Err(Error::Convergence {
                iterations: 0,
                best: x_best,
            });
        }
        if (fx < 0.0) == (f_lo < 0.0) {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
            f_hi = fx;
        }
        // Fall back to bisection whenever a step fails to halve the bracket.
        use_secant = hi - lo <= 0.5 * width;
    }
    Err(Error::Convergence {
        iterations: max_iter,
        best: best(lo, hi, f_lo, f_hi),
    })
}

/// Bracketed root of `f`: bisection with secant acceleration that never
/// leaves the bracket. Terminates once the bracket is no wider than `tol_x`
/// and returns whichever end has the smaller residual.
pub fn find_root_bracketed(
    mut f: impl FnMut(f64) -> f64,
    bracket: Bracket,
    tol_x: f64,
    max_iter: usize,
) -> Result<f64> {
    if !(tol_x > 0.0) {
        return Err(Error::Domain(format!(
            "tol_x must be positive, got {tol_x}"
        )));
    }
    bracket_search(&mut f, bracket, max_iter, tol_x, |width, _, _| {
        width <= tol_x
    })
}

/// Solves `f(x) = target` for strictly increasing `f` on `[lo, hi]`, to a
/// residual of `tol · max(1, |target|)`.
pub fn invert_monotone(
    mut f: impl FnMut(f64) -> f64,
    target: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    let f_lo = f(lo);
    let f_hi = f(hi);
    if !(f_lo <= target && target <= f_hi) {
        return Err(Error::Range { target, f_lo, f_hi });
    }
    let scale = tol * target.abs().max(1.0);
    let mut g = |x: f64| f(x) - target;
    let bracket = Bracket {
        lo,
        hi,
        f_lo: f_lo - target,
        f_hi: f_hi - target,
    };
    bracket_search(&mut g, bracket, 500, 0.0, |_, _, fx| fx.abs() <= scale)
}
