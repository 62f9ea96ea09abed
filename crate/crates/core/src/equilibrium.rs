//! The private-contribution game.
//!
//! Citizen `i` picks `c_i ≥ 0` to maximize `U_i = V_i(F(c)) − c_i`. Best
//! responses are solved in the weight variable `u = c^p`, where the marginal
//! cost `(1/p)·u^(1/p − 1)` stays finite at zero for `p ≤ 1` and the `h'`
//! singularity disappears. Equilibria are found by damped Gauss–Seidel sweeps.

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::mechanism::{index_error, ContributionProfile, MechanismSpec, SmoothFn};
use crate::preferences::{Society, ValueFunction};
use crate::{Error, Result};

/// Geometric scan nodes per best-response search, spanning twelve decades.
const SCAN_NODES: usize = 49;
const SCAN_DECADES: f64 = 12.0;
const MAX_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 200;
const EFFICIENCY_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub damping: f64,
    pub max_sweeps: usize,
    pub foc_tolerance: f64,
    pub step_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_sweeps: 500,
            foc_tolerance: 1e-10,
            step_tolerance: 1e-12,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidInput("max_sweeps must be positive".into()));
        }
        for (name, v) in [
            ("foc_tolerance", self.foc_tolerance),
            ("step_tolerance", self.step_tolerance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub contributions: ContributionProfile,
    pub funding: f64,
    pub optimal_funding: f64,
    /// `V_i'(F)·∂F/∂c_i − 1`; `None` for citizens contributing nothing.
    pub foc_residuals: Vec<Option<f64>>,
    /// Utility gained by switching to the best response; zero at equilibrium.
    pub deviation_gains: Vec<f64>,
    pub sweeps_used: usize,
    pub converged: bool,
    /// `|F_eq − F*| / max(F*, 1e-9)`.
    pub efficiency_gap: f64,
    /// False when the mechanism only sees `Σ c_i`, so the split between
    /// citizens depends on the starting point.
    pub contributions_determined: bool,
}

/// Equilibrium and optimal funding under quadratic funding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub equilibrium_funding: f64,
    pub optimal_funding: f64,
    /// `Σ_i V_i'(F_eq)`; `None` when it diverges at `F_eq = 0`.
    pub marginal_sum: Option<f64>,
    pub converged: bool,
}

fn check_sizes(s: &Society, c: &ContributionProfile, i: usize) -> Result<()> {
    if s.len() != c.len() {
        return Err(Error::InvalidInput(format!(
            "society has {} citizens but the profile has {}",
            s.len(),
            c.len()
        )));
    }
    if i >= c.len() {
        return Err(index_error(i, c.len()));
    }
    Ok(())
}

/// `U_i = V_i(F(c)) − c_i`.
pub fn utility(mech: &MechanismSpec, s: &Society, c: &ContributionProfile, i: usize) -> Result<f64> {
    check_sizes(s, c, i)?;
    Ok(s.values()[i].value(mech.funding(c)) - c.as_slice()[i])
}

/// `V_i'(F(c)) · g'(Σ) · h'(c_i) − 1`, the first-order condition residual.
pub fn foc_residual(
    mech: &MechanismSpec,
    s: &Society,
    c: &ContributionProfile,
    i: usize,
) -> Result<f64> {
    check_sizes(s, c, i)?;
    let grad = mech.funding_gradient(c, i)?;
    let marginal = s.values()[i].marginal(mech.funding(c));
    let r = marginal * grad - 1.0;
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::SingularGradient { index: i })
    }
}

/// One citizen's choice with everybody else held fixed, in `u = c^p`.
struct OwnChoice<'a> {
    mech: &'a MechanismSpec,
    value: &'a ValueFunction,
    others: f64,
}

impl OwnChoice<'_> {
    fn exponent(&self) -> f64 {
        self.mech.weight.exponent()
    }

    fn contribution(&self, u: f64) -> f64 {
        let p = self.exponent();
        if p == 0.5 {
            u * u
        } else if p == 1.0 {
            u
        } else {
            u.powf(1.0 / p)
        }
    }

    fn utility(&self, u: f64) -> f64 {
        let total = self.others + self.mech.weight.scale() * u;
        self.value.value(self.mech.lever.value(total)) - self.contribution(u)
    }

    /// `dU/du` for `u > 0`.
    fn slope(&self, u: f64) -> f64 {
        let a = self.mech.weight.scale();
        let total = self.others + a * u;
        let benefit = self.value.marginal(self.mech.lever.value(total)) * self.mech.lever.d1(total) * a;
        let p = self.exponent();
        let cost = if p == 0.5 {
            2.0 * u
        } else if p == 1.0 {
            1.0
        } else {
            u.powf(1.0 / p - 1.0) / p
        };
        benefit - cost
    }

    fn upper_bound(&self, start: f64) -> Result<f64> {
        let mut hi = start.max(1.0);
        for _ in 0..MAX_DOUBLINGS {
            let slope = self.slope(hi);
            if !(slope > 0.0) {
                if slope.is_nan() || !self.utility(hi).is_finite() {
                    break;
                }
                return Ok(hi);
            }
            hi *= 2.0;
        }
        Err(Error::NoConvergence {
            iterations: MAX_DOUBLINGS,
            reason: "best response is unbounded (benefit outgrows cost)".into(),
        })
    }

    /// Root of the slope in `[lo, hi]`, assuming it is positive at `lo` and
    /// non-positive at `hi`. The slope is never evaluated at `lo` itself so
    /// `lo = 0` is allowed.
    fn bisect(&self, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            if self.slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Global maximizer of the own utility over `u ≥ 0`: a coarse geometric
    /// scan locates the best cell, bisection on the slope refines it.
    fn maximize(&self, start: f64) -> Result<f64> {
        let top = self.upper_bound(start)?;
        let mut nodes = Vec::with_capacity(SCAN_NODES + 1);
        nodes.push(0.0);
        for j in (0..SCAN_NODES).rev() {
            let decades = SCAN_DECADES * j as f64 / (SCAN_NODES - 1) as f64;
            nodes.push(top * 10f64.powf(-decades));
        }
        *nodes.last_mut().unwrap() = top;

        let mut best = 0;
        let mut best_u = self.utility(0.0);
        for (k, &u) in nodes.iter().enumerate().skip(1) {
            let util = self.utility(u);
            if util > best_u {
                best = k;
                best_u = util;
            }
        }

        let refined = if best == 0 {
            self.bisect(0.0, nodes[1])
        } else {
            let slope = self.slope(nodes[best]);
            if slope > 0.0 && best + 1 < nodes.len() {
                self.bisect(nodes[best], nodes[best + 1])
            } else if slope < 0.0 {
                self.bisect(nodes[best - 1], nodes[best])
            } else {
                nodes[best]
            }
        };

        let at_zero = self.utility(0.0);
        let mut choice = refined;
        let mut choice_util = self.utility(refined);
        if best_u > choice_util {
            choice = nodes[best];
            choice_util = best_u;
        }
        if at_zero >= choice_util {
            choice = 0.0;
        }
        Ok(choice)
    }
}

fn own_choice<'a>(
    mech: &'a MechanismSpec,
    s: &'a Society,
    c: &ContributionProfile,
    i: usize,
) -> OwnChoice<'a> {
    let others = c
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &cj)| mech.weight.value(cj))
        .sum();
    OwnChoice {
        mech,
        value: &s.values()[i],
        others,
    }
}

/// Citizen `i`'s utility-maximizing contribution given everybody else's.
pub fn best_response(
    mech: &MechanismSpec,
    s: &Society,
    c: &ContributionProfile,
    i: usize,
) -> Result<f64> {
    check_sizes(s, c, i)?;
    let choice = own_choice(mech, s, c, i);
    let start = c.as_slice()[i].powf(mech.weight.exponent());
    let u = choice.maximize(start)?;
    Ok(choice.contribution(u))
}

struct Diagnostics {
    foc_residuals: Vec<Option<f64>>,
    deviation_gains: Vec<f64>,
}

impl Diagnostics {
    fn compute(mech: &MechanismSpec, s: &Society, c: &ContributionProfile) -> Result<Self> {
        let n = c.len();
        let mut foc_residuals = Vec::with_capacity(n);
        let mut deviation_gains = Vec::with_capacity(n);
        for i in 0..n {
            let ci = c.as_slice()[i];
            foc_residuals.push(if ci > 0.0 {
                Some(foc_residual(mech, s, c, i)?)
            } else {
                None
            });
            let br = best_response(mech, s, c, i)?;
            let gain = utility(mech, s, &c.with(i, br)?, i)? - utility(mech, s, c, i)?;
            deviation_gains.push(gain.max(0.0));
        }
        Ok(Self {
            foc_residuals,
            deviation_gains,
        })
    }

    fn satisfied(&self, c: &ContributionProfile, tol: f64) -> bool {
        c.as_slice()
            .iter()
            .zip(&self.foc_residuals)
            .zip(&self.deviation_gains)
            .all(|((&ci, res), &gain)| match res {
                Some(r) => r.abs() <= tol,
                None => ci == 0.0 && gain <= tol,
            })
    }
}

/// Tries to move near-zero contributors to exactly zero. Accepted only if
/// zero is then an exact best response for each of them.
fn snap_to_zero(
    mech: &MechanismSpec,
    s: &Society,
    c: &ContributionProfile,
    threshold: f64,
) -> Result<Option<ContributionProfile>> {
    let small: Vec<usize> = (0..c.len())
        .filter(|&i| c.as_slice()[i] > 0.0 && c.as_slice()[i] < threshold)
        .collect();
    if small.is_empty() {
        return Ok(None);
    }
    let mut candidate = c.clone();
    for &i in &small {
        candidate.set_unchecked(i, 0.0);
    }
    for &i in &small {
        if best_response(mech, s, &candidate, i)? != 0.0 {
            return Ok(None);
        }
    }
    Ok(Some(candidate))
}

/// Damped Gauss–Seidel best-response iteration from `start`.
///
/// Stops once the largest per-citizen update falls below `step_tolerance`
/// and every interior citizen's FOC residual is within `foc_tolerance`
/// (zero contributors must gain at most `foc_tolerance` by deviating). A run
/// that exhausts `max_sweeps` is returned with `converged = false`.
pub fn solve_equilibrium(
    mech: &MechanismSpec,
    s: &Society,
    opts: &SolverOptions,
    start: &ContributionProfile,
) -> Result<EquilibriumResult> {
    opts.validate()?;
    if start.len() != s.len() {
        return Err(Error::InvalidInput(format!(
            "start profile has {} entries for {} citizens",
            start.len(),
            s.len()
        )));
    }
    if start.as_slice().iter().any(|&c| c <= 0.0) {
        return Err(Error::InvalidInput(
            "start contributions must all be positive".into(),
        ));
    }

    let optimal_funding = s.optimal_funding()?;
    let mut c = start.clone();
    let mut sweeps_used = 0;
    let mut converged = false;
    let mut diagnostics = None;

    while sweeps_used < opts.max_sweeps {
        sweeps_used += 1;
        let mut max_step: f64 = 0.0;
        for i in 0..c.len() {
            let br = best_response(mech, s, &c, i)?;
            let old = c.as_slice()[i];
            let new = (1.0 - opts.damping) * old + opts.damping * br;
            max_step = max_step.max((new - old).abs());
            c.set_unchecked(i, new);
        }
        if let Some(snapped) = snap_to_zero(mech, s, &c, opts.step_tolerance)? {
            c = snapped;
        }
        if max_step < opts.step_tolerance {
            let diag = Diagnostics::compute(mech, s, &c)?;
            if diag.satisfied(&c, opts.foc_tolerance) {
                converged = true;
                diagnostics = Some(diag);
                break;
            }
        }
    }

    let diag = match diagnostics {
        Some(d) => d,
        None => Diagnostics::compute(mech, s, &c)?,
    };
    let funding = mech.funding(&c);
    Ok(EquilibriumResult {
        efficiency_gap: (funding - optimal_funding).abs() / optimal_funding.max(EFFICIENCY_FLOOR),
        contributions_determined: !(mech.has_linear_weight() && c.len() > 1),
        contributions: c,
        funding,
        optimal_funding,
        foc_residuals: diag.foc_residuals,
        deviation_gains: diag.deviation_gains,
        sweeps_used,
        converged,
    })
}

/// [`solve_equilibrium`] from the default all-ones start.
pub fn solve_from_ones(
    mech: &MechanismSpec,
    s: &Society,
    opts: &SolverOptions,
) -> Result<EquilibriumResult> {
    solve_equilibrium(mech, s, opts, &ContributionProfile::uniform(s.len(), 1.0)?)
}

/// Solves independent societies (e.g. one per good) as a batch.
pub fn solve_many(
    mech: &MechanismSpec,
    societies: &[Society],
    opts: &SolverOptions,
    exec: Execution,
) -> Vec<Result<EquilibriumResult>> {
    exec.map(societies, |s| solve_from_ones(mech, s, opts))
}

/// Measures how close the quadratic-funding equilibrium comes to `F*`.
pub fn verify_qf_optimality(s: &Society, opts: &SolverOptions) -> Result<OptimalityReport> {
    let eq = solve_from_ones(&MechanismSpec::qf(), s, opts)?;
    Ok(OptimalityReport {
        equilibrium_funding: eq.funding,
        optimal_funding: eq.optimal_funding,
        marginal_sum: s.marginal_sum(eq.funding).ok(),
        converged: eq.converged,
    })
}
