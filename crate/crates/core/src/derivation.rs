//! Numerical checks of the two routes to quadratic funding.
//!
//! * The matching functional equation `∂g(Σ h)/∂c_j = Σ_i h(c_i)/h(c_j)` and
//!   its separated form `g'(x) = k·x`.
//! * The welfare ODEs `(h')³ = −k·h''` and `g'/g'' ∝ x`, including a Taylor
//!   series solver for the first.
//! * The homogeneous shortcut: `Σ c_i^((q−1)/q) / (Σ c_j^(1/q))^(q−1) = 1`
//!   holds for unequal contributions only at `q = 2`.
//!
//! All derivatives are analytic; finite differences only appear in tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::mechanism::{index_error, ContributionProfile, MechanismSpec, SmoothFn};
use crate::{Error, Result};

/// Residuals at or below this count as zero; spreads at or below it as constant.
pub const CONSTANCY_TOLERANCE: f64 = 1e-10;

const MIN_SERIES_ORDER: usize = 4;
const MAX_CONTINUATION_STEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Constant,
    NotConstant,
    /// The second derivative vanishes, so no constant can satisfy the relation.
    DegenerateSecondDerivative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub grid: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_abs_residual: f64,
    /// `max − min` of the quantity tested for constancy.
    pub spread: f64,
    pub constants: BTreeMap<String, f64>,
    pub verdict: Verdict,
}

impl ResidualReport {
    fn build(
        grid: &[f64],
        residuals: Vec<f64>,
        tested: &[f64],
        constants: BTreeMap<String, f64>,
        verdict: impl FnOnce(f64, f64) -> Verdict,
    ) -> Self {
        let max_abs_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let spread = spread(tested);
        Self {
            grid: grid.to_vec(),
            residuals,
            max_abs_residual,
            spread,
            constants,
            verdict: verdict(max_abs_residual, spread),
        }
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }

    pub fn is_constant(&self) -> bool {
        self.verdict == Verdict::Constant
    }
}

fn spread(xs: &[f64]) -> f64 {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if xs.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

fn check_grid(grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("grid must not be empty".into()));
    }
    if let Some(x) = grid.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "grid points must be finite and positive, got {x}"
        )));
    }
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(0.5 * (lo + hi))
}

fn single(name: &str, value: f64) -> BTreeMap<String, f64> {
    BTreeMap::from([(name.to_string(), value)])
}

/// `∂g(Σ h(c_i))/∂c_j − Σ_i h(c_i)/h(c_j)`.
pub fn ci_residual(mech: &MechanismSpec, c: &ContributionProfile, j: usize) -> Result<f64> {
    if j >= c.len() {
        return Err(index_error(j, c.len()));
    }
    if let Some(i) = c.as_slice().iter().position(|&ci| ci <= 0.0) {
        return Err(Error::Domain(format!(
            "the matching equation needs positive contributions (citizen {i} has zero)"
        )));
    }
    let lhs = mech.funding_gradient(c, j)?;
    let rhs = mech.total_weight(c) / mech.weight.value(c.as_slice()[j]);
    Ok(lhs - rhs)
}

/// Largest `|ci_residual|` over every citizen of every profile.
pub fn ci_residual_sweep(
    mech: &MechanismSpec,
    profiles: &[ContributionProfile],
    exec: Execution,
) -> Result<f64> {
    exec.map(profiles, |c| {
        (0..c.len()).try_fold(0.0f64, |m, j| Ok(m.max(ci_residual(mech, c, j)?.abs())))
    })
    .into_iter()
    .try_fold(0.0f64, |m, r: Result<f64>| Ok(m.max(r?)))
}

/// Residuals of `g'(x) − k·x` over `grid`.
///
/// With `k = None` the constant is fitted at the midpoint of the grid range.
pub fn ci_separated_residuals(
    mech: &MechanismSpec,
    grid: &[f64],
    k: Option<f64>,
) -> Result<ResidualReport> {
    let mid = check_grid(grid)?;
    let k = k.unwrap_or_else(|| mech.lever.d1(mid) / mid);
    let residuals: Vec<f64> = grid.iter().map(|&x| mech.lever.d1(x) - k * x).collect();
    let ratios: Vec<f64> = grid.iter().map(|&x| mech.lever.d1(x) / x).collect();
    Ok(ResidualReport::build(grid, residuals, &ratios, single("k", k), |max, _| {
        if max <= CONSTANCY_TOLERANCE {
            Verdict::Constant
        } else {
            Verdict::NotConstant
        }
    }))
}

/// Tests whether `−(h')³/h''` is constant, i.e. whether `(h')³ = −k·h''`.
///
/// `k` is fitted at the midpoint of the grid range. A vanishing `h''`
/// anywhere yields [`Verdict::DegenerateSecondDerivative`] with the residuals
/// of `(h')³ = 0`, the only form the relation can take there.
pub fn uniqueness_ode_residual_h<H: SmoothFn + ?Sized>(
    weight: &H,
    grid: &[f64],
) -> Result<ResidualReport> {
    let mid = check_grid(grid)?;
    let cube = |y: f64| weight.d1(y).powi(3);
    let degenerate = grid.iter().chain([&mid]).any(|&y| weight.d2(y) == 0.0);
    if degenerate {
        let residuals: Vec<f64> = grid.iter().map(|&y| cube(y)).collect();
        return Ok(ResidualReport::build(grid, residuals, &[], BTreeMap::new(), |_, _| {
            Verdict::DegenerateSecondDerivative
        }));
    }
    let bracket = |y: f64| -cube(y) / weight.d2(y);
    let k = bracket(mid);
    let residuals: Vec<f64> = grid.iter().map(|&y| cube(y) + k * weight.d2(y)).collect();
    let brackets: Vec<f64> = grid.iter().map(|&y| bracket(y)).collect();
    Ok(ResidualReport::build(grid, residuals, &brackets, single("k", k), |max, _| {
        if max <= CONSTANCY_TOLERANCE {
            Verdict::Constant
        } else {
            Verdict::NotConstant
        }
    }))
}

/// Tests whether `g'(x) / (x·g''(x))` is constant over `grid`.
///
/// Residuals are taken against the ratio at the midpoint of the grid range,
/// which is reported as the `ratio` constant.
pub fn uniqueness_ode_residual_g<G: SmoothFn + ?Sized>(
    lever: &G,
    grid: &[f64],
) -> Result<ResidualReport> {
    let mid = check_grid(grid)?;
    if let Some(&at) = grid.iter().chain([&mid]).find(|&&x| lever.d2(x) == 0.0) {
        return Err(Error::DegenerateSecondDerivative { at });
    }
    let ratio = |x: f64| lever.d1(x) / (x * lever.d2(x));
    let fitted = ratio(mid);
    let ratios: Vec<f64> = grid.iter().map(|&x| ratio(x)).collect();
    let residuals: Vec<f64> = ratios.iter().map(|r| r - fitted).collect();
    Ok(ResidualReport::build(grid, residuals, &ratios, single("ratio", fitted), |_, spread| {
        if spread <= CONSTANCY_TOLERANCE {
            Verdict::Constant
        } else {
            Verdict::NotConstant
        }
    }))
}

/// Taylor coefficients at `y0` of the solution of `h'' = −(h')³/k` with
/// `h(y0) = h0`, `h'(y0) = d0`.
///
/// Writing `h' = Σ b_n t^n`, the ODE gives `(n+1)·b_{n+1} = −[b³]_n / k`,
/// where `[b³]_n` is the degree-`n` Cauchy coefficient. Integrating once
/// recovers `h`.
fn taylor_coefficients(k: f64, h0: f64, d0: f64, order: usize) -> Vec<f64> {
    let mut slope = vec![0.0; order];
    let mut square = vec![0.0; order];
    slope[0] = d0;
    for n in 0..order.saturating_sub(1) {
        square[n] = (0..=n).map(|i| slope[i] * slope[n - i]).sum();
        let cube: f64 = (0..=n).map(|i| square[i] * slope[n - i]).sum();
        slope[n + 1] = -cube / (k * (n + 1) as f64);
    }
    let mut coeffs = Vec::with_capacity(order + 1);
    coeffs.push(h0);
    coeffs.extend(slope.iter().enumerate().map(|(n, b)| b / (n + 1) as f64));
    coeffs
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, a| acc * t + a)
}

fn horner_slope(coeffs: &[f64], t: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (n, a)| acc * t + n as f64 * a)
}

/// Distance from an expansion point to the solution's movable singularity:
/// along a solution `1/(h')²` grows linearly with slope `2/k`.
fn convergence_radius(k: f64, slope: f64) -> f64 {
    k / (2.0 * slope * slope)
}

/// A truncated Taylor expansion of the solution of `(h')³ = −k·h''`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSolution {
    pub k: f64,
    pub center: f64,
    /// `h(center + t) ≈ Σ_n coefficients[n] · t^n`.
    pub coefficients: Vec<f64>,
    /// `center ± ρ/4`, where `ρ` is the radius of convergence. The
    /// truncation error there is bounded by a geometric tail of ratio 1/4.
    pub trust_interval: (f64, f64),
}

impl SeriesSolution {
    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.trust_interval.0 && y <= self.trust_interval.1
    }

    /// The truncated polynomial at `y`, without regard to the trust interval.
    pub fn eval_polynomial(&self, y: f64) -> f64 {
        horner(&self.coefficients, y - self.center)
    }

    /// Derivative of the truncated polynomial at `y`.
    pub fn slope_polynomial(&self, y: f64) -> f64 {
        horner_slope(&self.coefficients, y - self.center)
    }

    /// The solution at `y`. Outside the trust interval the solution is
    /// continued by re-expanding at the edge of each successive trust
    /// interval with the same order.
    pub fn evaluate(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::Domain(format!("cannot evaluate the series at {y}")));
        }
        let mut segment = self.clone();
        for _ in 0..MAX_CONTINUATION_STEPS {
            if segment.contains(y) {
                return Ok(segment.eval_polynomial(y));
            }
            let edge = if y > segment.center {
                segment.trust_interval.1
            } else {
                segment.trust_interval.0
            };
            let (value, slope) = (segment.eval_polynomial(edge), segment.slope_polynomial(edge));
            if !(value.is_finite() && slope.is_finite() && slope > 0.0) || edge == segment.center {
                break;
            }
            segment = series_solve_uniqueness_ode(self.k, edge, value, slope, self.order())?;
        }
        Err(Error::Domain(format!(
            "y = {y} lies beyond the solution's singularity"
        )))
    }

    /// `(n+2)(n+1)·a_{n+2} + [(h')³]_n / k` for each `n ≤ order − 2`; the
    /// ODE holds term by term when these vanish.
    pub fn ode_coefficient_residuals(&self) -> Vec<f64> {
        let a = &self.coefficients;
        let order = self.order();
        let slope: Vec<f64> = (1..=order).map(|n| n as f64 * a[n]).collect();
        (0..order - 1)
            .map(|n| {
                let cube: f64 = (0..=n)
                    .map(|i| {
                        let sq: f64 = (0..=i).map(|m| slope[m] * slope[i - m]).sum();
                        sq * slope[n - i]
                    })
                    .sum();
                ((n + 2) * (n + 1)) as f64 * a[n + 2] + cube / self.k
            })
            .collect()
    }
}

/// Solves `(h')³ = −k·h''` with `h(y0) = h0`, `h'(y0) = d0` as a Taylor series
/// of the given order around `y0`.
pub fn series_solve_uniqueness_ode(
    k: f64,
    y0: f64,
    h0: f64,
    d0: f64,
    order: usize,
) -> Result<SeriesSolution> {
    if order < MIN_SERIES_ORDER {
        return Err(Error::OrderTooLow { order });
    }
    for (name, v) in [("k", k), ("d0", d0)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidInput(format!(
                "{name} must be finite and positive, got {v}"
            )));
        }
    }
    if !(y0.is_finite() && h0.is_finite()) {
        return Err(Error::InvalidInput("y0 and h0 must be finite".into()));
    }
    let radius = convergence_radius(k, d0);
    Ok(SeriesSolution {
        k,
        center: y0,
        coefficients: taylor_coefficients(k, h0, d0, order),
        trust_interval: (y0 - 0.25 * radius, y0 + 0.25 * radius),
    })
}

/// `Σ_i c_i^((q−1)/q) / (Σ_j c_j^(1/q))^(q−1) − 1`.
pub fn hoelder_gap(q: f64, c: &ContributionProfile) -> Result<f64> {
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::InvalidInput(format!(
            "q must be finite and positive, got {q}"
        )));
    }
    if let Some(i) = c.as_slice().iter().position(|&ci| ci <= 0.0) {
        return Err(Error::Domain(format!(
            "the homogeneous optimality identity needs positive contributions (citizen {i} has zero)"
        )));
    }
    let numerator: f64 = c.as_slice().iter().map(|ci| ci.powf((q - 1.0) / q)).sum();
    let roots: f64 = c.as_slice().iter().map(|ci| ci.powf(1.0 / q)).sum();
    Ok(numerator / roots.powf(q - 1.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub q: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub tolerance: f64,
    pub points: Vec<ScanPoint>,
    /// Grid values with `|gap| ≤ tolerance`.
    pub accepted: Vec<f64>,
    /// Zeros of the gap located by sign changes between grid neighbours and
    /// refined by bisection.
    pub roots: Vec<f64>,
    /// Set when the profile has fewer than two distinct contributions, in
    /// which case the scan proves nothing about uniqueness.
    pub warning: Option<String>,
}

/// Grid values of `q` at which the homogeneous optimality identity holds.
pub fn uniqueness_scan(c: &ContributionProfile, q_grid: &[f64], tol: f64) -> Result<ScanResult> {
    uniqueness_scan_with(c, q_grid, tol, Execution::default())
}

pub fn uniqueness_scan_with(
    c: &ContributionProfile,
    q_grid: &[f64],
    tol: f64,
    exec: Execution,
) -> Result<ScanResult> {
    let gaps = exec
        .map(q_grid, |&q| hoelder_gap(q, c))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let points: Vec<ScanPoint> = q_grid
        .iter()
        .zip(&gaps)
        .map(|(&q, &gap)| ScanPoint { q, gap })
        .collect();
    let accepted = points
        .iter()
        .filter(|p| p.gap.abs() <= tol)
        .map(|p| p.q)
        .collect();

    let mut roots = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if p.gap == 0.0 {
            roots.push(p.q);
        } else if let Some(next) = points.get(i + 1) {
            if p.gap * next.gap < 0.0 {
                roots.push(bisect_gap(c, p.q, p.gap, next.q)?);
            }
        }
    }

    let slice = c.as_slice();
    let lo = slice.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let warning = (hi - lo <= 1e-12 * hi).then(|| {
        "contributions are all equal; the identity cannot single out q".to_string()
    });

    Ok(ScanResult {
        tolerance: tol,
        points,
        accepted,
        roots,
        warning,
    })
}

fn bisect_gap(c: &ContributionProfile, mut lo: f64, gap_lo: f64, mut hi: f64) -> Result<f64> {
    let sign_lo = gap_lo.signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = hoelder_gap(mid, c)?;
        if g == 0.0 {
            return Ok(mid);
        }
        if g.signum() == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
