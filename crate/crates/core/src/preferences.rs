//! Citizen value functions, social welfare and the optimal funding level.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Iteration budget shared by bracketing, bisection and the Newton polish.
pub const OPTIMAL_FUNDING_MAX_ITER: usize = 200;
const BISECTION_STEPS: usize = 80;
const NEWTON_STEPS: usize = 8;

/// Currency-equivalent value a citizen draws from a funding level `F ≥ 0`.
///
/// Every family is smooth, strictly increasing and strictly concave on
/// `F > 0`, vanishes at `F = 0`, and has a marginal that decays to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum ValueFunction {
    /// `a · √F`
    #[serde(rename = "sqrt")]
    SqrtScaled { a: f64 },
    /// `b · ln(1 + F)`
    #[serde(rename = "log1p")]
    Log1p { b: f64 },
    /// `a · F^alpha`, `0 < alpha < 1`
    #[serde(rename = "power")]
    PowerConcave { a: f64, alpha: f64 },
}

impl ValueFunction {
    pub fn sqrt(a: f64) -> Result<Self> {
        let v = ValueFunction::SqrtScaled { a };
        v.validate()?;
        Ok(v)
    }

    pub fn log1p(b: f64) -> Result<Self> {
        let v = ValueFunction::Log1p { b };
        v.validate()?;
        Ok(v)
    }

    pub fn power(a: f64, alpha: f64) -> Result<Self> {
        let v = ValueFunction::PowerConcave { a, alpha };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "value parameter {name} must be finite and positive, got {x}"
                )))
            }
        };
        match *self {
            ValueFunction::SqrtScaled { a } => positive("a", a),
            ValueFunction::Log1p { b } => positive("b", b),
            ValueFunction::PowerConcave { a, alpha } => {
                positive("a", a)?;
                if alpha > 0.0 && alpha < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!(
                        "value exponent alpha must lie in (0, 1), got {alpha}"
                    )))
                }
            }
        }
    }

    pub fn value(&self, f: f64) -> f64 {
        match *self {
            ValueFunction::SqrtScaled { a } => a * f.sqrt(),
            ValueFunction::Log1p { b } => b * f.ln_1p(),
            ValueFunction::PowerConcave { a, alpha } => a * f.powf(alpha),
        }
    }

    /// `V'(F)`; `+∞` at `F = 0` for the √ and power families.
    pub fn marginal(&self, f: f64) -> f64 {
        match *self {
            ValueFunction::SqrtScaled { a } => 0.5 * a / f.sqrt(),
            ValueFunction::Log1p { b } => b / (1.0 + f),
            ValueFunction::PowerConcave { a, alpha } => a * alpha * f.powf(alpha - 1.0),
        }
    }

    /// `V''(F)`.
    pub fn curvature(&self, f: f64) -> f64 {
        match *self {
            ValueFunction::SqrtScaled { a } => -0.25 * a / (f * f.sqrt()),
            ValueFunction::Log1p { b } => -b / ((1.0 + f) * (1.0 + f)),
            ValueFunction::PowerConcave { a, alpha } => {
                a * alpha * (alpha - 1.0) * f.powf(alpha - 2.0)
            }
        }
    }

    /// `lim_{F→0+} V'(F)`.
    pub fn marginal_at_zero(&self) -> f64 {
        match *self {
            ValueFunction::Log1p { b } => b,
            _ => f64::INFINITY,
        }
    }
}

/// The citizens' value functions for one good; utilities add.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Society {
    values: Vec<ValueFunction>,
}

impl Society {
    pub fn new(values: Vec<ValueFunction>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput(
                "a society needs at least one citizen".into(),
            ));
        }
        for v in &values {
            v.validate()?;
        }
        Ok(Self { values })
    }

    pub fn sqrt(a: &[f64]) -> Result<Self> {
        Self::new(a.iter().map(|&a| ValueFunction::SqrtScaled { a }).collect())
    }

    pub fn log1p(b: &[f64]) -> Result<Self> {
        Self::new(b.iter().map(|&b| ValueFunction::Log1p { b }).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[ValueFunction] {
        &self.values
    }

    pub fn citizen(&self, i: usize) -> Option<&ValueFunction> {
        self.values.get(i)
    }

    /// `W(F) = Σ_i V_i(F) − F`.
    pub fn welfare(&self, f: f64) -> Result<f64> {
        if !(f >= 0.0) {
            return Err(Error::Domain(format!("funding must be non-negative, got {f}")));
        }
        Ok(self.values.iter().map(|v| v.value(f)).sum::<f64>() - f)
    }

    /// `Σ_i V_i'(F)`.
    pub fn marginal_sum(&self, f: f64) -> Result<f64> {
        if !(f >= 0.0) {
            return Err(Error::Domain(format!("funding must be non-negative, got {f}")));
        }
        let sum: f64 = self.values.iter().map(|v| v.marginal(f)).sum();
        if sum.is_finite() {
            Ok(sum)
        } else {
            Err(Error::Domain(format!("marginal value diverges at F = {f}")))
        }
    }

    fn marginal_sum_unchecked(&self, f: f64) -> f64 {
        self.values.iter().map(|v| v.marginal(f)).sum()
    }

    fn curvature_sum(&self, f: f64) -> f64 {
        self.values.iter().map(|v| v.curvature(f)).sum()
    }

    /// The funding level `F*` at which total marginal value equals one.
    ///
    /// Returns `0` when the total marginal value never reaches one. The root
    /// is bracketed by doubling (or halving) from `F = 1`, bisected, and then
    /// polished with Newton steps that are kept inside the bracket.
    pub fn optimal_funding(&self) -> Result<f64> {
        let at_zero: f64 = self.values.iter().map(|v| v.marginal_at_zero()).sum();
        if at_zero <= 1.0 {
            return Ok(0.0);
        }

        let mut iterations = 0;
        let step = |iterations: &mut usize| -> Result<()> {
            *iterations += 1;
            if *iterations > OPTIMAL_FUNDING_MAX_ITER {
                Err(Error::NoConvergence {
                    iterations: OPTIMAL_FUNDING_MAX_ITER,
                    reason: "could not bracket the optimal funding level".into(),
                })
            } else {
                Ok(())
            }
        };

        let (mut lo, mut hi) = (0.5, 1.0);
        if self.marginal_sum_unchecked(1.0) >= 1.0 {
            while self.marginal_sum_unchecked(hi) >= 1.0 {
                step(&mut iterations)?;
                lo = hi;
                hi *= 2.0;
            }
        } else {
            while self.marginal_sum_unchecked(lo) < 1.0 {
                step(&mut iterations)?;
                hi = lo;
                lo *= 0.5;
            }
        }

        for _ in 0..BISECTION_STEPS {
            step(&mut iterations)?;
            let mid = 0.5 * (lo + hi);
            if self.marginal_sum_unchecked(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }

        let mut f = 0.5 * (lo + hi);
        for _ in 0..NEWTON_STEPS {
            let slope = self.curvature_sum(f);
            if !(slope < 0.0) {
                break;
            }
            let next = f - (self.marginal_sum_unchecked(f) - 1.0) / slope;
            if !(next >= lo && next <= hi) || next == f {
                break;
            }
            f = next;
        }
        Ok(f)
    }
}
