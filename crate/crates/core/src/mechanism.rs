//! Separable funding mechanisms `F(c) = g(Σ_i h(c_i))`.
//!
//! Both the weight `h` and the lever `g` are scaled power laws. The family
//! is closed under the boundary condition `F(0) = 0`, so no additive offsets
//! are carried.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A real function on `[0, ∞)` with closed-form first and second derivatives.
pub trait SmoothFn {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
}

/// `scale · x^exponent`, with exact fast paths for square roots and squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ScaledPower {
    exponent: f64,
    scale: f64,
}

impl ScaledPower {
    fn new(exponent: f64, scale: f64, what: &str) -> Result<Self> {
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(Error::InvalidInput(format!(
                "{what} exponent must be finite and positive, got {exponent}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "{what} scale must be finite and positive, got {scale}"
            )));
        }
        Ok(Self { exponent, scale })
    }

    fn pow(x: f64, e: f64) -> f64 {
        if e == 1.0 {
            x
        } else if e == 0.5 {
            x.sqrt()
        } else if e == 2.0 {
            x * x
        } else {
            x.powf(e)
        }
    }

    fn value(&self, x: f64) -> f64 {
        self.scale * Self::pow(x, self.exponent)
    }

    fn d1(&self, x: f64) -> f64 {
        let e = self.exponent;
        if e == 1.0 {
            self.scale
        } else if e == 0.5 {
            0.5 * self.scale / x.sqrt()
        } else if e == 2.0 {
            2.0 * self.scale * x
        } else {
            self.scale * e * x.powf(e - 1.0)
        }
    }

    fn d2(&self, x: f64) -> f64 {
        let e = self.exponent;
        if e == 1.0 {
            0.0
        } else if e == 0.5 {
            -0.25 * self.scale / (x * x.sqrt())
        } else if e == 2.0 {
            2.0 * self.scale
        } else {
            self.scale * e * (e - 1.0) * x.powf(e - 2.0)
        }
    }
}

/// Contribution weight `h(y) = scale · y^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightFunction(ScaledPower);

impl WeightFunction {
    /// `h(y) = y^exponent`.
    pub fn power(exponent: f64) -> Result<Self> {
        Self::scaled_power(1.0, exponent)
    }

    /// `h(y) = scale · y^exponent`.
    pub fn scaled_power(scale: f64, exponent: f64) -> Result<Self> {
        ScaledPower::new(exponent, scale, "weight").map(Self)
    }

    pub fn exponent(&self) -> f64 {
        self.0.exponent
    }

    pub fn scale(&self) -> f64 {
        self.0.scale
    }

    /// `h⁻¹(w) = (w / scale)^(1/exponent)`.
    pub fn inverse(&self, weight: f64) -> f64 {
        ScaledPower::pow(weight / self.0.scale, 1.0 / self.0.exponent)
    }
}

impl SmoothFn for WeightFunction {
    fn value(&self, x: f64) -> f64 {
        self.0.value(x)
    }
    fn d1(&self, x: f64) -> f64 {
        self.0.d1(x)
    }
    fn d2(&self, x: f64) -> f64 {
        self.0.d2(x)
    }
}

/// Funding lever `g(x) = scale · x^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeverFunction(ScaledPower);

impl LeverFunction {
    pub fn power(exponent: f64, scale: f64) -> Result<Self> {
        ScaledPower::new(exponent, scale, "lever").map(Self)
    }

    pub fn exponent(&self) -> f64 {
        self.0.exponent
    }

    pub fn scale(&self) -> f64 {
        self.0.scale
    }
}

impl SmoothFn for LeverFunction {
    fn value(&self, x: f64) -> f64 {
        self.0.value(x)
    }
    fn d1(&self, x: f64) -> f64 {
        self.0.d1(x)
    }
    fn d2(&self, x: f64) -> f64 {
        self.0.d2(x)
    }
}

/// Non-negative contributions of `n ≥ 1` citizens toward one good.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ContributionProfile(Vec<f64>);

impl ContributionProfile {
    pub fn new(contributions: Vec<f64>) -> Result<Self> {
        if contributions.is_empty() {
            return Err(Error::InvalidInput(
                "a contribution profile needs at least one citizen".into(),
            ));
        }
        if let Some((i, c)) = contributions
            .iter()
            .enumerate()
            .find(|(_, c)| !(c.is_finite() && **c >= 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "contributions must be non-negative and finite (citizen {i} has {c})"
            )));
        }
        Ok(Self(contributions))
    }

    /// `n` copies of `value`.
    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.0.get(i).copied()
    }

    /// Every entry multiplied by `factor ≥ 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|c| c * factor).collect())
    }

    /// Copy with citizen `i` replaced.
    pub fn with(&self, i: usize, value: f64) -> Result<Self> {
        let mut v = self.0.clone();
        match v.get_mut(i) {
            Some(slot) => *slot = value,
            None => return Err(index_error(i, self.len())),
        }
        Self::new(v)
    }

    pub(crate) fn set_unchecked(&mut self, i: usize, value: f64) {
        debug_assert!(value.is_finite() && value >= 0.0);
        self.0[i] = value;
    }
}

impl TryFrom<Vec<f64>> for ContributionProfile {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ContributionProfile> for Vec<f64> {
    fn from(p: ContributionProfile) -> Self {
        p.0
    }
}

pub(crate) fn index_error(i: usize, n: usize) -> Error {
    Error::InvalidInput(format!("citizen index {i} out of range for {n} citizens"))
}

/// The pair `(h, g)` defining `F(c) = g(Σ_i h(c_i))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub weight: WeightFunction,
    pub lever: LeverFunction,
}

/// The quadratic funding rule `(Σ √c_i)²`.
pub fn qf_mechanism() -> MechanismSpec {
    MechanismSpec::qf()
}

impl MechanismSpec {
    pub fn new(weight: WeightFunction, lever: LeverFunction) -> Self {
        Self { weight, lever }
    }

    /// `h(y) = y^p`, `g(x) = s·x^q`.
    pub fn power(p: f64, q: f64, s: f64) -> Result<Self> {
        Ok(Self::new(WeightFunction::power(p)?, LeverFunction::power(q, s)?))
    }

    /// `h(y) = √y`, `g(x) = x²`.
    pub fn qf() -> Self {
        Self::power(0.5, 2.0, 1.0).expect("quadratic funding parameters are valid")
    }

    /// Direct summation `F = Σ c_i`.
    pub fn linear() -> Self {
        Self::power(1.0, 1.0, 1.0).expect("linear parameters are valid")
    }

    /// True when `g(h(c)) = c`, i.e. a lone citizen funds exactly what they pay.
    pub fn is_self_normalizing(&self) -> bool {
        let (p, a) = (self.weight.exponent(), self.weight.scale());
        let (q, s) = (self.lever.exponent(), self.lever.scale());
        approx_eq(p * q, 1.0) && approx_eq(s * a.powf(q), 1.0)
    }

    /// True when funding depends on contributions only through `Σ c_i`,
    /// which leaves the split between citizens undetermined.
    pub fn has_linear_weight(&self) -> bool {
        self.weight.exponent() == 1.0
    }

    /// `Σ_i h(c_i)`.
    pub fn total_weight(&self, c: &ContributionProfile) -> f64 {
        c.as_slice().iter().map(|&ci| self.weight.value(ci)).sum()
    }

    /// `g(Σ_i h(c_i))`.
    pub fn funding(&self, c: &ContributionProfile) -> f64 {
        self.lever.value(self.total_weight(c))
    }

    /// `∂F/∂c_j = g'(Σ) · h'(c_j)`.
    pub fn funding_gradient(&self, c: &ContributionProfile, j: usize) -> Result<f64> {
        let cj = c.get(j).ok_or_else(|| index_error(j, c.len()))?;
        if cj == 0.0 && self.weight.exponent() < 1.0 {
            return Err(Error::SingularGradient { index: j });
        }
        let grad = self.lever.d1(self.total_weight(c)) * self.weight.d1(cj);
        if grad.is_finite() {
            Ok(grad)
        } else {
            Err(Error::SingularGradient { index: j })
        }
    }
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + b.abs())
}
