//! Closed-form assortative-matching equilibrium.
//!
//! A firm combines one top worker of type `y` with `l` workers of type `x`.
//! Under Pareto type distributions and positive assortative matching (PAM)
//! the matching function, labor demand and non-top wage all have closed
//! forms; this module evaluates them for the CES composite and for the
//! Cobb-Douglas variant. [`oracle`] re-derives the equilibrium conditions
//! independently and is used to check every closed form here.

pub mod dual;
pub mod oracle;

use crate::error::{Error, Result};
use crate::params::{ModelParams, ProductionForm};
use dual::Real;

/// Derived constants of the CES equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumConstants {
    /// Matching constant; positive exactly under PAM.
    pub psi: f64,
    /// Matching slope factor at `omega_x = 0`, `psi^(1/(1-sigma))`.
    pub a: f64,
    /// Matching exponent, identically one for CES.
    pub b: f64,
    /// Density-ratio constant.
    pub c: f64,
    /// Wage-level constant.
    pub lambda: f64,
    /// Log matching intercept `ln(psi)/(1-sigma)`.
    pub b0: f64,
}

impl EquilibriumConstants {
    /// Slope factor of the matching function at a given match efficiency.
    pub fn a_at(&self, omega_x: f64) -> f64 {
        self.a * omega_x.exp()
    }
}

/// Necessary and sufficient PAM conditions for the CES composite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PamCheck {
    pub necessary_ok: bool,
    pub sufficient_ok: bool,
}

fn degenerate(den: f64, scale: f64) -> bool {
    den == 0.0 || den.abs() <= 1e-12 * scale
}

/// Closed-form constants for the CES equilibrium.
pub fn compute_constants(p: &ModelParams) -> Result<EquilibriumConstants> {
    p.validate()?;
    if p.form != ProductionForm::Ces {
        return Err(Error::InvalidParam(
            "compute_constants requires CES mode; use cd_constants".into(),
        ));
    }
    let lead = p.theta / (1.0 - p.alpha_l);
    let den = lead - p.lambda_y + p.lambda_x;
    if degenerate(den, lead.abs() + p.lambda_x + p.lambda_y) {
        return Err(Error::DivisionDegenerate(
            "theta/(1-alpha_l) - lambda_y + lambda_x = 0".into(),
        ));
    }
    let num = p.theta / p.alpha_l + p.lambda_y - p.lambda_x;
    let psi = p.alpha_x * num / (p.alpha_y * den);
    if psi <= 0.0 || !psi.is_finite() {
        return Err(Error::PamViolation(format!("matching constant psi = {psi} <= 0")));
    }
    let one_m_sigma = 1.0 - p.sigma;
    let c = p.density_ratio();
    let lambda = p.alpha_l
        * (p.alpha_x + psi * p.alpha_y).powf(p.theta / one_m_sigma)
        * psi.powf(p.lambda_y * (p.alpha_l - 1.0) / one_m_sigma)
        * c.powf(p.alpha_l - 1.0);
    Ok(EquilibriumConstants {
        psi,
        a: psi.powf(1.0 / one_m_sigma),
        b: 1.0,
        c,
        lambda,
        b0: psi.ln() / one_m_sigma,
    })
}

/// PAM conditions for the CES composite.
///
/// Necessary: `(theta > 0, sigma >= 1)` or `(theta < 0, sigma <= 1)`.
/// Sufficient: `theta` above both or below both of
/// `alpha_l (lambda_x - lambda_y)` and `-(1 - alpha_l)(lambda_x - lambda_y)`.
pub fn pam_check(p: &ModelParams) -> PamCheck {
    let necessary_ok = (p.theta > 0.0 && p.sigma >= 1.0) || (p.theta < 0.0 && p.sigma <= 1.0);
    let gap = p.lambda_x - p.lambda_y;
    let a = p.alpha_l * gap;
    let b = -(1.0 - p.alpha_l) * gap;
    let sufficient_ok = p.theta > a.max(b) || p.theta < a.min(b);
    PamCheck { necessary_ok, sufficient_ok }
}

/// CES equilibrium: parameters plus derived constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub params: ModelParams,
    pub constants: EquilibriumConstants,
}

impl Equilibrium {
    pub fn new(params: ModelParams) -> Result<Self> {
        let constants = compute_constants(&params)?;
        Ok(Equilibrium { params, constants })
    }

    fn check_x(&self, x: f64) -> Result<()> {
        if !(x >= self.params.x_min) || !x.is_finite() {
            return Err(Error::DomainError(format!(
                "worker type {x} below x_min = {}",
                self.params.x_min
            )));
        }
        Ok(())
    }

    /// Optimal top-worker type `T(x) = psi^(1/(1-sigma)) e^omega_x x`.
    pub fn match_t(&self, x: f64, omega_x: f64) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.constants.a_at(omega_x) * x)
    }

    /// Inverse matching function.
    pub fn inverse_match(&self, y: f64, omega_x: f64) -> Result<f64> {
        let a = self.constants.a_at(omega_x);
        let y_floor = a * self.params.x_min;
        if !(y >= y_floor) || !y.is_finite() {
            return Err(Error::DomainError(format!(
                "top-worker type {y} below T(x_min) = {y_floor}"
            )));
        }
        Ok(y / a)
    }

    /// Optimal count of non-top workers (real-valued).
    pub fn labor_demand(&self, x: f64, omega_x: f64) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.labor_demand_generic(x, omega_x))
    }

    pub(crate) fn labor_demand_generic<T: Real>(&self, x: T, omega_x: f64) -> T {
        let p = &self.params;
        let k = self.constants.a_at(omega_x).powf(p.lambda_y) * self.constants.c;
        T::from(k) * x.powf(p.lambda_y - p.lambda_x)
    }

    /// Equilibrium wage of a non-top worker of type `x`.
    pub fn wage(&self, x: f64, omega: f64, omega_x: f64) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.wage_generic(x, omega, omega_x))
    }

    /// Exponent of `x` in the wage, `theta + (1-alpha_l)(lambda_x - lambda_y)`.
    pub fn wage_elasticity(&self) -> f64 {
        let p = &self.params;
        p.theta + (1.0 - p.alpha_l) * (p.lambda_x - p.lambda_y)
    }

    pub(crate) fn wage_generic<T: Real>(&self, x: T, omega: f64, omega_x: f64) -> T {
        let p = &self.params;
        let level = self.constants.lambda
            * omega.exp()
            * (omega_x * (p.theta - p.lambda_y * (1.0 - p.alpha_l))).exp();
        T::from(level) * x.powf(self.wage_elasticity())
    }

    /// Output evaluated on the matched allocation `y = T(x)`, `l = l(x)`.
    pub fn matched_output(&self, omega: f64, omega_x: f64, x: f64, l: f64, k: f64) -> f64 {
        let p = &self.params;
        let mut f = (p.alpha_x + p.alpha_y * self.constants.psi).powf(p.theta / (1.0 - p.sigma))
            * omega.exp()
            * (omega_x.exp() * x).powf(p.theta)
            * l.powf(p.alpha_l);
        if p.alpha_k != 0.0 {
            f *= k.powf(p.alpha_k);
        }
        f
    }
}

/// Free-form CES production:
/// `e^omega [alpha_x (e^omega_x x)^(1-sigma) + alpha_y y^(1-sigma)]^(theta/(1-sigma)) l^alpha_l k^alpha_k`.
pub fn output_ces(
    p: &ModelParams,
    omega: f64,
    omega_x: f64,
    x: f64,
    y: f64,
    l: f64,
    k: f64,
) -> Result<f64> {
    for (name, v) in [("x", x), ("y", y), ("l", l), ("k", k)] {
        if !(v > 0.0) {
            return Err(Error::DomainError(format!("{name} must be > 0, got {v}")));
        }
    }
    Ok(output_ces_generic(p, omega, omega_x, x, y, l, k))
}

pub(crate) fn output_ces_generic<T: Real>(
    p: &ModelParams,
    omega: f64,
    omega_x: f64,
    x: T,
    y: T,
    l: T,
    k: f64,
) -> T {
    let s = 1.0 - p.sigma;
    let ex = T::from(omega_x.exp()) * x;
    let q = T::from(p.alpha_x) * ex.powf(s) + T::from(p.alpha_y) * y.powf(s);
    let mut f = T::from(omega.exp()) * q.powf(p.theta / s) * l.powf(p.alpha_l);
    if p.alpha_k != 0.0 {
        f = f * T::from(k.powf(p.alpha_k));
    }
    f
}

/// Cobb-Douglas composite `x^(theta a_x/(a_x+a_y)) y^(theta a_y/(a_x+a_y))`,
/// the `sigma -> 1` limit of the normalized CES composite.
pub fn cd_limit_composite(p: &ModelParams, x: f64, y: f64) -> f64 {
    let w = p.alpha_x + p.alpha_y;
    x.powf(p.theta * p.alpha_x / w) * y.powf(p.theta * p.alpha_y / w)
}

/// Normalized CES composite `[(a_x x^(1-s) + a_y y^(1-s))/(a_x+a_y)]^(theta/(1-s))`.
pub fn ces_composite_normalized(p: &ModelParams, x: f64, y: f64) -> f64 {
    let s = 1.0 - p.sigma;
    let w = p.alpha_x + p.alpha_y;
    ((p.alpha_x * x.powf(s) + p.alpha_y * y.powf(s)) / w).powf(p.theta / s)
}

/// Cobb-Douglas matching constants `T(x) = A x^B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdConstants {
    pub a: f64,
    pub b: f64,
}

/// Cobb-Douglas PAM condition:
/// `beta_x/lambda_x < alpha_l < 1 - beta_y/lambda_y` or the reversed ordering.
pub fn cd_pam_ok(p: &ModelParams) -> bool {
    let lo = p.beta_x_cd / p.lambda_x;
    let hi = 1.0 - p.beta_y_cd / p.lambda_y;
    (lo < p.alpha_l && p.alpha_l < hi) || (hi < p.alpha_l && p.alpha_l < lo)
}

/// Matching constants of the Cobb-Douglas variant at technology level `eta`.
pub fn cd_constants(p: &ModelParams, eta: f64) -> Result<CdConstants> {
    p.validate()?;
    let d = (1.0 - p.alpha_l) * p.lambda_y - p.beta_y_cd;
    if degenerate(d, (1.0 - p.alpha_l) * p.lambda_y + p.beta_y_cd.abs()) {
        return Err(Error::DivisionDegenerate("(1-alpha_l) lambda_y - beta_y = 0".into()));
    }
    let b = (1.0 - p.alpha_l) * (p.alpha_l * p.lambda_x - p.beta_x_cd) / (p.alpha_l * d);
    if !(b > 0.0) {
        return Err(Error::PamViolation(format!("Cobb-Douglas matching exponent B = {b} <= 0")));
    }
    let c = p.density_ratio();
    let a = (b / c).powf((1.0 - p.alpha_l) / d) * (p.alpha_l * eta.exp()).powf(1.0 / d);
    Ok(CdConstants { a, b })
}

/// Cobb-Douglas equilibrium at a fixed technology level `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdEquilibrium {
    pub params: ModelParams,
    pub eta: f64,
    pub constants: CdConstants,
}

impl CdEquilibrium {
    pub fn new(params: ModelParams, eta: f64) -> Result<Self> {
        let constants = cd_constants(&params, eta)?;
        Ok(CdEquilibrium { params, eta, constants })
    }

    pub fn match_t(&self, x: f64) -> Result<f64> {
        if !(x >= self.params.x_min) {
            return Err(Error::DomainError(format!("worker type {x} below x_min")));
        }
        Ok(self.match_t_generic(x))
    }

    pub(crate) fn match_t_generic<T: Real>(&self, x: T) -> T {
        T::from(self.constants.a) * x.powf(self.constants.b)
    }

    /// Wage normalized with a zero integration constant: `w = x^(beta_x/alpha_l)`.
    pub fn wage(&self, x: f64) -> f64 {
        x.powf(self.params.beta_x_cd / self.params.alpha_l)
    }

    /// `l = (alpha_l e^eta x^(beta_x - beta_x/alpha_l) y^beta_y)^(1/(1-alpha_l))`.
    pub fn labor_demand(&self, x: f64, y: f64) -> f64 {
        self.labor_demand_generic(x, y)
    }

    pub(crate) fn labor_demand_generic<T: Real>(&self, x: T, y: T) -> T {
        let p = &self.params;
        let inner = T::from(p.alpha_l * self.eta.exp())
            * x.powf(p.beta_x_cd - p.beta_x_cd / p.alpha_l)
            * y.powf(p.beta_y_cd);
        inner.powf(1.0 / (1.0 - p.alpha_l))
    }

    pub fn output(&self, x: f64, y: f64, l: f64) -> f64 {
        self.output_generic(x, y, l)
    }

    pub(crate) fn output_generic<T: Real>(&self, x: T, y: T, l: T) -> T {
        let p = &self.params;
        T::from(self.eta.exp())
            * x.powf(p.beta_x_cd)
            * y.powf(p.beta_y_cd)
            * l.powf(p.alpha_l)
    }
}
