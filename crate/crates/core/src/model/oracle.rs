//! Independent checks of the closed-form equilibrium.
//!
//! Nothing here uses the closed-form constants. The ODE residual is built
//! from the production function, the Pareto densities and the labor
//! clearing relation `T'(x) l(x) = H(x)` alone; the quadrature integrates
//! labor demand over the top-worker density.

use crate::error::{Error, Result};
use crate::params::{ModelParams, ProductionForm};

use super::dual::{HyperDual, Real};
use super::{output_ces_generic, CdEquilibrium, Equilibrium};

const MIN_GRID: usize = 5;

/// `n` points spaced evenly in logs between `lo` and `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `C T^(lambda_y+1) / x^(lambda_x+1)`: the ratio of the non-top density at
/// `x` to the top density at `T(x)`.
fn density_ratio_at<T: Real>(p: &ModelParams, x: T, t: T) -> T {
    T::from(p.density_ratio()) * t.powf(p.lambda_y + 1.0) / x.powf(p.lambda_x + 1.0)
}

fn ln_output<T: Real>(p: &ModelParams, shift: f64, x: T, y: T, l: T) -> T {
    match p.form {
        ProductionForm::Ces => output_ces_generic(p, 0.0, shift, x, y, l, 1.0).ln(),
        ProductionForm::Cd => {
            x.powf(p.beta_x_cd).ln() + y.powf(p.beta_y_cd).ln() + l.powf(p.alpha_l).ln()
        }
    }
}

/// First-order dual `v + dv e`.
fn jet(v: f64, dv: f64) -> HyperDual {
    HyperDual { re: v, d1: dv, d2: dv, d12: 0.0 }
}

/// Residual of the equilibrium ODE at one point given `T`, `T'`, `T''`.
///
/// Along the matched path the wage FOC `f_l = w` differentiates to
/// `d/dx ln f_l = f_x / (l f_l)`, with `l = H / T'`. The residual is `x`
/// times the difference of the two sides, so it is dimensionless.
fn point_residual(p: &ModelParams, shift: f64, x: f64, t0: f64, t1: f64, t2: f64) -> f64 {
    let xd = jet(x, 1.0);
    let td = jet(t0, t1);
    let tp = jet(t1, t2);
    let l = density_ratio_at(p, xd, td) / tp;
    // ln f_l = ln alpha_l + ln f - ln l for both forms
    let path = ln_output(p, shift, xd, td, l) - l.ln();
    let partial = ln_output(
        p,
        shift,
        HyperDual::variable(x),
        HyperDual::constant(t0),
        HyperDual::constant(l.re),
    );
    x * (path.first() - partial.first() / p.alpha_l)
}

fn check_grid(p: &ModelParams, grid: &[f64]) -> Result<()> {
    p.validate()?;
    if grid.len() < MIN_GRID {
        return Err(Error::GridTooSmall { got: grid.len(), need: MIN_GRID });
    }
    if grid.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::DomainError("grid points must be positive".into()));
    }
    Ok(())
}

/// Pointwise ODE residuals of a candidate matching function.
///
/// The candidate is evaluated on hyper-dual numbers, so `T'` and `T''` are
/// exact. `shift` is the match efficiency `omega_x` in CES mode and is
/// ignored in Cobb-Douglas mode (the CD equation does not involve `eta`).
pub fn ode_residuals<F>(p: &ModelParams, grid: &[f64], shift: f64, candidate: F) -> Result<Vec<f64>>
where
    F: Fn(HyperDual) -> HyperDual,
{
    check_grid(p, grid)?;
    grid.iter()
        .map(|&x| {
            let t = candidate(HyperDual::variable(x));
            if !(t.re > 0.0) || !(t.first() > 0.0) {
                return Err(Error::DomainError(format!(
                    "candidate must be positive and increasing at x = {x}"
                )));
            }
            Ok(point_residual(p, shift, x, t.re, t.first(), t.second()))
        })
        .collect()
}

/// Same residual with central differences of step `x * 1e-5`.
///
/// Rounding in the second difference limits accuracy to roughly 1e-5, so
/// this variant suits black-box candidates rather than tight tolerances.
pub fn ode_residuals_fd<F>(p: &ModelParams, grid: &[f64], shift: f64, candidate: F) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64,
{
    check_grid(p, grid)?;
    grid.iter()
        .map(|&x| {
            let h = x * 1e-5;
            let (lo, mid, hi) = (candidate(x - h), candidate(x), candidate(x + h));
            let t1 = (hi - lo) / (2.0 * h);
            let t2 = (hi - 2.0 * mid + lo) / (h * h);
            if !(mid > 0.0) || !(t1 > 0.0) {
                return Err(Error::DomainError(format!(
                    "candidate must be positive and increasing at x = {x}"
                )));
            }
            Ok(point_residual(p, shift, x, mid, t1, t2))
        })
        .collect()
}

/// Relative residuals of the three equilibrium conditions at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocResiduals {
    /// `(f_x - w' l) / f_x`
    pub skill: f64,
    /// `(f_l - w) / w`
    pub labor: f64,
    /// `(T' l - H) / H`
    pub clearing: f64,
}

impl FocResiduals {
    pub fn max_abs(&self) -> f64 {
        self.skill.abs().max(self.labor.abs()).max(self.clearing.abs())
    }
}

/// Equilibrium conditions of the CES model at `(x, T(x), l(x), w(x))`.
///
/// Capital is held at one, matching the capital-free model the closed-form
/// wage is derived in.
pub fn foc_residuals(eq: &Equilibrium, x: f64, omega: f64, omega_x: f64) -> Result<FocResiduals> {
    let p = &eq.params;
    let t = eq.match_t(x, omega_x)?;
    let l = eq.labor_demand(x, omega_x)?;
    let w = eq.wage(x, omega, omega_x)?;
    let var = HyperDual::variable;
    let c = HyperDual::constant;

    let f_x = output_ces_generic(p, omega, omega_x, var(x), c(t), c(l), 1.0).first();
    let f_l = output_ces_generic(p, omega, omega_x, c(x), c(t), var(l), 1.0).first();
    let w_prime = eq.wage_generic(var(x), omega, omega_x).first();
    let t_prime = (HyperDual::constant(eq.constants.a_at(omega_x)) * var(x)).first();
    let h = density_ratio_at(p, x, t);
    Ok(FocResiduals {
        skill: (f_x - w_prime * l) / f_x,
        labor: (f_l - w) / w,
        clearing: (t_prime * l - h) / h,
    })
}

/// Equilibrium conditions of the Cobb-Douglas model.
pub fn cd_foc_residuals(eq: &CdEquilibrium, x: f64) -> Result<FocResiduals> {
    let p = &eq.params;
    let t = eq.match_t(x)?;
    let l = eq.labor_demand(x, t);
    let w = eq.wage(x);
    let var = HyperDual::variable;
    let c = HyperDual::constant;

    let f_x = eq.output_generic(var(x), c(t), c(l)).first();
    let f_l = eq.output_generic(c(x), c(t), var(l)).first();
    let w_prime = var(x).powf(p.beta_x_cd / p.alpha_l).first();
    let t_prime = eq.match_t_generic(var(x)).first();
    let h = density_ratio_at(p, x, t);
    Ok(FocResiduals {
        skill: (f_x - w_prime * l) / f_x,
        labor: (f_l - w) / w,
        clearing: (t_prime * l - h) / h,
    })
}

/// Tanh-sinh quadrature of `g` over `(0, 1)`; robust to integrable endpoint
/// singularities.
pub fn integrate_unit<G: Fn(f64) -> f64>(g: G, tol: f64) -> f64 {
    let t_max = 6.0;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let node = |t: f64| -> Option<(f64, f64)> {
        let u = half_pi * t.sinh();
        let x = 1.0 / (1.0 + (-2.0 * u).exp());
        let one_minus = 1.0 / (1.0 + (2.0 * u).exp());
        let w = 2.0 * x * one_minus * half_pi * t.cosh();
        if x <= 0.0 || one_minus <= 0.0 || w == 0.0 {
            None
        } else {
            Some((x, w))
        }
    };
    let sum_at = |h: f64, start: usize, step: usize| -> f64 {
        let n = (t_max / h) as usize;
        let mut s = 0.0;
        let mut k = start;
        while k <= n {
            let t = k as f64 * h;
            for tt in if k == 0 { vec![0.0] } else { vec![t, -t] } {
                if let Some((x, w)) = node(tt) {
                    s += w * g(x);
                }
            }
            k += step;
        }
        s
    };

    let mut h = 0.5;
    let mut raw = sum_at(h, 0, 1);
    let mut est = raw * h;
    for _ in 0..12 {
        h *= 0.5;
        raw += sum_at(h, 1, 2);
        let next = raw * h;
        if (next - est).abs() <= tol * next.abs() {
            return next;
        }
        est = next;
    }
    est
}

/// Relative gap between labor demanded by firms with top workers above
/// `T(x)` and the supply of non-top workers above `x`.
///
/// `inverse` maps a top type back to its partner, `demand` gives labor
/// demand at a non-top type. The substitution `s = T(x) t^(-1/lambda_y)`
/// turns the top-worker density into Lebesgue measure on `(0, 1)`.
pub fn market_clearing_gap<I, D>(p: &ModelParams, x: f64, t_x: f64, inverse: I, demand: D) -> f64
where
    I: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let integral = integrate_unit(|t| demand(inverse(t_x * t.powf(-1.0 / p.lambda_y))), 1e-13);
    let demanded = (p.y_min / t_x).powf(p.lambda_y) * integral;
    let supplied = (p.x_min / x).powf(p.lambda_x);
    (demanded - supplied) / supplied
}

/// Market-clearing gap of the CES closed forms.
pub fn ces_market_clearing_gap(eq: &Equilibrium, x: f64, omega_x: f64) -> Result<f64> {
    let t_x = eq.match_t(x, omega_x)?;
    let a = eq.constants.a_at(omega_x);
    Ok(market_clearing_gap(
        &eq.params,
        x,
        t_x,
        |s| s / a,
        |z| eq.labor_demand_generic(z, omega_x),
    ))
}

/// Market-clearing gap of the Cobb-Douglas closed forms.
pub fn cd_market_clearing_gap(eq: &CdEquilibrium, x: f64) -> Result<f64> {
    let t_x = eq.match_t(x)?;
    let (a, b) = (eq.constants.a, eq.constants.b);
    Ok(market_clearing_gap(
        &eq.params,
        x,
        t_x,
        |s| (s / a).powf(1.0 / b),
        |z| eq.labor_demand(z, eq.match_t_generic(z)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cd_constants, compute_constants};

    fn closed_form(eq: &Equilibrium, omega_x: f64) -> impl Fn(HyperDual) -> HyperDual + '_ {
        move |x| HyperDual::constant(eq.constants.a_at(omega_x)) * x
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }

    #[test]
    fn closed_form_ces_solves_ode() {
        let p = ModelParams::construction();
        let eq = Equilibrium::new(p.clone()).unwrap();
        let grid = log_grid(p.x_min, 100.0 * p.x_min, 100);
        for omega_x in [0.0, 0.3, -0.25] {
            let r = ode_residuals(&p, &grid, omega_x, closed_form(&eq, omega_x)).unwrap();
            assert!(max_abs(&r) < 1e-12, "{}", max_abs(&r));
        }
    }

    #[test]
    fn finite_difference_variant_agrees_loosely() {
        let p = ModelParams::construction();
        let eq = Equilibrium::new(p.clone()).unwrap();
        let grid = log_grid(1.0, 100.0, 100);
        let a = eq.constants.a;
        let r = ode_residuals_fd(&p, &grid, 0.0, |x| a * x).unwrap();
        assert!(max_abs(&r) < 1e-4);
    }

    #[test]
    fn wrong_curvature_fails() {
        let p = ModelParams::construction();
        let eq = Equilibrium::new(p.clone()).unwrap();
        let a = eq.constants.a;
        let grid = log_grid(1.0, 100.0, 100);
        let r = ode_residuals(&p, &grid, 0.0, |x| HyperDual::constant(a) * x.powf(1.1)).unwrap();
        assert!(r.iter().all(|v| v.abs() > 1e-3));
    }

    #[test]
    fn wrong_level_fails() {
        let p = ModelParams::construction();
        let eq = Equilibrium::new(p.clone()).unwrap();
        let a = eq.constants.a * 1.1;
        let grid = log_grid(1.0, 100.0, 20);
        let r = ode_residuals(&p, &grid, 0.0, |x| HyperDual::constant(a) * x).unwrap();
        assert!(max_abs(&r) > 1e-3);
    }

    #[test]
    fn grid_too_small() {
        let p = ModelParams::construction();
        let e = ode_residuals(&p, &[1.0, 2.0, 3.0, 4.0], 0.0, |x| x).unwrap_err();
        assert_eq!(e, Error::GridTooSmall { got: 4, need: 5 });
    }

    #[test]
    fn cd_closed_form_solves_ode() {
        let p = ModelParams::construction_cd();
        let c = cd_constants(&p, 0.4).unwrap();
        let grid = log_grid(1.0, 100.0, 100);
        let r = ode_residuals(&p, &grid, 0.0, |x| HyperDual::constant(c.a) * x.powf(c.b)).unwrap();
        assert!(max_abs(&r) < 1e-12, "{}", max_abs(&r));
        let bad = ode_residuals(&p, &grid, 0.0, |x| HyperDual::constant(c.a) * x.powf(c.b + 0.1))
            .unwrap();
        assert!(max_abs(&bad) > 1e-3);
    }

    #[test]
    fn text_variant_of_psi_fails() {
        let p = ModelParams { theta: 2.5, alpha_l: 0.5, ..ModelParams::construction() };
        let c = compute_constants(&p).unwrap();
        let alt = p.alpha_x * (p.theta / p.alpha_l + p.lambda_y - p.lambda_x)
            / (p.alpha_y * (p.theta / (1.0 - p.alpha_l) - p.lambda_y - p.lambda_x));
        assert!(alt > 0.0 && (alt - c.psi).abs() > 1e-3);
        let a = alt.powf(1.0 / (1.0 - p.sigma));
        let grid = log_grid(1.0, 100.0, 100);
        let r = ode_residuals(&p, &grid, 0.0, |x| HyperDual::constant(a) * x).unwrap();
        assert!(max_abs(&r) > 1e-3);
    }

    #[test]
    fn foc_hold_at_random_states() {
        let eq = Equilibrium::new(ModelParams::construction()).unwrap();
        for i in 0..30 {
            let x = 1.0 + 7.3 * i as f64;
            let r = foc_residuals(&eq, x, 0.1 * (i % 5) as f64 - 0.2, 0.05 * (i % 7) as f64 - 0.15)
                .unwrap();
            assert!(r.max_abs() < 1e-10, "{r:?}");
        }
    }

    #[test]
    fn cd_foc_hold() {
        let eq = CdEquilibrium::new(ModelParams::construction_cd(), -0.3).unwrap();
        for x in [1.0, 2.0, 13.0, 80.0] {
            let r = cd_foc_residuals(&eq, x).unwrap();
            assert!(r.max_abs() < 1e-10, "{r:?}");
        }
    }

    #[test]
    fn quadrature_accuracy() {
        let v = integrate_unit(|t| t.powf(-0.4), 1e-13);
        assert!((v - 1.0 / 0.6).abs() < 1e-9);
        let v = integrate_unit(|t| (3.0 * t).cos(), 1e-13);
        assert!((v - 3f64.sin() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn markets_clear_both_tail_orderings() {
        for (lx, ly) in [(2.06, 1.8), (1.6, 2.5)] {
            let p = ModelParams { lambda_x: lx, lambda_y: ly, ..ModelParams::construction() };
            let eq = Equilibrium::new(p).unwrap();
            for x in [1.0, 3.0, 40.0] {
                let gap = ces_market_clearing_gap(&eq, x, 0.2).unwrap();
                assert!(gap.abs() < 1e-8, "{gap}");
            }
        }
        let eq = CdEquilibrium::new(ModelParams::construction_cd(), 0.1).unwrap();
        for x in [1.0, 5.0] {
            assert!(cd_market_clearing_gap(&eq, x).unwrap().abs() < 1e-8);
        }
    }
}
