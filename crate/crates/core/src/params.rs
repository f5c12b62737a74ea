//! Structural parameters of the matching economy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Functional form of the worker-quality composite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProductionForm {
    #[default]
    Ces,
    #[serde(alias = "cobb-douglas")]
    Cd,
}

/// All structural parameters of one sector.
///
/// CES mode uses `alpha_x`, `alpha_y`, `theta` and `sigma`; Cobb-Douglas mode
/// replaces the composite by `beta_x_cd` and `beta_y_cd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub form: ProductionForm,
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub alpha_l: f64,
    pub alpha_k: f64,
    pub theta: f64,
    pub sigma: f64,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub rho: f64,
    pub rho_x: f64,
    pub sigma_xi: f64,
    pub sigma_u_x: f64,
    pub sigma_eps: f64,
    pub beta_0: f64,
    pub beta_x_cd: f64,
    pub beta_y_cd: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::construction()
    }
}

impl ModelParams {
    /// Construction-sector elasticities with Pareto exponents that satisfy
    /// the sufficient PAM condition (`lambda_y` is the thresholded tail fit).
    ///
    /// `alpha_x / alpha_y` and `sigma` put the log matching intercept near 0.6.
    pub fn construction() -> Self {
        ModelParams {
            form: ProductionForm::Ces,
            alpha_x: 0.85,
            alpha_y: 0.15,
            alpha_l: 0.777,
            alpha_k: 0.079,
            theta: 0.417,
            sigma: 1.5,
            lambda_x: 2.06,
            lambda_y: 1.80,
            x_min: 1.0,
            y_min: 1.0,
            rho: 0.702,
            rho_x: 0.7,
            sigma_xi: 0.1,
            sigma_u_x: 0.1,
            sigma_eps: 0.1,
            beta_0: 10.987,
            beta_x_cd: 0.3,
            beta_y_cd: 0.3,
        }
    }

    /// Cobb-Douglas variant with elasticities inside the PAM region.
    pub fn construction_cd() -> Self {
        ModelParams {
            form: ProductionForm::Cd,
            alpha_l: 0.6,
            beta_x_cd: 0.3,
            beta_y_cd: 0.3,
            lambda_x: 2.0,
            lambda_y: 1.5,
            rho_x: 0.0,
            sigma_u_x: 0.3,
            ..Self::construction()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("alpha_x", self.alpha_x),
            ("alpha_y", self.alpha_y),
            ("alpha_l", self.alpha_l),
            ("alpha_k", self.alpha_k),
            ("theta", self.theta),
            ("sigma", self.sigma),
            ("lambda_x", self.lambda_x),
            ("lambda_y", self.lambda_y),
            ("x_min", self.x_min),
            ("y_min", self.y_min),
            ("rho", self.rho),
            ("rho_x", self.rho_x),
            ("sigma_xi", self.sigma_xi),
            ("sigma_u_x", self.sigma_u_x),
            ("sigma_eps", self.sigma_eps),
            ("beta_0", self.beta_0),
            ("beta_x_cd", self.beta_x_cd),
            ("beta_y_cd", self.beta_y_cd),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::InvalidParam(format!("{name} must be finite")));
            }
        }
        let positive = [
            ("alpha_x", self.alpha_x),
            ("alpha_y", self.alpha_y),
            ("sigma", self.sigma),
            ("lambda_x", self.lambda_x),
            ("lambda_y", self.lambda_y),
            ("x_min", self.x_min),
            ("y_min", self.y_min),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::InvalidParam(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.alpha_l > 0.0 && self.alpha_l < 1.0) {
            return Err(Error::InvalidParam(format!(
                "alpha_l must lie in (0,1), got {}",
                self.alpha_l
            )));
        }
        if !(0.0..1.0).contains(&self.alpha_k) {
            return Err(Error::InvalidParam(format!(
                "alpha_k must lie in [0,1), got {}",
                self.alpha_k
            )));
        }
        if self.theta == 0.0 {
            return Err(Error::InvalidParam("theta must be nonzero".into()));
        }
        for (name, v) in [("rho", self.rho), ("rho_x", self.rho_x)] {
            if v.abs() >= 1.0 {
                return Err(Error::InvalidParam(format!("{name} must lie in (-1,1), got {v}")));
            }
        }
        for (name, v) in [
            ("sigma_xi", self.sigma_xi),
            ("sigma_u_x", self.sigma_u_x),
            ("sigma_eps", self.sigma_eps),
        ] {
            if v < 0.0 {
                return Err(Error::InvalidParam(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.form == ProductionForm::Ces && self.sigma == 1.0 {
            return Err(Error::InvalidParam(
                "sigma = 1 is the Cobb-Douglas limit; use form = cd".into(),
            ));
        }
        Ok(())
    }

    /// Density-ratio constant `lambda_x x_min^lambda_x / (lambda_y y_min^lambda_y)`.
    pub fn density_ratio(&self) -> f64 {
        self.lambda_x * self.x_min.powf(self.lambda_x)
            / (self.lambda_y * self.y_min.powf(self.lambda_y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelParams::construction().validate().unwrap();
        ModelParams::construction_cd().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let mut p = ModelParams::construction();
        p.alpha_l = 1.0;
        assert!(matches!(p.validate(), Err(Error::InvalidParam(_))));
        let mut p = ModelParams::construction();
        p.sigma = 1.0;
        assert!(p.validate().is_err());
        p.form = ProductionForm::Cd;
        assert!(p.validate().is_ok());
        let mut p = ModelParams::construction();
        p.rho = -1.0;
        assert!(p.validate().is_err());
        let mut p = ModelParams::construction();
        p.theta = 0.0;
        assert!(p.validate().is_err());
        let mut p = ModelParams::construction();
        p.lambda_y = f64::NAN;
        assert!(p.validate().is_err());
    }
}
