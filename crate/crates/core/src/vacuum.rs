//! Vacuum probability densities `Z(k)` normalized against the invariant measure.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::measure::{integrate_full_space, QuadratureSpec, RadialRule};
use crate::spinor_tetrad::{LorentzMap, NullMomentum};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VacuumFamily {
    /// `omega^exponent exp(-omega/scale)`
    PowerExponential { exponent: f64, scale: f64 },
    /// `exp(-ln(omega/center)^2 / (2 width^2))`
    LogNormalIsotropic { center: f64, width: f64 },
}

impl VacuumFamily {
    fn validate(&self) -> Result<()> {
        match *self {
            VacuumFamily::PowerExponential { exponent, scale } => {
                if !(exponent.is_finite() && exponent >= 1.0) {
                    return Err(Error::Input(format!("power-exponential exponent must be >= 1, got {exponent}")));
                }
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::Input(format!("power-exponential scale must be positive, got {scale}")));
                }
            }
            VacuumFamily::LogNormalIsotropic { center, width } => {
                if !(center.is_finite() && center > 0.0) {
                    return Err(Error::Input(format!("log-normal center must be positive, got {center}")));
                }
                if !(width.is_finite() && width > 0.0) {
                    return Err(Error::Input(format!("log-normal width must be positive, got {width}")));
                }
            }
        }
        Ok(())
    }

    /// Unnormalized profile.
    fn shape(&self, omega: f64) -> f64 {
        match *self {
            VacuumFamily::PowerExponential { exponent, scale } => omega.powf(exponent) * (-omega / scale).exp(),
            VacuumFamily::LogNormalIsotropic { center, width } => {
                let x = (omega / center).ln();
                (-x * x / (2.0 * width * width)).exp()
            }
        }
    }

    /// Closed-form constant making `integral dGamma Z = 1`.
    fn closed_form_norm(&self) -> f64 {
        match *self {
            VacuumFamily::PowerExponential { exponent: p, scale: s } => {
                // 4 pi^2 / (Gamma(p+2) s^(p+2)), in logs to survive large exponents
                4.0 * PI * PI * (-(ln_gamma(p + 2.0) + (p + 2.0) * s.ln())).exp()
            }
            VacuumFamily::LogNormalIsotropic { center, width } => {
                4.0 * PI * PI / (center * center * (2.0 * PI).sqrt() * width * (2.0 * width * width).exp())
            }
        }
    }

    /// Radial rule suited to integrands carrying this profile.
    pub fn radial_rule(&self) -> RadialRule {
        match *self {
            // u^4 = exp(-omega/scale) keeps the mapped integrand smooth at u = 0
            VacuumFamily::PowerExponential { scale, .. } => RadialRule::Exponential { scale: 4.0 * scale },
            VacuumFamily::LogNormalIsotropic { center, width } => RadialRule::Logarithmic {
                center: center * (2.0 * width * width).exp(),
                span: 12.0 * width,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VacuumDensity {
    family: VacuumFamily,
    norm_const: f64,
    map: Option<LorentzMap>,
    inverse_map: Option<LorentzMap>,
}

/// Builds the normalized density and cross-checks the constant by quadrature.
pub fn normalize(family: VacuumFamily, spec: &QuadratureSpec) -> Result<VacuumDensity> {
    family.validate()?;
    let norm_const = family.closed_form_norm();
    if !(norm_const.is_finite() && norm_const > 0.0) {
        return Err(Error::Input(format!("vacuum parameters {family:?} give a divergent or vanishing norm")));
    }
    let z = VacuumDensity { family, norm_const, map: None, inverse_map: None };
    let total = z.quadrature_total(spec)?;
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Consistency(format!("vacuum normalization quadrature gives {total}, expected 1")));
    }
    Ok(z)
}

impl VacuumDensity {
    pub fn family(&self) -> VacuumFamily {
        self.family
    }

    pub fn norm_const(&self) -> f64 {
        self.norm_const
    }

    pub fn map(&self) -> Option<&LorentzMap> {
        self.map.as_ref()
    }

    /// Density without any attached map.
    pub fn evaluate_rest(&self, k: &NullMomentum) -> f64 {
        self.norm_const * self.family.shape(k.freq())
    }

    /// `Z(map^-1 k)` when a map is attached, else `Z(k)`.
    pub fn evaluate(&self, k: &NullMomentum) -> f64 {
        match &self.inverse_map {
            Some(inv) => self.evaluate_rest(&inv.apply(k)),
            None => self.evaluate_rest(k),
        }
    }

    /// Attaches `map`, composing with any map already present.
    pub fn with_transform(&self, map: &LorentzMap) -> VacuumDensity {
        let total = match &self.map {
            Some(m) => map.compose(m),
            None => *map,
        };
        VacuumDensity { map: Some(total), inverse_map: Some(total.inverse()), ..*self }
    }

    pub fn radial_rule(&self) -> RadialRule {
        self.family.radial_rule()
    }

    /// `integral dGamma Z` by full-space quadrature.
    pub fn quadrature_total(&self, spec: &QuadratureSpec) -> Result<f64> {
        let s = QuadratureSpec { n_freq: spec.n_freq.max(48), n_polar: spec.n_polar.max(24), ..*spec };
        let e = integrate_full_space(|k| Ok(C64::new(self.evaluate(k), 0.0)), &self.radial_rule(), &s)?;
        Ok(e.value.re)
    }

    /// `(max - min) / max` of Z over the given momenta.
    pub fn variation<'a, I>(&self, ks: I) -> f64
    where
        I: IntoIterator<Item = &'a NullMomentum>,
    {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for k in ks {
            let z = self.evaluate(k);
            lo = lo.min(z);
            hi = hi.max(z);
        }
        if hi > 0.0 {
            (hi - lo) / hi
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_constants() {
        let spec = QuadratureSpec::default();
        let z = normalize(VacuumFamily::PowerExponential { exponent: 1.0, scale: 1.0 }, &spec).unwrap();
        assert!((z.norm_const() - 2.0 * PI * PI).abs() < 1e-12);
        let z = normalize(VacuumFamily::PowerExponential { exponent: 2.0, scale: 0.5 }, &spec).unwrap();
        assert!((z.norm_const() - 4.0 * PI * PI / (6.0 * 0.5f64.powi(4))).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_parameters() {
        let spec = QuadratureSpec::default();
        assert!(normalize(VacuumFamily::PowerExponential { exponent: 0.5, scale: 1.0 }, &spec).is_err());
        assert!(normalize(VacuumFamily::PowerExponential { exponent: 1.0, scale: 0.0 }, &spec).is_err());
        assert!(normalize(VacuumFamily::LogNormalIsotropic { center: 1.0, width: -1.0 }, &spec).is_err());
    }
}
