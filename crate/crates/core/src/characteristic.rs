//! Current-voltage characteristic laws for network links.
//!
//! Each link carries a resistor whose law is one of four families: ohmic,
//! piecewise-linear threshold, odd-polynomial threshold, or the sharp ideal
//! threshold. The first three are evaluable pointwise; the ideal curve exists
//! only as a cost primitive for the path oracles.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CharacteristicError {
    #[error("ideal threshold characteristic is not evaluable pointwise")]
    NotEvaluable,
    #[error("inverse of the ideal characteristic is multivalued at zero current")]
    MultivaluedInverse,
    #[error("invalid characteristic parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot parse characteristic from `{0}`")]
    Parse(String),
}

/// Current-voltage law of a single link resistor.
///
/// All variants are odd functions of the voltage drop. Every variant except
/// `IdealThreshold` is monotonically increasing and locally Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkCharacteristic {
    /// Ohmic resistor, `u = v / R`.
    Linear { resistance: f64 },
    /// Conductivity `sub_conductivity` inside `[-threshold, threshold]`,
    /// slope `plasma_conductivity` outside, continuous at the kinks.
    PiecewiseThreshold {
        threshold: f64,
        sub_conductivity: f64,
        plasma_conductivity: f64,
    },
    /// Odd monomial `u = (v / threshold)^(2k+1)` with `k = exponent_index`.
    /// Numerically delicate near zero; kept as a secondary test family.
    PolynomialThreshold { threshold: f64, exponent_index: u32 },
    /// Sharp limit curve: no conduction below the threshold, unbounded above.
    /// Not evaluable; its primitive `V|u|` drives the minimum-path oracles.
    IdealThreshold { threshold: f64 },
}

impl LinkCharacteristic {
    pub fn linear(resistance: f64) -> Self {
        LinkCharacteristic::Linear { resistance }
    }

    pub fn piecewise(threshold: f64, sub_conductivity: f64, plasma_conductivity: f64) -> Self {
        LinkCharacteristic::PiecewiseThreshold {
            threshold,
            sub_conductivity,
            plasma_conductivity,
        }
    }

    pub fn polynomial(threshold: f64, exponent_index: u32) -> Self {
        LinkCharacteristic::PolynomialThreshold {
            threshold,
            exponent_index,
        }
    }

    pub fn ideal(threshold: f64) -> Self {
        LinkCharacteristic::IdealThreshold { threshold }
    }

    /// Checks parameter positivity and finiteness.
    pub fn validate(&self) -> Result<(), CharacteristicError> {
        let bad = |msg: &str| Err(CharacteristicError::InvalidParameter(msg.to_string()));
        match *self {
            LinkCharacteristic::Linear { resistance } => {
                if !(resistance.is_finite() && resistance > 0.0) {
                    return bad("linear resistance must be positive and finite");
                }
            }
            LinkCharacteristic::PiecewiseThreshold {
                threshold,
                sub_conductivity,
                plasma_conductivity,
            } => {
                if !(threshold.is_finite() && threshold > 0.0) {
                    return bad("piecewise threshold must be positive and finite");
                }
                if !(sub_conductivity.is_finite() && sub_conductivity > 0.0) {
                    return bad("sub-threshold conductivity must be positive and finite");
                }
                if !(plasma_conductivity.is_finite() && plasma_conductivity > 0.0) {
                    return bad("plasma conductivity must be positive and finite");
                }
            }
            LinkCharacteristic::PolynomialThreshold {
                threshold,
                exponent_index,
            } => {
                if !(threshold.is_finite() && threshold > 0.0) {
                    return bad("polynomial threshold must be positive and finite");
                }
                if exponent_index == 0 {
                    return bad("polynomial exponent index must be at least 1");
                }
            }
            LinkCharacteristic::IdealThreshold { threshold } => {
                if !(threshold.is_finite() && threshold > 0.0) {
                    return bad("ideal threshold must be positive and finite");
                }
            }
        }
        Ok(())
    }

    /// Forward map: current through the resistor at voltage drop `v`.
    ///
    /// At the kinks of the piecewise family (`|v| = threshold`) the
    /// sub-threshold branch applies; both branches agree there exactly.
    pub fn current(&self, v: f64) -> Result<f64, CharacteristicError> {
        match *self {
            LinkCharacteristic::Linear { resistance } => Ok(v / resistance),
            LinkCharacteristic::PiecewiseThreshold {
                threshold,
                sub_conductivity,
                plasma_conductivity,
            } => {
                if v.abs() <= threshold {
                    Ok(sub_conductivity * v)
                } else if v > threshold {
                    Ok(plasma_conductivity * (v - threshold) + threshold * sub_conductivity)
                } else {
                    Ok(plasma_conductivity * (v + threshold) - threshold * sub_conductivity)
                }
            }
            LinkCharacteristic::PolynomialThreshold {
                threshold,
                exponent_index,
            } => Ok((v / threshold).powi(2 * exponent_index as i32 + 1)),
            LinkCharacteristic::IdealThreshold { .. } => Err(CharacteristicError::NotEvaluable),
        }
    }

    /// Derivative of the forward map, used to assemble Jacobians.
    pub fn slope(&self, v: f64) -> Result<f64, CharacteristicError> {
        match *self {
            LinkCharacteristic::Linear { resistance } => Ok(1.0 / resistance),
            LinkCharacteristic::PiecewiseThreshold {
                threshold,
                sub_conductivity,
                plasma_conductivity,
            } => {
                if v.abs() <= threshold {
                    Ok(sub_conductivity)
                } else {
                    Ok(plasma_conductivity)
                }
            }
            LinkCharacteristic::PolynomialThreshold {
                threshold,
                exponent_index,
            } => {
                let p = 2 * exponent_index as i32 + 1;
                Ok(p as f64 / threshold * (v / threshold).powi(p - 1))
            }
            LinkCharacteristic::IdealThreshold { .. } => Err(CharacteristicError::NotEvaluable),
        }
    }

    /// Inverse map: voltage drop that produces current `u`.
    ///
    /// For the ideal variant the inverse is `sign(u) * threshold` away from
    /// zero and multivalued at `u = 0`.
    pub fn voltage(&self, u: f64) -> Result<f64, CharacteristicError> {
        match *self {
            LinkCharacteristic::Linear { resistance } => Ok(resistance * u),
            LinkCharacteristic::PiecewiseThreshold {
                threshold,
                sub_conductivity,
                plasma_conductivity,
            } => {
                let kink = sub_conductivity * threshold;
                if u.abs() <= kink {
                    Ok(u / sub_conductivity)
                } else if u > kink {
                    Ok(threshold + (u - kink) / plasma_conductivity)
                } else {
                    Ok(-threshold + (u + kink) / plasma_conductivity)
                }
            }
            LinkCharacteristic::PolynomialThreshold {
                threshold,
                exponent_index,
            } => {
                let p = 2.0 * exponent_index as f64 + 1.0;
                Ok(u.signum() * threshold * u.abs().powf(1.0 / p))
            }
            LinkCharacteristic::IdealThreshold { threshold } => {
                if u > 0.0 {
                    Ok(threshold)
                } else if u < 0.0 {
                    Ok(-threshold)
                } else {
                    Err(CharacteristicError::MultivaluedInverse)
                }
            }
        }
    }

    /// Convex primitive `f(u) = integral of the inverse map from 0 to u`.
    ///
    /// Closed forms are used for every family; for the ideal variant the
    /// primitive is `threshold * |u|`. Always well defined, `f(0) = 0`,
    /// and `f' = voltage` wherever the inverse is single valued.
    pub fn primitive(&self, u: f64) -> f64 {
        match *self {
            LinkCharacteristic::Linear { resistance } => resistance * u * u / 2.0,
            LinkCharacteristic::PiecewiseThreshold {
                threshold,
                sub_conductivity,
                plasma_conductivity,
            } => {
                let a = u.abs();
                let kink = sub_conductivity * threshold;
                if a <= kink {
                    a * a / (2.0 * sub_conductivity)
                } else {
                    sub_conductivity * threshold * threshold / 2.0
                        + threshold * (a - kink)
                        + (a - kink) * (a - kink) / (2.0 * plasma_conductivity)
                }
            }
            LinkCharacteristic::PolynomialThreshold {
                threshold,
                exponent_index,
            } => {
                let p = 2.0 * exponent_index as f64 + 1.0;
                threshold * p / (p + 1.0) * u.abs().powf((p + 1.0) / p)
            }
            LinkCharacteristic::IdealThreshold { threshold } => threshold * u.abs(),
        }
    }

    /// Breakdown threshold of the variant, if it has one.
    pub fn threshold(&self) -> Option<f64> {
        match *self {
            LinkCharacteristic::Linear { .. } => None,
            LinkCharacteristic::PiecewiseThreshold { threshold, .. }
            | LinkCharacteristic::PolynomialThreshold { threshold, .. }
            | LinkCharacteristic::IdealThreshold { threshold } => Some(threshold),
        }
    }

    pub fn resistance(&self) -> Option<f64> {
        match *self {
            LinkCharacteristic::Linear { resistance } => Some(resistance),
            _ => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, LinkCharacteristic::Linear { .. })
    }

    /// True for every variant whose forward map can be computed.
    pub fn is_evaluable(&self) -> bool {
        !matches!(self, LinkCharacteristic::IdealThreshold { .. })
    }
}

impl fmt::Display for LinkCharacteristic {
    /// Grammar: `linear R=<f>`, `pwl V=<f> eps=<f> r=<f>`,
    /// `poly V=<f> r=<int>`, `ideal V=<f>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LinkCharacteristic::Linear { resistance } => write!(f, "linear R={resistance}"),
            LinkCharacteristic::PiecewiseThreshold {
                threshold,
                sub_conductivity,
                plasma_conductivity,
            } => write!(
                f,
                "pwl V={threshold} eps={sub_conductivity} r={plasma_conductivity}"
            ),
            LinkCharacteristic::PolynomialThreshold {
                threshold,
                exponent_index,
            } => write!(f, "poly V={threshold} r={exponent_index}"),
            LinkCharacteristic::IdealThreshold { threshold } => write!(f, "ideal V={threshold}"),
        }
    }
}

fn parse_field(token: &str, key: &str, src: &str) -> Result<f64, CharacteristicError> {
    let rest = token
        .strip_prefix(key)
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| CharacteristicError::Parse(src.to_string()))?;
    rest.parse::<f64>()
        .map_err(|_| CharacteristicError::Parse(src.to_string()))
}

/// Parses the characteristic grammar accepted by network files and the CLI.
pub fn parse_characteristic(text: &str) -> Result<LinkCharacteristic, CharacteristicError> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let err = || CharacteristicError::Parse(text.to_string());
    let parsed = match toks.as_slice() {
        ["linear", r] => LinkCharacteristic::linear(parse_field(r, "R", text)?),
        ["pwl", v, eps, r] => LinkCharacteristic::piecewise(
            parse_field(v, "V", text)?,
            parse_field(eps, "eps", text)?,
            parse_field(r, "r", text)?,
        ),
        ["poly", v, r] => {
            let exp = r
                .strip_prefix("r=")
                .and_then(|t| t.parse::<u32>().ok())
                .ok_or_else(err)?;
            LinkCharacteristic::polynomial(parse_field(v, "V", text)?, exp)
        }
        ["ideal", v] => LinkCharacteristic::ideal(parse_field(v, "V", text)?),
        _ => return Err(err()),
    };
    parsed.validate()?;
    Ok(parsed)
}
