//! Per-point Student's t and Gaussian likelihood terms.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::special::ln_gamma_positive;

/// Degrees of freedom ν. `Infinite` selects the Gaussian limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dof {
    Finite(f64),
    Infinite,
}

impl Dof {
    /// Returns `None` unless `nu` is positive (or +∞).
    pub fn new(nu: f64) -> Option<Self> {
        if nu == f64::INFINITY {
            Some(Dof::Infinite)
        } else if nu > 0.0 && nu.is_finite() {
            Some(Dof::Finite(nu))
        } else {
            None
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Dof::Finite(nu) => nu,
            Dof::Infinite => f64::INFINITY,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Dof::Infinite)
    }
}

impl fmt::Display for Dof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dof::Finite(nu) => write!(f, "{nu}"),
            Dof::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Dof {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let nu = match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" | "gauss" => f64::INFINITY,
            other => other.parse::<f64>().map_err(|e| format!("invalid degrees of freedom {s:?}: {e}"))?,
        };
        Dof::new(nu).ok_or_else(|| format!("degrees of freedom must be positive, got {s}"))
    }
}

impl Serialize for Dof {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Dof::Finite(nu) => s.serialize_f64(*nu),
            Dof::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Dof {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(nu) => Dof::new(nu).ok_or_else(|| serde::de::Error::custom("degrees of freedom must be positive")),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Negative log-likelihood of a single observation and its derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub nll: f64,
    /// ∂nll/∂μ
    pub d_mean: f64,
    /// ∂nll/∂σ²
    pub d_var: f64,
}

/// Location-scale likelihood with the ν-dependent constant precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    dof: Dof,
    log_norm: f64,
}

impl Kernel {
    pub fn new(dof: Dof) -> Self {
        let log_norm = match dof {
            Dof::Finite(nu) => {
                ln_gamma_positive(0.5 * (nu + 1.0)) - ln_gamma_positive(0.5 * nu) - 0.5 * (nu * PI).ln()
            }
            Dof::Infinite => -0.5 * (2.0 * PI).ln(),
        };
        Self { dof, log_norm }
    }

    pub fn dof(&self) -> Dof {
        self.dof
    }

    /// log S(a | μ, σ²; ν).
    pub fn log_density(&self, a: f64, mean: f64, var: f64) -> f64 {
        let r = a - mean;
        match self.dof {
            Dof::Finite(nu) => self.log_norm - 0.5 * var.ln() - 0.5 * (nu + 1.0) * (r * r / (nu * var)).ln_1p(),
            Dof::Infinite => self.log_norm - 0.5 * var.ln() - 0.5 * r * r / var,
        }
    }

    pub fn term(&self, a: f64, mean: f64, var: f64) -> Term {
        let r = a - mean;
        let r2 = r * r;
        match self.dof {
            Dof::Finite(nu) => {
                let denom = nu * var + r2;
                Term {
                    nll: -self.log_density(a, mean, var),
                    d_mean: -(nu + 1.0) * r / denom,
                    d_var: 0.5 / var - 0.5 * (nu + 1.0) * r2 / (var * denom),
                }
            }
            Dof::Infinite => Term {
                nll: -self.log_density(a, mean, var),
                d_mean: -r / var,
                d_var: 0.5 / var - 0.5 * r2 / (var * var),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cauchy_peak() {
        let k = Kernel::new(Dof::Finite(1.0));
        assert!((k.log_density(0.3, 0.3, 1.0) - (1.0 / PI).ln()).abs() < 1e-14);
        assert!((k.log_density(0.3, 0.3, 1.0) + 1.144_729_885_849_400_2).abs() < 1e-12);
    }

    #[test]
    fn symmetric_in_residual() {
        for nu in [Dof::Finite(1.5), Dof::Finite(7.0), Dof::Infinite] {
            let k = Kernel::new(nu);
            for d in [0.01, 0.5, 3.0, 40.0] {
                assert_eq!(k.log_density(1.0 + d, 1.0, 0.7), k.log_density(1.0 - d, 1.0, 0.7));
            }
        }
    }

    #[test]
    fn derivatives_match_differences() {
        let h = 1e-6;
        for dof in [Dof::Finite(1.25), Dof::Finite(3.0), Dof::Infinite] {
            let k = Kernel::new(dof);
            let (a, m, v) = (0.4, -0.2, 0.3);
            let t = k.term(a, m, v);
            let dm = (-k.log_density(a, m + h, v) + k.log_density(a, m - h, v)) / (2.0 * h);
            let dv = (-k.log_density(a, m, v + h) + k.log_density(a, m, v - h)) / (2.0 * h);
            assert!((t.d_mean - dm).abs() < 1e-7, "{dof}");
            assert!((t.d_var - dv).abs() < 1e-7, "{dof}");
        }
    }

    #[test]
    fn dof_parsing() {
        assert_eq!("inf".parse::<Dof>().unwrap(), Dof::Infinite);
        assert_eq!("1.5".parse::<Dof>().unwrap(), Dof::Finite(1.5));
        assert!("0".parse::<Dof>().is_err());
        assert!("-2".parse::<Dof>().is_err());
        assert!("nan".parse::<Dof>().is_err());
        assert_eq!(serde_json::to_string(&Dof::Infinite).unwrap(), "\"inf\"");
        assert_eq!(serde_json::from_str::<Dof>("1.5").unwrap(), Dof::Finite(1.5));
        assert_eq!(serde_json::from_str::<Dof>("\"inf\"").unwrap(), Dof::Infinite);
    }
}
