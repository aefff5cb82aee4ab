//! One-parameter bivariate copula families.
//!
//! Every family exposes its CDF, both first partial derivatives, the
//! rectangle increment used on ordinal grids, and the Kendall's tau
//! parameterisation. Interior evaluations are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]`;
//! inputs exactly on the boundary of the unit square are handled exactly.

mod bvn;
mod frank;

pub use bvn::{bvn_cdf, bvnd};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{norm_cdf, norm_quantile};

pub const CLAMP_EPS: f64 = 1e-10;

/// Bracket used when inverting Frank's tau relation.
pub const FRANK_RHO_MAX: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Independence,
    Gaussian,
    Gumbel,
    Clayton,
    Frank,
    FrechetLower,
    FrechetUpper,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Independence,
        Family::Gaussian,
        Family::Gumbel,
        Family::Clayton,
        Family::Frank,
        Family::FrechetLower,
        Family::FrechetUpper,
    ];

    /// Families with a smooth, parameterised dependence.
    pub const PARAMETRIC: [Family; 4] = [Family::Gaussian, Family::Gumbel, Family::Clayton, Family::Frank];

    pub fn is_differentiable(self) -> bool {
        !matches!(self, Family::FrechetLower | Family::FrechetUpper)
    }

    /// Open interval of Kendall's tau reachable by the family, or `None`
    /// when tau does not index the family.
    pub fn tau_range(self) -> Option<(f64, f64)> {
        match self {
            Family::Gaussian | Family::Frank => Some((-1.0, 1.0)),
            Family::Gumbel => Some((0.0, 1.0)),
            Family::Clayton => Some((0.0, 1.0)),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Independence => "independence",
            Family::Gaussian => "gaussian",
            Family::Gumbel => "gumbel",
            Family::Clayton => "clayton",
            Family::Frank => "frank",
            Family::FrechetLower => "frechet_lower",
            Family::FrechetUpper => "frechet_upper",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Family::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .ok_or_else(|| format!("unknown copula family '{s}'"))
    }
}

/// A copula family together with its dependence parameter.
///
/// The parameter is validated at construction so evaluation never fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    family: Family,
    rho: f64,
}

impl CopulaSpec {
    pub fn new(family: Family, rho: f64) -> Result<Self> {
        let bad = |reason| Err(Error::InvalidParameter { family, rho, reason });
        match family {
            Family::Gaussian if !(rho > -1.0 && rho < 1.0) => bad("must lie in (-1, 1)"),
            Family::Gumbel if !(rho >= 1.0 && rho.is_finite()) => bad("must lie in [1, inf)"),
            Family::Clayton if !(rho > 0.0 && rho.is_finite()) => bad("must lie in (0, inf)"),
            Family::Frank if !(rho != 0.0 && rho.is_finite()) => bad("must be finite and nonzero"),
            Family::Independence | Family::FrechetLower | Family::FrechetUpper => {
                Ok(Self { family, rho: 0.0 })
            }
            _ => Ok(Self { family, rho }),
        }
    }

    pub fn independence() -> Self {
        Self { family: Family::Independence, rho: 0.0 }
    }

    pub fn frechet_upper() -> Self {
        Self { family: Family::FrechetUpper, rho: 0.0 }
    }

    pub fn frechet_lower() -> Self {
        Self { family: Family::FrechetLower, rho: 0.0 }
    }

    /// Builds the family member with the given Kendall's tau.
    ///
    /// `tau == 0` for Clayton and Frank maps to the independence copula,
    /// which is the limit of both families; their own parameter domains
    /// exclude that point.
    pub fn from_tau(family: Family, tau: f64) -> Result<Self> {
        if tau == 0.0 {
            match family {
                Family::Clayton | Family::Frank | Family::Independence => return Ok(Self::independence()),
                _ => {}
            }
        }
        Self::new(family, tau_to_rho(family, tau)?)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn tau(&self) -> f64 {
        match self.family {
            Family::Independence => 0.0,
            Family::FrechetUpper => 1.0,
            Family::FrechetLower => -1.0,
            f => rho_to_tau(f, self.rho).expect("validated parameter"),
        }
    }

    /// C(u, v).
    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return v.min(1.0);
        }
        if v >= 1.0 {
            return u;
        }
        let lo = (u + v - 1.0).max(0.0);
        let hi = u.min(v);
        let (uc, vc) = (clamp(u), clamp(v));
        let raw = match self.family {
            Family::Independence => u * v,
            Family::FrechetUpper => hi,
            Family::FrechetLower => lo,
            Family::Gaussian => bvn_cdf(norm_quantile(uc), norm_quantile(vc), self.rho),
            Family::Gumbel => gumbel_cdf(self.rho, uc, vc),
            Family::Clayton => clayton_cdf(self.rho, uc, vc),
            Family::Frank => frank::cdf(self.rho, uc, vc),
        };
        raw.clamp(lo, hi)
    }

    /// dC/du at (u, v); inputs are clamped to the open unit square except
    /// that v = 0 and v = 1 give 0 and 1 exactly.
    pub fn partial_u(&self, u: f64, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        if v >= 1.0 {
            return 1.0;
        }
        let (u, v) = (clamp(u), clamp(v));
        let d = match self.family {
            Family::Independence => v,
            Family::FrechetUpper => step(v - u),
            Family::FrechetLower => step(u + v - 1.0),
            Family::Gaussian => gaussian_partial(self.rho, u, v),
            Family::Gumbel => gumbel_partial(self.rho, u, v),
            Family::Clayton => clayton_partial(self.rho, u, v),
            Family::Frank => frank::partial_u(self.rho, u, v),
        };
        d.clamp(0.0, 1.0)
    }

    /// dC/dv at (u, v), with the same boundary convention in u.
    pub fn partial_v(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        match self.family {
            // every family here except Frank's reflected branch is exchangeable
            Family::Frank => frank::partial_v(self.rho, clamp(u), clamp(v)).clamp(0.0, 1.0),
            _ => self.partial_u(v, u),
        }
    }

    /// Mass of the rectangle (u_lo, u_hi] x (v_lo, v_hi], floored at zero.
    pub fn rectangle(&self, u_hi: f64, u_lo: f64, v_hi: f64, v_lo: f64) -> f64 {
        self.rectangle_raw(u_hi, u_lo, v_hi, v_lo).max(0.0)
    }

    /// Rectangle mass before flooring; negative values can only come from round-off.
    pub fn rectangle_raw(&self, u_hi: f64, u_lo: f64, v_hi: f64, v_lo: f64) -> f64 {
        if u_hi == u_lo || v_hi == v_lo {
            return 0.0;
        }
        self.cdf(u_hi, v_hi) - self.cdf(u_lo, v_hi) - self.cdf(u_hi, v_lo) + self.cdf(u_lo, v_lo)
    }
}

impl fmt::Display for CopulaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Independence | Family::FrechetLower | Family::FrechetUpper => write!(f, "{}", self.family),
            fam => write!(f, "{fam}(rho={})", self.rho),
        }
    }
}

fn clamp(x: f64) -> f64 {
    x.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

// subgradient of x -> max(x, 0) with ties split evenly
fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        0.0
    } else {
        0.5
    }
}

fn gaussian_partial(rho: f64, u: f64, v: f64) -> f64 {
    let (x, y) = (norm_quantile(u), norm_quantile(v));
    norm_cdf((y - rho * x) / (1.0 - rho * rho).sqrt())
}

// s = (x^t + y^t)^(1/t) computed without overflow
fn gumbel_s(theta: f64, x: f64, y: f64) -> f64 {
    let (m, n) = if x >= y { (x, y) } else { (y, x) };
    if m == 0.0 {
        return 0.0;
    }
    m * (1.0 + (n / m).powf(theta)).powf(1.0 / theta)
}

fn gumbel_cdf(theta: f64, u: f64, v: f64) -> f64 {
    (-gumbel_s(theta, -u.ln(), -v.ln())).exp()
}

fn gumbel_partial(theta: f64, u: f64, v: f64) -> f64 {
    let x = -u.ln();
    let s = gumbel_s(theta, x, -v.ln());
    (-s).exp() * (x / s).powf(theta - 1.0) / u
}

// ln(u^-t + v^-t - 1)
fn clayton_log_a(theta: f64, u: f64, v: f64) -> f64 {
    let lu = -theta * u.ln();
    let lv = -theta * v.ln();
    let m = lu.max(lv);
    m + ((lu - m).exp() + (lv - m).exp() - (-m).exp()).ln()
}

fn clayton_cdf(theta: f64, u: f64, v: f64) -> f64 {
    (-clayton_log_a(theta, u, v) / theta).exp()
}

fn clayton_partial(theta: f64, u: f64, v: f64) -> f64 {
    let log_a = clayton_log_a(theta, u, v);
    (-(theta + 1.0) * u.ln() - (1.0 + 1.0 / theta) * log_a).exp()
}

/// Dependence parameter for a given Kendall's tau.
pub fn tau_to_rho(family: Family, tau: f64) -> Result<f64> {
    let unsupported = || Err(Error::UnsupportedTau { family, tau });
    let Some((lo, hi)) = family.tau_range() else {
        return if family == Family::Independence && tau == 0.0 { Ok(0.0) } else { unsupported() };
    };
    let in_range = match family {
        Family::Gumbel => tau >= lo && tau < hi,
        _ => tau > lo && tau < hi,
    };
    if !in_range {
        return unsupported();
    }
    match family {
        Family::Gaussian => Ok((PI * tau / 2.0).sin()),
        Family::Gumbel => Ok(1.0 / (1.0 - tau)),
        Family::Clayton => Ok(2.0 * tau / (1.0 - tau)),
        Family::Frank => frank::rho_from_tau(tau).ok_or(Error::UnsupportedTau { family, tau }),
        _ => unreachable!(),
    }
}

/// Kendall's tau implied by a dependence parameter.
pub fn rho_to_tau(family: Family, rho: f64) -> Result<f64> {
    let spec = CopulaSpec::new(family, rho)?;
    Ok(match family {
        Family::Independence => 0.0,
        Family::FrechetUpper => 1.0,
        Family::FrechetLower => -1.0,
        Family::Gaussian => 2.0 / PI * spec.rho.asin(),
        Family::Gumbel => 1.0 - 1.0 / spec.rho,
        Family::Clayton => spec.rho / (spec.rho + 2.0),
        Family::Frank => frank::tau(spec.rho),
    })
}
