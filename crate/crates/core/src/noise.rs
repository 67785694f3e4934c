//! Perturbation directions: seeded common distributions, directions derived
//! from the trained weights, sign replacement and partial sign forcing.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{center_per_tensor, sign, Layout, ParamVector};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommonKind {
    /// G(0, 1)
    Gauss01,
    /// U(-1, 1)
    UniformSym,
    /// Uniform over {-1, 0, 1}
    Ternary,
    /// G(1, 1)
    Gauss11,
    /// U(0, 1)
    Uniform01,
    /// Uniform over {0, 1}
    Binary,
    /// Constant 1
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpecialKind {
    /// θ_0
    Init,
    /// θ_f
    Theta,
    /// sign(θ_f)
    Sign,
    /// sign(θ_f - μ), μ per named tensor
    SignCentered,
    /// sgp(θ_f)
    Sgp,
    /// sgp(θ_f - μ), μ per named tensor
    SgpCentered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    Common(CommonKind),
    Special(SpecialKind),
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 13] = [
        NoiseKind::Common(CommonKind::Gauss01),
        NoiseKind::Common(CommonKind::UniformSym),
        NoiseKind::Common(CommonKind::Ternary),
        NoiseKind::Common(CommonKind::Gauss11),
        NoiseKind::Common(CommonKind::Uniform01),
        NoiseKind::Common(CommonKind::Binary),
        NoiseKind::Common(CommonKind::Ones),
        NoiseKind::Special(SpecialKind::Init),
        NoiseKind::Special(SpecialKind::Theta),
        NoiseKind::Special(SpecialKind::Sign),
        NoiseKind::Special(SpecialKind::SignCentered),
        NoiseKind::Special(SpecialKind::Sgp),
        NoiseKind::Special(SpecialKind::SgpCentered),
    ];

    /// Short name used in config files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Common(k) => match k {
                CommonKind::Gauss01 => "g01",
                CommonKind::UniformSym => "u-11",
                CommonKind::Ternary => "ternary",
                CommonKind::Gauss11 => "g11",
                CommonKind::Uniform01 => "u01",
                CommonKind::Binary => "binary",
                CommonKind::Ones => "ones",
            },
            NoiseKind::Special(k) => match k {
                SpecialKind::Init => "init",
                SpecialKind::Theta => "theta",
                SpecialKind::Sign => "sign",
                SpecialKind::SignCentered => "sign-centered",
                SpecialKind::Sgp => "sgp",
                SpecialKind::SgpCentered => "sgp-centered",
            },
        }
    }

    /// Whether the realized vector depends on the seed.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, NoiseKind::Common(CommonKind::Ones) | NoiseKind::Special(_))
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    /// `|ε| · sign(θ_f)`
    SignReplace,
    /// Force the sign of a random `round(r·n)` subset of positions to `sign(θ_f)`.
    SignRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub transform: Option<Transform>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        Self { kind, transform: None, seed }
    }

    pub fn with_transform(self, transform: Transform) -> Self {
        Self { transform: Some(transform), ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(Transform::SignRatio(r)) = self.transform {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("sign ratio {r} not in [0, 1]")));
            }
            if !self.kind.is_stochastic() {
                return Err(Error::Config(format!(
                    "sign ratio needs a stochastic noise kind, got `{}`",
                    self.kind
                )));
            }
        }
        Ok(())
    }

    /// Realize the direction for a model with converged weights `theta` and
    /// (for `init`) initial weights `init`.
    pub fn realize(&self, init: Option<&ParamVector>, theta: &ParamVector) -> Result<NoiseVector> {
        self.validate()?;
        let base = match self.kind {
            NoiseKind::Common(k) => sample_common(k, theta.layout(), self.seed).values,
            NoiseKind::Special(k) => make_special(k, init, theta)?.values,
        };
        let values = match self.transform {
            None => base,
            Some(Transform::SignReplace) => sign_replace_values(&base, theta),
            Some(Transform::SignRatio(r)) => sign_ratio_values(&base, theta, r, self.seed),
        };
        Ok(NoiseVector { values, spec: *self })
    }
}

/// A realized direction plus the spec that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseVector {
    pub values: ParamVector,
    pub spec: NoiseSpec,
}

pub fn sample_common(kind: CommonKind, layout: &Layout, seed: u64) -> NoiseVector {
    let mut r = rng::stream(seed, "noise", 0);
    let values: Vec<f64> = (0..layout.len())
        .map(|_| match kind {
            CommonKind::Gauss01 => StandardNormal.sample(&mut r),
            CommonKind::UniformSym => r.random_range(-1.0..1.0),
            CommonKind::Ternary => r.random_range(-1i32..=1) as f64,
            CommonKind::Gauss11 => {
                let z: f64 = StandardNormal.sample(&mut r);
                1.0 + z
            }
            CommonKind::Uniform01 => r.random::<f64>(),
            CommonKind::Binary => f64::from(u8::from(r.random::<bool>())),
            CommonKind::Ones => 1.0,
        })
        .collect();
    NoiseVector {
        values: ParamVector::new(values, layout.clone()).expect("layout length"),
        spec: NoiseSpec::new(NoiseKind::Common(kind), seed),
    }
}

pub fn make_special(kind: SpecialKind, init: Option<&ParamVector>, theta: &ParamVector) -> Result<NoiseVector> {
    let values = match kind {
        SpecialKind::Init => {
            let init = init.ok_or(Error::MissingInit)?;
            init.check_layout(theta)?;
            init.clone()
        }
        SpecialKind::Theta => theta.clone(),
        SpecialKind::Sign => theta.sign(),
        SpecialKind::SignCentered => center_per_tensor(theta).sign(),
        SpecialKind::Sgp => theta.sgp(),
        SpecialKind::SgpCentered => center_per_tensor(theta).sgp(),
    };
    Ok(NoiseVector { values, spec: NoiseSpec::new(NoiseKind::Special(kind), 0) })
}

fn sign_replace_values(eps: &ParamVector, theta: &ParamVector) -> ParamVector {
    let v = eps.values().iter().zip(theta.values()).map(|(e, t)| e.abs() * sign(*t)).collect();
    eps.with_values(v).expect("same layout")
}

fn sign_ratio_values(eps: &ParamVector, theta: &ParamVector, r: f64, seed: u64) -> ParamVector {
    let n = eps.len();
    let k = (libm::round(r * n as f64) as usize).min(n);
    let mut out = eps.values().to_vec();
    let chosen = index::sample(&mut rng::stream(seed, "sign-ratio", 0), n, k);
    for i in chosen {
        out[i] = out[i].abs() * sign(theta.values()[i]);
    }
    eps.with_values(out).expect("same layout")
}

/// `|ε| · sign(θ_f)`.
pub fn sign_replace(eps: &NoiseVector, theta: &ParamVector) -> Result<NoiseVector> {
    eps.values.check_layout(theta)?;
    Ok(NoiseVector {
        values: sign_replace_values(&eps.values, theta),
        spec: eps.spec.with_transform(Transform::SignReplace),
    })
}

/// Force the sign of a uniformly random `round(r·n)`-subset of positions
/// (without replacement) to `sign(θ_f)`; magnitudes are preserved everywhere.
pub fn sign_ratio_construct(eps: &NoiseVector, theta: &ParamVector, r: f64, seed: u64) -> Result<NoiseVector> {
    eps.values.check_layout(theta)?;
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Config(format!("sign ratio {r} not in [0, 1]")));
    }
    Ok(NoiseVector {
        values: sign_ratio_values(&eps.values, theta, r, seed),
        spec: NoiseSpec { transform: Some(Transform::SignRatio(r)), seed, ..eps.spec },
    })
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        match self.transform {
            None => {}
            Some(Transform::SignReplace) => f.write_str("+sign-replace")?,
            Some(Transform::SignRatio(r)) => write!(f, "+sign-ratio({r})")?,
        }
        write!(f, "@{}", self.seed)
    }
}

/// Parse a transform name as used in config files: `none`, `sign-replace`, `sign-ratio`.
pub fn parse_transform(name: &str, ratio: Option<f64>) -> Result<Option<Transform>> {
    match name {
        "none" | "" => Ok(None),
        "sign-replace" => Ok(Some(Transform::SignReplace)),
        "sign-ratio" => {
            let r = ratio.ok_or_else(|| Error::Config("sign-ratio needs a ratio r".into()))?;
            Ok(Some(Transform::SignRatio(r)))
        }
        other => Err(Error::Config(format!("unknown transform `{other}`"))),
    }
}
