//! Element-wise activations that keep SPD matrices SPD.

use serde::{Deserialize, Serialize};

use crate::tensor::{Mat, McSpdTensor};

/// Entries above this magnitude trigger a scalar rescale before exp/sinh/cosh.
pub const OVERFLOW_CLAMP: f64 = 30.0;

/// Element-wise activations whose Hadamard power series have non-negative coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Exp,
    Sinh,
    Cosh,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Exp => v.exp(),
            Activation::Sinh => v.sinh(),
            Activation::Cosh => v.cosh(),
        }
    }

    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Exp => v.exp(),
            Activation::Sinh => v.cosh(),
            Activation::Cosh => v.sinh(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Exp => "exp",
            Activation::Sinh => "sinh",
            Activation::Cosh => "cosh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = crate::error::DmtError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp" => Ok(Activation::Exp),
            "sinh" => Ok(Activation::Sinh),
            "cosh" => Ok(Activation::Cosh),
            other => Err(crate::error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

/// Rescales `x` by `tau / max|x|` when `max|x| > tau`. Returns the factor applied, if any.
pub fn overflow_guard(x: &Mat, tau: f64) -> (Mat, Option<f64>) {
    let peak = x.max_abs();
    if peak > tau {
        let factor = tau / peak;
        log::debug!("overflow guard: max |entry| {peak:.3e} > {tau}, rescaling by {factor:.3e}");
        (x.scale(factor), Some(factor))
    } else {
        (x.clone(), None)
    }
}

/// Guarded element-wise activation of a single matrix.
pub fn activate_mat(x: &Mat, kind: Activation) -> Mat {
    let (guarded, _) = overflow_guard(x, OVERFLOW_CLAMP);
    guarded.map(|v| kind.apply(v))
}

/// Applies `kind` element-wise to every channel. Channels with an entry above
/// [`OVERFLOW_CLAMP`] in magnitude are first scaled down by a positive scalar.
pub fn spd_activate(x: &McSpdTensor, kind: Activation) -> McSpdTensor {
    McSpdTensor::from_parts(
        x.dim(),
        x.mats().iter().map(|m| activate_mat(m, kind)).collect(),
    )
}

/// Gate nonlinearity `exp(X) / max(exp(X))`, evaluated as `exp(X − max X)` after the
/// overflow guard.
///
/// Output entries lie in `(0, 1]` and the largest entry is exactly 1. The guard bounds
/// the spread of `X` by `2τ`, so no entry underflows to zero.
pub fn gate_activation(x: &Mat) -> Mat {
    let (guarded, _) = overflow_guard(x, OVERFLOW_CLAMP);
    let (_, peak) = guarded.argmax();
    guarded.map(|v| (v - peak).exp())
}
