//! Forward/backward schemes for the sign nonlinearity of the direction group.
//!
//! Three schemes are supported: plain sign with a clipped straight-through
//! gradient (`Ste`), per-output-row scaling (`Xnor`), and a single scalar
//! scale (`Dorefa`). The latter two pass the upstream gradient through
//! unchanged. Sign(0) = -1 in all schemes.

use serde::{Deserialize, Serialize};

use crate::autodiff::clip;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// How the sign nonlinearity behaves in forward and backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignScheme {
    /// Binary ±1 forward; backward clips the upstream gradient to [-1, 1].
    Ste,
    /// Sign scaled per output row by the row's mean absolute value; backward
    /// is a pass-through.
    Xnor,
    /// Sign scaled by the scalar mean absolute value of the whole matrix;
    /// backward is a pass-through.
    Dorefa,
}

impl SignScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            SignScheme::Ste => "ste",
            SignScheme::Xnor => "xnor",
            SignScheme::Dorefa => "dorefa",
        }
    }
}

impl std::str::FromStr for SignScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ste" => Ok(SignScheme::Ste),
            "xnor" => Ok(SignScheme::Xnor),
            "dorefa" => Ok(SignScheme::Dorefa),
            other => Err(Error::Config(format!(
                "sign_scheme must be one of ste|xnor|dorefa, got '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for SignScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// +1 for positive input, -1 otherwise (so sign(0) = -1).
#[inline]
pub fn sign_value(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Forward pass of the selected scheme.
pub fn sign_forward(m: &Matrix, scheme: SignScheme) -> Matrix {
    match scheme {
        SignScheme::Ste => m.map(sign_value),
        SignScheme::Xnor => {
            let mut out = Matrix::zeros(m.rows(), m.cols());
            for i in 0..m.rows() {
                let row_scale = (0..m.cols()).map(|j| m.get(i, j).abs()).sum::<f64>()
                    / m.cols() as f64;
                for j in 0..m.cols() {
                    // A zero row scales to exactly zero rather than ±0·NaN games.
                    let v = if row_scale == 0.0 {
                        0.0
                    } else {
                        sign_value(m.get(i, j)) * row_scale
                    };
                    out.set(i, j, v);
                }
            }
            out
        }
        SignScheme::Dorefa => {
            let scale = m.data().iter().map(|x| x.abs()).sum::<f64>() / m.data().len() as f64;
            if scale == 0.0 {
                Matrix::zeros(m.rows(), m.cols())
            } else {
                m.map(|x| sign_value(x) * scale)
            }
        }
    }
}

/// Backward pass of the selected scheme. `saved_input` is the forward input;
/// only its shape matters for Ste/Xnor/Dorefa, but it is part of the contract
/// so schemes that gate on the input can be added without changing call sites.
pub fn sign_backward(upstream: &Matrix, saved_input: &Matrix, scheme: SignScheme) -> Result<Matrix> {
    if upstream.shape() != saved_input.shape() {
        return Err(Error::shape_mismatch(
            "sign_backward",
            upstream.shape(),
            saved_input.shape(),
        ));
    }
    match scheme {
        SignScheme::Ste => clip(upstream, -1.0, 1.0),
        SignScheme::Xnor | SignScheme::Dorefa => Ok(upstream.clone()),
    }
}
