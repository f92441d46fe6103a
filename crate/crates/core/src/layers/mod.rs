//! Trainable layers: quaternion feed-forward, embeddings, bridges between
//! real and quaternion storage, and the real output head.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

pub mod bridge;
pub mod checkpoint;
pub mod embed;
pub mod head;
pub mod init;
pub mod linear;
pub mod params;

pub use bridge::{quaternion_to_real, real_to_quaternion};
pub use embed::EmbedProjection;
pub use head::OutputHead;
pub use init::{InitScheme, InitSpec, Initializer};
pub use linear::{hamilton_matrix_form, qffn_forward, Dense, Linear, QLinear};
pub use params::{Binding, Param, ParamCount, ParamId, ParamRole, ParamStore, Ratio};

/// Activation applied to every real scalar independently, so to each
/// quaternion component on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl ActivationKind {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            ActivationKind::Tanh => tape.tanh(x),
            ActivationKind::Relu => tape.relu(x),
            ActivationKind::Identity => Ok(x),
        }
    }

    pub fn scalar(self, v: f64) -> f64 {
        match self {
            ActivationKind::Tanh => v.tanh(),
            ActivationKind::Relu => v.max(0.0),
            ActivationKind::Identity => v,
        }
    }
}

impl FromStr for ActivationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(ActivationKind::Tanh),
            "relu" => Ok(ActivationKind::Relu),
            "identity" | "none" => Ok(ActivationKind::Identity),
            other => Err(Error::config(
                "activation",
                format!("unknown activation `{other}`"),
            )),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::Relu => "relu",
            ActivationKind::Identity => "identity",
        })
    }
}
