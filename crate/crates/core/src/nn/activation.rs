use std::{fmt, str::FromStr};

use serde::{Deserialize, Serialize};

use crate::Error;

/// ELU scale used by networks built in this crate.
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    /// Value and derivative at `z` (ELU with scale [`ELU_ALPHA`]).
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64) {
        activation(self, z, ELU_ALPHA)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "linear" | "identity" => Ok(Activation::Linear),
            _ => Err(Error::UnknownActivation(s.to_string())),
        }
    }
}

/// `(f(z), f'(z))` for the given activation, `a` being the ELU scale.
#[inline]
pub fn activation(kind: Activation, z: f64, a: f64) -> (f64, f64) {
    match kind {
        Activation::Elu => {
            if z > 0.0 {
                (z, 1.0)
            } else {
                let e = z.exp();
                (a * (e - 1.0), a * e)
            }
        }
        Activation::Relu => {
            if z > 0.0 {
                (z, 1.0)
            } else {
                (0.0, 0.0)
            }
        }
        Activation::Sigmoid => {
            let s = crate::stats::logistic(z);
            (s, s * (1.0 - s))
        }
        Activation::Tanh => {
            let t = z.tanh();
            (t, 1.0 - t * t)
        }
        Activation::Linear => (z, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn elu_positive_branch_is_identity() {
        assert_eq!(activation(Activation::Elu, 1.5, 1.0), (1.5, 1.0));
    }

    #[test]
    fn relu_hard_zero() {
        assert_eq!(activation(Activation::Relu, -2.0, 1.0), (0.0, 0.0));
    }

    #[test]
    fn elu_negative_branch() {
        // e^-1 - 1 to 15 significant digits
        let (v, d) = activation(Activation::Elu, -1.0, 1.0);
        assert!((v - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        assert!((d - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn table_forms_of_sigmoid_and_tanh() {
        for z in [-3.0, -0.4, 0.0, 0.7, 5.0] {
            let (s, _) = activation(Activation::Sigmoid, z, 1.0);
            assert!((s - 1.0 / (1.0 + f64::exp(-z))).abs() < 1e-15);
            let (t, _) = activation(Activation::Tanh, z, 1.0);
            let ratio = (z.exp() - (-z).exp()) / (z.exp() + (-z).exp());
            assert!((t - ratio).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!(
            "swish".parse::<Activation>(),
            Err(Error::UnknownActivation(_))
        ));
        assert_eq!("ELU".parse::<Activation>().unwrap(), Activation::Elu);
    }

    proptest! {
        #[test]
        fn elu_bounded_below_relu_nonnegative(z in -50.0f64..50.0, a in 0.1f64..3.0) {
            prop_assert!(activation(Activation::Elu, z, a).0 >= -a);
            prop_assert!(activation(Activation::Relu, z, a).0 >= 0.0);
        }

        #[test]
        fn derivatives_match_central_differences(z in -4.0f64..4.0) {
            prop_assume!(z.abs() > 1e-3);
            for kind in [Activation::Elu, Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Linear] {
                let h = 1e-6;
                let fd = (activation(kind, z + h, 1.0).0 - activation(kind, z - h, 1.0).0) / (2.0 * h);
                prop_assert!((fd - activation(kind, z, 1.0).1).abs() < 1e-7);
            }
        }
    }
}
