use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Coupled Fourier basis over `[0,1]^d`: one `cos(pi * c . x)` feature per
/// integer frequency vector `c` with entries in `0..=order`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierFeatures {
    order: u32,
    input_dim: usize,
    coefficients: Vec<Vec<u32>>,
}

impl FourierFeatures {
    pub fn new(order: u32, input_dim: usize) -> Self {
        let mut coefficients: Vec<Vec<u32>> = vec![Vec::new()];
        for _ in 0..input_dim {
            coefficients = coefficients
                .into_iter()
                .flat_map(|prefix| {
                    (0..=order).map(move |c| {
                        let mut v = prefix.clone();
                        v.push(c);
                        v
                    })
                })
                .collect();
        }
        FourierFeatures {
            order,
            input_dim,
            coefficients,
        }
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn coefficients(&self) -> &[Vec<u32>] {
        &self.coefficients
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(LabError::ShapeMismatch {
                context: "fourier input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if let Some((index, &value)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(LabError::Unnormalized { index, value });
        }
        Ok(self
            .coefficients
            .iter()
            .map(|c| {
                let dot: f64 = c.iter().zip(x).map(|(&ci, xi)| ci as f64 * xi).sum();
                (PI * dot).cos()
            })
            .collect())
    }
}

/// State featuriser shared by the policy components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Featurizer {
    Fourier(FourierFeatures),
    /// Pass-through of the (already normalised) observation.
    Identity { dim: usize },
}

impl Featurizer {
    pub fn fourier(order: u32, input_dim: usize) -> Self {
        Featurizer::Fourier(FourierFeatures::new(order, input_dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            Featurizer::Fourier(f) => f.len(),
            Featurizer::Identity { dim } => *dim,
        }
    }

    pub fn features(&self, obs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Featurizer::Fourier(f) => f.features(obs),
            Featurizer::Identity { dim } => {
                if obs.len() != *dim {
                    return Err(LabError::ShapeMismatch {
                        context: "identity featurizer",
                        expected: *dim,
                        got: obs.len(),
                    });
                }
                Ok(obs.to_vec())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_gives_all_ones() {
        let f = FourierFeatures::new(3, 2);
        assert!(f.features(&[0.0, 0.0]).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn feature_count_is_order_plus_one_to_the_dim() {
        assert_eq!(FourierFeatures::new(3, 2).len(), 16);
        assert_eq!(FourierFeatures::new(2, 3).len(), 27);
        assert_eq!(FourierFeatures::new(0, 4).len(), 1);
    }

    #[test]
    fn half_period_component_vanishes() {
        let f = FourierFeatures::new(3, 2);
        let idx = f.coefficients().iter().position(|c| c == &vec![1, 0]).unwrap();
        assert!(f.features(&[0.5, 0.0]).unwrap()[idx].abs() < 1e-12);
    }

    #[test]
    fn unnormalised_input_is_rejected() {
        let f = FourierFeatures::new(3, 2);
        assert!(matches!(
            f.features(&[0.2, 1.5]),
            Err(LabError::Unnormalized { index: 1, .. })
        ));
        assert!(f.features(&[0.2]).is_err());
    }

    proptest! {
        #[test]
        fn features_are_bounded(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let f = FourierFeatures::new(3, 2);
            prop_assert!(f.features(&[x, y]).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
