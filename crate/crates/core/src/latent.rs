//! Dense real vectors used for every diffusion state: `x_t`, clean samples,
//! predicted noise and disturbance inputs all share this one carrier.

use std::ops::Index;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Latent(pub(crate) Vec<f64>);

impl Latent {
    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension {
                expected: 1,
                found: 0,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("latent entry {i} = {}", values[i])));
        }
        Ok(Latent(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Latent(vec![0.0; dim])
    }

    /// Standard normal draw of dimension `dim`.
    pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Latent((0..dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::Dimension {
                expected,
                found: self.dim(),
            });
        }
        Ok(())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// `a * self + b * other`, elementwise.
    pub fn lincomb(&self, a: f64, other: &Latent, b: f64) -> Result<Latent> {
        other.ensure_dim(self.dim())?;
        Ok(Latent(
            self.0.iter().zip(&other.0).map(|(x, y)| a * x + b * y).collect(),
        ))
    }

    pub fn sub(&self, other: &Latent) -> Result<Latent> {
        other.ensure_dim(self.dim())?;
        Ok(Latent(self.0.iter().zip(&other.0).map(|(x, y)| x - y).collect()))
    }

    pub fn add(&self, other: &Latent) -> Result<Latent> {
        other.ensure_dim(self.dim())?;
        Ok(Latent(self.0.iter().zip(&other.0).map(|(x, y)| x + y).collect()))
    }

    pub fn scale(&self, a: f64) -> Latent {
        Latent(self.0.iter().map(|x| a * x).collect())
    }

    pub fn dot(&self, other: &Latent) -> f64 {
        self.0.iter().zip(&other.0).map(|(x, y)| x * y).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Latent) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Cosine similarity; 0 when either vector is zero.
    pub fn cosine(&self, other: &Latent) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Latent) -> bool {
        self.dim() == other.dim()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Index<usize> for Latent {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Latent> for Vec<f64> {
    fn from(l: Latent) -> Self {
        l.0
    }
}

impl TryFrom<Vec<f64>> for Latent {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Latent::new(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_nan() {
        assert!(Latent::new(vec![]).is_err());
        assert!(Latent::new(vec![1.0, f64::NAN]).is_err());
        assert!(Latent::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn lincomb_checks_dimension() {
        let a = Latent::new(vec![1.0, 2.0]).unwrap();
        let b = Latent::new(vec![1.0]).unwrap();
        assert!(matches!(
            a.lincomb(1.0, &b, 1.0),
            Err(Error::Dimension {
                expected: 2,
                found: 1
            })
        ));
    }

    #[test]
    fn cosine_of_zero_is_zero() {
        let z = Latent::zeros(3);
        let a = Latent::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(z.cosine(&a), 0.0);
        assert!((a.cosine(&a) - 1.0).abs() < 1e-15);
    }
}
