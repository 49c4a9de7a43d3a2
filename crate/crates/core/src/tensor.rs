//! Dense row-major `f64` tensors and the seeded generator used everywhere
//! randomness is needed.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Seeded, platform-independent random source (ChaCha8).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    pub(crate) fn chacha(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dist {
    Uniform { lo: f64, hi: f64 },
    Normal { mu: f64, sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
}

/// Right-hand side of an elementwise operation.
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 5 {
            return Err(Error::Shape(format!("rank {} not in 1..=5", shape.len())));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite tensor value".into()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "dot of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn elementwise(&self, op: ElementwiseOp, rhs: Operand<'_>) -> Result<Tensor> {
        let f = |a: f64, b: f64| match op {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
            ElementwiseOp::Relu => a.max(0.0),
        };
        let data = match rhs {
            Operand::Scalar(b) => self.data.iter().map(|&a| f(a, b)).collect(),
            Operand::Tensor(t) => {
                if t.shape != self.shape {
                    return Err(Error::Shape(format!(
                        "elementwise {:?}: {:?} vs {:?}",
                        op, self.shape, t.shape
                    )));
                }
                self.data.iter().zip(&t.data).map(|(&a, &b)| f(a, b)).collect()
            }
        };
        Tensor::from_vec(&self.shape, data)
    }

    pub fn relu(&self) -> Tensor {
        self.elementwise(ElementwiseOp::Relu, Operand::Scalar(0.0))
            .expect("scalar operand never mismatches")
    }

    pub fn fill_random(shape: &[usize], dist: Dist, rng: &mut Rng) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        let data: Vec<f64> = match dist {
            Dist::Uniform { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::Distribution(format!("uniform({lo}, {hi})")));
                }
                (0..len)
                    .map(|_| {
                        let v = lo + (hi - lo) * rng.uniform();
                        // guard the open upper end against rounding
                        if v < hi {
                            v
                        } else {
                            lo
                        }
                    })
                    .collect()
            }
            Dist::Normal { mu, sigma } => {
                if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() {
                    return Err(Error::Distribution(format!("normal({mu}, {sigma})")));
                }
                let normal = Normal::new(mu, sigma)
                    .map_err(|e| Error::Distribution(e.to_string()))?;
                (0..len).map(|_| normal.sample(rng.chacha())).collect()
            }
        };
        Tensor::from_vec(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let a = t(&[1.0, 2.0]);
        let b = t(&[3.0, 4.0]);
        let prod = a.elementwise(ElementwiseOp::Mul, Operand::Tensor(&b)).unwrap();
        assert_eq!(prod.data(), &[3.0, 8.0]);
        assert_eq!(t(&[-1.0, 2.0]).relu().data(), &[0.0, 2.0]);
        let z = t(&[0.0, 0.0])
            .elementwise(ElementwiseOp::Add, Operand::Scalar(0.0))
            .unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let err = t(&[1.0])
            .elementwise(ElementwiseOp::Sub, Operand::Tensor(&t(&[1.0, 2.0])))
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn inputs_unmodified() {
        let a = t(&[1.0, -2.0]);
        let before = a.clone();
        let _ = a.relu();
        assert_eq!(a, before);
    }

    #[test]
    fn uniform_is_seeded_and_in_support() {
        let d = Dist::Uniform { lo: 0.0, hi: 1.0 };
        let a = Tensor::fill_random(&[4, 5], d, &mut Rng::new(7)).unwrap();
        let b = Tensor::fill_random(&[4, 5], d, &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
        let c = Tensor::fill_random(&[1000], Dist::Uniform { lo: 2.0, hi: 3.0 }, &mut Rng::new(1))
            .unwrap();
        assert!(c.data().iter().all(|&v| (2.0..3.0).contains(&v)));
    }

    #[test]
    fn normal_sample_mean() {
        let n = Tensor::fill_random(&[10_000], Dist::Normal { mu: 0.0, sigma: 1.0 }, &mut Rng::new(3))
            .unwrap();
        let mean = n.data().iter().sum::<f64>() / n.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn bad_distributions() {
        let mut rng = Rng::new(0);
        assert!(Tensor::fill_random(&[2], Dist::Uniform { lo: 1.0, hi: 1.0 }, &mut rng).is_err());
        assert!(Tensor::fill_random(&[2], Dist::Normal { mu: 0.0, sigma: 0.0 }, &mut rng).is_err());
    }

    #[test]
    fn reshape_round_trip() {
        let a = Tensor::fill_random(&[2, 3, 4], Dist::Uniform { lo: -1.0, hi: 1.0 }, &mut Rng::new(9))
            .unwrap();
        let b = a.clone().reshape(&[24]).unwrap().reshape(&[2, 3, 4]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get(&[1, 2, 3]), a.data()[23]);
    }
}
