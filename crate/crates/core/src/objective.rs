//! Loss functions over a flat parameter vector: value, gradient and
//! Hessian-vector product.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Mode, Network};
use crate::tape::Tape;
use crate::tensor::{Dual, Real, Tensor};

/// Loss and error rate on the training split and (optionally) the test split.
/// A missing test split is reported as NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellValue {
    pub train_loss: f64,
    pub train_err: f64,
    pub test_loss: f64,
    pub test_err: f64,
}

pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Loss/error at `params`; pure.
    fn evaluate(&self, params: &[f64]) -> Result<CellValue>;

    /// Gradient of the training loss.
    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>>;

    /// Hessian of the training loss applied to `v`.
    fn hvp(&self, params: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    /// Hash identifying the model the parameters belong to.
    fn spec_hash(&self) -> String {
        String::new()
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: params.len() });
        }
        Ok(())
    }
}

/// Mean cross-entropy of a network over a dataset, in inference mode
/// (batch norm uses the running statistics stored in the parameters).
pub struct NetworkObjective<'a> {
    pub net: &'a Network,
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl<'a> NetworkObjective<'a> {
    pub fn new(net: &'a Network, train: &Dataset, test: Option<&Dataset>) -> Self {
        NetworkObjective { net, train: train.clone(), test: test.cloned() }
    }

    /// Restricts both splits to their first `n` samples.
    pub fn subsample(mut self, n: usize) -> Self {
        self.train = self.train.head(n);
        self.test = self.test.map(|t| t.head(n));
        self
    }
}

impl Objective for NetworkObjective<'_> {
    fn dim(&self) -> usize {
        self.net.dim()
    }

    fn evaluate(&self, params: &[f64]) -> Result<CellValue> {
        let tr = self.net.evaluate(params, &self.train.features, &self.train.labels)?;
        let te = match &self.test {
            Some(t) => Some(self.net.evaluate(params, &t.features, &t.labels)?),
            None => None,
        };
        Ok(CellValue {
            train_loss: tr.loss,
            train_err: tr.error,
            test_loss: te.map_or(f64::NAN, |e| e.loss),
            test_err: te.map_or(f64::NAN, |e| e.error),
        })
    }

    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.loss_grad(params, &self.train.features, &self.train.labels, Mode::Eval)?.1)
    }

    fn hvp(&self, params: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.net.hvp(params, v, &self.train.features, &self.train.labels, Mode::Eval)
    }

    fn spec_hash(&self) -> String {
        self.net.spec_hash().to_string()
    }
}

/// `L(θ) = ½ (θ − c)ᵀ A (θ − c)` with symmetric `A`, evaluated on the tape.
#[derive(Clone, Debug)]
pub struct Quadratic {
    n: usize,
    a: Tensor<f64>,
    center: Vec<f64>,
}

impl Quadratic {
    /// `a` is row-major `n × n`.
    pub fn new(a: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        let n = center.len();
        let a = Tensor::new(vec![n, n], a)?;
        Ok(Quadratic { n, a, center })
    }

    pub fn identity(n: usize) -> Self {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        Quadratic::new(a, vec![0.0; n]).expect("square")
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut a = vec![0.0; n * n];
        for (i, &v) in d.iter().enumerate() {
            a[i * n + i] = v;
        }
        Quadratic::new(a, vec![0.0; n]).expect("square")
    }

    pub fn matrix(&self) -> &[f64] {
        self.a.data()
    }

    fn record<T: Real>(&self, params: &[T]) -> Result<(Tape<T>, crate::tape::Var)> {
        let mut tape = Tape::<T>::new();
        let th = tape.param(Tensor::new(vec![1, self.n], params.to_vec())?, 0);
        let c = tape.constant(Tensor::new(vec![1, self.n], self.center.iter().map(|&v| T::from_f64(v)).collect())?);
        let neg = tape.scale(c, -1.0);
        let d = tape.add(th, neg)?;
        let a = tape.constant(self.a.lift());
        let ad = tape.linear(d, a)?;
        let prod = tape.mul(d, ad)?;
        let s = tape.sum(prod);
        let loss = tape.scale(s, 0.5);
        Ok((tape, loss))
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.n
    }

    fn evaluate(&self, params: &[f64]) -> Result<CellValue> {
        self.check(params)?;
        let (tape, loss) = self.record(params)?;
        Ok(CellValue { train_loss: tape.value(loss).data()[0], train_err: 0.0, test_loss: f64::NAN, test_err: f64::NAN })
    }

    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        self.check(params)?;
        let (tape, loss) = self.record(params)?;
        Ok(tape.backward(loss)?.param_gradient(self.n))
    }

    fn hvp(&self, params: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(params)?;
        self.check(v)?;
        let dual: Vec<Dual> = params.iter().zip(v).map(|(&p, &t)| Dual::new(p, t)).collect();
        let (tape, loss) = self.record(&dual)?;
        Ok(tape.backward(loss)?.param_gradient(self.n).into_iter().map(|d| d.eps).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_norm_gradient_and_hessian() {
        let q = Quadratic::identity(2);
        assert_eq!(q.gradient(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(q.hvp(&[0.3, -4.0], &[0.5, 7.0]).unwrap(), vec![0.5, 7.0]);
        assert_eq!(q.evaluate(&[1.0, 2.0]).unwrap().train_loss, 2.5);
    }

    #[test]
    fn diagonal_hvp() {
        let q = Quadratic::diagonal(&[3.0, -1.0]);
        assert_eq!(q.hvp(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let q = Quadratic::identity(3);
        assert!(matches!(q.hvp(&[0.0; 3], &[1.0; 2]), Err(Error::Dimension { expected: 3, got: 2 })));
        assert!(q.evaluate(&[0.0; 4]).is_err());
    }
}
