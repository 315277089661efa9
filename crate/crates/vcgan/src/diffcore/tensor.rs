//! Dense tensors and shared parameter handles.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use num_traits::Float;

use crate::rng::Rng;

use super::DiffError;

/// Element type for graph arithmetic. Training runs in f32; gradient
/// checking re-evaluates the same graphs in f64.
pub trait Scalar:
    Float
    + num_traits::NumAssign
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64_val(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64_val(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64_val(self) -> f64 {
        self
    }
}

/// Dense n-dimensional array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self, DiffError> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != data.len() {
            return Err(DiffError::ShapeMismatch(format!(
                "tensor shape {:?} does not hold {} elements",
                shape,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Zero-mean Gaussian initialization with the given standard deviation.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(rng.gaussian() * std))
            .collect();
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Accumulate into the gradient buffer, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.data.len());
        match &mut self.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Lossless element-type conversion (used to re-run graphs in f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64_val())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

/// Named, shared handle to a trainable tensor. Graphs hold clones of the
/// handle; gradients written during backprop land in the shared tensor.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    inner: Rc<RefCell<Tensor<T>>>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, mut tensor: Tensor<T>) -> Self {
        tensor.requires_grad = true;
        Param {
            name: name.into(),
            inner: Rc::new(RefCell::new(tensor)),
        }
    }

    pub fn value(&self) -> std::cell::Ref<'_, Tensor<T>> {
        self.inner.borrow()
    }

    pub fn value_mut(&self) -> std::cell::RefMut<'_, Tensor<T>> {
        self.inner.borrow_mut()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().numel()
    }

    pub fn data_clone(&self) -> Vec<T> {
        self.inner.borrow().data.clone()
    }

    pub fn grad_clone(&self) -> Option<Vec<T>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().zero_grad();
    }

    pub fn accumulate_grad(&self, delta: &[T]) {
        self.inner.borrow_mut().accumulate_grad(delta);
    }

    /// Two handles are the same parameter iff they share storage.
    pub fn same_storage(&self, other: &Param<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param::new(self.name.clone(), self.inner.borrow().cast::<U>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(vec![0], vec![]).is_err());
    }

    #[test]
    fn grad_accumulates_additively() {
        let mut t = Tensor::<f64>::zeros(vec![3]).with_grad();
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[0.5, 0.5, 0.5]);
        assert_eq!(t.grad.as_deref(), Some(&[1.5, 2.5, 3.5][..]));
        t.zero_grad();
        assert!(t.grad.is_none());
    }

    #[test]
    fn param_handles_share_storage() {
        let p = Param::new("w", Tensor::<f32>::zeros(vec![2]));
        let q = p.clone();
        q.accumulate_grad(&[1.0, 1.0]);
        assert_eq!(p.grad_clone(), Some(vec![1.0, 1.0]));
        assert!(p.same_storage(&q));
        let r = Param::new("w", Tensor::<f32>::zeros(vec![2]));
        assert!(!p.same_storage(&r));
    }
}
