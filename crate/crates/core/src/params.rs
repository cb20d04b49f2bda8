//! Uniform traversal of named parameter tensors.

use ndarray::{ArrayViewD, ArrayViewMutD};

use crate::data::container::TensorContainer;
use crate::error::Result;
use crate::real::Real;

/// Anything holding named tensors: weights, adapters, heads and their gradients.
///
/// `visit` and `visit_mut` must yield the same names in the same order; the
/// optimiser relies on it to pair parameters with gradients and state.
pub trait Params<F: Real> {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, _| out.push(name.to_string()));
        out
    }

    fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        let mut err = None;
        self.visit(&mut |name, t| {
            if err.is_none() {
                let data: Vec<F> = t.iter().copied().collect();
                if let Err(e) = c.insert(name, t.shape(), &data) {
                    err = Some(e);
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(c),
        }
    }

    /// Overwrite every tensor from `c`, which must hold all names with matching shapes.
    fn load_from(&mut self, c: &TensorContainer) -> Result<()> {
        let mut err = None;
        self.visit_mut(&mut |name, mut t| {
            if err.is_some() {
                return;
            }
            match c.get::<F>(name) {
                Ok(src) if src.shape() == t.shape() => t.assign(&src),
                Ok(src) => {
                    err = Some(crate::Error::Dimension(format!(
                        "`{name}` has shape {:?}, expected {:?}",
                        src.shape(),
                        t.shape()
                    )))
                }
                Err(e) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// All values flattened in visit order.
    fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.extend(t.iter().copied()));
        out
    }
}
