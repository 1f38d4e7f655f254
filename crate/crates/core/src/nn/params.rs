//! Named, shape-tagged parameter arrays.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of tensors addressed by index or canonical name
/// (`trunk/...`, `cls/...`, `pred/...`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn view1(&self, id: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.tensors[id].data[..])
    }

    pub(crate) fn view2(&self, id: usize) -> ArrayView2<'_, f64> {
        let t = &self.tensors[id];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("tensor shape")
    }

    /// Zero tensors with the same layout, used as a gradient accumulator.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect(),
        }
    }

    /// Copies values for every name present in both stores whose name
    /// satisfies `filter`, checking shapes. Returns the number copied.
    pub fn copy_from(&mut self, other: &ParamStore, filter: impl Fn(&str) -> bool) -> Result<usize> {
        let mut n = 0;
        for (name, t) in other.iter() {
            if !filter(name) {
                continue;
            }
            let Some(i) = self.index_of(name) else { continue };
            if self.tensors[i].shape != t.shape {
                return Err(Error::ConfigMismatch(format!(
                    "{name}: shape {:?} vs {:?}",
                    self.tensors[i].shape, t.shape
                )));
            }
            self.tensors[i].data.copy_from_slice(&t.data);
            n += 1;
        }
        Ok(n)
    }

    pub(crate) fn add_to2(&mut self, id: usize, g: ArrayView2<'_, f64>) {
        let t = &mut self.tensors[id];
        let mut v = ArrayViewMut2::from_shape((t.shape[0], t.shape[1]), &mut t.data).expect("tensor shape");
        v += &g;
    }

    pub(crate) fn add_to1(&mut self, id: usize, g: ArrayView1<'_, f64>) {
        for (a, b) in self.tensors[id].data.iter_mut().zip(g.iter()) {
            *a += b;
        }
    }
}
