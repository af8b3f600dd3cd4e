use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layout::{Component, Init, Layout};
use super::{ModelDims, ModelError, Result};
use crate::tensor::Tensor;

/// Every trainable array of the network, in layout order.
#[derive(Clone, Debug)]
pub struct ModelParams {
    dims: ModelDims,
    layout: Arc<Layout>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let layout = Layout::new(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|s| {
                let n = s.numel();
                let values = match s.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Normal(std) => (0..n)
                        .map(|_| {
                            let g: f64 = StandardNormal.sample(&mut rng);
                            std * g
                        })
                        .collect::<Vec<f64>>(),
                };
                Tensor::new(s.shape.clone(), values).map_err(ModelError::from)
            })
            .collect::<Result<_>>()?;
        Ok(ModelParams { dims: dims.clone(), layout: Arc::new(layout), tensors })
    }

    /// Rebuilds from arrays in layout order, checking every shape.
    pub fn from_tensors(dims: &ModelDims, tensors: Vec<Tensor>) -> Result<Self> {
        dims.validate()?;
        let layout = Layout::new(dims);
        if tensors.len() != layout.specs.len() {
            return Err(ModelError::DimMismatch(format!(
                "{} arrays for {} parameters",
                tensors.len(),
                layout.specs.len()
            )));
        }
        for (t, s) in tensors.iter().zip(&layout.specs) {
            if t.shape() != s.shape.as_slice() {
                return Err(ModelError::DimMismatch(format!("{}: {:?} vs {:?}", s.name, t.shape(), s.shape)));
            }
        }
        Ok(ModelParams { dims: dims.clone(), layout: Arc::new(layout), tensors })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.layout.specs[i].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layout.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn set(&mut self, i: usize, t: Tensor) -> Result<()> {
        if t.shape() != self.tensors[i].shape() {
            return Err(ModelError::DimMismatch(format!(
                "{}: {:?} vs {:?}",
                self.name(i),
                t.shape(),
                self.tensors[i].shape()
            )));
        }
        self.tensors[i] = t;
        Ok(())
    }

    /// Number of scalars held by the instantiated arrays.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn numel_of(&self, c: Component) -> usize {
        self.tensors
            .iter()
            .zip(&self.layout.specs)
            .filter(|(_, s)| super::layout::component_of(&s.name) == c)
            .map(|(t, _)| t.numel())
            .sum()
    }
}
