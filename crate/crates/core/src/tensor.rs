//! Dense row-major `f64` tensors and the layer-indexed [`WeightSet`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorF {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorF {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return invalid(format!("tensor shape {shape:?} has a zero dimension"));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return shape_err(format!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("tensor contains non-finite values");
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Parameters of one parameterized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub layer_index: usize,
    pub kernel: TensorF,
    pub bias: TensorF,
}

/// Ordered parameters of a network, one entry per parameterized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub entries: Vec<LayerWeights>,
}

impl WeightSet {
    pub fn new(entries: Vec<LayerWeights>) -> Self {
        Self { entries }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| LayerWeights {
                    layer_index: e.layer_index,
                    kernel: TensorF::zeros(e.kernel.shape.clone()),
                    bias: TensorF::zeros(e.bias.shape.clone()),
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|e| e.kernel.len() + e.bias.len()).sum()
    }

    /// All parameters in canonical order (per layer: kernel, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for e in &self.entries {
            out.extend_from_slice(&e.kernel.values);
            out.extend_from_slice(&e.bias.values);
        }
        out
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.entries
            .iter()
            .flat_map(|e| e.kernel.values.iter().chain(e.bias.values.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.entries
            .iter_mut()
            .flat_map(|e| e.kernel.values.iter_mut().chain(e.bias.values.iter_mut()))
    }

    /// Writes `values` back in [`flatten`](Self::flatten) order.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return shape_err(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            ));
        }
        for (p, v) in self.params_mut().zip(values) {
            *p = *v;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &WeightSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.layer_index == b.layer_index
                    && a.kernel.shape == b.kernel.shape
                    && a.bias.shape == b.bias.shape
            })
    }

    pub fn check_same_shape(&self, other: &WeightSet) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            shape_err("weight sets are not shape-congruent")
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }
}
