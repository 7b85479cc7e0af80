use crate::error::{invalid, shape_err, Result};

/// Flat, row-major collection of fixed-length samples with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_len: usize,
    pub inputs: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(sample_len: usize, inputs: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if sample_len == 0 {
            return invalid("sample length must be positive");
        }
        if inputs.len() != sample_len * labels.len() {
            return shape_err(format!(
                "{} inputs do not hold {} samples of length {sample_len}",
                inputs.len(),
                labels.len()
            ));
        }
        if labels.iter().any(|&l| l > 1) {
            return invalid("labels must be 0 or 1");
        }
        Ok(Self { sample_len, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.sample_len..(i + 1) * self.sample_len]
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(idx.len() * self.sample_len);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            inputs.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Dataset { sample_len: self.sample_len, inputs, labels }
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}
