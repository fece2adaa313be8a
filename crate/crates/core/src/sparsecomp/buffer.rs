use crate::error::Result;
use crate::nn::Model;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerBuffer {
    pub input_elements: usize,
    pub output_elements: usize,
}

impl LayerBuffer {
    /// Input plus output activations, which must coexist in memory.
    pub fn requirement(&self) -> usize {
        self.input_elements + self.output_elements
    }
}

/// Activation memory needed to run a model layer by layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BufferProfile {
    pub layers: Vec<LayerBuffer>,
    pub element_bytes: usize,
}

impl BufferProfile {
    /// Largest per-layer requirement, in elements.
    pub fn working_buffer(&self) -> usize {
        self.layers.iter().map(LayerBuffer::requirement).max().unwrap_or(0)
    }

    pub fn working_buffer_bytes(&self) -> usize {
        self.working_buffer() * self.element_bytes
    }

    pub fn requirement_bytes(&self, idx: usize) -> usize {
        self.layers[idx].requirement() * self.element_bytes
    }

    /// Layer with the largest requirement, lowest index on ties.
    pub fn largest(&self) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for (i, l) in self.layers.iter().enumerate() {
            if best.is_none_or(|(_, r)| l.requirement() > r) {
                best = Some((i, l.requirement()));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Profile of `model` run on samples of `input_shape`.
pub fn buffer_profile<T: Scalar>(model: &Model<T>, input_shape: &[usize]) -> Result<BufferProfile> {
    let mut shape = input_shape.to_vec();
    let mut layers = Vec::with_capacity(model.len());
    for l in model.layers() {
        let out = l.kind().output_shape(&shape)?;
        layers.push(LayerBuffer {
            input_elements: shape.iter().product(),
            output_elements: out.iter().product(),
        });
        shape = out;
    }
    Ok(BufferProfile {
        layers,
        element_bytes: T::BYTES,
    })
}
