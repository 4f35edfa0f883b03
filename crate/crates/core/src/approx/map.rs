use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Layer {
    fn param_count(&self) -> usize {
        self.output * (self.input + 1)
    }
}

/// Stack of affine layers with optional tanh, backed by one flat parameter
/// vector.
///
/// Each layer stores its output rows one after another, every row being the
/// input weights followed by the bias. Growing the output of the last layer
/// therefore only appends to the parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamMap {
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass; `values[0]` is the input and
/// `values[l + 1]` the output of layer `l`.
#[derive(Clone, Debug)]
pub struct Tape {
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("tape has at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyHeader {
    layers: Vec<Layer>,
    param_count: usize,
    encoding: String,
}

impl ParamMap {
    /// Tanh hidden layers of the given widths followed by an affine output.
    /// Weights and biases start uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let layers = Self::topology(input, hidden, output);
        let mut params = Vec::with_capacity(layers.iter().map(Layer::param_count).sum());
        for layer in &layers {
            let bound = 1.0 / (layer.input.max(1) as f64).sqrt();
            params.extend((0..layer.param_count()).map(|_| rng.random_range(-bound..=bound)));
        }
        ParamMap { layers, params }
    }

    pub fn zeros(input: usize, hidden: &[usize], output: usize) -> Self {
        let layers = Self::topology(input, hidden, output);
        let n = layers.iter().map(Layer::param_count).sum();
        ParamMap {
            layers,
            params: vec![0.0; n],
        }
    }

    pub fn from_parts(layers: Vec<Layer>, params: Vec<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(LabError::Precondition("a map needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].output != w[1].input {
                return Err(LabError::ShapeMismatch {
                    context: "layer chaining",
                    expected: w[0].output,
                    got: w[1].input,
                });
            }
        }
        let expected: usize = layers.iter().map(Layer::param_count).sum();
        if params.len() != expected {
            return Err(LabError::ShapeMismatch {
                context: "parameter vector",
                expected,
                got: params.len(),
            });
        }
        Ok(ParamMap { layers, params })
    }

    fn topology(input: usize, hidden: &[usize], output: usize) -> Vec<Layer> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(Layer {
                input: prev,
                output: h,
                activation: Activation::Tanh,
            });
            prev = h;
        }
        layers.push(Layer {
            input: prev,
            output,
            activation: Activation::Identity,
        });
        layers
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `params += scale * direction`.
    pub fn add_scaled(&mut self, direction: &[f64], scale: f64) {
        for (p, d) in self.params.iter_mut().zip(direction) {
            *p += scale * d;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(LabError::ShapeMismatch {
                context: "map input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        let mut offset = 0;
        for layer in &self.layers {
            current = apply_layer(layer, &self.params[offset..offset + layer.param_count()], &current);
            offset += layer.param_count();
        }
        Ok(current)
    }

    pub fn forward_tape(&self, x: &[f64]) -> Result<Tape> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        let mut offset = 0;
        for layer in &self.layers {
            let next = apply_layer(
                layer,
                &self.params[offset..offset + layer.param_count()],
                values.last().expect("non-empty"),
            );
            values.push(next);
            offset += layer.param_count();
        }
        Ok(Tape { values })
    }

    /// Back-propagates `upstream` (gradient with respect to the output)
    /// through a recorded pass. Parameter gradients are added into
    /// `param_grad`; the input gradient is returned.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], param_grad: &mut [f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(LabError::ShapeMismatch {
                context: "upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if param_grad.len() != self.params.len() {
            return Err(LabError::ShapeMismatch {
                context: "parameter gradient buffer",
                expected: self.params.len(),
                got: param_grad.len(),
            });
        }
        let mut grad_out = upstream.to_vec();
        let mut end = self.params.len();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let start = end - layer.param_count();
            let out = &tape.values[l + 1];
            if layer.activation == Activation::Tanh {
                for (g, y) in grad_out.iter_mut().zip(out) {
                    *g *= 1.0 - y * y;
                }
            }
            let input = &tape.values[l];
            let w = &self.params[start..end];
            let gw = &mut param_grad[start..end];
            let stride = layer.input + 1;
            let mut grad_in = vec![0.0; layer.input];
            for (o, &g) in grad_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &w[o * stride..(o + 1) * stride];
                let grow = &mut gw[o * stride..(o + 1) * stride];
                for i in 0..layer.input {
                    grow[i] += g * input[i];
                    grad_in[i] += g * row[i];
                }
                grow[layer.input] += g;
            }
            grad_out = grad_in;
            end = start;
        }
        Ok(grad_out)
    }

    /// Output together with the exact gradients of `upstream . output` with
    /// respect to the input and to the parameters.
    pub fn forward_backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let tape = self.forward_tape(input)?;
        let mut pg = vec![0.0; self.params.len()];
        let ig = self.backward(&tape, upstream, &mut pg)?;
        Ok((tape.output().to_vec(), ig, pg))
    }

    /// Appends `n_new` output units to the last layer. Existing parameters
    /// keep their values and positions.
    pub fn stack_output_rows<R: Rng + ?Sized>(&mut self, n_new: usize, rng: &mut R) {
        let last = self.layers.last_mut().expect("non-empty");
        let bound = 1.0 / (last.input.max(1) as f64).sqrt();
        let added = n_new * (last.input + 1);
        last.output += n_new;
        self.params.extend((0..added).map(|_| rng.random_range(-bound..=bound)));
    }

    /// Writes `<name>.bin` (little-endian f64 parameters) and `<name>.json`
    /// (topology header) into `dir`.
    pub fn write_checkpoint(&self, dir: &Path, name: &str) -> Result<()> {
        let bin = dir.join(format!("{name}.bin"));
        let json = dir.join(format!("{name}.json"));
        write_params(&bin, &self.params)?;
        let header = TopologyHeader {
            layers: self.layers.clone(),
            param_count: self.params.len(),
            encoding: "f64-le".into(),
        };
        std::fs::write(&json, serde_json::to_string_pretty(&header)?).map_err(|e| LabError::io(&json, e))?;
        Ok(())
    }

    pub fn read_checkpoint(dir: &Path, name: &str) -> Result<Self> {
        let bin = dir.join(format!("{name}.bin"));
        let json = dir.join(format!("{name}.json"));
        let text = std::fs::read_to_string(&json).map_err(|e| LabError::io(&json, e))?;
        let header: TopologyHeader = serde_json::from_str(&text)?;
        let params = read_params(&bin)?;
        if params.len() != header.param_count {
            return Err(LabError::ShapeMismatch {
                context: "checkpoint payload",
                expected: header.param_count,
                got: params.len(),
            });
        }
        Self::from_parts(header.layers, params)
    }
}

/// Writes a flat parameter vector as little-endian f64.
pub fn write_params(path: &Path, params: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = params.iter().flat_map(|p| p.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

pub fn read_params(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(LabError::ShapeMismatch {
            context: "little-endian f64 payload",
            expected: bytes.len() / 8 * 8,
            got: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn apply_layer(layer: &Layer, w: &[f64], x: &[f64]) -> Vec<f64> {
    let stride = layer.input + 1;
    (0..layer.output)
        .map(|o| {
            let row = &w[o * stride..(o + 1) * stride];
            let z = row[..layer.input]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + row[layer.input];
            match layer.activation {
                Activation::Identity => z,
                Activation::Tanh => z.tanh(),
            }
        })
        .collect()
}
