//! Desk-scale 1D residual CNN.
//!
//! Layout: `conv(k=3) → ReLU` stem, then residual blocks of
//! `conv → ReLU → conv` with an identity skip (or a 1×1 projection when the
//! channel count changes) followed by ReLU, then global average pooling and
//! a dense head. There is no batch normalization, so the network is a pure
//! function of its parameters and input.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;
use crate::autodiff::{NodeId, Tape, Tensor};

pub const KERNEL_SIZE: usize = 3;

/// Default channel list: stem width followed by one entry per residual block.
pub const DEFAULT_CHANNELS: [usize; 4] = [16, 16, 32, 32];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub stem_channels: usize,
    pub block_channels: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    /// `channels[0]` is the stem width, the rest are residual block widths.
    pub fn from_channels(channels: &[usize], classes: usize) -> Result<Self, ModelError> {
        let (&stem, blocks) = channels
            .split_first()
            .ok_or_else(|| ModelError::Architecture("channel list is empty".into()))?;
        if channels.contains(&0) {
            return Err(ModelError::Architecture("zero-width layer".into()));
        }
        if classes < 2 {
            return Err(ModelError::Architecture(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        Ok(Self {
            stem_channels: stem,
            block_channels: blocks.to_vec(),
            classes,
        })
    }

    pub fn feature_channels(&self) -> usize {
        self.block_channels
            .last()
            .copied()
            .unwrap_or(self.stem_channels)
    }

    /// Names and shapes of every parameter tensor, in forward order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let k = KERNEL_SIZE;
        let mut layout = vec![
            ("stem.weight".to_string(), vec![self.stem_channels, 1, k]),
            ("stem.bias".to_string(), vec![self.stem_channels]),
        ];
        let mut c_in = self.stem_channels;
        for (i, &c_out) in self.block_channels.iter().enumerate() {
            layout.push((format!("block{i}.conv1.weight"), vec![c_out, c_in, k]));
            layout.push((format!("block{i}.conv1.bias"), vec![c_out]));
            layout.push((format!("block{i}.conv2.weight"), vec![c_out, c_out, k]));
            layout.push((format!("block{i}.conv2.bias"), vec![c_out]));
            if c_in != c_out {
                layout.push((format!("block{i}.proj.weight"), vec![c_out, c_in, 1]));
                layout.push((format!("block{i}.proj.bias"), vec![c_out]));
            }
            c_in = c_out;
        }
        layout.push(("head.weight".to_string(), vec![self.classes, c_in]));
        layout.push(("head.bias".to_string(), vec![self.classes]));
        layout
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCNN1D {
    arch: Architecture,
    params: Vec<NamedTensor>,
}

/// He-style fan-in initialization with zero biases.
pub fn init_model(channels: &[usize], classes: usize, seed: u64) -> Result<ResidualCNN1D, ModelError> {
    let arch = Architecture::from_channels(channels, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = arch
        .parameter_layout()
        .into_iter()
        .map(|(name, shape)| {
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .expect("positive fan-in");
                let n = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Tensor::new(shape, data).expect("layout shape")
            };
            NamedTensor { name, tensor }
        })
        .collect();
    Ok(ResidualCNN1D { arch, params })
}

impl ResidualCNN1D {
    /// Rebuilds a model from named tensors, inferring the architecture from
    /// the stem, block and head shapes.
    pub fn from_named(params: Vec<NamedTensor>) -> Result<Self, ModelError> {
        let find = |name: &str| {
            params
                .iter()
                .find(|p| p.name == name)
                .map(|p| p.tensor.shape().to_vec())
                .ok_or_else(|| ModelError::Architecture(format!("missing tensor {name}")))
        };
        let stem = find("stem.weight")?[0];
        let classes = find("head.weight")?[0];
        let mut channels = vec![stem];
        while let Ok(shape) = find(&format!("block{}.conv1.weight", channels.len() - 1)) {
            channels.push(shape[0]);
        }
        let arch = Architecture::from_channels(&channels, classes)?;
        let layout = arch.parameter_layout();
        if layout.len() != params.len() {
            return Err(ModelError::Architecture(format!(
                "expected {} tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if &p.name != name || p.tensor.shape() != shape.as_slice() {
                return Err(ModelError::Architecture(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn parameters(&self) -> &[NamedTensor] {
        &self.params
    }

    pub(crate) fn parameters_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Zeroes the dense head, making every logit 0 regardless of input.
    pub fn zero_head(&mut self) {
        for p in &mut self.params {
            if p.name.starts_with("head.") {
                p.tensor.data_mut().fill(0.0);
            }
        }
    }

    /// Order-sensitive digest of every parameter bit pattern.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for v in p.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params.iter().map(|p| tape.leaf(p.tensor.clone())).collect()
    }

    /// Forward pass using already-bound parameter nodes. `input` must be
    /// `[batch, 1, len]`; the result is `[batch, classes]` logits.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        input: NodeId,
    ) -> Result<NodeId, ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::Architecture(format!(
                "{} parameter nodes for {} tensors",
                params.len(),
                self.params.len()
            )));
        }
        let mut next = params.iter().copied();
        let mut take = || next.next().expect("length checked above");

        let (w, b) = (take(), take());
        let h = tape.conv1d(input, w, b)?;
        let mut h = tape.relu(h);
        let mut c_in = self.arch.stem_channels;
        for &c_out in &self.arch.block_channels {
            let (w1, b1, w2, b2) = (take(), take(), take(), take());
            let z = tape.conv1d(h, w1, b1)?;
            let z = tape.relu(z);
            let z = tape.conv1d(z, w2, b2)?;
            let skip = if c_in != c_out {
                let (wp, bp) = (take(), take());
                tape.conv1d(h, wp, bp)?
            } else {
                h
            };
            let sum = tape.add(z, skip)?;
            h = tape.relu(sum);
            c_in = c_out;
        }
        let pooled = tape.global_avg_pool(h)?;
        let (wh, bh) = (take(), take());
        Ok(tape.dense(pooled, wh, bh)?)
    }

    /// Binds parameters and runs the forward pass.
    pub fn forward(&self, tape: &mut Tape, input: NodeId) -> Result<(Vec<NodeId>, NodeId), ModelError> {
        let params = self.bind(tape);
        let logits = self.forward_bound(tape, &params, input)?;
        Ok((params, logits))
    }

    /// Logits for a block of series, `n × m` to `n × classes`.
    pub fn logits(&self, series: ArrayView2<'_, f64>) -> Result<Array2<f64>, ModelError> {
        let mut tape = Tape::new();
        let input = tape.leaf(series_tensor(series));
        let (_, logits) = self.forward(&mut tape, input)?;
        let z = tape.value(logits);
        Ok(Array2::from_shape_vec((z.shape()[0], z.shape()[1]), z.data().to_vec())
            .expect("logits are [batch, classes]"))
    }
}

/// `n × m` values as a `[n, 1, m]` tensor.
pub fn series_tensor(series: ArrayView2<'_, f64>) -> Tensor {
    let (n, m) = series.dim();
    Tensor::new(vec![n, 1, m], series.iter().copied().collect()).expect("n·m values")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn same_seed_same_parameters() {
        let a = init_model(&DEFAULT_CHANNELS, 2, 5).unwrap();
        let b = init_model(&DEFAULT_CHANNELS, 2, 5).unwrap();
        let c = init_model(&DEFAULT_CHANNELS, 2, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn default_parameter_count_matches_hand_count() {
        // stem: 16·1·3 + 16
        // block0 16→16: 2·(16·16·3 + 16)
        // block1 16→32: (32·16·3 + 32) + (32·32·3 + 32) + (32·16 + 32)
        // block2 32→32: 2·(32·32·3 + 32)
        // head: 2·32 + 2
        let expected = (48 + 16)
            + 2 * (768 + 16)
            + (1536 + 32) + (3072 + 32) + (512 + 32)
            + 2 * (3072 + 32)
            + (64 + 2);
        assert_eq!(expected, 13122);
        let model = init_model(&DEFAULT_CHANNELS, 2, 0).unwrap();
        assert_eq!(model.parameter_count(), expected);
        assert_eq!(model.architecture().parameter_count(), expected);
    }

    #[test]
    fn biases_start_at_zero() {
        let model = init_model(&DEFAULT_CHANNELS, 3, 1).unwrap();
        for p in model.parameters().iter().filter(|p| p.name.ends_with(".bias")) {
            assert!(p.tensor.data().iter().all(|&v| v == 0.0), "{}", p.name);
        }
    }

    #[test]
    fn forward_accepts_any_length() {
        let model = init_model(&[4, 4, 6], 3, 2).unwrap();
        for m in [2, 3, 17] {
            let x = Array2::from_shape_fn((5, m), |(i, t)| (i as f64 - t as f64) * 0.1);
            let z = model.logits(x.view()).unwrap();
            assert_eq!(z.dim(), (5, 3));
        }
    }

    #[test]
    fn from_named_round_trip_and_rejects_garbage() {
        let model = init_model(&[4, 8, 8], 2, 9).unwrap();
        let rebuilt = ResidualCNN1D::from_named(model.parameters().to_vec()).unwrap();
        assert_eq!(rebuilt, model);

        let mut missing = model.parameters().to_vec();
        missing.pop();
        assert!(ResidualCNN1D::from_named(missing).is_err());
    }

    #[test]
    fn rejects_empty_channels() {
        assert!(init_model(&[], 2, 0).is_err());
        assert!(init_model(&[4], 1, 0).is_err());
    }
}
