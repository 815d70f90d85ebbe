//! Shared encoder and classifier head, composed as `classifier ∘ encoder`.
//!
//! Both are stacks of dense layers with hand-written backward passes. The
//! encoder applies ReLU after every layer; the classifier applies ReLU
//! between its layers and emits raw logits.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::layers::{relu_backward, relu_forward, Dense, LayerGrad};
use crate::numerics::loss::{softmax_cross_entropy, softmax_rows};
use crate::numerics::tensor::Tensor;
use crate::rng::{stream_rng, Stream};

/// Layer widths of the encoder and classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    /// Output width of each encoder layer; the last entry is the embedding
    /// dimension. Empty means the identity encoder.
    pub encoder_widths: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub num_classes: usize,
}

impl Architecture {
    pub fn embedding_dim(&self) -> usize {
        self.encoder_widths.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(Error::Precondition(format!(
                "architecture needs input_dim ≥ 1 and num_classes ≥ 2, got {} and {}",
                self.input_dim, self.num_classes
            )));
        }
        if self
            .encoder_widths
            .iter()
            .chain(&self.classifier_hidden)
            .any(|&w| w == 0)
        {
            return Err(Error::Precondition("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Activations saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct StackCache {
    inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
}

fn stack_forward(layers: &[Dense], x: &Tensor, relu_last: bool) -> Result<(Tensor, StackCache)> {
    let mut cache = StackCache {
        inputs: Vec::with_capacity(layers.len()),
        pre_activations: Vec::with_capacity(layers.len()),
    };
    let mut h = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        let pre = layer.forward(&h)?;
        let out = if relu_last || i + 1 < layers.len() {
            relu_forward(&pre)
        } else {
            pre.clone()
        };
        cache.inputs.push(h);
        cache.pre_activations.push(pre);
        h = out;
    }
    Ok((h, cache))
}

fn stack_backward(
    layers: &[Dense],
    cache: &StackCache,
    upstream: &Tensor,
    relu_last: bool,
) -> Result<(Vec<LayerGrad>, Tensor)> {
    if cache.inputs.len() != layers.len() {
        return Err(Error::Consistency("cache does not match layer count".into()));
    }
    let mut grads = Vec::with_capacity(layers.len());
    let mut g = upstream.clone();
    for i in (0..layers.len()).rev() {
        if relu_last || i + 1 < layers.len() {
            g = relu_backward(&cache.pre_activations[i], &g)?;
        }
        let lg = layers[i].backward(&cache.inputs[i], &g)?;
        g = lg.input.clone();
        grads.push(lg);
    }
    grads.reverse();
    Ok((grads, g))
}

fn build_stack(input: usize, widths: &[usize], rng: &mut impl rand::Rng) -> Vec<Dense> {
    let mut fan_in = input;
    widths
        .iter()
        .map(|&w| {
            let layer = Dense::he_uniform(fan_in, w, rng);
            fan_in = w;
            layer
        })
        .collect()
}

/// Feature extractor mapping `d` inputs to an `f`-dimensional embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<Dense>,
}

impl Encoder {
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, StackCache)> {
        stack_forward(&self.layers, x, true)
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    /// Returns per-layer parameter gradients and the gradient wrt the input.
    pub fn backward(&self, cache: &StackCache, upstream: &Tensor) -> Result<(Vec<LayerGrad>, Tensor)> {
        stack_backward(&self.layers, cache, upstream, true)
    }
}

/// Head mapping embeddings to `k` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub layers: Vec<Dense>,
}

impl Classifier {
    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, StackCache)> {
        stack_forward(&self.layers, z, false)
    }

    /// Logits and their row-wise softmax.
    pub fn classify(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        let (logits, _) = self.forward(z)?;
        let probs = softmax_rows(&logits);
        Ok((logits, probs))
    }

    pub fn backward(&self, cache: &StackCache, upstream: &Tensor) -> Result<(Vec<LayerGrad>, Tensor)> {
        stack_backward(&self.layers, cache, upstream, false)
    }
}

/// Encoder parameters `v` and classifier parameters `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub classifier: Classifier,
}

/// Cross-entropy loss and parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct CeGrads {
    pub loss: f64,
    pub encoder: Vec<LayerGrad>,
    pub classifier: Vec<LayerGrad>,
}

impl ModelParams {
    /// Seeded He-uniform initialization.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0, 0);
        let encoder = build_stack(arch.input_dim, &arch.encoder_widths, &mut rng);
        let mut widths = arch.classifier_hidden.clone();
        widths.push(arch.num_classes);
        let classifier = build_stack(arch.embedding_dim(), &widths, &mut rng);
        Ok(Self {
            encoder: Encoder { layers: encoder },
            classifier: Classifier { layers: classifier },
        })
    }

    pub fn architecture(&self) -> Architecture {
        let enc = &self.encoder.layers;
        let clf = &self.classifier.layers;
        let input_dim = enc.first().or(clf.first()).map_or(0, Dense::input_dim);
        Architecture {
            input_dim,
            encoder_widths: enc.iter().map(Dense::output_dim).collect(),
            classifier_hidden: clf[..clf.len().saturating_sub(1)]
                .iter()
                .map(Dense::output_dim)
                .collect(),
            num_classes: clf.last().map_or(0, Dense::output_dim),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.layers.last().map_or(0, Dense::output_dim)
    }

    /// `(embedding, logits, probs)` for a batch.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let z = self.encoder.encode(x)?;
        let (logits, probs) = self.classifier.classify(&z)?;
        Ok((z, logits, probs))
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.2)
    }

    /// Mean cross-entropy on `(x, labels)` and gradients for every layer.
    pub fn ce_grads(&self, x: &Tensor, labels: &[usize]) -> Result<CeGrads> {
        let (z, enc_cache) = self.encoder.forward(x)?;
        let (logits, clf_cache) = self.classifier.forward(&z)?;
        let (loss, d_logits) = softmax_cross_entropy(&logits, labels)?;
        let (classifier, d_z) = self.classifier.backward(&clf_cache, &d_logits)?;
        let (encoder, _) = self.encoder.backward(&enc_cache, &d_z)?;
        Ok(CeGrads {
            loss,
            encoder,
            classifier,
        })
    }

    pub fn encoder_params_mut(&mut self) -> Vec<&mut Tensor> {
        layer_params_mut(&mut self.encoder.layers)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut all = layer_params_mut(&mut self.encoder.layers);
        all.extend(layer_params_mut(&mut self.classifier.layers));
        all
    }

    pub fn encoder_params(&self) -> Vec<&Tensor> {
        layer_params(&self.encoder.layers)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut all = layer_params(&self.encoder.layers);
        all.extend(layer_params(&self.classifier.layers));
        all
    }

    /// All parameters concatenated in `params()` order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.params().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Copy of `self` with parameters replaced from a flat vector.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        let total: usize = out.params().iter().map(|t| t.len()).sum();
        if total != flat.len() {
            return Err(Error::Size {
                op: "ModelParams::with_flat",
                left: total,
                right: flat.len(),
            });
        }
        let mut offset = 0;
        for t in out.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }
}

fn layer_params(layers: &[Dense]) -> Vec<&Tensor> {
    layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
}

fn layer_params_mut(layers: &mut [Dense]) -> Vec<&mut Tensor> {
    layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
}

/// Flattens layer gradients into the `[weight, bias, ...]` order used by
/// `params_mut`.
pub fn grads_to_tensors(grads: &[LayerGrad]) -> Vec<Tensor> {
    grads.iter().flat_map(|g| [g.weight.clone(), g.bias.clone()]).collect()
}

/// Per-row argmax class and its probability. Ties go to the lower index.
pub fn predict_labels(probs: &Tensor) -> (Vec<usize>, Vec<f64>) {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            (best, row[best])
        })
        .unzip()
}

const MAGIC: &[u8; 8] = b"DACADNN1";
const DIGEST_LEN: usize = 32;

/// Serializes parameters: magic, layer counts, then per tensor a shape header
/// and little-endian `f64` payload, followed by a SHA-256 of everything before.
pub fn params_to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(params.encoder.layers.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(params.classifier.layers.len() as u32).to_le_bytes());
    for t in params.params() {
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

pub fn params_from_bytes(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let truncated = || Error::format(path, "truncated parameter file");
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN {
        return Err(truncated());
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::format(path, "checksum mismatch"));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let n_enc = r.u32().ok_or_else(truncated)? as usize;
    let n_clf = r.u32().ok_or_else(truncated)? as usize;
    let read_tensor = |r: &mut Reader| -> Result<Tensor> {
        let ndim = r.u32().ok_or_else(truncated)? as usize;
        if ndim > 2 {
            return Err(Error::format(path, format!("tensor rank {ndim} not supported")));
        }
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize).ok_or_else(truncated))
            .collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(path, "tensor size overflows"))?;
        let raw = r
            .take(count.checked_mul(8).ok_or_else(truncated)?)
            .ok_or_else(truncated)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Tensor::from_vec(&shape, data)
    };
    let read_layers = |r: &mut Reader, n: usize| -> Result<Vec<Dense>> {
        (0..n)
            .map(|_| {
                let w = read_tensor(r)?;
                let b = read_tensor(r)?;
                Dense::new(w, b).map_err(|e| Error::format(path, e.to_string()))
            })
            .collect()
    };
    let encoder = read_layers(&mut r, n_enc)?;
    let classifier = read_layers(&mut r, n_clf)?;
    if r.pos != body.len() {
        return Err(Error::format(path, "trailing bytes after parameters"));
    }
    if classifier.is_empty() {
        return Err(Error::format(path, "classifier has no layers"));
    }
    let chain = encoder.iter().chain(&classifier).collect::<Vec<_>>();
    for pair in chain.windows(2) {
        if pair[0].output_dim() != pair[1].input_dim() {
            return Err(Error::format(path, "layer widths do not chain"));
        }
    }
    Ok(ModelParams {
        encoder: Encoder { layers: encoder },
        classifier: Classifier { layers: classifier },
    })
}

pub fn save_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&params_to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    params_from_bytes(&bytes, path)
}

/// Loads parameters and checks they match `arch`.
pub fn load_params_for(path: impl AsRef<Path>, arch: &Architecture) -> Result<ModelParams> {
    let params = load_params(path)?;
    let found = params.architecture();
    if &found != arch {
        let describe = |a: &Architecture| {
            let mut dims = vec![a.input_dim];
            dims.extend(&a.encoder_widths);
            dims.extend(&a.classifier_hidden);
            dims.push(a.num_classes);
            dims
        };
        return Err(Error::Shape {
            op: "load_params (architecture)",
            left: describe(arch),
            right: describe(&found),
        });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::finite_difference_check;

    fn arch() -> Architecture {
        Architecture {
            input_dim: 3,
            encoder_widths: vec![6, 4],
            classifier_hidden: vec![5],
            num_classes: 3,
        }
    }

    fn batch(n: usize, d: usize) -> Tensor {
        Tensor::from_vec(&[n, d], (0..n * d).map(|i| ((i * 13) as f64 * 0.17).sin()).collect()).unwrap()
    }

    #[test]
    fn identity_encoder_passes_input_through() {
        let a = Architecture {
            encoder_widths: vec![],
            ..arch()
        };
        let m = ModelParams::init(&a, 1).unwrap();
        let x = batch(4, 3);
        assert_eq!(m.encoder.encode(&x).unwrap(), x);
        assert_eq!(a.embedding_dim(), 3);
    }

    #[test]
    fn output_shapes_and_determinism() {
        let m = ModelParams::init(&arch(), 7).unwrap();
        let x = batch(5, 3);
        let (z, logits, probs) = m.forward(&x).unwrap();
        assert_eq!(z.shape(), &[5, 4]);
        assert_eq!(logits.shape(), &[5, 3]);
        assert_eq!(m.forward(&x).unwrap().2, probs);
        assert_eq!(m, ModelParams::init(&arch(), 7).unwrap());
        assert_ne!(m, ModelParams::init(&arch(), 8).unwrap());
        assert_eq!(m.architecture(), arch());
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let m = ModelParams::init(&arch(), 1).unwrap();
        assert!(m.encoder.encode(&batch(2, 4)).is_err());
    }

    #[test]
    fn classify_matches_scalar_softmax() {
        let m = ModelParams::init(&arch(), 3).unwrap();
        let z = m.encoder.encode(&batch(6, 3)).unwrap();
        let (logits, probs) = m.classifier.classify(&z).unwrap();
        for i in 0..6 {
            let row = logits.row(i);
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            for (j, v) in row.iter().enumerate() {
                assert!((probs.get(i, j) - v.exp() / denom).abs() < 1e-12);
            }
            assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let (lab, _) = predict_labels(&Tensor::from_rows(&[row.to_vec()]).unwrap());
            assert_eq!(predict_labels(&probs).0[i], lab[0]);
        }
    }

    #[test]
    fn predict_labels_examples() {
        let probs = Tensor::from_rows(&[vec![0.1, 0.7, 0.2], vec![0.5, 0.5, 0.0]]).unwrap();
        let (labels, conf) = predict_labels(&probs);
        assert_eq!(labels, vec![1, 0]);
        assert_eq!(conf, vec![0.7, 0.5]);
    }

    #[test]
    fn composition_equals_monolithic_forward() {
        let m = ModelParams::init(&arch(), 5).unwrap();
        let x = batch(4, 3);
        let (_, probs) = m.classifier.classify(&m.encoder.encode(&x).unwrap()).unwrap();
        // Monolithic: run every layer in sequence by hand.
        let mut h = x.clone();
        let all: Vec<&Dense> = m.encoder.layers.iter().chain(&m.classifier.layers).collect();
        for (i, layer) in all.iter().enumerate() {
            h = layer.forward(&h).unwrap();
            if i + 1 < all.len() {
                h = relu_forward(&h);
            }
        }
        assert!(softmax_rows(&h).max_abs_diff(&probs) < 1e-12);
    }

    #[test]
    fn ce_gradient_passes_finite_difference_check() {
        // Zero-initialized biases put some pre-activations exactly on the
        // ReLU kink; give every parameter a generic value first.
        let m = ModelParams::init(&arch(), 11).unwrap();
        let jittered: Vec<f64> = m
            .to_flat()
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.1 * ((i * 7919) as f64).sin())
            .collect();
        let m = m.with_flat(&jittered).unwrap();
        let x = batch(7, 3);
        let labels = [0, 1, 2, 2, 1, 0, 1];
        let g = m.ce_grads(&x, &labels).unwrap();
        let mut analytic = Vec::new();
        for t in grads_to_tensors(&g.encoder)
            .iter()
            .chain(&grads_to_tensors(&g.classifier))
        {
            analytic.extend_from_slice(t.data());
        }
        let err = finite_difference_check(
            |flat| {
                let p = m.with_flat(flat).unwrap();
                p.ce_grads(&x, &labels).unwrap().loss
            },
            &m.to_flat(),
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.params");
        let m = ModelParams::init(&arch(), 2).unwrap();
        save_params(&m, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(loaded, m);
        let again = dir.path().join("again.params");
        save_params(&loaded, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.params");
        let bytes = params_to_bytes(&ModelParams::init(&arch(), 2).unwrap());
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_params(&path), Err(Error::Format { .. })));
        std::fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(load_params(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = params_to_bytes(&ModelParams::init(&arch(), 2).unwrap());
        bytes[40] ^= 0x01;
        let err = params_from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("checksum"));
    }

    #[test]
    fn architecture_mismatch_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.params");
        save_params(&ModelParams::init(&arch(), 2).unwrap(), &path).unwrap();
        let other = Architecture {
            encoder_widths: vec![6, 8],
            ..arch()
        };
        assert!(matches!(load_params_for(&path, &other), Err(Error::Shape { .. })));
        assert!(load_params_for(&path, &arch()).is_ok());
    }
}
