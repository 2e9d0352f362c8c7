//! Small dense feed-forward network that produces real activations and
//! per-sample gradients for the scoring pipeline.
//!
//! Weights are stored as `f32` but every forward and backward computation
//! runs in `f64`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iofmt::{read_tensor, write_tensor, FormatError, TensorF32};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported norm order p={0} (expected 1 or 2)")]
    UnsupportedNorm(u32),
    #[error("empty batch")]
    EmptyBatch,
    #[error("network has no layers")]
    NoLayers,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `y = act(x Wᵀ)` with `W` of shape `[m_out, n_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weight: TensorF32,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: TensorF32, activation: Activation) -> Result<Self, NetError> {
        match weight.matrix_dims() {
            Some((m, n)) if m > 0 && n > 0 => {}
            _ => {
                return Err(NetError::Shape(format!(
                    "layer weight must be a nonempty matrix, got dims {:?}",
                    weight.dims()
                )))
            }
        }
        if let Some(i) = weight.first_non_finite() {
            return Err(NetError::Shape(format!("non-finite weight at {i}")));
        }
        Ok(Self { weight, activation })
    }

    /// Uniform weights in `[-0.5, 0.5]`.
    pub fn random(m_out: usize, n_in: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let data = (0..m_out * n_in)
            .map(|_| rng.random_range(-0.5f32..=0.5f32))
            .collect();
        let weight = TensorF32::new(vec![m_out, n_in], data).expect("dims match");
        Self::new(weight, activation).expect("valid random layer")
    }

    pub fn weight(&self) -> &TensorF32 {
        &self.weight
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    /// Same activation, new weights of identical shape.
    pub fn with_weight(&self, weight: TensorF32) -> Result<Self, NetError> {
        if weight.dims() != self.weight.dims() {
            return Err(NetError::Shape(format!(
                "replacement weight dims {:?} != {:?}",
                weight.dims(),
                self.weight.dims()
            )));
        }
        Self::new(weight, self.activation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::NoLayers);
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_features() != pair[1].in_features() {
                return Err(NetError::Shape(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].out_features(),
                    i + 1,
                    pair[1].in_features()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Seeded network with hidden ReLU layers and an identity output layer.
    pub fn seeded(widths: &[usize], seed: u64) -> Self {
        assert!(widths.len() >= 2, "need at least input and output width");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::random(w[1], w[0], act, &mut rng)
            })
            .collect();
        Self::new(layers).expect("consistent widths")
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_features(&self) -> usize {
        self.layers[0].in_features()
    }

    pub fn out_features(&self) -> usize {
        self.layers.last().unwrap().out_features()
    }

    pub fn with_weights(&self, weights: Vec<TensorF32>) -> Result<Self, NetError> {
        if weights.len() != self.layers.len() {
            return Err(NetError::Shape(format!(
                "{} weights for {} layers",
                weights.len(),
                self.layers.len()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(weights)
            .map(|(l, w)| l.with_weight(w))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(layers)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), NetError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
        let mut entries = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let file = format!("layer{i}.prnt");
            write_tensor(dir.join(&file), &layer.weight)?;
            entries.push(ManifestLayer {
                file,
                activation: layer.activation,
            });
        }
        let manifest = Manifest { layers: entries };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| FormatError::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, NetError> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| FormatError::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| NetError::Manifest(e.to_string()))?;
        let layers = manifest
            .layers
            .iter()
            .map(|l| DenseLayer::new(read_tensor(dir.join(&l.file))?, l.activation))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(layers)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    layers: Vec<ManifestLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLayer {
    file: String,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBatch {
    inputs: TensorF32,
    targets: TensorF32,
}

impl CalibrationBatch {
    pub fn new(inputs: TensorF32, targets: TensorF32) -> Result<Self, NetError> {
        let (s, _) = inputs
            .matrix_dims()
            .ok_or_else(|| NetError::Shape(format!("inputs dims {:?}", inputs.dims())))?;
        let (t, _) = targets
            .matrix_dims()
            .ok_or_else(|| NetError::Shape(format!("targets dims {:?}", targets.dims())))?;
        if s == 0 {
            return Err(NetError::EmptyBatch);
        }
        if s != t {
            return Err(NetError::Shape(format!(
                "{s} input rows but {t} target rows"
            )));
        }
        Ok(Self { inputs, targets })
    }

    /// Gaussian inputs; targets are the network's own outputs plus Gaussian noise of
    /// standard deviation `noise`.
    pub fn synthesize(net: &Network, n_samples: usize, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_in = net.in_features();
        let inputs: Vec<f32> = (0..n_samples * n_in)
            .map(|_| StandardNormal.sample(&mut rng))
            .map(|v: f64| v as f32)
            .collect();
        let inputs = TensorF32::new(vec![n_samples, n_in], inputs).expect("dims match");
        let clean = TensorF32::new(
            vec![n_samples, net.out_features()],
            vec![0.0; n_samples * net.out_features()],
        )
        .expect("dims match");
        let probe = Self::new(inputs, clean).expect("valid batch");
        let outputs = forward(net, &probe).expect("shapes consistent").outputs;
        let targets = outputs
            .iter()
            .map(|&y| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                (y + noise * eps) as f32
            })
            .collect();
        let targets = TensorF32::new(vec![n_samples, net.out_features()], targets)
            .expect("dims match");
        Self {
            inputs: probe.inputs,
            targets,
        }
    }

    pub fn inputs(&self) -> &TensorF32 {
        &self.inputs
    }

    pub fn targets(&self) -> &TensorF32 {
        &self.targets
    }

    pub fn n_samples(&self) -> usize {
        self.inputs.dims()[0]
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), NetError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
        write_tensor(dir.join("inputs.prnt"), &self.inputs)?;
        write_tensor(dir.join("targets.prnt"), &self.targets)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, NetError> {
        let dir = dir.as_ref();
        Self::new(
            read_tensor(dir.join("inputs.prnt"))?,
            read_tensor(dir.join("targets.prnt"))?,
        )
    }
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input matrix `[n_samples, n_in]` seen by each layer.
    pub layer_inputs: Vec<TensorF32>,
    /// Row-major `[n_samples, n_outputs]` network output.
    pub outputs: Vec<f64>,
    pub n_outputs: usize,
}

impl ForwardTrace {
    pub fn output_tensor(&self) -> TensorF32 {
        let rows = self.outputs.len() / self.n_outputs.max(1);
        TensorF32::new(
            vec![rows, self.n_outputs],
            self.outputs.iter().map(|&v| v as f32).collect(),
        )
        .expect("dims match")
    }
}

fn check_batch(net: &Network, batch: &CalibrationBatch) -> Result<(), NetError> {
    let n_in = batch.inputs.dims()[1];
    let n_out = batch.targets.dims()[1];
    if n_in != net.in_features() {
        return Err(NetError::Shape(format!(
            "batch has {n_in} features, network expects {}",
            net.in_features()
        )));
    }
    if n_out != net.out_features() {
        return Err(NetError::Shape(format!(
            "batch has {n_out} targets, network emits {}",
            net.out_features()
        )));
    }
    Ok(())
}

/// Per-sample pre-activations and post-activations for every layer.
struct SampleActs {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

fn run_sample(net: &Network, x: &[f32]) -> SampleActs {
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut post = Vec::with_capacity(net.layers.len() + 1);
    post.push(x.iter().map(|&v| v as f64).collect::<Vec<_>>());
    for layer in &net.layers {
        let input = post.last().unwrap();
        let n = layer.in_features();
        let z: Vec<f64> = layer
            .weight
            .data()
            .chunks_exact(n)
            .map(|row| row.iter().zip(input).map(|(&w, &a)| w as f64 * a).sum())
            .collect();
        let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
        pre.push(z);
        post.push(a);
    }
    SampleActs { pre, post }
}

pub fn forward(net: &Network, batch: &CalibrationBatch) -> Result<ForwardTrace, NetError> {
    check_batch(net, batch)?;
    let n_samples = batch.n_samples();
    let n_in = net.in_features();
    let mut layer_inputs: Vec<Vec<f32>> = net
        .layers
        .iter()
        .map(|l| Vec::with_capacity(n_samples * l.in_features()))
        .collect();
    let mut outputs = Vec::with_capacity(n_samples * net.out_features());
    for x in batch.inputs.data().chunks_exact(n_in) {
        let acts = run_sample(net, x);
        for (li, buf) in layer_inputs.iter_mut().enumerate() {
            buf.extend(acts.post[li].iter().map(|&v| v as f32));
        }
        outputs.extend_from_slice(acts.post.last().unwrap());
    }
    let layer_inputs = layer_inputs
        .into_iter()
        .zip(&net.layers)
        .map(|(d, l)| TensorF32::new(vec![n_samples, l.in_features()], d).expect("dims match"))
        .collect();
    Ok(ForwardTrace {
        layer_inputs,
        outputs,
        n_outputs: net.out_features(),
    })
}

/// Mean over samples of the per-sample mean squared error.
pub fn mse_loss(net: &Network, batch: &CalibrationBatch) -> Result<f64, NetError> {
    let trace = forward(net, batch)?;
    let k = trace.n_outputs;
    let total: f64 = trace
        .outputs
        .chunks_exact(k)
        .zip(batch.targets.data().chunks_exact(k))
        .map(|(y, t)| {
            y.iter()
                .zip(t)
                .map(|(&y, &t)| (y - t as f64).powi(2))
                .sum::<f64>()
                / k as f64
        })
        .sum();
    Ok(total / batch.n_samples() as f64)
}

/// Column-wise ℓ2 norm over the sample axis: `out[j] = sqrt(Σ_s x[s,j]²)`.
pub fn activation_norms(layer_inputs: &TensorF32) -> Result<TensorF32, NetError> {
    let (s, n) = layer_inputs
        .matrix_dims()
        .ok_or_else(|| NetError::Shape(format!("expected matrix, got {:?}", layer_inputs.dims())))?;
    if s == 0 {
        return Err(NetError::EmptyBatch);
    }
    let mut acc = vec![0.0f64; n];
    for row in layer_inputs.data().chunks_exact(n) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += (v as f64) * (v as f64);
        }
    }
    let data = acc.into_iter().map(|v| v.sqrt() as f32).collect();
    Ok(TensorF32::new(vec![n], data).expect("dims match"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormOrder {
    L1,
    #[default]
    L2,
}

impl NormOrder {
    pub fn from_p(p: u32) -> Result<Self, NetError> {
        match p {
            1 => Ok(NormOrder::L1),
            2 => Ok(NormOrder::L2),
            other => Err(NetError::UnsupportedNorm(other)),
        }
    }

    pub fn p(self) -> u32 {
        match self {
            NormOrder::L1 => 1,
            NormOrder::L2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Mse,
}

/// Gradient of each sample's loss with respect to every weight.
///
/// Returns one `[n_samples, m_out, n_in]` tensor per layer.
pub fn per_sample_gradients(
    net: &Network,
    batch: &CalibrationBatch,
    loss: LossKind,
) -> Result<Vec<TensorF32>, NetError> {
    check_batch(net, batch)?;
    let LossKind::Mse = loss;
    let n_samples = batch.n_samples();
    let n_in = net.in_features();
    let k = net.out_features();
    let mut grads: Vec<Vec<f32>> = net
        .layers
        .iter()
        .map(|l| Vec::with_capacity(n_samples * l.weight.len()))
        .collect();

    for (x, t) in batch
        .inputs
        .data()
        .chunks_exact(n_in)
        .zip(batch.targets.data().chunks_exact(k))
    {
        let acts = run_sample(net, x);
        let last = net.layers.len() - 1;
        // dL/dz for the output layer, L = (1/k) Σ (y - t)²
        let mut delta: Vec<f64> = acts.post[last + 1]
            .iter()
            .zip(t)
            .zip(&acts.pre[last])
            .map(|((&y, &t), &z)| {
                2.0 * (y - t as f64) / k as f64 * net.layers[last].activation.derivative(z)
            })
            .collect();
        let mut per_layer: Vec<Vec<f32>> = vec![Vec::new(); net.layers.len()];
        for li in (0..=last).rev() {
            let layer = &net.layers[li];
            let input = &acts.post[li];
            let mut g = Vec::with_capacity(layer.weight.len());
            for &d in &delta {
                g.extend(input.iter().map(|&a| (d * a) as f32));
            }
            per_layer[li] = g;
            if li > 0 {
                let n = layer.in_features();
                let prev = &net.layers[li - 1];
                let mut back = vec![0.0f64; n];
                for (row, &d) in layer.weight.data().chunks_exact(n).zip(&delta) {
                    for (b, &w) in back.iter_mut().zip(row) {
                        *b += w as f64 * d;
                    }
                }
                delta = back
                    .iter()
                    .zip(&acts.pre[li - 1])
                    .map(|(&b, &z)| b * prev.activation.derivative(z))
                    .collect();
            }
        }
        for (buf, g) in grads.iter_mut().zip(per_layer) {
            buf.extend(g);
        }
    }

    Ok(grads
        .into_iter()
        .zip(&net.layers)
        .map(|(d, l)| {
            TensorF32::new(vec![n_samples, l.out_features(), l.in_features()], d)
                .expect("dims match")
        })
        .collect())
}

/// ℓp norm of each weight's gradient over the sample axis.
pub fn gradient_norms(per_sample: &TensorF32, p: NormOrder) -> Result<TensorF32, NetError> {
    let (s, m, n) = match per_sample.dims() {
        &[s, m, n] => (s, m, n),
        d => return Err(NetError::Shape(format!("expected rank-3 gradients, got {d:?}"))),
    };
    if s == 0 {
        return Err(NetError::EmptyBatch);
    }
    let mut acc = vec![0.0f64; m * n];
    for slice in per_sample.data().chunks_exact(m * n) {
        for (a, &g) in acc.iter_mut().zip(slice) {
            let g = g as f64;
            *a += match p {
                NormOrder::L1 => g.abs(),
                NormOrder::L2 => g * g,
            };
        }
    }
    let data = acc
        .into_iter()
        .map(|v| match p {
            NormOrder::L1 => v as f32,
            NormOrder::L2 => v.sqrt() as f32,
        })
        .collect();
    Ok(TensorF32::new(vec![m, n], data).expect("dims match"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f32, act: Activation) -> Network {
        let layer = DenseLayer::new(TensorF32::new(vec![1, 1], vec![w]).unwrap(), act).unwrap();
        Network::new(vec![layer]).unwrap()
    }

    fn batch(rows: &[Vec<f32>], targets: &[Vec<f32>]) -> CalibrationBatch {
        CalibrationBatch::new(
            TensorF32::from_rows(rows).unwrap(),
            TensorF32::from_rows(targets).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_and_relu_forward() {
        let t = forward(&single(2.0, Activation::Identity), &batch(&[vec![3.0]], &[vec![0.0]]))
            .unwrap();
        assert_eq!(t.outputs, vec![6.0]);
        let t = forward(&single(1.0, Activation::Relu), &batch(&[vec![-1.0]], &[vec![0.0]]))
            .unwrap();
        assert_eq!(t.outputs, vec![0.0]);
    }

    #[test]
    fn two_layer_output_shape() {
        let net = Network::seeded(&[6, 5, 3], 3);
        let b = CalibrationBatch::synthesize(&net, 7, 0.1, 9);
        let t = forward(&net, &b).unwrap();
        assert_eq!(t.output_tensor().dims(), &[7, 3]);
        assert_eq!(t.layer_inputs[0].dims(), &[7, 6]);
        assert_eq!(t.layer_inputs[1].dims(), &[7, 5]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = Network::seeded(&[4, 2], 1);
        let b = batch(&[vec![1.0, 2.0]], &[vec![0.0, 0.0]]);
        assert!(matches!(forward(&net, &b), Err(NetError::Shape(_))));
        let l0 = DenseLayer::random(3, 4, Activation::Relu, &mut ChaCha8Rng::seed_from_u64(0));
        let l1 = DenseLayer::random(2, 5, Activation::Relu, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(Network::new(vec![l0, l1]).is_err());
    }

    #[test]
    fn activation_norm_examples() {
        let n = activation_norms(&TensorF32::from_rows(&[vec![3.0], vec![4.0]]).unwrap()).unwrap();
        assert_eq!(n.data(), &[5.0]);
        let n = activation_norms(&TensorF32::zeros(vec![3, 4])).unwrap();
        assert!(n.data().iter().all(|&v| v == 0.0));
        let n = activation_norms(&TensorF32::from_rows(&[vec![1.0, 2.0], vec![2.0, 2.0]]).unwrap())
            .unwrap();
        assert_eq!(n.data(), &[5f32.sqrt(), 8f32.sqrt()]);
    }

    #[test]
    fn single_neuron_gradient_is_eight() {
        let g = per_sample_gradients(
            &single(1.0, Activation::Identity),
            &batch(&[vec![2.0]], &[vec![0.0]]),
            LossKind::Mse,
        )
        .unwrap();
        assert_eq!(g[0].dims(), &[1, 1, 1]);
        assert_eq!(g[0].data(), &[8.0]);
    }

    #[test]
    fn zero_input_sample_has_zero_first_layer_gradient() {
        let net = Network::seeded(&[3, 4, 2], 5);
        let b = batch(
            &[vec![0.0, 0.0, 0.0], vec![1.0, -1.0, 0.5]],
            &[vec![1.0, 1.0], vec![0.0, 0.0]],
        );
        let g = per_sample_gradients(&net, &b, LossKind::Mse).unwrap();
        assert!(g[0].data()[..12].iter().all(|&v| v == 0.0));
        assert!(g[0].data()[12..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gradient_norm_examples() {
        let t = TensorF32::new(vec![2, 1, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(gradient_norms(&t, NormOrder::L2).unwrap().data(), &[5.0]);
        let t = TensorF32::new(vec![1, 1, 2], vec![-0.25, 2.0]).unwrap();
        assert_eq!(gradient_norms(&t, NormOrder::L2).unwrap().data(), &[0.25, 2.0]);
        assert_eq!(gradient_norms(&t, NormOrder::L1).unwrap().data(), &[0.25, 2.0]);
        let t = TensorF32::new(vec![3, 1, 1], vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(gradient_norms(&t, NormOrder::L1).unwrap().data(), &[6.0]);
        assert!(matches!(NormOrder::from_p(3), Err(NetError::UnsupportedNorm(3))));
    }

    #[test]
    fn norms_invariant_under_sample_permutation() {
        let net = Network::seeded(&[5, 4, 2], 11);
        let b = CalibrationBatch::synthesize(&net, 6, 0.2, 12);
        let reversed_rows = |t: &TensorF32| {
            let (s, n) = (t.dims()[0], t.len() / t.dims()[0]);
            let data: Vec<f32> = t.data().chunks_exact(n).rev().flatten().copied().collect();
            let mut dims = t.dims().to_vec();
            dims[0] = s;
            TensorF32::new(dims, data).unwrap()
        };
        let rb = CalibrationBatch::new(reversed_rows(b.inputs()), reversed_rows(b.targets())).unwrap();
        let a = forward(&net, &b).unwrap();
        let r = forward(&net, &rb).unwrap();
        for (x, y) in a.layer_inputs.iter().zip(&r.layer_inputs) {
            let nx = activation_norms(x).unwrap();
            let ny = activation_norms(y).unwrap();
            for (p, q) in nx.data().iter().zip(ny.data()) {
                assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0));
            }
        }
        let ga = per_sample_gradients(&net, &b, LossKind::Mse).unwrap();
        let gr = per_sample_gradients(&net, &rb, LossKind::Mse).unwrap();
        for (x, y) in ga.iter().zip(&gr) {
            let nx = gradient_norms(x, NormOrder::L2).unwrap();
            let ny = gradient_norms(y, NormOrder::L2).unwrap();
            for (p, q) in nx.data().iter().zip(ny.data()) {
                assert!((p - q).abs() <= 1e-6 * p.abs().max(1e-6));
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::seeded(&[4, 3, 2], 2);
        net.save(dir.path()).unwrap();
        assert_eq!(Network::load(dir.path()).unwrap(), net);
        let b = CalibrationBatch::synthesize(&net, 5, 0.1, 3);
        b.save(dir.path().join("batch")).unwrap();
        assert_eq!(CalibrationBatch::load(dir.path().join("batch")).unwrap(), b);
    }
}
