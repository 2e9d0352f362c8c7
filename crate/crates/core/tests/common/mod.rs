//! Independent reference implementations shared by the integration tests and
//! the acceptance runner. Nothing here calls into the scoring or gradient code
//! it is used to check.

#![allow(dead_code)]

use fairprune::iofmt::{Document, TensorF32};
use fairprune::refnet::{Activation, CalibrationBatch, Network};
use fairprune::scoring::ScoreInputs;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, lo: f32, hi: f32) -> TensorF32 {
    let data = (0..m * n).map(|_| rng.random_range(lo..hi)).collect();
    TensorF32::new(vec![m, n], data).unwrap()
}

/// Weights in `[-1, 1]`, activation and gradient norms strictly positive.
pub fn random_inputs(seed: u64, m: usize, n: usize) -> ScoreInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_matrix(&mut rng, m, n, -1.0, 1.0);
    let act_data = (0..n).map(|_| rng.random_range(0.05f32..3.0)).collect();
    let act = TensorF32::new(vec![n], act_data).unwrap();
    let g = random_matrix(&mut rng, m, n, 0.01, 2.0);
    ScoreInputs::new(w, act, g, 100.0).unwrap()
}

pub fn fill(dims: &[usize], v: f32) -> TensorF32 {
    TensorF32::new(dims.to_vec(), vec![v; dims.iter().product()]).unwrap()
}

/// Straight-line HGLA: rescale the gradient norms so their mean matches the
/// mean of `|W|·act`, then divide. Zero rescaled gradients map to `f32::MAX`.
pub fn hgla_oracle(inp: &ScoreInputs) -> Vec<f64> {
    let w = inp.weight().data();
    let a = inp.act_norm().data();
    let g = inp.grad_norm().data();
    let n = a.len();
    let len = w.len() as f64;
    let mut wa_sum = 0.0;
    let mut g_sum = 0.0;
    for i in 0..w.len() {
        wa_sum += (w[i] as f64).abs() * a[i % n] as f64;
        g_sum += g[i] as f64;
    }
    let scale = (wa_sum / len) / (g_sum / len);
    (0..w.len())
        .map(|i| {
            let gp = g[i] as f64 * scale;
            if gp == 0.0 {
                f32::MAX as f64
            } else {
                (w[i] as f64).abs() * a[i % n] as f64 / gp
            }
        })
        .collect()
}

/// Longest common subsequence by exhaustive search over subsequences of `a`.
pub fn brute_lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let mut j = 0;
        let mut ok = true;
        for (i, x) in a.iter().enumerate() {
            if mask & (1 << i) == 0 {
                continue;
            }
            while j < b.len() && b[j] != *x {
                j += 1;
            }
            if j == b.len() {
                ok = false;
                break;
            }
            j += 1;
        }
        if ok {
            best = len;
        }
    }
    best
}

/// All sequences of length `len` over `0..k`.
pub fn sequences(len: usize, k: u8) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..k).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

/// Plain f64 forward pass of one sample: per-layer weights as f64 rows.
pub struct PlainNet {
    pub weights: Vec<Vec<f64>>,
    pub dims: Vec<(usize, usize)>,
    pub relu: Vec<bool>,
}

impl PlainNet {
    pub fn from_network(net: &Network) -> Self {
        PlainNet {
            weights: net
                .layers()
                .iter()
                .map(|l| l.weight().data().iter().map(|&w| w as f64).collect())
                .collect(),
            dims: net.layers().iter().map(|l| (l.out_features(), l.in_features())).collect(),
            relu: net.layers().iter().map(|l| l.activation() == Activation::Relu).collect(),
        }
    }

    /// Loss and the sign pattern of every pre-activation.
    pub fn loss(&self, x: &[f64], t: &[f64]) -> (f64, Vec<bool>) {
        let mut h = x.to_vec();
        let mut pattern = Vec::new();
        for (li, w) in self.weights.iter().enumerate() {
            let (m, n) = self.dims[li];
            let mut z = vec![0.0; m];
            for (i, zi) in z.iter_mut().enumerate() {
                for j in 0..n {
                    *zi += w[i * n + j] * h[j];
                }
            }
            if self.relu[li] {
                pattern.extend(z.iter().map(|&v| v > 0.0));
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            h = z;
        }
        let k = h.len() as f64;
        let loss = h.iter().zip(t).map(|(y, t)| (y - t).powi(2)).sum::<f64>() / k;
        (loss, pattern)
    }
}

pub struct FdReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst: f64,
}

/// Compares analytic per-sample gradients against central differences.
/// Entries whose ±ε perturbation flips a ReLU are counted, not compared.
pub fn finite_difference_check(
    net: &Network,
    batch: &CalibrationBatch,
    grads: &[TensorF32],
    eps: f64,
) -> FdReport {
    let mut plain = PlainNet::from_network(net);
    let n_in = net.in_features();
    let k = net.out_features();
    let xs = batch.inputs().data();
    let ts = batch.targets().data();
    let mut report = FdReport {
        checked: 0,
        skipped_kinks: 0,
        worst: 0.0,
    };
    for s in 0..batch.n_samples() {
        let x: Vec<f64> = xs[s * n_in..(s + 1) * n_in].iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = ts[s * k..(s + 1) * k].iter().map(|&v| v as f64).collect();
        let (_, base_pattern) = plain.loss(&x, &t);
        for (li, grad) in grads.iter().enumerate() {
            let per = plain.weights[li].len();
            for e in 0..per {
                let orig = plain.weights[li][e];
                plain.weights[li][e] = orig + eps;
                let (up, p_up) = plain.loss(&x, &t);
                plain.weights[li][e] = orig - eps;
                let (down, p_down) = plain.loss(&x, &t);
                plain.weights[li][e] = orig;
                if p_up != base_pattern || p_down != base_pattern {
                    report.skipped_kinks += 1;
                    continue;
                }
                let fd = (up - down) / (2.0 * eps);
                let analytic = grad.data()[s * per + e] as f64;
                report.worst = report.worst.max(rel_err(analytic, fd, 1e-8));
                report.checked += 1;
            }
        }
    }
    report
}

/// Tweets labeled `left`/`right`.
pub fn tweet_corpus(left: usize, right: usize) -> Vec<Document> {
    let mut docs = Vec::new();
    for i in 0..left {
        docs.push(Document::new(format!("l{i:04}"), format!("left tweet number {i}"), "left"));
    }
    for i in 0..right {
        docs.push(Document::new(format!("r{i:04}"), format!("right tweet number {i}"), "right"));
    }
    docs
}

/// `products` product groups with `pos`/`neg` reviews of 40 words each.
pub fn review_corpus(products: usize, pos: usize, neg: usize) -> Vec<Document> {
    let text = |p: usize, l: &str, i: usize| {
        let mut words = vec![format!("product{p}"), l.to_string(), format!("review{i}")];
        words.extend((0..37).map(|w| format!("w{w}")));
        words.join(" ")
    };
    let mut docs = Vec::new();
    for p in 0..products {
        for i in 0..pos {
            docs.push(Document::new(format!("p{p}-pos{i}"), text(p, "pos", i), "pos").with_group(format!("g{p}")));
        }
        for i in 0..neg {
            docs.push(Document::new(format!("p{p}-neg{i}"), text(p, "neg", i), "neg").with_group(format!("g{p}")));
        }
    }
    docs
}
