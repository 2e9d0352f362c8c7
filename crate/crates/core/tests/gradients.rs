mod common;

use common::{finite_difference_check, rel_err, PlainNet};
use fairprune::refnet::{
    gradient_norms, mse_loss, per_sample_gradients, CalibrationBatch, LossKind, Network, NormOrder,
};

#[test]
fn per_sample_gradients_match_central_differences() {
    for (widths, seed) in [(vec![32, 16, 4], 3u64), (vec![6, 5, 4, 3], 11), (vec![4, 2], 5)] {
        let net = Network::seeded(&widths, seed);
        let batch = CalibrationBatch::synthesize(&net, 8, 0.3, seed + 100);
        let grads = per_sample_gradients(&net, &batch, LossKind::Mse).unwrap();
        let report = finite_difference_check(&net, &batch, &grads, 1e-3);
        assert!(report.checked > 0);
        assert!(
            report.skipped_kinks * 50 <= report.checked,
            "too many kink crossings: {} of {}",
            report.skipped_kinks,
            report.checked
        );
        assert!(report.worst <= 1e-4, "{widths:?}: worst relative error {}", report.worst);
    }
}

#[test]
fn batch_loss_is_mean_of_sample_losses() {
    let net = Network::seeded(&[8, 6, 3], 2);
    let batch = CalibrationBatch::synthesize(&net, 10, 0.5, 9);
    let plain = PlainNet::from_network(&net);
    let (n_in, k) = (8, 3);
    let xs = batch.inputs().data();
    let ts = batch.targets().data();
    let mut total = 0.0;
    for s in 0..10 {
        let x: Vec<f64> = xs[s * n_in..(s + 1) * n_in].iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = ts[s * k..(s + 1) * k].iter().map(|&v| v as f64).collect();
        total += plain.loss(&x, &t).0;
    }
    assert!(rel_err(mse_loss(&net, &batch).unwrap(), total / 10.0, 1e-12) < 1e-9);
}

#[test]
fn gradient_norms_aggregate_over_samples() {
    let net = Network::seeded(&[5, 4, 2], 4);
    let batch = CalibrationBatch::synthesize(&net, 6, 0.2, 1);
    let grads = per_sample_gradients(&net, &batch, LossKind::Mse).unwrap();
    for g in &grads {
        let (s, per) = (g.dims()[0], g.dims()[1] * g.dims()[2]);
        let l1 = gradient_norms(g, NormOrder::L1).unwrap();
        let l2 = gradient_norms(g, NormOrder::L2).unwrap();
        for e in 0..per {
            let col: Vec<f64> = (0..s).map(|i| g.data()[i * per + e] as f64).collect();
            let want1: f64 = col.iter().map(|v| v.abs()).sum();
            let want2: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(rel_err(l1.data()[e] as f64, want1, 1e-12) < 1e-6);
            assert!(rel_err(l2.data()[e] as f64, want2, 1e-12) < 1e-6);
        }
    }
}
