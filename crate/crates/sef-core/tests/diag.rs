use sef_core::data::{generate, SynthSpec};
use sef_core::loss::classification_loss;
use sef_core::nn::SefModel;
use sef_core::tensor::{Graph, Tensor};

#[test]
fn diag_signal_and_gradients() {
    let spec = SynthSpec {
        seed: 1,
        ..SynthSpec::default()
    };
    let bundle = generate(&spec).unwrap();
    let ds = &bundle.train;
    let model = SefModel::with_default_backbone(24, 2, 16, 1).unwrap();
    let n = 64;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        data.extend(ds.image(i * 29 % ds.len()).iter().map(|&b| b as f64 / 255.0));
        labels.push(ds.label(i * 29 % ds.len()));
    }
    let images = Tensor::new(vec![n, 3, 32, 32], data).unwrap();
    let mut g = Graph::new();
    let fwd = model.forward(&mut g, &images).unwrap();

    let pooled = g.value(fwd.pooled);
    let c = 24;
    // per-channel mean across batch and std across batch
    let mut means = vec![0.0; c];
    for row in pooled.data().chunks_exact(c) {
        for (m, &v) in means.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let mut stds = vec![0.0; c];
    for row in pooled.data().chunks_exact(c) {
        for ((s, &v), &m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    let mean_abs: f64 = means.iter().map(|v| v.abs()).sum::<f64>() / c as f64;
    let mean_std: f64 = stds.iter().map(|v| v.sqrt()).sum::<f64>() / c as f64;
    println!("pooled: mean|μ|={mean_abs:.6}  mean σ across batch={mean_std:.6}");

    let logits = g.value(fwd.logits_global);
    let mut lmin = f64::INFINITY;
    let mut lmax = f64::NEG_INFINITY;
    for &v in logits.data() {
        lmin = lmin.min(v);
        lmax = lmax.max(v);
    }
    println!("logits range: [{lmin:.6}, {lmax:.6}]");

    let ce = classification_loss(&mut g, fwd.logits_global, &labels).unwrap();
    println!("ce at init: {}", g.value(ce).item().unwrap());
    g.backward(ce).unwrap();
    for (name, id) in &fwd.params {
        let grad = g.grad(*id).unwrap();
        let norm: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pnorm: f64 = g.value(*id).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("{name}: |g|={norm:.3e} |p|={pnorm:.3e} ratio={:.3e}", norm / pnorm.max(1e-12));
    }
}
