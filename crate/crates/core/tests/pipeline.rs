use tempfile::TempDir;
use ttpredict::dynamics::closed_form_mse_curve;
use ttpredict::ingest::{
    read_gradients, read_labels, read_outputs, synth_blobs, write_gradients, write_labels,
    write_outputs, DatasetSpec, Features,
};
use ttpredict::kernel::residual_projections;
use ttpredict::oracle::{
    init_weights, linearized_train, model_gradients, model_outputs, train, ModelSpec, TrainMode,
};
use ttpredict::spectrum::{predict_curve_larger_dataset, ExtrapolationConfig};
use ttpredict::{
    build_kernel, predict_training_time, sym_eig, LabelSet, PredictOptions, RunConfig,
};

fn blobs(n: usize, seed: u64) -> (Features, LabelSet) {
    synth_blobs(&DatasetSpec {
        n_samples: n,
        n_classes: 3,
        input_dim: 12,
        cluster_separation: 2.0,
        noise_std: 1.0,
        seed,
    })
    .unwrap()
}

fn onehot(y: &LabelSet) -> LabelSet {
    LabelSet::regression(y.dense_targets(), y.n_samples(), y.n_outputs()).unwrap()
}

#[test]
fn files_feed_the_predictor_unchanged() {
    let (x, y) = blobs(30, 1);
    let spec = ModelSpec::mlp1(12, 10, 3, 2);
    let w = init_weights(&spec).unwrap();
    let g = model_gradients(&spec, &w, &x).unwrap();
    let f0 = model_outputs(&spec, &w, &x).unwrap();
    let dir = TempDir::new().unwrap();
    write_gradients(dir.path().join("g.bin"), &g).unwrap();
    write_labels(dir.path().join("y.csv"), &y).unwrap();
    write_outputs(dir.path().join("f0.csv"), &f0).unwrap();
    let g2 = read_gradients(dir.path().join("g.bin")).unwrap();
    let y2 = read_labels(dir.path().join("y.csv"), Some(3)).unwrap();
    let f2 = read_outputs(dir.path().join("f0.csv")).unwrap();
    let cfg = RunConfig {
        learning_rate: 0.01,
        ..RunConfig::default()
    };
    let a = predict_training_time(&g, &f0, &y, &cfg, &PredictOptions::default()).unwrap();
    let b = predict_training_time(&g2, &f2, &y2, &cfg, &PredictOptions::default()).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.report, b.report);
}

#[test]
fn mlp_linearized_outputs_track_training() {
    let (x, y) = blobs(24, 3);
    let spec = ModelSpec {
        init_scale: 1.0,
        ..ModelSpec::mlp1(12, 16, 3, 4)
    };
    let w0 = init_weights(&spec).unwrap();
    let f0 = model_outputs(&spec, &w0, &x).unwrap();
    let j0 = model_gradients(&spec, &w0, &x).unwrap();
    let lambda1 = sym_eig(&build_kernel(&j0)).unwrap().values()[0];
    let cfg = RunConfig {
        learning_rate: 0.05 / lambda1,
        total_steps: 10,
        ..RunConfig::default()
    };
    let exact = train(&spec, &w0, &x, &y, &cfg, TrainMode::Gd, 0).unwrap();
    let lin = linearized_train(&spec, &w0, &x, &y, &cfg, TrainMode::Gd, 0).unwrap();
    let fe = model_outputs(&spec, &exact.final_weights, &x).unwrap();
    let dw: Vec<f64> = lin.final_weights.iter().zip(&w0).map(|(a, b)| a - b).collect();
    let (mut diff, mut norm) = (0.0, 0.0);
    for r in 0..fe.len() {
        let fl = f0.values[r] + j0.row(r).iter().zip(&dw).map(|(a, b)| a * b).sum::<f64>();
        diff += (fl - fe.values[r]).powi(2);
        norm += fe.values[r].powi(2);
    }
    let rel = (diff / norm).sqrt();
    assert!(rel <= 0.01, "relative output error {rel}");
}

/// With the learning rate matched per sample (η·N₀/N), the extrapolated
/// per-sample curve of the larger set stays above the subset's own.
#[test]
fn larger_blob_set_converges_slower() {
    let (n0, n) = (90, 360);
    let (x, classes) = blobs(n, 5);
    let spec = ModelSpec::mlp1(12, 24, 3, 6);
    let w = init_weights(&spec).unwrap();
    let y = onehot(&classes);
    let f = model_outputs(&spec, &w, &x).unwrap();
    let target_norm_sq: f64 = y.dense_targets().iter().zip(&f.values).map(|(a, b)| (a - b).powi(2)).sum();

    let sub = Features::new(n0, 12, x.data[..n0 * 12].to_vec()).unwrap();
    let y0 = LabelSet::regression(y.dense_targets()[..n0 * 3].to_vec(), n0, 3).unwrap();
    let g0 = model_gradients(&spec, &w, &sub).unwrap();
    let f0 = model_outputs(&spec, &w, &sub).unwrap();
    let e = sym_eig(&build_kernel(&g0)).unwrap();
    let eta0 = 0.5 / e.values()[0];
    let own = closed_form_mse_curve(&e, &residual_projections(&e, &f0, &y0).unwrap(), eta0, 150);

    let run = RunConfig {
        learning_rate: eta0 * n0 as f64 / n as f64,
        total_steps: 150,
        ..RunConfig::default()
    };
    let cfg = ExtrapolationConfig {
        k0: 30,
        ..ExtrapolationConfig::new(n0, n)
    };
    let pred = predict_curve_larger_dataset(&g0, &f0, &y0, target_norm_sq, &cfg, &run).unwrap();
    for (t, (p, o)) in pred.curve.values.iter().zip(&own.values).enumerate() {
        assert!(*p >= o / n0 as f64 * (1.0 - 1e-9), "t={t}: {p} < {}", o / n0 as f64);
    }
}
