use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use ttpredict::dynamics::{curves_to_csv, read_curves_csv};
use ttpredict::estimator::{compare_tt, training_time, Threshold, TtComparison};
use ttpredict::ingest::{
    read_gradients, read_labels, read_outputs, synth_blobs, write_gradients, write_labels,
    write_outputs, DatasetSpec,
};
use ttpredict::kernel::{kernel_text, write_kernel, TEXT_DUMP_MAX};
use ttpredict::oracle::{
    init_weights, linearized_train, model_gradients, model_outputs, train, ModelKind, ModelSpec,
    TrainMode,
};
use ttpredict::spectrum::{predict_curve_larger_dataset, ExtrapolationConfig, PowerLawFit, DEFAULT_K0};
use ttpredict::{
    build_kernel, predict_training_time, project_gradients, sym_eig, CurveKind, Error, LabelSet,
    LossCurve, PredictOptions, ProjectionSpec, Result, RunConfig, TTReport,
};

use crate::args::{
    CompareArgs, ExtrapolateArgs, KernelArgs, ModeArg, ModelArg, OracleArgs, PredictArgs,
};

struct Clock {
    enabled: bool,
    start: Instant,
    last: Instant,
    laps: BTreeMap<&'static str, f64>,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        let now = Instant::now();
        Clock {
            enabled,
            start: now,
            last: now,
            laps: BTreeMap::new(),
        }
    }

    fn lap(&mut self, name: &'static str) {
        let now = Instant::now();
        self.laps.insert(name, (now - self.last).as_secs_f64());
        self.last = now;
    }

    fn finish(mut self) -> Option<BTreeMap<&'static str, f64>> {
        if !self.enabled {
            return None;
        }
        self.laps.insert("total", self.start.elapsed().as_secs_f64());
        Some(self.laps)
    }
}

#[derive(Serialize)]
struct Envelope<T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings_seconds: Option<BTreeMap<&'static str, f64>>,
    #[serde(flatten)]
    result: T,
}

fn emit<T: Serialize>(
    command: &'static str,
    result: T,
    clock: Clock,
    out: Option<&Path>,
) -> Result<()> {
    let env = Envelope {
        tool: "ttpredict",
        version: env!("CARGO_PKG_VERSION"),
        command,
        timings_seconds: clock.finish(),
        result,
    };
    let mut json = serde_json::to_string_pretty(&env).expect("report serializes");
    json.push('\n');
    if let Some(dir) = out {
        write_file(&dir.join("report.json"), &json)?;
    }
    print!("{json}");
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Squared-error closed forms need real targets; class labels become one-hot.
fn as_targets(y: &LabelSet) -> Result<LabelSet> {
    match y {
        LabelSet::Regression { .. } => Ok(y.clone()),
        LabelSet::Classes { .. } => LabelSet::regression(y.dense_targets(), y.n_samples(), y.n_outputs()),
    }
}

#[derive(Serialize)]
struct KernelReport {
    n_samples: usize,
    n_outputs: usize,
    size: usize,
    gradient_dim: usize,
    projection: Option<ProjectionSpec>,
    trace: f64,
    gradient_frobenius_sq: f64,
    eigenvalue_sum: f64,
    clamped_mass: f64,
    lambda_max: f64,
    lambda_min: f64,
}

pub fn kernel(a: &KernelArgs) -> Result<()> {
    let mut clock = Clock::new(a.output.timings);
    let g = read_gradients(&a.gradients)?;
    clock.lap("read");
    let projection = a.projection.spec(g.cols())?;
    let g = match &projection {
        Some(spec) => project_gradients(&g, spec)?,
        None => g,
    };
    clock.lap("project");
    let k = build_kernel(&g);
    clock.lap("kernel");
    let Some(dir) = &a.output.out else {
        if k.size() > TEXT_DUMP_MAX {
            return Err(Error::Usage(format!(
                "a {0}x{0} kernel is too large to print; pass --out",
                k.size()
            )));
        }
        print!("{}", kernel_text(&k));
        return Ok(());
    };
    let e = sym_eig(&k)?;
    clock.lap("eig");
    ensure_dir(dir)?;
    let name = if k.size() <= TEXT_DUMP_MAX { "kernel.csv" } else { "kernel.bin" };
    write_kernel(dir.join(name), &k)?;
    let mut table = String::from("k,lambda\n");
    for (i, l) in e.values().iter().enumerate() {
        table.push_str(&format!("{},{l:?}\n", i + 1));
    }
    write_file(&dir.join("spectrum.csv"), &table)?;
    let report = KernelReport {
        n_samples: g.n_samples(),
        n_outputs: g.n_outputs(),
        size: k.size(),
        gradient_dim: g.cols(),
        projection,
        trace: k.trace(),
        gradient_frobenius_sq: g.frobenius_sq(),
        eigenvalue_sum: e.values().iter().sum(),
        clamped_mass: e.clamped_mass(),
        lambda_max: e.values().first().copied().unwrap_or(0.0),
        lambda_min: e.values().last().copied().unwrap_or(0.0),
    };
    emit("kernel", report, clock, Some(dir))
}

#[derive(Serialize)]
struct PredictReport {
    #[serde(flatten)]
    report: TTReport,
    projection: Option<ProjectionSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    curve_std: Option<Vec<f64>>,
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let mut clock = Clock::new(a.output.timings);
    let g = read_gradients(&a.gradients)?;
    let f0 = read_outputs(&a.f0)?;
    let y = read_labels(&a.labels, Some(g.n_outputs()))?;
    clock.lap("read");
    let cfg = a.run.config(f0.n_samples);
    let projection = a.projection.spec(g.cols())?;
    let opts = PredictOptions {
        half_window: a.half_window,
        curve_kind: a.curve.into(),
        threshold: Some(a.run.epsilon),
        projection: projection.clone(),
        seeds: a
            .seeds
            .map(|n| (0..n as u64).map(|i| a.run.seed.wrapping_add(i)).collect())
            .unwrap_or_default(),
        closed_form: a.closed_form,
    };
    let p = predict_training_time(&g, &f0, &y, &cfg, &opts)?;
    clock.lap("predict");
    if let Some(dir) = &a.output.out {
        ensure_dir(dir)?;
        p.trajectory.write_csv(dir.join("trajectory.csv"))?;
        // the predicted (averaged, smoothed) curve in its own column
        let csv = match p.report.curve_kind {
            CurveKind::Loss => curves_to_csv(&p.curve, p.trajectory.error.as_ref()),
            CurveKind::Error => curves_to_csv(&p.trajectory.loss, Some(&p.curve)),
        };
        write_file(&dir.join("curve.csv"), &csv)?;
    }
    let report = PredictReport {
        report: p.report,
        projection,
        curve_std: p.curve_std,
    };
    emit("predict", report, clock, a.output.out.as_deref())
}

#[derive(Serialize)]
struct ExtrapolateReport {
    extrapolation: ExtrapolationConfig,
    fit: PowerLawFit,
    target_norm_sq: f64,
    threshold: Threshold,
    epsilon: f64,
    t_hat_epsilon: usize,
    initial_value: f64,
    final_value: f64,
    config: RunConfig,
}

pub fn extrapolate(a: &ExtrapolateArgs) -> Result<()> {
    let mut clock = Clock::new(a.output.timings);
    let g = read_gradients(&a.gradients)?;
    let f0 = read_outputs(&a.f0)?;
    let y = as_targets(&read_labels(&a.labels, Some(g.n_outputs()))?)?;
    clock.lap("read");
    let cfg = a.run.config(f0.n_samples);
    let ecfg = ExtrapolationConfig {
        alpha: a.alpha,
        k0: a.k0.unwrap_or(DEFAULT_K0.min(f0.n_samples)),
        ..ExtrapolationConfig::new(f0.n_samples, a.target_n)
    };
    let pred = predict_curve_larger_dataset(&g, &f0, &y, a.target_norm_sq, &ecfg, &cfg)?;
    clock.lap("extrapolate");
    let epsilon = a.run.epsilon.resolve(&pred.curve);
    if let Some(dir) = &a.output.out {
        ensure_dir(dir)?;
        write_file(&dir.join("curve.csv"), &curves_to_csv(&pred.curve, None))?;
        write_file(&dir.join("spectrum.csv"), &pred.spectrum_csv())?;
    }
    let report = ExtrapolateReport {
        extrapolation: ecfg,
        fit: pred.fit.clone(),
        target_norm_sq: a.target_norm_sq,
        threshold: a.run.epsilon,
        epsilon,
        t_hat_epsilon: training_time(&pred.curve, a.run.epsilon),
        initial_value: pred.curve.first(),
        final_value: pred.curve.last(),
        config: cfg,
    };
    emit("extrapolate", report, clock, a.output.out.as_deref())
}

#[derive(Serialize)]
struct OracleReport {
    model: ModelSpec,
    n_params: usize,
    dataset: DatasetSpec,
    mode: TrainMode,
    linearized: bool,
    config: RunConfig,
    threshold: Threshold,
    t_epsilon: usize,
    initial_loss: f64,
    final_loss: f64,
    final_error: Option<f64>,
    final_displacement: f64,
}

pub fn oracle(a: &OracleArgs) -> Result<()> {
    let mut clock = Clock::new(a.timings);
    let dataset = DatasetSpec {
        n_samples: a.n_samples,
        n_classes: a.classes,
        input_dim: a.input_dim,
        cluster_separation: a.separation,
        noise_std: a.noise,
        seed: a.data_seed,
    };
    let (x, y) = synth_blobs(&dataset)?;
    let model = ModelSpec {
        init_scale: a.init_scale,
        ..match a.model {
            ModelArg::Linear => ModelSpec::linear(a.input_dim, a.classes, a.init_seed),
            ModelArg::Mlp1 => ModelSpec::mlp1(a.input_dim, a.hidden, a.classes, a.init_seed),
        }
    };
    let w0 = init_weights(&model)?;
    let f0 = model_outputs(&model, &w0, &x)?;
    let g = model_gradients(&model, &w0, &x)?;
    clock.lap("setup");
    let cfg = a.run.config(a.n_samples);
    let mode = match a.mode {
        ModeArg::Gd => TrainMode::Gd,
        ModeArg::Sgd => TrainMode::Sgd,
    };
    let run = if a.linearized {
        linearized_train(&model, &w0, &x, &y, &cfg, mode, a.run.seed)?
    } else {
        train(&model, &w0, &x, &y, &cfg, mode, a.run.seed)?
    };
    clock.lap("train");

    let dir: &PathBuf = &a.out;
    ensure_dir(dir)?;
    write_gradients(dir.join("gradients.bin"), &g)?;
    write_labels(dir.join("labels.csv"), &y)?;
    write_outputs(dir.join("f0.csv"), &f0)?;
    write_file(
        &dir.join("curve.csv"),
        &curves_to_csv(&run.loss_curve, run.error_curve.as_ref()),
    )?;
    let mut disp = String::from("step,displacement\n");
    for (t, d) in run.weight_displacement.iter().enumerate() {
        disp.push_str(&format!("{t},{d:?}\n"));
    }
    write_file(&dir.join("displacement.csv"), &disp)?;
    clock.lap("write");

    let report = OracleReport {
        n_params: model.n_params(),
        linearized: a.linearized || model.kind == ModelKind::Linear,
        model,
        dataset,
        mode,
        threshold: a.run.epsilon,
        t_epsilon: training_time(&run.loss_curve, a.run.epsilon),
        initial_loss: run.loss_curve.first(),
        final_loss: run.loss_curve.last(),
        final_error: run.error_curve.as_ref().map(LossCurve::last),
        final_displacement: run.weight_displacement.last().copied().unwrap_or(0.0),
        config: cfg,
    };
    emit("oracle", report, clock, Some(dir))
}

#[derive(Serialize)]
struct CompareReport {
    curve_kind: CurveKind,
    steps: usize,
    rows: Vec<TtComparison>,
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let clock = Clock::new(a.output.timings);
    let (pl, pe) = read_curves_csv(&a.predicted)?;
    let (al, ae) = read_curves_csv(&a.actual)?;
    let kind: CurveKind = a.curve.into();
    let (p, act) = match kind {
        CurveKind::Loss => (pl, al),
        CurveKind::Error => match (pe, ae) {
            (Some(p), Some(q)) => (p, q),
            _ => return Err(Error::Usage("both tables need an error column".into())),
        },
    };
    let rows = compare_tt(&p, &act, &a.epsilons)?;
    if let Some(dir) = &a.output.out {
        ensure_dir(dir)?;
    }
    let report = CompareReport {
        curve_kind: kind,
        steps: p.steps(),
        rows,
    };
    emit("compare", report, clock, a.output.out.as_deref())
}
