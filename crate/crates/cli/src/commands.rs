use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use txcnn::kv::KeyValues;
use txcnn::model::{DiffMode, Model, ModelKind, END_TO_END_TOLERANCE};
use txcnn::nn::gradcheck::layer_battery;
use txcnn::phantom::{expected_max_dims, generate_dataset, load_dataset, PhantomConfig};
use txcnn::prep::{class_balance_report, load_prepared, partition, prepare, save_prepared, PrepOptions, PreparedSplit};
use txcnn::train::{
    compare_models, evaluate as evaluate_model, partition_rng, predictions_csv, prepare_comparison, repartition,
    run_experiment, CompareConfig, ExperimentConfig,
};

use crate::{
    CompareArgs, EvaluateArgs, GenerateArgs, GradcheckArgs, ModeArg, PreprocessArgs, SplitArg, Switch, TrainArgs,
};

fn read_settings(path: &Path) -> Result<KeyValues> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(KeyValues::parse(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(|x| x.trim().parse::<T>().ok())
        .collect::<Option<_>>()
        .with_context(|| format!("bad {what} list {s:?}"))?;
    ensure!(!items.is_empty(), "empty {what} list");
    Ok(items)
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let mut config = PhantomConfig::default();
    if let Some(p) = &a.config {
        config.apply(&read_settings(p)?)?;
    }
    let mut flags = KeyValues::new();
    if let Some(s) = a.seed {
        flags.set("seed", s);
    }
    if let Some(m) = a.mice_per_group {
        flags.set("mice_per_group", m);
    }
    if let Some(s) = &a.slices {
        flags.set("slices_per_week", s);
    }
    if a.missing_final_week {
        flags.set("missing_final_week", true);
    }
    for s in &a.settings {
        let (k, v) = s.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))?;
        flags.set(k.trim(), v.trim());
    }
    config.apply(&flags)?;
    config.validate()?;

    let start = Instant::now();
    let manifest = generate_dataset(&config, &a.out)?;
    let (h, w) = expected_max_dims(&config);
    println!(
        "wrote {} images for {} mice to {} in {:.1}s (max dims {h}x{w})",
        manifest.image_count(),
        2 * config.mice_per_group,
        a.out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let slices = load_dataset(&a.data)?;
    let opts = PrepOptions {
        mode: match a.mode {
            ModeArg::Abs => Some(DiffMode::Absolute),
            ModeArg::Rel => Some(DiffMode::Relative),
            ModeArg::None => None,
        },
        timestamps: a.timestamps == Switch::On,
        max_shift: a.max_shift,
        target_dims: None,
    };
    let start = Instant::now();
    let prepared = prepare(&slices, &opts)?;
    let summary = prepared.summary.clone();
    let split = partition(prepared.samples, &mut partition_rng(a.seed))?;
    let out = PreparedSplit {
        summary,
        seed: a.seed,
        split,
    };
    save_prepared(&a.out, &out)?;
    let s = &out.summary;
    println!(
        "{} slices -> {} samples at {}x{} ({} unused, {:.2}%) in {:.1}s",
        s.slices,
        out.split.train.len() + out.split.validation.len() + out.split.test.len(),
        s.dims.0,
        s.dims.1,
        s.unused,
        100.0 * s.unused_fraction(),
        start.elapsed().as_secs_f64()
    );
    println!("held out: {}", out.split.held_out.join(", "));
    print!("{}", class_balance_report(&out.split));
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut config = ExperimentConfig::default();
    let mut model_given = false;
    if let Some(p) = &a.config {
        let kv = read_settings(p)?;
        model_given = kv.get("model").is_some();
        config.apply(&kv)?;
    }
    if let Some(m) = &a.model {
        config.model = m.parse::<ModelKind>()?;
        model_given = true;
    }
    ensure!(model_given, "no model given: use --model or model= in --config");
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.data {
        config.data = Some(v);
    }
    if let Some(v) = a.out {
        config.out = Some(v);
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.lr {
        config.learning_rate = v;
    }
    if let Some(v) = a.momentum {
        config.momentum = v;
    }
    if a.l2.is_some() {
        config.l2 = a.l2;
    }
    if a.dropout.is_some() {
        config.dropout = a.dropout;
    }
    config.validate()?;
    let data_dir = config.data.clone().context("no data directory: use --data or data= in --config")?;

    let data = load_prepared(&data_dir)?;
    let run = run_experiment(&data, &config, &[])?;
    print!("{}", run.metrics);
    if let Some(out) = &config.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        run.model.save(&out.join("model.ckpt"))?;
        write(&out.join("metrics.csv"), &run.metrics.to_csv())?;
        write(&out.join("predictions.csv"), &predictions_csv(&run.metrics.test_predictions))?;
        write(&out.join("config.txt"), &config.to_key_values().render())?;
        println!("saved model and metrics to {}", out.display());
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut model: Model<f32> = Model::load(&a.checkpoint)?;
    let data = load_prepared(&a.data)?;
    let kind = model.spec().kind;
    txcnn::train::check_channels(kind, &data.summary)?;
    let dims = model.spec().input_dims;
    ensure!(
        dims == data.summary.dims,
        "model expects {}x{} images, data has {}x{}",
        dims.0,
        dims.1,
        data.summary.dims.0,
        data.summary.dims.1
    );
    let samples = match a.split {
        SplitArg::Train => &data.split.train[..],
        SplitArg::Validation => &data.split.validation[..],
        SplitArg::Test => data.split.test.access(),
    };
    let eval = evaluate_model(&mut model, samples)?;
    println!(
        "{kind} on {:?} split: accuracy {:.2}% over {} samples",
        a.split,
        100.0 * eval.accuracy,
        eval.predictions.len()
    );
    if let Some(p) = &a.predictions {
        write(p, &predictions_csv(&eval.predictions))?;
    }
    Ok(())
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let seeds: Vec<u64> = parse_list(&a.seeds, "seed")?;
    let report_epochs: Vec<usize> = parse_list(&a.epochs, "epoch")?;
    let mut base = ExperimentConfig::default();
    if let Some(p) = &a.config {
        base.apply(&read_settings(p)?)?;
    }
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }

    let slices = load_dataset(&a.data)?;
    let start = Instant::now();
    let prepared = prepare_comparison(&slices, seeds[0], Some(a.max_shift))?;
    drop(slices);
    println!("prepared {} training samples in {:.1}s", prepared.absolute.split.train.len(), start.elapsed().as_secs_f64());

    let mut csv = String::new();
    let mut text = String::new();
    for &seed in &seeds {
        let data = if seed == seeds[0] { prepared.clone() } else { repartition(&prepared, seed)? };
        let config = CompareConfig {
            kinds: ModelKind::ALL.to_vec(),
            report_epochs: report_epochs.clone(),
            base: ExperimentConfig { seed, ..base.clone() },
            parallel: !a.sequential,
        };
        let report = match compare_models(&data, &config) {
            Ok(r) => r,
            Err(failure) => bail!("comparison for seed {seed} failed:\n{failure}"),
        };
        let block = format!("seed {seed} (held out: {})\n{report}\n", data.absolute.split.held_out.join(", "));
        print!("{block}");
        text.push_str(&block);
        let table = report.to_csv();
        if csv.is_empty() {
            csv.push_str(&table);
        } else {
            csv.extend(table.lines().skip(1).map(|l| format!("{l}\n")));
        }
    }
    if let Some(out) = &a.out {
        write(&out.join("comparison.csv"), &csv)?;
        write(&out.join("comparison.txt"), &text)?;
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    ensure!(a.instances >= 1, "need at least one instance per layer");
    let mut failed = Vec::new();
    for case in layer_battery(a.seed, a.instances)? {
        let status = if case.passed() { "pass" } else { "FAIL" };
        println!(
            "{status}  {:<22} max rel error {:.3e} over {} instances (tol {:.0e})",
            case.name,
            case.max_error(),
            case.errors.len(),
            case.tolerance
        );
        if !case.passed() {
            failed.push(case.name.to_string());
        }
    }
    for kind in ModelKind::ALL {
        let report = txcnn::model::end_to_end_check(kind, a.seed)?;
        let err = report.max_relative_error();
        let ok = report.passed(END_TO_END_TOLERANCE);
        println!(
            "{}  {:<22} max rel error {err:.3e} end to end (tol {END_TO_END_TOLERANCE:.0e})",
            if ok { "pass" } else { "FAIL" },
            kind.to_string()
        );
        if !ok {
            failed.push(kind.to_string());
        }
    }
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    println!("all gradient checks passed");
    Ok(())
}
