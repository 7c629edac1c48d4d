use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDateTime, TimeDelta};
use serde_json::json;

use super::models::AnyModel;
use super::{
    ensure_dir, Cli, Command, DataArgs, DrArgs, EvalArgs, ForecastArgs, GridSearchArgs, SynthArgs,
    TrainArgs,
};
use crate::data::{
    load_csv, synth_gridset, windows, write_csv, ForecastSpec, GridFrame, Schema, SplitSpec,
    SynthSpec, ZScore, TIME_FORMAT,
};
use crate::drport::{
    deployment_loss, forecast_to_dr, load_economics, load_programs, load_series, profit_curve_mc,
    solve_portfolio, write_curve_csv, Envelope, McConfig, NoiseModel,
};
use crate::error::{Error, Result};
use crate::fusion::{self, ForecastBundle};
use crate::tensor::Tensor;
use crate::train::{
    evaluate, fit, EvalReport, Forecaster, InputKind, Predictor, TrainConfig, WindowSource,
};

pub(super) fn run(cli: &Cli) -> Result<()> {
    let outputs = match &cli.command {
        Command::Synth(a) => synth(a, cli.seed)?,
        Command::Train(a) => train(a, cli.seed)?,
        Command::Eval(a) => eval(a, cli.seed)?,
        Command::Forecast(a) => forecast(a, cli.seed)?,
        Command::GridSearch(a) => grid_search(a, cli.seed)?,
        Command::Dr(a) => dr(a, cli.seed)?,
    };
    write_manifest(cli, &outputs)
}

/// Output directory plus the file names written there.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        ensure_dir(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }
}

const PATH_FLAGS: [&str; 6] = [
    "data",
    "checkpoint",
    "programs",
    "economics",
    "lmp",
    "noise_file",
];

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Replaces input paths by their file names and records a content digest
/// for each, so the manifest identifies inputs without depending on where
/// they live.
fn describe_inputs(
    flags: &mut serde_json::Value,
    inputs: &mut serde_json::Map<String, serde_json::Value>,
) {
    let serde_json::Value::Object(map) = flags else {
        return;
    };
    for (k, v) in map.iter_mut() {
        if let (true, Some(path)) = (
            PATH_FLAGS.contains(&k.as_str()),
            v.as_str().map(PathBuf::from),
        ) {
            let name = path
                .file_name()
                .map_or(String::new(), |n| n.to_string_lossy().into_owned());
            if let Ok(bytes) = fs::read(&path) {
                inputs.insert(k.clone(), json!({ "file": name, "bytes": bytes.len(), "fnv1a": format!("{:016x}", fnv1a(&bytes)) }));
            }
            *v = json!(name);
        } else {
            describe_inputs(v, inputs);
        }
    }
}

/// Flags, seed, input digests and versions; no timestamps or absolute
/// paths, so identical runs produce identical manifests.
fn write_manifest(cli: &Cli, out: &Outputs) -> Result<()> {
    let mut flags = serde_json::to_value(&cli.command).expect("flags serialize");
    let mut inputs = serde_json::Map::new();
    describe_inputs(&mut flags, &mut inputs);
    let manifest = json!({
        "command": cli.command.name(),
        "seed": cli.seed,
        "flags": flags,
        "inputs": inputs,
        "versions": { "powermamba": env!("CARGO_PKG_VERSION") },
        "outputs": out.files,
    });
    let path = out.dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn require_file(path: &Path, flag: &str) -> Result<PathBuf> {
    if !path.is_file() {
        return Err(Error::Config(format!(
            "{flag} {}: no such file",
            path.display()
        )));
    }
    Ok(path.to_path_buf())
}

fn synth(a: &SynthArgs, seed: u64) -> Result<Outputs> {
    let mut out = Outputs::new(&a.out)?;
    let spec = SynthSpec::new(seed, a.years);
    let frame = synth_gridset(&spec)?;
    write_csv(&frame, &out.path("gridset.csv"))?;
    println!(
        "gridset.csv: {} rows x {} channels",
        frame.len(),
        frame.width()
    );
    if a.with_forecasts {
        let ext = synth_gridset(&SynthSpec {
            forecasts: Some(ForecastSpec {
                horizon: a.horizon,
                noise_frac: a.noise_frac,
                growth: a.growth,
            }),
            ..spec
        })?;
        write_csv(&ext, &out.path("gridset_ext.csv"))?;
        println!(
            "gridset_ext.csv: {} rows x {} features",
            ext.len(),
            ext.feature_count()
        );
    }
    Ok(out)
}

/// Raw data, its standardized copy and the split both come from.
struct Prepared {
    raw: GridFrame,
    frame: GridFrame,
    zscore: ZScore,
    split: SplitSpec,
}

fn prepare(d: &DataArgs, seed: u64) -> Result<Prepared> {
    let raw = match (&d.data, d.synth_years) {
        (Some(p), _) => load_csv(&require_file(p, "--data")?, &Schema::Infer)?,
        (None, Some(years)) => synth_gridset(&SynthSpec {
            forecasts: d.synth_forecasts.then_some(ForecastSpec {
                horizon: d.horizon,
                noise_frac: d.synth_noise,
                growth: d.synth_growth,
            }),
            ..SynthSpec::new(seed, years)
        })?,
        (None, None) => {
            return Err(Error::Config(
                "one of --data or --synth-years is required".into(),
            ))
        }
    };
    let split = SplitSpec::by_fraction(&raw, d.train_frac)?;
    let zscore = ZScore::fit(&raw, split.train.clone())?;
    let frame = zscore.apply(&raw)?;
    Ok(Prepared {
        raw,
        frame,
        zscore,
        split,
    })
}

fn check_dims(model: &AnyModel, d: &DataArgs, frame: &GridFrame) -> Result<()> {
    let (l, w, dm) = model.dims();
    let dd = frame.width();
    if l != d.context || w != d.horizon || dm.is_some_and(|m| m != dd) {
        let shown = dm.map_or("any".to_string(), |m| m.to_string());
        return Err(Error::dim(
            "model/data",
            format!("model L={l}, W={w}, D={shown}"),
            format!("data L={}, W={}, D={dd}", d.context, d.horizon),
        ));
    }
    if matches!(Forecaster::input_kind(model), InputKind::Fused(_)) {
        match &frame.forecasts {
            Some(f) if f.horizon >= w => {}
            Some(f) => {
                return Err(Error::dim(
                    "fused model",
                    format!("forecast horizon >= {w}"),
                    f.horizon.to_string(),
                ));
            }
            None => {
                return Err(Error::Config(
                    "the fused model needs forecast columns in the data".into(),
                ))
            }
        }
    }
    Ok(())
}

fn train_config(o: &super::OptimArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: o.epochs,
        learning_rate: o.lr,
        batch_size: o.batch_size,
        seed,
        shuffle: !o.no_shuffle,
        ..TrainConfig::default()
    }
}

fn train(a: &TrainArgs, seed: u64) -> Result<Outputs> {
    let p = prepare(&a.data, seed)?;
    let mut model = AnyModel::build(
        &a.model,
        a.data.context,
        a.data.horizon,
        p.frame.width(),
        seed,
    )?;
    check_dims(&model, &a.data, &p.frame)?;
    let ws = windows(
        &p.frame,
        p.split.train.clone(),
        a.data.context,
        a.data.horizon,
        a.data.stride,
    )?;
    let src = WindowSource::new(&ws, Forecaster::input_kind(&model));
    let cfg = train_config(&a.optim, seed);
    println!(
        "training {} ({} parameters) on {} windows for {} epochs",
        model.kind(),
        model.params().num_scalars(),
        ws.len(),
        cfg.epochs
    );
    let report = fit(&mut model, &src, &cfg)?;
    let mut out = Outputs::new(&a.out)?;
    model.to_checkpoint().save(&out.path("model.ckpt"))?;
    let mut curve = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        writeln!(curve, "{},{l}", i + 1).expect("string write");
    }
    out.write("loss_curve.csv", &curve)?;
    println!(
        "final train loss {:.6}",
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(out)
}

fn report_for(model: &AnyModel, p: &Prepared, d: &DataArgs) -> Result<EvalReport> {
    check_dims(model, d, &p.frame)?;
    let ws = windows(&p.frame, p.split.test.clone(), d.context, d.horizon, 1)?;
    evaluate(
        model,
        &WindowSource::new(&ws, Forecaster::input_kind(model)),
        &p.frame.channels,
    )
}

fn eval(a: &EvalArgs, seed: u64) -> Result<Outputs> {
    let p = prepare(&a.data, seed)?;
    let model = match &a.checkpoint {
        Some(c) => AnyModel::load(&require_file(c, "--checkpoint")?)?,
        None => AnyModel::build(
            &a.model,
            a.data.context,
            a.data.horizon,
            p.frame.width(),
            seed,
        )?,
    };
    let report = report_for(&model, &p, &a.data)?;
    println!("{report}");
    let mut out = Outputs::new(&a.out)?;
    out.write("report.csv", &report.to_csv())?;
    Ok(out)
}

fn forecast(a: &ForecastArgs, seed: u64) -> Result<Outputs> {
    let p = prepare(&a.data, seed)?;
    let model = AnyModel::load(&require_file(&a.checkpoint, "--checkpoint")?)?;
    check_dims(&model, &a.data, &p.frame)?;
    let (l, w) = (a.data.context, a.data.horizon);
    let end = match &a.at {
        Some(s) => {
            let t = NaiveDateTime::parse_from_str(s, TIME_FORMAT)
                .map_err(|e| Error::Config(format!("--at `{s}`: {e}")))?;
            p.frame
                .times
                .iter()
                .position(|x| *x == t)
                .ok_or_else(|| Error::Config(format!("--at {s}: timestamp not in the data")))?
        }
        None => p.frame.len() - 1,
    };
    if end + 1 < l {
        return Err(Error::Config(format!(
            "--at needs {l} hours of history, only {} available",
            end + 1
        )));
    }
    let d = p.frame.width();
    let rows: Vec<f64> = (end + 1 - l..=end)
        .flat_map(|t| p.frame.values.row(t).to_vec())
        .collect();
    let context = Tensor::new(&[l, d], rows)?;
    let input = match Forecaster::input_kind(&model) {
        InputKind::Context => context,
        InputKind::Fused(fill) => {
            let f = p.frame.forecasts.as_ref().expect("checked by check_dims");
            let bundle = ForecastBundle {
                context,
                forecasts: Some(f.issued_at(end, w)),
                forecast_channels: f.channels.clone(),
                times: None,
            };
            fusion::prepare(&bundle, w, fill)?
        }
    };
    let yhat = p.zscore.invert(&model.predict(&input)?)?;

    let mut csv = String::from("timestamp");
    for c in &p.raw.channels {
        write!(csv, ",{}", c.name).expect("string write");
    }
    csv.push('\n');
    for h in 0..w {
        let t = p.frame.times[end] + TimeDelta::hours(h as i64 + 1);
        write!(csv, "{}", t.format(TIME_FORMAT)).expect("string write");
        for v in yhat.row(h) {
            write!(csv, ",{v}").expect("string write");
        }
        csv.push('\n');
    }
    let mut out = Outputs::new(&a.out)?;
    out.write("forecast.csv", &csv)?;
    println!(
        "forecast.csv: {w} hours after {}",
        p.frame.times[end].format(TIME_FORMAT)
    );
    Ok(out)
}

fn grid_search(a: &GridSearchArgs, seed: u64) -> Result<Outputs> {
    if !(a.val_frac > 0.0 && a.val_frac < 1.0) {
        return Err(Error::Config(format!(
            "--val-frac must lie in (0, 1), got {}",
            a.val_frac
        )));
    }
    let p = prepare(&a.data, seed)?;
    let train = p.split.train.clone();
    let cut = train.start + ((train.len() as f64) * (1.0 - a.val_frac)).round() as usize;
    let (fit_rows, val_rows) = (train.start..cut, cut..train.end);
    let (l, w) = (a.data.context, a.data.horizon);
    let fit_ws = windows(&p.frame, fit_rows, l, w, a.data.stride)?;
    let val_ws = windows(&p.frame, val_rows, l, w, 1)?;
    if fit_ws.is_empty() || val_ws.is_empty() {
        return Err(Error::Config(format!(
            "grid search needs windows in both parts of the training rows ({} fit, {} validation)",
            fit_ws.len(),
            val_ws.len()
        )));
    }
    let mut table = String::from("lr,embed,state,val_mse,val_mae\n");
    let mut best: Option<(f64, f64, usize, usize)> = None;
    for &lr in &a.lrs {
        for &embed in &a.embeds {
            for &state in &a.states {
                let margs = super::ModelArgs {
                    embed,
                    state,
                    ..a.model.clone()
                };
                let mut model = AnyModel::build(&margs, l, w, p.frame.width(), seed)?;
                check_dims(&model, &a.data, &p.frame)?;
                let kind = Forecaster::input_kind(&model);
                let cfg = TrainConfig {
                    learning_rate: lr,
                    ..train_config(&a.optim, seed)
                };
                fit(&mut model, &WindowSource::new(&fit_ws, kind), &cfg)?;
                let r = evaluate(&model, &WindowSource::new(&val_ws, kind), &p.frame.channels)?;
                let (mse, mae) = (r.overall().mse, r.overall().mae);
                println!("lr={lr} E={embed} N={state}: val MSE {mse:.4} MAE {mae:.4}");
                writeln!(table, "{lr},{embed},{state},{mse},{mae}").expect("string write");
                if best.is_none_or(|b| mse < b.0) {
                    best = Some((mse, lr, embed, state));
                }
            }
        }
    }
    let mut out = Outputs::new(&a.out)?;
    out.write("grid_search.csv", &table)?;
    if let Some((mse, lr, e, n)) = best {
        println!("best: lr={lr} E={e} N={n} (val MSE {mse:.4})");
    }
    Ok(out)
}

fn dr(a: &DrArgs, seed: u64) -> Result<Outputs> {
    let lmp = load_series(&require_file(&a.lmp, "--lmp")?, &a.lmp_column)?;
    let t = lmp.len();
    let econ = load_economics(&require_file(&a.economics, "--economics")?)?;
    let programs = load_programs(&require_file(&a.programs, "--programs")?, &lmp)?;
    let pb = econ.mining_revenue(t)?;
    let energy = econ.energy_cost(&lmp)?;
    let r: Vec<f64> = pb.iter().zip(&energy).map(|(b, e)| b - e).collect();
    let solution = if econ.energy_cost.is_none() {
        forecast_to_dr(&lmp, &pb, &programs, a.capacity, true)?
    } else {
        solve_portfolio(&programs, &r, a.capacity)?
    };

    let noise = match (&a.noise_file, a.noise_sigma) {
        (Some(f), _) => {
            NoiseModel::Empirical(load_series(&require_file(f, "--noise-file")?, "residual")?)
        }
        (None, s) if s > 0.0 => NoiseModel::Gaussian { sigma: s },
        (None, s) if s == 0.0 => NoiseModel::None,
        (None, s) => {
            return Err(Error::Config(format!(
                "--noise-sigma must be >= 0, got {s}"
            )))
        }
    };
    let mc = McConfig {
        runs: a.runs,
        seed,
        envelope: a.quantile.map_or(Envelope::MinMax, Envelope::Quantile),
    };
    let curve = profit_curve_mc(&lmp, &pb, &a.thetas, &noise, &mc)?;

    let mut out = Outputs::new(&a.out)?;
    let mut alloc = String::from("program,kind,coefficient,deployment_loss,capacity\n");
    for (i, prog) in programs.iter().enumerate() {
        writeln!(
            alloc,
            "{},{},{},{},{}",
            prog.name,
            prog.kind.as_str(),
            solution.coefficients[i],
            deployment_loss(prog, &r)?,
            solution.capacities[i]
        )
        .expect("string write");
    }
    writeln!(
        alloc,
        "total,,,,{}",
        solution.capacities.iter().sum::<f64>()
    )
    .expect("string write");
    out.write("allocation.csv", &alloc)?;

    let mut econ_csv = String::from("hour,mining_revenue,energy_cost,net_reward\n");
    for h in 0..t {
        writeln!(econ_csv, "{},{},{},{}", h + 1, pb[h], energy[h], r[h]).expect("string write");
    }
    out.write("economics.csv", &econ_csv)?;
    write_curve_csv(&curve, &out.path("profit_curve.csv"))?;

    let mean_pb = pb.iter().sum::<f64>() / t as f64;
    println!("mining revenue p_b: {mean_pb:.2} $/MWh (mean over {t} hours)");
    match solution.chosen {
        Some(i) => println!(
            "allocate {} MW to `{}`: expected profit {:.2} $",
            a.capacity, programs[i].name, solution.expected_profit
        ),
        None => println!("no program is profitable: keep mining (allocation 0)"),
    }
    Ok(out)
}
