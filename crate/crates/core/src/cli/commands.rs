use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::{one_line, CliError, Command, Common};
use crate::datapipe::{load_dataset, prepare, prepare_with_scaler, save_dataset, PipelineConfig, Prepared, WindowedDataset};
use crate::engine::grad_check_detailed;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport, PbiasForm};
use crate::models::{
    build_model, evaluate, load_checkpoint, predict_series, save_checkpoint, train, Arch, ModelConfig, ModelGraph,
    Preprocessing, SampleObjective,
};
use crate::synth::{generate, make_transfer_pair, ShiftMode};
use crate::transfer::{compare_approaches, comparison_csv, CompareOptions, FreezePolicy, TransferTarget};

pub const FAILED_FILE: &str = "FAILED";
pub const VERSION_FILE: &str = "VERSION";
pub const CONFIG_FILE: &str = "effective_config.toml";
pub const PREDICTIONS_HEADER: &str = "date,observed,predicted";

const GRADCHECK_TOLERANCE: f64 = 1e-5;
const GRADCHECK_EPS: f64 = 1e-6;

type CliResult<T = ()> = std::result::Result<T, CliError>;

pub(super) fn execute(cmd: Command) -> CliResult {
    match cmd {
        Command::Generate { spec, seed, targets, out } => {
            let mut cfg = RunConfig::load(spec.as_deref())?;
            if let Some(seed) = seed {
                cfg.synth.seed = seed;
            }
            if let Some(t) = targets {
                cfg.generate.targets = t.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            }
            in_out_dir(&out, &cfg, |dir| cmd_generate(&cfg, dir))
        }
        Command::Train { data, common, arch, epochs, lag, out } => {
            let mut cfg = load(&common)?;
            override_model(&mut cfg, arch, epochs, lag);
            let cfg = cfg.resolve();
            in_out_dir(&out, &cfg, |dir| cmd_train(&cfg, &data, dir))
        }
        Command::Evaluate { ckpt, data, all, as_printed, out } => {
            let model = load_checkpoint(&ckpt)?;
            let mut cfg = RunConfig { model: model.config().clone(), ..RunConfig::default() };
            if let Some(pre) = &model.preprocessing {
                cfg.pipeline = pre.pipeline.clone();
            }
            let form = if as_printed { PbiasForm::AsPrinted } else { PbiasForm::Standard };
            in_out_dir(&out, &cfg, |dir| cmd_evaluate(&model, &data, all, form, dir))
        }
        Command::SweepLag { data, common, lags, arch, epochs, out } => {
            let lags = parse_lags(&lags)?;
            let mut cfg = load(&common)?;
            override_model(&mut cfg, arch, epochs, None);
            let cfg = cfg.resolve();
            in_out_dir(&out, &cfg, |dir| cmd_sweep_lag(&cfg, &data, &lags, dir))
        }
        Command::Transfer { source_ckpt, targets, common, policy, budget, full_epochs, out } => {
            let policies = parse_policies(&policy)?;
            let mut cfg = load(&common)?;
            if let Some(b) = budget {
                cfg.transfer.budget_epochs = b;
            }
            let cfg = cfg.resolve();
            let source = load_checkpoint(&source_ckpt)?;
            in_out_dir(&out, &cfg, |dir| cmd_transfer(&cfg, &source, &targets, policies, full_epochs, dir))
        }
        Command::Gradcheck { arch, seed, grids, lag, out } => {
            let model = ModelConfig::small(arch, grids, lag);
            match out {
                Some(out) => {
                    let cfg = RunConfig { seed: Some(seed), model: model.clone(), ..RunConfig::default() };
                    in_out_dir(&out, &cfg, |dir| cmd_gradcheck(&model, seed, Some(dir)))
                }
                None => cmd_gradcheck(&model, seed, None),
            }
        }
        Command::Compare { data, common, archs, epochs, out } => {
            let mut cfg = load(&common)?;
            override_model(&mut cfg, None, epochs, None);
            let cfg = cfg.resolve();
            let archs = archs.unwrap_or_else(|| Arch::ALL.to_vec());
            in_out_dir(&out, &cfg, |dir| cmd_compare(&cfg, &data, &archs, dir))
        }
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    Ok(cfg)
}

fn override_model(cfg: &mut RunConfig, arch: Option<Arch>, epochs: Option<usize>, lag: Option<usize>) {
    if let Some(a) = arch {
        cfg.model.arch = a;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(l) = lag {
        cfg.pipeline.lag = l;
    }
}

/// `3..11` (inclusive), `3..=11`, or a comma list.
pub fn parse_lags(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot read lags from {s:?}"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let lags = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if lags.is_empty() || lags.contains(&0) {
        return Err(bad());
    }
    Ok(lags)
}

fn parse_policies(s: &str) -> Result<Vec<FreezePolicy>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(FreezePolicy::ALL.to_vec());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

/// Creates `dir`, clears a stale sentinel, records provenance, runs `body`
/// and leaves a `FAILED` file if it errors.
fn in_out_dir(dir: &Path, cfg: &RunConfig, body: impl FnOnce(&Path) -> CliResult) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sentinel = dir.join(FAILED_FILE);
    if sentinel.exists() {
        fs::remove_file(&sentinel).map_err(|e| Error::io(&sentinel, e))?;
    }
    let result = write(&dir.join(CONFIG_FILE), &cfg.to_toml())
        .and_then(|()| write(&dir.join(VERSION_FILE), &format!("hydrodeep {}\n", env!("CARGO_PKG_VERSION"))))
        .map_err(CliError::from)
        .and_then(|()| body(dir));
    if let Err(e) = &result {
        let _ = fs::write(&sentinel, format!("{}\n", one_line(&e.to_string())));
    }
    result
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rewrites the provenance record once the data has fixed the grid count.
fn record_grid_count(dir: &Path, cfg: &RunConfig, grids: usize) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.model.grid_count = grids;
    write(&dir.join(CONFIG_FILE), &cfg.to_toml())
}

fn prepare_dir(data: &Path, pipeline: &PipelineConfig) -> Result<Prepared> {
    let (grid, series) = load_dataset(data)?;
    prepare(&grid, &series, pipeline)
}

fn model_config(cfg: &RunConfig, prep: &Prepared, arch: Arch) -> ModelConfig {
    ModelConfig { arch, grid_count: prep.train.grid_count, lag: prep.train.lag, ..cfg.model.clone() }
}

/// Builds, trains and scores on the test block.
fn fit(cfg: &RunConfig, prep: &Prepared, arch: Arch) -> Result<(ModelGraph, crate::models::History, MetricReport)> {
    let mut model = build_model(&model_config(cfg, prep, arch), cfg.train.seed)?;
    model.preprocessing = Some(Preprocessing { pipeline: cfg.pipeline.clone(), scaler: prep.scaler.clone() });
    let history = train(&mut model, &prep.train, Some(&prep.val), &cfg.train)?;
    let report = evaluate(&model, &prep.test, &prep.scaler)?;
    Ok((model, history, report))
}

fn predictions_csv(model: &ModelGraph, ds: &WindowedDataset, prep: &Prepared) -> Result<String> {
    let sim = predict_series(model, ds, &prep.scaler)?;
    let obs = prep.scaler.inverse_transform_discharge(&ds.target);
    let mut out = format!("{PREDICTIONS_HEADER}\n");
    for ((d, o), s) in ds.dates.iter().zip(&obs).zip(&sim) {
        writeln!(out, "{d},{o},{s}").expect("string write");
    }
    Ok(out)
}

fn metric_row(r: &MetricReport) -> String {
    format!("{},{},{}", r.nse, r.pbias, r.rsr)
}

fn cmd_generate(cfg: &RunConfig, dir: &Path) -> CliResult {
    let source = generate(&cfg.synth)?;
    save_dataset(&dir.join("source"), &source.grid, &source.series)?;
    let base_seed = cfg.generate.target_seed.unwrap_or(cfg.synth.seed.wrapping_add(1000));
    for (i, &mode) in cfg.generate.targets.iter().enumerate() {
        let (_, target) = make_transfer_pair(&cfg.synth, mode, base_seed.wrapping_add(i as u64))?;
        save_dataset(&dir.join(target_dir_name(mode)), &target.grid, &target.series)?;
    }
    println!("wrote {} day(s) over {} grid(s) to {}", cfg.synth.days, cfg.synth.grid_count, dir.display());
    Ok(())
}

fn target_dir_name(mode: ShiftMode) -> &'static str {
    match mode {
        ShiftMode::SpatialShift => "spatial_shift",
        ShiftMode::TemporalShift => "temporal_shift",
        ShiftMode::Both => "both",
    }
}

fn cmd_train(cfg: &RunConfig, data: &Path, dir: &Path) -> CliResult {
    let prep = prepare_dir(data, &cfg.pipeline)?;
    record_grid_count(dir, cfg, prep.train.grid_count)?;
    let (model, history, report) = fit(cfg, &prep, cfg.model.arch)?;
    save_checkpoint(&model, &dir.join("model.ckpt"))?;
    write(&dir.join("history.csv"), &history.to_csv())?;
    write(&dir.join("predictions.csv"), &predictions_csv(&model, &prep.test, &prep)?)?;
    let text = report.to_toml();
    write(&dir.join("report.toml"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_evaluate(model: &ModelGraph, data: &Path, all: bool, form: PbiasForm, dir: &Path) -> CliResult {
    let pre = model
        .preprocessing
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint carries no preprocessing state".into()))?;
    let (grid, series) = load_dataset(data)?;
    let prep = prepare_with_scaler(&grid, &series, &pre.pipeline, &pre.scaler)?;
    let ds = if all { &prep.all } else { &prep.test };
    let sim = predict_series(model, ds, &prep.scaler)?;
    let report = metrics::report_with(&prep.scaler.inverse_transform_discharge(&ds.target), &sim, form)?;
    write(&dir.join("predictions.csv"), &predictions_csv(model, ds, &prep)?)?;
    let text = report.to_toml();
    write(&dir.join("report.toml"), &text)?;
    print!("{text}");
    Ok(())
}

/// Lags too short for the configured convolution stack get a
/// `build_error` row so the table still has one row per requested lag.
fn cmd_sweep_lag(cfg: &RunConfig, data: &Path, lags: &[usize], dir: &Path) -> CliResult {
    let (grid, series) = load_dataset(data)?;
    record_grid_count(dir, cfg, grid.len())?;
    let mut out = String::from("lag,nse,pbias_pct,rsr,status\n");
    let mut best: Option<(usize, f64)> = None;
    for &lag in lags {
        let pipeline = PipelineConfig { lag, ..cfg.pipeline.clone() };
        let prep = prepare(&grid, &series, &pipeline)?;
        let run = RunConfig { pipeline, ..cfg.clone() };
        match fit(&run, &prep, cfg.model.arch) {
            Ok((_, _, r)) => {
                writeln!(out, "{lag},{},ok", metric_row(&r)).expect("string write");
                if best.is_none_or(|(_, b)| r.nse > b) {
                    best = Some((lag, r.nse));
                }
            }
            Err(Error::Build { .. }) => writeln!(out, "{lag},,,,build_error").expect("string write"),
            Err(e) => return Err(e.into()),
        }
    }
    write(&dir.join("sweep_lag.csv"), &out)?;
    print!("{out}");
    match best {
        Some((lag, nse)) => {
            println!("best lag {lag} (NSE {nse:.4})");
            Ok(())
        }
        None => Err(Error::Config("no requested lag fits the configured convolution stack".into()).into()),
    }
}

fn cmd_transfer(
    cfg: &RunConfig,
    source: &ModelGraph,
    targets: &[PathBuf],
    policies: Vec<FreezePolicy>,
    full_epochs: Option<usize>,
    dir: &Path,
) -> CliResult {
    let pipeline = match &source.preprocessing {
        Some(pre) => pre.pipeline.clone(),
        None => PipelineConfig { lag: source.config().lag, ..cfg.pipeline.clone() },
    };
    let prepared = targets.iter().map(|t| prepare_dir(t, &pipeline)).collect::<Result<Vec<_>>>()?;
    let named: Vec<TransferTarget<'_>> = targets
        .iter()
        .zip(&prepared)
        .map(|(path, data)| TransferTarget { name: target_name(path), data })
        .collect();
    let opts = CompareOptions { policies, plan: cfg.transfer.clone(), full_epochs };
    let rows = compare_approaches(source, &named, &opts)?;
    let csv = comparison_csv(&rows);
    write(&dir.join("transfer.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn target_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn cmd_gradcheck(cfg: &ModelConfig, seed: u64, dir: Option<&Path>) -> CliResult {
    use rand::{Rng, SeedableRng};

    let mut model = build_model(cfg, seed)?;
    model.randomize_uniform(1.0, seed.wrapping_add(1));
    let (w1, w2) = cfg.input_widths();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f64>>();
    let input1 = crate::engine::Tensor::matrix(cfg.lag, w1, draw(cfg.lag * w1))?;
    let input2 = crate::engine::Tensor::vector(draw(w2))?;
    let target = draw(1)[0];
    let mut obj = SampleObjective { model, input1, input2, target };
    let entries = grad_check_detailed(&mut obj, GRADCHECK_EPS)?;

    let mut table = String::from("param,relative_error,max_elementwise_error,grad_norm\n");
    for e in &entries {
        writeln!(table, "{},{:e},{:e},{:e}", e.name, e.relative_error, e.max_elementwise_error, e.grad_norm)
            .expect("string write");
    }
    if let Some(dir) = dir {
        write(&dir.join("gradcheck.csv"), &table)?;
    }
    let worst = entries.iter().max_by(|a, b| a.relative_error.total_cmp(&b.relative_error));
    let max = worst.map_or(0.0, |e| e.relative_error);
    println!("{} seed {seed}: max relative error {max:e} over {} tensors", cfg.arch, entries.len());
    if max.is_finite() && max < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        let name = worst.map_or("?", |e| e.name.as_str());
        Err(CliError::Verification(format!(
            "gradient check failed: relative error {max:e} in {name} (tolerance {GRADCHECK_TOLERANCE:e})"
        )))
    }
}

fn cmd_compare(cfg: &RunConfig, data: &Path, archs: &[Arch], dir: &Path) -> CliResult {
    let prep = prepare_dir(data, &cfg.pipeline)?;
    record_grid_count(dir, cfg, prep.train.grid_count)?;
    let mut out = String::from("arch,nse,pbias_pct,rsr,params\n");
    for &arch in archs {
        let (model, _, r) = fit(cfg, &prep, arch)?;
        writeln!(out, "{arch},{},{}", metric_row(&r), model.param_count()).expect("string write");
    }
    write(&dir.join("compare.csv"), &out)?;
    print!("{out}");
    Ok(())
}
