use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use serde::Serialize;

use vlmshape_core::agent::{median_episodes_to_success, episodes_to_success, run_experiment, write_curve_csv};
use vlmshape_core::disentangle::{self, export_encoders, write_history_csv, FactorDataset, StageSummary};
use vlmshape_core::io::{fetch_embeddings, read_dataset, write_dataset, ClientConfig, FetchItem};
use vlmshape_core::pipeline::write_rows_csv;
use vlmshape_core::rng::seeded;
use vlmshape_core::world::{AlignedScenario, Progress};
use vlmshape_core::{
    run_verify, score_trajectory, Arm, Embedding, Fault, Kind, NoiseCalibrator, RunConfig, Shaper,
    StageManifest, StageMachine, StageSpec,
};

use crate::SourceArgs;

struct Inputs {
    stages: Vec<StageSpec>,
    observations: Vec<Embedding>,
    lambdas: Option<Vec<f64>>,
}

fn read_ids(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn load_inputs(cfg: &RunConfig, src: &SourceArgs) -> anyhow::Result<Inputs> {
    let dataset = src.dataset.as_ref().or(cfg.dataset.as_ref());
    let manifest = src.manifest.as_ref().or(cfg.manifest.as_ref());
    let (dataset, manifest) = match (dataset, manifest) {
        (None, None) => return synthetic_inputs(cfg, src),
        (Some(d), Some(m)) => (d, m),
        (Some(_), None) => bail!("--manifest is required with --dataset"),
        (None, Some(_)) => bail!("--dataset is required with --manifest"),
    };
    let ds = read_dataset(dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
    let stages = StageManifest::load(manifest)
        .and_then(|m| m.resolve(&ds))
        .with_context(|| format!("loading manifest {}", manifest.display()))?;
    let observations = match &src.trajectory {
        Some(path) => read_ids(path)?
            .iter()
            .map(|id| ds.embedding(id, Kind::Image))
            .collect::<Result<_, _>>()?,
        None => ds.images().map(|e| e.embedding()).collect::<Result<_, _>>()?,
    };
    Ok(Inputs {
        stages,
        observations,
        lambdas: None,
    })
}

fn synthetic_inputs(cfg: &RunConfig, src: &SourceArgs) -> anyhow::Result<Inputs> {
    let scenario = AlignedScenario::generate(&cfg.grid.scenario)?;
    let traj = scenario
        .latent_model(src.noise, Progress::Identity, cfg.seeds[0])?
        .gen_trajectory(src.steps)?;
    let (lambdas, observations) = traj.into_iter().map(|p| (p.lambda, p.embedding)).unzip();
    Ok(Inputs {
        stages: vec![scenario.stage_spec()?],
        observations,
        lambdas: Some(lambdas),
    })
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn shape(cfg: &RunConfig, src: &SourceArgs, theta: Option<f64>, output: Option<&Path>) -> anyhow::Result<()> {
    let inputs = load_inputs(cfg, src)?;
    let mut machine = StageMachine::new(inputs.stages, cfg.transition())?;
    let mut shaper = match theta {
        Some(t) => Shaper::with_threshold(cfg.shaping(), t)?,
        None => Shaper::new(cfg.shaping())?,
    };
    let rows = score_trajectory(
        &mut machine,
        &mut shaper,
        cfg.projection()?,
        &inputs.observations,
        inputs.lambdas.as_deref(),
    )?;
    match output {
        Some(path) => {
            let mut w = create(path)?;
            write_rows_csv(&rows, &mut w)?;
            w.flush()?;
        }
        None => write_rows_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct Calibration {
    theta: f64,
    quantile: f64,
    kappa: f64,
    samples: usize,
}

pub fn calibrate(cfg: &RunConfig, src: &SourceArgs) -> anyhow::Result<()> {
    let geom = cfg.projection()?;
    let scores: Vec<f64> = if src.dataset.is_some() || cfg.dataset.is_some() || src.manifest.is_some() {
        let inputs = load_inputs(cfg, src)?;
        let mut machine = StageMachine::new(inputs.stages, cfg.transition())?;
        inputs
            .observations
            .iter()
            .map(|e| machine.step(e, geom).map(|o| o.raw_reward))
            .collect::<Result<_, _>>()?
    } else {
        // the synthetic noise floor: noisy copies of the start state
        let scenario = AlignedScenario::generate(&cfg.grid.scenario)?;
        let spec = scenario.stage_spec()?;
        let model = scenario.latent_model(src.noise, Progress::Identity, cfg.seeds[0])?;
        let mut rng = seeded(cfg.seeds[0], 0);
        (0..cfg.calibration_steps)
            .map(|_| spec.reward(&model.sample(0.0, &mut rng)?, geom))
            .collect::<Result<_, _>>()?
    };
    let mut cal = NoiseCalibrator::new(scores.len().max(2), cfg.quantile)?;
    for &s in &scores {
        cal.observe(s)?;
    }
    let out = Calibration {
        theta: cal.threshold()?,
        quantile: cfg.quantile,
        kappa: cfg.kappa,
        samples: scores.len(),
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

#[derive(Serialize)]
struct ArmSummary {
    arm: &'static str,
    /// `None` where a seed never reached the target.
    episodes_to_target: Vec<Option<usize>>,
    /// Seeds that never got there count as the episode budget.
    median: f64,
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let exp = cfg.experiment()?;
    let g = &exp.grid;
    let mut summaries = Vec::new();
    for arm in [Arm::Shaped, Arm::Sparse] {
        let per_seed = run_experiment(&exp, arm, &cfg.seeds)?;
        let path = cfg.output_dir.join(format!("curve_{}.csv", arm.name()));
        let mut w = create(&path)?;
        write_curve_csv(&per_seed, &mut w)?;
        w.flush()?;
        let summary = ArmSummary {
            arm: arm.name(),
            episodes_to_target: per_seed
                .iter()
                .map(|l| episodes_to_success(l, g.success_window, g.success_target))
                .collect(),
            median: median_episodes_to_success(&per_seed, g.success_window, g.success_target, g.episodes),
        };
        let per: Vec<String> = summary
            .episodes_to_target
            .iter()
            .map(|e| e.map_or_else(|| "never".to_string(), |n| n.to_string()))
            .collect();
        let censored = if summary.episodes_to_target.contains(&None) {
            format!(", never counted as {}", g.episodes)
        } else {
            String::new()
        };
        println!(
            "{}: median episodes to {}% success {} (per seed: {}{censored})",
            arm.name(),
            g.success_target * 100.0,
            summary.median,
            per.join(" ")
        );
        summaries.push(summary);
    }
    write_json(&cfg.output_dir.join("train_summary.json"), &summaries)
}

#[derive(Serialize)]
struct DisentangleSummary {
    initial: StageSummary,
    stages: Vec<StageSummary>,
}

pub fn disentangle(cfg: &RunConfig) -> anyhow::Result<()> {
    let d = &cfg.disentangle;
    let ds = FactorDataset::generate(&d.data)?;
    let report = disentangle::train(&ds, &d.weights, &d.train)?;
    let mut w = create(&cfg.output_dir.join("disentangle_history.csv"))?;
    write_history_csv(&report.history, &mut w)?;
    w.flush()?;
    let encoders = export_encoders(&report.model.enc)?;
    write_dataset(&encoders, &cfg.output_dir.join("encoders.mrvl"))?;
    let summary = DisentangleSummary {
        initial: report.initial,
        stages: report.stages,
    };
    write_json(&cfg.output_dir.join("disentangle_summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

pub fn verify(cfg: &RunConfig, fault: Fault, report_path: Option<&Path>) -> anyhow::Result<ExitCode> {
    let report = run_verify(cfg.seeds[0], fault);
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = report_path {
        write_json(path, &report)?;
    }
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("FAIL {}: {}", c.name, c.detail);
    }
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn fetch(
    endpoint: &str,
    texts: Option<&Path>,
    images: &[PathBuf],
    output: &Path,
    attempts: u32,
    token_env: &str,
) -> anyhow::Result<()> {
    let mut items = Vec::new();
    if let Some(path) = texts {
        items.extend(read_ids(path)?.into_iter().map(|t| FetchItem::text(t.clone(), t)));
    }
    for path in images {
        let id = path
            .file_name()
            .and_then(|n| n.to_str())
            .with_context(|| format!("{} has no usable file name", path.display()))?;
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        items.push(FetchItem::image(id, bytes));
    }
    if items.is_empty() {
        bail!("nothing to fetch: pass --texts and/or --images");
    }
    let cfg = ClientConfig {
        attempts,
        bearer_token: std::env::var(token_env).ok(),
        ..ClientConfig::default()
    };
    let mut ds = fetch_embeddings(endpoint, &items, &cfg)?;
    ds.metadata.insert("endpoint".into(), endpoint.into());
    write_dataset(&ds, output)?;
    eprintln!("wrote {} embeddings of width {} to {}", ds.len(), ds.dim(), output.display());
    Ok(())
}
