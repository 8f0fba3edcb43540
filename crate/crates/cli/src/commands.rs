use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use vgold_core::dataset::{generate_corpus, load_corpus, save_corpus, AnnotationSet, SizeModel};
use vgold_core::scoring::score;
use vgold_sim::analysis::{compare_conditions, compare_samples, Comparison};
use vgold_sim::calibrate::{calibrate, read_targets, Calibration, CalibrationGrid};
use vgold_sim::conditions::{preset, suite};
use vgold_sim::harness::{run_experiment, CorpusSource, ExperimentConfig};
use vgold_sim::model::BehaviorModel;
use vgold_sim::output::{emit_comparisons, emit_events, emit_outputs};
use vgold_sim::population::PopulationSpec;
use vgold_sim::summary::StatUnit;

use crate::{Command, ExperimentArgs};

/// Resolved configuration written next to simulate outputs.
const EXPERIMENT_FILE: &str = "experiment.json";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Score { gold, pred, tau, out } => score_file(&gold, &pred, tau, &out),
        Command::Generate { seed, per_count, out } => generate(seed, per_count, &out),
        Command::Simulate { experiment, seed, out } => simulate(&experiment, seed, &out),
        Command::Analyze { input, baseline } => analyze(&input, &baseline),
        Command::Calibrate {
            target,
            config,
            grid,
            out,
        } => run_calibration(&target, config.as_deref(), grid.as_deref(), &out),
        Command::Serve {
            experiment,
            condition,
            host,
            port,
            log,
            cors,
        } => serve(&experiment, condition.as_deref(), &host, port, &log, cors),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("{}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("{}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("{}", path.display()))
}

fn load_experiment(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => read_json::<ExperimentConfig>(path)?,
        (None, Some(name)) => {
            let conditions = suite(name)
                .or_else(|| preset(name).map(|c| vec![c]))
                .ok_or_else(|| anyhow!("unknown preset or suite {name:?}"))?;
            ExperimentConfig {
                corpus: CorpusSource::default(),
                population: PopulationSpec::default(),
                model: BehaviorModel::default(),
                conditions,
                seed: 0,
                stat_unit: StatUnit::default(),
                baseline: "baseline".into(),
            }
        }
        (None, None) => bail!("either --config or --preset is required"),
    };
    if let Some(path) = &args.calibration {
        let cal: Calibration = read_json(path)?;
        config.model = cal.model;
    }
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Serialize)]
struct ScoreRow<'a> {
    scene_id: &'a str,
    worker_id: &'a str,
    gt_count: usize,
    boxes: usize,
    miou: f64,
    recall: f64,
    fn_count: usize,
    fp_count: usize,
    elapsed: f64,
}

fn score_file(gold: &Path, pred: &Path, tau: f64, out: &Path) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        bail!("--tau must lie strictly between 0 and 1, got {tau}");
    }
    let loaded = load_corpus(gold)?;
    for r in &loaded.rejected {
        tracing::warn!(line = r.line, scene = %r.scene_id, "rejected scene: {}", r.reason);
    }
    if loaded.clamped_boxes > 0 {
        tracing::warn!(boxes = loaded.clamped_boxes, "boxes clipped to their scene extent");
    }
    let index: HashMap<&str, usize> = loaded
        .corpus
        .scenes()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.scene_id.as_str(), i))
        .collect();

    let file = File::open(pred).with_context(|| format!("{}", pred.display()))?;
    let mut annotations = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("{}", pred.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: AnnotationSet =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", pred.display(), i + 1))?;
        if !index.contains_key(ann.scene_id.as_str()) {
            bail!("{}:{}: scene {:?} is not in the corpus", pred.display(), i + 1, ann.scene_id);
        }
        annotations.push(ann);
    }

    let mut w = csv::Writer::from_path(out).with_context(|| format!("{}", out.display()))?;
    let (mut miou_sum, mut recall_sum) = (0.0, 0.0);
    for ann in &annotations {
        let scene = &loaded.corpus.scenes()[index[ann.scene_id.as_str()]];
        let report = score(scene, ann)?;
        let recall = report.recall_at(tau);
        miou_sum += report.miou;
        recall_sum += recall;
        w.serialize(ScoreRow {
            scene_id: &ann.scene_id,
            worker_id: &ann.worker_id,
            gt_count: scene.count(),
            boxes: ann.boxes.len(),
            miou: report.miou,
            recall,
            fn_count: report.fn_count,
            fp_count: report.fp_count,
            elapsed: ann.elapsed,
        })
        .with_context(|| format!("{}", out.display()))?;
    }
    w.flush().with_context(|| format!("{}", out.display()))?;
    let n = annotations.len().max(1) as f64;
    println!(
        "scored {} annotations: mean mIoU {:.2}, mean recall@{tau} {:.3}",
        annotations.len(),
        miou_sum / n,
        recall_sum / n
    );
    Ok(())
}

fn generate(seed: u64, per_count: usize, out: &Path) -> Result<()> {
    if per_count == 0 {
        bail!("--per-count must be at least 1");
    }
    let hist: BTreeMap<usize, usize> = (1..=14).map(|n| (n, per_count)).collect();
    let corpus = generate_corpus(seed, &hist, &SizeModel::default())?;
    save_corpus(&corpus, out)?;
    println!("wrote {} scenes, {} boxes to {}", corpus.len(), corpus.total_boxes(), out.display());
    Ok(())
}

fn print_comparisons(table: &[Comparison]) {
    println!(
        "{:<24} {:>8} {:>8} {:>12} {:>10} {:>10} {:>4}",
        "condition", "mean", "base", "U", "p", "p_adj", ""
    );
    for c in table {
        println!(
            "{:<24} {:>8.2} {:>8.2} {:>12.1} {:>10.2e} {:>10.2e} {:>4}",
            c.condition, c.mean, c.baseline_mean, c.stat.u, c.stat.p, c.stat.p_adjusted, c.verdict
        );
    }
}

fn simulate(args: &ExperimentArgs, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut config = load_experiment(args)?;
    let seed = seed.unwrap_or(config.seed);
    config.seed = seed;
    let started = std::time::Instant::now();
    let run = run_experiment(&config, seed)?;
    tracing::info!(seconds = started.elapsed().as_secs_f64(), "simulation finished");

    emit_outputs(&run.summaries, out)?;
    emit_events(&run.runs, out)?;
    write_json(&out.join(EXPERIMENT_FILE), &config)?;

    println!(
        "{:<24} {:>8} {:>6} {:>9} {:>7} {:>9}",
        "condition", "mIoU", "se", "time(s)", "n", "excluded"
    );
    for s in &run.summaries {
        println!(
            "{:<24} {:>8.2} {:>6.2} {:>9.1} {:>7} {:>9}",
            s.condition,
            s.mean_miou,
            s.se,
            s.mean_time,
            s.n,
            s.excluded.len()
        );
    }
    let has_baseline = run.summaries.iter().any(|s| s.condition == config.baseline);
    if has_baseline && run.summaries.len() > 1 {
        let table = compare_conditions(&run.summaries, &config.baseline)?;
        emit_comparisons(&table, out)?;
        println!();
        print_comparisons(&table);
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn analyze(input: &Path, baseline: &str) -> Result<()> {
    let samples = vgold_sim::output::read_samples(input)?;
    let table = compare_samples(&samples, baseline)?;
    let path = emit_comparisons(&table, input)?;
    print_comparisons(&table);
    println!("wrote {}", path.display());
    Ok(())
}

fn run_calibration(target: &Path, config: Option<&Path>, grid: Option<&Path>, out: &Path) -> Result<()> {
    let targets = read_targets(target)?;
    let (corpus, population, start) = match config {
        Some(path) => {
            let c: ExperimentConfig = read_json(path)?;
            (c.corpus, c.population, c.model)
        }
        None => (CorpusSource::default(), PopulationSpec::default(), BehaviorModel::default()),
    };
    let grid = match grid {
        Some(path) => read_json(path)?,
        None => CalibrationGrid::default(),
    };
    let corpus = Arc::new(corpus.load()?);
    let started = std::time::Instant::now();
    let cal = calibrate(&start, corpus, &population, &targets, &grid)?;
    tracing::info!(
        seconds = started.elapsed().as_secs_f64(),
        points = cal.grid.len(),
        "calibration finished"
    );
    write_json(out, &cal)?;

    println!(
        "p0 {} noise_scale {} banner_focus {}",
        cal.model.p0, cal.model.noise_scale, cal.model.banner_focus
    );
    println!(
        "baseline mean {:.2} (target {:.2}), per-count Spearman {:.3}",
        cal.baseline_mean, cal.baseline_target, cal.spearman
    );
    if let (Some(mean), Some(target)) = (cal.improved_mean, cal.improved_target) {
        println!("improved mean {mean:.2} (target {target:.2})");
    }
    println!(
        "tier thresholds from baseline percentiles 10/50/75: {:.1} / {:.1} / {:.1}",
        cal.tiers.t_min, cal.tiers.t_bonus_b, cal.tiers.t_bonus_a
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn serve(args: &ExperimentArgs, condition: Option<&str>, host: &str, port: u16, log: &Path, cors: bool) -> Result<()> {
    let config = load_experiment(args)?;
    let spec = match condition {
        Some(name) => config
            .conditions
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| anyhow!("condition {name:?} is not in the configuration"))?,
        None if config.conditions.len() == 1 => &config.conditions[0],
        None => bail!(
            "the configuration has {} conditions; choose one with --condition",
            config.conditions.len()
        ),
    };
    let corpus = Arc::new(config.corpus.load()?);
    let engine = vgold_service::open_engine(spec.clone(), corpus, log)?;
    tracing::info!(
        condition = %spec.name,
        events = engine.state().next_seq,
        log = %log.display(),
        "engine ready"
    );
    let engine = Arc::new(Mutex::new(engine));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("bind {host}:{port}"))?;
        vgold_service::serve(listener, engine, cors).await?;
        Ok(())
    })
}
