use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{CliError, ConvertArgs, EvalArgs, LangevinArgs, RunConfig, SampleArgs, StatsArgs, TrainArgs, ValidateArgs};
use crate::error::Error;
use crate::eval::{evaluate_pairs, synthetic_validation, ValidationSuite};
use crate::features::{
    compute_speaker_stats, convert_utterance_traced, denormalize_mcc, normalize_mcc, read_feature_file,
    read_stats_file, write_feature_file, write_stats_file, FeatureSequence, SpeakerStats, FEATURE_EXTENSION,
};
use crate::langevin::{sample as langevin_sample, write_trajectory_csv, LangevinConfig};
use crate::noise::{train as run_training, write_loss_csv, NoiseSchedule, TrainConfig, TrainingCorpus};
use crate::score_net::{read_checkpoint, write_checkpoint, ScoreNet, ScoreNetConfig};

type CmdResult<T = ()> = Result<T, CliError>;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RUN_CONFIG_FILE: &str = "run_config.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const STATS_SUBDIR: &str = "stats";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    Error::io(path, e).into()
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::validation(format!("{what} {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> CmdResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::validation(format!("{what} {} is not a directory", path.display())))
    }
}

fn create_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn create_parent(path: &Path) -> CmdResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Feature files of one directory, sorted by name.
fn feature_files(dir: &Path) -> CmdResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == FEATURE_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn load_speaker(data_dir: &Path, speaker: &str) -> CmdResult<Vec<FeatureSequence>> {
    let dir = data_dir.join(speaker);
    require_dir(&dir, &format!("speaker directory for `{speaker}`"))?;
    let files = feature_files(&dir)?;
    if files.is_empty() {
        return Err(CliError::validation(format!(
            "{} contains no .{FEATURE_EXTENSION} feature files",
            dir.display()
        )));
    }
    files
        .iter()
        .map(|f| read_feature_file(f).map_err(|e| with_path(f, e)))
        .collect()
}

fn with_path(path: &Path, e: Error) -> CliError {
    let mut err = CliError::from(e);
    err.message = format!("{}: {}", path.display(), err.message);
    err
}

fn default_stats_path(data_dir: &Path, speaker: &str) -> PathBuf {
    data_dir.join(format!("{speaker}.stats"))
}

pub fn stats(args: &StatsArgs) -> CmdResult {
    require_dir(&args.data_dir, "data directory")?;
    let seqs = load_speaker(&args.data_dir, &args.speaker)?;
    let stats = compute_speaker_stats(&seqs)
        .map_err(|e| with_path(&args.data_dir.join(&args.speaker), e))?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| default_stats_path(&args.data_dir, &args.speaker));
    create_parent(&out)?;
    write_stats_file(&out, &stats)?;
    println!(
        "{}: {} utterances, {} voiced frames -> {}",
        args.speaker,
        seqs.len(),
        stats.frame_count,
        out.display()
    );
    Ok(())
}

fn schedule_keys(cfg: &mut RunConfig, schedule: &NoiseSchedule) {
    let sigmas: Vec<String> = schedule.sigmas().iter().map(f64::to_string).collect();
    cfg.set("sigma_first", schedule.first())
        .set("sigma_last", schedule.last())
        .set("levels", schedule.len())
        .set("sigmas", sigmas.join(","));
}

pub fn train(args: &TrainArgs) -> CmdResult {
    let schedule = NoiseSchedule::geometric(args.sigma_first, args.sigma_last, args.levels)?;
    if args.speakers.is_empty() || args.speakers.iter().any(|s| s.trim().is_empty()) {
        return Err(CliError::validation("--speakers needs at least one non-empty name"));
    }
    for (i, s) in args.speakers.iter().enumerate() {
        if args.speakers[..i].contains(s) {
            return Err(CliError::validation(format!("speaker `{s}` is listed twice")));
        }
    }
    require_dir(&args.data_dir, "data directory")?;
    let stats_dir = args.stats_dir.clone().unwrap_or_else(|| args.data_dir.clone());
    for s in &args.speakers {
        let path = default_stats_path(&stats_dir, s);
        if !path.is_file() {
            return Err(CliError::validation(format!(
                "missing statistics for speaker `{s}` at {}; run `scorevc stats --data-dir {} --speaker {s} --out {}` first",
                path.display(),
                args.data_dir.display(),
                path.display()
            )));
        }
        require_dir(&args.data_dir.join(s), &format!("speaker directory for `{s}`"))?;
    }
    let config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        epochs: args.epochs,
        max_steps: args.steps,
        crop_frames: args.crop,
        seed: args.seed,
        ..TrainConfig::default()
    };
    config.validate()?;

    let mut all_stats = Vec::new();
    let mut speakers = Vec::new();
    for s in &args.speakers {
        let stats_path = default_stats_path(&stats_dir, s);
        let stats = read_stats_file(&stats_path).map_err(|e| with_path(&stats_path, e))?;
        let utterances = load_speaker(&args.data_dir, s)?
            .iter()
            .map(|u| normalize_mcc(u.mcc(), &stats))
            .collect::<Result<Vec<_>, _>>()?;
        speakers.push(utterances);
        all_stats.push(stats);
    }
    let corpus = TrainingCorpus::new(speakers)?;
    let net_config = ScoreNetConfig {
        feature_dim: corpus.feature_dim(),
        base_channels: args.net.base_channels,
        max_channels: args.net.max_channels,
        depth: args.net.depth,
        kernel_height: args.net.kernel_height,
        kernel_width: args.net.kernel_width,
        time_stride: args.net.time_stride,
        noise_levels: schedule.len(),
        speakers: corpus.speaker_count(),
    };
    net_config.validate()?;

    let mut run = RunConfig::default();
    run.set("command", "train")
        .set("data_dir", args.data_dir.display())
        .set("stats_dir", stats_dir.display())
        .set("speakers", args.speakers.join(","))
        .set("epochs", config.epochs)
        .set("steps", config.total_steps(&corpus))
        .set("lr", config.learning_rate)
        .set("batch", config.batch_size)
        .set("beta1", config.beta1)
        .set("beta2", config.beta2)
        .set("adam_eps", config.adam_eps)
        .set("crop", config.crop_frames)
        .set("bn_momentum", config.bn_momentum)
        .set("seed", config.seed);
    schedule_keys(&mut run, &schedule);
    run.set("feature_dim", net_config.feature_dim)
        .set("base_channels", net_config.base_channels)
        .set("max_channels", net_config.max_channels)
        .set("depth", net_config.depth)
        .set("kernel_height", net_config.kernel_height)
        .set("kernel_width", net_config.kernel_width)
        .set("time_stride", net_config.time_stride);

    create_dir(&args.out)?;
    run.write(&args.out.join(RUN_CONFIG_FILE))?;
    let stats_out = args.out.join(STATS_SUBDIR);
    create_dir(&stats_out)?;
    for (s, st) in args.speakers.iter().zip(&all_stats) {
        write_stats_file(stats_out.join(format!("{s}.stats")), st)?;
    }

    println!(
        "training on {} utterances from {} speakers for {} steps",
        corpus.utterance_count(),
        corpus.speaker_count(),
        config.total_steps(&corpus)
    );
    let outcome = run_training(&corpus, net_config, &config, &schedule)?;
    write_loss_csv(args.out.join(LOSS_FILE), &outcome.history)?;
    write_checkpoint(args.out.join(CHECKPOINT_FILE), &outcome.net)?;
    if let Some(last) = outcome.history.last() {
        println!("final loss {:.6} at step {}", last.loss, last.step);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

/// A trained model together with the run directory it came from.
struct Model {
    net: ScoreNet,
    schedule: NoiseSchedule,
    speakers: Vec<String>,
    stats_dir: PathBuf,
    run: RunConfig,
}

impl Model {
    fn load(checkpoint: &Path) -> CmdResult<Self> {
        require_file(checkpoint, "checkpoint")?;
        let run_dir = checkpoint.parent().unwrap_or(Path::new("."));
        let run_path = run_dir.join(RUN_CONFIG_FILE);
        require_file(&run_path, "run configuration")?;
        let run = RunConfig::read(&run_path)?;
        let schedule = NoiseSchedule::geometric(
            run.parse("sigma_first", &run_path)?,
            run.parse("sigma_last", &run_path)?,
            run.parse("levels", &run_path)?,
        )?;
        let speakers: Vec<String> = run
            .get("speakers")
            .unwrap_or_default()
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let net = read_checkpoint(checkpoint).map_err(|e| with_path(checkpoint, e))?;
        let cfg = net.config();
        if cfg.speakers != speakers.len() || cfg.noise_levels != schedule.len() {
            return Err(CliError::validation(format!(
                "checkpoint expects {} speakers and {} levels but {} lists {} and {}",
                cfg.speakers,
                cfg.noise_levels,
                run_path.display(),
                speakers.len(),
                schedule.len()
            )));
        }
        Ok(Self {
            net,
            schedule,
            speakers,
            stats_dir: run_dir.join(STATS_SUBDIR),
            run,
        })
    }

    fn speaker(&self, name: &str) -> CmdResult<(usize, SpeakerStats)> {
        let idx = self.speakers.iter().position(|s| s == name).ok_or_else(|| {
            CliError::validation(format!(
                "unknown speaker `{name}`; the model knows: {}",
                self.speakers.join(", ")
            ))
        })?;
        let path = self.stats_dir.join(format!("{name}.stats"));
        let stats = read_stats_file(&path).map_err(|e| with_path(&path, e))?;
        Ok((idx, stats))
    }
}

fn langevin_config(args: &LangevinArgs, start_level: usize, noisy: bool) -> LangevinConfig {
    LangevinConfig {
        epsilon: args.epsilon,
        steps_per_level: args.steps,
        start_level,
        noisy,
        seed: args.seed,
        record_trajectory: args.trajectory.is_some(),
    }
}

fn langevin_keys(run: &mut RunConfig, cfg: &LangevinConfig) {
    run.set("epsilon", cfg.epsilon)
        .set("steps_per_level", cfg.steps_per_level)
        .set("start_level", cfg.start_level)
        .set("noisy", cfg.noisy)
        .set("seed", cfg.seed);
}

/// Effective configuration written next to a generated feature file.
fn config_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".config");
    PathBuf::from(name)
}

fn model_keys(run: &mut RunConfig, checkpoint: &Path, model: &Model) {
    run.set("checkpoint", checkpoint.display())
        .set("speakers", model.speakers.join(","));
    schedule_keys(run, &model.schedule);
    if let Some(seed) = model.run.get("seed") {
        run.set("train_seed", seed);
    }
}

pub fn convert(args: &ConvertArgs) -> CmdResult {
    require_file(&args.input, "input feature file")?;
    if let Some(p) = &args.source_stats {
        require_file(p, "source statistics")?;
    }
    let model = Model::load(&args.checkpoint)?;
    let (target, target_stats) = model.speaker(&args.target_speaker)?;
    let cfg = langevin_config(&args.langevin, args.start_level, args.noisy);
    cfg.validate(model.schedule.len())?;
    let input = read_feature_file(&args.input).map_err(|e| with_path(&args.input, e))?;
    if input.dim() != model.net.config().feature_dim {
        return Err(CliError::validation(format!(
            "{} has D={} but the model was trained on D={}",
            args.input.display(),
            input.dim(),
            model.net.config().feature_dim
        )));
    }
    let (source_stats, source_desc) = match &args.source_stats {
        Some(p) => (read_stats_file(p).map_err(|e| with_path(p, e))?, p.display().to_string()),
        None => (
            compute_speaker_stats(std::slice::from_ref(&input)).map_err(|e| with_path(&args.input, e))?,
            "utterance".to_string(),
        ),
    };

    let (converted, output) = convert_utterance_traced(
        &model.net,
        &input,
        target,
        &source_stats,
        &target_stats,
        &model.schedule,
        &cfg,
    )?;
    create_parent(&args.out)?;
    write_feature_file(&args.out, &converted)?;
    if let Some(path) = &args.langevin.trajectory {
        create_parent(path)?;
        write_trajectory_csv(path, &output.trajectory)?;
    }

    let mut run = RunConfig::default();
    run.set("command", "convert")
        .set("input", args.input.display())
        .set("target_speaker", &args.target_speaker)
        .set("source_stats", source_desc);
    model_keys(&mut run, &args.checkpoint, &model);
    langevin_keys(&mut run, &cfg);
    run.set("out", args.out.display());
    run.write(&config_path(&args.out))?;
    println!(
        "converted {} frames toward `{}` with {} score evaluations -> {}",
        converted.frames(),
        args.target_speaker,
        output.evaluations,
        args.out.display()
    );
    Ok(())
}

pub fn sample(args: &SampleArgs) -> CmdResult {
    if args.frames == 0 {
        return Err(CliError::validation("--frames must be at least 1"));
    }
    let model = Model::load(&args.checkpoint)?;
    let (speaker, stats) = model.speaker(&args.speaker)?;
    let cfg = langevin_config(&args.langevin, 1, args.noisy);
    cfg.validate(model.schedule.len())?;
    let dim = model.net.config().feature_dim;
    let normalized = langevin_sample(&model.net, dim, args.frames, speaker, &model.schedule, &cfg)?;
    let mcc: Array2<f64> = denormalize_mcc(&normalized, &stats)?;
    let seq = FeatureSequence::without_ap(mcc, vec![None; args.frames])?;
    create_parent(&args.out)?;
    write_feature_file(&args.out, &seq)?;

    let mut run = RunConfig::default();
    run.set("command", "sample")
        .set("speaker", &args.speaker)
        .set("frames", args.frames);
    model_keys(&mut run, &args.checkpoint, &model);
    langevin_keys(&mut run, &cfg);
    run.set("out", args.out.display());
    run.write(&config_path(&args.out))?;
    println!("sampled {} frames for `{}` -> {}", args.frames, args.speaker, args.out.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    require_dir(&args.converted, "converted directory")?;
    require_dir(&args.reference, "reference directory")?;
    let report = evaluate_pairs(&args.converted, &args.reference)?;
    if let Some(out) = &args.out {
        create_parent(out)?;
        std::fs::write(out, report.to_csv()).map_err(|e| io_err(out, e))?;
    }
    println!("{}", report.summary_line());
    Ok(())
}

pub fn validate(args: &ValidateArgs) -> CmdResult {
    let suite = match &args.spec {
        Some(p) => {
            require_file(p, "suite description")?;
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            ValidationSuite::from_toml(&text).map_err(|e| with_path(p, e))?
        }
        None => ValidationSuite::default(),
    };
    create_dir(&args.out)?;
    let report = synthetic_validation(&suite)?;
    let write = |name: &str, text: String| -> CmdResult {
        let path = args.out.join(name);
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    };
    write("score_grid.csv", report.grid_csv())?;
    write("checks.csv", report.checks_csv())?;
    write("summary.txt", report.summary())?;
    write_loss_csv(args.out.join(LOSS_FILE), &report.loss_history)?;
    print!("{}", report.summary());
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .chain(report.training_error.as_deref())
            .collect();
        Err(CliError {
            code: 2,
            message: format!("synthetic validation failed: {}", failed.join(", ")),
        })
    }
}
