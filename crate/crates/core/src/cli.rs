//! Command-line entry point.
//!
//! Every command resolves one [`ExperimentConfig`] (defaults, then the
//! `--config` file, then flags), and on success writes the snapshot to
//! `<out>/config.resolved.toml`, records a [`RunManifest`] at
//! `<out>/<command>.manifest.json` and prints its report as `metric=value`
//! lines, which are also saved to `<out>/<command>.txt`.
//!
//! Layout under `--out`: `data/` (embstore layout, overridable with
//! `--data`), `model/` (checkpoint), reports and manifests.
//!
//! Exit status: 0 on success, 2 on usage or config errors, 1 on runtime
//! failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::embstore::{load_layout, write_layout, DomainDataset, Layout};
use crate::error::{Error, Result};
use crate::pipeline::{
    evaluate, evaluate_classifier, ext_metric, generalization_bound, load_model, nearest_neighbor,
    save_model, train, train_source_only_probe, weights_from_distances, Ablation, LandaModel,
    TrainConfig, Weighting,
};
use crate::synth::{generate_world, zero_shot_eval, WorldSpec, ZeroShotPrompt};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const DATA_DIR: &str = "data";
pub const MODEL_DIR: &str = "model";
pub const NN_DUMP: &str = "nn.tsv";

#[derive(Debug, Parser)]
#[command(
    name = "landa",
    version,
    about = "Language-guided multi-source domain adaptation in embedding space"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
enum Command {
    /// Generate a synthetic world into the data directory.
    Synth,
    /// Train augmenters and the classifier; write the checkpoint.
    Train,
    /// In-domain, out-of-domain and EXT accuracy of the checkpoint.
    Eval,
    /// Prompt distances and aggregation weights in both modes.
    Weights,
    /// Terms of the target error bound for the checkpoint.
    Bound,
    /// Nearest target neighbors of raw and augmented source samples.
    Nn,
    /// Train and evaluate ablation configurations A-D.
    Ablate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Weights => "weights",
            Command::Bound => "bound",
            Command::Nn => "nn",
            Command::Ablate => "ablate",
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
struct Flags {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for world generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "landa-out")]
    out: PathBuf,
    /// Data directory; defaults to `<out>/data`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Source weighting: as-written or inverse
    #[arg(long, global = true, value_parser = parse_weighting)]
    weighting: Option<Weighting>,
    /// Ablation configuration A, B, C or D (train and eval only)
    #[arg(long, global = true, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Entropic regularization strength.
    #[arg(long, global = true)]
    zeta: Option<f64>,
    /// Class-alignment temperature.
    #[arg(long, global = true)]
    tau: Option<f64>,
}

fn parse_weighting(s: &str) -> std::result::Result<Weighting, String> {
    match s {
        "as-written" => Ok(Weighting::AsWritten),
        "inverse" => Ok(Weighting::Inverse),
        _ => Err(format!("expected as-written or inverse, got {s:?}")),
    }
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSettings {
    pub delta: f64,
    pub varsigma: f64,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            delta: 0.05,
            varsigma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnSettings {
    /// Queries per source domain, spread evenly over its rows.
    pub queries: usize,
}

impl Default for NnSettings {
    fn default() -> Self {
        NnSettings { queries: 10 }
    }
}

/// The whole experiment in one file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSpec,
    pub train: TrainConfig,
    pub bound: BoundSettings,
    pub nn: NnSettings,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        if !(self.bound.delta > 0.0 && self.bound.delta < 1.0) {
            return Err(Error::Config(format!(
                "bound.delta must lie in (0, 1), got {}",
                self.bound.delta
            )));
        }
        if !(self.bound.varsigma > 0.0 && self.bound.varsigma < 2f64.sqrt()) {
            return Err(Error::Config(format!(
                "bound.varsigma must lie in (0, sqrt 2), got {}",
                self.bound.varsigma
            )));
        }
        if self.nn.queries == 0 {
            return Err(Error::Config("nn.queries must be at least 1".into()));
        }
        Ok(())
    }
}

/// Provenance record of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve(flags: &Flags, command: Command) -> Result<ExperimentConfig> {
    let mut cfg = match &flags.config {
        Some(path) => read_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = flags.seed {
        cfg.world.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(w) = flags.weighting {
        cfg.train.weighting = w;
    }
    if let Some(a) = flags.ablation {
        if command == Command::Ablate {
            return Err(Error::Config(
                "ablate runs all four configurations; --ablation does not apply".into(),
            ));
        }
        a.apply(&mut cfg.train);
    }
    if let Some(z) = flags.zeta {
        cfg.train.loss.zeta = z;
    }
    if let Some(t) = flags.tau {
        cfg.train.loss.tau = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Accumulates `metric=value` lines.
#[derive(Default)]
struct Report(String);

impl Report {
    fn metric(&mut self, key: impl AsRef<str>, value: impl std::fmt::Display) {
        writeln!(self.0, "{}={value}", key.as_ref()).expect("writing to a String");
    }

    fn row(&mut self, pairs: &[(&str, String)]) {
        let line: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(self.0, "{}", line.join(" ")).expect("writing to a String");
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    data: PathBuf,
    timings: BTreeMap<String, f64>,
}

impl Ctx {
    fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let value = f()?;
        self.timings
            .insert(phase.to_string(), start.elapsed().as_secs_f64());
        Ok(value)
    }

    fn layout(&mut self) -> Result<Layout> {
        let data = self.data.clone();
        self.timed("load_data", || load_layout(&data))
    }

    /// Replaces the "half the embedding dim" default by its value, so the
    /// snapshot is complete.
    fn pin_hidden_dim(&mut self, layout: &Layout) {
        let h = self.cfg.train.hidden_for(layout.bank.dim());
        self.cfg.train.hidden_dim = Some(h);
    }

    fn model(&mut self) -> Result<LandaModel> {
        let dir = self.out.join(MODEL_DIR);
        self.timed("load_model", || load_model(&dir))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn labeled_target(layout: &Layout) -> Result<&DomainDataset> {
    layout.target.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "the data directory has no samples for target domain {:?}",
            layout.bank.target_name()
        ))
    })
}

fn cmd_synth(ctx: &mut Ctx, report: &mut Report) -> Result<()> {
    let spec = ctx.cfg.world.clone();
    let world = ctx.timed("generate", || generate_world(&spec))?;
    let data = ctx.data.clone();
    ctx.timed("write_data", || {
        write_layout(&data, &world.sources, Some(&world.target), &world.bank)
    })?;
    report.metric("sources", world.sources.len());
    report.metric("classes", spec.num_classes);
    report.metric("dim", spec.m);
    report.metric("samples_per_domain", world.target.len());
    let tau = ctx.cfg.train.loss.tau;
    for (prompt, name) in [
        (ZeroShotPrompt::General, "zs_general_od_acc"),
        (ZeroShotPrompt::Adapted, "zs_adapted_od_acc"),
    ] {
        report.metric(
            name,
            zero_shot_eval(&world.target, &world.bank, tau, prompt)?,
        );
    }
    Ok(())
}

fn cmd_train(ctx: &mut Ctx, report: &mut Report) -> Result<()> {
    let layout = ctx.layout()?;
    ctx.pin_hidden_dim(&layout);
    let cfg = ctx.cfg.train.clone();
    let outcome = ctx.timed("train", || train(&layout.sources, &layout.bank, &cfg))?;
    let dir = ctx.out.join(MODEL_DIR);
    ctx.timed("save_model", || save_model(&dir, &outcome.model))?;
    let history = serde_json::json!({
        "stage_one": outcome.stage_one,
        "stage_two": outcome.stage_two,
    });
    let text = serde_json::to_string_pretty(&history).expect("history serializes");
    write_text(&ctx.out.join("history.json"), &(text + "\n"))?;

    let model = &outcome.model;
    for (name, w) in model.domain_names().iter().zip(model.weights()) {
        report.metric(format!("weight.{name}"), w);
    }
    if let Some(last) = outcome.stage_one.epochs.last() {
        for (name, l) in model.domain_names().iter().zip(last) {
            report.metric(format!("stage1_final_loss.{name}"), l.total);
        }
    }
    if let Some(last) = outcome.stage_two.last() {
        report.metric("stage2_final_loss", last);
    }
    Ok(())
}

fn cmd_eval(ctx: &mut Ctx, report: &mut Report) -> Result<()> {
    let layout = ctx.layout()?;
    let model = ctx.model()?;
    let target = labeled_target(&layout)?;
    let mut id = Vec::new();
    for d in &layout.sources {
        let r = evaluate(d, &model, false)?;
        report.metric(format!("id_acc.{}", d.domain_name), r.accuracy);
        id.push(r.accuracy);
    }
    let od = evaluate(target, &model, true)?.accuracy;
    report.metric("id_acc_mean", id.iter().sum::<f64>() / id.len() as f64);
    report.metric("od_acc", od);
    report.metric("ext", ext_metric(&id, od));

    let cfg = model.config().clone();
    let (probe, _) = ctx.timed("baseline", || {
        train_source_only_probe(&layout.sources, &cfg)
    })?;
    let mut lp_id = Vec::new();
    for d in &layout.sources {
        lp_id.push(evaluate_classifier(d, &probe)?.accuracy);
    }
    let lp_od = evaluate_classifier(target, &probe)?.accuracy;
    report.metric(
        "lp_id_acc_mean",
        lp_id.iter().sum::<f64>() / lp_id.len() as f64,
    );
    report.metric("lp_od_acc", lp_od);
    report.metric("lp_ext", ext_metric(&lp_id, lp_od));
    Ok(())
}

fn cmd_weights(ctx: &mut Ctx, report: &mut Report) -> Result<()> {
    let layout = ctx.layout()?;
    let params = ctx.cfg.train.loss.ot_params();
    let names: Vec<String> = layout
        .sources
        .iter()
        .map(|d| d.domain_name.clone())
        .collect();
    let distances = names
        .iter()
        .map(|n| crate::ot::text_weight_distance(&layout.bank, n, &params))
        .collect::<Result<Vec<_>>>()?;
    let written = weights_from_distances(&distances, Weighting::AsWritten)?;
    let inverse = weights_from_distances(&distances, Weighting::Inverse)?;
    for (i, name) in names.iter().enumerate() {
        report.metric(format!("distance.{name}"), distances[i]);
        report.metric(format!("weight_as_written.{name}"), written[i]);
        report.metric(format!("weight_inverse.{name}"), inverse[i]);
    }
    Ok(())
}

fn cmd_bound(ctx: &mut Ctx, report: &mut Report) -> Result<()> {
    let layout = ctx.layout()?;
    let model = ctx.model()?;
    let target = labeled_target(&layout)?;
    let b = ctx.cfg.bound.clone();
    let r = ctx.timed("bound", || {
        generalization_bound(
            &layout.sources,
            Some(target),
            &model,
            &layout.bank,
            b.delta,
            b.varsigma,
        )
    })?;
    report.metric("source_error", r.source_error);
    report.metric("kernel_mean_norm", r.kernel_mean_norm);
    report.metric("pairwise_wasserstein", r.pairwise_wasserstein);
    for (d, t) in layout.sources.iter().zip(&r.deviation_terms) {
        report.metric(format!("deviation.{}", d.domain_name), t);
    }
    report.metric("deviation_sum", r.deviation_sum);
    report.metric("theta", r.theta);
    report.metric("rhs", r.rhs);
    report.metric("target_error", r.target_error);
    report.metric("slack", r.slack());
    report.metric("holds", r.holds());
    Ok(())
}

fn cmd_nn(ctx: &mut Ctx, report: &mut Report) -> Result<()> {
    let layout = ctx.layout()?;
    let model = ctx.model()?;
    let target = labeled_target(&layout)?;
    let mut dump = String::from(
        "domain\tindex\tlabel\traw_nn\traw_nn_label\traw_distance\taug_nn\taug_nn_label\taug_distance\n",
    );
    let (mut raw_hits, mut aug_hits, mut total) = (0usize, 0usize, 0usize);
    for d in &layout.sources {
        let aug = &model.augmenters()[model.domain_index(&d.domain_name)?];
        let x = d.embeddings.to_f64();
        let q = ctx.cfg.nn.queries.min(d.len());
        let (mut raw_d, mut aug_d) = (0usize, 0usize);
        for j in 0..q {
            let i = j * d.len() / q;
            let label = d.labels[i];
            let (rn, rd) = nearest_neighbor(x.row(i), &target.embeddings, None)?;
            let (an, ad) = nearest_neighbor(x.row(i), &target.embeddings, Some(aug))?;
            let (rl, al) = (target.labels[rn], target.labels[an]);
            raw_d += usize::from(rl == label);
            aug_d += usize::from(al == label);
            writeln!(
                dump,
                "{}\t{i}\t{label}\t{rn}\t{rl}\t{rd}\t{an}\t{al}\t{ad}",
                d.domain_name
            )
            .expect("writing to a String");
        }
        report.metric(
            format!("nn_raw_class_match.{}", d.domain_name),
            raw_d as f64 / q as f64,
        );
        report.metric(
            format!("nn_aug_class_match.{}", d.domain_name),
            aug_d as f64 / q as f64,
        );
        raw_hits += raw_d;
        aug_hits += aug_d;
        total += q;
    }
    report.metric("nn_raw_class_match", raw_hits as f64 / total as f64);
    report.metric("nn_aug_class_match", aug_hits as f64 / total as f64);
    write_text(&ctx.out.join(NN_DUMP), &dump)
}

fn cmd_ablate(ctx: &mut Ctx, report: &mut Report) -> Result<()> {
    let layout = ctx.layout()?;
    ctx.pin_hidden_dim(&layout);
    let target = labeled_target(&layout)?;
    for a in Ablation::ALL {
        let mut cfg = ctx.cfg.train.clone();
        a.apply(&mut cfg);
        let outcome = ctx.timed(&format!("ablation_{a}"), || {
            train(&layout.sources, &layout.bank, &cfg)
        })?;
        let mut id = Vec::new();
        for d in &layout.sources {
            id.push(evaluate(d, &outcome.model, false)?.accuracy);
        }
        let od = evaluate(target, &outcome.model, true)?.accuracy;
        report.row(&[
            ("ablation", a.to_string()),
            (
                "id_acc_mean",
                (id.iter().sum::<f64>() / id.len() as f64).to_string(),
            ),
            ("od_acc", od.to_string()),
            ("ext", ext_metric(&id, od).to_string()),
        ]);
    }
    Ok(())
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

fn execute(command: Command, flags: &Flags) -> std::result::Result<String, Failure> {
    let cfg = resolve(flags, command).map_err(Failure::Usage)?;
    let out = flags.out.clone();
    let data = flags.data.clone().unwrap_or_else(|| out.join(DATA_DIR));
    let runtime = |e| Failure::Runtime(e);
    fs::create_dir_all(&out)
        .map_err(|e| Error::io(&out, e))
        .map_err(runtime)?;

    let mut ctx = Ctx {
        cfg,
        out,
        data,
        timings: BTreeMap::new(),
    };
    let mut report = Report::default();
    let start = Instant::now();
    let result = match command {
        Command::Synth => cmd_synth(&mut ctx, &mut report),
        Command::Train => cmd_train(&mut ctx, &mut report),
        Command::Eval => cmd_eval(&mut ctx, &mut report),
        Command::Weights => cmd_weights(&mut ctx, &mut report),
        Command::Bound => cmd_bound(&mut ctx, &mut report),
        Command::Nn => cmd_nn(&mut ctx, &mut report),
        Command::Ablate => cmd_ablate(&mut ctx, &mut report),
    };
    result.map_err(runtime)?;
    ctx.timings
        .insert("total".into(), start.elapsed().as_secs_f64());

    let name = command.name();
    let snapshot = toml::to_string(&ctx.cfg).expect("config serializes");
    write_text(&ctx.out.join(RESOLVED_CONFIG), &snapshot).map_err(runtime)?;
    write_text(&ctx.out.join(format!("{name}.txt")), &report.0).map_err(runtime)?;
    let manifest = RunManifest {
        command: name.into(),
        config_path: flags.config.clone(),
        seed: ctx.cfg.train.seed,
        config: ctx.cfg,
        out_dir: ctx.out.clone(),
        timings: ctx.timings,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(
        &ctx.out.join(format!("{name}.manifest.json")),
        &(text + "\n"),
    )
    .map_err(runtime)?;
    Ok(report.0)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command, &cli.flags) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(Failure::Usage(e)) => {
            eprintln!("config error: {e}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}
