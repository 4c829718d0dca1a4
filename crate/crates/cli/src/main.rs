use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jointsgait::datapipe::{load_dataset, Protocol, Split, SynthConfig};
use jointsgait::evalproto::{
    cross_view_eval, gallery_size_sweep, load_embeddings, matrix_text, rank1, report_csv, report_text,
    save_embeddings, EmbeddingSet,
};
use jointsgait::numerics::Rng;
use jointsgait::pipeline::{embed_index, run_training, JointsGait, TrainConfig};
use jointsgait::skeleton::Condition;
use jointsgait::{Error, Result};

#[derive(Parser)]
#[command(name = "jointsgait", version, about = "Skeleton gait recognition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic walker dataset in the OpenPose layout.
    Synth(SynthArgs),
    /// Train a model and write checkpoints plus a loss log.
    Train(TrainArgs),
    /// Write embeddings of one split with a trained checkpoint.
    Embed(EmbedArgs),
    /// Cross-view rank-1 evaluation of gallery and probe embeddings.
    Eval(EvalArgs),
    /// Print the effective training configuration.
    PrintConfig(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Key-value config file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set batch.p=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Key-value file with `synth.*` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    identities: Option<usize>,
    /// Comma-separated view angles in degrees.
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<i32>>,
    /// Clips per identity and view.
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset root; overrides `data.root`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print a progress line every this many iterations.
    #[arg(long, default_value_t = 10)]
    log_every: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Gallery,
    Probe,
    /// Gallery and probe.
    Test,
    All,
}

impl SplitArg {
    fn splits(self) -> &'static [Split] {
        match self {
            SplitArg::Train => &[Split::Train],
            SplitArg::Gallery => &[Split::Gallery],
            SplitArg::Probe => &[Split::Probe],
            SplitArg::Test => &[Split::Gallery, Split::Probe],
            SplitArg::All => &[Split::Train, Split::Gallery, Split::Probe],
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root; overrides `data.root`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: SplitArg,
    /// Output embedding file.
    #[arg(long)]
    out: PathBuf,
    /// Frame-sampling seed; defaults to `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gallery: PathBuf,
    /// One or more probe embedding files.
    #[arg(long, num_args = 1.., required = true)]
    probe: Vec<PathBuf>,
    /// Protocol whose views and conditions are expected (casiab, kinectgait, synthetic).
    #[arg(long)]
    protocol: Option<String>,
    /// Views of the cross-view matrix; defaults to the protocol's or the gallery's views.
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<i32>>,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Gallery sizes for a gallery-size sweep.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn header(command: &str, lines: &[(&str, String)]) {
    println!("# jointsgait {command}");
    for (k, v) in lines {
        println!("# {k}: {v}");
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::default();
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        cfg.apply_text(&text)?;
    }
    cfg.identities = a.identities.unwrap_or(cfg.identities);
    cfg.views = a.views.clone().unwrap_or(cfg.views);
    cfg.clips = a.clips.unwrap_or(cfg.clips);
    cfg.frames = a.frames.unwrap_or(cfg.frames);
    cfg.noise = a.noise.unwrap_or(cfg.noise);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    header(
        "synth",
        &[("out", a.out.display().to_string()), ("seed", cfg.seed.to_string())],
    );
    let n = cfg.write(&a.out)?;
    println!("wrote {n} clips");
    Ok(())
}

fn data_root(cfg: &TrainConfig) -> Result<&Path> {
    cfg.data_root
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset: set data.root or pass --data".into()))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(d) = &a.data {
        cfg.data_root = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    let root = data_root(&cfg)?.to_path_buf();
    header(
        "train",
        &[
            ("config", a.config.config.as_ref().map_or("(defaults)".into(), |p| p.display().to_string())),
            ("data", root.display().to_string()),
            ("output", cfg.output_dir.display().to_string()),
            ("seed", cfg.seed.to_string()),
        ],
    );
    let index = load_dataset(&root, cfg.data_format, cfg.protocol)?;
    let every = a.log_every.max(1);
    let last = cfg.iterations;
    let (_, out) = run_training(&cfg, index, |r| {
        if r.iteration % every == 0 || r.iteration == last || r.iteration == 1 {
            println!(
                "iter {:>6}  total {:.6}  triplet {:.6}  arcface {:.6}",
                r.iteration, r.total, r.triplet, r.arcface
            );
        }
    })?;
    println!("loss log: {}", out.loss_log.display());
    println!("model: {}", out.model.display());
    Ok(())
}

fn cmd_embed(a: &EmbedArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(d) = &a.data {
        cfg.data_root = Some(d.clone());
    }
    let root = data_root(&cfg)?.to_path_buf();
    let seed = a.seed.unwrap_or(cfg.seed);
    header(
        "embed",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("data", root.display().to_string()),
            ("out", a.out.display().to_string()),
            ("seed", seed.to_string()),
        ],
    );
    let model = JointsGait::load(&cfg, &a.checkpoint)?;
    let index = load_dataset(&root, cfg.data_format, cfg.protocol)?;
    let set = embed_index(&model, &index, a.split.splits(), seed, cfg.execution())?;
    save_embeddings(&a.out, &set)?;
    println!("wrote {} embeddings of dimension {}", set.len(), set.dim());
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    header(
        "eval",
        &[
            ("gallery", a.gallery.display().to_string()),
            (
                "probe",
                a.probe.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "),
            ),
            ("out", a.out.display().to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    let protocol: Option<Protocol> = a.protocol.as_deref().map(str::parse).transpose()?;
    let gallery = load_embeddings(&a.gallery)?;
    let mut probe: Option<EmbeddingSet> = None;
    for p in &a.probe {
        let set = load_embeddings(p)?;
        match &mut probe {
            None => probe = Some(set),
            Some(acc) => {
                if acc.dim() != set.dim() {
                    return Err(Error::Protocol(format!(
                        "{}: dimension {} differs from {}",
                        p.display(),
                        set.dim(),
                        acc.dim()
                    )));
                }
                for i in 0..set.len() {
                    acc.push(set.ids[i].clone(), set.labels[i], set.views[i], set.conditions[i], set.row(i))?;
                }
            }
        }
    }
    let probe = probe.expect("clap requires one probe file");
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let overall = rank1(&gallery, &probe)?;
    println!("overall rank-1: {:.4} ({} probes, {} gallery clips)", overall, probe.len(), gallery.len());
    let mut text = format!("overall rank-1: {overall}\n");

    let views = match (&a.views, protocol.and_then(Protocol::views)) {
        (Some(v), _) => v.clone(),
        (None, Some(v)) => v.to_vec(),
        (None, None) => gallery.distinct_views(),
    };
    if views.len() >= 2 {
        let report = cross_view_eval(&gallery, &probe, &views, jointsgait::Execution::Sequential)?;
        if protocol == Some(Protocol::CasiaB) {
            for c in [Condition::Nm, Condition::Bg, Condition::Cl] {
                if report.condition(c).is_none() {
                    println!("warning: no {c} probes; condition omitted from the report");
                }
            }
        }
        let table = report_text(&report);
        print!("{table}");
        text.push('\n');
        text.push_str(&table);
        for c in &report.conditions {
            text.push('\n');
            text.push_str(&matrix_text(&report, c));
        }
        write(&a.out.join("report.csv"), &report_csv(&report))?;
    } else {
        println!("single view; cross-view matrix skipped");
    }
    if let Some(sizes) = &a.sweep {
        let mut rng = Rng::new(a.seed);
        let acc = gallery_size_sweep(&gallery, &probe, sizes, a.trials, &mut rng)?;
        let mut csv = String::from("gallery_size,rank1\n");
        for (s, r) in sizes.iter().zip(&acc) {
            csv.push_str(&format!("{s},{r}\n"));
            println!("gallery size {s:>4}: rank-1 {r:.4}");
        }
        write(&a.out.join("sweep.csv"), &csv)?;
    }
    write(&a.out.join("report.txt"), &text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Embed(a) => cmd_embed(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::PrintConfig(a) => {
            print!("{}", a.resolve()?.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
