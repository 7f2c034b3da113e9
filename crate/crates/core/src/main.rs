use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hybrid_skip::data::{encode_ppm, generate_dataset, read_ppm, SceneSpec, Split};
use hybrid_skip::eval::{blending_report, compare, compare_csv, evaluate, EvalReport};
use hybrid_skip::filters::{hybrid_sweep, linspace};
use hybrid_skip::gradsuite::{self, Suite};
use hybrid_skip::metrics::MetricsReport;
use hybrid_skip::train::{RunConfig, TrainLog, Trainer};
use hybrid_skip::unet::ModelGraph;
use hybrid_skip::{Error, Result};

/// Hybrid-image skip connections for UNet depth regression.
#[derive(Debug, Parser)]
#[command(name = "hskp", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Blend the low frequencies of one image with the high frequencies of another.
    HybridImage {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Filter size (odd, at least 3).
        #[arg(long)]
        k: usize,
        /// Weight of the low-pass image.
        #[arg(long, conflicts_with = "sweep")]
        alpha: Option<f64>,
        /// Write this many frames with alpha from 0 to 1.
        #[arg(long)]
        sweep: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic train/test dataset.
    GenData {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        train: usize,
        #[arg(long)]
        test: usize,
        #[arg(long)]
        seed: u64,
        /// Resolution as WxH.
        #[arg(long, default_value = "64x64", value_parser = parse_res)]
        res: (usize, usize),
    },
    /// Train a model. Any config key can be overridden as `--section.key value`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Step losses as TSV; appended to when resuming.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a split directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Split directory holding manifest.tsv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Radar and indicator table over several runs.
    Compare {
        /// `name=path`, where path is a checkpoint or a report from `eval`.
        #[arg(long, num_args = 1..)]
        runs: Vec<String>,
        /// Split directory; required when any run is a checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Metrics CSV whose rows are compared as given, without a split check.
        #[arg(long, conflicts_with_all = ["runs", "data"])]
        published: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-level blending factors of a checkpoint.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Finite-difference gradient checks; fails if any error reaches 1e-4.
    Gradcheck {
        #[arg(long, default_value = "all")]
        module: String,
    },
}

fn parse_res(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let p = |v: &str| v.parse::<usize>().map_err(|_| format!("bad number `{v}` in `{s}`"));
    Ok((p(w)?, p(h)?))
}

const SECTIONS: [&str; 4] = ["model", "train", "data", "eval"];

/// Splits `--section.key value` / `--section.key=value` pairs out of `args`.
fn take_overrides(args: Vec<String>) -> std::result::Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").filter(|k| {
            k.split_once('.')
                .is_some_and(|(s, _)| SECTIONS.contains(&s))
        });
        match key {
            Some(k) => {
                let (k, v) = match k.split_once('=') {
                    Some((k, v)) => (k.to_owned(), v.to_owned()),
                    None => (k.to_owned(), it.next().ok_or_else(|| format!("--{k} needs a value"))?),
                };
                overrides.push((k, v));
            }
            None => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn hybrid_image(a: &Path, b: &Path, k: usize, alpha: Option<f64>, sweep: Option<usize>, out: &Path) -> Result<()> {
    let alphas = match (alpha, sweep) {
        (Some(al), None) => vec![al],
        (None, Some(n)) if n >= 1 => linspace(0.0, 1.0, n),
        (None, None) => vec![0.5],
        _ => return Err(Error::Usage("--sweep needs at least one frame".into())),
    };
    let frames = hybrid_sweep(&read_ppm(a)?, &read_ppm(b)?, k, &alphas)?;
    for (i, f) in frames.iter().enumerate() {
        let path = out.join(format!("hybrid_{i:03}.ppm"));
        write_file(&path, &encode_ppm(f)?)?;
        println!("{}\talpha={}", path.display(), alphas[i]);
    }
    Ok(())
}

fn train(config: &Path, out: &Path, log: Option<&Path>, resume: Option<&Path>, overrides: &[(String, String)]) -> Result<()> {
    let cfg = RunConfig::load(config, overrides)?;
    let root = cfg
        .data_root
        .clone()
        .ok_or_else(|| Error::Configuration("no data.root in the config or on the command line".into()))?;
    let split = Split::load(&root.join("train"))?;
    let mut trainer = match resume {
        Some(p) => {
            let t = Trainer::resume(p, cfg.train)?;
            if t.model.config() != &cfg.model {
                return Err(Error::Configuration(format!(
                    "{} holds a different model than the config describes",
                    p.display()
                )));
            }
            t
        }
        None => Trainer::new(&cfg.model, cfg.train)?,
    };
    let mut log_file = match log {
        Some(p) => {
            let append = resume.is_some() && p.exists();
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(append)
                .write(true)
                .truncate(!append)
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            if !append {
                writeln!(f, "{}", TrainLog::TSV_HEADER).map_err(|e| Error::io(p, e))?;
            }
            Some((p, f))
        }
        None => None,
    };
    let mut written = 0;
    trainer.run(&split, |t, l| {
        t.save(out)?;
        if let Some((p, f)) = log_file.as_mut() {
            let rows: String = l.steps[written..].iter().map(|(s, v)| format!("{s}\t{v}\n")).collect();
            f.write_all(rows.as_bytes()).map_err(|e| Error::io(&*p, e))?;
        }
        written = l.steps.len();
        eprintln!(
            "epoch {}/{}\tmean loss {:.6}\t{:.1}s",
            t.epoch,
            t.config.epochs,
            l.epoch_means.last().copied().unwrap_or(f64::NAN),
            l.wall_time.as_secs_f64()
        );
        Ok(())
    })?;
    if written == 0 {
        trainer.save(out)?;
    }
    Ok(())
}

fn eval(ckpt: &Path, data: &Path, out: &Path, overrides: &[(String, String)]) -> Result<()> {
    let cfg = RunConfig::from_entries(overrides)?;
    let model = ModelGraph::load(ckpt)?;
    let split = Split::load(data)?;
    let report = EvalReport {
        split: split.digest.clone(),
        report: evaluate(&model, &split, &cfg.eval)?,
    };
    write_file(out, report.to_text().as_bytes())?;
    print!("{}", report.report.to_key_values());
    let flagged = report.report.indicators().flagged();
    if !flagged.is_empty() {
        eprintln!("note: infinite indicators {}", flagged.join(", "));
    }
    Ok(())
}

fn is_checkpoint(path: &Path) -> Result<bool> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.starts_with(hybrid_skip::checkpoint::MAGIC))
}

fn compare_runs(runs: &[String], data: Option<&Path>, published: Option<&Path>, out: &Path, overrides: &[(String, String)]) -> Result<()> {
    let csv = if let Some(p) = published {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        compare_csv(&MetricsReport::from_csv(&text)?)?
    } else {
        let cfg = RunConfig::from_entries(overrides)?;
        let mut split = None;
        let mut reports = Vec::new();
        for run in runs {
            let (name, path) = run
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--runs expects name=path, got `{run}`")))?;
            let path = Path::new(path);
            let report = if is_checkpoint(path)? {
                let dir = data.ok_or_else(|| Error::Usage(format!("run {name} is a checkpoint; pass --data")))?;
                if split.is_none() {
                    split = Some(Split::load(dir)?);
                }
                let s = split.as_ref().expect("loaded");
                EvalReport {
                    split: s.digest.clone(),
                    report: evaluate(&ModelGraph::load(path)?, s, &cfg.eval)?,
                }
            } else {
                EvalReport::load(path)?
            };
            reports.push((name.to_owned(), report));
        }
        compare(&reports)?
    };
    write_file(out, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<()> {
    let only_eval = |o: &[(String, String)]| {
        o.iter()
            .find(|(k, _)| !k.starts_with("eval."))
            .map_or(Ok(()), |(k, _)| Err(Error::Usage(format!("--{k} is not accepted here"))))
    };
    match &cli.command {
        Command::Train { .. } => {}
        Command::Eval { .. } | Command::Compare { .. } => only_eval(&overrides)?,
        _ if !overrides.is_empty() => {
            return Err(Error::Usage(format!("--{} is not accepted here", overrides[0].0)));
        }
        _ => {}
    }
    match cli.command {
        Command::HybridImage {
            a,
            b,
            k,
            alpha,
            sweep,
            out,
        } => hybrid_image(&a, &b, k, alpha, sweep, &out),
        Command::GenData {
            root,
            train,
            test,
            seed,
            res,
        } => {
            let template = SceneSpec {
                width: res.0,
                height: res.1,
                ..SceneSpec::default()
            };
            generate_dataset(&root, train, test, seed, &template)?;
            println!("{}: {train} train, {test} test at {}x{}", root.display(), res.0, res.1);
            Ok(())
        }
        Command::Train {
            config,
            out,
            log,
            resume,
        } => train(&config, &out, log.as_deref(), resume.as_deref(), &overrides),
        Command::Eval { ckpt, data, out } => eval(&ckpt, &data, &out, &overrides),
        Command::Compare {
            runs,
            data,
            published,
            out,
        } => {
            if published.is_none() && runs.is_empty() {
                return Err(Error::Usage("compare needs --runs or --published".into()));
            }
            compare_runs(&runs, data.as_deref(), published.as_deref(), &out, &overrides)
        }
        Command::Inspect { ckpt } => {
            print!("{}", blending_report(&ModelGraph::load(&ckpt)?)?);
            Ok(())
        }
        Command::Gradcheck { module } => {
            let results = gradsuite::run(module.parse::<Suite>()?)?;
            let mut failed = 0;
            for r in &results {
                println!("{r}");
                failed += usize::from(!r.passed());
            }
            println!("{} checks, {failed} failed", results.len());
            if failed > 0 {
                return Err(Error::Numeric(format!("{failed} gradient checks at or above {}", gradsuite::TOLERANCE)));
            }
            Ok(())
        }
    }
}

fn set_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("HSKP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("HSKP_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    if let Err(msg) = set_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let (args, overrides) = match take_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
