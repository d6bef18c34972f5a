//! Command line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis;
use crate::classifiers::Proxy;
use crate::error::{Error, Result};
use crate::fbopt::{self, SearchMethod};
use crate::io;
use crate::net::{Band, NetworkState};
use crate::spd::RiemannianMetric;
use crate::train::{self, RunConfig};
use crate::trial::Dataset;

pub const THREADS_ENV: &str = "SPDNET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "spdnet", version, about = "SPD covariance networks for multichannel oscillatory signals")]
pub struct Cli {
    /// Worker threads (falls back to SPDNET_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trial archive from a synthesis config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one network per seed and save the models.
    Train(TrainArgs),
    /// Score a saved model on an archive.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Optional per-trial predictions CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search filterbank bands with a shallow proxy classifier.
    Fbopt(FboptArgs),
    /// Export analysis CSVs.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Model file for the first seed; further seeds get `.seed<N>` appended.
    #[arg(long)]
    pub out: PathBuf,
    /// Train a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Held-out archive reported after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Band list from `fbopt`; freezes a sinc filterbank at these bands.
    #[arg(long)]
    pub bands: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FboptArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Run config; only `n_filters` is required in it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Band list output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-iteration trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub proxy: Option<Proxy>,
    #[arg(long)]
    pub metric: Option<RiemannianMetric>,
    #[arg(long)]
    pub budget_iters: Option<usize>,
    #[arg(long)]
    pub budget_hours: Option<f64>,
    #[arg(long, default_value = "bayes")]
    pub method: SearchMethod,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Frequency gain of every filterbank channel.
    Gain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the model file stem.
        #[arg(long)]
        model_id: Option<String>,
    },
    /// Peak count per filterbank channel.
    Peaks {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Percentage of band lists covering each frequency.
    Coverage {
        /// One or more band list files.
        #[arg(long, required = true, num_args = 1..)]
        bands: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        step: f64,
        /// Upper end of the grid; defaults to the highest band edge.
        #[arg(long)]
        max_freq: Option<f64>,
    },
    /// Layer-by-layer probing with shallow classifiers.
    Lbl {
        #[arg(long)]
        model: PathBuf,
        /// Training archive for the probes.
        #[arg(long)]
        data: PathBuf,
        /// Test archive; without it `--data` is split sequentially.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[arg(long, default_value = "lem")]
        metric: RiemannianMetric,
        #[arg(long)]
        out: PathBuf,
    },
    /// Row sums of the squared BiMap weights of every layer.
    BimapGain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Class-wise electrode by frequency relevance.
    Relevance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let threads = match thread_count(cli.threads, std::env::var(THREADS_ENV).ok().as_deref()) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return 1;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot start worker pool: {e}");
            return 3;
        }
    };
    match pool.install(|| dispatch(cli.command, stdout, stderr)) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn thread_count(flag: Option<usize>, env: Option<&str>) -> std::result::Result<Option<usize>, String> {
    let n = match (flag, env) {
        (Some(n), _) => n,
        (None, Some(s)) if !s.trim().is_empty() => s
            .trim()
            .parse()
            .map_err(|_| format!("{THREADS_ENV}={s} is not a thread count"))?,
        _ => return Ok(None),
    };
    if n == 0 {
        return Err("--threads must be at least 1".into());
    }
    Ok(Some(n))
}

/// Attaches the offending path to errors that do not already carry it.
fn at_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        Error::Config { line, key, message } => Error::Config {
            line,
            key,
            message: format!("{}: {message}", path.display()),
        },
        Error::InvalidArgument(message) => Error::InvalidArgument(format!("{}: {message}", path.display())),
        other => other,
    })
}

fn load_data(path: &Path) -> Result<Dataset> {
    at_path(path, io::read_archive(path))
}

fn load_model(path: &Path) -> Result<NetworkState> {
    at_path(path, io::read_model(path))
}

fn load_bands(path: &Path) -> Result<Vec<Band>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    at_path(path, io::parse_band_list(&text))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes())
}

fn seed_path(out: &Path, seed: u64) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(format!(".seed{seed}"));
    out.with_file_name(name)
}

fn dispatch(command: Command, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> Result<()> {
    match command {
        Command::Synth { config, out, seed } => {
            let mut spec = at_path(&config, io::read_synth_spec(&config))?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let data = io::synth_generate(&spec)?;
            io::write_archive(&out, &data)?;
            let _ = writeln!(stdout, "wrote {} trials to {}", data.len(), out.display());
            Ok(())
        }
        Command::Train(args) => cmd_train(args, stdout, stderr),
        Command::Eval { model, data, out } => {
            let state = load_model(&model)?;
            let data = load_data(&data)?;
            let ev = train::evaluate(&state, &data)?;
            if let Some(out) = out {
                let mut csv = String::from("trial,label,prediction\n");
                for (i, (l, p)) in data.labels.iter().zip(&ev.predictions).enumerate() {
                    csv.push_str(&format!("{i},{l},{p}\n"));
                }
                write_text(&out, &csv)?;
            }
            let _ = writeln!(stdout, "accuracy {}", ev.accuracy);
            Ok(())
        }
        Command::Fbopt(args) => cmd_fbopt(args, stdout),
        Command::Analyze(a) => cmd_analyze(a),
    }
}

fn cmd_train(args: TrainArgs, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> Result<()> {
    let mut cfg = at_path(&args.config, io::read_run_config(&args.config))?;
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(b) = &args.bands {
        cfg.fixed_bands = Some(load_bands(b)?);
    }
    let data = load_data(&args.data)?;
    let test = args.test.as_deref().map(load_data).transpose()?;
    if let Some(b) = &args.bands {
        at_path(b, cfg.initial_state(&data, cfg.seeds[0]).map(|_| ()))?;
    }
    for (k, &seed) in cfg.seeds.iter().enumerate() {
        let (state, report) = train::train_seed(&data, test.as_ref(), &cfg, seed, |epoch, loss| {
            let _ = writeln!(stderr, "seed {seed} epoch {} loss {loss:.6}", epoch + 1);
        })?;
        let path = if k == 0 { args.out.clone() } else { seed_path(&args.out, seed) };
        io::write_model(&path, &state)?;
        let test_acc = report.test_accuracy.map_or_else(|| "-".to_string(), |a| a.to_string());
        let _ = writeln!(
            stdout,
            "seed {seed} train_accuracy {} test_accuracy {test_acc} model {}",
            report.train_accuracy,
            path.display()
        );
    }
    Ok(())
}

fn cmd_fbopt(args: FboptArgs, stdout: &mut (dyn Write + Send)) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => at_path(p, io::read_run_config(p))?,
        None => RunConfig::default(),
    };
    if let Some(p) = args.proxy {
        cfg.proxy = p;
    }
    if let Some(m) = args.metric {
        cfg.metric = m;
    }
    if let Some(n) = args.budget_iters {
        cfg.budget_iters = n;
    }
    if let Some(h) = args.budget_hours {
        cfg.budget_hours = h;
    }
    cfg.validate()?;
    let data = load_data(&args.data)?;
    let search_cfg = io::search_config(&cfg, args.seed, args.method);
    let (bands, trace) = fbopt::search(&data, &search_cfg)?;
    write_text(&args.out, &io::format_band_list(&bands))?;
    if let Some(t) = &args.trace {
        write_text(t, &trace.to_csv())?;
    }
    let _ = writeln!(stdout, "best_score {} after {} iterations", trace.best().score, trace.entries.len());
    Ok(())
}

fn cmd_analyze(command: AnalyzeCommand) -> Result<()> {
    match command {
        AnalyzeCommand::Gain {
            model,
            data,
            out,
            model_id,
        } => {
            let state = load_model(&model)?;
            let data = load_data(&data)?;
            let id = model_id.unwrap_or_else(|| {
                model
                    .file_stem()
                    .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
            });
            let spectra = analysis::freq_gain(&state, &data.trials)?;
            write_text(&out, &analysis::gain_csv(&id, &spectra))
        }
        AnalyzeCommand::Peaks { model, data, out } => {
            let state = load_model(&model)?;
            let data = load_data(&data)?;
            let spectra = analysis::freq_gain(&state, &data.trials)?;
            write_text(&out, &analysis::peaks_csv(&spectra))
        }
        AnalyzeCommand::Coverage {
            bands,
            out,
            step,
            max_freq,
        } => {
            if !(step > 0.0) {
                return Err(Error::invalid("--step must be positive"));
            }
            let mut intervals = Vec::new();
            for p in &bands {
                intervals.extend(load_bands(p)?.iter().map(|b| (b.low_hz, b.low_hz + b.bandwidth_hz)));
            }
            let top = max_freq.unwrap_or_else(|| intervals.iter().map(|i| i.1).fold(0.0, f64::max).ceil());
            let n = (top / step).floor() as usize;
            let freqs: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
            let pct = analysis::chosen_freq_coverage(&intervals, &freqs);
            write_text(&out, &analysis::coverage_csv(&freqs, &pct))
        }
        AnalyzeCommand::Lbl {
            model,
            data,
            test,
            split,
            metric,
            out,
        } => {
            let state = load_model(&model)?;
            let data = load_data(&data)?;
            let (train_set, test_set) = match test {
                Some(t) => (data, load_data(&t)?),
                None => {
                    if !(split > 0.0 && split < 1.0) {
                        return Err(Error::invalid("--split must lie in (0, 1)"));
                    }
                    data.split_sequential(split)
                }
            };
            let probe = analysis::lbl_probe(&state, &train_set, &test_set, metric)?;
            write_text(&out, &analysis::lbl_csv(&probe))
        }
        AnalyzeCommand::BimapGain { model, out } => {
            let state = load_model(&model)?;
            let mut csv = String::from("layer,row,value\n");
            for (k, w) in state.bimaps.iter().enumerate() {
                let (_, sums) = analysis::bimap_gain(w);
                let body = analysis::bimap_gain_csv(k + 1, &sums);
                csv.push_str(body.split_once('\n').map_or("", |(_, rest)| rest));
            }
            write_text(&out, &csv)
        }
        AnalyzeCommand::Relevance { model, data, out } => {
            let state = load_model(&model)?;
            let data = load_data(&data)?;
            let spectra = analysis::freq_gain(&state, &data.trials)?;
            let map = analysis::electrode_freq_relevance(&state, &data, &spectra)?;
            write_text(&out, &analysis::relevance_csv(&map))
        }
    }
}
