//! Command-line surface. Exit codes: 0 success, 1 usage or configuration,
//! 2 data, 3 invariant or check failure.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use sleepfuse_core::experiment::{render_report, Featurizer};
use sleepfuse_core::fusion::{FusionMode, TrainingRegime};
use sleepfuse_core::gradsuite::{check_fragment, Fragment};
use sleepfuse_core::synth::SynthProfile;

use crate::cohort::{generate_cohort, CohortSpec};
use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::formats::write_spectrogram;
use crate::pipeline::{self, EvalInputs};

#[derive(Debug, Parser)]
#[command(name = "sleepfuse", version, about = "Multimodal EOG + pressure-mat sleep stage classifier")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores. 1 runs serially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort in the ingest formats.
    Synth(SynthArgs),
    /// Patient-grouped cross-validated training.
    Train(TrainArgs),
    /// Score a saved fold model on a dataset.
    Evaluate(EvaluateArgs),
    /// Comparison table over saved training reports.
    Report(ReportArgs),
    /// Finite-difference gradient checks of every network fragment.
    Gradcheck(GradcheckArgs),
    /// Dump per-epoch log-mel spectrograms as flat binaries.
    ExportSpectrograms(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Default,
    /// Wake is visible only on the mat and REM only in the EOG.
    Complementary,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub patients: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// 30 s epochs per patient.
    #[arg(long, default_value_t = 780, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, value_enum, default_value_t = Profile::Default)]
    pub profile: Profile,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub uniform_priors: bool,
    /// Ratio of 250 Hz to 512 Hz patients, as `A:B`.
    #[arg(long, value_parser = parse_mix)]
    pub rate_mix: Option<(u32, u32)>,
}

fn parse_mix(s: &str) -> std::result::Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or("expected A:B")?;
    let n = |v: &str| v.trim().parse::<u32>().map_err(|e| e.to_string());
    Ok((n(a)?, n(b)?))
}

fn parse_mode(s: &str) -> std::result::Result<FusionMode, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| "expected fused, eog_only or psm_only".into())
}

fn parse_regime(s: &str) -> std::result::Result<TrainingRegime, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| "expected linear_probe or fine_tune".into())
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<FusionMode>,
    #[arg(long, value_parser = parse_regime)]
    pub regime: Option<TrainingRegime>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Passes over the training folds.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for model initialisation and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub fold_seed: Option<u64>,
    #[arg(long)]
    pub eog_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub psm_embeddings: Option<PathBuf>,
}

impl TrainArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        let some = |v: &Option<PathBuf>| v.clone().map(Some);
        set(&mut cfg.data, &some(&self.data));
        set(&mut cfg.out, &some(&self.out));
        set(&mut cfg.eog_embeddings, &some(&self.eog_embeddings));
        set(&mut cfg.psm_embeddings, &some(&self.psm_embeddings));
        set(&mut cfg.train.mode, &self.mode);
        set(&mut cfg.train.regime, &self.regime);
        set(&mut cfg.train.initial_lr, &self.lr);
        set(&mut cfg.train.weight_decay, &self.wd);
        set(&mut cfg.train.batch_size, &self.batch);
        set(&mut cfg.train.epochs, &self.epochs);
        set(&mut cfg.train.seed, &self.seed);
        set(&mut cfg.folds, &self.folds);
        set(&mut cfg.fold_seed, &self.fold_seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub eog_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub psm_embeddings: Option<PathBuf>,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seeds per fragment, starting at 0.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    /// Only these fragments (repeatable).
    #[arg(long = "fragment")]
    pub fragments: Vec<String>,
    /// Double the analytic gradient of parameters whose name contains this
    /// text; the check is expected to fail.
    #[arg(long)]
    pub corrupt: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only these patients (repeatable).
    #[arg(long = "patient")]
    pub patients: Vec<String>,
    /// At most this many epochs per patient.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut stdout = std::io::stdout().lock();
    let mut print = |s: &str| {
        stdout
            .write_all(s.as_bytes())
            .map_err(Error::io(std::path::Path::new("<stdout>")))
    };
    match cli.command {
        Command::Synth(a) => {
            let mut profile = match a.profile {
                Profile::Default => SynthProfile::default(),
                Profile::Complementary => SynthProfile::complementary(),
            };
            if let Some(n) = a.noise {
                profile = profile.with_noise(n);
            }
            if a.uniform_priors {
                profile = profile.with_uniform_priors();
            }
            let spec = CohortSpec {
                n_patients: a.patients as usize,
                n_epochs: a.epochs as usize,
                seed: a.seed,
                profile,
                rate_mix: a.rate_mix.unwrap_or(CohortSpec::default().rate_mix),
            };
            let m = generate_cohort(&a.out, &spec)?;
            info!("wrote {} patients to {}", m.patients.len(), a.out.display());
        }
        Command::Train(a) => {
            let cfg = a.resolve()?;
            let report = pipeline::train(&cfg)?;
            print(&render_report(std::slice::from_ref(&report))?)?;
        }
        Command::Evaluate(a) => {
            let eval = pipeline::evaluate_checkpoint(&EvalInputs {
                checkpoint: a.checkpoint,
                data: a.data,
                eog_embeddings: a.eog_embeddings,
                psm_embeddings: a.psm_embeddings,
            })?;
            let text = serde_json::to_string_pretty(&eval).expect("reports serialize") + "\n";
            if let Some(p) = &a.out {
                fs::write(p, &text).map_err(Error::io(p))?;
            }
            print(&text)?;
        }
        Command::Report(a) => {
            let reports = a.reports.iter().map(|p| pipeline::read_report(p)).collect::<Result<Vec<_>>>()?;
            let text = match a.format {
                Format::Text => render_report(&reports)?,
                Format::Json => serde_json::to_string_pretty(&report_rows(&reports)).expect("reports serialize") + "\n",
            };
            if let Some(p) = &a.out {
                fs::write(p, &text).map_err(Error::io(p))?;
            }
            print(&text)?;
        }
        Command::Gradcheck(a) => {
            let fragments = if a.fragments.is_empty() {
                Fragment::ALL.to_vec()
            } else {
                a.fragments
                    .iter()
                    .map(|n| Fragment::from_name(n).map_err(|e| Error::Config(e.to_string())))
                    .collect::<Result<_>>()?
            };
            let mut failures = 0usize;
            let mut out = String::new();
            for f in fragments {
                let mut worst = 0.0f64;
                let mut failed = 0;
                for seed in 0..a.seeds {
                    let r = check_fragment(f, seed, a.corrupt.as_deref()).map_err(|e| Error::Invariant(e.to_string()))?;
                    worst = worst.max(r.worst());
                    if !r.passed() {
                        failed += 1;
                    }
                }
                failures += failed;
                let verdict = if failed == 0 { "pass" } else { "FAIL" };
                out += &format!(
                    "{verdict} {:<18} seeds {:>3} failed {:>3} worst rel err {:.2e}\n",
                    f.name(),
                    a.seeds,
                    failed,
                    worst
                );
            }
            print(&out)?;
            if failures > 0 {
                return Err(Error::Invariant(format!("{failures} gradient checks failed")));
            }
        }
        Command::ExportSpectrograms(a) => {
            let cfg = match &a.config {
                Some(p) => RunConfig::from_file(p)?,
                None => RunConfig::default(),
            };
            let mut ds = Dataset::open(&a.data)?;
            if !a.patients.is_empty() {
                let known: Vec<&str> = ds.manifest.patients.iter().map(|p| p.patient_id.as_str()).collect();
                if let Some(p) = a.patients.iter().find(|p| !known.contains(&p.as_str())) {
                    return Err(Error::Config(format!("patient {p} is not in the manifest")));
                }
                ds.manifest.patients.retain(|p| a.patients.contains(&p.patient_id));
            }
            fs::create_dir_all(&a.out).map_err(Error::io(&a.out))?;
            let limit = a.limit.unwrap_or(usize::MAX);
            let (written, _) = ds.for_each_epoch(
                || Ok(Featurizer::new(cfg.mel.clone(), cfg.encoder.clone())?),
                |fz, ep| {
                    if ep.epoch_index as usize >= limit {
                        return Ok(0);
                    }
                    let spec = fz.mel().compute(&[&ep.eog[0], &ep.eog[1]], ep.native_eog_rate_hz)?;
                    let path = a.out.join(format!("{}_{:04}.bin", ep.patient_id, ep.epoch_index));
                    write_spectrogram(&path, &spec)?;
                    Ok(1usize)
                },
            )?;
            info!("wrote {} spectrograms to {}", written.iter().sum::<usize>(), a.out.display());
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct ReportRow<'a> {
    method: &'a str,
    modality: &'a str,
    regime: &'a str,
    folds: usize,
    accuracy: f64,
    macro_f1: f64,
    fingerprint: &'a str,
    confusion: &'a [[u64; 5]; 5],
}

fn report_rows(reports: &[sleepfuse_core::experiment::CrossValReport]) -> serde_json::Value {
    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|r| ReportRow {
            method: &r.method,
            modality: r.mode.name(),
            regime: r.regime.name(),
            folds: r.folds.len(),
            accuracy: r.accuracy,
            macro_f1: r.macro_f1,
            fingerprint: &r.fingerprint,
            confusion: &r.confusion.counts,
        })
        .collect();
    serde_json::json!({ "rows": rows })
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg += &format!("\n  caused by: {s}");
                src = s.source();
            }
            eprintln!("{msg}");
            e.exit_code()
        }
    }
}
