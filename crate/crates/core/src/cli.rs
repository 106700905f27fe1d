//! The `varisk` command line.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::classifiers::{ModelKind, ModelSpec, SavedModel, TrainingEcho, MODEL_FORMAT_VERSION};
use crate::data::{load_csv, save_csv, Dataset, Schema, SchemaFile};
use crate::error::{Error, Result, StageExt};
use crate::evaluation::{
    compare_feature_sets, fmt12, run_cv, select, train_final, CvConfig, CvReport, SelectionScope,
};
use crate::imputation::{knn_impute_audited, write_audit_csv, ImputeConfig};
use crate::resampling::ResamplingConfig;
use crate::selection::{exclude_outcome_variables, SelectionConfig, SelectionMode};
use crate::sim::{generate, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "varisk", version, about = "Ventricular-arrhythmia risk pipeline for imbalanced clinical cohorts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full pipeline: cross-validated evaluation plus a final model fitted on the whole cohort.
    Run(RunArgs),
    /// Fill missing cells by nearest-neighbour imputation.
    Impute(ImputeArgs),
    /// Univariate feature screening.
    Select(SelectArgs),
    /// Fit a model on the whole cohort and save it.
    Train(TrainArgs),
    /// Score rows with a saved model, printing Pr(VAr) per row.
    Predict(PredictArgs),
    /// Cross-validated evaluation only.
    Evaluate(RunArgs),
    /// Cross-validate several named feature sets on identical folds.
    Compare(CompareArgs),
    /// Generate a synthetic cohort with planted signal.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    BaselineLr,
    BaselineNb,
    BaselineTree,
    BaselineForest,
    Ensemble,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::BaselineLr => ModelKind::BaselineLr,
            ModelArg::BaselineNb => ModelKind::BaselineNb,
            ModelArg::BaselineTree => ModelKind::BaselineTree,
            ModelArg::BaselineForest => ModelKind::BaselineForest,
            ModelArg::Ensemble => ModelKind::Ensemble,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectOn {
    Fold,
    Full,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fixed,
    Backward,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Outcome descriptors to drop before anything else (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SelectionArgs {
    #[arg(long, default_value_t = 0.05)]
    pub p_threshold: f64,
    #[arg(long, default_value_t = 0.002)]
    pub gain_threshold: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Fixed)]
    pub selection_mode: ModeArg,
    /// Absolute AUC drop that stops backward elimination.
    #[arg(long, default_value_t = 0.005)]
    pub elimination_tolerance: f64,
}

impl SelectionArgs {
    fn config(&self) -> SelectionConfig {
        SelectionConfig {
            p_threshold: self.p_threshold,
            gain_threshold: self.gain_threshold,
            mode: match self.selection_mode {
                ModeArg::Fixed => SelectionMode::FixedThreshold,
                ModeArg::Backward => SelectionMode::BackwardElimination,
            },
            elimination_tolerance: self.elimination_tolerance,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModelArg::Ensemble)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 5)]
    pub k_folds: usize,
    #[arg(long, default_value_t = 3.0)]
    pub under_ratio: f64,
    #[arg(long, default_value_t = 2.0)]
    pub smote_mult: f64,
    #[arg(long, default_value_t = 5)]
    pub smote_k: usize,
    /// Undersample to the SMOTE multiplier so both classes end up equal.
    #[arg(long)]
    pub balanced: bool,
    #[arg(long, default_value_t = 5)]
    pub k_impute: usize,
    #[arg(long, value_enum, default_value_t = SelectOn::Fold)]
    pub select_on: SelectOn,
    /// Rebalance training folds (the default).
    #[arg(long, overrides_with = "no_rebalance")]
    pub rebalance: bool,
    #[arg(long, overrides_with = "rebalance")]
    pub no_rebalance: bool,
    /// Decision threshold on Pr(VAr).
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

impl PipelineArgs {
    pub fn cv_config(&self) -> CvConfig {
        let mut spec = ModelSpec::new(self.model.into());
        spec.threshold = self.threshold;
        CvConfig {
            k: self.k_folds,
            seed: self.seed,
            selection_scope: match self.select_on {
                SelectOn::Fold => SelectionScope::PerFold,
                SelectOn::Full => SelectionScope::FullDataset,
                SelectOn::None => SelectionScope::None,
            },
            selection: self.selection.config(),
            impute: ImputeConfig::with_k(self.k_impute),
            rebalance: (!self.no_rebalance).then_some(ResamplingConfig {
                under_ratio: self.under_ratio,
                smote_multiplier: self.smote_mult,
                smote_k: self.smote_k,
                balance_exact: self.balanced,
                seed: self.seed,
            }),
            model: spec,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Imputed cohort CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub k_impute: usize,
    /// Optional CSV listing every filled cell and its donors.
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output directory for selection.json, selection.txt and the reduced cohort.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model JSON path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long = "model")]
    pub model_path: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Write `row,p_var,label` CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Named feature set, `NAME=feat1,feat2,...`; repeat for each column.
    #[arg(long = "set", required = true)]
    pub sets: Vec<String>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 711)]
    pub n: usize,
    #[arg(long, default_value_t = 61.0 / 711.0)]
    pub minority_rate: f64,
    #[arg(long, default_value_t = 93)]
    pub n_features: usize,
    #[arg(long, default_value_t = 22)]
    pub n_informative: usize,
    /// Multiplies the default effect sizes.
    #[arg(long, default_value_t = 1.0)]
    pub effect_scale: f64,
    #[arg(long, default_value_t = 0.02)]
    pub missing_rate: f64,
}

/// Serializes with sorted keys and every float rounded to 12 significant digits.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    fn round(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Number(n) if n.is_f64() => {
                let x = n.as_f64().expect("f64");
                let r: f64 = fmt12(x).parse().expect("formatted float");
                *v = serde_json::Number::from_f64(r).map_or(serde_json::Value::Null, serde_json::Value::Number);
            }
            serde_json::Value::Array(a) => a.iter_mut().for_each(round),
            serde_json::Value::Object(o) => o.values_mut().for_each(round),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(value).map_err(|e| Error::json("serialization", e))?;
    round(&mut v);
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::json("serialization", e))?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &canonical_json(value)?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_schema(path: &Path) -> Result<SchemaFile> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "schema file not found"),
        ));
    }
    SchemaFile::load(path)
}

/// Loads the cohort, returning the schema it was read with and the dataset
/// after outcome-variable exclusion.
fn load_input(input: &InputArgs) -> Result<(Schema, Dataset)> {
    let file = load_schema(&input.schema).stage("ingestion")?;
    let schema = if input.exclude.is_empty() {
        file.schema.clone()
    } else {
        exclude_outcome_variables(&file.schema, &input.exclude, false).stage("ingestion")?
    };
    let d = load_csv(&input.cohort, &schema, &file.missing_tokens).stage("ingestion")?;
    log::info!("loaded {} rows x {} features from {}", d.n_rows(), schema.n_features(), input.cohort.display());
    Ok((schema, d))
}

fn write_cv_artifacts(out: &Path, report: &CvReport) -> Result<()> {
    write_json(&out.join("cv_report.json"), report)?;
    for f in &report.folds {
        let path = out.join(format!("roc_fold{}.csv", f.fold));
        let mut buf = Vec::new();
        f.roc.write_csv(&mut buf).map_err(|e| Error::io(&path, e))?;
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn print_summary(report: &CvReport) {
    let m = &report.mean;
    let s = &report.std;
    println!(
        "{}-fold CV ({}): sensitivity {:.3} ({:.3})  specificity {:.3} ({:.3})  fnr {:.3} ({:.3})  auc {:.3} ({:.3})",
        report.config.k,
        report.config.model.kind.name(),
        m.sensitivity,
        s.sensitivity,
        m.specificity,
        s.specificity,
        m.fnr,
        s.fnr,
        m.auc,
        s.auc
    );
}

fn saved_model(input_schema: &Schema, d: &Dataset, cfg: &CvConfig) -> Result<(SavedModel, Option<crate::selection::SelectionReport>)> {
    let fin = train_final(d, cfg)?;
    let counts = d.class_counts()?;
    let mut steps = vec![format!("knn imputation (k = {})", cfg.impute.k)];
    if let Some(a) = &fin.prepared.rebalance {
        steps.push(format!(
            "rebalanced {}:{} -> {}:{} (non-VAr:VAr)",
            a.before.majority, a.before.minority, a.after_smote.majority, a.after_smote.minority
        ));
    }
    let n_var = if counts.minority_label == crate::data::Label::Var {
        counts.n_minority
    } else {
        counts.n_majority
    };
    let saved = SavedModel {
        format_version: MODEL_FORMAT_VERSION,
        input_schema_hash: input_schema.hash(),
        input_schema: input_schema.clone(),
        features: fin.prepared.features.clone(),
        spec: cfg.model.clone(),
        seed: cfg.seed,
        training: TrainingEcho {
            n_rows: d.n_rows(),
            n_var,
            n_non_var: d.n_rows() - n_var,
            steps,
        },
        model: fin.model,
    };
    Ok((saved, fin.prepared.selection))
}

fn cmd_run(args: &RunArgs, with_model: bool) -> Result<()> {
    let (schema, d) = load_input(&args.input)?;
    let cfg = args.pipeline.cv_config();
    ensure_dir(&args.out)?;
    let report = run_cv(&d, &cfg)?;
    write_cv_artifacts(&args.out, &report)?;
    print_summary(&report);
    if with_model {
        let (saved, selection) = saved_model(&schema, &d, &cfg)?;
        let selection = match selection {
            Some(s) => s,
            None => select(&d, &cfg, crate::seeding::derive(cfg.seed, 5)).stage("selection")?,
        };
        write_json(&args.out.join("selection.json"), &selection)?;
        write_file(&args.out.join("selection.txt"), &selection.render_table())?;
        write_json(&args.out.join("model.json"), &saved)?;
        println!("final model uses {} features; artifacts in {}", saved.features.len(), args.out.display());
    }
    Ok(())
}

fn cmd_impute(args: &ImputeArgs) -> Result<()> {
    let (_, d) = load_input(&args.input)?;
    let imputed = knn_impute_audited(&d, &ImputeConfig::with_k(args.k_impute), args.seed).stage("imputation")?;
    save_csv(&imputed.dataset, &args.out)?;
    if let Some(path) = &args.audit {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_audit_csv(&imputed.dataset, &imputed.audit, f)?;
    }
    println!("imputed {} cells", imputed.audit.len());
    Ok(())
}

fn cmd_select(args: &SelectArgs) -> Result<()> {
    let (_, d) = load_input(&args.input)?;
    let cfg = args.pipeline.cv_config();
    ensure_dir(&args.out)?;
    let report = select(&d, &cfg, crate::seeding::derive(cfg.seed, 5)).stage("selection")?;
    let table = report.render_table();
    write_json(&args.out.join("selection.json"), &report)?;
    write_file(&args.out.join("selection.txt"), &table)?;
    let names = report.selected_names();
    if !names.is_empty() {
        let reduced = d.project(&names)?;
        save_csv(&reduced, &args.out.join("reduced.csv"))?;
        SchemaFile::new(reduced.schema().clone()).save(&args.out.join("reduced_schema.json"))?;
    }
    print!("{table}");
    println!("{} of {} features selected", names.len(), d.schema().n_features());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (schema, d) = load_input(&args.input)?;
    let (saved, _) = saved_model(&schema, &d, &args.pipeline.cv_config())?;
    write_json(&args.out, &saved)?;
    println!("saved {} model on {} features to {}", saved.spec.kind.name(), saved.features.len(), args.out.display());
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let saved = SavedModel::load(&args.model_path)?;
    let file = load_schema(&args.schema).stage("ingestion")?;
    // refuse before touching any data rows
    saved.check_schema(&file.schema)?;
    let d = load_csv(&args.cohort, &saved.input_schema, &file.missing_tokens).stage("ingestion")?;
    let d = d.project(&saved.features)?;
    let scores = saved.model.predict_dataset(&d).stage("prediction")?;
    let threshold = saved.spec.threshold;
    let mut out = String::from("row,p_var,label\n");
    for (i, p) in scores.iter().enumerate() {
        let label = crate::classifiers::label_at(*p, threshold);
        out.push_str(&format!("{},{},{}\n", i + 1, fmt12(*p), u8::from(label)));
    }
    match &args.out {
        Some(path) => write_file(path, &out)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(out.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

fn parse_set(raw: &str) -> Result<(String, Vec<String>)> {
    let (name, feats) = raw
        .split_once('=')
        .ok_or_else(|| Error::InvalidInput(format!("feature set '{raw}' must look like NAME=f1,f2")))?;
    let feats: Vec<String> = feats.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    if name.is_empty() || feats.is_empty() {
        return Err(Error::InvalidInput(format!("feature set '{raw}' needs a name and at least one feature")));
    }
    Ok((name.to_string(), feats))
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let sets = args.sets.iter().map(|s| parse_set(s)).collect::<Result<Vec<_>>>()?;
    let (_, d) = load_input(&args.input)?;
    let mut cfg = args.pipeline.cv_config();
    // sets are fixed by the caller
    cfg.selection_scope = SelectionScope::None;
    ensure_dir(&args.out)?;
    let cmp = compare_feature_sets(&d, &sets, &cfg)?;
    let table = cmp.render_table();
    write_json(&args.out.join("comparison.json"), &cmp)?;
    write_file(&args.out.join("comparison.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SimConfig {
        n: args.n,
        minority_rate: args.minority_rate,
        n_features: args.n_features,
        n_informative: args.n_informative,
        effects: crate::sim::default_effects(args.n_informative),
        missing_rate: args.missing_rate,
        seed: args.seed,
    }
    .scaled(args.effect_scale);
    let (d, truth) = generate(&cfg)?;
    ensure_dir(&args.out)?;
    save_csv(&d, &args.out.join("cohort.csv"))?;
    SchemaFile::new(d.schema().clone()).save(&args.out.join("schema.json"))?;
    write_json(&args.out.join("ground_truth.json"), &truth)?;
    println!(
        "wrote {} rows ({} VAr) x {} features to {}",
        d.n_rows(),
        truth.n_var,
        d.schema().n_features(),
        args.out.display()
    );
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, true),
        Command::Evaluate(a) => cmd_run(a, false),
        Command::Impute(a) => cmd_impute(a),
        Command::Select(a) => cmd_select(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
