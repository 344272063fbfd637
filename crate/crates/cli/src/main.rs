mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use usermod::analysis::{bias_report, embedding_export};
use usermod::corpus::{compute_user_stats, file_digest, generate_synthetic, ingest_corpus, SyntheticSpec};
use usermod::eval::{evaluate_model, reports_to_csv};
use usermod::gradcheck::{check_variant, GradcheckSetup, GRADCHECK_TOLERANCE};
use usermod::models::ModelArtifact;
use usermod::trainer::{train_repetitions, PreparedData};
use usermod::{Baseline, Corpus, EvalReport, Label, Model, Split, TrainConfig, UserType, Variant};

use manifest::{CorpusRef, RunManifest, Timing};

#[derive(Debug, Parser)]
#[command(name = "usermod", version, about = "User-aware GRU comment moderation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic moderated corpus.
    Synth(SynthArgs),
    /// Summarize a corpus: split sizes, reject rates and user types.
    Stats(StatsArgs),
    /// Train neural variants, one model per seed.
    Train(TrainArgs),
    /// Score models and baselines on dev/test and write an AUC report.
    Eval(EvalArgs),
    /// Export user-embedding PCA coordinates and the learned-bias table.
    Analyze(AnalyzeArgs),
    /// Check every variant's gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// TOML file with generator settings; missing keys keep their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    dev: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Also write per-user statistics as CSV.
    #[arg(long)]
    users_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated neural variants, or `all`.
    #[arg(long, default_value = "all")]
    variants: String,
    #[arg(long)]
    out: PathBuf,
    /// TOML file mirroring the training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Repetitions trained in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    holdout_fraction: Option<f64>,
    #[arg(long)]
    holdout_seed: Option<u64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Pretrained word vectors (`token v1 ... vd` per line).
    #[arg(long)]
    pretrained: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Directory written by `train`; needed for neural variants.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Comma-separated variants, or `all`.
    #[arg(long, default_value = "all")]
    variants: String,
    /// Comma-separated splits.
    #[arg(long, value_delimiter = ',', default_value = "dev,test")]
    splits: Vec<Split>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Comma-separated neural variants, or `all`.
    #[arg(long, default_value = "all")]
    variants: String,
    #[arg(long, default_value_t = GradcheckSetup::default().seed)]
    seed: u64,
}

fn parse_variants(list: &str, neural_only: bool) -> Result<Vec<Variant>> {
    let all: &[Variant] = if neural_only { &Variant::NEURAL } else { &Variant::ALL };
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: Variant = name.parse().map_err(|_| anyhow!("unknown variant {name:?}"))?;
        if neural_only && !v.is_neural() {
            bail!("{v} is a baseline and has nothing to train");
        }
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        bail!("no variants given");
    }
    Ok(out)
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => toml::from_str(&fs::read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?,
        None => SyntheticSpec::default(),
    };
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.users {
        spec.n_users = v;
    }
    if let Some(v) = args.train {
        spec.n_train = v;
    }
    if let Some(v) = args.dev {
        spec.n_dev = v;
    }
    if let Some(v) = args.test {
        spec.n_test = v;
    }
    let corpus = generate_synthetic(&spec)?;
    corpus.save(&args.out)?;
    eprintln!("wrote {} comments to {} (seed {})", corpus.len(), args.out.display(), spec.seed);
    Ok(())
}

fn stats_report(corpus: &Corpus) -> String {
    let table = compute_user_stats(corpus);
    let mut out = String::new();
    writeln!(out, "{:<6} {:>9} {:>9} {:>8} {:>7}", "split", "comments", "rejected", "reject%", "users").unwrap();
    for split in Split::ALL {
        let comments: Vec<_> = corpus.split(split).collect();
        let rejected = comments.iter().filter(|c| c.label == Label::Reject).count();
        let users: BTreeSet<&str> = comments.iter().map(|c| c.author.as_str()).collect();
        let pct = 100.0 * rejected as f64 / comments.len().max(1) as f64;
        writeln!(out, "{:<6} {:>9} {:>9} {:>8.2} {:>7}", split, comments.len(), rejected, pct, users.len()).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "{:<8} {:>6} {:>15} {:>14} {:>8}", "type", "users", "train_comments", "train_rejected", "R%").unwrap();
    for t in UserType::ALL {
        let members: Vec<_> = table.users().iter().filter(|u| u.utype == t && u.train_comments > 0).collect();
        let comments: usize = members.iter().map(|u| u.train_comments).sum();
        let rejected: usize = members.iter().map(|u| u.train_rejected).sum();
        let pct = 100.0 * rejected as f64 / comments.max(1) as f64;
        writeln!(out, "{:<8} {:>6} {:>15} {:>14} {:>8.2}", t, members.len(), comments, rejected, pct).unwrap();
    }
    out
}

fn stats(args: StatsArgs) -> Result<()> {
    let corpus = ingest_corpus(&args.corpus)?;
    print!("{}", stats_report(&corpus));
    if let Some(path) = args.users_csv {
        let table = compute_user_stats(&corpus);
        let mut csv = String::from("user,train_comments,train_rejected,rejection_rate,user_type\n");
        for u in table.users() {
            let rate = u.rejection_rate().map(|r| format!("{r:.6}")).unwrap_or_default();
            writeln!(csv, "{},{},{},{},{}", u.user, u.train_comments, u.train_rejected, rate, u.utype).unwrap();
        }
        fs::write(&path, csv)?;
        eprintln!("wrote {} users to {}", table.len(), path.display());
    }
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config: TrainConfig = match &args.config {
        Some(path) => toml::from_str(&fs::read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?,
        None => TrainConfig::default(),
    };
    macro_rules! overlay {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field.clone() { config.$field = v; })*
        };
    }
    overlay!(
        embedding_dim,
        hidden_dim,
        learning_rate,
        batch_size,
        max_epochs,
        patience,
        holdout_fraction,
        holdout_seed,
        max_tokens,
        chunk_size,
        seeds
    );
    if let Some(p) = &args.pretrained {
        config.pretrained_embeddings = Some(p.clone());
    }
    config.validate()?;
    Ok(config)
}

fn model_path(variant: Variant, seed: u64) -> PathBuf {
    PathBuf::from(variant.name()).join(format!("seed-{seed}.model.json"))
}

fn history_path(variant: Variant, seed: u64) -> PathBuf {
    PathBuf::from(variant.name()).join(format!("seed-{seed}.history.json"))
}

fn train(args: TrainArgs) -> Result<()> {
    let start = Instant::now();
    let config = train_config(&args)?;
    let variants = parse_variants(&args.variants, true)?;
    let corpus = ingest_corpus(&args.corpus)?;
    let digest = file_digest(&args.corpus)?;
    let data = PreparedData::new(&corpus, &config)?;
    fs::create_dir_all(&args.out)?;
    eprintln!(
        "corpus {} ({} comments, sha256 {}), {} fit / {} holdout, vocabulary {}, {} user slots",
        args.corpus.display(),
        corpus.len(),
        &digest[..12],
        data.fit.len(),
        data.holdout.len(),
        data.vocab.size(),
        data.slots.len()
    );

    let corpus_ref = CorpusRef { path: args.corpus.clone(), sha256: digest.clone() };
    let mut manifest = RunManifest::new("train", corpus_ref, config.clone(), args.jobs);
    for variant in variants {
        let runs = train_repetitions(&data, variant, &config, args.jobs)?;
        for run in runs {
            let mut artifact = ModelArtifact::from_model(&run.model);
            artifact.metadata.insert("seed".into(), json!(run.seed));
            artifact.metadata.insert("corpus_sha256".into(), json!(digest));
            artifact.metadata.insert("best_epoch".into(), json!(run.history.best_epoch));
            artifact.metadata.insert("config".into(), serde_json::to_value(&config)?);
            manifest.write_artifact(&args.out, model_path(variant, run.seed), &artifact.to_bytes()?)?;
            let mut history = serde_json::to_vec_pretty(&run.history)?;
            history.push(b'\n');
            manifest.write_artifact(&args.out, history_path(variant, run.seed), &history)?;
            let best = &run.history.epochs[run.history.best_epoch - 1];
            eprintln!(
                "{variant} seed {}: {} epochs ({:?}), best epoch {} holdout loss {:.4}, {:.1}s",
                run.seed,
                run.history.epochs.len(),
                run.history.stop_reason,
                run.history.best_epoch,
                best.holdout_loss,
                run.elapsed.as_secs_f64()
            );
            manifest.timing.push(Timing {
                item: format!("{variant}/seed-{}", run.seed),
                seconds: run.elapsed.as_secs_f64(),
            });
        }
        manifest.variants.push(variant.name().to_string());
    }
    manifest.total_seconds = start.elapsed().as_secs_f64();
    manifest.save(&args.out)?;
    eprintln!("wrote {} artifacts and the manifest to {}", manifest.artifacts.len(), args.out.display());
    Ok(())
}

/// Every `seed-<n>.model.json` of one variant, in seed order.
fn load_variant_models(root: &Path, variant: Variant) -> Result<Vec<(u64, Model)>> {
    let dir = root.join(variant.name());
    let entries = fs::read_dir(&dir).with_context(|| format!("no models for {variant} in {}", dir.display()))?;
    let mut found = BTreeMap::new();
    for entry in entries {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.strip_suffix(".model.json")) {
            if let Ok(seed) = seed.parse::<u64>() {
                found.insert(seed, dir.join(&name));
            }
        }
    }
    if found.is_empty() {
        bail!("no models for {variant} in {}", dir.display());
    }
    found
        .into_iter()
        .map(|(seed, path)| {
            let model = Model::load(&path).with_context(|| format!("loading {}", path.display()))?;
            if model.variant() != variant {
                bail!("{} holds a {} model", path.display(), model.variant());
            }
            Ok((seed, model))
        })
        .collect()
}

fn eval_variant(variant: Variant, args: &EvalArgs, corpus: &Corpus) -> Result<Vec<EvalReport>> {
    if variant.is_neural() {
        let root = args.models.as_ref().ok_or_else(|| anyhow!("--models is required for {variant}"))?;
        let models: Vec<Model> = load_variant_models(root, variant)?.into_iter().map(|(_, m)| m).collect();
        args.splits.iter().map(|&s| Ok(evaluate_model(&models, corpus, s)?)).collect()
    } else {
        let baseline = Baseline::new(variant, compute_user_stats(corpus))?;
        args.splits
            .iter()
            .map(|&s| Ok(evaluate_model(std::slice::from_ref(&baseline), corpus, s)?))
            .collect()
    }
}

fn eval(args: EvalArgs) -> Result<()> {
    let variants = parse_variants(&args.variants, false)?;
    let corpus = ingest_corpus(&args.corpus)?;
    let mut reports = Vec::new();
    let mut failures = 0;
    for &variant in &variants {
        match eval_variant(variant, &args, &corpus) {
            Ok(rows) => {
                for r in &rows {
                    eprintln!("{:<6} {:<5} {}", r.variant, r.split, r.display());
                }
                reports.extend(rows);
            }
            Err(e) => {
                eprintln!("{variant}: {e:#}");
                failures += 1;
            }
        }
    }
    let csv = reports_to_csv(&reports);
    match &args.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    if failures > 0 {
        bail!("{failures} of {} variants failed", variants.len());
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let mut failures = Vec::new();

    match load_variant_models(&args.models, Variant::UeRnn) {
        Ok(models) => {
            for (seed, model) in models {
                let export = embedding_export(&model)?;
                let path = args.out.join(format!("embeddings-ueRNN-seed-{seed}.csv"));
                fs::write(&path, export.to_csv())?;
                let corr = export.pc1_rejection_correlation.map_or("n/a".to_string(), |c| format!("{c:.4}"));
                eprintln!(
                    "ueRNN seed {seed}: {} slots, explained variance {:.3}/{:.3}, pearson(PC1, R) = {corr} -> {}",
                    export.rows.len(),
                    export.pca.explained[0],
                    export.pca.explained[1],
                    path.display()
                );
            }
        }
        Err(e) => failures.push(format!("embedding export: {e:#}")),
    }

    let tb = load_variant_models(&args.models, Variant::TbRnn);
    let ub = load_variant_models(&args.models, Variant::UbRnn);
    match (tb, ub) {
        (Ok(tb), Ok(ub)) => {
            let stats = &tb[0].1.stats;
            let tb: Vec<&Model> = tb.iter().map(|(_, m)| m).collect();
            let ub: Vec<&Model> = ub.iter().map(|(_, m)| m).collect();
            let report = bias_report(&tb, &ub, stats)?;
            let path = args.out.join("biases.csv");
            fs::write(&path, report.to_csv())?;
            eprintln!("{:<8} {:>18} {:>18}", "type", "tbRNN b_t", "ubRNN mean b_u");
            let show = |v: Option<(f64, f64)>| v.map_or("-".to_string(), |(m, s)| format!("{m:.3} (±{s:.3})"));
            for row in &report.rows {
                eprintln!("{:<8} {:>18} {:>18}", row.utype, show(row.type_bias), show(row.user_bias));
            }
            eprintln!("-> {}", path.display());
        }
        (tb, ub) => {
            for e in [tb.err(), ub.err()].into_iter().flatten() {
                failures.push(format!("bias report: {e:#}"));
            }
        }
    }

    if !failures.is_empty() {
        for f in &failures {
            eprintln!("{f}");
        }
        bail!("{} analyses failed", failures.len());
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<bool> {
    let setup = GradcheckSetup { seed: args.seed, ..GradcheckSetup::default() };
    let mut ok = true;
    println!("{:<6} {:<16} {:>6} {:>12} {:>12}", "model", "group", "size", "max_rel", "max_abs");
    for variant in parse_variants(&args.variants, true)? {
        let check = check_variant(variant, &setup)?;
        for g in &check.groups {
            println!(
                "{:<6} {:<16} {:>6} {:>12.3e} {:>12.3e}",
                variant, g.name, g.len, g.max_rel_error, g.max_abs_error
            );
        }
        let status = if check.passed() { "ok" } else { "FAILED" };
        println!("{variant}: max relative error {:.3e} {status}", check.max_rel_error());
        ok &= check.passed();
    }
    println!("tolerance {GRADCHECK_TOLERANCE:e}: {}", if ok { "all passed" } else { "FAILED" });
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Stats(a) => stats(a)?,
        Command::Train(a) => train(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Analyze(a) => analyze(a)?,
        Command::Gradcheck(a) => return gradcheck(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_lists() {
        assert_eq!(parse_variants("all", true).unwrap(), Variant::NEURAL.to_vec());
        assert_eq!(parse_variants("all", false).unwrap().len(), 7);
        assert_eq!(parse_variants("RNN, uernn,RNN", true).unwrap(), vec![Variant::Rnn, Variant::UeRnn]);
        assert!(parse_variants("uBASE", true).is_err());
        assert!(parse_variants("xRNN", false).is_err());
        assert!(parse_variants(",", false).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
