use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use pachinko_core::bayes::{predict_all, write_predictions, CountsMode, Dispersion, ModelSpec, StrataScheme};
use pachinko_core::classifier::{self, ClassifierKind, SvmParams, TrainedClassifier};
use pachinko_core::counts::{counts_report, daily_counts, CountsReport};
use pachinko_core::data::{self, CityGazetteer, CityId};
use pachinko_core::eval;
use pachinko_core::filter::apply_filters;
use pachinko_core::fmt::{to_json_pretty, write_json};
use pachinko_core::pipeline::{self, ClassifierChoice, PipelineConfig, SyntheticScenario};
use pachinko_core::stats::CiMethod;
use pachinko_core::{Error, Result};

#[derive(Parser)]
#[command(name = "pachinko", version, about = "Civil-unrest event probabilities from future-referencing tweets")]
struct Cli {
    /// JSON pipeline config supplying defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Keep tweets that name a study city and a future date.
    Filter {
        #[arg(long)]
        gsr: Option<PathBuf>,
        #[arg(long)]
        tweets: Option<PathBuf>,
        #[arg(long)]
        gazetteer: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select and fit the relevance classifier by cross-validation.
    TrainClassifier {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// `auto` or one of svm_l2, svm_l1, bernoulli_nb, gaussian_nb.
        #[arg(long)]
        kind: Option<ClassifierChoice>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mark filtered tweets relevant or not.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tweets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop classified tweets into (date, city) jars built from the GSR.
    BuildJars {
        #[arg(long)]
        gsr: Option<PathBuf>,
        #[arg(long)]
        tweets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit Poisson and negative-binomial models to daily indicative counts.
    FitCounts {
        #[arg(long)]
        jars: PathBuf,
        /// Restrict to one city.
        #[arg(long)]
        city: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior event probability for every jar.
    Predict {
        #[arg(long)]
        jars: PathBuf,
        #[arg(long)]
        strata: Option<StrataScheme>,
        #[arg(long)]
        mode: Option<CountsMode>,
        #[command(flatten)]
        r: DispersionArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// ROC curves and AUC for the standard models.
    Evaluate {
        #[arg(long)]
        jars: PathBuf,
        #[arg(long)]
        mode: Option<CountsMode>,
        #[command(flatten)]
        r: DispersionArgs,
        /// Fit on this fraction of jars and score the rest.
        #[arg(long)]
        split: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// AUC using only tweets authored at least n days ahead, n = 0..=max.
    Leadtime {
        #[arg(long)]
        gsr: Option<PathBuf>,
        /// Classified (or filtered) tweets.
        #[arg(long)]
        tweets: PathBuf,
        #[arg(long)]
        strata: Option<StrataScheme>,
        #[arg(long)]
        mode: Option<CountsMode>,
        #[command(flatten)]
        r: DispersionArgs,
        #[arg(long)]
        max: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic GSR, tweets, corpus and config.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// GSR association tests, proportion intervals and low-tweet diagnostics.
    Report {
        #[arg(long)]
        gsr: Option<PathBuf>,
        #[arg(long)]
        jars: Option<PathBuf>,
        #[arg(long)]
        ci_method: Option<CiMethod>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage in order, as configured by --config.
    Run {
        /// Output directory, replacing the config's.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides PACHINKO_SEED and the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct DispersionArgs {
    /// Dispersion r; overrides --fit.
    #[arg(long)]
    r: Option<f64>,
    /// counts.json written by fit-counts.
    #[arg(long)]
    fit: Option<PathBuf>,
}

impl DispersionArgs {
    fn resolve(&self, config: Option<&PipelineConfig>) -> Result<Dispersion> {
        let r = match (self.r.or(config.and_then(|c| c.r)), &self.fit) {
            (Some(r), _) => r,
            (None, Some(path)) => CountsReport::load(path)?
                .r()
                .ok_or_else(|| Error::Validation(format!("{} holds no fitted r", path.display())))?,
            (None, None) => {
                return Err(Error::Validation(
                    "no dispersion r: run fit-counts and pass --fit, or give --r".into(),
                ))
            }
        };
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Validation(format!("r must be positive, got {r}")));
        }
        Ok(Dispersion::global(r))
    }
}

/// Settings shared by every subcommand: the config file if any, with the
/// seed override from the environment applied.
struct Context {
    config: Option<PipelineConfig>,
}

impl Context {
    fn load(path: Option<&Path>) -> Result<Self> {
        let config = path
            .map(|p| {
                let mut c = PipelineConfig::load(p)?;
                c.apply_env()?;
                Ok::<_, Error>(c)
            })
            .transpose()?;
        Ok(Context { config })
    }

    fn path(&self, flag: Option<PathBuf>, what: &str, pick: impl Fn(&PipelineConfig) -> Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| self.config.as_ref().and_then(pick))
            .ok_or_else(|| Error::Validation(format!("--{what} is required (or set it in --config)")))
    }

    fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = flag {
            return Ok(s);
        }
        match &self.config {
            Some(c) => Ok(c.seed),
            None => Ok(pipeline::env_seed()?.unwrap_or(0)),
        }
    }

    fn strata(&self, flag: Option<StrataScheme>) -> StrataScheme {
        flag.or(self.config.as_ref().map(|c| c.strata)).unwrap_or(StrataScheme::Location)
    }

    fn mode(&self, flag: Option<CountsMode>) -> CountsMode {
        flag.or(self.config.as_ref().map(|c| c.mode)).unwrap_or(CountsMode::Days)
    }

    fn gazetteer(&self, flag: Option<PathBuf>) -> Result<CityGazetteer> {
        match flag.or_else(|| self.config.as_ref().and_then(|c| c.gazetteer.clone())) {
            Some(p) => CityGazetteer::load(&p),
            None => Ok(CityGazetteer::australian_capitals()),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn execute(cli: Cli) -> Result<()> {
    let ctx = Context::load(cli.config.as_deref())?;
    match cli.command {
        Command::Filter {
            gsr,
            tweets,
            gazetteer,
            out,
        } => {
            let gazetteer = ctx.gazetteer(gazetteer)?;
            let gsr_path = ctx.path(gsr, "gsr", |c| Some(c.gsr.clone()))?;
            let tweets_path = ctx.path(tweets, "tweets", |c| Some(c.tweets.clone()))?;
            let mut gsr = data::load_gsr(&gsr_path)?;
            data::validate_gsr(&mut gsr, &gazetteer, None)?;
            let gaps = data::coverage_gaps(&gsr, &gazetteer);
            if !gaps.is_empty() {
                log::warn!("GSR has {} (date, city) cells without a row", gaps.len());
            }
            let tweets = data::load_tweets(&tweets_path)?;
            let (kept, report) = apply_filters(&tweets, &gazetteer);
            create_dir(&out)?;
            data::write_gsr(&out.join("gsr.csv"), &gsr)?;
            data::write_tweets(&out.join("filtered_tweets.jsonl"), &kept)?;
            write_json(&out.join("filter_report.json"), &report)?;
            info!("kept {} of {} tweets", report.kept, report.input);
        }
        Command::TrainClassifier {
            corpus,
            folds,
            seed,
            kind,
            out,
        } => {
            let corpus_path = ctx.path(corpus, "corpus", |c| c.corpus.clone())?;
            let corpus = classifier::load_corpus(&corpus_path)?;
            let seed = ctx.seed(seed)?;
            let folds = folds.or(ctx.config.as_ref().map(|c| c.folds)).unwrap_or(5);
            let kind = kind.or(ctx.config.as_ref().map(|c| c.classifier)).unwrap_or_default();
            let svm = SvmParams {
                seed,
                ..SvmParams::default()
            };
            let model = match kind {
                ClassifierChoice::Auto => classifier::select_model(&corpus, &ClassifierKind::ALL, folds, seed, &svm)?,
                ClassifierChoice::Kind(k) => {
                    let mut m = classifier::train(k, &corpus, &svm)?;
                    let scores = classifier::cross_validate(k, &corpus, folds, seed, &svm)?;
                    m.cv_f1 = Some(scores.iter().sum::<f64>() / scores.len() as f64);
                    m
                }
            };
            model.save(&out)?;
            info!("selected {} with CV F1 {:?}", model.kind, model.cv_f1);
        }
        Command::Classify { model, tweets, out } => {
            let model = TrainedClassifier::load(&model)?;
            let tweets = data::load_tweets(&tweets)?;
            data::write_tweets(&out, &classifier::classify(&model, &tweets))?;
        }
        Command::BuildJars { gsr, tweets, out } => {
            let gsr_path = ctx.path(gsr, "gsr", |c| Some(c.gsr.clone()))?;
            let gazetteer = ctx.gazetteer(None)?;
            let mut gsr = data::load_gsr(&gsr_path)?;
            data::validate_gsr(&mut gsr, &gazetteer, None)?;
            let mut grid = data::build_jar_grid(&gsr);
            let report = data::drop_tweets_into_jars(&mut grid, &data::load_tweets(&tweets)?);
            data::write_jars(&out, &grid)?;
            info!("placed {} tweets, dropped {}", report.placed, report.dropped);
        }
        Command::FitCounts { jars, city, out } => {
            let grid = data::load_jars(&jars)?;
            let city = city.map(CityId::new);
            let report = counts_report(&daily_counts(&grid, city.as_ref()))?;
            if let Some(w) = &report.negbinom.warning {
                log::warn!("{w}");
            }
            report.save(&out)?;
        }
        Command::Predict {
            jars,
            strata,
            mode,
            r,
            out,
        } => {
            let dispersion = r.resolve(ctx.config.as_ref())?;
            let grid = data::load_jars(&jars)?;
            let spec = ModelSpec::tweets(ctx.strata(strata));
            write_predictions(&out, &predict_all(&grid, spec, ctx.mode(mode), &dispersion)?)?;
        }
        Command::Evaluate {
            jars,
            mode,
            r,
            split,
            seed,
            out,
        } => {
            let dispersion = r.resolve(ctx.config.as_ref())?;
            let grid = data::load_jars(&jars)?;
            let split = split.or(ctx.config.as_ref().and_then(|c| c.split));
            let split = split.map(|f| ctx.seed(seed).map(|s| (f, s))).transpose()?;
            let evals = eval::evaluate_models(&grid, ctx.mode(mode), &dispersion, split)?;
            create_dir(&out)?;
            let curves: Vec<_> = evals.iter().map(|e| (e.model.clone(), e.curve.clone())).collect();
            eval::write_roc(&out.join("roc.csv"), &curves)?;
            eval::write_tiles(&out.join("tiles_truth.csv"), &eval::truth_tiles(&grid))?;
            for spec in ModelSpec::STANDARD {
                let preds = predict_all(&grid, spec, ctx.mode(mode), &dispersion)?;
                eval::write_tiles(&out.join(format!("tiles_{}.csv", spec.name())), &eval::prediction_tiles(&preds))?;
            }
            pipeline::write_evaluation(&out.join("evaluation.json"), &evals, None)?;
            println!("{}", to_json_pretty(&evals.iter().map(|e| (e.model.as_str(), e.auc)).collect::<Vec<_>>())?);
        }
        Command::Leadtime {
            gsr,
            tweets,
            strata,
            mode,
            r,
            max,
            out,
        } => {
            let dispersion = r.resolve(ctx.config.as_ref())?;
            let gsr_path = ctx.path(gsr, "gsr", |c| Some(c.gsr.clone()))?;
            let gazetteer = ctx.gazetteer(None)?;
            let mut gsr = data::load_gsr(&gsr_path)?;
            data::validate_gsr(&mut gsr, &gazetteer, None)?;
            let template = data::build_jar_grid(&gsr);
            let max = max.or(ctx.config.as_ref().map(|c| c.lead_time_max)).unwrap_or(30);
            let spec = ModelSpec::tweets(ctx.strata(strata));
            let results = eval::lead_time_auc(&template, &data::load_tweets(&tweets)?, spec, ctx.mode(mode), &dispersion, max)?;
            eval::write_lead_time(&out, &results)?;
        }
        Command::Synth { scenario, out } => {
            let mut scenario = SyntheticScenario::load(&scenario)?;
            if let Some(seed) = pipeline::env_seed()? {
                scenario.seed = seed;
            }
            pipeline::generate_synthetic(&scenario, &out)?;
            info!("wrote synthetic inputs; run with --config {}", out.join("config.json").display());
        }
        Command::Report {
            gsr,
            jars,
            ci_method,
            out,
        } => {
            let gsr_path = ctx.path(gsr, "gsr", |c| Some(c.gsr.clone()))?;
            let gsr = data::load_gsr(&gsr_path)?;
            let grid = match jars {
                Some(p) => data::load_jars(&p)?,
                None => data::build_jar_grid(&gsr),
            };
            let mut cfg = ctx.config.clone().unwrap_or_else(|| PipelineConfig::new(&gsr_path, "", &out));
            if let Some(m) = ci_method {
                cfg.ci_method = m;
            }
            create_dir(&out)?;
            pipeline::write_gsr_reports(&gsr, &grid, &cfg, &out)?;
        }
        Command::Run { out, seed } => {
            let mut cfg = ctx
                .config
                .ok_or_else(|| Error::Validation("run needs --config".into()))?;
            if let Some(o) = out {
                cfg.output = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let summary = pipeline::run(&cfg)?;
            println!("{}", to_json_pretty(&summary.auc)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
