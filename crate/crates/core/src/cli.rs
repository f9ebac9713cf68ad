//! Command-line front end. Every stage reads its inputs from and writes its
//! outputs to `--out-dir`, so stages can be run one at a time.

use std::fs::{self, OpenOptions};
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::diagnostics::{train_diagnostic, DiagnosticModel};
use crate::envpolicy::{write_traces_jsonl, PredictionCache};
use crate::error::{Error, Result};
use crate::eval::{
    eval_full, eval_popwise_k, eval_random_k, eval_subset, render_table, report_from_traces, sweep_lambda,
    write_reports_jsonl, MetricsReport, PathwayTree, SelectorSetup,
};
use crate::oracle::{bayes_posterior, hindsight_from_predictions};
use crate::selector::{run_policy, train_selector, PolicyNets};
use crate::synthstudy::{
    generate_dataset, load_dataset, load_split, save_dataset, save_split, split_dataset, Dataset, DatasetSplit,
    StudyRecord, World,
};

#[derive(Debug, Parser)]
#[command(name = "viewacq", version, about = "Budget-constrained view acquisition with a PPO selector")]
pub struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads for batched model inference.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic cohort.
    GenData,
    /// Split the cohort into train/val/test.
    Split,
    /// Train the diagnostic model.
    TrainDiag,
    /// Train a selector at one λ.
    TrainPolicy(PolicyArgs),
    /// Evaluate a method on the test split.
    Eval(EvalArgs),
    /// Train and evaluate selectors over the configured λ grid and seeds.
    SweepLambda,
    /// Export the pathway graph of a trained selector.
    Pathways(PolicyArgs),
    /// Compare the model with the Bayes posterior and the hindsight bound.
    OracleCheck(PolicyArgs),
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Hard cap on acquired views.
    #[arg(long)]
    pub k: Option<usize>,
    /// Policy checkpoint (default: <out-dir>/policy.psel).
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Random,
    Popwise,
    Rl,
    Full,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[command(flatten)]
    pub policy: PolicyArgs,
}

struct Ctx {
    cfg: PipelineConfig,
    hash: String,
    out: PathBuf,
    threads: usize,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn dataset(&self) -> Result<Dataset> {
        load_dataset(self.path("dataset.pacq"))
    }

    fn split(&self) -> Result<DatasetSplit> {
        load_split(self.path("split.json"))
    }

    fn model(&self) -> Result<DiagnosticModel> {
        DiagnosticModel::load(self.path("diagnostic.pdxm"))
    }

    fn policy_path(&self, args: &PolicyArgs) -> PathBuf {
        args.policy.clone().unwrap_or_else(|| self.path("policy.psel"))
    }

    fn append_metrics(&self, reports: &[MetricsReport]) -> Result<()> {
        let f = OpenOptions::new().create(true).append(true).open(self.path("metrics.jsonl"))?;
        write_reports_jsonl(reports, f)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.generator.seed = s;
        cfg.split.seed = s;
        cfg.diagnostic.seed = s;
        cfg.selector.seed = s;
    }
    cfg.validate()?;
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    fs::create_dir_all(&cli.out_dir)?;
    let ctx = Ctx {
        hash: cfg.hash(),
        cfg,
        out: cli.out_dir.clone(),
        threads: if cli.deterministic { 1 } else { cli.threads },
    };
    match &cli.command {
        Command::GenData => gen_data(&ctx),
        Command::Split => split(&ctx),
        Command::TrainDiag => train_diag(&ctx),
        Command::TrainPolicy(a) => train_policy(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::SweepLambda => sweep(&ctx),
        Command::Pathways(a) => pathways(&ctx, a),
        Command::OracleCheck(a) => oracle_check(&ctx, a),
    }
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let studies = generate_dataset(&ctx.cfg.generator)?;
    let data = Dataset::new(ctx.cfg.generator.clone(), studies);
    save_dataset(&data, ctx.path("dataset.pacq"))?;
    println!(
        "wrote {} studies ({} views x {} dims) to {}",
        data.studies.len(),
        data.n_views,
        data.embed_dim,
        ctx.path("dataset.pacq").display()
    );
    Ok(())
}

fn split(ctx: &Ctx) -> Result<()> {
    let data = ctx.dataset()?;
    let s = split_dataset(&data.studies, ctx.cfg.split.ratios, ctx.cfg.split.seed)?;
    save_split(&s, ctx.path("split.json"))?;
    println!("train {} / val {} / test {}", s.train.len(), s.val.len(), s.test.len());
    Ok(())
}

fn train_diag(ctx: &Ctx) -> Result<()> {
    let data = ctx.dataset()?;
    let [train, val, test] = ctx.split()?.select(&data.studies)?;
    let t0 = Instant::now();
    let (model, log) = train_diagnostic(&train, &val, &ctx.cfg.diagnostic)?;
    model.save(ctx.path("diagnostic.pdxm"))?;
    fs::write(ctx.path("diagnostic_log.json"), serde_json::to_string_pretty(&log).expect("log serialises"))?;
    let report = eval_full(&test, &model, None)?.with_meta(ctx.cfg.diagnostic.seed, &ctx.hash);
    println!("best epoch {} ({:.0}s)", log.best_epoch, t0.elapsed().as_secs_f64());
    print!("{}", render_table(&[("full".into(), &report, None)]));
    ctx.append_metrics(&[report])
}

fn studies_cache(ctx: &Ctx, model: &DiagnosticModel, studies: &[&StudyRecord]) -> Result<PredictionCache> {
    PredictionCache::build(model, studies, ctx.threads)
}

fn train_policy(ctx: &Ctx, a: &PolicyArgs) -> Result<()> {
    let data = ctx.dataset()?;
    let [train, val, test] = ctx.split()?.select(&data.studies)?;
    let model = ctx.model()?;
    let all: Vec<&StudyRecord> = train.iter().chain(&val).chain(&test).copied().collect();
    let cache = studies_cache(ctx, &model, &all)?;
    let costs = ctx.cfg.costs();
    let setup = SelectorSetup {
        train: &train,
        val: &val,
        test: &test,
        model: &model,
        cache: Some(&cache),
        costs: &costs,
        max_views: a.k.or(ctx.cfg.max_views()),
    };
    let env = setup.env(a.lambda.unwrap_or(ctx.cfg.env.lambda))?;
    let (nets, log) = train_selector(&train, &val, &env, &ctx.cfg.selector)?;
    let path = ctx.policy_path(a);
    nets.save(&path)?;
    fs::write(path.with_extension("log.json"), serde_json::to_string_pretty(&log).expect("log serialises"))?;
    println!(
        "best epoch {} (val mean bACC {:.1}%, count {:.2}); saved {}",
        log.best_epoch,
        100.0 * log.val_bacc[log.best_epoch],
        log.val_count[log.best_epoch],
        path.display()
    );
    Ok(())
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let data = ctx.dataset()?;
    let [_, val, test] = ctx.split()?.select(&data.studies)?;
    let model = ctx.model()?;
    let n = model.n_views;
    let k = a.policy.k.unwrap_or(n);
    let (hash, seed) = (ctx.hash.as_str(), ctx.cfg.selector.seed);
    let reports = match a.method {
        Method::Full => {
            let r = eval_full(&test, &model, None)?.with_meta(seed, hash);
            print!("{}", render_table(&[("full".into(), &r, None)]));
            vec![r]
        }
        Method::Random => {
            let s = eval_random_k(&test, &model, None, k, ctx.cfg.eval.random_runs, seed)?;
            print!("{}", render_table(&[(format!("random-{k}"), &s.mean, Some(&s.std))]));
            s.runs
                .into_iter()
                .map(|r| {
                    let seed = r.seed;
                    r.with_meta(seed, hash)
                })
                .collect()
        }
        Method::Popwise => {
            let p = eval_popwise_k(&val, &test, &model, None, k)?;
            println!("chosen subset {:?}", p.subset);
            print!("{}", render_table(&[(format!("popwise-{k}"), &p.report, None)]));
            vec![p.report.with_meta(seed, hash)]
        }
        Method::Rl => {
            let nets = PolicyNets::load(ctx.policy_path(&a.policy))?;
            let costs = ctx.cfg.costs();
            let env = crate::envpolicy::Env::new(&model, a.policy.lambda.unwrap_or(ctx.cfg.env.lambda), costs)?
                .with_max_views(a.policy.k.or(ctx.cfg.max_views()));
            let traces = if ctx.cfg.eval.stochastic {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                run_policy(&env, &nets, &test, Some(&mut rng))?
            } else {
                run_policy(&env, &nets, &test, None)?
            };
            write_traces_jsonl(&traces, fs::File::create(ctx.path("traces.jsonl"))?)?;
            let r =
                report_from_traces(format!("rl-lambda{}", env.lambda), &traces, n, model.grid())?.with_meta(seed, hash);
            print!("{}", render_table(&[(r.method.clone(), &r, None)]));
            vec![r]
        }
    };
    ctx.append_metrics(&reports)
}

fn sweep(ctx: &Ctx) -> Result<()> {
    let data = ctx.dataset()?;
    let [train, val, test] = ctx.split()?.select(&data.studies)?;
    let model = ctx.model()?;
    let all: Vec<&StudyRecord> = train.iter().chain(&val).chain(&test).copied().collect();
    let cache = studies_cache(ctx, &model, &all)?;
    let costs = ctx.cfg.costs();
    let setup = SelectorSetup {
        train: &train,
        val: &val,
        test: &test,
        model: &model,
        cache: Some(&cache),
        costs: &costs,
        max_views: ctx.cfg.max_views(),
    };
    let dir = ctx.path("sweep");
    fs::create_dir_all(&dir)?;
    let mut records = Vec::new();
    let table = sweep_lambda(&setup, &ctx.cfg.eval.lambdas, &ctx.cfg.eval.seeds, &ctx.cfg.selector, |run| {
        run.nets.save(dir.join(format!("policy_lambda{}_seed{}.psel", run.lambda, run.seed)))?;
        println!(
            "lambda {} seed {}: mean bACC {:.1}, count {:.2}",
            run.lambda, run.seed, run.report.mean_bacc, run.report.acq_count
        );
        records.push(run.report.clone().with_meta(run.seed, &ctx.hash));
        Ok(())
    })?;
    records.push(table.full.clone().with_meta(0, &ctx.hash));
    let mut f = fs::File::create(ctx.path("sweep.jsonl"))?;
    write_reports_jsonl(&records, &mut f)?;
    fs::write(ctx.path("sweep_table.txt"), table.render())?;
    print!("{}", table.render());
    Ok(())
}

fn pathways(ctx: &Ctx, a: &PolicyArgs) -> Result<()> {
    let data = ctx.dataset()?;
    let [_, _, test] = ctx.split()?.select(&data.studies)?;
    let model = ctx.model()?;
    let nets = PolicyNets::load(ctx.policy_path(a))?;
    let env = crate::envpolicy::Env::new(&model, a.lambda.unwrap_or(ctx.cfg.env.lambda), ctx.cfg.costs())?
        .with_max_views(a.k.or(ctx.cfg.max_views()));
    let traces = run_policy(&env, &nets, &test, None)?;
    let g = model.grid();
    let tree = PathwayTree::build(&traces, model.n_views, g.n_as(), g.n_ef())?;
    tree.check_integrity().map_err(|e| Error::Format(crate::FormatError::Malformed(e)))?;
    fs::write(ctx.path("pathways.dot"), tree.to_dot())?;
    fs::write(ctx.path("pathways.json"), tree.to_json())?;
    println!("{} nodes, {} edges; wrote pathways.dot and pathways.json", tree.nodes.len(), tree.edges.len());
    for n in tree.nodes.iter().filter(|n| n.reaching * 20 >= tree.n_studies) {
        println!("  {:<24} reach {:>5}  stop {:>5}", format!("{:?}", n.views), n.reaching, n.terminating);
    }
    Ok(())
}

fn oracle_check(ctx: &Ctx, a: &PolicyArgs) -> Result<()> {
    let data = ctx.dataset()?;
    let [_, _, test] = ctx.split()?.select(&data.studies)?;
    let model = ctx.model()?;
    let g = model.grid();
    let world = World::new(&data.config);
    let n = model.n_views;
    let mut outcomes = Vec::with_capacity(test.len());
    for s in &test {
        let post = bayes_posterior(s, &vec![true; n], &data.config, &world)?;
        outcomes.push(crate::eval::Outcome {
            pred: post.predicted_classes(g),
            truth: (s.y_as_class, g.ef_category(s.y_ef)),
            mu_ef: post.mean[1],
            y_ef: s.y_ef,
            n_acquired: n,
            reward: None,
        });
    }
    let oracle = MetricsReport::from_outcomes("bayes oracle", &outcomes, n, g)?;
    let model_full = MetricsReport::from_outcomes("model", &eval_subset(&test, &model, None, &vec![true; n])?, n, g)?;
    print!("{}", render_table(&[("bayes oracle".into(), &oracle, None), ("model".into(), &model_full, None)]));
    println!("gap to oracle: {:.2} points", oracle.mean_bacc - model_full.mean_bacc);

    let path = ctx.policy_path(a);
    if path.exists() {
        let nets = PolicyNets::load(&path)?;
        let lambda = a.lambda.unwrap_or(ctx.cfg.env.lambda);
        let costs = ctx.cfg.costs();
        let env =
            crate::envpolicy::Env::new(&model, lambda, costs.clone())?.with_max_views(a.k.or(ctx.cfg.max_views()));
        let traces = run_policy(&env, &nets, &test, None)?;
        let cache = studies_cache(ctx, &model, &test)?;
        let mut hindsight = 0.0;
        for s in &test {
            let preds: Vec<(usize, usize)> =
                cache.study(s.study_id).expect("cached").iter().map(|p| p.classes).collect();
            hindsight += hindsight_from_predictions(&preds, (s.y_as_class, g.ef_category(s.y_ef)), lambda, &costs).1;
        }
        let rl = traces.iter().map(|t| t.sparse_reward).sum::<f64>() / traces.len() as f64;
        hindsight /= test.len() as f64;
        println!(
            "mean terminal reward at lambda {lambda}: hindsight {hindsight:.4} >= policy {rl:.4}: {}",
            hindsight >= rl - 1e-12
        );
    }
    Ok(())
}

/// Parses arguments, runs, and maps errors to exit codes
/// (2 config, 3 data/format, 4 numerical).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
