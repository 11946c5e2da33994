use anyhow::{anyhow, bail, Context, Result};
use cbr24::codec::{self, CardImage};
use cbr24::config::{ProviderKind, RunConfig};
use cbr24::domain::{solve_general, solve_restricted, Puzzle};
use cbr24::evaluation::{
    run_generation_experiment, run_retrieval_experiment, GenerationReport, Mode, RetrievalReport,
};
use cbr24::features::{encode_labels, extract_features, model_input};
use cbr24::network::{load_checkpoint, save_checkpoint, train, Example, LatentModel};
use cbr24::query::{build_query, QueryKind};
use cbr24::repository::{Case, Repository};
use cbr24::retrieval::top_k;
use clap::{Args, Parser, Subcommand};
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "cbr24",
    version,
    about = "Math-24 case-based reasoning with retrieval-augmented generation"
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every restricted-family puzzle and write the case repository
    BuildRepo(BuildRepoArgs),
    /// Print the solutions of one puzzle
    Solve(SolveArgs),
    /// Render a puzzle to a 90x90 binary PGM card image
    Render(RenderArgs),
    /// Recognize the puzzle shown in a PGM card image
    Recognize(RecognizeArgs),
    /// Print feature counts, model input, and solution labels for a puzzle
    Features(PuzzleArgs),
    /// Train the latent model on the repository and save a checkpoint
    Train(TrainArgs),
    /// Retrieve the most similar repository cases for a puzzle
    Retrieve(RetrieveArgs),
    /// Print the LLM query text for a puzzle
    Query(QueryArgs),
    /// Run the seeded retrieval experiment and write reports
    EvalRetrieval(EvalArgs),
    /// Run the seeded generation experiment and write reports
    EvalGeneration(EvalGenerationArgs),
}

#[derive(Args)]
struct PuzzleArgs {
    a: i64,
    b: i64,
    c: i64,
    d: i64,
}

impl PuzzleArgs {
    fn puzzle(&self) -> Result<Puzzle> {
        Puzzle::new([self.a, self.b, self.c, self.d]).map_err(Into::into)
    }
}

#[derive(Args)]
struct BuildRepoArgs {
    /// Repository root (defaults to the configured path)
    #[arg(long)]
    repo: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    puzzle: PuzzleArgs,
    /// Search all expression shapes, not just the restricted family
    #[arg(long)]
    general: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    puzzle: PuzzleArgs,
    /// Output path (defaults to <id>.pgm in the working directory)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Salt-and-pepper noise density in [0,1]
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Seed for the noise pattern
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
}

#[derive(Args)]
struct RecognizeArgs {
    /// PGM image to read
    path: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    repo: Option<PathBuf>,
    /// Checkpoint path (defaults to <output>/model.json)
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also attach the latent index to the repository file
    #[arg(long)]
    attach: bool,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    puzzle: PuzzleArgs,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// features | latent (defaults to the configured mode)
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    repo: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    puzzle: PuzzleArgs,
    /// NC | GC | TC
    #[arg(long, value_parser = parse_kind)]
    kind: QueryKind,
    /// Repository case id to use as the TC context (default: retrieve rank 1)
    #[arg(long)]
    retrieved: Option<String>,
    /// Print the system prompt instead of the user message
    #[arg(long)]
    system: bool,
    #[arg(long)]
    repo: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    repo: Option<PathBuf>,
    /// Report directory (defaults to the configured output path)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    runs: Option<u32>,
    #[arg(long)]
    holdout: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u32>,
}

#[derive(Args)]
struct EvalGenerationArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// null | oracle | tip-follower | remote
    #[arg(long, value_parser = parse_provider)]
    provider: Option<ProviderKind>,
    /// Comma-separated query kinds, e.g. NC,GC,TC
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    kinds: Option<Vec<QueryKind>>,
    /// Similarity mode that selects the TC context case
    #[arg(long, value_parser = parse_mode)]
    tc_mode: Option<Mode>,
    /// Skip writing per-case transcripts
    #[arg(long)]
    no_transcripts: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_kind(s: &str) -> Result<QueryKind, String> {
    s.parse()
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    s.parse()
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::BuildRepo(args) => build_repo(&cfg, args),
        Command::Solve(args) => solve(args),
        Command::Render(args) => render(args),
        Command::Recognize(args) => recognize(args),
        Command::Features(args) => features(args),
        Command::Train(args) => train_cmd(&cfg, args),
        Command::Retrieve(args) => retrieve(&cfg, args),
        Command::Query(args) => query_cmd(&cfg, args),
        Command::EvalRetrieval(args) => eval_retrieval(&cfg, args),
        Command::EvalGeneration(args) => eval_generation(&cfg, args),
    }
}

fn repo_root(cfg: &RunConfig, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone().unwrap_or_else(|| cfg.paths.repository.clone())
}

fn out_dir(cfg: &RunConfig, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone().unwrap_or_else(|| cfg.paths.output.clone())
}

fn load_repo(root: &Path) -> Result<Repository> {
    Repository::load(root)
        .with_context(|| format!("loading repository at {} (run build-repo first?)", root.display()))
}

fn build_repo(cfg: &RunConfig, args: BuildRepoArgs) -> Result<()> {
    let root = repo_root(cfg, &args.repo);
    let start = Instant::now();
    let repo = Repository::build(&root)?;
    println!(
        "built {} cases at {} in {:.2}s",
        repo.len(),
        root.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let p = args.puzzle.puzzle()?;
    if args.general {
        let exprs = solve_general(&p);
        println!("{} general solutions for {}", exprs.len(), p);
        for e in exprs {
            println!("{e} = 24");
        }
    } else {
        let sols = solve_restricted(&p);
        println!("{} restricted solutions for {}", sols.len(), p);
        for s in sols {
            println!(
                "[{}] large at ({},{}): {} = 24",
                s.category, s.large_positions.0, s.large_positions.1, s.expression
            );
        }
    }
    Ok(())
}

fn render(args: RenderArgs) -> Result<()> {
    let p = args.puzzle.puzzle()?;
    if !(0.0..=1.0).contains(&args.noise) {
        bail!("noise density {} is outside [0,1]", args.noise);
    }
    let mut image = codec::render(&p);
    if args.noise > 0.0 {
        image.add_noise(args.noise, args.noise_seed);
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from(format!("{}.pgm", p.id())));
    image
        .write_pgm(&out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("{}", out.display());
    Ok(())
}

fn recognize(args: RecognizeArgs) -> Result<()> {
    let image = CardImage::read_pgm(&args.path)
        .with_context(|| format!("reading {}", args.path.display()))?;
    let p = codec::recognize(&image)?;
    println!("{p}");
    Ok(())
}

fn features(args: PuzzleArgs) -> Result<()> {
    let p = args.puzzle()?;
    let f = extract_features(&p);
    let labels = encode_labels(&solve_restricted(&p));
    let doc = serde_json::json!({
        "puzzle": p.to_string(),
        "global": f.global,
        "per_position": f.per_position,
        "input": model_input(&p, &f),
        "labels": labels,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

fn model_path(cfg: &RunConfig, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .unwrap_or_else(|| cfg.paths.output.join("model.json"))
}

fn train_cmd(cfg: &RunConfig, args: TrainArgs) -> Result<()> {
    let root = repo_root(cfg, &args.repo);
    let mut repo = load_repo(&root)?;
    let mut tc = cfg.train_config();
    if let Some(v) = args.epochs {
        tc.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        tc.momentum = v;
    }
    if let Some(v) = args.seed {
        tc.seed = v;
    }
    let data: Vec<Example> = repo
        .cases()
        .iter()
        .map(|c| {
            let f = extract_features(&c.puzzle);
            (model_input(&c.puzzle, &f), encode_labels(&c.solutions))
        })
        .collect();
    let start = Instant::now();
    let (model, stats) = train(&data, &tc)?;
    let path = model_path(cfg, &args.model);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    save_checkpoint(&model, &path)?;
    println!(
        "trained {} epochs in {:.2}s, final loss {:.6}, bit accuracy {:.4}, saved {}",
        stats.epochs,
        start.elapsed().as_secs_f64(),
        stats.final_loss,
        model.bit_accuracy(&data),
        path.display()
    );
    if args.attach {
        repo.attach_latent_index(&model);
        repo.save()?;
        println!("attached latent index to {}", root.display());
    }
    Ok(())
}

fn query_vector(p: &Puzzle, mode: Mode, model: Option<&LatentModel>) -> Result<Vec<f64>> {
    let f = extract_features(p);
    match mode {
        Mode::Features => Ok(f.to_vec()),
        Mode::Latent => {
            let model = model.ok_or_else(|| {
                anyhow!("latent mode needs a trained model checkpoint (run train first)")
            })?;
            Ok(model.latent(&model_input(p, &f)))
        }
    }
}

fn load_model_if(path: &Path, needed: bool) -> Result<Option<LatentModel>> {
    if !needed {
        return Ok(None);
    }
    let model =
        load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(Some(model))
}

fn index_for<'a>(
    cases: impl Iterator<Item = &'a Case>,
    mode: Mode,
    model: Option<&LatentModel>,
) -> Result<Vec<(String, Vec<f64>)>> {
    cases
        .map(|c| Ok((c.id.clone(), query_vector(&c.puzzle, mode, model)?)))
        .collect()
}

fn retrieve(cfg: &RunConfig, args: RetrieveArgs) -> Result<()> {
    if args.k == 0 {
        bail!("k must be at least 1");
    }
    cfg.component_weights()?;
    let p = args.puzzle.puzzle()?;
    let mode = args.mode.unwrap_or(cfg.retrieval.mode);
    let repo = load_repo(&repo_root(cfg, &args.repo))?;
    let model = load_model_if(&model_path(cfg, &args.model), mode == Mode::Latent)?;
    let index = index_for(repo.cases().iter(), mode, model.as_ref())?;
    let query = query_vector(&p, mode, model.as_ref())?;
    let ranked = top_k(
        &query,
        index.iter().map(|(id, v)| (id.as_str(), v.as_slice())),
        args.k,
        &HashSet::new(),
    );
    println!("top {} by {} similarity for {}", args.k, mode, p);
    for r in &ranked.results {
        println!("{:>2}. {}  {:.6}", r.rank, r.id, r.score);
    }
    if ranked.short {
        println!("(only {} candidates available)", ranked.results.len());
    }
    Ok(())
}

fn query_cmd(cfg: &RunConfig, args: QueryArgs) -> Result<()> {
    let p = args.puzzle.puzzle()?;
    let retrieved_case;
    let retrieved: Option<&Case> = if args.kind == QueryKind::TopContext {
        let repo = load_repo(&repo_root(cfg, &args.repo))?;
        let case = match &args.retrieved {
            Some(id) => repo
                .get(id)
                .ok_or_else(|| anyhow!("case {id} is not in the repository"))?
                .clone(),
            None => {
                let mode = cfg.generation.tc_mode;
                let model = load_model_if(&model_path(cfg, &args.model), mode == Mode::Latent)?;
                let index = index_for(repo.cases().iter(), mode, model.as_ref())?;
                let query = query_vector(&p, mode, model.as_ref())?;
                let exclude: HashSet<String> = [p.id()].into_iter().collect();
                let ranked = top_k(
                    &query,
                    index.iter().map(|(id, v)| (id.as_str(), v.as_slice())),
                    1,
                    &exclude,
                );
                let top = ranked
                    .results
                    .first()
                    .ok_or_else(|| anyhow!("repository has no candidate cases"))?;
                repo.get(&top.id).expect("ranked id exists").clone()
            }
        };
        retrieved_case = case;
        Some(&retrieved_case)
    } else {
        None
    };
    let bundle = build_query(&p, args.kind, retrieved)?;
    if args.system {
        println!("{}", bundle.system);
    } else {
        println!("{}", bundle.user);
    }
    Ok(())
}

fn print_retrieval(report: &RetrievalReport) {
    println!("aggregate over {} runs (mean % / std %):", report.settings.runs);
    for row in &report.aggregate {
        let m = &row.mean;
        let s = &row.std;
        println!(
            "{:<3} {:<8}  precision {:6.2}/{:4.2}  recall {:6.2}/{:4.2}  f1 {:6.2}/{:4.2}  ndcg {:6.2}/{:4.2}  mrr {:6.2}/{:4.2}",
            row.scheme.code(),
            row.mode.code(),
            m.precision * 100.0,
            s.precision * 100.0,
            m.recall * 100.0,
            s.recall * 100.0,
            m.f1 * 100.0,
            s.f1 * 100.0,
            m.ndcg * 100.0,
            s.ndcg * 100.0,
            m.mrr * 100.0,
            s.mrr * 100.0,
        );
    }
}

fn eval_retrieval(cfg: &RunConfig, args: EvalArgs) -> Result<()> {
    let repo = load_repo(&repo_root(cfg, &args.repo))?;
    let mut settings = cfg.experiment_settings();
    if let Some(v) = args.runs {
        settings.runs = v;
    }
    if let Some(v) = args.holdout {
        settings.holdout = v;
    }
    if let Some(v) = args.seed {
        settings.master_seed = v;
    }
    if let Some(v) = args.epochs {
        settings.train.epochs = v;
    }
    let out = out_dir(cfg, &args.out);
    let start = Instant::now();
    let report = run_retrieval_experiment(&repo, &settings)?;
    let csv_path = out.join("retrieval_report.csv");
    let json_path = out.join("retrieval_report.json");
    report.write_csv(&csv_path)?;
    report.write_json(&json_path)?;
    println!(
        "retrieval experiment finished in {:.1}s; wrote {} and {}",
        start.elapsed().as_secs_f64(),
        csv_path.display(),
        json_path.display()
    );
    print_retrieval(&report);
    Ok(())
}

fn print_generation(report: &GenerationReport) {
    println!("provider {} aggregate:", report.provider);
    for row in &report.aggregate {
        let m = &row.metrics;
        let opt = |v: Option<f64>| match v {
            Some(x) => format!("{:.2}%", x * 100.0),
            None => "-".to_string(),
        };
        println!(
            "{}  accuracy {:.2}%  faithfulness {}  negative_rejection {}  errored {}",
            row.kind.code(),
            m.accuracy * 100.0,
            opt(m.faithfulness),
            opt(m.negative_rejection),
            m.errored_count
        );
    }
}

fn eval_generation(cfg: &RunConfig, args: EvalGenerationArgs) -> Result<()> {
    let repo = load_repo(&repo_root(cfg, &args.eval.repo))?;
    let mut cfg = cfg.clone();
    if let Some(kind) = args.provider {
        cfg.provider.kind = kind;
    }
    let mut settings = cfg.generation_settings();
    if let Some(v) = args.eval.runs {
        settings.runs = v;
    }
    if let Some(v) = args.eval.holdout {
        settings.holdout = v;
    }
    if let Some(v) = args.eval.seed {
        settings.master_seed = v;
    }
    if let Some(v) = args.eval.epochs {
        settings.train.epochs = v;
    }
    if let Some(kinds) = args.kinds {
        settings.kinds = kinds;
    }
    if let Some(mode) = args.tc_mode {
        settings.tc_mode = mode;
    }
    let provider = cfg.make_provider()?;
    let out = out_dir(&cfg, &args.eval.out);
    let transcripts = (!args.no_transcripts).then(|| out.join("transcripts").join(provider.name()));
    let start = Instant::now();
    let report =
        run_generation_experiment(&repo, &settings, provider.as_ref(), transcripts.as_deref())?;
    let csv_path = out.join("generation_report.csv");
    let json_path = out.join("generation_report.json");
    report.write_csv(&csv_path)?;
    report.write_json(&json_path)?;
    println!(
        "generation experiment finished in {:.1}s; wrote {} and {}",
        start.elapsed().as_secs_f64(),
        csv_path.display(),
        json_path.display()
    );
    print_generation(&report);
    Ok(())
}
