use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use lvg_core::corpus::{
    frame_accuracy, gen_corpus, load_corpus, oracle_content_decode, oracle_speaker_classify,
    read_utterance, save_corpus, write_utterance,
};
use lvg_core::eval::{
    bench, bench_csv, conversion_pairs, eval_conversion, sweep_csv, sweep_l, sweep_r,
    with_threads, write_text, ConversionReport,
};
use lvg_core::latentae::AeObjective;
use lvg_core::pgm::dump_pgm;
use lvg_core::pipeline::{
    load_ae, load_generator, save_ae, save_generator, train_autoencoder, train_generator,
    write_loss_csv,
};
use lvg_core::{
    Autoencoder, ConditionedNet, Converter, Corpus, CorpusSpec, Error, GenModel, NoiseSchedule,
    PipelineKind, RunConfig, SpeakerTable, Tensor2, Utterance,
};

#[derive(Parser, Debug)]
#[command(
    name = "lvg",
    version,
    about = "Feature- and latent-space diffusion / flow-matching conversion on a synthetic corpus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus (spec.json plus utterance files).
    GenData(Common),
    /// Train the autoencoder and its discriminator.
    TrainAe(TrainAe),
    /// Train a score network or vector field with its speaker table.
    TrainGen(TrainGen),
    /// Convert one utterance file to a target speaker.
    Convert(Convert),
    /// Score held-out conversions with the corpus oracles.
    Eval(Eval),
    /// Sweep the noise fraction r and the Euler step count L (FM kinds).
    Sweep(Sweep),
    /// Time conversion and count network evaluations.
    Bench(Eval),
    /// Dump every sampler step of one conversion as PGM images.
    Snapshot(Convert),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for evaluation.
    #[arg(long)]
    threads: Option<usize>,
    /// Output file or directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct Sampler {
    /// Euler steps L (FM kinds).
    #[arg(long)]
    steps: Option<usize>,
    /// Noise fraction r (FM kinds).
    #[arg(long = "noise-frac")]
    noise_frac: Option<f64>,
    /// Starting timestep L' (DPM kinds).
    #[arg(long)]
    lprime: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainAe {
    #[command(flatten)]
    common: Common,
    /// Corpus directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "ae-objective", value_parser = parse_objective)]
    ae_objective: Option<AeObjective>,
}

#[derive(Args, Debug)]
struct TrainGen {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    kind: PipelineKind,
    /// Directory holding the autoencoder checkpoint (latent kinds); defaults to --out.
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Convert {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sampler: Sampler,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    kind: PipelineKind,
    /// Source utterance file (.lvgu).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    target: usize,
}

#[derive(Args, Debug)]
struct Eval {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sampler: Sampler,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    models: PathBuf,
    /// Pipeline kind; all four when omitted.
    #[arg(long, value_parser = parse_kind)]
    kind: Option<PipelineKind>,
}

#[derive(Args, Debug)]
struct Sweep {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sampler: Sampler,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    kind: PipelineKind,
}

fn parse_kind(s: &str) -> Result<PipelineKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_objective(s: &str) -> Result<AeObjective, String> {
    match s {
        "regular" => Ok(AeObjective::Regular),
        "adversarial" => Ok(AeObjective::Adversarial),
        _ => Err(format!("expected regular or adversarial, got {s:?}")),
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Lookup { .. } | Error::Index { .. } | Error::Shape { .. } => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(common: &Common, sampler: Option<&Sampler>) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::Validation(format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t) = common.threads {
        cfg.eval.threads = t;
    }
    if let Some(s) = sampler {
        if let Some(l) = s.steps {
            cfg.conversion.euler_steps = l;
        }
        if let Some(r) = s.noise_frac {
            cfg.conversion.noise_frac = r;
        }
        if let Some(l) = s.lprime {
            cfg.conversion.lprime = l;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn corpus_for(cfg: &RunConfig, dir: &Path) -> CliResult<Corpus> {
    let corpus = load_corpus(dir)?;
    if corpus.spec.params != cfg.corpus {
        return Err(Failure::Validation(format!(
            "corpus at {} was generated with different corpus parameters than the configuration",
            dir.display()
        )));
    }
    Ok(corpus)
}

/// Loads the generator and checks it against the configured architecture.
fn generator_for(
    cfg: &RunConfig,
    dir: &Path,
    kind: PipelineKind,
) -> CliResult<(ConditionedNet, SpeakerTable)> {
    let (net, table) = load_generator(dir, kind)?;
    let data = if kind.is_latent() {
        cfg.autoencoder.latent
    } else {
        cfg.corpus.dim
    };
    if net.dims() != cfg.field_dims(data) {
        return Err(Failure::Validation(format!(
            "{kind} checkpoint architecture does not match the configuration"
        )));
    }
    Ok((net, table))
}

fn ae_for(cfg: &RunConfig, dir: &Path, kind: PipelineKind) -> CliResult<Option<Autoencoder>> {
    if !kind.is_latent() {
        return Ok(None);
    }
    let ae = load_ae(dir)?;
    if ae.dims() != cfg.ae_dims() {
        return Err(Failure::Validation(
            "autoencoder checkpoint architecture does not match the configuration".into(),
        ));
    }
    Ok(Some(ae))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn gen_data(c: &Common) -> CliResult<()> {
    let cfg = load_config(c, None)?;
    let spec = CorpusSpec::new(cfg.corpus.clone(), cfg.seed)?;
    let corpus = gen_corpus(&spec, cfg.seed)?;
    save_corpus(&c.out, &corpus)?;
    println!(
        "wrote {} train and {} held-out utterances to {}",
        corpus.train.len(),
        corpus.heldout.len(),
        c.out.display()
    );
    Ok(())
}

fn train_ae(a: &TrainAe) -> CliResult<()> {
    let mut cfg = load_config(&a.common, None)?;
    if let Some(o) = a.ae_objective {
        cfg.autoencoder.loss.objective = o;
    }
    let corpus = corpus_for(&cfg, &a.data)?;
    let trained = train_autoencoder(&cfg, &corpus)?;
    save_ae(&a.common.out, &trained.ae_checkpoint, &trained.disc_checkpoint)?;
    write_loss_csv(&a.common.out.join("ae_loss.csv"), &trained.log)?;
    println!("autoencoder trained; checkpoints in {}", a.common.out.display());
    Ok(())
}

fn train_gen(t: &TrainGen) -> CliResult<()> {
    let cfg = load_config(&t.common, None)?;
    let models = t.models.clone().unwrap_or_else(|| t.common.out.clone());
    let ae = ae_for(&cfg, &models, t.kind)?;
    let corpus = corpus_for(&cfg, &t.data)?;
    let trained = train_generator(&cfg, &corpus, t.kind, ae.as_ref())?;
    save_generator(
        &t.common.out,
        t.kind,
        &trained.field_checkpoint,
        &trained.table_checkpoint,
    )?;
    write_loss_csv(
        &t.common.out.join(format!("{}_loss.csv", t.kind)),
        &trained.log,
    )?;
    println!("{} trained; checkpoints in {}", t.kind, t.common.out.display());
    Ok(())
}

struct Loaded {
    cfg: RunConfig,
    corpus: Corpus,
    net: ConditionedNet,
    table: SpeakerTable,
    ae: Option<Autoencoder>,
    schedule: NoiseSchedule,
}

impl Loaded {
    fn new(
        common: &Common,
        sampler: &Sampler,
        data: &Path,
        models: &Path,
        kind: PipelineKind,
    ) -> CliResult<Self> {
        let cfg = load_config(common, Some(sampler))?;
        let corpus = corpus_for(&cfg, data)?;
        let (net, table) = generator_for(&cfg, models, kind)?;
        let ae = ae_for(&cfg, models, kind)?;
        let schedule = NoiseSchedule::new(&cfg.schedule)?;
        Ok(Loaded {
            cfg,
            corpus,
            net,
            table,
            ae,
            schedule,
        })
    }

    fn converter(&self, kind: PipelineKind) -> Converter<'_, ConditionedNet> {
        Converter {
            kind,
            field: &self.net,
            table: &self.table,
            ae: self.ae.as_ref(),
            schedule: &self.schedule,
            alphabet: self.corpus.spec.alphabet(),
        }
    }
}

fn check_target(target: usize, table: &SpeakerTable) -> CliResult<()> {
    if target >= table.speakers() {
        return Err(Failure::Validation(format!(
            "target speaker {target} is not in the table (0..{})",
            table.speakers()
        )));
    }
    Ok(())
}

fn convert(c: &Convert) -> CliResult<()> {
    let l = Loaded::new(&c.common, &c.sampler, &c.data, &c.models, c.kind)?;
    check_target(c.target, &l.table)?;
    let src = read_utterance(&c.input)?;
    let out = l
        .converter(c.kind)
        .convert(&src, c.target, &l.cfg.conversion, l.cfg.seed)?;
    let converted = Utterance {
        features: out.features,
        speaker: c.target,
        codes: src.codes.clone(),
    };
    write_utterance(&c.common.out, &converted)?;
    println!(
        "converted {} frames with {} network evaluations",
        converted.frames(),
        out.nfe
    );
    Ok(())
}

fn snapshot(c: &Convert) -> CliResult<()> {
    let l = Loaded::new(&c.common, &c.sampler, &c.data, &c.models, c.kind)?;
    check_target(c.target, &l.table)?;
    let src = read_utterance(&c.input)?;
    let mut states: Vec<(usize, Tensor2)> = Vec::new();
    let mut observe = |step: usize, x: &Tensor2| states.push((step, x.clone()));
    let out = l.converter(c.kind).convert_observed(
        &src,
        c.target,
        &l.cfg.conversion,
        l.cfg.seed,
        Some(&mut observe),
    )?;
    create_dir(&c.common.out)?;
    dump_pgm(&src.features, &c.common.out.join("source.pgm"))?;
    for (i, (step, x)) in states.iter().enumerate() {
        let frame = match &l.ae {
            Some(ae) => ae.decode(x)?,
            None => x.clone(),
        };
        dump_pgm(
            &frame,
            &c.common.out.join(format!("step-{:02}-{step:02}.pgm", i + 1)),
        )?;
    }
    dump_pgm(&out.features, &c.common.out.join("converted.pgm"))?;
    println!("wrote {} step images to {}", states.len(), c.common.out.display());
    Ok(())
}

fn kinds(kind: Option<PipelineKind>) -> Vec<PipelineKind> {
    kind.map(|k| vec![k]).unwrap_or_else(|| PipelineKind::ALL.to_vec())
}

fn report_csv(kind: PipelineKind, rep: &ConversionReport) -> String {
    let mut s = String::new();
    for r in &rep.rows {
        s.push_str(&format!(
            "{kind},{},{},{},{:.6},{:.6}\n",
            r.source, r.target, r.hit as u8, r.margin, r.content_acc
        ));
    }
    s
}

fn eval(e: &Eval) -> CliResult<()> {
    let cfg = load_config(&e.common, Some(&e.sampler))?;
    let corpus = corpus_for(&cfg, &e.data)?;
    let spec = &corpus.spec;
    let mut floor_hits = 0;
    let mut floor_content = 0.0;
    for u in &corpus.heldout {
        floor_hits += usize::from(oracle_speaker_classify(&u.features, spec)?.speaker == u.speaker);
        floor_content += frame_accuracy(&oracle_content_decode(&u.features, spec)?, &u.codes);
    }
    let n = corpus.heldout.len().max(1) as f64;
    println!(
        "oracle floor on held-out data: speaker {:.4}, content {:.4}",
        floor_hits as f64 / n,
        floor_content / n
    );
    let mut rows = String::from("kind,source,target,hit,margin,content_acc\n");
    let mut summary = String::from("kind,similarity_acc,content_acc,mean_margin\n");
    for kind in kinds(e.kind) {
        let l = Loaded::new(&e.common, &e.sampler, &e.data, &e.models, kind)?;
        let pairs = conversion_pairs(&corpus.heldout, spec.speakers());
        let conv = l.converter(kind);
        let rep = with_threads(cfg.eval.threads, || {
            eval_conversion(&conv, spec, &corpus.heldout, &pairs, &cfg.conversion, cfg.seed)
        })??;
        println!(
            "{kind}: similarity_acc {:.4} content_acc {:.4} mean_margin {:.3}",
            rep.similarity_acc, rep.content_acc, rep.mean_margin
        );
        rows.push_str(&report_csv(kind, &rep));
        summary.push_str(&format!(
            "{kind},{:.6},{:.6},{:.6}\n",
            rep.similarity_acc, rep.content_acc, rep.mean_margin
        ));
    }
    create_dir(&e.common.out)?;
    write_text(&e.common.out.join("eval_rows.csv"), &rows)?;
    write_text(&e.common.out.join("eval_summary.csv"), &summary)?;
    Ok(())
}

fn sweep(s: &Sweep) -> CliResult<()> {
    if s.kind.model != GenModel::Fm {
        return Err(Failure::Validation(format!(
            "sweeps apply to flow-matching kinds only, not {}",
            s.kind
        )));
    }
    let l = Loaded::new(&s.common, &s.sampler, &s.data, &s.models, s.kind)?;
    let ev = &l.cfg.eval;
    let conv = l.converter(s.kind);
    let heldout = &l.corpus.heldout;
    let spec = &l.corpus.spec;
    let steps = s.sampler.steps.unwrap_or(ev.r_sweep_steps);
    let r = s.sampler.noise_frac.unwrap_or(ev.l_sweep_noise_frac);
    let (rows_r, rows_l) = with_threads(ev.threads, || {
        Ok::<_, Error>((
            sweep_r(&conv, spec, heldout, &ev.r_grid, steps, l.cfg.seed)?,
            sweep_l(&conv, spec, heldout, &ev.l_grid, r, l.cfg.seed)?,
        ))
    })??;
    create_dir(&s.common.out)?;
    write_text(&s.common.out.join("sweep_r.csv"), &sweep_csv(&rows_r))?;
    write_text(&s.common.out.join("sweep_L.csv"), &sweep_csv(&rows_l))?;
    print!("{}", sweep_csv(&rows_r));
    print!("{}", sweep_csv(&rows_l));
    Ok(())
}

fn bench_cmd(e: &Eval) -> CliResult<()> {
    let mut rows = Vec::new();
    for kind in kinds(e.kind) {
        let l = Loaded::new(&e.common, &e.sampler, &e.data, &e.models, kind)?;
        let conv = l.converter(kind);
        let row = with_threads(1, || {
            bench(
                &conv,
                &l.corpus.heldout,
                &l.cfg.conversion,
                l.cfg.eval.bench_repeats,
                l.net.param_count(),
            )
        })??;
        rows.push(row);
    }
    let csv = bench_csv(&rows);
    let out = &e.common.out;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData(c) => gen_data(c),
        Command::TrainAe(a) => train_ae(a),
        Command::TrainGen(t) => train_gen(t),
        Command::Convert(c) => convert(c),
        Command::Eval(e) => eval(e),
        Command::Sweep(s) => sweep(s),
        Command::Bench(e) => bench_cmd(e),
        Command::Snapshot(c) => snapshot(c),
    }
}

impl From<Failure> for ExitCode {
    fn from(f: Failure) -> Self {
        match f {
            Failure::Validation(m) => {
                eprintln!("error: {m}");
                ExitCode::from(1)
            }
            Failure::Runtime(m) => {
                eprintln!("error: {m}");
                ExitCode::from(2)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LVG_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    info!("{:?}", cli.command);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.into(),
    }
}
