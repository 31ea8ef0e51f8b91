//! Command-line surface.
//!
//! Every subcommand accepts `--config <file>` and one `--<key> <value>` flag
//! per configuration key; flags win over the file, which wins over the
//! defaults. Exit status is 0 on success, 1 on a usage error and 2 when the
//! work itself fails.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Arg, ArgMatches, Command};

use crate::backbone::{FeatureExtractor, Precomputed};
use crate::config::{TrainConfig, KEYS};
use crate::data::dataset::shuffled_order;
use crate::data::synth::{synth_generate, SynthConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evalx::{self, batch_size_sweep, compare_baseline, export_heatmap, rpe_ablation};
use crate::model::{HeadKind, Model};
use crate::numcore::{Mode, Tape, Tensor};
use crate::train::trainer::{configure, eval_seed, evaluate, forward_batch, rpe_encoder};
use crate::train::{checkpoint_load, checkpoint_save, fit, model_gradcheck, GradcheckSpec, TrainState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Default synthetic dataset seed when no `--data` directory is given.
pub const DEFAULT_DATA_SEED: u64 = 42;

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("{p:?} is not a valid number")))
        .collect()
}

fn config_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .value_parser(clap::value_parser!(PathBuf))
        .help("flat `key = value` configuration file")];
    for key in KEYS {
        args.push(
            Arg::new(*key)
                .long(*key)
                .alias(key.replace('_', "-"))
                .value_name("VALUE")
                .help_heading("Configuration overrides"),
        );
    }
    args
}

fn data_args() -> Vec<Arg> {
    vec![
        Arg::new("data")
            .long("data")
            .value_name("DIR")
            .value_parser(clap::value_parser!(PathBuf))
            .help("dataset written by gen-synth (train/ and test/); default: generate in memory"),
        Arg::new("data-seed")
            .long("data-seed")
            .value_name("N")
            .value_parser(clap::value_parser!(u64))
            .help("seed of the in-memory synthetic dataset [default: 42]"),
    ]
}

fn path_arg(id: &'static str, help: &'static str) -> Arg {
    Arg::new(id)
        .long(id)
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn sub(name: &'static str, about: &'static str) -> Command {
    Command::new(name).about(about).args(config_args())
}

pub fn command() -> Command {
    Command::new("rbi")
        .about("Relationship batch integration: train, evaluate and inspect batch-relational attention models")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            sub("gen-synth", "Write the synthetic fine-grained dataset (uses the `seed` key)")
                .arg(path_arg("out", "output directory").required(true)),
        )
        .subcommand(
            sub("train", "Train a model and write a checkpoint after every epoch")
                .args(data_args())
                .arg(path_arg("out", "checkpoint directory").required(true))
                .arg(path_arg("resume", "continue from this checkpoint"))
                .arg(path_arg("embeddings", "use precomputed embeddings from this directory as the backbone"))
                .arg(path_arg("metrics", "CSV metrics log [default: <out>/metrics.csv]")),
        )
        .subcommand(
            sub("eval", "Test accuracy of a checkpoint")
                .args(data_args())
                .arg(path_arg("checkpoint", "checkpoint directory").required(true)),
        )
        .subcommand(
            sub("sweep-batch", "Evaluate a checkpoint at several batch sizes")
                .args(data_args())
                .arg(path_arg("checkpoint", "checkpoint directory").required(true))
                .arg(
                    Arg::new("sizes")
                        .long("sizes")
                        .value_name("LIST")
                        .default_value("1,2,4,8,16,32")
                        .value_parser(list::<usize>)
                        .help("comma-separated batch sizes"),
                )
                .arg(path_arg("out", "CSV output file")),
        )
        .subcommand(
            sub("heatmap", "Export the similarity (and attention) matrix of a probe batch")
                .args(data_args())
                .arg(path_arg("checkpoint", "checkpoint whose attention matrix is exported too"))
                .arg(path_arg("out", "output directory").required(true)),
        )
        .subcommand(
            sub("ablate-rpe", "Train twin models with the relationship encoding on and off")
                .args(data_args())
                .arg(path_arg("out", "directory for heatmaps and the report")),
        )
        .subcommand(
            sub("compare", "Baseline head against RBI over several seeds")
                .args(data_args())
                .arg(
                    Arg::new("seeds")
                        .long("seeds")
                        .value_name("LIST")
                        .default_value("0,1,2")
                        .value_parser(list::<u64>)
                        .help("comma-separated training seeds (at least 3)"),
                )
                .arg(path_arg("out", "CSV output file")),
        )
        .subcommand(
            sub("gradcheck", "Finite-difference check of every model gradient (uses the `seed` key)").arg(
                Arg::new("dims")
                    .long("dims")
                    .value_name("B,D,C")
                    .default_value("4,8,5")
                    .value_parser(list::<usize>)
                    .help("batch size, embedding width and class count"),
            ),
        )
        .subcommand(
            sub("export-embeddings", "Write backbone embeddings of every sample for reuse as a precomputed extractor")
                .args(data_args())
                .arg(path_arg("checkpoint", "checkpoint directory").required(true))
                .arg(path_arg("out", "output directory").required(true)),
        )
}

/// Runs the command line `args` (program name first) and returns the exit status.
pub fn dispatch<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match run(name, sub) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("\nFor more information, try 'rbi {name} --help'.");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Defaults, then `--config`, then per-key flags; echoed to stderr.
fn resolve_config(m: &ArgMatches) -> CliResult<TrainConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
            TrainConfig::parse(&text).map_err(|e| Failure::Usage(format!("--config {}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    for key in KEYS {
        if let Some(value) = m.get_one::<String>(key) {
            cfg.set(key, value).map_err(|msg| Failure::Usage(format!("--{key}: {msg}")))?;
        }
    }
    cfg.validate().map_err(Failure::Usage)?;
    eprintln!("# resolved configuration");
    eprint!("{cfg}");
    Ok(cfg)
}

fn synth_config(cfg: &TrainConfig, seed: u64) -> SynthConfig {
    SynthConfig::new(seed, cfg.classes, cfg.per_class_train, cfg.per_class_test, cfg.image_size)
}

fn load_data(m: &ArgMatches, cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    match m.get_one::<PathBuf>("data") {
        Some(dir) => Ok((
            Dataset::load(&dir.join("train"), Some(cfg.classes))?,
            Dataset::load(&dir.join("test"), Some(cfg.classes))?,
        )),
        None => {
            let seed = m.get_one::<u64>("data-seed").copied().unwrap_or(DEFAULT_DATA_SEED);
            synth_generate(&synth_config(cfg, seed))
        }
    }
}

fn path<'a>(m: &'a ArgMatches, id: &str) -> Option<&'a Path> {
    m.get_one::<PathBuf>(id).map(PathBuf::as_path)
}

fn required<'a>(m: &'a ArgMatches, id: &str) -> &'a Path {
    path(m, id).expect("clap enforces required arguments")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::io(path))
}

/// Checkpointed model with the run-time settings of `cfg` applied.
fn load_model(m: &ArgMatches, cfg: &TrainConfig) -> Result<Model<f32>> {
    let mut model = checkpoint_load(required(m, "checkpoint"))?.model;
    configure(&mut model, cfg);
    Ok(model)
}

fn run(name: &str, m: &ArgMatches) -> CliResult<()> {
    let cfg = resolve_config(m)?;
    match name {
        "gen-synth" => gen_synth(m, &cfg)?,
        "train" => train(m, &cfg)?,
        "eval" => eval(m, &cfg)?,
        "sweep-batch" => sweep_batch(m, &cfg)?,
        "heatmap" => heatmap(m, &cfg)?,
        "ablate-rpe" => ablate_rpe(m, &cfg)?,
        "compare" => compare(m, &cfg)?,
        "gradcheck" => return gradcheck(m, &cfg),
        "export-embeddings" => export_embeddings(m, &cfg)?,
        _ => unreachable!("unknown subcommand {name}"),
    }
    Ok(())
}

fn gen_synth(m: &ArgMatches, cfg: &TrainConfig) -> Result<()> {
    let out = required(m, "out");
    let (train, test) = synth_generate(&synth_config(cfg, cfg.seed))?;
    train.save(&out.join("train"))?;
    test.save(&out.join("test"))?;
    println!(
        "wrote {} train and {} test images ({} classes, seed {}) to {}",
        train.len(),
        test.len(),
        cfg.classes,
        cfg.seed,
        out.display()
    );
    Ok(())
}

fn train(m: &ArgMatches, cfg: &TrainConfig) -> Result<()> {
    let out = required(m, "out");
    let (train, test) = load_data(m, cfg)?;
    let mut state = match path(m, "resume") {
        Some(dir) => {
            let mut state = checkpoint_load(dir)?;
            configure(&mut state.model, cfg);
            state
        }
        None => match path(m, "embeddings") {
            Some(dir) => {
                let extractor = FeatureExtractor::Precomputed(Precomputed::load_dir(dir)?);
                let mut model = Model::with_extractor(extractor, cfg.head, cfg.classes, cfg.seed);
                configure(&mut model, cfg);
                TrainState::new(model)
            }
            None => TrainState::from_config(cfg),
        },
    };
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    write_file(&out.join("config.cfg"), &cfg.to_string())?;
    let metrics = path(m, "metrics").map_or_else(|| out.join("metrics.csv"), Path::to_path_buf);
    println!(
        "{} train / {} test images, head {}, epochs {}..{}",
        train.len(),
        test.len(),
        cfg.head.name(),
        state.epoch + 1,
        cfg.epochs
    );
    // one epoch at a time so a checkpoint exists after each
    while state.epoch < cfg.epochs {
        let mut leg = cfg.clone();
        leg.epochs = state.epoch + 1;
        fit(&mut state, &train, Some(&test), &leg, Some(&metrics), |r| {
            let t = r.test.expect("test split given");
            println!(
                "epoch {:>3}  train loss {:.4} acc {:.4}  test loss {:.4} acc {:.4}  ({:.1}s)",
                r.train.epoch, r.train.loss, r.train.accuracy, t.loss, t.accuracy, r.train.wall_seconds
            );
        })?;
        checkpoint_save(&state, out)?;
    }
    println!("checkpoint: {}", out.display());
    Ok(())
}

fn eval(m: &ArgMatches, cfg: &TrainConfig) -> Result<()> {
    let (_, test) = load_data(m, cfg)?;
    let mut model = load_model(m, cfg)?;
    let encoder = rpe_encoder(&cfg.rpe);
    let r = evaluate(&mut model, &test, cfg.batch_size, eval_seed(cfg), &cfg.rpe, &encoder)?;
    println!(
        "test accuracy {:.4}  loss {:.4}  ({} images, batch size {})",
        r.accuracy, r.loss, r.samples, cfg.batch_size
    );
    Ok(())
}

fn sweep_batch(m: &ArgMatches, cfg: &TrainConfig) -> Result<()> {
    let (_, test) = load_data(m, cfg)?;
    let mut model = load_model(m, cfg)?;
    let sizes = m.get_one::<Vec<usize>>("sizes").expect("has default");
    let start = Instant::now();
    let report = batch_size_sweep(&mut model, &test, sizes, eval_seed(cfg), &cfg.rpe)?;
    print!("{}", report.to_csv());
    println!(
        "# spread {:.2} points over {} sizes ({:.1}s)",
        100.0 * report.spread,
        sizes.len(),
        start.elapsed().as_secs_f64()
    );
    if let Some(out) = path(m, "out") {
        report.write_csv(out)?;
    }
    Ok(())
}

fn heatmap(m: &ArgMatches, cfg: &TrainConfig) -> Result<()> {
    let out = required(m, "out");
    let (_, test) = load_data(m, cfg)?;
    let order = shuffled_order(test.len(), eval_seed(cfg));
    let probe = test.batch(&order[..cfg.batch_size.min(order.len())])?;
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    let encoder = rpe_encoder(&cfg.rpe);
    let s = encoder.similarity_matrix(&probe.images)?.values;
    report_matrix("similarity", &s, &export_heatmap(&s, &out.join("similarity"))?.csv);
    if path(m, "checkpoint").is_some() {
        let mut model = load_model(m, cfg)?;
        if model.kind() == HeadKind::Baseline {
            return Err(Error::Invalid("the baseline checkpoint has no attention matrix".into()));
        }
        let (tape, fwd) = forward_batch(&mut model, &probe.images, &probe.ids, &cfg.rpe, &encoder, Mode::Eval)?;
        let a = tape.value(fwd.rra.expect("attention head").a).clone();
        report_matrix("attention", &a, &export_heatmap(&a, &out.join("attention"))?.csv);
    }
    Ok(())
}

fn report_matrix<T: crate::numcore::Scalar>(name: &str, m: &Tensor<T>, file: &Path) {
    let (sym, dom) = evalx::ablation::matrix_stats(m);
    println!(
        "{name:<10} {}×{}  symmetry error {sym:.3e}  diagonal dominance {dom:.4}  -> {}",
        m.shape()[0],
        m.shape()[1],
        file.display()
    );
}

fn ablate_rpe(m: &ArgMatches, cfg: &TrainConfig) -> Result<()> {
    let (train, test) = load_data(m, cfg)?;
    let report = rpe_ablation(cfg, &train, &test, cfg.seed, path(m, "out"))?;
    print!("{}", report.summary());
    Ok(())
}

fn compare(m: &ArgMatches, cfg: &TrainConfig) -> Result<()> {
    let (train, test) = load_data(m, cfg)?;
    let seeds = m.get_one::<Vec<u64>>("seeds").expect("has default");
    let report = compare_baseline(cfg, &train, &test, seeds, |r, _| {
        println!("seed {:>3}  {:<8}  test accuracy {:.4}", r.seed, r.head.name(), r.accuracy)
    })?;
    print!("{}", report.summary());
    if let Some(out) = path(m, "out") {
        write_file(out, &report.to_csv())?;
    }
    Ok(())
}

fn gradcheck(m: &ArgMatches, cfg: &TrainConfig) -> CliResult<()> {
    let dims = m.get_one::<Vec<usize>>("dims").expect("has default");
    let &[b, d, c] = dims.as_slice() else {
        return Err(Failure::Usage(format!("--dims needs three values B,D,C, got {}", dims.len())));
    };
    if b == 0 || d == 0 || c == 0 {
        return Err(Failure::Usage("--dims values must be positive".into()));
    }
    let start = Instant::now();
    let report = model_gradcheck(&GradcheckSpec::new(b, d, c, cfg.seed))?;
    for t in &report.tensors {
        println!("{:<28} {:>6} entries  max rel error {:.3e}", t.name, t.entries, t.max_rel_error);
    }
    println!(
        "max relative error {:.3e} (tolerance {:.0e}, {} of {} entries re-differenced in double-double, plain difference {:.3e}, {:.1}s)",
        report.max_rel_error,
        report.tolerance,
        report.refined(),
        report.entries(),
        report.plain_max_rel_error,
        start.elapsed().as_secs_f64()
    );
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure::Runtime(Error::Invalid(format!(
            "gradient check failed: {:.3e} >= {:.0e}",
            report.max_rel_error, report.tolerance
        ))))
    }
}

fn export_embeddings(m: &ArgMatches, cfg: &TrainConfig) -> Result<()> {
    let out = required(m, "out");
    let (train, test) = load_data(m, cfg)?;
    let mut model = load_model(m, cfg)?;
    let mut values = Vec::new();
    let mut ids = Vec::new();
    for ds in [&train, &test] {
        let all: Vec<usize> = (0..ds.len()).collect();
        for chunk in all.chunks(cfg.batch_size) {
            let batch = ds.batch(chunk)?;
            let mut tape = Tape::new();
            let (n, _) = model.embed(&mut tape, &batch.images, &batch.ids, Mode::Eval)?;
            values.extend(tape.value(n).data().iter().map(|&v| v as f64));
            ids.extend(batch.ids);
        }
    }
    let table = Tensor::new(&[ids.len(), model.embed_dim()], values)?;
    let table = Precomputed::new(table, &ids)?;
    table.export(out)?;
    println!("wrote {} embeddings of width {} to {}", table.len(), table.embed_dim(), out.display());
    Ok(())
}
