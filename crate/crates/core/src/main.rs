use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dkph::pipeline::{ablation_suite, generate_synthetic, nearest_prototype_accuracy, Pipeline, RunConfig, Variant};
use dkph::student::toy_gradcheck;
use dkph::Result;

#[derive(Parser)]
#[command(name = "dkph", version, about = "Dual-stream knowledge-preserving video hashing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` config file; unspecified keys take desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single key, e.g. `--set gamma1=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct Target {
    #[command(flatten)]
    common: Common,
    /// Code length; defaults to every configured length.
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    variant: VariantArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    ReconOnly,
    NoBsim,
    NoTsim,
    HashOnly,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::ReconOnly => Variant::ReconOnly,
            VariantArg::NoBsim => Variant::NoBsim,
            VariantArg::NoTsim => Variant::NoTsim,
            VariantArg::HashOnly => Variant::HashOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus to the data directory.
    SynthData(Common),
    TrainTeacher(Common),
    /// Export teacher embeddings and build the signed anchor graph.
    BuildGraph(Common),
    TrainStudent(Target),
    /// Write packed codes for every video.
    Encode(Target),
    /// Print MAP and PR results.
    Eval(Target),
    /// Train all variants and analyse reconstruction streams.
    Ablate(Common),
    /// Finite-difference check of the student objective on a toy instance.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Every stage followed by the report.
    Run(Common),
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    for o in &c.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| dkph::Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bits_of(t: &Target, cfg: &RunConfig) -> Vec<usize> {
    t.bits.map_or_else(|| cfg.code_bits.clone(), |b| vec![b])
}

fn print_timings(p: &Pipeline) {
    for (stage, secs) in p.timings() {
        println!("time {stage} {secs:.2}s");
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthData(c) => {
            let cfg = load_config(&c)?;
            let corpus = generate_synthetic(&cfg.synth)?;
            corpus.dataset.save(&cfg.data_dir)?;
            println!(
                "wrote {} videos to {} (nearest-prototype accuracy {:.4})",
                corpus.dataset.len(),
                cfg.data_dir.display(),
                nearest_prototype_accuracy(&corpus)
            );
        }
        Command::TrainTeacher(c) => {
            let mut p = Pipeline::new(load_config(&c)?)?;
            p.teacher()?;
            print_timings(&p);
        }
        Command::BuildGraph(c) => {
            let mut p = Pipeline::new(load_config(&c)?)?;
            let g = p.graph()?;
            let (pos, neg) = g.graph.edge_counts();
            println!("graph: {} videos, {pos} positive and {neg} negative edges", g.graph.len());
            print_timings(&p);
        }
        Command::TrainStudent(t) => {
            let cfg = load_config(&t.common)?;
            let bits = bits_of(&t, &cfg);
            let mut p = Pipeline::new(cfg)?;
            for b in bits {
                p.student(t.variant.into(), b)?;
            }
            print_timings(&p);
        }
        Command::Encode(t) => {
            let cfg = load_config(&t.common)?;
            let bits = bits_of(&t, &cfg);
            let mut p = Pipeline::new(cfg)?;
            for b in bits {
                p.encode(t.variant.into(), b)?;
            }
            print_timings(&p);
        }
        Command::Eval(t) => {
            let cfg = load_config(&t.common)?;
            let bits = bits_of(&t, &cfg);
            let mut p = Pipeline::new(cfg)?;
            for b in bits {
                let e = p.evaluate(t.variant.into(), b)?;
                for (k, m) in &e.maps {
                    println!("map@{k}.k{b} = {m:.6}");
                }
            }
            print_timings(&p);
        }
        Command::Ablate(c) => {
            let mut p = Pipeline::new(load_config(&c)?)?;
            let r = ablation_suite(&mut p)?;
            print!("{}", r.to_text(p.config_hash()));
            print_timings(&p);
        }
        Command::Gradcheck { seed } => {
            let r = toy_gradcheck(seed)?;
            println!(
                "checked {} scalars, max relative error {:.3e} at {:?}",
                r.param_count, r.max_rel_error, r.worst_index
            );
        }
        Command::Run(c) => {
            let mut p = Pipeline::new(load_config(&c)?)?;
            print!("{}", p.run()?);
            print_timings(&p);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
