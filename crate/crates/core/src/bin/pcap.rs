use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use pcap_core::capacity::capacity;
use pcap_core::coarea::coarea_integral;
use pcap_core::eigen::{dirichlet_eigenvalue_with, neumann_eigenvalue_with, steklov_eigenvalue_with, EigenOptions};
use pcap_core::energy::{Exponent, Potential};
use pcap_core::graph::{build_domain, generate, load_domain, load_graph, save_graph, write_graph, Domain, Family, VertexSubset};
use pcap_core::harness::{run_corpus, write_reports, CorpusConfig, Selection};
use pcap_core::isocap::{alpha_closed_with, alpha_dirichlet_with, DomainConstants, IsocapOptions, IsocapResult};
use pcap_core::Result;

#[derive(Parser)]
#[command(name = "pcap", version, about = "Graph p-capacities, isocapacitary constants and p-Laplacian eigenvalues")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a graph from a named family, e.g. `gen grid 3 4`.
    Gen {
        family: String,
        #[arg(allow_negative_numbers = true)]
        params: Vec<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Capacity between two vertex sets.
    Cap {
        #[command(flatten)]
        input: Input,
        #[arg(short = 'A', num_args = 1.., required = true)]
        a: Vec<String>,
        #[arg(short = 'B', num_args = 1.., required = true)]
        b: Vec<String>,
    },
    /// Isocapacitary constant of a domain or a closed graph.
    Isocap {
        #[arg(value_enum)]
        kind: IsocapKind,
        #[command(flatten)]
        input: Input,
        #[arg(long, conflicts_with = "heuristic")]
        exhaustive: bool,
        #[arg(long)]
        heuristic: bool,
    },
    /// First (nonzero) eigenvalue.
    Eig {
        #[arg(value_enum)]
        kind: EigKind,
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        restarts: usize,
    },
    /// Both sides of the coarea inequality for random potentials.
    Coarea {
        #[command(flatten)]
        input: Input,
        #[arg(short, long)]
        a: f64,
        #[arg(long, default_value_t = 1)]
        random_f: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Run theorem verification over a corpus and write a report.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        /// TOML corpus configuration; the built-in corpus when omitted.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct Input {
    #[arg(short, long)]
    graph: PathBuf,
    /// File listing the interior vertex ids; the closed graph when omitted.
    #[arg(short, long)]
    domain: Option<PathBuf>,
    #[arg(short, long)]
    p: f64,
}

impl Input {
    fn load(&self) -> Result<(Domain, Exponent)> {
        let g = load_graph(&self.graph)?;
        let d = match &self.domain {
            Some(path) => build_domain(&g, &load_domain(&g, path)?)?,
            None => Domain::closed(&g)?,
        };
        Ok((d, Exponent::new(self.p)?))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum IsocapKind {
    #[value(name = "D")]
    Dirichlet,
    #[value(name = "N")]
    Neumann,
    #[value(name = "S")]
    Steklov,
    Closed,
}

#[derive(Clone, Copy, ValueEnum)]
enum EigKind {
    Dirichlet,
    Neumann,
    Steklov,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Dirichlet,
    Neumann,
    Steklov,
    Infinite,
    All,
}

fn ids(d: &Domain, s: &VertexSubset) -> Vec<String> {
    s.iter().map(|x| d.graph().id(x).to_string()).collect()
}

fn isocap_json(d: &Domain, name: &str, r: &IsocapResult) -> serde_json::Value {
    json!({
        "constant": name,
        "value": r.value,
        "witness_a": ids(d, &r.witness_a),
        "witness_b": r.witness_b.as_ref().map(|b| ids(d, b)),
        "capacity_at_witness": r.capacity_at_witness,
        "pairs_examined": r.pairs_examined,
        "exhaustive": r.exhaustive,
    })
}

fn emit(out: &mut impl Write, v: &serde_json::Value) -> Result<()> {
    writeln!(out, "{v}")?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Gen { family, params, output } => {
            let g = generate(&Family::from_parts(&family, &params)?)?;
            match output {
                Some(path) => save_graph(&g, path)?,
                None => write!(out, "{}", write_graph(&g))?,
            }
        }
        Command::Cap { input, a, b } => {
            let (d, p) = input.load()?;
            let (sa, sb) = (d.subset(&a)?, d.subset(&b)?);
            let r = capacity(&d, &sa, &sb, p)?;
            let potential = r.potential.as_ref().map(|f| {
                (0..d.len()).map(|x| (d.graph().id(x).to_string(), json!(f[x]))).collect::<serde_json::Map<_, _>>()
            });
            emit(
                &mut out,
                &json!({
                    "capacity": r.value.finite(),
                    "infinite": r.value.is_infinite(),
                    "iterations": r.iterations,
                    "residual": r.residual,
                    "ill_conditioned": r.ill_conditioned,
                    "potential": potential,
                }),
            )?;
        }
        Command::Isocap { kind, input, exhaustive: _, heuristic } => {
            let (d, p) = input.load()?;
            let opts = IsocapOptions { heuristic, ..Default::default() };
            match kind {
                IsocapKind::Dirichlet => emit(&mut out, &isocap_json(&d, "dirichlet", &alpha_dirichlet_with(&d, p, &opts)?))?,
                IsocapKind::Closed => emit(&mut out, &isocap_json(&d, "closed", &alpha_closed_with(d.graph(), p, &opts)?))?,
                IsocapKind::Neumann => {
                    let c = DomainConstants::new(&d, p, &opts)?;
                    emit(&mut out, &isocap_json(&d, "neumann", &c.neumann(&d)?))?;
                    emit(&mut out, &isocap_json(&d, "neumann-bar", &c.neumann_bar(&d)?))?;
                }
                IsocapKind::Steklov => {
                    let c = DomainConstants::new(&d, p, &opts)?;
                    emit(&mut out, &isocap_json(&d, "steklov", &c.steklov(&d)?))?;
                    emit(&mut out, &isocap_json(&d, "steklov-bar", &c.steklov_bar(&d)?))?;
                }
            }
        }
        Command::Eig { kind, input, seed, restarts } => {
            let (d, p) = input.load()?;
            let opts = EigenOptions { seed, restarts, ..Default::default() };
            let r = match kind {
                EigKind::Dirichlet => dirichlet_eigenvalue_with(&d, p, &opts)?,
                EigKind::Neumann => neumann_eigenvalue_with(&d, p, &opts)?,
                EigKind::Steklov => steklov_eigenvalue_with(&d, p, &opts)?,
            };
            let f: serde_json::Map<_, _> = (0..d.len()).map(|x| (d.graph().id(x).to_string(), json!(r.eigenfunction[x]))).collect();
            emit(
                &mut out,
                &json!({
                    "value": r.value,
                    "residual": r.residual,
                    "method": r.method,
                    "restarts_used": r.restarts_used,
                    "ill_conditioned": r.ill_conditioned,
                    "eigenfunction": f,
                }),
            )?;
        }
        Command::Coarea { input, a, random_f, seed } => {
            let (d, p) = input.load()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ok = true;
            for _ in 0..random_f {
                let f = Potential::new(&d, (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
                let c = coarea_integral(&d, &f, a, p)?;
                ok &= c.holds();
                emit(&mut out, &json!({ "integral": c.integral, "energy": c.energy, "constant": c.constant, "slack": c.slack, "holds": c.holds() }))?;
            }
            return Ok(ok);
        }
        Command::Verify { suite, config, output } => {
            let cfg = match config {
                Some(path) => CorpusConfig::load(&path)?,
                None => CorpusConfig::default(),
            }
            .with_env_seed()?;
            let selection = Selection::parse(match suite {
                Suite::Dirichlet => "dirichlet",
                Suite::Neumann => "neumann",
                Suite::Steklov => "steklov",
                Suite::Infinite => "infinite",
                Suite::All => "all",
            })?;
            let run = run_corpus(&cfg, selection)?;
            match output {
                Some(path) => write_reports(BufWriter::new(File::create(path)?), &cfg.header(), &run.reports)?,
                None => write_reports(&mut out, &cfg.header(), &run.reports)?,
            }
            for (instance, message) in &run.errors {
                eprintln!("error: {instance}: {message}");
            }
            for family in &run.non_monotone {
                eprintln!("error: {family}: eigenvalues along the exhaustion are not non-increasing");
            }
            let failed = run.reports.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                eprintln!("{failed} of {} brackets failed", run.reports.len());
            }
            return Ok(run.all_pass());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
