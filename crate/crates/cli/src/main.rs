use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vkflex::export::read_grid;
use vkflex_cli::config::{ExperimentConfig, Pipeline};
use vkflex_cli::experiment::{export_problem, run_experiment, setup};
use vkflex_cli::verify::verify_ma;

#[derive(Parser)]
#[command(name = "vkflex", version, about = "Convex integration experiments for the von Karman system")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// One stage at the first (l, lambda) of the configuration.
    Stage(Common),
    /// Stages over the (l, lambda) grid with rate fits.
    Sweep(Common),
    /// Full flexibility run.
    Flex(Common),
    /// Monge-Ampere and VK residuals of a field dump, or of a fresh flex run.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Grid dump with fields `v` and `w`.
        #[arg(long)]
        fields: Option<PathBuf>,
    },
    /// Initial problem fields as CSV and structured-grid files.
    Export(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated tracked Hölder exponents.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_toml(&text)?
            }
            (None, Some(name)) => ExperimentConfig::from_preset(name)?,
            (None, None) => bail!("pass --config <path> or --preset <name>"),
        };
        if let Some(s) = self.seed {
            cfg.experiment.seed = s;
        }
        if let Some(a) = &self.alpha {
            cfg.experiment.alphas = a.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.experiment.out.clone().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out").join(&cfg.experiment.name))
    }

    fn install_threads(&self) -> Result<()> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
        }
        Ok(())
    }
}

fn run_pipeline(c: &Common, want: Pipeline) -> Result<bool> {
    c.install_threads()?;
    let mut cfg = c.load()?;
    cfg.experiment.pipeline = want;
    cfg.validate()?;
    let dir = c.out_dir(&cfg);
    let o = run_experiment(&cfg, Some(&dir))?;
    println!("{} ({:?}) -> {}", o.name, o.pipeline, dir.display());
    for ch in &o.checks {
        println!("  [{}] {}: {}", if ch.passed { "pass" } else { "FAIL" }, ch.name, ch.detail);
    }
    Ok(o.passed())
}

fn verify(c: &Common, fields: Option<&PathBuf>) -> Result<bool> {
    c.install_threads()?;
    let cfg = c.load()?;
    let problem = setup(&cfg)?;
    let f = problem
        .f
        .as_ref()
        .context("the configured problem has no Monge-Ampere right-hand side")?;
    let (v, w) = match fields {
        Some(path) => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let dump = read_grid(BufReader::new(file))?;
            let take = |name: &str| {
                dump.iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, f)| f.clone())
                    .with_context(|| format!("field {name} missing from the dump"))
            };
            (take("v")?, take("w")?)
        }
        None => {
            let mut flex = cfg.clone();
            flex.experiment.pipeline = Pipeline::Flex;
            let o = run_experiment(&flex, None)?;
            match o.artifacts {
                vkflex_cli::experiment::Artifacts::Flex { output, .. } => (output.v, output.w),
                _ => unreachable!("flex pipeline yields flex artifacts"),
            }
        }
    };
    let g = v.grid().clone();
    let a = problem.a.restrict(&g).context("field dump does not sit inside the problem grid")?;
    let r = verify_ma(&v, &w, &a, &f.restrict(&g)?)?;
    println!("vk residual   {:.6e}", r.vk);
    println!("weak residual {:.6e}", r.weak);
    for (i, b) in r.per_bump.iter().enumerate() {
        println!("  bump {i}: {b:.6e}");
    }
    let e = &cfg.expect;
    Ok(match e.ma_factor {
        Some(k) => r.weak <= k * r.vk + e.ma_offset,
        None => true,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.verb {
        Verb::Stage(c) => run_pipeline(c, Pipeline::Stage),
        Verb::Sweep(c) => run_pipeline(c, Pipeline::Sweep),
        Verb::Flex(c) => run_pipeline(c, Pipeline::Flex),
        Verb::Verify { common, fields } => verify(common, fields.as_ref()),
        Verb::Export(c) => c.install_threads().and_then(|_| {
            let cfg = c.load()?;
            let path = export_problem(&cfg, &c.out_dir(&cfg))?;
            println!("wrote {}", path.display());
            Ok(true)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
