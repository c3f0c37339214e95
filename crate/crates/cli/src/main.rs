use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use grassflow::ensembles::BetaForm;
use grassflow::verify::CheckId;
use grassflow_cli::{
    run, BetaConfig, CheckConfig, LyapunovConfig, ModelConfig, ModelKind, PerturbConfig, RunConfig, SimulateConfig,
    Start, VerifyRunConfig,
};

/// Random perturbations of Grassmannian dynamics near a stable subspace.
#[derive(Parser, Debug)]
#[command(name = "grassflow", version)]
struct Cli {
    /// JSON config merged over the flags; its keys win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the JSON document here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write the CSV table (trajectory or batch means) here.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    s: Option<f64>,
    /// uniform_pm1 | bernoulli_pm1 | uniform_interval:<h>
    #[arg(long)]
    omega: Option<String>,
    /// Comma-separated κ for the haar and iid models.
    #[arg(long, value_delimiter = ',')]
    kappa: Option<Vec<f64>>,
    #[arg(long = "La")]
    la: Option<usize>,
    #[arg(long = "Lb")]
    lb: Option<usize>,
    #[arg(long = "Lc")]
    lc: Option<usize>,
    /// identity | zero | scaled:<c> | uniform:<lo>:<hi>
    #[arg(long)]
    a_law: Option<String>,
    #[arg(long)]
    b_law: Option<String>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    q: Option<usize>,
}

impl ModelArgs {
    fn given(&self) -> bool {
        self.model.is_some() || self.l.is_some() || self.kappa.is_some()
    }

    fn apply(self, m: &mut ModelConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { m.$f = v; } )* };
        }
        set!(model, l, s, omega, a_law, b_law, scale, lambda, q);
        if self.kappa.is_some() {
            m.kappa = self.kappa;
        }
        m.la = self.la.or(m.la);
        m.lb = self.lb.or(m.lb);
        m.lc = self.lc.or(m.lc);
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate E d(Q_T) and record one trajectory.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "T")]
        horizon: Option<u64>,
        #[arg(long)]
        traj: Option<usize>,
        #[arg(long)]
        record_every: Option<u64>,
        #[arg(long, value_enum)]
        start: Option<Start>,
        /// Ladder cuts; switches the CSV trajectory to a labelled pair run.
        #[arg(long, value_delimiter = ',')]
        ladder: Option<Vec<usize>>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate partial sums of Lyapunov exponents.
    Lyapunov {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        q_max: Option<usize>,
        #[arg(long = "N")]
        steps: Option<u64>,
        #[arg(long)]
        burn_in: Option<u64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        reflection: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Closed-form and Monte-Carlo β.
    Beta {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n_inner: Option<usize>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, value_parser = ["primal", "complementary"])]
        form: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate the hypotheses.
    Check {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Run the audit suite; exits nonzero on any violation.
    Verify {
        /// Checks to run (default: all).
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<String>>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Expansion maps and the eigenvalue expansion on random inputs.
    Perturb {
        #[arg(long = "L")]
        l: Option<usize>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        eig_size: Option<usize>,
        #[arg(long)]
        gap: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn from_flags(cmd: Command) -> Result<RunConfig> {
    Ok(match cmd {
        Command::Simulate {
            model,
            horizon,
            traj,
            record_every,
            start,
            ladder,
            beta,
            seed,
        } => {
            let mut c = SimulateConfig::default();
            model.apply(&mut c.model);
            c.horizon = horizon.unwrap_or(c.horizon);
            c.traj = traj.unwrap_or(c.traj);
            c.record_every = record_every.or(c.record_every);
            c.start = start.unwrap_or(c.start);
            c.ladder_cuts = ladder;
            c.beta = beta;
            c.seed = seed.unwrap_or(c.seed);
            RunConfig::Simulate(c)
        }
        Command::Lyapunov {
            model,
            q_max,
            steps,
            burn_in,
            replicas,
            reflection,
            seed,
        } => {
            let mut c = LyapunovConfig::default();
            model.apply(&mut c.model);
            c.q_max = q_max;
            c.steps = steps.unwrap_or(c.steps);
            c.burn_in = burn_in.unwrap_or(c.burn_in);
            c.replicas = replicas.unwrap_or(c.replicas);
            c.reflection = reflection;
            c.seed = seed.unwrap_or(c.seed);
            RunConfig::Lyapunov(c)
        }
        Command::Beta {
            model,
            n_inner,
            starts,
            iters,
            form,
            seed,
        } => {
            let mut c = BetaConfig::default();
            model.apply(&mut c.model);
            c.n_inner = n_inner.unwrap_or(c.n_inner);
            c.starts = starts.unwrap_or(c.starts);
            c.iters = iters.unwrap_or(c.iters);
            if form.as_deref() == Some("complementary") {
                c.form = BetaForm::Complementary;
            }
            c.seed = seed.unwrap_or(c.seed);
            RunConfig::Beta(c)
        }
        Command::Check { model, beta, eta } => {
            let mut c = CheckConfig::default();
            c.lambda = model.lambda.unwrap_or(c.lambda);
            c.q = model.q.unwrap_or(c.q);
            if model.given() {
                let mut m = ModelConfig::default();
                model.apply(&mut m);
                c.model = Some(m);
            }
            c.beta = beta;
            c.eta = eta;
            RunConfig::Check(c)
        }
        Command::Verify {
            checks,
            samples,
            dims,
            seed,
        } => {
            let mut c = VerifyRunConfig::default();
            if let Some(names) = checks {
                c.suite.checks = names
                    .iter()
                    .map(|n| CheckId::parse(n).with_context(|| format!("unknown check {n:?}")))
                    .collect::<Result<_>>()?;
            }
            c.suite.samples = samples.unwrap_or(c.suite.samples);
            c.suite.dims = dims.unwrap_or(c.suite.dims);
            c.seed = seed.unwrap_or(c.seed);
            RunConfig::Verify(c)
        }
        Command::Perturb {
            l,
            rank,
            lambda,
            samples,
            eig_size,
            gap,
            seed,
        } => {
            let mut c = PerturbConfig::default();
            c.l = l.unwrap_or(c.l);
            c.rank = rank.unwrap_or(c.rank);
            c.lambda = lambda.unwrap_or(c.lambda);
            c.samples = samples.unwrap_or(c.samples);
            c.eig_size = eig_size.unwrap_or(c.eig_size);
            c.gap = gap.unwrap_or(c.gap);
            c.seed = seed.unwrap_or(c.seed);
            RunConfig::Perturb(c)
        }
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = from_flags(cli.command)?;
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let overlay: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg = cfg.merged_with(&overlay)?;
    }
    if cli.print_config {
        println!("{}", cfg.to_json()?);
        return Ok(());
    }
    let out = run(&cfg)?;
    let text = serde_json::to_string_pretty(&out.json)?;
    match &cli.out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    if let (Some(p), Some(csv)) = (&cli.csv, &out.csv) {
        fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!("{}", out.summary);
    if !out.success {
        std::process::exit(1);
    }
    Ok(())
}
