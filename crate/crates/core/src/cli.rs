//! Command-line front end: scenario sweeps over controllers and headings.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rayon::prelude::*;

use crate::output::write_run;
use crate::scenario::{load_scenario, ScenarioConfig};
use crate::simulator::{run_scenario, ControllerKind};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ControllerArg {
    Hocbf,
    Sacbf,
    #[value(name = "r-sacbf")]
    RSacbf,
    All,
}

impl ControllerArg {
    fn kinds(self) -> Vec<ControllerKind> {
        match self {
            ControllerArg::Hocbf => vec![ControllerKind::Hocbf],
            ControllerArg::Sacbf => vec![ControllerKind::Sacbf],
            ControllerArg::RSacbf => vec![ControllerKind::RSacbf],
            ControllerArg::All => ControllerKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sacbf", version, about = "Run sampling-aware CBF scenarios")]
pub struct Cli {
    /// Scenario file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Controller to run; defaults to the one named in the scenario.
    #[arg(long, value_enum)]
    pub controller: Option<ControllerArg>,
    /// Initial heading in radians; repeat for a sweep. Defaults to the
    /// scenario's heading list.
    #[arg(long, allow_negative_numbers = true)]
    pub heading: Vec<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write dense psi and trajectory series for plotting.
    #[arg(long)]
    pub emit_figure_data: bool,
    /// Do not fail on audit violations.
    #[arg(long)]
    pub no_strict: bool,
}

/// A fully resolved set of runs.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub scenario_path: PathBuf,
    pub base: ScenarioConfig,
    pub controllers: Vec<ControllerKind>,
    pub headings: Vec<Option<f64>>,
    pub out: PathBuf,
    pub jobs: usize,
    pub figures: bool,
    pub strict: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub controller: ControllerKind,
    pub heading: Option<f64>,
    pub dir: PathBuf,
    pub result: std::result::Result<RunStats, String>,
}

#[derive(Clone, Debug)]
pub struct RunStats {
    pub infeasible_steps: usize,
    pub audit_violations: usize,
}

impl RunManifest {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        if cli.jobs == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        let mut base = load_scenario(&cli.scenario)?;
        if let Some(seed) = cli.seed {
            base = base.with_seed(seed);
        }
        let controllers = match cli.controller {
            Some(c) => c.kinds(),
            None => vec![base.controller],
        };
        let headings: Vec<Option<f64>> = if !cli.heading.is_empty() {
            cli.heading.iter().map(|h| Some(*h)).collect()
        } else if !base.headings.is_empty() {
            base.headings.iter().map(|h| Some(*h)).collect()
        } else {
            vec![None]
        };
        for h in headings.iter().flatten() {
            base.clone().with_heading(*h)?.validate()?;
        }
        Ok(RunManifest {
            scenario_path: cli.scenario.clone(),
            base,
            controllers,
            headings,
            out: cli.out.clone(),
            jobs: cli.jobs,
            figures: cli.emit_figure_data,
            strict: !cli.no_strict,
        })
    }

    pub fn run_dir(
        &self,
        controller: ControllerKind,
        index: usize,
        heading: Option<f64>,
    ) -> PathBuf {
        let label = match heading {
            Some(h) => format!("heading_{index}_{h:.4}"),
            None => format!("heading_{index}_default"),
        };
        self.out.join(controller.as_str()).join(label)
    }

    fn run_one(
        &self,
        controller: ControllerKind,
        index: usize,
        heading: Option<f64>,
    ) -> RunOutcome {
        let dir = self.run_dir(controller, index, heading);
        let result = (|| -> Result<RunStats> {
            let mut config = self.base.clone().with_controller(controller);
            if let Some(h) = heading {
                config = config.with_heading(h)?;
            }
            let trace = run_scenario(&config)?;
            let audit = write_run(&trace, &dir, self.figures)?;
            Ok(RunStats {
                infeasible_steps: trace.summary.infeasible_steps,
                audit_violations: audit.violations.len(),
            })
        })()
        .map_err(|e| e.to_string());
        RunOutcome {
            controller,
            heading,
            dir,
            result,
        }
    }

    /// Executes every (controller, heading) pair.
    pub fn execute(&self) -> Result<Vec<RunOutcome>> {
        let jobs: Vec<(ControllerKind, usize, Option<f64>)> = self
            .controllers
            .iter()
            .flat_map(|&c| {
                self.headings
                    .iter()
                    .enumerate()
                    .map(move |(i, &h)| (c, i, h))
            })
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(pool.install(|| {
            jobs.par_iter()
                .map(|&(c, i, h)| self.run_one(c, i, h))
                .collect()
        }))
    }
}

/// Process exit status for a finished sweep.
pub fn exit_status(outcomes: &[RunOutcome], strict: bool) -> i32 {
    let failed = outcomes.iter().any(|o| o.result.is_err());
    let audited = outcomes
        .iter()
        .any(|o| matches!(&o.result, Ok(s) if s.audit_violations > 0));
    if failed {
        2
    } else if strict && audited {
        1
    } else {
        0
    }
}

fn describe(o: &RunOutcome, out: &Path) -> String {
    let dir = o
        .dir
        .strip_prefix(out)
        .unwrap_or(&o.dir)
        .display()
        .to_string();
    match &o.result {
        Ok(s) => format!(
            "{dir}: ok (infeasible steps {}, audit violations {})",
            s.infeasible_steps, s.audit_violations
        ),
        Err(e) => format!("{dir}: error: {e}"),
    }
}

/// Parses arguments, runs the sweep and reports; returns the exit status.
pub fn run_cli<I, T>(args: I) -> i32
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
    let manifest = match RunManifest::from_cli(&cli) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("sacbf: {e}");
            return 2;
        }
    };
    let outcomes = match manifest.execute() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("sacbf: {e}");
            return 2;
        }
    };
    for o in &outcomes {
        match o.result {
            Ok(_) => println!("{}", describe(o, &manifest.out)),
            Err(_) => eprintln!("{}", describe(o, &manifest.out)),
        }
    }
    exit_status(&outcomes, manifest.strict)
}
