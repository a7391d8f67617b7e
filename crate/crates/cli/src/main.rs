use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use slipdrag::energy::{drag_surface, energy_breakdown, EnergyBreakdown};
use slipdrag::export::{export_fields, write_text, Manifest};
use slipdrag::geometry::measure;
use slipdrag::optimizer::optimize_with;
use slipdrag::scenario::{parse_scenario, Scenario, ScenarioError};
use slipdrag::stokes::assemble_and_solve;
use slipdrag::validation::{report_csv, run_suite, Suite};

#[derive(Parser)]
#[command(name = "slipdrag", version, about = "Stokes drag with Navier slip and obstacle shape search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the flow around the scenario obstacle and write its fields.
    Solve {
        scenario: PathBuf,
        /// Output directory (default: the scenario's output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the energy and surface drag and their relative gap.
    Drag {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the shape search and write the trace and best obstacle.
    Optimize {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a batch of numerical checks and print a CSV report.
    Validate {
        #[arg(long, default_value = "full")]
        suite: String,
        #[arg(long, default_value = "runs/validate")]
        out: PathBuf,
    },
    /// Re-solve a finished run and write its field files.
    Export { run_dir: PathBuf },
}

/// Marks failures that exit with status 2.
#[derive(Debug)]
struct Invalid;

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("validation failed")
    }
}

impl std::error::Error for Invalid {}

fn load(path: &Path) -> Result<Scenario> {
    parse_scenario(path).map_err(|e| {
        let invalid = matches!(e, ScenarioError::Parse(_) | ScenarioError::Validation(_));
        let err = anyhow::Error::new(e).context(format!("reading {}", path.display()));
        if invalid {
            err.context(Invalid)
        } else {
            err
        }
    })
}

fn out_dir(s: &Scenario, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(&s.output.dir))
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn write_manifest(dir: &Path, s: &Scenario, outputs: Vec<String>) -> Result<()> {
    let m = Manifest::new(&command_line(), s, outputs);
    write_text(&dir.join("scenario.toml"), &s.to_toml())?;
    write_text(&dir.join("manifest.toml"), &m.to_toml())?;
    Ok(())
}

fn print_breakdown(b: &EnergyBreakdown) {
    println!("J               {:e}", b.j);
    println!("dissipation     {:e}", b.dissipation);
    println!("navier_bulk     {:e}", b.navier_bulk);
    println!("navier_screen   {:e}", b.navier_screen);
    println!("perimeter_terms {:e}", b.perimeter());
    println!("volume_term     {:e}", b.volume_term);
    println!("volume          {:e}", b.volume);
    if let Some(d) = b.drag_energy {
        println!("drag_energy     {d:e}");
    }
}

fn file_names(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect()
}

fn solve_and_export(s: &Scenario, dir: &Path) -> Result<(EnergyBreakdown, Vec<String>)> {
    let obstacle = s.obstacle()?;
    let phys = s.phys();
    let sol = assemble_and_solve(obstacle.grid(), &obstacle, &phys, &s.solver_options())?;
    for w in &sol.warnings {
        eprintln!("warning: {w:?}");
    }
    let b = energy_breakdown(&sol, &obstacle, &phys, s.objective.c, &s.penalty()?)?;
    let files = export_fields(&sol, &obstacle, dir, s.output.field_format)?;
    let mut outputs = file_names(&files);
    write_text(&dir.join("breakdown.toml"), &toml::to_string(&b)?)?;
    outputs.push("breakdown.toml".into());
    Ok((b, outputs))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { scenario, out } => {
            let s = load(&scenario)?;
            let dir = out_dir(&s, out);
            let (b, outputs) = solve_and_export(&s, &dir)?;
            print_breakdown(&b);
            write_manifest(&dir, &s, outputs)?;
            println!("wrote {}", dir.display());
        }
        Command::Drag { scenario, out } => {
            let s = load(&scenario)?;
            let obstacle = s.obstacle()?;
            let phys = s.phys();
            let sol = assemble_and_solve(obstacle.grid(), &obstacle, &phys, &s.solver_options())?;
            let b = energy_breakdown(&sol, &obstacle, &phys, s.objective.c, &s.penalty()?)?;
            let energy = b.drag_energy.context("drag needs a uniform nonzero far-field velocity")?;
            let surface = drag_surface(&sol, &obstacle, &phys)?;
            let gap = (surface - energy).abs() / energy;
            println!("drag_energy  {energy:e}");
            println!("drag_surface {surface:e}");
            println!("relative_gap {gap:e}");
            let dir = out_dir(&s, out);
            let report = format!("drag_energy = {energy:e}\ndrag_surface = {surface:e}\nrelative_gap = {gap:e}\n");
            write_text(&dir.join("drag.toml"), &report)?;
            write_manifest(&dir, &s, vec!["drag.toml".into()])?;
        }
        Command::Optimize { scenario, out } => {
            let s = load(&scenario)?;
            let dir = out_dir(&s, out);
            let problem = s.problem()?;
            let steps = problem.config.steps;
            let trace = optimize_with(&problem, |r| {
                if (r.step + 1) % 100 == 0 {
                    eprintln!("step {}/{steps}  best J {:e}", r.step + 1, r.best_j);
                }
            })?;
            write_text(&dir.join("trace.csv"), &trace.to_csv())?;
            let best = s.with_obstacle(&trace.best.0);
            write_text(&dir.join("best_scenario.toml"), &best.to_toml())?;
            let m = measure(&trace.best.0);
            println!(
                "steps {}  accepted {}  solver failures {}  stop {:?}",
                trace.records.len(),
                trace.accepted,
                trace.solver_failures,
                trace.stop
            );
            println!("initial J {:e}", trace.initial.j);
            print_breakdown(&trace.best.1);
            println!("perim_screen    {:e}", m.perim_screen);
            write_manifest(&dir, &s, vec!["trace.csv".into(), "best_scenario.toml".into()])?;
            println!("wrote {}", dir.display());
        }
        Command::Validate { suite, out } => {
            let suite: Suite = suite.parse()?;
            let records = run_suite(suite)?;
            let csv = report_csv(&records);
            print!("{csv}");
            write_text(&out.join("report.csv"), &csv)?;
            return Ok(records.iter().all(|r| r.pass));
        }
        Command::Export { run_dir } => {
            let best = run_dir.join("best_scenario.toml");
            let source = if best.exists() { best } else { run_dir.join("scenario.toml") };
            let s = load(&source)?;
            let (_, outputs) = solve_and_export(&s, &run_dir)?;
            for o in outputs {
                println!("wrote {}", run_dir.join(o).display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Invalid>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
