//! Subcommand execution shared by the `qfund` binary and the tests.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::derivation::{
    ci_residual, ci_separated_residuals, series_solve_uniqueness_ode, uniqueness_ode_residual_g,
    uniqueness_ode_residual_h, uniqueness_scan,
};
use crate::equilibrium::{solve_many, utility, SolverOptions};
use crate::exec::Execution;
use crate::mechanism::ContributionProfile;
use crate::report::{
    GoodReport, OdeReport, RunReport, SeriesReport, REPORT_VERSION, TOOL_VERSION,
};
use crate::scenario::{Scenario, ScenarioError};
use crate::table::{format_sig, Table};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

const DEFAULT_SCAN_TOLERANCE: f64 = 1e-9;
const WELFARE_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fund,
    Equilibrium,
    Optimal,
    Welfare,
    ScanQ,
    VerifyCi,
    VerifyOde,
    SeriesDemo,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fund => "fund",
            Command::Equilibrium => "equilibrium",
            Command::Optimal => "optimal",
            Command::Welfare => "welfare",
            Command::ScanQ => "scan-q",
            Command::VerifyCi => "verify-ci",
            Command::VerifyOde => "verify-ode",
            Command::SeriesDemo => "series-demo",
        }
    }
}

/// A grid of positive reals: `start:stop:step` or a comma-separated list.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("'{t}' is not a number"))
        };
        let parts: Vec<&str> = s.split(':').collect();
        let points = match parts.as_slice() {
            [start, stop, step] => {
                let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
                if !(step > 0.0 && stop >= start) {
                    return Err(format!("grid '{s}' needs stop >= start and step > 0"));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                // snap to 12 significant digits so decimal grids land on decimals
                (0..=n)
                    .map(|i| format_sig(start + i as f64 * step).parse().expect("formatted number"))
                    .collect()
            }
            [list] => list.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
            _ => return Err(format!("grid '{s}' must be start:stop:step or a comma list")),
        };
        if points.is_empty() {
            return Err("grid is empty".into());
        }
        Ok(Grid(points))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFlags {
    pub tol: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub grid: Option<Grid>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub tables: Vec<Table>,
    /// False when some equilibrium solve hit its sweep limit.
    pub converged: bool,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            EXIT_OK
        } else {
            EXIT_NO_CONVERGENCE
        }
    }

    /// Writes `report.json` and one CSV per table into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report.to_json())?;
        for t in &self.tables {
            std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(e) => e.exit_code(),
            RunError::Model(Error::NoConvergence { .. }) => EXIT_NO_CONVERGENCE,
            RunError::Model(_) | RunError::Usage(_) => EXIT_VALIDATION,
            RunError::Io(_) => EXIT_IO,
        }
    }
}

fn fixed_contributions(scenario: &Scenario) -> Result<Vec<(&String, &ContributionProfile)>, RunError> {
    let picked: Vec<_> = scenario
        .goods
        .iter()
        .filter_map(|g| scenario.contributions.get(g).map(|c| (g, c)))
        .collect();
    if picked.is_empty() {
        return Err(RunError::Usage(
            "this command needs fixed contributions: add a [contributions] table".into(),
        ));
    }
    Ok(picked)
}

fn solver_options(scenario: &Scenario, flags: &RunFlags) -> Result<SolverOptions, RunError> {
    let mut opts = scenario.solver;
    if let Some(t) = flags.tol {
        opts.foc_tolerance = t;
    }
    if let Some(m) = flags.max_sweeps {
        opts.max_sweeps = m;
    }
    opts.validate()?;
    Ok(opts)
}

fn grid_or(flags: &RunFlags, default: &[f64]) -> Vec<f64> {
    flags
        .grid
        .as_ref()
        .map(|g| g.0.clone())
        .unwrap_or_else(|| default.to_vec())
}

/// Runs one subcommand against a validated scenario.
pub fn run(command: Command, scenario: &Scenario, flags: &RunFlags) -> Result<RunOutput, RunError> {
    let started = Instant::now();
    let mech = scenario.mechanism.spec();
    let mut report = RunReport {
        report_version: REPORT_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        command: command.name().to_string(),
        mechanism: scenario.mechanism.into(),
        goods: Vec::new(),
        separated: None,
        ode: None,
        series: None,
        timing_ms: 0.0,
    };
    let mut tables = Vec::new();
    let mut converged = true;

    match command {
        Command::Fund => {
            for (good, c) in fixed_contributions(scenario)? {
                let society = scenario.society_for(good);
                let funding = mech.funding(c);
                let utilities = (0..c.len())
                    .map(|i| utility(&mech, &society, c, i))
                    .collect::<Result<Vec<_>, _>>()?;
                report.goods.push(GoodReport {
                    good: good.clone(),
                    funding: Some(funding),
                    contributions: Some(c.as_slice().to_vec()),
                    welfare: Some(society.welfare(funding)?),
                    utilities: Some(utilities),
                    ..GoodReport::default()
                });
            }
        }
        Command::Equilibrium => {
            let opts = solver_options(scenario, flags)?;
            let societies: Vec<_> = scenario.goods.iter().map(|g| scenario.society_for(g)).collect();
            let results = solve_many(&mech, &societies, &opts, Execution::default());
            let mut table = Table::new("equilibrium", &["good", "citizen", "contribution"]);
            for (gi, ((good, society), result)) in
                scenario.goods.iter().zip(&societies).zip(results).enumerate()
            {
                let eq = result?;
                converged &= eq.converged;
                let c = &eq.contributions;
                let utilities = (0..c.len())
                    .map(|i| utility(&mech, society, c, i))
                    .collect::<Result<Vec<_>, _>>()?;
                for (i, &ci) in c.as_slice().iter().enumerate() {
                    table.push(vec![gi as f64, i as f64, ci]);
                }
                report.goods.push(GoodReport {
                    good: good.clone(),
                    funding: Some(eq.funding),
                    optimal_funding: Some(eq.optimal_funding),
                    efficiency_gap: Some(eq.efficiency_gap),
                    contributions: Some(c.as_slice().to_vec()),
                    foc_residuals: Some(eq.foc_residuals.clone()),
                    welfare: Some(society.welfare(eq.funding)?),
                    utilities: Some(utilities),
                    marginal_sum: society.marginal_sum(eq.funding).ok(),
                    converged: Some(eq.converged),
                    sweeps_used: Some(eq.sweeps_used),
                    contributions_determined: Some(eq.contributions_determined),
                    ..GoodReport::default()
                });
            }
            tables.push(table);
        }
        Command::Optimal => {
            for good in &scenario.goods {
                let society = scenario.society_for(good);
                let f = society.optimal_funding()?;
                report.goods.push(GoodReport {
                    good: good.clone(),
                    optimal_funding: Some(f),
                    welfare: Some(society.welfare(f)?),
                    ..GoodReport::default()
                });
            }
        }
        Command::Welfare => {
            let societies: Vec<_> = scenario.goods.iter().map(|g| scenario.society_for(g)).collect();
            let optima = societies
                .iter()
                .map(|s| s.optimal_funding())
                .collect::<Result<Vec<_>, _>>()?;
            let grid = match &flags.grid {
                Some(g) => g.0.clone(),
                None => {
                    let top = 2.0 * optima.iter().copied().fold(0.5, f64::max);
                    (0..WELFARE_POINTS)
                        .map(|i| top * i as f64 / (WELFARE_POINTS - 1) as f64)
                        .collect()
                }
            };
            let mut columns = vec!["funding".to_string()];
            columns.extend(scenario.goods.iter().map(|g| format!("welfare_{g}")));
            let column_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
            let mut table = Table::new("welfare", &column_refs);
            for &f in &grid {
                let mut row = vec![f];
                for s in &societies {
                    row.push(s.welfare(f)?);
                }
                table.push(row);
            }
            tables.push(table);
            for ((good, s), f) in scenario.goods.iter().zip(&societies).zip(optima) {
                report.goods.push(GoodReport {
                    good: good.clone(),
                    optimal_funding: Some(f),
                    welfare: Some(s.welfare(f)?),
                    ..GoodReport::default()
                });
            }
        }
        Command::ScanQ => {
            let grid = grid_or(flags, &Grid::from_str("0.5:4:0.01").expect("valid grid").0);
            let tol = flags.tol.unwrap_or(DEFAULT_SCAN_TOLERANCE);
            for (good, c) in fixed_contributions(scenario)? {
                let scan = uniqueness_scan(c, &grid, tol)?;
                let mut table = Table::new(format!("scan_q_{good}"), &["q", "hoelder_gap"]);
                for p in &scan.points {
                    table.push(vec![p.q, p.gap]);
                }
                tables.push(table);
                report.goods.push(GoodReport {
                    good: good.clone(),
                    contributions: Some(c.as_slice().to_vec()),
                    scan: Some(scan),
                    ..GoodReport::default()
                });
            }
        }
        Command::VerifyCi => {
            for (good, c) in fixed_contributions(scenario)? {
                let residuals = (0..c.len())
                    .map(|j| ci_residual(&mech, c, j))
                    .collect::<Result<Vec<_>, _>>()?;
                report.goods.push(GoodReport {
                    good: good.clone(),
                    contributions: Some(c.as_slice().to_vec()),
                    ci_residuals: Some(residuals),
                    ..GoodReport::default()
                });
            }
            let grid = grid_or(flags, &[0.5, 1.0, 2.0, 4.0]);
            report.separated = Some(ci_separated_residuals(&mech, &grid, None)?);
        }
        Command::VerifyOde => {
            let grid = grid_or(flags, &[0.5, 1.0, 2.0]);
            let weight = uniqueness_ode_residual_h(&mech.weight, &grid)?;
            let (lever, lever_error) = match uniqueness_ode_residual_g(&mech.lever, &grid) {
                Ok(r) => (Some(r), None),
                Err(e @ Error::DegenerateSecondDerivative { .. }) => (None, Some(e.to_string())),
                Err(e) => return Err(e.into()),
            };
            report.ode = Some(OdeReport {
                weight,
                lever,
                lever_error,
            });
        }
        Command::SeriesDemo => {
            let p = scenario.series.unwrap_or_default();
            let solution = series_solve_uniqueness_ode(p.k, p.y0, p.h0, p.d0, p.order)?;
            let grid = match &flags.grid {
                Some(g) => g.0.clone(),
                None => {
                    let (lo, hi) = solution.trust_interval;
                    (0..=40).map(|i| lo + (hi - lo) * i as f64 / 40.0).collect()
                }
            };
            let mut table = Table::new("series", &["y", "h"]);
            for &y in &grid {
                table.push(vec![y, solution.evaluate(y)?]);
            }
            tables.push(table);
            let max_coefficient_residual = solution
                .ode_coefficient_residuals()
                .iter()
                .fold(0.0f64, |m, r| m.max(r.abs()));
            report.series = Some(SeriesReport {
                solution,
                max_coefficient_residual,
            });
        }
    }

    report.timing_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(RunOutput {
        report,
        tables,
        converged,
    })
}
