use clap::Parser;
use lcc_core::verify::{end_to_end_suite, head_suite, ops_suite, CheckReport};

use super::CliError;

#[derive(Parser)]
pub struct Args {
    /// ops | head | end2end | all
    #[arg(long, default_value = "all")]
    pub scope: String,
    /// Random instances per check (defaults: ops 100, head 20, end2end 3).
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut reports: Vec<CheckReport> = Vec::new();
    let add = |reports: &mut Vec<CheckReport>,
               result: Result<Vec<CheckReport>, lcc_core::tensor::TensorError>|
     -> Result<(), CliError> {
        reports.extend(result?);
        Ok(())
    };
    match args.scope.as_str() {
        "ops" => add(&mut reports, ops_suite(args.seed, args.instances.unwrap_or(100)))?,
        "head" => add(&mut reports, head_suite(args.seed, args.instances.unwrap_or(20)))?,
        "end2end" => add(
            &mut reports,
            end_to_end_suite(args.seed, args.instances.unwrap_or(3)),
        )?,
        "all" => {
            add(&mut reports, ops_suite(args.seed, args.instances.unwrap_or(100)))?;
            add(&mut reports, head_suite(args.seed, args.instances.unwrap_or(20)))?;
            add(
                &mut reports,
                end_to_end_suite(args.seed, args.instances.unwrap_or(3)),
            )?;
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown scope '{other}' (ops|head|end2end|all)"
            )))
        }
    }

    let mut failures = 0usize;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status}  {:<24} max_rel_err {:.3e}  tol {:.0e}  ({} instances)",
            r.name, r.max_error, r.tolerance, r.instances
        );
        if !r.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::Numerical(format!(
            "{failures} gradient check(s) exceeded tolerance"
        )));
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}
