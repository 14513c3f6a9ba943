//! Searching z = k / u strategies for the market maker under a regularity
//! cap and a loss-rate floor.

use equity_dynamics::control::{search_strategies, ControlProblem};
use equity_dynamics::dynamics::matched_initial_state;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = ControlProblem::default();
    let start = matched_initial_state(0.2, 0.5, 1.0, &problem.params)?;
    let result = search_strategies(&problem, &start, 57, 0)?;

    println!(
        "{} evaluations, {} feasible",
        result.evaluations,
        result.feasible.len()
    );
    for e in result.feasible.iter().take(5) {
        println!(
            "k = {:>8.5}  |rho| = {:.4}  regularity = {:.4}  margin = {:.4}",
            e.strategy_param.unwrap(),
            e.objective.unwrap_or(f64::NAN),
            e.regularity,
            e.margin
        );
    }
    if let Some(worst) = result
        .infeasible
        .iter()
        .max_by(|a, b| a.regularity_excess.total_cmp(&b.regularity_excess))
    {
        println!(
            "most violating: k = {:.4}, regularity {:.4} exceeds U = {} by {:.4}",
            worst.strategy_param.unwrap(),
            worst.regularity,
            problem.params.regularity_bound,
            worst.regularity_excess
        );
    }

    for u in [0.3, 0.15, 0.05] {
        let mut p = problem.clone();
        p.params.regularity_bound = u;
        let r = search_strategies(&p, &start, 41, 0)?;
        let ks = r.feasible_params();
        match (ks.first(), ks.last()) {
            (Some(lo), Some(hi)) => {
                println!("U = {u}: {} feasible, k in [{lo:.3}, {hi:.3}]", ks.len())
            }
            _ => println!("U = {u}: none feasible"),
        }
    }
    Ok(())
}
