//! Integrate one matched trajectory and watch the integral of motion.
//!
//! Usage: `cargo run --example simulate_trajectory -- [C1] [v0]`

use equity_dynamics::dynamics::{
    integrate, matched_initial_state, motion_integral, Input, IntegratorSettings, ModelParams,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<f64>());
    let c1 = args.next().transpose()?.unwrap_or(-0.5);
    let v0 = args.next().transpose()?.unwrap_or(1.0);

    let params = ModelParams::new(1.0, 1.0);
    let u0 = 1.0;
    // a0 from the integral of motion: 2 u a - v (v + 2) = C1
    let a0 = (c1 + v0 * (v0 + 2.0)) / (2.0 * u0);
    let start = matched_initial_state(a0 / params.beta1, v0 / params.beta2, u0, &params)?;

    let settings = IntegratorSettings::adaptive(1e-10).sampled(0.25);
    let traj = integrate(&start, &Input::Zero, &params, 5.0, &settings)?;

    println!(
        "{:>6} {:>12} {:>12} {:>12} {:>14}",
        "t", "x1", "x2", "x4", "C1 drift"
    );
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let drift = motion_integral(s, &params) - c1;
        println!(
            "{t:>6.2} {:>12.6} {:>12.6} {:>12.6} {drift:>14.3e}",
            s.x1, s.x2, s.x4
        );
    }
    println!("stopped: {}", traj.termination.label());
    Ok(())
}
