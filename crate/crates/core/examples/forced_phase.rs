//! Forcing with z = k / u: the phase path, the integrated-form residual and
//! the agreement with direct time integration.

use equity_dynamics::dynamics::ModelParams;
use equity_dynamics::forcing::{
    cross_check, integrate_forced_phase, trace_forced_arcs, verify_master4, PhaseSettings,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = ModelParams::new(1.0, 1.0);
    let settings = PhaseSettings::default();
    let (u0, v0, c1) = (1.0, 1.0, -0.5);
    let w0 = (c1 + v0 * (v0 + 2.0)) / (2.0 * u0 * v0);

    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>10}",
        "k", "v(u=3)", "C drift", "residual", "x1 error"
    );
    for k in [0.0, 0.001, 0.01, 0.05] {
        let path = integrate_forced_phase(u0, v0, w0, k, &params, 3.0, &settings)?;
        let end = path.points.last().unwrap();
        let drift = path.functional().last().unwrap() - path.c1;
        let residual = verify_master4(&path, &|u| k / u, &params)?;
        let check = cross_check(&path, k, &params, 1e-11)?;
        println!(
            "{k:>6} {:>10.6} {:>10.2e} {:>10.2e} {:>10.2e}",
            end.v, drift, residual.max_abs, check.max_x1_error
        );
    }

    // arcs joined across v = 0
    let arcs = trace_forced_arcs(
        0.5,
        0.2,
        (c1 + 0.2 * 2.2) / (2.0 * 0.5 * 0.2),
        0.01,
        &params,
        20.0,
        4,
        &settings,
    )?;
    for (i, arc) in arcs.iter().enumerate() {
        let (a, b) = (arc.points.first().unwrap(), arc.points.last().unwrap());
        println!(
            "arc {i}: ({:.3}, {:.3}) -> ({:.3}, {:.3}), {:?}",
            a.u, a.v, b.u, b.v, arc.stop
        );
    }
    Ok(())
}
