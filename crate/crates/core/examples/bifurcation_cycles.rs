//! The four cycles of the C1 = -0.5 diagram and how a tiny offset at E
//! decides between them and an explosion.

use equity_dynamics::dynamics::IntegratorSettings;
use equity_dynamics::phase::{
    trace_cycle, AlwaysDetour, BifurcationPoint, Branch, CycleOutcome, Label, NeverDetour,
    PhaseCurve, RandomBranches,
};
use equity_dynamics::reduction::integrate_reduced;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let curve = PhaseCurve::new(-0.5, 1.0)?;

    let inner = trace_cycle(&curve, &mut NeverDetour, Label::B, 10)?;
    let outer = trace_cycle(&curve, &mut AlwaysDetour, Label::B, 10)?;
    // detour at C only, then only at D
    let mut only_c = |p: BifurcationPoint, _: f64, _: f64| {
        if p == BifurcationPoint::C {
            Branch::Detour
        } else {
            Branch::Continue
        }
    };
    let left = trace_cycle(&curve, &mut only_c, Label::B, 10)?;
    let mut only_d = |p: BifurcationPoint, _: f64, _: f64| {
        if p == BifurcationPoint::D {
            Branch::Detour
        } else {
            Branch::Continue
        }
    };
    let right = trace_cycle(&curve, &mut only_d, Label::B, 10)?;
    for t in [&inner, &left, &right, &outer] {
        println!(
            "{:<8} {:?}, {} path samples",
            t.word(),
            t.outcome,
            t.path.len()
        );
    }

    let mut random = RandomBranches::new(0.5, 0.1, 42);
    for _ in 0..5 {
        let t = trace_cycle(&curve, &mut random, Label::B, 10)?;
        match t.outcome {
            CycleOutcome::Exploded { from, .. } => println!("{:<8} explodes at {from}", t.word()),
            _ => println!("{:<8} closes", t.word()),
        }
    }

    // two starts 2e-6 apart near E
    let e = -1.0 + 1.5f64.sqrt();
    let settings = IntegratorSettings::adaptive(1e-12).sampled(0.05);
    for dv in [1e-6, -1e-6] {
        let tr = integrate_reduced(0.01, e + dv, -0.5, 5.0, &settings)?;
        let last = tr.points.last().unwrap();
        println!(
            "v0 = E {:+e}: {} at t = {:.2}, (u, v) = ({:.4}, {:.4})",
            dv,
            tr.termination.label(),
            tr.times.last().unwrap(),
            last.u,
            last.v
        );
    }
    Ok(())
}
