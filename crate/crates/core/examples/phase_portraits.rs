//! Closed-form phase curves for the six characteristic values of C1.
//!
//! Writes `phase_c1_<value>.csv` (columns `v,u_plus,u_minus`) into the
//! directory given as the first argument, default `phase_out`.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use equity_dynamics::cli::{c1_tag, DEFAULT_PHASE_C1};
use equity_dynamics::phase::{features, grid_avoiding, write_curve_csv, PhaseCurve};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "phase_out".into()),
    );
    std::fs::create_dir_all(&dir)?;

    for c1 in DEFAULT_PHASE_C1 {
        let curve = PhaseCurve::new(c1, 1.0)?;
        let avoid: Vec<f64> = curve.singular_line().map(|(v, _)| v).into_iter().collect();
        let grid = grid_avoiding(-6.0, 4.0, 2001, &avoid, 1e-6);
        let path = dir.join(format!("phase_c1_{}.csv", c1_tag(c1)));
        write_curve_csv(&curve.sample(&grid), BufWriter::new(File::create(&path)?))?;

        let f = features(&curve);
        print!("C1 = {c1:>4}: {:?}", f.regime);
        if let (Some(v), Some(kind)) = (f.pole, f.pole_kind) {
            print!(", singular line v = {v:.6} ({kind:?})");
        }
        if let Some(b) = f.tangency {
            print!(", tangent to u = 0 at v = {b:.6}");
        }
        if let Some(u) = f.v_axis_crossings.last() {
            print!(", crosses v = 0 at u = +-{u:.4}");
        }
        println!();
    }
    println!("curves written to {}", dir.display());
    Ok(())
}
