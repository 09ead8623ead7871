//! Output discrepancy of one gradient step against its bound, and a short
//! trajectory against the accumulated-loss bounds.

use todlab::estimation::{verify_corollary_accumulated, verify_corollary_t, verify_theorem1, Trajectory};
use todlab::model::MlpSpec;

fn main() -> todlab::Result<()> {
    let spec = MlpSpec::new(vec![3, 16, 1])?;
    let w = spec.init_params(5);
    let (x, y) = ([0.4, -1.2, 0.7], 1.5);

    println!("{:>8} {:>12} {:>12} {:>8}", "eta", "lhs", "rhs", "ratio");
    for eta in [1e-1, 1e-2, 1e-3, 1e-4] {
        let r = verify_theorem1(&spec, &w, &x, y, eta, 0.05)?;
        println!("{eta:>8} {:>12.3e} {:>12.3e} {:>8.5}", r.lhs, r.rhs, r.ratio);
    }

    let steps = 50;
    let traj = Trajectory::record(&spec, w, &x, y, 1e-3, steps)?;
    let per_step = verify_corollary_t(&traj, 0, steps, 0.05)?;
    let c = traj.max_grad_sq(0, steps);
    let accumulated = verify_corollary_accumulated(&traj, 0, steps, c, 0.05)?;
    println!("\n{steps} steps: discrepancy {:.4e}", per_step.lhs);
    println!("  per-step bound    {:.4e}", per_step.rhs);
    println!("  accumulated bound {:.4e} (C = {c:.4})", accumulated.rhs);
    Ok(())
}
