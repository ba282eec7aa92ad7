use lrmp::*;
use lrmp::majorize::default_floor;
use std::time::Instant;
fn main() {
    let inst = lrmp::portfolio::generate_instance(1000, 30, 50, 1);
    let (lap, partition, mut problem) = lrmp::portfolio::build_problem(&inst).unwrap();
    let majorizer = diagonal_majorizer(&lap, 3.0, default_floor(&lap)).unwrap();
    // single block update timing at default tolerance
    let n = inst.assets;
    let x0: Vec<f64> = {
        let mut v = vec![0.0; n]; v[n-1] = 1.0; v
    };
    let h = vec![0.0; n];
    let alpha = &majorizer.alpha()[n..2*n];
    for tol in [1e-10f64, 1e-8, 1e-6] {
        problem.inner_tol = tol;
        let t0 = Instant::now();
        let out = lrmp::solver::BlockProblem::update(&problem, 1, &x0, &h, alpha).unwrap();
        println!("tol {tol:.0e}: one block update took {:?} (x[0..3] = {:?})", t0.elapsed(), &out[0..3]);
    }
    // a few outer iterations at workers 8
    problem.inner_tol = 1e-10;
    let opts = SolveOptions { eps_abs: 1e-6, max_iter: 3, workers: 8, ..Default::default() };
    let t0 = Instant::now();
    let out = solve(&lap, &partition, &majorizer, &problem, None, &opts).unwrap();
    println!("3 outer iterations: {:?} (status {:?})", t0.elapsed(), out.trace.status);
}
