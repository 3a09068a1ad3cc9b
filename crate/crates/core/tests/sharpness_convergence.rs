//! DP solutions of the smoothed sharpness problem approach the closed form
//! when the smoothing index is fixed and the grid is refined.

use hjlab::grid::{Boundary, GridSpec, ScalarField};
use hjlab::hamiltonian::{Coefficient, HamiltonianModel};
use hjlab::hopf_lax::{solve_backward, HJProblem, SolveOptions};
use hjlab::sharpness::{closed_form_fields, smoothed_coefficients, SharpnessParams};

fn max_error(p: &SharpnessParams, n: usize, res: usize) -> f64 {
    let grid = GridSpec::line(res, res, (0.0, 1.0), (0.0, 1.0), Boundary::Clamped).unwrap();
    let sm = smoothed_coefficients(p, n).unwrap();
    let a = ScalarField::from_fn(grid.clone(), |t, x| sm.a_n(t, x[0])).unwrap();
    let model = HamiltonianModel::power(p.p(), 4.0, Coefficient::Nodal(a), 0.0).unwrap();
    let terminal: Vec<f64> = (0..grid.nodes()).map(|i| sm.g_n(grid.coord(0, i))).collect();
    let pr = HJProblem::homogeneous(grid, model, terminal).unwrap();
    let opts = SolveOptions {
        interpolate: true,
        ..SolveOptions::default()
    };
    let (u, _) = solve_backward(&pr, &opts).unwrap();
    [(0.0, 0.2), (0.0, 0.4), (0.1, 0.3), (0.2, 0.4), (0.3, 0.45)]
        .iter()
        .map(|&(t, x)| (u.interp(t, &[x]) - closed_form_fields(t, x, p).unwrap().u).abs())
        .fold(0.0, f64::max)
}

#[test]
fn fixed_smoothing_converges_under_refinement() {
    let p = SharpnessParams::new(0.75, 2.0, 2.0, 1.0).unwrap();
    let errs: Vec<f64> = [64, 128, 256].iter().map(|&r| max_error(&p, 16, r)).collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert!(errs[2] < 2e-2, "{errs:?}");
}
