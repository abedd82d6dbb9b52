//! The kernels are generic over the scalar; this drives a small end-to-end
//! pipeline at `f32` to keep that contract honest. Tolerances are single
//! precision — the `f64` suites carry the tight numerics.

use rough_delay::controlled::sigma_by_name;
use rough_delay::fbm::{sample_fbm, DriverBundle, FbmSpec, Method};
use rough_delay::grid::{Grid, GridPath};
use rough_delay::increments::{delta1, delta2, holder_seminorm2};
use rough_delay::levy::build_area;
use rough_delay::mat::Mat;
use rough_delay::solver::{solve_onestep, DelayRdeProblem};

#[test]
fn f32_pipeline_end_to_end() {
    let cells = 64usize;
    let shift = cells / 4;
    let grid: Grid<f32> = Grid::new(1.0 / cells as f32, shift, cells).unwrap();
    let spec = FbmSpec::new(0.5f32, 2, grid.clone(), 9, Method::Cholesky).unwrap();
    let path = sample_fbm(&spec).unwrap();
    assert_eq!(path.entry(grid.index_zero(), 0, 0), 0.0f32);

    // delta calculus and a norm scan at f32
    let dd = delta2(&delta1(&path));
    assert!(dd.at(2, 10, 30).max_norm() <= 1e-5 * (1.0 + path.sup_norm()));
    let semi = holder_seminorm2(&delta1(&path), 0.4f32).unwrap();
    assert!(semi.value.is_finite() && semi.value > 0.0);

    // Chen relation at single precision
    let area = build_area(&path, &[shift]).unwrap();
    let i0 = grid.index_zero();
    let end = grid.index_end();
    let (s, u, t) = (i0 + 3, i0 + 20, end - 1);
    let lhs = area
        .over(1, s, t)
        .unwrap()
        .sub(&area.over(1, s, u).unwrap())
        .sub(&area.over(1, u, t).unwrap());
    let rhs = Mat::outer(&path.increment(s - shift, u - shift), &path.increment(u, t));
    assert!(lhs.sub(&rhs).max_norm() <= 1e-5 * (1.0 + rhs.max_norm()));

    // constant-sigma closed form through the solver
    let sigma = sigma_by_name::<f32>("constant", 2, 2, 1).unwrap();
    let driver = DriverBundle::from_fbm(&spec, 0, &[shift]).unwrap();
    let xi = GridPath::segment_from_fn(&grid, 0, shift + 1, 2, 1, |_| {
        Mat::col(vec![0.25f32, -0.5])
    });
    let problem = DelayRdeProblem::new(
        sigma.clone(),
        vec![shift],
        xi.clone(),
        driver.clone(),
        grid.index_end(),
        0.36f32,
        0.45f32,
    )
    .unwrap();
    let sol = solve_onestep(&problem).unwrap();
    let c = sigma.eval(&vec![0.0f32; 4]);
    let xi0 = xi.value(i0);
    for idx in i0..=problem.horizon {
        let want = xi0.add(&c.matmul(&driver.path.increment(i0, idx)).unwrap());
        assert!(sol.value_at(idx).sub(&want).max_norm() <= 1e-5 * (1.0 + want.max_norm()));
    }
}
