//! The five subcommands: deterministic experiment orchestration around the
//! library, with CSV/JSON artifacts and a config echo in every output
//! directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rough_delay::controlled::{sigma_by_name, t_sigma, Ccp, SigmaField, SIGMA_MODELS};
use rough_delay::fbm::{
    self, path_sidecar, rescale_check, sample_fbm, write_path_csv, DriverBundle, FbmSampler,
    FbmSpec, Method,
};
use rough_delay::grid::{Grid, GridPath};
use rough_delay::increments::{delta2, holder_norm3_split, holder_seminorm2, Increment2};
use rough_delay::integral::riemann_convergence_study;
use rough_delay::levy::{area_sidecar, build_area, write_area_csv};
use rough_delay::mat::Mat;
use rough_delay::sewing::{lambda_op, level_sums, sew};
use rough_delay::solver::{
    ito_map_experiment, solve_onestep, solve_picard, DelayRdeProblem, Perturb, PicardOptions,
    Solution,
};
use rough_delay::synthetic;
use rough_delay::{rng, Real};

use crate::config::{DriverKind, RunConfig, SolveMode};

pub struct CheckRow {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(rows: &mut Vec<CheckRow>, name: &str, pass: bool, detail: String) {
    rows.push(CheckRow { name: name.to_string(), pass, detail });
}

fn build_grid(cfg: &RunConfig) -> Result<Grid<Real>, String> {
    let before = cfg.delay_cells().last().copied().unwrap_or(0);
    Grid::new(cfg.mesh.to_f64(), before, cfg.horizon_cells()).map_err(|e| e.to_string())
}

fn fbm_spec(cfg: &RunConfig, grid: &Grid<Real>) -> Result<FbmSpec<Real>, String> {
    let method = if cfg.method == "circulant" { Method::Circulant } else { Method::Cholesky };
    FbmSpec::new(cfg.hurst, cfg.driver_dim, grid.clone(), cfg.seed, method).map_err(|e| e.to_string())
}

fn build_driver(cfg: &RunConfig, grid: &Grid<Real>) -> Result<DriverBundle<Real>, String> {
    match cfg.driver {
        DriverKind::Fbm => {
            let spec = fbm_spec(cfg, grid)?;
            DriverBundle::from_fbm(&spec, 0, &cfg.delay_cells()).map_err(|e| e.to_string())
        }
        DriverKind::Sincos => {
            let path = synthetic::smooth_driver_sincos(grid);
            DriverBundle::from_path(path, &cfg.delay_cells()).map_err(|e| e.to_string())
        }
    }
}

fn build_xi(cfg: &RunConfig, grid: &Grid<Real>) -> GridPath<Real> {
    let i0 = grid.index_zero();
    synthetic::seeded_smooth_path(grid, cfg.state_dim, 1, cfg.seed ^ 0xF00D, cfg.xi_amplitude)
        .restrict(0, i0)
        .expect("xi span")
}

fn build_problem(cfg: &RunConfig) -> Result<DelayRdeProblem<Real>, String> {
    let grid = build_grid(cfg)?;
    let driver = build_driver(cfg, &grid)?;
    let sigma: SigmaField<Real> =
        sigma_by_name(&cfg.sigma_model, cfg.state_dim, cfg.driver_dim, cfg.delays.len())
            .map_err(|e| e.to_string())?;
    let xi = build_xi(cfg, &grid);
    DelayRdeProblem::new(
        sigma,
        cfg.delay_cells(),
        xi,
        driver,
        grid.index_end(),
        cfg.kappa,
        cfg.gamma,
    )
    .map_err(|e| e.to_string())
}

fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    fs::write(dir.join(name), bytes)
        .map_err(|e| format!("cannot write {}: {e}", dir.join(name).display()))
}

fn echo_config(cfg: &RunConfig) -> Result<(), String> {
    write_out(&cfg.out_dir, "config.json", cfg.echo_json().as_bytes())
}

fn print_rows(rows: &[CheckRow]) -> bool {
    let mut all = true;
    for row in rows {
        let tag = if row.pass { "PASS" } else { "FAIL" };
        println!("{tag}  {:<34} {}", row.name, row.detail);
        all &= row.pass;
    }
    all
}

// ---------------------------------------------------------------- verify

pub fn cmd_verify(cfg: &RunConfig) -> Result<i32, String> {
    let known = ["chen", "sewing", "covariance", "chainrule", "all"];
    if !known.contains(&cfg.suite.as_str()) {
        return Err(format!("unknown suite '{}' ({})", cfg.suite, known.join(" | ")));
    }
    echo_config(cfg)?;
    let mut rows = Vec::new();
    let all = cfg.suite == "all";
    if all || cfg.suite == "chen" {
        verify_chen(cfg, &mut rows)?;
    }
    if all || cfg.suite == "sewing" {
        verify_sewing(cfg, &mut rows)?;
    }
    if all || cfg.suite == "covariance" {
        verify_covariance(cfg, &mut rows)?;
    }
    if all || cfg.suite == "chainrule" {
        verify_chainrule(cfg, &mut rows)?;
    }
    let ok = print_rows(&rows);
    println!(
        "{}: {} of {} checks passed",
        if ok { "OK" } else { "FAILED" },
        rows.iter().filter(|r| r.pass).count(),
        rows.len()
    );
    Ok(if ok { 0 } else { 1 })
}

fn verify_chen(cfg: &RunConfig, rows: &mut Vec<CheckRow>) -> Result<(), String> {
    let grid = build_grid(cfg)?;
    let spec = fbm_spec(cfg, &grid)?;
    let path = sample_fbm(&spec).map_err(|e| e.to_string())?;
    let area = build_area(&path, &cfg.delay_cells()).map_err(|e| e.to_string())?;
    let i0 = grid.index_zero();
    let end = grid.index_end();
    let mut worst = 0.0f64;
    for (di, &shift) in area.shifts().iter().enumerate() {
        for k in 0..1000u64 {
            let key = rng::stream_key(cfg.seed ^ 0xC4E9, k, di as u64);
            let mut idx: Vec<usize> = (0..3)
                .map(|j| i0 + (rng::uniform(key, j) * (end - i0 + 1) as f64) as usize)
                .map(|i| i.min(end))
                .collect();
            idx.sort_unstable();
            let (s, u, t) = (idx[0], idx[1], idx[2]);
            let lhs = area
                .over(di, s, t)
                .and_then(|a| Ok(a.sub(&area.over(di, s, u)?).sub(&area.over(di, u, t)?)))
                .map_err(|e| e.to_string())?;
            let inner = path.increment(s - shift, u - shift);
            let outer = path.increment(u, t);
            let rhs = Mat::outer(&inner, &outer);
            let scale = 1.0 + inner.max_norm() * outer.max_norm();
            worst = worst.max(lhs.sub(&rhs).max_norm() / scale);
        }
    }
    check(rows, "chen: relation residual", worst <= 1e-12, format!("max {worst:.2e} (tol 1e-12)"));

    let mut diag_worst = 0.0f64;
    let di0 = area.delay_index(0).map_err(|e| e.to_string())?;
    for k in 0..200u64 {
        let key = rng::stream_key(cfg.seed ^ 0xD1A6, k, 0);
        let s = i0 + (rng::uniform(key, 0) * (end - i0) as f64) as usize;
        let t = (s + 1 + (rng::uniform(key, 1) * (end - s) as f64) as usize).min(end);
        let m = area.over(di0, s, t).map_err(|e| e.to_string())?;
        for a in 0..path.dim() {
            let inc = path.entry(t, a, 0) - path.entry(s, a, 0);
            let want = 0.5 * inc * inc;
            diag_worst = diag_worst.max((m.get(a, a) - want).abs() / (1.0 + want.abs()));
        }
    }
    check(
        rows,
        "chen: diagonal identity at v=0",
        diag_worst <= 1e-12,
        format!("max {diag_worst:.2e} (tol 1e-12)"),
    );
    Ok(())
}

fn verify_sewing(cfg: &RunConfig, rows: &mut Vec<CheckRow>) -> Result<(), String> {
    let cells = 128usize;
    let grid = Grid::nonnegative(1.0 / cells as f64, cells).map_err(|e| e.to_string())?;
    let tol = 1e-10;

    // inversion on 20 seeded smooth families
    let mut worst = 0.0f64;
    for fam in 0..20u64 {
        let key = rng::stream_key(cfg.seed ^ 0x5E11, fam, 0);
        let (a, b, c) = (
            2.0 * rng::uniform(key, 0) - 1.0,
            2.0 * rng::uniform(key, 1) - 1.0,
            1.0 + rng::uniform(key, 2),
        );
        let f = GridPath::from_components(&grid, 1, |_, i| (c * grid.time(i)).sin() * a + b);
        let w = GridPath::from_components(&grid, 1, |_, i| (2.0 * c * grid.time(i)).cos());
        let inc = {
            let (fc, wc) = (f.clone(), w.clone());
            Increment2::new(grid.clone(), 0, cells, 1, 1, move |s, t| {
                Mat::from_vec(1, 1, vec![fc.entry(s, 0, 0) * (wc.entry(t, 0, 0) - wc.entry(s, 0, 0))])
            })
        };
        let h = delta2(&inc);
        let lam = lambda_op(&h, 0, tol, None).map_err(|e| e.to_string())?;
        let dl = delta2(&lam.value);
        for k in 0..64u64 {
            let key = rng::stream_key(cfg.seed ^ 0x5E12, 64 * fam + k, 0);
            let mut idx: Vec<usize> = (0..3)
                .map(|j| (rng::uniform(key, j) * (cells + 1) as f64) as usize)
                .map(|i| i.min(cells))
                .collect();
            idx.sort_unstable();
            if idx[0] < idx[1] && idx[1] < idx[2] {
                let want = h.at(idx[0], idx[1], idx[2]).get(0, 0);
                let got = dl.at(idx[0], idx[1], idx[2]).get(0, 0);
                worst = worst.max((got - want).abs() / (1.0 + want.abs()));
            }
        }
    }
    check(rows, "sewing: inversion on smooth families", worst <= 1e-8, format!("max {worst:.2e} (tol 1e-8)"));

    // idempotent identity and Λ bound on the (t−s)^{3/2} family
    let mu = 1.5f64;
    let inc = {
        let g = grid.clone();
        Increment2::new(grid.clone(), 0, cells, 1, 1, move |s, t| {
            Mat::from_vec(1, 1, vec![g.span(s, t).powf(mu)])
        })
    };
    let h = delta2(&inc);
    let lam = lambda_op(&h, 0, tol, None).map_err(|e| e.to_string())?;
    let sw = sew(&inc, tol, None);
    let mut idw = 0.0f64;
    for (s, t) in [(0usize, cells), (7, 90), (31, 32)] {
        let got = lam.value.at(s, t).get(0, 0) + sw.value.at(s, t).get(0, 0);
        let want = inc.at(s, t).get(0, 0);
        idw = idw.max((got - want).abs() / (1.0 + want.abs()));
    }
    check(rows, "sewing: lambda-delta + sew identity", idw <= 1e-8, format!("max {idw:.2e} (tol 1e-8)"));

    let lhs = holder_seminorm2(&lam.value, mu).map_err(|e| e.to_string())?.value;
    let rhs = holder_norm3_split(&h, mu / 2.0, mu / 2.0).map_err(|e| e.to_string())?.value;
    let bound = 2.0 / (2.0f64.powf(mu) - 2.0) * rhs;
    check(rows, "sewing: lambda bound (slack 2.0)", lhs <= bound, format!("{lhs:.4} <= {bound:.4}"));

    let sums = level_sums(&inc, 0, cells, None);
    let mut ratio_ok = true;
    let mut worst_ratio = 0.0f64;
    for w in sums.windows(3) {
        let d0 = (w[1].get(0, 0) - w[0].get(0, 0)).abs();
        let d1 = (w[2].get(0, 0) - w[1].get(0, 0)).abs();
        let r = d1 / d0;
        worst_ratio = worst_ratio.max(r);
        ratio_ok &= r <= 2.0f64.powf(1.0 - mu) + 0.1;
    }
    check(
        rows,
        "sewing: dyadic convergence ratio",
        ratio_ok,
        format!("max ratio {worst_ratio:.4} (bound {:.4})", 2.0f64.powf(1.0 - mu) + 0.1),
    );
    Ok(())
}

fn verify_covariance(cfg: &RunConfig, rows: &mut Vec<CheckRow>) -> Result<(), String> {
    let grid = build_grid(cfg)?;
    let spec = fbm_spec(cfg, &grid)?;
    if spec.method == Method::Cholesky {
        let sampler = FbmSampler::new(&spec).map_err(|e| e.to_string())?;
        let res = sampler.cholesky_residual().unwrap_or(f64::NAN);
        check(rows, "fbm: cholesky factor residual", res <= 1e-9, format!("{res:.2e} (tol 1e-9)"));
    }
    let sampler = FbmSampler::new(&spec).map_err(|e| e.to_string())?;
    let i0 = grid.index_zero();
    let end = grid.index_end();
    let q = (end - i0) / 4;
    if q == 0 {
        return Err("covariance suite needs at least 4 cells past t = 0".into());
    }
    let (is, it) = (i0 + q, i0 + 3 * q);
    let (ts, tt) = (grid.time(is), grid.time(it));
    let trials = cfg.trials.max(256);
    let mut acc = 0.0f64;
    let mut anchored = true;
    for trial in 0..trials {
        let p = sampler.sample(trial);
        anchored &= p.at(i0).iter().all(|&v| v == 0.0);
        acc += p.entry(is, 0, 0) * p.entry(it, 0, 0);
    }
    let est = acc / trials as f64;
    let want = fbm::covariance(cfg.hurst, ts, tt);
    let var = fbm::covariance(cfg.hurst, ts, ts) * fbm::covariance(cfg.hurst, tt, tt) + want * want;
    let se = (var / trials as f64).sqrt();
    check(
        rows,
        "fbm: monte-carlo covariance",
        (est - want).abs() <= 3.0 * se,
        format!("est {est:.5} vs {want:.5} ({:.2} se, {trials} trials)", (est - want).abs() / se),
    );
    check(rows, "fbm: anchored at t=0", anchored, "B_0 = 0 in every sample".to_string());

    let a = sampler.sample(0);
    let b = sampler.sample(0);
    let mut identical = true;
    for i in 0..=end {
        for c in 0..spec.dim {
            identical &= a.entry(i, c, 0).to_bits() == b.entry(i, c, 0).to_bits();
        }
    }
    check(rows, "fbm: determinism", identical, "repeated sampling is bit-identical".to_string());

    if end - i0 >= 4 {
        let rep = rescale_check(&spec, 2, cfg.trials.max(512)).map_err(|e| e.to_string())?;
        check(
            rows,
            "fbm: scaling law (c = 2)",
            rep.max_standardized < 4.0,
            format!("max standardized discrepancy {:.2} (bound 4)", rep.max_standardized),
        );
    }
    Ok(())
}

fn verify_chainrule(cfg: &RunConfig, rows: &mut Vec<CheckRow>) -> Result<(), String> {
    let k = cfg.delays.len();
    for name in SIGMA_MODELS {
        if name == "bilinear-noncommuting" && k == 0 {
            continue;
        }
        let sigma: SigmaField<Real> = sigma_by_name(name, cfg.state_dim, cfg.driver_dim, k)
            .map_err(|e| e.to_string())?;
        match sigma.validate_jacobian(cfg.seed, 50) {
            Ok(worst) => check(
                rows,
                &format!("chainrule: jacobian of '{name}'"),
                true,
                format!("max fd deviation {worst:.2e} at 50 points"),
            ),
            Err(e) => check(rows, &format!("chainrule: jacobian of '{name}'"), false, e.to_string()),
        }
    }
    // t_sigma density pinned by the chain rule: linear σ is exact
    let grid = build_grid(cfg)?;
    let driver = build_driver(cfg, &grid)?;
    let i0 = grid.index_zero();
    let end = grid.index_end();
    let delays = cfg.delay_cells();
    let sigma: SigmaField<Real> =
        sigma_by_name("linear", cfg.state_dim, cfg.driver_dim, k).map_err(|e| e.to_string())?;
    let z = synthetic::random_ccp(&driver.path, i0, end, cfg.state_dim, cfg.seed ^ 0xCC);
    let past = if k > 0 {
        Some(synthetic::random_ccp(
            &driver.path,
            0,
            end - delays[0],
            cfg.state_dim,
            cfg.seed ^ 0xCD,
        ))
    } else {
        None
    };
    let out = t_sigma(&z, past.as_ref(), &sigma, &delays).map_err(|e| e.to_string())?;
    let u0 = vec![0.0; cfg.state_dim * (k + 1)];
    let mut worst = 0.0f64;
    for (s, t) in [(i0, end), (i0 + 1, end.min(i0 + 10))] {
        let mut want = sigma.jac(&u0, 0).apply_vector(&z.remainder(s, t));
        if let Some(p) = &past {
            for (j, &shift) in delays.iter().enumerate() {
                want = want.add(&sigma.jac(&u0, j + 1).apply_vector(&p.remainder(s - shift, t - shift)));
            }
        }
        let got = out.remainder(s, t);
        worst = worst.max(got.sub(&want).max_norm() / (1.0 + want.max_norm()));
    }
    check(
        rows,
        "chainrule: linear sigma remainder",
        worst <= 1e-12,
        format!("max {worst:.2e} (tol 1e-12)"),
    );
    Ok(())
}

// ---------------------------------------------------------------- simulate

pub fn cmd_simulate(cfg: &RunConfig) -> Result<i32, String> {
    if cfg.driver != DriverKind::Fbm {
        return Err("simulate emits fBm paths; use --driver fbm".into());
    }
    let grid = build_grid(cfg)?;
    let spec = fbm_spec(cfg, &grid)?;
    let sampler = FbmSampler::new(&spec).map_err(|e| e.to_string())?;
    if sampler.was_jittered() {
        eprintln!("warning: covariance needed a one-time diagonal jitter before factorising");
    }
    let path = sampler.sample(0);
    let mut csv = Vec::new();
    write_path_csv(&path, &mut csv).map_err(|e| e.to_string())?;
    write_out(&cfg.out_dir, "path.csv", &csv)?;
    let sidecar = serde_json::to_string_pretty(&path_sidecar(&spec)).expect("sidecar");
    write_out(&cfg.out_dir, "path.json", sidecar.as_bytes())?;

    let area = build_area(&path, &cfg.delay_cells()).map_err(|e| e.to_string())?;
    let mut acsv = Vec::new();
    write_area_csv(&area, &mut acsv).map_err(|e| e.to_string())?;
    write_out(&cfg.out_dir, "areas.csv", &acsv)?;
    let asc = serde_json::to_string_pretty(&area_sidecar(&area)).expect("sidecar");
    write_out(&cfg.out_dir, "areas.json", asc.as_bytes())?;
    echo_config(cfg)?;
    println!(
        "simulate: wrote {} grid points, {} delay areas to {}",
        grid.n_points(),
        area.shifts().len(),
        cfg.out_dir.display()
    );
    Ok(0)
}

// ---------------------------------------------------------------- solve

fn solution_csv(sol: &Solution<Real>, problem: &DelayRdeProblem<Real>) -> String {
    let grid = problem.driver.path.grid();
    let (lo, hi) = sol.path.span();
    let n = sol.path.value().rows();
    let d = sol.path.density().cols();
    let mut out = String::from("t");
    for l in 1..=n {
        let _ = write!(out, ",y_{l}");
    }
    for l in 1..=n {
        for a in 1..=d {
            let _ = write!(out, ",zeta_{l}{a}");
        }
    }
    out.push('\n');
    for i in lo..=hi {
        let _ = write!(out, "{:.16e}", grid.time(i));
        for l in 0..n {
            let _ = write!(out, ",{:.16e}", sol.path.value().entry(i, l, 0));
        }
        for l in 0..n {
            for a in 0..d {
                let _ = write!(out, ",{:.16e}", sol.path.density().entry(i, l, a));
            }
        }
        out.push('\n');
    }
    out
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<i32, String> {
    let problem = build_problem(cfg)?;
    echo_config(cfg)?;
    let run = |mode: SolveMode| -> Result<Solution<Real>, String> {
        match mode {
            SolveMode::Onestep => solve_onestep(&problem).map_err(|e| e.to_string()),
            SolveMode::Picard => solve_picard(&problem, PicardOptions::default()).map_err(|e| e.to_string()),
            SolveMode::Both => unreachable!(),
        }
    };
    match cfg.mode {
        SolveMode::Both => {
            let a = run(SolveMode::Onestep)?;
            let b = run(SolveMode::Picard)?;
            write_out(&cfg.out_dir, "solution_onestep.csv", solution_csv(&a, &problem).as_bytes())?;
            write_out(&cfg.out_dir, "solution_picard.csv", solution_csv(&b, &problem).as_bytes())?;
            let diag = serde_json::to_string_pretty(&b.windows).expect("diag");
            write_out(&cfg.out_dir, "windows.json", diag.as_bytes())?;
            let mut worst = 0.0f64;
            for i in problem.driver.path.grid().index_zero()..=problem.horizon {
                worst = worst.max(a.full_value.value(i).sub(&b.full_value.value(i)).max_norm());
            }
            // the documented cross-validation tolerance: the Picard grid
            // fixed point coincides with the marching recursion, so the
            // two solutions may differ only at fixed-point-tolerance scale
            let tol = 1e-8 * (1.0 + a.full_value.sup_norm());
            println!(
                "solve: onestep vs picard max column difference {worst:.3e} (tolerance {tol:.1e})"
            );
            if worst <= tol {
                Ok(0)
            } else {
                eprintln!("solve: cross-validation tolerance exceeded");
                Ok(1)
            }
        }
        mode => {
            let sol = run(mode)?;
            write_out(&cfg.out_dir, "solution.csv", solution_csv(&sol, &problem).as_bytes())?;
            let diag = serde_json::to_string_pretty(&sol.windows).expect("diag");
            write_out(&cfg.out_dir, "windows.json", diag.as_bytes())?;
            println!(
                "solve: {} points, solution norm {:.6}{}, wrote {}",
                problem.horizon - problem.driver.path.grid().index_zero() + 1,
                sol.norms.total,
                if sol.norms.exact { "" } else { " (approximate: norm scan subsampled)" },
                cfg.out_dir.display()
            );
            Ok(0)
        }
    }
}

// ------------------------------------------------------------ convergence

pub fn cmd_convergence(cfg: &RunConfig) -> Result<i32, String> {
    if cfg.state_dim != cfg.driver_dim {
        return Err("convergence uses the driver-as-controlled-path construction; set --state-dim equal to --driver-dim".into());
    }
    let grid = build_grid(cfg)?;
    let driver = build_driver(cfg, &grid)?;
    let i0 = grid.index_zero();
    let end = grid.index_end();
    let d = cfg.driver_dim;
    let delays = cfg.delay_cells();
    let as_ccp = |lo: usize, hi: usize| -> Ccp<Real> {
        let value = driver.path.restrict(lo, hi).expect("span");
        let density = GridPath::segment_from_fn(&grid, lo, hi - lo + 1, d, d, |_| Mat::identity(d));
        Ccp::new(value, density, driver.path.clone()).expect("ccp")
    };
    let sigma: SigmaField<Real> =
        sigma_by_name(&cfg.sigma_model, d, d, delays.len()).map_err(|e| e.to_string())?;
    let z = as_ccp(i0, end);
    let past = if delays.is_empty() { None } else { Some(as_ccp(0, end)) };
    let m = t_sigma(&z, past.as_ref(), &sigma, &delays).map_err(|e| e.to_string())?;

    echo_config(cfg)?;
    if cfg.levels == 0 {
        // single-level request: one row, no order columns
        let table = riemann_convergence_study(&m, &driver, 0).map_err(|e| e.to_string())?;
        let row = &table.rows[0];
        let csv = format!(
            "level,intervals,value_sup\n{},{},{:.16e}\n",
            row.level, row.intervals, row.value_sup
        );
        write_out(&cfg.out_dir, "convergence.csv", csv.as_bytes())?;
        print!("{csv}");
        return Ok(0);
    }
    let table = riemann_convergence_study(&m, &driver, cfg.levels).map_err(|e| e.to_string())?;
    let mut csv = String::from("level,intervals,value_sup,diff,ratio,order\n");
    for row in &table.rows {
        let _ = write!(csv, "{},{},{:.16e}", row.level, row.intervals, row.value_sup);
        match (row.diff_from_prev, row.ratio, row.order) {
            (Some(df), Some(r), Some(o)) => {
                let _ = writeln!(csv, ",{df:.16e},{r:.6},{o:.6}");
            }
            (Some(df), _, _) => {
                let _ = writeln!(csv, ",{df:.16e},,");
            }
            _ => {
                let _ = writeln!(csv, ",,,");
            }
        }
    }
    write_out(&cfg.out_dir, "convergence.csv", csv.as_bytes())?;
    print!("{csv}");
    match table.empirical_order {
        Some(order) if order >= cfg.min_order => {
            println!("convergence: empirical order {order:.3} >= {}", cfg.min_order);
            Ok(0)
        }
        Some(order) => {
            let offender = table.rows.iter().rev().find(|r| r.order.is_some()).expect("order row");
            eprintln!(
                "convergence: empirical order {order:.3} below threshold {} at level {} (diff {:.3e})",
                cfg.min_order,
                offender.level,
                offender.diff_from_prev.unwrap_or(f64::NAN)
            );
            Ok(1)
        }
        None => {
            eprintln!("convergence: no order could be estimated (all differences vanish)");
            Ok(0)
        }
    }
}

// ---------------------------------------------------------------- itomap

pub fn cmd_itomap(cfg: &RunConfig) -> Result<i32, String> {
    let problem = build_problem(cfg)?;
    let what = match cfg.perturb.as_str() {
        "driver" => Perturb::DriverOnly,
        "xi" => Perturb::XiOnly,
        _ => Perturb::Both,
    };
    let report = ito_map_experiment(&problem, &cfg.eps, what).map_err(|e| e.to_string())?;
    echo_config(cfg)?;
    let mut csv = String::from("eps,response,rhs,ratio\n");
    for row in &report.rows {
        if row.skipped_zero {
            let _ = writeln!(csv, "{:.16e},skipped,skipped,skipped", row.eps);
        } else {
            let _ = writeln!(csv, "{:.16e},{:.16e},{:.16e},{:.6}", row.eps, row.response, row.rhs, row.ratio);
        }
    }
    write_out(&cfg.out_dir, "itomap.csv", csv.as_bytes())?;
    print!("{csv}");
    match report.spread {
        Some(spread) if spread <= 20.0 => {
            println!("itomap: ratio spread {spread:.3} <= 20");
            Ok(0)
        }
        Some(spread) => {
            let worst = report
                .rows
                .iter()
                .filter(|r| !r.skipped_zero)
                .max_by(|a, b| a.ratio.partial_cmp(&b.ratio).expect("finite"))
                .expect("rows");
            eprintln!(
                "itomap: ratio spread {spread:.3} exceeds 20 (worst row: eps {:.1e}, ratio {:.3})",
                worst.eps, worst.ratio
            );
            Ok(1)
        }
        None => {
            println!("itomap: fewer than two nonzero perturbations, nothing to compare");
            Ok(0)
        }
    }
}
