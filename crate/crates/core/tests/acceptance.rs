//! Acceptance gate: one test per release criterion, each printing a single
//! PASS/FAIL line (visible with `--nocapture`). The two ten-rotation disk
//! runs are shared between criteria through `OnceLock`.

use std::sync::OnceLock;
use std::time::Instant;

use decfem::dec::{
    apply_l1, apply_l2, compute_dt, dec_scheme, integrate, DecState, FemSystem, L1Variant,
};
use decfem::driver::{parse_config, run};
use decfem::error::Error;
use decfem::mesh::Mesh;
use decfem::oracle::{assemble_mass, convergence_study, error_norm, reference_run, ConvergenceRun};
use decfem::residual::{BoundaryCondition, StabilizedScheme, TransportProblem, VelocityField};
use decfem::scalar::Vec2;
use decfem::space::{build_space, init_field, ElementKind};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(n: usize, name: &str, body: impl FnOnce() -> Result<String, String>) {
    let start = Instant::now();
    let outcome = body();
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("acceptance criterion {n} ({name}): PASS [{secs:.1} s] {detail}"),
        Err(why) => {
            println!("acceptance criterion {n} ({name}): FAIL [{secs:.1} s] {why}");
            panic!("criterion {n} ({name}) failed: {why}");
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !($cond) {
            return Err(format!($($arg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn sine(x: Vec2<f64>) -> f64 {
    (2.0 * std::f64::consts::PI * x[0]).sin()
}

fn gaussian(x: Vec2<f64>) -> f64 {
    (-40.0 * (x[0] * x[0] + x[1] * x[1])).exp()
}

fn advection_problem(jump_factor: f64) -> TransportProblem<f64> {
    let mut p = TransportProblem::new(
        VelocityField::Constant([1.0, 0.0]),
        StabilizedScheme::GalerkinJump,
        BoundaryCondition::Periodic,
    );
    p.jump_factor = jump_factor;
    p
}

fn rotation_problem(jump_factor: f64) -> TransportProblem<f64> {
    let mut p = TransportProblem::new(
        VelocityField::Rotation { omega: 2.0 * std::f64::consts::PI },
        StabilizedScheme::GalerkinJump,
        BoundaryCondition::inflow(|_| 0.0),
    );
    p.jump_factor = jump_factor;
    p
}

fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

// ---- criterion 1 --------------------------------------------------------

#[test]
fn criterion_1_lumping_law() {
    check(1, "lumping law", || {
        let generators: Vec<(&str, fn() -> Mesh<f64>)> = vec![
            ("interval periodic", || Mesh::interval(7, true).unwrap()),
            ("interval open", || Mesh::interval(8, false).unwrap()),
            ("rectangle periodic", || Mesh::rectangle(3, 3, true, true).unwrap()),
            ("rectangle open", || Mesh::rectangle(4, 3, false, false).unwrap()),
            ("disk 2", || Mesh::disk(2).unwrap()),
            ("disk 5", || Mesh::disk(5).unwrap()),
        ];
        let mut spaces = 0;
        for kind in [ElementKind::P1Lagrange, ElementKind::B2Bezier] {
            for (label, make) in &generators {
                let mesh = make();
                let omega = mesh.total_measure();
                let space = ok(build_space(mesh, kind), &format!("{kind:?} on {label}"))?;
                ensure!(
                    space.lumped().iter().all(|&c| c > 0.0),
                    "{kind:?} on {label}: non-positive lumped coefficient"
                );
                let sum: f64 = space.lumped().iter().sum();
                ensure!(
                    (sum - omega).abs() <= 1e-12 * omega.max(1.0),
                    "{kind:?} on {label}: lumped total {sum} != measure {omega}"
                );
                spaces += 1;
            }
        }
        // Quadratic Lagrange is rejected in 2D: the vertex basis functions
        // integrate to zero, so no positive lumping exists.
        let mut rejections = 0;
        for (label, make) in &generators {
            let mesh = make();
            if mesh.dim() != 2 {
                continue;
            }
            match build_space(mesh, ElementKind::P2Lagrange) {
                Err(Error::NonPositiveLumping(count, offenders)) => {
                    ensure!(count > 0, "{label}: empty offender count");
                    ensure!(!offenders.is_empty(), "{label}: no offenders listed");
                    for (dof, value) in &offenders {
                        ensure!(
                            value.abs() <= 1e-14,
                            "{label}: offending DOF {dof} has integral {value:e}, expected 0"
                        );
                    }
                    rejections += 1;
                }
                Err(other) => ensure!(false, "{label}: wrong error {other}"),
                Ok(_) => ensure!(false, "{label}: quadratic Lagrange lumping not rejected"),
            }
        }
        Ok(format!("{spaces} spaces positive and consistent, {rejections} rejections"))
    });
}

// ---- criterion 2 --------------------------------------------------------

#[test]
fn criterion_2_time_integration_tables() {
    check(2, "correction tables", || {
        let r = Ratio::<i64>::new;
        let s3 = ok(dec_scheme(3), "order 3 tables")?;
        ensure!(
            s3.subnodes == vec![r(0, 1), r(1, 2), r(1, 1)],
            "subnodes {:?}",
            s3.subnodes
        );
        ensure!(
            s3.weights[0] == vec![r(5, 24), r(1, 3), r(-1, 24)],
            "half-node weights {:?}",
            s3.weights[0]
        );
        ensure!(
            s3.weights[1] == vec![r(1, 6), r(4, 6), r(1, 6)],
            "end-node weights {:?}",
            s3.weights[1]
        );
        ensure!(s3.alpha == vec![r(1, 2), r(1, 2)], "alpha {:?}", s3.alpha);
        Ok("order-3 rows are exactly (5/24, 1/3, -1/24) and (1/6, 4/6, 1/6)".into())
    });
}

// ---- criterion 3 --------------------------------------------------------

#[test]
fn criterion_3_operator_closeness() {
    check(3, "L1 vs L2 closeness", || {
        let space = ok(
            build_space(Mesh::interval(12, true).unwrap(), ElementKind::B2Bezier),
            "space",
        )?;
        let problem = advection_problem(0.1);
        let system = ok(FemSystem::new(&space, &problem), "system")?;
        let scheme = ok(dec_scheme(3), "tables")?;
        let n = space.num_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let u_n: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dirs: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        // Stage states one time-derivative away from the base state, so the
        // operator gap contracts linearly with the step.
        let mut points = Vec::new();
        for k in 0..=8 {
            let dt = 1e-1 * (10f64).powf(-(k as f64) / 2.0);
            let states: Vec<Vec<f64>> = std::iter::once(u_n.clone())
                .chain(dirs.iter().map(|d| {
                    u_n.iter().zip(d).map(|(&u, &r)| u + dt * r).collect()
                }))
                .collect();
            let state = ok(
                DecState::from_states(&system, &scheme, states, 0.0, dt),
                "stage states",
            )?;
            let mut gap = 0.0f64;
            for i in 1..=2 {
                let l1 = apply_l1(&system, &scheme, &state, dt, i);
                let l2 = apply_l2(&system, &scheme, &state, dt, i);
                for (a, b) in l1.iter().zip(&l2) {
                    gap = gap.max((a - b).abs());
                }
            }
            ensure!(gap > 0.0, "operators coincide at dt = {dt:e}");
            points.push((dt.ln(), gap.ln()));
        }
        let slope = ls_slope(&points);
        ensure!(
            (slope - 1.0).abs() <= 0.1,
            "log-log slope {slope:.3} outside 1.0 +- 0.1"
        );
        Ok(format!("max-norm gap slope {slope:.3} over dt in [1e-5, 1e-1]"))
    });
}

// ---- criterion 4 --------------------------------------------------------

struct StudyOutcome {
    slope: f64,
    finest_error: f64,
}

fn sine_study(
    kind: ElementKind,
    time_order: usize,
    jump_factor: f64,
    cfl: f64,
) -> Result<StudyOutcome, String> {
    let problem = advection_problem(jump_factor);
    let u0 = sine;
    let exact = |x: Vec2<f64>| sine([x[0] - 1.0, x[1]]);
    let case = ConvergenceRun {
        kind,
        problem: &problem,
        time_order,
        corrections: None,
        variant: L1Variant::Faithful,
        cfl,
        t_final: 1.0,
        u0: &u0,
        exact: &exact,
    };
    let meshes: Vec<Mesh<f64>> = [32usize, 64, 128, 256]
        .iter()
        .map(|&n| Mesh::interval(n, true).unwrap())
        .collect();
    let table = ok(convergence_study(&case, meshes), "study")?;
    let first = table.rows.first().unwrap();
    let last = table.rows.last().unwrap();
    Ok(StudyOutcome {
        slope: (first.error / last.error).ln() / (first.h / last.h).ln(),
        finest_error: last.error,
    })
}

#[test]
fn criterion_4_grid_convergence() {
    check(4, "grid convergence", || {
        let p1 = sine_study(ElementKind::P1Lagrange, 2, 0.1, 0.3)?;
        ensure!(
            p1.slope >= 1.8,
            "linear elements: observed order {:.3} < 1.8",
            p1.slope
        );
        let b2 = sine_study(ElementKind::B2Bezier, 3, 0.02, 0.15)?;
        ensure!(
            b2.slope >= 2.5,
            "quadratic elements: observed order {:.3} < 2.5",
            b2.slope
        );
        Ok(format!(
            "P1 order {:.2} (err {:.2e}), B2 order {:.2} (err {:.2e}) over n = 32..256",
            p1.slope, p1.finest_error, b2.slope, b2.finest_error
        ))
    });
}

// ---- criterion 5 --------------------------------------------------------

fn reference_comparison(
    kind: ElementKind,
    time_order: usize,
    jump_factor: f64,
    cfl: f64,
    slope_min: f64,
) -> Result<String, String> {
    let problem = advection_problem(jump_factor);
    let exact = |x: Vec2<f64>| sine([x[0] - 1.0, x[1]]);
    let mut points = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    for n in [32usize, 64, 128, 256] {
        let space = ok(build_space(Mesh::interval(n, true).unwrap(), kind), "space")?;
        let system = ok(FemSystem::new(&space, &problem), "system")?;
        let scheme = ok(dec_scheme(time_order), "tables")?;
        let dt = ok(compute_dt(space.mesh(), &problem.velocity, cfl), "dt")?;
        let u0 = init_field(&space, sine);
        let dec = ok(
            integrate(&system, &scheme, L1Variant::Faithful, &u0, 0.0, 1.0, dt, |_, _, _| {}),
            &format!("solver n={n}"),
        )?;
        let mass = ok(assemble_mass(&space), "mass")?;
        let rk = ok(
            reference_run(&space, &mass, &problem, &u0, 1.0, dt),
            &format!("reference n={n}"),
        )?;
        let diff_vec: Vec<f64> = dec.iter().zip(&rk).map(|(a, b)| a - b).collect();
        let diff = error_norm(&space, &diff_vec, |_| 0.0);
        let e_dec = error_norm(&space, &dec, exact);
        let e_rk = error_norm(&space, &rk, exact);
        ensure!(
            e_dec <= 2.0 * e_rk && e_rk <= 2.0 * e_dec,
            "n = {n}: errors not within 2x of each other ({e_dec:.3e} vs {e_rk:.3e})"
        );
        ensure!(diff > 0.0, "n = {n}: solutions coincide exactly");
        points.push(((1.0 / n as f64).ln(), diff.ln()));
        ratios.push(e_dec / e_rk);
    }
    let slope = ls_slope(&points);
    ensure!(
        slope >= slope_min,
        "difference slope {slope:.3} < {slope_min}"
    );
    let worst = ratios
        .iter()
        .map(|r| r.max(1.0 / r))
        .fold(0.0f64, f64::max);
    Ok(format!("diff slope {slope:.2}, worst error ratio {worst:.2}"))
}

#[test]
fn criterion_5_reference_equivalence() {
    check(5, "consistent-mass reference equivalence", || {
        let p1 = reference_comparison(ElementKind::P1Lagrange, 2, 0.1, 0.3, 1.7)?;
        let b2 = reference_comparison(ElementKind::B2Bezier, 3, 0.02, 0.15, 2.4)?;
        Ok(format!("P1: {p1}; B2: {b2}"))
    });
}

// ---- shared disk runs (criteria 6 and 7) --------------------------------

#[derive(Clone, Copy)]
struct Row {
    t: f64,
    min: f64,
    max: f64,
    mass: f64,
}

struct DiskRun {
    dofs: usize,
    dt: f64,
    rows: Vec<Row>,
    /// `sum C_sigma |u0_sigma|`, the scale for relative mass drift.
    scale: f64,
}

impl DiskRun {
    fn at(&self, t: f64) -> Row {
        *self
            .rows
            .iter()
            .min_by(|a, b| {
                (a.t - t).abs().partial_cmp(&(b.t - t).abs()).unwrap()
            })
            .unwrap()
    }

    fn max_mass_drift(&self) -> f64 {
        let m0 = self.rows[0].mass;
        self.rows
            .iter()
            .map(|r| (r.mass - m0).abs())
            .fold(0.0, f64::max)
            / self.scale
    }
}

fn disk_run(
    kind: ElementKind,
    level: usize,
    time_order: usize,
    corrections: Option<usize>,
    jump_factor: f64,
    cfl: f64,
) -> Result<DiskRun, String> {
    let space = ok(build_space(Mesh::disk(level).unwrap(), kind), "space")?;
    let problem = rotation_problem(jump_factor);
    let system = ok(FemSystem::new(&space, &problem), "system")?;
    let scheme = {
        let base = ok(dec_scheme(time_order), "tables")?;
        match corrections {
            Some(m) => base.with_corrections(m),
            None => base,
        }
    };
    let dt = ok(compute_dt(space.mesh(), &problem.velocity, cfl), "dt")?;
    let u0 = init_field(&space, gaussian);
    let lumped = space.lumped().to_vec();
    let scale: f64 = lumped.iter().zip(&u0).map(|(c, v)| c * v.abs()).sum();
    let mut rows = Vec::new();
    ok(
        integrate(
            &system,
            &scheme,
            L1Variant::Faithful,
            &u0,
            0.0,
            10.0,
            dt,
            |_, t, u| {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                let mut mass = 0.0;
                for (&c, &v) in lumped.iter().zip(u) {
                    min = min.min(v);
                    max = max.max(v);
                    mass += c * v;
                }
                rows.push(Row { t, min, max, mass });
            },
        ),
        "ten-rotation solve",
    )?;
    Ok(DiskRun { dofs: space.num_dofs(), dt, rows, scale })
}

static B2_RUN: OnceLock<Result<DiskRun, String>> = OnceLock::new();
static P1_RUN: OnceLock<Result<DiskRun, String>> = OnceLock::new();

fn b2_run() -> Result<&'static DiskRun, String> {
    B2_RUN
        .get_or_init(|| disk_run(ElementKind::B2Bezier, 24, 3, Some(5), 0.02, 0.5))
        .as_ref()
        .map_err(|e| format!("quadratic disk run: {e}"))
}

fn p1_run() -> Result<&'static DiskRun, String> {
    P1_RUN
        .get_or_init(|| disk_run(ElementKind::P1Lagrange, 48, 2, None, 0.1, 0.3))
        .as_ref()
        .map_err(|e| format!("linear disk run: {e}"))
}

// ---- criterion 6 --------------------------------------------------------

#[test]
fn criterion_6_rotating_gaussian() {
    check(6, "rotating gaussian benchmark", || {
        let b2 = b2_run()?;
        ensure!(
            (6800..=7300).contains(&b2.dofs),
            "quadratic disk has {} DOFs, wanted about 7000",
            b2.dofs
        );
        let r1 = b2.at(1.0);
        ensure!(
            r1.min >= -0.05,
            "one rotation: min {:.4} < -0.05",
            r1.min
        );
        ensure!(
            (0.80..=1.02).contains(&r1.max),
            "one rotation: max {:.4} outside [0.80, 1.02]",
            r1.max
        );
        let r10 = b2.at(10.0);
        ensure!(
            r10.min >= -0.05,
            "ten rotations: min {:.4} < -0.05",
            r10.min
        );
        ensure!(
            (0.80..=1.00).contains(&r10.max),
            "ten rotations: max {:.4} outside [0.80, 1.00]",
            r10.max
        );
        // Early-time guard: the overshoot window over the first two
        // rotations stays inside (-0.1, 1.05).
        for row in b2.rows.iter().filter(|r| r.t <= 2.0 + 1e-9) {
            ensure!(
                row.min >= -0.1 && row.max <= 1.05,
                "guard violated at t = {:.4}: min {:.4}, max {:.4}",
                row.t,
                row.min,
                row.max
            );
        }
        let p1 = p1_run()?;
        let p1r10 = p1.at(10.0);
        ensure!(
            (0.65..=0.90).contains(&p1r10.max),
            "linear elements, ten rotations: max {:.4} outside [0.65, 0.90]",
            p1r10.max
        );
        Ok(format!(
            "B2 ({} DOFs, dt {:.2e}): rot 1 min {:.4}/max {:.4}, rot 10 min {:.4}/max {:.4}; \
             P1 ({} DOFs): rot 10 min {:.4}/max {:.4}",
            b2.dofs, b2.dt, r1.min, r1.max, r10.min, r10.max, p1.dofs, p1r10.min, p1r10.max
        ))
    });
}

// ---- criterion 7 --------------------------------------------------------

#[test]
fn criterion_7_mass_conservation() {
    check(7, "lumped mass conservation", || {
        let b2 = b2_run()?;
        let drift = b2.max_mass_drift();
        ensure!(
            drift <= 1e-10,
            "ten-rotation run: relative mass drift {drift:.3e} > 1e-10"
        );
        let mut details = format!("disk drift {drift:.1e}");
        for (kind, order, jf, cfl) in [
            (ElementKind::P1Lagrange, 2usize, 0.1, 0.3),
            (ElementKind::B2Bezier, 3, 0.02, 0.15),
        ] {
            let space = ok(build_space(Mesh::interval(64, true).unwrap(), kind), "space")?;
            let problem = advection_problem(jf);
            let system = ok(FemSystem::new(&space, &problem), "system")?;
            let scheme = ok(dec_scheme(order), "tables")?;
            let dt = ok(compute_dt(space.mesh(), &problem.velocity, cfl), "dt")?;
            let u0 = init_field(&space, |x| sine(x) + 0.3);
            let lumped = space.lumped().to_vec();
            let scale: f64 = lumped.iter().zip(&u0).map(|(c, v)| c * v.abs()).sum();
            let mut drift_1d = 0.0f64;
            let mut mass0 = None;
            ok(
                integrate(
                    &system,
                    &scheme,
                    L1Variant::Faithful,
                    &u0,
                    0.0,
                    1.0,
                    dt,
                    |_, _, u| {
                        let mass: f64 = lumped.iter().zip(u).map(|(c, v)| c * v).sum();
                        let m0 = *mass0.get_or_insert(mass);
                        drift_1d = drift_1d.max((mass - m0).abs());
                    },
                ),
                "periodic run",
            )?;
            let rel = drift_1d / scale;
            ensure!(
                rel <= 1e-10,
                "{kind:?} periodic run: relative mass drift {rel:.3e} > 1e-10"
            );
            details.push_str(&format!(", {kind:?} 1D drift {rel:.1e}"));
        }
        Ok(details)
    });
}

// ---- criterion 8 --------------------------------------------------------

fn rerun_and_compare(config_text: &str, dir_a: &std::path::Path, dir_b: &std::path::Path)
    -> Result<usize, String>
{
    let cfg_a = ok(
        parse_config::<f64>(&format!("{config_text}output = {}\n", dir_a.display())),
        "config",
    )?;
    let cfg_b = ok(
        parse_config::<f64>(&format!("{config_text}output = {}\n", dir_b.display())),
        "config",
    )?;
    ok(run(&cfg_a), "first run")?;
    ok(run(&cfg_b), "second run")?;
    let list = |d: &std::path::Path| -> Result<Vec<String>, String> {
        let mut names: Vec<String> = ok(std::fs::read_dir(d), "read_dir")?
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        Ok(names)
    };
    let names_a = list(dir_a)?;
    let names_b = list(dir_b)?;
    ensure!(
        names_a == names_b && !names_a.is_empty(),
        "file sets differ: {names_a:?} vs {names_b:?}"
    );
    for name in &names_a {
        let bytes_a = ok(std::fs::read(dir_a.join(name)), name)?;
        let bytes_b = ok(std::fs::read(dir_b.join(name)), name)?;
        ensure!(bytes_a == bytes_b, "{name} differs between reruns");
    }
    Ok(names_a.len())
}

#[test]
fn criterion_8_bitwise_determinism() {
    check(8, "bitwise determinism", || {
        let tmp = ok(tempfile::tempdir(), "tempdir")?;
        let adv = "scenario = advection1d\nmesh = interval:32\nelements = b2\n\
                   time_order = 3\ncfl = 0.15\njump_factor = 0.02\nt_final = 0.3\n\
                   snapshot_every = 64\n";
        let n_adv = rerun_and_compare(adv, &tmp.path().join("adv_a"), &tmp.path().join("adv_b"))?;
        let disk = "scenario = rotating-gaussian\nmesh = disk:6\nelements = b2\n\
                    time_order = 3\ncorrections = 5\ncfl = 0.5\njump_factor = 0.02\n\
                    t_final = 0.05\nsnapshot_every = 50\n";
        let n_disk =
            rerun_and_compare(disk, &tmp.path().join("disk_a"), &tmp.path().join("disk_b"))?;
        Ok(format!(
            "{n_adv} advection files and {n_disk} disk files (CSV and VTK) byte-identical"
        ))
    });
}
