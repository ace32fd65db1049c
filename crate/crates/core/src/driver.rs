//! Run orchestration: scenario registry, `key = value` configuration files,
//! the solve loop with per-step diagnostics, and CSV/VTK emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dec::{compute_dt, dec_scheme, integrate, DecScheme, FemSystem, L1Variant};
use crate::error::{Error, Result};
use crate::mesh::{read_mesh_file, Mesh};
use crate::oracle::{
    assemble_mass, convergence_study, error_norm, mesh_size, reference_run, ConvergenceRun,
    ConvergenceTable,
};
use crate::residual::{
    BoundaryCondition, StabilizedScheme, TauBasis, TransportProblem, VelocityField,
};
use crate::scalar::{real, Real, Vec2};
use crate::space::{build_space, eval_field, init_field, ApproximationSpace, ElementKind};

/// Environment variable naming the root under which relative output
/// directories are created.
pub const OUTPUT_ROOT_VAR: &str = "DECFEM_OUT";

// ---- scenarios ----------------------------------------------------------

/// A problem with a known exact solution: initial data transported along
/// characteristics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scenario<T: Real> {
    /// `sin(2 pi wave x)` advected at unit speed across the unit interval.
    Advection1D { wave: usize },
    /// `exp(-40 |x - center|^2)` in solid-body rotation about the origin
    /// with angular velocity `2 pi`, so one time unit is one revolution.
    RotatingGaussian { center: Vec2<T> },
}

impl<T: Real> Scenario<T> {
    pub fn dim(&self) -> usize {
        match self {
            Scenario::Advection1D { .. } => 1,
            Scenario::RotatingGaussian { .. } => 2,
        }
    }

    pub fn velocity(&self) -> VelocityField<T> {
        match self {
            Scenario::Advection1D { .. } => VelocityField::Constant([T::one(), T::zero()]),
            Scenario::RotatingGaussian { .. } => VelocityField::Rotation {
                omega: real::<T>(2.0) * T::PI(),
            },
        }
    }

    pub fn initial(&self, x: Vec2<T>) -> T {
        match *self {
            Scenario::Advection1D { wave } => {
                let k = real::<T>(2.0) * T::PI() * real::<T>(wave as f64);
                (k * x[0]).sin()
            }
            Scenario::RotatingGaussian { center } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                (-real::<T>(40.0) * (dx * dx + dy * dy)).exp()
            }
        }
    }

    /// Exact solution: the initial profile evaluated at the point
    /// transported backwards along the characteristic through `x`.
    pub fn exact(&self, x: Vec2<T>, t: T) -> T {
        match *self {
            Scenario::Advection1D { .. } => self.initial([x[0] - t, x[1]]),
            Scenario::RotatingGaussian { .. } => {
                let (s, c) = (real::<T>(2.0) * T::PI() * t).sin_cos();
                self.initial([c * x[0] + s * x[1], c * x[1] - s * x[0]])
            }
        }
    }

    fn default_bc_kind(&self) -> BcKind {
        match self {
            Scenario::Advection1D { .. } => BcKind::Periodic,
            Scenario::RotatingGaussian { .. } => BcKind::InflowZero,
        }
    }
}

/// Boundary treatment selected in the configuration; expanded to the full
/// residual-level condition at run time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcKind {
    Periodic,
    /// Weak upwind boundary flux with zero inflow data.
    InflowZero,
}

impl BcKind {
    pub fn condition<T: Real>(self) -> BoundaryCondition<T> {
        match self {
            BcKind::Periodic => BoundaryCondition::Periodic,
            BcKind::InflowZero => BoundaryCondition::inflow(|_| T::zero()),
        }
    }
}

// ---- mesh specifications ------------------------------------------------

/// Where the mesh comes from: a built-in generator or an ASCII file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MeshSpec {
    Interval { n: usize, periodic: bool },
    Rectangle { nx: usize, ny: usize, periodic: bool },
    Disk { level: usize },
    File(PathBuf),
}

impl MeshSpec {
    /// `interval:n[:open]`, `rectangle:nx:ny[:open]`, `disk:level`,
    /// `file:path`.
    pub fn parse(text: &str) -> Result<MeshSpec> {
        let err = || {
            Error::InvalidSpecification(format!(
                "mesh '{text}' not understood; expected interval:n[:open], \
                 rectangle:nx:ny[:open], disk:level, or file:path"
            ))
        };
        let mut parts = text.split(':');
        let head = parts.next().ok_or_else(err)?.trim();
        let rest: Vec<&str> = parts.map(str::trim).collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| err());
        match head {
            "interval" => match rest.as_slice() {
                [n] => Ok(MeshSpec::Interval { n: num(n)?, periodic: true }),
                [n, "open"] => Ok(MeshSpec::Interval { n: num(n)?, periodic: false }),
                _ => Err(err()),
            },
            "rectangle" => match rest.as_slice() {
                [nx, ny] => Ok(MeshSpec::Rectangle { nx: num(nx)?, ny: num(ny)?, periodic: true }),
                [nx, ny, "open"] => {
                    Ok(MeshSpec::Rectangle { nx: num(nx)?, ny: num(ny)?, periodic: false })
                }
                _ => Err(err()),
            },
            "disk" => match rest.as_slice() {
                [l] => Ok(MeshSpec::Disk { level: num(l)? }),
                _ => Err(err()),
            },
            "file" => {
                if rest.is_empty() {
                    Err(err())
                } else {
                    // Paths may legitimately contain ':'.
                    Ok(MeshSpec::File(PathBuf::from(rest.join(":"))))
                }
            }
            _ => Err(err()),
        }
    }

    /// Dimension when it is known without touching the filesystem.
    pub fn dim_hint(&self) -> Option<usize> {
        match self {
            MeshSpec::Interval { .. } => Some(1),
            MeshSpec::Rectangle { .. } | MeshSpec::Disk { .. } => Some(2),
            MeshSpec::File(_) => None,
        }
    }

    pub fn build<T: Real>(&self) -> Result<Mesh<T>> {
        match self {
            MeshSpec::Interval { n, periodic } => Mesh::interval(*n, *periodic),
            MeshSpec::Rectangle { nx, ny, periodic } => {
                Mesh::rectangle(*nx, *ny, *periodic, *periodic)
            }
            MeshSpec::Disk { level } => Mesh::disk(*level),
            MeshSpec::File(path) => read_mesh_file(path.clone()),
        }
    }

    /// The same family at `factor` times the resolution; file meshes have
    /// no family to refine within.
    pub fn refined(&self, factor: usize) -> Option<MeshSpec> {
        match *self {
            MeshSpec::Interval { n, periodic } => {
                Some(MeshSpec::Interval { n: n * factor, periodic })
            }
            MeshSpec::Rectangle { nx, ny, periodic } => Some(MeshSpec::Rectangle {
                nx: nx * factor,
                ny: ny * factor,
                periodic,
            }),
            MeshSpec::Disk { level } => Some(MeshSpec::Disk { level: level * factor }),
            MeshSpec::File(_) => None,
        }
    }
}

// ---- configuration ------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig<T: Real> {
    pub scenario: Scenario<T>,
    pub mesh: MeshSpec,
    pub kind: ElementKind,
    pub scheme: StabilizedScheme,
    pub bc: BcKind,
    pub time_order: usize,
    /// Correction sweeps; defaults to the order when absent.
    pub corrections: Option<usize>,
    pub cfl: T,
    /// For the rotating scenario this is the number of revolutions, since
    /// the period is one time unit.
    pub t_final: T,
    pub jump_factor: T,
    pub amplitude: T,
    pub variant: L1Variant,
    pub tau_basis: TauBasis,
    pub petrov_mass: bool,
    pub output: PathBuf,
    /// Snapshot every this many steps; 0 disables snapshots.
    pub snapshot_every: usize,
    /// Also run the consistent-mass reference solver and report the
    /// difference.
    pub oracle: bool,
}

impl<T: Real> RunConfig<T> {
    pub fn problem(&self) -> TransportProblem<T> {
        let mut p = TransportProblem::new(
            self.scenario.velocity(),
            self.scheme,
            self.bc.condition(),
        );
        p.tau_basis = self.tau_basis;
        p.jump_factor = self.jump_factor;
        p.petrov_galerkin_mass = self.petrov_mass;
        p
    }

    pub fn scheme_tables(&self) -> Result<DecScheme> {
        let base = dec_scheme(self.time_order)?;
        Ok(match self.corrections {
            Some(m) => base.with_corrections(m),
            None => base,
        })
    }

    /// Output directory, placed under [`OUTPUT_ROOT_VAR`] when that is set
    /// and the configured path is relative.
    pub fn resolved_output(&self) -> PathBuf {
        if self.output.is_absolute() {
            return self.output.clone();
        }
        match std::env::var(OUTPUT_ROOT_VAR) {
            Ok(root) if !root.is_empty() => PathBuf::from(root).join(&self.output),
            _ => self.output.clone(),
        }
    }
}

struct ConfigBuilder<T: Real> {
    scenario: Option<&'static str>,
    wave: Option<usize>,
    center: Option<Vec2<T>>,
    mesh: Option<MeshSpec>,
    kind: Option<ElementKind>,
    scheme: Option<StabilizedScheme>,
    bc: Option<BcKind>,
    time_order: Option<usize>,
    corrections: Option<usize>,
    cfl: Option<T>,
    t_final: Option<T>,
    jump_factor: Option<T>,
    amplitude: Option<T>,
    variant: Option<L1Variant>,
    tau_basis: Option<TauBasis>,
    petrov_mass: Option<bool>,
    output: Option<PathBuf>,
    snapshot_every: Option<usize>,
    oracle: Option<bool>,
}

impl<T: Real> Default for ConfigBuilder<T> {
    fn default() -> Self {
        ConfigBuilder {
            scenario: None,
            wave: None,
            center: None,
            mesh: None,
            kind: None,
            scheme: None,
            bc: None,
            time_order: None,
            corrections: None,
            cfl: None,
            t_final: None,
            jump_factor: None,
            amplitude: None,
            variant: None,
            tau_basis: None,
            petrov_mass: None,
            output: None,
            snapshot_every: None,
            oracle: None,
        }
    }
}

/// Where a configuration item came from, for error reporting.
enum CfgSource {
    Line(usize),
    Override(String),
    Whole,
}

fn cfg_err(src: &CfgSource, msg: impl std::fmt::Display) -> Error {
    match src {
        CfgSource::Line(line) => Error::ConfigParse { line: *line, msg: msg.to_string() },
        CfgSource::Override(item) => {
            Error::ConfigInvalid(format!("override '{item}': {msg}"))
        }
        CfgSource::Whole => Error::ConfigInvalid(msg.to_string()),
    }
}

impl<T: Real> ConfigBuilder<T> {
    fn set(&mut self, key: &str, value: &str, ctx: &CfgSource) -> Result<()> {
        let norm_key = key.trim().to_ascii_lowercase().replace('-', "_");
        let value = value.trim();
        let norm_val = value.to_ascii_lowercase().replace(['-', '_'], "");
        let parse_t = |what: &str| -> Result<T> {
            value
                .parse::<f64>()
                .map(real::<T>)
                .map_err(|_| cfg_err(ctx, format!("{what} wants a number, got '{value}'")))
        };
        let parse_usize = |what: &str| -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| cfg_err(ctx, format!("{what} wants a non-negative integer, got '{value}'")))
        };
        let parse_bool = |what: &str| -> Result<bool> {
            match norm_val.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(cfg_err(ctx, format!("{what} wants true or false, got '{value}'"))),
            }
        };
        match norm_key.as_str() {
            "scenario" => {
                self.scenario = Some(match norm_val.as_str() {
                    "advection1d" => "advection1d",
                    "rotatinggaussian" => "rotating-gaussian",
                    _ => {
                        return Err(cfg_err(
                            ctx,
                            format!("unknown scenario '{value}' (advection1d, rotating-gaussian)"),
                        ))
                    }
                })
            }
            "wave" => {
                let w = parse_usize("wave")?;
                if w == 0 {
                    return Err(cfg_err(ctx, "wave must be at least 1"));
                }
                self.wave = Some(w);
            }
            "center" => {
                let nums: Vec<f64> = value
                    .replace(',', " ")
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| cfg_err(ctx, format!("center wants two numbers, got '{value}'")))?;
                if nums.len() != 2 {
                    return Err(cfg_err(ctx, format!("center wants two numbers, got '{value}'")));
                }
                self.center = Some([real::<T>(nums[0]), real::<T>(nums[1])]);
            }
            "mesh" => self.mesh = Some(MeshSpec::parse(value).map_err(|e| cfg_err(ctx, e))?),
            "elements" => {
                self.kind = Some(match norm_val.as_str() {
                    "p1" => ElementKind::P1Lagrange,
                    "p2" => ElementKind::P2Lagrange,
                    "b2" => ElementKind::B2Bezier,
                    _ => {
                        return Err(cfg_err(
                            ctx,
                            format!("unknown elements '{value}' (p1, p2, b2)"),
                        ))
                    }
                })
            }
            "scheme" => {
                self.scheme = Some(match norm_val.as_str() {
                    "supg" => StabilizedScheme::Supg,
                    "jump" => StabilizedScheme::GalerkinJump,
                    _ => {
                        return Err(cfg_err(
                            ctx,
                            format!(
                                "unknown scheme '{value}' (supg, jump; plain Galerkin is \
                                 jump with jump_factor = 0)"
                            ),
                        ))
                    }
                })
            }
            "bc" => {
                self.bc = Some(match norm_val.as_str() {
                    "periodic" => BcKind::Periodic,
                    "inflow" => BcKind::InflowZero,
                    _ => {
                        return Err(cfg_err(
                            ctx,
                            format!("unknown bc '{value}' (periodic, inflow)"),
                        ))
                    }
                })
            }
            "time_order" => self.time_order = Some(parse_usize("time_order")?),
            "corrections" => {
                let m = parse_usize("corrections")?;
                if m == 0 {
                    return Err(cfg_err(ctx, "corrections must be at least 1"));
                }
                self.corrections = Some(m);
            }
            "cfl" => {
                let v = parse_t("cfl")?;
                if !(v > T::zero()) {
                    return Err(cfg_err(ctx, format!("cfl must be positive, got {value}")));
                }
                self.cfl = Some(v);
            }
            "t_final" | "rotations" => {
                let v = parse_t("t_final")?;
                if !(v > T::zero()) {
                    return Err(cfg_err(ctx, format!("t_final must be positive, got {value}")));
                }
                self.t_final = Some(v);
            }
            "jump_factor" => {
                let v = parse_t("jump_factor")?;
                if v < T::zero() {
                    return Err(cfg_err(
                        ctx,
                        format!("jump_factor must be non-negative, got {value}"),
                    ));
                }
                self.jump_factor = Some(v);
            }
            "amplitude" => self.amplitude = Some(parse_t("amplitude")?),
            "l1_variant" => {
                self.variant = Some(match norm_val.as_str() {
                    "faithful" => L1Variant::Faithful,
                    "massonly" => L1Variant::MassOnly,
                    _ => {
                        return Err(cfg_err(
                            ctx,
                            format!("unknown l1_variant '{value}' (faithful, mass-only)"),
                        ))
                    }
                })
            }
            "tau" => {
                self.tau_basis = Some(match norm_val.as_str() {
                    "geometric" => TauBasis::Geometric,
                    "native" => TauBasis::Native,
                    _ => {
                        return Err(cfg_err(
                            ctx,
                            format!("unknown tau '{value}' (geometric, native)"),
                        ))
                    }
                })
            }
            "petrov_mass" => self.petrov_mass = Some(parse_bool("petrov_mass")?),
            "output" => self.output = Some(PathBuf::from(value)),
            "snapshot_every" => self.snapshot_every = Some(parse_usize("snapshot_every")?),
            "oracle" => self.oracle = Some(parse_bool("oracle")?),
            _ => return Err(cfg_err(ctx, format!("unknown key '{}'", key.trim()))),
        }
        Ok(())
    }

    fn build(self) -> Result<RunConfig<T>> {
        let scenario_name = self
            .scenario
            .ok_or_else(|| cfg_err(&CfgSource::Whole, "mandatory key 'scenario' is missing"))?;
        let mesh = self
            .mesh
            .ok_or_else(|| cfg_err(&CfgSource::Whole, "mandatory key 'mesh' is missing"))?;
        let scenario = match scenario_name {
            "advection1d" => {
                if self.center.is_some() {
                    return Err(cfg_err(&CfgSource::Whole, "'center' only applies to rotating-gaussian"));
                }
                Scenario::Advection1D { wave: self.wave.unwrap_or(1) }
            }
            _ => {
                if self.wave.is_some() {
                    return Err(cfg_err(&CfgSource::Whole, "'wave' only applies to advection1d"));
                }
                Scenario::RotatingGaussian {
                    center: self.center.unwrap_or([T::zero(), T::zero()]),
                }
            }
        };
        if let Some(d) = mesh.dim_hint() {
            if d != scenario.dim() {
                return Err(cfg_err(
                    &CfgSource::Whole,
                    format!(
                        "scenario is {}-dimensional but the mesh is {d}-dimensional",
                        scenario.dim()
                    ),
                ));
            }
        }
        Ok(RunConfig {
            scenario,
            mesh,
            kind: self.kind.unwrap_or(ElementKind::B2Bezier),
            scheme: self.scheme.unwrap_or(StabilizedScheme::GalerkinJump),
            bc: self.bc.unwrap_or_else(|| scenario.default_bc_kind()),
            time_order: self.time_order.unwrap_or(3),
            corrections: self.corrections,
            cfl: self.cfl.unwrap_or_else(|| real(0.5)),
            t_final: self.t_final.unwrap_or_else(T::one),
            jump_factor: self.jump_factor.unwrap_or_else(T::one),
            amplitude: self.amplitude.unwrap_or_else(T::one),
            variant: self.variant.unwrap_or_default(),
            tau_basis: self.tau_basis.unwrap_or_default(),
            petrov_mass: self.petrov_mass.unwrap_or(false),
            output: self.output.unwrap_or_else(|| PathBuf::from("out")),
            snapshot_every: self.snapshot_every.unwrap_or(0),
            oracle: self.oracle.unwrap_or(false),
        })
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// skipped, unknown keys are rejected with their line number.
pub fn parse_config<T: Real>(text: &str) -> Result<RunConfig<T>> {
    parse_config_with_overrides(text, &[])
}

/// Same, then applies `key=value` override strings on top (the CLI's
/// `--override` flag).
pub fn parse_config_with_overrides<T: Real>(
    text: &str,
    overrides: &[String],
) -> Result<RunConfig<T>> {
    let mut builder = ConfigBuilder::<T>::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ctx = CfgSource::Line(lineno + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(&ctx, format!("expected 'key = value', got '{line}'")))?;
        builder.set(key, value, &ctx)?;
    }
    for item in overrides {
        let ctx = CfgSource::Override(item.clone());
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| cfg_err(&ctx, "expected 'key=value'"))?;
        builder.set(key, value, &ctx)?;
    }
    builder.build()
}

// ---- diagnostics and output ---------------------------------------------

/// One line of the per-step diagnostics CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRow<T> {
    pub step: usize,
    pub t: T,
    pub min: T,
    pub max: T,
    /// Discrete norm `sqrt(sum C_sigma u_sigma^2)`.
    pub l2: T,
    /// Lumped total `sum C_sigma u_sigma`.
    pub mass: T,
}

fn diagnostics_row<T: Real>(step: usize, t: T, lumped: &[T], u: &[T]) -> DiagnosticsRow<T> {
    let mut min = T::infinity();
    let mut max = T::neg_infinity();
    let mut l2 = T::zero();
    let mut mass = T::zero();
    for (&c, &v) in lumped.iter().zip(u) {
        if v < min {
            min = v;
        }
        if v > max {
            max = v;
        }
        l2 = l2 + c * v * v;
        mass = mass + c * v;
    }
    DiagnosticsRow { step, t, min, max, l2: l2.sqrt(), mass }
}

fn fmt_f<T: Real>(v: T) -> String {
    format!("{:e}", v.to_f64().unwrap_or(f64::NAN))
}

pub const DIAGNOSTICS_HEADER: &str = "step,t,min,max,l2,mass";

fn push_row<T: Real>(csv: &mut String, row: &DiagnosticsRow<T>) {
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{}",
        row.step,
        fmt_f(row.t),
        fmt_f(row.min),
        fmt_f(row.max),
        fmt_f(row.l2),
        fmt_f(row.mass)
    );
}

/// Legacy ASCII VTK unstructured grid for a 2D field. Linear elements map
/// to one triangle each; quadratic Bezier elements are split into four
/// linear sub-triangles whose midpoint values come from evaluating the
/// field (control values are coefficients, not point values).
pub fn vtk_string<T: Real>(space: &ApproximationSpace<T>, field: &[T]) -> Result<String> {
    let mesh = space.mesh();
    if mesh.dim() != 2 {
        return Err(Error::ContractViolation(
            "VTK output needs a 2D space".into(),
        ));
    }
    if field.len() != space.num_dofs() {
        return Err(Error::ContractViolation(format!(
            "field length {} does not match space with {} DOFs",
            field.len(),
            space.num_dofs()
        )));
    }
    let nv = mesh.num_vertices();
    let quadratic = space.kind() != ElementKind::P1Lagrange;

    // Vertex values through the vertex DOF (for the kinds used here the
    // vertex coefficient is the point value).
    let mut vertex_value = vec![T::zero(); nv];
    for k in 0..mesh.num_elements() {
        let dofs = space.element_dofs(k);
        for (i, &v) in mesh.element(k).iter().enumerate() {
            vertex_value[v] = field[dofs[i]];
        }
    }

    let mut points: Vec<(Vec2<T>, T)> = (0..nv)
        .map(|v| (mesh.vertex(v), vertex_value[v]))
        .collect();
    let mut cells: Vec<[usize; 3]> = Vec::new();

    if !quadratic {
        for k in 0..mesh.num_elements() {
            let e = mesh.element(k);
            cells.push([e[0], e[1], e[2]]);
        }
    } else {
        let edges = mesh.geometric_edges();
        let edge_index: BTreeMap<[usize; 2], usize> =
            edges.iter().enumerate().map(|(i, &e)| (e, nv + i)).collect();
        let half = real::<T>(0.5);
        for &[a, b] in &edges {
            let pa = mesh.vertex(a);
            let pb = mesh.vertex(b);
            let mid = [half * (pa[0] + pb[0]), half * (pa[1] + pb[1])];
            points.push((mid, T::zero()));
        }
        let mut have_value = vec![false; edges.len()];
        // Local edges (01), (12), (20) with their midpoint barycentrics.
        let local_edges: [([usize; 2], [T; 3]); 3] = [
            ([0, 1], [half, half, T::zero()]),
            ([1, 2], [T::zero(), half, half]),
            ([2, 0], [half, T::zero(), half]),
        ];
        for k in 0..mesh.num_elements() {
            let e = mesh.element(k);
            let mut mid_pt = [0usize; 3];
            for (j, (locals, lambda)) in local_edges.iter().enumerate() {
                let mut pair = [e[locals[0]], e[locals[1]]];
                pair.sort_unstable();
                let pid = edge_index[&pair];
                mid_pt[j] = pid;
                let slot = pid - nv;
                if !have_value[slot] {
                    points[pid].1 = eval_field(space, field, k, lambda);
                    have_value[slot] = true;
                }
            }
            let [m01, m12, m20] = mid_pt;
            cells.push([e[0], m01, m20]);
            cells.push([m01, e[1], m12]);
            cells.push([m20, m12, e[2]]);
            cells.push([m01, m12, m20]);
        }
    }

    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("decfem field snapshot\n");
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", points.len());
    for (p, _) in &points {
        let _ = writeln!(out, "{} {} 0", fmt_f(p[0]), fmt_f(p[1]));
    }
    let _ = writeln!(out, "CELLS {} {}", cells.len(), 4 * cells.len());
    for c in &cells {
        let _ = writeln!(out, "3 {} {} {}", c[0], c[1], c[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {}", cells.len());
    for _ in &cells {
        out.push_str("5\n");
    }
    let _ = writeln!(out, "POINT_DATA {}", points.len());
    out.push_str("SCALARS u double 1\nLOOKUP_TABLE default\n");
    for (_, v) in &points {
        let _ = writeln!(out, "{}", fmt_f(*v));
    }
    Ok(out)
}

pub fn write_vtk<T: Real>(space: &ApproximationSpace<T>, field: &[T], path: &Path) -> Result<()> {
    let text = vtk_string(space, field)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// `x,u` CSV for 1D fields, sampled at vertices (and, for quadratic
/// elements, at midpoints) in ascending position.
pub fn snapshot_1d_string<T: Real>(space: &ApproximationSpace<T>, field: &[T]) -> Result<String> {
    let mesh = space.mesh();
    if mesh.dim() != 1 {
        return Err(Error::ContractViolation(
            "1D snapshots need a 1D space".into(),
        ));
    }
    let half = real::<T>(0.5);
    let mut samples: Vec<(T, T)> = Vec::new();
    for k in 0..mesh.num_elements() {
        let geom = mesh.element_geometry(k);
        let mut lambdas = vec![[T::one(), T::zero(), T::zero()], [T::zero(), T::one(), T::zero()]];
        if space.kind() != ElementKind::P1Lagrange {
            lambdas.push([half, half, T::zero()]);
        }
        for l in lambdas {
            let x = geom.point(&l);
            samples.push((x[0], eval_field(space, field, k, &l)));
        }
    }
    samples.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("coordinates are finite"));
    samples.dedup_by(|a, b| (a.0 - b.0).abs() <= real::<T>(1e-13));
    let mut out = String::from("x,u\n");
    for (x, v) in samples {
        let _ = writeln!(out, "{},{}", fmt_f(x), fmt_f(v));
    }
    Ok(out)
}

// ---- the solve loop -----------------------------------------------------

#[derive(Clone, Debug)]
pub struct RunSummary<T: Real> {
    pub dofs: usize,
    pub steps: usize,
    pub dt: T,
    pub final_time: T,
    pub min: T,
    pub max: T,
    /// Change of the lumped total over the run, relative to the initial
    /// lumped magnitude `sum C_sigma |u_sigma|`.
    pub mass_drift: T,
    pub final_error: T,
    /// Max-norm distance to the consistent-mass reference solution, when
    /// the oracle toggle is on.
    pub oracle_diff: Option<T>,
    pub output_dir: PathBuf,
}

/// Runs the configured scenario: time loop with per-step diagnostics,
/// snapshots at the configured cadence, and a final comparison against the
/// exact transported profile. Partial diagnostics are flushed even when
/// the solver fails mid-run.
pub fn run<T: Real>(config: &RunConfig<T>) -> Result<RunSummary<T>> {
    let mesh = config.mesh.build::<T>()?;
    if mesh.dim() != config.scenario.dim() {
        return Err(Error::ConfigInvalid(format!(
            "scenario is {}-dimensional but the mesh is {}-dimensional",
            config.scenario.dim(),
            mesh.dim()
        )));
    }
    let space = build_space(mesh, config.kind)?;
    let problem = config.problem();
    let scheme = config.scheme_tables()?;
    let dt = compute_dt(space.mesh(), &problem.velocity, config.cfl)?;
    let amp = config.amplitude;
    let scenario = config.scenario;
    let u0 = init_field(&space, |x| amp * scenario.initial(x));

    let out_dir = config.resolved_output();
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let lumped = space.lumped();
    let mut csv = String::from(DIAGNOSTICS_HEADER);
    csv.push('\n');
    let mut first_row: Option<DiagnosticsRow<T>> = None;
    let mut last_row: Option<DiagnosticsRow<T>> = None;
    let mut pending_snapshots: Vec<(usize, Vec<T>)> = Vec::new();

    let system = FemSystem::new(&space, &problem)?;
    let result = integrate(
        &system,
        &scheme,
        config.variant,
        &u0,
        T::zero(),
        config.t_final,
        dt,
        |step, t, u| {
            let row = diagnostics_row(step, t, lumped, u);
            push_row(&mut csv, &row);
            if first_row.is_none() {
                first_row = Some(row);
            }
            last_row = Some(row);
            if config.snapshot_every > 0 && step % config.snapshot_every == 0 {
                pending_snapshots.push((step, u.to_vec()));
            }
        },
    );

    // Flush diagnostics before propagating any failure: a truncated CSV is
    // the primary debugging artifact for a blown-up run.
    let diag_path = out_dir.join("diagnostics.csv");
    std::fs::write(&diag_path, &csv).map_err(|e| Error::io(diag_path.display().to_string(), e))?;
    let write_snapshot = |step: usize, u: &[T]| -> Result<()> {
        let path = if space.mesh().dim() == 2 {
            out_dir.join(format!("u_{step:06}.vtk"))
        } else {
            out_dir.join(format!("u_{step:06}.csv"))
        };
        let text = if space.mesh().dim() == 2 {
            vtk_string(&space, u)?
        } else {
            snapshot_1d_string(&space, u)?
        };
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
    };
    for (step, u) in &pending_snapshots {
        write_snapshot(*step, u)?;
    }
    let u = result?;
    let last = last_row.expect("integrate always reports at least the initial state");
    let first = first_row.expect("integrate always reports at least the initial state");
    if config.snapshot_every > 0 && pending_snapshots.last().map(|s| s.0) != Some(last.step) {
        write_snapshot(last.step, &u)?;
    }

    let t_final = config.t_final;
    let final_error = error_norm(&space, &u, |x| amp * scenario.exact(x, t_final));
    let err_path = out_dir.join("error.txt");
    std::fs::write(&err_path, format!("l2_error = {}\n", fmt_f(final_error)))
        .map_err(|e| Error::io(err_path.display().to_string(), e))?;

    let oracle_diff = if config.oracle {
        let mass = assemble_mass(&space)?;
        let reference = reference_run(&space, &mass, &problem, &u0, t_final, dt)?;
        let mut diff = T::zero();
        for (a, b) in u.iter().zip(&reference) {
            let d = (*a - *b).abs();
            if d > diff {
                diff = d;
            }
        }
        let ref_error = error_norm(&space, &reference, |x| amp * scenario.exact(x, t_final));
        let oracle_path = out_dir.join("oracle.txt");
        std::fs::write(
            &oracle_path,
            format!(
                "linf_diff = {}\nreference_l2_error = {}\n",
                fmt_f(diff),
                fmt_f(ref_error)
            ),
        )
        .map_err(|e| Error::io(oracle_path.display().to_string(), e))?;
        Some(diff)
    } else {
        None
    };

    let scale = lumped
        .iter()
        .zip(&u0)
        .map(|(&c, &v)| c * v.abs())
        .fold(T::zero(), |a, b| a + b)
        .max(real::<T>(1e-30));
    Ok(RunSummary {
        dofs: space.num_dofs(),
        steps: last.step,
        dt,
        final_time: last.t,
        min: last.min,
        max: last.max,
        mass_drift: (last.mass - first.mass).abs() / scale,
        final_error,
        oracle_diff,
        output_dir: out_dir,
    })
}

/// Convergence study over the built-in refinement family of the configured
/// mesh: four members in 1D, three in 2D.
pub fn converge<T: Real>(config: &RunConfig<T>) -> Result<ConvergenceTable<T>> {
    let factors: &[usize] = if config.scenario.dim() == 1 { &[1, 2, 4, 8] } else { &[1, 2, 4] };
    let mut meshes = Vec::with_capacity(factors.len());
    for &f in factors {
        let spec = config.mesh.refined(f).ok_or_else(|| {
            Error::ConfigInvalid(
                "convergence studies need a generated mesh family (interval, rectangle, disk), \
                 not a mesh file"
                    .into(),
            )
        })?;
        meshes.push(spec.build::<T>()?);
    }
    let problem = config.problem();
    let amp = config.amplitude;
    let scenario = config.scenario;
    let t_final = config.t_final;
    let u0 = move |x: Vec2<T>| amp * scenario.initial(x);
    let exact = move |x: Vec2<T>| amp * scenario.exact(x, t_final);
    let case = ConvergenceRun {
        kind: config.kind,
        problem: &problem,
        time_order: config.time_order,
        corrections: config.corrections,
        variant: config.variant,
        cfl: config.cfl,
        t_final,
        u0: &u0,
        exact: &exact,
    };
    convergence_study(&case, meshes)
}

/// Human-readable statistics for `mesh-info`.
pub fn mesh_info<T: Real>(mesh: &Mesh<T>) -> String {
    let mut h_min = T::infinity();
    for [a, b] in mesh.geometric_edges() {
        let d = crate::scalar::norm(crate::scalar::sub(mesh.vertex(b), mesh.vertex(a)));
        if d < h_min {
            h_min = d;
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "dimension        : {}", mesh.dim());
    let _ = writeln!(out, "vertices         : {}", mesh.num_vertices());
    let _ = writeln!(out, "elements         : {}", mesh.num_elements());
    let _ = writeln!(out, "interior facets  : {}", mesh.interior_facets().len());
    let _ = writeln!(out, "boundary facets  : {}", mesh.boundary_facets().len());
    let _ = writeln!(out, "periodic         : {}", mesh.is_periodic());
    let _ = writeln!(out, "total measure    : {}", fmt_f(mesh.total_measure()));
    let _ = writeln!(out, "h (min span)     : {}", fmt_f(h_min));
    let _ = writeln!(out, "h (max span)     : {}", fmt_f(mesh_size(mesh)));
    out
}
