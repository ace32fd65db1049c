//! Independent verification path: the consistent-mass solver the main
//! integrator is designed to avoid.
//!
//! Everything here is deliberately conventional — assembled sparse mass
//! matrix, conjugate-gradient solves, classical strong-stability-preserving
//! Runge-Kutta — so that agreement with the deferred-correction path is
//! meaningful evidence rather than a shared-bug tautology.

use crate::dec::{compute_dt, dec_scheme, integrate, FemSystem, L1Variant};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::{duffy_rule, quadrature_rule};
use crate::residual::{assemble_residual, TransportProblem};
use crate::scalar::{norm, real, sub, Real, Vec2};
use crate::space::{
    build_space, eval_field, init_field, shape_values_and_gradients, ApproximationSpace,
    ElementKind,
};

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix<T> {
    pub n: usize,
    row_offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Accumulates duplicate (row, col) entries.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; n + 1];
        let mut cols: Vec<usize> = Vec::new();
        let mut vals: Vec<T> = Vec::new();
        let mut cur_row = 0usize;
        for (r, c, v) in triplets {
            debug_assert!(r < n && c < n);
            while cur_row < r {
                row_offsets[cur_row + 1] = cols.len();
                cur_row += 1;
            }
            if cols.len() > row_offsets[cur_row] && *cols.last().unwrap() == c {
                let last = vals.last_mut().unwrap();
                *last = *last + v;
            } else {
                cols.push(c);
                vals.push(v);
            }
        }
        while cur_row < n {
            row_offsets[cur_row + 1] = cols.len();
            cur_row += 1;
        }
        CsrMatrix { n, row_offsets, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let lo = self.row_offsets[r];
        let hi = self.row_offsets[r + 1];
        match self.cols[lo..hi].binary_search(&c) {
            Ok(k) => self.vals[lo + k],
            Err(_) => T::zero(),
        }
    }

    pub fn matvec(&self, x: &[T], out: &mut [T]) {
        for r in 0..self.n {
            let mut acc = T::zero();
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                acc = acc + self.vals[k] * x[self.cols[k]];
            }
            out[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n)
            .map(|r| {
                (self.row_offsets[r]..self.row_offsets[r + 1])
                    .map(|k| self.vals[k])
                    .fold(T::zero(), |a, b| a + b)
            })
            .collect()
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        for r in 0..self.n {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                if (self.vals[k] - self.get(self.cols[k], r)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Consistent Galerkin mass matrix, assembled with the same quadrature
/// degree as the lumped coefficients so row sums reproduce them exactly.
pub fn assemble_mass<T: Real>(space: &ApproximationSpace<T>) -> Result<CsrMatrix<T>> {
    let mesh = space.mesh();
    let dim = mesh.dim();
    let r = space.kind().order();
    let nloc = space.kind().local_dofs(dim);
    let rule = quadrature_rule::<T>(dim, 2 * r)?;
    let mut triplets = Vec::with_capacity(mesh.num_elements() * nloc * nloc);
    for k in 0..mesh.num_elements() {
        let geom = mesh.element_geometry(k);
        let dofs = space.element_dofs(k);
        let mut local = [[T::zero(); 6]; 6];
        for (p, &wq) in rule.points.iter().zip(&rule.weights) {
            let shape = shape_values_and_gradients(space.kind(), &geom, p);
            let scale = wq * geom.measure;
            for i in 0..nloc {
                for j in 0..nloc {
                    local[i][j] = local[i][j] + scale * shape.values[i] * shape.values[j];
                }
            }
        }
        for i in 0..nloc {
            for j in 0..nloc {
                triplets.push((dofs[i], dofs[j], local[i][j]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(space.num_dofs(), triplets))
}

/// Diagonally preconditioned conjugate gradients to relative residual
/// `tol`; gives up after `10 n` iterations.
pub fn jacobi_cg<T: Real>(mat: &CsrMatrix<T>, rhs: &[T], tol: T) -> Result<Vec<T>> {
    let n = mat.n;
    let b_norm = rhs.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b).sqrt();
    if b_norm == T::zero() {
        return Ok(vec![T::zero(); n]);
    }
    let inv_diag: Vec<T> = mat
        .diagonal()
        .into_iter()
        .map(|d| if d > T::zero() { T::one() / d } else { T::one() })
        .collect();
    let mut x = vec![T::zero(); n];
    let mut r = rhs.to_vec();
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(&a, &d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![T::zero(); n];
    let max_iters = 10 * n;
    for iter in 0..=max_iters {
        let res = dot(&r, &r).sqrt();
        if res <= tol * b_norm {
            return Ok(x);
        }
        if iter == max_iters {
            return Err(Error::SolverStagnation {
                iters: max_iters,
                residual: (res / b_norm).to_f64().unwrap_or(f64::NAN),
            });
        }
        mat.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > T::zero()) {
            return Err(Error::SolverStagnation {
                iters: iter,
                residual: (res / b_norm).to_f64().unwrap_or(f64::NAN),
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] = x[i] + alpha * p[i];
            r[i] = r[i] - alpha * q[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    unreachable!()
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).fold(T::zero(), |s, v| s + v)
}

const CG_TOL: f64 = 1e-12;

/// `y = M^{-1} (-Phi(u, t))`, the right-hand side of the consistent-mass
/// semi-discrete system.
fn mass_inverse_residual<T: Real>(
    space: &ApproximationSpace<T>,
    mass: &CsrMatrix<T>,
    problem: &TransportProblem<T>,
    u: &[T],
    t: T,
) -> Result<Vec<T>> {
    let mut phi = assemble_residual(space, u, problem, t)?;
    for v in phi.iter_mut() {
        *v = -*v;
    }
    jacobi_cg(mass, &phi, real::<T>(CG_TOL))
}

/// One step of the classical three-stage strong-stability-preserving
/// Runge-Kutta scheme on `M du/dt = -Phi(u)`.
pub fn reference_step<T: Real>(
    space: &ApproximationSpace<T>,
    mass: &CsrMatrix<T>,
    problem: &TransportProblem<T>,
    u_n: &[T],
    t_n: T,
    dt: T,
) -> Result<Vec<T>> {
    let n = u_n.len();
    let half = real::<T>(0.5);
    let l0 = mass_inverse_residual(space, mass, problem, u_n, t_n)?;
    let u1: Vec<T> = (0..n).map(|i| u_n[i] + dt * l0[i]).collect();
    let l1 = mass_inverse_residual(space, mass, problem, &u1, t_n + dt)?;
    let c34 = real::<T>(0.75);
    let c14 = real::<T>(0.25);
    let u2: Vec<T> = (0..n)
        .map(|i| c34 * u_n[i] + c14 * (u1[i] + dt * l1[i]))
        .collect();
    let l2 = mass_inverse_residual(space, mass, problem, &u2, t_n + half * dt)?;
    let c13 = T::one() / real::<T>(3.0);
    let c23 = real::<T>(2.0) / real::<T>(3.0);
    Ok((0..n)
        .map(|i| c13 * u_n[i] + c23 * (u2[i] + dt * l2[i]))
        .collect())
}

/// Marches the reference scheme to `t_final` with the last step clipped,
/// mirroring the main integrator's loop.
pub fn reference_run<T: Real>(
    space: &ApproximationSpace<T>,
    mass: &CsrMatrix<T>,
    problem: &TransportProblem<T>,
    u0: &[T],
    t_final: T,
    dt: T,
) -> Result<Vec<T>> {
    let mut u = u0.to_vec();
    let mut t = T::zero();
    let tail = dt * real::<T>(1e-9);
    while t < t_final - tail {
        let step_dt = if t + dt > t_final - tail { t_final - t } else { dt };
        u = reference_step(space, mass, problem, &u, t, step_dt)?;
        t = t + step_dt;
    }
    Ok(u)
}

/// L2 distance between a discrete field and a pointwise function,
/// integrated element by element two degrees above the product rule.
pub fn error_norm<T: Real>(
    space: &ApproximationSpace<T>,
    field: &[T],
    exact: impl Fn(Vec2<T>) -> T,
) -> T {
    let mesh = space.mesh();
    let dim = mesh.dim();
    let degree = 2 * space.kind().order() + 2;
    let rule = if degree > 5 {
        // Tensor Gauss reaches degree 2n-2 (2D) and 2n-1 (1D).
        duffy_rule::<T>(dim, degree / 2 + 1).expect("duffy rule")
    } else {
        quadrature_rule::<T>(dim, degree).expect("volume rule")
    };
    let mut acc = T::zero();
    for k in 0..mesh.num_elements() {
        let geom = mesh.element_geometry(k);
        for (p, &wq) in rule.points.iter().zip(&rule.weights) {
            let x = geom.point(p);
            let diff = eval_field(space, field, k, p) - exact(x);
            acc = acc + wq * geom.measure * diff * diff;
        }
    }
    acc.sqrt()
}

/// One row of a convergence table.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow<T> {
    pub h: T,
    pub error: T,
    /// `log2(e_{2h} / e_h)`, absent for the coarsest mesh.
    pub order: Option<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable<T> {
    pub rows: Vec<ConvergenceRow<T>>,
}

impl<T: Real> ConvergenceTable<T> {
    pub fn to_csv(&self) -> String {
        let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
        let mut out = String::from("h,error,order\n");
        for row in &self.rows {
            match row.order {
                Some(p) => {
                    out.push_str(&format!("{:e},{:e},{}\n", f(row.h), f(row.error), f(p)))
                }
                None => out.push_str(&format!("{:e},{:e},\n", f(row.h), f(row.error))),
            }
        }
        out
    }

    /// Observed order between the two finest meshes.
    pub fn final_order(&self) -> Option<T> {
        self.rows.last().and_then(|r| r.order)
    }
}

/// Everything a convergence study needs besides the mesh sequence.
pub struct ConvergenceRun<'a, T: Real> {
    pub kind: ElementKind,
    pub problem: &'a TransportProblem<T>,
    pub time_order: usize,
    pub corrections: Option<usize>,
    pub variant: L1Variant,
    pub cfl: T,
    pub t_final: T,
    pub u0: &'a dyn Fn(Vec2<T>) -> T,
    /// Exact solution at `t_final`.
    pub exact: &'a dyn Fn(Vec2<T>) -> T,
}

/// Longest edge over all elements.
pub fn mesh_size<T: Real>(mesh: &Mesh<T>) -> T {
    let mut h = T::zero();
    for [a, b] in mesh.geometric_edges() {
        let d = norm(sub(mesh.vertex(b), mesh.vertex(a)));
        if d > h {
            h = d;
        }
    }
    h
}

/// Runs the deferred-correction solver on every mesh and tabulates L2
/// errors; the step size is recomputed per mesh so spatial and temporal
/// resolution refine together.
pub fn convergence_study<T: Real>(
    run: &ConvergenceRun<'_, T>,
    meshes: Vec<Mesh<T>>,
) -> Result<ConvergenceTable<T>> {
    if meshes.len() < 3 {
        return Err(Error::ContractViolation(format!(
            "convergence study needs at least 3 meshes, got {}",
            meshes.len()
        )));
    }
    let mut rows: Vec<ConvergenceRow<T>> = Vec::with_capacity(meshes.len());
    for (idx, mesh) in meshes.into_iter().enumerate() {
        let h = mesh_size(&mesh);
        if let Some(prev) = rows.last() {
            if !(h < prev.h) {
                return Err(Error::ContractViolation(
                    "mesh sequence must be strictly refining".into(),
                ));
            }
        }
        let hf = h.to_f64().unwrap_or(f64::NAN);
        let context = |e: Error| {
            Error::ContractViolation(format!(
                "convergence study failed on mesh #{idx} (h = {hf:.6e}): {e}"
            ))
        };
        let space = build_space(mesh, run.kind).map_err(context)?;
        let scheme = {
            let base = dec_scheme(run.time_order)?;
            match run.corrections {
                Some(m) => base.with_corrections(m),
                None => base,
            }
        };
        let system = FemSystem::new(&space, run.problem).map_err(context)?;
        let dt = compute_dt(space.mesh(), &run.problem.velocity, run.cfl).map_err(context)?;
        let u0 = init_field(&space, run.u0);
        let u = integrate(
            &system,
            &scheme,
            run.variant,
            &u0,
            T::zero(),
            run.t_final,
            dt,
            |_, _, _| {},
        )
        .map_err(context)?;
        let error = error_norm(&space, &u, run.exact);
        let order = rows
            .last()
            .map(|prev| (prev.error / error).ln() / (prev.h / h).ln());
        rows.push(ConvergenceRow { h, error, order });
    }
    Ok(ConvergenceTable { rows })
}
