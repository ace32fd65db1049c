//! Spatial residuals for the linear transport equation
//! `du/dt + div(a(x) u) = 0`.
//!
//! The Galerkin core of the residual for a DOF sigma on element K is
//! `int_{dK} phi_sigma (a.n) u ds - int_K grad(phi_sigma) . a u dx`,
//! assembled element by element with each element's own trace (continuity
//! makes interior facet fluxes cancel). Two stabilizations are offered:
//! a streamline (SUPG) term and a gradient-jump penalty on interior facets.
//! Inflow boundary values enter weakly through an upwind flux correction.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{ElementGeometry, InteriorFacet};
use crate::quadrature::{gauss_unit_interval, quadrature_rule, QuadratureRule};
use crate::scalar::{dot, norm, real, Real, Vec2};
use crate::space::{shape_values_and_gradients, ApproximationSpace, ElementKind};

/// Advection velocity field.
#[derive(Clone, Copy, Debug)]
pub enum VelocityField<T: Real> {
    Constant(Vec2<T>),
    /// Solid-body rotation `a(x, y) = omega (-y, x)`.
    Rotation { omega: T },
}

impl<T: Real> VelocityField<T> {
    #[inline]
    pub fn at(&self, x: Vec2<T>) -> Vec2<T> {
        match *self {
            VelocityField::Constant(v) => v,
            VelocityField::Rotation { omega } => [-omega * x[1], omega * x[0]],
        }
    }

    /// Velocity at the element centroid (the `a_bar` of the tau and CFL
    /// rules).
    #[inline]
    pub fn at_centroid(&self, geom: &ElementGeometry<T>) -> Vec2<T> {
        self.at(geom.centroid)
    }
}

/// Which stabilization augments the Galerkin residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabilizedScheme {
    Supg,
    GalerkinJump,
}

/// Gradient set used in the SUPG scale: the geometric (barycentric)
/// gradients of the simplex, or the native basis gradients at the centroid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TauBasis {
    #[default]
    Geometric,
    Native,
}

/// Pointwise boundary value `g(x, t)` for the weak inflow condition.
pub type BoundaryValue<T> = Arc<dyn Fn(Vec2<T>, T) -> T + Send + Sync>;

#[derive(Clone)]
pub enum BoundaryCondition<T: Real> {
    /// All boundaries removed by periodic identification at mesh level;
    /// any remaining boundary facets keep the raw Galerkin flux.
    Periodic,
    /// Upwind flux on the boundary: `(a.n)+ u + (a.n)- g`. The flag tells
    /// the time integrator whether `g` actually depends on `t` (residual
    /// caching of coincident states is valid only when it does not).
    WeakInflow {
        g: BoundaryValue<T>,
        time_dependent: bool,
    },
}

impl<T: Real> BoundaryCondition<T> {
    /// Steady inflow value `g(x)`.
    pub fn inflow(g: impl Fn(Vec2<T>) -> T + Send + Sync + 'static) -> Self {
        BoundaryCondition::WeakInflow {
            g: Arc::new(move |x, _| g(x)),
            time_dependent: false,
        }
    }

    /// Time-dependent inflow value `g(x, t)`.
    pub fn inflow_unsteady(g: impl Fn(Vec2<T>, T) -> T + Send + Sync + 'static) -> Self {
        BoundaryCondition::WeakInflow {
            g: Arc::new(g),
            time_dependent: true,
        }
    }

    /// True when the residual does not depend on time explicitly.
    pub fn is_autonomous(&self) -> bool {
        match self {
            BoundaryCondition::Periodic => true,
            BoundaryCondition::WeakInflow { time_dependent, .. } => !time_dependent,
        }
    }
}

impl<T: Real> std::fmt::Debug for BoundaryCondition<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryCondition::Periodic => write!(f, "Periodic"),
            BoundaryCondition::WeakInflow { .. } => write!(f, "WeakInflow(..)"),
        }
    }
}

/// Everything the assembly needs to know about the problem besides the
/// space and the field.
#[derive(Clone, Debug)]
pub struct TransportProblem<T: Real> {
    pub velocity: VelocityField<T>,
    pub scheme: StabilizedScheme,
    pub bc: BoundaryCondition<T>,
    pub tau_basis: TauBasis,
    /// Extra factor on the jump penalty `Gamma h_e^2`; 1 by default.
    pub jump_factor: T,
    /// Use the SUPG-perturbed test function in the consistent mass action
    /// (never in the lumped production path). Off by default.
    pub petrov_galerkin_mass: bool,
}

impl<T: Real> TransportProblem<T> {
    pub fn new(
        velocity: VelocityField<T>,
        scheme: StabilizedScheme,
        bc: BoundaryCondition<T>,
    ) -> Self {
        TransportProblem {
            velocity,
            scheme,
            bc,
            tau_basis: TauBasis::Geometric,
            jump_factor: T::one(),
            petrov_galerkin_mass: false,
        }
    }
}

/// SUPG scale `h_K tau = 1 / sum_sigma |a_bar . grad(phi_sigma)|` for one
/// element. Returns 0 when the sum vanishes (no streamline direction),
/// which disables the term without dividing by zero.
pub fn stabilization_scale<T: Real>(
    geom: &ElementGeometry<T>,
    kind: ElementKind,
    tau_basis: TauBasis,
    velocity: &VelocityField<T>,
) -> T {
    let abar = velocity.at_centroid(geom);
    let mut sum = T::zero();
    match tau_basis {
        TauBasis::Geometric => {
            for g in geom.grad_lambda.iter().take(geom.dim + 1) {
                sum = sum + dot(abar, *g).abs();
            }
        }
        TauBasis::Native => {
            let third = T::one() / real(3.0);
            let centroid = if geom.dim == 1 {
                [real(0.5), real(0.5), T::zero()]
            } else {
                [third, third, third]
            };
            let shape = shape_values_and_gradients(kind, geom, &centroid);
            for g in shape.gradients.iter().take(shape.n) {
                sum = sum + dot(abar, *g).abs();
            }
        }
    }
    if sum > T::zero() {
        T::one() / sum
    } else {
        T::zero()
    }
}

/// Pre-built quadrature shared across one assembly pass.
struct Rules<T: Real> {
    volume: QuadratureRule<T>,
    /// Edge rule as (t, w) on the unit interval; unused in 1D.
    edge: Vec<(T, T)>,
    nloc: usize,
}

fn make_rules<T: Real>(space: &ApproximationSpace<T>) -> Result<Rules<T>> {
    let dim = space.mesh().dim();
    let r = space.kind().order();
    Ok(Rules {
        volume: quadrature_rule::<T>(dim, 2 * r)?,
        edge: if dim == 2 {
            gauss_unit_interval::<T>(r + 1)?
        } else {
            Vec::new()
        },
        nloc: space.kind().local_dofs(dim),
    })
}

/// Element kernel: Galerkin volume + boundary-of-element flux, plus the
/// SUPG volume term when selected. Accumulates into `out[0..nloc]`.
fn element_kernel<T: Real>(
    space: &ApproximationSpace<T>,
    rules: &Rules<T>,
    field: &[T],
    problem: &TransportProblem<T>,
    k: usize,
    out: &mut [T; 6],
) {
    let kind = space.kind();
    let geom = space.mesh().element_geometry(k);
    let dofs = space.element_dofs(k);
    let nloc = rules.nloc;
    let mut u_loc = [T::zero(); 6];
    for (l, &d) in dofs.iter().enumerate() {
        u_loc[l] = field[d];
    }
    out[..nloc].fill(T::zero());

    let delta = match problem.scheme {
        StabilizedScheme::Supg => {
            stabilization_scale(&geom, kind, problem.tau_basis, &problem.velocity)
        }
        StabilizedScheme::GalerkinJump => T::zero(),
    };

    // Volume terms: -grad(phi).a u, plus delta (a.grad phi)(a.grad u).
    for (p, &w) in rules.volume.points.iter().zip(&rules.volume.weights) {
        let shape = shape_values_and_gradients(kind, &geom, p);
        let x = geom.point(p);
        let a = problem.velocity.at(x);
        let mut u = T::zero();
        let mut grad_u = [T::zero(); 2];
        for l in 0..nloc {
            u = u + u_loc[l] * shape.values[l];
            grad_u[0] = grad_u[0] + u_loc[l] * shape.gradients[l][0];
            grad_u[1] = grad_u[1] + u_loc[l] * shape.gradients[l][1];
        }
        let scale = w * geom.measure;
        let a_grad_u = dot(a, grad_u);
        for l in 0..nloc {
            let mut v = -dot(shape.gradients[l], a) * u;
            if delta > T::zero() {
                v = v + delta * dot(a, shape.gradients[l]) * a_grad_u;
            }
            out[l] = out[l] + scale * v;
        }
    }

    // Element-boundary flux with the element's own trace.
    for f in 0..=geom.dim {
        let normal = geom.facet_normal(f);
        let ds = geom.facet_measure(f);
        if geom.dim == 1 {
            let lambda = geom.facet_barycentric(f, &[T::one()]);
            flux_at_point(
                space, &geom, &lambda, normal, ds, &u_loc, problem, out, nloc, T::one(),
            );
        } else {
            for &(t, w) in &rules.edge {
                let lambda = geom.facet_barycentric(f, &[T::one() - t, t]);
                flux_at_point(
                    space, &geom, &lambda, normal, ds, &u_loc, problem, out, nloc, w,
                );
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn flux_at_point<T: Real>(
    space: &ApproximationSpace<T>,
    geom: &ElementGeometry<T>,
    lambda: &[T; 3],
    normal: Vec2<T>,
    ds: T,
    u_loc: &[T; 6],
    problem: &TransportProblem<T>,
    out: &mut [T; 6],
    nloc: usize,
    w: T,
) {
    let shape = shape_values_and_gradients(space.kind(), geom, lambda);
    let x = geom.point(lambda);
    let an = dot(problem.velocity.at(x), normal);
    let mut u = T::zero();
    for l in 0..nloc {
        u = u + u_loc[l] * shape.values[l];
    }
    let scale = w * ds * an * u;
    for l in 0..nloc {
        out[l] = out[l] + scale * shape.values[l];
    }
}

/// Local residual contributions of one element (convenience wrapper; the
/// assembly shares the quadrature rules across elements).
pub fn element_residual<T: Real>(
    space: &ApproximationSpace<T>,
    field: &[T],
    problem: &TransportProblem<T>,
    element: usize,
) -> Result<Vec<T>> {
    let rules = make_rules(space)?;
    let mut out = [T::zero(); 6];
    element_kernel(space, &rules, field, problem, element, &mut out);
    Ok(out[..rules.nloc].to_vec())
}

/// Jump contributions of one interior facet to the DOFs of both adjacent
/// elements, in local ordering.
#[derive(Clone, Copy, Debug)]
pub struct JumpContribution<T: Real> {
    pub left: [T; 6],
    pub right: [T; 6],
}

fn jump_kernel<T: Real>(
    space: &ApproximationSpace<T>,
    rules: &Rules<T>,
    field: &[T],
    problem: &TransportProblem<T>,
    facet: &InteriorFacet,
) -> JumpContribution<T> {
    let kind = space.kind();
    let mesh = space.mesh();
    let dim = mesh.dim();
    let nloc = rules.nloc;
    let gl = mesh.element_geometry(facet.left);
    let gr = mesh.element_geometry(facet.right);
    let mut ul = [T::zero(); 6];
    let mut ur = [T::zero(); 6];
    for (l, &d) in space.element_dofs(facet.left).iter().enumerate() {
        ul[l] = field[d];
    }
    for (l, &d) in space.element_dofs(facet.right).iter().enumerate() {
        ur[l] = field[d];
    }

    // Gamma = max of the centroid speeds of the two elements.
    let gamma = norm(problem.velocity.at_centroid(&gl))
        .max(norm(problem.velocity.at_centroid(&gr)));
    let h_e = mesh.interior_facet_measure(facet);
    let coef = problem.jump_factor * gamma * h_e * h_e;

    let mut out = JumpContribution {
        left: [T::zero(); 6],
        right: [T::zero(); 6],
    };
    if coef == T::zero() {
        return out;
    }

    let mut accumulate = |w: T, wl: [T; 2]| {
        // Barycentric points matched through the facet's local maps.
        let mut lambda_l = [T::zero(); 3];
        let mut lambda_r = [T::zero(); 3];
        for j in 0..dim {
            lambda_l[facet.left_local[j]] = wl[j];
            lambda_r[facet.right_local[j]] = wl[j];
        }
        let sl = shape_values_and_gradients(kind, &gl, &lambda_l);
        let sr = shape_values_and_gradients(kind, &gr, &lambda_r);
        let mut grad_l = [T::zero(); 2];
        let mut grad_r = [T::zero(); 2];
        for l in 0..nloc {
            grad_l[0] = grad_l[0] + ul[l] * sl.gradients[l][0];
            grad_l[1] = grad_l[1] + ul[l] * sl.gradients[l][1];
            grad_r[0] = grad_r[0] + ur[l] * sr.gradients[l][0];
            grad_r[1] = grad_r[1] + ur[l] * sr.gradients[l][1];
        }
        let jump = [grad_l[0] - grad_r[0], grad_l[1] - grad_r[1]];
        let scale = coef * w;
        for l in 0..nloc {
            out.left[l] = out.left[l] + scale * dot(jump, sl.gradients[l]);
            out.right[l] = out.right[l] - scale * dot(jump, sr.gradients[l]);
        }
    };

    if dim == 1 {
        accumulate(T::one(), [T::one(), T::zero()]);
    } else {
        // The integral over the edge: measure h_e times the unit-interval
        // rule (exact for the degree 2r-2 integrand and beyond).
        for &(t, w) in &rules.edge {
            accumulate(w * h_e, [T::one() - t, t]);
        }
    }
    out
}

/// Gradient-jump penalty of one facet of the combined facet numbering
/// (interior facets first, then boundary facets). Boundary facets carry no
/// jump and are rejected.
pub fn facet_jump_residual<T: Real>(
    space: &ApproximationSpace<T>,
    field: &[T],
    problem: &TransportProblem<T>,
    facet: usize,
) -> Result<JumpContribution<T>> {
    let mesh = space.mesh();
    let n_int = mesh.interior_facets().len();
    if facet >= n_int {
        return Err(Error::ContractViolation(format!(
            "facet {facet} is not interior ({n_int} interior facets); the \
             gradient-jump term is defined on interior facets only"
        )));
    }
    let rules = make_rules(space)?;
    Ok(jump_kernel(
        space,
        &rules,
        field,
        problem,
        &mesh.interior_facets()[facet],
    ))
}

/// Global spatial residual `Phi_sigma(u)`; pure function of its inputs,
/// accumulated in ascending element order, then ascending facet order.
pub fn assemble_residual<T: Real>(
    space: &ApproximationSpace<T>,
    field: &[T],
    problem: &TransportProblem<T>,
    t: T,
) -> Result<Vec<T>> {
    if field.len() != space.num_dofs() {
        return Err(Error::ContractViolation(format!(
            "field length {} does not match space with {} DOFs",
            field.len(),
            space.num_dofs()
        )));
    }
    if let Some(dof) = field.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { dof });
    }
    let mesh = space.mesh();
    let rules = make_rules(space)?;
    let nloc = rules.nloc;
    let mut residual = vec![T::zero(); space.num_dofs()];
    let mut local = [T::zero(); 6];

    for k in 0..mesh.num_elements() {
        element_kernel(space, &rules, field, problem, k, &mut local);
        for (l, &d) in space.element_dofs(k).iter().enumerate() {
            residual[d] = residual[d] + local[l];
        }
    }

    if problem.scheme == StabilizedScheme::GalerkinJump {
        for facet in mesh.interior_facets() {
            let jump = jump_kernel(space, &rules, field, problem, facet);
            for (l, &d) in space.element_dofs(facet.left).iter().enumerate() {
                residual[d] = residual[d] + jump.left[l];
            }
            for (l, &d) in space.element_dofs(facet.right).iter().enumerate() {
                residual[d] = residual[d] + jump.right[l];
            }
        }
    }

    if let BoundaryCondition::WeakInflow { ref g, .. } = problem.bc {
        for bf in mesh.boundary_facets() {
            let geom = mesh.element_geometry(bf.element);
            let dofs = space.element_dofs(bf.element);
            let mut u_loc = [T::zero(); 6];
            for (l, &d) in dofs.iter().enumerate() {
                u_loc[l] = field[d];
            }
            let ds = if mesh.dim() == 1 {
                T::one()
            } else {
                let a = mesh.vertex(bf.verts[0]);
                let b = mesh.vertex(bf.verts[1]);
                norm(crate::scalar::sub(b, a))
            };
            let mut correct_at = |w: T, wl: [T; 2]| {
                let mut lambda = [T::zero(); 3];
                for j in 0..mesh.dim() {
                    lambda[bf.local[j]] = wl[j];
                }
                let shape = shape_values_and_gradients(space.kind(), &geom, &lambda);
                let x = geom.point(&lambda);
                let an = dot(problem.velocity.at(x), bf.normal);
                // Upwind correction: (a.n)- (g - u), active on inflow only.
                if an < T::zero() {
                    let mut u = T::zero();
                    for l in 0..nloc {
                        u = u + u_loc[l] * shape.values[l];
                    }
                    let scale = w * ds * an * (g(x, t) - u);
                    for (l, &d) in dofs.iter().enumerate() {
                        residual[d] = residual[d] + scale * shape.values[l];
                    }
                }
            };
            if mesh.dim() == 1 {
                correct_at(T::one(), [T::one(), T::zero()]);
            } else {
                for &(tq, w) in &rules.edge {
                    correct_at(w, [T::one() - tq, tq]);
                }
            }
        }
    }

    Ok(residual)
}
