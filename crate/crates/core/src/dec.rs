//! Deferred-correction time integration.
//!
//! One step from `t_n` to `t_n + dt` carries states `V_l` at subnodes
//! `xi_l` of the step and iterates
//!
//! ```text
//! L1(V^{k+1}) = L1(V^k) - L2(V^k)
//! ```
//!
//! where `L1` is a lumped-mass forward-Euler ladder (explicit; inverting it
//! means dividing by the positive lumped coefficients `C_sigma`) and `L2`
//! is the high-order target pairing the consistent mass action with an
//! interpolatory quadrature of the residual history. The consistent mass is
//! only ever applied, never inverted: this is the point of the method.
//!
//! Subnode tables are built exactly in rational arithmetic.

use num_rational::Ratio;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::quadrature_rule;
use crate::residual::{assemble_residual, TransportProblem, VelocityField};
use crate::scalar::{norm, real, Real};
use crate::space::{shape_values_and_gradients, ApproximationSpace};

pub type Rat = Ratio<i64>;

/// Subnode fractions, Euler increments and interpolatory weights of one
/// deferred-correction scheme, held exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecScheme {
    /// `0 = xi_0 < ... < xi_{S-1} = 1`.
    pub subnodes: Vec<Rat>,
    /// `alpha_l = xi_l - xi_{l-1}` for `l = 1..S-1` (index shifted by one).
    pub alpha: Vec<Rat>,
    /// `W[i-1][l] = integral_0^{xi_i} of the l-th Lagrange cardinal`,
    /// one row per subnode `i = 1..S-1`.
    pub weights: Vec<Vec<Rat>>,
    /// Correction sweeps per step.
    pub corrections: usize,
}

/// Integrals of the Lagrange cardinal polynomials on `nodes` from 0 to each
/// node beyond the first, in exact rational arithmetic.
fn cardinal_integral_rows(nodes: &[Rat]) -> Vec<Vec<Rat>> {
    let s = nodes.len();
    let mut rows = Vec::with_capacity(s - 1);
    for i in 1..s {
        let mut row = Vec::with_capacity(s);
        for l in 0..s {
            // Numerator polynomial prod_{j != l} (x - xi_j), ascending
            // coefficients, and the constant denominator.
            let mut coeffs = vec![Rat::one()];
            let mut denom = Rat::one();
            for (j, &xj) in nodes.iter().enumerate() {
                if j == l {
                    continue;
                }
                let mut next = vec![Rat::zero(); coeffs.len() + 1];
                for (p, &c) in coeffs.iter().enumerate() {
                    next[p + 1] = next[p + 1] + c;
                    next[p] = next[p] - c * xj;
                }
                coeffs = next;
                denom *= nodes[l] - xj;
            }
            // Integrate term-wise up to xi_i.
            let mut acc = Rat::zero();
            let mut xp = nodes[i];
            for (p, &c) in coeffs.iter().enumerate() {
                acc += c * xp / Rat::from_integer(p as i64 + 1);
                xp *= nodes[i];
            }
            row.push(acc / denom);
        }
        rows.push(row);
    }
    rows
}

/// Builds the scheme for the requested temporal order (2 or 3) with
/// equispaced subnodes. The correction count defaults to the order and can
/// be overridden afterwards.
pub fn dec_scheme(time_order: usize) -> Result<DecScheme> {
    let subnodes: Vec<Rat> = match time_order {
        2 => vec![Rat::zero(), Rat::one()],
        3 => vec![Rat::zero(), Rat::new(1, 2), Rat::one()],
        other => {
            return Err(Error::InvalidSpecification(format!(
                "unsupported time order {other} (expected 2 or 3)"
            )))
        }
    };
    let alpha: Vec<Rat> = subnodes.windows(2).map(|w| w[1] - w[0]).collect();
    let weights = cardinal_integral_rows(&subnodes);
    Ok(DecScheme {
        subnodes,
        alpha,
        weights,
        corrections: time_order,
    })
}

impl DecScheme {
    pub fn with_corrections(mut self, m: usize) -> Self {
        self.corrections = m;
        self
    }

    pub fn num_subnodes(&self) -> usize {
        self.subnodes.len()
    }

    fn to_f<T: Real>(r: Rat) -> T {
        real::<T>(*r.numer() as f64 / *r.denom() as f64)
    }

    pub fn subnodes_f<T: Real>(&self) -> Vec<T> {
        self.subnodes.iter().map(|&r| Self::to_f(r)).collect()
    }

    pub fn alpha_f<T: Real>(&self) -> Vec<T> {
        self.alpha.iter().map(|&r| Self::to_f(r)).collect()
    }

    pub fn weights_f<T: Real>(&self) -> Vec<Vec<T>> {
        self.weights
            .iter()
            .map(|row| row.iter().map(|&r| Self::to_f(r)).collect())
            .collect()
    }
}

/// Which L1 operator drives the correction sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum L1Variant {
    /// Forward substitution keeps the Euler residual differences.
    #[default]
    Faithful,
    /// Drops the residual-difference term; only the lumped mass difference
    /// remains on the left.
    MassOnly,
}

/// The system of ODEs the integrator advances: a residual, a positive
/// lumped mass, and a consistent mass action.
pub trait DecSystem<T: Real> {
    fn num_dofs(&self) -> usize;
    /// Positive lumped coefficients `C_sigma`.
    fn lumped(&self) -> &[T];
    /// Spatial residual at state `u`, time `t`.
    fn residual(&self, u: &[T], t: T) -> Result<Vec<T>>;
    /// Consistent mass action `out = M u` (applied, never inverted).
    fn mass_apply(&self, u: &[T], out: &mut [T]);
    /// Whether `residual` depends on `t` explicitly.
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Subnode states and their cached residuals within one step.
#[derive(Clone, Debug)]
pub struct DecState<T: Real> {
    /// One field per subnode; `v[0]` is the state at `t_n`.
    pub v: Vec<Vec<T>>,
    /// `phi[l] = residual(v[l], t_{n,l})`.
    pub phi: Vec<Vec<T>>,
}

impl<T: Real> DecState<T> {
    /// Evaluates the residual of every subnode state.
    pub fn from_states<S: DecSystem<T>>(
        system: &S,
        scheme: &DecScheme,
        v: Vec<Vec<T>>,
        t_n: T,
        dt: T,
    ) -> Result<Self> {
        let xi = scheme.subnodes_f::<T>();
        let mut phi = Vec::with_capacity(v.len());
        for (l, state) in v.iter().enumerate() {
            phi.push(system.residual(state, t_n + xi[l] * dt)?);
        }
        Ok(DecState { v, phi })
    }
}

/// The low-order operator at subnode `i`:
/// `C (V_i - V_0) + dt sum_{l=1}^{i} alpha_l Phi(V_{l-1})`.
pub fn apply_l1<T: Real, S: DecSystem<T>>(
    system: &S,
    scheme: &DecScheme,
    state: &DecState<T>,
    dt: T,
    i: usize,
) -> Vec<T> {
    let c = system.lumped();
    let alpha = scheme.alpha_f::<T>();
    let n = system.num_dofs();
    let mut out = vec![T::zero(); n];
    for s in 0..n {
        out[s] = c[s] * (state.v[i][s] - state.v[0][s]);
    }
    for l in 1..=i {
        let a = dt * alpha[l - 1];
        for s in 0..n {
            out[s] = out[s] + a * state.phi[l - 1][s];
        }
    }
    out
}

/// The high-order operator at subnode `i`:
/// `M (V_i - V_0) + dt sum_l W[i][l] Phi(V_l)`.
pub fn apply_l2<T: Real, S: DecSystem<T>>(
    system: &S,
    scheme: &DecScheme,
    state: &DecState<T>,
    dt: T,
    i: usize,
) -> Vec<T> {
    let n = system.num_dofs();
    let w = scheme.weights_f::<T>();
    let diff: Vec<T> = (0..n).map(|s| state.v[i][s] - state.v[0][s]).collect();
    let mut out = vec![T::zero(); n];
    system.mass_apply(&diff, &mut out);
    for (l, &wl) in w[i - 1].iter().enumerate() {
        let a = dt * wl;
        for s in 0..n {
            out[s] = out[s] + a * state.phi[l][s];
        }
    }
    out
}

/// CFL time step `min_K cfl h_K / |a(centroid_K)|`; elements with zero
/// centroid speed impose no restriction.
pub fn compute_dt<T: Real>(
    mesh: &Mesh<T>,
    velocity: &VelocityField<T>,
    cfl: T,
) -> Result<T> {
    if !(cfl > T::zero()) {
        return Err(Error::ContractViolation(format!(
            "CFL number must be positive, got {cfl}"
        )));
    }
    let mut dt: Option<T> = None;
    for k in 0..mesh.num_elements() {
        let geom = mesh.element_geometry(k);
        let speed = norm(velocity.at_centroid(&geom));
        if speed > T::zero() {
            let local = cfl * geom.shortest_edge / speed;
            dt = Some(match dt {
                Some(d) => d.min(local),
                None => local,
            });
        }
    }
    dt.ok_or(Error::InfiniteDt)
}

/// One deferred-correction step from `(t_n, u_n)` to `t_n + dt`.
///
/// All sweeps update subnodes in forward substitution order; the residual
/// of an updated stage is evaluated immediately so later stages of the same
/// sweep see it. Divisions happen only by the lumped `C_sigma`.
pub fn dec_step<T: Real, S: DecSystem<T>>(
    system: &S,
    scheme: &DecScheme,
    variant: L1Variant,
    u_n: &[T],
    t_n: T,
    dt: T,
) -> Result<Vec<T>> {
    let nsub = scheme.num_subnodes();
    let m = scheme.corrections;
    let n = system.num_dofs();
    let c = system.lumped();
    let alpha = scheme.alpha_f::<T>();
    let w = scheme.weights_f::<T>();
    let xi = scheme.subnodes_f::<T>();

    // Iterate 0: every subnode starts at u_n.
    let phi0 = system.residual(u_n, t_n)?;
    let mut v_prev: Vec<Vec<T>> = (0..nsub).map(|_| u_n.to_vec()).collect();
    let mut phi_prev: Vec<Vec<T>> = (0..nsub)
        .map(|l| {
            if l == 0 || system.is_autonomous() {
                Ok(phi0.clone())
            } else {
                system.residual(u_n, t_n + xi[l] * dt)
            }
        })
        .collect::<Result<_>>()?;

    let mut v_next = v_prev.clone();
    let mut phi_next = phi_prev.clone();
    let mut diff = vec![T::zero(); n];
    let mut mass_term = vec![T::zero(); n];

    for k in 0..m {
        // Subnode 0 never moves; its residual is unchanged.
        v_next[0].copy_from_slice(u_n);
        phi_next[0].copy_from_slice(&phi_prev[0]);
        for i in 1..nsub {
            // L2 of the previous iterate at this subnode.
            for s in 0..n {
                diff[s] = v_prev[i][s] - v_prev[0][s];
            }
            system.mass_apply(&diff, &mut mass_term);
            // rhs = mass term + dt sum_l W[i][l] phi_prev[l]
            //     + dt sum_{l<=i} alpha_l (phi_next[l-1] - phi_prev[l-1])
            for s in 0..n {
                let mut acc = mass_term[s];
                for (l, &wl) in w[i - 1].iter().enumerate() {
                    acc = acc + dt * wl * phi_prev[l][s];
                }
                if variant == L1Variant::Faithful {
                    for l in 1..=i {
                        acc = acc
                            + dt * alpha[l - 1] * (phi_next[l - 1][s] - phi_prev[l - 1][s]);
                    }
                }
                v_next[i][s] = v_prev[i][s] - acc / c[s];
            }
            if v_next[i].iter().any(|x| !x.is_finite()) {
                return Err(Error::BlowUp {
                    t: t_n.to_f64().unwrap_or(f64::NAN),
                    correction: k + 1,
                    subnode: i,
                });
            }
            // Residual of the fresh stage, used by the remaining stages of
            // this sweep and by the next sweep. The very last stage of the
            // last sweep is the answer; its residual is never needed.
            if !(k + 1 == m && i + 1 == nsub) {
                phi_next[i] = system.residual(&v_next[i], t_n + xi[i] * dt)?;
            }
        }
        std::mem::swap(&mut v_prev, &mut v_next);
        std::mem::swap(&mut phi_prev, &mut phi_next);
    }
    Ok(v_prev.pop().expect("at least two subnodes"))
}

/// Finite element transport system: residual assembly plus a precomputed
/// per-element consistent mass.
pub struct FemSystem<'a, T: Real> {
    space: &'a ApproximationSpace<T>,
    problem: &'a TransportProblem<T>,
    /// Local mass matrices, stride nloc^2, row-major.
    local_mass: Vec<T>,
    nloc: usize,
}

impl<'a, T: Real> FemSystem<'a, T> {
    pub fn new(
        space: &'a ApproximationSpace<T>,
        problem: &'a TransportProblem<T>,
    ) -> Result<Self> {
        let mesh = space.mesh();
        let dim = mesh.dim();
        let r = space.kind().order();
        let nloc = space.kind().local_dofs(dim);
        // Plain Galerkin mass shares the lumping rule (degree 2r); the
        // Petrov-Galerkin variant has a degree 2r+1 integrand.
        let degree = if problem.petrov_galerkin_mass { 2 * r + 1 } else { 2 * r };
        let rule = quadrature_rule::<T>(dim, degree)?;
        let mut local_mass = vec![T::zero(); mesh.num_elements() * nloc * nloc];
        for k in 0..mesh.num_elements() {
            let geom = mesh.element_geometry(k);
            let delta = if problem.petrov_galerkin_mass {
                crate::residual::stabilization_scale(
                    &geom,
                    space.kind(),
                    problem.tau_basis,
                    &problem.velocity,
                )
            } else {
                T::zero()
            };
            let block = &mut local_mass[k * nloc * nloc..(k + 1) * nloc * nloc];
            for (p, &wq) in rule.points.iter().zip(&rule.weights) {
                let shape = shape_values_and_gradients(space.kind(), &geom, p);
                let scale = wq * geom.measure;
                let a = problem.velocity.at(geom.point(p));
                for row in 0..nloc {
                    let mut test = shape.values[row];
                    if delta > T::zero() {
                        test = test + delta * crate::scalar::dot(a, shape.gradients[row]);
                    }
                    for col in 0..nloc {
                        block[row * nloc + col] =
                            block[row * nloc + col] + scale * test * shape.values[col];
                    }
                }
            }
        }
        Ok(FemSystem {
            space,
            problem,
            local_mass,
            nloc,
        })
    }

    pub fn space(&self) -> &ApproximationSpace<T> {
        self.space
    }
}

impl<'a, T: Real> DecSystem<T> for FemSystem<'a, T> {
    fn num_dofs(&self) -> usize {
        self.space.num_dofs()
    }

    fn lumped(&self) -> &[T] {
        self.space.lumped()
    }

    fn residual(&self, u: &[T], t: T) -> Result<Vec<T>> {
        assemble_residual(self.space, u, self.problem, t)
    }

    fn mass_apply(&self, u: &[T], out: &mut [T]) {
        out.fill(T::zero());
        let nloc = self.nloc;
        for k in 0..self.space.mesh().num_elements() {
            let dofs = self.space.element_dofs(k);
            let block = &self.local_mass[k * nloc * nloc..(k + 1) * nloc * nloc];
            for (row, &dr) in dofs.iter().enumerate() {
                let mut acc = T::zero();
                for (col, &dc) in dofs.iter().enumerate() {
                    acc = acc + block[row * nloc + col] * u[dc];
                }
                out[dr] = out[dr] + acc;
            }
        }
    }

    fn is_autonomous(&self) -> bool {
        self.problem.bc.is_autonomous()
    }
}

/// Marches the system from `t0` to `t_final`, clipping the last step to
/// land exactly on `t_final`. The observer sees `(step, t, state)` after
/// every step (and once for the initial state with step 0).
#[allow(clippy::too_many_arguments)]
pub fn integrate<T: Real, S: DecSystem<T>>(
    system: &S,
    scheme: &DecScheme,
    variant: L1Variant,
    u0: &[T],
    t0: T,
    t_final: T,
    dt: T,
    mut observer: impl FnMut(usize, T, &[T]),
) -> Result<Vec<T>> {
    if !(dt > T::zero()) || !(t_final > t0) {
        return Err(Error::ContractViolation(
            "integrate needs dt > 0 and t_final > t0".into(),
        ));
    }
    let mut u = u0.to_vec();
    let mut t = t0;
    let mut step = 0usize;
    observer(step, t, &u);
    // Tiny tail steps are folded into the previous one.
    let tail = dt * real::<T>(1e-9);
    while t < t_final - tail {
        let step_dt = if t + dt > t_final - tail { t_final - t } else { dt };
        u = dec_step(system, scheme, variant, &u, t, step_dt)?;
        t = t + step_dt;
        step += 1;
        observer(step, t, &u);
    }
    Ok(u)
}
