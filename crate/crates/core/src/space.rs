//! Continuous finite element spaces over a simplicial mesh.
//!
//! Supported elements: linear Lagrange, quadratic Bernstein-Bezier, and
//! quadratic Lagrange. The Bernstein basis is the quadratic element of
//! record here: unlike quadratic Lagrange, all its basis functions have a
//! positive integral, so the lumped coefficients that replace the mass
//! matrix stay positive. Quadratic Lagrange is kept to demonstrate exactly
//! that failure (its 2D vertex functions integrate to zero).
//!
//! DOF numbering is deterministic: canonical vertices in ascending order
//! first, then second-order DOFs (per-element midpoints in 1D, canonical
//! edges in ascending order in 2D). Periodic meshes identify DOFs through
//! the canonical vertex map of the mesh.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mesh::{ElementGeometry, Mesh};
use crate::quadrature::quadrature_rule;
use crate::scalar::{real, Real, Vec2};

/// Finite element family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    /// Piecewise linear Lagrange ("hat") functions on vertices.
    P1Lagrange,
    /// Quadratic Bernstein-Bezier: control values on vertices and edges.
    B2Bezier,
    /// Quadratic Lagrange: nodal values on vertices and edge midpoints.
    P2Lagrange,
}

impl ElementKind {
    /// Polynomial degree.
    pub fn order(self) -> usize {
        match self {
            ElementKind::P1Lagrange => 1,
            _ => 2,
        }
    }

    /// Local DOFs per element.
    pub fn local_dofs(self, dim: usize) -> usize {
        match (self, dim) {
            (ElementKind::P1Lagrange, d) => d + 1,
            (_, 1) => 3,
            (_, _) => 6,
        }
    }

    /// Whether the element carries nodal values (true) or Bezier control
    /// values (false) on its second-order DOFs.
    pub fn is_nodal(self) -> bool {
        !matches!(self, ElementKind::B2Bezier)
    }
}

/// Shape function values and physical gradients at one barycentric point.
///
/// Local ordering: vertex DOFs `0..=dim`, then in 1D the midpoint DOF, in
/// 2D the edge DOFs for (01), (12), (20).
#[derive(Clone, Copy, Debug)]
pub struct LocalShape<T: Real> {
    pub n: usize,
    pub values: [T; 6],
    pub gradients: [Vec2<T>; 6],
}

/// Evaluates basis values and physical-space gradients at a barycentric
/// point of one element.
pub fn shape_values_and_gradients<T: Real>(
    kind: ElementKind,
    geom: &ElementGeometry<T>,
    lambda: &[T; 3],
) -> LocalShape<T> {
    let dim = geom.dim;
    let n = kind.local_dofs(dim);
    let mut shape = LocalShape {
        n,
        values: [T::zero(); 6],
        gradients: [[T::zero(); 2]; 6],
    };
    let g = &geom.grad_lambda;
    let two = real::<T>(2.0);
    let four = real::<T>(4.0);
    // Chain rule: grad phi = sum_i (d phi / d lambda_i) grad lambda_i.
    let comb = |coef: &[(T, usize)]| -> Vec2<T> {
        let mut out = [T::zero(); 2];
        for &(c, i) in coef {
            out[0] = out[0] + c * g[i][0];
            out[1] = out[1] + c * g[i][1];
        }
        out
    };
    match kind {
        ElementKind::P1Lagrange => {
            for i in 0..n {
                shape.values[i] = lambda[i];
                shape.gradients[i] = g[i];
            }
        }
        ElementKind::B2Bezier => {
            for i in 0..=dim {
                shape.values[i] = lambda[i] * lambda[i];
                shape.gradients[i] = comb(&[(two * lambda[i], i)]);
            }
            let pairs: &[(usize, usize)] = if dim == 1 {
                &[(0, 1)]
            } else {
                &[(0, 1), (1, 2), (2, 0)]
            };
            for (e, &(a, b)) in pairs.iter().enumerate() {
                let d = dim + 1 + e;
                shape.values[d] = two * lambda[a] * lambda[b];
                shape.gradients[d] = comb(&[(two * lambda[b], a), (two * lambda[a], b)]);
            }
        }
        ElementKind::P2Lagrange => {
            for i in 0..=dim {
                shape.values[i] = lambda[i] * (two * lambda[i] - T::one());
                shape.gradients[i] = comb(&[(four * lambda[i] - T::one(), i)]);
            }
            let pairs: &[(usize, usize)] = if dim == 1 {
                &[(0, 1)]
            } else {
                &[(0, 1), (1, 2), (2, 0)]
            };
            for (e, &(a, b)) in pairs.iter().enumerate() {
                let d = dim + 1 + e;
                shape.values[d] = four * lambda[a] * lambda[b];
                shape.gradients[d] = comb(&[(four * lambda[b], a), (four * lambda[a], b)]);
            }
        }
    }
    shape
}

/// A finite element space: mesh, element kind, DOF numbering, and the
/// lumped coefficients `C_sigma = integral of phi_sigma`.
#[derive(Clone, Debug)]
pub struct ApproximationSpace<T: Real> {
    mesh: Mesh<T>,
    kind: ElementKind,
    num_vertex_dofs: usize,
    num_dofs: usize,
    /// Global DOF per (element, local dof), stride `kind.local_dofs(dim)`.
    element_dofs: Vec<usize>,
    /// Representative geometric location of each DOF.
    dof_locations: Vec<Vec2<T>>,
    /// Representative geometric endpoints of each second-order DOF.
    edge_endpoints: Vec<[usize; 2]>,
    lumped: Vec<T>,
}

/// Builds the space and its lumped coefficients; fails if any coefficient
/// is not strictly positive (quadratic Lagrange in 2D).
pub fn build_space<T: Real>(mesh: Mesh<T>, kind: ElementKind) -> Result<ApproximationSpace<T>> {
    let dim = mesh.dim();
    let nloc = kind.local_dofs(dim);

    // Vertex DOFs: dense renumbering of canonical vertices, ascending.
    let mut roots: Vec<usize> = (0..mesh.num_vertices())
        .map(|v| mesh.canonical_vertex(v))
        .collect();
    roots.sort_unstable();
    roots.dedup();
    let vertex_dof: BTreeMap<usize, usize> =
        roots.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let num_vertex_dofs = roots.len();

    // Second-order DOFs with a deterministic representative.
    let mut edge_endpoints: Vec<[usize; 2]> = Vec::new();
    let mut edge_dof_of_element: Vec<usize> = Vec::new(); // 1D only
    let mut edge_dof_of_pair: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    if kind.order() == 2 {
        if dim == 1 {
            // The midpoint DOF is interior to its element: one per element.
            for k in 0..mesh.num_elements() {
                let e = mesh.element(k);
                edge_dof_of_element.push(num_vertex_dofs + k);
                edge_endpoints.push([e[0], e[1]]);
            }
        } else {
            // Shared edges, keyed canonically; representative = smallest
            // geometric pair.
            let mut reps: BTreeMap<(usize, usize), [usize; 2]> = BTreeMap::new();
            for k in 0..mesh.num_elements() {
                let e = mesh.element(k);
                for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                    let mut geo = [e[a], e[b]];
                    geo.sort_unstable();
                    let mut can = [mesh.canonical_vertex(e[a]), mesh.canonical_vertex(e[b])];
                    can.sort_unstable();
                    reps.entry((can[0], can[1]))
                        .and_modify(|r| *r = (*r).min(geo))
                        .or_insert(geo);
                }
            }
            for (i, (key, rep)) in reps.into_iter().enumerate() {
                edge_dof_of_pair.insert(key, num_vertex_dofs + i);
                edge_endpoints.push(rep);
            }
        }
    }
    let num_dofs = num_vertex_dofs + edge_endpoints.len();

    // Element connectivity in the local shape order.
    let mut element_dofs = Vec::with_capacity(mesh.num_elements() * nloc);
    for k in 0..mesh.num_elements() {
        let e = mesh.element(k);
        for &v in e.iter().take(dim + 1) {
            element_dofs.push(vertex_dof[&mesh.canonical_vertex(v)]);
        }
        if kind.order() == 2 {
            if dim == 1 {
                element_dofs.push(edge_dof_of_element[k]);
            } else {
                for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                    let mut can = [mesh.canonical_vertex(e[a]), mesh.canonical_vertex(e[b])];
                    can.sort_unstable();
                    element_dofs.push(edge_dof_of_pair[&(can[0], can[1])]);
                }
            }
        }
    }

    // Representative locations.
    let mut dof_locations = Vec::with_capacity(num_dofs);
    for &r in &roots {
        dof_locations.push(mesh.vertex(r));
    }
    let half = real::<T>(0.5);
    for rep in &edge_endpoints {
        let (a, b) = (mesh.vertex(rep[0]), mesh.vertex(rep[1]));
        dof_locations.push([half * (a[0] + b[0]), half * (a[1] + b[1])]);
    }

    // Lumped coefficients: C_sigma = integral of phi_sigma over the domain.
    let rule = quadrature_rule::<T>(dim, 2 * kind.order())?;
    let mut lumped = vec![T::zero(); num_dofs];
    for k in 0..mesh.num_elements() {
        let geom = mesh.element_geometry(k);
        let dofs = &element_dofs[k * nloc..(k + 1) * nloc];
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let shape = shape_values_and_gradients(kind, &geom, p);
            let scale = w * geom.measure;
            for (l, &d) in dofs.iter().enumerate() {
                lumped[d] = lumped[d] + scale * shape.values[l];
            }
        }
    }
    let tol = real::<T>(1e-12) * mesh.total_measure();
    let offending: Vec<(usize, f64)> = lumped
        .iter()
        .enumerate()
        .filter(|(_, &c)| c <= tol)
        .map(|(d, &c)| (d, c.to_f64().unwrap_or(f64::NAN)))
        .collect();
    if !offending.is_empty() {
        let shown: Vec<(usize, f64)> = offending.iter().take(8).copied().collect();
        return Err(Error::NonPositiveLumping(offending.len(), shown));
    }

    Ok(ApproximationSpace {
        mesh,
        kind,
        num_vertex_dofs,
        num_dofs,
        element_dofs,
        dof_locations,
        edge_endpoints,
        lumped,
    })
}

impl<T: Real> ApproximationSpace<T> {
    pub fn mesh(&self) -> &Mesh<T> {
        &self.mesh
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    pub fn num_vertex_dofs(&self) -> usize {
        self.num_vertex_dofs
    }

    pub fn local_dofs(&self) -> usize {
        self.kind.local_dofs(self.mesh.dim())
    }

    pub fn element_dofs(&self, k: usize) -> &[usize] {
        let n = self.local_dofs();
        &self.element_dofs[k * n..(k + 1) * n]
    }

    pub fn dof_location(&self, dof: usize) -> Vec2<T> {
        self.dof_locations[dof]
    }

    /// Lumped coefficients, strictly positive by construction.
    pub fn lumped(&self) -> &[T] {
        &self.lumped
    }

    /// Total lumped mass; equals the domain measure by partition of unity.
    pub fn total_lumped(&self) -> T {
        self.lumped.iter().fold(T::zero(), |a, &b| a + b)
    }
}

/// Fills a DOF vector from a pointwise initial condition.
///
/// Lagrange DOFs sample the function at their node. Bezier edge controls use
/// `2 u(m) - (u(a) + u(b)) / 2` with `m` the edge midpoint, which makes the
/// interpolation exact for quadratic polynomials.
pub fn init_field<T: Real>(
    space: &ApproximationSpace<T>,
    u0: impl Fn(Vec2<T>) -> T,
) -> Vec<T> {
    let mut values = Vec::with_capacity(space.num_dofs);
    for d in 0..space.num_vertex_dofs {
        values.push(u0(space.dof_locations[d]));
    }
    let half = real::<T>(0.5);
    let two = real::<T>(2.0);
    for (i, rep) in space.edge_endpoints.iter().enumerate() {
        let d = space.num_vertex_dofs + i;
        if space.kind.is_nodal() {
            values.push(u0(space.dof_locations[d]));
        } else {
            let a = space.mesh.vertex(rep[0]);
            let b = space.mesh.vertex(rep[1]);
            let m = space.dof_locations[d];
            values.push(two * u0(m) - half * (u0(a) + u0(b)));
        }
    }
    values
}

/// Evaluates the field at a barycentric point of one element.
pub fn eval_field<T: Real>(
    space: &ApproximationSpace<T>,
    values: &[T],
    element: usize,
    lambda: &[T; 3],
) -> T {
    let geom = space.mesh.element_geometry(element);
    let shape = shape_values_and_gradients(space.kind, &geom, lambda);
    let dofs = space.element_dofs(element);
    let mut acc = T::zero();
    for (l, &d) in dofs.iter().enumerate() {
        acc = acc + values[d] * shape.values[l];
    }
    acc
}

/// Physical-space gradient of the field at a barycentric point.
pub fn eval_field_gradient<T: Real>(
    space: &ApproximationSpace<T>,
    values: &[T],
    element: usize,
    lambda: &[T; 3],
) -> Vec2<T> {
    let geom = space.mesh.element_geometry(element);
    let shape = shape_values_and_gradients(space.kind, &geom, lambda);
    let dofs = space.element_dofs(element);
    let mut acc = [T::zero(); 2];
    for (l, &d) in dofs.iter().enumerate() {
        acc[0] = acc[0] + values[d] * shape.gradients[l][0];
        acc[1] = acc[1] + values[d] * shape.gradients[l][1];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MeshSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_reference_triangle() -> Mesh<f64> {
        Mesh::from_parts(
            2,
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![0, 1, 2],
            None,
        )
        .unwrap()
    }

    fn random_lambda(rng: &mut ChaCha8Rng, dim: usize) -> [f64; 3] {
        if dim == 1 {
            let t: f64 = rng.gen_range(0.0..1.0);
            [1.0 - t, t, 0.0]
        } else {
            let (mut a, mut b): (f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            if a + b > 1.0 {
                a = 1.0 - a;
                b = 1.0 - b;
            }
            [1.0 - a - b, a, b]
        }
    }

    #[test]
    fn partition_of_unity_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (dim, mesh) in [
            (1, Mesh::<f64>::interval(3, false).unwrap()),
            (2, single_reference_triangle()),
        ] {
            let geom = mesh.element_geometry(0);
            for kind in [
                ElementKind::P1Lagrange,
                ElementKind::B2Bezier,
                ElementKind::P2Lagrange,
            ] {
                for _ in 0..30 {
                    let l = random_lambda(&mut rng, dim);
                    let s = shape_values_and_gradients(kind, &geom, &l);
                    let vsum: f64 = s.values[..s.n].iter().sum();
                    let gsum: [f64; 2] = s.gradients[..s.n]
                        .iter()
                        .fold([0.0, 0.0], |a, g| [a[0] + g[0], a[1] + g[1]]);
                    assert!((vsum - 1.0).abs() < 1e-13, "{kind:?} dim {dim}");
                    assert!(gsum[0].abs() < 1e-12 && gsum[1].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bernstein_values_at_midpoints() {
        let mesh = single_reference_triangle();
        let geom = mesh.element_geometry(0);
        let s = shape_values_and_gradients(ElementKind::B2Bezier, &geom, &[0.5, 0.5, 0.0]);
        let expect = [0.25, 0.25, 0.0, 0.5, 0.0, 0.0];
        for (v, e) in s.values.iter().zip(&expect) {
            assert!((v - e).abs() < 1e-15);
        }
        // 1D midpoint.
        let m1 = Mesh::<f64>::interval(1, false).unwrap();
        let g1 = m1.element_geometry(0);
        let s1 = shape_values_and_gradients(ElementKind::B2Bezier, &g1, &[0.5, 0.5, 0.0]);
        assert_eq!(s1.n, 3);
        for (v, e) in s1.values[..3].iter().zip(&[0.25, 0.25, 0.5]) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn p1_lumped_on_interval() {
        let space = build_space(Mesh::<f64>::interval(4, false).unwrap(), ElementKind::P1Lagrange)
            .unwrap();
        assert_eq!(space.num_dofs(), 5);
        let h = 0.25;
        let expect = [h / 2.0, h, h, h, h / 2.0];
        for (c, e) in space.lumped().iter().zip(&expect) {
            assert!((c - e).abs() < 1e-15);
        }
        assert!((space.total_lumped() - 1.0).abs() < 1e-14);
        // Periodic: every hat integrates to h.
        let sp = build_space(Mesh::<f64>::interval(4, true).unwrap(), ElementKind::P1Lagrange)
            .unwrap();
        assert_eq!(sp.num_dofs(), 4);
        for &c in sp.lumped() {
            assert!((c - h).abs() < 1e-15);
        }
    }

    #[test]
    fn lumped_on_reference_triangle() {
        let p1 = build_space(single_reference_triangle(), ElementKind::P1Lagrange).unwrap();
        for &c in p1.lumped() {
            assert!((c - 1.0 / 6.0).abs() < 1e-15);
        }
        let b2 = build_space(single_reference_triangle(), ElementKind::B2Bezier).unwrap();
        assert_eq!(b2.num_dofs(), 6);
        for &c in b2.lumped() {
            assert!((c - 1.0 / 12.0).abs() < 1e-14);
        }
    }

    #[test]
    fn p2_lumping_fails_in_2d_only() {
        let err = build_space(single_reference_triangle(), ElementKind::P2Lagrange).unwrap_err();
        match err {
            Error::NonPositiveLumping(n, ref dofs) => {
                assert_eq!(n, 3); // the three vertex functions
                for &(d, c) in dofs {
                    assert!(d < 3);
                    assert!(c.abs() < 1e-14, "vertex integral should vanish, got {c}");
                }
            }
            other => panic!("unexpected error {other:?}"),
        }
        // In 1D every quadratic Lagrange function has positive integral.
        let s = build_space(Mesh::<f64>::interval(3, false).unwrap(), ElementKind::P2Lagrange)
            .unwrap();
        assert!(s.lumped().iter().all(|&c| c > 0.0));
        assert!((s.total_lumped() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dof_counts_on_meshes() {
        // Disk, quadratic Bernstein: vertices + edges.
        let m = Mesh::<f64>::disk(2).unwrap();
        let s = build_space(m, ElementKind::B2Bezier).unwrap();
        assert_eq!(s.num_dofs(), 12 * 4 + 6 * 2 + 1);
        // Periodic rectangle torus: V = nx ny, E = 3 nx ny.
        let m = Mesh::<f64>::rectangle(4, 4, true, true).unwrap();
        let s = build_space(m, ElementKind::B2Bezier).unwrap();
        assert_eq!(s.num_vertex_dofs(), 16);
        assert_eq!(s.num_dofs(), 64);
        // 1D periodic quadratic: n vertex + n midpoint DOFs.
        let s = build_space(Mesh::<f64>::interval(5, true).unwrap(), ElementKind::B2Bezier)
            .unwrap();
        assert_eq!(s.num_dofs(), 10);
    }

    #[test]
    fn quadratic_reproduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f2 = |p: [f64; 2]| p[0] * p[0] + 3.0 * p[0] * p[1] - p[1] + 2.0;
        let f1 = |p: [f64; 2]| 1.5 * p[0] * p[0] - 0.25 * p[0] + 0.125;
        for kind in [ElementKind::B2Bezier, ElementKind::P2Lagrange] {
            // 2D (P2 only in 1D below, since its 2D lumping fails).
            if kind == ElementKind::B2Bezier {
                let mesh = Mesh::<f64>::rectangle(3, 2, false, false).unwrap();
                let space = build_space(mesh, kind).unwrap();
                let u = init_field(&space, f2);
                for _ in 0..50 {
                    let k = rng.gen_range(0..space.mesh().num_elements());
                    let l = random_lambda(&mut rng, 2);
                    let x = space.mesh().element_geometry(k).point(&l);
                    let v = eval_field(&space, &u, k, &l);
                    assert!((v - f2(x)).abs() < 1e-13, "{kind:?}: {v} vs {}", f2(x));
                    let g = eval_field_gradient(&space, &u, k, &l);
                    let gx = [2.0 * x[0] + 3.0 * x[1], 3.0 * x[0] - 1.0];
                    assert!((g[0] - gx[0]).abs() < 1e-12 && (g[1] - gx[1]).abs() < 1e-12);
                }
            }
            let space = build_space(Mesh::<f64>::interval(4, false).unwrap(), kind).unwrap();
            let u = init_field(&space, f1);
            for _ in 0..50 {
                let k = rng.gen_range(0..4);
                let l = random_lambda(&mut rng, 1);
                let x = space.mesh().element_geometry(k).point(&l);
                let v = eval_field(&space, &u, k, &l);
                assert!((v - f1(x)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bezier_control_of_pure_square() {
        // u0(x) = x^2 on a single element (0,1): vertex controls 0 and 1,
        // edge control 2*(1/4) - (0 + 1)/2 = 0.
        let space =
            build_space(Mesh::<f64>::interval(1, false).unwrap(), ElementKind::B2Bezier).unwrap();
        let u = init_field(&space, |p| p[0] * p[0]);
        assert!((u[0] - 0.0).abs() < 1e-15);
        assert!((u[1] - 1.0).abs() < 1e-15);
        assert!((u[2] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn continuity_across_facets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [ElementKind::P1Lagrange, ElementKind::B2Bezier] {
            for mesh in [
                Mesh::<f64>::rectangle(3, 3, false, false).unwrap(),
                Mesh::<f64>::rectangle(3, 3, true, true).unwrap(),
                Mesh::<f64>::disk(2).unwrap(),
            ] {
                let space = build_space(mesh, kind).unwrap();
                let u: Vec<f64> = (0..space.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for f in space.mesh().interior_facets() {
                    for t in [0.2_f64, 0.7] {
                        let w = [1.0 - t, t];
                        let mut ll = [0.0; 3];
                        let mut lr = [0.0; 3];
                        for j in 0..2 {
                            ll[f.left_local[j]] = w[j];
                            lr[f.right_local[j]] = w[j];
                        }
                        let vl = eval_field(&space, &u, f.left, &ll);
                        let vr = eval_field(&space, &u, f.right, &lr);
                        assert!(
                            (vl - vr).abs() < 1e-12,
                            "{kind:?}: trace mismatch {vl} vs {vr}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_numbering() {
        let build = || {
            let m = Mesh::<f64>::generate(&MeshSpec::Disk { level: 3 }).unwrap();
            build_space(m, ElementKind::B2Bezier).unwrap()
        };
        let a = build();
        let b = build();
        assert_eq!(a.num_dofs(), b.num_dofs());
        for k in 0..a.mesh().num_elements() {
            assert_eq!(a.element_dofs(k), b.element_dofs(k));
        }
        for d in 0..a.num_dofs() {
            assert_eq!(a.dof_location(d), b.dof_location(d));
        }
    }
}
