//! Conforming simplicial meshes in 1D (intervals) and 2D (triangles).
//!
//! A mesh owns its vertices, elements, and the derived facet adjacency.
//! Periodic boundaries are handled by vertex identification: every vertex
//! carries a canonical alias, and facet matching is done on canonical ids so
//! that a periodic pair of boundary facets becomes one interior facet.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::scalar::{cross, norm, real, sub, Real, Vec2};

const NO_VERT: usize = usize::MAX;

/// One facet shared by two elements.
///
/// `verts` holds canonical vertex ids in ascending order (second slot is
/// `usize::MAX` in 1D). `left_local[j]` / `right_local[j]` give the local
/// vertex index (0..=dim) of `verts[j]` inside the left / right element, so
/// a facet quadrature point maps to consistent barycentric coordinates on
/// both sides even across a periodic identification.
#[derive(Clone, Copy, Debug)]
pub struct InteriorFacet {
    pub verts: [usize; 2],
    pub left: usize,
    pub right: usize,
    pub left_local: [usize; 2],
    pub right_local: [usize; 2],
}

/// One facet owned by a single element, with its outward unit normal.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryFacet<T: Real> {
    /// Geometric vertex ids (second slot unused in 1D).
    pub verts: [usize; 2],
    pub element: usize,
    /// Local vertex indices of `verts` inside `element`.
    pub local: [usize; 2],
    pub normal: Vec2<T>,
}

/// Affine geometry of one element: measure, barycentric gradients, centroid.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry<T: Real> {
    pub dim: usize,
    pub verts: [Vec2<T>; 3],
    pub measure: T,
    /// Physical-space gradients of the barycentric coordinates.
    pub grad_lambda: [Vec2<T>; 3],
    pub centroid: Vec2<T>,
    /// Length of the shortest edge (the `h_K` used by the CFL rule).
    pub shortest_edge: T,
}

impl<T: Real> ElementGeometry<T> {
    /// Builds the geometry of a simplex from its vertex coordinates.
    /// Fails on zero (or negative, for 1D after ordering) measure.
    pub fn from_vertices(dim: usize, verts: &[Vec2<T>], element: usize) -> Result<Self> {
        let zero = T::zero();
        match dim {
            1 => {
                let (a, b) = (verts[0], verts[1]);
                let h = b[0] - a[0];
                if h <= zero {
                    return Err(Error::SingularGeometry { element });
                }
                Ok(ElementGeometry {
                    dim,
                    verts: [a, b, [zero, zero]],
                    measure: h,
                    grad_lambda: [
                        [-T::one() / h, zero],
                        [T::one() / h, zero],
                        [zero, zero],
                    ],
                    centroid: [(a[0] + b[0]) / real(2.0), zero],
                    shortest_edge: h,
                })
            }
            2 => {
                let (p0, p1, p2) = (verts[0], verts[1], verts[2]);
                let two_area = cross(sub(p1, p0), sub(p2, p0));
                if two_area <= zero {
                    return Err(Error::SingularGeometry { element });
                }
                let area = two_area / real(2.0);
                // grad lambda_i = rot90(p_{i+2} - p_{i+1}) / (2 area)
                let g = |a: Vec2<T>, b: Vec2<T>| {
                    let e = sub(b, a);
                    [-e[1] / two_area, e[0] / two_area]
                };
                let third = T::one() / real(3.0);
                let e01 = norm(sub(p1, p0));
                let e12 = norm(sub(p2, p1));
                let e20 = norm(sub(p0, p2));
                Ok(ElementGeometry {
                    dim,
                    verts: [p0, p1, p2],
                    measure: area,
                    grad_lambda: [g(p1, p2), g(p2, p0), g(p0, p1)],
                    centroid: [
                        (p0[0] + p1[0] + p2[0]) * third,
                        (p0[1] + p1[1] + p2[1]) * third,
                    ],
                    shortest_edge: e01.min(e12).min(e20),
                })
            }
            _ => Err(Error::InvalidSpecification(format!(
                "unsupported dimension {dim}"
            ))),
        }
    }

    /// Local vertex indices of the facet opposite local vertex `f`.
    pub fn facet_local_verts(&self, f: usize) -> [usize; 2] {
        match self.dim {
            1 => [1 - f, NO_VERT],
            _ => [(f + 1) % 3, (f + 2) % 3],
        }
    }

    /// Outward unit normal of the facet opposite local vertex `f`.
    pub fn facet_normal(&self, f: usize) -> Vec2<T> {
        let g = self.grad_lambda[f];
        let n = norm(g);
        [-g[0] / n, -g[1] / n]
    }

    /// Measure of the facet opposite local vertex `f` (1 for 1D points).
    pub fn facet_measure(&self, f: usize) -> T {
        match self.dim {
            1 => T::one(),
            _ => {
                let [a, b] = self.facet_local_verts(f);
                norm(sub(self.verts[b], self.verts[a]))
            }
        }
    }

    /// Full barycentric coordinates of a point on the facet opposite `f`,
    /// given barycentric weights for the facet's own vertices in the order
    /// of [`Self::facet_local_verts`].
    pub fn facet_barycentric(&self, f: usize, w: &[T]) -> [T; 3] {
        let mut lambda = [T::zero(); 3];
        let locals = self.facet_local_verts(f);
        for (j, &l) in locals.iter().take(self.dim).enumerate() {
            lambda[l] = w[j];
        }
        debug_assert!(lambda[f] == T::zero());
        lambda
    }

    /// Physical coordinates of a barycentric point.
    pub fn point(&self, lambda: &[T]) -> Vec2<T> {
        let mut x = [T::zero(); 2];
        for (i, &l) in lambda.iter().take(self.dim + 1).enumerate() {
            x[0] = x[0] + l * self.verts[i][0];
            x[1] = x[1] + l * self.verts[i][1];
        }
        x
    }
}

/// Generator specification for the built-in meshes, or a path to a mesh file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MeshSpec {
    Interval {
        n: usize,
        periodic: bool,
    },
    Rectangle {
        nx: usize,
        ny: usize,
        periodic_x: bool,
        periodic_y: bool,
    },
    Disk {
        level: usize,
    },
    File {
        path: PathBuf,
    },
}

impl MeshSpec {
    /// Parses the compact config syntax, e.g. `interval:n=64,periodic=true`,
    /// `rect:4x3`, `disk:level=24`, `file:meshes/disk.txt`.
    pub fn parse(text: &str) -> Result<MeshSpec> {
        let bad = |msg: String| Error::InvalidSpecification(msg);
        let (kind, rest) = match text.split_once(':') {
            Some((k, r)) => (k.trim(), r.trim()),
            None => (text.trim(), ""),
        };
        if kind == "file" {
            if rest.is_empty() {
                return Err(bad("file mesh needs a path, e.g. file:mesh.txt".into()));
            }
            return Ok(MeshSpec::File {
                path: PathBuf::from(rest),
            });
        }
        let mut named: BTreeMap<&str, &str> = BTreeMap::new();
        let mut positional: Vec<&str> = Vec::new();
        for part in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match part.split_once('=') {
                Some((k, v)) => {
                    named.insert(k.trim(), v.trim());
                }
                None => positional.push(part),
            }
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(format!("expected a positive integer, got `{s}`")))
        };
        let parse_bool = |s: &str| match s {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(bad(format!("expected a boolean, got `{s}`"))),
        };
        let spec = match kind {
            "interval" => {
                let n = if let Some(v) = named.get("n") {
                    parse_usize(v)?
                } else if let Some(v) = positional.first() {
                    parse_usize(v)?
                } else {
                    return Err(bad("interval mesh needs a cell count, e.g. interval:64".into()));
                };
                let periodic = match named.get("periodic") {
                    Some(v) => parse_bool(v)?,
                    None => positional.iter().any(|p| *p == "periodic"),
                };
                MeshSpec::Interval { n, periodic }
            }
            "rect" | "rectangle" => {
                let (nx, ny) = if let (Some(x), Some(y)) = (named.get("nx"), named.get("ny")) {
                    (parse_usize(x)?, parse_usize(y)?)
                } else if let Some(p) = positional.first() {
                    match p.split_once('x') {
                        Some((a, b)) => (parse_usize(a)?, parse_usize(b)?),
                        None => {
                            let n = parse_usize(p)?;
                            (n, n)
                        }
                    }
                } else {
                    return Err(bad("rect mesh needs cell counts, e.g. rect:4x3".into()));
                };
                let periodic_x = match named.get("periodic_x") {
                    Some(v) => parse_bool(v)?,
                    None => positional.iter().any(|p| *p == "periodic_x" || *p == "periodic"),
                };
                let periodic_y = match named.get("periodic_y") {
                    Some(v) => parse_bool(v)?,
                    None => positional.iter().any(|p| *p == "periodic_y" || *p == "periodic"),
                };
                MeshSpec::Rectangle {
                    nx,
                    ny,
                    periodic_x,
                    periodic_y,
                }
            }
            "disk" => {
                let level = if let Some(v) = named.get("level") {
                    parse_usize(v)?
                } else if let Some(v) = positional.first() {
                    parse_usize(v)?
                } else {
                    return Err(bad("disk mesh needs a level, e.g. disk:24".into()));
                };
                MeshSpec::Disk { level }
            }
            other => {
                return Err(bad(format!(
                    "unknown mesh kind `{other}` (expected interval, rect, disk or file)"
                )))
            }
        };
        Ok(spec)
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            MeshSpec::Interval { .. } => Some(1),
            MeshSpec::Rectangle { .. } | MeshSpec::Disk { .. } => Some(2),
            MeshSpec::File { .. } => None,
        }
    }
}

/// Conforming simplicial tessellation with derived facet adjacency.
///
/// Immutable after construction; all queries take `&self`.
#[derive(Clone, Debug)]
pub struct Mesh<T: Real> {
    dim: usize,
    vertices: Vec<Vec2<T>>,
    /// Element connectivity, stride `dim + 1`.
    elem_verts: Vec<usize>,
    /// Canonical vertex per vertex; identity except under periodic pairing.
    alias: Vec<usize>,
    interior_facets: Vec<InteriorFacet>,
    boundary_facets: Vec<BoundaryFacet<T>>,
}

impl<T: Real> Mesh<T> {
    /// Builds a mesh from raw parts: orientation is normalized, element
    /// measures validated, and facet adjacency derived from connectivity.
    pub fn from_parts(
        dim: usize,
        vertices: Vec<Vec2<T>>,
        mut elem_verts: Vec<usize>,
        alias: Option<Vec<usize>>,
    ) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidSpecification(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        let stride = dim + 1;
        if elem_verts.len() % stride != 0 {
            return Err(Error::InvalidSpecification(
                "element list length is not a multiple of dim+1".into(),
            ));
        }
        let nelems = elem_verts.len() / stride;
        let nverts = vertices.len();
        if elem_verts.iter().any(|&v| v >= nverts) {
            return Err(Error::InvalidSpecification(
                "element references a vertex that does not exist".into(),
            ));
        }
        let alias = match alias {
            Some(mut a) => {
                if a.len() != nverts || a.iter().any(|&v| v >= nverts) {
                    return Err(Error::InvalidSpecification(
                        "vertex alias table has wrong length or out-of-range entries".into(),
                    ));
                }
                // Resolve chains so every alias points at its root.
                for v in 0..nverts {
                    let mut r = a[v];
                    let mut hops = 0;
                    while a[r] != r {
                        r = a[r];
                        hops += 1;
                        if hops > nverts {
                            return Err(Error::InvalidSpecification(
                                "vertex alias table contains a cycle".into(),
                            ));
                        }
                    }
                    a[v] = r;
                }
                a
            }
            None => (0..nverts).collect(),
        };

        // Normalize orientation and reject degenerate elements.
        for k in 0..nelems {
            let e = &mut elem_verts[k * stride..(k + 1) * stride];
            let coords: Vec<Vec2<T>> = e.iter().map(|&v| vertices[v]).collect();
            let flipped = match dim {
                1 => coords[0][0] > coords[1][0],
                _ => cross(sub(coords[1], coords[0]), sub(coords[2], coords[0])) < T::zero(),
            };
            if flipped {
                e.swap(dim - 1, dim);
            }
            let coords: Vec<Vec2<T>> = e.iter().map(|&v| vertices[v]).collect();
            ElementGeometry::from_vertices(dim, &coords, k)?;
        }

        let mut mesh = Mesh {
            dim,
            vertices,
            elem_verts,
            alias,
            interior_facets: Vec::new(),
            boundary_facets: Vec::new(),
        };
        mesh.build_facets()?;
        Ok(mesh)
    }

    /// Derives interior/boundary facets by matching canonical vertex keys.
    fn build_facets(&mut self) -> Result<()> {
        type Side = (usize, [usize; 2]);
        let mut table: BTreeMap<(usize, usize), Vec<Side>> = BTreeMap::new();
        for k in 0..self.num_elements() {
            let elem = self.element(k);
            for f in 0..=self.dim {
                // Facet opposite local vertex f.
                let mut locals = [NO_VERT; 2];
                let mut canon = [NO_VERT; 2];
                let mut j = 0;
                for l in 0..=self.dim {
                    if l != f {
                        locals[j] = l;
                        canon[j] = self.alias[elem[l]];
                        j += 1;
                    }
                }
                if self.dim == 2 && canon[0] > canon[1] {
                    locals.swap(0, 1);
                    canon.swap(0, 1);
                }
                table
                    .entry((canon[0], canon[1]))
                    .or_default()
                    .push((k, locals));
            }
        }
        for (key, sides) in table {
            match sides.as_slice() {
                [(k, locals)] => {
                    let elem = self.element(*k);
                    let geom = self.element_geometry(*k);
                    // The opposite local vertex identifies the facet.
                    let opposite = (0..=self.dim)
                        .find(|l| !locals[..self.dim].contains(l))
                        .expect("facet has an opposite vertex");
                    let mut verts = [NO_VERT; 2];
                    for (j, &l) in locals.iter().take(self.dim).enumerate() {
                        verts[j] = elem[l];
                    }
                    self.boundary_facets.push(BoundaryFacet {
                        verts,
                        element: *k,
                        local: *locals,
                        normal: geom.facet_normal(opposite),
                    });
                }
                [(ka, la), (kb, lb)] => {
                    self.interior_facets.push(InteriorFacet {
                        verts: [key.0, key.1],
                        left: *ka,
                        right: *kb,
                        left_local: *la,
                        right_local: *lb,
                    });
                }
                more => {
                    return Err(Error::NonConforming(format!(
                        "facet {:?} is shared by {} elements",
                        key,
                        more.len()
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elem_verts.len() / (self.dim + 1)
    }

    pub fn vertex(&self, v: usize) -> Vec2<T> {
        self.vertices[v]
    }

    pub fn element(&self, k: usize) -> &[usize] {
        let s = self.dim + 1;
        &self.elem_verts[k * s..(k + 1) * s]
    }

    /// Canonical vertex id after periodic identification.
    pub fn canonical_vertex(&self, v: usize) -> usize {
        self.alias[v]
    }

    pub fn is_periodic(&self) -> bool {
        self.alias.iter().enumerate().any(|(v, &a)| v != a)
    }

    pub fn interior_facets(&self) -> &[InteriorFacet] {
        &self.interior_facets
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet<T>] {
        &self.boundary_facets
    }

    pub fn element_geometry(&self, k: usize) -> ElementGeometry<T> {
        let coords: Vec<Vec2<T>> = self.element(k).iter().map(|&v| self.vertices[v]).collect();
        ElementGeometry::from_vertices(self.dim, &coords, k)
            .expect("element measures validated at construction")
    }

    /// Sum of element measures.
    pub fn total_measure(&self) -> T {
        (0..self.num_elements())
            .map(|k| self.element_geometry(k).measure)
            .fold(T::zero(), |a, b| a + b)
    }

    /// Facet measure of an interior facet (edge length in 2D; in 1D the mean
    /// of the two adjacent element lengths, which is the `h_e` of the jump
    /// stabilization there).
    pub fn interior_facet_measure(&self, facet: &InteriorFacet) -> T {
        match self.dim {
            1 => {
                let hl = self.element_geometry(facet.left).measure;
                let hr = self.element_geometry(facet.right).measure;
                (hl + hr) / real(2.0)
            }
            _ => {
                let ga = self.element_geometry(facet.left);
                let a = ga.verts[facet.left_local[0]];
                let b = ga.verts[facet.left_local[1]];
                norm(sub(b, a))
            }
        }
    }

    /// Distinct geometric edges (vertex index pairs, ascending), sorted.
    /// Periodic identification is ignored here: this is the geometry seen by
    /// plotting and by edge-DOF placement.
    pub fn geometric_edges(&self) -> Vec<[usize; 2]> {
        let mut set: BTreeMap<[usize; 2], ()> = BTreeMap::new();
        for k in 0..self.num_elements() {
            let e = self.element(k);
            match self.dim {
                1 => {
                    let mut pair = [e[0], e[1]];
                    pair.sort_unstable();
                    set.insert(pair, ());
                }
                _ => {
                    for (a, b) in [(0, 1), (1, 2), (0, 2)] {
                        let mut pair = [e[a], e[b]];
                        pair.sort_unstable();
                        set.insert(pair, ());
                    }
                }
            }
        }
        set.into_keys().collect()
    }

    /// Total facet count (interior + boundary), the `E` of the Euler check.
    pub fn num_facets(&self) -> usize {
        self.interior_facets.len() + self.boundary_facets.len()
    }

    // ---- generators -----------------------------------------------------

    /// Builds the mesh described by `spec` (generators only; `File` specs
    /// must go through [`read_mesh_file`]).
    pub fn generate(spec: &MeshSpec) -> Result<Self> {
        match *spec {
            MeshSpec::Interval { n, periodic } => Self::interval(n, periodic),
            MeshSpec::Rectangle {
                nx,
                ny,
                periodic_x,
                periodic_y,
            } => Self::rectangle(nx, ny, periodic_x, periodic_y),
            MeshSpec::Disk { level } => Self::disk(level),
            MeshSpec::File { ref path } => read_mesh_file(path),
        }
    }

    /// Uniform partition of (0,1) into `n` cells.
    pub fn interval(n: usize, periodic: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSpecification(
                "interval mesh needs at least one cell".into(),
            ));
        }
        if periodic && n < 2 {
            return Err(Error::InvalidSpecification(
                "periodic interval mesh needs at least two cells".into(),
            ));
        }
        let nf = real::<T>(n as f64);
        let vertices: Vec<Vec2<T>> = (0..=n)
            .map(|i| [real::<T>(i as f64) / nf, T::zero()])
            .collect();
        let mut elems = Vec::with_capacity(2 * n);
        for i in 0..n {
            elems.push(i);
            elems.push(i + 1);
        }
        let alias = periodic.then(|| {
            let mut a: Vec<usize> = (0..=n).collect();
            a[n] = 0;
            a
        });
        Self::from_parts(1, vertices, elems, alias)
    }

    /// `nx` by `ny` grid on (0,1)^2, each cell split into two triangles.
    pub fn rectangle(nx: usize, ny: usize, periodic_x: bool, periodic_y: bool) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidSpecification(
                "rectangle mesh needs at least one cell per direction".into(),
            ));
        }
        // With fewer than three cells, two distinct facets would collapse
        // onto the same canonical vertex pair (a multigraph torus), which
        // vertex identification cannot represent.
        if (periodic_x && nx < 3) || (periodic_y && ny < 3) {
            return Err(Error::InvalidSpecification(
                "periodic rectangle directions need at least three cells".into(),
            ));
        }
        let (fx, fy) = (real::<T>(nx as f64), real::<T>(ny as f64));
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([real::<T>(i as f64) / fx, real::<T>(j as f64) / fy]);
            }
        }
        let mut elems = Vec::with_capacity(6 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                elems.extend_from_slice(&[v00, v10, v11]);
                elems.extend_from_slice(&[v00, v11, v01]);
            }
        }
        let alias = (periodic_x || periodic_y).then(|| {
            let mut a: Vec<usize> = (0..vertices.len()).collect();
            if periodic_x {
                for j in 0..=ny {
                    a[id(nx, j)] = id(0, j);
                }
            }
            if periodic_y {
                for i in 0..=nx {
                    a[id(i, ny)] = a[id(i, 0)];
                }
            }
            a
        });
        Self::from_parts(2, vertices, elems, alias)
    }

    /// Structured radial triangulation of the unit disk: `level` concentric
    /// rings, ring `m` carrying `6m` vertices, boundary on the unit circle.
    pub fn disk(level: usize) -> Result<Self> {
        if level == 0 {
            return Err(Error::InvalidSpecification(
                "disk mesh needs at least one ring".into(),
            ));
        }
        let lf = real::<T>(level as f64);
        let ring_start = |m: usize| if m == 0 { 0 } else { 1 + 3 * m * (m - 1) };
        let mut vertices: Vec<Vec2<T>> = vec![[T::zero(), T::zero()]];
        for m in 1..=level {
            let r = real::<T>(m as f64) / lf;
            let count = 6 * m;
            for j in 0..count {
                let theta = real::<T>(2.0 * std::f64::consts::PI * j as f64 / count as f64);
                vertices.push([r * theta.cos(), r * theta.sin()]);
            }
        }
        let mut elems = Vec::with_capacity(18 * level * level);
        // Innermost fan around the center.
        for j in 0..6 {
            elems.extend_from_slice(&[0, 1 + j, 1 + (j + 1) % 6]);
        }
        for m in 2..=level {
            let outer = |i: usize| ring_start(m) + i % (6 * m);
            let inner = |i: usize| ring_start(m - 1) + i % (6 * (m - 1));
            for s in 0..6 {
                for j in 0..m {
                    elems.extend_from_slice(&[
                        outer(s * m + j),
                        outer(s * m + j + 1),
                        inner(s * (m - 1) + j),
                    ]);
                }
                for j in 0..m - 1 {
                    elems.extend_from_slice(&[
                        outer(s * m + j + 1),
                        inner(s * (m - 1) + j + 1),
                        inner(s * (m - 1) + j),
                    ]);
                }
            }
        }
        Self::from_parts(2, vertices, elems, None)
    }
}

// ---- ASCII mesh file format --------------------------------------------
//
// line 1: `dim nv ne nb`
// nv lines: vertex coordinates `x` (1D) or `x y` (2D)
// ne lines: element vertex indices, 0-based
// nb lines: boundary facet vertex indices, 0-based
//
// Interior facets and normals are always derived, never stored.

/// Reads a mesh from the ASCII format. The boundary facet list of the file
/// is checked against the derived boundary (conformity check).
pub fn read_mesh_file<T: Real>(path: impl Into<PathBuf>) -> Result<Mesh<T>> {
    let path = path.into();
    let text =
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_mesh_text(&text, &path.display().to_string())
}

pub fn parse_mesh_text<T: Real>(text: &str, path: &str) -> Result<Mesh<T>> {
    let err = |line: usize, msg: String| Error::MeshFile {
        path: path.to_string(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty mesh file".into()))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| err(hline, format!("bad header `{header}`, expected `dim nv ne nb`")))?;
    let [dim, nv, ne, nb] = head[..] else {
        return Err(err(hline, "header must have four fields: dim nv ne nb".into()));
    };
    if !(1..=2).contains(&dim) {
        return Err(err(hline, format!("dimension must be 1 or 2, got {dim}")));
    }

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(0, "unexpected end of file in vertex block".into()))?;
        let coords: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(ln, format!("bad vertex line `{l}`")))?;
        if coords.len() != dim {
            return Err(err(ln, format!("expected {dim} coordinates, got {}", coords.len())));
        }
        let y = if dim == 2 { coords[1] } else { 0.0 };
        vertices.push([real::<T>(coords[0]), real::<T>(y)]);
    }

    let mut elems = Vec::with_capacity(ne * (dim + 1));
    for _ in 0..ne {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(0, "unexpected end of file in element block".into()))?;
        let ids: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(ln, format!("bad element line `{l}`")))?;
        if ids.len() != dim + 1 {
            return Err(err(ln, format!("expected {} vertex indices, got {}", dim + 1, ids.len())));
        }
        elems.extend_from_slice(&ids);
    }

    let mut listed_boundary: Vec<Vec<usize>> = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(0, "unexpected end of file in boundary block".into()))?;
        let ids: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(ln, format!("bad boundary facet line `{l}`")))?;
        if ids.len() != dim {
            return Err(err(ln, format!("expected {} vertex indices, got {}", dim, ids.len())));
        }
        let mut ids = ids;
        ids.sort_unstable();
        listed_boundary.push(ids);
    }

    let mesh = Mesh::from_parts(dim, vertices, elems, None)?;

    let mut derived: Vec<Vec<usize>> = mesh
        .boundary_facets()
        .iter()
        .map(|f| {
            let mut v: Vec<usize> = f.verts[..dim].to_vec();
            v.sort_unstable();
            v
        })
        .collect();
    derived.sort();
    listed_boundary.sort();
    if derived != listed_boundary {
        return Err(Error::NonConforming(format!(
            "{path}: listed boundary facets do not match the mesh boundary \
             ({} listed, {} derived)",
            listed_boundary.len(),
            derived.len()
        )));
    }
    Ok(mesh)
}

/// Serializes a mesh to the ASCII format (boundary facets are the derived
/// ones; periodic identification is not representable and must be rebuilt
/// by the reader if desired).
pub fn write_mesh_text<T: Real>(mesh: &Mesh<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {} {}",
        mesh.dim(),
        mesh.num_vertices(),
        mesh.num_elements(),
        mesh.boundary_facets().len()
    );
    for v in 0..mesh.num_vertices() {
        let p = mesh.vertex(v);
        if mesh.dim() == 1 {
            let _ = writeln!(out, "{}", p[0]);
        } else {
            let _ = writeln!(out, "{} {}", p[0], p[1]);
        }
    }
    for k in 0..mesh.num_elements() {
        let ids: Vec<String> = mesh.element(k).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", ids.join(" "));
    }
    for f in mesh.boundary_facets() {
        let ids: Vec<String> = f.verts[..mesh.dim()].iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", ids.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = Mesh<f64>;

    #[test]
    fn interval_periodic_counts() {
        let m = M::interval(4, true).unwrap();
        assert_eq!(m.num_elements(), 4);
        assert_eq!(m.num_vertices(), 5);
        // 4 distinct canonical vertices after identification.
        let mut canon: Vec<usize> = (0..m.num_vertices()).map(|v| m.canonical_vertex(v)).collect();
        canon.sort_unstable();
        canon.dedup();
        assert_eq!(canon.len(), 4);
        for k in 0..4 {
            assert!((m.element_geometry(k).measure - 0.25).abs() < 1e-15);
        }
        // Fully periodic: no boundary, n interior facets.
        assert_eq!(m.boundary_facets().len(), 0);
        assert_eq!(m.interior_facets().len(), 4);
    }

    #[test]
    fn interval_nonperiodic_boundary_normals() {
        let m = M::interval(3, false).unwrap();
        assert_eq!(m.boundary_facets().len(), 2);
        assert_eq!(m.interior_facets().len(), 2);
        for f in m.boundary_facets() {
            let x = m.vertex(f.verts[0])[0];
            if x < 0.5 {
                assert_eq!(f.normal[0], -1.0);
            } else {
                assert_eq!(f.normal[0], 1.0);
            }
        }
    }

    #[test]
    fn rectangle_2x2_counts_and_euler() {
        let m = M::rectangle(2, 2, false, false).unwrap();
        assert_eq!(m.num_vertices(), 9);
        assert_eq!(m.num_elements(), 8);
        assert_eq!(m.num_facets(), 16);
        // V - E + F = 1 for a simply connected 2D mesh.
        assert_eq!(
            m.num_vertices() as i64 - m.num_facets() as i64 + m.num_elements() as i64,
            1
        );
        assert!((m.total_measure() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rectangle_periodic_identification() {
        let m = M::rectangle(3, 3, true, true).unwrap();
        // Torus: every facet interior.
        assert_eq!(m.boundary_facets().len(), 0);
        assert_eq!(m.interior_facets().len(), m.num_facets());
        // Corner vertices all collapse onto vertex 0.
        assert_eq!(m.canonical_vertex(3), 0);
        assert_eq!(m.canonical_vertex(12), 0);
        assert_eq!(m.canonical_vertex(15), 0);
        // Canonical vertex count = nx * ny.
        let mut canon: Vec<usize> = (0..m.num_vertices()).map(|v| m.canonical_vertex(v)).collect();
        canon.sort_unstable();
        canon.dedup();
        assert_eq!(canon.len(), 9);
        // Too-coarse periodic directions are rejected.
        assert!(M::rectangle(2, 3, true, false).is_err());
        assert!(M::rectangle(3, 2, false, true).is_err());
    }

    #[test]
    fn facet_adjacency_is_symmetric() {
        let m = M::rectangle(3, 3, false, false).unwrap();
        for f in m.interior_facets() {
            for side in [(f.left, f.left_local), (f.right, f.right_local)] {
                let elem = m.element(side.0);
                for j in 0..m.dim() {
                    assert_eq!(m.canonical_vertex(elem[side.1[j]]), f.verts[j]);
                }
            }
        }
    }

    #[test]
    fn positive_orientation_is_restored() {
        // Clockwise triangle gets its orientation flipped, not rejected.
        let verts = vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let m = M::from_parts(2, verts, vec![0, 1, 2], None).unwrap();
        assert!(m.element_geometry(0).measure > 0.0);
    }

    #[test]
    fn degenerate_element_is_rejected() {
        let verts = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let r = M::from_parts(2, verts, vec![0, 1, 2], None);
        assert!(matches!(r, Err(Error::SingularGeometry { element: 0 })));
    }

    #[test]
    fn disk_counts_area_and_boundary_radius() {
        for level in [1usize, 2, 3, 5] {
            let m = M::disk(level).unwrap();
            assert_eq!(m.num_vertices(), 1 + 3 * level * (level + 1));
            assert_eq!(m.num_elements(), 6 * level * level);
            assert_eq!(m.boundary_facets().len(), 6 * level);
            // Total area equals the inscribed regular 6L-gon area.
            let n = 6.0 * level as f64;
            let polygon = 0.5 * n * (2.0 * std::f64::consts::PI / n).sin();
            assert!((m.total_measure() - polygon).abs() < 1e-12, "level {level}");
            assert!(m.total_measure() < std::f64::consts::PI);
            for f in m.boundary_facets() {
                for &v in &f.verts {
                    let p = m.vertex(v);
                    assert!((norm(p) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn disk_area_converges_to_pi_quadratically() {
        let errs: Vec<f64> = [4usize, 8, 16]
            .iter()
            .map(|&l| std::f64::consts::PI - M::disk(l).unwrap().total_measure())
            .collect();
        let s1 = (errs[0] / errs[1]).log2();
        let s2 = (errs[1] / errs[2]).log2();
        assert!((s1 - 2.0).abs() < 0.1, "slope {s1}");
        assert!((s2 - 2.0).abs() < 0.05, "slope {s2}");
    }

    #[test]
    fn boundary_normals_are_unit_and_outward() {
        let m = M::disk(3).unwrap();
        for f in m.boundary_facets() {
            assert!((norm(f.normal) - 1.0).abs() < 1e-14);
            // For the disk, outward means roughly radial.
            let mid = [
                0.5 * (m.vertex(f.verts[0])[0] + m.vertex(f.verts[1])[0]),
                0.5 * (m.vertex(f.verts[0])[1] + m.vertex(f.verts[1])[1]),
            ];
            assert!(crate::scalar::dot(f.normal, mid) > 0.0);
        }
    }

    #[test]
    fn zero_cell_specs_are_rejected() {
        assert!(M::interval(0, false).is_err());
        assert!(M::rectangle(0, 2, false, false).is_err());
        assert!(M::disk(0).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            MeshSpec::parse("interval:n=8,periodic=true").unwrap(),
            MeshSpec::Interval { n: 8, periodic: true }
        );
        assert_eq!(
            MeshSpec::parse("interval:8").unwrap(),
            MeshSpec::Interval { n: 8, periodic: false }
        );
        assert_eq!(
            MeshSpec::parse("rect:4x3").unwrap(),
            MeshSpec::Rectangle { nx: 4, ny: 3, periodic_x: false, periodic_y: false }
        );
        assert_eq!(MeshSpec::parse("disk:24").unwrap(), MeshSpec::Disk { level: 24 });
        assert!(MeshSpec::parse("cube:3").is_err());
        assert!(MeshSpec::parse("interval:n=abc").is_err());
    }

    #[test]
    fn ascii_round_trip() {
        let m = M::rectangle(2, 3, false, false).unwrap();
        let text = write_mesh_text(&m);
        let m2: M = parse_mesh_text(&text, "inline").unwrap();
        assert_eq!(m2.num_vertices(), m.num_vertices());
        assert_eq!(m2.num_elements(), m.num_elements());
        assert_eq!(m2.boundary_facets().len(), m.boundary_facets().len());
        assert!((m2.total_measure() - m.total_measure()).abs() < 1e-15);
    }

    #[test]
    fn ascii_bad_inputs() {
        assert!(parse_mesh_text::<f64>("", "t").is_err());
        assert!(parse_mesh_text::<f64>("2 1 0", "t").is_err());
        // Boundary list disagreeing with derived boundary.
        let m = M::interval(2, false).unwrap();
        let mut text = write_mesh_text(&m);
        text = text.replace("1 3 2 2", "1 3 2 1");
        text = text.lines().take(text.lines().count() - 1).collect::<Vec<_>>().join("\n");
        assert!(parse_mesh_text::<f64>(&text, "t").is_err());
    }

    #[test]
    fn geometry_of_reference_triangle() {
        let g = ElementGeometry::<f64>::from_vertices(
            2,
            &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            0,
        )
        .unwrap();
        assert!((g.measure - 0.5).abs() < 1e-15);
        assert_eq!(g.grad_lambda[0], [-1.0, -1.0]);
        assert_eq!(g.grad_lambda[1], [1.0, 0.0]);
        assert_eq!(g.grad_lambda[2], [0.0, 1.0]);
        assert!((g.shortest_edge - 1.0).abs() < 1e-15);
        // Outward normal of the hypotenuse (opposite vertex 0).
        let n = g.facet_normal(0);
        let s = 1.0 / 2.0_f64.sqrt();
        assert!((n[0] - s).abs() < 1e-15 && (n[1] - s).abs() < 1e-15);
        assert!((g.facet_measure(0) - 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn f32_meshes_build() {
        let m = Mesh::<f32>::disk(3).unwrap();
        assert!(m.total_measure() > 3.0);
    }
}
