//! Structured triangulations of the unit square and the L-shaped domain.
//!
//! Meshes are built from a fixed coarse triangulation (2 triangles for the
//! square, 6 for the L-shape) by repeated red refinement: every triangle is
//! split into four congruent children through its edge midpoints, so the
//! mesh size halves exactly per level. The children of triangle `t` are
//! numbered `4t..4t+4`, which makes the ancestor of a fine triangle a plain
//! integer shift. Transfers between levels rely on this.
//!
//! Edge orientation is fixed once at construction. For an interior edge the
//! adjacent triangle with the lower index is `K⁻`, the other is `K⁺`, and the
//! unit normal points from `K⁻` into `K⁺`. A boundary edge has only `K⁺` and
//! its normal is the outward normal of the domain.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Matrix2, Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest refinement level accepted by [`build_mesh`].
pub const MAX_MESH_LEVEL: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    UnitSquare,
    LShape,
}

/// A polygonal domain together with its elliptic regularity index.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonalDomain {
    pub kind: DomainKind,
    /// Counterclockwise boundary polygon.
    pub vertices: Vec<Point2<f64>>,
    /// Regularity index of the second-order Dirichlet problem on this domain.
    pub alpha: f64,
}

impl PolygonalDomain {
    pub fn unit_square() -> Self {
        Self {
            kind: DomainKind::UnitSquare,
            vertices: vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(1.0, 1.0),
                Point2::new(0.0, 1.0),
            ],
            alpha: 1.0,
        }
    }

    /// `[-1, 1]²` with the open third quadrant removed. The reentrant corner
    /// at the origin has interior angle `3π/2`, so `α = π / (3π/2) = 2/3`.
    pub fn l_shape() -> Self {
        Self {
            kind: DomainKind::LShape,
            vertices: vec![
                Point2::new(0.0, -1.0),
                Point2::new(1.0, -1.0),
                Point2::new(1.0, 1.0),
                Point2::new(-1.0, 1.0),
                Point2::new(-1.0, 0.0),
                Point2::new(0.0, 0.0),
            ],
            alpha: 2.0 / 3.0,
        }
    }

    pub fn new(kind: DomainKind) -> Self {
        match kind {
            DomainKind::UnitSquare => Self::unit_square(),
            DomainKind::LShape => Self::l_shape(),
        }
    }

    /// Shoelace area of the boundary polygon.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let p = self.vertices[i];
                let q = self.vertices[(i + 1) % n];
                p.x * q.y - q.x * p.y
            })
            .sum();
        0.5 * twice
    }

    fn coarse_triangulation(&self) -> (Vec<Point2<f64>>, Vec<[usize; 3]>) {
        // Every coarse square [x0,x1]×[y0,y1] is cut along its
        // bottom-left to top-right diagonal.
        let squares: &[(f64, f64)] = match self.kind {
            DomainKind::UnitSquare => &[(0.0, 0.0)],
            DomainKind::LShape => &[(0.0, -1.0), (-1.0, 0.0), (0.0, 0.0)],
        };
        let mut vertices: Vec<Point2<f64>> = Vec::new();
        let index_of = |p: Point2<f64>, vertices: &mut Vec<Point2<f64>>| -> usize {
            match vertices.iter().position(|q| (q - p).norm() < 1e-14) {
                Some(i) => i,
                None => {
                    vertices.push(p);
                    vertices.len() - 1
                }
            }
        };
        let mut triangles = Vec::new();
        for &(x0, y0) in squares {
            let a = index_of(Point2::new(x0, y0), &mut vertices);
            let b = index_of(Point2::new(x0 + 1.0, y0), &mut vertices);
            let c = index_of(Point2::new(x0 + 1.0, y0 + 1.0), &mut vertices);
            let d = index_of(Point2::new(x0, y0 + 1.0), &mut vertices);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
        (vertices, triangles)
    }
}

/// Edge record with its fixed orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Endpoint vertex indices, smaller index first.
    pub vertices: [usize; 2],
    /// `K⁺`: the higher-indexed neighbour, or the only one on the boundary.
    pub plus: usize,
    /// `K⁻`: the lower-indexed neighbour; absent on the boundary.
    pub minus: Option<usize>,
    /// Unit normal from `K⁻` into `K⁺`; outward on the boundary.
    pub normal: Vector2<f64>,
    pub length: f64,
    pub boundary: bool,
}

/// Neighbourhood of a single edge as returned by [`Mesh::edge_adjacency`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAdjacency {
    pub plus: usize,
    pub minus: Option<usize>,
    pub normal: Vector2<f64>,
}

/// Affine map from the reference triangle `{(0,0), (1,0), (0,1)}`.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub origin: Point2<f64>,
    pub jacobian: Matrix2<f64>,
    pub inverse: Matrix2<f64>,
    pub det: f64,
}

impl AffineMap {
    pub fn from_points(p: [Point2<f64>; 3]) -> Self {
        let jacobian = Matrix2::from_columns(&[p[1] - p[0], p[2] - p[0]]);
        let det = jacobian.determinant();
        let inverse = jacobian
            .try_inverse()
            .expect("degenerate triangle in affine map");
        Self { origin: p[0], jacobian, inverse, det }
    }

    pub fn to_physical(&self, xi: &Point2<f64>) -> Point2<f64> {
        self.origin + self.jacobian * xi.coords
    }

    pub fn to_reference(&self, x: &Point2<f64>) -> Point2<f64> {
        Point2::from(self.inverse * (x - self.origin))
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det.abs()
    }
}

/// A conforming triangulation with edge adjacency.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: PolygonalDomain,
    pub vertices: Vec<Point2<f64>>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// `triangle_edges[t][i]` is the edge opposite local vertex `i`.
    pub triangle_edges: Vec<[usize; 3]>,
    pub boundary_vertex: Vec<bool>,
    pub level: u32,
    /// Maximum triangle diameter.
    pub h: f64,
}

/// Build the structured mesh of `domain` at refinement `level`.
pub fn build_mesh(domain: &PolygonalDomain, level: u32) -> Result<Mesh> {
    if level > MAX_MESH_LEVEL {
        return Err(Error::LevelTooLarge { level, max: MAX_MESH_LEVEL });
    }
    let (vertices, triangles) = domain.coarse_triangulation();
    let mut mesh = Mesh::from_parts(domain.clone(), vertices, triangles, 0);
    for _ in 0..level {
        mesh = refine_uniform(&mesh);
    }
    mesh.check_invariants();
    Ok(mesh)
}

/// Red refinement: each triangle becomes four congruent children.
pub fn refine_uniform(mesh: &Mesh) -> Mesh {
    let nv = mesh.vertices.len();
    let mut vertices = mesh.vertices.clone();
    vertices.extend(mesh.edges.iter().map(|e| {
        let a = mesh.vertices[e.vertices[0]];
        let b = mesh.vertices[e.vertices[1]];
        Point2::from((a.coords + b.coords) * 0.5)
    }));
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let te = mesh.triangle_edges[t];
        // midpoint opposite local vertex i
        let m = [nv + te[0], nv + te[1], nv + te[2]];
        let [a, b, c] = *tri;
        triangles.push([a, m[2], m[1]]);
        triangles.push([m[2], b, m[0]]);
        triangles.push([m[1], m[0], c]);
        triangles.push([m[0], m[1], m[2]]);
    }
    Mesh::from_parts(mesh.domain.clone(), vertices, triangles, mesh.level + 1)
}

impl Mesh {
    fn from_parts(
        domain: PolygonalDomain,
        vertices: Vec<Point2<f64>>,
        triangles: Vec<[usize; 3]>,
        level: u32,
    ) -> Self {
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * triangles.len() / 2 + 8);
        let mut neighbours: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut endpoints: Vec<[usize; 2]> = Vec::new();
        let mut triangle_edges = vec![[0usize; 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for i in 0..3 {
                let p = tri[(i + 1) % 3];
                let q = tri[(i + 2) % 3];
                let key = (p.min(q), p.max(q));
                let e = *lookup.entry(key).or_insert_with(|| {
                    endpoints.push([key.0, key.1]);
                    neighbours.push(Vec::with_capacity(2));
                    endpoints.len() - 1
                });
                neighbours[e].push((t, i));
                triangle_edges[t][i] = e;
            }
        }

        let outward = |t: usize, i: usize| -> Vector2<f64> {
            let tri = triangles[t];
            let d = vertices[tri[(i + 2) % 3]] - vertices[tri[(i + 1) % 3]];
            Vector2::new(d.y, -d.x).normalize()
        };

        let mut boundary_vertex = vec![false; vertices.len()];
        let edges: Vec<Edge> = endpoints
            .iter()
            .zip(&neighbours)
            .map(|(&ends, nb)| {
                let length = (vertices[ends[1]] - vertices[ends[0]]).norm();
                match nb.as_slice() {
                    [(t, i)] => {
                        boundary_vertex[ends[0]] = true;
                        boundary_vertex[ends[1]] = true;
                        Edge {
                            vertices: ends,
                            plus: *t,
                            minus: None,
                            normal: outward(*t, *i),
                            length,
                            boundary: true,
                        }
                    }
                    [(t0, i0), (t1, _)] => {
                        // neighbours are recorded in increasing triangle order
                        debug_assert!(t0 < t1);
                        Edge {
                            vertices: ends,
                            plus: *t1,
                            minus: Some(*t0),
                            normal: outward(*t0, *i0),
                            length,
                            boundary: false,
                        }
                    }
                    _ => panic!("non-manifold edge {ends:?}"),
                }
            })
            .collect();

        let h = triangles
            .iter()
            .map(|tri| {
                (0..3)
                    .map(|i| (vertices[tri[(i + 1) % 3]] - vertices[tri[i]]).norm())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);

        Self { domain, vertices, triangles, edges, triangle_edges, boundary_vertex, level, h }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point2<f64>; 3] {
        let tri = self.triangles[t];
        [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]]
    }

    pub fn affine_map(&self, t: usize) -> AffineMap {
        AffineMap::from_points(self.triangle_points(t))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        self.affine_map(t).area()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Index of the ancestor of `t` on a coarser mesh of the same family.
    pub fn ancestor(&self, t: usize, coarse_level: u32) -> usize {
        debug_assert!(coarse_level <= self.level);
        t >> (2 * (self.level - coarse_level))
    }

    pub fn edge_adjacency(&self, edge: usize) -> Result<EdgeAdjacency> {
        let e = self
            .edges
            .get(edge)
            .ok_or(Error::EdgeOutOfRange { index: edge, count: self.edges.len() })?;
        Ok(EdgeAdjacency { plus: e.plus, minus: e.minus, normal: e.normal })
    }

    /// Local index (0..3) of edge `edge` inside triangle `t`.
    pub fn local_edge_index(&self, t: usize, edge: usize) -> usize {
        self.triangle_edges[t]
            .iter()
            .position(|&e| e == edge)
            .expect("edge does not belong to triangle")
    }

    /// Panics when a structural invariant is violated; only a bug in this
    /// module can trigger it.
    fn check_invariants(&self) {
        for (t, _) in self.triangles.iter().enumerate() {
            assert!(self.affine_map(t).det > 0.0, "triangle {t} is not positively oriented");
        }
        let area = self.total_area();
        let exact = self.domain.area();
        assert!(
            (area - exact).abs() <= 1e-12 * exact,
            "mesh area {area} differs from domain area {exact}"
        );
        let euler = self.num_vertices() as i64 - self.num_edges() as i64 + self.num_triangles() as i64;
        assert_eq!(euler, 1, "Euler characteristic of a simply connected domain must be 1");
    }

    /// Plain-text dump: one `v x y` line per vertex, one `t i j k` per triangle.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {}", v.x, v.y);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "t {} {} {}", t[0], t[1], t[2]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_level_zero() {
        let mesh = build_mesh(&PolygonalDomain::unit_square(), 0).unwrap();
        assert_eq!(mesh.num_triangles(), 2);
        assert_eq!(mesh.num_vertices(), 4);
        assert!((mesh.h - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn unit_square_level_three_counts_and_area() {
        let mesh = build_mesh(&PolygonalDomain::unit_square(), 3).unwrap();
        assert_eq!(mesh.num_triangles(), 2 * 4usize.pow(3));
        // area oracle: independent sum of cross products over the vertex triples
        let area: f64 = mesh
            .triangles
            .iter()
            .map(|t| {
                let [a, b, c] = [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]];
                0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
            })
            .sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l_shape_area() {
        let domain = PolygonalDomain::l_shape();
        assert!((domain.area() - 3.0).abs() < 1e-15);
        let mesh = build_mesh(&domain, 1).unwrap();
        assert!((mesh.total_area() - 3.0).abs() < 1e-12);
        let coarse = build_mesh(&domain, 0).unwrap();
        assert_eq!(coarse.num_triangles(), 6);
        let refined = refine_uniform(&coarse);
        assert!((refined.total_area() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_quadruples_and_halves_h() {
        let mut mesh = build_mesh(&PolygonalDomain::unit_square(), 0).unwrap();
        for _ in 0..4 {
            let child = refine_uniform(&mesh);
            assert_eq!(child.num_triangles(), 4 * mesh.num_triangles());
            assert!((child.h - mesh.h / 2.0).abs() < 1e-14);
            mesh = child;
        }
    }

    #[test]
    fn level_guard() {
        assert!(matches!(
            build_mesh(&PolygonalDomain::unit_square(), 11),
            Err(Error::LevelTooLarge { level: 11, .. })
        ));
    }

    #[test]
    fn boundary_normal_on_right_side_points_right() {
        let mesh = build_mesh(&PolygonalDomain::unit_square(), 2).unwrap();
        let mut seen = 0;
        for (i, e) in mesh.edges.iter().enumerate() {
            let a = mesh.vertices[e.vertices[0]];
            let b = mesh.vertices[e.vertices[1]];
            if e.boundary && (a.x - 1.0).abs() < 1e-15 && (b.x - 1.0).abs() < 1e-15 {
                let adj = mesh.edge_adjacency(i).unwrap();
                assert!(adj.minus.is_none());
                assert!((adj.normal - Vector2::new(1.0, 0.0)).norm() < 1e-15);
                seen += 1;
            }
        }
        assert_eq!(seen, 4);
    }

    #[test]
    fn interior_edges_orientation() {
        let mesh = build_mesh(&PolygonalDomain::l_shape(), 2).unwrap();
        for (i, e) in mesh.edges.iter().enumerate() {
            let adj = mesh.edge_adjacency(i).unwrap();
            assert!((adj.normal.norm() - 1.0).abs() < 1e-14);
            let Some(minus) = adj.minus else { continue };
            assert_ne!(minus, adj.plus);
            assert!(minus < adj.plus);
            // the normal points away from the centroid of K⁻ towards K⁺
            let centroid = |t: usize| {
                let p = mesh.triangle_points(t);
                (p[0].coords + p[1].coords + p[2].coords) / 3.0
            };
            let mid = (mesh.vertices[e.vertices[0]].coords + mesh.vertices[e.vertices[1]].coords) / 2.0;
            assert!(adj.normal.dot(&(mid - centroid(minus))) > 0.0);
            assert!(adj.normal.dot(&(centroid(adj.plus) - mid)) > 0.0);
        }
        assert!(mesh.edge_adjacency(mesh.num_edges()).is_err());
    }

    #[test]
    fn interior_edges_have_opposite_induced_orientation() {
        let mesh = build_mesh(&PolygonalDomain::unit_square(), 3).unwrap();
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &mesh.triangles {
            for i in 0..3 {
                *directed.entry((tri[i], tri[(i + 1) % 3])).or_default() += 1;
            }
        }
        for e in mesh.edges.iter().filter(|e| !e.boundary) {
            let [a, b] = e.vertices;
            assert_eq!(directed.get(&(a, b)), Some(&1));
            assert_eq!(directed.get(&(b, a)), Some(&1));
        }
    }

    #[test]
    fn ancestors_contain_children() {
        let coarse = build_mesh(&PolygonalDomain::l_shape(), 1).unwrap();
        let fine = build_mesh(&PolygonalDomain::l_shape(), 3).unwrap();
        for t in 0..fine.num_triangles() {
            let p = fine.triangle_points(t);
            let c = (p[0].coords + p[1].coords + p[2].coords) / 3.0;
            let map = coarse.affine_map(fine.ancestor(t, 1));
            let xi = map.to_reference(&Point2::from(c));
            assert!(xi.x > -1e-12 && xi.y > -1e-12 && xi.x + xi.y < 1.0 + 1e-12);
        }
    }

    #[test]
    fn text_dump_format() {
        let mesh = build_mesh(&PolygonalDomain::unit_square(), 0).unwrap();
        let text = mesh.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "v 0 0");
        assert_eq!(lines[4], "t 0 1 2");
    }
}
