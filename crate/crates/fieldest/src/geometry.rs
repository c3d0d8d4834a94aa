//! Planar primitives used by the Voronoi partition: an axis-aligned domain
//! box and convex polygons with labeled edges, clipped by half-planes.

use nalgebra::Vector2;

pub type Point = Vector2<f64>;

const SIDE_TOL: f64 = 1e-12;

/// Axis-aligned rectangle, the domain `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect {
            min: Point::new(x0, y0),
            max: Point::new(x1, y1),
        }
    }

    pub fn unit_square() -> Self {
        Rect::new(0.0, 0.0, 1.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, q: &Point) -> bool {
        q.x >= self.min.x && q.x <= self.max.x && q.y >= self.min.y && q.y <= self.max.y
    }

    pub fn clamp(&self, q: &Point) -> Point {
        Point::new(
            q.x.clamp(self.min.x, self.max.x),
            q.y.clamp(self.min.y, self.max.y),
        )
    }
}

/// What a polygon edge lies on: the domain boundary or the bisector shared
/// with another generator. Bisector labels are how cell adjacency (shared
/// boundary of positive length) is recovered after clipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeLabel {
    Boundary,
    Bisector(usize),
}

/// Convex polygon with counter-clockwise vertices; `labels[k]` tags the edge
/// from `verts[k]` to `verts[(k+1) % n]`.
#[derive(Debug, Clone)]
pub struct ConvexPolygon {
    verts: Vec<Point>,
    labels: Vec<EdgeLabel>,
}

impl ConvexPolygon {
    pub fn from_rect(rect: &Rect) -> Self {
        let verts = vec![
            rect.min,
            Point::new(rect.max.x, rect.min.y),
            rect.max,
            Point::new(rect.min.x, rect.max.y),
        ];
        ConvexPolygon {
            labels: vec![EdgeLabel::Boundary; verts.len()],
            verts,
        }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.verts
    }

    pub fn is_empty(&self) -> bool {
        self.verts.len() < 3
    }

    /// Clips to the half-plane `{q : normal . q <= offset}`. Any new edge
    /// created along the clip line is tagged `label`.
    pub fn clip_halfplane(&self, normal: Point, offset: f64, label: EdgeLabel) -> Self {
        let n = self.verts.len();
        let mut verts = Vec::with_capacity(n + 1);
        let mut labels = Vec::with_capacity(n + 1);
        if n == 0 {
            return ConvexPolygon { verts, labels };
        }
        let side: Vec<f64> = self.verts.iter().map(|v| normal.dot(v) - offset).collect();
        for k in 0..n {
            let k1 = (k + 1) % n;
            let (cur_in, nxt_in) = (side[k] <= SIDE_TOL, side[k1] <= SIDE_TOL);
            match (cur_in, nxt_in) {
                (true, true) => {
                    verts.push(self.verts[k]);
                    labels.push(self.labels[k]);
                }
                (true, false) => {
                    // Leaving the half-plane: keep the inside part of this
                    // edge, then start the new edge along the clip line.
                    verts.push(self.verts[k]);
                    labels.push(self.labels[k]);
                    verts.push(intersect(&self.verts[k], &self.verts[k1], side[k], side[k1]));
                    labels.push(label);
                }
                (false, true) => {
                    verts.push(intersect(&self.verts[k], &self.verts[k1], side[k], side[k1]));
                    labels.push(self.labels[k]);
                }
                (false, false) => {}
            }
        }
        ConvexPolygon { verts, labels }
    }

    /// Shoelace area (positive for counter-clockwise orientation).
    pub fn area(&self) -> f64 {
        let n = self.verts.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for k in 0..n {
            let a = &self.verts[k];
            let b = &self.verts[(k + 1) % n];
            acc += a.x * b.y - b.x * a.y;
        }
        0.5 * acc
    }

    /// Area centroid; falls back to the vertex mean for degenerate polygons.
    pub fn centroid(&self) -> Point {
        let a = self.area();
        let n = self.verts.len();
        if n == 0 {
            return Point::zeros();
        }
        if a.abs() < 1e-15 {
            return self.verts.iter().sum::<Point>() / n as f64;
        }
        let mut cx = 0.0;
        let mut cy = 0.0;
        for k in 0..n {
            let p = &self.verts[k];
            let q = &self.verts[(k + 1) % n];
            let cross = p.x * q.y - q.x * p.y;
            cx += (p.x + q.x) * cross;
            cy += (p.y + q.y) * cross;
        }
        Point::new(cx, cy) / (6.0 * a)
    }

    /// Containment test for convex CCW polygons with tolerance `tol`
    /// (positive `tol` accepts points slightly outside).
    pub fn contains(&self, q: &Point, tol: f64) -> bool {
        let n = self.verts.len();
        if n < 3 {
            return false;
        }
        for k in 0..n {
            let a = &self.verts[k];
            let b = &self.verts[(k + 1) % n];
            let e = b - a;
            let cross = e.x * (q.y - a.y) - e.y * (q.x - a.x);
            if cross < -tol * e.norm().max(1e-30) {
                return false;
            }
        }
        true
    }

    /// Total length of edges carrying `label`.
    pub fn labeled_length(&self, label: EdgeLabel) -> f64 {
        let n = self.verts.len();
        let mut len = 0.0;
        for k in 0..n {
            if self.labels[k] == label {
                len += (self.verts[(k + 1) % n] - self.verts[k]).norm();
            }
        }
        len
    }
}

fn intersect(a: &Point, b: &Point, sa: f64, sb: f64) -> Point {
    let t = sa / (sa - sb);
    a + (b - a) * t
}
