//! 2-D convex polygon helpers shared by the sensing-polygon, stability
//! and foot-collision code.

use nalgebra::Vector2;

#[derive(Debug, thiserror::Error)]
pub enum PolygonError {
    #[error("degenerate hull: fewer than 3 distinct non-collinear points")]
    DegenerateHull,
}

/// Convex hull by Andrew's monotone chain, returned counter-clockwise
/// without repeated endpoints.
pub fn convex_hull(points: &[Vector2<f64>]) -> Result<Vec<Vector2<f64>>, PolygonError> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| {
        (a.x, a.y)
            .partial_cmp(&(b.x, b.y))
            .expect("finite coordinates")
    });
    pts.dedup_by(|a, b| a == b);
    if pts.len() < 3 {
        return Err(PolygonError::DegenerateHull);
    }

    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };

    let mut lower: Vec<Vector2<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0
        {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Vector2<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0
        {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        return Err(PolygonError::DegenerateHull);
    }
    Ok(lower)
}

/// Twice the signed area; positive for counter-clockwise vertex order.
pub fn signed_area_doubled(polygon: &[Vector2<f64>]) -> f64 {
    let n = polygon.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = &polygon[i];
        let b = &polygon[(i + 1) % n];
        acc += a.x * b.y - a.y * b.x;
    }
    acc
}

/// Inward half-plane form of a counter-clockwise convex polygon: for each
/// edge a unit normal n and offset d with n . p - d >= 0 for interior p.
pub fn inward_half_planes(polygon: &[Vector2<f64>]) -> Vec<(Vector2<f64>, f64)> {
    let n = polygon.len();
    let mut planes = Vec::with_capacity(n);
    for i in 0..n {
        let a = &polygon[i];
        let b = &polygon[(i + 1) % n];
        let edge = b - a;
        // CCW order puts the interior to the left of each edge.
        let normal = Vector2::new(-edge.y, edge.x).normalize();
        planes.push((normal, normal.dot(a)));
    }
    planes
}

/// Signed distance of `p` to the polygon boundary along the inward
/// normals: positive inside, negative outside. The minimum over all edges
/// of a convex polygon.
pub fn inside_margin(polygon: &[Vector2<f64>], p: &Vector2<f64>) -> f64 {
    inward_half_planes(polygon)
        .iter()
        .map(|(n, d)| n.dot(p) - d)
        .fold(f64::INFINITY, f64::min)
}

/// Point-in-convex-polygon with an inward margin (margin 0 = on-or-inside
/// the boundary).
pub fn contains_with_margin(polygon: &[Vector2<f64>], p: &Vector2<f64>, margin: f64) -> bool {
    inside_margin(polygon, p) >= margin
}

/// Separating-axis intersection test for two convex polygons. Shared
/// boundary points count as intersection (closed polygons).
pub fn convex_polygons_intersect(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> bool {
    let axes = |poly: &[Vector2<f64>]| {
        let n = poly.len();
        (0..n)
            .map(|i| {
                let e = poly[(i + 1) % n] - poly[i];
                Vector2::new(-e.y, e.x)
            })
            .collect::<Vec<_>>()
    };
    for axis in axes(a).into_iter().chain(axes(b)) {
        let project = |poly: &[Vector2<f64>]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for p in poly {
                let v = axis.dot(p);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        };
        let (alo, ahi) = project(a);
        let (blo, bhi) = project(b);
        if ahi < blo || bhi < alo {
            return false;
        }
    }
    true
}

/// Corners of a rectangle centered at the origin of its local frame,
/// transformed into the world by (position, yaw). CCW order.
pub fn rectangle_corners(
    half_length: f64,
    half_width: f64,
    position: &Vector2<f64>,
    yaw: f64,
) -> [Vector2<f64>; 4] {
    let (sin, cos) = yaw.sin_cos();
    let rot = |x: f64, y: f64| {
        Vector2::new(
            cos * x - sin * y + position.x,
            sin * x + cos * y + position.y,
        )
    };
    [
        rot(half_length, half_width),
        rot(-half_length, half_width),
        rot(-half_length, -half_width),
        rot(half_length, -half_width),
    ]
}
