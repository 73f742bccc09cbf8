//! Oriented box algebra in bird's-eye view and 3D.
//!
//! Boxes are `(x, y, z, l, w, h, heading)` with `l` along the heading
//! direction. Every IoU-style function orders its arguments canonically
//! before clipping, so swapping the arguments gives bit-identical results.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CLIP_EPS: f64 = 1e-12;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// A 7-parameter oriented 3D box. Serializes as `[x, y, z, l, w, h, heading]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 7]", into = "[f64; 7]")]
pub struct BevBox3D {
    x: f64,
    y: f64,
    z: f64,
    l: f64,
    w: f64,
    h: f64,
    heading: f64,
}

impl BevBox3D {
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, heading: f64) -> Result<Self> {
        let all = [x, y, z, l, w, h, heading];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite field in {all:?}")));
        }
        if l <= 0.0 || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "extents must be positive, got l={l} w={w} h={h}"
            )));
        }
        Ok(Self {
            x,
            y,
            z,
            l,
            w,
            h,
            heading: normalize_angle(heading),
        })
    }

    pub fn from_array(p: [f64; 7]) -> Result<Self> {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.l, self.w, self.h, self.heading]
    }

    /// Axis-aligned box centered at `(x, y, z)`.
    pub fn axis_aligned(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, z, l, w, h, 0.0)
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn bev_area(&self) -> f64 {
        self.l * self.w
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    /// Radius of the circle circumscribing the footprint.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.l.hypot(self.w)
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.z - 0.5 * self.h, self.z + 0.5 * self.h)
    }

    /// Same box shifted by `(dx, dy)` and rotated by `dtheta` about the
    /// world origin.
    pub fn transformed(&self, dx: f64, dy: f64, dtheta: f64) -> Self {
        let (s, c) = dtheta.sin_cos();
        let x = c * self.x - s * self.y + dx;
        let y = s * self.x + c * self.y + dy;
        Self {
            x,
            y,
            heading: normalize_angle(self.heading + dtheta),
            ..*self
        }
    }

    /// Box regression vector `(x, y, z, l, w, h, sin, cos)`.
    pub fn regression_params(&self) -> [f64; 8] {
        let (s, c) = self.heading.sin_cos();
        [self.x, self.y, self.z, self.l, self.w, self.h, s, c]
    }
}

impl TryFrom<[f64; 7]> for BevBox3D {
    type Error = Error;
    fn try_from(p: [f64; 7]) -> Result<Self> {
        Self::from_array(p)
    }
}

impl From<BevBox3D> for [f64; 7] {
    fn from(b: BevBox3D) -> Self {
        b.to_array()
    }
}

/// A convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon2D {
    vertices: Vec<[f64; 2]>,
}

impl ConvexPolygon2D {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidBox(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if cross(sub(b, a), sub(c, b)) < -CLIP_EPS {
                return Err(Error::InvalidBox(
                    "polygon is not convex counter-clockwise".into(),
                ));
            }
        }
        let poly = Self { vertices };
        if poly.area() <= 0.0 {
            return Err(Error::InvalidBox("polygon has no area".into()));
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        shoelace(&self.vertices).max(0.0)
    }

    /// True when `p` is inside or on the boundary.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            cross(sub(b, a), sub(p, a)) >= 0.0
        })
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn shoelace(v: &[[f64; 2]]) -> f64 {
    if v.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..v.len() {
        let a = v[i];
        let b = v[(i + 1) % v.len()];
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s
}

/// Four CCW corners of the heading-rotated `l x w` footprint.
pub fn bev_corners(b: &BevBox3D) -> ConvexPolygon2D {
    let (s, c) = b.heading.sin_cos();
    let hl = 0.5 * b.l;
    let hw = 0.5 * b.w;
    let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
    // (hl, hw) -> (-hl, hw) -> ... runs counter-clockwise
    let vertices = local
        .iter()
        .map(|&[u, v]| [b.x + c * u - s * v, b.y + s * u + c * v])
        .collect();
    ConvexPolygon2D { vertices }
}

/// Area of the intersection of two convex polygons (Sutherland-Hodgman).
pub fn intersection_area(a: &ConvexPolygon2D, b: &ConvexPolygon2D) -> f64 {
    let (subject, clip) = if order_polys(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    shoelace(&clip_convex(&subject.vertices, &clip.vertices)).max(0.0)
}

fn order_polys(a: &ConvexPolygon2D, b: &ConvexPolygon2D) -> Ordering {
    let fa = a.vertices.iter().flatten();
    let fb = b.vertices.iter().flatten();
    for (x, y) in fa.zip(fb) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.vertices.len().cmp(&b.vertices.len())
}

fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let edge = sub(b, a);
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let p = input[j];
            let q = input[(j + 1) % m];
            let dp = cross(edge, sub(p, a));
            let dq = cross(edge, sub(q, a));
            let p_in = dp >= -CLIP_EPS;
            let q_in = dq >= -CLIP_EPS;
            if p_in {
                output.push(p);
            }
            if p_in != q_in {
                let denom = dp - dq;
                if denom.abs() > CLIP_EPS {
                    let t = dp / denom;
                    output.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
                }
            }
        }
    }
    output
}

fn order_boxes(a: &BevBox3D, b: &BevBox3D) -> bool {
    let pa = a.to_array();
    let pb = b.to_array();
    for (x, y) in pa.iter().zip(pb.iter()) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o == Ordering::Greater,
        }
    }
    false
}

/// Footprint intersection area of two boxes.
pub fn bev_intersection(a: &BevBox3D, b: &BevBox3D) -> f64 {
    let (a, b) = if order_boxes(a, b) { (b, a) } else { (a, b) };
    let d = center_distance_bev(a, b);
    if d >= a.bev_radius() + b.bev_radius() {
        return 0.0;
    }
    let pa = bev_corners(a);
    let pb = bev_corners(b);
    shoelace(&clip_convex(&pa.vertices, &pb.vertices)).max(0.0)
}

pub fn iou_bev(a: &BevBox3D, b: &BevBox3D) -> f64 {
    let inter = bev_intersection(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn z_overlap(a: &BevBox3D, b: &BevBox3D) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn intersection_volume(a: &BevBox3D, b: &BevBox3D) -> f64 {
    let dz = z_overlap(a, b);
    if dz <= 0.0 {
        return 0.0;
    }
    bev_intersection(a, b) * dz
}

pub fn iou_3d(a: &BevBox3D, b: &BevBox3D) -> f64 {
    let inter = intersection_volume(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volume of the smallest cuboid containing both boxes whose footprint is
/// aligned with the heading of one of them. For two boxes at heading 0 this
/// is the axis-aligned enclosing cuboid; for identical boxes it is the box.
pub fn enclosing_volume(a: &BevBox3D, b: &BevBox3D) -> f64 {
    let ca = bev_corners(a);
    let cb = bev_corners(b);
    let area = |phi: f64| {
        let (s, c) = phi.sin_cos();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in ca.vertices().iter().chain(cb.vertices()) {
            let p = [c * v[0] + s * v[1], -s * v[0] + c * v[1]];
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (hi[0] - lo[0]) * (hi[1] - lo[1])
    };
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    area(a.heading).min(area(b.heading)) * (a1.max(b1) - a0.min(b0))
}

/// Generalized 3D IoU over the cuboid of [`enclosing_volume`].
pub fn giou_3d(a: &BevBox3D, b: &BevBox3D) -> f64 {
    let (a, b) = if order_boxes(a, b) { (b, a) } else { (a, b) };
    let inter = intersection_volume(a, b);
    let union = a.volume() + b.volume() - inter;
    let iou = (inter / union).clamp(0.0, 1.0);
    let enclosing = enclosing_volume(a, b).max(union);
    iou - (enclosing - union) / enclosing
}

pub fn center_distance_bev(a: &BevBox3D, b: &BevBox3D) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Which overlap measure a loss term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    #[default]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &BevBox3D, b: &BevBox3D) -> f64 {
        match self {
            IouKind::Bev => iou_bev(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}
