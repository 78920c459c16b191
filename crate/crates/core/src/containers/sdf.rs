//! Signed-distance colliders for container walls.
//!
//! The solid wall is the shell between the interior and the interior dilated
//! by the wall thickness, with a hole punched through the neck end cap:
//!
//! `sdf = max(interior - wall, -min(interior, hole))`
//!
//! Positive values are free space (inside the container or outside it),
//! negative values lie inside the wall material. Every term is an exact
//! Euclidean distance and min/max preserve the 1-Lipschitz bound.

use super::{ContainerSpec, Shape, MM};
use nalgebra::{Isometry3, Point3, Unit, Vector3};

/// Wall thickness used when none is configured.
pub const DEFAULT_WALL_THICKNESS: f64 = 2.0 * MM;

/// Fillet radius where the neck joins the body.
const SEAM_BLEND: f64 = 6.0 * MM;
/// The hole keeps going this far past the outer cap surface so the free
/// channel through the opening is not closed off by the hole's own end.
const HOLE_REACH: f64 = 50.0 * MM;

const PROJECTION_ITERATIONS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Cuboid {
        min: Point3<f64>,
        max: Point3<f64>,
    },
    /// Capped cylinder from `base` along `axis` for `length`.
    Cylinder {
        base: Point3<f64>,
        axis: Unit<Vector3<f64>>,
        length: f64,
        radius: f64,
    },
}

impl Primitive {
    /// Exact signed distance, negative inside.
    #[inline]
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        match self {
            Primitive::Cuboid { min, max } => {
                let centre = nalgebra::center(min, max);
                let half = (max - min) * 0.5;
                let q = (p - centre).abs() - half;
                let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                outside + q.x.max(q.y).max(q.z).min(0.0)
            }
            Primitive::Cylinder {
                base,
                axis,
                length,
                radius,
            } => {
                let rel = p - base;
                let along = rel.dot(axis);
                let radial = (rel - axis.into_inner() * along).norm() - radius;
                let axial = (along - 0.5 * length).abs() - 0.5 * length;
                let outside = (radial.max(0.0).powi(2) + axial.max(0.0).powi(2)).sqrt();
                outside + radial.max(axial).min(0.0)
            }
        }
    }

    /// Distance and its gradient. The gradient is a unit vector except on
    /// the medial set, where one of the one-sided gradients is returned.
    #[inline]
    pub fn distance_gradient(&self, p: &Point3<f64>) -> (f64, Vector3<f64>) {
        match self {
            Primitive::Cuboid { min, max } => {
                let centre = nalgebra::center(min, max);
                let half = (max - min) * 0.5;
                let rel = p - centre;
                let sign = rel.map(|c| if c < 0.0 { -1.0 } else { 1.0 });
                let q = rel.abs() - half;
                let o = q.map(|c| c.max(0.0));
                let outside = o.norm();
                if outside > 0.0 {
                    (outside, o.component_mul(&sign) / outside)
                } else {
                    let k = q.imax();
                    let mut g = Vector3::zeros();
                    g[k] = sign[k];
                    (q[k], g)
                }
            }
            Primitive::Cylinder {
                base,
                axis,
                length,
                radius,
            } => {
                let a = axis.into_inner();
                let rel = p - base;
                let along = rel.dot(&a);
                let spoke = rel - a * along;
                let spoke_len = spoke.norm();
                let u = if spoke_len > 1e-15 {
                    spoke / spoke_len
                } else {
                    a.cross(&Vector3::z())
                        .try_normalize(1e-12)
                        .unwrap_or_else(Vector3::y)
                };
                let w = if along < 0.5 * length { -a } else { a };
                let radial = spoke_len - radius;
                let axial = (along - 0.5 * length).abs() - 0.5 * length;
                if radial > 0.0 || axial > 0.0 {
                    let (r, x) = (radial.max(0.0), axial.max(0.0));
                    let d = (r * r + x * x).sqrt();
                    (d, (u * r + w * x) / d)
                } else if radial > axial {
                    (radial, u)
                } else {
                    (axial, w)
                }
            }
        }
    }

    /// Axis-aligned bounding box.
    fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        match self {
            Primitive::Cuboid { min, max } => (*min, *max),
            Primitive::Cylinder {
                base,
                axis,
                length,
                radius,
            } => {
                let tip = base + axis.into_inner() * *length;
                let reach = axis.map(|a| radius * (1.0 - a * a).max(0.0).sqrt());
                (base.inf(&tip) - reach, base.sup(&tip) + reach)
            }
        }
    }
}

/// Rigidly placed wall geometry of one container.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfCollider {
    body: Primitive,
    /// Half-spaces `n . q <= offset` intersected with the body (flask
    /// shoulders).
    cuts: Vec<(Vector3<f64>, f64)>,
    neck: Primitive,
    hole: Primitive,
    wall: f64,
    pose: Isometry3<f64>,
    inverse: Isometry3<f64>,
    bound_min: Point3<f64>,
    bound_max: Point3<f64>,
}

impl SdfCollider {
    /// Builds the collider for a (validated) spec.
    pub fn new(spec: &ContainerSpec, wall: f64, pose: Isometry3<f64>) -> Self {
        let shape = &spec.shape;
        let axis = shape.neck_axis();
        let neck_radius = shape.neck_radius();
        let mut cuts = Vec::new();
        if let Shape::Flask {
            depth,
            shoulder,
            neck_radius,
            ..
        } = *shape
        {
            if shoulder > 0.0 {
                // planes through (0, z = ±neck_radius) and (shoulder, z = ±depth/2)
                let spread = 0.5 * depth - neck_radius;
                for side in [1.0, -1.0] {
                    let n = Vector3::new(-spread, 0.0, side * shoulder).normalize();
                    cuts.push((n, n.z * side * neck_radius));
                }
            }
        }
        let body = match *shape {
            Shape::Flask {
                width,
                depth,
                height,
                ..
            } => Primitive::Cuboid {
                min: Point3::new(0.0, 0.0, -0.5 * depth),
                max: Point3::new(width, height, 0.5 * depth),
            },
            Shape::Bottle { radius, height, .. } => Primitive::Cylinder {
                base: Point3::origin(),
                axis: Vector3::x_axis(),
                length: height,
                radius,
            },
        };
        // The neck (and the hole) start well inside the body. A union of
        // distance fields underestimates depth near a seam, so the seams are
        // kept at least one neck radius away from the flow path.
        let sink = match *shape {
            Shape::Flask { neck_tilt, .. } => neck_radius * (neck_tilt.tan() + 1.0),
            Shape::Bottle { .. } => neck_radius,
        };
        let neck = Primitive::Cylinder {
            base: shape.neck_base() - axis.into_inner() * sink,
            axis,
            length: shape.neck_length() + sink,
            radius: neck_radius,
        };
        let hole = Primitive::Cylinder {
            base: shape.neck_base() - axis.into_inner() * sink,
            axis,
            length: sink + shape.neck_length() + wall + HOLE_REACH,
            radius: spec.opening_radius,
        };
        let (b0, b1) = body.bounds();
        let (n0, n1) = neck.bounds();
        let (bound_min, bound_max) = (b0.inf(&n0), b1.sup(&n1));
        Self {
            body,
            cuts,
            neck,
            hole,
            wall,
            pose,
            inverse: pose.inverse(),
            bound_min,
            bound_max,
        }
    }

    pub fn pose(&self) -> &Isometry3<f64> {
        &self.pose
    }

    pub fn wall_thickness(&self) -> f64 {
        self.wall
    }

    /// Same geometry at another pose.
    pub fn with_pose(&self, pose: Isometry3<f64>) -> Self {
        Self {
            pose,
            inverse: pose.inverse(),
            ..self.clone()
        }
    }

    pub fn set_pose(&mut self, pose: Isometry3<f64>) {
        self.pose = pose;
        self.inverse = pose.inverse();
    }

    #[inline]
    fn body_local(&self, q: &Point3<f64>) -> f64 {
        self.cuts
            .iter()
            .fold(self.body.distance(q), |d, (n, offset)| {
                d.max(n.dot(&q.coords) - offset)
            })
    }

    fn body_local_gradient(&self, q: &Point3<f64>) -> (f64, Vector3<f64>) {
        self.cuts
            .iter()
            .fold(self.body.distance_gradient(q), |(d, g), (n, offset)| {
                let c = n.dot(&q.coords) - offset;
                if c > d {
                    (c, *n)
                } else {
                    (d, g)
                }
            })
    }

    #[inline]
    fn interior_local(&self, q: &Point3<f64>) -> f64 {
        smooth_min(self.body_local(q), self.neck.distance(q), SEAM_BLEND)
    }

    #[inline]
    fn wall_local(&self, q: &Point3<f64>) -> f64 {
        let interior = self.interior_local(q);
        let free = interior.min(self.hole.distance(q));
        (interior - self.wall).max(-free)
    }

    /// `wall_local` with its gradient, following the same min/max branches.
    fn wall_local_gradient(&self, q: &Point3<f64>) -> (f64, Vector3<f64>) {
        let (a, ga) = self.body_local_gradient(q);
        let (b, gb) = self.neck.distance_gradient(q);
        let (interior, gi) = smooth_min_gradient(a, ga, b, gb, SEAM_BLEND);
        let (hole, gh) = self.hole.distance_gradient(q);
        let (free, gf) = if interior <= hole {
            (interior, gi)
        } else {
            (hole, gh)
        };
        if interior - self.wall >= -free {
            (interior - self.wall, gi)
        } else {
            (-free, -gf)
        }
    }

    /// Signed distance to the wall material at a world point.
    #[inline]
    pub fn sdf(&self, p: &Point3<f64>) -> f64 {
        self.wall_local(&(self.inverse * p))
    }

    /// Signed distance to the interior cavity, negative inside it.
    #[inline]
    pub fn interior_sdf(&self, p: &Point3<f64>) -> f64 {
        self.interior_local(&(self.inverse * p))
    }

    #[inline]
    pub fn contains_interior(&self, p: &Point3<f64>) -> bool {
        self.interior_sdf(p) < 0.0
    }

    /// Cheap test: `false` guarantees `sdf(p) > margin`.
    #[inline]
    pub fn may_touch(&self, p: &Point3<f64>, margin: f64) -> bool {
        let q = self.inverse * p;
        let reach = self.wall + margin;
        (0..3).all(|k| q[k] >= self.bound_min[k] - reach && q[k] <= self.bound_max[k] + reach)
    }

    /// Unit gradient of the wall distance.
    pub fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.value_and_normal(p).1
    }

    fn value_and_normal(&self, p: &Point3<f64>) -> (f64, Vector3<f64>) {
        let (d, g) = self.wall_local_gradient(&(self.inverse * p));
        let local = g.try_normalize(1e-12).unwrap_or_else(Vector3::y);
        (d, self.pose.rotation * local)
    }

    /// Moves `p` out of the wall until `sdf(p) >= margin`. Returns the
    /// outward normal at the contact when a correction happened.
    pub fn project(&self, p: &mut Point3<f64>, margin: f64) -> Option<Vector3<f64>> {
        if self.sdf(p) >= margin {
            return None;
        }
        let mut normal = None;
        for _ in 0..PROJECTION_ITERATIONS {
            let (d, n) = self.value_and_normal(p);
            if d >= margin {
                break;
            }
            // small overshoot so the loop terminates on the free side
            *p += n * (margin - d + 1e-9);
            normal = Some(n);
        }
        normal
    }
}

/// Polynomial smooth minimum. Its gradient is a convex combination of the
/// inputs' gradients, so it stays 1-Lipschitz; it rounds the seam between
/// body and neck, where a plain `min` would understate the free depth.
#[inline]
fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b + (a - b) * h - k * h * (1.0 - h)
}

#[inline]
fn smooth_min_gradient(
    a: f64,
    ga: Vector3<f64>,
    b: f64,
    gb: Vector3<f64>,
    k: f64,
) -> (f64, Vector3<f64>) {
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    (b + (a - b) * h - k * h * (1.0 - h), ga * h + gb * (1.0 - h))
}
