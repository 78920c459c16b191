//! Parametric container geometry.
//!
//! Two container families are supported: a box-bodied culture flask with a
//! tilted cylindrical neck, and a cylindrical media bottle with a coaxial
//! neck. Both share one body-frame convention so that the pouring motion can
//! treat them uniformly:
//!
//! * `+y` is up when the container lies in its reference (horizontal) pose,
//! * the neck points towards `-x`,
//! * `z` spans the depth of the container and is normal to the pour plane.
//!
//! All stored lengths are metres and volumes cubic metres; the spec file
//! speaks millimetres and millilitres and is converted on load.

mod format;
mod sdf;

pub use format::{default_specs, load_container_specs, parse_container_specs, DEFAULT_SPECS_TEXT};
pub use sdf::{Primitive, SdfCollider, DEFAULT_WALL_THICKNESS};

use nalgebra::{Point3, Unit, Vector3};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;

/// Millimetres to metres.
pub const MM: f64 = 1e-3;
/// Millilitres to cubic metres.
pub const ML: f64 = 1e-6;

/// Relative tolerance for the exit point lying on the opening rim.
const RIM_TOLERANCE: f64 = 1e-6;
/// Allowed relative mismatch between declared capacity and analytic volume.
const CAPACITY_TOLERANCE: f64 = 0.10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpecError {
    #[error("container '{id}': {reason}")]
    Invalid { id: String, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate container id '{0}'")]
    DuplicateId(String),
    #[error("cannot read container specs from {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContainerKind {
    Flask,
    Bottle,
}

impl ContainerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContainerKind::Flask => "flask",
            ContainerKind::Bottle => "bottle",
        }
    }
}

/// Interior dimensions of a container, in metres / radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Box body `[0, width] x [0, height] x [-depth/2, depth/2]`; the neck
    /// leaves the `x = 0` face flush with the top edge, tilted upwards.
    /// Over the first `shoulder` of the width the side walls taper in to the
    /// neck radius at `x = 0` (zero keeps the plain box).
    Flask {
        width: f64,
        depth: f64,
        height: f64,
        shoulder: f64,
        neck_length: f64,
        neck_radius: f64,
        neck_tilt: f64,
    },
    /// Cylinder along `x` from `0` to `height`; neck is coaxial and extends
    /// to `x = -neck_length`.
    Bottle {
        radius: f64,
        height: f64,
        neck_radius: f64,
        neck_length: f64,
    },
}

impl Shape {
    pub fn kind(&self) -> ContainerKind {
        match self {
            Shape::Flask { .. } => ContainerKind::Flask,
            Shape::Bottle { .. } => ContainerKind::Bottle,
        }
    }

    pub fn neck_radius(&self) -> f64 {
        match *self {
            Shape::Flask { neck_radius, .. } | Shape::Bottle { neck_radius, .. } => neck_radius,
        }
    }

    pub fn neck_length(&self) -> f64 {
        match *self {
            Shape::Flask { neck_length, .. } | Shape::Bottle { neck_length, .. } => neck_length,
        }
    }

    /// Unit direction of the neck axis, pointing out of the container.
    pub fn neck_axis(&self) -> Unit<Vector3<f64>> {
        match *self {
            Shape::Flask { neck_tilt, .. } => {
                Unit::new_unchecked(Vector3::new(-neck_tilt.cos(), neck_tilt.sin(), 0.0))
            }
            Shape::Bottle { .. } => -Vector3::x_axis(),
        }
    }

    /// Centre of the neck where it leaves the body.
    pub fn neck_base(&self) -> Point3<f64> {
        match *self {
            Shape::Flask {
                height,
                neck_radius,
                neck_tilt,
                ..
            } => Point3::new(0.0, height - neck_radius / neck_tilt.cos(), 0.0),
            Shape::Bottle { .. } => Point3::origin(),
        }
    }

    /// Centre of the opening disk at the end of the neck.
    pub fn opening_centre(&self) -> Point3<f64> {
        self.neck_base() + self.neck_axis().into_inner() * self.neck_length()
    }

    /// In-plane direction perpendicular to the neck axis pointing downwards
    /// in the reference pose; the lowest rim point lies along it.
    pub fn rim_down(&self) -> Vector3<f64> {
        let a = self.neck_axis();
        let v = Vector3::new(a.y, -a.x, 0.0);
        if v.y > 0.0 {
            -v
        } else {
            v
        }
    }

    /// Smallest half extent of the body cross-section.
    fn min_half_extent(&self) -> f64 {
        match *self {
            Shape::Flask {
                width,
                depth,
                height,
                ..
            } => 0.5 * width.min(depth).min(height),
            Shape::Bottle { radius, .. } => radius,
        }
    }

    /// Axis-aligned box around the interior in the body frame.
    pub fn interior_bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let (mut lo, mut hi) = match *self {
            Shape::Flask {
                width,
                depth,
                height,
                ..
            } => (
                Point3::new(0.0, 0.0, -0.5 * depth),
                Point3::new(width, height, 0.5 * depth),
            ),
            Shape::Bottle { radius, height, .. } => (
                Point3::new(0.0, -radius, -radius),
                Point3::new(height, radius, radius),
            ),
        };
        let r = self.neck_radius();
        for end in [self.neck_base(), self.opening_centre()] {
            for k in 0..3 {
                lo[k] = lo[k].min(end[k] - r);
                hi[k] = hi[k].max(end[k] + r);
            }
        }
        (lo, hi)
    }

    /// Analytic interior volume in m³.
    pub fn interior_volume(&self) -> f64 {
        let neck = PI * self.neck_radius().powi(2) * self.neck_length();
        match *self {
            Shape::Flask {
                width,
                depth,
                height,
                shoulder,
                neck_radius,
                ..
            } => (width * depth - shoulder * (0.5 * depth - neck_radius)) * height + neck,
            Shape::Bottle { radius, height, .. } => PI * radius * radius * height + neck,
        }
    }
}

/// A pouring or receiving container.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerSpec {
    pub id: String,
    pub shape: Shape,
    /// Radius of the opening through the neck end cap (m).
    pub opening_radius: f64,
    /// Point on the opening rim where liquid leaves, body frame (m).
    pub exit_point: Point3<f64>,
    /// Grip point, body frame (m).
    pub tcp: Point3<f64>,
    /// Nominal capacity (m³).
    pub capacity: f64,
}

impl ContainerSpec {
    pub fn kind(&self) -> ContainerKind {
        self.shape.kind()
    }

    pub fn capacity_ml(&self) -> f64 {
        self.capacity / ML
    }

    fn invalid(&self, reason: impl Into<String>) -> SpecError {
        SpecError::Invalid {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks every geometric invariant; the error names the first one violated.
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.id.is_empty() {
            return Err(self.invalid("empty id"));
        }
        let positive = |name: &str, v: f64| -> Result<(), SpecError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(self.invalid(format!("{name} must be strictly positive (got {v})")))
            }
        };
        match self.shape {
            Shape::Flask {
                width,
                depth,
                height,
                shoulder,
                neck_length,
                neck_radius,
                neck_tilt,
            } => {
                positive("body_width", width)?;
                positive("body_depth", depth)?;
                positive("body_height", height)?;
                positive("neck_width", neck_radius)?;
                if !(neck_length.is_finite() && neck_length >= 0.0) {
                    return Err(self.invalid("neck_length must be non-negative"));
                }
                if !(0.0..PI / 2.0).contains(&neck_tilt) {
                    return Err(self.invalid("neck_tilt must lie in [0, 90) degrees"));
                }
                if 2.0 * neck_radius / neck_tilt.cos() > height || neck_radius > 0.5 * depth {
                    return Err(self.invalid("neck does not fit on the body face"));
                }
                if !(shoulder.is_finite() && (0.0..=width).contains(&shoulder)) {
                    return Err(self.invalid("body_shoulder must lie in [0, body_width]"));
                }
            }
            Shape::Bottle {
                radius,
                height,
                neck_radius,
                neck_length,
            } => {
                positive("body_radius", radius)?;
                positive("body_height", height)?;
                positive("neck_radius", neck_radius)?;
                if !(neck_length.is_finite() && neck_length >= 0.0) {
                    return Err(self.invalid("neck_length must be non-negative"));
                }
                if neck_radius > radius {
                    return Err(self.invalid("neck_radius exceeds body_radius"));
                }
            }
        }
        positive("opening_radius", self.opening_radius)?;
        positive("capacity", self.capacity)?;
        if self.opening_radius > self.shape.min_half_extent() {
            return Err(self.invalid("opening_radius exceeds smallest body half-extent"));
        }
        if self.opening_radius > self.shape.neck_radius() * (1.0 + 1e-12) {
            return Err(self.invalid("opening_radius exceeds neck radius"));
        }
        let volume = self.shape.interior_volume();
        if (volume - self.capacity).abs() > CAPACITY_TOLERANCE * self.capacity {
            return Err(self.invalid(format!(
                "capacity {:.1} mL disagrees with interior volume {:.1} mL by more than 10%",
                self.capacity / ML,
                volume / ML
            )));
        }
        let rel = self.exit_point - self.shape.opening_centre();
        let axial = rel.dot(&self.shape.neck_axis());
        let radial = (rel - self.shape.neck_axis().into_inner() * axial).norm();
        let tol = RIM_TOLERANCE * self.opening_radius;
        if axial.abs() > tol || (radial - self.opening_radius).abs() > tol {
            return Err(self.invalid("exit_point does not lie on the opening rim"));
        }
        Ok(())
    }

    /// Lowest rim point in the reference pose; used to author spec files.
    pub fn lowest_rim_point(&self) -> Point3<f64> {
        self.shape.opening_centre() + self.shape.rim_down() * self.opening_radius
    }

    /// Stable digest of the geometry, used to tag pour databases.
    pub fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update(self.id.as_bytes());
        hasher.update(self.kind().as_str().as_bytes());
        let mut nums: Vec<f64> = match self.shape {
            Shape::Flask {
                width,
                depth,
                height,
                shoulder,
                neck_length,
                neck_radius,
                neck_tilt,
            } => vec![
                width,
                depth,
                height,
                shoulder,
                neck_length,
                neck_radius,
                neck_tilt,
            ],
            Shape::Bottle {
                radius,
                height,
                neck_radius,
                neck_length,
            } => vec![radius, height, neck_radius, neck_length],
        };
        nums.push(self.opening_radius);
        nums.extend(self.exit_point.iter());
        nums.extend(self.tcp.iter());
        nums.push(self.capacity);
        for v in nums {
            hasher.update(v.to_le_bytes());
        }
    }
}

/// Analytic interior volume in millilitres after validating the spec.
pub fn interior_volume(spec: &ContainerSpec) -> Result<f64, SpecError> {
    spec.validate()?;
    Ok(spec.shape.interior_volume() / ML)
}

/// Short hex digest over a set of specs (sorted by id).
pub fn specs_hash<'a>(specs: impl IntoIterator<Item = &'a ContainerSpec>) -> String {
    let mut sorted: Vec<&ContainerSpec> = specs.into_iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut hasher = Sha256::new();
    for s in sorted {
        s.hash_into(&mut hasher);
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn bottle(radius_mm: f64, height_mm: f64, neck_len_mm: f64) -> ContainerSpec {
        let shape = Shape::Bottle {
            radius: radius_mm * MM,
            height: height_mm * MM,
            neck_radius: 0.5 * radius_mm * MM,
            neck_length: neck_len_mm * MM,
        };
        let mut spec = ContainerSpec {
            id: "test_bottle".into(),
            shape,
            opening_radius: 0.5 * radius_mm * MM,
            exit_point: Point3::origin(),
            tcp: Point3::new(0.5 * height_mm * MM, 0.0, 0.0),
            capacity: shape.interior_volume(),
        };
        spec.exit_point = spec.lowest_rim_point();
        spec
    }

    pub fn flask(w: f64, d: f64, h: f64, neck_len_mm: f64) -> ContainerSpec {
        let shape = Shape::Flask {
            width: w * MM,
            depth: d * MM,
            height: h * MM,
            shoulder: 0.0,
            neck_length: neck_len_mm * MM,
            neck_radius: 10.0 * MM,
            neck_tilt: 14.5f64.to_radians(),
        };
        let mut spec = ContainerSpec {
            id: "test_flask".into(),
            shape,
            opening_radius: 10.0 * MM,
            exit_point: Point3::origin(),
            tcp: Point3::new(0.5 * w * MM, 0.5 * h * MM, 0.0),
            capacity: shape.interior_volume(),
        };
        spec.exit_point = spec.lowest_rim_point();
        spec
    }
}
