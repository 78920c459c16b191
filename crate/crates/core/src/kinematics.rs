//! Fixed-exit-point pouring motion.
//!
//! The pouring container rotates about the lowest point of its opening rim
//! (the centre of rotation). Everything happens in a vertical pour plane
//! with in-plane coordinates `x` (horizontal) and `y` (up); the out-of-plane
//! coordinate of the grip stays constant. Positive pour angles rotate
//! counter-clockwise about the plane normal, lowering the neck.
//!
//! Naming: `arm_length` is the grip-to-pivot distance, `start_angle` the
//! angle of the pivot as seen from the grip at the start pose (measured from
//! the `-x` direction towards `+y`), `grip_angle` the same angle in the
//! untilted reference pose, and `pre_tilt` the rotation applied to the
//! reference pose so the opening matches the receiving container.

use crate::containers::{ContainerSpec, MM};
use nalgebra::{
    Isometry3, Point3, Rotation3, Translation3, Unit, UnitQuaternion, Vector2, Vector3,
};
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{self, Write};

/// Default angular velocity, 30 deg/s.
pub const DEFAULT_OMEGA: f64 = 30.0 * PI / 180.0;
/// Default trajectory sample spacing.
pub const DEFAULT_SAMPLE_DT: f64 = 0.010;
/// Flask-to-flask opening alignment angle.
pub const DEFAULT_PRE_TILT: f64 = 14.5 * PI / 180.0;

const MIN_ARM_LENGTH: f64 = 1.0 * MM;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KinematicsError {
    #[error("out of range: {0}")]
    Range(String),
    #[error("degenerate pour geometry: {0}")]
    Degenerate(String),
}

/// Vertical plane the pour happens in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PourPlane {
    pub origin: Point3<f64>,
    /// Horizontal unit normal; rotation during the pour is about this axis.
    pub normal: Unit<Vector3<f64>>,
}

impl Default for PourPlane {
    fn default() -> Self {
        Self {
            origin: Point3::origin(),
            normal: Vector3::z_axis(),
        }
    }
}

impl PourPlane {
    pub fn new(origin: Point3<f64>, normal: Vector3<f64>) -> Result<Self, KinematicsError> {
        let horizontal = Vector3::new(normal.x, 0.0, normal.z);
        if horizontal.norm() < 1e-9 || normal.y.abs() > 1e-9 * normal.norm() {
            return Err(KinematicsError::Range(
                "pour plane normal must be horizontal".into(),
            ));
        }
        Ok(Self {
            origin,
            normal: Unit::new_normalize(horizontal),
        })
    }

    /// In-plane horizontal axis.
    pub fn x_axis(&self) -> Vector3<f64> {
        Vector3::y().cross(&self.normal)
    }

    pub fn to_world(&self, xy: &Vector2<f64>, z: f64) -> Point3<f64> {
        self.origin + self.x_axis() * xy.x + Vector3::y() * xy.y + self.normal.into_inner() * z
    }

    /// `(in-plane coordinates, out-of-plane offset)` of a world point.
    pub fn to_plane(&self, p: &Point3<f64>) -> (Vector2<f64>, f64) {
        let rel = p - self.origin;
        (
            Vector2::new(rel.dot(&self.x_axis()), rel.y),
            rel.dot(&self.normal),
        )
    }

    /// World orientation of a body rotated by `angle` about the plane normal
    /// from the reference pose.
    pub fn orientation(&self, angle: f64) -> UnitQuaternion<f64> {
        let axes = Rotation3::from_basis_unchecked(&[
            self.x_axis(),
            Vector3::y(),
            self.normal.into_inner(),
        ]);
        UnitQuaternion::from_rotation_matrix(&axes)
            * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle)
    }
}

/// Planar pour geometry derived from a container and its start placement.
#[derive(Debug, Clone, PartialEq)]
pub struct PourFrame {
    /// Centre of rotation (the liquid exit point), in-plane, m.
    pub cor: Vector2<f64>,
    /// Grip position at the start pose, in-plane, m.
    pub tcp_start: Vector2<f64>,
    /// `|tcp_start - cor|`, m.
    pub arm_length: f64,
    /// Start angle between grip and pivot, rad.
    pub start_angle: f64,
    /// Grip-to-pivot angle in the untilted reference pose, rad. Equals
    /// `start_angle - pre_tilt`; carried for reporting only.
    pub grip_angle: f64,
    /// Pre-tilt matching the receiving container, rad.
    pub pre_tilt: f64,
    pub plane: PourPlane,
    /// Out-of-plane coordinate of the grip, m.
    pub z_const: f64,
    tcp_body: Point3<f64>,
    exit_body: Point3<f64>,
}

fn plane_angle(d: &Vector2<f64>) -> f64 {
    d.y.atan2(-d.x)
}

/// Places `spec` with its grip at `tcp_start_world`, tilted back by
/// `pre_tilt`, and derives the pour geometry.
pub fn pour_frame(
    spec: &ContainerSpec,
    tcp_start_world: Point3<f64>,
    plane: PourPlane,
    pre_tilt: f64,
) -> Result<PourFrame, KinematicsError> {
    if !(0.0..FRAC_PI_2).contains(&pre_tilt) {
        return Err(KinematicsError::Range(format!(
            "pre-tilt {:.3} deg outside [0, 90)",
            pre_tilt.to_degrees()
        )));
    }
    let arm_body = spec.exit_point - spec.tcp;
    let arm_length_body = Vector2::new(arm_body.x, arm_body.y).norm();
    if arm_length_body < MIN_ARM_LENGTH {
        return Err(KinematicsError::Degenerate(format!(
            "exit point of '{}' coincides with the grip",
            spec.id
        )));
    }
    let rotation = plane.orientation(-pre_tilt);
    let cor_world = tcp_start_world + rotation * arm_body;
    let (tcp_start, z_const) = plane.to_plane(&tcp_start_world);
    let (cor, _) = plane.to_plane(&cor_world);
    let d = cor - tcp_start;
    let arm_length = d.norm();
    let start_angle = plane_angle(&d);
    let grip_angle = plane_angle(&Vector2::new(arm_body.x, arm_body.y));
    if !(0.0..FRAC_PI_2).contains(&grip_angle) {
        return Err(KinematicsError::Range(format!(
            "grip of '{}' must sit below and behind the exit point (grip angle {:.2} deg)",
            spec.id,
            grip_angle.to_degrees()
        )));
    }
    if !(start_angle > 0.0 && start_angle < FRAC_PI_2) {
        return Err(KinematicsError::Range(format!(
            "start angle {:.2} deg outside (0, 90)",
            start_angle.to_degrees()
        )));
    }
    Ok(PourFrame {
        cor,
        tcp_start,
        arm_length,
        start_angle,
        grip_angle,
        pre_tilt,
        plane,
        z_const,
        tcp_body: spec.tcp,
        exit_body: spec.exit_point,
    })
}

impl PourFrame {
    /// Frame whose centre of rotation lands on `cor_world`.
    pub fn with_cor(
        spec: &ContainerSpec,
        cor_world: Point3<f64>,
        plane: PourPlane,
        pre_tilt: f64,
    ) -> Result<Self, KinematicsError> {
        let rotation = plane.orientation(-pre_tilt);
        let tcp = cor_world - rotation * (spec.exit_point - spec.tcp);
        pour_frame(spec, tcp, plane, pre_tilt)
    }

    /// Orientation offset of the start pose about the plane normal.
    pub fn base_angle(&self) -> f64 {
        -self.pre_tilt
    }

    /// Centre of rotation in world coordinates.
    pub fn cor_world(&self) -> Point3<f64> {
        let offset = (self.exit_body - self.tcp_body).z;
        self.plane.to_world(&self.cor, self.z_const + offset)
    }

    /// Body-to-world placement of the container at pour angle `theta`.
    pub fn container_pose(&self, theta: f64) -> Result<Isometry3<f64>, KinematicsError> {
        let pose = tcp_pose(self, theta)?;
        Ok(self.place(pose.position, pose.rotation))
    }

    fn place(&self, tcp_world: Point3<f64>, rotation: f64) -> Isometry3<f64> {
        let q = self.plane.orientation(rotation);
        let t = tcp_world - q * self.tcp_body;
        Isometry3::from_parts(Translation3::from(t), q)
    }

    /// Container placement without range checks; used by the simulator
    /// which evaluates the motion on its own clock.
    pub(crate) fn container_pose_unchecked(&self, theta: f64) -> Isometry3<f64> {
        let xy = closed_form(self, theta);
        let tcp = self.plane.to_world(&xy, self.z_const);
        self.place(tcp, self.base_angle() + theta)
    }

    /// World position of the exit point for a body placement.
    pub fn exit_point(&self, pose: &Isometry3<f64>) -> Point3<f64> {
        pose * self.exit_body
    }
}

fn check_theta(theta: f64) -> Result<(), KinematicsError> {
    if (0.0..=PI).contains(&theta) {
        Ok(())
    } else {
        Err(KinematicsError::Range(format!(
            "pour angle {:.4} rad outside [0, pi]",
            theta
        )))
    }
}

/// Printed form for `theta <= start_angle`.
pub fn rising_branch(frame: &PourFrame, theta: f64) -> Vector2<f64> {
    let (l, a, s) = (frame.arm_length, frame.start_angle, frame.tcp_start);
    Vector2::new(
        s.x - l * a.cos() + l * (a - theta).cos(),
        s.y + l * a.sin() - l * (a - theta).sin(),
    )
}

/// Printed form for `theta > start_angle`.
pub fn past_branch(frame: &PourFrame, theta: f64) -> Vector2<f64> {
    let (l, a, s) = (frame.arm_length, frame.start_angle, frame.tcp_start);
    Vector2::new(
        s.x - l * a.cos() + l * (theta - a).cos(),
        s.y + l * a.sin() + l * (theta - a).sin(),
    )
}

/// Both branches coincide; this is the circle about the pivot.
pub fn closed_form(frame: &PourFrame, theta: f64) -> Vector2<f64> {
    let a = theta - frame.start_angle;
    frame.cor + Vector2::new(a.cos(), a.sin()) * frame.arm_length
}

/// In-plane grip position at pour angle `theta`.
pub fn tcp_position(frame: &PourFrame, theta: f64) -> Result<Vector2<f64>, KinematicsError> {
    check_theta(theta)?;
    Ok(if theta <= frame.start_angle {
        rising_branch(frame, theta)
    } else {
        past_branch(frame, theta)
    })
}

/// Grip pose: world position plus rotation about the plane normal relative
/// to the reference pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcpPose {
    pub position: Point3<f64>,
    pub rotation: f64,
}

pub fn tcp_pose(frame: &PourFrame, theta: f64) -> Result<TcpPose, KinematicsError> {
    let xy = tcp_position(frame, theta)?;
    Ok(TcpPose {
        position: frame.plane.to_world(&xy, frame.z_const),
        rotation: frame.base_angle() + theta,
    })
}

/// Ramp up at constant angular velocity, hold, ramp back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleProfile {
    pub theta_stop: f64,
    pub t_stop: f64,
    pub omega: f64,
}

impl AngleProfile {
    pub fn new(theta_stop: f64, t_stop: f64, omega: f64) -> Result<Self, KinematicsError> {
        if !(0.0..=PI).contains(&theta_stop) {
            return Err(KinematicsError::Range(format!(
                "stop angle {:.3} deg outside [0, 180]",
                theta_stop.to_degrees()
            )));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(KinematicsError::Range(
                "angular velocity must be positive".into(),
            ));
        }
        if !(t_stop.is_finite() && t_stop >= 0.0) {
            return Err(KinematicsError::Range(
                "stop time must be non-negative".into(),
            ));
        }
        Ok(Self {
            theta_stop,
            t_stop,
            omega,
        })
    }

    pub fn ramp_duration(&self) -> f64 {
        self.theta_stop / self.omega
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.ramp_duration() + self.t_stop
    }

    /// Phase boundaries: end of ramp-up, end of hold, end of motion.
    pub fn boundaries(&self) -> [f64; 3] {
        let ramp = self.ramp_duration();
        [ramp, ramp + self.t_stop, self.duration()]
    }

    pub fn theta_at(&self, t: f64) -> f64 {
        let [up, hold, end] = self.boundaries();
        if t <= 0.0 {
            0.0
        } else if t < up {
            self.omega * t
        } else if t <= hold {
            self.theta_stop
        } else if t < end {
            (self.omega * (end - t)).min(self.theta_stop)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: Point3<f64>,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub profile: AngleProfile,
}

impl Trajectory {
    pub fn omega(&self) -> f64 {
        self.profile.omega
    }

    pub fn theta_stop(&self) -> f64 {
        self.profile.theta_stop
    }

    pub fn t_stop(&self) -> f64 {
        self.profile.t_stop
    }

    pub fn duration(&self) -> f64 {
        self.profile.duration()
    }

    /// `t_s,x_m,y_m,z_m,theta_deg`, six decimals.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t_s,x_m,y_m,z_m,theta_deg")?;
        for s in &self.samples {
            writeln!(
                out,
                "{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.t,
                s.position.x,
                s.position.y,
                s.position.z,
                s.theta.to_degrees()
            )?;
        }
        Ok(())
    }
}

pub fn generate_trajectory(
    frame: &PourFrame,
    theta_stop: f64,
    t_stop: f64,
    omega: f64,
    dt: f64,
) -> Result<Trajectory, KinematicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(KinematicsError::Range(
            "sample spacing must be positive".into(),
        ));
    }
    let profile = AngleProfile::new(theta_stop, t_stop, omega)?;
    let total = profile.duration();

    let mut times: Vec<f64> = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * dt;
        if t >= total {
            break;
        }
        times.push(t);
        k += 1;
    }
    if times.is_empty() {
        times.push(0.0);
    }
    times.extend(profile.boundaries());
    times.sort_by(f64::total_cmp);
    let eps = 1e-9 * dt;
    times.dedup_by(|b, a| (*b - *a).abs() <= eps);

    let samples = times
        .into_iter()
        .map(|t| {
            let theta = profile.theta_at(t);
            let pose = tcp_pose(frame, theta)?;
            Ok(TrajectorySample {
                t,
                position: pose.position,
                theta,
            })
        })
        .collect::<Result<Vec<_>, KinematicsError>>()?;
    Ok(Trajectory { samples, profile })
}
