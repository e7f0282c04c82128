//! Built-in task geometries: zig-zag, straight approach, three-contact slide.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{Vec3, Vec6};
use crate::sim::{Environment, Geometry, Shape};
use crate::trajectory::{ControlModeMask, Pose, Trajectory, TrajectoryBuilder};

/// Normal force requested while resting against a surface, N.
pub const PRESS_FORCE: f64 = 5.0;
pub const CONTACT_STIFFNESS: f64 = 3e4;
pub const CONTACT_DAMPING: f64 = 150.0;
pub const FRICTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Zigzag,
    StraightApproach,
    Sliding,
}

/// One expected contact and its learning parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    pub id: String,
    /// Trajectory segment ending in this contact.
    pub segment: usize,
    /// Prior mean of the contact position, m.
    pub mu0: [f64; 3],
    /// Desired impact force, N.
    #[serde(default = "default_desired_force")]
    pub desired_force: f64,
    /// Initial approach velocity, m/s.
    #[serde(default = "default_approach_velocity")]
    pub approach_velocity: f64,
    /// Learning rate, m/(s·N); zero keeps the velocity fixed.
    #[serde(default)]
    pub beta: f64,
}

fn default_desired_force() -> f64 {
    10.0
}

fn default_approach_velocity() -> f64 {
    0.1
}

/// Trajectory, world and contacts of a built-in task.
#[derive(Debug, Clone)]
pub struct BuiltIn {
    pub trajectory: Trajectory,
    pub environment: Environment,
    pub contacts: Vec<ContactSpec>,
}

fn surface(shape: Shape) -> Geometry {
    Geometry {
        shape,
        stiffness: CONTACT_STIFFNESS,
        damping: CONTACT_DAMPING,
        friction: FRICTION,
    }
}

fn table() -> Geometry {
    surface(Shape::HalfSpace {
        point: [0.0; 3],
        normal: [0.0, 0.0, 1.0],
    })
}

fn press(axes: &[(usize, f64)]) -> Result<(ControlModeMask, Vec6)> {
    let mut w = Vec6::zeros();
    let idx: Vec<usize> = axes.iter().map(|a| a.0).collect();
    for &(i, f) in axes {
        w[i] = f;
    }
    Ok((ControlModeMask::force_axes(&idx)?, w))
}

fn contact(id: &str, segment: usize, mu0: [f64; 3]) -> ContactSpec {
    ContactSpec {
        id: id.into(),
        segment,
        mu0,
        desired_force: default_desired_force(),
        approach_velocity: default_approach_velocity(),
        beta: 0.0,
    }
}

/// Two dips in the x–z plane, then a diagonal descent onto a table at z = 0.
pub fn zigzag(dt: f64) -> Result<BuiltIn> {
    let free = ControlModeMask::ALL_MOTION;
    let (pressed, w) = press(&[(2, -PRESS_FORCE)])?;
    let trajectory = TrajectoryBuilder::new(Pose::from_position(Vec3::new(0.0, 0.0, 0.25)), dt)
        .move_to(Vec3::new(0.1, 0.0, 0.10), 1.0, free, Vec6::zeros())
        .move_to(Vec3::new(0.2, 0.0, 0.25), 1.0, free, Vec6::zeros())
        .move_to(Vec3::new(0.3, 0.0, -0.03), 3.0, free, Vec6::zeros())
        .dwell(1.0, pressed, w)
        .build()?;
    Ok(BuiltIn {
        trajectory,
        environment: Environment::new(vec![table()])?,
        contacts: vec![contact("table", 2, [0.3, 0.0, 0.12])],
    })
}

/// Vertical descent onto a table at z = 0.
pub fn straight_approach(dt: f64) -> Result<BuiltIn> {
    let (pressed, w) = press(&[(2, -PRESS_FORCE)])?;
    let trajectory = TrajectoryBuilder::new(Pose::from_position(Vec3::new(0.0, 0.0, 0.15)), dt)
        .move_to(
            Vec3::new(0.0, 0.0, -0.03),
            2.0,
            ControlModeMask::ALL_MOTION,
            Vec6::zeros(),
        )
        .dwell(0.8, pressed, w)
        .build()?;
    Ok(BuiltIn {
        trajectory,
        environment: Environment::new(vec![table()])?,
        contacts: vec![contact("table", 0, [0.0, 0.0, 0.0])],
    })
}

/// Down onto the table, along it into a wall, then along the wall into an
/// obstacle, pressing on every surface already reached.
pub fn sliding(dt: f64) -> Result<BuiltIn> {
    let free = ControlModeMask::ALL_MOTION;
    let (on_table, w1) = press(&[(2, -PRESS_FORCE)])?;
    let (on_wall, w2) = press(&[(1, PRESS_FORCE), (2, -PRESS_FORCE)])?;
    let (on_all, w3) = press(&[(0, PRESS_FORCE), (1, PRESS_FORCE), (2, -PRESS_FORCE)])?;
    let trajectory = TrajectoryBuilder::new(Pose::from_position(Vec3::new(0.0, 0.0, 0.15)), dt)
        .move_to(Vec3::new(0.0, 0.0, -0.03), 1.2, free, Vec6::zeros())
        .dwell(1.2, on_table, w1)
        .move_to(Vec3::new(0.0, 0.23, -0.03), 1.2, on_table, w1)
        .dwell(1.2, on_wall, w2)
        .move_to(Vec3::new(0.23, 0.23, -0.03), 1.2, on_wall, w2)
        .dwell(1.2, on_all, w3)
        .build()?;
    let wall = surface(Shape::Aabb {
        min: [-0.5, 0.2, -0.5],
        max: [0.6, 0.6, 0.5],
    });
    let obstacle = surface(Shape::Aabb {
        min: [0.2, -0.3, -0.5],
        max: [0.6, 0.6, 0.5],
    });
    let beta = 0.003;
    let mut contacts = vec![
        contact("table", 0, [0.0, 0.0, 0.12]),
        contact("wall", 2, [0.0, 0.2 - 0.09, -0.03]),
        contact("obstacle", 4, [0.2 - 0.10, 0.23, -0.03]),
    ];
    for c in &mut contacts {
        c.beta = beta;
    }
    Ok(BuiltIn {
        trajectory,
        environment: Environment::new(vec![table(), wall, obstacle])?,
        contacts,
    })
}

pub fn build(generator: Generator, dt: f64) -> Result<BuiltIn> {
    match generator {
        Generator::Zigzag => zigzag(dt),
        Generator::StraightApproach => straight_approach(dt),
        Generator::Sliding => sliding(dt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_valid() {
        for g in [
            Generator::Zigzag,
            Generator::StraightApproach,
            Generator::Sliding,
        ] {
            let b = build(g, 1e-3).unwrap();
            b.trajectory
                .validate_jerk(crate::trajectory::DEFAULT_J_MAX)
                .unwrap();
            for c in &b.contacts {
                assert!(c.segment < b.trajectory.segments().len());
                assert!(b.trajectory.segment_length(c.segment) > 0.0);
            }
        }
    }

    #[test]
    fn contact_segments_end_inside_their_surfaces() {
        for g in [
            Generator::Zigzag,
            Generator::StraightApproach,
            Generator::Sliding,
        ] {
            let b = build(g, 1e-3).unwrap();
            for c in &b.contacts {
                let end = b.trajectory.segments()[c.segment].end;
                let p = b.trajectory.point(end).pose.position;
                let hit = b
                    .environment
                    .geometries
                    .iter()
                    .any(|geo| geo.shape.penetration(&p).is_some());
                assert!(hit, "{} does not end in contact", c.id);
            }
        }
    }
}
