//! Procedural multi-person scenes: walkers, followers, approaching and
//! circling pairs, with sinusoidal limb animation on a 15-joint skeleton.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Scene, Sequence, Unit};
use super::skeleton::Skeleton;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    /// Everyone stands still.
    Static,
    /// Independent walkers heading away from each other.
    Walk,
    /// Pairs where one person trails the other along the same path.
    Follow,
    /// Pairs walking face to face until they meet.
    Approach,
    /// Pairs circling a shared centre while facing each other.
    Circle,
    /// One follow pair; everyone else walks independently.
    FollowWalker,
    /// Pairs with a random interaction each; an odd person out walks.
    Mixed,
}

impl Behavior {
    pub const ALL: [Behavior; 7] = [
        Behavior::Static,
        Behavior::Walk,
        Behavior::Follow,
        Behavior::Approach,
        Behavior::Circle,
        Behavior::FollowWalker,
        Behavior::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Behavior::Static => "static",
            Behavior::Walk => "walk",
            Behavior::Follow => "follow",
            Behavior::Approach => "approach",
            Behavior::Circle => "circle",
            Behavior::FollowWalker => "follow-walker",
            Behavior::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Behavior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Behavior::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::validation("behavior", format!("unknown behavior `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub persons: usize,
    pub frames: usize,
    pub fps: f64,
    pub behavior: Behavior,
    /// Walking speed range in m/s.
    pub speed: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            persons: 3,
            frames: 76,
            fps: 25.0,
            behavior: Behavior::Mixed,
            speed: (0.8, 1.4),
        }
    }
}

pub const MIN_SYNTH_FRAMES: usize = 16;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.persons == 0 {
            return Err(Error::validation("persons", "must be at least 1"));
        }
        if self.frames < MIN_SYNTH_FRAMES {
            return Err(Error::validation(
                "frames",
                format!("must be at least {MIN_SYNTH_FRAMES}, got {}", self.frames),
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::validation("fps", "must be positive"));
        }
        let (lo, hi) = self.speed;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::validation("speed", format!("invalid range ({lo}, {hi})")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Group {
    Solo,
    Still,
    Follow,
    Approach,
    Circle,
}

impl Group {
    fn size(self) -> usize {
        match self {
            Group::Solo | Group::Still => 1,
            _ => 2,
        }
    }
}

/// Ground-plane root path plus heading and gait speed per frame.
struct Track {
    xy: Vec<[f64; 2]>,
    heading: Vec<f64>,
    speed: Vec<f64>,
}

/// Generates a scene; identical `(cfg, seed)` give bit-identical output.
pub fn synth_scene(cfg: &SynthConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = plan_groups(cfg, &mut rng);
    let dt = 1.0 / cfg.fps;
    let n = cfg.frames;

    // Groups sit on a ring, far enough apart that independent groups never meet.
    let radius = (3.0 * groups.len() as f64).max(4.0);
    let ring_phase = rng.random_range(0.0..TAU);
    let mut tracks = Vec::with_capacity(cfg.persons);
    for (g, group) in groups.iter().enumerate() {
        let angle = ring_phase + TAU * g as f64 / groups.len() as f64;
        let anchor = if groups.len() == 1 {
            [0.0, 0.0]
        } else {
            [radius * angle.cos(), radius * angle.sin()]
        };
        let outward = angle + rng.random_range(-0.4..0.4);
        let v0 = rng.random_range(cfg.speed.0..=cfg.speed.1);
        match group {
            Group::Still => {
                let h = rng.random_range(0.0..TAU);
                tracks.push(Track {
                    xy: vec![anchor; n],
                    heading: vec![h; n],
                    speed: vec![0.0; n],
                });
            }
            Group::Solo => tracks.push(wander(&mut rng, anchor, outward, v0, 0.2..0.6, n, dt)),
            Group::Follow => {
                let lag = rng.random_range(10..=20);
                let lead = wander(&mut rng, anchor, outward, v0, 0.5..1.0, n + lag, dt);
                tracks.push(Track {
                    xy: lead.xy[lag..].to_vec(),
                    heading: lead.heading[lag..].to_vec(),
                    speed: lead.speed[lag..].to_vec(),
                });
                tracks.push(Track {
                    xy: lead.xy[..n].to_vec(),
                    heading: lead.heading[..n].to_vec(),
                    speed: lead.speed[..n].to_vec(),
                });
            }
            Group::Approach => {
                let [a, b] = approach(&mut rng, anchor, v0, n, dt);
                tracks.push(a);
                tracks.push(b);
            }
            Group::Circle => {
                let [a, b] = circle(&mut rng, anchor, v0, n, dt);
                tracks.push(a);
                tracks.push(b);
            }
        }
    }

    let skeleton = Skeleton::default_15();
    let persons = tracks
        .iter()
        .map(|track| animate(&mut rng, track, dt, skeleton.num_joints()))
        .collect();
    Scene::new(cfg.fps, Unit::Meters, skeleton, persons)
}

fn plan_groups(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Group> {
    let p = cfg.persons;
    let pairs_then_solo = |kind: &mut dyn FnMut() -> Group| {
        let mut g: Vec<Group> = (0..p / 2).map(|_| kind()).collect();
        if p % 2 == 1 {
            g.push(Group::Solo);
        }
        g
    };
    let groups = match cfg.behavior {
        Behavior::Static => vec![Group::Still; p],
        Behavior::Walk => vec![Group::Solo; p],
        Behavior::Follow => pairs_then_solo(&mut || Group::Follow),
        Behavior::Approach => pairs_then_solo(&mut || Group::Approach),
        Behavior::Circle => pairs_then_solo(&mut || Group::Circle),
        Behavior::FollowWalker => {
            if p < 2 {
                vec![Group::Solo]
            } else {
                std::iter::once(Group::Follow)
                    .chain(std::iter::repeat_n(Group::Solo, p - 2))
                    .collect()
            }
        }
        Behavior::Mixed => pairs_then_solo(&mut || match rng.random_range(0..3) {
            0 => Group::Follow,
            1 => Group::Approach,
            _ => Group::Circle,
        }),
    };
    debug_assert_eq!(groups.iter().map(|g| g.size()).sum::<usize>(), p);
    groups
}

fn wander(
    rng: &mut ChaCha8Rng,
    start: [f64; 2],
    heading0: f64,
    v0: f64,
    sway: std::ops::Range<f64>,
    n: usize,
    dt: f64,
) -> Track {
    let amp = rng.random_range(sway);
    let omega = rng.random_range(0.4..1.0);
    let phase = rng.random_range(0.0..TAU);
    let v_omega = rng.random_range(0.3..0.8);
    let v_phase = rng.random_range(0.0..TAU);
    let mut xy = Vec::with_capacity(n);
    let mut heading = Vec::with_capacity(n);
    let mut speed = Vec::with_capacity(n);
    let mut pos = start;
    for f in 0..n {
        let t = f as f64 * dt;
        let h = heading0 + amp * ((omega * t + phase).sin() - phase.sin());
        let v = v0 * (1.0 + 0.15 * (v_omega * t + v_phase).sin());
        xy.push(pos);
        heading.push(h);
        speed.push(v);
        pos[0] += v * h.cos() * dt;
        pos[1] += v * h.sin() * dt;
    }
    Track { xy, heading, speed }
}

fn approach(rng: &mut ChaCha8Rng, centre: [f64; 2], v0: f64, n: usize, dt: f64) -> [Track; 2] {
    let axis = rng.random_range(0.0..TAU);
    let gap0 = rng.random_range(4.0..6.0);
    let stop_gap: f64 = 1.0;
    let (c, s) = (axis.cos(), axis.sin());
    let mut half = gap0 / 2.0;
    let mut out = [
        Track {
            xy: vec![],
            heading: vec![],
            speed: vec![],
        },
        Track {
            xy: vec![],
            heading: vec![],
            speed: vec![],
        },
    ];
    for _ in 0..n {
        let v = v0 * (2.0 * half - stop_gap).clamp(0.0_f64, 1.0);
        for (k, track) in out.iter_mut().enumerate() {
            let sign = if k == 0 { -1.0 } else { 1.0 };
            track
                .xy
                .push([centre[0] + sign * half * c, centre[1] + sign * half * s]);
            // Each faces the other.
            track.heading.push(if k == 0 { axis } else { axis + PI });
            track.speed.push(v);
        }
        half -= v * dt;
    }
    out
}

fn circle(rng: &mut ChaCha8Rng, centre: [f64; 2], v0: f64, n: usize, dt: f64) -> [Track; 2] {
    let r = rng.random_range(0.8..1.5);
    let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let omega = dir * (v0 / r).min(0.9);
    let theta0 = rng.random_range(0.0..TAU);
    let tangential = omega.abs() * r;
    let mut out = [
        Track {
            xy: vec![],
            heading: vec![],
            speed: vec![],
        },
        Track {
            xy: vec![],
            heading: vec![],
            speed: vec![],
        },
    ];
    for f in 0..n {
        let theta = theta0 + omega * f as f64 * dt;
        for (k, track) in out.iter_mut().enumerate() {
            let a = theta + k as f64 * PI;
            track.xy.push([centre[0] + r * a.cos(), centre[1] + r * a.sin()]);
            // Facing the centre, i.e. the partner.
            track.heading.push(a + PI);
            track.speed.push(tangential);
        }
    }
    out
}

const PELVIS_HEIGHT: f64 = 0.95;
const UPPER_ARM: f64 = 0.28;
const FOREARM: f64 = 0.25;
const THIGH: f64 = 0.42;
const SHIN: f64 = 0.42;

/// Poses a skeleton along a track. Joint order follows `Skeleton::default_15`.
fn animate(rng: &mut ChaCha8Rng, track: &Track, dt: f64, joints: usize) -> Sequence {
    let n = track.xy.len();
    let phase0 = rng.random_range(0.0..TAU);
    let arm_amp = rng.random_range(0.35..0.55);
    let leg_amp = rng.random_range(0.35..0.5);
    let cadence = rng.random_range(1.6..2.0); // strides per metre, in radians / 2π
    let mut seq = Sequence::zeros(n, joints);
    let mut phase = phase0;
    for f in 0..n {
        let v = track.speed[f];
        let gait = (v / 1.2).min(1.5);
        let h = track.heading[f];
        let (ch, sh) = (h.cos(), h.sin());
        let [x0, y0] = track.xy[f];
        // Body frame (forward, left, up) → world.
        let world = |fw: f64, left: f64, up: f64| [x0 + fw * ch - left * sh, y0 + fw * sh + left * ch, up];
        let bob = 0.02 * gait * (2.0 * phase).cos();
        let pelvis_z = PELVIS_HEIGHT + bob;
        seq.set_point(f, 0, world(0.0, 0.0, pelvis_z));
        seq.set_point(f, 1, world(0.02 * gait, 0.0, pelvis_z + 0.5));
        seq.set_point(f, 2, world(0.03 * gait, 0.0, pelvis_z + 0.7));
        for (side, sign) in [(0usize, 1.0), (1usize, -1.0)] {
            let base = 3 + side * 6;
            let swing = sign * phase.sin();
            // Arms swing opposite to the leg on the same side.
            let arm = arm_amp * gait * swing;
            let sh_pt = (0.0, sign * 0.18, pelvis_z + 0.47);
            let elbow = (
                sh_pt.0 + UPPER_ARM * arm.sin(),
                sh_pt.1,
                sh_pt.2 - UPPER_ARM * arm.cos(),
            );
            let fore = arm + 0.3 + 0.2 * gait * (phase + sign * 0.5).sin().abs();
            let wrist = (elbow.0 + FOREARM * fore.sin(), elbow.1, elbow.2 - FOREARM * fore.cos());
            let leg = -leg_amp * gait * swing;
            let hip = (0.0, sign * 0.1, pelvis_z - 0.05);
            let knee = (hip.0 + THIGH * leg.sin(), hip.1, hip.2 - THIGH * leg.cos());
            let bend = leg - 0.6 * gait * (0.5 * (1.0 - (phase + sign * 1.2).cos()));
            let ankle = (knee.0 + SHIN * bend.sin(), knee.1, knee.2 - SHIN * bend.cos());
            for (k, p) in [sh_pt, elbow, wrist, hip, knee, ankle].into_iter().enumerate() {
                seq.set_point(f, base + k, world(p.0, p.1, p.2));
            }
        }
        phase += TAU * cadence * v * dt / 2.0;
    }
    seq
}
