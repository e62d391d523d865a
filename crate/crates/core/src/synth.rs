//! Synthetic ambiguous-action generator.
//!
//! Classes are parametric limb programs on an 11-joint stick figure.
//! Ambiguous pairs share a base trajectory and differ only by one joint's
//! oscillation amplitude (+35%) or by a phase offset of roughly a fifth of
//! a cycle, which keeps the classification task subtle by construction: the
//! defaults were calibrated so a small backbone lands well between chance
//! and ceiling after the standard 30-epoch recipe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{DatasetManifest, SkeletonSequence, COORD_CHANNELS};

/// Joint layout of the synthetic rig.
pub const JOINT_COUNT: usize = 11;
pub const ROOT: usize = 0;
pub const SPINE: usize = 1;
pub const HEAD: usize = 2;
pub const L_SHOULDER: usize = 3;
pub const L_ELBOW: usize = 4;
pub const L_WRIST: usize = 5;
pub const R_SHOULDER: usize = 6;
pub const R_ELBOW: usize = 7;
pub const R_WRIST: usize = 8;
pub const L_HIP: usize = 9;
pub const R_HIP: usize = 10;

pub fn rig_edges() -> Vec<(usize, usize)> {
    vec![
        (ROOT, SPINE),
        (SPINE, HEAD),
        (SPINE, L_SHOULDER),
        (L_SHOULDER, L_ELBOW),
        (L_ELBOW, L_WRIST),
        (SPINE, R_SHOULDER),
        (R_SHOULDER, R_ELBOW),
        (R_ELBOW, R_WRIST),
        (ROOT, L_HIP),
        (ROOT, R_HIP),
    ]
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("degenerate class pair: perturbation of class `{0}` is zero")]
    DegeneratePair(String),
}

/// Base arm programs the ambiguous pairs are built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseMotion {
    /// Raised forearm oscillating side to side.
    Wave,
    /// Whole arm raising and lowering once per cycle.
    RaiseLower,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    /// Base class of a pair.
    None,
    /// Scale the wrist oscillation amplitude (e.g. 1.15 for +15%).
    AmplitudeScale(f64),
    /// Shift the motion phase by a fraction of the cycle (e.g. 0.10).
    PhaseOffset(f64),
}

#[derive(Debug, Clone)]
pub struct ClassSpec {
    pub name: String,
    pub base: BaseMotion,
    pub perturbation: Perturbation,
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub classes: Vec<ClassSpec>,
    pub samples_per_class: usize,
    pub t_target: usize,
    /// Std-dev of Gaussian coordinate noise, meters.
    pub noise_sigma: f64,
    /// Half-width of the uniform time-warp factor interval around 1.
    pub time_warp: f64,
}

impl SynthSpec {
    /// Two ambiguous pairs: wave vs wide wave (+35% wrist amplitude) and
    /// raise vs late raise (0.22-cycle phase offset).
    pub fn default_four_class(samples_per_class: usize, t_target: usize) -> Self {
        SynthSpec {
            classes: vec![
                ClassSpec {
                    name: "wave".into(),
                    base: BaseMotion::Wave,
                    perturbation: Perturbation::None,
                },
                ClassSpec {
                    name: "wave_wide".into(),
                    base: BaseMotion::Wave,
                    perturbation: Perturbation::AmplitudeScale(1.35),
                },
                ClassSpec {
                    name: "raise".into(),
                    base: BaseMotion::RaiseLower,
                    perturbation: Perturbation::None,
                },
                ClassSpec {
                    name: "raise_late".into(),
                    base: BaseMotion::RaiseLower,
                    perturbation: Perturbation::PhaseOffset(0.22),
                },
            ],
            samples_per_class: samples_per_class.max(1),
            t_target,
            noise_sigma: 0.03,
            time_warp: 0.04,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.classes.len() < 2 {
            return Err(SynthError::TooFewClasses(self.classes.len()));
        }
        for c in &self.classes {
            match c.perturbation {
                Perturbation::AmplitudeScale(f) if (f - 1.0).abs() < 1e-12 => {
                    return Err(SynthError::DegeneratePair(c.name.clone()));
                }
                Perturbation::PhaseOffset(p) if p.abs() < 1e-12 => {
                    return Err(SynthError::DegeneratePair(c.name.clone()));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Rest pose, meters, (x, y, z) per joint. y is up.
fn rest_pose() -> [[f64; 3]; JOINT_COUNT] {
    [
        [0.00, 0.00, 0.00],  // root
        [0.00, 0.28, 0.00],  // spine
        [0.00, 0.55, 0.00],  // head
        [-0.18, 0.45, 0.00], // l shoulder
        [-0.21, 0.19, 0.00], // l elbow
        [-0.22, -0.06, 0.00],// l wrist
        [0.18, 0.45, 0.00],  // r shoulder
        [0.21, 0.19, 0.00],  // r elbow
        [0.22, -0.06, 0.00], // r wrist
        [-0.10, -0.08, 0.00],// l hip
        [0.10, -0.08, 0.00], // r hip
    ]
}

const UPPER_ARM: f64 = 0.26;
const FOREARM: f64 = 0.25;
const TAU: f64 = std::f64::consts::TAU;

/// Right-arm pose at cycle time `t` in [0, 1+): returns (elbow, wrist)
/// positions relative to the right shoulder, in the x-y plane.
fn arm_pose(base: BaseMotion, t: f64, wrist_amp_scale: f64, phase: f64) -> ([f64; 3], [f64; 3]) {
    // Angles measured from straight-down, positive toward +x.
    let (upper_angle, fore_angle) = match base {
        BaseMotion::Wave => {
            // Upper arm held out, forearm up and swinging; three swings per
            // sequence so small time warps accumulate visible phase drift.
            let upper = 0.45 * std::f64::consts::PI;
            let swing = 0.55 * wrist_amp_scale * (TAU * (3.0 * t + phase)).sin();
            let fore = std::f64::consts::PI * 0.85 + swing;
            (upper, fore)
        }
        BaseMotion::RaiseLower => {
            // One raise-lower cycle; wrist leads slightly.
            let lift = 0.5 - 0.5 * (TAU * (t + phase)).cos();
            let upper = lift * 0.80 * std::f64::consts::PI;
            let fore = upper + 0.25 * wrist_amp_scale * (TAU * (2.0 * t + phase)).sin();
            (upper, fore)
        }
    };
    let elbow = [UPPER_ARM * upper_angle.sin(), -UPPER_ARM * upper_angle.cos(), 0.0];
    let wrist = [
        elbow[0] + FOREARM * fore_angle.sin(),
        elbow[1] - FOREARM * fore_angle.cos(),
        0.0,
    ];
    (elbow, wrist)
}

fn sample_gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller, consuming two uniforms deterministically.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

fn generate_sample(class: &ClassSpec, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (amp_scale, phase) = match class.perturbation {
        Perturbation::None => (1.0, 0.0),
        Perturbation::AmplitudeScale(f) => (f, 0.0),
        Perturbation::PhaseOffset(p) => (1.0, p),
    };
    let warp = 1.0 + rng.gen_range(-spec.time_warp..=spec.time_warp);
    let t_n = spec.t_target;
    let pose = rest_pose();
    let mut coords = vec![0.0f32; COORD_CHANNELS * t_n * JOINT_COUNT];
    for ti in 0..t_n {
        let t = warp * ti as f64 / t_n as f64;
        // Gentle whole-body sway so root centering has work to do.
        let sway = [0.02 * (TAU * t).sin(), 0.005 * (TAU * 2.0 * t).cos(), 0.0];
        let (elbow, wrist) = arm_pose(class.base, t, amp_scale, phase);
        for j in 0..JOINT_COUNT {
            let mut p = pose[j];
            if j == R_ELBOW {
                p = [pose[R_SHOULDER][0] + elbow[0], pose[R_SHOULDER][1] + elbow[1], elbow[2]];
            } else if j == R_WRIST {
                p = [pose[R_SHOULDER][0] + wrist[0], pose[R_SHOULDER][1] + wrist[1], wrist[2]];
            }
            for c in 0..COORD_CHANNELS {
                let noise = spec.noise_sigma * sample_gaussian(rng);
                let val = p[c] + sway[c] + noise;
                coords[(c * t_n + ti) * JOINT_COUNT + j] = val as f32;
            }
        }
    }
    coords
}

/// Deterministic synthetic dataset: same spec and seed yield bitwise-equal
/// output. Classes are balanced and emitted class-major.
pub fn synth_generate(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(DatasetManifest, Vec<SkeletonSequence>), SynthError> {
    spec.validate()?;
    let mut sequences = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);
    for (label, class) in spec.classes.iter().enumerate() {
        for k in 0..spec.samples_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((label * spec.samples_per_class + k) as u64 + 1);
            let coords = generate_sample(class, spec, &mut rng);
            sequences.push(SkeletonSequence::new(
                coords,
                spec.t_target,
                JOINT_COUNT,
                label as u32,
                format!("synth-{seed}-{}-{k}", class.name),
            ));
        }
    }
    let manifest = DatasetManifest {
        format_version: 1,
        class_names: spec.classes.iter().map(|c| c.name.clone()).collect(),
        joints: JOINT_COUNT,
        t_target: spec.t_target,
        edges: rig_edges().iter().map(|&(a, b)| [a, b]).collect(),
        count: sequences.len(),
    };
    Ok((manifest, sequences))
}
