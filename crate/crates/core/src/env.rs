//! Benchmark worlds with intentionally aliased landmarks, ground-truth
//! simulation, and enumeration of data-association realizations.
//!
//! Two scenario builders are provided. `floors` stacks geometrically
//! identical floors far apart vertically; landmarks at the same in-floor
//! position share a class across floors, and each floor additionally holds
//! one landmark whose class is unique to it. `random` scatters landmarks with
//! repeating classes and places one prior mode in front of every landmark of
//! a designated anchor class. Both are kidnapped-robot setups: the prior is a
//! multi-modal mixture over the possible start poses.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::models::{
    predict_measurement, propagate, wrap_angle, Action, ClassId, Measurement, MotionModel,
    ObservationModel, Pose2,
};
use crate::{real, Error, Real, Result};

/// Vertical spacing between floors; far larger than any sane sensing range so
/// cross-floor observations are impossible.
pub const FLOOR_SPACING: f64 = 128.0;

/// Class ids at or above this value are floor-unique labels.
pub const UNIQUE_CLASS_BASE: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LandmarkId(pub u32);

impl std::fmt::Display for LandmarkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "l{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark<T> {
    pub id: LandmarkId,
    pub class: ClassId,
    pub position: Vector2<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<T> {
    pub min: Vector2<T>,
    pub max: Vector2<T>,
}

#[derive(Debug, Clone)]
pub struct World<T> {
    landmarks: Vec<Landmark<T>>,
    pub bounds: Rect<T>,
}

impl<T: Real> World<T> {
    /// Landmarks must have unique ids; they are kept sorted by id.
    pub fn new(mut landmarks: Vec<Landmark<T>>, bounds: Rect<T>) -> Result<Self> {
        landmarks.sort_by_key(|l| l.id);
        if landmarks.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidConfig("duplicate landmark id".into()));
        }
        Ok(Self { landmarks, bounds })
    }

    pub fn landmarks(&self) -> &[Landmark<T>] {
        &self.landmarks
    }

    pub fn landmark(&self, id: LandmarkId) -> Option<&Landmark<T>> {
        self.landmarks
            .binary_search_by_key(&id, |l| l.id)
            .ok()
            .map(|i| &self.landmarks[i])
    }

    /// Serializes the world plus prior modes to a line-oriented text format
    /// (`bounds`, one `landmark` line per landmark, one `mode` line per prior
    /// mode). Floats print with shortest round-trip precision.
    pub fn to_text(&self, modes: &[Pose2<T>]) -> String {
        let mut out = String::from("# nd2a world\n");
        out.push_str(&format!(
            "bounds {} {} {} {}\n",
            self.bounds.min[0], self.bounds.min[1], self.bounds.max[0], self.bounds.max[1]
        ));
        for l in &self.landmarks {
            out.push_str(&format!(
                "landmark {} {} {} {}\n",
                l.id.0, l.class.0, l.position[0], l.position[1]
            ));
        }
        for m in modes {
            out.push_str(&format!("mode {} {} {}\n", m.x, m.y, m.theta));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<(Self, Vec<Pose2<T>>)> {
        let mut landmarks = Vec::new();
        let mut modes = Vec::new();
        let mut bounds = None;
        let bad = |line: &str| Error::InvalidConfig(format!("bad world line: {line}"));
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let kind = parts.next().ok_or_else(|| bad(line))?;
            let mut next_f = || -> Result<T> {
                let tok = parts.next().ok_or_else(|| bad(line))?;
                let v: f64 = tok.parse().map_err(|_| bad(line))?;
                Ok(real(v))
            };
            match kind {
                "bounds" => {
                    bounds = Some(Rect {
                        min: Vector2::new(next_f()?, next_f()?),
                        max: Vector2::new(next_f()?, next_f()?),
                    });
                }
                "landmark" => {
                    let id: u32 = parts
                        .next()
                        .ok_or_else(|| bad(line))?
                        .parse()
                        .map_err(|_| bad(line))?;
                    let class: u32 = parts
                        .next()
                        .ok_or_else(|| bad(line))?
                        .parse()
                        .map_err(|_| bad(line))?;
                    let x: f64 = parts
                        .next()
                        .ok_or_else(|| bad(line))?
                        .parse()
                        .map_err(|_| bad(line))?;
                    let y: f64 = parts
                        .next()
                        .ok_or_else(|| bad(line))?
                        .parse()
                        .map_err(|_| bad(line))?;
                    landmarks.push(Landmark {
                        id: LandmarkId(id),
                        class: ClassId(class),
                        position: Vector2::new(real(x), real(y)),
                    });
                }
                "mode" => {
                    let x = next_f()?;
                    let y = next_f()?;
                    let t = next_f()?;
                    modes.push(Pose2::new(x, y, t));
                }
                _ => return Err(bad(line)),
            }
        }
        let bounds = bounds.ok_or_else(|| Error::InvalidConfig("world missing bounds".into()))?;
        Ok((World::new(landmarks, bounds)?, modes))
    }
}

/// One assignment of every measurement in a step to a candidate landmark.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct AssociationRealization {
    pub assignments: Vec<LandmarkId>,
}

/// Builds `num_floors` stacked copies of one floor layout.
///
/// Shared landmarks sit in same-class pairs around corridor stations (an odd
/// count leaves the last station single), so aliasing exists both across
/// floors and, for two or more shared landmarks, within a floor. Pair members
/// sit at different corridor offsets, so a wrong in-pair association carries
/// a range mismatch and loses weight. Each floor also gets one landmark of a
/// class unique to it, placed ahead of the start pose so the agent has to
/// move to disambiguate. Station positions are jittered from `seed` in exact
/// eighths, keeping floor copies bit-identical under translation.
pub fn build_floors<T: Real>(
    num_floors: usize,
    landmarks_per_floor: usize,
    seed: u64,
) -> Result<(World<T>, Vec<Pose2<T>>)> {
    if num_floors < 2 {
        return Err(Error::InvalidConfig(
            "floors scenario needs num_floors >= 2".into(),
        ));
    }
    if landmarks_per_floor < 1 {
        return Err(Error::InvalidConfig(
            "landmarks_per_floor must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stations = landmarks_per_floor.div_ceil(2);
    let jitter: Vec<f64> = (0..stations)
        .map(|_| (rng.gen_range(-0.25..0.25f64) * 8.0).round() / 8.0)
        .collect();

    // One floor's layout in floor-relative coordinates.
    let mut template: Vec<(ClassId, f64, f64)> = Vec::new();
    for j in 0..landmarks_per_floor {
        let station = j / 2;
        let x = 2.0 * station as f64 + jitter[station];
        let y = if j % 2 == 0 { 1.0 } else { -1.25 };
        template.push((ClassId(station as u32), x, y));
    }
    let unique_x = 2.0 * stations as f64 + 1.5;

    let mut landmarks = Vec::new();
    let mut modes = Vec::new();
    let per_floor = landmarks_per_floor + 1;
    for f in 0..num_floors {
        let dy = FLOOR_SPACING * f as f64;
        for (j, (class, x, y)) in template.iter().enumerate() {
            landmarks.push(Landmark {
                id: LandmarkId((f * per_floor + j) as u32),
                class: *class,
                position: Vector2::new(real(*x), real(y + dy)),
            });
        }
        landmarks.push(Landmark {
            id: LandmarkId((f * per_floor + landmarks_per_floor) as u32),
            class: ClassId(UNIQUE_CLASS_BASE + f as u32),
            position: Vector2::new(real(unique_x), real(dy)),
        });
        modes.push(Pose2::new(T::zero(), real(dy), T::zero()));
    }

    let bounds = Rect {
        min: Vector2::new(real(-2.0), real(-2.0)),
        max: Vector2::new(
            real(unique_x + 2.0),
            real(FLOOR_SPACING * (num_floors - 1) as f64 + 2.0),
        ),
    };
    Ok((World::new(landmarks, bounds)?, modes))
}

/// Scatters `num_landmarks` uniformly over `[0, extent]^2` with classes
/// assigned round-robin, so every class repeats once
/// `num_landmarks > num_classes`. Class 0 is the anchor class; one prior mode
/// is placed one meter in front of (facing) each anchor landmark.
pub fn build_random<T: Real>(
    seed: u64,
    num_landmarks: usize,
    num_classes: usize,
    extent: f64,
) -> Result<(World<T>, Vec<Pose2<T>>)> {
    if num_classes == 0 || num_landmarks == 0 {
        return Err(Error::InvalidConfig(
            "landmark and class counts must be positive".into(),
        ));
    }
    if num_classes >= num_landmarks {
        return Err(Error::InvalidConfig(
            "random scenario needs num_classes < num_landmarks so a class repeats".into(),
        ));
    }
    if !(extent > 0.0) {
        return Err(Error::InvalidConfig("extent must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut landmarks = Vec::with_capacity(num_landmarks);
    for i in 0..num_landmarks {
        let x = rng.gen_range(0.0..extent);
        let y = rng.gen_range(0.0..extent);
        landmarks.push(Landmark {
            id: LandmarkId(i as u32),
            class: ClassId((i % num_classes) as u32),
            position: Vector2::new(real(x), real(y)),
        });
    }
    let modes = landmarks
        .iter()
        .filter(|l| l.class == ClassId(0))
        .map(|l| Pose2::new(l.position[0] - T::one(), l.position[1], T::zero()))
        .collect();
    let bounds = Rect {
        min: Vector2::new(real(-2.0), real(-2.0)),
        max: Vector2::new(real(extent + 2.0), real(extent + 2.0)),
    };
    Ok((World::new(landmarks, bounds)?, modes))
}

/// Landmarks within sensing range of `x`, sorted by id. Range gating only; no
/// occlusion or field-of-view cone.
pub fn visible_landmarks<'a, T: Real>(
    w: &'a World<T>,
    x: &Pose2<T>,
    obs: &ObservationModel<T>,
) -> Vec<&'a Landmark<T>> {
    w.landmarks()
        .iter()
        .filter(|l| (l.position - x.position()).norm() <= obs.max_sensing_range)
        .collect()
}

/// Enumerates every class-consistent assignment of the measured classes to
/// in-range landmarks: the per-measurement Cartesian product, in lexicographic
/// order by assigned landmark id (first measurement most significant).
///
/// A measured class with no in-range candidate yields zero realizations: the
/// observation is impossible for a hypothesis at `x` and its weight update
/// is zero.
pub fn enumerate_associations<T: Real>(
    w: &World<T>,
    x: &Pose2<T>,
    measured_classes: &[ClassId],
    obs: &ObservationModel<T>,
) -> Vec<AssociationRealization> {
    let visible = visible_landmarks(w, x, obs);
    let mut candidates: Vec<Vec<LandmarkId>> = Vec::with_capacity(measured_classes.len());
    for class in measured_classes {
        let c: Vec<LandmarkId> = visible
            .iter()
            .filter(|l| l.class == *class)
            .map(|l| l.id)
            .collect();
        if c.is_empty() {
            return Vec::new();
        }
        candidates.push(c);
    }
    let total: usize = candidates.iter().map(Vec::len).product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; candidates.len()];
    for _ in 0..total {
        out.push(AssociationRealization {
            assignments: idx.iter().zip(&candidates).map(|(&i, c)| c[i]).collect(),
        });
        for pos in (0..idx.len()).rev() {
            idx[pos] += 1;
            if idx[pos] < candidates[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
    out
}

/// Ground-truth rollout of one step: propagates the true pose with sampled
/// motion noise and emits one noisy range measurement per visible landmark,
/// tagged with the landmark's true class, in id order.
pub fn simulate_step<T: Real, R: Rng + ?Sized>(
    w: &World<T>,
    x_true: &Pose2<T>,
    u: &Action<T>,
    m: &MotionModel<T>,
    obs: &ObservationModel<T>,
    rng: &mut R,
) -> (Pose2<T>, Vec<Measurement<T>>) {
    let noise = m.sample_noise(rng);
    let next = propagate(x_true, u, &noise);
    let measurements = visible_landmarks(w, &next, obs)
        .into_iter()
        .map(|l| {
            let v = obs.range_noise_std * T::standard_normal(rng);
            let range = predict_measurement(&next, &l.position, v);
            Measurement::new(num_traits::Float::max(range, T::zero()), l.class)
        })
        .collect();
    (next, measurements)
}

/// True pose for a floors/random scenario mode, normalizing the angle.
pub fn mode_pose<T: Real>(modes: &[Pose2<T>], index: usize) -> Pose2<T> {
    let m = modes[index % modes.len()];
    Pose2::new(m.x, m.y, wrap_angle(m.theta))
}

/// Upper bound on how many landmarks of `class` can be inside one sensing
/// disk of radius `radius`, over all poses: any co-visible pair is within
/// `2 * radius` of each other, so the densest 2-radius neighborhood bounds
/// the count. Exact for isolated aliased pairs; never an undercount.
pub fn class_disk_bound<T: Real>(w: &World<T>, class: ClassId, radius: T) -> usize {
    let two_r = radius + radius;
    let of_class: Vec<&Landmark<T>> = w.landmarks().iter().filter(|l| l.class == class).collect();
    of_class
        .iter()
        .map(|a| {
            of_class
                .iter()
                .filter(|b| (a.position - b.position).norm() <= two_r)
                .count()
        })
        .max()
        .unwrap_or(0)
}
