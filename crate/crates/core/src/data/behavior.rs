//! Scripted behavior controllers of graded expertise used to generate
//! client datasets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{wrap_angle, Action, Observation, WorldConfig};
use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorLevel {
    Expert,
    Medium,
    Novice,
    Random,
}

impl BehaviorLevel {
    pub const ALL: [BehaviorLevel; 4] =
        [BehaviorLevel::Expert, BehaviorLevel::Medium, BehaviorLevel::Novice, BehaviorLevel::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorLevel::Expert => "expert",
            BehaviorLevel::Medium => "medium",
            BehaviorLevel::Novice => "novice",
            BehaviorLevel::Random => "random",
        }
    }
}

impl fmt::Display for BehaviorLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehaviorLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BehaviorLevel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown behavior level `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub level: BehaviorLevel,
    /// Angular velocity per radian of heading error.
    pub turn_gain: f64,
    /// Angular velocity (rad/s) per unit of normalized obstacle proximity.
    pub avoid_gain: f64,
    /// Standard deviation of the angular-velocity noise as a fraction of `omega_max`.
    pub noise_scale: f64,
}

impl ScriptedPolicy {
    pub fn for_level(level: BehaviorLevel) -> Self {
        let (turn_gain, avoid_gain, noise_scale) = match level {
            BehaviorLevel::Expert => (2.0, 2.0, 0.0),
            BehaviorLevel::Medium => (2.0, 1.0, 0.3),
            BehaviorLevel::Novice => (2.0, 0.0, 0.0),
            BehaviorLevel::Random => (0.0, 0.0, 0.0),
        };
        Self { level, turn_gain, avoid_gain, noise_scale }
    }

    /// Action for the current observation; always within the world's bounds.
    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, world: &WorldConfig, rng: &mut R) -> Action {
        if self.level == BehaviorLevel::Random {
            return Action {
                v: rng.random_range(0.0..=world.v_max),
                omega: rng.random_range(-world.omega_max..=world.omega_max),
            };
        }
        let mut omega = self.turn_gain * obs.heading_error;
        if self.avoid_gain > 0.0 {
            omega += self.avoid_gain * avoidance_bias(&obs.lidar);
        }
        if self.noise_scale > 0.0 {
            let noise = Normal::new(0.0, self.noise_scale * world.omega_max).expect("positive std");
            omega += noise.sample(rng);
        }
        Action { v: world.v_max, omega }.clamped(world)
    }
}

/// Signed steering push away from the most threatening obstacle among the
/// forward half of the beams. A beam's threat is its normalized proximity
/// `1 - count / max` scaled by how directly it points ahead.
fn avoidance_bias(lidar: &[f64]) -> f64 {
    let n = lidar.len();
    let mut threat = 0.0;
    let mut threat_angle = 0.0;
    let (mut left_free, mut right_free) = (0.0, 0.0);
    for (k, &m) in lidar.iter().enumerate() {
        let angle = wrap_angle(2.0 * PI * k as f64 / n as f64);
        if angle.abs() > PI / 2.0 + 1e-9 {
            continue;
        }
        let t = (1.0 - m) * angle.cos();
        if t > threat {
            threat = t;
            threat_angle = angle;
        }
        if angle > 1e-9 {
            left_free += m;
        } else if angle < -1e-9 {
            right_free += m;
        }
    }
    if threat <= 0.0 {
        return 0.0;
    }
    let direction = if threat_angle > 1e-9 {
        -1.0
    } else if threat_angle < -1e-9 {
        1.0
    } else if right_free > left_free {
        -1.0
    } else {
        1.0
    };
    direction * threat
}

/// Free-function form of [`ScriptedPolicy::act`].
pub fn scripted_action<R: Rng + ?Sized>(
    policy: &ScriptedPolicy,
    obs: &Observation,
    world: &WorldConfig,
    rng: &mut R,
) -> Action {
    policy.act(obs, world, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn expert_goes_straight_when_aligned_and_clear() {
        let world = WorldConfig::default();
        let obs = Observation { goal_distance: 2.0, heading_error: 0.0, lidar: vec![1.0; 16] };
        let a = ScriptedPolicy::for_level(BehaviorLevel::Expert).act(&obs, &world, &mut rng_from_seed(0));
        assert_eq!(a.v, world.v_max);
        assert!(a.omega.abs() < 1e-12);
    }

    #[test]
    fn random_actions_stay_in_bounds() {
        let world = WorldConfig::default();
        let obs = Observation { goal_distance: 2.0, heading_error: 0.3, lidar: vec![0.5; 16] };
        let policy = ScriptedPolicy::for_level(BehaviorLevel::Random);
        let mut rng = rng_from_seed(4);
        for _ in 0..10_000 {
            let a = policy.act(&obs, &world, &mut rng);
            assert!((0.0..=world.v_max).contains(&a.v));
            assert!((-world.omega_max..=world.omega_max).contains(&a.omega));
        }
    }

    #[test]
    fn avoidance_turns_away_from_obstacle_side() {
        let mut lidar = vec![1.0; 16];
        // obstacle slightly to the left (beam 1 at +22.5 degrees)
        lidar[1] = 0.3;
        assert!(avoidance_bias(&lidar) < 0.0);
        lidar[1] = 1.0;
        lidar[15] = 0.3;
        assert!(avoidance_bias(&lidar) > 0.0);
        // beams behind and abeam the robot are ignored
        let mut behind = vec![1.0; 16];
        behind[8] = 0.0;
        behind[4] = 0.0;
        assert!(avoidance_bias(&behind).abs() < 1e-12);
    }

    #[test]
    fn level_names_roundtrip() {
        for level in BehaviorLevel::ALL {
            assert_eq!(level.as_str().parse::<BehaviorLevel>().unwrap(), level);
        }
        assert!("guru".parse::<BehaviorLevel>().is_err());
    }
}

#[cfg(test)]
mod rollout_tests {
    use super::*;
    use crate::env::{Event, NavEnv};
    use crate::rng::rng_from_seed;

    fn episode_return(policy: &ScriptedPolicy, world: &WorldConfig, seed: u64) -> (f64, Event) {
        let mut env = NavEnv::new(world.clone()).unwrap();
        let mut rng = rng_from_seed(seed);
        let mut obs = env.reset(&mut rng).unwrap();
        let mut total = 0.0;
        loop {
            let out = env.step(policy.act(&obs, world, &mut rng)).unwrap();
            total += out.reward;
            if out.done {
                return (total, out.event);
            }
            obs = out.observation;
        }
    }

    #[test]
    fn mean_return_ordering_follows_expertise() {
        let world = WorldConfig::default();
        let means: Vec<f64> = BehaviorLevel::ALL
            .iter()
            .map(|&level| {
                let policy = ScriptedPolicy::for_level(level);
                (0..20).map(|s| episode_return(&policy, &world, s).0).sum::<f64>() / 20.0
            })
            .collect();
        assert!(means.windows(2).all(|w| w[0] > w[1]), "{means:?}");
    }

    #[test]
    fn expert_reaches_goal_and_novice_collides() {
        let world = WorldConfig::default();
        let expert = ScriptedPolicy::for_level(BehaviorLevel::Expert);
        let novice = ScriptedPolicy::for_level(BehaviorLevel::Novice);
        for seed in 0..50 {
            assert_eq!(episode_return(&expert, &world, seed).1, Event::Goal, "seed {seed}");
            assert_eq!(episode_return(&novice, &world, seed).1, Event::Collision, "seed {seed}");
        }
    }
}
