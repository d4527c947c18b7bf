//! Online evaluation of a deterministic policy in the navigation world.

use crate::env::{Action, NavEnv, WorldConfig};
use crate::error::{Error, Result};
use crate::nn::{mlp_forward, ParamVector};
use crate::rng::Rng;

/// Undiscounted return of each episode, in order.
pub fn episode_returns(actor: &ParamVector, world: &WorldConfig, episodes: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if episodes < 1 {
        return Err(Error::InvalidArgument("at least one evaluation episode is required".into()));
    }
    let mut env = NavEnv::new(world.clone())?;
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng)?.to_vec();
        let mut total = 0.0;
        loop {
            let a = mlp_forward(actor, &obs)?;
            let out = env.step(Action::from_normalized(&a, world))?;
            total += out.reward;
            if out.done {
                break;
            }
            obs = out.observation.to_vec();
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Mean and population standard deviation of `values`.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and standard deviation of the returns over `episodes` seeded episodes.
pub fn evaluate_policy(actor: &ParamVector, world: &WorldConfig, episodes: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    Ok(mean_std(&episode_returns(actor, world, episodes, rng)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::ModelSpecs;
    use crate::rng::rng_from_seed;

    fn actor(seed: u64) -> (WorldConfig, ParamVector) {
        let world = WorldConfig::default();
        let specs = ModelSpecs::new(world.observation_dim(), 2, &[8], 1.0).unwrap();
        (world, specs.init_actor(&mut rng_from_seed(seed)))
    }

    #[test]
    fn same_seed_same_result() {
        let (world, a) = actor(1);
        let x = evaluate_policy(&a, &world, 3, &mut rng_from_seed(4)).unwrap();
        let y = evaluate_policy(&a, &world, 3, &mut rng_from_seed(4)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn single_episode_has_zero_std() {
        let (world, a) = actor(2);
        let (_, std) = evaluate_policy(&a, &world, 1, &mut rng_from_seed(0)).unwrap();
        assert_eq!(std, 0.0);
    }

    #[test]
    fn zero_episodes_rejected() {
        let (world, a) = actor(3);
        assert!(evaluate_policy(&a, &world, 0, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn mean_matches_replayed_episodes() {
        let (world, a) = actor(5);
        let (mean, std) = evaluate_policy(&a, &world, 4, &mut rng_from_seed(9)).unwrap();
        // replay each episode step by step with an identically seeded stream
        let mut rng = rng_from_seed(9);
        let mut env = NavEnv::new(world.clone()).unwrap();
        let mut returns = Vec::new();
        for _ in 0..4 {
            let mut obs = env.reset(&mut rng).unwrap();
            let mut total = 0.0;
            loop {
                let act = mlp_forward(&a, &obs.to_vec()).unwrap();
                let out = env.step(Action::from_normalized(&act, &world)).unwrap();
                total += out.reward;
                obs = out.observation;
                if out.done {
                    break;
                }
            }
            returns.push(total);
        }
        let m: f64 = returns.iter().sum::<f64>() / 4.0;
        let s = (returns.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / 4.0).sqrt();
        assert!((mean - m).abs() < 1e-12);
        assert!((std - s).abs() < 1e-12);
    }
}
