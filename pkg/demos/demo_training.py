"""Demo 3: a short multi-agent PPO training run.

Trains for a handful of updates on shortened episodes (a real run uses
tests/train settings, see README), prints the learning curve, and compares
the result against the random and fixed-maximum baselines on one held-out
episode. Expect a few minutes of wall time.
"""

import numpy as np

from vslcontrol.sim import build_training_scenario
from vslcontrol.training import (RewardWeights, TrainConfig, evaluate_policy,
                                 fixed_limit_policy, train, uniform_valid_policy)


def main():
    config = TrainConfig(updates=15, episodes_per_update=2, episode_steps=120, seed=7)
    print(f"training: {config.updates} updates x {config.episodes_per_update} episodes "
          f"x {config.episode_steps} steps")
    result = train(config, verbose=True)
    print(f"\nbest probe reward {result.best_reward:.2f} at update {result.best_update} "
          f"({result.wall_time_s:.0f}s)")

    weights = RewardWeights()
    scenario = build_training_scenario(noise_sigma_mph=1.0)
    trained = evaluate_policy(result.params, scenario, weights, seed=9999)
    rng = np.random.default_rng(9999)
    random_pi = evaluate_policy(result.params, scenario, weights, seed=9999,
                                select=uniform_valid_policy(rng))
    fixed_pi = evaluate_policy(result.params, scenario, weights, seed=9999,
                               select=fixed_limit_policy(4))
    print(f"\nheld-out episode mean reward:")
    print(f"  trained   {trained['mean_episode_reward']:9.2f}")
    print(f"  random    {random_pi['mean_episode_reward']:9.2f}")
    print(f"  fixed-70  {fixed_pi['mean_episode_reward']:9.2f}")
    print("\n(the shipped artifacts/trained_policy.vslw comes from a longer run; "
          "see scripts in README)")


if __name__ == "__main__":
    main()
