"""
Training a linear cart-pole policy from the library
===================================================

A single-layer linear policy has 8 weights on cart-pole, and direct
search over those weights solves the task in a few thousand timesteps.
The run writes the same artifacts the command line produces: a learning
curve CSV and a checkpoint of the best policy.
"""

import os
import tempfile

from evolin import (load_checkpoint, save_checkpoint, test_policy, train,
                    write_curve_csv)

# sigma0 and the population size follow the cart-pole defaults; the
# budget is generous because training stops at the target return anyway
result = train("cartpole", "csa", sigma0=0.1, lam=4,
               budget_timesteps=10_000, master_seed=5, target_return=500.0)

print(f"status: {result.status} after {result.cumulative_timesteps} timesteps")
print(f"{'gen':>3s} {'timesteps':>9s} {'median return':>13s} {'sigma':>8s}")
for r in result.records:
    print(f"{r.generation:3d} {r.cumulative_timesteps:9d}"
          f" {r.median_test_return:13.1f} {r.sigma:8.4f}")

# persist the artifacts exactly as the CLI would
out = tempfile.mkdtemp(prefix="cartpole-demo-")
curve_path = os.path.join(out, "cartpole_csa_seed5.csv")
ckpt_path = os.path.join(out, "cartpole_csa_seed5.json")
write_curve_csv(curve_path, result.records)
save_checkpoint(ckpt_path, result.best)
print(f"curve      -> {curve_path}")
print(f"checkpoint -> {ckpt_path}")

# reload the checkpoint and confirm the policy still balances the pole
# on evaluation episodes it has never seen
ckpt = load_checkpoint(ckpt_path)
median, returns = test_policy(ckpt.policy(), ckpt.normalizer, "cartpole",
                              master_seed=123, generation=0, episodes=10)
print(f"reloaded policy over 10 fresh episodes: median {median:.0f}, "
      f"min {min(returns):.0f}, max {max(returns):.0f}")
