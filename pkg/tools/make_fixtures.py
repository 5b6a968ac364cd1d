"""Regenerate the committed test fixtures.

Writes one reference trajectory per environment (100 steps, scripted
actions, fixed reset seed) and a small trained cart-pole checkpoint used by
the CLI tests.  Run from the repository root:

    python3 tools/make_fixtures.py
"""

from __future__ import annotations

import math
import os
import sys

from evolin import make_env, save_checkpoint, train

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures")
STEPS = 100
RESET_SEED = 12345


def cartpole_actions() -> list[int]:
    """Derive an open-loop action sequence that balances for 100 steps.

    A crude proportional rule picks each action while simulating; the
    resulting integer sequence is what gets stored, so replay needs no
    controller.
    """
    env = make_env("cartpole")
    obs = env.reset(RESET_SEED)
    actions = []
    for _ in range(STEPS):
        x, x_dot, th, th_dot = obs
        a = 1 if (th + 0.25 * th_dot + 0.02 * x + 0.05 * x_dot) > 0 else 0
        actions.append(a)
        res = env.step(a)
        if res.terminated:
            raise RuntimeError("scripted cart-pole sequence fell over; retune")
        obs = res.obs
    return actions


def acrobot_actions() -> list[int]:
    # gentle periodic torques; far too weak to reach the terminal height
    return [(k // 5) % 3 for k in range(STEPS)]


def pendulum_actions() -> list[list[float]]:
    return [[1.5 * math.sin(0.25 * k)] for k in range(STEPS)]


def write_trajectory(env_id: str, actions) -> None:
    env = make_env(env_id)
    obs = env.reset(RESET_SEED)
    obs_dim = len(obs)
    header = ["step", "action"] + [f"obs{i}" for i in range(obs_dim)] + [
        "reward", "terminated", "truncated"]
    lines = [",".join(header)]
    for k, a in enumerate(actions):
        res = env.step(a)
        act_repr = repr(float(a[0])) if isinstance(a, list) else str(a)
        cells = [str(k), act_repr]
        cells += [repr(float(v)) for v in res.obs]
        cells += [repr(res.reward), str(int(res.terminated)), str(int(res.truncated))]
        lines.append(",".join(cells))
        if res.terminated or res.truncated:
            raise RuntimeError(f"{env_id} episode ended early at step {k}")
    path = os.path.join(FIXTURE_DIR, f"{env_id}_trajectory.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print("wrote", path)


def write_cartpole_checkpoint() -> None:
    result = train("cartpole", "csa", sigma0=0.1, lam=4, budget_timesteps=10_000,
                   master_seed=5, target_return=500.0)
    best_median = max((r.median_test_return for r in result.records), default=-1.0)
    if result.best is None or best_median < 475:
        raise RuntimeError("training fixture run did not solve cart-pole")
    path = os.path.join(FIXTURE_DIR, "cartpole_solved.json")
    save_checkpoint(path, result.best)
    print("wrote", path, "median", max(r.median_test_return for r in result.records))


def main() -> int:
    os.makedirs(FIXTURE_DIR, exist_ok=True)
    write_trajectory("cartpole", cartpole_actions())
    write_trajectory("acrobot", acrobot_actions())
    write_trajectory("pendulum", pendulum_actions())
    write_cartpole_checkpoint()
    return 0


if __name__ == "__main__":
    sys.exit(main())
