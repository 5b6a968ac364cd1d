"""
Watching the search distribution adapt on a 2-d quadratic
=========================================================

The ask/tell loop exposes the full distribution state, so a script can
trace how the step size sigma and the mean move generation by
generation.  On a simple bowl the mean slides toward the optimum and
sigma contracts once progress stalls.
"""

import numpy as np

from evolin import VARIANTS, ask, new_strategy, quadratic2d, tell

fn = quadratic2d()

for variant in VARIANTS:
    # start away from the optimum with a deliberately large step size
    params, state = new_strategy(variant, 2, 3.0, np.array([2.0, 2.0]), lam=8)
    print(f"== {variant} on {fn.name} ==")
    print(f"  {'gen':>3s} {'sigma':>10s} {'m_0':>10s} {'m_1':>10s} {'best f':>12s}")
    for gen in range(20):
        cands = ask(params, state, master_seed=0)
        for c in cands:
            c.fitness = fn(c.x)
        best = min(c.fitness for c in cands)
        state = tell(params, state, cands, mode="minimize")
        if gen % 4 == 0 or gen == 19:
            print(f"  {gen:3d} {state.sigma:10.4f} {state.m[0]:10.5f}"
                  f" {state.m[1]:10.5f} {best:12.3e}")
    print(f"  sigma fell from 3.0 to {state.sigma:.4f};"
          f" mean reached ({state.m[0]:.4f}, {state.m[1]:.4f})")
