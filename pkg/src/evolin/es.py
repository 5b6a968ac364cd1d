"""Ask/tell evolution strategies over a Gaussian search distribution.

Three variants share one parameter set and one state layout:

* ``csa``     -- step-size adaptation only, covariance fixed at identity.
* ``sep-cma`` -- diagonal covariance, per-coordinate variances, learning
                 rates scaled up by (n+2)/3 to exploit the restriction.
* ``cma``     -- full covariance with rank-one and rank-mu updates and a
                 lazily refreshed eigendecomposition.

Sampling is reproducible from ``(master_seed, generation, index)`` alone,
so any process holding the distribution parameters can regenerate any
candidate without communication.  ``tell`` is functional: it returns a new
state and never mutates its inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "CSA",
    "SEP_CMA",
    "FULL_CMA",
    "VARIANTS",
    "Candidate",
    "StrategyParams",
    "DistributionState",
    "CovTransform",
    "NumericalDegeneracyError",
    "rl_popsize",
    "cma_popsize",
    "new_strategy",
    "candidate_z",
    "sample_candidate_from_seed",
    "ask",
    "tell",
    "optimize",
    "OptimizeResult",
    "state_to_json",
    "state_from_json",
]

CSA = "csa"
SEP_CMA = "sep-cma"
FULL_CMA = "cma"
VARIANTS = (CSA, SEP_CMA, FULL_CMA)

# Domain tags keep the candidate-sampling streams disjoint from the episode
# seed streams derived elsewhere from the same master seed.
DOMAIN_SAMPLE = 0

_MAX_SEED = 2**64


class NumericalDegeneracyError(RuntimeError):
    """Search distribution lost positive-definiteness or finiteness."""

    def __init__(self, message: str, generation: int | None = None):
        super().__init__(message)
        self.generation = generation


@dataclass
class Candidate:
    index: int
    z: np.ndarray
    x: np.ndarray
    fitness: float | None = None


@dataclass(frozen=True)
class StrategyParams:
    """Fixed per-run constants; derived once by new_strategy."""

    variant: str
    n: int
    lam: int
    mu: int
    weights: np.ndarray
    mu_eff: float
    c_m: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float


@dataclass
class DistributionState:
    m: np.ndarray
    sigma: float
    p_sigma: np.ndarray
    p_c: np.ndarray
    g: int = 0
    c_diag: np.ndarray | None = None      # sep-cma per-coordinate variances
    c_full: np.ndarray | None = None      # full covariance matrix
    eig_basis: np.ndarray | None = None   # columns = eigenvectors of c_full
    eig_scale: np.ndarray | None = None   # sqrt of eigenvalues
    eig_age: int = 0                      # tells since last decomposition


def rl_popsize(n: int) -> int:
    """Large default population for noisy episodic objectives."""
    return min(128, max(32, math.ceil(n / 2)))


def cma_popsize(n: int) -> int:
    """Classic small default for smooth analytic objectives."""
    return 4 + int(3 * math.log(n))


def _resolve_lambda(lam: int | str | None, n: int) -> int:
    if lam is None or lam in ("rl", "default"):
        return rl_popsize(n)
    if lam == "cma":
        return cma_popsize(n)
    if isinstance(lam, int) and not isinstance(lam, bool):
        return lam
    raise ValueError(f"invalid population size: {lam!r}")


def _check_seed(master_seed: int) -> int:
    if not isinstance(master_seed, int) or isinstance(master_seed, bool):
        raise ValueError("master_seed must be an int")
    if not 0 <= master_seed < _MAX_SEED:
        raise ValueError("master_seed must fit in an unsigned 64-bit integer")
    return master_seed


def new_strategy(
    variant: str,
    n: int,
    sigma0: float,
    m0: np.ndarray | None = None,
    lam: int | str | None = None,
) -> tuple[StrategyParams, DistributionState]:
    """Build parameters and the generation-zero state.

    ``lam`` accepts an explicit population size, ``"rl"``/``"default"`` for
    min(128, max(32, ceil(n/2))), or ``"cma"`` for 4 + floor(3 ln n).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant: {variant!r}")
    if not isinstance(n, int) or n < 1:
        raise ValueError("dimension must be a positive integer")
    if not (math.isfinite(sigma0) and sigma0 > 0):
        raise ValueError("sigma0 must be positive and finite")
    lam_val = _resolve_lambda(lam, n)
    if lam_val < 2:
        raise ValueError("population size must be at least 2")
    if m0 is None:
        m0 = np.zeros(n)
    m0 = np.asarray(m0, dtype=float)
    if m0.shape != (n,) or not np.all(np.isfinite(m0)):
        raise ValueError("m0 must be a finite vector of length n")

    mu = lam_val // 2
    raw = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights = raw / raw.sum()
    mu_eff = 1.0 / float(np.sum(weights**2))

    c_m = 1.0
    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n)
    c_1 = 2.0 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff))
    chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))

    params = StrategyParams(
        variant=variant, n=n, lam=lam_val, mu=mu, weights=weights,
        mu_eff=mu_eff, c_m=c_m, c_sigma=c_sigma, d_sigma=d_sigma,
        c_c=c_c, c_1=c_1, c_mu=c_mu, chi_n=chi_n,
    )

    state = DistributionState(
        m=m0.copy(), sigma=float(sigma0),
        p_sigma=np.zeros(n), p_c=np.zeros(n), g=0,
    )
    if variant == SEP_CMA:
        state.c_diag = np.ones(n)
    elif variant == FULL_CMA:
        state.c_full = np.eye(n)
        state.eig_basis = np.eye(n)
        state.eig_scale = np.ones(n)
    return params, state


@dataclass(frozen=True)
class CovTransform:
    """Linear map A with A A^T = C, applied to unit-Gaussian draws.

    Built either from local state or from a received distribution payload;
    both constructions apply the identical expression so samples agree
    bitwise across processes.
    """

    kind: str                              # "unit" | "diag" | "full"
    sqrt_diag: np.ndarray | None = None
    basis: np.ndarray | None = None
    scale: np.ndarray | None = None

    @staticmethod
    def from_state(params: StrategyParams, state: DistributionState) -> "CovTransform":
        if params.variant == CSA:
            return CovTransform("unit")
        if params.variant == SEP_CMA:
            return CovTransform("diag", sqrt_diag=np.sqrt(state.c_diag))
        return CovTransform("full", basis=state.eig_basis, scale=state.eig_scale)

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "unit":
            return z.copy()
        if self.kind == "diag":
            return self.sqrt_diag * z
        return self.basis @ (self.scale * z)

    def check_finite(self, generation: int) -> None:
        for arr in (self.sqrt_diag, self.basis, self.scale):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise NumericalDegeneracyError(
                    f"non-finite covariance factors at generation {generation}",
                    generation,
                )


def candidate_z(master_seed: int, generation: int, index: int, n: int) -> np.ndarray:
    """Unit-Gaussian draw for one candidate, from its own seeded stream."""
    rng = np.random.default_rng([_check_seed(master_seed), DOMAIN_SAMPLE,
                                 int(generation), int(index)])
    return rng.standard_normal(n)


def sample_candidate_from_seed(
    master_seed: int,
    generation: int,
    index: int,
    m: np.ndarray,
    sigma: float,
    transform: CovTransform,
    lam: int,
) -> Candidate:
    """Regenerate candidate ``index`` of a generation from seeds alone."""
    if not 0 <= index < lam:
        raise ValueError(f"candidate index {index} out of range for lambda={lam}")
    transform.check_finite(generation)
    z = candidate_z(master_seed, generation, index, len(m))
    x = m + sigma * transform.apply(z)
    return Candidate(index=index, z=z, x=x)


def ask(params: StrategyParams, state: DistributionState, master_seed: int) -> list[Candidate]:
    """Sample the generation's lambda candidates.

    Read-only on state; candidate i depends only on
    (master_seed, state.g, i) and the current distribution.
    """
    if not (math.isfinite(state.sigma) and state.sigma > 0):
        raise ValueError("state.sigma must be positive and finite")
    if not np.all(np.isfinite(state.m)):
        raise ValueError("state.m must be finite")
    transform = CovTransform.from_state(params, state)
    return [
        sample_candidate_from_seed(master_seed, state.g, i, state.m,
                                   state.sigma, transform, params.lam)
        for i in range(params.lam)
    ]


def _rank(candidates: list[Candidate], mode: str) -> list[Candidate]:
    if mode not in ("maximize", "minimize"):
        raise ValueError(f"mode must be 'maximize' or 'minimize', got {mode!r}")
    for c in candidates:
        if c.fitness is None or not math.isfinite(c.fitness):
            raise ValueError(f"candidate {c.index} has no finite fitness")
    sign = -1.0 if mode == "maximize" else 1.0
    # ties resolve toward the lower candidate index, deterministically
    return sorted(candidates, key=lambda c: (sign * c.fitness, c.index))


def tell(
    params: StrategyParams,
    state: DistributionState,
    candidates: list[Candidate],
    mode: str = "maximize",
) -> DistributionState:
    """Consume one evaluated generation; returns the successor state."""
    if len(candidates) != params.lam:
        raise ValueError(f"expected {params.lam} candidates, got {len(candidates)}")
    if len({c.index for c in candidates}) != params.lam:
        raise ValueError("candidate indexes must be unique")
    n = params.n
    ranked = _rank(candidates, mode)
    sel = ranked[: params.mu]
    w = params.weights

    xs = np.stack([c.x for c in sel])
    zs = np.stack([c.z for c in sel])

    # mean: weighted recombination of the selected candidates themselves
    m_new = state.m + params.c_m * (w @ (xs - state.m))

    transform = CovTransform.from_state(params, state)
    zw = w @ zs

    # step-size path lives in the whitened coordinate system
    if params.variant == FULL_CMA:
        ps_in = state.eig_basis @ zw
    else:
        ps_in = zw
    cs = params.c_sigma
    p_sigma = (1.0 - cs) * state.p_sigma + math.sqrt(cs * (2.0 - cs) * params.mu_eff) * ps_in

    ps_norm = float(np.linalg.norm(p_sigma))
    unbias = math.sqrt(1.0 - (1.0 - cs) ** (2 * (state.g + 1)))
    h_sigma = ps_norm / unbias < (1.4 + 2.0 / (n + 1.0)) * params.chi_n

    yw = transform.apply(zw)
    cc = params.c_c
    p_c = (1.0 - cc) * state.p_c + h_sigma * math.sqrt(cc * (2.0 - cc) * params.mu_eff) * yw

    sigma_new = state.sigma * math.exp((cs / params.d_sigma) * (ps_norm / params.chi_n - 1.0))

    g_new = state.g + 1
    if not (math.isfinite(sigma_new) and sigma_new > 0):
        raise NumericalDegeneracyError(
            f"step size became non-finite at generation {g_new}", g_new)

    new = DistributionState(
        m=m_new, sigma=sigma_new, p_sigma=p_sigma, p_c=p_c, g=g_new,
        eig_age=state.eig_age,
    )

    if params.variant == SEP_CMA:
        # variance loss from a stalled rank-one update is restored via the
        # (1 - h_sigma) correction term
        c1 = min(1.0, params.c_1 * (n + 2.0) / 3.0)
        cmu = min(1.0 - c1, params.c_mu * (n + 2.0) / 3.0)
        ys = transform.sqrt_diag * zs
        rank_mu = w @ (ys * ys)
        d_new = (
            (1.0 - c1 - cmu) * state.c_diag
            + c1 * (p_c * p_c + (1.0 - h_sigma) * cc * (2.0 - cc) * state.c_diag)
            + cmu * rank_mu
        )
        if not np.all(np.isfinite(d_new)) or np.any(d_new <= 0):
            raise NumericalDegeneracyError(
                f"diagonal covariance lost positivity at generation {g_new}", g_new)
        new.c_diag = d_new
    elif params.variant == FULL_CMA:
        c1, cmu = params.c_1, params.c_mu
        ys = (zs * state.eig_scale) @ state.eig_basis.T
        rank_mu = ys.T @ (w[:, None] * ys)
        c_new = (
            (1.0 - c1 - cmu) * state.c_full
            + c1 * (np.outer(p_c, p_c) + (1.0 - h_sigma) * cc * (2.0 - cc) * state.c_full)
            + cmu * rank_mu
        )
        c_new = (c_new + c_new.T) * 0.5
        new.c_full = c_new
        new.eig_basis = state.eig_basis
        new.eig_scale = state.eig_scale
        new.eig_age = state.eig_age + 1
        if new.eig_age > 1.0 / (10.0 * n * (c1 + cmu)):
            _refresh_eigensystem(new, g_new)
    return new


def _refresh_eigensystem(state: DistributionState, generation: int) -> None:
    if not np.all(np.isfinite(state.c_full)):
        raise NumericalDegeneracyError(
            f"covariance became non-finite at generation {generation}", generation)
    eigvals, basis = np.linalg.eigh(state.c_full)
    if not np.all(np.isfinite(eigvals)) or eigvals[0] <= 0:
        raise NumericalDegeneracyError(
            f"covariance lost positive-definiteness at generation {generation}",
            generation)
    state.eig_basis = basis
    state.eig_scale = np.sqrt(eigvals)
    state.eig_age = 0


@dataclass
class OptRecord:
    generation: int
    evals: int
    best_f_gen: float
    best_f: float
    sigma: float


@dataclass
class OptimizeResult:
    best_x: np.ndarray
    best_f: float
    evals: int
    status: str                      # "target_reached" | "budget_exhausted"
    history: list[OptRecord] = field(default_factory=list)


def optimize(
    objective: Callable[[np.ndarray], float],
    variant: str,
    m0: np.ndarray,
    sigma0: float,
    budget_evals: int,
    target: float | None = None,
    seed: int = 0,
    lam: int | str | None = "cma",
    on_generation: Callable[[StrategyParams, DistributionState, list[Candidate]], None] | None = None,
) -> OptimizeResult:
    """Minimize a black-box function under an evaluation budget."""
    m0 = np.asarray(m0, dtype=float)
    params, state = new_strategy(variant, len(m0), sigma0, m0, lam)
    if budget_evals < params.lam:
        raise ValueError("budget must cover at least one generation")

    best_f = float(objective(m0.copy()))
    best_x = m0.copy()
    evals = 1
    history: list[OptRecord] = []
    if target is not None and best_f <= target:
        return OptimizeResult(best_x, best_f, evals, "target_reached", history)

    status = "budget_exhausted"
    while evals + params.lam <= budget_evals:
        cands = ask(params, state, seed)
        for c in cands:
            c.fitness = float(objective(c.x))
        evals += params.lam
        gen_best = min(c.fitness for c in cands)
        if gen_best < best_f:
            best = min(cands, key=lambda c: (c.fitness, c.index))
            best_f, best_x = best.fitness, best.x.copy()
        state = tell(params, state, cands, mode="minimize")
        if on_generation is not None:
            on_generation(params, state, cands)
        history.append(OptRecord(state.g - 1, evals, gen_best, best_f, state.sigma))
        if target is not None and best_f <= target:
            status = "target_reached"
            break
    return OptimizeResult(best_x, best_f, evals, status, history)


def _cov_dict(state: DistributionState) -> dict:
    if state.c_full is not None:
        return {"kind": "full", "c": state.c_full.ravel().tolist()}
    if state.c_diag is not None:
        return {"kind": "diag", "d": state.c_diag.tolist()}
    return {"kind": "unit"}


def state_to_json(params: StrategyParams, state: DistributionState, master_seed: int) -> str:
    """Snapshot everything needed to resume or audit a run."""
    doc = {
        "variant": params.variant,
        "n": params.n,
        "lambda": params.lam,
        "mu": params.mu,
        "g": state.g,
        "m": state.m.tolist(),
        "sigma": state.sigma,
        "cov": _cov_dict(state),
        "p_sigma": state.p_sigma.tolist(),
        "p_c": state.p_c.tolist(),
        "master_seed": str(_check_seed(master_seed)),
    }
    return json.dumps(doc)


def state_from_json(doc: str) -> tuple[StrategyParams, DistributionState, int]:
    d = json.loads(doc)
    variant, n, lam = d["variant"], d["n"], d["lambda"]
    params, state = new_strategy(variant, n, 1.0, np.asarray(d["m"], dtype=float), lam)
    if params.mu != d["mu"]:
        raise ValueError("snapshot mu is inconsistent with lambda")
    state.sigma = float(d["sigma"])
    state.p_sigma = np.asarray(d["p_sigma"], dtype=float)
    state.p_c = np.asarray(d["p_c"], dtype=float)
    state.g = int(d["g"])
    cov = d["cov"]
    if cov["kind"] == "diag":
        if variant != SEP_CMA:
            raise ValueError("diagonal covariance requires the sep-cma variant")
        state.c_diag = np.asarray(cov["d"], dtype=float)
    elif cov["kind"] == "full":
        if variant != FULL_CMA:
            raise ValueError("full covariance requires the cma variant")
        state.c_full = np.asarray(cov["c"], dtype=float).reshape(n, n)
        _refresh_eigensystem(state, state.g)
    elif variant != CSA:
        raise ValueError("unit covariance requires the csa variant")
    for name in ("m", "p_sigma", "p_c"):
        if getattr(state, name).shape != (n,):
            raise ValueError(f"snapshot field {name} has wrong length")
    return params, state, int(d["master_seed"])
