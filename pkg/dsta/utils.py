import hashlib
import math

import numpy as np

from .errors import ConfigurationError


REL_TOL = 1.0e-9


def tolerance(*values: float) -> float:
    """Numeric tolerance for property checks: 1e-9 relative, floored at 1e-9."""
    return REL_TOL * max([1.0] + [abs(v) for v in values])


def isclose(a: float, b: float) -> bool:
    return abs(a - b) <= tolerance(a, b)


def check_probability(p: float) -> float:
    if not (0.0 < p <= 1.0) or math.isnan(p):
        raise ConfigurationError(f"Sampling probability must be in (0, 1], got {p}")
    return float(p)


def pair_key(seed: int, task: int, agent: int) -> int:
    """Pack (seed, task, agent) into a 128-bit Philox key."""
    if seed < 0 or task < 0 or agent < 0:
        raise ValueError("Seed and identifiers must be non-negative.")
    if seed >= 2**64 or task >= 2**32 or agent >= 2**32:
        raise ValueError("Seed or identifier out of range for keyed generator.")
    return (seed << 64) | (task << 32) | agent


def pair_uniform(seed: int, task: int, agent: int) -> float:
    """Uniform [0, 1) draw keyed on (seed, task, agent).

    The draw is the first output of a Philox counter-based generator whose key
    encodes the triple, so it does not depend on the number of tasks or agents
    nor on the order in which pairs are visited.
    """
    bitgen = np.random.Philox(key=pair_key(seed, task, agent))
    return float(np.random.Generator(bitgen).random())


def sample_mask(seed: int, n_tasks: int, n_agents: int, p: float) -> np.ndarray:
    """Boolean (n_tasks, n_agents) mask; pair (j, a) is sampled iff its keyed draw < p."""
    mask = np.zeros((n_tasks, n_agents), dtype=bool)
    if p >= 1.0:
        mask[:, :] = True
        return mask
    for task in range(n_tasks):
        for agent in range(n_agents):
            mask[task, agent] = pair_uniform(seed, task, agent) < p
    return mask


def derive_seed(master_seed: int, *keys: int) -> int:
    """Derive a 32-bit child seed from a master seed and integer keys."""
    sequence = np.random.SeedSequence([int(master_seed)] + [int(k) for k in keys])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def file_digest(path: str) -> str:
    with open(path, "rb") as file:
        return hashlib.sha256(file.read()).hexdigest()


def mean_std(values: list[float]) -> tuple[float, float]:
    """Arithmetic mean and sample standard deviation (0 for a single value)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return (math.nan, math.nan)
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return (mean, std)
