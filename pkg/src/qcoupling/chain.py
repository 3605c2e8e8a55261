"""Finite ergodic Markov chains: validation, stationary distributions, mixing diagnostics.

Convention: transition matrices are column stochastic, ``P[i, j] = Pr(j -> i)``,
so distributions are column vectors and a step is ``P @ p``.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_array
from scipy.sparse.csgraph import connected_components

from qcoupling.checks import ValidationReport
from qcoupling.errors import (
    InvalidInputError,
    NonErgodicError,
    ThresholdNotReachedError,
)

# Absolute tolerances: structural checks on inputs vs computed quantities.
ATOL_INPUT = 1e-12
ATOL_COMPUTED = 1e-10


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-stochastic transition matrix over a finite labeled state space."""

    labels: tuple[str, ...]
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))
        n = len(self.labels)
        if n < 1:
            raise InvalidInputError("state space must contain at least one state")
        if len(set(self.labels)) != n:
            raise InvalidInputError("state labels must be unique")
        if entries.shape != (n, n):
            raise InvalidInputError(
                f"entries shape {entries.shape} does not match {n} labels"
            )
        if not np.all(np.isfinite(entries)):
            raise InvalidInputError("transition matrix contains non-finite entries")
        if entries.min() < -ATOL_INPUT or entries.max() > 1 + ATOL_INPUT:
            raise InvalidInputError("transition probabilities must lie in [0, 1]")
        colsums = entries.sum(axis=0)
        worst = int(np.argmax(np.abs(colsums - 1.0)))
        if abs(colsums[worst] - 1.0) > ATOL_INPUT:
            raise InvalidInputError(
                f"column {worst} ({self.labels[worst]!r}) sums to {colsums[worst]!r}, "
                "not 1 within 1e-12"
            )

    @property
    def n(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class Distribution:
    """Probability distribution as a nonnegative length-N vector summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size < 1:
            raise InvalidInputError("distribution must be a nonempty vector")
        if w.min() < -ATOL_INPUT:
            raise InvalidInputError("distribution entries must be nonnegative")
        if abs(w.sum() - 1.0) > ATOL_INPUT:
            raise InvalidInputError(f"distribution sums to {w.sum()!r}, not 1 within 1e-12")

    @property
    def n(self) -> int:
        return self.weights.size


@dataclass
class MixingReport:
    """Total-variation decay d(m) and mixing times t_mix(eps)."""

    d_values: np.ndarray  # d(m) for m = 0 .. m_max
    t_mix: dict[float, int]  # eps -> t_mix(eps) for resolved thresholds
    ergodic: bool
    irreducible: bool
    aperiodic: bool


def _support_periods(entries: np.ndarray) -> tuple[int, list[int]]:
    """Strong components of the support digraph and the period of each.

    Returns (number of strong components, list of per-component periods).
    A component without any internal cycle gets period 1 (trivially aperiodic).
    """
    n = entries.shape[0]
    support = csr_array(entries > ATOL_INPUT)
    n_comp, comp = connected_components(support, directed=True, connection="strong")
    adj = [np.nonzero(entries[:, j] > ATOL_INPUT)[0] for j in range(n)]
    periods = []
    for c in range(n_comp):
        nodes = np.nonzero(comp == c)[0]
        # BFS levels within the component; gcd of (level[u] + 1 - level[v])
        # over intra-component edges u -> v gives the period.
        root = nodes[0]
        level = {int(root): 0}
        g = 0
        queue = deque([int(root)])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                v = int(v)
                if comp[v] != c:
                    continue
                if v not in level:
                    level[v] = level[u] + 1
                    queue.append(v)
                else:
                    g = math.gcd(g, level[u] + 1 - level[v])
        periods.append(abs(g) if g != 0 else 1)
    return n_comp, periods


def validate_chain(P: TransitionMatrix) -> ValidationReport:
    """Report column-stochasticity, irreducibility, and aperiodicity of P."""
    entries = P.entries
    issues = []
    colsums = entries.sum(axis=0)
    bad_cols = np.nonzero(np.abs(colsums - 1.0) > ATOL_INPUT)[0]
    for j in bad_cols:
        issues.append(f"column {j} sums to {colsums[j]:.12g}")
    n_comp, periods = _support_periods(entries)
    irreducible = n_comp == 1
    if not irreducible:
        issues.append(f"support digraph has {n_comp} strong components")
    period = periods[0] if irreducible else max(periods)
    aperiodic = all(p == 1 for p in periods)
    if not aperiodic:
        issues.append(f"chain is periodic with period {period}")
    ergodic = irreducible and aperiodic and len(bad_cols) == 0
    return ValidationReport(
        valid=ergodic,
        issues=issues,
        details={
            "irreducible": irreducible,
            "aperiodic": aperiodic,
            "period": period,
            "ergodic": ergodic,
        },
    )


def _require_ergodic(P: TransitionMatrix):
    report = validate_chain(P)
    if not report.details["ergodic"]:
        missing = []
        if not report.details["irreducible"]:
            missing.append("irreducible")
        if not report.details["aperiodic"]:
            missing.append("aperiodic")
        if not missing:
            missing.append("column-stochastic")
        raise NonErgodicError(f"chain is not ergodic: fails to be {' and '.join(missing)}")


def stationary_distribution(P: TransitionMatrix, refine_tol: float = 1e-12) -> Distribution:
    """Stationary distribution pi with P pi = pi.

    Solves the singular system (P - I) pi = 0 with a normalization row appended,
    then refines by power iteration until the max-norm residual drops below
    ``refine_tol``. Requires an ergodic chain.
    """
    _require_ergodic(P)
    n = P.n
    A = np.vstack([P.entries - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    for _ in range(200_000):
        if np.max(np.abs(P.entries @ pi - pi)) <= refine_tol:
            break
        pi = P.entries @ pi
        pi /= pi.sum()
    if np.max(np.abs(P.entries @ pi - pi)) > ATOL_COMPUTED:
        raise InvalidInputError("stationary distribution did not converge to tolerance")
    return Distribution(pi)


def total_variation(p: Distribution, q: Distribution) -> float:
    """Total variation distance (1/2) sum |p_x - q_x|."""
    if p.n != q.n:
        raise InvalidInputError(f"length mismatch: {p.n} vs {q.n}")
    return 0.5 * float(np.abs(p.weights - q.weights).sum())


def _tv_to_pi_all_starts(M: np.ndarray, pi: np.ndarray) -> float:
    """max over basis starts of the TV distance between M's columns and pi."""
    return 0.5 * float(np.abs(M - pi[:, None]).sum(axis=0).max())


def distance_to_stationary(P: TransitionMatrix, m: int) -> float:
    """Worst-start total variation d(m) = max_x (1/2) sum_x' |[P^m]_{x',x} - pi_x'|."""
    if m < 0:
        raise InvalidInputError("m must be nonnegative")
    pi = stationary_distribution(P).weights
    M = np.eye(P.n)
    for _ in range(m):
        M = P.entries @ M
    return _tv_to_pi_all_starts(M, pi)


def mixing_report(
    P: TransitionMatrix, eps_list: tuple[float, ...] = (0.25,), m_max: int = 10_000
) -> MixingReport:
    """d(m) series and t_mix(eps) for every requested eps, scanning m upward."""
    validation = validate_chain(P)
    _require_ergodic(P)
    pi = stationary_distribution(P).weights
    eps_sorted = sorted(set(eps_list), reverse=True)
    for eps in eps_sorted:
        if not 0.0 < eps < 1.0:
            raise InvalidInputError(f"eps must lie in (0, 1), got {eps}")
    remaining = list(eps_sorted)
    t_mix: dict[float, int] = {}
    d_values = []
    M = np.eye(P.n)
    m = 0
    while True:
        d = _tv_to_pi_all_starts(M, pi)
        if d_values and d > d_values[-1] + ATOL_INPUT:
            raise AssertionError(f"d(m) increased at m={m}: {d_values[-1]} -> {d}")
        d_values.append(d)
        while remaining and d <= remaining[0]:
            t_mix[remaining.pop(0)] = m
        if not remaining or m >= m_max:
            break
        M = P.entries @ M
        m += 1
    if remaining:
        raise ThresholdNotReachedError(
            f"d(m) did not reach eps={remaining[0]} within m_max={m_max}; "
            f"best d({len(d_values) - 1}) = {d_values[-1]:.6g}",
            best=(len(d_values) - 1, d_values[-1]),
        )
    return MixingReport(
        d_values=np.array(d_values),
        t_mix=t_mix,
        ergodic=validation.details["ergodic"],
        irreducible=validation.details["irreducible"],
        aperiodic=validation.details["aperiodic"],
    )


def mixing_time(P: TransitionMatrix, eps: float, m_max: int = 10_000) -> int:
    """Smallest m with d(m) <= eps.

    Also checks the computed values against the standard relation
    t_mix(eps) <= ceil(log2(1/eps)) * t_mix(1/4).
    """
    report = mixing_report(P, (eps, 0.25), m_max=m_max)
    t_eps = report.t_mix[eps]
    t_quarter = report.t_mix[0.25]
    bound = math.ceil(math.log2(1.0 / eps)) * t_quarter if eps < 1 else 0
    if eps <= 0.25 and t_eps > bound:
        raise AssertionError(
            f"t_mix({eps}) = {t_eps} exceeds ceil(log2(1/eps)) * t_mix = {bound}"
        )
    return t_eps


# ---------------------------------------------------------------------------
# JSON interface: { "labels": [...], "P": [[...], ...] } with P[i][j] = Pr(j -> i)


def chain_to_json_dict(P: TransitionMatrix) -> dict:
    return {"labels": list(P.labels), "P": P.entries.tolist()}


def chain_from_json_dict(doc: dict) -> TransitionMatrix:
    if not isinstance(doc, dict):
        raise InvalidInputError("chain JSON must be an object")
    for key in ("labels", "P"):
        if key not in doc:
            raise InvalidInputError(f"chain JSON missing field {key!r}")
    labels = doc["labels"]
    rows = doc["P"]
    if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
        raise InvalidInputError("field 'P' must be a nested array of rows")
    n = len(labels)
    if len(rows) != n:
        raise InvalidInputError(f"field 'P' has {len(rows)} rows for {n} labels")
    for i, row in enumerate(rows):
        if len(row) != n:
            raise InvalidInputError(f"field 'P' row {i} has length {len(row)}, expected {n}")
    return TransitionMatrix(labels=tuple(labels), entries=np.array(rows, dtype=float))


def read_chain_json(path) -> TransitionMatrix:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    try:
        return chain_from_json_dict(doc)
    except InvalidInputError as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc


def write_chain_json(P: TransitionMatrix, path):
    with open(path, "w") as fh:
        json.dump(chain_to_json_dict(P), fh, indent=1)
        fh.write("\n")
