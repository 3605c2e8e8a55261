"""Coupling matrices on the pair space Omega x Omega.

Pair index convention (fixed globally): ``idx(x, y) = x * N + y``. This is the
left-factor-major tensor order, which makes the vectorized identity
``matrix(C*) = C`` in :mod:`qcoupling.quantize` hold entrywise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from qcoupling.chain import (
    ATOL_COMPUTED,
    ATOL_INPUT,
    TransitionMatrix,
    validate_chain,
)
from qcoupling.checks import CheckResult, ValidationReport
from qcoupling.errors import (
    GuardExceededError,
    InvalidInputError,
    NonErgodicError,
    ThresholdNotReachedError,
)
from qcoupling.kernels import coalescence_counts

COUPLING_THRESHOLD = 0.25  # t_couple crossing level
EXACT_GUARD_N = 64  # largest N for exact pair-space iteration


def pair_index(x: int, y: int, n: int) -> int:
    return x * n + y


@dataclass(frozen=True)
class CouplingMatrix:
    """Column-stochastic transition matrix over pair indices idx(x,y) = x*N + y.

    Construction performs only light structural checks so that deliberately
    broken or rescaled matrices (e.g. the ``printed`` counterexample fixture variant)
    remain constructible; use :func:`validate_coupling` for the full three
    coupling conditions. ``marginal_verified`` is False for fixture-matching
    constructions that are not stochastic couplings.
    """

    base: TransitionMatrix
    entries: np.ndarray
    marginal_verified: bool = True

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", entries)
        n = self.base.n
        if entries.shape != (n * n, n * n):
            raise InvalidInputError(
                f"coupling entries must be {n * n}x{n * n}, got {entries.shape}"
            )
        if not np.all(np.isfinite(entries)):
            raise InvalidInputError("coupling matrix contains non-finite entries")
        if entries.min() < -ATOL_INPUT:
            raise InvalidInputError("coupling matrix contains negative entries")

    @property
    def n(self) -> int:
        return self.base.n

    def as_4tensor(self) -> np.ndarray:
        """View with axes (x', y', x, y)."""
        n = self.n
        return self.entries.reshape(n, n, n, n)


@dataclass(frozen=True)
class RandomMappingRep:
    """Random mapping representation (f, Pr(r)) of a transition matrix.

    ``table[x, r]`` is the successor index f(x, r). Validated on construction:
    probabilities form a distribution and, when a base chain is attached, the
    induced marginal reproduces it entrywise within 1e-12. ``base`` may be
    None for state spaces too large to hold a dense chain (MC-only use).
    """

    base: TransitionMatrix | None
    r_labels: tuple[str, ...]
    probs: np.ndarray
    table: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        table = np.asarray(self.table, dtype=np.int64)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "r_labels", tuple(str(l) for l in self.r_labels))
        nr = len(self.r_labels)
        if probs.shape != (nr,):
            raise InvalidInputError("probs must have one entry per randomness value")
        if probs.min() < 0 or abs(probs.sum() - 1.0) > ATOL_INPUT:
            raise InvalidInputError("Pr(r) must be nonnegative and sum to 1 within 1e-12")
        if table.ndim != 2 or table.shape[1] != nr:
            raise InvalidInputError(f"table must be N x {nr}, got {table.shape}")
        n = table.shape[0]
        if self.base is not None and self.base.n != n:
            raise InvalidInputError("table height does not match the base chain")
        if table.min() < 0 or table.max() >= n:
            raise InvalidInputError("table contains out-of-range successor indices")
        if self.base is not None:
            induced = self.induced_chain_entries()
            err = np.max(np.abs(induced - self.base.entries))
            if err > ATOL_INPUT:
                raise InvalidInputError(
                    f"random mapping does not reproduce the base chain (max error {err:.3g})"
                )

    @property
    def n(self) -> int:
        return self.table.shape[0]

    @property
    def n_r(self) -> int:
        return len(self.r_labels)

    def induced_chain_entries(self) -> np.ndarray:
        """P implied by the mapping: sum of Pr(r) over r with f(x, r) = x'."""
        n = self.n
        induced = np.zeros((n, n))
        cols = np.arange(n)
        for r in range(self.n_r):
            induced[self.table[:, r], cols] += self.probs[r]
        return induced


@dataclass
class CoalescenceReport:
    """Tail probabilities Pr{tau_coal > m}, exact or Monte Carlo."""

    mode: str  # "exact" | "monte_carlo"
    m_values: np.ndarray
    tail_max: np.ndarray
    pairs: list[tuple[int, int]]
    per_pair: np.ndarray | None = None  # shape (len(m_values), len(pairs))
    samples: int | None = None
    seed: int | None = None
    ci_half: np.ndarray | None = None  # 95% CI half-widths on tail_max (MC only)
    t_couple: int | None = None
    expected_time_max: float | None = None
    expected_time_truncation: int | None = None
    details: dict = field(default_factory=dict)

    def tail_at(self, m: int) -> float:
        pos = np.nonzero(self.m_values == m)[0]
        if pos.size == 0:
            raise InvalidInputError(f"m={m} not covered by this report")
        return float(self.tail_max[pos[0]])

    def to_csv(self, include_pairs: bool = False) -> str:
        cols = ["m", "tail_max"]
        if self.mode == "monte_carlo":
            cols.append("tail_ci_hi")
        if include_pairs and self.per_pair is not None:
            cols += [f"pair_{x}_{y}" for x, y in self.pairs]
        lines = [",".join(cols)]
        for i, m in enumerate(self.m_values):
            row = [str(int(m)), f"{self.tail_max[i]:.17g}"]
            if self.mode == "monte_carlo":
                hi = self.tail_max[i] + (self.ci_half[i] if self.ci_half is not None else 0.0)
                row.append(f"{hi:.17g}")
            if include_pairs and self.per_pair is not None:
                row += [f"{v:.17g}" for v in self.per_pair[i]]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Validation of the three coupling conditions


def validate_coupling(C: CouplingMatrix) -> ValidationReport:
    """Check column-stochasticity plus the three coupling conditions.

    Report-style: lists each violated condition with the worst offending
    indices and magnitudes; ``valid`` iff everything holds within 1e-12.
    """
    n = C.n
    E = C.as_4tensor()
    P = C.base.entries
    issues = []
    details = {}

    colsums = C.entries.sum(axis=0)
    dev = np.abs(colsums - 1.0)
    details["stochastic"] = float(dev.max()) <= ATOL_INPUT
    if not details["stochastic"]:
        j = int(dev.argmax())
        issues.append(
            f"column idx({j // n},{j % n}) sums to {colsums[j]:.12g} (not stochastic)"
        )

    # Condition 1: marginals reproduce P in both components.
    marg_x = E.sum(axis=1)  # (x', x, y)
    err_x = np.abs(marg_x - P[:, :, None])
    marg_y = E.sum(axis=0)  # (y', x, y)
    err_y = np.abs(marg_y - P[:, None, :])
    worst1 = max(float(err_x.max()), float(err_y.max()))
    details["marginals"] = worst1 <= ATOL_INPUT
    if not details["marginals"]:
        if err_x.max() >= err_y.max():
            i = np.unravel_index(err_x.argmax(), err_x.shape)
            issues.append(
                f"condition 1 (x-marginal) violated at (x'={i[0]}, x={i[1]}, y={i[2]}) "
                f"by {err_x.max():.3g}"
            )
        else:
            i = np.unravel_index(err_y.argmax(), err_y.shape)
            issues.append(
                f"condition 1 (y-marginal) violated at (y'={i[0]}, x={i[1]}, y={i[2]}) "
                f"by {err_y.max():.3g}"
            )

    # Condition 2: diagonal starts stay diagonal and follow P.
    diag_block = E[:, :, np.arange(n), np.arange(n)]  # (x', y', x)
    off_mask = ~np.eye(n, dtype=bool)
    leak = np.abs(diag_block[off_mask, :])
    stay = np.abs(diag_block[np.arange(n), np.arange(n), :] - P)
    worst2 = max(float(leak.max(initial=0.0)), float(stay.max()))
    details["coalescence"] = worst2 <= ATOL_INPUT
    if not details["coalescence"]:
        issues.append(f"condition 2 (coalescence) violated by {worst2:.3g}")

    # Condition 3: symmetry under exchanging the two components.
    asym = np.abs(E - E.transpose(1, 0, 3, 2))
    details["symmetry"] = float(asym.max()) <= ATOL_INPUT
    if not details["symmetry"]:
        i = np.unravel_index(asym.argmax(), asym.shape)
        issues.append(
            f"condition 3 (symmetry) violated at (x'={i[0]}, y'={i[1]}, x={i[2]}, "
            f"y={i[3]}) by {asym.max():.3g}"
        )

    valid = all(details.values())
    return ValidationReport(valid=valid, issues=issues, details=details)


def require_valid_coupling(C: CouplingMatrix):
    report = validate_coupling(C)
    if not report.valid:
        raise InvalidInputError("invalid coupling: " + "; ".join(report.issues))


# ---------------------------------------------------------------------------
# Constructions


def independent_coupling(P: TransitionMatrix) -> CouplingMatrix:
    """Independent coupling: run both components independently until they meet."""
    if not validate_chain(P).details["ergodic"]:
        raise NonErgodicError("independent coupling requires an ergodic base chain")
    n = P.n
    E = P.entries[:, None, :, None] * P.entries[None, :, None, :]
    diag = np.arange(n)
    E[:, :, diag, diag] = 0.0  # clear x == y columns, then set diagonal-to-diagonal
    xp, x = np.meshgrid(diag, diag, indexing="ij")
    E[xp, xp, x, x] = P.entries
    return CouplingMatrix(base=P, entries=E.reshape(n * n, n * n))


def grand_coupling_matrix(rmr: RandomMappingRep) -> CouplingMatrix:
    """Grand coupling: both components driven by the same randomness draw."""
    if rmr.base is None:
        raise InvalidInputError("grand coupling matrix requires a mapping with a base chain")
    n = rmr.n
    E = np.zeros((n, n, n, n))
    x = np.arange(n)
    for r in range(rmr.n_r):
        succ = rmr.table[:, r]
        E[succ[:, None], succ[None, :], x[:, None], x[None, :]] += rmr.probs[r]
    C = CouplingMatrix(base=rmr.base, entries=E.reshape(n * n, n * n))
    report = validate_coupling(C)
    if not report.valid:
        raise InvalidInputError(
            "grand coupling failed the coupling conditions: " + "; ".join(report.issues)
        )
    return C


# ---------------------------------------------------------------------------
# Coalescence tails


def _offdiag_mask(n: int) -> np.ndarray:
    mask = np.ones(n * n, dtype=bool)
    mask[np.arange(n) * n + np.arange(n)] = False
    return mask


def _offdiag_pairs(n: int) -> list[tuple[int, int]]:
    return [(x, y) for x in range(n) for y in range(n) if x != y]


def coalescence_tail_exact(
    C: CouplingMatrix,
    m_max: int,
    guard_n: int = EXACT_GUARD_N,
    expected_time: bool = False,
    expectation_tol: float = 1e-15,
    expectation_cap: int = 100_000,
) -> CoalescenceReport:
    """Exact tails Pr_{x,y}{tau_coal > m} for all start pairs and m <= m_max.

    The tail at m for start pair (x, y) equals the column sum of C^m over
    off-diagonal pair rows, computed for all starts at once by iterating the
    off-diagonal indicator row vector (never forming C^m). With
    ``expected_time`` the tails are summed past m_max until they fall below
    ``expectation_tol``, giving E[tau_coal] with a stated truncation.
    """
    n = C.n
    if n > guard_n:
        raise GuardExceededError(
            f"exact mode guarded at N <= {guard_n}; N = {n}. Use coalescence_tail_mc."
        )
    require_valid_coupling(C)
    if m_max < 0:
        raise InvalidInputError("m_max must be nonnegative")
    off = _offdiag_mask(n)
    pairs = _offdiag_pairs(n)
    pair_cols = [pair_index(x, y, n) for x, y in pairs]

    v = off.astype(float)  # v C^m gives all tails at time m simultaneously
    per_pair = np.empty((m_max + 1, len(pairs)))
    for m in range(m_max + 1):
        per_pair[m] = v[pair_cols]
        if m > 0:
            if np.any(per_pair[m] > per_pair[m - 1] + ATOL_INPUT):
                raise AssertionError(f"exact tails increased at m={m}")
        if m < m_max:
            v = v @ C.entries

    tail_max = per_pair.max(axis=1) if pairs else np.zeros(m_max + 1)
    t_couple = None
    crossing = np.nonzero(tail_max <= COUPLING_THRESHOLD)[0]
    if crossing.size:
        t_couple = int(crossing[0])

    e_tau_max = None
    truncation = None
    if expected_time:
        # E[tau] = sum_{m >= 0} Pr{tau > m}; truncate when the tail is exhausted.
        total = per_pair.sum(axis=0)
        tails = per_pair[-1].copy()
        m = m_max
        while tails.max(initial=0.0) > expectation_tol and m < expectation_cap:
            v = v @ C.entries
            tails = v[pair_cols]
            total += tails
            m += 1
        e_tau_max = float(total.max(initial=0.0))
        truncation = m

    return CoalescenceReport(
        mode="exact",
        m_values=np.arange(m_max + 1),
        tail_max=tail_max,
        pairs=pairs,
        per_pair=per_pair,
        t_couple=t_couple,
        expected_time_max=e_tau_max,
        expected_time_truncation=truncation,
    )


def _draw_randomness(probs: np.ndarray, samples: int, m_max: int, seed: int, pair_slot: int):
    """Counter-based randomness: Philox keyed by (seed, pair_slot).

    Trajectory t uses row t of the returned (samples, m_max) index array, so
    results are independent of how trajectories are scheduled across workers.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(pair_slot,))
    gen = np.random.Generator(np.random.Philox(ss))
    u = gen.random((samples, m_max))
    cum = np.cumsum(probs)
    cum[-1] = 1.0  # guard rounding at the top end
    return np.searchsorted(cum, u, side="right").astype(np.int64)


def coalescence_tail_mc(
    rmr: RandomMappingRep,
    start_pairs: list[tuple[int, int]],
    m_grid: list[int],
    samples: int,
    seed: int,
    workers: int = 1,
    backend: str | None = None,
) -> CoalescenceReport:
    """Monte Carlo tails with normal-approximation 95% CIs.

    Deterministic given (seed, samples): the per-trajectory randomness is
    precomputed from a Philox stream keyed by (seed, start-pair slot), so the
    result is byte-identical for any worker count.
    """
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    if not start_pairs or not list(m_grid):
        raise InvalidInputError("start_pairs and m_grid must be nonempty")
    grid = np.array(sorted(set(int(m) for m in m_grid)), dtype=np.int64)
    if grid[0] < 0:
        raise InvalidInputError("m_grid entries must be nonnegative")
    m_max = int(grid[-1])
    n = rmr.n
    for x, y in start_pairs:
        if not (0 <= x < n and 0 <= y < n):
            raise InvalidInputError(f"start pair ({x}, {y}) out of range")

    per_pair = np.empty((len(grid), len(start_pairs)))
    for slot, (x0, y0) in enumerate(start_pairs):
        r_idx = _draw_randomness(rmr.probs, samples, m_max, seed, slot)
        counts = np.zeros(len(grid), dtype=np.int64)
        workers = max(1, int(workers))
        bounds = np.linspace(0, samples, workers + 1, dtype=int)
        for w in range(workers):
            chunk = r_idx[bounds[w] : bounds[w + 1]]
            if chunk.shape[0]:
                counts += coalescence_counts(rmr.table, chunk, x0, y0, grid, backend=backend)
        per_pair[:, slot] = counts / samples

    tail_max = per_pair.max(axis=1)
    ci_half = np.maximum(
        1.96 * np.sqrt(tail_max * (1.0 - tail_max) / samples), 3.0 / samples
    )
    t_couple = None
    ok = np.nonzero(tail_max + ci_half <= COUPLING_THRESHOLD)[0]
    if ok.size:
        t_couple = int(grid[ok[0]])
    return CoalescenceReport(
        mode="monte_carlo",
        m_values=grid,
        tail_max=tail_max,
        pairs=[tuple(p) for p in start_pairs],
        per_pair=per_pair,
        samples=samples,
        seed=seed,
        ci_half=ci_half,
        t_couple=t_couple,
    )


def coupling_time(report: CoalescenceReport) -> int:
    """Smallest m with max tail <= 1/4; in MC mode the CI upper bound must cross."""
    if report.t_couple is not None:
        return report.t_couple
    if report.mode == "monte_carlo":
        straddling = np.any(
            (report.tail_max <= COUPLING_THRESHOLD)
            & (report.tail_max + report.ci_half > COUPLING_THRESHOLD)
        )
        if straddling:
            raise ThresholdNotReachedError(
                "threshold not resolved: CI straddles 1/4 at every candidate m"
            )
    raise ThresholdNotReachedError(
        f"tail never crossed {COUPLING_THRESHOLD} within the computed range "
        f"(last tail {report.tail_max[-1]:.6g} at m={int(report.m_values[-1])})"
    )


def check_tail_submultiplicativity(C: CouplingMatrix, m: int, l: int) -> CheckResult:
    """Pr_max{tau > l*m} <= (Pr_max{tau > m})^l, plus the block-structure identity.

    Also verifies that C^m restricted to the diagonal block equals P^m (once the
    components meet they stay together forever).
    """
    if m < 0 or l < 1:
        raise InvalidInputError("need m >= 0 and l >= 1")
    report = coalescence_tail_exact(C, m_max=m * l)
    lhs = report.tail_at(m * l)
    rhs = float(report.tail_at(m) ** l)
    n = C.n
    # C^m restricted to diagonal-pair columns, via column iteration (no C^m formed)
    diag_idx = np.arange(n) * n + np.arange(n)
    V = np.zeros((n * n, n))
    V[diag_idx, np.arange(n)] = 1.0
    Pm = np.eye(n)
    for _ in range(m):
        V = C.entries @ V
        Pm = C.base.entries @ Pm
    diag_block = V[diag_idx, :]
    block_err = float(np.max(np.abs(diag_block - Pm)))
    passed = lhs <= rhs + ATOL_COMPUTED and block_err <= ATOL_INPUT
    return CheckResult(
        name="tail_submultiplicativity",
        passed=passed,
        lhs=lhs,
        rhs=rhs,
        tolerance=ATOL_COMPUTED,
        details={"m": m, "l": l, "diag_block_error": block_err},
    )


def mixing_vs_coalescence_bound(P: TransitionMatrix, report: CoalescenceReport) -> dict:
    """Report (not gate) the classical bound t_mix <= 4 * max E[tau_coal]."""
    from qcoupling.chain import mixing_report

    if report.expected_time_max is None:
        raise InvalidInputError("report lacks expected coalescence time")
    mix = mixing_report(P, (0.25,))
    return {
        "t_mix": mix.t_mix[0.25],
        "four_expected_tau_max": 4.0 * report.expected_time_max,
        "expectation_truncated_at": report.expected_time_truncation,
        "holds": mix.t_mix[0.25] <= 4.0 * report.expected_time_max + ATOL_COMPUTED,
    }


# ---------------------------------------------------------------------------
# JSON interface


def coupling_to_json_dict(C: CouplingMatrix) -> dict:
    return {"kind": "dense", "C": C.entries.tolist()}


def rmr_to_json_dict(rmr: RandomMappingRep) -> dict:
    return {
        "kind": "rmr",
        "R": [
            {"label": lab, "prob": float(p)} for lab, p in zip(rmr.r_labels, rmr.probs)
        ],
        "f": rmr.table.T.tolist(),  # one successor row per r
    }


def coupling_from_json_dict(doc: dict, base: TransitionMatrix | None = None):
    """Load either a dense CouplingMatrix or a RandomMappingRep.

    If ``base`` is omitted it is reconstructed: for dense couplings from the
    diagonal-to-diagonal block (condition 2), for mappings from the induced
    marginal, with generic integer labels.
    """
    if not isinstance(doc, dict) or "kind" not in doc:
        raise InvalidInputError("coupling JSON must be an object with a 'kind' field")
    kind = doc["kind"]
    if kind == "dense":
        entries = np.array(doc["C"], dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InvalidInputError("field 'C' must be a square nested array")
        n2 = entries.shape[0]
        n = int(round(np.sqrt(n2)))
        if n * n != n2:
            raise InvalidInputError(f"field 'C' has side {n2}, not a perfect square")
        if base is None:
            diag_idx = np.arange(n) * n + np.arange(n)
            P = entries[np.ix_(diag_idx, diag_idx)]
            base = TransitionMatrix(tuple(str(i) for i in range(n)), P)
        return CouplingMatrix(base=base, entries=entries)
    if kind == "rmr":
        rs = doc["R"]
        table = np.array(doc["f"], dtype=np.int64).T
        labels = tuple(str(r["label"]) for r in rs)
        probs = np.array([r["prob"] for r in rs], dtype=float)
        if base is None:
            n = table.shape[0]
            induced = np.zeros((n, n))
            cols = np.arange(n)
            for r in range(len(labels)):
                induced[table[:, r], cols] += probs[r]
            base = TransitionMatrix(tuple(str(i) for i in range(n)), induced)
        return RandomMappingRep(base=base, r_labels=labels, probs=probs, table=table)
    raise InvalidInputError(f"unknown coupling kind {kind!r}")


def read_coupling_json(path, base: TransitionMatrix | None = None):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    try:
        return coupling_from_json_dict(doc, base=base)
    except InvalidInputError as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc


def write_coupling_json(obj, path):
    doc = rmr_to_json_dict(obj) if isinstance(obj, RandomMappingRep) else coupling_to_json_dict(obj)
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
