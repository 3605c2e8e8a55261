"""Superoperators, Kraus sets, and Choi matrices for quantized couplings.

Vectorization convention (fixed globally): column stacking,
``vec(M)[i + N*j] = M[i, j]``, with left-factor-major tensor products, so that
``vec(A M B) = kron(B.T, A) vec(M)`` and the matrix of the map C* equals the
coupling transition matrix C entrywise. All arithmetic is real double
precision; the maps built here have real matrix representations throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qcoupling.chain import ATOL_COMPUTED, ATOL_INPUT, Distribution
from qcoupling.checks import CheckResult
from qcoupling.coupling import (
    CouplingMatrix,
    RandomMappingRep,
    independent_coupling,
)
from qcoupling.errors import InvalidInputError

CP_TOL_REL = 1e-9  # CP tolerance relative to max |J| entry


def vec(M: np.ndarray) -> np.ndarray:
    """Column-stack M into a vector: vec(M)[i + N*j] = M[i, j]."""
    return np.asarray(M).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    n = int(round(np.sqrt(v.size)))
    if n * n != v.size:
        raise InvalidInputError(f"cannot unvec a length-{v.size} vector")
    return np.asarray(v).reshape(n, n, order="F")


@dataclass
class Superoperator:
    """Linear map on N x N matrices in the column-stacking vectorization.

    ``cp_status`` is one of "unchecked" / "verified" / "failed" and travels
    with the map; apply_channel refuses to label outputs as states unless the
    map is CP-verified.
    """

    dim: int
    matrix: np.ndarray
    kind: str = "generic"
    cp_status: str = "unchecked"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        n2 = self.dim * self.dim
        if m.shape != (n2, n2):
            raise InvalidInputError(f"superoperator matrix must be {n2}x{n2}")

    def apply(self, M: np.ndarray) -> np.ndarray:
        M = np.asarray(M, dtype=float)
        if M.shape != (self.dim, self.dim):
            raise InvalidInputError(
                f"dimension mismatch: map dim {self.dim}, matrix shape {M.shape}"
            )
        return unvec(self.matrix @ vec(M))

    def adjoint(self) -> "Superoperator":
        """Hilbert-Schmidt adjoint (transpose of the matrix; real case)."""
        return Superoperator(self.dim, self.matrix.T, kind=self.kind + "_adjoint",
                             cp_status=self.cp_status)


@dataclass
class KrausSet:
    """Kraus operators of a channel rho -> sum_r T_r rho T_r^T."""

    dim: int
    ops: list[np.ndarray]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        ops = [np.asarray(T, dtype=float) for T in self.ops]
        object.__setattr__(self, "ops", ops)
        if not ops:
            raise InvalidInputError("Kraus set must be nonempty")
        for T in ops:
            if T.shape != (self.dim, self.dim):
                raise InvalidInputError("all Kraus operators must be dim x dim")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(len(ops))))
        total = sum(T.T @ T for T in ops)
        err = np.max(np.abs(total - np.eye(self.dim)))
        if err > ATOL_COMPUTED:
            raise InvalidInputError(
                f"Kraus condition sum T_r^T T_r = I violated by {err:.3g}"
            )

    def apply(self, M: np.ndarray) -> np.ndarray:
        M = np.asarray(M, dtype=float)
        if M.shape != (self.dim, self.dim):
            raise InvalidInputError("dimension mismatch in Kraus application")
        return sum(T @ M @ T.T for T in self.ops)


@dataclass
class ChoiMatrix:
    """Choi-Jamiolkowski matrix with either tensor-factor order.

    ``order`` is "map_first" (J = sum S(E_xy) (x) E_xy) or "basis_first"
    (J = sum E_xy (x) S(E_xy)); the two are related by the tensor-swap
    permutation and share their spectrum.
    """

    dim: int
    matrix: np.ndarray
    order: str = "map_first"
    _spectrum: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        n2 = self.dim * self.dim
        if m.shape != (n2, n2):
            raise InvalidInputError(f"Choi matrix must be {n2}x{n2}")
        if self.order not in ("map_first", "basis_first"):
            raise InvalidInputError(f"unknown factor order {self.order!r}")

    @property
    def eigenvalues(self) -> np.ndarray:
        if self._spectrum is None:
            asym = np.max(np.abs(self.matrix - self.matrix.T))
            if asym > ATOL_COMPUTED:
                raise InvalidInputError(f"Choi matrix asymmetric by {asym:.3g}")
            object.__setattr__(
                self, "_spectrum", np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T))
            )
        return self._spectrum

    def swapped(self) -> "ChoiMatrix":
        """Same map in the other factor order (tensor-swap permutation)."""
        n = self.dim
        other = "basis_first" if self.order == "map_first" else "map_first"
        m4 = self.matrix.reshape(n, n, n, n).transpose(1, 0, 3, 2)
        return ChoiMatrix(n, m4.reshape(n * n, n * n), order=other)


# ---------------------------------------------------------------------------
# Constructions


def c_star_superop(C: CouplingMatrix) -> Superoperator:
    """Superoperator of C*(M) = sum c_{(x',y'),(x,y)} |x'><x| M |y><y'|.

    Built elementwise from the map definition. For symmetric couplings the
    resulting matrix equals C entrywise; asymmetric inputs are rejected
    because the identity (and everything downstream) breaks without
    condition 3.
    """
    n = C.n
    E = C.as_4tensor()
    asym = np.max(np.abs(E - E.transpose(1, 0, 3, 2)))
    if asym > ATOL_INPUT:
        raise InvalidInputError(
            f"coupling violates the symmetry condition by {asym:.3g}; "
            "the vectorized identity matrix(C*) = C requires it"
        )
    # Row index of the output entry (x', y') is x' + N*y'; reshape row-major
    # therefore orders axes (y', x', y, x).
    S = E.transpose(1, 0, 3, 2).reshape(n * n, n * n)
    return Superoperator(dim=n, matrix=S, kind="C*")


def quantized_coupling(
    C: CouplingMatrix, pi: Distribution
) -> tuple[Superoperator, Superoperator]:
    """Quantized coupling (T, T*) via the similarity transform by D = diag(pi).

    T*(M) = D^{-1/2} C*(D^{1/2} M D^{1/2}) D^{-1/2}; T is the Hilbert-Schmidt
    adjoint. Verifies T*(I) = I and that the qsample projector is fixed by T.
    """
    n = C.n
    if pi.n != n:
        raise InvalidInputError("distribution length does not match coupling dimension")
    if pi.weights.min() <= 0:
        raise InvalidInputError("pi must be strictly positive (ergodicity guarantees this)")
    s = np.sqrt(np.outer(pi.weights, pi.weights)).reshape(-1, order="F")
    S_c = c_star_superop(C).matrix
    S_tstar = S_c * (s[None, :] / s[:, None])
    T_star = Superoperator(dim=n, matrix=S_tstar, kind="T*")
    T = Superoperator(dim=n, matrix=S_tstar.T, kind="T")

    err_tp = np.max(np.abs(T_star.apply(np.eye(n)) - np.eye(n)))
    if err_tp > ATOL_COMPUTED:
        raise InvalidInputError(f"T*(I) = I violated by {err_tp:.3g}")
    amp = np.sqrt(pi.weights)
    Q = np.outer(amp, amp)
    err_fp = np.max(np.abs(T.apply(Q) - Q))
    if err_fp > ATOL_COMPUTED:
        raise InvalidInputError(f"qsample fixed point violated by {err_fp:.3g}")
    return T, T_star


def kraus_from_grand(rmr: RandomMappingRep, pi: Distribution) -> KrausSet:
    """Kraus operators T_r = sqrt(Pr(r)) sum_x D^{1/2} |x><f(x,r)| D^{-1/2}."""
    n = rmr.n
    if pi.n != n:
        raise InvalidInputError("distribution length does not match mapping dimension")
    if pi.weights.min() <= 0:
        raise InvalidInputError("pi must be strictly positive")
    d = np.sqrt(pi.weights)
    ops = []
    rows = np.arange(n)
    for r in range(rmr.n_r):
        T = np.zeros((n, n))
        succ = rmr.table[:, r]
        T[rows, succ] = np.sqrt(rmr.probs[r]) * d / d[succ]
        ops.append(T)
    return KrausSet(dim=n, ops=ops, labels=rmr.r_labels)


def superop_from_kraus(ks: KrausSet) -> Superoperator:
    """Superoperator matrix of the Kraus channel: sum_r kron(T_r, T_r)."""
    S = sum(np.kron(T, T) for T in ks.ops)
    return Superoperator(dim=ks.dim, matrix=S, kind="T_from_kraus", cp_status="verified")


def choi_matrix(S: Superoperator, order: str = "map_first") -> ChoiMatrix:
    """Choi matrix assembled from S applied to the matrix units E_xy."""
    n = S.dim
    # S[i + N*j, x + N*y] = S(E_xy)[i, j]; reshape axes are (j, i, y, x).
    S4 = S.matrix.reshape(n, n, n, n)
    if order == "map_first":
        J = S4.transpose(1, 3, 0, 2).reshape(n * n, n * n)
    elif order == "basis_first":
        J = S4.transpose(3, 1, 2, 0).reshape(n * n, n * n)
    else:
        raise InvalidInputError(f"unknown factor order {order!r}")
    return ChoiMatrix(dim=n, matrix=J, order=order)


def min_choi_eigenvalue(J: ChoiMatrix, cp_tol_rel: float = CP_TOL_REL) -> float:
    """Smallest Choi eigenvalue (symmetric eigensolver).

    Raises if J is asymmetric beyond 1e-10. The companion CP verdict is
    exposed through :func:`is_completely_positive` with the scale-free
    tolerance ``cp_tol_rel * max|J|``.
    """
    return float(J.eigenvalues[0])


def is_completely_positive(J: ChoiMatrix, cp_tol_rel: float = CP_TOL_REL) -> bool:
    tol = cp_tol_rel * max(np.max(np.abs(J.matrix)), 1e-300)
    return min_choi_eigenvalue(J) >= -tol


def verify_cp(S: Superoperator, cp_tol_rel: float = CP_TOL_REL) -> ChoiMatrix:
    """Compute the Choi matrix and stamp S.cp_status accordingly."""
    J = choi_matrix(S)
    S.cp_status = "verified" if is_completely_positive(J, cp_tol_rel) else "failed"
    return J


def apply_channel(channel, rho):
    """Apply a Superoperator or KrausSet to a state.

    For CP-verified maps (Kraus sets are CP by construction) the output is
    returned as a validated DensityMatrix; for analysis maps that are not
    CP-verified, the raw output matrix is returned instead and positivity is
    not asserted.
    """
    from qcoupling.evolve import DensityMatrix

    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=float)
    if isinstance(channel, KrausSet):
        out = channel.apply(mat)
        return DensityMatrix(out) if isinstance(rho, DensityMatrix) else out
    if isinstance(channel, Superoperator):
        out = channel.apply(mat)
        if channel.cp_status == "verified" and isinstance(rho, DensityMatrix):
            return DensityMatrix(out)
        return out
    raise InvalidInputError(f"unsupported channel type {type(channel).__name__}")


def independent_choi_structure_check(P) -> CheckResult:
    """Verify the Choi decomposition of the independent coupling.

    J(C*) = sum_{x,y} |p_x><p_y| (x) |x><y|
            + sum_x (diag(p_x) - |p_x><p_x|) (x) |x><x|,
    with each correction block diagonally dominant with nonnegative diagonal.
    """
    C = independent_coupling(P)
    J = choi_matrix(c_star_superop(C), order="map_first").matrix
    n = P.n
    cols = P.entries  # |p_x> are the columns of P
    J_dec = np.zeros((n, n, n, n))  # axes (i, x, j, y), built from the decomposition

    for x in range(n):
        for y in range(n):
            J_dec[:, x, :, y] += np.outer(cols[:, x], cols[:, y])
    dominant = True
    for x in range(n):
        block = np.diag(cols[:, x]) - np.outer(cols[:, x], cols[:, x])
        J_dec[:, x, :, x] += block
        offsums = np.abs(block).sum(axis=1) - np.abs(np.diag(block))
        if np.any(np.diag(block) < -ATOL_INPUT) or np.any(
            np.diag(block) + ATOL_INPUT < offsums
        ):
            dominant = False
    err = float(np.max(np.abs(J - J_dec.reshape(n * n, n * n))))
    passed = err <= ATOL_INPUT and dominant
    return CheckResult(
        name="independent_choi_structure",
        passed=passed,
        lhs=err,
        rhs=0.0,
        tolerance=ATOL_INPUT,
        details={"diagonally_dominant": dominant},
    )


# ---------------------------------------------------------------------------
# Export helpers


def matrix_to_csv(matrix: np.ndarray, header: str) -> str:
    lines = [header]
    for row in np.asarray(matrix):
        lines.append(",".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def choi_to_json_dict(J: ChoiMatrix) -> dict:
    return {"dim": J.dim, "order": J.order, "J": J.matrix.tolist()}


def kraus_to_json_dict(ks: KrausSet) -> dict:
    return {
        "dim": ks.dim,
        "labels": list(ks.labels),
        "ops": [T.tolist() for T in ks.ops],
    }
