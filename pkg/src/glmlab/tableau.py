"""Data model for general linear methods (GLMs).

A k-step, s-stage GLM advances a history of steps ``u^{n-k+1}, ..., u^n``
(stored oldest first throughout this package) by

    y_i     = sum_l D[i,l] u^{n-k+l} + dt * sum_l Ahat[i,l] F(u^{n-k+l})
                                     + dt * sum_j A[i,j] F(y_j)
    u^{n+1} = sum_l Theta[l] u^{n-k+l} + dt * sum_l bhat[l] F(u^{n-k+l})
                                       + dt * sum_j b[j] F(y_j).

For order and stability analysis the method is converted to a compact form
in which the first k-1 stages are copies of the old steps, giving the
(s+k-1)-square matrix ``Atilde``, the (s+k-1) x k matrix ``Dtilde`` and the
weight vector ``btilde = [bhat, b]``.

``BlockGlm`` covers the one exotic shape in the catalog: a method that
advances a whole window of values at non-uniformly spaced offsets (each
macro-step maps the window to a new window shifted by dt).  Both compact
and block forms expose ``propagation_parts()`` returning the one-step map

    stages Y = U X + dt * A F(Y),      X_new = V X + dt * B F(Y)

with input offsets ``ell`` and output offsets ``ell + 1``, which is the
common currency of the analysis modules.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np


class StructureError(ValueError):
    """A tableau block has inconsistent dimensions or forbidden structure."""


def _as_matrix(x, rows, cols, block, name):
    a = np.asarray(x, dtype=float)
    if a.size == 0:
        a = np.zeros((rows, cols))
    a = np.atleast_2d(a)
    if a.shape != (rows, cols):
        raise StructureError(
            f"{name}: block {block} has shape {a.shape}, expected {(rows, cols)}")
    a.setflags(write=False)
    return a


def _as_vector(x, n, block, name):
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.size == 0 and n > 0:
        a = np.zeros(n)
    if a.shape != (n,):
        raise StructureError(
            f"{name}: block {block} has length {a.size}, expected {n}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GlmTableau:
    """Coefficient blocks of a k-step, s-stage general linear method."""

    k: int
    s: int
    A: np.ndarray
    Ahat: np.ndarray
    D: np.ndarray
    Theta: np.ndarray
    b: np.ndarray
    bhat: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.k < 1 or self.s < 1:
            raise StructureError(f"{self.name}: need k >= 1 and s >= 1")
        object.__setattr__(self, "A", _as_matrix(self.A, self.s, self.s, "A", self.name))
        object.__setattr__(self, "Ahat", _as_matrix(self.Ahat, self.s, self.k - 1, "Ahat", self.name))
        object.__setattr__(self, "D", _as_matrix(self.D, self.s, self.k, "D", self.name))
        object.__setattr__(self, "Theta", _as_vector(self.Theta, self.k, "Theta", self.name))
        object.__setattr__(self, "b", _as_vector(self.b, self.s, "b", self.name))
        object.__setattr__(self, "bhat", _as_vector(self.bhat, self.k - 1, "bhat", self.name))

    def renamed(self, name):
        return replace(self, name=name)

    def coefficients_close(self, other, tol=1e-14):
        """True if both tableaux have the same shape and entries within tol."""
        if (self.k, self.s) != (other.k, other.s):
            return False
        return all(
            np.allclose(getattr(self, f), getattr(other, f), rtol=0.0, atol=tol)
            for f in ("A", "Ahat", "D", "Theta", "b", "bhat"))

    def to_json_dict(self):
        return {
            "name": self.name,
            "k": self.k,
            "s": self.s,
            "A": self.A.tolist(),
            "Ahat": self.Ahat.tolist(),
            "D": self.D.tolist(),
            "Theta": self.Theta.tolist(),
            "b": self.b.tolist(),
            "bhat": self.bhat.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data):
        k, s = int(data["k"]), int(data["s"])
        return cls(
            k=k,
            s=s,
            A=data["A"],
            Ahat=data.get("Ahat", np.zeros((s, k - 1))),
            D=data["D"],
            Theta=data["Theta"],
            b=data["b"],
            bhat=data.get("bhat", np.zeros(k - 1)),
            name=data.get("name", ""),
        )


@dataclass(frozen=True)
class CompactGlm:
    """Compact form: old steps embedded as trivial leading stages.

    Invariants: the first k-1 rows of Atilde are zero, the top (k-1) x k
    block of Dtilde is [I | 0], and btilde = [bhat, b].
    """

    k: int
    s: int
    Atilde: np.ndarray
    Dtilde: np.ndarray
    btilde: np.ndarray
    Theta: np.ndarray
    name: str = ""

    def __post_init__(self):
        m = self.s + self.k - 1
        object.__setattr__(self, "Atilde", _as_matrix(self.Atilde, m, m, "Atilde", self.name))
        object.__setattr__(self, "Dtilde", _as_matrix(self.Dtilde, m, self.k, "Dtilde", self.name))
        object.__setattr__(self, "btilde", _as_vector(self.btilde, m, "btilde", self.name))
        object.__setattr__(self, "Theta", _as_vector(self.Theta, self.k, "Theta", self.name))
        if self.k > 1:
            if np.any(self.Atilde[: self.k - 1, :] != 0.0):
                raise StructureError(f"{self.name}: Atilde step-copy rows must be zero")
            top = np.hstack([np.eye(self.k - 1), np.zeros((self.k - 1, 1))])
            if np.any(self.Dtilde[: self.k - 1, :] != top):
                raise StructureError(f"{self.name}: Dtilde must start with [I | 0]")

    @property
    def n_values(self):
        """Size of the propagated state vector (the step history)."""
        return self.k

    def propagation_parts(self):
        """One-step map (A, U, B, V, ell, g) over the step-history window."""
        m = self.s + self.k - 1
        V = np.zeros((self.k, self.k))
        B = np.zeros((self.k, m))
        if self.k > 1:
            V[: self.k - 1, 1:] = np.eye(self.k - 1)
        V[self.k - 1, :] = self.Theta
        B[self.k - 1, :] = self.btilde
        ell = -np.arange(self.k - 1, -1, -1, dtype=float)
        return self.Atilde, self.Dtilde, B, V, ell, ell + 1.0


@dataclass(frozen=True)
class BlockGlm:
    """A method advancing a window of k values at the given time offsets.

    Stage equations read the window through D/Ahat and couple through A;
    the new window is T X + dt (Bhat F(X) + B F(Y)).  Offsets are relative
    to the newest window entry and shift by +1 each macro-step.
    """

    k: int
    s: int
    offsets: np.ndarray
    A: np.ndarray
    Ahat: np.ndarray
    D: np.ndarray
    T: np.ndarray
    Bhat: np.ndarray
    B: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "offsets", _as_vector(self.offsets, self.k, "offsets", self.name))
        object.__setattr__(self, "A", _as_matrix(self.A, self.s, self.s, "A", self.name))
        object.__setattr__(self, "Ahat", _as_matrix(self.Ahat, self.s, self.k, "Ahat", self.name))
        object.__setattr__(self, "D", _as_matrix(self.D, self.s, self.k, "D", self.name))
        object.__setattr__(self, "T", _as_matrix(self.T, self.k, self.k, "T", self.name))
        object.__setattr__(self, "Bhat", _as_matrix(self.Bhat, self.k, self.k, "Bhat", self.name))
        object.__setattr__(self, "B", _as_matrix(self.B, self.k, self.s, "B", self.name))
        if self.offsets[-1] != 0.0 or np.any(np.diff(self.offsets) <= 0):
            raise StructureError(f"{self.name}: offsets must increase and end at 0")

    @property
    def n_values(self):
        return self.k

    def propagation_parts(self):
        """Fold the window values in as explicit copy stages."""
        m = self.k + self.s
        A = np.zeros((m, m))
        A[self.k:, : self.k] = self.Ahat
        A[self.k:, self.k:] = self.A
        U = np.vstack([np.eye(self.k), self.D])
        B = np.hstack([self.Bhat, self.B])
        ell = self.offsets
        return A, U, B, self.T, ell, ell + 1.0


@dataclass(frozen=True)
class StepOffsets:
    """Step offsets ell, the ones vector and stage abscissas c = A e + U ell."""

    ell: np.ndarray
    e: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class ConsistencyReport:
    theta_residual: float
    row_residual: float
    tol: float
    passed: bool

    def to_json_dict(self):
        return {
            "theta_residual": self.theta_residual,
            "row_residual": self.row_residual,
            "tol": self.tol,
            "passed": self.passed,
        }


def to_compact(tableau: GlmTableau) -> CompactGlm:
    """Embed the old steps as copy stages; pure placement, no arithmetic."""
    k, s = tableau.k, tableau.s
    m = s + k - 1
    Atilde = np.zeros((m, m))
    Atilde[k - 1:, : k - 1] = tableau.Ahat
    Atilde[k - 1:, k - 1:] = tableau.A
    Dtilde = np.zeros((m, k))
    if k > 1:
        Dtilde[: k - 1, : k - 1] = np.eye(k - 1)
    Dtilde[k - 1:, :] = tableau.D
    btilde = np.concatenate([tableau.bhat, tableau.b])
    return CompactGlm(k=k, s=s, Atilde=Atilde, Dtilde=Dtilde, btilde=btilde,
                      Theta=tableau.Theta, name=tableau.name)


def abscissas(compact) -> StepOffsets:
    """Stage abscissas of a compact or block method."""
    A, U, B, V, ell, g = compact.propagation_parts()
    e = np.ones(A.shape[0])
    c = A @ e + U @ ell
    return StepOffsets(ell=ell, e=e, c=c)


def validate(compact, tol: float) -> ConsistencyReport:
    """Check that step weights and every stage row reproduce constants."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    A, U, B, V, ell, g = compact.propagation_parts()
    ek = np.ones(U.shape[1])
    theta_res = float(np.abs(V @ ek - 1.0).max())
    row_res = float(np.abs(U @ ek - 1.0).max())
    return ConsistencyReport(theta_residual=theta_res, row_residual=row_res,
                             tol=tol, passed=theta_res <= tol and row_res <= tol)


def drop_passive_stages(tableau: GlmTableau) -> GlmTableau:
    """Remove stages whose derivative is never used.

    In tableau form a stage value is only reachable through F(y_j); a stage
    with zero column in A and zero weight in b is therefore inert and can be
    deleted without changing the method.
    """
    keep = [j for j in range(tableau.s)
            if tableau.b[j] != 0.0 or np.any(tableau.A[:, j] != 0.0)]
    if len(keep) == tableau.s:
        return tableau
    if not keep:
        raise StructureError(f"{tableau.name}: all stages are passive")
    keep = np.array(keep)
    return GlmTableau(
        k=tableau.k, s=len(keep),
        A=tableau.A[np.ix_(keep, keep)],
        Ahat=tableau.Ahat[keep],
        D=tableau.D[keep],
        Theta=tableau.Theta,
        b=tableau.b[keep],
        bhat=tableau.bhat,
        name=tableau.name)


def lift_steps(tableau: GlmTableau, k: int) -> GlmTableau:
    """Deepen the step history to k entries by zero-padding the oldest slots."""
    if k < tableau.k:
        raise StructureError(f"{tableau.name}: cannot lift k={tableau.k} down to {k}")
    if k == tableau.k:
        return tableau
    pad = k - tableau.k
    return GlmTableau(
        k=k, s=tableau.s,
        A=tableau.A,
        Ahat=np.hstack([np.zeros((tableau.s, pad)), tableau.Ahat]),
        D=np.hstack([np.zeros((tableau.s, pad)), tableau.D]),
        Theta=np.concatenate([np.zeros(pad), tableau.Theta]),
        b=tableau.b,
        bhat=np.concatenate([np.zeros(pad), tableau.bhat]),
        name=tableau.name)


# ---------------------------------------------------------------------------
# method files

def save_method(method, path):
    with open(path, "w") as fh:
        json.dump(method_to_json_dict(method), fh, indent=2)


def method_to_json_dict(method):
    if isinstance(method, BlockGlm):
        return {
            "name": method.name,
            "form": "block",
            "k": method.k,
            "s": method.s,
            "offsets": method.offsets.tolist(),
            "A": method.A.tolist(),
            "Ahat": method.Ahat.tolist(),
            "D": method.D.tolist(),
            "T": method.T.tolist(),
            "Bhat": method.Bhat.tolist(),
            "B": method.B.tolist(),
        }
    return method.to_json_dict()


def method_from_json_dict(data):
    if data.get("form") == "block":
        return BlockGlm(
            k=int(data["k"]), s=int(data["s"]), offsets=data["offsets"],
            A=data["A"], Ahat=data["Ahat"], D=data["D"],
            T=data["T"], Bhat=data["Bhat"], B=data["B"],
            name=data.get("name", ""))
    return GlmTableau.from_json_dict(data)


def load_method(path):
    with open(path) as fh:
        data = json.load(fh)
    return method_from_json_dict(data)
