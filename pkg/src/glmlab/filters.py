"""Pre/post time filters and the tableau they induce around a core method.

A pre-filter replaces the newest step u^n by a consistent combination
y_1 = sum_l d1[l] u^{n-k+l} before the core solver runs; a post-filter
replaces the update row.  Wrapping a core method (first stage = copy of
u^n, update = last stage) in such filters yields another GLM: the first
stage row becomes d1, every other stage's step weights transform as

    d[i,l] = dcheck[i,k] * d1[l] + dcheck[i,l]   (l < k)
    d[i,k] = dcheck[i,k] * d1[k]

because the slot that held u^n now holds y_1, while the derivative weights
A and Ahat are untouched.  Post-filter coefficients are free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tableau import GlmTableau, StructureError, lift_steps

_CONSISTENCY_TOL = 1e-12


@dataclass(frozen=True)
class PreFilter:
    """First-stage replacement row.

    Either built directly from the row ``d1`` or from a fluctuation stencil
    (alpha, dhat) via d1 = e_k - (alpha/2) dhat, where e_k selects u^n.
    """

    d1: np.ndarray
    alpha: float = None
    dhat: np.ndarray = None

    def __post_init__(self):
        d1 = np.asarray(self.d1, dtype=float).reshape(-1)
        d1.setflags(write=False)
        object.__setattr__(self, "d1", d1)
        if self.dhat is not None:
            dh = np.asarray(self.dhat, dtype=float).reshape(-1)
            dh.setflags(write=False)
            object.__setattr__(self, "dhat", dh)

    @property
    def k(self):
        return self.d1.size

    @classmethod
    def identity(cls, k):
        d1 = np.zeros(k)
        d1[-1] = 1.0
        return cls(d1=d1)

    @classmethod
    def from_stencil(cls, alpha, dhat):
        dhat = np.asarray(dhat, dtype=float).reshape(-1)
        d1 = -0.5 * alpha * dhat
        d1[-1] += 1.0
        return cls(d1=d1, alpha=float(alpha), dhat=dhat)

    def is_consistent(self, tol=_CONSISTENCY_TOL):
        return abs(self.d1.sum() - 1.0) <= tol


@dataclass(frozen=True)
class PostFilter:
    """Replacement update row, in one of three equivalent notations.

    glm form:     explicit (theta, bhat, b) with b weighting dt*F(y_j).
    stage form:   theta weights on steps plus weights on stage *values*;
                  resolved by substituting the stage equations.
    stencil form: u^{n+1} = y_s - (omega/2) sum_l qhat[l] u^{n-k+l}.
    """

    kind: str
    theta: np.ndarray = None
    bhat: np.ndarray = None
    b: np.ndarray = None
    stage_weights: np.ndarray = None
    omega: float = None
    qhat: np.ndarray = None

    def __post_init__(self):
        for f in ("theta", "bhat", "b", "stage_weights", "qhat"):
            v = getattr(self, f)
            if v is not None:
                a = np.asarray(v, dtype=float).reshape(-1)
                a.setflags(write=False)
                object.__setattr__(self, f, a)

    @classmethod
    def glm(cls, theta, bhat=None, b=None):
        return cls(kind="glm", theta=theta, bhat=bhat, b=b)

    @classmethod
    def from_stage_weights(cls, theta, stage_weights):
        return cls(kind="stage", theta=theta, stage_weights=stage_weights)

    @classmethod
    def from_stencil(cls, omega, qhat):
        return cls(kind="stencil", omega=float(omega), qhat=qhat)

    def resolve(self, k, s, D, Ahat, A):
        """Return (theta, bhat, b) against the given (filtered) stage rows."""
        if self.kind == "glm":
            theta = self.theta
            bhat = self.bhat if self.bhat is not None else np.zeros(k - 1)
            b = self.b if self.b is not None else np.zeros(s)
            if theta.size != k or bhat.size != k - 1 or b.size != s:
                raise StructureError("post-filter dimensions do not match k, s")
            return np.array(theta), np.array(bhat), np.array(b)
        if self.kind == "stencil":
            w = np.zeros(s)
            w[-1] = 1.0
            theta0 = -0.5 * self.omega * self.qhat
        else:
            w = self.stage_weights
            theta0 = self.theta
        if theta0.size != k or w.size != s:
            raise StructureError("post-filter dimensions do not match k, s")
        theta = theta0 + w @ D
        bhat = w @ Ahat if k > 1 else np.zeros(0)
        b = w @ A
        return theta, bhat, b


@dataclass(frozen=True)
class CoreMethod:
    """A method in core form: stage 1 copies u^n and the update is stage s."""

    tableau: GlmTableau

    def __post_init__(self):
        t = self.tableau
        copy_row = np.zeros(t.k)
        copy_row[-1] = 1.0
        if t.s < 1 or not np.array_equal(t.D[0], copy_row) or np.any(t.A[0] != 0.0) \
                or np.any(t.Ahat[0] != 0.0):
            raise StructureError(f"{t.name}: first stage must copy u^n")
        if not (np.array_equal(t.Theta, t.D[-1]) and np.array_equal(t.b, t.A[-1])
                and np.array_equal(t.bhat, t.Ahat[-1])):
            raise StructureError(f"{t.name}: update must duplicate the last stage")

    @property
    def k(self):
        return self.tableau.k

    @property
    def s(self):
        return self.tableau.s

    @classmethod
    def from_tableau(cls, tableau: GlmTableau, steps: int = None):
        """Lift any tableau into core form, optionally deepening the history."""
        t = lift_steps(tableau, steps) if steps else tableau
        k, s = t.k, t.s
        copy_row = np.zeros(k)
        copy_row[-1] = 1.0
        has_copy = (np.array_equal(t.D[0], copy_row)
                    and not np.any(t.A[0]) and not np.any(t.Ahat[0]))
        if not has_copy:
            A = np.zeros((s + 1, s + 1))
            A[1:, 1:] = t.A
            D = np.vstack([copy_row, t.D])
            Ahat = np.vstack([np.zeros(k - 1), t.Ahat])
            t = GlmTableau(k=k, s=s + 1, A=A, Ahat=Ahat, D=D,
                           Theta=t.Theta, b=np.concatenate([[0.0], t.b]),
                           bhat=t.bhat, name=t.name)
        # force update = last stage
        t = GlmTableau(k=t.k, s=t.s, A=t.A, Ahat=t.Ahat, D=t.D,
                       Theta=t.D[-1], b=t.A[-1], bhat=t.Ahat[-1], name=t.name)
        return cls(tableau=t)


def apply_filters(core: CoreMethod, pre: PreFilter = None, post: PostFilter = None,
                  name: str = "") -> GlmTableau:
    """Tableau of the pre/post-filtered core method."""
    t = core.tableau
    k, s = t.k, t.s
    if pre is None:
        pre = PreFilter.identity(k)
    if pre.k != k:
        raise StructureError(f"pre-filter row has length {pre.k}, core has k={k}")
    D = np.array(t.D)
    D[0] = pre.d1
    for i in range(1, s):
        mult = t.D[i, -1]           # weight the core put on u^n, now on y_1
        row = np.array(t.D[i])
        row[-1] = 0.0
        D[i] = mult * pre.d1 + row
    if post is None:
        theta, bhat, b = D[-1], t.Ahat[-1], t.A[-1]
    else:
        theta, bhat, b = post.resolve(k, s, D, t.Ahat, t.A)
    return GlmTableau(k=k, s=s, A=t.A, Ahat=t.Ahat, D=D,
                      Theta=theta, b=b, bhat=bhat, name=name or t.name)


def filter_lmm(alpha_coeffs, beta_coeffs, pre: PreFilter = None,
               post: PostFilter = None, name: str = "") -> GlmTableau:
    """Two-stage tableau of a filtered k-step linear multistep method.

    The multistep method u^{n+1} = sum alpha_l u^{n-k+l}
    + dt sum_{l<=k+1} beta_l F(.) runs on the pre-filtered state: stage 1 is
    the filter row, stage 2 the multistep solve with beta_k weighting
    F(stage 1) and beta_{k+1} the implicit weight.
    """
    alpha = np.asarray(alpha_coeffs, dtype=float).reshape(-1)
    beta = np.asarray(beta_coeffs, dtype=float).reshape(-1)
    k_lmm = alpha.size
    if beta.size != k_lmm + 1:
        raise StructureError(f"need {k_lmm + 1} beta coefficients, got {beta.size}")
    k = k_lmm
    if pre is not None:
        k = max(k, pre.k)
    if post is not None and post.theta is not None:
        k = max(k, post.theta.size)
    if post is not None and post.qhat is not None:
        k = max(k, post.qhat.size)
    pad = k - k_lmm
    alpha = np.concatenate([np.zeros(pad), alpha])
    beta = np.concatenate([np.zeros(pad), beta])
    if pre is None:
        pre = PreFilter.identity(k)
    if pre.k != k:
        raise StructureError(f"pre-filter row has length {pre.k}, need {k}")

    d2 = alpha[-1] * pre.d1
    d2[: -1] += alpha[: -1]
    D = np.vstack([pre.d1, d2])
    A = np.array([[0.0, 0.0], [beta[k - 1], beta[k]]])
    Ahat = np.vstack([np.zeros(k - 1), beta[: k - 1]])
    if post is None:
        theta, bhat, b = d2, Ahat[1], A[1]
    else:
        theta, bhat, b = post.resolve(k, 2, D, Ahat, A)
    return GlmTableau(k=k, s=2, A=A, Ahat=Ahat, D=D,
                      Theta=theta, b=b, bhat=bhat, name=name)


def fluctuation_factor(pre: PreFilter) -> float:
    """Factor 1 - alpha*dhat_k/2 by which the filter scales its own stencil."""
    if not pre.is_consistent():
        raise StructureError("pre-filter is not a zero-sum fluctuation stencil")
    if pre.alpha is not None and pre.dhat is not None:
        return 1.0 - 0.5 * pre.alpha * pre.dhat[-1]
    # recover from the row: d1 = e_k - (alpha/2) dhat, so the factor is d1[k]
    return float(pre.d1[-1])


def is_reducing(pre: PreFilter) -> bool:
    """True when the filter strictly shrinks the fluctuation without sign flip."""
    factor = fluctuation_factor(pre)
    return 0.0 < factor < 1.0
