"""Order-condition residuals for general linear methods.

With ell the step offsets, c = Atilde e + Dtilde ell the stage abscissas,
vector powers taken elementwise and "*" meaning elementwise products, the
residuals through fourth order are

    tau_0_1 = Theta e - 1
    tau_0_2 = Dtilde e - e                       (max row deviation kept)
    tau_1_1 = btilde e + Theta ell - 1
    tau_2_1 = btilde c + 1/2 Theta ell^2 - 1/2
    tau_3_1 = btilde c^2 + 1/3 Theta ell^3 - 1/3
    tau_3_2 = btilde A c + 1/2 btilde D ell^2 + 1/6 Theta ell^3 - 1/6
    tau_4_1 = btilde c^3 + 1/4 Theta ell^4 - 1/4
    tau_4_2 = btilde A c^2 + 1/3 btilde D ell^3 + 1/12 Theta ell^4 - 1/12
    tau_4_3 = btilde A A c + 1/2 btilde A D ell^2 + 1/6 btilde D ell^3
              + 1/24 Theta ell^4 - 1/24
    tau_4_4 = btilde (c * A c) + 1/2 btilde (c * D ell^2)
              + 1/8 Theta ell^4 - 1/8

(A, D short for Atilde, Dtilde).  The implementation evaluates them in the
general one-step propagation form, one residual per propagated component
with that component's target offset on the right-hand side; for an ordinary
tableau the step-copy components are exact and the update row reproduces the
formulas above verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LABELS = ("tau_0_1", "tau_0_2", "tau_1_1", "tau_2_1", "tau_3_1",
          "tau_3_2", "tau_4_1", "tau_4_2", "tau_4_3", "tau_4_4")

MAX_ORDER = 4


@dataclass(frozen=True)
class OrderResidualReport:
    residuals: dict
    order: int
    tol: float

    def to_json_dict(self):
        return {"residuals": dict(self.residuals), "order": self.order, "tol": self.tol}


def _signed_max(v):
    v = np.atleast_1d(v)
    i = int(np.argmax(np.abs(v)))
    return float(v[i])


def residual_vectors(method):
    """All residual vectors (one entry per propagated component)."""
    A, U, B, V, ell, g = method.propagation_parts()
    e_st = np.ones(A.shape[0])
    e_in = np.ones(U.shape[1])
    c = A @ e_st + U @ ell
    # second/third order stage content along nested (tall) trees
    a2 = U @ (ell ** 2) / 2 + A @ c
    a31 = U @ (ell ** 3) / 6 + A @ (c ** 2 / 2)
    a32 = U @ (ell ** 3) / 6 + A @ a2
    out = {
        "tau_0_1": V @ e_in - 1.0,
        "tau_0_2": U @ e_in - 1.0,
        "tau_1_1": V @ ell + B @ e_st - g,
        "tau_2_1": V @ (ell ** 2) / 2 + B @ c - g ** 2 / 2,
        "tau_3_1": 2 * (V @ (ell ** 3) / 6 + B @ (c ** 2 / 2) - g ** 3 / 6),
        "tau_3_2": V @ (ell ** 3) / 6 + B @ a2 - g ** 3 / 6,
        "tau_4_1": 6 * (V @ (ell ** 4) / 24 + B @ (c ** 3 / 6) - g ** 4 / 24),
        "tau_4_2": 2 * (V @ (ell ** 4) / 24 + B @ a31 - g ** 4 / 24),
        "tau_4_3": V @ (ell ** 4) / 24 + B @ a32 - g ** 4 / 24,
        "tau_4_4": V @ (ell ** 4) / 8 + B @ (c * a2) - g ** 4 / 8,
    }
    return out


def tau_residuals(method) -> OrderResidualReport:
    """Residual values only; classification is left to order_of."""
    vecs = residual_vectors(method)
    residuals = {lab: _signed_max(vecs[lab]) for lab in LABELS}
    return OrderResidualReport(residuals=residuals, order=None, tol=None)


def classify(residuals: dict, tol: float) -> int:
    """Largest p <= 4 with every residual of level q <= p within tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    order = -1
    for q in range(MAX_ORDER + 1):
        level = [abs(residuals[lab]) for lab in LABELS if lab.startswith(f"tau_{q}_")]
        if max(level) > tol:
            break
        order = q
    return order


def order_of(method, tol: float = 1e-9) -> int:
    """Classical order of a compact or block method, capped at 4."""
    report = tau_residuals(method)
    return classify(report.residuals, tol)


def order_report(method, tol: float = 1e-9) -> OrderResidualReport:
    residuals = tau_residuals(method).residuals
    return OrderResidualReport(residuals=residuals, order=classify(residuals, tol), tol=tol)
