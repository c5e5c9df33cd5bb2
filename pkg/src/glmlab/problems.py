"""Built-in ODE test problems addressable by name."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class OdeProblem:
    name: str
    f: callable                       # f(t, u) -> du/dt
    u0: np.ndarray
    t_span: tuple
    jacobian: callable = None         # (t, u) -> matrix
    exact: callable = None            # t -> state
    dissipative: bool = False         # <u, f(u)> <= 0 for all u
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        u0 = np.atleast_1d(np.asarray(self.u0, dtype=float))
        u0.setflags(write=False)
        object.__setattr__(self, "u0", u0)
        if self.exact is not None:
            if np.abs(np.atleast_1d(self.exact(self.t_span[0])) - u0).max() > 1e-12:
                raise ValueError(f"{self.name}: exact(t0) does not match u0")

    @property
    def dim(self):
        return self.u0.size


def dahlquist(lam: float = -1.0) -> OdeProblem:
    lam = float(lam)
    return OdeProblem(
        name=f"dahlquist({lam:g})",
        f=lambda t, u: lam * u,
        jacobian=lambda t, u: np.array([[lam]]),
        u0=[1.0],
        t_span=(0.0, 2.0),
        exact=lambda t: np.array([np.exp(lam * t)]),
        dissipative=lam <= 0.0,
        params={"lam": lam})


def poly(p: int = 3) -> OdeProblem:
    p = int(p)
    if p < 1:
        raise ValueError("poly needs p >= 1")
    return OdeProblem(
        name=f"poly({p})",
        f=lambda t, u: np.array([p * t ** (p - 1)]),
        jacobian=lambda t, u: np.zeros((1, 1)),
        u0=[0.0],
        t_span=(0.0, 2.0),
        exact=lambda t: np.array([float(t) ** p]),
        params={"p": p})


def decay_forced() -> OdeProblem:
    return OdeProblem(
        name="decay_forced",
        f=lambda t, u: -u + np.cos(t),
        jacobian=lambda t, u: np.array([[-1.0]]),
        u0=[-1.0],
        t_span=(0.0, 3.2),
        exact=lambda t: np.array([-1.5 * np.exp(-t) + 0.5 * (np.cos(t) + np.sin(t))]))


def cubic_dissipative() -> OdeProblem:
    return OdeProblem(
        name="cubic_dissipative",
        f=lambda t, u: -u ** 3,
        jacobian=lambda t, u: np.diag(-3.0 * np.atleast_1d(u) ** 2),
        u0=[1.0],
        t_span=(0.0, 2.0),
        exact=lambda t: np.array([1.0 / np.sqrt(1.0 + 2.0 * t)]),
        dissipative=True)


def stiff_linear(stiffness: float = 3.0) -> OdeProblem:
    s = float(stiffness)
    if s <= 0:
        raise ValueError("stiffness must be positive")
    L = np.array([[-(1.0 + s) / 2.0, (s - 1.0) / 2.0],
                  [(s - 1.0) / 2.0, -(1.0 + s) / 2.0]])
    # eigenpairs: -1 along (1,1)/sqrt2 and -s along (1,-1)/sqrt2
    Q = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
    lam = np.array([-1.0, -s])
    u0 = np.array([2.0, -1.0])
    coef = Q.T @ u0

    def exact(t):
        return Q @ (coef * np.exp(lam * t))

    return OdeProblem(
        name=f"stiff_linear({s:g})" if s != 3.0 else "stiff_linear",
        f=lambda t, u: L @ u,
        jacobian=lambda t, u: L,
        u0=u0,
        t_span=(0.0, 60.0),
        exact=exact,
        dissipative=True,
        params={"L": L, "eigvals": lam, "eigvecs": Q})


def lotka_volterra() -> OdeProblem:
    def f(t, u):
        x, y = u
        return np.array([x - x * y, -y + x * y])

    def jac(t, u):
        x, y = u
        return np.array([[1.0 - y, -x], [y, -1.0 + x]])

    return OdeProblem(
        name="lotka_volterra", f=f, jacobian=jac,
        u0=[1.5, 1.0], t_span=(0.0, 10.0))


_FACTORIES = {
    "dahlquist": dahlquist,
    "poly": poly,
    "decay_forced": decay_forced,
    "cubic_dissipative": cubic_dissipative,
    "stiff_linear": stiff_linear,
    "lotka_volterra": lotka_volterra,
}

_NAME_RE = re.compile(r"^([a-z_]+)(?:\(([^)]*)\))?$")


def problem_from_name(text: str) -> OdeProblem:
    """Resolve e.g. 'dahlquist(-1)', 'poly(3)' or 'decay_forced'."""
    m = _NAME_RE.match(text.strip())
    if not m or m.group(1) not in _FACTORIES:
        raise KeyError(f"unknown problem {text!r}")
    factory = _FACTORIES[m.group(1)]
    if m.group(2) in (None, ""):
        return factory()
    return factory(float(m.group(2)))
