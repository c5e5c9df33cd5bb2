"""Built-in time-stepping methods with declared order/stability metadata.

Coefficients are constructed from exact integer ratios where the method is
rational; optimized methods carry their published 15-digit decimals.  Step
weights are stored oldest first, e.g. (u^{n-2}, u^{n-1}, u^n) for k = 3.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .tableau import BlockGlm, GlmTableau


class UnknownMethodError(KeyError):
    pass


@dataclass(frozen=True)
class EmbeddedAlternate:
    """A sibling update row sharing the method's solve (for error estimates)."""

    label: str
    order: int
    Theta: np.ndarray
    bhat: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for f in ("Theta", "bhat", "b"):
            a = np.asarray(getattr(self, f), dtype=float).reshape(-1)
            a.setflags(write=False)
            object.__setattr__(self, f, a)


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    tableau: object                     # GlmTableau or BlockGlm
    declared_order: int
    declared_observed_order: int
    declared_alpha_deg: float
    declared_l_stable: bool
    implicit_solves_per_step: int
    retains_stages: bool = False
    abscissa_info: str = ""
    family: str = ""
    embedded: tuple = ()
    params: dict = field(default_factory=dict)
    warning: str = None

    def to_json_dict(self):
        return {
            "name": self.name,
            "declared_order": self.declared_order,
            "declared_observed_order": self.declared_observed_order,
            "declared_alpha_deg": self.declared_alpha_deg,
            "declared_l_stable": self.declared_l_stable,
            "implicit_solves_per_step": self.implicit_solves_per_step,
            "retains_stages": self.retains_stages,
            "abscissa_info": self.abscissa_info,
            "family": self.family,
            "embedded": [e.label for e in self.embedded],
            "params": self.params,
            "warning": self.warning,
        }


# ---------------------------------------------------------------------------
# implicit Euler family

def _ie():
    tab = GlmTableau(k=1, s=1, A=[[1.0]], Ahat=[], D=[[1.0]],
                     Theta=[1.0], b=[1.0], bhat=[], name="IE")
    return CatalogEntry("IE", tab, 1, 1, 90.0, True, 1,
                        abscissa_info="solve at t_n + dt", family="IE")


def _ie_filt(d):
    if d >= 1.5:
        raise ValueError(f"IE-Filt: d = {d} >= 3/2 breaks the method "
                         "(update weights blow up, pair norm loses positivity)")
    warning = None
    if not 0.0 <= d <= 1.0:
        warning = f"d = {d} outside the proven energy-stable range [0, 1]"
    den = 3.0 - 2.0 * d
    tab = GlmTableau(
        k=2, s=2,
        A=[[0.0, 0.0], [0.0, 1.0]],
        Ahat=[[0.0], [0.0]],
        D=[[d, 1.0 - d], [d, 1.0 - d]],
        Theta=[(2.0 * d - 1.0) / den, 4.0 * (1.0 - d) / den],
        b=[0.0, 2.0 / den],
        bhat=[0.0],
        name=f"IE-Filt({d:g})")
    observed = 3 if abs(d - (3.0 - math.sqrt(3.0)) / 3.0) < 1e-12 else 2
    return CatalogEntry(
        tab.name, tab, 2, observed, 90.0, False, 1,
        abscissa_info="solve at t_n + (1-d) dt",
        family="IE-Filt", params={"d": d}, warning=warning)


_IE3_PRE = (-1.0 / 2.0, 1.0, 1.0 / 2.0)
_IE3_THETA3 = (2.0 / 11.0, -9.0 / 11.0, 18.0 / 11.0)

_IE_EMBEDDED = (
    EmbeddedAlternate("2nd", 2, Theta=_IE3_PRE, bhat=(0.0, 0.0), b=(1.0,)),
    EmbeddedAlternate("3rd", 3, Theta=_IE3_THETA3, bhat=(0.0, 0.0), b=(6.0 / 11.0,)),
)


def _ie_pre_2():
    tab = GlmTableau(k=3, s=1, A=[[1.0]], Ahat=[[0.0, 0.0]], D=[_IE3_PRE],
                     Theta=_IE3_PRE, b=[1.0], bhat=[0.0, 0.0], name="IE-Pre-2")
    return CatalogEntry("IE-Pre-2", tab, 2, 2, 90.0, True, 1,
                        abscissa_info="solve at t_n + dt", family="IE-3pt",
                        embedded=_IE_EMBEDDED)


def _ie_pre_post_3():
    tab = GlmTableau(k=3, s=1, A=[[1.0]], Ahat=[[0.0, 0.0]], D=[_IE3_PRE],
                     Theta=_IE3_THETA3, b=[6.0 / 11.0], bhat=[0.0, 0.0],
                     name="IE-Pre-Post-3")
    return CatalogEntry("IE-Pre-Post-3", tab, 3, 3, 71.51, False, 1,
                        abscissa_info="solve at t_n + dt", family="IE-3pt",
                        embedded=_IE_EMBEDDED)


def _ie_eis_3():
    # advances the pair (u^{n-1/3}, u^n); both outputs are the two solves
    D = [[14.0 / 5.0, -9.0 / 5.0], [14.0 / 5.0, -9.0 / 5.0]]
    Ahat = [[9.0 / 5.0, -6.0 / 5.0], [9.0 / 5.0, -47.0 / 60.0]]
    A = [[1.0, 0.0], [-1.0 / 12.0, 1.0]]
    tab = BlockGlm(k=2, s=2, offsets=[-1.0 / 3.0, 0.0],
                   A=A, Ahat=Ahat, D=D, T=D, Bhat=Ahat, B=A, name="IE-EIS-3")
    return CatalogEntry("IE-EIS-3", tab, 2, 3, 90.0, False, 2,
                        retains_stages=True,
                        abscissa_info="solves at t_n + 2/3 dt and t_n + dt",
                        family="IE-EIS")


# ---------------------------------------------------------------------------
# implicit midpoint family

_MP_PRE = (-1.0 / 12.0, 1.0 / 2.0, -5.0 / 4.0, 11.0 / 6.0)
# update rows over steps once the single midpoint solve is substituted in
_MP_THETA2 = (-1.0 / 22.0, 7.0 / 22.0, -21.0 / 22.0, 37.0 / 22.0)
_MP_THETA3 = _MP_PRE
_MP_THETA4 = (-3.0 / 25.0, 16.0 / 25.0, -36.0 / 25.0, 48.0 / 25.0)

_MP_EMBEDDED = (
    EmbeddedAlternate("2nd", 2, Theta=_MP_THETA2, bhat=(0.0,) * 3, b=(6.0 / 11.0,)),
    EmbeddedAlternate("3rd", 3, Theta=_MP_THETA3, bhat=(0.0,) * 3, b=(1.0 / 2.0,)),
    EmbeddedAlternate("4th", 4, Theta=_MP_THETA4, bhat=(0.0,) * 3, b=(12.0 / 25.0,)),
)


def _mp():
    tab = GlmTableau(k=1, s=1, A=[[0.5]], Ahat=[], D=[[1.0]],
                     Theta=[1.0], b=[1.0], bhat=[], name="MP")
    return CatalogEntry("MP", tab, 2, 2, 90.0, False, 1,
                        abscissa_info="solve at t_n + dt/2", family="MP")


def _mp_pre_post(order):
    theta, b = {2: (_MP_THETA2, 6.0 / 11.0),
                3: (_MP_THETA3, 1.0 / 2.0),
                4: (_MP_THETA4, 12.0 / 25.0)}[order]
    alpha = {2: 90.0, 3: 79.4, 4: 70.64}[order]
    name = f"MP-Pre-Post-{order}"
    tab = GlmTableau(k=4, s=1, A=[[0.5]], Ahat=[[0.0] * 3], D=[_MP_PRE],
                     Theta=theta, b=[b], bhat=[0.0] * 3, name=name)
    return CatalogEntry(name, tab, order, order, alpha, False, 1,
                        abscissa_info="solve at t_n + dt/2 on filtered state",
                        family="MP-filtered", embedded=_MP_EMBEDDED)


# ---------------------------------------------------------------------------
# BDF2 family

_BDF2_EMBEDDED = (
    EmbeddedAlternate("2nd", 2, Theta=(0.0, -1.0 / 3.0, 4.0 / 3.0),
                      bhat=(0.0, 0.0), b=(2.0 / 3.0,)),
    EmbeddedAlternate("3rd", 3, Theta=_IE3_THETA3, bhat=(0.0, 0.0), b=(6.0 / 11.0,)),
)


def _bdf2():
    tab = GlmTableau(k=2, s=1, A=[[2.0 / 3.0]], Ahat=[[0.0]],
                     D=[[-1.0 / 3.0, 4.0 / 3.0]], Theta=[-1.0 / 3.0, 4.0 / 3.0],
                     b=[2.0 / 3.0], bhat=[0.0], name="BDF2")
    return CatalogEntry("BDF2", tab, 2, 2, 90.0, True, 1,
                        abscissa_info="solve at t_n + dt", family="BDF2")


def _bdf2_post_3():
    tab = GlmTableau(k=3, s=1, A=[[2.0 / 3.0]], Ahat=[[0.0, 0.0]],
                     D=[[0.0, -1.0 / 3.0, 4.0 / 3.0]], Theta=_IE3_THETA3,
                     b=[6.0 / 11.0], bhat=[0.0, 0.0], name="BDF2-Post-3")
    return CatalogEntry("BDF2-Post-3", tab, 3, 3, 83.89, False, 1,
                        abscissa_info="solve at t_n + dt", family="BDF2",
                        embedded=_BDF2_EMBEDDED)


_BDF2PP_PRE = (2.670130894410204, -3.311517498805319,
               -3.489799303077245, 5.131185907472361)
_BDF2PP_THETA = (0.370742163920604, -0.631064728171402,
                 -0.729528261935270, 1.989850826186068)
_BDF2PP_B = 0.120568773483737


def _bdf2_pre_post_3():
    pre = np.array(_BDF2PP_PRE)
    solve_row = 4.0 / 3.0 * pre + np.array([0.0, 0.0, -1.0 / 3.0, 0.0])
    tab = GlmTableau(
        k=4, s=2,
        A=[[0.0, 0.0], [0.0, 2.0 / 3.0]],
        Ahat=np.zeros((2, 3)),
        D=np.vstack([pre, solve_row]),
        Theta=_BDF2PP_THETA,
        b=[0.0, _BDF2PP_B],
        bhat=[0.0] * 3,
        name="BDF2-Pre-Post-3")
    return CatalogEntry("BDF2-Pre-Post-3", tab, 3, 3, 89.59, False, 1,
                        abscissa_info="solve on filtered state", family="BDF2")


# ---------------------------------------------------------------------------
# two-stage fully implicit Runge-Kutta (Lobatto IIIC) family

_RK22_A = ((1.0 / 2.0, -1.0 / 2.0), (1.0 / 2.0, 1.0 / 2.0))


def _rk22():
    tab = GlmTableau(k=1, s=2, A=_RK22_A, Ahat=np.zeros((2, 0)), D=[[1.0], [1.0]],
                     Theta=[1.0], b=[0.5, 0.5], bhat=[], name="RK22")
    return CatalogEntry("RK22", tab, 2, 2, 90.0, True, 1,
                        abscissa_info="coupled stages at t_n and t_n + dt",
                        family="RK22")


_RK22PP_D = (0.373461706729200, 0.626538293270800)
_RK22PP_Q = (-0.075425887737539, 0.551112405533260,
             -0.596071637983322, 1.120385120187601)


def _rk22_pre_post_3():
    d = np.array(_RK22PP_D)
    q = np.array(_RK22PP_Q)
    theta = q[:2] + (q[2] + q[3]) * d
    b = [(q[2] + q[3]) / 2.0, (q[3] - q[2]) / 2.0]
    tab = GlmTableau(k=2, s=2, A=_RK22_A, Ahat=[[0.0], [0.0]],
                     D=np.vstack([d, d]), Theta=theta, b=b, bhat=[0.0],
                     name="RK22-Pre-Post-3")
    return CatalogEntry("RK22-Pre-Post-3", tab, 3, 3, 90.0, False, 1,
                        abscissa_info="coupled stages on filtered state",
                        family="RK22")


# ---------------------------------------------------------------------------

_BUILDERS = {
    "IE": _ie,
    "IE-Pre-2": _ie_pre_2,
    "IE-Pre-Post-3": _ie_pre_post_3,
    "IE-EIS-3": _ie_eis_3,
    "MP": _mp,
    "MP-Pre-Post-2": lambda: _mp_pre_post(2),
    "MP-Pre-Post-3": lambda: _mp_pre_post(3),
    "MP-Pre-Post-4": lambda: _mp_pre_post(4),
    "BDF2": _bdf2,
    "BDF2-Post-3": _bdf2_post_3,
    "BDF2-Pre-Post-3": _bdf2_pre_post_3,
    "RK22": _rk22,
    "RK22-Pre-Post-3": _rk22_pre_post_3,
}

_ALIASES = {"Lobatto IIIC": "RK22", "LobattoIIIC": "RK22"}

_PARAM_RE = re.compile(r"^IE-Filt\(([^)]+)\)$")


def names():
    return list(_BUILDERS) + ["IE-Filt(d)"]


def get_parametric(name: str, d: float) -> CatalogEntry:
    if name != "IE-Filt":
        raise UnknownMethodError(f"no parametric family named {name!r}")
    return _ie_filt(float(d))


def get(name: str) -> CatalogEntry:
    name = _ALIASES.get(name, name)
    m = _PARAM_RE.match(name)
    if m:
        try:
            d = float(sympify_fraction(m.group(1)))
        except ValueError:
            raise UnknownMethodError(f"bad IE-Filt parameter {m.group(1)!r}") from None
        return _ie_filt(d)
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise UnknownMethodError(f"unknown method {name!r}") from None


def sympify_fraction(text: str) -> float:
    """Parse '0.5', '1/3' or 'opt' (the special two-point filter weight)."""
    text = text.strip()
    if text == "opt":
        return (3.0 - math.sqrt(3.0)) / 3.0
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def list_entries(filt_grid=(0.0, 0.25, 0.5, 0.75, 1.0)):
    """Every fixed entry plus IE-Filt on the given parameter grid."""
    entries = [b() for b in _BUILDERS.values()]
    entries.extend(_ie_filt(d) for d in filt_grid)
    return entries
