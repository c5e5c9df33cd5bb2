"""Linear stability analysis on the scalar test problem u' = lambda u.

One step of a k-step method maps the history window by the evolution matrix

    M(z) = V + z B (I - z A)^{-1} U,        z = lambda * dt,

which for an ordinary tableau is the companion-like form [[0, I], [Phi(z)]]
with Phi(z) = Theta + z btilde (I - z Atilde)^{-1} Dtilde.  A method is
stable at z when every eigenvalue of M(z) lies in the closed unit disk and
eigenvalues of unit modulus are simple (the root condition).

The wedge of half-angle alpha about the negative real axis is swept by rays
at angles theta(mu) = pi (mu^2+1)/(2 mu^2+1) for mu in [0, r], with
alpha = 180 (1 - (r^2+1)/(2 r^2+1)) degrees; the largest stable wedge is
located by bisection in alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class PoleError(ArithmeticError):
    """I - z*A is singular at the requested z."""

    def __init__(self, z):
        super().__init__(f"stage matrix is singular at z = {z}")
        self.z = z


class EigensolveError(RuntimeError):
    """The dense eigenvalue iteration failed to converge."""


@dataclass(frozen=True)
class ScanConfig:
    rays: int = 40
    moduli: int = 60
    z_min: float = 1e-3
    z_max: float = 1e4
    verify_z_max: float = 1e8
    angle_tol_deg: float = 0.05
    root_tol: float = 1e-8
    ray_floor: float = 1e-3            # lowest ray as a fraction of r
    r_max: float = 50.0

    def to_json_dict(self):
        return {
            "rays": self.rays, "moduli": self.moduli,
            "z_min": self.z_min, "z_max": self.z_max,
            "verify_z_max": self.verify_z_max,
            "angle_tol_deg": self.angle_tol_deg,
            "root_tol": self.root_tol, "ray_floor": self.ray_floor,
            "r_max": self.r_max,
        }


@dataclass
class StabilityReport:
    alpha_deg: float = None
    r: float = None
    a_stable: bool = False
    l_stable: bool = None
    imag_radius: float = None
    neg_real_radius: float = None
    scan_params: dict = field(default_factory=dict)

    def to_json_dict(self):
        return {
            "alpha_deg": self.alpha_deg,
            "r": (None if self.r is None else (self.r if math.isfinite(self.r) else "inf")),
            "a_stable": self.a_stable,
            "l_stable": self.l_stable,
            "imag_radius": self.imag_radius,
            "neg_real_radius": self.neg_real_radius,
            "scan_params": self.scan_params,
        }


def alpha_of_r(r: float) -> float:
    """Wedge half-angle in degrees for ray parameter r."""
    return 180.0 * r * r / (2.0 * r * r + 1.0)


def r_of_alpha(alpha_deg: float) -> float:
    if alpha_deg >= 90.0:
        return math.inf
    return math.sqrt(alpha_deg / (180.0 - 2.0 * alpha_deg))


def evolution_matrix(method, z: complex) -> np.ndarray:
    """M(z) for a single z; raises PoleError at implicit-stage poles."""
    A, U, B, V = method.propagation_parts()[:4]
    m = A.shape[0]
    try:
        W = np.linalg.solve(np.eye(m) - z * A, U.astype(complex))
    except np.linalg.LinAlgError:
        raise PoleError(z) from None
    M = V + z * (B @ W)
    if not np.all(np.isfinite(M)):
        raise PoleError(z)
    return M


def evolution_matrices(method, zs) -> np.ndarray:
    """Stacked M(z) for an array of z values; poles yield non-finite rows."""
    A, U, B, V = method.propagation_parts()[:4]
    zs = np.asarray(zs, dtype=complex).reshape(-1)
    m = A.shape[0]
    lhs = np.eye(m)[None, :, :] - zs[:, None, None] * A[None, :, :]
    rhs = np.broadcast_to(U.astype(complex), (zs.size, *U.shape))
    with np.errstate(all="ignore"):
        try:
            W = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            W = np.empty_like(rhs)
            for i in range(zs.size):
                try:
                    W[i] = np.linalg.solve(lhs[i], U.astype(complex))
                except np.linalg.LinAlgError:
                    W[i] = np.nan
    return V[None, :, :] + zs[:, None, None] * (B[None, :, :] @ W)


def spectral_radius(m) -> float:
    """max |eigenvalue| of a small dense (complex) matrix."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("spectral_radius needs a square matrix")
    if m.shape[0] > 16:
        raise ValueError("matrix larger than the supported 16x16")
    try:
        return float(np.abs(np.linalg.eigvals(m)).max())
    except np.linalg.LinAlgError as exc:
        raise EigensolveError(str(exc)) from exc


def _root_condition_eigs(lam, tol):
    mag = np.abs(lam)
    if mag.max() > 1.0 + tol:
        return False
    near = lam[mag > 1.0 - tol]
    for i in range(near.size):
        for j in range(i + 1, near.size):
            if abs(near[i] - near[j]) < tol:
                return False
    return True


def satisfies_root_condition(method, z: complex, tol: float = 1e-8) -> bool:
    """Eigenvalues of M(z) in the closed unit disk, unit-modulus ones simple."""
    if not (0.0 < tol <= 1e-3):
        raise ValueError("tol must lie in (0, 1e-3]")
    lam = np.linalg.eigvals(evolution_matrix(method, z))
    return _root_condition_eigs(lam, tol)


def _scan_root_condition(method, zs, tol):
    """(all_ok, n_poles) over an array of z samples; poles are skipped."""
    M = evolution_matrices(method, zs)
    finite = np.all(np.isfinite(M.reshape(M.shape[0], -1)), axis=1)
    n_poles = int((~finite).sum())
    if not finite.any():
        return True, n_poles
    lams = np.linalg.eigvals(M[finite])
    mags = np.abs(lams)
    if (mags.max(axis=1) > 1.0 + tol).any():
        return False, n_poles
    suspicious = (mags > 1.0 - tol).sum(axis=1) > 1
    for lam in lams[suspicious]:
        if not _root_condition_eigs(lam, tol):
            return False, n_poles
    return True, n_poles


def wedge_samples(r: float, scan: ScanConfig, extend: bool = False) -> np.ndarray:
    """Sample points |z| e^{i theta(mu)} on rays mu in {0} U (r*floor, r].

    With extend=True the modulus range is continued past z_max up to
    verify_z_max at the same per-decade density, on top of (not instead of)
    the base samples.
    """
    mods = np.geomspace(scan.z_min, scan.z_max, scan.moduli)
    if extend and scan.verify_z_max > scan.z_max:
        per_decade = scan.moduli / math.log10(scan.z_max / scan.z_min)
        n_extra = max(2, int(math.ceil(
            per_decade * math.log10(scan.verify_z_max / scan.z_max))))
        mods = np.concatenate([
            mods, np.geomspace(scan.z_max, scan.verify_z_max, n_extra + 1)[1:]])
    mus = np.array([0.0])
    if r > 0:
        mus = np.concatenate([mus, np.geomspace(max(r * scan.ray_floor, 1e-300), r, scan.rays)])
    thetas = np.pi * (mus ** 2 + 1.0) / (2.0 * mus ** 2 + 1.0)
    return (mods[None, :] * np.exp(1j * thetas)[:, None]).reshape(-1)


def wedge_feasible(method, r: float, scan: ScanConfig, extend: bool = False):
    ok, n_poles = _scan_root_condition(method, wedge_samples(r, scan, extend), scan.root_tol)
    return ok, n_poles


def a_alpha_angle(method, scan: ScanConfig = None) -> StabilityReport:
    """Largest stable wedge half-angle, bisected in alpha and re-verified.

    A(90) is reported as a_stable only when the wedge at the ray cap and the
    imaginary axis itself pass the root condition, the former also with the
    extended modulus range.
    """
    scan = scan or ScanConfig()
    report = StabilityReport(scan_params=scan.to_json_dict())
    poles_seen = 0

    def feasible(r, extend=False):
        nonlocal poles_seen
        ok, n_poles = wedge_feasible(method, r, scan, extend)
        poles_seen += n_poles
        return ok

    if not feasible(0.0):
        report.alpha_deg = None
        report.scan_params["poles_skipped"] = poles_seen
        report.scan_params["feasible_at_zero"] = False
        return report

    if feasible(scan.r_max) and feasible(scan.r_max, extend=True):
        axis = np.geomspace(scan.z_min, scan.z_max, scan.moduli) * 1j
        axis_ok, n_poles = _scan_root_condition(method, axis, scan.root_tol)
        poles_seen += n_poles
        if axis_ok:
            report.alpha_deg = 90.0
            report.r = math.inf
            report.a_stable = True
            report.scan_params["poles_skipped"] = poles_seen
            return report

    lo, hi = 0.0, alpha_of_r(scan.r_max)
    while hi - lo > scan.angle_tol_deg:
        mid = 0.5 * (lo + hi)
        if feasible(r_of_alpha(mid)):
            lo = mid
        else:
            hi = mid
    # confirm the reported angle on the extended modulus range
    while lo > 0.0 and not feasible(r_of_alpha(lo), extend=True):
        lo = max(lo - scan.angle_tol_deg, 0.0)
    report.alpha_deg = lo
    report.r = r_of_alpha(lo)
    report.a_stable = False
    report.scan_params["poles_skipped"] = poles_seen
    return report


_L_PROBES = (-1.0e6, -1.0e9, -1.0e12)
_L_THRESHOLD = 1.0e-4


def is_L_stable(method, scan: ScanConfig = None, angle_report: StabilityReport = None) -> bool:
    """A-stable and rho(M(z)) decays towards z -> -infinity."""
    report = angle_report or a_alpha_angle(method, scan)
    if not report.a_stable:
        return False
    rhos = []
    for z in _L_PROBES:
        try:
            rho = spectral_radius(evolution_matrix(method, z))
        except PoleError:
            rho = spectral_radius(evolution_matrix(method, z * 1.007))
        rhos.append(rho)
    decreasing = all(rhos[i + 1] < rhos[i] for i in range(len(rhos) - 1))
    return decreasing and rhos[-1] <= _L_THRESHOLD


def axis_stability_radius(method, axis: str, zmax: float = 1e4,
                          scan: ScanConfig = None) -> float:
    """Largest nu <= zmax with the root condition on z = i*nu or z = -nu.

    Returns zmax itself when no violation is found (saturation).  The first
    violating sample is refined by bisection against the last good one.
    """
    scan = scan or ScanConfig()
    if axis == "imaginary":
        direction = 1j
    elif axis == "negative_real":
        direction = -1.0
    else:
        raise ValueError(f"unknown axis {axis!r}")
    if zmax <= 0:
        raise ValueError("zmax must be positive")

    mods = np.geomspace(scan.z_min, zmax, scan.moduli)
    M = evolution_matrices(method, mods * direction)
    finite = np.all(np.isfinite(M.reshape(M.shape[0], -1)), axis=1)
    bad = np.zeros(mods.size, dtype=bool)
    idx = np.where(finite)[0]
    lams = np.linalg.eigvals(M[idx])
    for pos, lam in zip(idx, lams):
        bad[pos] = not _root_condition_eigs(lam, scan.root_tol)
    if not bad.any():
        return float(zmax)
    first = int(np.argmax(bad))
    lo = 0.0 if first == 0 else float(mods[first - 1])
    hi = float(mods[first])
    while hi - lo > 1e-3 * max(hi, 1e-6):
        mid = 0.5 * (lo + hi)
        if satisfies_root_condition(method, mid * direction, scan.root_tol):
            lo = mid
        else:
            hi = mid
    return lo


def region_raster(method, window, nx: int, ny: int):
    """Grid of spectral radii over the complex rectangle window.

    window = (re_min, re_max, im_min, im_max); returns (re, im, rho) with
    rho of shape (ny, nx), row-major over the imaginary axis, and poles
    marked with +inf.
    """
    if nx < 2 or ny < 2:
        raise ValueError("need nx, ny >= 2")
    re_min, re_max, im_min, im_max = window
    re = np.linspace(re_min, re_max, nx)
    im = np.linspace(im_min, im_max, ny)
    zz = (re[None, :] + 1j * im[:, None]).reshape(-1)
    M = evolution_matrices(method, zz)
    flat = M.reshape(M.shape[0], -1)
    finite = np.all(np.isfinite(flat), axis=1)
    rho = np.full(zz.size, np.inf)
    if finite.any():
        rho[finite] = np.abs(np.linalg.eigvals(M[finite])).max(axis=1)
    return re, im, rho.reshape(ny, nx)


def full_report(method, scan: ScanConfig = None) -> StabilityReport:
    """Angle, L-stability and both axis radii in one report."""
    scan = scan or ScanConfig()
    report = a_alpha_angle(method, scan)
    report.l_stable = is_L_stable(method, scan, angle_report=report)
    report.imag_radius = axis_stability_radius(method, "imaginary", scan.z_max, scan)
    report.neg_real_radius = axis_stability_radius(method, "negative_real", scan.z_max, scan)
    report.scan_params["imag_radius_saturated"] = report.imag_radius >= scan.z_max
    report.scan_params["neg_real_radius_saturated"] = report.neg_real_radius >= scan.z_max
    return report
