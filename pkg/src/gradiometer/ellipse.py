"""Least-squares ellipse fitting of (x, y) population pairs.

Points are modelled as::

    x = A sin(t) + B
    y = C sin(t + phi) + D

and the differential phase ``phi`` is the quantity of interest. The fit runs in
three stages:

1. a direct algebraic conic fit with the ellipse constraint 4ac - b^2 = 1
   (Halir & Flusser's numerically stable form of Fitzgibbon's method),
2. conversion of the conic coefficients to (A, B, C, D, phi),
3. geometric refinement by damped Gauss-Newton over the five ellipse
   parameters and one phase ``t_i`` per point. The normal equations are
   reduced with a Schur complement over the diagonal ``t`` block, so a step
   costs O(N).

Every stage is vectorised over leading batch dimensions, which is what makes
bootstrap resampling and Monte Carlo studies cheap.

The reflection t -> pi - t maps phi to -phi without changing the point set,
so phi is only determined up to sign; fits always report phi in (0, pi).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateConic, NoMinimumInInterval, TooFewPoints
from .peaks import normalized_populations

N_BOOT_DEFAULT = 200
_CHUNK = 2_000_000  # points per refinement batch


@dataclass(frozen=True)
class EllipseParams:
    A: float
    B: float
    C: float
    D: float
    phi: float

    def points(self, t):
        t = np.asarray(t, dtype=float)
        return self.A * np.sin(t) + self.B, self.C * np.sin(t + self.phi) + self.D

    def as_array(self) -> np.ndarray:
        return np.array([self.A, self.B, self.C, self.D, self.phi])

    @classmethod
    def from_array(cls, p) -> "EllipseParams":
        return cls(*(float(v) for v in p))


@dataclass(frozen=True)
class FitReport:
    params: EllipseParams
    dphi: float
    rms: float
    n_points: int
    converged: bool
    dphi_method: str = "bootstrap"
    n_boot: int = 0
    dphi_linear: float = float("nan")
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def phi(self) -> float:
        return self.params.phi

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = asdict(self.params)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        d = dict(d)
        d["params"] = EllipseParams(**d["params"])
        return cls(**d)


# -- stage 1: algebraic conic fit ------------------------------------------


def _normalize(x, y):
    mx, my = x.mean(-1, keepdims=True), y.mean(-1, keepdims=True)
    sx, sy = x.std(-1, keepdims=True), y.std(-1, keepdims=True)
    if np.any(sx == 0) or np.any(sy == 0):
        raise DegenerateConic("points are collinear with an axis")
    return (x - mx) / sx, (y - my) / sy, (mx[..., 0], my[..., 0], sx[..., 0], sy[..., 0])


def fit_conic(x, y) -> np.ndarray:
    """Direct least-squares ellipse fit.

    Returns conic coefficients (a, b, c, d, e, f) of
    a x^2 + b xy + c y^2 + d x + e y + f = 0 for each batch member, in the
    coordinates given. Raises DegenerateConic when no ellipse solution exists.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xn, yn, (mx, my, sx, sy) = _normalize(x, y)
    d1 = np.stack([xn * xn, xn * yn, yn * yn], -1)
    d2 = np.stack([xn, yn, np.ones_like(xn)], -1)
    s1 = np.swapaxes(d1, -1, -2) @ d1
    s2 = np.swapaxes(d1, -1, -2) @ d2
    s3 = np.swapaxes(d2, -1, -2) @ d2
    try:
        t = -np.linalg.solve(s3, np.swapaxes(s2, -1, -2))
    except np.linalg.LinAlgError as exc:
        raise DegenerateConic("points are collinear") from exc
    m = s1 + s2 @ t
    # premultiply by the inverse of the 3x3 constraint block
    m = np.stack([m[..., 2, :] / 2.0, -m[..., 1, :], m[..., 0, :] / 2.0], -2)
    _, vecs = np.linalg.eig(m)
    vecs = np.real(vecs)
    cond = 4.0 * vecs[..., 0, :] * vecs[..., 2, :] - vecs[..., 1, :] ** 2
    best = np.argmax(cond, axis=-1)
    if np.any(np.take_along_axis(cond, best[..., None], -1) <= 0):
        raise DegenerateConic("best conic is not an ellipse")
    a1 = np.take_along_axis(vecs, best[..., None, None], -1)[..., 0]
    a2 = (t @ a1[..., None])[..., 0]
    a, b, c = a1[..., 0], a1[..., 1], a1[..., 2]
    d, e, f = a2[..., 0], a2[..., 1], a2[..., 2]
    # undo the normalization xn = (x - mx)/sx, yn = (y - my)/sy
    A_ = a / sx**2
    B_ = b / (sx * sy)
    C_ = c / sy**2
    D_ = d / sx - 2 * A_ * mx - B_ * my
    E_ = e / sy - 2 * C_ * my - B_ * mx
    F_ = f + A_ * mx**2 + B_ * mx * my + C_ * my**2 - d * mx / sx - e * my / sy
    return np.stack([A_, B_, C_, D_, E_, F_], -1)


# -- stage 2: conic -> parametric ------------------------------------------


def conic_to_params(coeffs) -> np.ndarray:
    """Convert conic coefficients to (A, B, C, D, phi) with phi in (0, pi)."""
    coeffs = np.asarray(coeffs, dtype=float)
    a, b, c, d, e, f = np.moveaxis(coeffs, -1, 0)
    det = 4.0 * a * c - b * b
    if np.any(det <= 0):
        raise DegenerateConic("conic is not an ellipse")
    x0 = (b * e - 2.0 * c * d) / det
    y0 = (b * d - 2.0 * a * e) / det
    f0 = f + 0.5 * (d * x0 + e * y0)
    an, bn, cn = -a / f0, -b / f0, -c / f0
    if np.any(an <= 0) or np.any(cn <= 0):
        raise DegenerateConic("imaginary ellipse")
    cphi = np.clip(-bn / (2.0 * np.sqrt(an * cn)), -1.0, 1.0)
    phi = np.arccos(cphi)
    s2 = np.sin(phi) ** 2
    if np.any(s2 == 0):
        raise DegenerateConic("ellipse collapsed to a line")
    return np.stack([1.0 / np.sqrt(an * s2), x0, 1.0 / np.sqrt(cn * s2), y0, phi], -1)


def _canonical(p: np.ndarray) -> np.ndarray:
    """Map any parameter vector onto A, C > 0 and phi in [0, pi]."""
    p = np.array(p, dtype=float, copy=True)
    neg_a = p[..., 0] < 0
    p[..., 0] = np.abs(p[..., 0])
    p[..., 4] = np.where(neg_a, p[..., 4] - np.pi, p[..., 4])
    neg_c = p[..., 2] < 0
    p[..., 2] = np.abs(p[..., 2])
    p[..., 4] = np.where(neg_c, p[..., 4] + np.pi, p[..., 4])
    p[..., 4] = np.abs(np.angle(np.exp(1j * p[..., 4])))
    return p


def phases_from_params(x, y, p) -> np.ndarray:
    """Fringe phase t of each point given ellipse parameters (exact for points on the curve)."""
    A, B, C, D, phi = (q[..., None] for q in np.moveaxis(np.asarray(p, dtype=float), -1, 0))
    u = (x - B) / A
    v = (y - D) / C
    return np.arctan2(u, (v - u * np.cos(phi)) / np.sin(phi))


# -- stage 3: geometric refinement -----------------------------------------


def _residuals(x, y, p, t):
    A, B, C, D, phi = (q[..., None] for q in np.moveaxis(p, -1, 0))
    rx = x - A * np.sin(t) - B
    ry = y - C * np.sin(t + phi) - D
    return rx, ry


def _normal_system(p, t):
    """Blocks of the Gauss-Newton normal equations.

    Returns the global block U (..., 5, 5), the global/phase coupling W
    (..., N, 5), the diagonal phase block V (..., N) and the per-point
    Jacobian columns needed for the right-hand side. The model Jacobian is
    mostly zeros and ones, so U is assembled from sums directly.
    """
    A, C, phi = p[..., 0, None], p[..., 2, None], p[..., 4, None]
    s, c = np.sin(t), np.cos(t)
    s2, c2 = np.sin(t + phi), np.cos(t + phi)
    jtx, jty = A * c, C * c2
    cc2 = C * c2
    n = np.full(s.shape[:-1], float(s.shape[-1]))
    Sss, Ss = (s * s).sum(-1), s.sum(-1)
    S22, S2 = (s2 * s2).sum(-1), s2.sum(-1)
    S2c, Sc = (s2 * cc2).sum(-1), cc2.sum(-1)
    Scc = (cc2 * cc2).sum(-1)
    z = np.zeros_like(n)
    U = np.stack([
        np.stack([Sss, Ss, z, z, z], -1),
        np.stack([Ss, n, z, z, z], -1),
        np.stack([z, z, S22, S2, S2c], -1),
        np.stack([z, z, S2, n, Sc], -1),
        np.stack([z, z, S2c, Sc, Scc], -1),
    ], -2)
    W = np.stack([s * jtx, jtx, s2 * jty, jty, cc2 * jty], -1)
    V = jtx * jtx + jty * jty
    return U, W, V, (s, s2, cc2, jtx, jty)


def _gradients(cols, rx, ry):
    s, s2, cc2, jtx, jty = cols
    bg = np.stack([(s * rx).sum(-1), rx.sum(-1), (s2 * ry).sum(-1), ry.sum(-1), (cc2 * ry).sum(-1)], -1)
    bt = jtx * rx + jty * ry
    return bg, bt


def _schur(U, W, V):
    return U - np.einsum("...ni,...nj->...ij", W / V[..., None], W)


def _refine_chunk(x, y, p, t, max_iter, tol):
    lam = np.full(p.shape[:-1], 1e-3)
    rx, ry = _residuals(x, y, p, t)
    cost = (rx * rx + ry * ry).sum(-1)
    done = np.zeros(p.shape[:-1], dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        U, W, V, cols = _normal_system(p, t)
        bg, bt = _gradients(cols, rx, ry)
        diag = np.diagonal(U, axis1=-2, axis2=-1)
        Ud = U + (lam[..., None] * diag)[..., None] * np.eye(5)
        Vd = V * (1.0 + lam[..., None]) + 1e-300
        S = _schur(Ud, W, Vd)
        rhs = bg - np.einsum("...ni,...n->...i", W, bt / Vd)
        try:
            dg = np.linalg.solve(S, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            dg = (np.linalg.pinv(S) @ rhs[..., None])[..., 0]
        dt = (bt - np.einsum("...ni,...i->...n", W, dg)) / Vd
        p_new, t_new = p + dg, t + dt
        rx_new, ry_new = _residuals(x, y, p_new, t_new)
        cost_new = (rx_new * rx_new + ry_new * ry_new).sum(-1)
        ok = (cost_new <= cost) & ~done & np.isfinite(cost_new)
        okp = ok[..., None]
        p = np.where(okp, p_new, p)
        t = np.where(okp, t_new, t)
        rx = np.where(okp, rx_new, rx)
        ry = np.where(okp, ry_new, ry)
        cost = np.where(ok, cost_new, cost)
        rel = np.abs(dg).max(-1) / np.maximum(np.abs(p).max(-1), 1e-300)
        done |= (ok & (rel < tol)) | (lam > 1e10)
        lam = np.where(ok, np.maximum(lam / 10.0, 1e-12), lam * 10.0)
        if done.all():
            break
    return p, t, done, it


def refine(x, y, p0, t0=None, max_iter: int = 100, tol: float = 1e-10):
    """Geometric least squares over (A, B, C, D, phi, t_1..t_N).

    Works on arbitrary leading batch dimensions. Returns canonical parameters,
    per-point phases, a convergence mask and the iteration count.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    t0 = phases_from_params(x, y, p0) if t0 is None else np.broadcast_to(t0, x.shape).astype(float)
    if x.ndim == 1:
        p, t, done, it = _refine_chunk(x, y, p0, t0, max_iter, tol)
        return _canonical(p), t, done, it
    lead = x.shape[:-1]
    n = x.shape[-1]
    xf, yf = x.reshape(-1, n), y.reshape(-1, n)
    pf, tf = np.broadcast_to(p0, lead + (5,)).reshape(-1, 5), t0.reshape(-1, n)
    step = max(1, _CHUNK // n)
    ps, ts, ds, its = [], [], [], 0
    for i in range(0, xf.shape[0], step):
        sl = slice(i, i + step)
        p, t, done, it = _refine_chunk(xf[sl], yf[sl], pf[sl], tf[sl], max_iter, tol)
        ps.append(p)
        ts.append(t)
        ds.append(done)
        its = max(its, it)
    p = np.concatenate(ps).reshape(lead + (5,))
    t = np.concatenate(ts).reshape(x.shape)
    done = np.concatenate(ds).reshape(lead)
    return _canonical(p), t, done, its


def parameter_covariance(x, y, p, t) -> tuple[np.ndarray, float]:
    """Linearized covariance of (A, B, C, D, phi) and the residual variance.

    The residual variance uses N - 5 degrees of freedom: each point contributes
    two residuals but also one fitted phase.
    """
    U, W, V, _ = _normal_system(p, t)
    S = _schur(U, W, V)
    rx, ry = _residuals(x, y, p, t)
    n = x.shape[-1]
    s2 = (rx * rx + ry * ry).sum(-1) / max(n - 5, 1)
    return np.linalg.inv(S) * np.asarray(s2)[..., None, None], s2


# -- public API ------------------------------------------------------------


def _as_xy(points, y=None):
    if y is None:
        arr = np.asarray(points, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("points must be an (N, 2) array or pass x and y separately")
        return arr[:, 0], arr[:, 1]
    return np.asarray(points, dtype=float), np.asarray(y, dtype=float)


def fit_params(x, y, refine_fit: bool = True) -> np.ndarray:
    """Batched fit returning only the (..., 5) parameter array. Fast path for Monte Carlo."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] < 6:
        raise TooFewPoints(f"need at least 6 points, got {x.shape[-1]}")
    p = conic_to_params(fit_conic(x, y))
    if refine_fit:
        p = refine(x, y, p)[0]
    return p


def _bootstrap_phi(x, y, p, t, n_boot, rng, refine_fit):
    """Residual bootstrap: resample signed normal distances and re-apply them along the local normals."""
    n = x.shape[-1]
    A, B, C, D, phi = p
    xf = A * np.sin(t) + B
    yf = C * np.sin(t + phi) + D
    nx, ny = C * np.cos(t + phi), -A * np.cos(t)
    norm = np.hypot(nx, ny)
    nx, ny = nx / norm, ny / norm
    d = (x - xf) * nx + (y - yf) * ny
    d = (d - d.mean()) * np.sqrt(n / max(n - 5, 1))
    idx = rng.integers(0, n, size=(n_boot, n))
    xb = xf + d[idx] * nx
    yb = yf + d[idx] * ny
    if refine_fit:
        pb = refine(xb, yb, p, t0=t, max_iter=50, tol=1e-8)[0]
    else:
        pb = conic_to_params(fit_conic(xb, yb))
    return pb[:, 4]


def fit_ellipse(
    points,
    y=None,
    *,
    refine_fit: bool = True,
    n_boot: int = N_BOOT_DEFAULT,
    dphi_method: str = "bootstrap",
    seed: int = 0,
) -> FitReport:
    """Fit one ellipse and estimate the uncertainty of its phase.

    Parameters
    ----------
    points : (N, 2) array, or x values when ``y`` is given
    refine_fit : run the geometric stage after the algebraic fit
    n_boot : residual-bootstrap resamples used when ``dphi_method="bootstrap"``
    dphi_method : ``"bootstrap"`` or ``"linear"`` (covariance from the Jacobian)
    seed : seed of the bootstrap resampling stream

    Raises
    ------
    TooFewPoints, DegenerateConic
    """
    x, y = _as_xy(points, y)
    n = x.size
    if n < 6:
        raise TooFewPoints(f"need at least 6 points, got {n}")
    if dphi_method not in ("bootstrap", "linear"):
        raise ValueError("dphi_method must be 'bootstrap' or 'linear'")
    p = conic_to_params(fit_conic(x, y))
    iterations = 0
    converged = True
    if refine_fit:
        p, t, done, iterations = refine(x, y, p)
        converged = bool(done)
    else:
        t = phases_from_params(x, y, p)
    rx, ry = _residuals(x, y, p, t)
    rms = float(np.sqrt(np.mean(rx * rx + ry * ry)))
    cov, _ = parameter_covariance(x, y, p, t)
    dphi_lin = float(np.sqrt(max(cov[4, 4], 0.0)))
    if dphi_method == "bootstrap" and n_boot > 1:
        phis = _bootstrap_phi(x, y, p, t, n_boot, np.random.default_rng(seed), refine_fit)
        dphi = float(np.std(phis, ddof=1))
        used = "bootstrap"
    else:
        dphi, used, n_boot = dphi_lin, "linear", 0
    return FitReport(
        params=EllipseParams.from_array(p),
        dphi=dphi,
        rms=rms,
        n_points=n,
        converged=converged,
        dphi_method=used,
        n_boot=n_boot,
        dphi_linear=dphi_lin,
        iterations=iterations,
        meta={"seed": seed, "refined": refine_fit},
    )


# -- detection-efficiency ratio ----------------------------------------------


@dataclass(frozen=True)
class XiPoint:
    xi: float
    phi: float
    dphi: float


@dataclass(frozen=True)
class XiEstimate:
    xi_hat: float | tuple[float, float]
    phi_at_min: float
    dphi_at_min: float
    curvature: float
    report: FitReport


def _fit_at_xi(areas, xi, fit_kwargs) -> FitReport:
    x, y = normalized_populations(areas, xi)
    return fit_ellipse(x, y, **fit_kwargs)


def phi_vs_xi(areas, xi_grid: Sequence[float], **fit_kwargs) -> list[XiPoint]:
    """Refit the ellipse for each trial efficiency ratio.

    ``areas`` is an (N, 4) array of peak areas ordered A11, A21, A12, A22.
    Extra keyword arguments go to :func:`fit_ellipse`.
    """
    if len(xi_grid) < 5:
        raise ValueError("xi grid needs at least 5 values")
    out = []
    for xi in xi_grid:
        rep = _fit_at_xi(areas, float(xi), fit_kwargs)
        out.append(XiPoint(float(xi), rep.phi, rep.dphi))
    return out


def golden_section(f, lo: float, hi: float, tol: float = 1e-4):
    """Minimize a unimodal function on [lo, hi]; returns (x_min, f(x_min))."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    if fc < fd:
        return c, fc
    return d, fd


def estimate_xi(
    areas,
    interval: tuple[float, float] = (0.9, 1.1),
    *,
    per_cloud: bool = False,
    tol: float = 1e-4,
    dphi_method: str = "linear",
    n_boot: int = N_BOOT_DEFAULT,
    seed: int = 0,
    sweeps: int = 3,
) -> XiEstimate:
    """Detection-efficiency ratio that minimizes the fitted phase uncertainty.

    With ``per_cloud=True`` the two clouds get independent ratios, found by
    alternating one-dimensional searches. The default ``dphi_method="linear"``
    keeps the objective smooth in xi; a bootstrap objective uses the same
    resampling stream at every xi.

    Raises NoMinimumInInterval when the minimizer sits on an interval edge.
    """
    lo, hi = interval
    kw = dict(dphi_method=dphi_method, n_boot=n_boot, seed=seed)

    def objective(xi):
        return _fit_at_xi(areas, xi, kw).dphi

    def check_edge(v):
        if v - lo < 2 * tol or hi - v < 2 * tol:
            raise NoMinimumInInterval(f"minimum at xi={v:.5f} touches the search interval {interval}")

    if not per_cloud:
        xi_hat, _ = golden_section(objective, lo, hi, tol)
        check_edge(xi_hat)
        h = max(20 * tol, 2e-3)
        f0, fp, fm = objective(xi_hat), objective(xi_hat + h), objective(xi_hat - h)
        rep = _fit_at_xi(areas, xi_hat, kw)
        return XiEstimate(float(xi_hat), rep.phi, rep.dphi, float((fp - 2 * f0 + fm) / h**2), rep)

    xl, xu = 1.0, 1.0
    for _ in range(sweeps):
        xl, _ = golden_section(lambda v: objective((v, xu)), lo, hi, tol)
        xu, _ = golden_section(lambda v: objective((xl, v)), lo, hi, tol)
    check_edge(xl)
    check_edge(xu)
    h = max(20 * tol, 2e-3)
    f0 = objective((xl, xu))
    curv = (objective((xl + h, xu + h)) - 2 * f0 + objective((xl - h, xu - h))) / h**2
    rep = _fit_at_xi(areas, (xl, xu), kw)
    return XiEstimate((float(xl), float(xu)), rep.phi, rep.dphi, float(curv), rep)
