"""Projection direction for bias correction.

For a PSD matrix ``H`` (the weighted Gram matrix) and a loading ``x`` we
need

    u = argmin u'Hu   s.t.  ||Hu - x||_inf <= ||x||_2 * lam,
                            |x'Hu - ||x||_2^2| <= ||x||_2^2 * lam.

The program is solved through its Lagrangian dual. With ``xb = x/||x||``
and ``M = [xb, I]`` the dual is the L1-penalised quadratic

    min_v  v'M'HMv / 4 + b'v + lam * ||v||_1,    b = M'xb,

and ``u = -||x|| * M v / 2``. Stationarity of the dual in coordinate k is
exactly the k-th primal constraint, so the dual coordinate-descent
iterate is driven until the primal constraints check out. Infeasibility
shows up as an unbounded dual; the smallest feasible radius is computed
up front by a linear program.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import _kernels
from .model import InputError, ModelKind, link_derivative, weight

FEAS_TOL = 1e-6


class ProjectionError(RuntimeError):
    """No feasible projection direction could be produced."""

    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


@dataclass
class ProjectionProblem:
    H: np.ndarray
    x_new: np.ndarray
    lam: float

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        x = np.asarray(self.x_new, dtype=float).reshape(-1)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] != x.size:
            raise InputError(f"H must be square matching x_new (got {H.shape} and {x.size})")
        scale = max(float(np.max(np.abs(H))), 1.0)
        if np.max(np.abs(H - H.T)) > 1e-10 * scale:
            raise InputError("H is not symmetric")
        if not np.linalg.norm(x) > 0:
            raise InputError("x_new must be nonzero")
        if not self.lam > 0:
            raise InputError("lam must be positive")
        self.H = 0.5 * (H + H.T)
        self.x_new = x

    def check_psd(self) -> None:
        eig = np.linalg.eigvalsh(self.H)
        if eig[0] < -1e-8 * max(abs(eig[-1]), 1.0):
            raise InputError(f"H is not positive semi-definite (min eigenvalue {eig[0]:.3g})")


@dataclass
class ProjectionDirection:
    u: np.ndarray
    constraint_infnorm: float
    alignment_gap: float
    objective: float
    mu_used: float
    feasible: bool
    sweeps: int = 0
    mix_weight: float = 0.0
    trace: list = field(default_factory=list)


def weighted_gram(X, beta, model, mask=None) -> np.ndarray:
    """(1/n') * sum over kept rows of omega(eta_i) f'(eta_i) X_i X_i'."""
    model = ModelKind.parse(model)
    X = np.asarray(X, dtype=float)
    if mask is not None:
        X = X[np.asarray(mask, dtype=bool)]
    n_kept = X.shape[0]
    if n_kept == 0:
        raise InputError("no observations left after filtering")
    if model is ModelKind.LINEAR:
        return X.T @ X / n_kept
    eta = X @ np.asarray(beta, dtype=float)
    c = np.asarray(weight(model, eta)) * np.asarray(link_derivative(model, eta))
    return (X * c[:, None]).T @ X / n_kept


def residuals(H, u, x_new):
    """(||Hu - x||_inf, |x'Hu - ||x||^2|, u'Hu) recomputed from scratch."""
    Hu = H @ u
    return (float(np.max(np.abs(Hu - x_new))), float(abs(x_new @ Hu - x_new @ x_new)),
            float(u @ Hu))


def certify(H, u, x_new, lam, tol=FEAS_TOL) -> bool:
    inf_res, gap, _ = residuals(H, u, x_new)
    xn = float(np.linalg.norm(x_new))
    return inf_res <= xn * lam * (1 + tol) and gap <= xn * xn * lam * (1 + tol)


def min_feasible_radius(H, x_new, return_point: bool = False):
    """Smallest ``lam`` for which the constraint set is nonempty (an LP).

    With ``return_point=True`` also returns the LP solution u, which is a
    feasible point for every radius above the minimum.
    """
    H = np.asarray(H, dtype=float)
    x_new = np.asarray(x_new, dtype=float)
    xn = np.linalg.norm(x_new)
    xb = x_new / xn
    d = xb.size
    hx = H @ xb
    ones = np.ones((d, 1))
    A = np.vstack([
        np.hstack([H, -ones]),
        np.hstack([-H, -ones]),
        np.hstack([hx[None, :], [[-1.0]]]),
        np.hstack([-hx[None, :], [[-1.0]]]),
    ])
    rhs = np.concatenate([xb, -xb, [1.0, -1.0]])
    cost = np.zeros(d + 1)
    cost[-1] = 1.0
    bounds = [(None, None)] * d + [(0.0, None)]
    res = linprog(cost, A_ub=A, b_ub=rhs, bounds=bounds, method="highs")
    if res.status != 0:
        raise ProjectionError(f"feasibility LP failed: {res.message}")
    r = float(res.x[-1])
    if return_point:
        return r, res.x[:d] * xn
    return r


def _relative_residuals(H, u, x_new):
    """Both constraint residuals in units of the radius."""
    inf_res, gap, _ = residuals(H, u, x_new)
    xn = float(np.linalg.norm(x_new))
    return inf_res / xn, gap / (xn * xn)


def _restore(H, u, anchor, x_new, lam, tol):
    """Shortest move from ``u`` toward the strictly feasible ``anchor``.

    Both constraints are convex, so the residuals of the mix are at most
    the mix of the residuals. Returns ``(u_mix, t)`` or None.
    """
    r_u = _relative_residuals(H, u, x_new)
    r_a = _relative_residuals(H, anchor, x_new)
    t = 0.0
    for ru, ra in zip(r_u, r_a):
        if ru > lam:
            if ra >= lam:
                return None
            t = max(t, (ru - lam) / (ru - ra))
    for _ in range(20):
        mix = (1.0 - t) * u + t * anchor
        if certify(H, mix, x_new, lam, tol):
            return mix, t
        t = min(1.0, t * 1.01 + 1e-12)
    return None


def _support_solution(Q, b, lam, v):
    """Solve the dual stationarity equations on the current support and signs.

    Q is always singular (M has a redundant column), so the solution is
    only determined up to null(Q_SS). Shifts along that null space leave
    M v, and hence u, H u and X u, unchanged; a shift that makes the signs
    agree with the support pattern is searched for by a small LP.
    Returns ``(target, sign_consistent)``.
    """
    S = np.flatnonzero(v)
    s = np.sign(v[S])
    QS = Q[np.ix_(S, S)]
    sol = np.linalg.lstsq(QS, -2.0 * (b[S] + lam * s), rcond=None)[0]
    target = np.zeros_like(v)
    target[S] = sol
    if np.all(np.sign(sol) == s):
        return target, True
    _, sv, Vt = np.linalg.svd(QS)
    null = Vt[sv <= sv[0] * 1e-10].T
    if null.shape[1] == 0:
        return target, False
    # maximise the smallest signed entry of sol + null @ t
    k = null.shape[1]
    A_ub = np.hstack([-(s[:, None] * null), np.ones((S.size, 1))])
    res = linprog(np.r_[np.zeros(k), -1.0], A_ub=A_ub, b_ub=s * sol,
                  bounds=[(None, None)] * k + [(None, 1.0)], method="highs")
    if res.status != 0:
        return target, False
    target[S] = sol + null @ res.x[:k]
    return target, bool(res.x[-1] >= 0)


def _null_step(v, xb):
    """Exact minimisation of the dual along its flat direction (1, -xb).

    M (1, -xb) = 0 and b'(1, -xb) = 0, so only the L1 term changes along
    that line; its minimiser is a weighted median. Coordinate descent
    alone crawls along this valley.
    """
    e = np.concatenate([[1.0], -xb])
    nz = e != 0
    z = -v[nz] / e[nz]
    w = np.abs(e[nz])
    order = np.argsort(z)
    cw = np.cumsum(w[order])
    t = z[order][np.searchsorted(cw, 0.5 * cw[-1])]
    return v + t * e


def _admm(H, xb, lam, u0, tol, max_iter=20_000):
    """Primal splitting on z = Hu with an exact projection of z.

    min u'Hu + indicator(z in C) s.t. Hu = z, where C is the box
    |z - xb|_inf <= lam intersected with the slab |xb'z - 1| <= lam. The
    u-step solves (2I + rho H) u = rho (z - w) in the eigenbasis of H;
    rho is rebalanced against the primal and dual residuals. Returns the
    best certified iterate, or the last one.
    """
    ev, V = np.linalg.eigh(H)
    ev = np.maximum(ev, 0.0)
    lo, hi = xb - lam, xb + lam
    a, b = 1.0 - lam, 1.0 + lam
    rho = 10.0 / max(float(np.mean(ev)), 1e-12)
    z = _kernels.box_slab(H @ u0, xb, lo, hi, a, b)
    w = np.zeros_like(z)
    z_old = z.copy()
    u = u0
    best = None
    for k in range(1, max_iter + 1):
        u = V @ ((V.T @ (rho * (z - w))) / (2.0 + rho * ev))
        Hu = H @ u
        z_old[:] = z
        _kernels.box_slab(Hu + w, xb, lo, hi, a, b, out=z)
        w += Hu - z
        if k % 10:
            continue
        r = float(np.linalg.norm(Hu - z))
        s = rho * float(np.linalg.norm(H @ (z - z_old)))
        if r <= 0.1 * tol * lam and s <= 1e-9 * max(1.0, rho * float(np.linalg.norm(H @ w))):
            if certify(H, u, xb, lam, tol):
                best = u
                break
        if r > 10.0 * s:
            rho *= 2.0
            w *= 0.5
        elif s > 10.0 * r:
            rho *= 0.5
            w *= 2.0
    return (best if best is not None else u), k


def solve_projection(problem: ProjectionProblem, tol: float = FEAS_TOL,
                     max_sweeps: int = 4_000, anchor=None,
                     max_mix: float = 0.01, admm_iter: int = 20_000) -> ProjectionDirection:
    """Solve the program at radius ``problem.lam``.

    Dual coordinate descent runs in rounds. After each round the primal
    point is certified directly, then via a support polish, and finally by
    mixing it with a strictly feasible ``anchor`` (the LP point from
    :func:`min_feasible_radius`, computed on demand) as long as the mix
    weight stays below ``max_mix``. Coordinate descent can crawl when the
    radius sits just above the smallest feasible one; once ``max_sweeps``
    is spent the primal splitting method :func:`_admm` continues from the
    current point. If that is not certified either, any mix weight is
    accepted and reported in ``mix_weight``.

    Raises :class:`ProjectionError` when the radius is infeasible (the
    dual diverges) or no certified point is found.
    """
    problem.check_psd()
    H, x, lam = problem.H, problem.x_new, float(problem.lam)
    xn = float(np.linalg.norm(x))
    xb = x / xn
    d = xb.size
    hx = H @ xb
    Q = np.empty((d + 1, d + 1))
    Q[0, 0] = xb @ hx
    Q[0, 1:] = hx
    Q[1:, 0] = hx
    Q[1:, 1:] = H
    b = np.concatenate([[1.0], xb])
    v = np.zeros(d + 1)
    Qv = np.zeros(d + 1)
    anchor_b = None if anchor is None else np.asarray(anchor, dtype=float) / xn
    # certify slightly inside the reported tolerance so rescaling by ||x||
    # cannot push the certificate over
    ctol_cert = tol * 0.5
    ctol = 1e-6
    budget = 32
    sweeps = 0
    mix = 0.0
    ub = np.zeros(d)
    done = False
    while sweeps < max_sweeps and not done:
        s, _, status = _kernels.cd_dual(Q, b, lam, v, Qv, ctol, min(budget, max_sweeps - sweeps))
        sweeps += s
        ub = -0.5 * (v[0] * xb + v[1:])
        if status == _kernels.STATUS_UNBOUNDED:
            raise ProjectionError(f"radius {lam:.4g} is infeasible (dual unbounded)",
                                  best=ub * xn, diagnostics={"lam": lam, "sweeps": sweeps})
        if status == _kernels.STATUS_CONVERGED and ctol > 1e-15:
            ctol *= 0.1
        v[:] = _null_step(v, xb)
        Qv[:] = Q @ v
        ub = -0.5 * (v[0] * xb + v[1:])
        if certify(H, ub, xb, lam, ctol_cert):
            break
        if np.any(v):
            target, consistent = _support_solution(Q, b, lam, v)
            up = -0.5 * (target[0] * xb + target[1:])
            if consistent and certify(H, up, xb, lam, ctol_cert):
                ub = up
                break
        if max(_relative_residuals(H, ub, xb)) <= lam * 1.05:
            if anchor_b is None:
                anchor_b = min_feasible_radius(H, xb, return_point=True)[1]
            restored = _restore(H, ub, anchor_b, xb, lam, ctol_cert)
            if restored is not None and restored[1] <= max_mix:
                ub, mix = restored
                done = True
    if not done and not certify(H, ub, xb, lam, ctol_cert):
        ua, iters = _admm(H, xb, lam, ub, ctol_cert, admm_iter)
        sweeps += iters
        if certify(H, ua, xb, lam, ctol_cert) or (
                max(_relative_residuals(H, ua, xb)) < max(_relative_residuals(H, ub, xb))):
            ub = ua
    if not done and not certify(H, ub, xb, lam, ctol_cert):
        if anchor_b is None:
            anchor_b = min_feasible_radius(H, xb, return_point=True)[1]
        restored = _restore(H, ub, anchor_b, xb, lam, ctol_cert)
        if restored is not None:
            ub, mix = restored
    u = ub * xn
    inf_res, gap, obj = residuals(H, u, x)
    if not certify(H, u, x, lam, tol):
        raise ProjectionError(
            f"projection solve at radius {lam:.4g} did not reach feasibility",
            best=ProjectionDirection(u, inf_res, gap, obj, lam, False, sweeps),
            diagnostics={"constraint_infnorm": inf_res, "alignment_gap": gap, "sweeps": sweeps})
    return ProjectionDirection(u, inf_res, gap, obj, lam, True, sweeps, mix_weight=mix)


def default_mu0(n: int, p: int) -> float:
    return math.sqrt(math.log(max(p, 2)) / n)


def auto_tune(H, x_new, n: int, p: int, factor: float = 2.0, max_steps: int = 12,
              margin: float = 0.05, trace: bool = False,
              tol: float = FEAS_TOL) -> ProjectionDirection:
    """Pick the radius from a decreasing geometric grid and solve.

    The grid is ``mu0 / factor**k`` for ``k < max_steps`` with
    ``mu0 = sqrt(log p / n)``. A grid point counts as feasible when it
    exceeds the LP minimal radius by the relative ``margin``; the smallest
    feasible grid point is used. With ``trace=True`` every feasible grid
    point is solved and ``(mu, objective)`` pairs are returned in
    ``result.trace`` (decreasing mu).
    """
    problem = ProjectionProblem(H, x_new, 1.0)
    problem.check_psd()
    r_min = min_feasible_radius(problem.H, problem.x_new)
    mu0 = default_mu0(n, p)
    grid = [mu0 / factor ** k for k in range(max_steps)]
    feasible = [mu for mu in grid if mu >= r_min * (1 + margin)]
    if not feasible:
        raise ProjectionError(
            f"no feasible radius on the grid (minimal radius {r_min:.4g} > mu0 {mu0:.4g})",
            diagnostics={"r_min": r_min, "grid": grid})
    if trace:
        steps = []
        result = None
        for mu in feasible:
            result = solve_projection(ProjectionProblem(problem.H, problem.x_new, mu), tol)
            steps.append((mu, result.objective))
        result.trace = steps
        return result
    return solve_projection(ProjectionProblem(problem.H, problem.x_new, feasible[-1]), tol)
