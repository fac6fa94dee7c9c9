"""Cumulant functions, Legendre transforms and tilt parameters.

All cumulant callables are vectorised: ``psi`` maps an array of shape
``(..., d)`` to ``(...)``, ``grad`` to ``(..., d)`` and ``hess`` to
``(..., d, d)``.  The quantity ``dual(theta) = theta . grad_psi(theta) -
psi(theta)`` equals the rate function evaluated at the mean parameter
``mu_theta`` and is used everywhere instead of inverting the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import expit

from .errors import BracketError, DomainError, InfeasibleEvent, NonConvergence


@dataclass(frozen=True)
class Tolerances:
    root_abs: float = 1e-10
    roundtrip: float = 1e-8
    newton_maxiter: int = 100
    backtrack_halvings: int = 40
    fd_rel_step: float = 1e-5
    membership: float = 1e-9
    ray_bisections: int = 60


TOL = Tolerances()


def _as_batch(theta, dim):
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0:
        theta = theta.reshape(1)
    if theta.shape[-1] != dim:
        raise ValueError(f"expected trailing dimension {dim}, got shape {theta.shape}")
    return theta


class CumulantModel:
    """Log-MGF of an increment law together with its first two derivatives.

    Missing derivatives are filled in by central finite differences with
    step ``fd_rel_step * (1 + |theta|)``.
    """

    def __init__(self, dim, psi, grad_psi=None, hess_psi=None, theta_domain=None, name=""):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self._psi = psi
        self._grad = grad_psi
        self._hess = hess_psi
        self._domain = theta_domain
        self.name = name

    def __repr__(self):
        return f"CumulantModel({self.name or 'custom'}, dim={self.dim})"

    def psi(self, theta):
        return np.asarray(self._psi(_as_batch(theta, self.dim)), dtype=float)

    def grad(self, theta):
        theta = _as_batch(theta, self.dim)
        if self._grad is not None:
            return np.asarray(self._grad(theta), dtype=float)
        return self._fd(self.psi, theta)

    def hess(self, theta):
        theta = _as_batch(theta, self.dim)
        if self._hess is not None:
            return np.asarray(self._hess(theta), dtype=float)
        return np.swapaxes(self._fd(self.grad, theta), -1, -2)

    def _fd(self, fun, theta):
        h = TOL.fd_rel_step * (1.0 + np.linalg.norm(theta, axis=-1, keepdims=True))
        cols = []
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            diff = fun(theta + h * e) - fun(theta - h * e)
            step = 2 * h if diff.ndim == theta.ndim else 2 * h[..., 0]
            cols.append(diff / step)
        return np.stack(cols, axis=-1)

    def contains(self, theta):
        theta = _as_batch(theta, self.dim)
        if self._domain is None:
            return np.all(np.isfinite(theta), axis=-1)
        return np.asarray(self._domain(theta), dtype=bool) & np.all(np.isfinite(theta), axis=-1)

    def dual(self, theta):
        """``theta . grad_psi(theta) - psi(theta)``, i.e. the rate at ``mu_theta``."""
        theta = _as_batch(theta, self.dim)
        return np.sum(theta * self.grad(theta), axis=-1) - self.psi(theta)

    @property
    def mean(self):
        return self.grad(np.zeros(self.dim))

    def ray_limit(self, direction, r_max=1e3):
        """Largest r (capped at ``r_max``) with ``r * direction`` in the domain."""
        u = np.asarray(direction, dtype=float)
        if self.contains(r_max * u):
            return r_max
        lo, hi = 0.0, r_max
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.contains(mid * u):
                lo = mid
            else:
                hi = mid
        return lo


# --------------------------------------------------------------------------
# Concrete cumulant models


def gaussian_cumulant(mean=0.0, var=1.0):
    def psi(t):
        return mean * t[..., 0] + 0.5 * var * t[..., 0] ** 2

    def grad(t):
        return mean + var * t

    def hess(t):
        return np.full(t.shape + (1,), var)

    return CumulantModel(1, psi, grad, hess, name=f"gaussian({mean},{var})")


def two_point_cumulant(lo, hi, p):
    """Increment equal to ``hi`` with probability ``p`` and ``lo`` otherwise."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    span = hi - lo
    log_p, log_q = np.log(p), np.log1p(-p)

    def weight_hi(t):
        return expit(log_p + t[..., 0] * span - log_q)

    def psi(t):
        return np.logaddexp(log_q + t[..., 0] * lo, log_p + t[..., 0] * hi)

    def grad(t):
        return (lo + span * weight_hi(t))[..., None]

    def hess(t):
        s = weight_hi(t)
        return (span ** 2 * s * (1 - s))[..., None, None]

    return CumulantModel(1, psi, grad, hess, name=f"two_point({lo},{hi},{p})")


def bernoulli_cumulant(p):
    return two_point_cumulant(0.0, 1.0, p)


def point_mass_cumulant(value):
    def psi(t):
        return value * t[..., 0]

    def grad(t):
        return np.full(t.shape, float(value))

    def hess(t):
        return np.zeros(t.shape + (1,))

    return CumulantModel(1, psi, grad, hess, name=f"point_mass({value})")


def mixture_square_cumulant():
    """Cumulant of ``(X, X^2)`` with X an equal mixture of N(1,1) and N(-1,1).

    Under the tilt ``theta``, the component sign s has posterior mean
    ``tanh(theta_1 / a)`` and ``X | s ~ N((theta_1 + s) / a, 1 / a)`` with
    ``a = 1 - 2 theta_2``; all moments below follow from that.
    """

    def _parts(t):
        t1, t2 = t[..., 0], t[..., 1]
        a = 1.0 - 2.0 * t2
        z = t1 / a
        q = 0.5 * (1.0 + np.tanh(z))
        m_plus, m_minus = (t1 + 1.0) / a, (t1 - 1.0) / a
        return t1, a, z, q, m_plus, m_minus

    def _moment(q, mp, mm, k):
        return q * mp ** k + (1.0 - q) * mm ** k

    def psi(t):
        t1, a, z, *_ = _parts(t)
        with np.errstate(invalid="ignore", divide="ignore"):
            return (-0.5 + (t1 ** 2 + 1.0) / (2.0 * a) - 0.5 * np.log(a)
                    + np.logaddexp(z, -z) - np.log(2.0))

    def grad(t):
        _, a, _, q, mp, mm = _parts(t)
        return np.stack([_moment(q, mp, mm, 1), _moment(q, mp, mm, 2) + 1.0 / a], axis=-1)

    def hess(t):
        _, a, _, q, mp, mm = _parts(t)
        e1, e2, e3, e4 = (_moment(q, mp, mm, k) for k in (1, 2, 3, 4))
        var_x = 1.0 / a + e2 - e1 ** 2
        cov = (e3 - e1 * e2) + 2.0 * e1 / a
        var_x2 = e4 + 6.0 * e2 / a + 3.0 / a ** 2 - (e2 + 1.0 / a) ** 2
        row0 = np.stack([var_x, cov], axis=-1)
        row1 = np.stack([cov, var_x2], axis=-1)
        return np.stack([row0, row1], axis=-2)

    def domain(t):
        return t[..., 1] < 0.5

    return CumulantModel(2, psi, grad, hess, domain, name="mixture_square")


# --------------------------------------------------------------------------
# Legendre transform


def _objective(model, theta, y):
    return np.sum(theta * y, axis=-1) - model.psi(theta)


def _newton_max(model, Y, theta0, maxiter=TOL.newton_maxiter, tol=TOL.root_abs):
    """Batched damped Newton for ``max_theta theta.y - psi(theta)``.

    Returns ``(theta, converged)``.  Elements whose backtracking cannot find an
    in-domain ascent step are left unconverged.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    theta = np.array(np.broadcast_to(theta0, Y.shape), dtype=float)
    converged = np.zeros(len(Y), dtype=bool)
    stalled = np.zeros(len(Y), dtype=bool)
    scale = tol * (1.0 + np.linalg.norm(Y, axis=-1))
    with np.errstate(all="ignore"):
        for _ in range(maxiter):
            resid = Y - model.grad(theta)
            converged |= np.linalg.norm(resid, axis=-1) <= scale
            active = np.flatnonzero(~converged & ~stalled)
            if active.size == 0:
                break
            th, y = theta[active], Y[active]
            H = model.hess(th)
            try:
                step = np.linalg.solve(H, resid[active][..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = resid[active] / np.maximum(np.trace(H, axis1=-2, axis2=-1), 1e-300)[:, None]
            f0 = _objective(model, th, y)
            lam = np.ones(len(active))
            ok = np.zeros(len(active), dtype=bool)
            for _ in range(TOL.backtrack_halvings):
                todo = ~ok
                cand = th[todo] + lam[todo, None] * step[todo]
                good = model.contains(cand)
                fc = np.where(good, _objective(model, np.where(good[:, None], cand, 0.0), y[todo]), -np.inf)
                good &= fc >= f0[todo] - 1e-13 * (1.0 + np.abs(f0[todo]))
                idx = np.flatnonzero(todo)
                ok[idx[good]] = True
                th[idx[good]] = cand[good]
                lam[idx[~good]] *= 0.5
                if ok.all():
                    break
            theta[active] = th
            stalled[active[~ok]] = True
    return theta, converged


def theta_of_mu(model, mu):
    """Natural parameter whose mean parameter is ``mu``."""
    mu = _as_batch(mu, model.dim).reshape(model.dim)
    theta, conv = _newton_max(model, mu[None, :], np.zeros(model.dim))
    if conv[0]:
        return theta[0]
    if model.dim == 1:
        return np.array([_theta_of_mu_bisect(model, float(mu[0]))])
    if not model.contains(theta[0]):
        raise DomainError(f"Newton iterates left the parameter domain for mu={mu}")
    raise NonConvergence(f"Newton did not converge for mu={mu}")


def _theta_of_mu_bisect(model, mu):
    def f(t):
        return float(model.grad(np.array([t]))[0]) - mu

    lo, hi = -1.0, 1.0
    lim_hi = model.ray_limit(np.array([1.0]))
    lim_lo = -model.ray_limit(np.array([-1.0]))
    for _ in range(200):
        flo = f(max(lo, lim_lo * (1 - 1e-12)))
        fhi = f(min(hi, lim_hi * (1 - 1e-12)))
        if flo <= 0.0 <= fhi:
            break
        if fhi < 0:
            hi = min(2 * hi, lim_hi)
        if flo > 0:
            lo = max(2 * lo, lim_lo)
    else:
        raise DomainError(f"mu={mu} is outside the range of grad_psi")
    lo, hi = max(lo, lim_lo * (1 - 1e-12)), min(hi, lim_hi * (1 - 1e-12))
    if not (f(lo) <= 0.0 <= f(hi)):
        raise DomainError(f"mu={mu} is outside the range of grad_psi")
    root = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(f(root)) > TOL.root_abs * (1 + abs(mu)):
        raise NonConvergence(f"bisection fallback stalled at mu={mu}")
    return root


def rate(model, mu):
    """Rate function phi(mu) = sup_theta {theta.mu - psi(theta)}."""
    mu = _as_batch(mu, model.dim).reshape(model.dim)
    theta = theta_of_mu(model, mu)
    return max(float(theta @ mu - model.psi(theta)), 0.0)


# --------------------------------------------------------------------------
# Level sets of the rate in the natural parameter


def _directions(n_angles):
    omega = -np.pi + 2 * np.pi * np.arange(n_angles) / n_angles
    return omega, np.stack([np.cos(omega), np.sin(omega)], axis=-1)


def ray_radius(model, U, level, r_cap=1e3):
    """Radius r along each unit direction with ``dual(r u) = level``.

    The dual is increasing along rays from the origin (its radial derivative
    is ``r u'H u``), so a vectorised bisection on the monotone predicate
    "outside the domain or dual >= level" works.  The returned radius is the
    inner end of the final bracket, hence always a member of the level set.
    """
    U = np.atleast_2d(U)
    lo = np.zeros(len(U))
    hi = np.ones(len(U))

    def past(r):
        th = r[:, None] * U
        inside = model.contains(th)
        out = ~inside
        with np.errstate(all="ignore"):
            d = model.dual(np.where(inside[:, None], th, 0.0))
        return out | (d >= level)

    while True:
        p = past(hi)
        if p.all():
            break
        capped = ~p & (hi >= r_cap)
        if np.all(p | capped):
            hi = np.where(capped, r_cap, hi)
            lo = np.where(capped, r_cap, lo)
            break
        hi = np.where(p, hi, np.minimum(2 * hi, r_cap))
    for _ in range(TOL.ray_bisections):
        mid = 0.5 * (lo + hi)
        p = past(mid)
        hi = np.where(p, mid, hi)
        lo = np.where(p, lo, mid)
    return lo


def _ray_radius_newton(model, U, level, r0):
    """Newton polish of ``ray_radius`` from a nearby start (batched)."""
    r = np.array(r0, dtype=float)
    with np.errstate(all="ignore"):
        for _ in range(8):
            th = r[:, None] * U
            g = model.dual(th) - level
            H = model.hess(th)
            slope = r * np.einsum("bi,bij,bj->b", U, H, U)
            step = np.where(slope > 0, g / slope, 0.0)
            r_new = r - step
            bad = ~np.isfinite(r_new) | (r_new <= 0) | ~model.contains(r_new[:, None] * U)
            r = np.where(bad, 0.5 * r, r_new)
            if np.all(np.abs(step) <= 1e-13 * (1 + r)):
                break
        # nudge inward so members satisfy the inequality up to round-off
        d = model.dual(r[:, None] * U)
        r = np.where(d > level, r * (1 - 1e-12), r)
    return r


class LevelSet:
    """The tilt region ``M = {theta : rate(mu_theta) <= I}``.

    In one dimension M is stored as the interval ``[theta_minus, theta_plus]``.
    In two dimensions M is star-shaped about the origin, and its boundary is
    tabulated on ``n_angles`` directions; membership is answered by direct
    evaluation of ``dual``.
    """

    def __init__(self, model, I, n_angles=2048):
        if model.dim > 2:
            raise NotImplementedError("level sets are supported for d <= 2")
        if I < 0:
            raise ValueError("I must be nonnegative")
        self.model = model
        self.I = float(I)
        self.unbounded = not np.isfinite(self.I)
        if self.unbounded:
            return
        if model.dim == 1:
            U = np.array([[-1.0], [1.0]])
            r = ray_radius(model, U, self.I)
            self.theta_minus, self.theta_plus = -r[0], r[1]
            self.boundary = np.array([[self.theta_minus], [self.theta_plus]])
        else:
            self.omega, self.U = _directions(n_angles)
            self.radius = ray_radius(model, self.U, self.I)
            self.boundary = self.radius[:, None] * self.U
            self._boundary_psi = model.psi(self.boundary)

    def __contains__(self, theta):
        return bool(np.all(self.membership(theta)))

    def membership(self, theta):
        theta = _as_batch(theta, self.model.dim)
        inside = self.model.contains(theta)
        if self.unbounded:
            return inside
        with np.errstate(all="ignore"):
            d = self.model.dual(np.where(inside[..., None], theta, 0.0))
        return inside & (d <= self.I + TOL.membership * (1 + self.I))

    @property
    def kappa(self):
        """sup of |theta| over M (diagnostic only)."""
        if self.unbounded:
            return np.inf
        return float(np.max(np.linalg.norm(self.boundary, axis=-1)))

    def argmax(self, x, t):
        """Batched ``argmax_{theta in M} theta.x/t - psi(theta)``."""
        x = _as_batch(x, self.model.dim)
        shape = x.shape
        Y = x.reshape(-1, self.model.dim) / float(t)
        if self.unbounded:
            theta, conv = _newton_max(self.model, Y, np.zeros(self.model.dim))
            if not conv.all():
                raise NonConvergence("unconstrained tilt did not converge")
            out = theta
        elif self.model.dim == 1:
            out = self._argmax_1d(Y[:, 0])[:, None]
        else:
            out = self._argmax_2d(Y)
        return out.reshape(shape)

    def _argmax_1d(self, y):
        model, lo, hi = self.model, self.theta_minus, self.theta_plus
        g_lo = model.grad(np.array([lo]))[0]
        g_hi = model.grad(np.array([hi]))[0]
        out = np.where(y >= g_hi, hi, np.where(y <= g_lo, lo, 0.0))
        mid = (y > g_lo) & (y < g_hi)
        if mid.any():
            out[mid] = _solve_increasing(model, y[mid], lo, hi)
        return out

    def _argmax_2d(self, Y):
        model = self.model
        F = Y @ self.boundary.T - self._boundary_psi
        fmax = F.max(axis=1, keepdims=True)
        tie = F >= fmax - 1e-12 * (1 + np.abs(fmax))
        b1, b2 = self.boundary[:, 0], self.boundary[:, 1]
        first = np.where(tie, b1, np.inf).min(axis=1, keepdims=True)
        tie &= b1 == first
        k = np.argmin(np.where(tie, b2, np.inf), axis=1)

        theta_b = self._refine_boundary(Y, k)
        # outside-M screen: any theta with objective above I certifies rate(y) > I
        f_b = _objective(model, theta_b, Y)
        need = np.flatnonzero(f_b <= self.I)
        out = theta_b
        if need.size:
            th, conv = _newton_max(model, Y[need], theta_b[need], maxiter=50)
            inner = conv & self.membership(th)
            out[need[inner]] = th[inner]
        return out

    def _refine_boundary(self, Y, k):
        """Golden-section search on the boundary angle around grid cell k."""
        n = len(self.omega)
        step = 2 * np.pi / n
        a = self.omega[k] - step
        b = self.omega[k] + step
        r_guess = self.radius[k]
        gr = 0.5 * (np.sqrt(5.0) - 1.0)

        def evaluate(w, r0):
            U = np.stack([np.cos(w), np.sin(w)], axis=-1)
            r = _ray_radius_newton(self.model, U, self.I, r0)
            th = r[:, None] * U
            return _objective(self.model, th, Y), th, r

        c = b - gr * (b - a)
        d = a + gr * (b - a)
        fc, thc, rc = evaluate(c, r_guess)
        fd, thd, rd = evaluate(d, r_guess)
        for _ in range(18):
            left = fc >= fd
            a = np.where(left, a, c)
            b = np.where(left, d, b)
            new_c = b - gr * (b - a)
            new_d = a + gr * (b - a)
            w_new = np.where(left, new_c, new_d)
            r0 = np.where(left, rc, rd)
            fn, thn, rn = evaluate(w_new, r0)
            fd = np.where(left, fc, fn)
            thd = np.where(left[:, None], thc, thn)
            rd = np.where(left, rc, rn)
            fc = np.where(left, fn, fc)
            thc = np.where(left[:, None], thn, thc)
            rc = np.where(left, rn, rc)
            c = np.where(left, new_c, c)
            d = np.where(left, d, new_d)
        best = np.where((fc >= fd)[:, None], thc, thd)
        fbest = np.maximum(fc, fd)
        # never do worse than the tabulated grid point
        grid_th = self.boundary[k]
        grid_f = _objective(self.model, grid_th, Y)
        return np.where((fbest >= grid_f)[:, None], best, grid_th)


def _solve_increasing(model, y, lo, hi):
    """Batched safeguarded Newton for ``psi'(theta) = y`` on ``[lo, hi]`` (d=1)."""
    a = np.full(len(y), lo, dtype=float)
    b = np.full(len(y), hi, dtype=float)
    th = 0.5 * (a + b)
    for _ in range(200):
        g = model.grad(th[:, None])[:, 0] - y
        done = np.abs(g) <= TOL.root_abs * (1 + np.abs(y))
        if done.all():
            break
        a = np.where(g < 0, th, a)
        b = np.where(g > 0, th, b)
        h = model.hess(th[:, None])[:, 0, 0]
        with np.errstate(all="ignore"):
            nt = th - g / h
        use_bis = ~np.isfinite(nt) | (nt <= a) | (nt >= b)
        nt = np.where(use_bis, 0.5 * (a + b), nt)
        th = np.where(done, th, nt)
        if np.all(done | (b - a <= 1e-15 * (1 + np.abs(th)))):
            break
    return th


def argmax_over_M(levelset, x, t):
    """Constrained tilt ``argmax_{theta in M} theta.x/t - psi(theta)``."""
    if t < 1:
        raise ValueError("t must be a positive integer")
    return levelset.argmax(x, t)


# --------------------------------------------------------------------------
# Rate minimum over a tail event


def compute_I(model, g, b, n_angles=1024):
    """``I = inf{rate(mu) : g(mu) >= b}`` together with the minimiser.

    The sublevel sets of the rate are images of the star-shaped sets
    ``{dual <= s}``; I is the smallest s whose boundary reaches ``g >= b``.
    A bisection on s over tabulated boundaries brackets I, then the optimal
    direction is refined by minimising the rate at the first crossing of
    ``g = b`` along that ray.
    """
    mu0 = model.mean
    if not g(mu0[None, :])[0] < b:
        raise DomainError("compute_I requires b > g(mu0)")
    if model.dim == 1:
        U = np.array([[-1.0], [1.0]])
    elif model.dim == 2:
        _, U = _directions(n_angles)
    else:
        raise NotImplementedError("compute_I supports d <= 2")

    def reach(s):
        r = ray_radius(model, U, s)
        vals = g(model.grad(r[:, None] * U))
        vals = np.where(np.isfinite(vals), vals, -np.inf)
        return vals.max(), int(np.argmax(vals))

    lo, hi = 0.0, 0.125
    while reach(hi)[0] < b:
        lo, hi = hi, 2 * hi
        if hi > 1e4:
            raise InfeasibleEvent(f"no mean parameter with g >= {b} found")
    while hi - lo > 1e-7 * (1 + hi):
        mid = 0.5 * (lo + hi)
        if reach(mid)[0] >= b:
            hi = mid
        else:
            lo = mid
    _, k = reach(hi)
    r_outer = ray_radius(model, U, 2 * hi + 1e-3)

    def crossing_rate(u, r_max):
        def h(r):
            return float(g(model.grad(r * u[None, :]))[0]) - b

        if h(r_max) < 0:
            return np.inf, None
        grid = np.linspace(0.0, r_max, 65)
        vals = np.array([h(r) for r in grid])
        j = int(np.argmax(vals >= 0))
        r = brentq(h, grid[j - 1], grid[j], xtol=1e-14, rtol=4 * np.finfo(float).eps)
        th = r * u
        return float(model.dual(th[None, :])[0]), th

    if model.dim == 1:
        best = min((crossing_rate(U[i], r_outer[i]) for i in range(2)),
                   key=lambda p: p[0])
    else:
        step = 2 * np.pi / n_angles
        w0 = np.arctan2(U[k, 1], U[k, 0])

        def obj(w):
            u = np.array([np.cos(w), np.sin(w)])
            r_max = float(ray_radius(model, u[None, :], 2 * hi + 1e-3)[0])
            val, _ = crossing_rate(u, r_max)
            return val if np.isfinite(val) else 1e6

        res = minimize_scalar(obj, bounds=(w0 - 2 * step, w0 + 2 * step), method="bounded",
                              options={"xatol": 1e-11})
        u = np.array([np.cos(res.x), np.sin(res.x)])
        r_max = float(ray_radius(model, u[None, :], 2 * hi + 1e-3)[0])
        best = crossing_rate(u, r_max)
    I, theta = best
    if theta is None:
        raise NonConvergence("could not locate the rate minimiser")
    mu_star = model.grad(theta[None, :])[0]
    return I, mu_star


def theta_star(model, theta_max=None, n_scan=400):
    """Unique positive root of psi (d=1, negative drift)."""
    if model.dim != 1:
        raise ValueError("theta_star is defined for d=1")
    if theta_max is None:
        theta_max = min(model.ray_limit(np.array([1.0])), 50.0) * (1 - 1e-9)

    def f(t):
        return float(model.psi(np.array([t])))

    grid = np.linspace(theta_max / n_scan, theta_max, n_scan)
    vals = np.array([f(t) for t in grid])
    sign_change = np.flatnonzero((vals[:-1] < 0) & (vals[1:] >= 0))
    if vals[0] >= 0 or sign_change.size == 0:
        raise BracketError("psi has no sign change on (0, theta_max]")
    i = sign_change[0]
    root = brentq(f, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
    if abs(f(root)) > TOL.root_abs:
        raise NonConvergence("theta_star residual above tolerance")
    return root
