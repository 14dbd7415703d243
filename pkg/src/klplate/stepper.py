"""Time integration of the semi-discrete plate equations.

The state is advanced as the first-order system ``w' = v``, ``v' = a`` with

    rho_h a = -K_h w - B_h v + F.

Two schemes are provided:

``pc22``
    Explicit predictor-corrector: second-order Adams-Bashforth predictor
    followed by a trapezoidal (Adams-Moulton) corrector.  Boundary and ghost
    values of ``w`` and ``v`` are refilled after each stage.
``nb2``
    Implicit Newmark scheme (``beta = 1/4``, ``gamma = 1/2`` by default).
    Each step solves ``(rho_h + beta dt^2 K_h + gamma dt B_h) a = rhs`` with
    the boundary equations replacing the rows of boundary and ghost unknowns.

All grid functions are stored as flat vectors over the full ghosted array.
Only active entries of the acceleration are meaningful for ``pc22``.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, InstabilityError, SolverError
from .fdops.boundary import BoundarySpec
from .fdops.operators import PlateOperator
from .fdops.params import Forcing, PlateParams, ZeroForcing
from .mesh import Mesh, min_physical_spacing
from .stability import CSF_NB2, CSF_PC22, fourier_symbol_max, stable_dt

log = logging.getLogger(__name__)

SCHEMES = ("pc22", "nb2")
BLOWUP = 1e10


@dataclass(frozen=True)
class NewmarkParams:
    beta: float = 0.25
    gamma: float = 0.5

    @property
    def unconditionally_stable(self):
        return 0.5 <= self.gamma <= 2 * self.beta


@dataclass
class SimulationConfig:
    """Everything needed to run one simulation.

    ``w0``/``v0`` are callables ``f(x, y)`` or full arrays; ``None`` means zero.
    The step is ``dt`` if given, otherwise ``stable_dt`` with ``C_sf`` (scheme
    default when ``None``); it is then shrunk so that ``t_end`` is reached in
    a whole number of steps.  ``n_steps`` fixes the step count directly.
    """

    params: PlateParams
    mesh: Mesh
    bspec: BoundarySpec
    forcing: Forcing = field(default_factory=ZeroForcing)
    scheme: str = "pc22"
    t_end: float = 1.0
    C_sf: float | None = None
    dt: float | None = None
    n_steps: int | None = None
    probes: Sequence = ()
    snapshot_every: int = 0
    w0: Callable | np.ndarray | None = None
    v0: Callable | np.ndarray | None = None
    newmark: NewmarkParams = field(default_factory=NewmarkParams)
    linear_solver: str = "direct"
    residual_check_every: int = 1
    abort_threshold: float = BLOWUP

    def __post_init__(self):
        self.scheme = str(self.scheme).lower()
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.C_sf is not None and self.C_sf <= 0:
            raise ConfigurationError("C_sf must be positive")
        if not self.t_end > 0:
            raise ConfigurationError("t_end must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.n_steps is not None and self.n_steps < 1:
            raise ConfigurationError("n_steps must be at least 1")
        if self.linear_solver not in ("direct", "bicgstab"):
            raise ConfigurationError(f"unknown linear solver {self.linear_solver!r}")
        for px, py in self.probes:
            if not self.mesh.contains(px, py):
                raise ConfigurationError(f"probe ({px}, {py}) lies outside the domain")

    @property
    def stability_factor(self):
        if self.C_sf is not None:
            return self.C_sf
        return CSF_PC22 if self.scheme == "pc22" else CSF_NB2


@dataclass
class StepperState:
    """Fields at ``t = n dt``; ``prev`` holds ``(w, v, a)`` at ``t - dt`` (pc22)."""

    w: np.ndarray
    v: np.ndarray
    a: np.ndarray
    dt: float
    n: int = 0
    prev: tuple | None = None

    @property
    def t(self):
        return self.n * self.dt


@dataclass
class RunResult:
    times: np.ndarray
    probe_w: np.ndarray
    probe_v: np.ndarray
    snapshots: list
    diagnostics: dict
    state: StepperState

    def field(self, values=None):
        """Final displacement as a 2-D array (ghosts included)."""
        return (self.state.w if values is None else values).reshape(self.diagnostics["shape"])


class Probe:
    """Bilinear interpolation at a fixed physical point."""

    def __init__(self, m: Mesh, px, py):
        a, b = m.logical_coords(px, py)
        g = m.ghost
        a0 = int(np.clip(np.floor(a), g, g + m.n1 - 2))
        if m.periodic2:
            b0 = int(np.floor(b))
        else:
            b0 = int(np.clip(np.floor(b), g, g + m.n2 - 2))
        s, t = a - a0, b - b0
        self.index = m.flat(np.array([a0, a0 + 1, a0, a0 + 1]), np.array([b0, b0, b0 + 1, b0 + 1]))
        self.weights = np.array([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t])
        self.point = (px, py)

    def __call__(self, flat):
        return float(self.weights @ flat[self.index])


class Integrator:
    """Prepared operators for repeated stepping of one configuration."""

    def __init__(self, cfg: SimulationConfig, op: PlateOperator | None = None):
        self.cfg = cfg
        self.m = cfg.mesh
        self.p = cfg.params
        self.op = PlateOperator(cfg.params, cfg.mesh, cfg.bspec) if op is None else op
        self.closure = self.op.closure
        self.P = self.op.active
        self.xP = self.m.x.ravel()[self.P]
        self.yP = self.m.y.ravel()[self.P]
        self.KR = self.op.K_rows
        self.BR = self.op.B_rows if self.op.damped else None
        self.dt, self.n_steps = self._resolve_step()
        self.probes = [Probe(self.m, px, py) for px, py in cfg.probes]
        self._nb2 = None
        if cfg.scheme == "nb2":
            self._prepare_nb2()

    # -- setup ---------------------------------------------------------------

    def _resolve_step(self):
        cfg = self.cfg
        if cfg.n_steps is not None:
            return cfg.t_end / cfg.n_steps, int(cfg.n_steps)
        dt = cfg.dt if cfg.dt is not None else stable_dt(self.p, self.m, cfg.stability_factor)
        n = int(np.ceil(cfg.t_end / dt * (1 - 1e-12)))
        return cfg.t_end / n, n

    def _prepare_nb2(self):
        nm = self.cfg.newmark
        dt = self.dt
        A = self.op.assemble(self.p.rho_h, nm.beta * dt**2, nm.gamma * dt if self.op.damped else 0.0)
        mat = A.matrix.tocsc()
        if self.cfg.linear_solver == "direct":
            solve = _factorize(mat).solve
        else:
            diag = mat.diagonal()
            if np.any(diag == 0):
                raise SolverError("zero diagonal entry: Jacobi preconditioner unavailable")
            M = sp.diags(1.0 / diag)

            def solve(b):
                x, info = spla.bicgstab(mat, b, rtol=1e-13, atol=0.0, M=M, maxiter=5000)
                if info != 0:
                    raise SolverError(f"bicgstab failed to converge (info={info})")
                return x
        self._nb2 = (A, mat.tocsr(), solve)

    # -- pieces --------------------------------------------------------------

    def forcing(self, t):
        f = self.cfg.forcing
        if f.is_zero:
            return 0.0
        return f(self.xP, self.yP, t)

    def accel(self, w, v, t):
        """Acceleration on active points from the equation of motion."""
        rhs = -(self.KR @ w)
        if self.BR is not None:
            rhs -= self.BR @ v
        rhs += self.forcing(t)
        a = np.zeros_like(w)
        a[self.P] = rhs / self.p.rho_h
        return a

    def fill(self, u, t, order=0, g=None):
        self.closure.fill(u.reshape(self.m.shape), t, order, g, cosmetic=False)
        return u

    def _initial(self, spec):
        m = self.m
        if spec is None:
            return np.zeros(m.size)
        if callable(spec):
            return np.asarray(spec(m.x, m.y), dtype=float).ravel() * np.ones(m.size)
        arr = np.asarray(getattr(spec, "values", spec), dtype=float)
        if arr.shape != m.shape:
            raise ConfigurationError(f"initial field of shape {arr.shape} does not fit mesh {m.shape}")
        return arr.ravel().copy()

    def startup(self, w0=None, v0=None) -> StepperState:
        """State at ``t = 0``; for ``pc22`` also a backward Taylor level at ``-dt``."""
        w = self.fill(self._initial(self.cfg.w0 if w0 is None else w0), 0.0, 0)
        v = self.fill(self._initial(self.cfg.v0 if v0 is None else v0), 0.0, 1)
        a = self.accel(w, v, 0.0)
        state = StepperState(w, v, a, self.dt)
        if self.cfg.scheme == "pc22":
            dt = self.dt
            wm = self.fill(w - dt * v + 0.5 * dt**2 * a, -dt, 0)
            vm = self.fill(v - dt * a, -dt, 1)
            am = self.accel(wm, vm, -dt)
            state.prev = (wm, vm, am)
        return state

    # -- steps ---------------------------------------------------------------

    def pc22_step(self, s: StepperState) -> StepperState:
        dt = self.dt
        t1 = (s.n + 1) * dt
        _, v_old, a_old = s.prev
        wp = self.fill(s.w + dt * (1.5 * s.v - 0.5 * v_old), t1, 0)
        vp = self.fill(s.v + dt * (1.5 * s.a - 0.5 * a_old), t1, 1)
        ap = self.accel(wp, vp, t1)
        wn = self.fill(s.w + 0.5 * dt * (s.v + vp), t1, 0)
        vn = self.fill(s.v + 0.5 * dt * (s.a + ap), t1, 1)
        an = self.accel(wn, vn, t1)
        return StepperState(wn, vn, an, dt, s.n + 1, (s.w, s.v, s.a))

    def nb2_step(self, s: StepperState) -> StepperState:
        dt = self.dt
        nm = self.cfg.newmark
        A, mat, solve = self._nb2
        t1 = (s.n + 1) * dt
        c = self.closure
        bw, gv = nm.beta * dt**2, nm.gamma * dt
        if c.homogeneous:
            g0 = g1 = g2 = None
            gw = gvp = None
        else:
            g0, g1, g2 = c.data(t1, 0), c.data(t1, 1), c.data(t1, 2)
            gw, gvp = g0 - bw * g2, g1 - gv * g2
        # Stage I: predictions whose boundary values anticipate Stage III
        wp = self.fill(s.w + dt * s.v + 0.5 * dt**2 * (1 - 2 * nm.beta) * s.a, t1, g=gw)
        vp = self.fill(s.v + dt * (1 - nm.gamma) * s.a, t1, g=gvp)
        # Stage II: implicit solve for the new acceleration
        r = -(self.KR @ wp)
        if self.BR is not None:
            r -= self.BR @ vp
        r += self.forcing(t1)
        b = A.rhs(r, g2)
        x = solve(b)
        every = self.cfg.residual_check_every
        if every and (s.n % every == 0):
            res = np.linalg.norm(mat @ x - b)
            scale = max(np.linalg.norm(b), np.finfo(float).tiny)
            if res > 1e-10 * scale:
                raise SolverError(f"implicit solve residual {res / scale:.3e} at step {s.n + 1}")
        a = np.zeros(self.m.size)
        a[A.unknowns] = x
        # Stage III: explicit updates
        w = self.fill(wp + bw * a, t1, g=g0)
        v = self.fill(vp + gv * a, t1, g=g1)
        return StepperState(w, v, a, dt, s.n + 1)

    def step(self, s):
        return self.pc22_step(s) if self.cfg.scheme == "pc22" else self.nb2_step(s)

    def check(self, s):
        wmax = np.max(np.abs(s.w[self.P]))
        if not np.isfinite(wmax) or wmax > self.cfg.abort_threshold:
            raise InstabilityError(
                f"solution exceeded {self.cfg.abort_threshold:g} (|w|max={wmax:.3e}) "
                f"at step {s.n}, t={s.t:.6g}", step=s.n, time=s.t)

    # -- driver --------------------------------------------------------------

    def _output(self, u):
        return self.closure.fill_unused(u.reshape(self.m.shape).copy())

    def diagnostics(self):
        m = self.m
        if m.is_annulus:
            h = min_physical_spacing(m)
            bounds = fourier_symbol_max(self.p, h, h)
        else:
            bounds = fourier_symbol_max(self.p, m.h1, m.h2)
        return {
            "scheme": self.cfg.scheme,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "C_sf": self.cfg.stability_factor,
            "lambda_max": bounds.lambda_max,
            "regime": bounds.regime.value,
            "shape": m.shape,
        }

    def run(self, w0=None, v0=None, callback=None) -> RunResult:
        """Integrate to ``t_end`` recording probes every step."""
        t_start = _time.perf_counter()
        cfg = self.cfg
        n = self.n_steps
        times = np.arange(n + 1) * self.dt
        pw = np.empty((n + 1, len(self.probes)))
        pv = np.empty_like(pw)
        snaps = []
        s = self.startup(w0, v0)

        def record(s):
            for j, pr in enumerate(self.probes):
                pw[s.n, j] = pr(s.w)
                pv[s.n, j] = pr(s.v)
            if cfg.snapshot_every and s.n % cfg.snapshot_every == 0:
                snaps.append((s.t, self._output(s.w)))

        record(s)
        for _ in range(n):
            s = self.step(s)
            self.check(s)
            record(s)
            if callback is not None:
                callback(s)
        if cfg.snapshot_every and n % cfg.snapshot_every != 0:
            snaps.append((s.t, self._output(s.w)))
        self.closure.fill_unused(s.w.reshape(self.m.shape))
        self.closure.fill_unused(s.v.reshape(self.m.shape))
        diag = self.diagnostics()
        diag["wall_time"] = _time.perf_counter() - t_start
        log.info("%s: %d steps of %.4g in %.2f s", cfg.scheme, n, self.dt, diag["wall_time"])
        return RunResult(times, pw, pv, snaps, diag, s)


def _factorize(mat):
    """Sparse LU of ``mat``, preferring the cheaper symmetric-pattern ordering.

    The symmetric ordering skips pivoting, so it is kept only if it solves a
    probe system accurately; otherwise the default partial-pivoting LU is used.
    """
    try:
        lu = spla.splu(mat, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
        b = np.random.default_rng(0).standard_normal(mat.shape[0])
        x = lu.solve(b)
        if np.all(np.isfinite(x)) and np.linalg.norm(mat @ x - b) <= 1e-11 * np.linalg.norm(b):
            return lu
    except RuntimeError:
        pass
    try:
        return spla.splu(mat)
    except RuntimeError as exc:
        raise SolverError(f"factorization of the implicit operator failed: {exc}") from exc


def startup(w0, v0, cfg: SimulationConfig) -> StepperState:
    return Integrator(cfg).startup(w0, v0)


def run(cfg: SimulationConfig) -> RunResult:
    return Integrator(cfg).run()


def energy(op: PlateOperator, w, v):
    """``rho_h |v|^2 + <w, K_h w>`` over active points, weighted by cell area."""
    P = op.active
    w = np.asarray(getattr(w, "values", w), dtype=float).ravel()
    v = np.asarray(getattr(v, "values", v), dtype=float).ravel()
    m = op.mesh
    area = m.h1 * m.h2
    if m.is_annulus:
        area = area * m.r[P // m.shape[1]]
    kin = op.params.rho_h * np.sum(area * v[P] ** 2)
    pot = np.sum(area * w[P] * (op.K_rows @ w))
    return float(kin + pot)
