"""Statistical multiscale constraints and their max penalty.

A :class:`WindowSystem` holds every window of a family of sizes (all
contiguous intervals of given lengths in 1D, all axis-aligned squares of
given side lengths in 2D).  For a residual ``v - y`` each window ``j``
contributes ``f_j(v) = |<w_j, v - y>|`` with ``w_j`` the window indicator
times a positive scale factor.  The penalty is

    theta(v) = max(f_1(v) - q, ..., f_M(v) - q, 0)

where the trailing 0 is an implicit extra component (index ``M`` here,
since indices are 0-based).  ``theta(v) == 0`` exactly when every window
constraint ``f_j(v) <= q`` holds.

Window sums are evaluated from cumulative sums (integral images), so one
evaluation costs ``O(n * number_of_sizes)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np

from .core import as_signal
from .errors import InvalidInputError, InvariantViolation

__all__ = [
    "Window",
    "WindowSystem",
    "PenaltyEval",
    "build_window_system_1d",
    "build_window_system_2d",
    "eval_penalty",
    "active_gradients",
    "scale_factor",
]

_WEIGHT_CACHE = 4096

ScalingRule = Union[str, Callable[[int], float]]


def scale_factor(npix, rule="sqrt"):
    """Scale applied to the indicator of a window with ``npix`` pixels.

    ``"sqrt"`` gives ``npix ** -0.5`` so that ``<w_j, noise>`` has the
    noise standard deviation at every size; ``"unit"`` gives 1 and
    ``"mean"`` gives ``1 / npix``.  A callable is used as is.
    """
    if callable(rule):
        s = float(rule(npix))
    elif rule == "sqrt":
        s = npix**-0.5
    elif rule == "unit":
        s = 1.0
    elif rule == "mean":
        s = 1.0 / npix
    else:
        raise InvalidInputError(f"unknown scaling rule {rule!r}")
    if not s > 0:
        raise InvalidInputError("window scale must be positive")
    return s


@dataclass(frozen=True)
class Window:
    offset: Tuple[int, ...]
    extent: Tuple[int, ...]
    scale: float


@dataclass(frozen=True, eq=False)
class WindowSystem:
    """All windows of a list of sizes over an image, in canonical order.

    Windows are ordered ascending by extent, then by offset (row-major for
    2D).  Index ``j`` in ``range(M)`` addresses a window and ``M`` the
    implicit zero component of the penalty.
    """

    image_shape: Tuple[int, ...]
    extents: Tuple[Tuple[int, ...], ...]
    scales: Tuple[float, ...]
    q: float

    def __post_init__(self):
        counts = [self._grid(e) for e in self.extents]
        sizes = [int(np.prod(g)) for g in counts]
        object.__setattr__(self, "_grids", tuple(counts))
        object.__setattr__(self, "_starts", np.concatenate([[0], np.cumsum(sizes)]).astype(int))
        object.__setattr__(self, "_wcache", {})

    def _grid(self, extent):
        return tuple(n - e + 1 for n, e in zip(self.image_shape, extent))

    def __len__(self):
        return int(self._starts[-1])

    @property
    def M(self):
        return len(self)

    @property
    def ndim(self):
        return len(self.image_shape)

    def counts(self):
        """Number of windows per size, in canonical order."""
        return [int(np.prod(g)) for g in self._grids]

    def locate(self, j):
        """Return ``(size_index, offset)`` of window ``j``."""
        if not 0 <= j < len(self):
            raise IndexError(j)
        s = int(np.searchsorted(self._starts, j, side="right") - 1)
        pos = j - self._starts[s]
        offset = tuple(int(i) for i in np.unravel_index(pos, self._grids[s]))
        return s, offset

    def window(self, j):
        s, offset = self.locate(j)
        return Window(offset=offset, extent=self.extents[s], scale=self.scales[s])

    @property
    def windows(self):
        """All windows as a list (materialized on each call)."""
        return [self.window(j) for j in range(len(self))]

    def weight(self, j):
        """Dense weight array ``w_j`` (read-only, cached)."""
        w = self._wcache.get(j)
        if w is None:
            s, offset = self.locate(j)
            w = np.zeros(self.image_shape)
            w[tuple(slice(o, o + e) for o, e in zip(offset, self.extents[s]))] = self.scales[s]
            w.setflags(write=False)
            if len(self._wcache) >= _WEIGHT_CACHE:
                self._wcache.clear()
            self._wcache[j] = w
        return w

    def inner_products(self, x):
        """``<w_j, x>`` for every window, as a length-``M`` array."""
        if x.ndim == 1:
            cs = np.concatenate(([0.0], np.cumsum(x)))
            parts = [sc * (cs[e[0]:] - cs[: cs.size - e[0]]) for e, sc in zip(self.extents, self.scales)]
        else:
            S = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
            S[1:, 1:] = np.cumsum(np.cumsum(x, axis=0), axis=1)
            H, W = S.shape
            parts = []
            for (eh, ew), sc in zip(self.extents, self.scales):
                box = S[eh:, ew:] - S[: H - eh, ew:] - S[eh:, : W - ew] + S[: H - eh, : W - ew]
                parts.append(sc * box.ravel())
        return np.concatenate(parts)

    def manifest(self):
        """Text listing: one line per size with extent, count and scale."""
        lines = [f"# image_shape={'x'.join(map(str, self.image_shape))} M={len(self)} q={self.q!r}"]
        for e, c, sc in zip(self.extents, self.counts(), self.scales):
            lines.append(f"{'x'.join(map(str, e))} {c} {sc!r}")
        return "\n".join(lines) + "\n"


def build_window_system_1d(n, lmin, lmax, q, scaling="sqrt"):
    """All contiguous intervals of lengths ``lmin..lmax`` on ``n`` pixels."""
    n, lmin, lmax = int(n), int(lmin), int(lmax)
    if not 1 <= lmin <= lmax:
        raise InvalidInputError("need 1 <= lmin <= lmax")
    if lmax > n:
        raise InvalidInputError(f"lmax={lmax} exceeds signal length {n}")
    if q < 0:
        raise InvalidInputError("q must be nonnegative")
    lengths = range(lmin, lmax + 1)
    return WindowSystem(
        image_shape=(n,),
        extents=tuple((L,) for L in lengths),
        scales=tuple(scale_factor(L, scaling) for L in lengths),
        q=float(q),
    )


def build_window_system_2d(h, w, sizes, q, scaling="sqrt"):
    """All axis-aligned squares with side in ``sizes`` on an ``h x w`` image."""
    h, w = int(h), int(w)
    sizes = sorted(set(int(s) for s in sizes))
    if not sizes or sizes[0] < 1:
        raise InvalidInputError("square sizes must be positive")
    if sizes[-1] > min(h, w):
        raise InvalidInputError(f"square of side {sizes[-1]} does not fit in {h}x{w}")
    if q < 0:
        raise InvalidInputError("q must be nonnegative")
    return WindowSystem(
        image_shape=(h, w),
        extents=tuple((s, s) for s in sizes),
        scales=tuple(scale_factor(s * s, scaling) for s in sizes),
        q=float(q),
    )


@dataclass(frozen=True, eq=False)
class PenaltyEval:
    """Result of evaluating the max penalty at a point.

    Attributes
    ----------
    theta : float
        ``max(max_j(values_j - q), 0)``.
    values : ndarray
        ``f_j(v)`` for every window.
    inner : ndarray
        Signed inner products ``<w_j, v - y>``.
    active : ndarray of int
        Ascending active indices; ``M`` stands for the zero component.
    inner_signs : ndarray
        Sign of ``inner`` for each active window (``M`` excluded).
    tol : float
        Active-set tolerance used.
    """

    theta: float
    values: np.ndarray
    inner: np.ndarray
    active: np.ndarray
    inner_signs: np.ndarray
    tol: float
    M: int

    @property
    def active_windows(self):
        return self.active[self.active < self.M]

    @property
    def zero_active(self):
        return bool(self.active.size and self.active[-1] == self.M)


ACTIVE_RTOL = 1e-10


def active_tolerance(theta, rtol=ACTIVE_RTOL):
    return rtol * (1.0 + theta)


def eval_penalty(ws, v, y, active_rtol=ACTIVE_RTOL):
    """Evaluate ``theta(F_q(v))``, per-window values and the active set.

    Index ``j`` is active when ``values_j - q >= theta - tau`` with
    ``tau = active_rtol * (1 + theta)``.
    """
    v = as_signal(v, ws.image_shape, name="v")
    y = as_signal(y, ws.image_shape, name="y")
    inner = ws.inner_products(v - y)
    values = np.abs(inner)
    theta = max(float(values.max()) - ws.q, 0.0) if values.size else 0.0
    tol = active_tolerance(theta, active_rtol)
    win = np.flatnonzero(values - ws.q >= theta - tol)
    active = win
    if theta <= tol:
        active = np.append(win, len(ws))
    return PenaltyEval(
        theta=theta,
        values=values,
        inner=inner,
        active=active,
        inner_signs=np.sign(inner[win]),
        tol=tol,
        M=len(ws),
    )


def active_gradients(ws, ev, v=None, y=None):
    """Generators whose convex hull is the subdifferential of the penalty.

    Returns ``sign(<w_j, v - y>) * w_j`` for each active window, plus the
    zero array when the zero component is active.  ``v`` and ``y`` are
    accepted for interface symmetry; the signs stored in ``ev`` are used.

    With ``q == 0`` an active window may have a zero inner product; both
    ``+w_j`` and ``-w_j`` are returned then, which generates the
    subdifferential of ``|.|`` at 0.
    """
    gens = []
    for j, s in zip(ev.active_windows, ev.inner_signs):
        w = ws.weight(int(j))
        if s == 0:
            if ws.q > 0:
                raise InvariantViolation(f"active window {j} has zero inner product with q > 0")
            gens.extend([w, -w])
        else:
            gens.append(s * w)
    if ev.zero_active:
        gens.append(np.zeros(ws.image_shape))
    return gens
