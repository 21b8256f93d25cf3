"""Power-law spatial model ``p(d) = C * d**-alpha`` and its maximum-likelihood fit.

Two readings of the log-likelihood are supported:

``"occurrence"`` (default)
    Each occurrence is a Bernoulli trial at every cell: a cell with ``n``
    occurrences out of a term total ``f_t`` contributes
    ``n*log p + (f_t - n)*log(1 - p)``. Under this reading ``f_t * p(l)`` is
    the expected count at ``l``.

``"occupancy"``
    Occurrences contribute ``log p`` each and every empty cell contributes one
    ``log(1 - p)``. This degenerates to ``C = 1, alpha = 0`` once every cell
    holds at least one occurrence, so it is kept for comparison only.

All variants reduce to one kernel over distance classes, see
:class:`LogLikelihood`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FitError
from .grid import GridConfig, distances_from

ALPHA_MAX = 10.0
C_MIN = 1e-9
GOLDEN_TOL = 1e-6
MAX_SWEEPS = 100
P_CAP = 1.0 - 1e-12
FORMS = ("occurrence", "occupancy")

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ModelParams:
    center: int
    C: float
    alpha: float
    log_lik: float = 0.0
    n_obs: float = 1.0

    @property
    def mean_log_lik(self) -> float:
        """Log-likelihood per observed occurrence; the score used to rank centers."""
        return self.log_lik / self.n_obs if self.n_obs > 0 else self.log_lik

    def to_row(self, term: str) -> list:
        return [term, self.center, repr(self.C), repr(self.alpha), repr(self.log_lik)]


MODEL_CSV_HEADER = ["term", "center_cell", "C", "alpha", "log_lik"]


@dataclass(frozen=True)
class RingLikInput:
    """Everything the ring-aggregated likelihood needs for one center."""

    phi: np.ndarray
    T: np.ndarray
    d_exp: np.ndarray
    f_center: float
    d_min: float
    f_total: float


def _check_form(form: str) -> None:
    if form not in FORMS:
        raise ValueError(f"unknown likelihood form {form!r}; expected one of {FORMS}")


class LogLikelihood:
    """``sum_k pos_k*log p(d_k) + neg_k*log(1 - p(d_k))`` with ``p = min(C d^-alpha, 1)``.

    Internally the focus is carried as ``q = p(d_ref)``, the probability at the
    occurrence-weighted geometric mean distance. In that coordinate the two
    parameters are close to decoupled, which keeps the alternating golden
    search short.
    """

    def __init__(self, dist_km, pos, neg):
        dist = np.asarray(dist_km, dtype=float)
        pos = np.asarray(pos, dtype=float)
        neg = np.asarray(neg, dtype=float)
        if np.any(dist <= 0):
            raise ValueError("all distances must be positive")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg)) and np.all(np.isfinite(dist))):
            raise FitError("non-finite likelihood weights or distances")
        if np.any(pos < 0) or np.any(neg < 0):
            raise FitError("likelihood weights must be non-negative")
        log_d = np.log(dist)
        total = pos.sum()
        self.total_pos = float(total)
        self.ref = float(pos @ log_d / total) if total > 0 else 0.0
        pm = pos > 0
        nm = neg > 0
        self._lpos = log_d[pm] - self.ref
        self._wpos = pos[pm]
        self._lneg = log_d[nm] - self.ref
        self._wneg = neg[nm]
        self.n_terms = int(pm.sum() + nm.sum())

    def at_ref(self, q: float, alpha: float) -> float:
        lq = math.log(q)
        up = np.minimum(lq - alpha * self._lpos, 0.0)
        value = float(self._wpos @ up)
        if self._wneg.size:
            p = np.exp(np.minimum(lq - alpha * self._lneg, 0.0))
            np.minimum(p, P_CAP, out=p)
            value += float(self._wneg @ np.log1p(-p))
        return value

    def focus_to_ref(self, C: float, alpha: float) -> float:
        return C * math.exp(-alpha * self.ref)

    def ref_to_focus(self, q: float, alpha: float) -> float:
        return q * math.exp(alpha * self.ref)

    def __call__(self, C: float, alpha: float) -> float:
        return self.at_ref(self.focus_to_ref(C, alpha), alpha)


def cell_terms(dist_km, counts, form: str = "occurrence", f_total: float | None = None) -> LogLikelihood:
    """Per-cell likelihood over explicit distances (no zero distances allowed)."""
    _check_form(form)
    counts = np.asarray(counts, dtype=float)
    if form == "occurrence":
        ft = counts.sum() if f_total is None else float(f_total)
        neg = np.maximum(ft - counts, 0.0)
    else:
        neg = (counts == 0).astype(float)
    return LogLikelihood(dist_km, counts, neg)


def _dense_counts(counts, cfg: GridConfig) -> np.ndarray:
    if isinstance(counts, Mapping):
        dense = np.zeros(cfg.n_cells)
        for cell, n in counts.items():
            dense[int(cell)] += n
        return dense
    dense = np.asarray(counts, dtype=float)
    if dense.shape != (cfg.n_cells,):
        raise ValueError(f"expected {cfg.n_cells} cell counts, got shape {dense.shape}")
    return dense


def center_distances(center: int, cfg: GridConfig) -> np.ndarray:
    """Distance of every cell from ``center`` with the center itself at ``d_min``."""
    d = distances_from(center, cfg)
    d[int(center)] = cfg.d_min_km
    return d


def full_terms(counts, cfg: GridConfig, center: int, form: str = "occurrence",
               f_total: float | None = None) -> LogLikelihood:
    dense = _dense_counts(counts, cfg)
    if dense.sum() < 1:
        raise FitError("the full likelihood needs at least one occurrence")
    return cell_terms(center_distances(center, cfg), dense, form, f_total)


def full_log_likelihood(counts, cfg: GridConfig, center: int, C: float, alpha: float,
                        form: str = "occurrence") -> float:
    return full_terms(counts, cfg, center, form)(C, alpha)


def ring_terms(inp: RingLikInput, form: str = "occurrence") -> LogLikelihood:
    _check_form(form)
    phi = np.asarray(inp.phi, dtype=float)
    T = np.asarray(inp.T, dtype=float)
    if form == "occurrence":
        neg_rings = np.maximum(inp.f_total * T - phi, 0.0)
        neg_center = max(inp.f_total - inp.f_center, 0.0)
    else:
        neg_rings = np.maximum(T - phi, 0.0)
        neg_center = 0.0
    dist = np.concatenate(([inp.d_min], np.asarray(inp.d_exp, dtype=float)))
    pos = np.concatenate(([inp.f_center], phi))
    neg = np.concatenate(([neg_center], neg_rings))
    return LogLikelihood(dist, pos, neg)


def ring_log_likelihood(inp: RingLikInput, C: float, alpha: float, form: str = "occurrence") -> float:
    return ring_terms(inp, form)(C, alpha)


def golden_section_max(f, lo: float, hi: float, tol: float = GOLDEN_TOL) -> tuple[float, float]:
    """Maximize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``.

    The bracket endpoints are also checked so that optima on the boundary
    (e.g. a clamped spread) are returned exactly.
    """
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    x = (a + b) / 2
    best = (x, f(x))
    for edge in (lo, hi):
        fe = f(edge)
        if fe > best[1]:
            best = (edge, fe)
    return best


@dataclass(frozen=True)
class CenterFit:
    C: float
    alpha: float
    log_lik: float
    sweeps: int


class _Batch:
    """Several likelihoods padded into common matrices so they evaluate together."""

    def __init__(self, logliks: Sequence[LogLikelihood]):
        self.Lpos, self.Wpos = self._pad([(ll._lpos, ll._wpos) for ll in logliks])
        self.Lneg, self.Wneg = self._pad([(ll._lneg, ll._wneg) for ll in logliks])

    def take(self, idx: np.ndarray) -> "_Batch":
        sub = object.__new__(_Batch)
        sub.Lpos, sub.Wpos = self.Lpos[idx], self.Wpos[idx]
        sub.Lneg, sub.Wneg = self.Lneg[idx], self.Wneg[idx]
        return sub

    @staticmethod
    def _pad(pairs):
        width = max((x.size for x, _ in pairs), default=0)
        L = np.zeros((len(pairs), width))
        W = np.zeros((len(pairs), width))
        for i, (x, w) in enumerate(pairs):
            L[i, :x.size] = x
            W[i, :w.size] = w
        return L, W

    def at_ref(self, q: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        lq = np.log(q)[:, None]
        a = alpha[:, None]
        value = np.einsum("ij,ij->i", self.Wpos, np.minimum(lq - a * self.Lpos, 0.0))
        if self.Wneg.size:
            p = np.exp(np.minimum(lq - a * self.Lneg, 0.0))
            np.minimum(p, P_CAP, out=p)
            value = value + np.einsum("ij,ij->i", self.Wneg, np.log1p(-p))
        return value


def _golden_batch(f, lo: float, hi: float, n: int, tol: float):
    """:func:`golden_section_max` run in lockstep on ``n`` problems sharing one bracket."""
    a = np.full(n, lo)
    b = np.full(n, hi)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a).max() > tol:
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + _INV_PHI * (b - a))
        c_new = np.where(left, b - _INV_PHI * (b - a), d)
        f_new = f(np.where(left, c_new, d_new))
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
        c, d = c_new, d_new
    x = (a + b) / 2
    fx = f(x)
    for edge in (lo, hi):
        e = np.full(n, edge)
        fe = f(e)
        better = fe > fx
        x, fx = np.where(better, e, x), np.where(better, fe, fx)
    return x, fx


def fit_centers(logliks: Sequence[LogLikelihood], alpha_max: float = ALPHA_MAX, q_min: float = C_MIN,
                tol: float = GOLDEN_TOL, max_sweeps: int = MAX_SWEEPS) -> list[CenterFit]:
    """Alternating golden-section ascent over focus and spread, one result per likelihood.

    All problems share the same brackets, so their searches advance in
    lockstep and are evaluated together; a problem stops moving once both
    coordinates change by less than ``tol`` in a sweep.
    """
    if not logliks:
        return []
    batch = _Batch(logliks)
    n = len(logliks)
    # The focus is searched as log q: the objective is concave there, and the
    # tolerance becomes relative, which matters when q is ~1e-5 on fine grids.
    lq = np.full(n, math.log(0.5))
    alpha = np.full(n, 1.0)
    value = np.full(n, -np.inf)
    sweeps = np.zeros(n, dtype=int)
    idx = np.arange(n)
    sub = batch
    for _ in range(max_sweeps):
        k = idx.size
        a_now = alpha[idx]
        new_lq, _ = _golden_batch(lambda x: sub.at_ref(np.exp(x), a_now), math.log(q_min), 0.0, k, tol)
        q_now = np.exp(new_lq)
        new_alpha, new_value = _golden_batch(lambda a: sub.at_ref(q_now, a), 0.0, alpha_max, k, tol)
        bad = ~np.isfinite(new_value)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise FitError(f"non-finite log-likelihood at q={q_now[i]}, alpha={new_alpha[i]}")
        moved = np.maximum(np.abs(new_lq - lq[idx]), np.abs(new_alpha - a_now))
        lq[idx], alpha[idx], value[idx] = new_lq, new_alpha, new_value
        sweeps[idx] += 1
        keep = moved >= tol
        if not keep.any():
            break
        if not keep.all():
            idx = idx[keep]
            sub = sub.take(np.flatnonzero(keep))
    return [CenterFit(ll.ref_to_focus(math.exp(lq[i]), float(alpha[i])), float(alpha[i]), float(value[i]),
                      int(sweeps[i]))
            for i, ll in enumerate(logliks)]


def fit_center(loglik: LogLikelihood, **kwargs) -> CenterFit:
    return fit_centers([loglik], **kwargs)[0]


# Padded batches of full-grid likelihoods are capped at about this many cells.
_BATCH_CELLS = 1 << 17


def fit_all(candidates: Iterable[tuple[int, LogLikelihood]], **kwargs) -> list[ModelParams]:
    candidates = list(candidates)
    out = []
    i = 0
    while i < len(candidates):
        width = max(candidates[i][1].n_terms, 1)
        step = max(1, _BATCH_CELLS // width)
        chunk = candidates[i:i + step]
        for (center, ll), res in zip(chunk, fit_centers([ll for _, ll in chunk], **kwargs)):
            out.append(ModelParams(int(center), res.C, res.alpha, res.log_lik, ll.total_pos))
        i += step
    return out


def best_model(models: Sequence[ModelParams]) -> ModelParams:
    """Highest per-occurrence log-likelihood, ties to the lower cell id.

    Candidates fitted on the same counts rank exactly as by raw
    log-likelihood; ring candidates that observed different amounts of the
    stream become comparable.
    """
    if not models:
        raise FitError("no candidate centers to fit")
    return min(models, key=lambda m: (-m.mean_log_lik, m.center))


def fit(candidates: Iterable[tuple[int, LogLikelihood]], **kwargs) -> ModelParams:
    """Fit every candidate center and return the best one (see :func:`best_model`)."""
    return best_model(fit_all(candidates, **kwargs))


def probability_at(params: ModelParams, cell: int, cfg: GridConfig) -> float:
    d = cfg.d_min_km if int(cell) == params.center else float(distances_from(params.center, cfg, [cell])[0])
    return min(max(params.C * math.exp(-params.alpha * math.log(d)), 0.0), 1.0)


def probability_map(params: ModelParams, cfg: GridConfig) -> np.ndarray:
    """Model probability at every cell of the grid."""
    d = center_distances(params.center, cfg)
    return np.clip(params.C * np.exp(-params.alpha * np.log(d)), 0.0, 1.0)


def expected_frequency(params: ModelParams, f_t: float, cell: int, cfg: GridConfig) -> float:
    if f_t < 0:
        raise ValueError("total frequency must be non-negative")
    return f_t * probability_at(params, cell, cfg)
