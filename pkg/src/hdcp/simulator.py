"""Seeded synthetic data, exact small-scale oracles, and experiment runners.

Data come from a multivariate linear process: each observation adds a mean
vector to a moving average of i.i.d. innovations over lags 0..M+2, with
banded Toeplitz coefficient matrices and, for M > 0, a pair of small sparse
perturbation matrices at the last two lags. Innovations are drawn for a
pre-sample window so the first observation is already stationary.

Every runner is a pure function of its design and master seed:
per-replication generators are derived counter-style, so serial and
parallel executions agree bit for bit.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from dataclasses import dataclass, field, asdict
from typing import Literal, Optional, Sequence

import numpy as np

from .core import DependenceWindow, SeriesMatrix
from .engine import (
    F_matrix,
    _contrast_cross_products,
    b_aggregate,
    b_matrix,
    f_vector,
)
from .inference import InferenceConfig, binary_segmentation, classify_errors, estimate_single, test_global
from .selector import LagEnergyCurve, lag_energy_curve, select_m

# Seed-stream tags: coefficients, mean pattern, innovations.
_STREAM_COEFF = 0
_STREAM_MEANS = 1
_STREAM_INNOV = 2


def _rng(entropy, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=entropy, spawn_key=(stream,)))


@dataclass(frozen=True)
class LinearProcessSpec:
    """Parameters of the generating process.

    ``m_true`` is the dependence order of the generator (the analysis
    window may use a different order). ``rho`` controls the within-matrix
    geometric decay; ``perturb_sparsity`` and ``perturb_scale`` shape the
    two trailing sparse coefficient matrices used when ``m_true > 0``.
    """

    n: int
    p: int
    m_true: int
    rho: float = 0.6
    perturb_sparsity: float = 0.05
    perturb_scale: float = 0.05
    innovation: Literal["gaussian", "student_t"] = "gaussian"
    t_dof: float = 8.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")
        if not 0.0 <= self.perturb_sparsity <= 1.0:
            raise ValueError("perturb_sparsity must be in [0, 1]")
        if self.innovation not in ("gaussian", "student_t"):
            raise ValueError(f"unknown innovation {self.innovation!r}")
        if self.innovation == "student_t" and self.t_dof <= 2:
            raise ValueError("student_t innovations need t_dof > 2 for unit variance")


@dataclass(frozen=True)
class MeanProfile:
    """Piecewise-constant mean description.

    ``deltas`` has one magnitude per regime (len(change_points) + 1
    entries); the mean of regime k is ``deltas[k]`` times a sparse sign
    pattern on ``support_size`` coordinates (default floor(p^0.7)) drawn
    without replacement. Each regime draws its own support and signs from
    the ``sign_seed`` stream, so distinct nonzero regimes are nearly
    orthogonal mean vectors.
    """

    change_points: tuple[int, ...] = ()
    deltas: tuple[float, ...] = (0.0,)
    support_size: Optional[int] = None
    sign_seed: int = 0

    def __post_init__(self) -> None:
        cps = tuple(int(c) for c in self.change_points)
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError("change points must be strictly increasing")
        if len(self.deltas) != len(cps) + 1:
            raise ValueError(
                f"need {len(cps) + 1} regime deltas for {len(cps)} change points, "
                f"got {len(self.deltas)}"
            )
        object.__setattr__(self, "change_points", cps)
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))


def null_profile() -> MeanProfile:
    return MeanProfile()


def single_change_profile(tau: int, delta: float, sign_seed: int = 0,
                          support_size: Optional[int] = None) -> MeanProfile:
    return MeanProfile((tau,), (0.0, delta), support_size, sign_seed)


def mean_matrix(profile: Optional[MeanProfile], n: int, p: int) -> np.ndarray:
    """Materialize the n x p mean matrix of a profile."""
    means = np.zeros((n, p), dtype=np.float64)
    if profile is None or all(d == 0.0 for d in profile.deltas):
        return means
    for cp in profile.change_points:
        if not 1 <= cp <= n - 1:
            raise ValueError(f"change point {cp} outside {{1, ..., {n - 1}}}")
    size = profile.support_size
    if size is None:
        size = int(math.floor(p**0.7))
    size = max(1, min(size, p))
    rng = _rng(profile.sign_seed, _STREAM_MEANS)
    bounds = (0,) + profile.change_points + (n,)
    for k, delta in enumerate(profile.deltas):
        # one pattern per regime, drawn unconditionally to keep the
        # stream aligned whatever the delta values are
        support = rng.choice(p, size=size, replace=False)
        signs = rng.choice(np.array([-1.0, 1.0]), size=size)
        pattern = np.zeros(p, dtype=np.float64)
        pattern[support] = signs
        means[bounds[k] : bounds[k + 1], :] = delta * pattern
    return means


@dataclass
class OracleModel:
    """Exactly known generating process: coefficients, autocovariances, means.

    ``qs[l]`` is the lag-l coefficient matrix (None marks an all-zero one).
    Autocovariances vanish beyond lag ``m_true + 2`` and are cached on first
    use; ``C(-h)`` equals ``C(h)`` transposed.
    """

    n: int
    p: int
    m_true: int
    qs: tuple[Optional[np.ndarray], ...]
    means: np.ndarray
    _cov_cache: dict = field(default_factory=dict, repr=False)

    @property
    def lag_support(self) -> int:
        return self.m_true + 2

    def autocovariance(self, h: int) -> np.ndarray:
        if abs(h) > self.lag_support:
            return np.zeros((self.p, self.p))
        if h not in self._cov_cache:
            if h < 0:
                self._cov_cache[h] = self.autocovariance(-h).T
            else:
                acc = np.zeros((self.p, self.p))
                for l, q in enumerate(self.qs):
                    mate = self.qs[l + h] if l + h < len(self.qs) else None
                    if q is None or mate is None:
                        continue
                    acc += q @ mate.T
                self._cov_cache[h] = acc
        return self._cov_cache[h]

    def trace_product(self, h1: int, h2: int) -> float:
        if abs(h1) > self.lag_support or abs(h2) > self.lag_support:
            return 0.0
        return float(np.sum(self.autocovariance(h1) * self.autocovariance(h2).T))


def build_coefficients(
    spec: LinearProcessSpec, profile: Optional[MeanProfile] = None
) -> OracleModel:
    """Construct the coefficient matrices, autocovariance model, and means.

    Lags 0..m_true get the Toeplitz matrices rho^|i-j| / (m_true - l + 1);
    the two trailing lags share one sparse random matrix (zero when
    m_true = 0, which makes the sequence independent). Each row of the
    sparse matrix draws its own support.
    """
    p, m = spec.p, spec.m_true
    decay = spec.rho ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    qs: list[Optional[np.ndarray]] = [decay / (m - l + 1) for l in range(m + 1)]
    if m == 0:
        qs += [None, None]
    else:
        rng = _rng(spec.seed, _STREAM_COEFF)
        nnz = int(math.floor(spec.perturb_sparsity * p))
        perturb = np.zeros((p, p))
        if nnz > 0:
            for row in range(p):
                cols = rng.choice(p, size=nnz, replace=False)
                perturb[row, cols] = rng.uniform(0.0, spec.perturb_scale, size=nnz)
        qs += [perturb, perturb]
    means = mean_matrix(profile, spec.n, spec.p)
    return OracleModel(n=spec.n, p=spec.p, m_true=m, qs=tuple(qs), means=means)


def generate_series(
    spec: LinearProcessSpec,
    profile: Optional[MeanProfile] = None,
    *,
    model: Optional[OracleModel] = None,
    seed=None,
) -> SeriesMatrix:
    """Draw one series from the linear process.

    Innovations are indexed from 1 - (m_true + 2) so the first observation
    is exactly stationary. ``model`` lets runners reuse fixed coefficients
    across replications while ``seed`` (any SeedSequence entropy) varies
    only the innovations; both default to the pure-spec behavior.
    """
    if model is None:
        model = build_coefficients(spec, profile)
    burn = model.lag_support
    rng = _rng(spec.seed if seed is None else seed, _STREAM_INNOV)
    shape = (spec.n + burn, spec.p)
    if spec.innovation == "gaussian":
        eps = rng.standard_normal(shape)
    else:
        eps = rng.standard_t(spec.t_dof, size=shape) / math.sqrt(
            spec.t_dof / (spec.t_dof - 2.0)
        )
    x = model.means.copy()
    for l, q in enumerate(model.qs):
        if q is None:
            continue
        x += eps[burn - l : burn - l + spec.n] @ q.T
    return SeriesMatrix(x)


def oracle_mean_l(t: int, model: OracleModel, window: DependenceWindow) -> float:
    """Expected split statistic at t under the model, leading terms only.

    Evaluates the mean contrast of the two halves minus the lag correction
    applied to the centered mean products. Zero for all t under a constant
    mean; under a single change it is maximized exactly at the change point.
    """
    n = model.n
    mu = model.means
    diff = mu[:t].mean(axis=0) - mu[t:].mean(axis=0)
    term1 = t * (n - t) / n**2 * float(diff @ diff)
    dev = mu - mu.mean(axis=0)
    m = window.m
    v_b = np.array(
        [float(np.sum(dev[: n - k] * dev[k:])) / n for k in range(m + 1)]
    )
    design = F_matrix(n, m)
    term2 = float(f_vector(n, t, m).values @ design.solve(v_b)) / n
    return term1 - term2


def oracle_variance(
    t: int | Literal["aggregate"], model: OracleModel, window: DependenceWindow
) -> float:
    """Exact leading-order variance of the split statistic (or of the sum).

    Combines the trace term over the lag window with the mean-dependent
    term over every lag the generator supports, using zero-extended
    contrast lookups. With Gaussian innovations and a generator whose
    dependence dies inside the window this is the exact variance.
    """
    n, m = model.n, window.m
    contrast = b_aggregate(n, window) if t == "aggregate" else b_matrix(n, int(t), window)
    B = contrast.values
    cross = _contrast_cross_products(B, m)
    trace_term = 0.0
    for h1 in range(-m, m + 1):
        for h2 in range(-m, m + 1):
            trace_term += cross[h1 + m, h2 + m] * model.trace_product(h1, h2)

    mean_term = 0.0
    if np.any(model.means):
        mu = model.means
        r = B + B.T
        support = min(model.lag_support, n - 1)
        for h in range(-support, support + 1):
            r0, r1 = max(0, -h), n - max(0, h)
            lag_products = r[r0:r1].T @ r[r0 + h : r1 + h]
            weights = mu @ model.autocovariance(h) @ mu.T
            mean_term += float(np.sum(lag_products * weights))
    return (trace_term + mean_term) / float(n) ** 4


# ---------------------------------------------------------------------------
# Monte Carlo runners. Workers read a per-pool payload installed by the
# initializer; HDCP_WORKERS > 1 switches on a fork-based process pool.
# ---------------------------------------------------------------------------

_PAYLOAD = None


def _install_payload(payload) -> None:
    global _PAYLOAD
    _PAYLOAD = payload


def worker_count() -> int:
    raw = os.environ.get("HDCP_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_replications(worker, tasks, payload):
    workers = worker_count()
    if workers <= 1:
        _install_payload(payload)
        try:
            return [worker(task) for task in tasks]
        finally:
            _install_payload(None)
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(workers, initializer=_install_payload, initargs=(payload,)) as pool:
        return pool.map(worker, tasks)


def _binomial_se(rate: float, reps: int) -> float:
    return math.sqrt(rate * (1.0 - rate) / reps)


@dataclass(frozen=True)
class SizePowerDesign:
    """One cell of a size/power experiment.

    ``delta = 0`` runs the null; otherwise a single change of magnitude
    ``delta`` sits at ``tau``. ``m_used`` is the analysis window and may
    deliberately differ from ``m_true``.
    """

    n: int
    p: int
    m_true: int
    m_used: int
    reps: int
    alpha: float = 0.05
    delta: float = 0.0
    tau: Optional[int] = None
    innovation: Literal["gaussian", "student_t"] = "gaussian"
    t_dof: float = 8.0
    rho: float = 0.6
    perturb_sparsity: float = 0.05
    perturb_scale: float = 0.05
    seed: int = 0

    def spec(self) -> LinearProcessSpec:
        return LinearProcessSpec(
            n=self.n, p=self.p, m_true=self.m_true, rho=self.rho,
            perturb_sparsity=self.perturb_sparsity, perturb_scale=self.perturb_scale,
            innovation=self.innovation, t_dof=self.t_dof, seed=self.seed,
        )

    def profile(self) -> MeanProfile:
        if self.delta == 0.0:
            return null_profile()
        if self.tau is None:
            raise ValueError("tau is required when delta != 0")
        return single_change_profile(self.tau, self.delta, sign_seed=self.seed)


@dataclass(frozen=True)
class SizePowerResult:
    design: SizePowerDesign
    rejection_rate: float
    std_error: float
    degenerate_count: int

    def to_dict(self) -> dict:
        return {
            "design": asdict(self.design),
            "rejection_rate": self.rejection_rate,
            "std_error": self.std_error,
            "degenerate_count": self.degenerate_count,
        }


def _size_power_rep(rep: int):
    design, model, spec, profile = _PAYLOAD
    series = generate_series(spec, profile, model=model, seed=[design.seed, rep])
    outcome = test_global(
        series, DependenceWindow(design.m_used), InferenceConfig(alpha=design.alpha)
    )
    return outcome.reject, outcome.degenerate


def run_size_power(design: SizePowerDesign) -> SizePowerResult:
    """Rejection rate of the global test over seeded replications."""
    spec = design.spec()
    profile = design.profile()
    model = build_coefficients(spec, profile)
    rows = _map_replications(
        _size_power_rep, range(design.reps), (design, model, spec, profile)
    )
    rejects = np.array([r for r, _ in rows], dtype=bool)
    rate = float(rejects.mean())
    return SizePowerResult(
        design=design,
        rejection_rate=rate,
        std_error=_binomial_se(rate, design.reps),
        degenerate_count=int(sum(d for _, d in rows)),
    )


@dataclass(frozen=True)
class MultiCpDesign:
    """Binary segmentation experiment with a piecewise-constant mean."""

    n: int
    p: int
    m_true: int
    m_used: int
    reps: int
    change_points: tuple[int, ...] = ()
    deltas: tuple[float, ...] = (0.0,)
    alpha: float = 0.05
    fwer_mode: bool = False
    tolerance_pts: int = 0
    min_segment_len: Optional[int] = None
    innovation: Literal["gaussian", "student_t"] = "gaussian"
    t_dof: float = 8.0
    rho: float = 0.6
    perturb_sparsity: float = 0.05
    perturb_scale: float = 0.05
    seed: int = 0

    def spec(self) -> LinearProcessSpec:
        return LinearProcessSpec(
            n=self.n, p=self.p, m_true=self.m_true, rho=self.rho,
            perturb_sparsity=self.perturb_sparsity, perturb_scale=self.perturb_scale,
            innovation=self.innovation, t_dof=self.t_dof, seed=self.seed,
        )

    def profile(self) -> MeanProfile:
        return MeanProfile(self.change_points, self.deltas, sign_seed=self.seed)


@dataclass(frozen=True)
class MultiCpResult:
    design: MultiCpDesign
    fp_mean: float
    fp_sd: float
    fn_mean: float
    fn_sd: float
    tp_mean: float
    tp_sd: float

    def to_dict(self) -> dict:
        return {
            "design": asdict(self.design),
            "fp": {"mean": self.fp_mean, "sd": self.fp_sd},
            "fn": {"mean": self.fn_mean, "sd": self.fn_sd},
            "tp": {"mean": self.tp_mean, "sd": self.tp_sd},
        }


def _multi_cp_rep(rep: int):
    design, model, spec, profile, cfg = _PAYLOAD
    series = generate_series(spec, profile, model=model, seed=[design.seed, rep])
    found = binary_segmentation(series, DependenceWindow(design.m_used), cfg)
    return classify_errors(found, list(design.change_points), design.tolerance_pts)


def run_multi_cp(design: MultiCpDesign) -> MultiCpResult:
    """Mean and standard deviation of (FP, FN, TP) over replications."""
    spec = design.spec()
    profile = design.profile()
    model = build_coefficients(spec, profile)
    cfg = InferenceConfig(
        alpha=design.alpha,
        fwer_mode=design.fwer_mode,
        min_segment_len=design.min_segment_len,
    )
    rows = np.array(
        _map_replications(
            _multi_cp_rep, range(design.reps), (design, model, spec, profile, cfg)
        ),
        dtype=np.float64,
    )
    ddof = 1 if design.reps > 1 else 0
    means = rows.mean(axis=0)
    sds = rows.std(axis=0, ddof=ddof)
    return MultiCpResult(
        design=design,
        fp_mean=float(means[0]), fp_sd=float(sds[0]),
        fn_mean=float(means[1]), fn_sd=float(sds[1]),
        tp_mean=float(means[2]), tp_sd=float(sds[2]),
    )


@dataclass(frozen=True)
class BoundaryDesign:
    """Detection-probability sweep for a single change at a fixed location."""

    n: int
    p: int
    m_true: int
    m_used: int
    tau: int
    deltas: tuple[float, ...]
    reps: int
    innovation: Literal["gaussian", "student_t"] = "gaussian"
    t_dof: float = 8.0
    rho: float = 0.6
    perturb_sparsity: float = 0.05
    perturb_scale: float = 0.05
    seed: int = 0

    def spec(self) -> LinearProcessSpec:
        return LinearProcessSpec(
            n=self.n, p=self.p, m_true=self.m_true, rho=self.rho,
            perturb_sparsity=self.perturb_sparsity, perturb_scale=self.perturb_scale,
            innovation=self.innovation, t_dof=self.t_dof, seed=self.seed,
        )


@dataclass(frozen=True)
class BoundaryResult:
    design: BoundaryDesign
    probabilities: tuple[float, ...]
    std_errors: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "design": asdict(self.design),
            "deltas": list(self.design.deltas),
            "detection_probability": list(self.probabilities),
            "std_error": list(self.std_errors),
        }


def _boundary_rep(task: tuple[int, int]):
    delta_index, rep = task
    design, models, spec = _PAYLOAD
    profiles, built = models
    series = generate_series(
        spec,
        profiles[delta_index],
        model=built[delta_index],
        seed=[design.seed, delta_index, rep],
    )
    return estimate_single(series, DependenceWindow(design.m_used)) == design.tau


def run_boundary_curve(design: BoundaryDesign) -> BoundaryResult:
    """Probability that the argmax estimator hits the change point exactly."""
    spec = design.spec()
    profiles = [
        single_change_profile(design.tau, d, sign_seed=design.seed)
        for d in design.deltas
    ]
    built = [build_coefficients(spec, prof) for prof in profiles]
    tasks = [(di, rep) for di in range(len(design.deltas)) for rep in range(design.reps)]
    hits = _map_replications(
        _boundary_rep, tasks, (design, (profiles, built), spec)
    )
    hits = np.array(hits, dtype=bool).reshape(len(design.deltas), design.reps)
    probs = hits.mean(axis=1)
    return BoundaryResult(
        design=design,
        probabilities=tuple(float(pr) for pr in probs),
        std_errors=tuple(_binomial_se(float(pr), design.reps) for pr in probs),
    )


@dataclass(frozen=True)
class ElbowDesign:
    """Lag-energy curves and order recovery for one or more true orders."""

    n: int
    p: int
    m_true_values: tuple[int, ...]
    reps: int
    h_max: int
    drop_ratio: float = 0.02
    change_points: tuple[int, ...] = ()
    deltas: tuple[float, ...] = (0.0,)
    innovation: Literal["gaussian", "student_t"] = "gaussian"
    t_dof: float = 8.0
    rho: float = 0.6
    perturb_sparsity: float = 0.05
    perturb_scale: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class ElbowResult:
    design: ElbowDesign
    mean_curves: tuple[tuple[float, ...], ...]
    selected: tuple[tuple[int, ...], ...]
    recovery_fractions: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "design": asdict(self.design),
            "curves": [
                {
                    "m_true": m,
                    "h": list(range(self.design.h_max + 1)),
                    "w_hat_mean": list(curve),
                    "selected": list(sel),
                    "recovery_fraction": frac,
                }
                for m, curve, sel, frac in zip(
                    self.design.m_true_values,
                    self.mean_curves,
                    self.selected,
                    self.recovery_fractions,
                )
            ],
        }


def _elbow_rep(task: tuple[int, int]):
    m_index, rep = task
    design, specs, models, profile = _PAYLOAD
    series = generate_series(
        specs[m_index], profile, model=models[m_index], seed=[design.seed, m_index, rep]
    )
    curve = lag_energy_curve(series, design.h_max)
    chosen = select_m(curve, design.drop_ratio)
    return tuple(curve.w_hat), chosen.value


def run_elbow_curve(design: ElbowDesign) -> ElbowResult:
    """Replicated lag-energy curves plus order-recovery fractions."""
    profile = MeanProfile(design.change_points, design.deltas, sign_seed=design.seed)
    specs = [
        LinearProcessSpec(
            n=design.n, p=design.p, m_true=m, rho=design.rho,
            perturb_sparsity=design.perturb_sparsity, perturb_scale=design.perturb_scale,
            innovation=design.innovation, t_dof=design.t_dof, seed=design.seed,
        )
        for m in design.m_true_values
    ]
    models = [build_coefficients(spec, profile) for spec in specs]
    tasks = [
        (mi, rep) for mi in range(len(design.m_true_values)) for rep in range(design.reps)
    ]
    rows = _map_replications(_elbow_rep, tasks, (design, specs, models, profile))
    curves = []
    selections = []
    fractions = []
    per_m = design.reps
    for mi, m in enumerate(design.m_true_values):
        chunk = rows[mi * per_m : (mi + 1) * per_m]
        w = np.array([c for c, _ in chunk], dtype=np.float64)
        sel = tuple(int(s) for _, s in chunk)
        curves.append(tuple(float(v) for v in w.mean(axis=0)))
        selections.append(sel)
        fractions.append(float(np.mean([s == m for s in sel])))
    return ElbowResult(
        design=design,
        mean_curves=tuple(curves),
        selected=tuple(selections),
        recovery_fractions=tuple(fractions),
    )
