"""Synthetic data generation and experiment matrices.

Random numbers come from Philox (a counter-based generator) seeded by a
:class:`numpy.random.SeedSequence` whose spawn key names the stream:

* ``support``    positions of the nonzero signal entries
* ``signal``     nonzero amplitudes
* ``noise``      standard normal noise, scaled afterwards
* ``dictionary`` random dictionaries (``gaussian`` kind only)

Each panel ``(sparsity, noise, repetition)`` owns its streams, so cells
never perturb each other and every algorithm in a panel sees identical data.
"""
import hashlib
import json
import logging
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .algorithms import ALGORITHMS, AlgorithmConfig, ConvergenceTrace, Status, run
from .core import ProblemInstance
from .exceptions import SBLInputError, SBLNumericalError
from .io import format_float, read_matrix, write_trace_csv

__all__ = [
    "ExperimentSpec",
    "CellResult",
    "PRESETS",
    "preset",
    "load_spec",
    "rng_stream",
    "gen_sparse_signal",
    "gen_dictionary",
    "gen_observation",
    "denoising_reference",
    "expand_cells",
    "panel_data",
    "run_cell",
    "run_matrix",
    "write_results",
]

logger = logging.getLogger(__name__)

STREAMS = {"support": 0, "signal": 1, "noise": 2, "dictionary": 3}
DICTIONARY_KINDS = ("identity", "partial_dct", "gaussian", "custom_file")


def _key_int(token):
    return zlib.crc32(str(token).encode())


def rng_stream(seed, stream, *key):
    """Philox generator for ``stream`` under ``seed``; ``key`` tokens select a panel."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[stream],) + tuple(_key_int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def gen_sparse_signal(n, s_percent, seed, key=(), amplitude="normal"):
    """Length-``n`` vector with ``round(n * s / 100)`` nonzeros.

    Positions are drawn uniformly without replacement and amplitudes from
    the standard normal.  ``amplitude="unit_max"`` rescales the nonzeros
    so the largest magnitude is 1 (values in [-1, 1]).
    """
    if not 0 < s_percent <= 100:
        raise SBLInputError(f"sparsity must lie in (0, 100], got {s_percent}")
    k = int(round(n * s_percent / 100))
    support = rng_stream(seed, "support", *key).choice(n, size=k, replace=False)
    values = rng_stream(seed, "signal", *key).standard_normal(k)
    if amplitude == "unit_max" and k:
        values = values / np.max(np.abs(values))
    elif amplitude != "normal":
        raise SBLInputError(f"unknown amplitude model {amplitude!r}")
    x = np.zeros(n)
    x[np.sort(support)] = values
    return x


def gen_dictionary(kind, m, n, seed=0, key=(), path=None):
    """``identity`` (m == n), ``partial_dct`` (first m rows of the orthonormal n-point DCT-II),
    ``gaussian`` (i.i.d. N(0, 1/m) entries) or ``custom_file``."""
    if kind == "identity":
        if m != n:
            raise SBLInputError(f"identity dictionary needs m == n, got {m}x{n}")
        return np.eye(n)
    if kind == "partial_dct":
        if not 1 <= m <= n:
            raise SBLInputError(f"partial_dct needs 1 <= m <= n, got {m}x{n}")
        # C[k, j] = a(k) cos(pi (2j+1) k / 2n), built row-wise so large n stays O(mn)
        k = np.arange(m)[:, None]
        j = np.arange(n)[None, :]
        C = np.cos(np.pi * ((2 * j + 1) * k % (4 * n)) / (2 * n)) * math.sqrt(2.0 / n)
        C[0] = math.sqrt(1.0 / n)
        return C
    if kind == "gaussian":
        return rng_stream(seed, "dictionary", *key).standard_normal((m, n)) / math.sqrt(m)
    if kind == "custom_file":
        if path is None:
            raise SBLInputError("custom_file dictionary needs a path")
        F = read_matrix(path)
        if F.shape != (m, n):
            raise SBLInputError(f"{path}: dictionary is {F.shape}, expected {(m, n)}")
        return F
    raise SBLInputError(f"unknown dictionary kind {kind!r}")


def gen_observation(F, x, *, beta=None, snr_db=None, seed=0, key=()):
    """``y = F x + eps`` with i.i.d. normal noise of variance ``1/beta``.

    With ``snr_db`` the variance is ``||F x||^2 / (m 10^(snr/10))``.
    ``beta=inf`` switches noise off.  Returns ``(y, beta_effective)``.
    """
    if (beta is None) == (snr_db is None):
        raise SBLInputError("give exactly one of beta or snr_db")
    F = np.asarray(F, dtype=float)
    clean = F @ x
    m = F.shape[0]
    if snr_db is not None:
        power = float(clean @ clean)
        if power == 0 or not math.isfinite(snr_db):
            raise SBLInputError("SNR is undefined for a zero clean signal")
        variance = power / (m * 10 ** (snr_db / 10))
        beta = 1.0 / variance
    if not beta > 0:
        raise SBLInputError(f"beta must be positive, got {beta}")
    if math.isinf(beta):
        return clean.copy(), beta
    noise = rng_stream(seed, "noise", *key).standard_normal(m)
    return clean + noise / math.sqrt(beta), float(beta)


def denoising_reference(y, beta):
    """Componentwise minimizer ``max(0, y_i^2 - 1/beta)`` for an identity dictionary."""
    y = np.asarray(y, dtype=float)
    return np.maximum(0.0, y * y - 1.0 / beta)


def _noise_token(noise):
    if "beta" in noise:
        return f"beta{format_float(noise['beta'])}"
    return f"snr{format_float(noise['snr_db'])}dB"


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment matrix.

    ``noise`` entries are ``{"beta": value}`` or ``{"snr_db": value}``.
    ``taus`` only fans out AMQ cells; the other algorithms run once per panel.
    """

    dictionary: str = "identity"
    m: int = 512
    n: int = 512
    sparsity: tuple = (10.0,)
    noise: tuple = ({"beta": 1.0},)
    algorithms: tuple = ("em", "mk", "cb", "amq")
    taus: tuple = (1e-10,)
    epsilon: float = 0.02
    eta0: float = 1.0
    rel_tol: float = 1e-3
    max_iters: int = 10000
    prune_tol: float = 1e-12
    gamma0: float = 1.0
    seed: int = 0
    repetitions: int = 1
    amplitude: str = "normal"
    dictionary_path: Optional[str] = None
    record_timing: bool = False
    name: str = "experiment"

    def __post_init__(self):
        if self.dictionary not in DICTIONARY_KINDS:
            raise SBLInputError(f"unknown dictionary kind {self.dictionary!r}")
        if self.dictionary == "partial_dct" and self.m > self.n:
            raise SBLInputError("partial_dct needs m <= n")
        if self.dictionary == "identity" and self.m != self.n:
            raise SBLInputError("identity needs m == n")
        for s in self.sparsity:
            if not 0 < s <= 100:
                raise SBLInputError(f"sparsity must lie in (0, 100], got {s}")
        for nz in self.noise:
            if set(nz) not in ({"beta"}, {"snr_db"}):
                raise SBLInputError(f"noise entry must be {{'beta': v}} or {{'snr_db': v}}, got {nz}")
        for a in self.algorithms:
            if str(a).lower() not in ALGORITHMS:
                raise SBLInputError(f"unknown algorithm {a!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise SBLInputError("seed must be a 64-bit unsigned integer")
        if self.repetitions < 1:
            raise SBLInputError("repetitions must be >= 1")
        if not self.gamma0 > 0:
            raise SBLInputError("gamma0 must be positive")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SBLInputError(f"unknown experiment keys: {sorted(unknown)}")
        for k in ("sparsity", "taus", "algorithms"):
            if k in d:
                d[k] = tuple(d[k]) if isinstance(d[k], (list, tuple)) else (d[k],)
        if "noise" in d:
            nz = d["noise"]
            d["noise"] = tuple(dict(v) for v in (nz if isinstance(nz, (list, tuple)) else [nz]))
        if "algorithms" in d:
            d["algorithms"] = tuple(str(a).lower() for a in d["algorithms"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        for k in ("sparsity", "taus", "algorithms", "noise"):
            d[k] = list(d[k])
        return d


def load_spec(path):
    try:
        with open(path) as fh:
            return ExperimentSpec.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise SBLInputError(f"{path}: {exc}") from exc


_GRID = dict(sparsity=(10.0, 80.0), noise=({"beta": 0.1}, {"beta": 1.0}, {"beta": 10.0}))

PRESETS = {
    "denoising": ExperimentSpec(name="denoising", dictionary="identity", m=512, n=512, **_GRID),
    "fourier": ExperimentSpec(name="fourier", dictionary="partial_dct", m=256, n=512, **_GRID),
    "tau_sweep": ExperimentSpec(name="tau_sweep", dictionary="partial_dct", m=256, n=512,
                                algorithms=("amq",), taus=(1e-10, 1e-5, 1e-2, 1e-1), **_GRID),
    "eeg_analog": ExperimentSpec(name="eeg_analog", dictionary="gaussian", m=122, n=16384,
                                 sparsity=(100 * 590 / 16384,), noise=({"snr_db": 20.0},),
                                 amplitude="unit_max"),
    "sar_analog": ExperimentSpec(name="sar_analog", dictionary="partial_dct", m=4096, n=16384,
                                 sparsity=(10.0,), noise=({"snr_db": 20.0},)),
}


def preset(name, **overrides):
    try:
        spec = PRESETS[name]
    except KeyError:
        raise SBLInputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(spec, **overrides) if overrides else spec


@dataclass(frozen=True)
class Cell:
    algorithm: str
    sparsity: float
    noise: dict = field(hash=False)
    tau: Optional[float]
    rep: int

    @property
    def panel(self):
        return (format_float(self.sparsity), _noise_token(self.noise), self.rep)

    def name(self, dictionary):
        tau = "na" if self.tau is None else format_float(self.tau)
        return f"{self.algorithm}_{dictionary}_{format_float(self.sparsity)}_{_noise_token(self.noise)}_{tau}_{self.rep}"


@dataclass
class CellResult:
    name: str
    cell: Cell
    trace: ConvergenceTrace
    error_curve: Optional[np.ndarray]
    fingerprint: dict
    beta: float
    gamma: Optional[np.ndarray] = None
    message: str = ""


def expand_cells(spec):
    """Cells in deterministic spec order: rep, sparsity, noise, algorithm, tau."""
    cells = []
    for rep in range(spec.repetitions):
        for s in spec.sparsity:
            for noise in spec.noise:
                for alg in spec.algorithms:
                    taus = spec.taus if alg == "amq" else (None,)
                    for tau in taus:
                        cells.append(Cell(alg, float(s), dict(noise), tau, rep))
    return cells


def _digest(a):
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<f8").tobytes()).hexdigest()


def panel_data(spec, sparsity, noise, rep):
    """``(F, x, y, beta)`` for one panel, regenerated deterministically."""
    key = (rep, format_float(sparsity))
    F = gen_dictionary(spec.dictionary, spec.m, spec.n, seed=spec.seed, key=(rep,),
                       path=spec.dictionary_path)
    x = gen_sparse_signal(spec.n, sparsity, spec.seed, key=key, amplitude=spec.amplitude)
    y, beta = gen_observation(F, x, seed=spec.seed, key=key, **noise)
    return F, x, y, beta


def run_cell(spec, cell):
    F, x, y, beta = panel_data(spec, cell.sparsity, cell.noise, cell.rep)
    fingerprint = {"seed": int(spec.seed), "x_sha256": _digest(x), "y_sha256": _digest(y),
                   "F_sha256": _digest(F)}
    config = AlgorithmConfig(
        algorithm=cell.algorithm, tau=cell.tau if cell.tau is not None else 1e-10,
        epsilon=spec.epsilon, eta0=spec.eta0, max_iters=spec.max_iters, rel_tol=spec.rel_tol,
        prune_tol=spec.prune_tol)
    problem = ProblemInstance(F, y, beta)
    errors = []
    callback = None
    if spec.dictionary == "identity":
        reference = denoising_reference(y, beta)

        def callback(k, gamma):
            errors.append(np.linalg.norm(gamma - reference))

    name = cell.name(spec.dictionary)
    try:
        gamma, _, trace = run(problem, np.full(spec.n, float(spec.gamma0)), config, callback)
        message = ""
    except (SBLInputError, SBLNumericalError) as exc:
        trace, gamma, message = ConvergenceTrace(status=Status.NUMERICAL_ERROR), None, str(exc)
    curve = None
    if spec.dictionary == "identity":
        with np.errstate(divide="ignore"):
            curve = np.log(np.asarray(errors))
    return CellResult(name, cell, trace, curve, fingerprint, beta, gamma, message)


def _run_cell_args(args):
    return run_cell(*args)


def run_matrix(spec, jobs=1):
    """Run every cell; failures are recorded per cell, never raised.

    Results come back in :func:`expand_cells` order regardless of ``jobs``.
    """
    cells = expand_cells(spec)
    args = [(spec, c) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell_args, args))
    out = []
    for a in args:
        r = run_cell(*a)
        logger.info("%s: %s after %d iterations", r.name, Status(r.trace.status).value, r.trace.n_iter)
        out.append(r)
    return out


def write_results(spec, results, outdir):
    """One trace CSV per cell, ``{name}_error.csv`` for identity cells, and ``manifest.json``."""
    os.makedirs(outdir, exist_ok=True)
    entries = []
    for r in results:
        trace_file = f"{r.name}.csv"
        write_trace_csv(r.trace, os.path.join(outdir, trace_file), timing=spec.record_timing)
        entry = {
            "name": r.name,
            "algorithm": r.cell.algorithm,
            "dictionary": spec.dictionary,
            "sparsity": r.cell.sparsity,
            "noise": r.cell.noise,
            "beta": r.beta,
            "tau": r.cell.tau,
            "rep": r.cell.rep,
            "panel": "_".join(str(p) for p in (spec.dictionary,) + r.cell.panel),
            "status": Status(r.trace.status).value,
            "iterations": r.trace.n_iter,
            "final_objective": r.trace.objective[-1] if r.trace.objective else None,
            "trace_file": trace_file,
            "fingerprint": r.fingerprint,
        }
        if r.message:
            entry["message"] = r.message
        if r.error_curve is not None:
            err_file = f"{r.name}_error.csv"
            with open(os.path.join(outdir, err_file), "w", newline="") as fh:
                fh.write("iter,log_error\n")
                for k, v in enumerate(r.error_curve):
                    fh.write(f"{k},{format_float(v)}\n")
            entry["error_file"] = err_file
        entries.append(entry)
    manifest = {"spec": spec.to_dict(), "cells": entries}
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(_finite(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj
