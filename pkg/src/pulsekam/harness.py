"""Error metrics and experiment runs that regenerate the figure data.

A scheme is named by a short id (``magnus2``, ``dyson1``, ``pvz1``, ``vv2``,
``kamB1``, ``kamC2``, ``oracle``) plus optional free times and a truncation
setting. :func:`compute_errors` compares it with the reference propagator at
the end of the pulse, and :func:`run_experiment` sweeps a figure protocol
and writes a CSV or JSON table with a metadata sidecar.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .frames import system_key
from .kam import KamConfig, g_operator, kam_propagator
from .linalg import spectral_norm, unitarity_defect
from .ooexpand import OOConfig, oo_propagator
from .optimize import ScanGrid, scan_g
from .oracle import SolverSpec, reference_propagator, transition_probability
from .quad import QuadratureSpec
from .system import PulseShape, PulseSystem

COLUMNS = ("scheme", "eps", "A", "t1", "t1p", "t2", "t2p", "delta_n", "delta_prob",
           "unitarity_defect", "g", "log10_delta", "error")
_OO_KINDS = {"magnus": "magnus", "dyson": "dyson", "pvz": "pvz", "vv": "vanvleck",
             "vanvleck": "vanvleck"}
_ID = re.compile(r"^(magnus|dyson|pvz|vv|vanvleck|kam([abc]))(\d)$", re.IGNORECASE)


class ValidationError(ValueError):
    """Invalid experiment or scheme specification."""


# -- schemes ----------------------------------------------------------------------

@dataclass(frozen=True)
class SchemeSpec:
    """An expansion scheme with its order and free parameters.

    ``kind`` is ``magnus``, ``dyson``, ``pvz``, ``vanvleck``, ``kam`` or
    ``oracle``; ``type`` is the KAM type. For PVZ and Van Vleck, ``v``
    selects the order at which ``D_v`` is anchored at ``t_v``, and ``t1p``,
    ``t2p`` are the generator lower limits.
    """

    kind: str
    order: int = 1
    type: str = "B"
    t1: float | None = None
    t1p: float | None = None
    t2: float | None = None
    t2p: float | None = None
    truncation: str | int = "resummed"
    v: int | None = None
    t_v: float | None = None
    label: str | None = None

    def __post_init__(self):
        kind = str(self.kind).lower()
        kind = _OO_KINDS.get(kind, kind)
        if kind not in ("magnus", "dyson", "pvz", "vanvleck", "kam", "oracle"):
            raise ValidationError(f"unknown scheme kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "type", str(self.type).upper())
        try:
            self.build()
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc

    @classmethod
    def from_id(cls, ident: str, **kw) -> "SchemeSpec":
        if ident.lower() == "oracle":
            return cls("oracle", **kw)
        m = _ID.match(ident.strip())
        if not m:
            raise ValidationError(f"unknown scheme id {ident!r}")
        order = int(m.group(3))
        if m.group(2):
            return cls("kam", order, m.group(2).upper(), **kw)
        return cls(m.group(1).lower(), order, **kw)

    @classmethod
    def from_config(cls, cfg: dict) -> "SchemeSpec":
        cfg = dict(cfg)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(cfg) - known
        if extra:
            raise ValidationError(f"unknown scheme keys {sorted(extra)}")
        if "kind" not in cfg:
            raise ValidationError("scheme config needs 'kind'")
        ident = str(cfg["kind"])
        if _ID.match(ident) or ident.lower() == "oracle":
            base = cls.from_id(ident)
            cfg.pop("kind")
            return replace(base, **cfg)
        return cls(**cfg)

    @property
    def id(self) -> str:
        if self.label:
            return self.label
        if self.kind == "oracle":
            return "oracle"
        if self.kind == "kam":
            return f"kam{self.type}{self.order}"
        short = "vv" if self.kind == "vanvleck" else self.kind
        return f"{short}{self.order}"

    def build(self):
        """The underlying :class:`OOConfig` or :class:`KamConfig` (``None`` for the oracle)."""
        if self.kind == "oracle":
            return None
        if self.kind == "kam":
            return KamConfig(self.type, self.order, t1=self.t1, t1p=self.t1p, t2=self.t2,
                             t2p=self.t2p, truncation=self.truncation)
        tps = tuple(x for x in (self.t1p, self.t2p)[:self.order])
        if self.kind in ("magnus", "dyson"):
            tps = ()
        return OOConfig(self.kind, self.order, self.v, self.t_v, tps)

    def times(self) -> dict:
        return {"t1": self.t1, "t1p": self.t1p, "t2": self.t2, "t2p": self.t2p}

    @property
    def unitary(self) -> bool:
        return self.kind not in ("dyson", "oracle")


def propagate(system: PulseSystem, scheme: SchemeSpec, t: float | None = None,
              t0: float | None = None, quad: QuadratureSpec = QuadratureSpec(),
              oracle: SolverSpec = SolverSpec()) -> np.ndarray:
    """Propagator of ``scheme`` from ``t0`` to ``t`` (default: over the pulse)."""
    ti, tf = system.support
    t0 = ti if t0 is None else float(t0)
    t = tf if t is None else float(t)
    cfg = scheme.build()
    if cfg is None:
        return reference_propagator(system, t0, t, oracle, estimate_error=False).U
    if isinstance(cfg, KamConfig):
        return kam_propagator(system, cfg, t, t0, quad)
    return oo_propagator(system, cfg, t, t0, quad)


# -- oracle cache -------------------------------------------------------------

class OracleCache:
    """Thread-safe memo of reference propagators keyed by system and tolerances."""

    def __init__(self):
        self._data: dict = {}
        self._lock = threading.Lock()

    def get(self, system: PulseSystem, spec: SolverSpec, t0: float, t: float) -> np.ndarray:
        key = (system_key(system), spec, float(t0), float(t))
        with self._lock:
            hit = self._data.get(key)
        if hit is not None:
            return hit
        U = reference_propagator(system, t0, t, spec, estimate_error=False).U
        U.flags.writeable = False
        with self._lock:
            return self._data.setdefault(key, U)

    def __len__(self):
        return len(self._data)


_DEFAULT_CACHE = OracleCache()


# -- error reports ---------------------------------------------------------------

@dataclass
class ErrorReport:
    scheme: str
    eps: float
    A: float
    delta_n: float
    delta_prob: float
    unitarity_defect: float
    g: float = float("nan")
    wall_time: float = 0.0
    t1: float | None = None
    t1p: float | None = None
    t2: float | None = None
    t2p: float | None = None
    error: str = ""

    @property
    def log10_delta(self) -> float:
        d = self.delta_n
        return math.log10(d) if d > 0 else (-math.inf if d == 0 else math.nan)

    def row(self) -> dict:
        out = {c: getattr(self, c) for c in COLUMNS if c != "log10_delta"}
        out["log10_delta"] = self.log10_delta
        return {c: out[c] for c in COLUMNS}


def compute_errors(system: PulseSystem, scheme: SchemeSpec,
                   oracle: SolverSpec = SolverSpec(), quad: QuadratureSpec = QuadratureSpec(),
                   cache: OracleCache | None = _DEFAULT_CACHE, with_g: bool = True
                   ) -> ErrorReport:
    """``Delta_n`` and the signed transition-probability error at the end of the pulse."""
    start = time.perf_counter()
    t0, t = system.support
    U_ref = (cache.get(system, oracle, t0, t) if cache is not None
             else reference_propagator(system, t0, t, oracle, estimate_error=False).U)
    U = U_ref if scheme.kind == "oracle" else propagate(system, scheme, t, t0, quad, oracle)
    g = float("nan")
    cfg = scheme.build()
    if with_g and isinstance(cfg, KamConfig):
        g = g_operator(system, cfg.iterations, cfg, quad).g
    report = ErrorReport(
        scheme=scheme.id, eps=system.epsilon, A=system.area,
        delta_n=spectral_norm(U_ref - U),
        delta_prob=transition_probability(U) - transition_probability(U_ref),
        unitarity_defect=unitarity_defect(U), g=g,
        wall_time=time.perf_counter() - start, **scheme.times())
    return report


# -- experiments ------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    """A sweep over ``eps`` x ``A`` for a list of schemes.

    ``figure`` is ``1``..``5`` for the presets or ``"custom"``. Figure 3 is
    a g-surface scan (``scan`` holds its grid) and writes ``t1,t1p,g``.
    """

    figure: int | str
    schemes: list
    eps: Sequence[float]
    areas: Sequence[float]
    form: str = "sin2"
    support: tuple = (0.0, 1.0)
    out: str | None = None
    format: str = "csv"
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)
    oracle: SolverSpec = field(default_factory=SolverSpec)
    scan: ScanGrid | None = None
    notes: dict = field(default_factory=dict)

    def validate(self):
        if self.format not in ("csv", "json"):
            raise ValidationError("format must be 'csv' or 'json'")
        if not self.schemes:
            raise ValidationError("scheme list is empty")
        if len(self.eps) == 0 or len(self.areas) == 0:
            raise ValidationError("epsilon and area grids must be non-empty")
        if any(e < 0 for e in self.eps):
            raise ValidationError("epsilon values must be nonnegative")
        if self.figure not in (1, 2, 3, 4, 5, "custom"):
            raise ValidationError(f"unknown figure id {self.figure!r}")
        if self.figure == 3 and self.scan is None:
            raise ValidationError("figure 3 needs a scan grid")

    def system(self, eps: float, area: float) -> PulseSystem:
        return PulseSystem(PulseShape(self.form, area, tuple(self.support)), eps)

    def metadata(self) -> dict:
        return {
            "figure": self.figure,
            "schemes": [asdict(s) for s in self.schemes],
            "eps": [float(x) for x in self.eps],
            "areas": [float(x) for x in self.areas],
            "pulse": {"form": self.form, "support": list(self.support)},
            "quadrature": asdict(self.quad),
            "oracle": asdict(self.oracle),
            "scan": None if self.scan is None else asdict(self.scan),
            "notes": self.notes,
        }


def figure_preset(fig: int, area: float | None = None, eps: float | None = None,
                  points: int | None = None) -> ExperimentSpec:
    """Sweep protocols behind the five figures.

    Ranges not fixed by the figure captions are chosen here and echoed in
    the metadata: ``A`` in [0.25, 13] with 256 points for figure 1 and
    ``eps`` in [0.05, 2] with 40 points for figures 2 and 5.
    """
    S = SchemeSpec
    if fig == 1:
        n = points or 256
        return ExperimentSpec(1, [S("magnus", 1), S("kam", 1, "B", t1=0.0, t1p=0.0),
                                  S("kam", 1, "C", t1=0.0, t1p=0.0)],
                              [0.5 if eps is None else eps], np.linspace(0.25, 13.0, n),
                              notes={"A_range": [0.25, 13.0], "points": n})
    if fig in (2, 5):
        n = points or 40
        grid = np.linspace(0.05, 2.0, n)
        if fig == 2:
            schemes = [S("magnus", 1), S("dyson", 1), S("kam", 1, "B", t1=0.0, t1p=0.0),
                       S("kam", 1, "B", t1=0.5, t1p=0.22, label="kamB1opt")]
        else:
            zero = dict(t1=0.0, t1p=0.0, t2=0.0, t2p=0.0)
            schemes = [S("magnus", 2), S("dyson", 2), S("kam", 2, "B", **zero),
                       S("kam", 2, "B", truncation=2, label="kamB2k2", **zero),
                       S("kam", 2, "B", truncation=4, label="kamB2k4", **zero),
                       S("kam", 2, "B", t1=0.5, t1p=0.22, t2=0.66, t2p=0.8,
                         label="kamB2opt")]
        return ExperimentSpec(fig, schemes, grid, [1.0 if area is None else area],
                              notes={"eps_range": [0.05, 2.0], "points": n})
    if fig == 3:
        n = points or 101
        grid = ScanGrid(("t1", "t1p"), (0.0, 0.0), (1.0, 1.0), (n, n))
        return ExperimentSpec(3, [S("kam", 1, "B")], [0.5 if eps is None else eps],
                              [1.0 if area is None else area], scan=grid,
                              notes={"points_per_axis": n})
    if fig == 4:
        n = points or 101
        tps = np.linspace(0.0, 1.0, n)
        schemes = []
        for tp in tps:
            schemes += [S("kam", 1, "A", t1p=float(tp)),
                        S("kam", 1, "B", t1=0.5, t1p=float(tp)),
                        S("kam", 1, "C", t1=0.7, t1p=float(tp))]
        return ExperimentSpec(4, schemes, [0.5 if eps is None else eps],
                              [1.0 if area is None else area], notes={"t1p_points": n})
    raise ValidationError(f"unknown figure id {fig!r}")


def _task(args):
    spec, scheme, e, a = args
    system = spec.system(e, a)
    try:
        return compute_errors(system, scheme, spec.oracle, spec.quad, _DEFAULT_CACHE).row()
    except Exception as exc:  # a failing point becomes a NaN row
        nan = float("nan")
        return ErrorReport(scheme.id, e, a, nan, nan, nan, nan, 0.0,
                           error=f"{type(exc).__name__}: {exc}", **scheme.times()).row()


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


def format_csv(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _json_value(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def format_json(rows: list[dict], columns: Sequence[str]) -> str:
    data = [{c: _json_value(r.get(c)) for c in columns} for r in rows]
    return json.dumps(data, indent=1) + "\n"


@dataclass
class ExperimentResult:
    columns: tuple
    rows: list
    files: list

    def text(self, fmt: str = "csv") -> str:
        return (format_csv if fmt == "csv" else format_json)(self.rows, self.columns)


def _default_jobs() -> int:
    return os.cpu_count() or 1


def run_experiment(spec: ExperimentSpec, jobs: int | None = None) -> ExperimentResult:
    """Run every (scheme, eps, A) point; rows are ordered by scheme, then eps, then A."""
    spec.validate()
    jobs = _default_jobs() if jobs is None else max(1, int(jobs))
    if spec.figure == 3:
        system = spec.system(spec.eps[0], spec.areas[0])
        cfg = spec.schemes[0].build()
        res = scan_g(system, cfg, spec.scan, spec.quad, jobs)
        columns = tuple(spec.scan.names) + ("g",)
        rows = [{**p, "g": g} for p, g, _ in res.rows()]
    else:
        tasks = [(spec, s, float(e), float(a)) for s in spec.schemes
                 for e in spec.eps for a in spec.areas]
        if jobs == 1 or len(tasks) < 2:
            rows = [_task(t) for t in tasks]
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))
        columns = COLUMNS
    files = []
    if spec.out:
        files = write_output(spec, columns, rows)
    return ExperimentResult(columns, rows, files)


def write_output(spec: ExperimentSpec, columns, rows) -> list[str]:
    path = Path(spec.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = (format_csv if spec.format == "csv" else format_json)(rows, columns)
    path.write_text(text, newline="\n")
    meta = path.with_name(path.name + ".meta.json")
    meta.write_text(json.dumps(spec.metadata(), indent=1, default=float) + "\n")
    return [str(path), str(meta)]
