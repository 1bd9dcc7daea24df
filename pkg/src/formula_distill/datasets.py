"""Point sampling, noise injection, and the benchmark-expression registry.

Benchmark problems live in two checked-in CSV files (``data/benchmarks.csv``
and ``data/feynman.csv``). Each row carries an infix expression over variables
``x1..xN`` plus a sampling recipe. At load time the expression is compiled
into a numpy closure and, where the operator set allows, also converted into
a preorder token sequence so the same target can be consumed by the search
and inference stack.
"""

import ast
import csv
import functools
import math
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import digamma

from .errors import SpecError, UnknownBenchmark
from .seeding import rng_from
from .vocab import MAX_VAR_INDEX

# Noise amplitudes used by the robustness benchmark: 0.00, 0.01, ..., 0.10.
NOISE_LEVELS = tuple(round(0.01 * i, 2) for i in range(11))

# Default sampling interval for synthesized training targets.
TRAIN_INTERVAL = (-10.0, 10.0)

_KINDS = ("uniform", "grid")


@dataclass(frozen=True)
class SamplingSpec:
    """How to draw input points: uniform draws or an evenly spaced grid."""

    kind: str
    a: float
    b: float
    c: int
    dims: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SpecError(f"unknown sampling kind {self.kind!r}")
        if not self.a < self.b:
            raise SpecError(f"need a < b, got [{self.a}, {self.b}]")
        if self.c < 1:
            raise SpecError(f"need at least one point, got c={self.c}")
        if self.dims < 1:
            raise SpecError(f"need at least one variable, got dims={self.dims}")


@dataclass
class PointSet:
    """A sampled (X, y) dataset plus the recipe that produced it."""

    X: np.ndarray
    y: np.ndarray
    spec: SamplingSpec
    noise_level: float = 0.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise SpecError("X must be a 2-d matrix")
        if self.y.shape != (self.X.shape[0],):
            raise SpecError("y length must match the X row count")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise SpecError("point sets must not contain non-finite entries")


def sample_points(spec: SamplingSpec, cartesian: bool = False) -> np.ndarray:
    """Draw an input matrix of shape (rows, dims) according to ``spec``.

    Grid specs place ``c`` evenly spaced values per variable. By default the
    variables share the same axis (``c`` rows along the diagonal); with
    ``cartesian=True`` the full product is built, which is only allowed for
    one or two variables because the row count grows as ``c**dims``.
    """
    if spec.kind == "grid":
        axis = np.linspace(spec.a, spec.b, spec.c)
        if not cartesian or spec.dims == 1:
            return np.tile(axis[:, None], (1, spec.dims))
        if spec.dims > 2:
            raise SpecError("cartesian grids are limited to at most 2 variables")
        grids = np.meshgrid(axis, axis, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)
    rng = np.random.default_rng(spec.seed)
    return rng.uniform(spec.a, spec.b, size=(spec.c, spec.dims))


def add_noise(y: np.ndarray, level: float, rng, strict: bool = True) -> np.ndarray:
    """Return ``y + level * |max(y) - min(y)| * D`` with rescaled Gaussian D.

    ``D`` is a batch of standard-normal draws divided by its own maximum
    absolute value, so the largest perturbation is exactly the amplitude
    ``level * (max(y) - min(y))``. At ``level == 0`` the input is returned
    unchanged and the generator is not consumed.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise SpecError("cannot add noise to an empty vector")
    if level < 0.0 or level > NOISE_LEVELS[-1] + 1e-12:
        raise SpecError(f"noise level {level} outside [0, {NOISE_LEVELS[-1]}]")
    if strict and not any(abs(level - lv) < 1e-12 for lv in NOISE_LEVELS):
        raise SpecError(f"noise level {level} is not on the benchmark grid")
    if level == 0.0:
        return y.copy()
    draws = np.asarray(rng.standard_normal(y.size), dtype=float)
    peak = np.max(np.abs(draws))
    if peak > 0.0:
        draws = draws / peak
    amplitude = level * abs(np.max(y) - np.min(y))
    return y + amplitude * draws


def versatility_intervals() -> List[Tuple[float, float]]:
    """Symmetric sampling intervals [-2,2], [-4,4], ..., [-20,20]."""
    return [(-2.0 * i, 2.0 * i) for i in range(1, 11)]


# ---------------------------------------------------------------------------
# expression compilation


def _harmonic(x):
    return digamma(np.asarray(x, dtype=float) + 1.0) + np.euler_gamma


_NAMESPACE = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tan": np.tan,
    "tanh": np.tanh,
    "arcsin": np.arcsin,
    "abs": np.abs,
    "harmonic": _harmonic,
    "pi": math.pi,
    "e": math.e,
}

_VAR_PATTERN = re.compile(r"\bx(\d+)\b")


def compile_closure(expression: str, dims: int) -> Callable[[np.ndarray], np.ndarray]:
    """Compile an infix expression over x1..xN into a vectorized closure."""
    code = _VAR_PATTERN.sub(lambda m: f"X[:, {int(m.group(1)) - 1}]", expression)
    compiled = compile(code, f"<benchmark {expression!r}>", "eval")

    def closure(X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] < dims:
            raise SpecError(f"expected at least {dims} input columns")
        with np.errstate(all="ignore"):
            out = eval(compiled, {"__builtins__": {}}, dict(_NAMESPACE, X=X))
        return np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],)).copy()

    return closure


class _Inexpressible(Exception):
    """Raised while converting infix forms that the token set cannot encode."""


def _const_value(node) -> Optional[float]:
    """Evaluate a purely numeric AST subtree, or return None."""
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id in ("pi", "e"):
        return float(_NAMESPACE[node.id])
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        inner = _const_value(node.operand)
        return None if inner is None else -inner
    if isinstance(node, ast.BinOp):
        left = _const_value(node.left)
        right = _const_value(node.right)
        if left is None or right is None:
            return None
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            return left / right
        if isinstance(node.op, ast.Pow):
            return left ** right
    return None


_BIN_TOKENS = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/"}
_UNARY_CALLS = ("sin", "cos", "exp", "log", "sqrt")


def _power_chain(base: Tuple[List[str], List[float]], n: int) -> Tuple[List[str], List[float]]:
    tokens, consts = base
    out_tokens: List[str] = ["*"] * (n - 1)
    out_consts: List[float] = []
    for _ in range(n):
        out_tokens.extend(tokens)
        out_consts.extend(consts)
    return out_tokens, out_consts


def _convert(node) -> Tuple[List[str], List[float]]:
    value = _const_value(node)
    if value is not None:
        return ["C"], [value]
    if isinstance(node, ast.Name):
        match = _VAR_PATTERN.fullmatch(node.id)
        if match and 1 <= int(match.group(1)) <= MAX_VAR_INDEX:
            return [node.id], []
        raise _Inexpressible(node.id)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        tokens, consts = _convert(node.operand)
        return ["*", "C"] + tokens, [-1.0] + consts
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        if node.func.id in _UNARY_CALLS and len(node.args) == 1:
            tokens, consts = _convert(node.args[0])
            return [node.func.id] + tokens, consts
        raise _Inexpressible(node.func.id)
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, ast.Pow):
            exponent = _const_value(node.right)
            if exponent is None:
                raise _Inexpressible("non-constant exponent")
            base = _convert(node.left)
            if exponent == 0.5:
                return ["sqrt"] + base[0], base[1]
            if float(exponent).is_integer():
                n = int(exponent)
                if n == 0:
                    return ["C"], [1.0]
                if n >= 1:
                    return _power_chain(base, n)
                tokens, consts = _power_chain(base, -n)
                return ["/", "C"] + tokens, [1.0] + consts
            raise _Inexpressible(f"exponent {exponent}")
        op = _BIN_TOKENS.get(type(node.op))
        if op is None:
            raise _Inexpressible(type(node.op).__name__)
        left = _convert(node.left)
        right = _convert(node.right)
        return [op] + left[0] + right[0], left[1] + right[1]
    raise _Inexpressible(type(node).__name__)


def infix_to_preorder(expression: str) -> Optional[Tuple[List[str], List[float]]]:
    """Convert an infix expression into preorder tokens plus constants.

    Returns None when the expression needs operators outside the token set
    (abs, tan, tanh, arcsin, harmonic, non-integer or variable powers) or
    variables beyond x9. Integer powers unroll into multiplication chains and
    constants are listed in token order.
    """
    tree = ast.parse(expression, mode="eval")
    try:
        tokens, consts = _convert(tree.body)
    except _Inexpressible:
        return None
    return tokens, consts


# ---------------------------------------------------------------------------
# registry


@dataclass
class BenchmarkEntry:
    """One benchmark problem: closure, sampling recipe, optional token form."""

    name: str
    expression: str
    spec: SamplingSpec
    group: str
    suspect: bool
    closure: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    preorder_tokens: Optional[Tuple[str, ...]] = None
    preorder_constants: Optional[Tuple[float, ...]] = None


def data_dir() -> Path:
    """Directory holding the registry CSV files (env override supported)."""
    override = os.environ.get("FORMULA_DISTILL_DATA_DIR")
    if override:
        return Path(override)
    return Path(__file__).resolve().parent / "data"


def _load_file(path: Path) -> List[BenchmarkEntry]:
    entries: List[BenchmarkEntry] = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            spec = SamplingSpec(
                kind=row["kind"],
                a=float(row["a"]),
                b=float(row["b"]),
                c=int(row["c"]),
                dims=int(row["dims"]),
            )
            converted = infix_to_preorder(row["expression"])
            tokens = constants = None
            if converted is not None:
                tokens = tuple(converted[0])
                constants = tuple(converted[1])
            entries.append(
                BenchmarkEntry(
                    name=row["name"],
                    expression=row["expression"],
                    spec=spec,
                    group=row["group"],
                    suspect=bool(int(row["suspect"])),
                    closure=compile_closure(row["expression"], spec.dims),
                    preorder_tokens=tokens,
                    preorder_constants=constants,
                )
            )
    return entries


@functools.lru_cache(maxsize=1)
def load_registry() -> dict:
    """Load every benchmark row, keyed by name, preserving file order."""
    registry: dict = {}
    base = data_dir()
    for filename in ("benchmarks.csv", "feynman.csv"):
        path = base / filename
        if not path.exists():
            continue
        for entry in _load_file(path):
            registry[entry.name] = entry
    return registry


def registry_lookup(name: str) -> BenchmarkEntry:
    """Fetch a single benchmark row; unknown names raise UnknownBenchmark."""
    registry = load_registry()
    if name not in registry:
        raise UnknownBenchmark(f"no benchmark named {name!r}")
    return registry[name]


def registry_group(group: str) -> List[BenchmarkEntry]:
    """All rows of a benchmark family, in file order."""
    return [entry for entry in load_registry().values() if entry.group == group]


# ---------------------------------------------------------------------------
# point-set construction and serialization

_MAX_REJECTION_ROUNDS = 200


def make_pointset(
    entry: BenchmarkEntry,
    seed: int = 0,
    noise_level: float = 0.0,
    cartesian: bool = False,
) -> PointSet:
    """Sample a benchmark's inputs, evaluate targets, and optionally add noise.

    Uniform specs resample rows whose target is non-finite (domain holes such
    as log of a negative draw) until the requested count is reached. Grid
    specs are fixed point sets, so invalid rows are dropped instead.
    """
    spec = replace(entry.spec, seed=seed)
    if spec.kind == "grid":
        X = sample_points(spec, cartesian=cartesian)
        y = entry.closure(X)
        keep = np.isfinite(y)
        if not np.any(keep):
            raise SpecError(f"{entry.name}: no finite targets on the grid")
        X, y = X[keep], y[keep]
    else:
        rng = np.random.default_rng(spec.seed)
        rows: List[np.ndarray] = []
        targets: List[np.ndarray] = []
        have = 0
        for _ in range(_MAX_REJECTION_ROUNDS):
            draw = rng.uniform(spec.a, spec.b, size=(spec.c, spec.dims))
            vals = entry.closure(draw)
            keep = np.isfinite(vals)
            if np.any(keep):
                rows.append(draw[keep])
                targets.append(vals[keep])
                have += int(np.sum(keep))
            if have >= spec.c:
                break
        else:
            raise SpecError(f"{entry.name}: could not draw {spec.c} finite targets")
        X = np.concatenate(rows)[: spec.c]
        y = np.concatenate(targets)[: spec.c]
    if noise_level:
        y = add_noise(y, noise_level, rng_from(seed, "noise", noise_level))
    return PointSet(X=X, y=y, spec=spec, noise_level=noise_level)


def points_to_csv_text(X: np.ndarray, y: np.ndarray) -> str:
    """Render (X, y) as CSV text with columns x1..xd,y and repr-exact floats."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    header = [f"x{j + 1}" for j in range(X.shape[1])] + ["y"]
    lines = [",".join(header)]
    for i in range(X.shape[0]):
        cells = [repr(float(v)) for v in X[i]] + [repr(float(y[i]))]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def points_from_csv_text(text: str) -> Tuple[np.ndarray, np.ndarray]:
    """Parse CSV text produced by :func:`points_to_csv_text` back into (X, y)."""
    reader = csv.reader(text.strip().splitlines())
    header = next(reader)
    rows = [[float(cell) for cell in row] for row in reader]
    data = np.asarray(rows, dtype=float)
    dims = len(header) - 1
    return data[:, :dims], data[:, dims]


def save_pointset(ps: PointSet, path) -> None:
    """Write a point set as CSV (x1..xd,y) with a JSON sidecar for the sampling spec."""
    import json

    path = Path(path)
    path.write_text(points_to_csv_text(ps.X, ps.y))
    sidecar = {
        "spec": {
            "kind": ps.spec.kind,
            "a": ps.spec.a,
            "b": ps.spec.b,
            "c": ps.spec.c,
            "dims": ps.spec.dims,
            "seed": ps.spec.seed,
        },
        "noise_level": ps.noise_level,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_pointset(path) -> PointSet:
    """Read a point set previously written by :func:`save_pointset`."""
    import json

    path = Path(path)
    X, y = points_from_csv_text(path.read_text())
    meta = json.loads(Path(str(path) + ".json").read_text())
    spec = SamplingSpec(**meta["spec"])
    return PointSet(X=X, y=y, spec=spec, noise_level=float(meta["noise_level"]))
