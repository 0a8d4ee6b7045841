"""Benchmark function categories and task sampling.

Ten functions in four categories (uni-modal, basic, hybrid, composition),
re-implemented after the CEC-2021 single-objective suite. Every instance is
built so that its global optimum value is 0 and sits at the instance offset.
Base functions take already shifted/rotated coordinates (rows of a 2-D
array) and apply their own scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExhausted, ContractError, DegenerateRange

# ------------------------------------------------------------------ base functions


def bent_cigar(z):
    return z[:, 0] ** 2 + 1e6 * np.sum(z[:, 1:] ** 2, axis=1)


def discus(z):
    return 1e6 * z[:, 0] ** 2 + np.sum(z[:, 1:] ** 2, axis=1)


def elliptic(z):
    d = z.shape[1]
    if d == 1:
        return z[:, 0] ** 2
    coef = 10.0 ** (6.0 * np.arange(d) / (d - 1))
    return np.sum(coef * z**2, axis=1)


def rastrigin(z):
    z = z * 0.0512
    return np.sum(z**2 - 10.0 * np.cos(2.0 * np.pi * z) + 10.0, axis=1)


_SCHWEFEL_SHIFT = 4.209687462275036e002


def _schwefel_g(z, d):
    g = np.empty_like(z)
    inside = np.abs(z) <= 500.0
    g[inside] = z[inside] * np.sin(np.sqrt(np.abs(z[inside])))
    hi = z > 500.0
    m = 500.0 - np.fmod(z[hi], 500.0)
    g[hi] = m * np.sin(np.sqrt(np.abs(m))) - (z[hi] - 500.0) ** 2 / (10000.0 * d)
    lo = z < -500.0
    m = np.fmod(np.abs(z[lo]), 500.0) - 500.0
    g[lo] = m * np.sin(np.sqrt(np.abs(m))) - (z[lo] + 500.0) ** 2 / (10000.0 * d)
    return g


def schwefel(z):
    """Modified Schwefel, anchored so that f(0) is exactly 0."""
    d = z.shape[1]
    u = z * 10.0 + _SCHWEFEL_SHIFT
    ref = _schwefel_g(np.full((1, 1), _SCHWEFEL_SHIFT), d)[0, 0]
    return np.sum(ref - _schwefel_g(u, d), axis=1)


def lunacek_bi_rastrigin(z):
    d = z.shape[1]
    mu0, dd = 2.5, 1.0
    s = 1.0 - 1.0 / (2.0 * math.sqrt(d + 20.0) - 8.2)
    mu1 = -math.sqrt((mu0**2 - dd) / s)
    t = 2.0 * (z * 0.1)
    first = np.sum(t**2, axis=1)
    second = dd * d + s * np.sum((t + mu0 - mu1) ** 2, axis=1)
    return np.minimum(first, second) + 10.0 * (d - np.sum(np.cos(2.0 * np.pi * t), axis=1))


def rosenbrock(z):
    z = z * 0.02048 + 1.0
    a, b = z[:, :-1], z[:, 1:]
    return np.sum(100.0 * (a**2 - b) ** 2 + (a - 1.0) ** 2, axis=1)


def griewank(z):
    z = z * 6.0
    i = np.sqrt(np.arange(1, z.shape[1] + 1))
    return 1.0 + np.sum(z**2, axis=1) / 4000.0 - np.prod(np.cos(z / i), axis=1)


def griewank_rosenbrock(z):
    z = z * 0.05 + 1.0
    nxt = np.roll(z, -1, axis=1)
    t = 100.0 * (z**2 - nxt) ** 2 + (z - 1.0) ** 2
    return np.sum(t**2 / 4000.0 - np.cos(t) + 1.0, axis=1)


def schaffer_f6(z):
    nxt = np.roll(z, -1, axis=1)
    s = z**2 + nxt**2
    return np.sum(0.5 + (np.sin(np.sqrt(s)) ** 2 - 0.5) / (1.0 + 0.001 * s) ** 2, axis=1)


def hgbat(z):
    d = z.shape[1]
    z = z * 0.05 - 1.0
    r2 = np.sum(z**2, axis=1)
    sz = np.sum(z, axis=1)
    return np.sqrt(np.abs(r2**2 - sz**2)) + (0.5 * r2 + sz) / d + 0.5


def happycat(z):
    d = z.shape[1]
    z = z * 0.05 - 1.0
    r2 = np.sum(z**2, axis=1)
    sz = np.sum(z, axis=1)
    return np.abs(r2 - d) ** 0.25 + (0.5 * r2 + sz) / d + 0.5


def ackley(z):
    d = z.shape[1]
    a = 20.0 * (1.0 - np.exp(-0.2 * np.sqrt(np.sum(z**2, axis=1) / d)))
    b = np.e - np.exp(np.sum(np.cos(2.0 * np.pi * z), axis=1) / d)
    return a + b


BASE_FUNCTIONS = {
    "bent_cigar": bent_cigar,
    "discus": discus,
    "elliptic": elliptic,
    "rastrigin": rastrigin,
    "schwefel": schwefel,
    "lunacek_bi_rastrigin": lunacek_bi_rastrigin,
    "rosenbrock": rosenbrock,
    "griewank": griewank,
    "griewank_rosenbrock": griewank_rosenbrock,
    "schaffer_f6": schaffer_f6,
    "hgbat": hgbat,
    "happycat": happycat,
    "ackley": ackley,
}

# ------------------------------------------------------------------ catalogue

UNIMODAL, BASIC, HYBRID, COMPOSITION = "U", "B", "H", "C"
CATEGORIES = (UNIMODAL, BASIC, HYBRID, COMPOSITION)
CATEGORY_IDS = {
    UNIMODAL: (1,),
    BASIC: (2, 3, 4),
    HYBRID: (5, 6, 7),
    COMPOSITION: (8, 9, 10),
}


@dataclass(frozen=True)
class BenchmarkFunction:
    id: int
    category: str
    name: str
    components: tuple[str, ...]
    fractions: tuple[float, ...] = ()
    sigma: tuple[float, ...] = ()
    lam: tuple[float, ...] = ()
    bias: tuple[float, ...] = ()


FUNCTIONS = {
    1: BenchmarkFunction(1, UNIMODAL, "Bent Cigar", ("bent_cigar",)),
    2: BenchmarkFunction(2, BASIC, "Schwefel", ("schwefel",)),
    3: BenchmarkFunction(3, BASIC, "Lunacek bi-Rastrigin", ("lunacek_bi_rastrigin",)),
    4: BenchmarkFunction(4, BASIC, "Expanded Rosenbrock plus Griewank", ("griewank_rosenbrock",)),
    5: BenchmarkFunction(
        5, HYBRID, "Hybrid Function 1", ("schwefel", "rastrigin", "elliptic"), fractions=(0.3, 0.3, 0.4)
    ),
    6: BenchmarkFunction(
        6,
        HYBRID,
        "Hybrid Function 2",
        ("schaffer_f6", "hgbat", "rosenbrock", "schwefel"),
        fractions=(0.2, 0.2, 0.3, 0.3),
    ),
    7: BenchmarkFunction(
        7,
        HYBRID,
        "Hybrid Function 3",
        ("schaffer_f6", "hgbat", "rosenbrock", "schwefel", "elliptic"),
        fractions=(0.1, 0.2, 0.2, 0.2, 0.3),
    ),
    8: BenchmarkFunction(
        8,
        COMPOSITION,
        "Composition Function 1",
        ("rastrigin", "griewank", "schwefel"),
        sigma=(10.0, 20.0, 30.0),
        lam=(1.0, 10.0, 1.0),
        bias=(0.0, 100.0, 200.0),
    ),
    9: BenchmarkFunction(
        9,
        COMPOSITION,
        "Composition Function 2",
        ("ackley", "elliptic", "griewank", "rastrigin"),
        sigma=(10.0, 20.0, 30.0, 40.0),
        lam=(10.0, 1e-6, 10.0, 1.0),
        bias=(0.0, 100.0, 200.0, 300.0),
    ),
    10: BenchmarkFunction(
        10,
        COMPOSITION,
        "Composition Function 3",
        ("rastrigin", "happycat", "ackley", "discus", "rosenbrock"),
        sigma=(10.0, 20.0, 30.0, 40.0, 50.0),
        lam=(10.0, 1.0, 10.0, 1e-6, 1.0),
        bias=(0.0, 100.0, 200.0, 300.0, 400.0),
    ),
}


def hybrid_chunk_sizes(fractions, dim: int) -> list[int]:
    """Component dimensions: ceil(p_i * dim) for all but the last, capped to fit."""
    sizes = []
    left = dim
    for p in fractions[:-1]:
        k = min(int(math.ceil(p * dim)), left)
        sizes.append(k)
        left -= k
    sizes.append(left)
    return sizes


# ------------------------------------------------------------------ tasks and instances


@dataclass(frozen=True)
class TaskSpec:
    categories: tuple[str, ...]
    dim: int = 10
    lb: float = -100.0
    ub: float = 100.0
    offset_range: float = 80.0
    fe_budget: int = 50_000

    def __post_init__(self):
        cats = (self.categories,) if isinstance(self.categories, str) else tuple(self.categories)
        object.__setattr__(self, "categories", cats)
        for c in cats:
            if c not in CATEGORY_IDS:
                raise ContractError(f"unknown category {c!r}")
        if self.dim < 1 or not self.ub > self.lb:
            raise ContractError("task needs dim >= 1 and ub > lb")

    @property
    def function_ids(self) -> tuple[int, ...]:
        return tuple(i for c in self.categories for i in CATEGORY_IDS[c])

    @property
    def name(self) -> str:
        return "".join(self.categories)


@dataclass
class ProblemInstance:
    function_id: int
    offset: np.ndarray
    rotation: np.ndarray
    lb: float
    ub: float
    fe_budget: int
    permutation: np.ndarray | None = None
    extra_offsets: list = field(default_factory=list)
    extra_rotations: list = field(default_factory=list)
    evals: int = 0
    guide_evals: int = 0
    f_opt: float = 0.0

    @property
    def dim(self) -> int:
        return self.offset.shape[0]

    @property
    def function(self) -> BenchmarkFunction:
        return FUNCTIONS[self.function_id]

    def value(self, X) -> np.ndarray:
        """Objective values without touching any counter."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        fn = self.function
        if fn.category in (UNIMODAL, BASIC):
            y = (X - self.offset) @ self.rotation.T
            return BASE_FUNCTIONS[fn.components[0]](y)
        if fn.category == HYBRID:
            y = ((X - self.offset) @ self.rotation.T)[:, self.permutation]
            out = np.zeros(X.shape[0])
            start = 0
            for name, k in zip(fn.components, hybrid_chunk_sizes(fn.fractions, self.dim)):
                if k > 0:
                    out += BASE_FUNCTIONS[name](y[:, start : start + k])
                start += k
            return out
        w = self.composition_weights(X)
        out = np.zeros(X.shape[0])
        for j, name in enumerate(fn.components):
            y = (X - self._offsets[j]) @ self._rotations[j].T
            out += w[:, j] * (fn.lam[j] * BASE_FUNCTIONS[name](y) + fn.bias[j])
        return out

    @property
    def _offsets(self):
        return [self.offset, *self.extra_offsets]

    @property
    def _rotations(self):
        return [self.rotation, *self.extra_rotations]

    def composition_weights(self, X) -> np.ndarray:
        """Normalized Gaussian-decay weights, one column per component."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        fn = self.function
        d = self.dim
        S = np.stack([np.sum((X - o) ** 2, axis=1) for o in self._offsets], axis=1)
        sigma = np.asarray(fn.sigma)
        zero = S == 0.0
        with np.errstate(divide="ignore"):
            logw = -0.5 * np.log(S) - S / (2.0 * d * sigma**2)
        logw = np.where(zero, 0.0, logw)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        hit = zero.any(axis=1)
        w[hit] = zero[hit].astype(float)
        return w / w.sum(axis=1, keepdims=True)

    def evaluate(self, X) -> np.ndarray:
        """Counted evaluation of one point (d,) or a batch (n, d)."""
        X = np.asarray(X, dtype=np.float64)
        n = 1 if X.ndim == 1 else X.shape[0]
        if self.evals + n > self.fe_budget:
            raise BudgetExhausted(
                f"{self.evals} + {n} evaluations exceed budget {self.fe_budget} (function {self.function_id})"
            )
        self.evals += n
        return self.value(X)

    def evaluate_uncharged(self, X) -> np.ndarray:
        """Evaluation logged in ``guide_evals`` and not charged to the budget."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self.guide_evals += X.shape[0]
        return self.value(X)

    def reset_counters(self):
        self.evals = 0
        self.guide_evals = 0


def evaluate_objective(p: ProblemInstance, x) -> float:
    """Counted evaluation of a single point."""
    return float(p.evaluate(np.asarray(x, dtype=np.float64))[0])


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian, sign-corrected)."""
    if dim < 1:
        raise ContractError("dim must be >= 1")
    A = rng.standard_normal((dim, dim))
    Q, R = np.linalg.qr(A)
    return Q * np.sign(np.diag(R))


def sample_problem(task: TaskSpec, rng: np.random.Generator, function_id: int | None = None) -> ProblemInstance:
    ids = task.function_ids
    if function_id is None:
        function_id = ids[int(rng.integers(len(ids)))]
    elif function_id not in ids:
        raise ContractError(f"function {function_id} not part of task {task.name}")
    d, r = task.dim, task.offset_range
    p = ProblemInstance(
        function_id=function_id,
        offset=rng.uniform(-r, r, d),
        rotation=random_rotation(d, rng),
        lb=task.lb,
        ub=task.ub,
        fe_budget=task.fe_budget,
    )
    fn = FUNCTIONS[function_id]
    if fn.category == HYBRID:
        p.permutation = rng.permutation(d)
    elif fn.category == COMPOSITION:
        for _ in fn.components[1:]:
            p.extra_offsets.append(rng.uniform(-r, r, d))
            p.extra_rotations.append(random_rotation(d, rng))
    return p


def normalize_objective(f, f_worst, f_opt=0.0):
    """Linear normalization (f_worst - f) / (f_worst - f_opt); larger is better."""
    if not np.all(np.asarray(f_worst) > np.asarray(f_opt)):
        raise DegenerateRange(f"f_worst={f_worst} must exceed f_opt={f_opt}")
    return (f_worst - f) / (f_worst - f_opt)
