"""Layered q-pass branching programs and their two modification stages.

Layers are numbered globally: pass j (1-based) layer i (0..T) is global layer
``(j-1)*T + i``, so a q-pass program has ``q*T + 1`` layers and layer 0 of
pass j is the last layer of pass j-1. Each non-final vertex has a successor
for every label (a, b): ``succ[g][v, a, bi]`` with ``bi = 0`` for b = +1 and
``bi = 1`` for b = -1. The start vertex v0 is vertex 0 of layer 0.

After ``modify_remember_pass`` a pass-j vertex at layer i >= 1 carries
metadata ``copy`` (the pass-(j-1) vertex at layer i of the same run),
``start`` (the pass-j start vertex it left from) and ``base`` (the vertex of
the unmodified program it simulates). After ``modify_attach_counters`` it also
carries ``ch`` (cnt_high) and ``cb`` (cnt_bias).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Hashable, Optional, Sequence, Union

import numpy as np

from .learning_matrix import LearningMatrix, make_rng

META_FIELDS = ("copy", "start", "base", "ch", "cb")


class ProgramError(ValueError):
    """Malformed program or an operation applied out of order."""


class StateOverflow(RuntimeError):
    """Materialisation exceeded the state cap."""


def bit_index(b: int) -> int:
    return 0 if b == 1 else 1


@dataclass(eq=False)
class BranchingProgram:
    num_a: int
    num_x: int
    q: int
    T: int
    widths: list
    succ: list  # succ[g]: int array (widths[g], num_a, 2)
    outputs: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)  # field -> {global layer: array}
    remembered: frozenset = frozenset()
    countered: frozenset = frozenset()
    saturations: dict = field(default_factory=dict)  # pass -> clamped counter updates

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        self.succ = [np.asarray(s, dtype=np.int64) for s in self.succ]
        if self.outputs is not None:
            self.outputs = np.asarray(self.outputs, dtype=np.int64)
        for f in META_FIELDS:
            self.meta.setdefault(f, {})
        self.validate()

    # layout
    @property
    def num_layers(self) -> int:
        return self.q * self.T + 1

    @property
    def built_layers(self) -> int:
        return len(self.widths)

    @property
    def complete(self) -> bool:
        return self.built_layers == self.num_layers and self.outputs is not None

    def g(self, j: int, i: int) -> int:
        return (j - 1) * self.T + i

    @property
    def width(self) -> int:
        return max(self.widths)

    def validate(self):
        if self.q < 1 or self.T < 0:
            raise ProgramError("need q >= 1 and T >= 0")
        if not (1 <= self.built_layers <= self.num_layers):
            raise ProgramError("layer count out of range")
        if len(self.succ) != self.built_layers - 1:
            raise ProgramError("need one successor table per non-final built layer")
        for gl, s in enumerate(self.succ):
            if s.shape != (self.widths[gl], self.num_a, 2):
                raise ProgramError(f"successor table {gl} has shape {s.shape}")
            if s.size and (s.min() < 0 or s.max() >= self.widths[gl + 1]):
                raise ProgramError(f"successor out of range at layer {gl}")
        if self.outputs is not None:
            if self.built_layers != self.num_layers:
                raise ProgramError("outputs on a partial program")
            if self.outputs.shape != (self.widths[-1],):
                raise ProgramError("one output per final vertex")
            if self.outputs.size and (self.outputs.min() < 0 or self.outputs.max() >= self.num_x):
                raise ProgramError("output is not a concept index")

    # views used by the posterior engine
    def start_view(self, j: int, i: int) -> np.ndarray:
        """Pass-j start vertex remembered by each vertex of pass-j layer i."""
        gl = self.g(j, i)
        if j == 1:
            return np.zeros(self.widths[gl], dtype=np.int64)
        if i == 0:
            return np.arange(self.widths[gl], dtype=np.int64)
        self._need_remembered(j)
        return self.meta["start"][gl]

    def copy_view(self, j: int, i: int) -> np.ndarray:
        """Pass-(j-1) vertex at layer i remembered by each pass-j layer-i vertex."""
        if j < 2:
            raise ProgramError("pass 1 has no previous pass")
        self._need_remembered(j)
        gl = self.g(j, i)
        if i == 0:
            if j == 2:
                return np.zeros(self.widths[gl], dtype=np.int64)
            return self.meta["start"][gl]  # pass-(j-1) start of a final pass-(j-1) vertex
        return self.meta["copy"][gl]

    def counter_view(self, j: int, i: int):
        """(cnt_high, cnt_bias) arrays for pass-j layer i, or None without counters."""
        if j not in self.countered:
            return None
        w = self.widths[self.g(j, i)]
        if i == 0:
            z = np.zeros(w, dtype=np.int64)
            return z, z.copy()
        gl = self.g(j, i)
        return self.meta["ch"][gl], self.meta["cb"][gl]

    def consistent_final(self, t: int) -> np.ndarray:
        """For final vertices s of pass t: the remembered history chain agrees,
        i.e. copy(s) == start(s) recursively down to pass 1."""
        gl = self.g(t, self.T)
        w = self.widths[gl]
        if t == 1:
            return np.ones(w, dtype=bool)
        self._need_remembered(t)
        start = self.meta["start"][gl]
        ok = self.meta["copy"][gl] == start
        return ok & self.consistent_final(t - 1)[start]

    def _need_remembered(self, j: int):
        if j >= 2 and j not in self.remembered:
            raise ProgramError(f"pass {j} has not been modified to remember pass {j - 1}")

    def copy(self) -> "BranchingProgram":
        return BranchingProgram(
            self.num_a, self.num_x, self.q, self.T, list(self.widths),
            [s.copy() for s in self.succ],
            None if self.outputs is None else self.outputs.copy(),
            {f: dict(d) for f, d in self.meta.items()},
            self.remembered, self.countered, dict(self.saturations),
        )


@dataclass(frozen=True)
class Trajectory:
    vertices: tuple
    output: int


def _labels(m: LearningMatrix, a, x):
    return m.label_bits[a, x]


def run_path(p: BranchingProgram, m: LearningMatrix, x: int, samples: Sequence[int]) -> Trajectory:
    """Untruncated computational path; every pass replays ``samples`` in order."""
    if not p.complete:
        raise ProgramError("program is not complete")
    if len(samples) != p.T:
        raise ValueError(f"need exactly T={p.T} samples")
    v = 0
    path = [0]
    for gl in range(p.num_layers - 1):
        a = samples[gl % p.T]
        v = int(p.succ[gl][v, a, _labels(m, a, x)])
        path.append(v)
    return Trajectory(tuple(path), int(p.outputs[v]))


def run_batch(p: BranchingProgram, m: LearningMatrix, xs: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Final vertices for a batch; ``samples`` has shape (batch, T)."""
    v = np.zeros(len(xs), dtype=np.int64)
    for gl in range(p.built_layers - 1):
        a = samples[:, gl % p.T]
        v = p.succ[gl][v, a, m.label_bits[a, xs]]
    return v


def run_batch_outputs(p: BranchingProgram, m: LearningMatrix, xs, samples) -> np.ndarray:
    return p.outputs[run_batch(p, m, np.asarray(xs), np.asarray(samples))]


def all_inputs(m: LearningMatrix, T: int):
    """Every (x, a_1..a_T) once, as arrays (xs, samples)."""
    grids = np.meshgrid(np.arange(m.num_x), *[np.arange(m.num_a)] * T, indexing="ij")
    flat = [g.ravel() for g in grids]
    xs = flat[0].astype(np.int64)
    samples = np.stack(flat[1:], axis=1).astype(np.int64) if T else np.zeros((len(xs), 0), dtype=np.int64)
    return xs, samples


def same_function(p1: BranchingProgram, p2: BranchingProgram, m: LearningMatrix) -> bool:
    """Exhaustive comparison of input-to-output behaviour."""
    xs, samples = all_inputs(m, p1.T)
    return bool(np.array_equal(run_batch_outputs(p1, m, xs, samples), run_batch_outputs(p2, m, xs, samples)))


# ---------------------------------------------------------------- builders

def constant_program(num_a: int, num_x: int, T: int, q: int = 1, guess: int = 0) -> BranchingProgram:
    n = q * T + 1
    return BranchingProgram(num_a, num_x, q, T, [1] * n,
                            [np.zeros((1, num_a, 2), dtype=np.int64) for _ in range(n - 1)],
                            np.array([guess]))


def random_program(rng: np.random.Generator, num_a: int, num_x: int, T: int, q: int = 1,
                   width: int = 3) -> BranchingProgram:
    """Random layered program with v0 alone in layer 0 and widths in 1..width."""
    n = q * T + 1
    widths = [1] + [int(rng.integers(1, width + 1)) for _ in range(n - 1)]
    succ = [rng.integers(0, widths[gl + 1], size=(widths[gl], num_a, 2)) for gl in range(n - 1)]
    outputs = rng.integers(0, num_x, size=widths[-1])
    return BranchingProgram(num_a, num_x, q, T, widths, succ, outputs)


# ---------------------------------------------------------------- stage 1

def _check_order(p: BranchingProgram, j: int):
    if not (2 <= j <= p.q):
        raise ProgramError(f"pass {j} out of range 2..{p.q}")
    if not p.complete:
        raise ProgramError("modifications need a complete program")
    missing = [t for t in range(2, j) if t not in p.remembered]
    if missing:
        raise ProgramError(f"passes {missing} must be modified first")
    later = [t for t in p.remembered | p.countered if t > j]
    if later:
        raise ProgramError("later passes are already modified")


def _decode(keys: np.ndarray, radices: Sequence[int]) -> list:
    out = []
    for r in reversed(radices):
        out.append(keys % r)
        keys = keys // r
    out.append(keys)
    return out[::-1]


def modify_remember_pass(p: BranchingProgram, j: int) -> BranchingProgram:
    """Make pass j carry (copy of pass j-1, pass-j start, original vertex)."""
    _check_order(p, j)
    if j in p.remembered:
        raise ProgramError(f"pass {j} already remembers its previous pass")
    T = p.T
    g0 = p.g(j, 0)
    gp = p.g(j - 1, 0)
    out = p.copy()
    w0 = p.widths[g0]
    S = np.arange(w0, dtype=np.int64)
    C = p.meta["start"][g0].copy() if j > 2 else np.zeros(w0, dtype=np.int64)
    B = S.copy()
    for i in range(T):
        gl = g0 + i
        C2 = p.succ[gp + i][C]
        B2 = p.succ[gl][B]
        S2 = np.broadcast_to(S[:, None, None], C2.shape)
        wc, wb = p.widths[gp + i + 1], p.widths[gl + 1]
        keys = (S2 * wc + C2) * wb + B2
        uniq, inv = np.unique(keys.ravel(), return_inverse=True)
        out.succ[gl] = inv.reshape(C2.shape).astype(np.int64)
        S, C, B = _decode(uniq, (wc, wb))
        out.widths[gl + 1] = len(uniq)
        out.meta["copy"][gl + 1] = C
        out.meta["start"][gl + 1] = S
        out.meta["base"][gl + 1] = B
    gT = g0 + T
    if j < p.q:
        out.succ[gT] = p.succ[gT][B]
    else:
        out.outputs = p.outputs[B]
    out.remembered = p.remembered | {j}
    out.validate()
    return out


# ---------------------------------------------------------------- stage 2

CounterHook = Callable[[BranchingProgram, int, int], tuple]


def counter_limit(num_x: int) -> int:
    return int(math.floor(math.log2(num_x))) if num_x > 1 else 0


def _partial(p: BranchingProgram, upto: int) -> BranchingProgram:
    """Layers 0..upto of ``p`` as a partial program."""
    meta = {f: {gl: arr for gl, arr in d.items() if gl <= upto} for f, d in p.meta.items()}
    return BranchingProgram(p.num_a, p.num_x, p.q, p.T, p.widths[:upto + 1], p.succ[:upto],
                            None, meta, p.remembered, p.countered)


def modify_attach_counters(p: BranchingProgram, j: int, hook: CounterHook,
                           limit: Optional[int] = None) -> BranchingProgram:
    """Attach (cnt_high, cnt_bias) to pass j.

    ``hook(partial, j, i)`` receives the program built through pass-j layer i
    and returns integer arrays ``(dh, db)`` of shape (width, |A|, 2): the
    increments for every vertex of that layer and every edge label. Counters
    saturate at ``limit`` (default floor(log2 |X|)).
    """
    _check_order(p, j)
    if j not in p.remembered:
        raise ProgramError(f"pass {j} must remember pass {j - 1} before counters are attached")
    if j in p.countered:
        raise ProgramError(f"pass {j} already has counters")
    L = counter_limit(p.num_x) if limit is None else int(limit)
    T = p.T
    g0 = p.g(j, 0)
    build = _partial(p, g0)
    build.countered = p.countered | {j}
    w0 = p.widths[g0]
    U = np.arange(w0, dtype=np.int64)
    CH = np.zeros(w0, dtype=np.int64)
    CB = np.zeros(w0, dtype=np.int64)
    saturations = 0
    for i in range(T):
        gl = g0 + i
        w = len(U)
        dh, db = hook(build, j, i)
        dh = np.asarray(dh)
        db = np.asarray(db)
        for name, arr in (("dh", dh), ("db", db)):
            if arr.shape != (w, p.num_a, 2):
                raise ProgramError(f"hook returned {name} of shape {arr.shape}, expected {(w, p.num_a, 2)}")
            if arr.dtype.kind not in "iub" or (arr.size and arr.min() < 0):
                raise ProgramError(f"hook returned invalid {name} increments")
        U2 = p.succ[gl][U]
        rawh = CH[:, None, None] + dh
        rawb = CB[:, None, None] + db
        saturations += int(np.count_nonzero(rawb > L) + np.count_nonzero(rawh > L))
        CH2 = np.minimum(rawh, L)
        CB2 = np.minimum(rawb, L)
        keys = (U2 * (L + 1) + CH2) * (L + 1) + CB2
        uniq, inv = np.unique(keys.ravel(), return_inverse=True)
        U, CH, CB = _decode(uniq, (L + 1, L + 1))
        build.succ.append(inv.reshape(U2.shape).astype(np.int64))
        build.widths.append(len(uniq))
        for f in ("copy", "start", "base"):
            build.meta[f][gl + 1] = p.meta[f][gl + 1][U]
        build.meta["ch"][gl + 1] = CH
        build.meta["cb"][gl + 1] = CB
        build.validate()
    gT = g0 + T
    out = build
    if j < p.q:
        out.succ.append(p.succ[gT][U])
        out.widths.extend(p.widths[gT + 1:])
        out.succ.extend(p.succ[gT + 1:])
        out.outputs = p.outputs
    else:
        out.outputs = p.outputs[U]
    out.saturations = {**p.saturations, j: saturations}
    out.validate()
    return out


def zero_hook(partial: BranchingProgram, j: int, i: int):
    w = partial.widths[-1]
    z = np.zeros((w, partial.num_a, 2), dtype=np.int64)
    return z, z.copy()


def modify_all(p: BranchingProgram, hook: Optional[CounterHook] = None) -> BranchingProgram:
    """Stage 1 then stage 2 for passes 2..q in order (stage 2 only with a hook)."""
    for j in range(2, p.q + 1):
        p = modify_remember_pass(p, j)
        if hook is not None:
            p = modify_attach_counters(p, j, hook)
    return p


# ---------------------------------------------------------------- implicit learners

@dataclass
class ImplicitLearner:
    """A learner given by state-update rules instead of an explicit graph.

    ``step(state, j, i, a, b)`` reads sample i (0-based) of pass j;
    ``between(state, j)`` runs before pass j >= 2 starts.
    """
    name: str
    passes: int
    memory_bits: int
    init: Callable[[], Hashable]
    step: Callable
    finish: Callable
    encode: Callable
    between: Optional[Callable] = None

    def run(self, m: LearningMatrix, x: int, samples: Sequence[int], check_memory: bool = False) -> int:
        s = self.init()
        for j in range(1, self.passes + 1):
            if j > 1 and self.between is not None:
                s = self.between(s, j)
            for i, a in enumerate(samples):
                s = self.step(s, j, i, int(a), m.entry(int(a), x))
                if check_memory and int(self.encode(s)).bit_length() > self.memory_bits:
                    raise AssertionError(f"{self.name}: state exceeds {self.memory_bits} bits")
        return self.finish(s)


def reachable_states(l: ImplicitLearner, m: LearningMatrix, T: int, cap: int = 100_000) -> BranchingProgram:
    """Breadth-first materialisation; states are numbered in discovery order."""
    layer = [l.init()]
    widths = [1]
    succ = []
    total = 1
    for gl in range(l.passes * T):
        j, i = gl // T + 1, gl % T
        index: dict = {}
        nxt = []
        table = np.zeros((len(layer), m.num_a, 2), dtype=np.int64)
        for v, s in enumerate(layer):
            if i == 0 and j > 1 and l.between is not None:
                s = l.between(s, j)
            for a in range(m.num_a):
                for bi, b in ((0, 1), (1, -1)):
                    t = l.step(s, j, i, a, b)
                    if int(l.encode(t)).bit_length() > l.memory_bits:
                        raise AssertionError(f"{l.name}: state exceeds declared memory")
                    k = index.get(t)
                    if k is None:
                        k = index[t] = len(nxt)
                        nxt.append(t)
                        total += 1
                        if total > cap:
                            raise StateOverflow(f"more than {cap} states")
                    table[v, a, bi] = k
        succ.append(table)
        widths.append(len(nxt))
        layer = nxt
    outputs = np.array([l.finish(s) for s in layer], dtype=np.int64)
    return BranchingProgram(m.num_a, m.num_x, l.passes, T, widths, succ, outputs)


# ---------------------------------------------------------------- Monte Carlo

@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    halfwidth: float
    successes: int
    trials: int

    @property
    def interval(self) -> tuple:
        return (self.estimate - self.halfwidth, self.estimate + self.halfwidth)


def _estimate(successes: int, trials: int) -> MCEstimate:
    p = successes / trials
    return MCEstimate(p, 1.96 * math.sqrt(max(p * (1 - p), 0.0) / trials), successes, trials)


def success_probability_mc(p: Union[BranchingProgram, ImplicitLearner], m: LearningMatrix, trials: int,
                           seed, T: Optional[int] = None) -> MCEstimate:
    """x and every a_i drawn uniformly per trial; 95% normal interval."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = make_rng(seed)
    if isinstance(p, BranchingProgram):
        T = p.T
    elif T is None:
        raise ValueError("an implicit learner needs T")
    xs = rng.integers(0, m.num_x, size=trials)
    samples = rng.integers(0, m.num_a, size=(trials, T))
    if isinstance(p, BranchingProgram):
        hits = int(np.count_nonzero(run_batch_outputs(p, m, xs, samples) == xs))
    else:
        hits = sum(int(p.run(m, int(x), row) == x) for x, row in zip(xs, samples))
    return _estimate(hits, trials)


# ---------------------------------------------------------------- BP v1 text format

def dumps(p: BranchingProgram) -> str:
    lines = [f"BP v1 q={p.q} T={p.T} num_a={p.num_a} num_x={p.num_x}",
             "widths " + " ".join(map(str, p.widths)),
             "remembered " + " ".join(map(str, sorted(p.remembered))),
             "countered " + " ".join(map(str, sorted(p.countered)))]
    for gl, s in enumerate(p.succ):
        for v in range(s.shape[0]):
            lines.append(f"succ {gl} {v} " + " ".join(map(str, s[v].ravel())))
    if p.outputs is not None:
        lines.append("outputs " + " ".join(map(str, p.outputs)))
    for f in META_FIELDS:
        for gl in sorted(p.meta[f]):
            lines.append(f"meta {f} {gl} " + " ".join(map(str, p.meta[f][gl])))
    return "\n".join(lines) + "\n"


def loads(text: str) -> BranchingProgram:
    lines = text.splitlines()
    head = lines[0].split()
    if head[:2] != ["BP", "v1"]:
        raise ProgramError("not a BP v1 program")
    kv = {k: int(v) for k, v in (t.split("=") for t in head[2:])}
    widths, remembered, countered, outputs = [], (), (), None
    succ: dict = {}
    meta: dict = {f: {} for f in META_FIELDS}
    for ln in lines[1:]:
        tok = ln.split()
        if not tok:
            continue
        if tok[0] == "widths":
            widths = [int(t) for t in tok[1:]]
        elif tok[0] == "remembered":
            remembered = tuple(int(t) for t in tok[1:])
        elif tok[0] == "countered":
            countered = tuple(int(t) for t in tok[1:])
        elif tok[0] == "succ":
            gl, v = int(tok[1]), int(tok[2])
            succ.setdefault(gl, {})[v] = [int(t) for t in tok[3:]]
        elif tok[0] == "outputs":
            outputs = np.array([int(t) for t in tok[1:]], dtype=np.int64)
        elif tok[0] == "meta":
            meta[tok[1]][int(tok[2])] = np.array([int(t) for t in tok[3:]], dtype=np.int64)
        else:
            raise ProgramError(f"unknown record {tok[0]!r}")
    tables = []
    for gl in range(len(widths) - 1):
        rows = succ.get(gl, {})
        tables.append(np.array([rows[v] for v in range(widths[gl])], dtype=np.int64).reshape(widths[gl], kv["num_a"], 2))
    return BranchingProgram(kv["num_a"], kv["num_x"], kv["q"], kv["T"], widths, tables, outputs, meta,
                            frozenset(remembered), frozenset(countered))


def store(p: BranchingProgram, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps(p))


def load(path: Union[str, Path]) -> BranchingProgram:
    return loads(Path(path).read_text())


def programs_equal(p1: BranchingProgram, p2: BranchingProgram) -> bool:
    if (p1.num_a, p1.num_x, p1.q, p1.T, p1.widths) != (p2.num_a, p2.num_x, p2.q, p2.T, p2.widths):
        return False
    if p1.remembered != p2.remembered or p1.countered != p2.countered:
        return False
    if any(not np.array_equal(a, b) for a, b in zip(p1.succ, p2.succ)):
        return False
    if (p1.outputs is None) != (p2.outputs is None) or (p1.outputs is not None and not np.array_equal(p1.outputs, p2.outputs)):
        return False
    for f in META_FIELDS:
        if p1.meta[f].keys() != p2.meta[f].keys():
            return False
        if any(not np.array_equal(p1.meta[f][k], p2.meta[f][k]) for k in p1.meta[f]):
            return False
    return True
