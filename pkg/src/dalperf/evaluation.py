"""Measurement protocol: MRE, repeated paired runs, A12 effect size and Scott-Knott ranks."""

from __future__ import annotations

import csv
import hashlib
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import Dataset, SizeLevel, split_indices
from .local import KINDS, LocalModelSpec
from .pipeline import DalConfig, dal_predict_many, dal_train


def mre(actuals: Sequence[float], predictions: Sequence[float]) -> float:
    """Mean relative error in percent."""
    a = np.asarray(actuals, dtype=float)
    p = np.asarray(predictions, dtype=float)
    if a.shape != p.shape:
        raise ValueError(f"length mismatch: {a.size} actuals vs {p.size} predictions")
    if a.size == 0:
        raise ValueError("mre needs at least one value")
    if np.any(a == 0):
        raise ValueError("relative error is undefined for an actual value of 0")
    return float(np.mean(np.abs(a - p) / a) * 100.0)


def a12(x: Sequence[float], y: Sequence[float]) -> float:
    """Vargha-Delaney A12: P(x > y) + 0.5 * P(x == y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("a12 needs non-empty samples")
    gt = (x[:, None] > y[None, :]).sum()
    eq = (x[:, None] == y[None, :]).sum()
    return float((gt + 0.5 * eq) / (x.size * y.size))


def iqr(values) -> float:
    q75, q25 = np.percentile(values, [75, 25])
    return float(q75 - q25)


# -- Scott-Knott ------------------------------------------------------------------------


def split_gain(left: np.ndarray, right: np.ndarray) -> float:
    """Expected-mean difference before vs after splitting a list in two."""
    both = np.concatenate([left, right])
    mu = both.mean()
    n = len(both)
    return len(left) / n * (left.mean() - mu) ** 2 + len(right) / n * (right.mean() - mu) ** 2


def bootstrap_differs(a: np.ndarray, b: np.ndarray, confidence: float, n_boot: int, rng) -> bool:
    """Two-sided bootstrap test of equal means (shifted-sample t statistic)."""

    def tstat(u, v):
        s = np.sqrt(u.var(ddof=1) / len(u) + v.var(ddof=1) / len(v)) if len(u) > 1 and len(v) > 1 else 0.0
        diff = u.mean() - v.mean()
        if s == 0:
            return np.inf * np.sign(diff) if diff != 0 else 0.0
        return diff / s

    observed = tstat(a, b)
    if observed == 0:
        return False
    pooled = np.concatenate([a, b]).mean()
    a0 = a - a.mean() + pooled
    b0 = b - b.mean() + pooled
    hits = 0
    for _ in range(n_boot):
        ra = a0[rng.integers(0, len(a0), len(a0))]
        rb = b0[rng.integers(0, len(b0), len(b0))]
        if abs(tstat(ra, rb)) >= abs(observed):
            hits += 1
    return hits / n_boot < 1.0 - confidence


@dataclass(frozen=True)
class RankEntry:
    rank: int
    group: int
    median: float
    iqr: float
    mean: float


@dataclass(frozen=True)
class ScottKnottRanking:
    entries: dict[str, RankEntry]

    def rank_of(self, name: str) -> int:
        return self.entries[name].rank

    @property
    def ranks(self) -> dict[str, int]:
        return {k: v.rank for k, v in self.entries.items()}

    @property
    def n_groups(self) -> int:
        return len({e.group for e in self.entries.values()})


def scott_knott(
    samples: Mapping[str, Sequence[float]],
    confidence: float = 0.99,
    effect_threshold: float = 0.6,
    n_boot: int = 1000,
    seed: int = 0,
) -> ScottKnottRanking:
    """Rank treatments (lower is better) by recursive significant splitting.

    Treatments are ordered by median; a split is kept only if the bootstrap test
    rejects equal means and the worse side's A12 over the better side reaches
    ``effect_threshold``.  Final groups are ranked by ascending mean.
    """
    data = {k: np.asarray(v, dtype=float) for k, v in samples.items()}
    if not data:
        return ScottKnottRanking({})
    # content-only sort key keeps ranks independent of names and input order
    order = sorted(data, key=lambda k: (np.median(data[k]), data[k].mean(), tuple(np.sort(data[k]))))
    rng = np.random.default_rng(seed)
    groups: list[list[str]] = []

    def recurse(names: list[str]) -> None:
        if len(names) < 2:
            groups.append(names)
            return
        best = None
        for cut in range(1, len(names)):
            left = np.concatenate([data[k] for k in names[:cut]])
            right = np.concatenate([data[k] for k in names[cut:]])
            gain = split_gain(left, right)
            if best is None or gain > best[0]:
                best = (gain, cut, left, right)
        _, cut, left, right = best
        if a12(right, left) >= effect_threshold and bootstrap_differs(left, right, confidence, n_boot, rng):
            recurse(names[:cut])
            recurse(names[cut:])
        else:
            groups.append(names)

    recurse(order)
    group_means = [np.concatenate([data[k] for k in g]).mean() for g in groups]
    entries = {}
    for rank, gi in enumerate(sorted(range(len(groups)), key=lambda i: (group_means[i], i)), start=1):
        for name in groups[gi]:
            v = data[name]
            entries[name] = RankEntry(rank, gi, float(np.median(v)), iqr(v), float(v.mean()))
    return ScottKnottRanking(entries)


# -- experiments ------------------------------------------------------------------------


_APPROACH = re.compile(r"^\s*(?:dal\(\s*(\d+)\s*,\s*(\w+)\s*\)|global\(\s*(\w+)\s*\))\s*$")
APPROACH_GRAMMAR = "dal(<depth>,<local>) | global(<local>)  with local in {" + ", ".join(KINDS) + "}"


@dataclass(frozen=True)
class ApproachSpec:
    name: str
    depth: int
    local: LocalModelSpec

    @property
    def is_global(self) -> bool:
        return self.depth == 0


def parse_approach(text: str, overrides: Optional[Mapping[str, dict]] = None) -> ApproachSpec:
    m = _APPROACH.match(text)
    if not m:
        raise ValueError(f"cannot parse approach {text!r}; expected {APPROACH_GRAMMAR}")
    if m.group(3):
        depth, kind = 0, m.group(3)
        name = f"global({kind})"
    else:
        depth, kind = int(m.group(1)), m.group(2)
        name = f"dal({depth},{kind})"
    if kind not in KINDS:
        raise ValueError(f"unknown local model {kind!r}; expected {APPROACH_GRAMMAR}")
    return ApproachSpec(name, depth, LocalModelSpec(kind, overrides=dict((overrides or {}).get(kind, {}))))


def split_approaches(text: str) -> list[str]:
    """Split a comma-separated approach list, respecting parentheses."""
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur)
    return [p.strip() for p in parts if p.strip()]


def run_seed(base_seed: int, level: int, run: int) -> int:
    return int(np.random.SeedSequence([base_seed, level, run]).generate_state(1, np.uint32)[0])


def _split_hash(train_idx: np.ndarray) -> str:
    return hashlib.sha1(np.asarray(train_idx, dtype=np.int64).tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class Cell:
    approach: str
    size_level: int
    train_size: int
    run: int
    seed: int
    mre_percent: float
    wall_seconds: float
    status: str = "ok"
    error: str = ""
    split_hash: str = ""
    min_division_size: int = 0
    n_divisions: int = 0
    deepest_depth: int = 0


@dataclass
class ExperimentResult:
    cells: list[Cell] = field(default_factory=list)

    def approaches(self) -> list[str]:
        return list(dict.fromkeys(c.approach for c in self.cells))

    def size_levels(self) -> list[int]:
        return sorted({c.size_level for c in self.cells})

    def mres(self, approach: str, size_level: int) -> list[float]:
        cells = [c for c in self.cells if c.approach == approach and c.size_level == size_level and c.status == "ok"]
        return [c.mre_percent for c in sorted(cells, key=lambda c: c.run)]

    def failures(self) -> list[Cell]:
        return [c for c in self.cells if c.status != "ok"]


def _run_cell(dataset: Dataset, approach: ApproachSpec, size: SizeLevel, run: int, seed: int, config: DalConfig) -> Cell:
    train_idx, test_idx = split_indices(len(dataset), size.resolved_count, seed)
    train, test = dataset.subset(train_idx), dataset.subset(test_idx)
    t0 = time.perf_counter()
    try:
        cfg = replace(config, depth=approach.depth, local=approach.local, seed=seed)
        model = dal_train(train, cfg)
        _, pred = dal_predict_many(model, test.X)
        value = mre(test.y, pred)
    except Exception as exc:  # recorded per cell, never retried
        return Cell(approach.name, size.level, size.resolved_count, run, seed, float("nan"),
                    time.perf_counter() - t0, "error", f"{type(exc).__name__}: {exc}", _split_hash(train_idx))
    return Cell(
        approach.name, size.level, size.resolved_count, run, seed, value, time.perf_counter() - t0,
        split_hash=_split_hash(train_idx),
        min_division_size=min(d.size for d in model.divisions),
        n_divisions=len(model.divisions),
        deepest_depth=model.tree.depth,
    )


def run_experiment(
    dataset: Dataset,
    approaches: Sequence[ApproachSpec],
    sizes: Sequence[SizeLevel],
    repeats: int,
    base_seed: int,
    config: Optional[DalConfig] = None,
    jobs: int = 1,
) -> ExperimentResult:
    """Every approach sees the same train/test split within a (size, run) cell."""
    config = config or DalConfig()
    tasks = [
        (a, s, r, run_seed(base_seed, s.level, r))
        for s in sizes
        for r in range(repeats)
        for a in approaches
    ]

    def go(task):
        a, s, r, seed = task
        return _run_cell(dataset, a, s, r, seed, config)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(go, tasks))
    else:
        cells = [go(t) for t in tasks]
    order = {a.name: i for i, a in enumerate(approaches)}
    cells.sort(key=lambda c: (c.size_level, order[c.approach], c.run))
    return ExperimentResult(cells)


def rank_experiment(result: ExperimentResult, seed: int = 0) -> dict[int, ScottKnottRanking]:
    out = {}
    for level in result.size_levels():
        samples = {a: result.mres(a, level) for a in result.approaches()}
        samples = {a: v for a, v in samples.items() if len(v) >= 2}
        if samples:
            out[level] = scott_knott(samples, seed=seed)
    return out


@dataclass(frozen=True)
class SweepPoint:
    depth: int
    median_mre: float
    iqr: float
    mean_min_division_size: float
    flagged: bool  # tree was shallower than the requested depth in some run
    mres: tuple[float, ...] = ()


def depth_sweep(
    dataset: Dataset,
    depths: Sequence[int],
    local: LocalModelSpec,
    train_fraction: float = 0.8,
    repeats: int = 30,
    base_seed: int = 0,
    config: Optional[DalConfig] = None,
) -> dict[int, SweepPoint]:
    """MRE per depth over shared seeded splits, plus the smallest division's size."""
    if not 0 < train_fraction < 1:
        raise ValueError("train fraction must lie in (0, 1)")
    if any(d < 0 for d in depths):
        raise ValueError("depths must be >= 0")
    config = config or DalConfig()
    count = int(round(train_fraction * len(dataset)))
    size = SizeLevel(1, count)
    out = {}
    for d in depths:
        approach = ApproachSpec(f"dal({d},{local.kind})", d, local)
        cells = [_run_cell(dataset, approach, size, r, run_seed(base_seed, 0, r), config) for r in range(repeats)]
        bad = [c for c in cells if c.status != "ok"]
        if bad:
            raise RuntimeError(f"depth {d}, run {bad[0].run}: {bad[0].error}")
        values = [c.mre_percent for c in cells]
        out[d] = SweepPoint(
            d,
            float(np.median(values)),
            iqr(values),
            float(np.mean([c.min_division_size for c in cells])),
            any(c.deepest_depth < d for c in cells),
            tuple(values),
        )
    return out


def recommend_depth(sweep: Mapping[int, SweepPoint]) -> int:
    """Best median MRE, scanning upward from d=1 (d=0 only if it is all there is)."""
    candidates = [d for d in sorted(sweep) if d >= 1] or sorted(sweep)
    return min(candidates, key=lambda d: (sweep[d].median_mre, d))


# -- CSV export -------------------------------------------------------------------------

RESULT_COLUMNS = ["approach", "size_level", "run", "seed", "mre_percent", "wall_seconds", "status"]
RANKING_COLUMNS = ["size_level", "approach", "rank", "median", "iqr"]
SWEEP_COLUMNS = ["d", "median_mre", "iqr", "mean_min_division_size"]


def write_results_csv(result: ExperimentResult, path: str | Path, include_timing: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS + ["error"])
        for c in result.cells:
            wall = repr(c.wall_seconds) if include_timing else ""
            w.writerow([c.approach, c.size_level, c.run, c.seed, repr(c.mre_percent), wall, c.status, c.error])


def write_ranking_csv(rankings: Mapping[int, ScottKnottRanking], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RANKING_COLUMNS)
        for level, ranking in sorted(rankings.items()):
            for name, e in sorted(ranking.entries.items(), key=lambda kv: (kv[1].rank, kv[0])):
                w.writerow([level, name, e.rank, repr(e.median), repr(e.iqr)])


def write_sweep_csv(sweep: Mapping[int, SweepPoint], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for d, p in sorted(sweep.items()):
            w.writerow([d, repr(p.median_mre), repr(p.iqr), repr(p.mean_min_division_size)])


def format_table(result: ExperimentResult, rankings: Mapping[int, ScottKnottRanking]) -> str:
    """Median (IQR) MRE per approach and size with Scott-Knott ranks, 2 decimals."""
    levels = result.size_levels()
    sizes = {c.size_level: c.train_size for c in result.cells}
    header = ["Approach"] + [f"Size {lv} (n={sizes[lv]})" for lv in levels]
    rows = []
    for a in result.approaches():
        row = [a]
        for lv in levels:
            vals = result.mres(a, lv)
            if not vals:
                row.append("error")
                continue
            cell = f"{np.median(vals):.2f} ({iqr(vals):.2f})"
            ranking = rankings.get(lv)
            if ranking is not None and a in ranking.entries:
                cell = f"r={ranking.rank_of(a)} {cell}"
            row.append(cell)
        rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
