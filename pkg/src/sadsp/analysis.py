"""Post-hoc interpretability: accumulated attention maps, feasibility
frequency tables, and prototype-distance disentanglement statistics.

The accumulated attention map keeps two panels. The row panel holds
state-conditioned object attention: the row of a sample's state absorbs
that sample's object-attention vector and is softmaxed in place. The
column panel holds object-conditioned state attention: the column of a
sample's object absorbs the state-attention vector. Keeping the panels
separate is what lets every touched row and every touched column sum to
one; a single matrix cannot satisfy both after interleaved updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import ndkit as nd
from .data import Dataset
from .errors import ContractError
from .model import ModelParams, batch_tensors, forward

ROW_NORM = "state_conditioned_rows"
COL_NORM = "object_conditioned_cols"
RAW = "raw"
_VIEWS = (ROW_NORM, COL_NORM, RAW)

INTERLEAVED = "interleaved"   # softmax after every sample's update
RAW_FINAL = "raw_final"       # accumulate raw, softmax once at the end
_MODES = (INTERLEAVED, RAW_FINAL)


def _softmax_inplace(vec) -> None:
    m = max(vec)
    exps = [math.exp(v - m) for v in vec]
    total = sum(exps)
    for i, e in enumerate(exps):
        vec[i] = e / total


@dataclass
class FeasibilityMatrix:
    num_states: int
    num_objects: int
    mode: str
    row_panel: list          # |S| rows of |O| floats
    col_panel: list          # same shape; updates run down columns
    raw_sums: list           # both updates added, never normalized
    touched_rows: set = field(default_factory=set)
    touched_cols: set = field(default_factory=set)

    def view(self, normalization: str):
        if normalization == ROW_NORM:
            return [row[:] for row in self.row_panel]
        if normalization == COL_NORM:
            return [row[:] for row in self.col_panel]
        if normalization == RAW:
            return [row[:] for row in self.raw_sums]
        raise ContractError(f"unknown normalization {normalization!r}; expected {_VIEWS}")


def min_max_rows(grid):
    """Per-row min-max rescale to [0, 1]; constant rows map to zeros."""
    out = []
    for row in grid:
        lo, hi = min(row), max(row)
        span = hi - lo
        out.append([0.0 if span == 0.0 else (v - lo) / span for v in row])
    return out


def min_max_cols(grid):
    if not grid:
        return []
    cols = list(zip(*grid))
    return [list(r) for r in zip(*min_max_rows([list(c) for c in cols]))]


def _attention_rows(params: ModelParams, samples, batch_size: int):
    """Yield (state, object, a_s row, a_o row) per sample, dataset order."""
    with nd.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            x, s_true, o_true = batch_tensors(chunk)
            b = forward(params, x)
            n_s, n_o = b.a_s.shape[1], b.a_o.shape[1]
            for r in range(len(chunk)):
                a_s = list(b.a_s.values[r * n_s:(r + 1) * n_s])
                a_o = list(b.a_o.values[r * n_o:(r + 1) * n_o])
                yield s_true[r], o_true[r], a_s, a_o


def accumulate_attention(params: ModelParams, dataset: Dataset,
                         mode: str = INTERLEAVED,
                         samples=None, batch_size: int = 128) -> FeasibilityMatrix:
    """Accumulate per-sample attention into the dataset-level map.

    Samples run in dataset order (the train split by default). For each
    sample the row update precedes the column update. An empty dataset
    leaves all panels zero: no softmax is ever applied.
    """
    if mode not in _MODES:
        raise ContractError(f"unknown mode {mode!r}; expected {_MODES}")
    n_s, n_o = dataset.spec.num_states, dataset.spec.num_objects
    if samples is None:
        samples = dataset.train
    fm = FeasibilityMatrix(
        num_states=n_s, num_objects=n_o, mode=mode,
        row_panel=[[0.0] * n_o for _ in range(n_s)],
        col_panel=[[0.0] * n_o for _ in range(n_s)],
        raw_sums=[[0.0] * n_o for _ in range(n_s)],
    )
    for s, o, a_s, a_o in _attention_rows(params, samples, batch_size):
        row = fm.row_panel[s]
        for j in range(n_o):
            row[j] += a_o[j]
            fm.raw_sums[s][j] += a_o[j]
        if mode == INTERLEAVED:
            _softmax_inplace(row)
        fm.touched_rows.add(s)

        for k in range(n_s):
            fm.col_panel[k][o] += a_s[k]
            fm.raw_sums[k][o] += a_s[k]
        if mode == INTERLEAVED:
            col = [fm.col_panel[k][o] for k in range(n_s)]
            _softmax_inplace(col)
            for k in range(n_s):
                fm.col_panel[k][o] = col[k]
        fm.touched_cols.add(o)

    if mode == RAW_FINAL:
        for s in fm.touched_rows:
            _softmax_inplace(fm.row_panel[s])
        for o in fm.touched_cols:
            col = [fm.col_panel[k][o] for k in range(n_s)]
            _softmax_inplace(col)
            for k in range(n_s):
                fm.col_panel[k][o] = col[k]
    return fm


# -------------------------------------------------------- frequency tables


def _zero_grid(n_s: int, n_o: int):
    return [[0] * n_o for _ in range(n_s)]


@dataclass
class FrequencyTable:
    num_states: int
    num_objects: int
    # conditioned on the sample's state: which object drew max/min attention
    state_max: list
    state_min: list
    # conditioned on the sample's object: which state drew max/min attention
    object_max: list
    object_min: list
    state_samples: list      # sample count per state label
    object_samples: list

    def counts(self, kind: str, direction: str):
        table = {("state", "top"): self.state_max,
                 ("state", "bottom"): self.state_min,
                 ("object", "top"): self.object_max,
                 ("object", "bottom"): self.object_min}.get((kind, direction))
        if table is None:
            raise ContractError(
                f"unknown table ({kind!r}, {direction!r}); kinds are state/object,"
                " directions top/bottom")
        return table


def build_frequency_table(params: ModelParams, dataset: Dataset,
                          samples=None, batch_size: int = 128) -> FrequencyTable:
    """Count, per sample, which opposite primitive won (and lost) attention."""
    n_s, n_o = dataset.spec.num_states, dataset.spec.num_objects
    if samples is None:
        samples = dataset.train
    ft = FrequencyTable(
        num_states=n_s, num_objects=n_o,
        state_max=_zero_grid(n_s, n_o), state_min=_zero_grid(n_s, n_o),
        object_max=_zero_grid(n_s, n_o), object_min=_zero_grid(n_s, n_o),
        state_samples=[0] * n_s, object_samples=[0] * n_o,
    )
    for s, o, a_s, a_o in _attention_rows(params, samples, batch_size):
        ft.state_samples[s] += 1
        ft.object_samples[o] += 1
        ft.state_max[s][a_o.index(max(a_o))] += 1
        ft.state_min[s][a_o.index(min(a_o))] += 1
        ft.object_max[a_s.index(max(a_s))][o] += 1
        ft.object_min[a_s.index(min(a_s))][o] += 1
    return ft


@dataclass
class TopkResult:
    pairs: list              # ((state, object), count), ranked
    truncated: bool          # fewer than k candidates were available


def topk_feasible(freq: FrequencyTable, kind: str, index: int, k: int,
                  direction: str = "top", space: str = "open_world",
                  seen_pairs=None) -> TopkResult:
    """Rank the conditioning primitive's pairs by max-win (or min-win) count.

    Ties break toward the lower pair index. unseen_only drops seen pairs
    before ranking and needs seen_pairs for that.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if space not in ("open_world", "unseen_only"):
        raise ContractError(f"unknown space {space!r}")
    counts = freq.counts(kind, direction)
    if kind == "state":
        if not 0 <= index < freq.num_states:
            raise ContractError(f"state index {index} out of range")
        candidates = [((index, j), counts[index][j]) for j in range(freq.num_objects)]
    else:
        if not 0 <= index < freq.num_objects:
            raise ContractError(f"object index {index} out of range")
        candidates = [((i, index), counts[i][index]) for i in range(freq.num_states)]
    if space == "unseen_only":
        if seen_pairs is None:
            raise ContractError("unseen_only ranking needs seen_pairs")
        candidates = [c for c in candidates if c[0] not in seen_pairs]
    ranked = sorted(candidates, key=lambda c: (-c[1], c[0]))
    return TopkResult(pairs=ranked[:k], truncated=len(ranked) < k)


# ------------------------------------------------------------- prototypes


def _mean_vec(vectors):
    n = len(vectors)
    width = len(vectors[0])
    out = [0.0] * width
    for v in vectors:
        for i in range(width):
            out[i] += v[i]
    return [x / n for x in out]


def _dist(a, b) -> float:
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


@dataclass
class BranchPrototypes:
    prototypes: dict         # class -> mean embedding
    intra: float             # mean distance of members to their prototype
    inter: float             # mean pairwise prototype distance

    @property
    def ratio(self) -> float:
        return self.intra / self.inter if self.inter > 0 else math.inf


@dataclass
class PrototypeReport:
    state_original: BranchPrototypes
    state_disentangled: BranchPrototypes
    object_original: BranchPrototypes
    object_disentangled: BranchPrototypes
    omitted_states: list     # class labels with no samples, flagged
    omitted_objects: list


def _branch_stats(groups: dict) -> BranchPrototypes:
    protos = {cls: _mean_vec(vecs) for cls, vecs in groups.items()}
    spreads = []
    for cls, vecs in groups.items():
        p = protos[cls]
        spreads.extend(_dist(v, p) for v in vecs)
    intra = sum(spreads) / len(spreads) if spreads else 0.0
    keys = sorted(protos)
    dists = [_dist(protos[a], protos[b])
             for i, a in enumerate(keys) for b in keys[i + 1:]]
    inter = sum(dists) / len(dists) if dists else 0.0
    return BranchPrototypes(prototypes=protos, intra=intra, inter=inter)


def prototype_report(params: ModelParams, dataset: Dataset,
                     samples=None, batch_size: int = 128) -> PrototypeReport:
    """Per-class mean embeddings before and after disentanglement.

    Defaults to the test samples (seen + unseen). Classes without samples
    are omitted from the statistics and listed in the report.
    """
    if samples is None:
        samples = dataset.test_seen + dataset.test_unseen
    if not samples:
        raise ContractError("prototype report needs at least one sample")
    by_state = {"orig": {}, "gen": {}}
    by_object = {"orig": {}, "gen": {}}
    with nd.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            x, s_true, o_true = batch_tensors(chunk)
            b = forward(params, x)
            h = params.hidden
            for r in range(len(chunk)):
                z_s = list(b.z_s.values[r * h:(r + 1) * h])
                g_s = list(b.gen_s.values[r * h:(r + 1) * h])
                z_o = list(b.z_o.values[r * h:(r + 1) * h])
                g_o = list(b.gen_o.values[r * h:(r + 1) * h])
                by_state["orig"].setdefault(s_true[r], []).append(z_s)
                by_state["gen"].setdefault(s_true[r], []).append(g_s)
                by_object["orig"].setdefault(o_true[r], []).append(z_o)
                by_object["gen"].setdefault(o_true[r], []).append(g_o)
    omitted_states = [c for c in range(dataset.spec.num_states)
                      if c not in by_state["orig"]]
    omitted_objects = [c for c in range(dataset.spec.num_objects)
                       if c not in by_object["orig"]]
    return PrototypeReport(
        state_original=_branch_stats(by_state["orig"]),
        state_disentangled=_branch_stats(by_state["gen"]),
        object_original=_branch_stats(by_object["orig"]),
        object_disentangled=_branch_stats(by_object["gen"]),
        omitted_states=omitted_states,
        omitted_objects=omitted_objects,
    )


# ----------------------------------------------------- information probes


def probe_accuracies(params: ModelParams, samples, batch_size: int = 128) -> dict:
    """Argmax accuracies of the KD heads on generated features.

    The denoisers act as in-model probes for leftover cross-branch
    information: f_s_den reads disentangled state features and guesses the
    OBJECT label, so near-chance accuracy there means the object signal was
    scrubbed, while the disentangled classifiers f_ds/f_do should stay well
    above chance on their own labels.
    """
    if not samples:
        raise ContractError("empty sample list")
    hits = {"state_classifier": 0, "object_classifier": 0,
            "object_probe_on_state": 0, "state_probe_on_object": 0}
    with nd.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            x, s_true, o_true = batch_tensors(chunk)
            b = forward(params, x)

            def argmax_rows(t):
                n, w = t.shape
                return [max(range(w), key=lambda k, r=r: t.values[r * w + k])
                        for r in range(n)]

            pc_s = argmax_rows(b.pc_s_gen)
            pc_o = argmax_rows(b.pc_o_gen)
            probe_o = argmax_rows(b.den_s_gen_det)   # f_s_den: gen_s -> object?
            probe_s = argmax_rows(b.den_o_gen_det)   # f_o_den: gen_o -> state?
            for r in range(len(chunk)):
                hits["state_classifier"] += pc_s[r] == s_true[r]
                hits["object_classifier"] += pc_o[r] == o_true[r]
                hits["object_probe_on_state"] += probe_o[r] == o_true[r]
                hits["state_probe_on_object"] += probe_s[r] == s_true[r]
    n = len(samples)
    return {k: v / n for k, v in hits.items()}


# -------------------------------------------------------------- emissions


def write_matrix_csv(path: str, grid, header_prefix: str = "o") -> None:
    with open(path, "w", newline="") as f:
        width = len(grid[0]) if grid else 0
        f.write("," + ",".join(f"{header_prefix}{j}" for j in range(width)) + "\n")
        for i, row in enumerate(grid):
            f.write(f"s{i}," + ",".join(repr(v) for v in row) + "\n")


def write_frequency_csv(path: str, freq: FrequencyTable) -> None:
    with open(path, "w", newline="") as f:
        f.write("table,state,object,count\n")
        for name in ("state_max", "state_min", "object_max", "object_min"):
            grid = getattr(freq, name)
            for s in range(freq.num_states):
                for o in range(freq.num_objects):
                    f.write(f"{name},{s},{o},{grid[s][o]}\n")


def write_prototype_report(csv_path: str, text_path: str,
                           report: PrototypeReport) -> None:
    rows = (("state", "original", report.state_original),
            ("state", "disentangled", report.state_disentangled),
            ("object", "original", report.object_original),
            ("object", "disentangled", report.object_disentangled))
    with open(csv_path, "w", newline="") as f:
        f.write("branch,features,intra,inter,ratio\n")
        for branch, kind, stats in rows:
            f.write(f"{branch},{kind},{repr(stats.intra)},{repr(stats.inter)},"
                    f"{repr(stats.ratio)}\n")
    with open(text_path, "w") as f:
        for branch, kind, stats in rows:
            f.write(f"{branch} {kind}: intra {stats.intra:.6f}, "
                    f"inter {stats.inter:.6f}, ratio {stats.ratio:.6f}\n")
        if report.omitted_states:
            f.write(f"omitted state classes (no samples): {report.omitted_states}\n")
        if report.omitted_objects:
            f.write(f"omitted object classes (no samples): {report.omitted_objects}\n")
