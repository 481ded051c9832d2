"""Gamma-weighted open-world inference and bias-calibrated evaluation.

Inference fuses three signals per branch: the plain classifier probability,
the attention-weighted probability, and the disentangled-classifier
probability, mixed by gamma weights that sum to 1. Branch masks zero a
signal without renormalizing gamma, mirroring ablation at fixed weights.

Evaluation sweeps an additive bias on unseen-pair scores from -inf to
+inf, tracing the seen/unseen accuracy trade-off; best S, U, HM are curve
extremes and AUC is the trapezoidal area under the seen-sorted curve.
All metrics live in [0, 1] internally and are scaled by 100 only in CSV
emission.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields

from . import ndkit as nd
from .data import Dataset, open_world_pairs
from .errors import CheckpointError, ContractError
from .model import ModelParams, batch_tensors, forward

DEFAULT_GRID_POINTS = 201


@dataclass(frozen=True)
class GammaWeights:
    g1: float = 0.7
    g2: float = 0.25
    g3: float = 0.05

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ContractError(f"gamma weights must be finite and >= 0, got {f.name}={v}")
        total = self.g1 + self.g2 + self.g3
        if abs(total - 1.0) > 1e-9:
            raise ContractError(f"gamma weights must sum to 1 +- 1e-9, got {total!r}")

    @classmethod
    def parse(cls, text: str) -> "GammaWeights":
        parts = text.split(",")
        if len(parts) != 3:
            raise ContractError(f"expected three comma-separated gammas, got {text!r}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as e:
            raise ContractError(f"bad gamma value in {text!r}") from e
        return cls(*vals)


@dataclass(frozen=True)
class BranchMask:
    pf_s_given_o: bool = True  # attention-weighted state branch
    pf_o_given_s: bool = True  # attention-weighted object branch
    pc_s: bool = True          # disentangled state classifier
    pc_o: bool = True          # disentangled object classifier

    @classmethod
    def disable(cls, *tokens: str) -> "BranchMask":
        known = {"pf_s": "pf_s_given_o", "pf_o": "pf_o_given_s",
                 "pc_s": "pc_s", "pc_o": "pc_o"}
        kwargs = {}
        for tok in tokens:
            if tok not in known:
                raise ContractError(f"unknown branch token {tok!r}; expected {sorted(known)}")
            kwargs[known[tok]] = False
        return cls(**kwargs)


FULL_MASK = BranchMask()
SP_MASK = BranchMask.disable("pf_s", "pf_o", "pc_s", "pc_o")


# ------------------------------------------------------------------ fusion


def _fuse_side(p, a, pc, g: GammaWeights, use_f: bool, use_c: bool):
    rows_n, width = p.shape
    out = []
    for r in range(rows_n):
        base = r * width
        row = []
        for k in range(width):
            v = g.g1 * p.values[base + k]
            if use_f:
                v += g.g2 * (a.values[base + k] * p.values[base + k])
            if use_c:
                v += g.g3 * pc.values[base + k]
            row.append(v)
        out.append(row)
    return out


def fuse(bundle, gamma: GammaWeights, mask: BranchMask = FULL_MASK):
    """Per-sample fused state and object score rows (plain float lists)."""
    ps = _fuse_side(bundle.p_s, bundle.a_s, bundle.pc_s_gen, gamma,
                    mask.pf_s_given_o, mask.pc_s)
    po = _fuse_side(bundle.p_o, bundle.a_o, bundle.pc_o_gen, gamma,
                    mask.pf_o_given_s, mask.pc_o)
    return ps, po


def predict_composition(ps_row, po_row, pairs):
    """Pair maximizing ps[k]*po[j]; ties go to the lowest pair index."""
    if not pairs:
        raise ContractError("empty pair list")
    best = None
    best_score = -math.inf
    for s, o in pairs:
        score = ps_row[s] * po_row[o]
        if score > best_score:
            best_score = score
            best = (s, o)
    return best


# ----------------------------------------------------------- raw score flow


@dataclass
class RawScores:
    s_true: int
    o_true: int
    split: int
    p_s: list
    a_s: list
    pc_s: list
    p_o: list
    a_o: list
    pc_o: list


def _rows(t):
    n, w = t.shape
    return [list(t.values[r * w:(r + 1) * w]) for r in range(n)]


def collect_raw_scores(params: ModelParams, samples, batch_size: int = 128):
    """One forward pass over samples; per-sample score vectors for reuse.

    Ablation rows and gamma grids all fuse from the same collected vectors,
    which is what makes their numbers bit-identical to standalone runs.
    """
    out = []
    with nd.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            x, s_true, o_true = batch_tensors(chunk)
            b = forward(params, x)
            mats = tuple(map(_rows, (b.p_s, b.a_s, b.pc_s_gen,
                                     b.p_o, b.a_o, b.pc_o_gen)))
            for r, sample in enumerate(chunk):
                out.append(RawScores(
                    s_true=s_true[r], o_true=o_true[r], split=sample.split,
                    p_s=mats[0][r], a_s=mats[1][r], pc_s=mats[2][r],
                    p_o=mats[3][r], a_o=mats[4][r], pc_o=mats[5][r]))
    return out


@dataclass
class FusedRow:
    s_true: int
    o_true: int
    split: int
    ps: list
    po: list

    def composition_score(self, s: int, o: int) -> float:
        return self.ps[s] * self.po[o]


@dataclass
class ScoreTable:
    num_states: int
    num_objects: int
    pairs: list
    seen_pairs: frozenset
    rows: list


def _fuse_lists(raw: RawScores, g: GammaWeights, mask: BranchMask):
    def side(p, a, pc, use_f, use_c):
        row = []
        for k in range(len(p)):
            v = g.g1 * p[k]
            if use_f:
                v += g.g2 * (a[k] * p[k])
            if use_c:
                v += g.g3 * pc[k]
            row.append(v)
        return row
    ps = side(raw.p_s, raw.a_s, raw.pc_s, mask.pf_s_given_o, mask.pc_s)
    po = side(raw.p_o, raw.a_o, raw.pc_o, mask.pf_o_given_s, mask.pc_o)
    return ps, po


def fuse_raw_scores(raw_scores, dataset: Dataset, gamma: GammaWeights,
                    mask: BranchMask = FULL_MASK) -> ScoreTable:
    rows = []
    for raw in raw_scores:
        ps, po = _fuse_lists(raw, gamma, mask)
        rows.append(FusedRow(raw.s_true, raw.o_true, raw.split, ps, po))
    return ScoreTable(
        num_states=dataset.spec.num_states,
        num_objects=dataset.spec.num_objects,
        pairs=open_world_pairs(dataset.spec),
        seen_pairs=frozenset(dataset.spec.seen_pairs),
        rows=rows,
    )


# -------------------------------------------------------------- bias sweep


@dataclass
class EvalSummary:
    sweep: list          # (bias, seen_acc, unseen_acc), ascending bias
    best_S: float
    best_U: float
    best_HM: float
    auc: float

    def percent(self) -> dict:
        return {"best_S": 100.0 * self.best_S, "best_U": 100.0 * self.best_U,
                "best_HM": 100.0 * self.best_HM, "AUC": 100.0 * self.auc}


@dataclass
class _Reduced:
    split: int
    bs: float            # best score among seen pairs
    bu: float            # best score among unseen pairs
    s_idx: int           # open-world index of the best seen pair
    u_idx: int
    s_correct: bool      # best seen pair is the true pair
    u_correct: bool


def _reduce_row(row: FusedRow, pairs, seen_pairs):
    bs = bu = -math.inf
    s_idx = u_idx = -1
    s_pair = u_pair = None
    for i, (s, o) in enumerate(pairs):
        score = row.ps[s] * row.po[o]
        if (s, o) in seen_pairs:
            if score > bs:
                bs, s_idx, s_pair = score, i, (s, o)
        else:
            if score > bu:
                bu, u_idx, u_pair = score, i, (s, o)
    true_pair = (row.s_true, row.o_true)
    return _Reduced(split=row.split, bs=bs, bu=bu, s_idx=s_idx, u_idx=u_idx,
                    s_correct=s_pair == true_pair, u_correct=u_pair == true_pair)


def _correct_at(r: _Reduced, bias: float) -> bool:
    # bias = +-inf means the limit: one side always wins the cross-side
    # comparison while the within-side argmax keeps its raw-score order
    shifted = r.bu + bias
    if r.bs > shifted:
        return r.s_correct
    if shifted > r.bs:
        return r.u_correct
    # exact tie between the two sides: global lowest-pair-index rule
    return r.s_correct if r.s_idx < r.u_idx else r.u_correct


def _accuracy(reduced, bias: float, split: int) -> float:
    members = [r for r in reduced if r.split == split]
    hits = sum(1 for r in members if _correct_at(r, bias))
    return hits / len(members)


def evaluate_score_table(table: ScoreTable,
                         grid_points: int = DEFAULT_GRID_POINTS) -> EvalSummary:
    if grid_points < 2:
        raise ContractError(f"grid_points must be >= 2, got {grid_points}")
    if not table.seen_pairs or len(table.seen_pairs) == len(table.pairs):
        raise ContractError("bias sweep needs both seen and unseen pairs")
    splits = {r.split for r in table.rows}
    if 1 not in splits or 2 not in splits:
        raise ContractError("evaluation needs both test_seen and test_unseen samples")

    reduced = [_reduce_row(r, table.pairs, table.seen_pairs)
               for r in table.rows if r.split in (1, 2)]

    m = max((abs(r.bs - r.bu) for r in reduced), default=0.0)
    if m == 0.0:
        m = 1.0
    step = 2.0 * m / (grid_points - 1)
    biases = [-math.inf] + [-m + i * step for i in range(grid_points)] + [math.inf]

    sweep = [(b, _accuracy(reduced, b, 1), _accuracy(reduced, b, 2)) for b in biases]

    best_S = max(s for _, s, _ in sweep)
    best_U = max(u for _, _, u in sweep)
    best_HM = max((2.0 * s * u / (s + u)) if s + u > 0 else 0.0
                  for _, s, u in sweep)

    # area under the seen-sorted curve, one (max) unseen value per seen value
    by_seen = {}
    for _, s, u in sweep:
        by_seen[s] = max(u, by_seen.get(s, 0.0))
    curve = sorted(by_seen.items())
    auc = 0.0
    for (s0, u0), (s1, u1) in zip(curve, curve[1:]):
        auc += (s1 - s0) * (u0 + u1) / 2.0
    return EvalSummary(sweep=sweep, best_S=best_S, best_U=best_U,
                       best_HM=best_HM, auc=auc)


def evaluate(params: ModelParams, dataset: Dataset,
             gamma: GammaWeights = GammaWeights(),
             mask: BranchMask = FULL_MASK,
             grid_points: int = DEFAULT_GRID_POINTS) -> EvalSummary:
    if not dataset.test_seen or not dataset.test_unseen:
        raise ContractError("evaluation needs nonempty test_seen and test_unseen splits")
    raw = collect_raw_scores(params, dataset.test_seen + dataset.test_unseen)
    table = fuse_raw_scores(raw, dataset, gamma, mask)
    return evaluate_score_table(table, grid_points)


# ---------------------------------------------------------------- ablation


ABLATION_ROWS = (
    ("SP", ("pf_s", "pf_o", "pc_s", "pc_o")),
    ("SA-SP", ("pc_s", "pc_o")),
    ("KD-SP", ("pf_s", "pf_o")),
    ("SAD-SP", ()),
    ("disable pf_s", ("pf_s",)),
    ("disable pf_o", ("pf_o",)),
    ("disable pc_s", ("pc_s",)),
    ("disable pc_o", ("pc_o",)),
    ("disable pf_s+pc_s", ("pf_s", "pc_s")),
    ("disable pf_s+pc_o", ("pf_s", "pc_o")),
    ("disable pf_o+pc_s", ("pf_o", "pc_s")),
    ("disable pf_o+pc_o", ("pf_o", "pc_o")),
)


@dataclass
class AblationRow:
    label: str
    disabled: tuple
    summary: EvalSummary


def run_ablation_suite(params: ModelParams, dataset: Dataset,
                       gamma: GammaWeights = GammaWeights(),
                       grid_points: int = DEFAULT_GRID_POINTS):
    """4 module-level + 8 branch-level rows, all at the same gamma."""
    if not dataset.test_seen or not dataset.test_unseen:
        raise ContractError("ablation needs nonempty test_seen and test_unseen splits")
    raw = collect_raw_scores(params, dataset.test_seen + dataset.test_unseen)
    rows = []
    for label, disabled in ABLATION_ROWS:
        table = fuse_raw_scores(raw, dataset, gamma, BranchMask.disable(*disabled))
        rows.append(AblationRow(label, disabled, evaluate_score_table(table, grid_points)))
    return rows


# ------------------------------------------------------------- gamma sweep


@dataclass
class SweepRow:
    g1: float
    g2: float
    g3: float
    auc: float | None
    skipped: bool


@dataclass
class SweepResult:
    rows: list
    best: SweepRow | None


def default_sweep_grid():
    return [round(0.05 * i, 2) for i in range(1, 11)]  # 0.05 .. 0.50


def gamma_sweep(params: ModelParams, dataset: Dataset,
                g2_values=None, g3_values=None,
                mask: BranchMask = FULL_MASK,
                grid_points: int = DEFAULT_GRID_POINTS) -> SweepResult:
    """AUC over the (g2, g3) grid with g1 = 1 - g2 - g3; infeasible points
    (g1 < 0) are kept as flagged rows, never silently dropped."""
    g2_values = list(g2_values) if g2_values is not None else default_sweep_grid()
    g3_values = list(g3_values) if g3_values is not None else default_sweep_grid()
    for v in g2_values + g3_values:
        if not 0.0 < v < 1.0:
            raise ContractError(f"sweep grid value {v} outside (0, 1)")
    if not dataset.test_seen or not dataset.test_unseen:
        raise ContractError("sweep needs nonempty test_seen and test_unseen splits")
    raw = collect_raw_scores(params, dataset.test_seen + dataset.test_unseen)
    rows = []
    best = None
    for g2 in g2_values:
        for g3 in g3_values:
            g1 = 1.0 - g2 - g3
            if g1 < 0.0:
                rows.append(SweepRow(g1, g2, g3, None, True))
                continue
            table = fuse_raw_scores(raw, dataset, GammaWeights(g1, g2, g3), mask)
            summary = evaluate_score_table(table, grid_points)
            row = SweepRow(g1, g2, g3, summary.auc, False)
            rows.append(row)
            if best is None or row.auc > best.auc:
                best = row
    return SweepResult(rows=rows, best=best)


# -------------------------------------------------------- accuracy helpers


def primitive_accuracy(params: ModelParams, samples, batch_size: int = 128):
    """Plain argmax accuracy of p_s and p_o over the given samples."""
    if not samples:
        raise ContractError("empty sample list")
    s_hits = o_hits = 0
    with nd.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            x, s_true, o_true = batch_tensors(chunk)
            b = forward(params, x)
            ps, po = _rows(b.p_s), _rows(b.p_o)
            for r in range(len(chunk)):
                s_hits += ps[r].index(max(ps[r])) == s_true[r]
                o_hits += po[r].index(max(po[r])) == o_true[r]
    return s_hits / len(samples), o_hits / len(samples)


# -------------------------------------------------------------- CSV + dump


SCORE_MAGIC = b"SADSPSC1"
_SC_HEADER = struct.Struct("<III")
_SC_ROW = struct.Struct("<HHB")


def write_score_table(path: str, table: ScoreTable) -> None:
    chunks = [SCORE_MAGIC, _SC_HEADER.pack(table.num_states, table.num_objects,
                                           len(table.rows))]
    for r in table.rows:
        chunks.append(_SC_ROW.pack(r.s_true, r.o_true, r.split))
        chunks.append(struct.pack(f"<{table.num_states}d", *r.ps))
        chunks.append(struct.pack(f"<{table.num_objects}d", *r.po))
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def read_score_table(path: str):
    """Score dump reader; returns (num_states, num_objects, rows)."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:8] != SCORE_MAGIC:
        raise CheckpointError(f"bad score-table magic in {path!r}")
    ns, no, n = _SC_HEADER.unpack_from(buf, 8)
    pos = 8 + _SC_HEADER.size
    row_bytes = _SC_ROW.size + 8 * (ns + no)
    if len(buf) != pos + n * row_bytes:
        raise CheckpointError(
            f"truncated score table: expected {pos + n * row_bytes} bytes, have {len(buf)}")
    rows = []
    for _ in range(n):
        s_true, o_true, split = _SC_ROW.unpack_from(buf, pos)
        pos += _SC_ROW.size
        ps = list(struct.unpack_from(f"<{ns}d", buf, pos))
        pos += 8 * ns
        po = list(struct.unpack_from(f"<{no}d", buf, pos))
        pos += 8 * no
        rows.append(FusedRow(s_true, o_true, split, ps, po))
    return ns, no, rows


def write_eval_summary(path: str, summary: EvalSummary) -> None:
    pct = summary.percent()
    with open(path, "w", newline="") as f:
        f.write("best_S,best_U,best_HM,AUC\n")
        f.write(",".join(repr(pct[k]) for k in ("best_S", "best_U", "best_HM", "AUC")) + "\n")


def write_sweep_curve(path: str, summary: EvalSummary) -> None:
    with open(path, "w", newline="") as f:
        f.write("bias,seen_acc,unseen_acc\n")
        for bias, s, u in summary.sweep:
            f.write(f"{repr(bias)},{repr(s)},{repr(u)}\n")


def write_ablation_table(path: str, rows) -> None:
    with open(path, "w", newline="") as f:
        f.write("label,disabled,best_S,best_U,best_HM,AUC\n")
        for row in rows:
            pct = row.summary.percent()
            disabled = "+".join(row.disabled)
            f.write(",".join([row.label, disabled] +
                             [repr(pct[k]) for k in ("best_S", "best_U", "best_HM", "AUC")]) + "\n")


def write_gamma_sweep(path: str, result: SweepResult) -> None:
    with open(path, "w", newline="") as f:
        f.write("g1,g2,g3,AUC,skipped,best\n")
        for r in result.rows:
            auc = "" if r.auc is None else repr(100.0 * r.auc)
            f.write(f"{repr(r.g1)},{repr(r.g2)},{repr(r.g3)},{auc},"
                    f"{int(r.skipped)},{int(r is result.best)}\n")
