"""Labeled feature bundles: synthetic generation, file I/O, split bookkeeping.

The synthetic world plants two recoverable structures. Feasibility: each
(state, object) pair gets a bilinear affinity between unit prototypes and the
top slice becomes the feasible mask from which seen/unseen pairs are drawn.
Contextuality: a sample's feature is a block projection of
[state_proto ; object_proto ; k*(state_proto (.) object_proto)] plus Gaussian
noise, so the Hadamard interaction leaks each primitive into the other's
half of the feature vector. All features are quantized to float32 at birth,
which makes the in-memory dataset equal its file round-trip bit-for-bit.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field

from .errors import ContractError, ParseError, SpecError

SPLIT_TRAIN, SPLIT_TEST_SEEN, SPLIT_TEST_UNSEEN = 0, 1, 2
SPLIT_NAMES = ("train", "test_seen", "test_unseen")

FEATURE_MAGIC = b"SADSPFV1"
_HEADER = struct.Struct("<IIII")


def _f32(x: float) -> float:
    """Round to the nearest float32, returned as a Python float."""
    return struct.unpack("<f", struct.pack("<f", x))[0]


@dataclass
class DatasetSpec:
    num_states: int
    num_objects: int
    feature_dim: int
    seen_pairs: frozenset = frozenset()
    num_train: int = 0
    num_test_seen: int = 0
    num_test_unseen: int = 0
    rng_seed: int = 0

    def validate(self) -> None:
        if self.num_states < 1 or self.num_objects < 1:
            raise SpecError(f"need at least one state and object, got |S|={self.num_states}, |O|={self.num_objects}")
        if self.feature_dim < 1:
            raise SpecError(f"feature_dim must be positive, got {self.feature_dim}")
        for s, o in self.seen_pairs:
            if not (0 <= s < self.num_states and 0 <= o < self.num_objects):
                raise SpecError(f"seen pair ({s},{o}) outside [0,{self.num_states})x[0,{self.num_objects})")


@dataclass(frozen=True)
class Sample:
    features: tuple
    state: int
    object: int
    split: int


@dataclass
class SyntheticWorld:
    state_prototypes: list
    object_prototypes: list
    interaction: float
    noise: float
    feasibility_mask: list          # |S| x |O| booleans
    affinity: list                  # |S| x |O| planted scores behind the mask
    mix_state: list                 # d_p x d/2
    mix_object: list
    mix_inter_s: list
    mix_inter_o: list


@dataclass
class WorldConfig:
    proto_dim: int = 16
    interaction: float = 2.0
    noise: float = 0.05
    feasible_frac: float = 0.6
    seen_frac: float = 0.4          # fraction of the FULL pair space
    train_per_pair: int = 25
    test_seen_per_pair: int = 6
    test_unseen_per_pair: int = 6


@dataclass
class Dataset:
    spec: DatasetSpec
    samples: list
    world: SyntheticWorld | None = None
    _splits: dict = field(default_factory=dict, repr=False)

    def split(self, split_id: int) -> list:
        cached = self._splits.get(split_id)
        if cached is None:
            cached = [s for s in self.samples if s.split == split_id]
            self._splits[split_id] = cached
        return cached

    @property
    def train(self):
        return self.split(SPLIT_TRAIN)

    @property
    def test_seen(self):
        return self.split(SPLIT_TEST_SEEN)

    @property
    def test_unseen(self):
        return self.split(SPLIT_TEST_UNSEEN)


def default_spec(seed: int = 0) -> DatasetSpec:
    """Desk-scale default: |S|=8, |O|=10, d=32."""
    return DatasetSpec(num_states=8, num_objects=10, feature_dim=32, rng_seed=seed)


def _unit_vec(rng: random.Random, n: int) -> list:
    v = [rng.gauss(0.0, 1.0) for _ in range(n)]
    norm = sum(x * x for x in v) ** 0.5
    if norm == 0.0:
        return [1.0] + [0.0] * (n - 1)
    return [x / norm for x in v]


def _mix_matrix(rng: random.Random, rows: int, cols: int) -> list:
    sd = 1.0 / (rows ** 0.5)
    return [[rng.gauss(0.0, sd) for _ in range(cols)] for _ in range(rows)]


def generate_synthetic(spec: DatasetSpec, cfg: WorldConfig):
    """Build a seeded synthetic world and its samples.

    Completes spec in place: fills seen_pairs and the split sizes, which are
    only known once the feasibility mask has been drawn. Returns
    (SyntheticWorld, samples).
    """
    spec.validate()
    if spec.num_states < 2 or spec.num_objects < 2:
        raise SpecError("synthetic worlds need at least 2 states and 2 objects")
    if spec.feature_dim < 4 or spec.feature_dim % 2:
        raise SpecError(f"synthetic feature_dim must be even and >= 4, got {spec.feature_dim}")
    if cfg.interaction < 0 or cfg.noise < 0:
        raise ContractError(f"interaction and noise must be >= 0, got {cfg.interaction}, {cfg.noise}")
    if cfg.proto_dim < 1 or cfg.train_per_pair < 1 or cfg.test_seen_per_pair < 0 or cfg.test_unseen_per_pair < 0:
        raise SpecError("proto_dim and train_per_pair must be >= 1; test counts >= 0")
    if not (0.0 < cfg.feasible_frac <= 1.0 and 0.0 < cfg.seen_frac <= 1.0):
        raise SpecError("feasible_frac and seen_frac must lie in (0, 1]")

    ns, no = spec.num_states, spec.num_objects
    n_pairs = ns * no
    rng = random.Random(spec.rng_seed)

    state_protos = [_unit_vec(rng, cfg.proto_dim) for _ in range(ns)]
    object_protos = [_unit_vec(rng, cfg.proto_dim) for _ in range(no)]
    affinity = [[sum(a * b for a, b in zip(state_protos[s], object_protos[o]))
                 for o in range(no)] for s in range(ns)]

    # feasible set: top slice of the affinity scores, repaired so every state
    # has >= 2 feasible objects and every object >= 2 feasible states
    order = sorted(((s, o) for s in range(ns) for o in range(no)),
                   key=lambda p: (-affinity[p[0]][p[1]], p[0], p[1]))
    n_feas = max(2, round(cfg.feasible_frac * n_pairs))
    feasible = set(order[:n_feas])
    for s in range(ns):
        have = sum(1 for o in range(no) if (s, o) in feasible)
        if have < 2:
            for o in sorted(range(no), key=lambda o: -affinity[s][o]):
                if (s, o) not in feasible:
                    feasible.add((s, o))
                    have += 1
                    if have >= 2:
                        break
    for o in range(no):
        have = sum(1 for s in range(ns) if (s, o) in feasible)
        if have < 2:
            for s in sorted(range(ns), key=lambda s: -affinity[s][o]):
                if (s, o) not in feasible:
                    feasible.add((s, o))
                    have += 1
                    if have >= 2:
                        break

    target_seen = round(cfg.seen_frac * n_pairs)
    if target_seen < 1:
        raise SpecError(f"seen_frac {cfg.seen_frac} selects no pairs")
    if target_seen >= len(feasible):
        raise SpecError(
            f"seen_frac {cfg.seen_frac} wants {target_seen} seen pairs but only "
            f"{len(feasible)} are feasible and some must stay unseen")

    # greedy cover: every state, then every object, appears in a seen pair
    seen: set = set()
    covered_objects: set = set()
    for s in rng.sample(range(ns), ns):
        cands = sorted((o for o in range(no) if (s, o) in feasible),
                       key=lambda o: (o in covered_objects, -affinity[s][o], o))
        o = cands[0]
        seen.add((s, o))
        covered_objects.add(o)
    for o in rng.sample(range(no), no):
        if o in covered_objects:
            continue
        cands = sorted((s for s in range(ns) if (s, o) in feasible),
                       key=lambda s: (-affinity[s][o], s))
        seen.add((cands[0], o))
        covered_objects.add(o)
    if len(seen) > target_seen + 2:
        raise SpecError(
            f"coverage needs {len(seen)} seen pairs, above the requested {target_seen}")
    remaining = sorted(feasible - seen)
    fill = target_seen - len(seen)
    if fill > 0:
        if fill >= len(remaining):
            raise SpecError("no feasible pairs would remain unseen")
        seen.update(rng.sample(remaining, fill))

    unseen = sorted(feasible - seen)
    if not unseen:
        raise SpecError("no unseen feasible pairs left for the test split")
    seen_sorted = sorted(seen)

    half = spec.feature_dim // 2
    world = SyntheticWorld(
        state_prototypes=state_protos,
        object_prototypes=object_protos,
        interaction=cfg.interaction,
        noise=cfg.noise,
        feasibility_mask=[[(s, o) in feasible for o in range(no)] for s in range(ns)],
        affinity=affinity,
        mix_state=_mix_matrix(rng, cfg.proto_dim, half),
        mix_object=_mix_matrix(rng, cfg.proto_dim, half),
        mix_inter_s=_mix_matrix(rng, cfg.proto_dim, half),
        mix_inter_o=_mix_matrix(rng, cfg.proto_dim, half),
    )

    def emit(s: int, o: int) -> tuple:
        # contextuality: the partner primitive shifts this branch's features
        # along a branch-specific direction, scaled by prototype alignment.
        # The partner's full identity stays out of the opposite half.
        u = state_protos[s]
        v = object_protos[o]
        align = sum(a * b for a, b in zip(u, v))
        k = cfg.interaction
        feats = []
        for j in range(half):
            x = sum(u[t] * world.mix_state[t][j] for t in range(cfg.proto_dim))
            x += k * align * sum(u[t] * world.mix_inter_s[t][j] for t in range(cfg.proto_dim))
            feats.append(_f32(x + rng.gauss(0.0, cfg.noise)))
        for j in range(half):
            x = sum(v[t] * world.mix_object[t][j] for t in range(cfg.proto_dim))
            x += k * align * sum(v[t] * world.mix_inter_o[t][j] for t in range(cfg.proto_dim))
            feats.append(_f32(x + rng.gauss(0.0, cfg.noise)))
        return tuple(feats)

    samples: list = []
    for s, o in seen_sorted:
        for _ in range(cfg.train_per_pair):
            samples.append(Sample(emit(s, o), s, o, SPLIT_TRAIN))
    for s, o in seen_sorted:
        for _ in range(cfg.test_seen_per_pair):
            samples.append(Sample(emit(s, o), s, o, SPLIT_TEST_SEEN))
    for s, o in unseen:
        for _ in range(cfg.test_unseen_per_pair):
            samples.append(Sample(emit(s, o), s, o, SPLIT_TEST_UNSEEN))

    spec.seen_pairs = frozenset(seen)
    spec.num_train = len(seen_sorted) * cfg.train_per_pair
    spec.num_test_seen = len(seen_sorted) * cfg.test_seen_per_pair
    spec.num_test_unseen = len(unseen) * cfg.test_unseen_per_pair
    return world, samples


def make_synthetic_dataset(spec: DatasetSpec, cfg: WorldConfig | None = None) -> Dataset:
    world, samples = generate_synthetic(spec, cfg or WorldConfig())
    return Dataset(spec=spec, samples=samples, world=world)


def open_world_pairs(spec: DatasetSpec):
    """Full S x O product, state-major."""
    spec.validate()
    return [(s, o) for s in range(spec.num_states) for o in range(spec.num_objects)]


def minibatches(samples, batch_size: int, seed: int):
    """Seeded shuffle, then contiguous batches; the final partial batch stays."""
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    order = list(samples)
    random.Random(seed).shuffle(order)
    for i in range(0, len(order), batch_size):
        yield order[i:i + batch_size]


def epoch_seed(seed: int, epoch: int) -> int:
    """Distinct deterministic shuffle seed per (run seed, epoch)."""
    return seed * 1_000_003 + epoch


# ------------------------------------------------------------------ file I/O


def write_feature_file(path: str, spec: DatasetSpec, samples) -> None:
    spec.validate()
    path = str(path)
    d = spec.feature_dim
    for i, s in enumerate(samples):
        if len(s.features) != d:
            raise ContractError(f"sample {i} has {len(s.features)} features, spec says {d}")
        if not (0 <= s.state < spec.num_states and 0 <= s.object < spec.num_objects):
            raise ContractError(f"sample {i} labels ({s.state},{s.object}) out of range")
        if s.split not in (SPLIT_TRAIN, SPLIT_TEST_SEEN, SPLIT_TEST_UNSEEN):
            raise ContractError(f"sample {i} has unknown split {s.split}")

    if path.endswith(".csv"):
        lines = [",".join([f"f{j}" for j in range(d)] + ["state", "object", "split"])]
        for s in samples:
            cells = ["%.9g" % v for v in s.features]
            cells += [str(s.state), str(s.object), str(s.split)]
            lines.append(",".join(cells))
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
        return

    row = struct.Struct(f"<{d}fHHB")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(_HEADER.pack(spec.num_states, spec.num_objects, d, len(samples)))
        for s in samples:
            fh.write(row.pack(*s.features, s.state, s.object, s.split))


def _load_csv(path: str):
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file, header row required")
    header = lines[0].split(",")
    if len(header) < 4 or header[-3:] != ["state", "object", "split"]:
        raise ParseError(f"{path}: line 1: header must end with state,object,split")
    d = len(header) - 3
    samples = []
    max_s = max_o = 0
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != d + 3:
            raise ParseError(f"{path}: line {ln}: expected {d + 3} columns, got {len(cells)}")
        try:
            feats = tuple(_f32(float(c)) for c in cells[:d])
            st, ob, sp = int(cells[d]), int(cells[d + 1]), int(cells[d + 2])
        except ValueError as exc:
            raise ParseError(f"{path}: line {ln}: {exc}") from None
        if st < 0 or ob < 0:
            raise ParseError(f"{path}: line {ln}: negative label")
        if sp not in (SPLIT_TRAIN, SPLIT_TEST_SEEN, SPLIT_TEST_UNSEEN):
            raise ParseError(f"{path}: line {ln}: split {sp} not in 0/1/2")
        samples.append(Sample(feats, st, ob, sp))
        max_s = max(max_s, st)
        max_o = max(max_o, ob)
    if not samples:
        raise ParseError(f"{path}: no data rows")
    # CSV carries no |S|/|O| header; dims are inferred from the labels
    return (max_s + 1, max_o + 1, d), samples


def load_feature_file(path: str):
    """Read a feature file; returns (DatasetSpec, samples).

    The spec's seen_pairs is rebuilt from the train and test_seen rows;
    rng_seed of a loaded spec is 0 (the file does not store one).
    """
    path = str(path)
    if path.endswith(".csv"):
        (ns, no, d), samples = _load_csv(path)
    else:
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) < 8 or data[:8] != FEATURE_MAGIC:
            raise ParseError(f"{path}: bad magic at byte offset 0, want {FEATURE_MAGIC!r}")
        if len(data) < 8 + _HEADER.size:
            raise ParseError(f"{path}: truncated header at byte offset {len(data)}")
        ns, no, d, count = _HEADER.unpack_from(data, 8)
        if ns < 1 or no < 1 or d < 1:
            raise ParseError(f"{path}: degenerate header |S|={ns} |O|={no} d={d}")
        row = struct.Struct(f"<{d}fHHB")
        base = 8 + _HEADER.size
        need = base + count * row.size
        if len(data) < need:
            raise ParseError(
                f"{path}: truncated at byte offset {len(data)}: expected {need} bytes "
                f"for {count} samples of {row.size} bytes")
        if len(data) > need:
            raise ParseError(f"{path}: {len(data) - need} trailing bytes after byte offset {need}")
        samples = []
        for i in range(count):
            off = base + i * row.size
            fields = row.unpack_from(data, off)
            st, ob, sp = fields[d], fields[d + 1], fields[d + 2]
            if st >= ns:
                raise ParseError(f"{path}: sample {i} at byte offset {off}: state {st} out of range for |S|={ns}")
            if ob >= no:
                raise ParseError(f"{path}: sample {i} at byte offset {off}: object {ob} out of range for |O|={no}")
            if sp not in (SPLIT_TRAIN, SPLIT_TEST_SEEN, SPLIT_TEST_UNSEEN):
                raise ParseError(f"{path}: sample {i} at byte offset {off}: split {sp} not in 0/1/2")
            samples.append(Sample(tuple(fields[:d]), st, ob, sp))

    seen = set()
    unseen = set()
    for i, s in enumerate(samples):
        if s.split == SPLIT_TEST_UNSEEN:
            unseen.add((s.state, s.object))
        else:
            seen.add((s.state, s.object))
    clash = seen & unseen
    if clash:
        raise ParseError(f"{path}: pair {sorted(clash)[0]} appears in both seen and unseen splits")

    spec = DatasetSpec(
        num_states=ns, num_objects=no, feature_dim=d,
        seen_pairs=frozenset(seen),
        num_train=sum(1 for s in samples if s.split == SPLIT_TRAIN),
        num_test_seen=sum(1 for s in samples if s.split == SPLIT_TEST_SEEN),
        num_test_unseen=sum(1 for s in samples if s.split == SPLIT_TEST_UNSEEN),
        rng_seed=0,
    )
    return spec, samples


def load_dataset(path: str) -> Dataset:
    spec, samples = load_feature_file(path)
    return Dataset(spec=spec, samples=samples)


# ------------------------------------------------------- validation carving


def validation_view(dataset: Dataset, val_frac: float = 0.25, seed: int = 0) -> Dataset:
    """Carve a pseudo open-world view out of the training split.

    A slice of the seen pairs is relabeled unseen and their train samples
    become the view's test_unseen; the remaining pairs donate a quarter of
    their train samples as the view's test_seen. This gives the gamma sweep
    something to optimize without touching the real test splits. The model
    HAS trained on these samples, so the view is only a relative-ordering
    signal, not an unbiased score.
    """
    if not (0.0 < val_frac < 1.0):
        raise ContractError(f"val_frac must lie in (0,1), got {val_frac}")
    spec = dataset.spec
    train = dataset.train
    if not train:
        raise ContractError("validation view needs a nonempty train split")
    rng = random.Random(seed)
    pairs = sorted(spec.seen_pairs)
    want = max(1, round(val_frac * len(pairs)))

    # only relabel pairs whose removal keeps every primitive covered
    state_deg: dict = {}
    obj_deg: dict = {}
    for s, o in pairs:
        state_deg[s] = state_deg.get(s, 0) + 1
        obj_deg[o] = obj_deg.get(o, 0) + 1
    pseudo: set = set()
    for s, o in rng.sample(pairs, len(pairs)):
        if len(pseudo) >= want:
            break
        if state_deg[s] > 1 and obj_deg[o] > 1:
            pseudo.add((s, o))
            state_deg[s] -= 1
            obj_deg[o] -= 1
    if not pseudo:
        raise ContractError("could not hold out any pair without losing primitive coverage")

    kept = frozenset(p for p in pairs if p not in pseudo)
    per_pair: dict = {}
    out = []
    for s in train:
        key = (s.state, s.object)
        if key in pseudo:
            out.append(Sample(s.features, s.state, s.object, SPLIT_TEST_UNSEEN))
        else:
            n = per_pair.get(key, 0)
            per_pair[key] = n + 1
            split = SPLIT_TEST_SEEN if n % 4 == 0 else SPLIT_TRAIN
            out.append(Sample(s.features, s.state, s.object, split))

    view_spec = DatasetSpec(
        num_states=spec.num_states, num_objects=spec.num_objects,
        feature_dim=spec.feature_dim, seen_pairs=kept,
        num_train=sum(1 for s in out if s.split == SPLIT_TRAIN),
        num_test_seen=sum(1 for s in out if s.split == SPLIT_TEST_SEEN),
        num_test_unseen=sum(1 for s in out if s.split == SPLIT_TEST_UNSEEN),
        rng_seed=spec.rng_seed,
    )
    return Dataset(spec=view_spec, samples=out)
