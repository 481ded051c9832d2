"""The network graph: trunk, primitive classifiers, attention, KD stack.

Thirteen named subnetworks over a shared trunk. The trunk maps a d-dim
feature to 2h units; the first h are the state branch z_s, the last h the
object branch z_o. Attention crosses branches (state attention reads z_o,
object attention reads z_s). The KD stack generates disentangled features
gen_s/gen_o and exposes three views of the denoiser/discriminator heads:

  *_det   live weights on detached inputs (what the adversary trains on)
  *_froz  frozen (detached) weights on live generated inputs (what the
          generator trains against)
  pc_*    disentangled classifier probabilities, live everywhere (trains
          both the classifiers and, through gen features, the generators)

Keeping all three views in one ForwardBundle lets each loss pick the view
with the right gradient flow instead of re-deriving stop-gradient rules.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import ndkit as nd
from .errors import ContractError
from .ndkit import Tensor

# ---------------------------------------------------------------- parameters


@dataclass
class Linear:
    w: Tensor  # (fan_in, fan_out)
    b: Tensor  # (fan_out,)

    def __call__(self, x: Tensor) -> Tensor:
        return nd.add_bias(nd.matmul(x, self.w), self.b)

    def frozen(self, x: Tensor) -> Tensor:
        """Apply with weights treated as constants (no gradient into w, b)."""
        return nd.add_bias(nd.matmul(x, self.w.detach()), self.b.detach())


def _init_linear(rng: random.Random, fan_in: int, fan_out: int) -> Linear:
    bound = 1.0 / (fan_in ** 0.5)
    w = nd.zeros((fan_in, fan_out), requires_grad=True)
    for i in range(w.size):
        w.values[i] = rng.uniform(-bound, bound)
    b = nd.zeros((fan_out,), requires_grad=True)
    for i in range(b.size):
        b.values[i] = rng.uniform(-bound, bound)
    return Linear(w, b)


# layer names in canonical order; fixes both init draws and checkpoint layout
_LAYER_SPECS = (
    ("f_e1", "d", "h"),
    ("f_e2", "h", "2h"),
    ("f_s", "h", "S"),
    ("f_o", "h", "O"),
    ("f_sa1", "h", "h"),
    ("f_sa2", "h", "h"),
    ("f_sa3", "h", "S"),
    ("f_oa1", "h", "h"),
    ("f_oa2", "h", "h"),
    ("f_oa3", "h", "O"),
    ("f_sg1", "h", "h"),
    ("f_sg2", "h", "h"),
    ("f_og1", "h", "h"),
    ("f_og2", "h", "h"),
    ("f_ds", "h", "S"),
    ("f_do", "h", "O"),
    ("f_s_den", "h", "O"),
    ("f_o_den", "h", "S"),
    ("f_s_dis", "h", "1"),
    ("f_o_dis", "h", "1"),
)

PARAM_GROUPS = {
    "trunk": ("f_e1", "f_e2"),
    "sp": ("f_s", "f_o"),
    "attention": ("f_sa1", "f_sa2", "f_sa3", "f_oa1", "f_oa2", "f_oa3"),
    "generators": ("f_sg1", "f_sg2", "f_og1", "f_og2"),
    "disentangled": ("f_ds", "f_do"),
    "denoisers": ("f_s_den", "f_o_den"),
    "discriminators": ("f_s_dis", "f_o_dis"),
}


@dataclass
class ModelParams:
    num_states: int
    num_objects: int
    feature_dim: int
    hidden: int
    layers: dict

    @classmethod
    def create(cls, num_states: int, num_objects: int, feature_dim: int,
               hidden: int = 64, seed: int = 0) -> "ModelParams":
        if min(num_states, num_objects, feature_dim, hidden) < 1:
            raise ContractError("all model dims must be positive")
        dims = {"d": feature_dim, "h": hidden, "2h": 2 * hidden,
                "S": num_states, "O": num_objects, "1": 1}
        rng = random.Random(seed)
        layers = {name: _init_linear(rng, dims[fi], dims[fo])
                  for name, fi, fo in _LAYER_SPECS}
        return cls(num_states, num_objects, feature_dim, hidden, layers)

    def layer(self, name: str) -> Linear:
        return self.layers[name]

    def named_parameters(self):
        out = []
        for name, _, _ in _LAYER_SPECS:
            lin = self.layers[name]
            out.append((f"{name}.w", lin.w))
            out.append((f"{name}.b", lin.b))
        return out

    def group_parameters(self, group: str):
        names = PARAM_GROUPS.get(group)
        if names is None:
            raise ContractError(f"unknown parameter group {group!r}; have {sorted(PARAM_GROUPS)}")
        out = []
        for name in names:
            lin = self.layers[name]
            out.extend((lin.w, lin.b))
        return out

    def zero_grads(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None


def zero_layer(lin: Linear) -> None:
    """Zero a layer in place (test helper: zero logits mean uniform/0.5)."""
    for i in range(lin.w.size):
        lin.w.values[i] = 0.0
    for i in range(lin.b.size):
        lin.b.values[i] = 0.0


# ------------------------------------------------------------------- heads


def trunk_features(params: ModelParams, x: Tensor):
    """Shared trunk: d -> h (ReLU) -> 2h, split into (z_s, z_o)."""
    if len(x.shape) != 2 or x.shape[1] != params.feature_dim:
        raise ContractError(
            f"expected features of shape (batch, {params.feature_dim}), got {x.shape}")
    h1 = nd.relu(params.layer("f_e1")(x))
    z = params.layer("f_e2")(h1)
    h = params.hidden
    return nd.slice_cols(z, 0, h), nd.slice_cols(z, h, 2 * h)


def state_attention(params: ModelParams, z_o: Tensor) -> Tensor:
    """a_s = f_sa(z_o): which states the object branch finds plausible."""
    t = nd.relu(params.layer("f_sa1")(z_o))
    t = nd.relu(params.layer("f_sa2")(t))
    return nd.sigmoid(params.layer("f_sa3")(t))


def object_attention(params: ModelParams, z_s: Tensor) -> Tensor:
    """a_o = f_oa(z_s): which objects the state branch finds plausible."""
    t = nd.relu(params.layer("f_oa1")(z_s))
    t = nd.relu(params.layer("f_oa2")(t))
    return nd.sigmoid(params.layer("f_oa3")(t))


def generate_features(params: ModelParams, z_s: Tensor, z_o: Tensor):
    """Disentangling generators: gen_s = f_sg(z_s), gen_o = f_og(z_o)."""
    gs = params.layer("f_sg2")(nd.relu(params.layer("f_sg1")(z_s)))
    go = params.layer("f_og2")(nd.relu(params.layer("f_og1")(z_o)))
    return gs, go


def disentangled_probs(params: ModelParams, z_s: Tensor, z_o: Tensor):
    """p_c: softmaxed disentangled classifiers on generated features."""
    gen_s, gen_o = generate_features(params, z_s, z_o)
    return (nd.softmax(params.layer("f_ds")(gen_s)),
            nd.softmax(params.layer("f_do")(gen_o)))


def attention_fuse(a: Tensor, p: Tensor) -> Tensor:
    """(1 + a) * p elementwise; lands strictly between p and 2p."""
    return nd.add(nd.mul(a, p), p)


# ----------------------------------------------------------------- forward


@dataclass
class ForwardBundle:
    z_s: Tensor
    z_o: Tensor
    p_s: Tensor
    p_o: Tensor
    a_s: Tensor
    a_o: Tensor
    gen_s: Tensor
    gen_o: Tensor
    # disentangled classifier probabilities, live graph
    pc_s_real: Tensor
    pc_s_gen: Tensor
    pc_o_real: Tensor
    pc_o_gen: Tensor
    # same heads on detached inputs (adversary-phase classifier view)
    pc_s_real_det: Tensor
    pc_s_gen_det: Tensor
    pc_o_real_det: Tensor
    pc_o_gen_det: Tensor
    # denoisers: f_s_den reads state features and predicts objects,
    # f_o_den reads object features and predicts states
    den_s_real_det: Tensor
    den_s_gen_det: Tensor
    den_o_real_det: Tensor
    den_o_gen_det: Tensor
    den_s_gen_froz: Tensor
    den_o_gen_froz: Tensor
    # discriminators: real/fake score per branch, shape (batch, 1)
    dis_s_real_det: Tensor
    dis_s_gen_det: Tensor
    dis_o_real_det: Tensor
    dis_o_gen_det: Tensor
    dis_s_gen_froz: Tensor
    dis_o_gen_froz: Tensor

    def named_fields(self):
        return list(self.__dict__.items())


def forward(params: ModelParams, x: Tensor) -> ForwardBundle:
    z_s, z_o = trunk_features(params, x)
    p_s = nd.softmax(params.layer("f_s")(z_s))
    p_o = nd.softmax(params.layer("f_o")(z_o))
    a_s = state_attention(params, z_o)
    a_o = object_attention(params, z_s)
    gen_s, gen_o = generate_features(params, z_s, z_o)

    f_ds, f_do = params.layer("f_ds"), params.layer("f_do")
    pc_s_real = nd.softmax(f_ds(z_s))
    pc_s_gen = nd.softmax(f_ds(gen_s))
    pc_o_real = nd.softmax(f_do(z_o))
    pc_o_gen = nd.softmax(f_do(gen_o))

    z_s_d, z_o_d = z_s.detach(), z_o.detach()
    gen_s_d, gen_o_d = gen_s.detach(), gen_o.detach()

    pc_s_real_det = nd.softmax(f_ds(z_s_d))
    pc_s_gen_det = nd.softmax(f_ds(gen_s_d))
    pc_o_real_det = nd.softmax(f_do(z_o_d))
    pc_o_gen_det = nd.softmax(f_do(gen_o_d))

    f_s_den, f_o_den = params.layer("f_s_den"), params.layer("f_o_den")
    den_s_real_det = nd.softmax(f_s_den(z_s_d))
    den_s_gen_det = nd.softmax(f_s_den(gen_s_d))
    den_o_real_det = nd.softmax(f_o_den(z_o_d))
    den_o_gen_det = nd.softmax(f_o_den(gen_o_d))
    den_s_gen_froz = nd.softmax(f_s_den.frozen(gen_s))
    den_o_gen_froz = nd.softmax(f_o_den.frozen(gen_o))

    f_s_dis, f_o_dis = params.layer("f_s_dis"), params.layer("f_o_dis")
    dis_s_real_det = nd.sigmoid(f_s_dis(z_s_d))
    dis_s_gen_det = nd.sigmoid(f_s_dis(gen_s_d))
    dis_o_real_det = nd.sigmoid(f_o_dis(z_o_d))
    dis_o_gen_det = nd.sigmoid(f_o_dis(gen_o_d))
    dis_s_gen_froz = nd.sigmoid(f_s_dis.frozen(gen_s))
    dis_o_gen_froz = nd.sigmoid(f_o_dis.frozen(gen_o))

    return ForwardBundle(
        z_s=z_s, z_o=z_o, p_s=p_s, p_o=p_o, a_s=a_s, a_o=a_o,
        gen_s=gen_s, gen_o=gen_o,
        pc_s_real=pc_s_real, pc_s_gen=pc_s_gen,
        pc_o_real=pc_o_real, pc_o_gen=pc_o_gen,
        pc_s_real_det=pc_s_real_det, pc_s_gen_det=pc_s_gen_det,
        pc_o_real_det=pc_o_real_det, pc_o_gen_det=pc_o_gen_det,
        den_s_real_det=den_s_real_det, den_s_gen_det=den_s_gen_det,
        den_o_real_det=den_o_real_det, den_o_gen_det=den_o_gen_det,
        den_s_gen_froz=den_s_gen_froz, den_o_gen_froz=den_o_gen_froz,
        dis_s_real_det=dis_s_real_det, dis_s_gen_det=dis_s_gen_det,
        dis_o_real_det=dis_o_real_det, dis_o_gen_det=dis_o_gen_det,
        dis_s_gen_froz=dis_s_gen_froz, dis_o_gen_froz=dis_o_gen_froz,
    )


def batch_tensors(samples):
    """Stack a sample batch into (features, state labels, object labels)."""
    if not samples:
        raise ContractError("empty batch")
    d = len(samples[0].features)
    x = nd.zeros((len(samples), d))
    for i, s in enumerate(samples):
        if len(s.features) != d:
            raise ContractError(f"sample {i} has {len(s.features)} features, expected {d}")
        base = i * d
        for j, v in enumerate(s.features):
            x.values[base + j] = v
    return x, [s.state for s in samples], [s.object for s in samples]
