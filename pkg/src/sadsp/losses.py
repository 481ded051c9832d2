"""The seven training objectives and their per-phase totals.

Min-max terms come in explicit pairs: *_max losses train the adversaries
(denoisers, discriminators) on detached features, *_min losses train the
generators against frozen adversary weights. Which bundle view each loss
reads is the whole stop-gradient story; nothing here calls detach itself.

Batch reduction is mean, not sum, so learning rates transfer across batch
sizes. Denoiser MSE terms carry an extra 1/|S| or 1/|O| factor on top of
the batch mean.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ndkit as nd
from .errors import ContractError
from .model import ForwardBundle, attention_fuse
from .ndkit import Tensor

GENERATOR_PHASE = "generator_phase"
ADVERSARY_PHASE = "adversary_phase"
REGIMES = (GENERATOR_PHASE, ADVERSARY_PHASE)


@dataclass
class LossReport:
    l_sp: float
    l_att: float
    l_dc: float
    l_den_max: float
    l_den_min: float
    l_dis_max: float
    l_dis_min: float
    l_total: float

    def components(self):
        return dict(self.__dict__)


# ------------------------------------------------------------------ helpers


def _ce(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the labelled class."""
    return nd.mean_all(nd.neg(nd.log(nd.pick(probs, labels))))


def _one_hot(rows: int, width: int, labels) -> Tensor:
    t = nd.zeros((rows, width))
    for r, k in enumerate(labels):
        if not 0 <= k < width:
            raise ContractError(f"label {k} out of range [0, {width})")
        t.values[r * width + k] = 1.0
    return t


def _mse_scaled(probs: Tensor, target: Tensor) -> Tensor:
    """(1/(batch*width)) * sum of squared differences."""
    rows, width = probs.shape
    diff = nd.sub(probs, target)
    return nd.scale(nd.sum_all(nd.mul(diff, diff)), 1.0 / (rows * width))


def _mean_neg_log(t: Tensor) -> Tensor:
    return nd.mean_all(nd.neg(nd.log(t)))


# ------------------------------------------------------------------- losses


def loss_sp(bundle: ForwardBundle, s_true, o_true) -> Tensor:
    """Independent cross-entropy on the two primitive classifiers."""
    return nd.add(_ce(bundle.p_s, s_true), _ce(bundle.p_o, o_true))


def loss_att(bundle: ForwardBundle, s_true, o_true) -> Tensor:
    """Cross-entropy on attention-fused probabilities (1 + a) * p.

    The fused value can exceed 1, so this loss may go negative.
    """
    fused_s = attention_fuse(bundle.a_s, bundle.p_s)
    fused_o = attention_fuse(bundle.a_o, bundle.p_o)
    return nd.add(_ce(fused_s, s_true), _ce(fused_o, o_true))


def loss_dc(bundle: ForwardBundle, s_true, o_true, detached: bool = False) -> Tensor:
    """Disentangled-classifier cross-entropy, averaged over real + generated.

    detached=True reads the views whose inputs are constants, so gradients
    stop at f_ds/f_do (the adversary-phase variant).
    """
    if detached:
        s_real, s_gen = bundle.pc_s_real_det, bundle.pc_s_gen_det
        o_real, o_gen = bundle.pc_o_real_det, bundle.pc_o_gen_det
    else:
        s_real, s_gen = bundle.pc_s_real, bundle.pc_s_gen
        o_real, o_gen = bundle.pc_o_real, bundle.pc_o_gen
    state_side = nd.scale(nd.add(_ce(s_real, s_true), _ce(s_gen, s_true)), 0.5)
    object_side = nd.scale(nd.add(_ce(o_real, o_true), _ce(o_gen, o_true)), 0.5)
    return nd.add(state_side, object_side)


def loss_den_max(bundle: ForwardBundle, s_true, o_true) -> Tensor:
    """Denoiser recovery MSE against one-hot cross-branch labels.

    f_o_den reads object features and must recover the state; f_s_den reads
    state features and must recover the object. Real and generated features
    are averaged; features are constants here, so only f_den learns.
    """
    rows = bundle.p_s.shape[0]
    e_s = _one_hot(rows, bundle.den_o_real_det.shape[1], s_true)
    e_o = _one_hot(rows, bundle.den_s_real_det.shape[1], o_true)
    state_term = nd.scale(nd.add(_mse_scaled(bundle.den_o_real_det, e_s),
                                 _mse_scaled(bundle.den_o_gen_det, e_s)), 0.5)
    object_term = nd.scale(nd.add(_mse_scaled(bundle.den_s_real_det, e_o),
                                  _mse_scaled(bundle.den_s_gen_det, e_o)), 0.5)
    return nd.add(state_term, object_term)


def loss_den_min(bundle: ForwardBundle) -> Tensor:
    """Pull frozen-denoiser outputs on generated features toward uniform.

    Zero means the denoisers can no longer tell which cross-branch label a
    generated feature came from; gradients reach only the generators.
    """
    q_state = bundle.den_o_gen_froz
    q_object = bundle.den_s_gen_froz
    rows, n_s = q_state.shape
    n_o = q_object.shape[1]
    u_s = nd.full((rows, n_s), 1.0 / n_s)
    u_o = nd.full((rows, n_o), 1.0 / n_o)
    return nd.add(_mse_scaled(q_state, u_s), _mse_scaled(q_object, u_o))


def loss_dis_max(bundle: ForwardBundle) -> Tensor:
    """Discriminator objective: real features score 1, generated score 0."""
    real = nd.add(_mean_neg_log(bundle.dis_s_real_det),
                  _mean_neg_log(bundle.dis_o_real_det))
    fake = nd.add(_mean_neg_log(nd.rsub(1.0, bundle.dis_s_gen_det)),
                  _mean_neg_log(nd.rsub(1.0, bundle.dis_o_gen_det)))
    return nd.add(real, fake)


def loss_dis_min(bundle: ForwardBundle) -> Tensor:
    """Generator objective: fool the frozen discriminators toward 1."""
    return nd.add(_mean_neg_log(bundle.dis_s_gen_froz),
                  _mean_neg_log(bundle.dis_o_gen_froz))


# -------------------------------------------------------------------- total


def loss_total(bundle: ForwardBundle, s_true, o_true, regime: str):
    """All seven components plus the regime's trainable total.

    generator_phase: l_sp + l_att + l_dc + l_den_min + l_dis_min
    adversary_phase: l_dc(detached) + l_den_max + l_dis_max
    Returns (LossReport, total tensor); the report always carries every
    component, the tensor only sums the regime's terms.
    """
    if regime not in REGIMES:
        raise ContractError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    l_sp = loss_sp(bundle, s_true, o_true)
    l_att = loss_att(bundle, s_true, o_true)
    l_dc = loss_dc(bundle, s_true, o_true, detached=(regime == ADVERSARY_PHASE))
    l_den_max = loss_den_max(bundle, s_true, o_true)
    l_den_min = loss_den_min(bundle)
    l_dis_max = loss_dis_max(bundle)
    l_dis_min = loss_dis_min(bundle)

    if regime == GENERATOR_PHASE:
        parts = (l_sp, l_att, l_dc, l_den_min, l_dis_min)
    else:
        parts = (l_dc, l_den_max, l_dis_max)
    total = parts[0]
    for p in parts[1:]:
        total = nd.add(total, p)

    report = LossReport(
        l_sp=l_sp.item(), l_att=l_att.item(), l_dc=l_dc.item(),
        l_den_max=l_den_max.item(), l_den_min=l_den_min.item(),
        l_dis_max=l_dis_max.item(), l_dis_min=l_dis_min.item(),
        l_total=total.item(),
    )
    return report, total
