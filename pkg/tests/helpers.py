import numpy as np

from oracles import central_diff, rel_err
from weakseg.model import ScorerModel, forward
from weakseg.pseudolabel import masked_labels
from weakseg.series import SynthConfig, fit_normalization, generate_synthetic, normalized, split_dataset
from weakseg.training import alignment_loss, classification_loss, instance_step, pseudo_label

SMALL_SYNTH = SynthConfig(n_instances=24, d_vars=2, length=64, anomaly_ratio=0.1,
                          min_segment_length=6, max_segment_length=12)


def small_splits(seed=0):
    ds = generate_synthetic(SMALL_SYNTH, seed)
    parts = split_dataset(ds, (5, 2, 3), seed)
    stats = fit_normalization(parts["train"])
    return {k: normalized(v, stats) for k, v in parts.items()}


def perturbed_model(seed, D=2, d=4, k=2, n=2, pooling="max", scale=0.3):
    m = ScorerModel.create(D, d_hidden=d, filter_size=k, n_layers=n, pooling=pooling, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for p in m.parameters():
        p += rng.normal(0, scale, size=p.shape)
    return m


def full_loss_fd_check(m, x, y, config, use_alignment=True):
    """Worst relative error of instance_step gradients against finite differences of L_c + L_a.

    Pseudo-labels are piecewise constant in the parameters, so they are frozen
    at the base point for the finite differences.
    """
    _, _, tape = forward(m, x)
    bits = pseudo_label(m, tape, config.L, config.tau)
    pos, neg = masked_labels(bits, y)

    def loss():
        _, s, _ = forward(m, x)
        la = alignment_loss(s, pos, neg, config.beta, config.gamma)[0] if use_alignment else 0.0
        return classification_loss(s.global_, y) + la

    rep, grads, bits2 = instance_step(m, x, y, config, use_alignment)
    np.testing.assert_array_equal(bits, bits2)
    worst = 0.0
    analytic = [a for pair in zip(grads.weights, grads.biases) for a in pair] + [grads.anomaly_weight]
    for p, a in zip(m.parameters(), analytic):
        def f(v, p=p):
            saved = p.copy()
            p[...] = v
            out = loss()
            p[...] = saved
            return out

        worst = max(worst, rel_err(a, central_diff(f, p.copy(), 1e-6)))
    return rep, worst
