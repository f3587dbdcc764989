"""Finite-difference checks of tape gradients."""

import numpy as np

from partialfm.learn.tape import Tape

from .oracles import central_difference


def tape_gradient(build, inputs):
    """Backward-pass gradients of ``build(tape, values)`` w.r.t. ``inputs``."""
    tape = Tape()
    vals = {k: tape.param(v, k) for k, v in inputs.items()}
    out = build(tape, vals)
    return float(out.data), tape.backward(out)


def scalar_of(build, inputs, name):
    """``x -> build(...)`` with only input ``name`` varying (for FD)."""
    def f(x):
        tape = Tape()
        vals = {k: tape.const(x if k == name else v) for k, v in inputs.items()}
        return float(build(tape, vals).data)
    return f


def max_rel_error(build, inputs, h=1e-5):
    """Largest relative error between tape and central-difference gradients."""
    _, grads = tape_gradient(build, inputs)
    worst = 0.0
    for name, x in inputs.items():
        fd = central_difference(scalar_of(build, inputs, name), x, h)
        denom = max(np.linalg.norm(fd), 1e-8)
        worst = max(worst, float(np.linalg.norm(grads[name] - fd) / denom))
    return worst


def directional_rel_error(build, params, rng, h=1e-5):
    """Per-tensor directional derivative check, for large parameter sets.

    For each tensor the direction ``u`` is the normalized sum of the unit
    gradient and a random unit vector, so ``<grad, u>`` stays well away from
    zero and a relative comparison with ``(f(x + h u) - f(x - h u)) / 2h``
    is meaningful. Returns ``{name: relative error}``.

    The denominator is floored at ``1e-4`` times the norm of the whole
    gradient. A tensor whose loss is exactly invariant (a bias feeding an
    instance normalization) then compares rounding noise against the
    scale of the real gradient rather than against itself.
    """
    _, grads = tape_gradient(build, params)
    floor = max(1e-4 * np.sqrt(sum(float(np.sum(g ** 2)) for g in grads.values())), 1e-12)
    out = {}
    for name, x in params.items():
        g = grads[name]
        u = rng.standard_normal(np.shape(x))
        u /= np.linalg.norm(u)
        gn = np.linalg.norm(g)
        if gn > 0:
            mixed = u + g / gn
            nm = np.linalg.norm(mixed)
            # a one-element tensor can draw exactly minus the gradient
            u = mixed / nm if nm > 1e-8 else g / gn
        f = scalar_of(build, params, name)
        fd = (f(x + h * u) - f(x - h * u)) / (2 * h)
        an = float(np.sum(g * u))
        out[name] = abs(an - fd) / max(abs(fd), abs(an), floor)
    return out
