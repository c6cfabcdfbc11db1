"""Regularized Stein discrepancy estimates and the adversarial losses.

For samples ``u_k ~ q`` with target scores ``s_k = grad log p(u_k)`` and a
test network ``phi``::

    RSD = mean_k [ s_k . phi(u_k) + w_k^T J_phi(u_k) w_k ] - lam * mean_k |phi(u_k)|^2

where the Jacobian trace is replaced by a Hutchinson probe ``w_k``. The
probe term is a JVP followed by an inner product, all on the tape, so it
can be differentiated with respect to the network parameters and, for
the generator, with respect to the samples.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets
from .errors import DimensionError, InputError

GAUSSIAN = "gaussian"
RADEMACHER = "rademacher"
ATTACHED = "attached"
DETACHED = "detached"


@dataclass(frozen=True)
class RsdConfig:
    lam: float = 10.0
    num_probes: int = 1
    probe_dist: str = GAUSSIAN
    score_mode: str = ATTACHED

    def __post_init__(self):
        if not self.lam > 0:
            raise InputError(f"lambda must be positive, got {self.lam}")
        if int(self.num_probes) < 1:
            raise InputError("need at least one Hutchinson probe per sample")
        if self.probe_dist not in (GAUSSIAN, RADEMACHER):
            raise InputError(f"probe_dist must be {GAUSSIAN!r} or {RADEMACHER!r}")
        if self.score_mode not in (ATTACHED, DETACHED):
            raise InputError(f"score_mode must be {ATTACHED!r} or {DETACHED!r}")


def draw_probes(rng, k, d, num_probes=1, dist=GAUSSIAN):
    """Probe vectors shaped ``(k, num_probes, d)``."""
    if dist == GAUSSIAN:
        return rng.standard_normal((k, num_probes, d))
    if dist == RADEMACHER:
        return rng.integers(0, 2, size=(k, num_probes, d)) * 2.0 - 1.0
    raise InputError(f"unknown probe distribution {dist!r}")


def _as_var(u, net):
    if isinstance(u, ad.Var):
        return u
    tape = next((v.tape for v in net.params.values() if isinstance(v, ad.Var)), None) or ad.Tape()
    return tape.var(u)


def _probe_term(out, u, probes):
    k, p, d = np.shape(probes)
    acc = None
    for j in range(p):
        w = probes[:, j, :]
        t = ad.push_tangents(out, [u], [w])
        term = ad.sum(ad.mul(t, w), 1)
        acc = term if acc is None else ad.add(acc, term)
    return ad.mul(acc, 1.0 / p) if p > 1 else acc


def _check_probes(u, probes):
    us = np.shape(ad.value_of(u))
    ps = np.shape(probes)
    if len(ps) != 3 or ps[0] != us[0] or ps[2] != us[1]:
        raise DimensionError(f"probes must be (K={us[0]}, P, D={us[1]}), got {ps}")


def hutchinson_div(net, u, probes):
    """Per-sample probe estimate of ``tr(grad phi(u))``, shape ``(K,)``."""
    uv = _as_var(u, net)
    _check_probes(uv, probes)
    out = nets.discriminator_forward(net, uv)
    return _probe_term(out, uv, probes)


def _terms(cfg, scores, u, net, probes):
    uv = _as_var(u, net)
    us = np.shape(ad.value_of(uv))
    if np.shape(ad.value_of(scores)) != us:
        raise DimensionError(f"scores shape {np.shape(ad.value_of(scores))} does not match samples {us}")
    _check_probes(uv, probes)
    phi = nets.discriminator_forward(net, uv)
    stein = ad.add(ad.sum(ad.mul(scores, phi), 1), _probe_term(phi, uv, probes))
    reg = ad.sum(ad.mul(phi, phi), 1)
    return uv, phi, stein, reg


def rsd_estimate(cfg, scores, u, net, rng=None, probes=None):
    """Monte Carlo RSD; probes are drawn from ``rng`` unless given."""
    if probes is None:
        us = np.shape(ad.value_of(u))
        probes = draw_probes(rng, us[0], us[1], cfg.num_probes, cfg.probe_dist)
    _, _, stein, reg = _terms(cfg, scores, u, net, probes)
    k = np.shape(ad.value_of(stein))[0]
    return ad.mul(ad.sub(ad.sum(stein), ad.mul(ad.sum(reg), cfg.lam)), 1.0 / k)


def stein_terms(cfg, scores, u, net, probes):
    """Per-sample ``s.phi + probe term`` and ``|phi|^2`` as constant arrays."""
    _, _, stein, reg = _terms(cfg, np.asarray(ad.value_of(scores)), np.asarray(ad.value_of(u)), net, probes)
    return np.asarray(ad.value_of(stein)), np.asarray(ad.value_of(reg))


def discriminator_objective(cfg, scores, u, net, rng=None, probes=None):
    """Loss minimized by the discriminator: ``-RSD`` with scores held constant."""
    return ad.neg(rsd_estimate(cfg, ad.stop_gradient(scores), ad.stop_gradient(u), net, rng, probes))


def generator_objective(cfg, spec, gen, disc, eps, score_fn, rng=None, probes=None):
    """RSD at ``u = g(eps)``, the loss minimized by the generator.

    ``score_fn(u)`` returns target scores. In attached mode it receives the
    sample Var and must return a Var built on the same tape (a retained
    gradient); in detached mode it receives plain values and its output is
    a constant.
    """
    u = nets.generator_forward(spec, gen, eps)
    if cfg.score_mode == ATTACHED:
        scores = score_fn(u)
    else:
        scores = np.asarray(ad.value_of(score_fn(np.array(ad.value_of(u)))))
    return rsd_estimate(cfg, scores, u, disc, rng, probes)


def generator_surrogate(cfg, u, disc, scores, hvp, probes):
    """Scalar whose sample-gradient equals that of the attached-mode RSD.

    ``scores`` and ``hvp`` are constants evaluated at ``u``: the target
    score and its Jacobian applied to ``phi(u)``. Returns
    ``(surrogate, rsd_value)``. With ``hvp=None`` this is the detached
    objective.
    """
    uv, phi, stein, reg = _terms(cfg, scores, u, disc, probes)
    k = np.shape(ad.value_of(stein))[0]
    rsd = ad.mul(ad.sub(ad.sum(stein), ad.mul(ad.sum(reg), cfg.lam)), 1.0 / k)
    rsd_value = float(ad.value_of(rsd))
    if hvp is None:
        return rsd, rsd_value
    return ad.add(rsd, ad.mul(ad.sum(ad.mul(hvp, uv)), 1.0 / k)), rsd_value


def optimal_value(a, lam):
    """Closed-form maximum of ``a.c - lam |c|^2`` over ``c`` and its argmax."""
    a = np.asarray(a, dtype=float)
    if not lam > 0:
        raise InputError("the maximum is unbounded unless lambda > 0")
    return float(a @ a) / (4.0 * lam), a / (2.0 * lam)
