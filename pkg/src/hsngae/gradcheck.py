"""Finite-difference checks over every primitive, layer and loss on small graphs."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Parameter, grad_check
from .layers import Decoder, Encoder, GaeHyper, GaeModel, GcnLayer, MlpHead, MlpHyper, diffpool_forward
from .losses import (
    LossWeights,
    associative_loss,
    autoencoder_loss,
    classification_loss,
    pooling_loss,
    reconstruction_loss,
    transition_probabilities,
    visit_loss,
    walker_loss,
)
from .sitegraph import normalize_adjacency

TOL = 1e-4
STEP = 1e-5
SMALL = GaeHyper(n_features=6, gcn_hidden=5, n_h=3, f_h=2, d_dec=4)


@dataclass
class CheckResult:
    name: str
    report: GradCheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        return f"{self.name:<24} {self.report}"


def _param(name: str, rng: np.random.Generator, *shape, low=-1.0, high=1.0) -> Parameter:
    return Parameter(name, rng.uniform(low, high, size=shape))


def _away_from_zero(name: str, rng: np.random.Generator, *shape) -> Parameter:
    """Entries with |v| in [0.2, 1] so kinks of relu and |.| are never straddled by the step."""
    v = rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Parameter(name, v)


def _weighted(out: ad.Tensor, r: np.ndarray) -> ad.Tensor:
    """Scalar probe mean(out * r); a fixed random r exercises every output entry."""
    return ad.mean(ad.hadamard(out, r))


def _graph(rng: np.random.Generator, n: int) -> np.ndarray:
    a = (rng.random((n, n)) < 0.5).astype(float)
    a = np.triu(a, 1)
    return normalize_adjacency(a + a.T)


def _features(rng: np.random.Generator, n: int, f: int = 6) -> np.ndarray:
    return rng.integers(0, 4, size=(n, f)).astype(float)


# -- primitives --------------------------------------------------------------


# ops are looked up by name at call time so a patched primitive is what gets checked


def _unary(op: str, make=_param):
    def build(rng):
        x = make("x", rng, 3, 4)
        r = rng.normal(size=getattr(ad, op)(x).shape)
        return (lambda: _weighted(getattr(ad, op)(x), r)), [x]
    return build


def _binary(op: str, shape_a, shape_b, out_shape):
    def build(rng):
        a, b = _param("a", rng, *shape_a), _param("b", rng, *shape_b)
        r = rng.normal(size=out_shape)
        return (lambda: _weighted(getattr(ad, op)(a, b), r)), [a, b]
    return build


def _positive(name, rng, *shape):
    return _param(name, rng, *shape, low=0.1, high=2.0)


def _reduction(op: str, make=_param, shape=(2, 3, 4)):
    def build(rng):
        x = make("x", rng, *shape)
        return (lambda: ad.mean(getattr(ad, op)(x))), [x]
    return build


def _reshape(rng):
    x = _param("x", rng, 3, 4)
    r = rng.normal(size=(2, 6))
    return (lambda: _weighted(ad.reshape(x, (2, 6)), r)), [x]


def _scale(rng):
    x = _param("x", rng, 3, 4)
    r = rng.normal(size=(3, 4))
    return (lambda: _weighted(ad.scale(x, -2.5), r)), [x]


# -- layers ------------------------------------------------------------------


def _gcn(activation: str):
    def build(rng):
        n = 5
        a, x = _graph(rng, n), _features(rng, n)
        layer = GcnLayer.create("gcn.w", 6, 4, activation, rng)
        r = rng.normal(size=(n, 4))
        return (lambda: _weighted(layer(a, x), r)), [layer.weight]
    return build


def _diffpool(rng):
    n = 5
    a = _graph(rng, n)
    x = rng.uniform(0, 1, size=(n, 4))
    gz = GcnLayer.create("pool.gcn_z", 4, 3, "tanh", rng)
    gp = GcnLayer.create("pool.gcn_p", 4, 2, "linear", rng)
    ra, rx = rng.normal(size=(2, 2)), rng.normal(size=(2, 3))

    def f():
        a_enc, pooled, s = diffpool_forward(a, x, gz, gp)
        return ad.add(_weighted(a_enc, ra), _weighted(pooled, rx))
    return f, [gz.weight, gp.weight]


def _encoder(rng):
    n = 6
    a, x = _graph(rng, n), _features(rng, n)
    enc = Encoder(SMALL, rng)
    rz, ra = rng.normal(size=(SMALL.n_h, SMALL.f_h)), rng.normal(size=(SMALL.n_h, SMALL.n_h))

    def f():
        out = enc(a, x)
        return ad.add(_weighted(out.z, rz), _weighted(out.a_enc, ra))
    return f, enc.parameters()


def _decoder(rng):
    n = 6
    a, x = _graph(rng, n), _features(rng, n)
    enc = Encoder(SMALL, rng)
    dec = Decoder(SMALL, rng)
    out = enc(a, x)
    a_enc, s = out.a_enc.value, out.s.value
    # positive codes and weights keep both relus active so every weight gets a gradient
    z = rng.uniform(0.2, 1.0, size=out.z.shape)
    for p in dec.parameters():
        p.value[...] = rng.uniform(0.05, 1.0, size=p.shape)

    def f():
        return reconstruction_loss(x, dec(a_enc, a, s, z))
    return f, dec.parameters()


def _mlp(rng):
    mlp = MlpHead(MlpHyper(5, 4), seed=int(rng.integers(1 << 30)))
    for p in mlp.parameters():
        p.value[...] = rng.uniform(-0.5, 0.5, size=p.shape)
    feats = rng.normal(size=(4, 5))
    labels = rng.integers(0, 13, size=4)

    def f():
        return classification_loss(mlp(feats), labels, 0.0)
    return f, mlp.parameters()


# -- losses ------------------------------------------------------------------


def _rec(rng):
    x = _features(rng, 5)
    xh = _param("x_hat", rng, 5, 6, low=0.0, high=3.0)
    return (lambda: reconstruction_loss(x, xh)), [xh]


def _pool(rng):
    n = 5
    a = _graph(rng, n)
    logits = _param("logits", rng, n, 3, low=-2.0, high=2.0)
    return (lambda: pooling_loss(a, ad.row_softmax(logits))), [logits]


def _embeddings(rng, ns=4, nt=5, d=3):
    return _param("zs", rng, ns, d), _param("zt", rng, nt, d)


def _walker(rng):
    zs, zt = _embeddings(rng)
    labels = np.array([0, 1, 0, 2])

    def f():
        pst, pts = transition_probabilities(zs, zt)
        return walker_loss(pst, pts, labels)
    return f, [zs, zt]


def _visit(rng):
    zs, zt = _embeddings(rng)
    return (lambda: visit_loss(transition_probabilities(zs, zt)[0])), [zs, zt]


def _assoc(rng):
    zs, zt = _embeddings(rng)
    labels = np.array([1, 1, 0, 2])
    return (lambda: associative_loss(zs, zt, labels)), [zs, zt]


def _ae(rng):
    model = GaeModel(SMALL, seed=int(rng.integers(1 << 30)))
    a_s, a_t = _graph(rng, 4), _graph(rng, 6)
    x_s = rng.integers(0, 4, size=(3, 4, 6)).astype(float)
    x_t = rng.integers(0, 4, size=(2, 6, 6)).astype(float)
    y_s = np.array([0, 1, 0])
    weights = LossWeights(alpha_pool=0.5, alpha_assoc=0.5)
    return (lambda: autoencoder_loss(model, (a_s, x_s, y_s), (a_t, x_t), weights).total), model.parameters()


def _classification(rng):
    mlp = MlpHead(MlpHyper(5, 4), seed=int(rng.integers(1 << 30)))
    feats = rng.normal(size=(6, 5))
    labels = rng.integers(0, 13, size=6)
    return (lambda: classification_loss(mlp(feats), labels, 0.05, mlp.weights())), mlp.parameters()


CHECKS: dict[str, Callable] = {
    "matmul": _binary("matmul", (3, 4), (4, 2), (3, 2)),
    "matmul_broadcast": _binary("matmul", (3, 3), (2, 3, 4), (2, 3, 4)),
    "transpose": _unary("transpose"),
    "reshape": _reshape,
    "add": _binary("add", (2, 3, 4), (1, 4), (2, 3, 4)),
    "subtract": _binary("subtract", (3, 4), (3, 1), (3, 4)),
    "scale": _scale,
    "hadamard": _binary("hadamard", (3, 4), (3, 4), (3, 4)),
    "relu": _unary("relu", _away_from_zero),
    "tanh": _unary("tanh"),
    "row_softmax": _unary("row_softmax"),
    "exp": _unary("exp"),
    "log": _unary("log", _positive),
    "xlogx": _unary("xlogx", _positive),
    "row_sum": _reduction("row_sum"),
    "frobenius_norm_sq": _reduction("frobenius_norm_sq"),
    "frobenius_norm": _reduction("frobenius_norm", _away_from_zero),
    "mean": _reduction("mean"),
    "gcn_linear": _gcn("linear"),
    "gcn_relu": _gcn("relu"),
    "gcn_tanh": _gcn("tanh"),
    "diffpool": _diffpool,
    "encoder": _encoder,
    "decoder": _decoder,
    "mlp": _mlp,
    "loss_rec": _rec,
    "loss_pool": _pool,
    "loss_walker": _walker,
    "loss_visit": _visit,
    "loss_assoc": _assoc,
    "loss_ae": _ae,
    "loss_classification": _classification,
}


def run_check(name: str, seed: int = 0, tol: float = TOL, h: float = STEP) -> CheckResult:
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    f, params = CHECKS[name](rng)
    t0 = time.perf_counter()
    report = grad_check(f, params, h=h, tol=tol)
    return CheckResult(name, report, time.perf_counter() - t0)


def run_suite(seed: int = 0, tol: float = TOL, names=None) -> list[CheckResult]:
    return [run_check(n, seed, tol) for n in (names or CHECKS)]
