"""GCN / DIFFPOOL graph autoencoder and the MLP classifier head.

Inputs may be a single graph (``x`` of shape N x F) or a per-home batch
(``x`` of shape B x N x F) sharing one normalized adjacency; every layer
broadcasts over the leading batch axis.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .events import N_CLUSTERS
from .sitegraph import N_TYPES

ACTIVATIONS = {
    "linear": lambda t: t,
    "relu": lambda t: ad.relu(t),
    "tanh": lambda t: ad.tanh(t),
}

CHECKPOINT_FORMAT = "hsngae-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def glorot(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


@dataclass
class GcnLayer:
    weight: Parameter
    activation: str = "linear"

    @classmethod
    def create(cls, name: str, d_in: int, d_out: int, activation: str, rng: np.random.Generator) -> "GcnLayer":
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        return cls(Parameter(name, glorot(rng, d_in, d_out)), activation)

    def __call__(self, a, x) -> Tensor:
        return gcn_forward(a, x, self)


def gcn_forward(a, x, layer: GcnLayer) -> Tensor:
    """activation(A @ X @ W)."""
    return ACTIVATIONS[layer.activation](ad.matmul(a, ad.matmul(x, layer.weight)))


def diffpool_forward(a, x, gcn_z: GcnLayer, gcn_p: GcnLayer) -> tuple[Tensor, Tensor, Tensor]:
    """Pool an n-node graph onto the fixed cluster count of ``gcn_p``.

    Returns the coarse adjacency, the pooled embeddings and the soft
    assignment matrix S (rows are node -> cluster distributions).
    """
    z = gcn_z(a, x)
    s = ad.row_softmax(gcn_p(a, x))
    st = ad.transpose(s)
    return ad.matmul(ad.matmul(st, a), s), ad.matmul(st, z), s


@dataclass(frozen=True)
class GaeHyper:
    n_features: int = N_TYPES
    gcn_hidden: int = 32
    n_h: int = 64
    f_h: int = 16
    d_dec: int = 32

    @property
    def latent_size(self) -> int:
        return self.n_h * self.f_h


@dataclass
class EncoderOutput:
    a_enc: Tensor
    z: Tensor
    s: Tensor


class Encoder:
    def __init__(self, hyper: GaeHyper, rng: np.random.Generator):
        self.hyper = hyper
        self.gcn_h = GcnLayer.create("encoder.gcn_h", hyper.n_features, hyper.gcn_hidden, "relu", rng)
        self.gcn_z = GcnLayer.create("encoder.gcn_z", hyper.gcn_hidden, hyper.f_h, "tanh", rng)
        self.gcn_p = GcnLayer.create("encoder.gcn_p", hyper.gcn_hidden, hyper.n_h, "linear", rng)

    def parameters(self) -> list[Parameter]:
        return [self.gcn_h.weight, self.gcn_z.weight, self.gcn_p.weight]

    def __call__(self, a, x) -> EncoderOutput:
        return encoder_forward(a, x, self)


def encoder_forward(a, x, encoder: Encoder) -> EncoderOutput:
    h = encoder.gcn_h(a, x)
    a_enc, z, s = diffpool_forward(a, h, encoder.gcn_z, encoder.gcn_p)
    return EncoderOutput(a_enc, z, s)


class Decoder:
    def __init__(self, hyper: GaeHyper, rng: np.random.Generator):
        self.hyper = hyper
        self.gcn_dec1 = GcnLayer.create("decoder.gcn_dec1", hyper.f_h, hyper.d_dec, "relu", rng)
        self.gcn_dec2 = GcnLayer.create("decoder.gcn_dec2", hyper.d_dec, hyper.n_features, "relu", rng)

    def parameters(self) -> list[Parameter]:
        return [self.gcn_dec1.weight, self.gcn_dec2.weight]

    def __call__(self, a_enc, a_orig, s, z) -> Tensor:
        return decoder_forward(a_enc, a_orig, s, z, self)


def decoder_forward(a_enc, a_orig, s, z, decoder: Decoder) -> Tensor:
    """Decode on the coarse graph, un-pool through S, decode again on the original graph."""
    h_dec = decoder.gcn_dec1(a_enc, z)
    unpooled = ad.matmul(s, h_dec)
    return decoder.gcn_dec2(a_orig, unpooled)


def flatten_latent(z: Tensor) -> Tensor:
    """Row-major flattening of B x N_H x F_H (or N_H x F_H) codes into B x (N_H*F_H)."""
    if z.value.ndim == 2:
        return ad.reshape(z, (1, z.shape[0] * z.shape[1]))
    return ad.reshape(z, (z.shape[0], z.shape[1] * z.shape[2]))


class GaeModel:
    """Encoder plus decoder, with the hyperparameter record."""

    kind = "gae"

    def __init__(self, hyper: GaeHyper | None = None, seed: int = 0):
        self.hyper = hyper or GaeHyper()
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(self.hyper, rng)
        self.decoder = Decoder(self.hyper, rng)

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.decoder.parameters()

    def reconstruct(self, a, x) -> tuple[EncoderOutput, Tensor]:
        enc = self.encoder(a, x)
        return enc, self.decoder(enc.a_enc, a, enc.s, enc.z)

    def encode(self, a, x) -> np.ndarray:
        """Flattened latent codes (no gradient recording needed by callers)."""
        return flatten_latent(self.encoder(a, x).z).value

    def hparams(self) -> dict:
        return asdict(self.hyper)

    @classmethod
    def from_hparams(cls, hparams: dict) -> "GaeModel":
        return cls(GaeHyper(**hparams))


@dataclass(frozen=True)
class MlpHyper:
    n_inputs: int
    n_hidden: int = 64
    n_outputs: int = N_CLUSTERS


class MlpHead:
    """tanh hidden layer, softmax output."""

    kind = "mlp"

    def __init__(self, hyper: MlpHyper | int, seed: int = 0):
        self.hyper = hyper if isinstance(hyper, MlpHyper) else MlpHyper(int(hyper))
        rng = np.random.default_rng(seed)
        h = self.hyper
        self.w1 = Parameter("mlp.w1", glorot(rng, h.n_inputs, h.n_hidden))
        self.b1 = Parameter("mlp.b1", np.zeros((1, h.n_hidden)))
        self.w2 = Parameter("mlp.w2", glorot(rng, h.n_hidden, h.n_outputs))
        self.b2 = Parameter("mlp.b2", np.zeros((1, h.n_outputs)))

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]

    def weights(self) -> list[Parameter]:
        return [self.w1, self.w2]

    def __call__(self, features) -> Tensor:
        return mlp_forward(features, self)

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return self(np.atleast_2d(features)).value

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.predict_proba(features).argmax(axis=1)

    def hparams(self) -> dict:
        return asdict(self.hyper)

    @classmethod
    def from_hparams(cls, hparams: dict) -> "MlpHead":
        return cls(MlpHyper(**hparams))


def mlp_forward(features, mlp: MlpHead) -> Tensor:
    features = ad.as_tensor(features)
    if features.value.ndim != 2 or features.shape[1] != mlp.hyper.n_inputs:
        raise ad.ShapeError(f"mlp: expected rows of width {mlp.hyper.n_inputs}, got {features.shape}")
    hidden = ad.tanh(ad.add(ad.matmul(features, mlp.w1), mlp.b1))
    return ad.row_softmax(ad.add(ad.matmul(hidden, mlp.w2), mlp.b2))


# -- checkpoints -------------------------------------------------------------


def state_dict(model) -> dict[str, np.ndarray]:
    return {p.name: p.value.copy() for p in model.parameters()}


def load_state_dict(model, state: dict[str, np.ndarray]) -> None:
    params = {p.name: p for p in model.parameters()}
    if set(params) != set(state):
        raise CheckpointError(f"parameter names differ: expected {sorted(params)}, got {sorted(state)}")
    for name, p in params.items():
        value = np.asarray(state[name], dtype=np.float64)
        if value.shape != p.shape:
            raise CheckpointError(f"{name}: shape {value.shape} does not match model shape {p.shape}")
        p.value = value.copy()


def save_checkpoint(model, path, extra: dict | None = None) -> None:
    """JSON container: format tag, model kind, hyperparameters and named matrices."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "hparams": model.hparams(),
        "params": {
            p.name: {"shape": list(p.shape), "data": p.value.reshape(-1).tolist()}
            for p in model.parameters()
        },
    }
    if extra:
        doc["extra"] = extra
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def read_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} file")
    return doc


def load_checkpoint(model, path) -> None:
    """Load parameters into an existing model; architecture must match exactly."""
    doc = read_checkpoint(path)
    if doc["kind"] != model.kind:
        raise CheckpointError(f"{path}: checkpoint holds a {doc['kind']} model, not {model.kind}")
    if doc["hparams"] != model.hparams():
        raise CheckpointError(f"{path}: hyperparameters {doc['hparams']} differ from model {model.hparams()}")
    state = {name: np.array(e["data"], dtype=np.float64).reshape(e["shape"]) for name, e in doc["params"].items()}
    load_state_dict(model, state)


def model_from_checkpoint(path):
    doc = read_checkpoint(path)
    cls = {"gae": GaeModel, "mlp": MlpHead}.get(doc["kind"])
    if cls is None:
        raise CheckpointError(f"{path}: unknown model kind {doc['kind']!r}")
    model = cls.from_hparams(doc["hparams"])
    load_checkpoint(model, path)
    return model
