"""Encoders, classifier head and loss around the fusion layer.

Each modality has a per-token two-layer perceptron (ELU between layers) that
maps raw tokens to fusion width ``d``. The fused feature goes through an
affine classifier and softmax cross-entropy.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import fusion
from .fusion import FusionParams
from .linalg import ContractError, outer_sum, truncated_normal


@dataclass(frozen=True)
class ModelSpec:
    din_a: int = 16
    din_v: int = 16
    hidden: int = 32
    dim: int = 16
    num_classes: int = 4
    cls_std: float = 0.02
    # None -> 1/sqrt(fan_in) per weight matrix
    weight_std: float | None = None


@dataclass
class EncoderParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class ClassifierParams:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class ModelParams:
    encoder_a: EncoderParams
    encoder_v: EncoderParams
    fusion: FusionParams
    classifier: ClassifierParams

    def named_arrays(self, include_rotation: bool = True) -> list[tuple[str, np.ndarray]]:
        """Every parameter array in checkpoint order (live references)."""
        out = []
        for m, enc in (("a", self.encoder_a), ("v", self.encoder_v)):
            out += [(f"encoder_{m}.{k}", getattr(enc, k)) for k in ("w1", "b1", "w2", "b2")]
        out += [(f"fusion.{k}", getattr(self.fusion, k)) for k in ("w_q", "w_k", "w_v", "z_cls")]
        if include_rotation:
            out.append(("fusion.rotation", self.fusion.rotation))
        out += [("classifier.weight", self.classifier.weight), ("classifier.bias", self.classifier.bias)]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            _copy_encoder(self.encoder_a),
            _copy_encoder(self.encoder_v),
            self.fusion.copy(),
            ClassifierParams(np.array(self.classifier.weight), np.array(self.classifier.bias)),
        )

    def checksum(self) -> str:
        h = hashlib.sha256()
        for _, a in self.named_arrays():
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _copy_encoder(enc: EncoderParams) -> EncoderParams:
    return EncoderParams(*(np.array(getattr(enc, k)) for k in ("w1", "b1", "w2", "b2")))


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def encode(params: EncoderParams, raw_tokens) -> tuple[np.ndarray, np.ndarray]:
    """Per-token MLP. Returns fused-width tokens and the hidden pre-activation."""
    x = np.asarray(raw_tokens, dtype=np.float64)
    if x.shape[-1] != params.w1.shape[0]:
        raise ContractError(f"encoder expects input width {params.w1.shape[0]}, got {x.shape}")
    pre = x @ params.w1 + params.b1
    return _elu(pre) @ params.w2 + params.b2, pre


def encode_backward(params: EncoderParams, raw_tokens, pre, grad_tokens) -> EncoderParams:
    x = np.asarray(raw_tokens, dtype=np.float64)
    hidden = _elu(pre)
    d_hidden = grad_tokens @ params.w2.T
    d_pre = d_hidden * _elu_grad(pre)
    return EncoderParams(
        w1=outer_sum(x, d_pre),
        b1=d_pre.reshape(-1, d_pre.shape[-1]).sum(axis=0),
        w2=outer_sum(hidden, grad_tokens),
        b2=grad_tokens.reshape(-1, grad_tokens.shape[-1]).sum(axis=0),
    )


def classify(params: ClassifierParams, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.weight.shape[0]:
        raise ContractError(f"classifier expects width {params.weight.shape[0]}, got {h.shape}")
    return h @ params.weight + params.bias


def cross_entropy(logits, label):
    """Softmax cross-entropy and its gradient w.r.t. the logits.

    ``logits`` may be ``(C,)`` with an int label or ``(B, C)`` with a label
    array; the loss is then per-sample (not averaged).
    """
    z = np.asarray(logits, dtype=np.float64)
    label = np.asarray(label)
    c = z.shape[-1]
    if np.any(label < 0) or np.any(label >= c):
        raise ContractError(f"label out of range [0, {c})")
    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_p = shifted - log_norm
    onehot = np.eye(c)[label]
    loss = -np.sum(log_p * onehot, axis=-1)
    grad = np.exp(log_p) - onehot
    return (float(loss) if np.ndim(loss) == 0 else loss), grad


def init(spec: ModelSpec, rng: np.random.Generator) -> ModelParams:
    def weight(fan_in, fan_out):
        std = spec.weight_std if spec.weight_std is not None else 1.0 / np.sqrt(fan_in)
        return truncated_normal(rng, (fan_in, fan_out), std)

    def encoder(din):
        return EncoderParams(weight(din, spec.hidden), np.zeros(spec.hidden),
                             weight(spec.hidden, spec.dim), np.zeros(spec.dim))

    d = spec.dim
    enc_a = encoder(spec.din_a)
    enc_v = encoder(spec.din_v)
    fus = FusionParams(
        w_q=weight(d, d), w_k=weight(d, d), w_v=weight(d, d),
        z_cls=truncated_normal(rng, d, spec.cls_std),
        rotation=np.eye(d),
    )
    clf = ClassifierParams(weight(d, spec.num_classes), np.zeros(spec.num_classes))
    return ModelParams(enc_a, enc_v, fus, clf)


def param_count(model: ModelParams, include_rotation: bool = True) -> int:
    return sum(a.size for _, a in model.named_arrays(include_rotation=include_rotation))


def param_count_for(spec: ModelSpec, include_rotation: bool = True) -> int:
    """Parameter count from dimensions alone (no allocation)."""
    d, h = spec.dim, spec.hidden
    enc = lambda din: din * h + h + h * d + d  # noqa: E731
    total = enc(spec.din_a) + enc(spec.din_v) + 3 * d * d + d + d * spec.num_classes + spec.num_classes
    return total + (d * d if include_rotation else 0)


@dataclass
class ModelOutput:
    logits: np.ndarray
    trace: fusion.FusionTrace
    pre_a: np.ndarray
    pre_v: np.ndarray


def model_forward(params: ModelParams, raw_a, raw_v, mode: str = "none") -> ModelOutput:
    z_a, pre_a = encode(params.encoder_a, raw_a)
    z_v, pre_v = encode(params.encoder_v, raw_v)
    trace = fusion.forward(params.fusion, z_a, z_v, mode)
    return ModelOutput(classify(params.classifier, trace.output), trace, pre_a, pre_v)


def predict(params: ModelParams, raw_a, raw_v, mode: str = "none") -> np.ndarray:
    return np.argmax(model_forward(params, raw_a, raw_v, mode).logits, axis=-1)


def loss_and_grads(params: ModelParams, raw_a, raw_v, labels):
    """Mean cross-entropy over the batch and gradients for every parameter.

    The rotation entry of the returned gradient container is all zeros: it
    is never trained by gradient descent.
    """
    raw_a = np.asarray(raw_a, dtype=np.float64)
    raw_v = np.asarray(raw_v, dtype=np.float64)
    out = model_forward(params, raw_a, raw_v)
    losses, d_logits = cross_entropy(out.logits, labels)
    n = max(1, int(np.size(losses)))
    d_logits = d_logits / n
    h = out.trace.output

    d_weight = outer_sum(h, d_logits)
    d_bias = d_logits.reshape(-1, d_logits.shape[-1]).sum(axis=0)
    d_h = d_logits @ params.classifier.weight.T
    fg = fusion.backward(params.fusion, out.trace, d_h)
    grads = ModelParams(
        encode_backward(params.encoder_a, raw_a, out.pre_a, fg.tokens_a),
        encode_backward(params.encoder_v, raw_v, out.pre_v, fg.tokens_v),
        FusionParams(fg.w_q, fg.w_k, fg.w_v, fg.z_cls, np.zeros_like(params.fusion.rotation)),
        ClassifierParams(d_weight, d_bias),
    )
    return float(np.mean(losses)), grads, out


def save_checkpoint(path, params: ModelParams, spec: ModelSpec, seed: int) -> Path:
    """Write dims, seed and every parameter array (in ``named_arrays`` order)."""
    path = Path(path)
    names = [n for n, _ in params.named_arrays()]
    meta = json.dumps({"spec": asdict(spec), "seed": int(seed), "order": names}, sort_keys=True)
    arrays = {n: a for n, a in params.named_arrays()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(meta), **arrays)
    return path


def load_checkpoint(path) -> tuple[ModelParams, ModelSpec, int]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        arr = {n: np.array(data[n]) for n in meta["order"]}
    spec = ModelSpec(**meta["spec"])
    enc = lambda m: EncoderParams(*(arr[f"encoder_{m}.{k}"] for k in ("w1", "b1", "w2", "b2")))  # noqa: E731
    params = ModelParams(
        enc("a"), enc("v"),
        FusionParams(*(arr[f"fusion.{k}"] for k in ("w_q", "w_k", "w_v", "z_cls", "rotation"))),
        ClassifierParams(arr["classifier.weight"], arr["classifier.bias"]),
    )
    return params, spec, meta["seed"]
