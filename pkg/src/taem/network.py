"""Speaker-conditioned phoneme-to-audio-feature network.

Pipeline: token embedding + speaker vector -> phoneme encoder (feed-forward
Transformer blocks) -> duration predictor (on a gradient-stopped copy of
the encoded sequence) -> length regulation to mel-frame resolution ->
refine blocks -> strided convolutional subsampling down to one feature
vector per video frame.

Width is config.hidden at every stage.  Each encoder block is
post-layer-norm residual: y = LN(x + SelfAttn(x)); out = LN(y + ConvFFN(y)),
with unmasked self-attention and a conv feed-forward (kernel ffn_kernel,
then kernel 1).  Sinusoidal positions are added before the phoneme encoder
and before the refine blocks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .textalign import PhonemeSequence


@dataclass
class ModelConfig:
    vocab_size: int
    hidden: int = 512
    heads: int = 2
    g_blocks: int = 4
    h_blocks: int = 4
    ffn_kernel: int = 9
    ffn_width: int = 0  # 0 -> 2 * hidden
    dp_kernel: int = 3
    dp_channels: int = 0  # 0 -> hidden
    dropout: float = 0.1
    subsample_kernel: int = 3
    vocab_version: str = "arpabet-en-v1"

    def __post_init__(self):
        if self.ffn_width == 0:
            self.ffn_width = 2 * self.hidden
        if self.dp_channels == 0:
            self.dp_channels = self.hidden
        if self.hidden % self.heads != 0:
            raise ValueError(
                f"hidden {self.hidden} not divisible by heads {self.heads}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TaemParams:
    """All learnable tensors, keyed by dotted names for serialization."""

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def param_spec(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init kind) for every learnable tensor; pure in config."""
    h, c = cfg.hidden, cfg.dp_channels
    spec: list[tuple[str, tuple[int, ...], str]] = [
        ("embedding", (cfg.vocab_size, h), "glorot"),
    ]

    def block(prefix: str):
        for proj in ("wq", "wk", "wv", "wo"):
            spec.append((f"{prefix}.attn.{proj}", (h, h), "glorot"))
        for b in ("bq", "bk", "bv", "bo"):
            spec.append((f"{prefix}.attn.{b}", (h,), "zeros"))
        spec.append((f"{prefix}.ln1.gain", (h,), "ones"))
        spec.append((f"{prefix}.ln1.bias", (h,), "zeros"))
        spec.append((f"{prefix}.ffn.w1", (cfg.ffn_kernel, h, cfg.ffn_width), "glorot"))
        spec.append((f"{prefix}.ffn.b1", (cfg.ffn_width,), "zeros"))
        spec.append((f"{prefix}.ffn.w2", (1, cfg.ffn_width, h), "glorot"))
        spec.append((f"{prefix}.ffn.b2", (h,), "zeros"))
        spec.append((f"{prefix}.ln2.gain", (h,), "ones"))
        spec.append((f"{prefix}.ln2.bias", (h,), "zeros"))

    for i in range(cfg.g_blocks):
        block(f"g.{i}")
    spec.extend(
        [
            ("dp.conv1.w", (cfg.dp_kernel, h, c), "glorot"),
            ("dp.conv1.b", (c,), "zeros"),
            ("dp.ln1.gain", (c,), "ones"),
            ("dp.ln1.bias", (c,), "zeros"),
            ("dp.conv2.w", (cfg.dp_kernel, c, c), "glorot"),
            ("dp.conv2.b", (c,), "zeros"),
            ("dp.ln2.gain", (c,), "ones"),
            ("dp.ln2.bias", (c,), "zeros"),
            ("dp.lin.w", (c, 1), "glorot"),
            ("dp.lin.b", (1,), "zeros"),
        ]
    )
    for i in range(cfg.h_blocks):
        block(f"h.{i}")
    k = cfg.subsample_kernel
    spec.extend(
        [
            ("sub.conv1.w", (k, h, h), "glorot"),
            ("sub.conv1.b", (h,), "zeros"),
            ("sub.conv2.w", (k, h, h), "glorot"),
            ("sub.conv2.b", (h,), "zeros"),
        ]
    )
    return spec


def _tensor_seed(master_seed: int, name: str) -> np.random.SeedSequence:
    # Stable per-tensor stream: master seed plus the first 8 bytes of
    # sha256(name), so renaming a tensor (and nothing else) changes only it.
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return np.random.SeedSequence([master_seed, int.from_bytes(digest[:8], "little")])


def _glorot_fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 2:
        return shape[0], shape[1]
    if len(shape) == 3:  # conv (k, c_in, c_out)
        k, c_in, c_out = shape
        return k * c_in, k * c_out
    raise ValueError(f"no glorot rule for shape {shape}")


def init_params(cfg: ModelConfig, master_seed: int, dtype=np.float32) -> TaemParams:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    params = TaemParams(config=cfg)
    for name, shape, kind in param_spec(cfg):
        if kind == "glorot":
            fan_in, fan_out = _glorot_fans(shape)
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            rng = np.random.Generator(np.random.PCG64(_tensor_seed(master_seed, name)))
            data = rng.uniform(-limit, limit, size=shape)
        elif kind == "zeros":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(kind)
        params.tensors[name] = Tensor(data.astype(dtype), requires_grad=True)
    return params


def parameter_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in param_spec(cfg))


def positional_encoding(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    """PE(pos, 2i) = sin(pos / 10000^(2i/dim)); odd columns use cos."""
    if length < 1:
        raise ValueError(f"positional_encoding: length must be >= 1, got {length}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i2 = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i2 / dim)
    pe = np.zeros((length, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : pe[:, 1::2].shape[1]])
    return pe.astype(dtype)


def _dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0.0 or rng is None:
        return x
    keep = 1.0 - p
    mask = (rng.random(x.shape) < keep).astype(x.data.dtype) / np.asarray(
        keep, dtype=x.data.dtype
    )
    return ad.mul(x, Tensor(mask))


def embed_phonemes(seq: PhonemeSequence, speaker: np.ndarray, params: TaemParams) -> Tensor:
    """Token embedding rows with the speaker vector added at every timestep."""
    cfg = params.config
    if len(seq) < 1:
        raise ValueError("embed_phonemes: empty phoneme sequence")
    spk = np.asarray(speaker)
    if spk.shape != (cfg.hidden,):
        raise ad.ShapeMismatchError(
            f"speaker embedding shape {spk.shape} != ({cfg.hidden},)"
        )
    table = params["embedding"]
    rows = ad.take_rows(table, seq.ids)
    return ad.add(rows, Tensor(spk.astype(table.data.dtype)))


def self_attention(x: Tensor, params: TaemParams, prefix: str) -> Tensor:
    """Full (unmasked) multi-head self-attention over the row axis."""
    cfg = params.config
    h, heads = cfg.hidden, cfg.heads
    dh = h // heads
    q = ad.add(ad.matmul(x, params[f"{prefix}.wq"]), params[f"{prefix}.bq"])
    k = ad.add(ad.matmul(x, params[f"{prefix}.wk"]), params[f"{prefix}.bk"])
    v = ad.add(ad.matmul(x, params[f"{prefix}.wv"]), params[f"{prefix}.bv"])
    outs = []
    scale = 1.0 / np.sqrt(dh)
    for i in range(heads):
        qi = ad.slice_cols(q, i * dh, (i + 1) * dh)
        ki = ad.slice_cols(k, i * dh, (i + 1) * dh)
        vi = ad.slice_cols(v, i * dh, (i + 1) * dh)
        scores = ad.mul(ad.matmul(qi, ad.transpose(ki)), scale)
        outs.append(ad.matmul(ad.softmax(scores), vi))
    merged = outs[0] if heads == 1 else ad.concat(outs, axis=1)
    return ad.add(ad.matmul(merged, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def fft_block(
    x: Tensor,
    params: TaemParams,
    prefix: str,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Post-LN residual block: attention then conv feed-forward."""
    cfg = params.config
    attn = _dropout(self_attention(x, params, f"{prefix}.attn"), cfg.dropout, rng)
    y = ad.layer_norm(
        ad.add(x, attn), params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"]
    )
    pad = (cfg.ffn_kernel - 1) // 2
    f = ad.conv1d(
        y, params[f"{prefix}.ffn.w1"], params[f"{prefix}.ffn.b1"], padding=pad
    )
    f = ad.relu(f)
    f = ad.conv1d(f, params[f"{prefix}.ffn.w2"], params[f"{prefix}.ffn.b2"])
    f = _dropout(f, cfg.dropout, rng)
    return ad.layer_norm(
        ad.add(y, f), params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"]
    )


def encode_phonemes(
    x: Tensor, params: TaemParams, rng: np.random.Generator | None = None
) -> Tensor:
    """Phoneme encoder: positions plus g_blocks FFT blocks."""
    cfg = params.config
    x = ad.add(x, Tensor(positional_encoding(x.shape[0], cfg.hidden, x.data.dtype)))
    for i in range(cfg.g_blocks):
        x = fft_block(x, params, f"g.{i}", rng)
    return x


def duration_predictor(
    encoded: Tensor, params: TaemParams, rng: np.random.Generator | None = None
) -> Tensor:
    """Raw per-phoneme duration predictions, shape (l_t, 1).

    The input is gradient-stopped here, so the duration loss trains only
    these layers and never reaches the phoneme encoder.
    """
    cfg = params.config
    x = ad.stop_gradient(encoded)
    pad = (cfg.dp_kernel - 1) // 2
    x = ad.relu(ad.conv1d(x, params["dp.conv1.w"], params["dp.conv1.b"], padding=pad))
    x = ad.layer_norm(x, params["dp.ln1.gain"], params["dp.ln1.bias"])
    x = _dropout(x, cfg.dropout, rng)
    x = ad.relu(ad.conv1d(x, params["dp.conv2.w"], params["dp.conv2.b"], padding=pad))
    x = ad.layer_norm(x, params["dp.ln2.gain"], params["dp.ln2.bias"])
    x = _dropout(x, cfg.dropout, rng)
    return ad.add(ad.matmul(x, params["dp.lin.w"]), params["dp.lin.b"])


def length_regulate(encoded: Tensor, durations: np.ndarray) -> Tensor:
    """Repeat row i of ``encoded`` durations[i] times, in order."""
    d = np.asarray(durations, dtype=np.int64)
    if d.ndim != 1 or d.size != encoded.shape[0]:
        raise ad.ShapeMismatchError(
            f"length_regulate: {d.shape} durations for {encoded.shape[0]} rows"
        )
    if (d < 0).any():
        raise ValueError("length_regulate: negative duration")
    if d.sum() == 0:
        raise ValueError("length_regulate: all durations are zero")
    indices = np.repeat(np.arange(d.size), d)
    return ad.take_rows(encoded, indices)


def refine_and_subsample(
    regulated: Tensor, params: TaemParams, rng: np.random.Generator | None = None
) -> Tensor:
    """Refine blocks then two stride-2 convolutions: length l_a -> l_a/4."""
    cfg = params.config
    l_a = regulated.shape[0]
    if l_a < 4:
        raise ValueError(f"refine_and_subsample: length {l_a} < 4")
    if l_a % 4 != 0:
        raise ValueError(f"refine_and_subsample: length {l_a} not divisible by 4")
    x = ad.add(
        regulated, Tensor(positional_encoding(l_a, cfg.hidden, regulated.data.dtype))
    )
    for i in range(cfg.h_blocks):
        x = fft_block(x, params, f"h.{i}", rng)
    pad = (cfg.subsample_kernel - 1) // 2
    x = ad.relu(
        ad.conv1d(x, params["sub.conv1.w"], params["sub.conv1.b"], stride=2, padding=pad)
    )
    return ad.conv1d(x, params["sub.conv2.w"], params["sub.conv2.b"], stride=2, padding=pad)


def round_durations(raw: np.ndarray) -> np.ndarray:
    """Inference rounding: round-half-up with a floor of one frame."""
    return np.maximum(np.floor(raw + 0.5).astype(np.int64), 1)


def taem_forward(
    seq: PhonemeSequence,
    speaker: np.ndarray,
    params: TaemParams,
    durations: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Full forward pass; returns (z_t, raw predicted durations).

    With ``durations`` (teacher forcing) the given vector drives length
    regulation and must sum to a multiple of 4.  Without it, predictions
    are rounded with a floor of 1 and the regulated sequence is padded by
    repeating its final row up to the next multiple of 4.

    Pass ``rng`` only during training; it drives dropout.
    """
    injected = embed_phonemes(seq, speaker, params)
    encoded = encode_phonemes(injected, params, rng)
    pred = duration_predictor(encoded, params, rng)
    if durations is not None:
        d = np.asarray(durations, dtype=np.int64)
        if int(d.sum()) % 4 != 0:
            raise ValueError(
                f"teacher-forced durations sum to {int(d.sum())}, not a multiple of 4"
            )
        regulated = length_regulate(encoded, d)
    else:
        d = round_durations(pred.data.reshape(-1))
        regulated = length_regulate(encoded, d)
        remainder = regulated.shape[0] % 4
        if remainder:
            last = regulated.shape[0] - 1
            pad_idx = np.concatenate(
                [np.arange(regulated.shape[0]), np.full(4 - remainder, last)]
            )
            regulated = ad.take_rows(regulated, pad_idx)
    z_t = refine_and_subsample(regulated, params, rng)
    return z_t, pred
