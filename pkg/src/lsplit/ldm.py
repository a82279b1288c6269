"""Desk-scale latent-diffusion pipeline with a triadic split.

Local head: deterministic text embedding plus a seeded Gaussian latent.
Cloud body: toy noise predictor plus a denoiser advancing its own latent.
Local tail: denoiser consuming received noise plus the image decoder.

The denoiser is a plain Euler contraction, latent' = latent - noise/T: the
protocol-level properties under study (exact FP32 split equality, payload
sizes, quantization fidelity ordering) are scheduler-agnostic, so the
simplest deterministic rule wins.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .tensor import matmul, seeded_uniform

DECODE_GAIN = np.float32(96.0)
DECODE_OFFSET = 127.5


@dataclass(frozen=True)
class LdmConfig:
    channels: int = 4
    height: int = 16
    width: int = 16
    t_steps: int = 10  # 50 for acceptance-grade runs, 10 for fast tests
    embed_dim: int = 64
    seed: int = 42

    def __post_init__(self):
        if self.t_steps < 1:
            raise ParameterError("t_steps must be >= 1")
        if min(self.channels, self.height, self.width, self.embed_dim) < 1:
            raise ParameterError("latent/embedding dims must be positive")

    @property
    def latent_shape(self) -> tuple:
        return (1, self.channels, self.height, self.width)

    @property
    def latent_size(self) -> int:
        return self.channels * self.height * self.width


def encode_text(prompt: str, embed_dim: int) -> np.ndarray:
    """Deterministic hashed bag-of-bytes embedding, L2-normalized.

    Each (position, byte) pair is hashed to a bucket and sign, so the raw
    prompt bytes never appear in the vector. Empty prompt -> zero vector.
    """
    vec = np.zeros(embed_dim, dtype=np.float64)
    data = prompt.encode("utf-8")
    for i, byte in enumerate(data):
        digest = hashlib.blake2b(bytes([byte]) + i.to_bytes(4, "little"),
                                 digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        bucket = h % embed_dim
        sign = 1.0 if (h >> 32) & 1 else -1.0
        vec[bucket] += sign
    norm = math.sqrt(float(np.dot(vec, vec)))
    if norm > 0:
        vec /= norm
    return vec.astype(np.float32).reshape(1, embed_dim)


def sample_initial_latent(seed: int, shape: tuple = (1, 4, 16, 16)) -> np.ndarray:
    """i.i.d. standard normal entries via Box-Muller over a seeded stream."""
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    rng = np.random.default_rng(seed)
    u1 = 1.0 - rng.random(pairs)  # (0, 1]: keeps log() finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:count].astype(np.float32).reshape(shape)


class NoisePredictor:
    """Toy stand-in for the U-Net: two seeded linear stages with a tanh in
    between and a residual connection, conditioned on (text_emb, t)."""

    def __init__(self, cfg: LdmConfig, hidden: int = 64):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed + 1)
        in_dim = cfg.latent_size + cfg.embed_dim + 4
        self.w1 = seeded_uniform(rng, (in_dim, hidden), in_dim)
        self.w2 = seeded_uniform(rng, (hidden, cfg.latent_size), hidden)

    def _time_features(self, t: int, t_steps: int) -> np.ndarray:
        phase = 2.0 * math.pi * t / t_steps
        return np.array([[t / t_steps, math.sin(phase), math.cos(phase), 1.0]],
                        dtype=np.float32)

    def predict(self, latent: np.ndarray, text_emb: np.ndarray, t: int,
                t_steps: int) -> np.ndarray:
        if latent.shape != self.cfg.latent_shape:
            raise ParameterError(f"latent shape {latent.shape} != {self.cfg.latent_shape}")
        if not 0 <= t < t_steps:
            raise ParameterError(f"t={t} outside [0, {t_steps})")
        flat = latent.reshape(1, -1).astype(np.float32)
        feats = np.concatenate([flat, text_emb.astype(np.float32),
                                self._time_features(t, t_steps)], axis=1)
        h = np.tanh(matmul(feats, self.w1))
        delta = matmul(h, self.w2)
        return (flat + delta).reshape(self.cfg.latent_shape)


def predict_noise(unet: NoisePredictor, latent, text_emb, t: int,
                  t_steps: int | None = None) -> np.ndarray:
    return unet.predict(np.asarray(latent, np.float32), np.asarray(text_emb, np.float32),
                        t, t_steps if t_steps is not None else unet.cfg.t_steps)


def denoise_step(latent, noise_hat, t: int, t_steps: int) -> np.ndarray:
    """Euler contraction: latent' = latent - noise_hat / t_steps."""
    latent = np.asarray(latent, np.float32)
    noise_hat = np.asarray(noise_hat, np.float32)
    if latent.shape != noise_hat.shape:
        raise ParameterError(f"shape mismatch {latent.shape} vs {noise_hat.shape}")
    return latent - noise_hat * np.float32(1.0 / t_steps)


class ImageDecoder:
    """Seeded linear map C -> 3 per latent pixel, 2x nearest-neighbor upsample,
    then the fixed affine rescale into [0, 255]."""

    def __init__(self, cfg: LdmConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed + 2)
        self.mix = seeded_uniform(rng, (cfg.channels, 3), cfg.channels)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, np.float32)
        if latent.shape != self.cfg.latent_shape:
            raise ParameterError(f"latent shape {latent.shape} != {self.cfg.latent_shape}")
        chw = latent[0]  # (C, h, w)
        rgb = np.einsum("chw,ck->hwk", chw.astype(np.float64), self.mix.astype(np.float64))
        up = rgb.repeat(2, axis=0).repeat(2, axis=1)
        scaled = np.clip(DECODE_OFFSET + float(DECODE_GAIN) * up, 0.0, 255.0)
        return np.floor(scaled + 0.5).astype(np.uint8)

    def lipschitz_bound(self) -> float:
        """sup-norm gain of decode before output rounding: gain * max |mix| row sum."""
        return float(DECODE_GAIN) * float(np.abs(self.mix.astype(np.float64)).sum(axis=0).max())


def decode_image(decoder: ImageDecoder, latent) -> np.ndarray:
    return decoder.decode(np.asarray(latent, np.float32))


class LdmPipeline:
    """Bundles the deterministic components so split and monolithic runs share
    the exact same weights."""

    def __init__(self, cfg: LdmConfig):
        self.cfg = cfg
        self.unet = NoisePredictor(cfg)
        self.decoder = ImageDecoder(cfg)

    def text_embedding(self, prompt: str) -> np.ndarray:
        return encode_text(prompt, self.cfg.embed_dim)

    def initial_latent(self, seed: int) -> np.ndarray:
        return sample_initial_latent(seed, self.cfg.latent_shape)


def generate_monolithic_ldm(pipeline: LdmPipeline, prompt: str, seed: int,
                            t_steps: int | None = None) -> np.ndarray:
    """Single-process loop; the exactness oracle for the split pipeline."""
    t_steps = t_steps if t_steps is not None else pipeline.cfg.t_steps
    emb = pipeline.text_embedding(prompt)
    latent = pipeline.initial_latent(seed)
    for t in range(t_steps):
        noise = pipeline.unet.predict(latent, emb, t, t_steps)
        latent = denoise_step(latent, noise, t, t_steps)
    return pipeline.decoder.decode(latent)
