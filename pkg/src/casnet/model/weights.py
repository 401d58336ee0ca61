"""Versioned weight-manifest container and the required-tensor schema.

File layout:

    bytes 0..7   magic "CASWGT01"
    u32          header length (JSON, utf-8)
    header       {"format_version", "config", "digest", "tensors": [...]}
    payload      concatenated little-endian float32, row-major

Each header tensor entry carries name, shape, and byte offset into the
payload; digest is the SHA-256 of the whole payload region.
"""

import hashlib
import json
import struct

import numpy as np

from .config import ModelConfig

MAGIC = b"CASWGT01"
FORMAT_VERSION = 1


class WeightError(ValueError):
    """Missing tensor, shape mismatch, or corrupted manifest."""


def _dpr_tensors(prefix: str, cfg: ModelConfig) -> dict[str, tuple]:
    d, h, fp = cfg.d, cfg.dpr_hidden, cfg.f_prime
    t = {}
    # intra: bidirectional recurrence across frequency
    for suffix in ("", "_reverse"):
        t[f"{prefix}.intra.gru.weight_ih_l0{suffix}"] = (3 * h, d)
        t[f"{prefix}.intra.gru.weight_hh_l0{suffix}"] = (3 * h, h)
        t[f"{prefix}.intra.gru.bias_ih_l0{suffix}"] = (3 * h,)
        t[f"{prefix}.intra.gru.bias_hh_l0{suffix}"] = (3 * h,)
    t[f"{prefix}.intra.proj.weight"] = (d, 2 * h)
    t[f"{prefix}.intra.proj.bias"] = (d,)
    t[f"{prefix}.intra.norm.weight"] = (d, fp)
    t[f"{prefix}.intra.norm.bias"] = (d, fp)
    # inter: causal recurrence across time
    t[f"{prefix}.inter.gru.weight_ih_l0"] = (3 * h, d)
    t[f"{prefix}.inter.gru.weight_hh_l0"] = (3 * h, h)
    t[f"{prefix}.inter.gru.bias_ih_l0"] = (3 * h,)
    t[f"{prefix}.inter.gru.bias_hh_l0"] = (3 * h,)
    t[f"{prefix}.inter.proj.weight"] = (d, h)
    t[f"{prefix}.inter.proj.bias"] = (d,)
    t[f"{prefix}.inter.norm.weight"] = (d, fp)
    t[f"{prefix}.inter.norm.bias"] = (d, fp)
    return t


def _cwq_tensors(prefix: str, cfg: ModelConfig) -> dict[str, tuple]:
    e = cfg.embed_dim
    t = {f"{prefix}.kv_norm.weight": (e,), f"{prefix}.kv_norm.bias": (e,)}
    for name in ("q_proj", "k_proj", "v_proj", "out_proj"):
        t[f"{prefix}.{name}.weight"] = (e, e)
        t[f"{prefix}.{name}.bias"] = (e,)
    t[f"{prefix}.pad_frame"] = (cfg.d, cfg.f_prime)
    return t


def required_tensors(cfg: ModelConfig) -> dict[str, tuple]:
    """Every tensor name the forward pass reads, with its exact shape."""
    stages = cfg.frequency_stages()
    d = cfg.d
    t = {}
    in_ch = 3
    for i, f_out in enumerate(stages, start=1):
        t[f"enc{i}.conv.weight"] = (d, in_ch, 1, 3)
        t[f"enc{i}.conv.bias"] = (d,)
        t[f"enc{i}.prelu.weight"] = (1,)
        t[f"enc{i}.norm.weight"] = (d, f_out)
        t[f"enc{i}.norm.bias"] = (d, f_out)
        in_ch = d
    t.update(_dpr_tensors("dpr_enc", cfg))
    t.update(_cwq_tensors("cwq1", cfg))
    t["align.proj.weight"] = (d, 2 * d)
    t["align.proj.bias"] = (d,)
    t.update(_dpr_tensors("align.dpr", cfg))
    t.update(_cwq_tensors("cwq2", cfg))
    t.update(_dpr_tensors("dpr_fuse", cfg))
    # decoder mirrors the encoder; each stage consumes a skip concatenation
    dec_out = [stages[1], stages[0], cfg.n_bins]  # 64, 128, 257 at defaults
    out_ch = [d, d, 1]
    for i in range(3):
        name = f"dec{3 - i}"
        t[f"{name}.deconv.weight"] = (2 * d, out_ch[i], 1, 3)
        t[f"{name}.deconv.bias"] = (out_ch[i],)
        if i < 2:
            t[f"{name}.prelu.weight"] = (1,)
            t[f"{name}.norm.weight"] = (d, dec_out[i])
            t[f"{name}.norm.bias"] = (d, dec_out[i])
    return t


class WeightManifest:
    """Immutable named-tensor set backing one model configuration."""

    def __init__(self, tensors: dict[str, np.ndarray], config: ModelConfig):
        self.config = config
        self.tensors = {}
        schema = required_tensors(config)
        for name, shape in schema.items():
            if name not in tensors:
                raise WeightError(f"manifest is missing tensor {name!r}")
            arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
            if arr.shape != shape:
                raise WeightError(
                    f"tensor {name!r} has shape {arr.shape}, expected {shape}"
                )
            arr.flags.writeable = False
            self.tensors[name] = arr
        extra = set(tensors) - set(schema)
        if extra:
            raise WeightError(f"manifest carries unknown tensors: {sorted(extra)}")

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise WeightError(f"manifest is missing tensor {name!r}") from None

    def digest(self) -> str:
        sha = hashlib.sha256()
        for name in sorted(self.tensors):
            sha.update(self.tensors[name].tobytes())
        return sha.hexdigest()

    def describe(self) -> str:
        lines = [f"{'tensor':<34} {'shape':<16} {'params':>8}"]
        total = 0
        for name in sorted(self.tensors):
            arr = self.tensors[name]
            total += arr.size
            lines.append(f"{name:<34} {str(arr.shape):<16} {arr.size:>8}")
        lines.append(f"{'total':<34} {'':<16} {total:>8}")
        return "\n".join(lines)

    def save(self, path):
        names = sorted(self.tensors)
        offsets = {}
        pos = 0
        payload = bytearray()
        for name in names:
            raw = self.tensors[name].astype("<f4").tobytes()
            offsets[name] = pos
            payload.extend(raw)
            pos += len(raw)
        digest = hashlib.sha256(bytes(payload)).hexdigest()
        header = {
            "format_version": FORMAT_VERSION,
            "config": {
                "d": self.config.d,
                "f_prime": self.config.f_prime,
                "heads": self.config.heads,
                "past": self.config.past,
                "future": self.config.future,
                "dpr_hidden": self.config.dpr_hidden,
                "n_bins": self.config.n_bins,
                "alpha": self.config.alpha,
                "pad_mode": self.config.pad_mode,
            },
            "digest": digest,
            "tensors": [
                {
                    "name": name,
                    "shape": list(self.tensors[name].shape),
                    "offset": offsets[name],
                }
                for name in names
            ],
        }
        blob = json.dumps(header).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(bytes(payload))

    @classmethod
    def load(cls, path) -> "WeightManifest":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:8] != MAGIC:
            raise WeightError(f"{path}: not a weight manifest")
        (hlen,) = struct.unpack("<I", blob[8:12])
        header = json.loads(blob[12 : 12 + hlen])
        if header.get("format_version") != FORMAT_VERSION:
            raise WeightError(f"unsupported manifest version {header.get('format_version')}")
        payload = blob[12 + hlen :]
        if hashlib.sha256(payload).hexdigest() != header["digest"]:
            raise WeightError("manifest payload digest mismatch")
        cfg = ModelConfig(**header["config"])
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            off = entry["offset"]
            arr = np.frombuffer(payload[off : off + 4 * count], dtype="<f4")
            tensors[entry["name"]] = arr.reshape(shape)
        return cls(tensors, cfg)


def random_manifest(cfg: ModelConfig, seed: int = 0, scale: float = 0.1) -> WeightManifest:
    """Gaussian-initialized manifest for tests and untrained runs.

    Norm gains start at 1 and biases at 0; PReLU slopes at 0.25 (the usual
    init); everything else is scaled white noise.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in required_tensors(cfg).items():
        if name.endswith("norm.weight"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith("norm.bias") or name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        elif name.endswith("prelu.weight"):
            tensors[name] = np.full(shape, 0.25, dtype=np.float32)
        elif name.endswith("pad_frame"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            tensors[name] = (scale * rng.standard_normal(shape)).astype(np.float32)
    return WeightManifest(tensors, cfg)
