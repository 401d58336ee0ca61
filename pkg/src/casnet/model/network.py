"""Forward pass: shared encoder, dual-path recurrence, cross-window attention,
alignment/fusion, magnitude decoder, and the end-to-end enhancement pipeline."""

import math
from dataclasses import dataclass

import numpy as np

from .. import metrics as _metrics
from ..compressor import compress_sequence, decompress_frame
from ..dsp import InputFeature, Spectrogram, StftConfig, extract_features, griffin_lim, stft
from ..transport import ChannelModel, FrameEvent, ReceivedFrame, channel_apply, deserialize, fc_assemble, serialize
from .config import ModelConfig
from .layers import (
    conv2d_freq,
    deconv2d_freq,
    frame_layer_norm,
    gru_sequence,
    linear,
    prelu,
    softmax,
    vector_layer_norm,
)
from .weights import WeightManifest


def _as_maps(phi) -> np.ndarray:
    maps = phi.maps if isinstance(phi, InputFeature) else np.asarray(phi)
    if maps.ndim != 3 or maps.shape[0] != 3:
        raise ValueError(f"input feature must be 3 x T x F, got {maps.shape}")
    return np.ascontiguousarray(maps, dtype=np.float32)


def encode(phi, w: WeightManifest, cfg: ModelConfig | None = None):
    """Shared per-device encoder: three stride-2 frequency stages, then DPR.

    Returns the node representation (D, T, F') and the per-stage skip
    activations the decoder consumes. The same manifest tensors serve every
    device, so identical inputs encode identically on any node.
    """
    cfg = cfg or w.config
    x = _as_maps(phi)
    if x.shape[2] != cfg.n_bins:
        raise ValueError(f"expected {cfg.n_bins} bins, got {x.shape[2]}")
    skips = []
    for i, pad in enumerate(cfg.stage_pads(), start=1):
        x = conv2d_freq(x, w[f"enc{i}.conv.weight"], w[f"enc{i}.conv.bias"], pad)
        x = prelu(x, w[f"enc{i}.prelu.weight"])
        x = frame_layer_norm(x, w[f"enc{i}.norm.weight"], w[f"enc{i}.norm.bias"])
        skips.append(x)
    h = dpr_forward(x, w, cfg, prefix="dpr_enc")
    return h, skips


def dpr_forward(h: np.ndarray, w: WeightManifest, cfg: ModelConfig | None = None, prefix: str = "dpr_enc") -> np.ndarray:
    """Dual-path recurrence over one feature tensor (D, T, F').

    The intra path scans frequency bidirectionally within each frame; the
    inter path scans time causally within each bin. Both paths project back
    to D channels and add a residual followed by per-frame normalization, so
    the block is frame-causal as a whole.
    """
    cfg = cfg or w.config
    h = np.ascontiguousarray(h, dtype=np.float32)
    d, n_t, fp = h.shape
    if d != cfg.d or fp != cfg.f_prime:
        raise ValueError(f"feature tensor {h.shape} does not match config")

    # intra: sequences of length F', one per frame
    x = np.ascontiguousarray(np.transpose(h, (1, 2, 0)))  # (T, F', D)
    fwd = gru_sequence(
        x,
        w[f"{prefix}.intra.gru.weight_ih_l0"],
        w[f"{prefix}.intra.gru.weight_hh_l0"],
        w[f"{prefix}.intra.gru.bias_ih_l0"],
        w[f"{prefix}.intra.gru.bias_hh_l0"],
    )
    bwd = gru_sequence(
        x,
        w[f"{prefix}.intra.gru.weight_ih_l0_reverse"],
        w[f"{prefix}.intra.gru.weight_hh_l0_reverse"],
        w[f"{prefix}.intra.gru.bias_ih_l0_reverse"],
        w[f"{prefix}.intra.gru.bias_hh_l0_reverse"],
        reverse=True,
    )
    y = linear(
        np.concatenate([fwd, bwd], axis=-1),
        w[f"{prefix}.intra.proj.weight"],
        w[f"{prefix}.intra.proj.bias"],
    )  # (T, F', D)
    h = h + np.transpose(y, (2, 0, 1))
    h = frame_layer_norm(h, w[f"{prefix}.intra.norm.weight"], w[f"{prefix}.intra.norm.bias"])

    # inter: sequences of length T, one per bin, causal
    x = np.ascontiguousarray(np.transpose(h, (2, 1, 0)))  # (F', T, D)
    out = gru_sequence(
        x,
        w[f"{prefix}.inter.gru.weight_ih_l0"],
        w[f"{prefix}.inter.gru.weight_hh_l0"],
        w[f"{prefix}.inter.gru.bias_ih_l0"],
        w[f"{prefix}.inter.gru.bias_hh_l0"],
    )
    y = linear(out, w[f"{prefix}.inter.proj.weight"], w[f"{prefix}.inter.proj.bias"])
    h = h + np.transpose(y, (2, 1, 0))
    return frame_layer_norm(h, w[f"{prefix}.inter.norm.weight"], w[f"{prefix}.inter.norm.bias"])


def _flatten_frames(feats: np.ndarray) -> np.ndarray:
    # (D, T, F') -> (T, D*F'), one row per frame
    d, n_t, fp = feats.shape
    return np.ascontiguousarray(np.moveaxis(feats, 1, 0)).reshape(n_t, d * fp)


def _pad_vector(w: WeightManifest, cfg: ModelConfig, prefix: str) -> np.ndarray:
    if cfg.pad_mode == "learned":
        return w[f"{prefix}.pad_frame"].reshape(-1)
    return np.zeros(cfg.embed_dim, dtype=np.float32)


def _project_kv(raw: np.ndarray, w: WeightManifest, prefix: str):
    ln = vector_layer_norm(raw, w[f"{prefix}.kv_norm.weight"], w[f"{prefix}.kv_norm.bias"])
    k = linear(ln, w[f"{prefix}.k_proj.weight"], w[f"{prefix}.k_proj.bias"])
    v = linear(ln, w[f"{prefix}.v_proj.weight"], w[f"{prefix}.v_proj.bias"])
    return k, v


def _attend(q_raw, k_slots, v_slots, valid, w, cfg, prefix):
    """Multi-head attention over gathered key/value slots plus query residual.

    q_raw (T, E); k/v_slots (T, S, E); valid (T, S). Invalid slots were
    already replaced by the padding vector unless pad_mode is "none", in
    which case they are masked out here; a query with no usable slot at all
    is an error.
    """
    n_t, n_s, e = k_slots.shape
    heads = cfg.heads
    dh = e // heads
    q = linear(q_raw, w[f"{prefix}.q_proj.weight"], w[f"{prefix}.q_proj.bias"])
    qh = q.reshape(n_t, heads, dh)
    kh = k_slots.reshape(n_t, n_s, heads, dh)
    vh = v_slots.reshape(n_t, n_s, heads, dh)
    scores = np.einsum("thd,tshd->ths", qh, kh, optimize=True) / math.sqrt(dh)
    if cfg.pad_mode == "none":
        usable = valid.any(axis=1)
        if not usable.all():
            k_bad = int(np.argmin(usable))
            raise ValueError(f"no context: query frame {k_bad} has an empty key set")
        scores = np.where(valid[:, None, :], scores, -np.inf)
    attn = softmax(scores, axis=-1)
    ctx = np.einsum("ths,tshd->thd", attn, vh, optimize=True).reshape(n_t, e)
    out = linear(ctx, w[f"{prefix}.out_proj.weight"], w[f"{prefix}.out_proj.bias"])
    return out + q_raw


def cwq_sequence(
    h_ref: np.ndarray,
    node_feats: list,
    w: WeightManifest,
    cfg: ModelConfig | None = None,
    prefix: str = "cwq1",
) -> np.ndarray:
    """Cross-window query over whole sequences.

    node_feats is a list of (feats, valid) pairs: feats (D, T, F') dense,
    valid (T, window_len) marking which window slot is usable at each query
    frame (False outside the sequence or before a delayed frame arrives).
    Missing slots read the padding frame. Returns MHA output + h_ref.
    """
    cfg = cfg or w.config
    n_t = h_ref.shape[1]
    if not node_feats:
        raise ValueError("no context: cross-window query needs at least one node")
    q_raw = _flatten_frames(np.ascontiguousarray(h_ref, dtype=np.float32))
    window = cfg.window_len
    offs = np.arange(window) - cfg.past
    j = np.arange(n_t)[:, None] + offs[None, :]  # (T, W)
    jc = np.clip(j, 0, n_t - 1)
    in_range = (j >= 0) & (j < n_t)

    pad_raw = _pad_vector(w, cfg, prefix)
    pad_k, pad_v = _project_kv(pad_raw[None, :], w, prefix)
    k_parts, v_parts, valid_parts = [], [], []
    for feats, valid in node_feats:
        feats = np.ascontiguousarray(feats, dtype=np.float32)
        if feats.shape != h_ref.shape:
            raise ValueError(f"node feature shape {feats.shape} != {h_ref.shape}")
        if valid is None:
            valid = in_range
        if valid.shape != (n_t, window):
            raise ValueError(f"validity mask must be (T, {window})")
        valid = valid & in_range
        k_n, v_n = _project_kv(_flatten_frames(feats), w, prefix)
        k_g = np.where(valid[:, :, None], k_n[jc], pad_k)
        v_g = np.where(valid[:, :, None], v_n[jc], pad_v)
        k_parts.append(k_g)
        v_parts.append(v_g)
        valid_parts.append(valid)
    k_slots = np.concatenate(k_parts, axis=1)
    v_slots = np.concatenate(v_parts, axis=1)
    valid_all = np.concatenate(valid_parts, axis=1)
    out = _attend(q_raw, k_slots, v_slots, valid_all, w, cfg, prefix)
    return np.moveaxis(out.reshape(n_t, cfg.d, cfg.f_prime), 0, 1)


def cwq(
    query: np.ndarray,
    keys_values: list,
    w: WeightManifest,
    cfg: ModelConfig | None = None,
    prefix: str = "cwq1",
) -> np.ndarray:
    """Single-frame cross-window query.

    query is one D x F' frame; keys_values holds, per node, the window
    [k-past, k+future] as a list of frames with None marking gaps.
    """
    cfg = cfg or w.config
    query = np.ascontiguousarray(query, dtype=np.float32)
    if query.shape != (cfg.d, cfg.f_prime):
        raise ValueError(f"query must be {(cfg.d, cfg.f_prime)}, got {query.shape}")
    if not keys_values:
        raise ValueError("no context: empty key set")
    window = cfg.window_len
    pad_raw = _pad_vector(w, cfg, prefix)
    slots = []
    valid = []
    for node_window in keys_values:
        if len(node_window) != window:
            raise ValueError(f"each node window must have {window} frames")
        for frame in node_window:
            if frame is None:
                slots.append(pad_raw)
                valid.append(False)
            else:
                frame = np.ascontiguousarray(frame, dtype=np.float32)
                if frame.shape != (cfg.d, cfg.f_prime):
                    raise ValueError("key frame shape mismatch")
                slots.append(frame.reshape(-1))
                valid.append(True)
    raw = np.stack(slots)  # (S, E)
    k, v = _project_kv(raw, w, prefix)
    valid_arr = np.array(valid)[None, :]
    if cfg.pad_mode == "none" and not valid_arr.any():
        raise ValueError("no context: all key frames missing and padding disabled")
    out = _attend(
        query.reshape(1, -1), k[None, :, :], v[None, :, :], valid_arr, w, cfg, prefix
    )
    return out.reshape(cfg.d, cfg.f_prime)


def align_and_fuse(
    h_ref_bar: np.ndarray,
    node_feats: list,
    w: WeightManifest,
    cfg: ModelConfig | None = None,
) -> np.ndarray:
    """Node alignment against the reference, fusion, and final refinement.

    Per node: channel-concatenate the queried reference with the node
    feature, project back to D channels, run DPR. The aligned features then
    serve as keys for a second cross-window query against the reference, and
    a final DPR yields the decoder input. With no nodes this reduces to the
    final DPR alone.
    """
    cfg = cfg or w.config
    h_ref_bar = np.ascontiguousarray(h_ref_bar, dtype=np.float32)
    if not node_feats:
        return dpr_forward(h_ref_bar, w, cfg, prefix="dpr_fuse")
    aligned = []
    for hm in node_feats:
        hm = np.ascontiguousarray(hm, dtype=np.float32)
        if hm.shape != h_ref_bar.shape:
            raise ValueError(f"node feature shape {hm.shape} != {h_ref_bar.shape}")
        cat = np.concatenate([h_ref_bar, hm], axis=0)  # (2D, T, F')
        proj = np.einsum(
            "ci,itf->ctf", w["align.proj.weight"], cat, optimize=True
        ) + w["align.proj.bias"][:, None, None]
        aligned.append((dpr_forward(proj, w, cfg, prefix="align.dpr"), None))
    fused = cwq_sequence(h_ref_bar, aligned, w, cfg, prefix="cwq2")
    return dpr_forward(fused, w, cfg, prefix="dpr_fuse")


def decode(
    phi_hat: np.ndarray,
    skips: list,
    w: WeightManifest,
    cfg: ModelConfig | None = None,
) -> np.ndarray:
    """Transposed-conv mirror of the encoder with skip concatenation.

    Returns the non-negative magnitude estimate (T, n_bins).
    """
    cfg = cfg or w.config
    stages = cfg.frequency_stages()  # e.g. [128, 64, 32]
    pads = cfg.stage_pads()
    if len(skips) != 3:
        raise ValueError("expected three encoder skip tensors")
    x = np.ascontiguousarray(phi_hat, dtype=np.float32)
    sizes = [stages[1], stages[0], cfg.n_bins]
    crops = [pads[2], pads[1], pads[0]]
    for i in range(3):
        name = f"dec{3 - i}"
        skip = np.ascontiguousarray(skips[2 - i], dtype=np.float32)
        if skip.shape != x.shape:
            raise ValueError(
                f"skip shape {skip.shape} does not match decoder input {x.shape}"
            )
        x = np.concatenate([x, skip], axis=0)
        x = deconv2d_freq(
            x, w[f"{name}.deconv.weight"], w[f"{name}.deconv.bias"], crops[i], sizes[i]
        )
        if i < 2:
            x = prelu(x, w[f"{name}.prelu.weight"])
            x = frame_layer_norm(x, w[f"{name}.norm.weight"], w[f"{name}.norm.bias"])
    x = np.maximum(x, 0.0)  # non-negativity of the magnitude estimate
    return x[0]  # (T, n_bins)


@dataclass
class EnhanceResult:
    """Enhanced waveform plus transmission and delivery accounting."""

    wave: np.ndarray
    mag: np.ndarray
    mode: str
    rank: int | None
    nsa: float
    nsa_report: object = None
    feature_mse: float | None = None
    delivered: int = 0
    discarded: int = 0
    gaps: int = 0


def _frames_to_events(frames: list[ReceivedFrame]) -> list[FrameEvent]:
    return [FrameEvent(fr.frame_index, fr) for fr in frames]


def enhance_waveforms(
    mixes: list,
    w: WeightManifest,
    rank: int = 4,
    mode: str = "compressed",
    channel: ChannelModel | None = None,
    stft_cfg: StftConfig | None = None,
) -> EnhanceResult:
    """Full pipeline from M noisy waveforms to the enhanced reference channel.

    Channel 0 is the reference/fusion center. In "compressed" mode every
    other channel's features go through SVD factoring, the byte-level wire
    format, an optional lossy channel, and FC-side assembly before fusion;
    in "raw" mode the nodes ship waveforms and the FC encodes them itself.
    """
    if mode not in ("compressed", "raw"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = w.config
    stft_cfg = stft_cfg or StftConfig()
    mixes = [np.asarray(x, dtype=np.float64) for x in mixes]
    if not mixes:
        raise ValueError("need at least the reference channel")
    n = len(mixes[0])
    if any(len(x) != n for x in mixes):
        raise ValueError("all channels must share one length")

    spec_r = stft(mixes[0], stft_cfg)
    h_r, skips = encode(extract_features(spec_r, cfg.alpha), w, cfg)
    n_t = spec_r.n_frames

    node_h = []
    for x in mixes[1:]:
        h_m, _ = encode(extract_features(stft(x, stft_cfg), cfg.alpha), w, cfg)
        node_h.append(h_m)

    delivered = discarded = gaps = 0
    feature_mse = None
    nsa_report = None
    if mode == "raw" or not node_h:
        nsa_value = 1.0
        node_inputs = [(h_m, None) for h_m in node_h]
        dense_feats = [h_m for h_m in node_h]
    else:
        wire = []
        for m, h_m in enumerate(node_h, start=1):
            for t, factors in enumerate(compress_sequence(h_m, rank)):
                wire.append(serialize(factors, node_id=m, frame_index=t))
        received = [deserialize(buf) for buf in wire]
        events = (
            channel_apply(received, channel) if channel else _frames_to_events(received)
        )
        store = fc_assemble(events, cfg.past)

        pad_fill = (
            w["cwq1.pad_frame"]
            if cfg.pad_mode == "learned"
            else np.zeros((cfg.d, cfg.f_prime), dtype=np.float32)
        )
        dense_feats = [
            np.repeat(pad_fill[:, None, :], n_t, axis=1).copy() for _ in node_h
        ]
        valid = [np.zeros((n_t, cfg.window_len), dtype=bool) for _ in node_h]
        seen = [set() for _ in node_h]
        for k in range(n_t):
            wins = store.window(k)
            for node_id, frames in wins.items():
                ni = node_id - 1
                for slot, factors in enumerate(frames):
                    if factors is None:
                        continue
                    valid[ni][k, slot] = True
                    j = k - cfg.past + slot
                    if j not in seen[ni]:
                        seen[ni].add(j)
                        dense_feats[ni][:, j, :] = decompress_frame(factors)
        delivered = store.delivered
        discarded = store.discarded
        gaps = sum(n_t - len(s) for s in seen)
        feature_mse = float(
            np.mean(
                [
                    np.mean((h_m.astype(np.float64) - d.astype(np.float64)) ** 2)
                    for h_m, d in zip(node_h, dense_feats)
                ]
            )
        )
        node_inputs = list(zip(dense_feats, valid))
        nsa_report = _metrics.nsa(
            n_t, cfg.d, cfg.f_prime, rank, n, fs=stft_cfg.fs, hop=stft_cfg.hop
        )
        nsa_value = nsa_report.nsa

    if node_inputs:
        h_bar = cwq_sequence(h_r, node_inputs, w, cfg, prefix="cwq1")
    else:
        h_bar = h_r
    phi_hat = align_and_fuse(h_bar, dense_feats, w, cfg)
    mag = decode(phi_hat, skips, w, cfg)

    wave = griffin_lim(mag.astype(np.float64), np.angle(spec_r.data), stft_cfg, iters=1)
    out = np.zeros(n)
    out[: len(wave)] = wave[:n]
    return EnhanceResult(
        wave=out,
        mag=mag,
        mode=mode,
        rank=rank if mode == "compressed" else None,
        nsa=nsa_value,
        nsa_report=nsa_report,
        feature_mse=feature_mse,
        delivered=delivered,
        discarded=discarded,
        gaps=gaps,
    )


def enhance_from_frames(
    ref_wave: np.ndarray,
    frames: list[ReceivedFrame],
    w: WeightManifest,
    stft_cfg: StftConfig | None = None,
) -> EnhanceResult:
    """FC-side enhancement from a reference waveform plus received frames.

    Used for offline replay of a recorded frame container: arrival order is
    taken as the frame indices, so results match a lossless live run.
    """
    cfg = w.config
    stft_cfg = stft_cfg or StftConfig()
    ref_wave = np.asarray(ref_wave, dtype=np.float64)
    spec_r = stft(ref_wave, stft_cfg)
    h_r, skips = encode(extract_features(spec_r, cfg.alpha), w, cfg)
    n_t = spec_r.n_frames

    node_ids = sorted({fr.node_id for fr in frames})
    store = fc_assemble(_frames_to_events(frames), cfg.past)
    pad_fill = (
        w["cwq1.pad_frame"]
        if cfg.pad_mode == "learned"
        else np.zeros((cfg.d, cfg.f_prime), dtype=np.float32)
    )
    dense = {nid: np.repeat(pad_fill[:, None, :], n_t, axis=1).copy() for nid in node_ids}
    valid = {nid: np.zeros((n_t, cfg.window_len), dtype=bool) for nid in node_ids}
    seen = {nid: set() for nid in node_ids}
    ranks = set()
    for k in range(n_t):
        for node_id, win in store.window(k).items():
            for slot, factors in enumerate(win):
                if factors is None:
                    continue
                valid[node_id][k, slot] = True
                j = k - cfg.past + slot
                if j not in seen[node_id]:
                    seen[node_id].add(j)
                    if factors.shape != (cfg.d, cfg.f_prime):
                        raise ValueError(
                            f"frame dims {factors.shape} do not match model config"
                        )
                    dense[node_id][:, j, :] = decompress_frame(factors)
                    ranks.add(factors.rank)

    node_inputs = [(dense[nid], valid[nid]) for nid in node_ids]
    h_bar = cwq_sequence(h_r, node_inputs, w, cfg, prefix="cwq1") if node_inputs else h_r
    phi_hat = align_and_fuse(h_bar, [dense[nid] for nid in node_ids], w, cfg)
    mag = decode(phi_hat, skips, w, cfg)
    wave = griffin_lim(mag.astype(np.float64), np.angle(spec_r.data), stft_cfg, iters=1)
    out = np.zeros(len(ref_wave))
    out[: len(wave)] = wave[: len(ref_wave)]
    rank = ranks.pop() if len(ranks) == 1 else None
    nsa_report = None
    if rank is not None:
        nsa_report = _metrics.nsa(
            n_t, cfg.d, cfg.f_prime, rank, len(ref_wave), fs=stft_cfg.fs, hop=stft_cfg.hop
        )
    return EnhanceResult(
        wave=out,
        mag=mag,
        mode="compressed",
        rank=rank,
        nsa=nsa_report.nsa if nsa_report else float("nan"),
        nsa_report=nsa_report,
        delivered=store.delivered,
        discarded=store.discarded,
        gaps=sum(n_t - len(s) for s in seen.values()),
    )
