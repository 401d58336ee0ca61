"""Command-line front end: simulate scenes, enhance, baselines, sweeps, replay.

Exit codes: 0 success, 1 usage error, 2 data/processing error.
"""

import argparse
import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import baselines, metrics, scene as scene_mod, wavio
from .dsp import StftConfig, stft
from .model import WeightManifest, enhance_from_frames, enhance_waveforms
from .transport import ChannelModel, read_casf

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_EXIT)


def _load_config_defaults(argv):
    """Pre-scan for --config and return its mapping of default overrides."""
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            with open(argv[i + 1]) as fh:
                return yaml.safe_load(fh) or {}
        if tok.startswith("--config="):
            with open(tok.split("=", 1)[1]) as fh:
                return yaml.safe_load(fh) or {}
    return {}


def _parse_ranks(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",") if v]


def _scene_sources(spec, args, fs=16000):
    """Speech and noise waveforms for a scene: files when given, else seeded synthesis."""
    if getattr(args, "speech", None):
        speech, _ = wavio.read_wav(args.speech, fs, resample=not args.no_resample)
    else:
        speech = scene_mod.synth_speech(args.duration, fs, seed=spec.seed)
    noises = []
    for i, ns in enumerate(spec.noise_specs):
        if ns.wav:
            noise, _ = wavio.read_wav(ns.wav, fs, resample=not args.no_resample)
        else:
            noises_kind = "white" if i % 2 else "pink"
            noise = scene_mod.synth_noise(args.duration, fs, seed=spec.seed + 1000 + i, kind=noises_kind)
        noises.append(noise)
    return speech, noises


def _render_from_args(args):
    spec = scene_mod.load_scene_spec(args.scene)
    if getattr(args, "seed", None) is not None:
        spec.seed = args.seed
    speech, noises = _scene_sources(spec, args)
    return spec, scene_mod.render_scene(spec, speech, noises)


def cmd_simulate(args) -> int:
    spec, result = _render_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mix_files = []
    for i in range(result.mixes.shape[0]):
        name = f"mix_{i + 1:02d}.wav"
        wavio.write_wav(out / name, result.mixes[i])
        mix_files.append(name)
    wavio.write_wav(out / "target.wav", result.target)
    scene_mod.save_scene_spec(spec, out / "scene.yaml")
    manifest = {
        "scene": "scene.yaml",
        "seed": int(spec.seed),
        "snr_db": float(spec.snr_db),
        "mixes": mix_files,
        "target": "target.wav",
        "speech": args.speech or f"synthesized(seed={spec.seed})",
    }
    with open(out / "manifest.yaml", "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=False)
    print(f"wrote {len(mix_files)} mixture channels + target to {out}")
    return 0


def _load_scene_dir(scene_dir):
    d = Path(scene_dir)
    with open(d / "manifest.yaml") as fh:
        manifest = yaml.safe_load(fh)
    mixes = [wavio.read_wav(d / name)[0] for name in manifest["mixes"]]
    target, _ = wavio.read_wav(d / manifest["target"])
    return mixes, target, manifest


def _print_metrics_row(label, est, target, noisy, nsa_value):
    cols = [f"{label:<14}"]
    cols.append(f"SI-SDR {metrics.si_sdr(est, target):7.2f} dB")
    if noisy is not None:
        cols.append(f"(noisy {metrics.si_sdr(noisy, target):7.2f} dB)")
    try:
        cols.append(f"STOI {metrics.stoi(est, target):6.3f}")
    except ValueError:
        cols.append("STOI    n/a")
    cols.append(f"NSA {nsa_value:6.3f}")
    print("  ".join(cols))


def cmd_enhance(args) -> int:
    mixes, target, _ = _load_scene_dir(args.scene_dir)
    manifest = WeightManifest.load(args.weights)
    channel = None
    if args.drop > 0 or args.max_delay > 0:
        channel = ChannelModel(args.drop, args.max_delay, jitter_seed=args.seed or 0)
    result = enhance_waveforms(
        mixes, manifest, rank=args.rank, mode=args.mode, channel=channel
    )
    wavio.write_wav(args.out, result.wave)
    _print_metrics_row("enhanced", result.wave, target, mixes[0], result.nsa)
    if result.discarded or result.gaps:
        print(f"frames delivered={result.delivered} discarded={result.discarded} gaps={result.gaps}")
    return 0


def cmd_mvdr(args) -> int:
    spec, result = _render_from_args(args)
    cfg = StftConfig()
    mix_stfts = [stft(x, cfg) for x in result.mixes]
    speech_stfts = [stft(x, cfg) for x in result.speech_images]
    noise_stfts = [stft(x, cfg) for x in result.noise_images]
    cov = baselines.estimate_oracle_cov(speech_stfts, noise_stfts)
    wave = baselines.mvdr_enhance(mix_stfts, cov, ref=0)
    out = np.zeros(len(result.target))
    out[: len(wave)] = wave[: len(result.target)]
    wavio.write_wav(args.out, out)
    _print_metrics_row("oracle mvdr", out, result.target, result.mixes[0], 1.0)
    return 0


def cmd_sweep_rank(args) -> int:
    mixes, target, _ = _load_scene_dir(args.scene_dir)
    manifest = WeightManifest.load(args.weights)
    ranks = _parse_ranks(args.ranks)

    def run(a):
        r = enhance_waveforms(mixes, manifest, rank=a, mode="compressed")
        try:
            stoi_val = metrics.stoi(r.wave, target)
        except ValueError:
            stoi_val = float("nan")
        return {
            "rank": a,
            "nsa": r.nsa_report.asymptotic,
            "si_sdr_db": metrics.si_sdr(r.wave, target),
            "stoi": stoi_val,
            "feature_mse": r.feature_mse,
        }

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rows = sorted(pool.map(run, ranks), key=lambda r: r["rank"])
    fields = ["rank", "nsa", "si_sdr_db", "stoi", "feature_mse"]
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(
            f"a={row['rank']:2d}  NSA={row['nsa']:5.3f}  SI-SDR={row['si_sdr_db']:7.2f} dB"
            f"  STOI={row['stoi']:6.3f}  feat-MSE={row['feature_mse']:.3e}"
        )
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax1 = plt.subplots(figsize=(7, 4))
        xs = [r["rank"] for r in rows]
        ax1.plot(xs, [r["si_sdr_db"] for r in rows], "o-", label="SI-SDR (dB)")
        ax1.set_xlabel("rank a")
        ax1.set_ylabel("SI-SDR (dB)")
        ax2 = ax1.twinx()
        ax2.plot(xs, [r["nsa"] for r in rows], "s--", color="tab:red", label="NSA")
        ax2.set_ylabel("NSA")
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
        print(f"plot written to {args.plot}")
    return 0


def cmd_replay(args) -> int:
    frames = read_casf(args.casf)
    per_node = {}
    total_bytes = 0
    for fr in frames:
        d, fp = fr.factors.shape
        total_bytes += 20 + 4 * (d + fp) * fr.factors.rank
        per_node.setdefault(fr.node_id, []).append(fr.frame_index)
    print(f"{args.casf}: {len(frames)} frames, {total_bytes} bytes, {len(per_node)} nodes")
    for node in sorted(per_node):
        idx = per_node[node]
        print(
            f"  node {node}: {len(idx)} frames, indices {min(idx)}..{max(idx)}"
        )
    if args.weights and args.ref:
        manifest = WeightManifest.load(args.weights)
        ref, _ = wavio.read_wav(args.ref)
        result = enhance_from_frames(ref, frames, manifest)
        if args.out:
            wavio.write_wav(args.out, result.wave)
            print(f"enhanced replay written to {args.out}")
        print(
            f"replay enhance: delivered={result.delivered} discarded={result.discarded} gaps={result.gaps}"
        )
    return 0


def cmd_describe_weights(args) -> int:
    manifest = WeightManifest.load(args.weights)
    print(manifest.describe())
    print(f"digest {manifest.digest()}")
    return 0


def cmd_eval(args) -> int:
    est, _ = wavio.read_wav(args.est)
    ref, _ = wavio.read_wav(args.ref)
    n = min(len(est), len(ref))
    est, ref = est[:n], ref[:n]
    print(f"SI-SDR: {metrics.si_sdr(est, ref):7.2f} dB")
    try:
        print(f"STOI:   {metrics.stoi(est, ref):6.3f}")
    except ValueError as exc:
        print(f"STOI:   n/a ({exc})")
    if args.noisy:
        noisy, _ = wavio.read_wav(args.noisy)
        noisy = noisy[:n]
        print(f"noisy SI-SDR: {metrics.si_sdr(noisy, ref):7.2f} dB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="casnet", description=__doc__)
    parser.add_argument("--config", help="YAML file of flag defaults", default=None)
    parser.add_argument("--seed", type=int, default=None, help="override scene/channel seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a multichannel scene to wav files")
    p.add_argument("--scene", required=True)
    p.add_argument("--speech", default=None, help="speech wav (synthesized when omitted)")
    p.add_argument("--duration", type=float, default=4.0, help="synthesized source length, s")
    p.add_argument("--no-resample", action="store_true", help="reject non-16k inputs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("enhance", help="run the full pipeline on a simulated scene")
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--max-delay", type=int, default=0)
    p.add_argument("--mode", choices=("compressed", "raw"), default="compressed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("mvdr", help="oracle MVDR baseline on a scene config")
    p.add_argument("--scene", required=True)
    p.add_argument("--speech", default=None)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--no-resample", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mvdr)

    p = sub.add_parser("sweep-rank", help="quality/bandwidth sweep over SVD ranks")
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--ranks", default="1..16")
    p.add_argument("--jobs", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_sweep_rank)

    p = sub.add_parser("replay", help="inspect or re-enhance a .casf frame container")
    p.add_argument("casf")
    p.add_argument("--weights", default=None)
    p.add_argument("--ref", default=None, help="reference-channel wav for re-enhancement")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("describe-weights", help="print the manifest tensor table")
    p.add_argument("weights")
    p.set_defaults(func=cmd_describe_weights)

    p = sub.add_parser("eval", help="SI-SDR/STOI between two wav files")
    p.add_argument("--est", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--noisy", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    defaults = _load_config_defaults(argv)
    if defaults:
        parser.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"casnet: error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
