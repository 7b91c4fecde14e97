"""Command-line front end: ``profile``, ``partition``, ``run`` and ``gen-random``.

Exit codes: 0 success, 2 validation failure, 3 I/O failure, 4 oracle mismatch.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import codec, engine, oracle, partition, perf, plotting, synth
from .model import (HardwareConfig, ManifestIOError, ModelError, NetworkSpec, load_image, load_manifest,
                    save_image, save_manifest)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_MISMATCH = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _out_dir(args) -> Path | None:
    if args.out_dir is None:
        return None
    path = Path(args.out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {path}: {exc}", EXIT_IO) from exc
    return path


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _emit(fmt: str, text: str, js: str, csv_text: str) -> None:
    sys.stdout.write({"text": text, "json": js, "csv": csv_text}[fmt])


# ---------------------------------------------------------------------------
# subcommands


def cmd_profile(args) -> int:
    spec, weights, _ = load_manifest(args.manifest)
    inputs = list(args.input)
    if args.samples is not None:
        if args.samples < 1 or args.samples > len(inputs):
            raise CliError(f"--samples {args.samples} needs that many --input files (got {len(inputs)})",
                           EXIT_INVALID)
        inputs = inputs[: args.samples]
    images = [load_image(p, spec.input_shape) for p in inputs]
    prof = partition.profile(spec, weights, images, args.seed)

    js, csv_text = prof.to_json(), prof.to_csv()
    rows = [(l.name, l.kind, l.input_spikes, l.workload) for l in prof.layers]
    text = (f"samples: {prof.samples}  seed: {prof.seed}\n"
            + perf.format_table(("layer", "kind", "spikes", "workload"), rows) + "\n")
    out = _out_dir(args)
    if out is not None:
        _write(out / "profile.json", js)
        _write(out / "profile.csv", csv_text)
        plotting.plot_workload(prof, out / "workload.png")
    _emit(args.format, text, js, csv_text)
    return EXIT_OK


def cmd_partition(args) -> int:
    try:
        prof = partition.load_profile(args.profile)
    except OSError as exc:
        raise CliError(f"cannot read profile {args.profile}: {exc.strerror or exc}", EXIT_IO) from exc
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"malformed profile {args.profile}: {exc}", EXIT_INVALID) from exc
    counts = partition.allocate_profile(prof, args.budget)
    frag = partition.nc_fragment(prof, counts)
    js = json.dumps(frag, indent=2, sort_keys=True) + "\n"
    rows = [(l.name, l.workload, n) for l, n in zip(prof.layers, counts)]
    text = (perf.format_table(("layer", "workload", "nc_count"), rows)
            + f"\nbottleneck (max W/N): {frag['bottleneck_value']:.6g}\n")
    csv_text = "layer,workload,nc_count\n" + "".join(f"{a},{b},{c}\n" for a, b, c in rows)
    out = _out_dir(args)
    if out is not None:
        _write(out / "partition.json", js)
    _emit(args.format, text, js, csv_text)
    return EXIT_OK


def cmd_run(args) -> int:
    spec, weights, hw = load_manifest(args.manifest)
    image = load_image(args.input, spec.input_shape)
    result = engine.run_network(spec, weights, hw, image, args.seed)
    match = None
    if args.oracle_check:
        ref = oracle.dense_forward(spec, weights, image, args.seed)
        match = ref.decision == result.decision and all(
            a == b for a, b in zip(result.outputs, ref.outputs))
    rep = perf.report(spec, hw, result, match)

    js, csv_text, text = rep.to_json(), rep.to_csv(), rep.to_text()
    out = _out_dir(args)
    if out is not None:
        _write(out / "report.json", js)
        _write(out / "report.csv", csv_text)
        _write(out / "report.txt", text)
        plotting.plot_cycles(rep.cycles, out / "cycles.png")
        if args.dump_spikes:
            for name, tensor in zip(perf.layer_names(spec), result.outputs):
                _write(out / f"spikes_{name}.txt", tensor.to_text())
    _emit(args.format, text, js, csv_text)
    if match is False:
        print("error: engine output differs from the dense oracle", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_gen_random(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.topology:
        spec = NetworkSpec.from_topology(args.topology, timesteps=args.timesteps, beta=args.beta,
                                         classes=args.classes, pop_per_class=args.pop_per_class)
    else:
        spec = synth.random_spec(rng)
    if args.weights == "scaled":
        weights = synth.scaled_weights(spec, rng, gain=args.gain)
    else:
        weights = synth.random_weights(spec, rng)
    if args.nc:
        counts = [int(v) for v in args.nc.split(",")]
        hw = HardwareConfig.from_counts(counts)
    else:
        hw = HardwareConfig.uniform(spec)
    out = _out_dir(args) or Path(".")
    try:
        manifest = save_manifest(out / "manifest.json", spec, weights, hw)
        for k in range(args.inputs):
            if args.sparsity is not None:
                img = synth.sparse_image(spec.input_shape, rng, args.sparsity)
            else:
                img = synth.random_image(spec.input_shape, rng)
            save_image(out / f"input_{k}.bin", img)
    except OSError as exc:
        raise CliError(f"cannot write model files: {exc}", EXIT_IO) from exc
    print(manifest)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikeaccel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True):
        if manifest:
            p.add_argument("--manifest", required=True, help="network manifest JSON")
        p.add_argument("--seed", type=int, default=0, help="rate-coding seed (default 0)")
        p.add_argument("--out-dir", help="directory for report files and figures")
        p.add_argument("--format", choices=("json", "csv", "text"), default="text",
                       help="what to print on stdout")

    p = sub.add_parser("profile", help="one-core-per-layer workload profiling")
    common(p)
    p.add_argument("--input", action="append", required=True, help="float32 [C][H][W] image (repeatable)")
    p.add_argument("--samples", type=int, help="use only the first N inputs")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("partition", help="split a core budget across layers")
    p.add_argument("profile", help="profile.json written by 'profile'")
    p.add_argument("--budget", type=int, required=True, help="total neural cores")
    p.add_argument("--out-dir")
    p.add_argument("--format", choices=("json", "csv", "text"), default="text")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("run", help="simulate one image and report cycles")
    common(p)
    p.add_argument("--input", required=True, help="float32 [C][H][W] image")
    p.add_argument("--oracle-check", action="store_true", help="compare against the dense oracle (exit 4 on mismatch)")
    p.add_argument("--dump-spikes", action="store_true", help="write per-layer spike tensors to --out-dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen-random", help="write a random manifest, weights and inputs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--topology", help="compact topology, e.g. 12x12-4C3-P2-3 (random if omitted)")
    p.add_argument("--timesteps", type=int, default=3)
    p.add_argument("--beta", default="0.15")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--pop-per-class", type=int, default=1)
    p.add_argument("--weights", choices=("uniform", "scaled"), default="uniform",
                   help="uniform in [-1, 1] or fan-in scaled")
    p.add_argument("--gain", type=float, default=4.0, help="gain for --weights scaled")
    p.add_argument("--nc", help="comma-separated nc_count per compute layer")
    p.add_argument("--inputs", type=int, default=1, help="number of random input images")
    p.add_argument("--sparsity", type=float, help="binary inputs with this zero fraction")
    p.set_defaults(func=cmd_gen_random)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ManifestIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ModelError, codec.EncodeError, partition.AllocationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
