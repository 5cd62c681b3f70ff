"""Command-line pipeline: calibrate, convert, run, analyze, energy, compare.

A JSON config file holds every setting; command-line flags override it.
Exit codes: 0 ok, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analytics, calibrate, decode, energy, netspec, spikesim


class InputError(Exception):
    """Bad configuration or input files (exit code 2)."""


@dataclass
class RunConfig:
    model: str = ""
    calibration_dir: str = ""
    inputs_dir: str = ""
    scheme: str = "channel"
    percentile_mode: str = "p99.9"
    alpha: float | None = None
    v_th: float = 1.0
    T: int = 1000
    decode: str = "v_mem"
    signed: bool = True
    output_mode: str = "fire"
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "out"
    T_list: list[int] = field(default_factory=list)
    target: float = 0.02
    bin_width: float = 0.005
    raster_layer: int = 0
    raster_channel: int = 0
    stats: str = ""
    convergence_inputs: int = 0

    def validate(self) -> None:
        if not self.model or not Path(self.model).is_file():
            raise InputError(f"model manifest not found: {self.model or '<unset>'}")
        if not self.calibration_dir or not Path(self.calibration_dir).is_dir():
            raise InputError(f"calibration directory not found: {self.calibration_dir or '<unset>'}")
        if self.inputs_dir and not Path(self.inputs_dir).is_dir():
            raise InputError(f"inputs directory not found: {self.inputs_dir}")
        if self.stats and not Path(self.stats).is_file():
            raise InputError(f"stats file not found: {self.stats}")
        if self.T < 1:
            raise InputError("T must be at least 1")
        if self.scheme not in ("layer", "channel"):
            raise InputError(f"scheme must be 'layer' or 'channel', got {self.scheme!r}")
        if self.percentile_mode not in calibrate.MODES:
            raise InputError(f"percentile_mode must be one of {calibrate.MODES}")
        if self.decode not in decode.SCHEMES:
            raise InputError(f"decode must be one of {decode.SCHEMES}")

    def grid(self) -> list[int]:
        if self.T_list:
            return sorted({int(t) for t in self.T_list if 1 <= t <= self.T} | {self.T})
        ts = {self.T}
        t = 1
        while t < self.T:
            ts.add(t)
            t *= 10
        return sorted(ts)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    values = {}
    if path:
        try:
            values = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_inputs(directory: str, net: netspec.NetworkSpec) -> np.ndarray:
    files = sorted(Path(directory).glob("*.npy"))
    if not files:
        raise InputError(f"no .npy inputs in {directory}")
    arrays = []
    for f in files:
        a = np.load(f).astype(np.float32)
        arrays.append(a[None] if a.shape == net.input_shape else a)
    try:
        x = np.concatenate(arrays)
    except ValueError as exc:
        raise InputError(f"inputs in {directory} have inconsistent shapes: {exc}") from None
    if x.shape[1:] != net.input_shape:
        raise InputError(f"inputs in {directory} have shape {x.shape[1:]}, model expects {net.input_shape}")
    return x


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


class Pipeline:
    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.net = netspec.fold_batchnorm(netspec.load_model(cfg.model))
        if cfg.alpha is not None:
            self.net = netspec.NetworkSpec(self.net.layers, self.net.input_shape, cfg.alpha)
        self.calib = load_inputs(cfg.calibration_dir, self.net)
        self.inputs = load_inputs(cfg.inputs_dir, self.net) if cfg.inputs_dir else self.calib
        self._stats = None

    @property
    def stats(self) -> calibrate.ActivationStats:
        if self._stats is None:
            if self.cfg.stats:
                self._stats = calibrate.ActivationStats.load(self.cfg.stats)
            else:
                self._stats = calibrate.collect_stats(self.net, self.calib, self.cfg.percentile_mode)
        return self._stats

    def normalized(self, scheme: str | None = None) -> calibrate.NormalizedNetwork:
        return calibrate.normalize(self.net, self.stats, scheme or self.cfg.scheme)

    def spiking(self, scheme: str | None = None) -> spikesim.SpikingNetwork:
        return spikesim.convert(self.normalized(scheme), self.cfg.v_th, self.cfg.signed, self.cfg.output_mode)

    def convergence_inputs(self) -> np.ndarray:
        """All inputs, or a subsample drawn with the first seed."""
        k = self.cfg.convergence_inputs
        if not k or k >= len(self.inputs):
            return self.inputs
        rng = np.random.default_rng(self.cfg.seeds[0] if self.cfg.seeds else 0)
        return self.inputs[np.sort(rng.choice(len(self.inputs), k, replace=False))]

    def sim_options(self) -> dict:
        c = self.cfg
        return {"decode_scheme": c.decode, "v_th": c.v_th, "signed": c.signed, "output_mode": c.output_mode}

    def echo_config(self) -> None:
        _write(self.out / "config.json", _dump(asdict(self.cfg)))


def cmd_calibrate(p: Pipeline) -> None:
    _write(p.out / "stats.json", p.stats.to_json())


def cmd_convert(p: Pipeline) -> None:
    nn = p.normalized()
    p.out.mkdir(parents=True, exist_ok=True)
    netspec.save_model(nn.net, p.out / "normalized.json")
    _write(p.out / "stats.json", p.stats.to_json())
    _write(p.out / "conversion.json", _dump({
        "scheme": nn.scheme,
        "output_scale": nn.output_scale.tolist(),
        "input_scale": nn.input_scale,
        "neuron": {"v_th_pos": p.cfg.v_th, "alpha": p.net.alpha, "v_th_neg": -p.cfg.v_th / p.net.alpha,
                   "signed": p.cfg.signed},
    }))


def cmd_run(p: Pipeline) -> None:
    c = p.cfg
    snn = p.spiking()
    state = spikesim.run(snn, p.inputs, c.T)
    decode.decode(state, snn, c.decode).save(p.out / "outputs")
    report = analytics.firing_report(state, c.bin_width)
    _write(p.out / "firing_report.json", report.to_json())
    nn = p.normalized()
    grid = c.grid()
    errs = analytics.scheme_errors(p.net, nn, p.convergence_inputs(), grid, **p.sim_options())
    curve = analytics.ConvergenceReport(grid, c.target, {nn.scheme: errs},
                                        {nn.scheme: analytics.time_to_target(grid, errs, c.target)})
    _write(p.out / "convergence.json", _dump(curve.to_dict()))
    _write(p.out / "energy.json", energy.report_json(energy.energy_report(p.net, state)))
    p.echo_config()


def cmd_analyze(p: Pipeline) -> None:
    c = p.cfg
    snn = p.spiking()
    state = spikesim.run(snn, p.inputs, c.T)
    report = analytics.firing_report(state, c.bin_width)
    one = spikesim.run(snn, p.inputs[:1], c.T, record=[c.raster_layer])
    report.raster = analytics.raster(one, c.raster_layer, c.raster_channel)
    profile = analytics.channel_activation_profile(p.stats, p.normalized().scheme)
    report_doc = json.loads(report.to_json())
    report_doc["activation_profile"] = [
        {"normalized": e["normalized"].tolist(), "mean": e["mean"], "min": e["min"]} for e in profile
    ]
    _write(p.out / "firing_report.json", _dump(report_doc))
    report.write_histogram_csv(p.out / "rate_histogram.csv")
    report.write_raster_csv(p.out / "raster.csv")
    one.export_trace(p.out / "trace.csv")
    p.echo_config()


def cmd_energy(p: Pipeline) -> None:
    state = spikesim.run(p.spiking(), p.inputs, p.cfg.T)
    _write(p.out / "energy.json", energy.report_json(energy.energy_report(p.net, state)))


def cmd_compare(p: Pipeline) -> None:
    c = p.cfg
    curve = analytics.convergence_curve(
        p.net, p.normalized("layer"), p.normalized("channel"), p.convergence_inputs(), c.grid(), c.target, **p.sim_options()
    )
    _write(p.out / "convergence.json", _dump(curve.to_dict()))
    p.echo_config()


def cmd_platform(args) -> None:
    pe = energy.platform_energy(args.flops, args.op_rate, args.timesteps)
    print(_dump({"gpu_joules": pe.gpu_joules, "neuro_power": pe.neuro_power,
                 "neuro_joules": pe.neuro_joules, "ratio": pe.ratio, "formulas": energy.FORMULAS}))


COMMANDS = {
    "calibrate": cmd_calibrate,
    "convert": cmd_convert,
    "run": cmd_run,
    "analyze": cmd_analyze,
    "energy": cmd_energy,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikeconv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c")
        sp.add_argument("--model")
        sp.add_argument("--calibration-dir", dest="calibration_dir")
        sp.add_argument("--inputs-dir", dest="inputs_dir")
        sp.add_argument("--stats")
        sp.add_argument("--scheme", choices=["layer", "channel"])
        sp.add_argument("--mode", dest="percentile_mode", choices=list(calibrate.MODES))
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--v-th", dest="v_th", type=float)
        sp.add_argument("-T", type=int)
        sp.add_argument("--decode", choices=list(decode.SCHEMES))
        sp.add_argument("--output-dir", "-o", dest="output_dir")
        if name == "energy":
            sp.add_argument("--flops", type=float, help="platform arithmetic only: DNN FLOPs")
            sp.add_argument("--op-rate", type=float, help="platform arithmetic only: SNN ops per second")
            sp.add_argument("--timesteps", type=int, help="platform arithmetic only: time steps")
    return parser


def _origin(exc: BaseException) -> str:
    """Name of the innermost package module in the traceback."""
    name, tb = "cli", exc.__traceback__
    pkg = Path(__file__).parent
    while tb is not None:
        path = Path(tb.tb_frame.f_code.co_filename)
        if path.parent == pkg:
            name = path.stem
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "energy" and args.flops is not None:
        if args.op_rate is None or args.timesteps is None:
            print("spikeconv: error: --flops needs --op-rate and --timesteps", file=sys.stderr)
            return 2
        cmd_platform(args)
        return 0
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "flops", "op_rate", "timesteps")}
    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](Pipeline(cfg))
    except InputError as exc:
        print(f"spikeconv: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"spikeconv: error: [{_origin(exc)}] {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"spikeconv: internal error: [{_origin(exc)}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
