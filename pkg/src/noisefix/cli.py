"""Command-line front end wiring all pipeline stages.

Subcommands: sample, degrade, invert, restore-blind, restore-partial,
test-normality, metrics. Options can come from flags or from a flat
key=value config file ('#' starts a comment); flags override the file.
Every run that writes outputs also writes a manifest.txt that is itself a
valid config file (bookkeeping lines are comments), so a run can be
replayed with `--config manifest.txt` plus the recorded subcommand.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 I/O or file-format error.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .degrade import DegradationSpec, apply as apply_degradation, spec_to_text
from .errors import ConfigError, FileFormatError, NoisefixError, NumericError
from .inversion import dump_loss_csv, invert_blind, invert_partial
from .io import read_image, read_tensor, write_image, write_tensor
from .metrics import psnr, ssim
from .normality import MIN_OMNIBUS_N, scan_mask, window_pvalues
from .priors import GaussianMixturePrior, linear_schedule, load_gmm_components
from .rectify import RestoreParams, restore
from .sampler import SamplerConfig, generate
from .tensor import Rng, Tensor3

__all__ = ["RunConfig", "parse_config", "run", "main"]

SUBCOMMANDS = ("sample", "degrade", "invert", "restore-blind", "restore-partial",
               "test-normality", "metrics")

# stage indices for deterministic seed splitting off the root seed
STAGE_INVERT_INIT = 0
STAGE_BANK = 1
STAGE_SAMPLE_DRAW = 2
STAGE_DEGRADE = 3


@dataclass
class RunConfig:
    """Validated options for one CLI run. Defaults are the stock pipeline
    defaults: alpha 0.05, tile side 4, 50k bank patches, 150 iterations at
    learning rate 0.001 with step jump 100 on a 1000-step linear schedule.
    """

    subcommand: str = ""
    input: str | None = None
    input_b: str | None = None
    outdir: str | None = None
    prior: str | None = None
    alpha: float = 0.05
    k: int = 4
    bank_size: int = 50_000
    iters: int = 150
    lr: float = 1e-3
    delta_t: int = 100
    total_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    stride: int = 1
    seed: int = 0
    optimizer: str = "adam"
    mode: str = "fully_blind"
    kind: str | None = None
    sigma: float = 1.0
    kernel_size: int = 5
    angle: float = 0.0
    length: float = 5.0
    factor: int = 2
    levels: int = 8
    density: float = 0.3
    intensity: float = 0.8
    noise_sigma: float = 0.0
    theta_init: str = "uniform"


_INT_KEYS = {"k", "bank_size", "iters", "delta_t", "total_steps", "stride",
             "seed", "kernel_size", "factor", "levels"}
_FLOAT_KEYS = {"alpha", "lr", "beta_start", "beta_end", "sigma", "angle",
               "length", "density", "intensity", "noise_sigma"}
_STR_KEYS = {"subcommand", "input", "input_b", "outdir", "prior", "optimizer",
             "mode", "kind", "theta_init"}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


def _coerce(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for key {key!r}: {exc}") from exc


def read_config_file(path) -> dict:
    """Parse a flat key=value config file; unknown keys are rejected."""
    values: dict = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {raw!r}")
        key = key.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        values[key] = _coerce(key, value.strip())
    return values


def _build_argparser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisefix",
        description="Blind image restoration by rectifying inverted sampler noise",
    )
    sub = parser.add_subparsers(dest="subcommand")
    specs = {
        "sample": "draw noise and generate an image from the prior",
        "degrade": "apply a degradation operator to an image",
        "invert": "invert an image to terminal sampler noise",
        "restore-blind": "restore with no knowledge of the degradation",
        "restore-partial": "restore with a known degradation family",
        "test-normality": "scan a noise tensor for defective windows",
        "metrics": "report PSNR/SSIM between two images",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--input", help="input image or tensor path")
        p.add_argument("--input-b", dest="input_b", help="second image (metrics)")
        p.add_argument("--outdir", help="output directory")
        p.add_argument("--prior", help="mixture prior description file")
        p.add_argument("--alpha", type=float, help="significance level")
        p.add_argument("--k", type=int, help="window/tile side")
        p.add_argument("--bank-size", dest="bank_size", type=int)
        p.add_argument("--iters", type=int, help="solver iterations")
        p.add_argument("--lr", type=float, help="solver learning rate")
        p.add_argument("--delta-t", dest="delta_t", type=int, help="sampler step jump")
        p.add_argument("--total-steps", dest="total_steps", type=int)
        p.add_argument("--beta-start", dest="beta_start", type=float)
        p.add_argument("--beta-end", dest="beta_end", type=float)
        p.add_argument("--stride", type=int, help="detection window stride")
        p.add_argument("--seed", type=int, help="root seed")
        p.add_argument("--optimizer", choices=("adam", "gd"))
        p.add_argument("--kind", help="degradation kind / operator family")
        p.add_argument("--sigma", type=float, help="gaussian blur sigma")
        p.add_argument("--kernel-size", dest="kernel_size", type=int)
        p.add_argument("--angle", type=float, help="motion blur angle (degrees)")
        p.add_argument("--length", type=float, help="motion blur length (pixels)")
        p.add_argument("--factor", type=int, help="downsampling factor")
        p.add_argument("--levels", type=int, help="quantization levels")
        p.add_argument("--density", type=float, help="streak density")
        p.add_argument("--intensity", type=float, help="streak intensity")
        p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
        p.add_argument("--theta-init", dest="theta_init", choices=("uniform", "random"))
    return parser


def parse_config(argv: list[str]) -> RunConfig:
    """Build a validated RunConfig from argv plus an optional config file."""
    parser = _build_argparser()
    ns = parser.parse_args(argv)
    if not ns.subcommand:
        raise ConfigError(f"missing subcommand; expected one of {SUBCOMMANDS}")
    cfg = RunConfig(subcommand=ns.subcommand)
    if ns.config:
        file_values = read_config_file(ns.config)
        file_sub = file_values.pop("subcommand", None)
        if file_sub and file_sub != ns.subcommand:
            raise ConfigError(
                f"config file is for subcommand {file_sub!r}, not {ns.subcommand!r}"
            )
        for key, value in file_values.items():
            setattr(cfg, key, value)
    for f in fields(RunConfig):
        if f.name in ("subcommand",):
            continue
        flag_value = getattr(ns, f.name, None)
        if flag_value is not None:
            setattr(cfg, f.name, flag_value)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {cfg.subcommand!r}")
    if not 0.0 <= cfg.alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {cfg.alpha}")
    for name in ("k", "bank_size", "iters", "delta_t", "total_steps", "stride"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be a positive integer")
    if cfg.lr <= 0.0:
        raise ConfigError("lr must be positive")
    if not 0.0 < cfg.beta_start <= cfg.beta_end < 1.0:
        raise ConfigError("need 0 < beta_start <= beta_end < 1")
    if cfg.delta_t > cfg.total_steps:
        raise ConfigError("delta_t cannot exceed total_steps")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if cfg.kernel_size % 2 == 0:
        raise ConfigError("kernel_size must be odd")
    needs_input = cfg.subcommand in (
        "degrade", "invert", "restore-blind", "restore-partial",
        "test-normality", "metrics",
    )
    if needs_input and not cfg.input:
        raise ConfigError(f"{cfg.subcommand} needs --input")
    if cfg.subcommand == "metrics" and not cfg.input_b:
        raise ConfigError("metrics needs --input-b")
    if cfg.subcommand != "metrics" and not cfg.outdir:
        raise ConfigError(f"{cfg.subcommand} needs --outdir")
    if cfg.subcommand in ("sample", "invert", "restore-blind", "restore-partial") \
            and not cfg.prior:
        raise ConfigError(f"{cfg.subcommand} needs --prior")
    if cfg.subcommand in ("degrade", "restore-partial") and not cfg.kind:
        raise ConfigError(f"{cfg.subcommand} needs --kind")


def _check_window(cfg: RunConfig, channels: int) -> None:
    if channels * cfg.k * cfg.k < MIN_OMNIBUS_N:
        raise ConfigError(
            f"window sample size c*k*k = {channels * cfg.k * cfg.k} is below "
            f"the omnibus minimum of {MIN_OMNIBUS_N}; increase k"
        )


class _Manifest:
    """Collects config echo, versions and stage timings; doubles as a
    replayable config file (non-config lines are comments)."""

    def __init__(self, cfg: RunConfig) -> None:
        self.cfg = cfg
        self.timings: list[tuple[str, float]] = []
        self.outputs: list[str] = []

    def time_stage(self, name: str):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                manifest.timings.append((name, time.perf_counter() - self.t0))

        return _Timer()

    def write(self, outdir: Path) -> None:
        lines = [
            "# noisefix run manifest; replay with: noisefix <subcommand> "
            "--config manifest.txt --outdir <fresh-dir>",
            f"# subcommand: {self.cfg.subcommand}",
            f"# version: noisefix {__version__}",
            f"# python: {sys.version.split()[0]}",
            f"# numpy: {np.__version__}",
            f"subcommand={self.cfg.subcommand}",
        ]
        for f in fields(RunConfig):
            if f.name == "subcommand":
                continue
            value = getattr(self.cfg, f.name)
            if value is None:
                continue
            if f.name in ("input", "input_b", "prior"):
                value = str(Path(value).resolve())
            lines.append(f"{f.name}={value}")
        for name, dt in self.timings:
            lines.append(f"# timing {name}: {dt:.3f}s")
        for name in self.outputs:
            lines.append(f"# output: {name}")
        (outdir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _load_sampler(cfg: RunConfig) -> SamplerConfig:
    schedule = linear_schedule(cfg.total_steps, cfg.beta_start, cfg.beta_end)
    weights, variances, means, shape = load_gmm_components(cfg.prior)
    prior = GaussianMixturePrior(weights, variances, means, shape, schedule)
    return SamplerConfig(model=prior, schedule=schedule, delta_t=cfg.delta_t)


def _read_any(path) -> Tensor3:
    """Read a tensor or image file, deciding by magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic[:4] == b"I2RT":
        return read_tensor(path)
    if magic[:2] in (b"P5", b"P6"):
        return read_image(path)
    raise FileFormatError(f"{path}: neither a tensor file nor a P5/P6 image")


def _image_name(t: Tensor3, stem: str) -> str:
    return f"{stem}.pgm" if t.channels == 1 else f"{stem}.ppm"


def _write_output(manifest: _Manifest, outdir: Path, name: str, writer) -> None:
    writer(outdir / name)
    manifest.outputs.append(name)


def _mask_to_image(mask: Tensor3) -> Tensor3:
    # white where noise gets substituted; channels are identical by
    # construction, so channel 0 carries the full picture
    return Tensor3(2.0 * mask.data[:, :, :1] - 1.0)


def _degradation_spec(cfg: RunConfig) -> DegradationSpec:
    return DegradationSpec(
        kind=cfg.kind, sigma=cfg.sigma, kernel_size=cfg.kernel_size,
        angle=cfg.angle, length=cfg.length, factor=cfg.factor,
        levels=cfg.levels, density=cfg.density, intensity=cfg.intensity,
        seed=cfg.seed, noise_sigma=cfg.noise_sigma,
    )


def _run_sample(cfg: RunConfig, outdir: Path, manifest: _Manifest) -> None:
    sampler = _load_sampler(cfg)
    shape = sampler.model.shape
    with manifest.time_stage("sample"):
        rng = Rng(cfg.seed, (STAGE_SAMPLE_DRAW,))
        z = Tensor3(rng.standard_normal(shape))
        x = generate(sampler, z)
    _write_output(manifest, outdir, "z.i2rt", lambda p: write_tensor(z, p))
    _write_output(manifest, outdir, _image_name(x, "sample"),
                  lambda p: write_image(x, p))


def _run_degrade(cfg: RunConfig, outdir: Path, manifest: _Manifest) -> None:
    x = _read_any(cfg.input)
    spec = _degradation_spec(cfg)
    with manifest.time_stage("degrade"):
        y = apply_degradation(spec, x, Rng(cfg.seed, (STAGE_DEGRADE,)))
    _write_output(manifest, outdir, _image_name(y, "degraded"),
                  lambda p: write_image(y, p))
    _write_output(manifest, outdir, "degradation.txt",
                  lambda p: Path(p).write_text(spec_to_text(spec)))


def _run_invert(cfg: RunConfig, outdir: Path, manifest: _Manifest) -> None:
    sampler = _load_sampler(cfg)
    y = _read_any(cfg.input)
    rng = Rng(cfg.seed, (STAGE_INVERT_INIT,))
    with manifest.time_stage("invert"):
        if cfg.mode == "fully_blind":
            report = invert_blind(y, sampler, cfg.iters, cfg.lr, rng,
                                  optimizer=cfg.optimizer)
        elif cfg.mode == "partial":
            if not cfg.kind:
                raise ConfigError("partial inversion needs --kind")
            report = invert_partial(y, sampler, cfg.kind, cfg.iters, cfg.lr,
                                    rng, kernel_size=cfg.kernel_size,
                                    factor=cfg.factor, optimizer=cfg.optimizer,
                                    theta_init=cfg.theta_init)
        else:
            raise ConfigError(f"unknown mode {cfg.mode!r}")
    if report.diverged:
        raise NumericError("inversion diverged to a non-finite loss")
    _write_output(manifest, outdir, "z_tilde.i2rt",
                  lambda p: write_tensor(report.z_tilde, p))
    _write_output(manifest, outdir, "loss.csv",
                  lambda p: dump_loss_csv(p, report.loss_trace))


def _run_restore(cfg: RunConfig, outdir: Path, manifest: _Manifest) -> None:
    sampler = _load_sampler(cfg)
    y = _read_any(cfg.input)
    _check_window(cfg, sampler.model.shape[2])
    mode = "fully_blind" if cfg.subcommand == "restore-blind" else "partial"
    params = RestoreParams(
        alpha=cfg.alpha, k=cfg.k, bank_size=cfg.bank_size, iters=cfg.iters,
        lr=cfg.lr, stride=cfg.stride, seed=cfg.seed, optimizer=cfg.optimizer,
        kernel_size=cfg.kernel_size, factor=cfg.factor,
        theta_init=cfg.theta_init,
    )
    with manifest.time_stage("restore"):
        result = restore(y, sampler, mode, params, h_kind=cfg.kind)
    if result.inversion.diverged:
        raise NumericError("inversion diverged to a non-finite loss")
    _write_output(manifest, outdir, "z_tilde.i2rt",
                  lambda p: write_tensor(result.z_tilde, p))
    _write_output(manifest, outdir, "mask.pgm",
                  lambda p: write_image(_mask_to_image(result.mask.mask), p))
    _write_output(manifest, outdir, "z_star.i2rt",
                  lambda p: write_tensor(result.rectify.z_star, p))
    _write_output(manifest, outdir, _image_name(result.x_hat, "x_hat"),
                  lambda p: write_image(result.x_hat, p))
    _write_output(manifest, outdir, "loss.csv",
                  lambda p: dump_loss_csv(p, result.inversion.loss_trace))

    def _write_report(path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["key", "value"])
            writer.writerow(["final_loss", repr(float(result.inversion.loss_trace[-1]))])
            writer.writerow(["iterations", result.inversion.iterations])
            writer.writerow(["tiles_replaced", result.rectify.tiles_replaced])
            writer.writerow(["mean_nn_distance",
                             repr(result.rectify.mean_nn_distance)])
            writer.writerow(["z_tilde_failure_rate",
                             repr(result.rectify.z_tilde_failure_rate)])
            writer.writerow(["z_star_failure_rate",
                             repr(result.rectify.z_star_failure_rate)])

    _write_output(manifest, outdir, "report.csv", _write_report)


def _run_test_normality(cfg: RunConfig, outdir: Path, manifest: _Manifest) -> None:
    z = _read_any(cfg.input)
    _check_window(cfg, z.channels)
    with manifest.time_stage("scan"):
        mask = scan_mask(z, cfg.k, cfg.stride, cfg.alpha)
        rows, cols, p = window_pvalues(z, cfg.k, cfg.stride)
    _write_output(manifest, outdir, "mask.i2rt",
                  lambda pth: write_tensor(mask.mask, pth))
    _write_output(manifest, outdir, "mask.pgm",
                  lambda pth: write_image(_mask_to_image(mask.mask), pth))
    _write_output(manifest, outdir, "pvalues.i2rt",
                  lambda pth: write_tensor(Tensor3(p[:, :, None]), pth))
    n_fail = int((p < cfg.alpha).sum())
    print(f"windows tested: {p.size}")
    print(f"windows failing at alpha={cfg.alpha}: {n_fail}")
    print(f"failure rate: {n_fail / p.size:.6f}")


def _run_metrics(cfg: RunConfig, outdir: Path | None, manifest: _Manifest) -> None:
    a = _read_any(cfg.input)
    b = _read_any(cfg.input_b)
    with manifest.time_stage("metrics"):
        psnr_db = psnr(a, b)
        ssim_value = ssim(a, b)
    psnr_text = "inf" if psnr_db == float("inf") else f"{psnr_db:.4f}"
    print(f"PSNR(dB): {psnr_text}")
    print(f"SSIM: {ssim_value:.6f}")
    if outdir is not None:
        _write_output(
            manifest, outdir, "metrics.txt",
            lambda p: Path(p).write_text(
                f"psnr_db={psnr_db!r}\nssim={ssim_value!r}\n"
            ),
        )


def run(cfg: RunConfig) -> int:
    """Execute a validated RunConfig; returns the process exit status."""
    manifest = _Manifest(cfg)
    outdir: Path | None = None
    if cfg.outdir:
        outdir = Path(cfg.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
    if cfg.subcommand == "sample":
        _run_sample(cfg, outdir, manifest)
    elif cfg.subcommand == "degrade":
        _run_degrade(cfg, outdir, manifest)
    elif cfg.subcommand == "invert":
        _run_invert(cfg, outdir, manifest)
    elif cfg.subcommand in ("restore-blind", "restore-partial"):
        _run_restore(cfg, outdir, manifest)
    elif cfg.subcommand == "test-normality":
        _run_test_normality(cfg, outdir, manifest)
    elif cfg.subcommand == "metrics":
        _run_metrics(cfg, outdir, manifest)
    if outdir is not None:
        manifest.write(outdir)
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (FileFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except NoisefixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
