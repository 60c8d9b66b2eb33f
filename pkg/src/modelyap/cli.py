"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 usage or validation error.

Experiment config (JSON)::

    {
      "cipher": "tea",            # tea | xtea | aes | toy-xor | toy-perm
      "rounds": null,             # optional reduced rounds
      "block_bits": 8,            # toy ciphers only (4..16)
      "toy_seed": 0,              # toy-perm permutation seed
      "modes": ["ECB", "CBC"],    # or "mode": "ECB"
      "b": 5,
      "ensemble_size": 20,
      "T": 60,
      "seed": 7,
      "perturbation": {"policy": "fixed-lsb", "bit": null},
      "register_policy": "auto"   # auto | shared | fresh
    }

``MODELYAP_SEED`` overrides the config seed; command-line flags override both.
"""
from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click

from modelyap import __version__
from modelyap.bits import DimensionError
from modelyap.ciphers import UnsupportedCipherError, cipher_spec, toy_cipher
from modelyap.ciphers.kat import KatParseError, builtin_kat_text, parse_kat, verify
from modelyap.classify import ProfileSetError, build_profiles, classify_trace, load_profiles, save_profiles
from modelyap.ensemble import (
    ExperimentConfig,
    FitError,
    default_jobs,
    experiment_summary,
    fit_lambda_vs_blocks,
    load_result,
    run_ensemble,
)
from modelyap.lyapunov import PerturbationSpec, read_trace_csv
from modelyap.modes import ALL_MODES, ModeId
from modelyap.plot import write_svg

SWEEP_BLOCKS = (2, 4, 8, 12, 16, 20)


class ValidationError(click.ClickException):
    exit_code = 2


class VerificationFailure(click.ClickException):
    exit_code = 1


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", now)


def write_manifest(outdir: Path, command: str, config_path, resolved, flags: dict) -> None:
    _dump(
        outdir / "manifest.json",
        {
            "tool": "modelyap",
            "version": __version__,
            "command": command,
            "config_path": None if config_path is None else str(config_path),
            "output_dir": str(outdir),
            "resolved_config": resolved,
            "flags": flags,
            "timestamp": _timestamp(),
        },
    )


def resolve_configs(raw: dict, overrides: dict) -> list[ExperimentConfig]:
    """Turn a config document plus overrides into one config per mode."""
    raw = {**raw, **{k: v for k, v in overrides.items() if v is not None and v != []}}
    env_seed = os.environ.get("MODELYAP_SEED")
    if env_seed is not None and overrides.get("seed") is None:
        raw["seed"] = int(env_seed, 0)
    try:
        cid = str(raw.get("cipher", "tea")).lower()
        if cid in ("toy-xor", "toy-perm"):
            spec = toy_cipher("xor" if cid == "toy-xor" else "perm", int(raw["block_bits"]), raw.get("toy_seed", 0))
        else:
            spec = cipher_spec(cid, raw.get("rounds"))
        modes = raw.get("modes") or raw.get("mode") or [m.value for m in ALL_MODES]
        if isinstance(modes, str):
            modes = [modes]
        pert = raw.get("perturbation") or {}
        return [
            ExperimentConfig(
                spec,
                ModeId.parse(m),
                int(raw.get("b", 5)),
                int(raw.get("ensemble_size", 200)),
                int(raw.get("T", 200)),
                int(raw.get("seed", 0)),
                PerturbationSpec(pert.get("bit"), pert.get("policy", "fixed-lsb")),
                raw.get("register_policy", "auto"),
            )
            for m in modes
        ]
    except (ValueError, KeyError, TypeError, UnsupportedCipherError) as exc:
        raise ValidationError(f"invalid configuration: {exc}") from exc


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    return doc


def run_configs(configs, outdir: Path, jobs: int):
    results = {}
    for cfg in configs:
        click.echo(f"{cfg.cipher.id}/{cfg.mode.value}: b={cfg.b} members={cfg.ensemble_size} T={cfg.T}", err=True)
        res = run_ensemble(cfg, jobs=jobs)
        res.write(outdir / cfg.mode.value)
        results[cfg.mode] = res
    return results


@click.group()
@click.version_option(__version__)
def main():
    """Lyapunov-exponent experiments on block-cipher modes of operation."""


@main.command()
@click.argument("kat_file", required=False, type=click.Path(dir_okay=False))
def kat(kat_file):
    """Verify known-answer vectors (the built-in set when no file is given)."""
    try:
        text = builtin_kat_text() if kat_file is None else Path(kat_file).read_text()
        vectors = parse_kat(text)
    except KatParseError as exc:
        raise ValidationError(str(exc)) from exc
    except OSError as exc:
        raise ValidationError(str(exc)) from exc
    if not vectors:
        click.echo("warning: 0 vectors", err=True)
        return
    failures = verify(vectors)
    for f in failures:
        click.echo(f"FAIL {f}")
    click.echo(f"{len(vectors) - len(failures)}/{len(vectors)} vectors passed")
    if failures:
        raise VerificationFailure(f"{len(failures)} vector(s) failed")


def _common_run_options(fn):
    fn = click.option("--seed", type=int, help="RNG seed")(fn)
    fn = click.option("--cipher", help="Cipher id")(fn)
    fn = click.option("--mode", "modes", multiple=True, help="Mode (repeatable)")(fn)
    fn = click.option("--ensemble-size", type=int)(fn)
    fn = click.option("--steps", "T", type=int, help="Time steps T")(fn)
    fn = click.option("--jobs", type=int, default=None, help="Worker processes")(fn)
    fn = click.option("-o", "--out", "out", required=True, type=click.Path(file_okay=False))(fn)
    fn = click.argument("config", required=False, type=click.Path(dir_okay=False))(fn)
    return fn


@main.command()
@_common_run_options
@click.option("--blocks", "b", type=int, help="Blocks per text")
def run(config, out, jobs, T, ensemble_size, modes, cipher, seed, b):
    """Run ensembles for every configured mode and write traces and statistics."""
    overrides = {"T": T, "ensemble_size": ensemble_size, "modes": list(modes), "cipher": cipher, "seed": seed, "b": b}
    configs = resolve_configs(_read_config(config), overrides)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    results = run_configs(configs, outdir, jobs or default_jobs())
    _dump(outdir / "results.json", experiment_summary(results))
    write_manifest(outdir, "run", config, [c.as_dict() for c in configs], {k: v for k, v in overrides.items() if v})
    for mode, res in results.items():
        click.echo(f"{mode.value:5s} lambda_T={res.mean_lambda[-1]:.5f} sigma={res.sigma:.3e} delta={res.delta:.3e}")


@main.command("sweep-blocks")
@_common_run_options
@click.option("--blocks", "blocks", default=",".join(map(str, SWEEP_BLOCKS)), help="Comma-separated block counts")
def sweep_blocks(config, out, jobs, T, ensemble_size, modes, cipher, seed, blocks):
    """Run every mode across block counts and fit lambda_T against ln(b)."""
    try:
        counts = [int(x) for x in blocks.split(",") if x.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad --blocks: {exc}") from exc
    overrides = {"T": T, "ensemble_size": ensemble_size, "modes": list(modes), "cipher": cipher, "seed": seed}
    raw = _read_config(config)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    finals: dict[ModeId, list] = {}
    resolved = []
    for b in counts:
        configs = resolve_configs(raw, {**overrides, "b": b})
        resolved += [c.as_dict() for c in configs]
        results = run_configs(configs, outdir / f"b{b:02d}", jobs or default_jobs())
        _dump(outdir / f"b{b:02d}" / "results.json", experiment_summary(results))
        for mode, res in results.items():
            finals.setdefault(mode, []).append((b, float(res.mean_lambda[-1])))
    fits = []
    for mode, pts in finals.items():
        try:
            fits.append(fit_lambda_vs_blocks(pts, mode))
        except FitError as exc:
            click.echo(f"{mode.value}: no fit ({exc})", err=True)
    _dump(
        outdir / "sweep.json",
        {
            "final_mean_lambda": {m.value: [list(p) for p in pts] for m, pts in finals.items()},
            "regression_fits": [f.as_dict() for f in fits],
        },
    )
    write_manifest(outdir, "sweep-blocks", config, resolved, {**{k: v for k, v in overrides.items() if v}, "blocks": counts})
    for f in fits:
        click.echo(f"{f.mode:5s} slope={f.slope:.4f} intercept={f.intercept:.4f} R2={f.r_squared:.4f}")


def _result_dirs(paths):
    """Expand run directories (containing per-mode subdirectories) to result dirs."""
    dirs = []
    for p in map(Path, paths):
        if (p / "ensemble.json").exists():
            dirs.append(p)
        elif p.name == "ensemble.json":
            dirs.append(p.parent)
        else:
            found = [p / m.value for m in ALL_MODES if (p / m.value / "ensemble.json").exists()]
            if not found:
                raise ValidationError(f"{p}: no ensemble results found")
            dirs += found
    return dirs


@main.command()
@click.argument("results", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
@click.option("--title", default="")
def plot(results, out, title):
    """Plot normalised mean lambda(t) of each result as an SVG."""
    series = []
    for d in _result_dirs(results):
        doc = json.loads((d / "ensemble.json").read_text())
        cfg = doc["config"]
        series.append((f"{cfg['cipher']['id']}/{cfg['mode']}", [v / doc["lambda_m"] for v in doc["mean_lambda"]]))
    try:
        write_svg(out, series, title)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    click.echo(f"wrote {out} ({len(series)} curves)")


@main.group()
def profiles():
    """Reference profiles for classification."""


@profiles.command("build")
@click.argument("results", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
def profiles_build(results, out):
    """Build a profile store from run directories."""
    try:
        built = build_profiles([load_result(d) for d in _result_dirs(results)])
    except (ProfileSetError, DimensionError) as exc:
        raise ValidationError(str(exc)) from exc
    save_profiles(built, out)
    click.echo(f"wrote {len(built)} profiles to {out}")


@main.command()
@click.argument("store", type=click.Path(exists=True, dir_okay=False))
@click.argument("trace_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "json_out", type=click.Path(dir_okay=False), help="Also write the verdict as JSON")
def classify(store, trace_file, json_out):
    """Classify one member trace CSV against a profile store."""
    try:
        lam, lambda_m = read_trace_csv(trace_file)
        verdict = classify_trace(lam / lambda_m, load_profiles(store))
    except (DimensionError, ValueError, KeyError) as exc:
        raise ValidationError(f"incompatible trace: {exc}") from exc
    modes = ",".join(sorted(m.value for m in verdict.predicted))
    click.echo(f"predicted={{{modes}}} family={verdict.family} distance={verdict.distance:.6g} "
               f"margin={verdict.runner_up_margin:.6g}")
    if json_out:
        _dump(Path(json_out), verdict.as_dict())


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
