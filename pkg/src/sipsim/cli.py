"""Batch front door: flat key=value configs in, CSV/JSON reports out.

Exit status: 0 when every contract row passes, 2 on a statistical failure,
1 on configuration or runtime errors (in which case no output files are
written). Reports are written atomically (temp file then rename).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from dataclasses import dataclass

from . import __version__
from .experiments import RUNNERS, STUDIES, ExperimentConfig


class ConfigError(ValueError):
    """Invalid configuration text; carries a line number when known."""

    def __init__(self, message, line=None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


# key -> parser; every config value is a scalar, a site list, or a pair list
def _parse_int(v):
    return int(v)


def _parse_float(v):
    return float(v)


def _parse_str(v):
    return v


def _parse_floats(v):
    return tuple(float(tok) for tok in v.split())


def _parse_ints(v):
    return tuple(int(tok) for tok in v.split())


def _parse_sites(v):
    # sites separated by whitespace, coordinates by commas: "0 10" or "0,0 1,2"
    return tuple(tuple(int(c) for c in tok.split(",")) for tok in v.split())


def _parse_mixture(v):
    # atoms "lam:weight" separated by whitespace: "0.2:0.5 0.6:0.5"
    atoms = []
    for tok in v.split():
        lam, _, w = tok.partition(":")
        if not _:
            raise ValueError(f"mixture atom {tok!r} must look like lam:weight")
        atoms.append((float(lam), float(w)))
    return tuple(atoms)


_KEY_PARSERS = {
    "d": _parse_int,
    "boundary": _parse_str,
    "L": _parse_int,
    "m": _parse_float,
    "seed": _parse_int,
    "replicas": _parse_int,
    "t_grid": _parse_floats,
    "lambda": _parse_float,
    "theta": _parse_float,
    "mixture": _parse_mixture,
    "initial_law": _parse_str,
    "xi": _parse_sites,
    "eta": _parse_sites,
    "xi_sizes": _parse_ints,
    "n": _parse_int,
    "delta": _parse_float,
    "schedule_t0": _parse_float,
    "schedule_doublings": _parse_int,
    "iterated_replicas": _parse_int,
    "x_start": _parse_sites,
    "y_start": _parse_sites,
}

_COMMON_KEYS = {"d", "boundary", "L", "m", "seed", "replicas", "t_grid"}

_STUDY_KEYS = {
    "self-duality": _COMMON_KEYS | {"xi", "eta"},
    "stationarity": _COMMON_KEYS | {"lambda", "xi_sizes"},
    "coupling": _COMMON_KEYS
    | {"x_start", "y_start", "delta", "schedule_t0", "schedule_doublings", "iterated_replicas"},
    "or-distance": _COMMON_KEYS | {"x_start"},
    "convergence": _COMMON_KEYS | {"initial_law", "theta", "lambda", "mixture", "xi"},
    "correlation": _COMMON_KEYS | {"mixture", "n"},
    "factorization": _COMMON_KEYS | {"lambda", "eta"},
    "oracle-check": _COMMON_KEYS | {"xi", "eta"},
}

# renames from config syntax to ExperimentConfig fields
_FIELD_OF_KEY = {"lambda": "lam"}

# built-in defaults; every subcommand runs out of the box
DEFAULT_CONFIGS = {
    "self-duality": {
        "boundary": "torus", "L": 5, "m": 2.0, "xi": ((0,), (2,)),
        "eta": ((0,), (1,), (3,)), "t_grid": (0.5, 1.0, 2.0), "replicas": 20000,
    },
    "stationarity": {
        "boundary": "torus", "L": 10, "m": 2.0, "lam": 0.4,
        "xi_sizes": (1, 2, 3), "t_grid": (1.0,), "replicas": 100000,
    },
    "coupling": {
        "m": 2.0, "x_start": ((0,), (10,)), "y_start": ((3,), (17,)),
        "t_grid": (100.0, 1000.0, 10000.0), "replicas": 500,
        "delta": 0.8, "schedule_t0": 25.0, "schedule_doublings": 20,
        "iterated_replicas": 200,
    },
    "or-distance": {
        "m": 2.0, "x_start": ((0,), (1,)), "t_grid": (100.0, 1000.0, 10000.0),
        "replicas": 1000,
    },
    "convergence": {
        "m": 2.0, "initial_law": "poisson", "theta": 1.0, "xi": ((0,), (1,)),
        "t_grid": (1.0, 10.0, 100.0), "replicas": 10000,
    },
    "correlation": {
        "boundary": "torus", "L": 8, "m": 2.0,
        "mixture": ((0.2, 0.5), (0.6, 0.5)), "n": 2, "replicas": 100000,
    },
    "factorization": {
        "boundary": "torus", "L": 5, "m": 2.0, "lam": 0.4,
        "eta": ((0,), (1,), (3,)), "t_grid": (5.0, 10.0, 20.0, 40.0),
    },
    "oracle-check": {
        "boundary": "torus", "L": 5, "m": 2.0, "xi": ((0,), (2,)),
        "eta": ((0,), (1,), (3,)), "t_grid": (0.5, 1.0, 2.0), "replicas": 100,
    },
}


def parse_config(text: str, study: str) -> ExperimentConfig:
    """Parse flat key=value text (UTF-8, '#' comments) into a validated config.

    Unknown and duplicate keys are hard errors with line numbers; values
    outside their documented domains are rejected with the offending key
    named. Missing optional keys fall back to the study's defaults.
    """
    if study not in STUDIES:
        raise ConfigError(f"unknown study {study!r}")
    allowed = _STUDY_KEYS[study]
    raw = {}
    lines_of = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected key=value, got {stripped!r}", lineno)
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEY_PARSERS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key not in allowed:
            raise ConfigError(f"key {key!r} does not apply to study {study!r}", lineno)
        if key in raw:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        if not value:
            raise ConfigError(f"key {key!r} has no value", lineno)
        try:
            raw[key] = _KEY_PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        lines_of[key] = lineno
    fields = dict(DEFAULT_CONFIGS[study])
    for key, value in raw.items():
        fields[_FIELD_OF_KEY.get(key, key)] = value
    try:
        return ExperimentConfig(study=study, **fields)
    except ValueError as exc:
        # map the domain error back to the offending line when possible
        msg = str(exc)
        for key, lineno in sorted(lines_of.items(), key=lambda kv: -len(kv[0])):
            field = _FIELD_OF_KEY.get(key, key)
            if msg.startswith(field + " ") or f"'{field}'" in msg:
                raise ConfigError(msg, lineno) from None
        raise ConfigError(msg) from None


def default_config(study: str, seed: int | None = None) -> ExperimentConfig:
    if study not in STUDIES:
        raise ConfigError(f"unknown study {study!r}")
    fields = dict(DEFAULT_CONFIGS[study])
    if seed is not None:
        fields["seed"] = seed
    return ExperimentConfig(study=study, **fields)


@dataclass(frozen=True)
class Invocation:
    subcommand: str
    config_path: str | None
    seed: int | None
    out_dir: str
    workers: int


def _atomic_write(path: str, data: str):
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-report-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(invocation: Invocation) -> int:
    """Execute one study and write report files; returns the exit status."""
    try:
        if invocation.config_path is not None:
            with open(invocation.config_path, "r", encoding="utf-8") as fh:
                text = fh.read()
            cfg = parse_config(text, invocation.subcommand)
            if invocation.seed is not None:
                cfg = dataclasses.replace(cfg, seed=invocation.seed)
        else:
            cfg = default_config(invocation.subcommand, invocation.seed)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        report = RUNNERS[invocation.subcommand](cfg, workers=invocation.workers)
    except Exception as exc:  # runtime failure: no partial outputs
        print(f"error: {exc}", file=sys.stderr)
        return 1
    os.makedirs(invocation.out_dir, exist_ok=True)
    base = os.path.join(invocation.out_dir, invocation.subcommand)
    _atomic_write(base + ".csv", report.csv_text())
    _atomic_write(base + ".json", json.dumps(report.json_summary(), indent=2) + "\n")
    return 0 if report.passed else 2


def build_invocation(argv) -> Invocation:
    parser = argparse.ArgumentParser(
        prog="sip-verify",
        description="Run one verification study of the inclusion-process simulator.",
    )
    parser.add_argument("study", choices=STUDIES)
    parser.add_argument("--config", dest="config", default=None, metavar="PATH")
    parser.add_argument("--seed", type=int, default=None, metavar="N")
    parser.add_argument("--out", default="reports", metavar="DIR")
    parser.add_argument("--workers", type=int, default=1, metavar="N")
    parser.add_argument("--version", action="version", version=f"sip-verify {__version__}")
    args = parser.parse_args(argv)
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    return Invocation(
        subcommand=args.study,
        config_path=args.config,
        seed=args.seed,
        out_dir=args.out,
        workers=args.workers,
    )


def main(argv=None) -> None:
    sys.exit(run(build_invocation(argv)))
