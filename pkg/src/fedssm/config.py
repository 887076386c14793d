"""Declarative experiment configurations.

One JSON file describes one experiment (or, via a top-level ``variants``
array, a grid of experiments sharing a base).  Example:

    {
      "name": "synthetic-siso",
      "method": {"kind": "fedalign_o", "pseudo": {"input_std": 1.0}},
      "workers": 20, "rounds": 20, "iterations": 1, "nx": 3,
      "seeds": [0, 1, 2],
      "data": {"synthetic": {"system": "siso", "samples": 150,
                             "x1_std": 0.1, "u_std": 0.1, "w_std": 0.003}},
      "output_dir": "results/siso"
    }

CSV-backed data instead uses
``"data": {"csv": {"paths": [...], "nu": 1, "ny": 1, "train": [0, 3000],
"test": [3000, 3499], "noise_std": 5.0, "detrend": false,
"normalize": false}}`` where a single path is shared by all workers.

Validation errors carry a dotted field path so a CLI can point at the
offending entry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .align import MuSpec
from .errors import ConfigError

_METHOD_KINDS = ("fedavg", "fedalign_a", "fedalign_o")
_PSEUDO_SOURCES = ("gaussian", "test_inputs")


@dataclass(frozen=True)
class SyntheticSource:
    system: str
    samples: int
    x1_std: float = 0.1
    u_std: float = 0.1
    w_std: float = 0.0
    v_std: float = 0.0


@dataclass(frozen=True)
class CsvSource:
    paths: tuple[str, ...]
    nu: int
    ny: int
    train_range: tuple[int, int]
    test_range: tuple[int, int] | None = None
    detrend: bool = False
    normalize: bool = False
    noise_std: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    method: str
    workers: int
    rounds: int
    iterations: int
    nx: int
    seeds: tuple[int, ...]
    data: SyntheticSource | CsvSource
    mu: MuSpec | None = None
    pseudo_source: str = "gaussian"
    pseudo_length: int | None = None
    pseudo_input_std: float = 1.0
    damping_init: float = 1e-3
    damping_scale: float = 10.0
    min_step_decrease: float = 0.0
    output_dir: str | None = None


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return obj[key]


def _as_int(value, path: str, minimum: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    return value


def _as_number(value, path: str, minimum=None, strict=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    v = float(value)
    if minimum is not None and (v < minimum or (strict and v == minimum)):
        op = ">" if strict else ">="
        raise ConfigError(path, f"must be {op} {minimum}, got {v}")
    return v


def _as_range(value, path: str) -> tuple[int, int]:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        raise ConfigError(path, f"expected [start, stop], got {value!r}")
    start, stop = value
    if not 0 <= start < stop:
        raise ConfigError(path, f"need 0 <= start < stop, got [{start}, {stop})")
    return (start, stop)


def _parse_data(obj: dict, path: str):
    if not isinstance(obj, dict) or len(obj) != 1 or next(iter(obj)) not in ("synthetic", "csv"):
        raise ConfigError(path, 'expected exactly one of {"synthetic": ...} or {"csv": ...}')
    kind, body = next(iter(obj.items()))
    sub = f"{path}.{kind}"
    if not isinstance(body, dict):
        raise ConfigError(sub, "expected an object")
    if kind == "synthetic":
        system = _require(body, "system", sub)
        if not isinstance(system, str):
            raise ConfigError(f"{sub}.system", "expected a name or model-JSON path")
        return SyntheticSource(
            system=system,
            samples=_as_int(_require(body, "samples", sub), f"{sub}.samples", minimum=1),
            x1_std=_as_number(body.get("x1_std", 0.1), f"{sub}.x1_std", minimum=0.0),
            u_std=_as_number(body.get("u_std", 0.1), f"{sub}.u_std", minimum=0.0),
            w_std=_as_number(body.get("w_std", 0.0), f"{sub}.w_std", minimum=0.0),
            v_std=_as_number(body.get("v_std", 0.0), f"{sub}.v_std", minimum=0.0),
        )
    paths = _require(body, "paths", sub)
    if isinstance(paths, str):
        paths = [paths]
    if not isinstance(paths, list) or not paths or not all(isinstance(p, str) for p in paths):
        raise ConfigError(f"{sub}.paths", "expected a path or nonempty list of paths")
    test = body.get("test")
    return CsvSource(
        paths=tuple(paths),
        nu=_as_int(_require(body, "nu", sub), f"{sub}.nu", minimum=1),
        ny=_as_int(_require(body, "ny", sub), f"{sub}.ny", minimum=1),
        train_range=_as_range(_require(body, "train", sub), f"{sub}.train"),
        test_range=None if test is None else _as_range(test, f"{sub}.test"),
        detrend=bool(body.get("detrend", False)),
        normalize=bool(body.get("normalize", False)),
        noise_std=_as_number(body.get("noise_std", 0.0), f"{sub}.noise_std", minimum=0.0),
    )


def parse_config(obj: dict, default_name: str = "experiment") -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("", "top level must be a JSON object")
    name = obj.get("name", default_name)
    if not isinstance(name, str) or not name:
        raise ConfigError("name", "expected a nonempty string")

    method_obj = _require(obj, "method", "")
    if not isinstance(method_obj, dict):
        raise ConfigError("method", "expected an object with a 'kind' field")
    kind = _require(method_obj, "kind", "method")
    if kind not in _METHOD_KINDS:
        raise ConfigError("method.kind", f"expected one of {_METHOD_KINDS}, got {kind!r}")

    mu = None
    if method_obj.get("mu") is not None:
        raw_mu = method_obj["mu"]
        if not isinstance(raw_mu, list) or not all(
            isinstance(m, int) and not isinstance(m, bool) and m >= 0 for m in raw_mu
        ):
            raise ConfigError("method.mu", f"expected a list of nonnegative integers, got {raw_mu!r}")
        mu = MuSpec(tuple(raw_mu))

    pseudo_source, pseudo_length, pseudo_std = "gaussian", None, 1.0
    pseudo_obj = method_obj.get("pseudo")
    if pseudo_obj is not None:
        if not isinstance(pseudo_obj, dict):
            raise ConfigError("method.pseudo", "expected an object")
        pseudo_source = pseudo_obj.get("source", "gaussian")
        if pseudo_source not in _PSEUDO_SOURCES:
            raise ConfigError(
                "method.pseudo.source", f"expected one of {_PSEUDO_SOURCES}, got {pseudo_source!r}"
            )
        if pseudo_obj.get("length") is not None:
            pseudo_length = _as_int(pseudo_obj["length"], "method.pseudo.length", minimum=1)
        pseudo_std = _as_number(
            pseudo_obj.get("input_std", 1.0), "method.pseudo.input_std", minimum=0.0, strict=True
        )

    seeds_raw = _require(obj, "seeds", "")
    if (
        not isinstance(seeds_raw, list)
        or not seeds_raw
        or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds_raw)
    ):
        raise ConfigError("seeds", "expected a nonempty list of nonnegative integers")

    pem_obj = obj.get("pem", {})
    if not isinstance(pem_obj, dict):
        raise ConfigError("pem", "expected an object")

    nx = _as_int(_require(obj, "nx", ""), "nx", minimum=1)
    config = ExperimentConfig(
        name=name,
        method=kind,
        workers=_as_int(_require(obj, "workers", ""), "workers", minimum=1),
        rounds=_as_int(_require(obj, "rounds", ""), "rounds", minimum=0),
        iterations=_as_int(_require(obj, "iterations", ""), "iterations", minimum=0),
        nx=nx,
        seeds=tuple(seeds_raw),
        data=_parse_data(_require(obj, "data", ""), "data"),
        mu=mu,
        pseudo_source=pseudo_source,
        pseudo_length=pseudo_length,
        pseudo_input_std=pseudo_std,
        damping_init=_as_number(pem_obj.get("damping_init", 1e-3), "pem.damping_init", 0.0, strict=True),
        damping_scale=_as_number(pem_obj.get("damping_scale", 10.0), "pem.damping_scale", 1.0, strict=True),
        min_step_decrease=_as_number(pem_obj.get("min_step_decrease", 0.0), "pem.min_step_decrease", 0.0),
        output_dir=obj.get("output_dir"),
    )
    if config.mu is not None and config.mu.total != nx:
        raise ConfigError("method.mu", f"entries sum to {config.mu.total}, nx is {nx}")
    return config


def config_to_canonical(config: ExperimentConfig) -> dict:
    """Round-trippable dict form with every field explicit."""
    method: dict = {"kind": config.method}
    if config.mu is not None:
        method["mu"] = list(config.mu.mu)
    if config.method == "fedalign_o":
        method["pseudo"] = {
            "source": config.pseudo_source,
            "length": config.pseudo_length,
            "input_std": config.pseudo_input_std,
        }
    if isinstance(config.data, SyntheticSource):
        data = {
            "synthetic": {
                "system": config.data.system,
                "samples": config.data.samples,
                "x1_std": config.data.x1_std,
                "u_std": config.data.u_std,
                "w_std": config.data.w_std,
                "v_std": config.data.v_std,
            }
        }
    else:
        data = {
            "csv": {
                "paths": list(config.data.paths),
                "nu": config.data.nu,
                "ny": config.data.ny,
                "train": list(config.data.train_range),
                "test": None if config.data.test_range is None else list(config.data.test_range),
                "detrend": config.data.detrend,
                "normalize": config.data.normalize,
                "noise_std": config.data.noise_std,
            }
        }
    return {
        "name": config.name,
        "method": method,
        "workers": config.workers,
        "rounds": config.rounds,
        "iterations": config.iterations,
        "nx": config.nx,
        "seeds": list(config.seeds),
        "data": data,
        "pem": {
            "damping_init": config.damping_init,
            "damping_scale": config.damping_scale,
            "min_step_decrease": config.min_step_decrease,
        },
        "output_dir": config.output_dir,
    }


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_experiments(path) -> list[ExperimentConfig]:
    """Parse a config file, expanding variants into independent experiments."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(str(path), "top level must be a JSON object")
    variants = obj.pop("variants", None)
    if variants is None:
        return [parse_config(obj, default_name=path.stem)]
    if not isinstance(variants, list) or not variants:
        raise ConfigError("variants", "expected a nonempty array of override objects")
    configs = []
    base_name = obj.get("name", path.stem)
    for idx, variant in enumerate(variants):
        if not isinstance(variant, dict):
            raise ConfigError(f"variants[{idx}]", "expected an object")
        merged = _merge(obj, variant)
        merged.setdefault("name", f"{base_name}-{idx}")
        if "name" in variant:
            merged["name"] = variant["name"]
        elif "name" in obj:
            merged["name"] = f"{obj['name']}-{idx}"
        configs.append(parse_config(merged, default_name=merged["name"]))
    return configs
