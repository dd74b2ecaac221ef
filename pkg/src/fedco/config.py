"""Experiment configuration: YAML schema, validation, engine assembly.

Schema (nested key/value sections, all optional unless marked):

    model:      kind (squared_svm|logistic), lambda, classes
    data:       source (blobs|file), path, dim, train, test, class_sep, scale,
                shards_per_client
    clients:    n (required), p (scalar or list), t_u (scalar or list),
                buffer (scalar or list; streaming capacity)
    federation: K (required), tau_max, eta
    budget:     R (required), theta (required), a, b
    stream:     enabled, pattern, class_mode, arrival_count, interval,
                burst_round, trickle, initial_count
    sampling:   reservoir | fifo | random
    controller: kind, tau, s, tau_max
    eval:       stride
    run:        seed, noise {enabled, sigma}, client_order

Defaults follow the experiment setup this package reproduces: eta = 0.005,
a = 0.0005, b = n/10, lambda = 0.1.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import data as dt
from . import models as md
from . import simulation as sim
from .errors import ConfigError
from .resources import Budget

DEFAULTS: dict[str, Any] = {
    "model": {"kind": "squared_svm", "lambda": 0.1, "classes": 2},
    "data": {
        "source": "blobs",
        "path": None,
        "dim": 20,
        "train": 2000,
        "test": 500,
        "class_sep": 3.0,
        "scale": 1.0,
        "shards_per_client": 2,
    },
    "clients": {"n": None, "p": 50.0, "t_u": 1.0, "buffer": None},
    "federation": {"K": None, "tau_max": 8, "eta": 0.005},
    "budget": {"R": None, "theta": None, "a": 0.0005, "b": None},
    "stream": {
        "enabled": False,
        "pattern": "smooth",
        "class_mode": "iid",
        "arrival_count": 0,
        "interval": 1,
        "burst_round": 1,
        "trickle": 0,
        "initial_count": None,
    },
    "sampling": "reservoir",
    "controller": {"kind": "fedavg", "tau": 2, "s": 32, "tau_max": 8},
    "eval": {"stride": 1},
    "run": {"seed": 0, "noise": {"enabled": False, "sigma": 0.1}, "client_order": "forward"},
}

REQUIRED = (("clients", "n"), ("federation", "K"), ("budget", "R"), ("budget", "theta"))


@dataclass
class ExperimentConfig:
    """Validated, fully-resolved experiment description."""

    raw: dict[str, Any]

    def section(self, name: str) -> Any:
        return self.raw[name]

    @property
    def n_clients(self) -> int:
        return int(self.raw["clients"]["n"])

    @property
    def seed(self) -> int:
        return int(self.raw["run"]["seed"])

    def with_overrides(self, **sections: dict) -> "ExperimentConfig":
        merged = copy.deepcopy(self.raw)
        for name, sub in sections.items():
            if isinstance(sub, dict):
                merged[name].update(sub)
            else:
                merged[name] = sub
        return validate_config(merged)


def _deep_merge(base: dict, user: dict, errors: list[str], path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in user.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            errors.append(f"unknown field {here!r}")
            continue
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _deep_merge(base[key], val, errors, here)
        else:
            out[key] = val
    return out


def _client_vector(value: Any, n: int, name: str, errors: list[str]) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)] * n
    if isinstance(value, list):
        if len(value) != n:
            errors.append(f"clients.{name} list must have length n={n}")
            return [float(value[0])] * n if value else [1.0] * n
        return [float(v) for v in value]
    errors.append(f"clients.{name} must be a number or list")
    return [1.0] * n


def validate_config(raw: dict[str, Any]) -> ExperimentConfig:
    """Merge over defaults, then aggregate every semantic failure into one
    error so a bad file reports all its problems at once."""
    errors: list[str] = []
    merged = _deep_merge(DEFAULTS, raw or {}, errors)

    for section, key in REQUIRED:
        if merged[section][key] is None:
            errors.append(f"missing required field {section}.{key}")

    n = merged["clients"]["n"]
    if n is not None:
        n = int(n)
        if n < 1:
            errors.append("clients.n must be at least 1")
        else:
            merged["clients"]["p"] = _client_vector(merged["clients"]["p"], n, "p", errors)
            merged["clients"]["t_u"] = _client_vector(merged["clients"]["t_u"], n, "t_u", errors)
            if merged["clients"]["buffer"] is not None:
                merged["clients"]["buffer"] = [
                    int(v) for v in _client_vector(merged["clients"]["buffer"], n, "buffer", errors)
                ]
            if any(p <= 0 for p in merged["clients"]["p"]):
                errors.append("clients.p must be positive")
            if any(t < 0 for t in merged["clients"]["t_u"]):
                errors.append("clients.t_u must be nonnegative")

    if merged["federation"]["K"] is not None and int(merged["federation"]["K"]) < 0:
        errors.append("federation.K must be nonnegative")
    if int(merged["federation"]["tau_max"]) < 1:
        errors.append("federation.tau_max must be at least 1")
    if float(merged["federation"]["eta"]) <= 0:
        errors.append("federation.eta must be positive")

    if merged["budget"]["b"] is None and n:
        merged["budget"]["b"] = n / 10.0
    if float(merged["budget"]["a"]) <= 0:
        errors.append("budget.a must be positive")

    if merged["model"]["kind"] not in (md.SQUARED_SVM, md.LOGISTIC):
        errors.append(f"model.kind {merged['model']['kind']!r} unknown")
    if float(merged["model"]["lambda"]) < 0:
        errors.append("model.lambda must be nonnegative")

    if merged["sampling"] not in dt.SAMPLING_POLICIES:
        errors.append(f"sampling {merged['sampling']!r} not one of {dt.SAMPLING_POLICIES}")
    if merged["controller"]["kind"] not in sim.CONTROLLER_KINDS:
        errors.append(f"controller.kind {merged['controller']['kind']!r} unknown")

    st = merged["stream"]
    if st["enabled"]:
        if st["pattern"] not in ("smooth", "burst", "random"):
            errors.append(f"stream.pattern {st['pattern']!r} unknown")
        if st["class_mode"] not in ("iid", "continuous"):
            errors.append(f"stream.class_mode {st['class_mode']!r} unknown")
        if merged["clients"]["buffer"] is None:
            errors.append("stream.enabled requires clients.buffer")
        K = merged["federation"]["K"]
        if st["pattern"] == "burst" and K is not None and not (1 <= st["burst_round"] <= int(K)):
            errors.append("stream.burst_round must lie in [1, K]")

    if merged["data"]["source"] not in ("blobs", "file"):
        errors.append("data.source must be blobs or file")
    if merged["data"]["source"] == "file" and not merged["data"]["path"]:
        errors.append("data.source=file requires data.path")

    if errors:
        raise ConfigError("; ".join(errors))
    return ExperimentConfig(raw=merged)


def parse_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} does not contain a mapping")
    return validate_config(raw)


def _load_master(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[dt.Dataset, dt.Dataset]:
    d = cfg.section("data")
    m = cfg.section("model")
    if d["source"] == "file":
        full = dt.read_dataset(d["path"])
        n_test = min(int(d["test"]), max(1, len(full) // 5))
        rows = rng.permutation(len(full))
        return full.subset(rows[n_test:]), full.subset(rows[:n_test])
    total = int(d["train"]) + int(d["test"])
    signed = m["kind"] == md.SQUARED_SVM and int(m["classes"]) == 2
    full = dt.make_blobs(
        total,
        int(d["dim"]),
        int(m["classes"]),
        rng,
        class_sep=float(d["class_sep"]),
        scale=float(d["scale"]),
        signed_binary=signed,
    )
    return full.subset(np.arange(int(d["train"]))), full.subset(
        np.arange(int(d["train"]), total)
    )


def build_engine(cfg: ExperimentConfig) -> sim.Engine:
    """Assemble clients, buffers, streams, and the engine from a config."""
    n = cfg.n_clients
    model_cfg = cfg.section("model")
    model = md.LossModel(
        kind=model_cfg["kind"],
        lam=float(model_cfg["lambda"]),
        n_classes=int(model_cfg["classes"]),
    )
    root = np.random.SeedSequence(cfg.seed)
    data_ss, part_ss, clients_root = root.spawn(3)
    data_rng = np.random.default_rng(data_ss)
    part_rng = np.random.default_rng(part_ss)
    client_seeds = clients_root.spawn(n)

    train, test = _load_master(cfg, data_rng)

    ccfg = cfg.section("clients")
    stream_cfg = cfg.section("stream")
    noise_cfg = cfg.section("run")["noise"]
    noise = sim.NoiseSpec(enabled=bool(noise_cfg["enabled"]), sigma=float(noise_cfg["sigma"]))

    clients: list[sim.ClientSim] = []
    if stream_cfg["enabled"]:
        sources = dt.split_stream_sources(train, n, part_rng)
        scfg = dt.StreamConfig(
            pattern=stream_cfg["pattern"],
            class_mode=stream_cfg["class_mode"],
            arrival_count=int(stream_cfg["arrival_count"]),
            interval=int(stream_cfg["interval"]),
            burst_round=int(stream_cfg["burst_round"]),
            trickle=int(stream_cfg["trickle"]),
        )
        initial = stream_cfg["initial_count"]
        initial = int(initial) if initial is not None else int(stream_cfg["arrival_count"])
        for i in range(n):
            stream = dt.ClientStream(sources[i], scfg, np.random.default_rng(client_seeds[i].spawn(1)[0]))
            cap = int(ccfg["buffer"][i])
            buf = dt.Buffer(cap, train.dim, train.n_classes)
            if initial > 0:
                first = stream.initial_draw(min(initial, cap))
                buf.seed_initial(first)
            clients.append(
                sim.ClientSim(
                    index=i,
                    model=model,
                    eta=float(cfg.section("federation")["eta"]),
                    p_true=float(ccfg["p"][i]),
                    t_u_true=float(ccfg["t_u"][i]),
                    buffer=buf,
                    policy=cfg.section("sampling"),
                    stream=stream,
                    seed_seq=client_seeds[i],
                    noise=noise,
                )
            )
    else:
        shards = dt.partition_static(
            train, n, int(cfg.section("data")["shards_per_client"]), part_rng
        )
        for i in range(n):
            cap = len(shards[i])
            if ccfg["buffer"] is not None:
                cap = max(cap, int(ccfg["buffer"][i]))
            buf = dt.Buffer(cap, train.dim, train.n_classes)
            buf.seed_initial(shards[i])
            clients.append(
                sim.ClientSim(
                    index=i,
                    model=model,
                    eta=float(cfg.section("federation")["eta"]),
                    p_true=float(ccfg["p"][i]),
                    t_u_true=float(ccfg["t_u"][i]),
                    buffer=buf,
                    policy=cfg.section("sampling"),
                    stream=None,
                    seed_seq=client_seeds[i],
                    noise=noise,
                )
            )

    bcfg = cfg.section("budget")
    K = int(cfg.section("federation")["K"])
    if K < 1:
        raise ConfigError("build_engine needs K >= 1 (K=0 short-circuits to an empty run)")
    budget = Budget(
        R=float(bcfg["R"]),
        theta=float(bcfg["theta"]),
        a=float(bcfg["a"]),
        b=float(bcfg["b"]),
        K=K,
    )
    ctl = cfg.section("controller")
    controller = sim.ControllerSpec(
        kind=ctl["kind"], tau=int(ctl["tau"]), s=int(ctl["s"]), tau_max=int(ctl["tau_max"])
    )
    return sim.Engine(
        clients=clients,
        model=model,
        eta=float(cfg.section("federation")["eta"]),
        budget=budget,
        controller=controller,
        test_set=test,
        eval_stride=int(cfg.section("eval")["stride"]),
        client_order=str(cfg.section("run")["client_order"]),
    )


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    if int(cfg.section("federation")["K"]) == 0:
        return []
    return build_engine(cfg).run()
