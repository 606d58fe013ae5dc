"""Experiment configuration and setup: data, calibration, constant estimation.

Config files are either JSON or INI-style sections ([data], [model], [radio],
[privacy], [run], [output]) with JSON-encoded values. ``build_context`` turns
a config plus a seed into a ready-to-run ExperimentContext: it generates or
loads the dataset, draws the topology, calibrates the noise scale for the
requested privacy mode, estimates the loss-landscape constants, and
assembles the bound constants.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .channel import RadioConfig, min_rate
from .coeffs import bound_constants_from, empirical_mu_l
from .dpq import (PrivacySpec, delta_plain_gaussian_of_sigma, delta_q_of_sigma,
                  make_global_quantizer, make_local_quantizer, search_sigma)
from .engine import DP_MODES, POLICIES, ExperimentContext
from .errors import ConfigError
from .models import ModelSpec, QuadraticModel, build_model
from .rng import substream


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"          # "synthetic" | "idx"
    images: str = ""                   # idx paths (may be gzipped)
    labels: str = ""
    n_samples: int = 2000
    input_dim: int = 16
    n_classes: int = 10
    separation: float = 6.0
    feature_scale: float = 1.0
    difficulty_jitter: float = 0.0
    label_noise: float = 0.0
    labels_per_client: int = 2
    test_fraction: float = 0.2


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "mlr"                  # "mlr" | "mlp"
    hidden_dim: int = 100
    clip_c: float = 3.0
    tau_max: float = 0.01


@dataclass(frozen=True)
class PrivacyConfig:
    epsilon_q: float = 1.0
    delta_q: float = 5e-3
    t0: int = 20
    r_bits: int = 16
    q_sample: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    policy: str = "proposed"
    dp_mode: str = "quantization_assisted"
    seeds: tuple = (0,)
    max_rounds: int = 120
    eps_p: float = 0.0                 # 0 means "use 1 - mu^2 / eps_p_div"
    eps_p_div: float = 8.0
    phi1: float = 1e-3
    phi2: float = 1e-3
    varphi1: float = 1e-3
    varphi2: float = 1e-3
    eta_f_default: float = 0.01
    eta_p_default: float = 0.01
    lambda_default: float = 0.5
    warmup_rounds: int = 5
    mu_override: float = 0.0           # 0 means "estimate empirically"
    l_override: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    run: RunConfig = field(default_factory=RunConfig)
    out_dir: str = "results"


_SECTIONS = ("data", "model", "radio", "privacy", "run")
_SECTION_TYPES = dict(data=DataConfig, model=ModelConfig, radio=RadioConfig,
                      privacy=PrivacyConfig, run=RunConfig)


def config_from_dict(d: dict) -> ExperimentConfig:
    kwargs = {}
    for name in _SECTIONS:
        cls = _SECTION_TYPES[name]
        section = dict(d.get(name, {}))
        if name == "run" and "seeds" in section:
            section["seeds"] = tuple(section["seeds"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(section) - known
        if unknown:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
        kwargs[name] = cls(**section)
    out = d.get("output", {})
    return ExperimentConfig(out_dir=out.get("out_dir", "results"), **kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTIONS}
    d["run"]["seeds"] = list(cfg.run.seeds)
    d["output"] = {"out_dir": cfg.out_dir}
    return d


def serialize_config(cfg: ExperimentConfig) -> str:
    """Deterministic INI rendering with JSON-encoded values."""
    d = config_to_dict(cfg)
    buf = io.StringIO()
    for section in (*_SECTIONS, "output"):
        buf.write(f"[{section}]\n")
        for key in sorted(d[section]):
            buf.write(f"{key} = {json.dumps(d[section][key])}\n")
        buf.write("\n")
    return buf.getvalue()


def parse_config_text(text: str) -> ExperimentConfig:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return config_from_dict(json.loads(text))
    parser = configparser.ConfigParser()
    parser.read_string(text)
    d = {}
    for section in parser.sections():
        vals = {}
        for key, raw in parser.items(section):
            try:
                vals[key] = json.loads(raw)
            except json.JSONDecodeError:
                vals[key] = raw
        d[section] = vals
    return config_from_dict(d)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


def calibrate_sigma(privacy: PrivacyConfig, clip_c: float, dp_mode: str,
                    t0: int | None = None) -> float:
    """Noise scale for the requested privacy mode (0 when DP is off)."""
    if dp_mode not in DP_MODES:
        raise ConfigError(f"unknown dp_mode {dp_mode!r}")
    if dp_mode == "none":
        return 0.0
    spec = PrivacySpec(epsilon_q=privacy.epsilon_q, delta_q_target=privacy.delta_q,
                       t0=t0 if t0 is not None else privacy.t0, clip_c=clip_c,
                       r_bits=privacy.r_bits, q_sample=privacy.q_sample)
    fn = delta_q_of_sigma if dp_mode == "quantization_assisted" else delta_plain_gaussian_of_sigma
    return search_sigma(spec, delta_fn=fn)


def estimate_constants(model, clients, rng, warmup_rounds: int = 5,
                       eta_warmup: float = 0.01, n_pairs: int = 100,
                       scale: float = 0.1):
    """(mu, L, G0, M) from data: gradient-difference ratios for mu/L, a short
    plain-averaging warmup for the gradient bound G0 (x1.2 margin) and the
    local-vs-global optimum spread M."""
    pool_x = np.concatenate([c.train_x for c in clients])
    pool_y = np.concatenate([c.train_y for c in clients])
    mu, lsmooth = empirical_mu_l(model, pool_x, pool_y, rng, n_pairs=n_pairs, scale=scale)
    w = model.init_params(rng)
    g_max = 0.0
    locals_ = [w.copy() for _ in clients]
    for _ in range(warmup_rounds):
        grads = [model.grad(w, c.train_x, c.train_y) for c in clients]
        g_max = max(g_max, max(float(np.linalg.norm(g)) for g in grads))
        locals_ = [w - eta_warmup * g for g in grads]
        w = np.mean(locals_, axis=0)
    m_dist = max(float(np.linalg.norm(u - w)) for u in locals_)
    return mu, lsmooth, 1.2 * g_max, m_dist


def _build_dataset(cfg: ExperimentConfig, seed: int):
    dc = cfg.data
    rng = substream(seed, "data")
    if dc.source == "synthetic":
        x, y = data_mod.synthetic_gen(dc.n_classes, dc.input_dim, dc.n_samples,
                                      rng, separation=dc.separation,
                                      scale=dc.feature_scale,
                                      difficulty_jitter=dc.difficulty_jitter,
                                      label_noise=dc.label_noise)
    elif dc.source == "idx":
        x, y = data_mod.load_idx(dc.images, dc.labels)
        if dc.n_samples and dc.n_samples < len(y):
            pick = rng.permutation(len(y))[: dc.n_samples]
            x, y = x[pick], y[pick]
    else:
        raise ConfigError(f"unknown data source {dc.source!r}")
    clients = data_mod.partition_noniid(x, y, cfg.radio.n_clients,
                                        dc.labels_per_client, rng,
                                        test_fraction=dc.test_fraction)
    return x, y, clients


def build_context(cfg: ExperimentConfig, seed: int, policy: str | None = None,
                  dp_mode: str | None = None, t0: int | None = None) -> ExperimentContext:
    policy = policy or cfg.run.policy
    dp_mode = dp_mode or cfg.run.dp_mode
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}")
    x, y, clients = _build_dataset(cfg, seed)
    input_dim = x.shape[1]
    n_classes = int(y.max()) + 1
    spec = ModelSpec(kind=cfg.model.kind, input_dim=input_dim,
                     n_classes=n_classes, hidden_dim=cfg.model.hidden_dim)
    model = build_model(spec)

    sigma = calibrate_sigma(cfg.privacy, cfg.model.clip_c, dp_mode, t0=t0)
    privacy = PrivacySpec(
        epsilon_q=cfg.privacy.epsilon_q, delta_q_target=cfg.privacy.delta_q,
        t0=t0 if t0 is not None else cfg.privacy.t0, clip_c=cfg.model.clip_c,
        r_bits=cfg.privacy.r_bits, q_sample=cfg.privacy.q_sample,
        sigma_dp=sigma)
    local_q = make_local_quantizer(privacy)
    global_q = make_global_quantizer(privacy.clip_c, privacy.r_bits)

    est_rng = substream(seed, "estimate")
    mu, lsmooth, g0, m_dist = estimate_constants(
        model, clients, est_rng, warmup_rounds=cfg.run.warmup_rounds,
        eta_warmup=cfg.run.eta_f_default)
    if cfg.run.mu_override > 0:
        mu = cfg.run.mu_override
    if cfg.run.l_override > 0:
        lsmooth = cfg.run.l_override
    consts = bound_constants_from(
        privacy, model.n_params, mu, lsmooth, g0, m_dist, local_q, global_q,
        phi1=cfg.run.phi1, phi2=cfg.run.phi2,
        varphi1=cfg.run.varphi1, varphi2=cfg.run.varphi2)

    eps_p = cfg.run.eps_p if cfg.run.eps_p > 0 else 1.0 - mu * mu / cfg.run.eps_p_div

    topo_rng = substream(seed, "topology")
    distances = topo_rng.uniform(cfg.radio.min_distance_m, cfg.radio.cell_radius_m,
                                 cfg.radio.n_clients)

    return ExperimentContext(
        seed=seed, policy=policy, model=model, clients=clients,
        distances_m=distances, radio=cfg.radio, privacy=privacy,
        local_q=local_q, global_q=global_q, consts=consts,
        r_min_bps=min_rate(model.n_params, privacy.r_bits, cfg.model.tau_max),
        eps_p_target=eps_p, eta_f_default=cfg.run.eta_f_default,
        eta_p_default=cfg.run.eta_p_default, lambda_default=cfg.run.lambda_default,
        max_rounds=cfg.run.max_rounds)


def build_quadratic_context(cfg: ExperimentConfig, seed: int, curvature,
                            target_spread: float = 1.0, samples_per_client: int = 40,
                            policy: str | None = None,
                            dp_mode: str | None = None) -> ExperimentContext:
    """Context for a strongly convex quadratic task with known optima.

    Each client's loss is a quadratic centered on its own target cloud; the
    per-client and blended optima are then available in closed form, which
    is what the bound-validation runs need.
    """
    policy = policy or cfg.run.policy
    dp_mode = dp_mode or cfg.run.dp_mode
    model = QuadraticModel(np.asarray(curvature, dtype=float))
    rng = substream(seed, "data")
    clients = []
    for _ in range(cfg.radio.n_clients):
        center = rng.normal(0.0, target_spread, model.n_params)
        pts = center + rng.normal(0.0, 0.3, (samples_per_client, model.n_params))
        split = max(1, samples_per_client // 5)
        clients.append(data_mod.ClientDataset(
            train_x=pts[split:], train_y=np.zeros(samples_per_client - split, dtype=int),
            test_x=pts[:split], test_y=np.zeros(split, dtype=int)))

    sigma = calibrate_sigma(cfg.privacy, cfg.model.clip_c, dp_mode)
    privacy = PrivacySpec(
        epsilon_q=cfg.privacy.epsilon_q, delta_q_target=cfg.privacy.delta_q,
        t0=cfg.privacy.t0, clip_c=cfg.model.clip_c, r_bits=cfg.privacy.r_bits,
        q_sample=cfg.privacy.q_sample, sigma_dp=sigma)
    local_q = make_local_quantizer(privacy)
    global_q = make_global_quantizer(privacy.clip_c, privacy.r_bits)

    est_rng = substream(seed, "estimate")
    mu, lsmooth, g0, m_dist = estimate_constants(
        model, clients, est_rng, warmup_rounds=cfg.run.warmup_rounds,
        eta_warmup=cfg.run.eta_f_default)
    consts = bound_constants_from(
        privacy, model.n_params, mu, lsmooth, g0, m_dist, local_q, global_q,
        phi1=cfg.run.phi1, phi2=cfg.run.phi2,
        varphi1=cfg.run.varphi1, varphi2=cfg.run.varphi2)
    eps_p = cfg.run.eps_p if cfg.run.eps_p > 0 else 1.0 - mu * mu / cfg.run.eps_p_div

    topo_rng = substream(seed, "topology")
    distances = topo_rng.uniform(cfg.radio.min_distance_m, cfg.radio.cell_radius_m,
                                 cfg.radio.n_clients)
    return ExperimentContext(
        seed=seed, policy=policy, model=model, clients=clients,
        distances_m=distances, radio=cfg.radio, privacy=privacy,
        local_q=local_q, global_q=global_q, consts=consts,
        r_min_bps=min_rate(model.n_params, privacy.r_bits, cfg.model.tau_max),
        eps_p_target=eps_p, eta_f_default=cfg.run.eta_f_default,
        eta_p_default=cfg.run.eta_p_default, lambda_default=cfg.run.lambda_default,
        max_rounds=cfg.run.max_rounds)
