"""Experiment configuration: one INI-style key-value file per experiment,
with an include mechanism so several experiments can share limit parameters.

Included files are read first, in order, and the including file's own
sections override them key by key. Values holding several numbers are
whitespace separated; the service-rate matrix is row major.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import PreconditionViolation
from .model import CostSpec, LimitParams


@dataclass
class VerifySettings:
    targets: tuple = ("chain", "diffusion", "induced")
    k: float = 2.0
    beta_chain: float = 4.0
    beta_diffusion: float | None = None  # None: use the closed-form bound
    radius: float = 20.0  # chain box, scaled units
    box: float = 10.0  # diffusion box half-width
    ball: float = 0.3  # induced-policy enforcement ball, fluid fraction
    policy_file: str | None = None


@dataclass
class ExperimentConfig:
    params: LimitParams
    cost: CostSpec
    problem: str = "P1"
    n_list: tuple = ()
    horizon: float = 1.0e4
    burn_in: float = 1.0e3
    replicates: int = 8
    seed_base: int = 0
    ball: float | None = None  # None: use the measured default fraction
    policy: str = "sdp"
    policy_file: str | None = None
    hist_box: float = 5.0
    oracle_n_list: tuple = ()
    oracle_spread: float = 3.0
    eps_mode: bool = False
    grid_r: float = 6.0
    grid_h: float = 0.1
    out_dir: str = "."
    verify: VerifySettings = field(default_factory=VerifySettings)


def _floats(raw: str) -> tuple:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def _ints(raw: str) -> tuple:
    return tuple(int(v) for v in raw.replace(",", " ").split())


def _require(section, key, where):
    if key not in section:
        raise PreconditionViolation(f"missing key '{key}' in section [{where}]")
    return section[key]


def _parse_limit(sec) -> LimitParams:
    lam = _floats(_require(sec, "lam", "limit"))
    mu = _floats(_require(sec, "mu", "limit"))
    gamma = _floats(_require(sec, "gamma", "limit"))
    nu = _floats(_require(sec, "nu", "limit"))
    lam_hat = _floats(sec.get("lam_hat", "0 0"))
    mu_hat = _floats(sec.get("mu_hat", "0 0 0 0"))
    for name, v, want in (("lam", lam, 2), ("mu", mu, 4), ("gamma", gamma, 2),
                          ("nu", nu, 2), ("lam_hat", lam_hat, 2),
                          ("mu_hat", mu_hat, 4)):
        if len(v) != want:
            raise PreconditionViolation(
                f"[limit] {name} needs {want} numbers, got {len(v)}"
            )
    return LimitParams(
        lam=lam,
        mu=((mu[0], mu[1]), (mu[2], mu[3])),
        gamma=gamma,
        nu=nu,
        lam_hat=lam_hat,
        mu_hat=((mu_hat[0], mu_hat[1]), (mu_hat[2], mu_hat[3])),
    )


def _parse_cost(sec) -> CostSpec:
    kw = {}
    if "xi" in sec:
        kw["xi"] = _floats(sec["xi"])
    if "zeta" in sec:
        kw["zeta"] = _floats(sec["zeta"])
    if "m" in sec:
        kw["m"] = float(sec["m"])
    if "m_tilde" in sec:
        kw["m_tilde"] = float(sec["m_tilde"])
    if "delta" in sec:
        kw["delta"] = _floats(sec["delta"])
    if "theta" in sec:
        kw["theta"] = float(sec["theta"])
    return CostSpec(**kw)


def _read_with_includes(path: Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh, source=str(path))
    except configparser.Error as exc:
        raise PreconditionViolation(f"config parse error: {exc}") from exc
    if cp.has_section("include"):
        files = cp["include"].get("files", "").split()
        merged = configparser.ConfigParser()
        for name in files:
            inc = path.parent / name
            try:
                with open(inc) as fh:
                    merged.read_file(fh, source=str(inc))
            except configparser.Error as exc:
                raise PreconditionViolation(
                    f"config parse error in include {inc}: {exc}"
                ) from exc
        with open(path) as fh:
            merged.read_file(fh, source=str(path))
        merged.remove_section("include")
        return merged
    return cp


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    cp = _read_with_includes(path)
    if not cp.has_section("limit"):
        raise PreconditionViolation(f"{path}: missing [limit] section")
    params = _parse_limit(cp["limit"])
    cost = _parse_cost(cp["cost"]) if cp.has_section("cost") else CostSpec()

    cfg = ExperimentConfig(params=params, cost=cost)
    if cp.has_section("experiment"):
        sec = cp["experiment"]
        cfg.problem = sec.get("problem", cfg.problem).upper()
        if cfg.problem not in ("P1", "P2", "P3"):
            raise PreconditionViolation(f"unknown problem '{cfg.problem}'")
        if "n_list" in sec:
            cfg.n_list = _ints(sec["n_list"])
        cfg.horizon = sec.getfloat("horizon", cfg.horizon)
        cfg.burn_in = sec.getfloat("burn_in", cfg.burn_in)
        cfg.replicates = sec.getint("replicates", cfg.replicates)
        cfg.seed_base = sec.getint("seed_base", cfg.seed_base)
        if "ball" in sec:
            cfg.ball = sec.getfloat("ball")
        cfg.policy = sec.get("policy", cfg.policy)
        cfg.policy_file = sec.get("policy_file", cfg.policy_file)
        cfg.hist_box = sec.getfloat("hist_box", cfg.hist_box)
        if "oracle_n_list" in sec:
            cfg.oracle_n_list = _ints(sec["oracle_n_list"])
        cfg.oracle_spread = sec.getfloat("oracle_spread", cfg.oracle_spread)
        cfg.eps_mode = sec.getboolean("eps_mode", cfg.eps_mode)
        cfg.out_dir = sec.get("out_dir", cfg.out_dir)
    if cp.has_section("grid"):
        sec = cp["grid"]
        cfg.grid_r = sec.getfloat("r", cfg.grid_r)
        cfg.grid_h = sec.getfloat("h", cfg.grid_h)
    if cp.has_section("verify"):
        sec = cp["verify"]
        v = cfg.verify
        if "targets" in sec:
            v.targets = tuple(sec["targets"].split())
        v.k = sec.getfloat("k", v.k)
        v.beta_chain = sec.getfloat("beta_chain", v.beta_chain)
        if "beta_diffusion" in sec:
            v.beta_diffusion = sec.getfloat("beta_diffusion")
        v.radius = sec.getfloat("radius", v.radius)
        v.box = sec.getfloat("box", v.box)
        v.ball = sec.getfloat("ball", v.ball)
        v.policy_file = sec.get("policy_file", v.policy_file)
    return cfg
