"""Config loading: key parsing, defaults, includes, and failure modes."""
import glob
import os

import pytest

from nnetctrl.config import load_config
from nnetctrl.errors import PreconditionViolation
from nnetctrl.model import validate_limit_params

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    return str(path)


MINIMAL = """
[limit]
lam = 1.3 0.7
mu = 1 1 0 1
gamma = 0.5 0.5
nu = 1 1
"""


class TestParsing:
    def test_minimal_defaults(self, tmp_path):
        cfg = load_config(write(tmp_path / "a.ini", MINIMAL))
        assert cfg.params.lam == (1.3, 0.7)
        assert cfg.params.mu == ((1.0, 1.0), (0.0, 1.0))
        assert cfg.params.lam_hat == (0.0, 0.0)
        assert cfg.problem == "P1"
        assert cfg.n_list == ()
        assert cfg.horizon == 1.0e4
        assert cfg.replicates == 8
        assert cfg.ball is None
        assert cfg.cost.xi == (1.0, 1.0)
        assert cfg.verify.beta_diffusion is None
        assert cfg.verify.targets == ("chain", "diffusion", "induced")

    def test_full_sections(self, tmp_path):
        text = MINIMAL + """
lam_hat = 0.2 -0.1
mu_hat = 0 0.5 0 0

[cost]
xi = 2 3
zeta = 0.5 0.5
m = 2
m_tilde = 1
delta = 0.3 0.4
theta = 0.5

[grid]
r = 5
h = 0.25

[experiment]
problem = p2
n_list = 50, 100, 200
horizon = 2e3
burn_in = 100
replicates = 4
seed_base = 7
ball = 0.2
policy = concat
policy_file = field.csv
hist_box = 4
oracle_n_list = 5 10
oracle_spread = 2.5
eps_mode = true
out_dir = results

[verify]
targets = chain diffusion
k = 3
beta_chain = 5
beta_diffusion = 1.5
radius = 15
box = 8
ball = 0.25
policy_file = drift_field.csv
"""
        cfg = load_config(write(tmp_path / "b.ini", text))
        assert cfg.params.lam_hat == (0.2, -0.1)
        assert cfg.params.mu_hat == ((0.0, 0.5), (0.0, 0.0))
        assert cfg.cost.xi == (2.0, 3.0)
        assert cfg.cost.delta == (0.3, 0.4)
        assert cfg.cost.theta == 0.5
        assert cfg.problem == "P2"
        assert cfg.n_list == (50, 100, 200)
        assert cfg.horizon == 2e3
        assert cfg.replicates == 4
        assert cfg.seed_base == 7
        assert cfg.ball == 0.2
        assert cfg.policy == "concat"
        assert cfg.policy_file == "field.csv"
        assert cfg.hist_box == 4.0
        assert cfg.oracle_n_list == (5, 10)
        assert cfg.oracle_spread == 2.5
        assert cfg.eps_mode is True
        assert cfg.grid_r == 5.0
        assert cfg.grid_h == 0.25
        assert cfg.out_dir == "results"
        v = cfg.verify
        assert v.targets == ("chain", "diffusion")
        assert v.k == 3.0
        assert v.beta_chain == 5.0
        assert v.beta_diffusion == 1.5
        assert v.radius == 15.0
        assert v.box == 8.0
        assert v.ball == 0.25
        assert v.policy_file == "drift_field.csv"

    def test_include_and_override(self, tmp_path):
        write(tmp_path / "base.ini", MINIMAL + "\n[cost]\nxi = 1 1\nm = 1\n")
        main = write(
            tmp_path / "main.ini",
            "[include]\nfiles = base.ini\n\n[cost]\nxi = 5 6\n",
        )
        cfg = load_config(main)
        # the including file wins on the keys it sets, the rest comes through
        assert cfg.cost.xi == (5.0, 6.0)
        assert cfg.cost.m == 1.0
        assert cfg.params.lam == (1.3, 0.7)

    def test_missing_limit_section(self, tmp_path):
        with pytest.raises(PreconditionViolation, match=r"\[limit\]"):
            load_config(write(tmp_path / "c.ini", "[cost]\nxi = 1 1\n"))

    def test_missing_required_key(self, tmp_path):
        text = "[limit]\nlam = 1.3 0.7\nmu = 1 1 0 1\ngamma = 0.5 0.5\n"
        with pytest.raises(PreconditionViolation, match="'nu'"):
            load_config(write(tmp_path / "d.ini", text))

    def test_wrong_arity(self, tmp_path):
        text = MINIMAL.replace("mu = 1 1 0 1", "mu = 1 1 0")
        with pytest.raises(PreconditionViolation, match="mu needs 4"):
            load_config(write(tmp_path / "e.ini", text))

    def test_unknown_problem(self, tmp_path):
        text = MINIMAL + "\n[experiment]\nproblem = P9\n"
        with pytest.raises(PreconditionViolation, match="P9"):
            load_config(write(tmp_path / "f.ini", text))

    def test_malformed_ini(self, tmp_path):
        with pytest.raises(PreconditionViolation, match="config parse error"):
            load_config(write(tmp_path / "g.ini", "lam = 1.3\n[limit]\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.ini")


class TestShippedConfigs:
    def test_all_load_and_validate(self):
        paths = sorted(glob.glob(os.path.join(CONFIG_DIR, "*.ini")))
        assert paths, "no shipped configs found"
        for path in paths:
            cfg = load_config(path)
            validate_limit_params(cfg.params)

    def test_budget_config_has_budgets(self):
        cfg = load_config(os.path.join(CONFIG_DIR, "ref2_budget.ini"))
        assert cfg.problem == "P2"
        assert cfg.cost.delta == (0.45, 0.45)

    def test_fairness_config_has_ratio(self):
        cfg = load_config(os.path.join(CONFIG_DIR, "ref2_fairness.ini"))
        assert cfg.problem == "P3"
        assert cfg.cost.theta == 0.5
        assert cfg.cost.m == 2.0
        assert cfg.cost.m_tilde == 1.0
