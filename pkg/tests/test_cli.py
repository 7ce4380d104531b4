import hashlib
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from popdyn import cli
from popdyn.config import ConfigError, Schema, config_hash, parse_config, render_config
from popdyn.experiments import get_experiment, list_experiments, run_experiment


def default_cfg(name: str, **overrides):
    cfg = parse_config("", get_experiment(name).schema_factory())
    cfg["experiment.name"] = name
    cfg.update(overrides)
    return cfg


class TestConfig:
    def test_unknown_key_rejected_with_path(self):
        schema = get_experiment("bd-extinction-linear").schema_factory()
        with pytest.raises(ConfigError, match=r"bd\.lamx"):
            parse_config("[bd]\nlamx = 2.0\n", schema)

    def test_range_check(self):
        schema = get_experiment("csbp-lamperti-stable").schema_factory()
        with pytest.raises(ConfigError, match=r"csbp\.alpha"):
            parse_config("[csbp]\nalpha = 2.5\n", schema)

    def test_type_error_names_field(self):
        schema = get_experiment("bd-extinction-linear").schema_factory()
        with pytest.raises(ConfigError, match=r"bd\.z0"):
            parse_config("[bd]\nz0 = few\n", schema)

    def test_empty_replicates_rejected(self):
        schema = get_experiment("bd-extinction-linear").schema_factory()
        with pytest.raises(ConfigError, match=r"experiment\.replicates"):
            parse_config("[experiment]\nreplicates =\n", schema)

    def test_render_parse_roundtrip_all_experiments(self):
        for exp in list_experiments():
            cfg = parse_config("", exp.schema_factory())
            text = render_config(cfg)
            again = parse_config(text, exp.schema_factory())
            assert again == cfg

    def test_hash_is_stable_and_sensitive(self):
        cfg = default_cfg("bd-extinction-linear")
        h1 = config_hash(cfg)
        assert h1 == config_hash(dict(cfg))
        cfg["bd.lam"] = 1.6
        assert config_hash(cfg) != h1

    @settings(max_examples=40, deadline=None)
    @given(hst.floats(1e-3, 10), hst.integers(0, 50), hst.integers(0, 10 ** 6))
    def test_roundtrip_fuzz(self, lam, z0, seed):
        schema = get_experiment("bd-extinction-linear").schema_factory()
        text = f"[experiment]\nseed = {seed}\n[bd]\nlam = {lam!r}\nz0 = {z0}\n"
        cfg = parse_config(text, schema)
        assert cfg["bd.lam"] == lam and cfg["bd.z0"] == z0 and cfg["experiment.seed"] == seed
        assert parse_config(render_config(cfg), schema) == cfg


class TestRegistry:
    def test_every_criterion_covered(self):
        covered = {exp.criterion for exp in list_experiments()}
        assert covered == set(range(1, 12))

    def test_ids_unique_and_sorted_listing(self):
        names = [e.name for e in list_experiments()]
        assert len(names) == len(set(names))
        assert names == sorted(names)

    def test_every_id_roundtrips_through_loader(self):
        for exp in list_experiments():
            cfg = parse_config(render_config(parse_config("", exp.schema_factory())),
                               exp.schema_factory())
            assert cfg["experiment.seed"] is not None

    def test_unknown_experiment(self):
        with pytest.raises(KeyError):
            get_experiment("nope")


class TestCliRuns:
    def test_list_exit_zero(self, capsys):
        assert cli.main(["list"]) == 0
        out = capsys.readouterr().out
        assert "bd-extinction-linear" in out

    def test_usage_error_exit_two(self, capsys):
        assert cli.main(["run", "not-an-experiment"]) == 2

    def test_validate_and_run_small(self, tmp_path, capsys):
        cfgfile = tmp_path / "c.ini"
        cfgfile.write_text("[experiment]\nseed = 5\nreplicates = 3000\n"
                           "[bd]\nhorizon = 40\n", encoding="utf-8")
        assert cli.main(["validate", "bd-extinction-linear", "--config", str(cfgfile)]) == 0
        code = cli.main(["run", "bd-extinction-linear", "--config", str(cfgfile),
                         "--out", str(tmp_path / "out")])
        assert code == 0
        assert (tmp_path / "out" / "report.csv").exists()
        assert (tmp_path / "out" / "trajectories.csv").exists()

    def test_validation_error_exit_two(self, tmp_path):
        cfgfile = tmp_path / "bad.ini"
        cfgfile.write_text("[bd]\nunknown_key = 1\n", encoding="utf-8")
        assert cli.main(["run", "bd-extinction-linear", "--config", str(cfgfile)]) == 2

    def test_mismatched_name_rejected(self, tmp_path):
        cfgfile = tmp_path / "c.ini"
        cfgfile.write_text("[experiment]\nname = kernel-properties\n", encoding="utf-8")
        assert cli.main(["run", "bd-extinction-linear", "--config", str(cfgfile)]) == 2

    def test_env_override(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("POPDYN_REPLICATES", "2000")
        monkeypatch.setenv("POPDYN_SEED", "11")
        code = cli.main(["run", "bd-extinction-linear", "--out", str(tmp_path / "o")])
        assert code == 0
        text = (tmp_path / "o" / "report.csv").read_text()
        assert "#seed,11" in text


class TestDeterminism:
    def _digest(self, d: Path) -> str:
        h = hashlib.sha256()
        for f in sorted(d.rglob("*.csv")):
            h.update(f.name.encode())
            h.update(f.read_bytes())
        return h.hexdigest()

    def test_bit_identical_reruns_and_thread_counts(self, tmp_path):
        cfg = default_cfg("bd-extinction-linear", **{"experiment.replicates": 4000})
        digests = []
        for j, threads in enumerate((1, 1, 4)):
            out = tmp_path / f"run{j}"
            c = dict(cfg)
            c["experiment.threads"] = threads
            run_experiment("bd-extinction-linear", c, out)
            digests.append(self._digest(out))
        assert digests[0] == digests[1] == digests[2]

    def test_ibm_threaded_determinism(self, tmp_path):
        cfg = default_cfg("ibm-soundness")
        cfg.update({"structpop.reps_sound": 12, "structpop.reps_gen": 10,
                    "structpop.K_eq": 30, "structpop.t_eq": 0.2,
                    "structpop.t_sound": 0.2, "structpop.t_gen": 0.2,
                    "structpop.eq_tol": 10.0})
        outs = []
        for j, threads in enumerate((1, 3)):
            c = dict(cfg)
            c["experiment.threads"] = threads
            out = tmp_path / f"ibm{j}"
            rep = run_experiment("ibm-soundness", c, out)
            outs.append([r.estimate for r in rep.rows])
        assert outs[0] == outs[1]
