"""Configuration, dataset/ensemble persistence, and summary emission."""

import os

import numpy as np
import pytest

from pinnuq import io as eio
from pinnuq.problems import Diffusion2D, GridField, LinearPoisson
from pinnuq.samplers import OptimizerConfig, rpinn_sample
from pinnuq.stats import SummaryRow
from pinnuq.toys import random_linear_gaussian


class TestConfig:
    def test_minimal_round_trip(self, tmp_path):
        cfg = eio.validate_config({"problem": "linear_poisson", "sigma": 0.1})
        path = tmp_path / "c.json"
        eio.save_config(cfg, path)
        back = eio.load_config(path)
        assert back == cfg
        eio.save_config(back, path)
        assert eio.load_config(path) == cfg

    def test_negative_sigma_names_field(self):
        with pytest.raises(eio.ConfigError, match="sigma"):
            eio.validate_config({"problem": "linear_poisson", "sigma": -1.0})

    def test_unknown_problem(self):
        with pytest.raises(eio.ConfigError, match="problem"):
            eio.validate_config({"problem": "heat", "sigma": 0.1})

    def test_unknown_field(self):
        with pytest.raises(eio.ConfigError, match="unknown"):
            eio.validate_config(
                {"problem": "linear_poisson", "sigma": 0.1, "bogus": 1}
            )

    def test_bad_counts_named(self):
        with pytest.raises(eio.ConfigError, match="counts.n_f"):
            eio.validate_config(
                {"problem": "linear_poisson", "sigma": 0.1, "counts": {"n_f": 0}}
            )

    def test_preset_expansion(self):
        cfg = eio.get_preset("linear_poisson_Nf32_sigma0.1")
        assert cfg.weights == {"f": 27000.0, "b": 2700.0}
        assert cfg.counts["n_f"] == 32
        sig = eio.config_sigmas(cfg)
        assert abs(sig.sigma_p - 2.905) < 1e-3
        assert abs(sig["f"] - 0.1) < 1e-12
        assert abs(sig["b"] - 0.079) < 1e-3

    def test_preset_names_cover_table_cells(self):
        names = eio.preset_names()
        for nf in (32, 128):
            for s in (0.1, 0.01):
                assert f"linear_poisson_Nf{nf}_sigma{s}" in names
        for s in (0.1, 0.01):
            assert f"nonlinear_poisson_Nf32_sigma{s}" in names
        for s in (1.0, 0.1, 0.01):
            assert f"diffusion_2d_sigma{s}" in names

    def test_unknown_preset(self):
        with pytest.raises(eio.ConfigError, match="preset"):
            eio.load_config("preset:nope")

    def test_overrides(self):
        raw = eio.load_raw_config("preset:linear_poisson_Nf32_sigma0.1")
        eio.apply_overrides(
            raw, ["n_ens=7", "optimizer.max_iters=10", "counts.n_f=64"]
        )
        cfg = eio.validate_config(raw)
        assert cfg.n_ens == 7
        assert cfg.optimizer.max_iters == 10
        assert cfg.counts["n_f"] == 64

    def test_bad_override(self):
        with pytest.raises(eio.ConfigError, match="key=value"):
            eio.apply_overrides({}, ["oops"])

    def test_diffusion_defaults(self):
        cfg = eio.get_preset("diffusion_2d_sigma0.1")
        assert cfg.counts["n_y"] == 40 and cfg.counts["n_r"] == 500
        assert cfg.weights["r"] == 11221.0  # parameter count of the 4x60 net
        sig = eio.config_sigmas(cfg)
        np.testing.assert_allclose(sig["y"], 0.1)
        np.testing.assert_allclose(sig["r"], 0.1 * np.sqrt(500 / 40))


class TestDatasetFiles:
    def test_linear_round_trip(self, tmp_path):
        ds = LinearPoisson().make_dataset(16, 0.1, 3)
        path = tmp_path / "d.txt"
        eio.save_dataset(ds, path)
        back = eio.load_dataset(path)
        assert back.problem == ds.problem
        assert back.noise_sigma == ds.noise_sigma
        assert back.seed == ds.seed
        assert np.array_equal(back.y_obs.points, ds.y_obs.points)
        assert np.array_equal(back.y_obs.values, ds.y_obs.values)
        assert np.array_equal(back.u_obs.values, ds.u_obs.values)
        assert back.residual_points is None

    def test_diffusion_round_trip(self, tmp_path):
        p = Diffusion2D(nx=8, ny=4)
        y_field, h_field = p.make_reference(1)
        ds = p.make_dataset(
            0.1, 2, y_field, h_field, n_y=5, n_r=11, n_dbr=4, n_nbl=4, n_nbt=6,
            n_nbb=6,
        )
        path = tmp_path / "d.txt"
        eio.save_dataset(ds, path)
        back = eio.load_dataset(path)
        for name in ("y_obs", "u_obs", "dirichlet_obs", "neumann_obs"):
            a, b = getattr(ds, name), getattr(back, name)
            assert np.array_equal(a.points, b.points)
            assert np.array_equal(a.values, b.values)
        for name in ("residual_points", "neumann_top", "neumann_bottom"):
            assert np.array_equal(getattr(ds, name), getattr(back, name))

    def test_grid_field_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        f = GridField(6, 3, (1.0, 0.5), rng.normal(size=(6, 3)))
        path = tmp_path / "g.csv"
        f.save_csv(path)
        back = GridField.load_csv(path)
        assert back.nx == 6 and back.ny == 3
        assert back.extent == (1.0, 0.5)
        assert np.array_equal(back.values, f.values)


class TestEnsembleFiles:
    def _ensemble(self):
        prob = random_linear_gaussian(8, 3, 0.4, 1.0, seed=5)
        return rpinn_sample(
            prob, prob.sigmas(), 5, base_seed=11,
            opt_cfg=OptimizerConfig(learning_rate=0.2, max_iters=200),
        )

    def test_round_trip_bitwise(self, tmp_path):
        ens = self._ensemble()
        out = tmp_path / "ens"
        eio.save_ensemble(ens, out)
        back = eio.load_ensemble(out)
        assert np.array_equal(back.samples, ens.samples)
        assert back.method == ens.method
        assert back.sigmas == ens.sigmas
        assert [m.index for m in back.meta] == [m.index for m in ens.meta]
        assert back.info.get("wall_time_s") is not None

    def test_save_twice_identical_payloads_and_manifest(self, tmp_path):
        ens = self._ensemble()
        a, b = tmp_path / "a", tmp_path / "b"
        eio.save_ensemble(ens, a)
        eio.save_ensemble(ens, b)
        for fn in sorted(os.listdir(a)):
            if fn == "timings.json":
                continue
            assert (a / fn).read_bytes() == (b / fn).read_bytes()

    def test_count_mismatch(self, tmp_path):
        ens = self._ensemble()
        out = tmp_path / "ens"
        eio.save_ensemble(ens, out)
        os.remove(out / "sample_000002.pv")
        with pytest.raises(eio.CorruptEnsembleError, match="manifest"):
            eio.load_ensemble(out)

    def test_tampered_payload(self, tmp_path):
        ens = self._ensemble()
        out = tmp_path / "ens"
        eio.save_ensemble(ens, out)
        target = out / "sample_000001.pv"
        blob = bytearray(target.read_bytes())
        blob[-1] ^= 0xFF
        target.write_bytes(bytes(blob))
        with pytest.raises(eio.CorruptEnsembleError, match="checksum"):
            eio.load_ensemble(out)


class TestSummaryFiles:
    def test_empty_rows_header_only(self, tmp_path):
        path = tmp_path / "s.csv"
        eio.write_summary([], path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        assert lines[0].split(",") == eio.SUMMARY_COLUMNS

    def test_row_round_trip(self, tmp_path):
        row = SummaryRow("rpinn", "u", 0.0513, 0.0702, 0.0973, 742.3, 1.0, 416.2)
        path = tmp_path / "s.csv"
        eio.write_summary([row], path)
        back = eio.read_summary(path)[0]
        assert back.method == "rpinn" and back.field_name == "u"
        assert back.rl2 == row.rl2 and back.linf == row.linf
        assert back.lpp == row.lpp and back.coverage == row.coverage
        assert back.wall_time_s == row.wall_time_s

    def test_display_formatting(self, tmp_path):
        row = SummaryRow("de", "f", 0.0513, 0.12, 0.0047, -3580.0, 1.0, None)
        path = tmp_path / "s.csv"
        eio.write_summary([row], path)
        cells = path.read_text().splitlines()[1].split(",")
        assert cells[2] == "5.1e-02"  # two significant digits
        assert cells[6] == "100%"
        assert cells[7] == ""  # no wall time recorded
        assert float(cells[12]) == 1.0  # raw coverage column
