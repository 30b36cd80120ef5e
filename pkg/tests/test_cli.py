import argparse
import csv

import pytest

from genkv.cli import UsageError, build_parser, main, parse_number_list, read_config, resolve, \
    COMMAND_OPTIONS
from genkv.episodes import import_bank


@pytest.fixture(scope="module")
def bank_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("bank") / "bank.csv"
    assert main(["gen-bank", "--d", "32", "--classes", "30", "--samples", "12",
                 "--seed", "2", "--out", str(path)]) == 0
    return path


def _resolved(argv):
    args = build_parser().parse_args(argv)
    return resolve(f"sweep-{args.kind}" if args.command == "sweep" else args.command, args)


class TestRanges:
    def test_inclusive_range(self):
        assert parse_number_list("-20:2:20") == [float(x) for x in range(-20, 21, 2)]
        assert parse_number_list("0:0.1:2.0")[-1] == 2.0
        assert len(parse_number_list("0:0.1:2.0")) == 21

    def test_mixed(self):
        assert parse_number_list("50,100:50:200", int) == [50, 100, 150, 200]

    @pytest.mark.parametrize("bad", ["", "1:2", "a", "3:1:1", "1:0:5"])
    def test_bad(self, bad):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_number_list(bad)


class TestGenBank:
    def test_full_size_bank_shape(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        assert main(["gen-bank", "--d", "512", "--classes", "659", "--samples", "20",
                     "--out", str(out)]) == 0
        bank = import_bank(out)
        assert (bank.num_classes, bank.min_class_size(), bank.d) == (659, 20, 512)
        assert "classes=659" in capsys.readouterr().out

    def test_zero_spread_warns(self, tmp_path, caplog):
        assert main(["gen-bank", "--d", "8", "--classes", "3", "--samples", "2",
                     "--spread", "0", "--out", str(tmp_path / "b.csv")]) == 0
        assert "spread is 0" in caplog.text

    def test_missing_out(self):
        assert main(["gen-bank", "--d", "8"]) == 2

    def test_unwritable(self, tmp_path):
        assert main(["gen-bank", "--d", "8", "--classes", "2", "--samples", "1",
                     "--out", str(tmp_path / "missing" / "b.csv")]) == 1

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["gen-bank", "--d", "eight", "--out", "x.csv"])
        assert exc.value.code == 2


class TestConfig:
    def test_three_layer_precedence(self, tmp_path, monkeypatch):
        monkeypatch.delenv("GKV_SEED", raising=False)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# fig-3 style run\nm = 10\nn = 3\nprecision = binary\n")
        s = _resolved(["sweep", "pcm", "--config", str(cfg), "--n", "4", "--out", "o.csv"])
        assert s["n"] == [4]             # flag over config
        assert s["m"] == [10]            # config over default
        assert s["precision"] == "binary"
        assert s["episodes"] == 1000     # built-in default
        assert s["r"] == [50, 100, 150, 200]

    def test_env_seed_below_config_and_flag(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GKV_SEED", "17")
        assert _resolved(["sweep", "r", "--out", "o.csv"])["seed"] == 17
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed = 5\n")
        assert _resolved(["sweep", "r", "--config", str(cfg), "--out", "o.csv"])["seed"] == 5
        assert _resolved(["sweep", "r", "--config", str(cfg), "--seed", "9",
                          "--out", "o.csv"])["seed"] == 9

    def test_out_from_config(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("out = from_config.csv\n")
        assert _resolved(["iso-r", "--config", str(cfg)])["out"] == "from_config.csv"

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("m = 5\nvariation = 0.5\n")
        with pytest.raises(UsageError, match=r"c.cfg:2: unknown key 'variation'"):
            read_config(cfg, COMMAND_OPTIONS["sweep-r"])

    def test_bad_value_and_syntax(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("episodes = many\n")
        with pytest.raises(UsageError, match="c.cfg:1"):
            read_config(cfg, COMMAND_OPTIONS["sweep-r"])
        cfg.write_text("\nepisodes 10\n")
        with pytest.raises(UsageError, match="c.cfg:2"):
            read_config(cfg, COMMAND_OPTIONS["sweep-r"])

    def test_config_errors_exit_2(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("colour = red\n")
        assert main(["sweep", "r", "--config", str(cfg), "--out", "o.csv"]) == 2
        assert main(["sweep", "r", "--config", str(tmp_path / "nope"), "--out", "o.csv"]) == 2


class TestRuns:
    def test_sweep_byte_identical(self, bank_path, tmp_path):
        argv = ["sweep", "snr", "--bank", str(bank_path), "--m", "5", "--n", "2",
                "--snr", "-10:10:10", "--r", "5,20", "--episodes", "6"]
        assert main(argv + ["--out", str(tmp_path / "a.csv")]) == 0
        assert main(argv + ["--out", str(tmp_path / "b.csv"), "--workers", "2"]) == 0
        a = (tmp_path / "a.csv").read_bytes()
        assert a == (tmp_path / "b.csv").read_bytes()
        rows = list(csv.DictReader(a.decode().splitlines()))
        assert len(rows) == 9 and {r["series"] for r in rows} == {"local", "r=5", "r=20"}

    def test_sweep_r_json(self, bank_path, tmp_path):
        out = tmp_path / "r.json"
        assert main(["sweep", "r", "--bank", str(bank_path), "--m", "5", "--n", "2",
                     "--r", "1:1:3", "--episodes", "3", "--no-local", "--out", str(out)]) == 0
        assert '"axis_name": "r"' in out.read_text()

    def test_pcm_real_is_runtime_error(self, bank_path, tmp_path):
        assert main(["sweep", "pcm", "--bank", str(bank_path), "--m", "5", "--n", "2",
                     "--episodes", "2", "--out", str(tmp_path / "p.csv")]) == 1

    def test_iso_r_unreached(self, bank_path, tmp_path):
        out = tmp_path / "iso.csv"
        assert main(["iso-r", "--bank", str(bank_path), "--m", "8", "--n", "3",
                     "--precision", "bipolar", "--variation", "2.0", "--r-max", "2",
                     "--episodes", "4", "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.read_text().splitlines()))
        assert rows[0]["r"] == "unreached"

    def test_iso_r_scaling_n(self, bank_path, tmp_path):
        out = tmp_path / "iso.csv"
        assert main(["iso-r", "--bank", str(bank_path), "--scaling", "n", "--m", "4",
                     "--n", "2,4,6", "--precision", "binary", "--variation", "0.5",
                     "--r-max", "64", "--episodes", "3", "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.read_text().splitlines()))
        assert [int(r["n"]) for r in rows] == [2, 4, 6]

    def test_list_where_single_expected(self, bank_path, tmp_path):
        assert main(["iso-r", "--bank", str(bank_path), "--m", "4,5", "--precision", "binary",
                     "--out", str(tmp_path / "x.csv")]) == 2
