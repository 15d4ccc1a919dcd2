import json
import os

import pytest
import pandas as pd

from stokes_biot.cli import (
    SUBCOMMAND_ALIASES,
    ConfigError,
    RunConfig,
    build_parser,
    emit_table,
    main,
    parse_config,
    table_scenarios,
)
from stokes_biot.metrics import ErrorTable

from test_utils import *  # noqa: F401; pylint: disable=unused-variable


def test_defaults():
    config = parse_config("converge")
    assert config.pairing == ["p2-rt0-dg0"]
    assert config.h == [8, 16, 32, 64]
    assert config.formats == ["csv", "markdown"]
    assert config.jobs == 1
    assert config.flux_boundary == "clamped"
    assert config.study("p2-p1-dg0").flux_boundary == "clamped"


def test_flags():
    config = parse_config(
        "converge",
        overrides={
            "pairing": "p2-rt0-dg0",
            "kappa": "1e-8",
            "c0": "0",
            "h": "1/8,16,0.03125",
            "jobs": None,
        },
    )
    assert config.kappa == [1e-8]
    assert config.h == [8, 16, 32]

    spec = config.study("p2-rt0-dg0")
    assert spec.kappas == [1e-8]
    assert spec.c0s == [0.0]
    assert spec.levels == [8, 16, 32]
    assert spec.norms == ["displacement", "pressure", "flux"]


def test_file_and_overrides(tmp_path):
    path = str(tmp_path / "run.cfg")
    with open(path, "w") as file:
        file.write("# study\nkappa = 1, 1e-4\nc0=1  # fixed storage\n\ntau=0.5\n")
    config = parse_config("converge", path)
    assert config.kappa == [1.0, 1e-4]
    assert config.c0 == [1.0]
    assert config.tau == 0.5

    overridden = parse_config("converge", path, {"kappa": "1e-12"})
    assert overridden.kappa == [1e-12]
    assert overridden.c0 == [1.0]


def test_config_text_roundtrip(tmp_path):
    config = parse_config(
        "diagnose", overrides={"kappa": "1,1e-8", "deep": "true", "levels": "2,4"}
    )
    path = str(tmp_path / "config.txt")
    with open(path, "w") as file:
        file.write(config.to_config_text())
    assert parse_config("diagnose", path) == config


def test_config_errors(tmp_path):
    for overrides, key in [
        ({"kappa": "-1"}, "kappa"),
        ({"kappa": "abc"}, "kappa"),
        ({"c0": "2"}, "c0"),
        ({"h": "16,8"}, "h"),
        ({"h": "1/3.5"}, "h"),
        ({"pairing": "p1-p1-dg0"}, "pairing"),
        ({"norms": "velocity"}, "norms"),
        ({"tau": "0.3"}, "tau"),
        ({"mu": "0"}, "mu"),
        ({"samples": "10"}, "samples"),
        ({"flux_boundary": "free"}, "flux_boundary"),
        ({"colour": "red"}, "colour"),
    ]:
        with pytest.raises(ConfigError) as error:
            parse_config("converge", overrides=overrides)
        assert error.value.key == key

    path = str(tmp_path / "broken.cfg")
    with open(path, "w") as file:
        file.write("kappa\n")
    with pytest.raises(ConfigError):
        parse_config("converge", path)


def test_table_scenarios():
    scenarios = table_scenarios(RunConfig(subcommand="reproduce-paper"))
    assert len(scenarios) == 8
    assert scenarios["p2-p1-dg0_fixed_storage"].c0s == [1.0]
    assert scenarios["p2-rt0-dg0_vanishing_conductivity"].c0s == [
        1.0,
        1e-4,
        1e-8,
        1e-12,
    ]
    assert scenarios["p2-rt0-dg0_hdiv_flux"].norms[-1] == "flux_div"
    hdiv = scenarios["p2-p1-dg0_hdiv_flux"]
    assert hdiv.norms == ["displacement", "pressure", "flux_div"]
    assert hdiv.kappas == [1.0, 1e-4, 1e-8]
    assert hdiv.flux_boundary == "clamped"

    deep = table_scenarios(RunConfig(subcommand="reproduce-paper", deep=True))
    assert deep["p2-rt0-dg0_vanishing_storage"].levels[-1] == 128


def test_subcommand_names():
    parser = build_parser()
    for name in ("reproduce-paper", "reproduce-tables"):
        args = parser.parse_args([name, "--deep"])
        assert SUBCOMMAND_ALIASES.get(args.subcommand, args.subcommand) == (
            "reproduce-paper"
        )
        assert args.deep == "true"
    with pytest.raises(ConfigError):
        RunConfig(subcommand="reproduce-tables")


def test_emit_table(tmp_path):
    table = ErrorTable("p2-rt0-dg0", [8, 16])
    table.record("pressure", 1.0, 0.0, 8, 2.84e-3)
    table.record("pressure", 1.0, 0.0, 16, 7.11e-4)
    paths = emit_table(table, ["csv", "markdown"], str(tmp_path), "converge")
    assert [os.path.basename(path) for path in paths] == [
        "converge.csv",
        "converge.md",
    ]
    assert emit_table(table, ["markdown"], str(tmp_path), "only")[0].endswith(
        "only.md"
    )


def test_main_verify(tmp_path):
    output_dir = str(tmp_path / "verify")
    assert main(["verify", "--samples", "100", "--output_dir", output_dir]) == 0
    with open(os.path.join(output_dir, "verify.json")) as file:
        report = json.load(file)
    assert report["samples"] == 100
    assert os.path.exists(os.path.join(output_dir, "config.txt"))
    assert os.path.exists(os.path.join(output_dir, "verify.log"))


def test_main_converge(tmp_path):
    output_dir = str(tmp_path / "converge")
    status = main(
        ["converge", "--h", "2,4", "--kappa", "1,1e-4", "--output_dir", output_dir]
    )
    assert status == 0
    frame = pd.read_csv(
        os.path.join(output_dir, "converge_p2-rt0-dg0.csv"),
        dtype=str,
        keep_default_na=False,
    )
    assert list(frame.columns) == ["quantity", "kappa", "c0", "1/2", "1/4", "rate"]
    assert len(frame) == 6
    assert os.path.exists(os.path.join(output_dir, "converge_p2-rt0-dg0.md"))


def test_main_usage_errors(tmp_path):
    assert main(["converge", "--kappa", "-1", "--output_dir", str(tmp_path)]) == 1

    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["verify", "--output_dir", str(blocker / "out")]) == 1

    with pytest.raises(SystemExit) as error:
        main(["converge", "--colour", "red"])
    assert error.value.code == 1
    with pytest.raises(SystemExit) as error:
        main([])
    assert error.value.code == 1


def test_main_diagnose_over_storage(tmp_path):
    output_dir = str(tmp_path / "diagnose")
    status = main(
        [
            "diagnose",
            "--pairing",
            "p2-rt0-dg0",
            "--levels",
            "2",
            "--kappa",
            "1e-4",
            "--c0",
            "0,1e-6,1",
            "--output_dir",
            output_dir,
        ]
    )
    assert status == 0
    frame = pd.read_csv(os.path.join(output_dir, "diagnose.csv"), dtype=str)
    assert list(frame["c0"]) == ["0", "1e-06", "1"]
    assert list(frame["kappa"]) == ["0.0001"] * 3
