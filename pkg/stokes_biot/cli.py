from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Union

from .assemble import FLUX_BOUNDARIES, PAIRINGS
from .diagnostics import DiagnosticReport, run_diagnostics
from .driver import INITIALIZATIONS, REFERENCES, StudySpec, run_study
from .linsolve import EigenSolverError, SolverError
from .metrics import QUANTITIES, ErrorTable
from .problem import ManufacturedProblem, ProblemParams, verify_manufactured
from .utils import prepare_output_dir, set_up_logging

SUBCOMMANDS = ("converge", "diagnose", "verify", "reproduce-paper")
SUBCOMMAND_ALIASES = {"reproduce-tables": "reproduce-paper"}
FORMATS = ("csv", "markdown")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

TABLE_KAPPAS = [1.0, 1e-4, 1e-8, 1e-12]
TABLE_LEVELS = [8, 16, 32, 64]


class ConfigError(ValueError):
    def __init__(self, message: str, key: str):
        super().__init__(message)
        self.key = key


###########################################
# Configuration
###########################################


@dataclass
class RunConfig:
    """
        Validated settings of one program run.

        Every field maps to a key of the flat key=value configuration format,
        lists are comma separated and h lists the subdivisions n_div = 1 / h.
    """

    subcommand: str = "converge"
    pairing: List[str] = field(default_factory=lambda: ["p2-rt0-dg0"])
    kappa: List[float] = field(default_factory=lambda: [1.0])
    c0: List[float] = field(default_factory=lambda: [0.0])
    h: List[int] = field(default_factory=lambda: list(TABLE_LEVELS))
    tau: float = 1.0
    T: float = 1.0
    mu: float = 1.0
    lmbda: float = 1.0
    shear_factor: float = 2.0
    norms: List[str] = field(
        default_factory=lambda: ["displacement", "pressure", "flux"]
    )
    output_dir: str = "output"
    formats: List[str] = field(default_factory=lambda: list(FORMATS))
    jobs: int = 1
    deep: bool = False
    samples: int = 1000
    levels: List[int] = field(default_factory=lambda: [4, 8, 16])
    initialization: str = "interpolate"
    reference: str = "interpolant"
    flux_boundary: str = "clamped"

    def __post_init__(self) -> None:
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"Invalid subcommand {self.subcommand}", "subcommand")
        for pairing in self.pairing:
            _check_choice("pairing", pairing, PAIRINGS)
        for kappa in self.kappa:
            if not 0 < kappa <= 1:
                raise ConfigError(f"kappa must lie in (0, 1], got {kappa}", "kappa")
        for c0 in self.c0:
            if not 0 <= c0 <= 1:
                raise ConfigError(f"c0 must lie in [0, 1], got {c0}", "c0")
        _check_levels("h", self.h)
        _check_levels("levels", self.levels)
        for quantity in self.norms:
            _check_choice("norms", quantity, QUANTITIES)
        for name in self.formats:
            _check_choice("formats", name, FORMATS)
        _check_choice("initialization", self.initialization, INITIALIZATIONS)
        _check_choice("reference", self.reference, REFERENCES)
        _check_choice("flux_boundary", self.flux_boundary, FLUX_BOUNDARIES)
        if self.jobs < 1:
            raise ConfigError(f"jobs must be at least 1, got {self.jobs}", "jobs")
        if self.samples < 100:
            raise ConfigError(
                f"samples must be at least 100, got {self.samples}", "samples"
            )
        try:
            self.params()
        except ValueError as error:
            # Messages start with the name of the offending parameter.
            raise ConfigError(str(error), str(error).split()[0]) from error

    def params(self, kappa: float = 1.0, c0: float = 0.0) -> ProblemParams:
        return ProblemParams(
            kappa=kappa,
            c0=c0,
            tau=self.tau,
            T=self.T,
            mu=self.mu,
            lmbda=self.lmbda,
            shear_factor=self.shear_factor,
        )

    def study(
        self,
        pairing: str,
        kappas: Optional[Sequence[float]] = None,
        c0s: Optional[Sequence[float]] = None,
        levels: Optional[Sequence[int]] = None,
        norms: Optional[Sequence[str]] = None,
    ) -> StudySpec:
        return StudySpec(
            pairing=pairing,
            kappas=list(self.kappa if kappas is None else kappas),
            c0s=list(self.c0 if c0s is None else c0s),
            levels=list(self.h if levels is None else levels),
            tau=self.tau,
            T=self.T,
            mu=self.mu,
            lmbda=self.lmbda,
            shear_factor=self.shear_factor,
            norms=list(self.norms if norms is None else norms),
            initialization=self.initialization,
            reference=self.reference,
            flux_boundary=self.flux_boundary,
            jobs=self.jobs,
        )

    def to_config_text(self) -> str:
        lines = []
        for config_field in fields(self):
            if config_field.name == "subcommand":
                continue
            value = getattr(self, config_field.name)
            if isinstance(value, list):
                text = ",".join(_format_scalar(v) for v in value)
            else:
                text = _format_scalar(value)
            lines.append(f"{config_field.name}={text}")
        return "\n".join(lines) + "\n"


def _format_scalar(value: Union[str, int, float, bool]) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _check_choice(key: str, value: str, choices: Sequence[str]) -> None:
    if value not in choices:
        raise ConfigError(
            f"Invalid {key} {value}, expected one of {sorted(choices)}", key
        )


def _check_levels(key: str, levels: List[int]) -> None:
    if len(levels) == 0:
        raise ConfigError(f"{key} needs at least one value", key)
    for n_div in levels:
        if n_div < 1:
            raise ConfigError(f"Invalid {key} value 1/{n_div}", key)
    for coarse, fine in zip(levels, levels[1:]):
        if fine <= coarse:
            raise ConfigError(f"{key} must refine monotonically, got {levels}", key)


def _parse_float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"Cannot parse {text!r} as a number for {key}", key)


def _parse_int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"Cannot parse {text!r} as an integer for {key}", key)


def _parse_level(key: str, text: str) -> int:
    """Mesh sizes are given as n_div (8) or as h (1/8, 0.125)."""
    try:
        value = Fraction(text.strip())
    except ValueError:
        raise ConfigError(f"Cannot parse {text!r} as a mesh size for {key}", key)
    if value <= 0:
        raise ConfigError(f"Invalid {key} value {text}", key)
    if value < 1:
        value = 1 / value
    if value.denominator != 1:
        raise ConfigError(f"{key} value {text} is not 1 / n for an integer n", key)
    return int(value)


def _parse_bool(key: str, text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"Cannot parse {text!r} as a boolean for {key}", key)


def _list_of(parse: Callable[[str, str], object]) -> Callable[[str, str], list]:
    def parse_list(key: str, text: str) -> list:
        items = [item.strip() for item in text.split(",") if item.strip()]
        return [parse(key, item) for item in items]

    return parse_list


def _text(key: str, text: str) -> str:
    return text.strip()


PARSERS: Dict[str, Callable[[str, str], object]] = {
    "pairing": _list_of(_text),
    "kappa": _list_of(_parse_float),
    "c0": _list_of(_parse_float),
    "h": _list_of(_parse_level),
    "tau": _parse_float,
    "T": _parse_float,
    "mu": _parse_float,
    "lmbda": _parse_float,
    "shear_factor": _parse_float,
    "norms": _list_of(_text),
    "output_dir": _text,
    "formats": _list_of(_text),
    "jobs": _parse_int,
    "deep": _parse_bool,
    "samples": _parse_int,
    "levels": _list_of(_parse_level),
    "initialization": _text,
    "reference": _text,
    "flux_boundary": _text,
}


def read_config(config_file: str) -> Dict[str, str]:
    """Read a flat key=value file. Blank lines and # comments are skipped."""
    config = {}
    with open(config_file, "r") as file:
        for line in file:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"Expected key=value, got {line!r}", line)
            key, value = line.split("=", 1)
            config[key.strip()] = value.strip()
    return config


def parse_config(
    subcommand: str,
    config_file: Optional[str] = None,
    overrides: Optional[Dict[str, str]] = None,
) -> RunConfig:
    """Build a :class:`RunConfig` from defaults, a config file and flags.

    Args:
        subcommand (str): converge, diagnose, verify or reproduce-paper.
        config_file (str): Optional key=value file.
        overrides (dict): Raw flag values, taking precedence over the file.

    Returns:
        The validated :class:`RunConfig`. Raises :class:`ConfigError` naming
        the offending key.
    """
    raw: Dict[str, str] = {}
    if config_file is not None:
        raw.update(read_config(config_file))
    if overrides is not None:
        raw.update({k: v for k, v in overrides.items() if v is not None})

    values = {}
    for key, text in raw.items():
        if key not in PARSERS:
            raise ConfigError(f"Unknown configuration key {key}", key)
        values[key] = PARSERS[key](key, text)
    return RunConfig(subcommand=subcommand, **values)


###########################################
# Output
###########################################


def emit_table(
    table: Union[ErrorTable, DiagnosticReport],
    formats: Sequence[str],
    output_dir: str,
    name: str,
) -> List[str]:
    """Write a table as CSV and/or Markdown and return the written paths."""
    paths = []
    if "csv" in formats:
        path = os.path.join(output_dir, f"{name}.csv")
        table.to_csv(path)
        paths.append(path)
    if "markdown" in formats:
        path = os.path.join(output_dir, f"{name}.md")
        with open(path, "w") as file:
            file.write(table.to_markdown())
        paths.append(path)
    for path in paths:
        logging.info("Wrote %s", path)
    return paths


def _has_failures(table: ErrorTable) -> bool:
    return any(value is None for row in table.rows.values() for value in row)


###########################################
# Programs
###########################################


def converge(config: RunConfig) -> int:
    status = EXIT_OK
    for pairing in config.pairing:
        table = run_study(config.study(pairing))
        emit_table(table, config.formats, config.output_dir, f"converge_{pairing}")
        if _has_failures(table):
            status = EXIT_NUMERICAL
    return status


def diagnose(config: RunConfig) -> int:
    report = run_diagnostics(
        config.pairing,
        config.levels,
        config.kappa,
        c0s=config.c0,
        tau=config.tau,
        flux_boundary=config.flux_boundary,
    )
    emit_table(report, config.formats, config.output_dir, "diagnose")
    return EXIT_OK


def verify(config: RunConfig) -> int:
    problem = ManufacturedProblem(config.params(config.kappa[0], config.c0[0]))
    report = verify_manufactured(
        problem, samples=config.samples, raise_on_failure=False
    )
    path = os.path.join(config.output_dir, "verify.json")
    with open(path, "w") as file:
        json.dump(report.to_dict(), file, indent=2)
    logging.info(
        "Manufactured solution residual %.3e, passed %s",
        report.max_residual,
        report.passed,
    )
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def table_scenarios(config: RunConfig) -> Dict[str, StudySpec]:
    """The canned studies of the published tables, keyed by output name."""
    levels = TABLE_LEVELS + ([128] if config.deep else [])
    scenarios = {}
    for pairing in PAIRINGS:
        scenarios[f"{pairing}_vanishing_storage"] = config.study(
            pairing, kappas=TABLE_KAPPAS, c0s=[0.0], levels=levels
        )
        scenarios[f"{pairing}_fixed_storage"] = config.study(
            pairing, kappas=TABLE_KAPPAS, c0s=[1.0], levels=levels
        )
        scenarios[f"{pairing}_vanishing_conductivity"] = config.study(
            pairing, kappas=[1.0], c0s=TABLE_KAPPAS, levels=levels
        )
    for pairing in PAIRINGS:
        scenarios[f"{pairing}_hdiv_flux"] = config.study(
            pairing,
            kappas=TABLE_KAPPAS[:3],
            c0s=[0.0],
            levels=levels,
            norms=["displacement", "pressure", "flux_div"],
        )
    return scenarios


def reproduce_tables(config: RunConfig) -> int:
    status = EXIT_OK
    for name, spec in table_scenarios(config).items():
        logging.info("Scenario %s", name)
        table = run_study(spec)
        emit_table(table, config.formats, config.output_dir, name)
        if _has_failures(table):
            status = EXIT_NUMERICAL
    return status


PROGRAMS: Dict[str, Callable[[RunConfig], int]] = {
    "converge": converge,
    "diagnose": diagnose,
    "verify": verify,
    "reproduce-paper": reproduce_tables,
}


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", type=str, default=None, help="A key=value configuration file"
    )
    for key, help_text in [
        ("pairing", "Comma separated pairings (p2-rt0-dg0, p2-p1-dg0)"),
        ("kappa", "Comma separated hydraulic conductivities"),
        ("c0", "Comma separated storage coefficients"),
        ("h", "Comma separated mesh sizes, as n_div or 1/n_div"),
        ("tau", "Time step"),
        ("T", "Final time"),
        ("mu", "Lame parameter mu"),
        ("lmbda", "Lame parameter lambda"),
        ("shear_factor", "Stress is shear_factor * mu * eps + lmbda tr(eps) I"),
        ("norms", "Reported quantities: displacement, pressure, flux, flux_div"),
        ("output_dir", "Directory for tables and logs (default output)"),
        ("formats", "Output formats: csv, markdown"),
        ("jobs", "Number of study cells run concurrently"),
        ("samples", "Number of random samples for verify"),
        ("levels", "Mesh levels of diagnose, as n_div"),
        ("initialization", "interpolate or consistent"),
        ("reference", "interpolant or analytic"),
        ("flux_boundary", "clamped (z = 0) or normal (z.n = 0) on the boundary"),
    ]:
        parser.add_argument(f"--{key}", type=str, default=None, help=help_text)
    parser.add_argument(
        "--deep",
        action="store_const",
        const="true",
        default=None,
        help="Include h = 1/128 in reproduce-paper",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="stokes_biot",
        description="Mixed finite element solver and stability diagnostics "
        "for the three-field Biot equations",
    )
    subparsers = parser.add_subparsers(dest="subcommand")
    subparsers.required = True
    for subcommand, description in [
        ("converge", "Run a convergence study"),
        ("diagnose", "Compute containment and inf-sup diagnostics"),
        ("verify", "Check the manufactured solution data"),
        ("reproduce-paper", "Run the canned studies of the published tables"),
    ]:
        aliases = [
            alias
            for alias, target in SUBCOMMAND_ALIASES.items()
            if target == subcommand
        ]
        _add_flags(
            subparsers.add_parser(
                subcommand, aliases=aliases, description=description
            )
        )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    subcommand = SUBCOMMAND_ALIASES.get(args.subcommand, args.subcommand)
    overrides = {
        key: value
        for key, value in vars(args).items()
        if key not in ("subcommand", "config")
    }

    try:
        config = parse_config(subcommand, args.config, overrides)
        prepare_output_dir(config.output_dir)
    except ConfigError as error:
        print(f"Configuration error for {error.key}: {error}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as error:
        print(f"Output error: {error}", file=sys.stderr)
        return EXIT_USAGE

    set_up_logging(os.path.join(config.output_dir, f"{config.subcommand}.log"))
    logging.info("Args: %s", str(args))
    with open(os.path.join(config.output_dir, "config.txt"), "w") as file:
        file.write(config.to_config_text())

    try:
        return PROGRAMS[config.subcommand](config)
    except (SolverError, EigenSolverError) as error:
        print(f"Numerical failure: {error}", file=sys.stderr)
        logging.info("Numerical failure: %s", error)
        return EXIT_NUMERICAL
    except ValueError as error:
        print(f"Invalid setting: {error}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as error:
        print(f"Output error: {error}", file=sys.stderr)
        return EXIT_USAGE


def run() -> None:
    sys.exit(main())


def _program(subcommand: str) -> Callable[[], None]:
    def program() -> None:
        sys.exit(main([subcommand] + sys.argv[1:]))

    return program


converge_program = _program("converge")
diagnose_program = _program("diagnose")
verify_program = _program("verify")
reproduce_paper_program = _program("reproduce-paper")
