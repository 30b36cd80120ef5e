"""Command-line driver: ``genkv gen-bank``, ``genkv sweep {r,snr,pcm}``, ``genkv iso-r``.

Settings come from three layers, highest first: command-line flags, a flat
``key = value`` config file given with ``--config``, built-in defaults. The
``GKV_SEED`` environment variable replaces the built-in master seed.

Exit codes: 0 success, 1 runtime error, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Callable

from .episodes import (DEFAULT_QUERIES_PER_CLASS, DEFAULT_SPREAD_TAIL, DEFAULT_WITHIN_CLASS_SD,
                       GeneratorParams, PrototypeMode, export_bank, generate_bank, import_bank,
                       mean_between_class_cosine)
from .errors import GenKVError
from .harness import (DEFAULT_SNR_R_VALUES, ExperimentSpec, iso_rows_to_csv, scaling_study,
                      sweep_pcm, sweep_r, sweep_snr)
from .local import Precision
from .noise import NoiseSpec, PcmParams

log = logging.getLogger("genkv")

SEED_ENV = "GKV_SEED"


class UsageError(Exception):
    """Bad flags or config contents; maps to exit code 2."""


def parse_number_list(text: str, kind: Callable = float) -> list:
    """Parse ``"a,b,c"``, ``"a:step:b"`` (inclusive) or a mix of both.

    >>> parse_number_list("0:0.5:2")
    [0.0, 0.5, 1.0, 1.5, 2.0]
    >>> parse_number_list("2,4:2:8", int)
    [2, 4, 6, 8]
    """
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            raise argparse.ArgumentTypeError(f"empty entry in {text!r}")
        try:
            if ":" in part:
                fields = part.split(":")
                if len(fields) != 3:
                    raise ValueError
                start, step, stop = (kind(f) for f in fields)
                if step <= 0 or stop < start:
                    raise ValueError
                count = int(round((stop - start) / step)) + 1
                values = [start + i * step for i in range(count)]
                if kind is float:
                    values = [round(v, 12) for v in values]
                out.extend(values)
            else:
                out.append(kind(part))
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"{part!r} is not a {kind.__name__} or a start:step:stop range") from None
    return out


def _int_list(text):
    return parse_number_list(text, int)


def _float_list(text):
    return parse_number_list(text, float)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"{text!r} is not a boolean")


def _choice(*allowed: str) -> Callable[[str], str]:
    def convert(text: str) -> str:
        if text not in allowed:
            raise argparse.ArgumentTypeError(f"{text!r} is not one of {', '.join(allowed)}")
        return text
    convert.__name__ = "choice"
    return convert


@dataclass(frozen=True)
class Option:
    key: str
    convert: Callable[[str], Any]
    default: Any
    help: str


BANK_OPTIONS = (
    Option("d", int, 512, "embedding dimension"),
    Option("classes", int, 659, "number of classes"),
    Option("samples", int, 20, "samples per class"),
    Option("spread", float, DEFAULT_WITHIN_CLASS_SD, "within-class noise SD"),
    Option("tail", float, DEFAULT_SPREAD_TAIL, "log-normal SD of the per-sample spread"),
    Option("proto_mode", _choice(*(m.value for m in PrototypeMode)), "gaussian",
           "prototype distribution"),
    Option("seed", int, 0, "generator seed"),
    Option("out", str, None, "output CSV path (required)"),
)

COMMON_OPTIONS = (
    Option("m", _int_list, [20], "number of classes per episode"),
    Option("n", _int_list, [5], "shots per class"),
    Option("precision", _choice(*(p.value for p in Precision)), "real", "memory precision"),
    Option("codebook", _choice("auto", "orthogonal", "whitened", "walsh", "gaussian"), "auto",
           "label codebook construction"),
    Option("episodes", int, None, "episodes per evaluation point"),
    Option("queries", int, None, "queries per class (default 15, lowered to fit the bank)"),
    Option("seed", int, 0, "master seed (default from GKV_SEED, else 0)"),
    Option("noise_seed", int, 0, "extra seed mixed into the noise streams"),
    Option("workers", int, 1, "worker processes"),
    Option("bank", str, None, "embedding bank CSV (default: synthetic 659x20 bank, d=512)"),
    Option("out", str, None, "output path, .csv or .json (required)"),
    Option("local", _bool, True, "include the original local memory"),
    Option("pcm_t", float, PcmParams.t, "PCM read time after programming (s)"),
    Option("pcm_g0", float, PcmParams.g0, "PCM nominal set conductance at t=1 s (S)"),
    Option("pcm_nu", float, PcmParams.nu, "PCM drift exponent"),
    Option("pcm_read_sd", float, PcmParams.g_read_sd, "PCM read-noise SD (S)"),
    Option("pcm_nu_sd", float, PcmParams.nu_rel_sd, "PCM relative SD of the drift exponent"),
)

COMMAND_OPTIONS = {
    "gen-bank": BANK_OPTIONS,
    "sweep-r": COMMON_OPTIONS + (
        Option("r", _int_list, [1, 2, 5, 10, 20, 50, 100], "r values"),),
    "sweep-snr": COMMON_OPTIONS + (
        Option("r", _int_list, list(DEFAULT_SNR_R_VALUES), "r values"),
        Option("snr", _float_list, parse_number_list("-20:2:20"), "SNR values in dB"),),
    "sweep-pcm": COMMON_OPTIONS + (
        Option("r", _int_list, [50, 100, 150, 200], "r values"),
        Option("variation", _float_list, parse_number_list("0:0.2:2"),
               "relative programming-noise SD values"),),
    "iso-r": COMMON_OPTIONS + (
        Option("variation", _float_list, parse_number_list("0:0.1:2"),
               "relative programming-noise SD values"),
        Option("r_max", int, 4096, "largest r tried"),
        Option("scaling", _choice("none", "n", "m"), "none",
               "vary n (at one m) or m (at one n) and report iso-r per problem size"),),
}

DEFAULT_EPISODES = {"sweep-r": 1000, "sweep-snr": 100, "sweep-pcm": 1000, "iso-r": 1000}


def read_config(path: str | Path, options: tuple[Option, ...]) -> dict[str, Any]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    known = {opt.key: opt for opt in options}
    values: dict[str, Any] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise UsageError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = known[key].convert(value)
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, environment, config file and flags (flags win)."""
    options = COMMAND_OPTIONS[command]
    settings = {opt.key: opt.default for opt in options}
    if command in DEFAULT_EPISODES:
        settings["episodes"] = DEFAULT_EPISODES[command]
        env_seed = os.environ.get(SEED_ENV)
        if env_seed is not None:
            try:
                settings["seed"] = int(env_seed)
            except ValueError:
                raise UsageError(f"{SEED_ENV}={env_seed!r} is not an integer") from None
    if args.config:
        settings.update(read_config(args.config, options))
    for opt in options:
        value = getattr(args, opt.key)
        if value is not None:
            settings[opt.key] = value
    if not settings.get("out"):
        raise UsageError("--out is required (on the command line or in the config file)")
    return settings


def _add_options(parser: argparse.ArgumentParser, options: tuple[Option, ...]) -> None:
    parser.add_argument("--config", help="flat key = value settings file")
    for opt in options:
        flag = "--" + opt.key.replace("_", "-")
        if opt.convert is _bool:
            parser.add_argument(flag, dest=opt.key, action=argparse.BooleanOptionalAction,
                                default=None, help=opt.help)
        else:
            parser.add_argument(flag, dest=opt.key, type=opt.convert, default=None,
                                help=opt.help)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genkv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add_options(sub.add_parser("gen-bank", help="write a synthetic embedding bank"),
                 BANK_OPTIONS)
    sweep = sub.add_parser("sweep", help="accuracy sweeps over r, SNR or PCM variation")
    kinds = sweep.add_subparsers(dest="kind", required=True)
    for kind in ("r", "snr", "pcm"):
        _add_options(kinds.add_parser(kind), COMMAND_OPTIONS[f"sweep-{kind}"])
    _add_options(sub.add_parser("iso-r", help="minimal r matching the noise-free baseline"),
                 COMMAND_OPTIONS["iso-r"])
    return parser


def _single(settings: dict, key: str) -> int:
    values = settings[key]
    if len(values) != 1:
        raise UsageError(f"--{key} takes a single value here, got {values}")
    return values[0]


def _template(settings: dict, bank, max_n: int) -> ExperimentSpec:
    queries = settings["queries"]
    if queries is None:
        queries = max(1, min(DEFAULT_QUERIES_PER_CLASS, bank.min_class_size() - max_n))
    pcm = PcmParams(t=settings["pcm_t"], g0=settings["pcm_g0"], nu=settings["pcm_nu"],
                    g_read_sd=settings["pcm_read_sd"], nu_rel_sd=settings["pcm_nu_sd"])
    return ExperimentSpec(m=settings["m"][0], n=settings["n"][0],
                          precision=settings["precision"], codebook_mode=settings["codebook"],
                          noise=NoiseSpec.device(pcm, seed=settings["noise_seed"]),
                          episodes=settings["episodes"], q_per_class=queries,
                          master_seed=settings["seed"], bank=bank)


def _load_bank(settings: dict):
    if settings["bank"]:
        return import_bank(settings["bank"])
    return generate_bank(GeneratorParams())


def _write(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def cmd_gen_bank(settings: dict) -> None:
    params = GeneratorParams(d=settings["d"], num_classes=settings["classes"],
                             samples_per_class=settings["samples"],
                             within_class_sd=settings["spread"],
                             prototype_mode=PrototypeMode(settings["proto_mode"]),
                             seed=settings["seed"], spread_tail=settings["tail"])
    if params.within_class_sd == 0:
        log.warning("spread is 0: every sample of a class duplicates its prototype")
    bank = generate_bank(params)
    export_bank(bank, settings["out"])
    print(f"classes={bank.num_classes} samples_per_class={params.samples_per_class} "
          f"d={bank.d} mean_between_class_abs_cos={mean_between_class_cosine(bank):.4f} "
          f"-> {settings['out']}")


def cmd_sweep(kind: str, settings: dict) -> None:
    bank = _load_bank(settings)
    _single(settings, "m")
    n = _single(settings, "n")
    template = _template(settings, bank, n)
    common = dict(include_local=settings["local"], workers=settings["workers"])
    if kind == "r":
        result = sweep_r(replace(template, noise=NoiseSpec.none()), settings["r"], **common)
    elif kind == "snr":
        result = sweep_snr(replace(template, noise=NoiseSpec(seed=settings["noise_seed"])),
                           settings["snr"], settings["r"], **common)
    else:
        result = sweep_pcm(template, settings["variation"], settings["r"], **common)
    result.write(settings["out"])


def cmd_iso_r(settings: dict) -> None:
    scaling = settings["scaling"]
    if scaling == "n":
        m = _single(settings, "m")
        sizes = [(m, n) for n in settings["n"]]
    elif scaling == "m":
        n = _single(settings, "n")
        sizes = [(m, n) for m in settings["m"]]
    else:
        sizes = [(_single(settings, "m"), _single(settings, "n"))]
    bank = _load_bank(settings)
    template = _template(settings, bank, max(n for _, n in sizes))
    rows = scaling_study(template, sizes, settings["variation"], r_max=settings["r_max"],
                         workers=settings["workers"])
    out = settings["out"]
    if Path(out).suffix.lower() == ".json":
        _write(out, json.dumps([asdict(row) for row in rows], indent=2))
    else:
        _write(out, iso_rows_to_csv(rows))


def _attach_negative_values(argv: list[str]) -> list[str]:
    """Rewrite ``--snr -20:2:20`` as ``--snr=-20:2:20``; argparse would read it as a flag."""
    out: list[str] = []
    for token in argv:
        if (out and out[-1].startswith("--") and "=" not in out[-1]
                and len(token) > 1 and token[0] == "-" and (token[1].isdigit() or token[1] == ".")):
            out[-1] = f"{out[-1]}={token}"
        else:
            out.append(token)
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_attach_negative_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    command = args.command if args.command != "sweep" else f"sweep-{args.kind}"
    try:
        settings = resolve(command, args)
        if command == "gen-bank":
            cmd_gen_bank(settings)
        elif command == "iso-r":
            cmd_iso_r(settings)
        else:
            cmd_sweep(args.kind, settings)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"genkv: error: {exc}", file=sys.stderr)
        return 2
    except (GenKVError, ValueError, RuntimeError, OSError) as exc:
        print(f"genkv: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
