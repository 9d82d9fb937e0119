"""Measurement campaign orchestration: config files, sweep execution across
Tx gain / AGC gain / interferer gain, seeded reproducibility, persistence and
report emission, plus the command line entry point.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .cavity_channel import (
    ChannelMode,
    ChannelScenario,
    ScenarioGeometry,
    init_channel,
    propagate,
)
from .corebuf import measure_power_db
from .errors import (
    ConfigParseError,
    ContinuityError,
    InvalidConfigError,
    ReportError,
)
from .framing import FRAME_SYMBOLS
from .kpi import KpiRecord, assemble_record, read_records_csv, write_records_csv
from .rxchain import RxChainConfig, run_rx
from .txchain import ModemParams, build_tx_waveforms

REPORT_STYLES = ("table1", "table3", "interference")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_TRIAL_ABORTED = 4


@dataclass(frozen=True)
class CampaignConfig:
    """Full description of one sweep campaign; a trial is (config, seed)-determined."""

    scenario: ChannelScenario
    geometry: ScenarioGeometry = ScenarioGeometry()
    modem: ModemParams = ModemParams()
    rx: RxChainConfig = RxChainConfig()
    tx_gain_sweep_db: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0)
    agc_sweep_db: tuple[float, ...] = (60.0,)
    interferer_sweep_db: tuple[float, ...] | None = None
    frames_per_trial: int = 99
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "campaign_out"
    label: str = "custom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "tx_gain_sweep_db", tuple(float(g) for g in self.tx_gain_sweep_db))
        object.__setattr__(self, "agc_sweep_db", tuple(float(g) for g in self.agc_sweep_db))
        if self.interferer_sweep_db is not None:
            object.__setattr__(
                self, "interferer_sweep_db", tuple(float(g) for g in self.interferer_sweep_db)
            )
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.tx_gain_sweep_db:
            raise InvalidConfigError("tx_gain_sweep_db must not be empty")
        if not self.agc_sweep_db:
            raise InvalidConfigError("agc_sweep_db must not be empty")
        if self.interferer_sweep_db is not None and not self.interferer_sweep_db:
            raise InvalidConfigError("interferer_sweep_db must not be empty when given")
        if self.frames_per_trial < 1:
            raise InvalidConfigError("frames_per_trial must be >= 1")
        if not self.seeds:
            raise InvalidConfigError("seeds must not be empty")


@dataclass(frozen=True)
class TrialKey:
    """Canonical identity of one trial inside a campaign."""

    tx_gain_db: float
    agc_gain_db: float
    interferer_gain_db: float | None
    seed: int


@dataclass
class CampaignResult:
    records: list[KpiRecord]
    evm_series: dict[TrialKey, dict[int, list[float]]]
    tap_symbols: dict[TrialKey, dict[int, np.ndarray]]
    aborted: list[tuple[TrialKey, str]] = field(default_factory=list)


def _trial_keys(cfg: CampaignConfig) -> list[TrialKey]:
    interferer = cfg.interferer_sweep_db if cfg.interferer_sweep_db is not None else (None,)
    keys = []
    for tx_gain in cfg.tx_gain_sweep_db:
        for agc_gain in cfg.agc_sweep_db:
            for intf in interferer:
                for seed in cfg.seeds:
                    keys.append(TrialKey(tx_gain, agc_gain, intf, seed))
    return keys


def _execute_trial(cfg: CampaignConfig, key: TrialKey, collect_taps: bool):
    scenario = replace(cfg.scenario, seed=key.seed)
    if key.interferer_gain_db is not None:
        scenario = replace(scenario, interferer_gain_db=key.interferer_gain_db)
    rx_cfg = replace(cfg.rx, agc_max_gain_db=key.agc_gain_db)

    tx = build_tx_waveforms(range(cfg.frames_per_trial), cfg.modem, key.tx_gain_db)
    state = init_channel(scenario)
    block = FRAME_SYMBOLS * cfg.modem.samples_per_symbol
    rx_bufs, state = propagate(tx, scenario, state, block_len=block)

    # Sample-continuity contract: the emulator must hand over exactly the
    # samples that were produced, and the receiver must consume all of them.
    for tx_buf, rx_buf in zip(tx, rx_bufs):
        if len(rx_buf) != len(tx_buf):
            raise ContinuityError(
                f"channel emitted {len(rx_buf)} samples for {len(tx_buf)} produced"
            )
    outs = run_rx(rx_bufs, rx_cfg, cfg.modem)
    for rx_buf, out in zip(rx_bufs, outs):
        if out.samples_consumed != len(rx_buf):
            raise ContinuityError(
                f"receiver consumed {out.samples_consumed} of {len(rx_buf)} samples"
            )

    records = []
    series: dict[int, list[float]] = {}
    taps: dict[int, np.ndarray] = {}
    for channel_id, (rx_buf, out) in enumerate(zip(rx_bufs, outs), start=1):
        record, per_frame = assemble_record(
            scenario_label=cfg.label,
            mode=scenario.mode.value,
            seed=key.seed,
            channel_id=channel_id,
            tx_gain_db=key.tx_gain_db,
            agc_max_gain_db=key.agc_gain_db,
            interferer_gain_db=key.interferer_gain_db,
            n_absorbers=scenario.n_absorbers,
            frames_sent=cfg.frames_per_trial,
            rx_out=out,
            prx_db=measure_power_db(rx_buf),
        )
        records.append(record)
        series[channel_id] = per_frame
        if collect_taps:
            taps[channel_id] = np.concatenate(
                [f.symbols_after_fine_cfo for f in out.frames]
            ) if out.frames else np.empty(0, dtype=np.complex128)
    return records, series, (taps if collect_taps else None)


def _run_trial_safe(args):
    cfg, key, collect_taps = args
    try:
        return key, "ok", _execute_trial(cfg, key, collect_taps)
    except ContinuityError as exc:
        return key, "aborted", str(exc)


def run_campaign(cfg: CampaignConfig, jobs: int = 1, collect_taps: bool = True) -> CampaignResult:
    """Execute the full sweep; output order is canonical regardless of `jobs`.

    Tap symbol dumps are collected for the first seed of every sweep point.
    A sample-continuity violation aborts the affected trial and is reported;
    the campaign carries on.
    """
    keys = _trial_keys(cfg)
    first_seed = cfg.seeds[0]
    work = [(cfg, key, collect_taps and key.seed == first_seed) for key in keys]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_trial_safe, work))
    else:
        outcomes = [_run_trial_safe(item) for item in work]

    result = CampaignResult(records=[], evm_series={}, tap_symbols={})
    for key, status, payload in outcomes:
        if status == "aborted":
            result.aborted.append((key, payload))
            continue
        records, series, taps = payload
        result.records.extend(records)
        result.evm_series[key] = series
        if taps is not None:
            result.tap_symbols[key] = taps
    return result


# --- scenario and campaign presets -----------------------------------------

_SCENARIO_PRESETS = {
    "stationary": lambda: ChannelScenario(mode=ChannelMode.STATIONARY),
    "stirred": lambda: ChannelScenario(mode=ChannelMode.STIRRED),
    "interference": lambda: ChannelScenario(
        mode=ChannelMode.STATIONARY_WITH_INTERFERENCE, interferer_gain_db=60.0
    ),
    "loaded": lambda: ChannelScenario(
        mode=ChannelMode.LOADED, n_absorbers=10, interferer_gain_db=60.0
    ),
    "loopback": lambda: ChannelScenario(
        mode=ChannelMode.STATIONARY,
        identity_channel=True,
        cfo_hz=0.0,
        noise_floor_dbm_equiv=-math.inf,
    ),
}

PRESET_NAMES = (
    "stationary-agc60",
    "stationary-agc80",
    "stirred",
    "interference-empty",
    "interference-loaded-10cones",
    "loopback",
)


def preset_campaign(name: str) -> CampaignConfig:
    """Built-in campaign presets mirroring the measured bench scenarios."""
    base_seeds = tuple(range(4))
    if name == "stationary-agc60":
        return CampaignConfig(scenario=_SCENARIO_PRESETS["stationary"](), label=name, seeds=base_seeds)
    if name == "stationary-agc80":
        return CampaignConfig(
            scenario=_SCENARIO_PRESETS["stationary"](),
            agc_sweep_db=(80.0,),
            label=name,
            seeds=base_seeds,
        )
    if name == "stirred":
        return CampaignConfig(scenario=_SCENARIO_PRESETS["stirred"](), label=name, seeds=base_seeds)
    if name == "interference-empty":
        return CampaignConfig(
            scenario=_SCENARIO_PRESETS["interference"](),
            tx_gain_sweep_db=(8.0,),
            interferer_sweep_db=(55.0, 60.0, 65.0, 70.0, 75.0),
            label=name,
            seeds=base_seeds,
        )
    if name == "interference-loaded-10cones":
        return CampaignConfig(
            scenario=_SCENARIO_PRESETS["loaded"](),
            tx_gain_sweep_db=(8.0,),
            agc_sweep_db=(50.0,),
            interferer_sweep_db=(55.0, 60.0, 65.0, 70.0, 75.0),
            label=name,
            seeds=base_seeds,
        )
    if name == "loopback":
        return CampaignConfig(
            scenario=_SCENARIO_PRESETS["loopback"](),
            tx_gain_sweep_db=(0.0,),
            seeds=(0,),
            label=name,
        )
    raise InvalidConfigError(f"unknown preset {name!r}")


# --- configuration documents ------------------------------------------------

def _dataclass_from_dict(cls, data: dict, where: str):
    valid = {f.name for f in fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise InvalidConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return cls(**data)


def _scenario_from_json(value, where: str = "scenario") -> ChannelScenario:
    if isinstance(value, str):
        if value not in _SCENARIO_PRESETS:
            raise InvalidConfigError(
                f"unknown scenario preset {value!r}; choose from {sorted(_SCENARIO_PRESETS)}"
            )
        return _SCENARIO_PRESETS[value]()
    if not isinstance(value, dict):
        raise InvalidConfigError("scenario must be a preset name or an object")
    data = dict(value)
    if "noise_floor_dbm_equiv" in data and data["noise_floor_dbm_equiv"] is None:
        data["noise_floor_dbm_equiv"] = -math.inf
    return _dataclass_from_dict(ChannelScenario, data, where)


def load_config(path: str | Path) -> CampaignConfig:
    """Parse a JSON campaign description; omitted fields take their defaults.

    Unknown keys are rejected, malformed documents raise ConfigParseError with
    the line position, and invariant violations raise InvalidConfigError
    naming the field.
    """
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ConfigParseError(f"{path}: top-level document must be an object")

    known = {
        "scenario",
        "geometry",
        "modem",
        "rx",
        "tx_gain_sweep_db",
        "agc_sweep_db",
        "interferer_sweep_db",
        "frames_per_trial",
        "seeds",
        "output_dir",
        "label",
    }
    unknown = set(doc) - known
    if unknown:
        raise InvalidConfigError(f"unknown key(s) in config: {sorted(unknown)}")
    if "scenario" not in doc:
        raise InvalidConfigError("config must name a scenario")

    kwargs = {"scenario": _scenario_from_json(doc["scenario"])}
    if "geometry" in doc:
        kwargs["geometry"] = _dataclass_from_dict(ScenarioGeometry, doc["geometry"], "geometry")
    if "modem" in doc:
        kwargs["modem"] = _dataclass_from_dict(ModemParams, doc["modem"], "modem")
    if "rx" in doc:
        kwargs["rx"] = _dataclass_from_dict(RxChainConfig, doc["rx"], "rx")
    for key in (
        "tx_gain_sweep_db",
        "agc_sweep_db",
        "interferer_sweep_db",
        "frames_per_trial",
        "seeds",
        "output_dir",
        "label",
    ):
        if key in doc:
            kwargs[key] = doc[key]
    return CampaignConfig(**kwargs)


def config_to_dict(cfg: CampaignConfig) -> dict:
    """Canonical JSON-ready form of a config (normalizing form for round-trips)."""
    scenario = {
        "mode": cfg.scenario.mode.value,
        "k_factor_db": cfg.scenario.k_factor_db,
        "stir_coefficient": cfg.scenario.stir_coefficient,
        "cfo_hz": cfg.scenario.cfo_hz,
        "noise_floor_dbm_equiv": (
            None
            if cfg.scenario.noise_floor_dbm_equiv == -math.inf
            else cfg.scenario.noise_floor_dbm_equiv
        ),
        "interferer_gain_db": cfg.scenario.interferer_gain_db,
        "interferer_power_offset_db": cfg.scenario.interferer_power_offset_db,
        "n_absorbers": cfg.scenario.n_absorbers,
        "seed": cfg.scenario.seed,
        "identity_channel": cfg.scenario.identity_channel,
    }
    return {
        "label": cfg.label,
        "scenario": scenario,
        "geometry": {f.name: getattr(cfg.geometry, f.name) for f in fields(ScenarioGeometry)},
        "modem": {f.name: getattr(cfg.modem, f.name) for f in fields(ModemParams)},
        "rx": {f.name: getattr(cfg.rx, f.name) for f in fields(RxChainConfig)},
        "tx_gain_sweep_db": list(cfg.tx_gain_sweep_db),
        "agc_sweep_db": list(cfg.agc_sweep_db),
        "interferer_sweep_db": (
            None if cfg.interferer_sweep_db is None else list(cfg.interferer_sweep_db)
        ),
        "frames_per_trial": cfg.frames_per_trial,
        "seeds": list(cfg.seeds),
        "output_dir": cfg.output_dir,
    }


def save_config(cfg: CampaignConfig, path: str | Path | None = None) -> str:
    text = json.dumps(config_to_dict(cfg), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


# --- reports and plot data ----------------------------------------------------

def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def _mean_or_none(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _cell(prx: float | None, evm: float | None, rate: float | None) -> list[str]:
    return [
        "" if prx is None else f"{_round_half_away(prx)}",
        "" if evm is None else f"{_round_half_away(evm)}",
        "" if rate is None else f"{rate:.1e}",
    ]


def _aggregate(records: list[KpiRecord], row_key) -> dict:
    """Group by row_key and channel, averaging Prx/EVM and pooling BER."""
    rows: dict = {}
    for rec in records:
        bucket = rows.setdefault(row_key(rec), {1: [], 2: []})
        bucket[rec.channel_id].append(rec)
    table = {}
    for key, by_ch in sorted(rows.items()):
        cells = {}
        for ch, recs in by_ch.items():
            prx = _mean_or_none([r.prx_db for r in recs if r.prx_db != -math.inf])
            evm = _mean_or_none([r.evm_rms_pct for r in recs if r.evm_rms_pct is not None])
            bits = sum(r.bits_compared for r in recs if r.ber is not None)
            errs = sum(round(r.ber * r.bits_compared) for r in recs if r.ber is not None)
            cells[ch] = (prx, evm, errs / bits if bits else None)
        table[key] = cells
    return table


def emit_report(
    records: list[KpiRecord],
    style: str,
    out_dir: str | Path | None = None,
    evm_series: dict | None = None,
    tap_symbols: dict | None = None,
) -> str:
    """Render the bench-style two-channel table and write companion plot data.

    table1/table3 use Tx gain rows; interference uses interferer-gain rows and
    refuses records that carry no interferer gain. Plot data (per-frame EVM
    time series, BER-vs-interferer curves, EVM-tap constellation dumps) is
    written when out_dir is given and the matching inputs are available.
    """
    if style not in REPORT_STYLES:
        raise ReportError(f"unknown report style {style!r}")
    if not records:
        raise ReportError("no records to report")

    if style == "interference":
        if all(r.interferer_gain_db is None for r in records):
            raise ReportError("interference style needs records with interferer gains")
        row_label = "Intf Gain (dB)"
        table = _aggregate(
            [r for r in records if r.interferer_gain_db is not None],
            lambda r: r.interferer_gain_db,
        )
    else:
        row_label = "Tx Gain (dB)"
        table = _aggregate(records, lambda r: r.tx_gain_db)

    prx_h, evm_h = ("Avg.Prx(dB)", "Avg.EVM(%)") if style == "table3" else ("Prx(dB)", "EVM(%)")
    header = [row_label] + [f"Ch{ch} {name}" for ch in (1, 2) for name in (prx_h, evm_h, "BER")]
    lines = ["  ".join(f"{h:>14}" for h in header)]
    for key, cells in table.items():
        row = [f"{key:g}"]
        for ch in (1, 2):
            row.extend(_cell(*cells.get(ch, (None, None, None))))
        lines.append("  ".join(f"{c:>14}" for c in row))
    text = "\n".join(lines) + "\n"

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"report_{style}.txt").write_text(text)
        if evm_series:
            _write_evm_series(out_dir / "evm_timeseries.csv", evm_series)
        if style == "interference":
            _write_ber_curves(out_dir / "ber_vs_interferer.csv", table)
        if tap_symbols:
            _write_tap_dumps(out_dir, tap_symbols)
    return text


def _write_evm_series(path: Path, evm_series: dict) -> None:
    with path.open("w") as fh:
        fh.write("tx_gain_db,agc_gain_db,interferer_gain_db,seed,channel_id,frame_index,evm_pct\n")
        for key in sorted(evm_series, key=lambda k: (k.tx_gain_db, k.agc_gain_db,
                                                     k.interferer_gain_db or 0.0, k.seed)):
            for ch in sorted(evm_series[key]):
                for i, evm in enumerate(evm_series[key][ch]):
                    intf = "" if key.interferer_gain_db is None else repr(key.interferer_gain_db)
                    fh.write(
                        f"{key.tx_gain_db!r},{key.agc_gain_db!r},{intf},"
                        f"{key.seed},{ch},{i},{evm!r}\n"
                    )


def _write_ber_curves(path: Path, table: dict) -> None:
    with path.open("w") as fh:
        fh.write("interferer_gain_db,channel_id,ber\n")
        for gain, cells in table.items():
            for ch in (1, 2):
                rate = cells.get(ch, (None, None, None))[2]
                fh.write(f"{gain!r},{ch},{'' if rate is None else repr(rate)}\n")


def _write_tap_dumps(out_dir: Path, tap_symbols: dict) -> None:
    const_dir = out_dir / "constellations"
    const_dir.mkdir(exist_ok=True)
    for key in sorted(tap_symbols, key=lambda k: (k.tx_gain_db, k.agc_gain_db,
                                                  k.interferer_gain_db or 0.0, k.seed)):
        for ch, syms in sorted(tap_symbols[key].items()):
            intf = "none" if key.interferer_gain_db is None else f"{key.interferer_gain_db:g}"
            name = (
                f"tx{key.tx_gain_db:g}_agc{key.agc_gain_db:g}_intf{intf}"
                f"_seed{key.seed}_ch{ch}.csv"
            )
            with (const_dir / name).open("w") as fh:
                fh.write("i,q\n")
                for s in syms:
                    fh.write(f"{s.real!r},{s.imag!r}\n")


# --- command line interface ---------------------------------------------------

def _infer_style(cfg: CampaignConfig) -> str:
    if cfg.interferer_sweep_db is not None:
        return "interference"
    if cfg.scenario.mode is ChannelMode.STIRRED:
        return "table3"
    return "table1"


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigParseError, InvalidConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.seed_count is not None:
        if args.seed_count < 1:
            print("error: --seed-count must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        cfg = replace(cfg, seeds=tuple(range(args.seed_count)))
    out_dir = Path(os.environ.get("CAVITYLINK_OUT") or args.out or cfg.output_dir)

    result = run_campaign(cfg, jobs=args.jobs)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_records_csv(result.records, out_dir / "records.csv")
        if result.records:
            style = _infer_style(cfg)
            emit_report(result.records, style, out_dir, result.evm_series, result.tap_symbols)
        (out_dir / "run_meta.json").write_text(save_config(cfg))
        if args.dump_taps:
            # Per-stage taps come from a dedicated re-run of the first trial.
            key = _trial_keys(cfg)[0]
            scenario = replace(cfg.scenario, seed=key.seed)
            if key.interferer_gain_db is not None:
                scenario = replace(scenario, interferer_gain_db=key.interferer_gain_db)
            tx = build_tx_waveforms(range(cfg.frames_per_trial), cfg.modem, key.tx_gain_db)
            rx_bufs, _ = propagate(
                tx, scenario, init_channel(scenario),
                block_len=FRAME_SYMBOLS * cfg.modem.samples_per_symbol,
            )
            run_rx(rx_bufs, replace(cfg.rx, agc_max_gain_db=key.agc_gain_db), cfg.modem,
                   dump_dir=out_dir / "taps")
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO

    print(f"wrote {len(result.records)} records to {out_dir / 'records.csv'}")
    if result.aborted:
        for key, reason in result.aborted:
            print(f"trial aborted ({key}): {reason}", file=sys.stderr)
        return EXIT_TRIAL_ABORTED
    return EXIT_OK


def _cmd_report(args) -> int:
    try:
        records = read_records_csv(args.records)
    except OSError as exc:
        print(f"error: cannot read records: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        text = emit_report(records, args.style, args.out)
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(text, end="")
    return EXIT_OK


def cli_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cavitylink",
        description="Two-channel QPSK link emulation and BER/EVM measurement campaigns.",
    )
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser("run", help="execute a campaign from a JSON config")
    p_run.add_argument("config", help="path to the campaign config document")
    p_run.add_argument("--seed-count", type=int, default=None,
                       help="replace the config seed list with seeds 0..N-1")
    p_run.add_argument("--out", default=None, help="output directory (CAVITYLINK_OUT overrides)")
    p_run.add_argument("--dump-taps", action="store_true",
                       help="write per-stage .cf32 taps for the first trial")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel trial workers")

    p_rep = sub.add_parser("report", help="render a table from a records CSV")
    p_rep.add_argument("records", help="path to records.csv")
    p_rep.add_argument("--style", choices=REPORT_STYLES, default="table1")
    p_rep.add_argument("--out", default=None, help="also write report/plot data here")

    sub.add_parser("presets", help="list built-in campaign presets")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK

    if args.command == "run":
        return _cmd_run(args)
    if args.command == "report":
        return _cmd_report(args)
    if args.command == "presets":
        for name in PRESET_NAMES:
            print(name)
        return EXIT_OK
    parser.print_usage(sys.stderr)
    return EXIT_USAGE


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
