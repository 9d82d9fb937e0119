"""cavitylink: a software 2x2 MIMO QPSK link, a stochastic metal-enclosure
channel emulator, and a BER/EVM measurement campaign runner."""

from ._kernels import BACKEND
from .corebuf import (
    IqBuffer,
    RateConfig,
    db_to_amplitude,
    derive_sample_rate,
    measure_power_db,
    read_cf32,
    write_cf32,
)
from .framing import (
    FRAME_BITS,
    FRAME_SYMBOLS,
    FrameSpec,
    assemble_frame,
    barker13_chips,
    build_header_bits,
    build_payload_bits,
)
from .txchain import (
    ModemParams,
    build_tx_waveforms,
    pulse_shape,
    qpsk_modulate,
    rrc_taps,
)
from .cavity_channel import (
    ChannelMode,
    ChannelScenario,
    ChannelState,
    ScenarioGeometry,
    absorber_profile,
    effective_matrix,
    init_channel,
    make_interference,
    propagate,
    step_stirrer,
)
from .rxchain import (
    RxChainConfig,
    RxFrameResult,
    agc,
    coarse_cfo_estimate,
    demodulate_recover,
    fine_cfo_compensate,
    frame_sync,
    resolve_phase_ambiguity,
    run_rx,
    timing_recover,
)
from .kpi import KpiRecord, assemble_record, ber, evm_rms_pct, evm_series_stats
from .campaign import (
    CampaignConfig,
    cli_main,
    emit_report,
    load_config,
    preset_campaign,
    run_campaign,
    save_config,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "IqBuffer",
    "RateConfig",
    "db_to_amplitude",
    "derive_sample_rate",
    "measure_power_db",
    "read_cf32",
    "write_cf32",
    "FRAME_BITS",
    "FRAME_SYMBOLS",
    "FrameSpec",
    "assemble_frame",
    "barker13_chips",
    "build_header_bits",
    "build_payload_bits",
    "ModemParams",
    "build_tx_waveforms",
    "pulse_shape",
    "qpsk_modulate",
    "rrc_taps",
    "ChannelMode",
    "ChannelScenario",
    "ChannelState",
    "ScenarioGeometry",
    "absorber_profile",
    "effective_matrix",
    "init_channel",
    "make_interference",
    "propagate",
    "step_stirrer",
    "RxChainConfig",
    "RxFrameResult",
    "agc",
    "coarse_cfo_estimate",
    "demodulate_recover",
    "fine_cfo_compensate",
    "frame_sync",
    "resolve_phase_ambiguity",
    "run_rx",
    "timing_recover",
    "KpiRecord",
    "assemble_record",
    "ber",
    "evm_rms_pct",
    "evm_series_stats",
    "CampaignConfig",
    "cli_main",
    "emit_report",
    "load_config",
    "preset_campaign",
    "run_campaign",
    "save_config",
]
