import math

import numpy as np
import pytest

from cavitylink.corebuf import IqBuffer, db_to_amplitude, measure_power_db
from cavitylink.cavity_channel import ChannelScenario, init_channel, propagate
from cavitylink.errors import ContractViolation, InvalidConfigError, TruncatedFrameError
from cavitylink.framing import FRAME_SYMBOLS, assemble_frame, bits_to_text
from cavitylink.rxchain import (
    RxChainConfig,
    agc,
    coarse_cfo_estimate,
    demodulate_recover,
    fine_cfo_compensate,
    frame_sync,
    resolve_phase_ambiguity,
    run_rx,
    timing_recover,
)
from cavitylink.txchain import (
    ModemParams,
    build_tx_waveforms,
    frame_symbols,
    header_symbols,
    pulse_shape,
    qpsk_modulate,
    rrc_taps,
)

FS = 400e3


def random_qpsk(n, seed=0):
    rng = np.random.default_rng(seed)
    return qpsk_modulate(rng.integers(0, 2, 2 * n))


def loopback_rx(n_frames=10, cfo=0.0, seed=0, cfg=None, modem=None):
    modem = modem or ModemParams()
    tx = build_tx_waveforms(range(n_frames), modem, 0.0)
    sc = ChannelScenario(
        cfo_hz=cfo, noise_floor_dbm_equiv=-math.inf, identity_channel=True, seed=seed
    )
    rx, _ = propagate(tx, sc, init_channel(sc), block_len=FRAME_SYMBOLS * modem.samples_per_symbol)
    return run_rx(rx, cfg or RxChainConfig(), modem)


class TestAgc:
    def test_input_at_target_passes_through(self):
        rng = np.random.default_rng(4)
        x = np.exp(1j * rng.uniform(0, 2 * math.pi, 10_000))
        out = agc(IqBuffer(x, FS), RxChainConfig())
        np.testing.assert_allclose(out.samples, x, rtol=0.01)

    def test_weak_input_brought_to_target(self):
        rng = np.random.default_rng(5)
        x = np.exp(1j * rng.uniform(0, 2 * math.pi, 20_000)) * db_to_amplitude(-40.0)
        out = agc(IqBuffer(x, FS), RxChainConfig(agc_max_gain_db=60.0))
        steady = IqBuffer(out.samples[5_000:], FS)
        assert abs(measure_power_db(steady)) <= 1.0

    def test_clamp_arithmetic_exact(self):
        rng = np.random.default_rng(6)
        x = np.exp(1j * rng.uniform(0, 2 * math.pi, 20_000)) * db_to_amplitude(-90.0)
        buf = IqBuffer(x, FS)
        out = agc(buf, RxChainConfig(agc_max_gain_db=60.0))
        steady_out = measure_power_db(IqBuffer(out.samples[5_000:], FS))
        steady_in = measure_power_db(IqBuffer(x[5_000:], FS))
        assert steady_out - steady_in == pytest.approx(60.0, abs=1e-9)
        assert steady_out == pytest.approx(-30.0, abs=1e-9)

    def test_all_zero_passes_at_max_gain(self):
        out = agc(IqBuffer(np.zeros(256, dtype=complex), FS), RxChainConfig())
        assert np.all(out.samples == 0)

    def test_output_power_independent_of_input_level(self):
        rng = np.random.default_rng(7)
        wf = pulse_shape(random_qpsk(4000, 7), ModemParams()).samples
        outs = []
        for level in (-50.0, -25.0, 0.0, 10.0):
            out = agc(IqBuffer(wf * db_to_amplitude(level), FS), RxChainConfig())
            outs.append(measure_power_db(IqBuffer(out.samples[4_000:], FS)))
        assert max(outs) - min(outs) <= 1.0


class TestCoarseCfo:
    def shaped_waveform(self, n_sym, cfo_hz, seed=8):
        p = ModemParams()
        wf = pulse_shape(random_qpsk(n_sym, seed), p).samples
        if cfo_hz:
            wf = wf * np.exp(2j * np.pi * cfo_hz * np.arange(wf.size) / FS)
        return IqBuffer(wf, FS)

    def test_bin_resolution_at_17hz(self):
        est = coarse_cfo_estimate(self.shaped_waveform(4000, 17.19), 4096)
        bin_hz = FS / (4 * 4096)
        assert abs(est - 17.19) <= bin_hz  # ~24.4 Hz

    def test_zero_offset(self):
        est = coarse_cfo_estimate(self.shaped_waveform(4000, 0.0), 4096)
        assert abs(est) <= FS / (4 * 4096)

    def test_5khz_offset(self):
        est = coarse_cfo_estimate(self.shaped_waveform(4000, 5000.0), 4096)
        assert abs(est - 5000.0) <= FS / (4 * 4096)

    def test_negative_offset(self):
        est = coarse_cfo_estimate(self.shaped_waveform(4000, -3000.0), 4096)
        assert abs(est + 3000.0) <= FS / (4 * 4096)

    def test_short_input_rejected(self):
        with pytest.raises(ContractViolation):
            coarse_cfo_estimate(IqBuffer(np.ones(100, dtype=complex), FS), 4096)


class TestTimingRecover:
    def matched(self, syms, p):
        wf = pulse_shape(syms, p).samples
        return np.convolve(wf, rrc_taps(p)) / math.sqrt(p.samples_per_symbol * 0.25)

    def test_aligned_signal_recovers_symbols(self):
        # Static alignment with a tight tracking bandwidth; deviation measured
        # as RMS, matching the loop's stated convergence tolerance style.
        p = ModemParams()
        syms = random_qpsk(3000, 9)
        mf = self.matched(syms, p)
        delay = p.filter_span_symbols * p.samples_per_symbol
        out = timing_recover(
            IqBuffer(mf, FS), p.samples_per_symbol, 0.001, start_offset=float(delay)
        )
        n = min(len(out), len(syms))
        err = np.abs(out[300:n] - syms[300:n])
        assert np.sqrt(np.mean(err**2)) <= 1e-3

    def test_default_bandwidth_rms_within_loop_tolerance(self):
        p = ModemParams()
        syms = random_qpsk(3000, 9)
        mf = self.matched(syms, p)
        delay = p.filter_span_symbols * p.samples_per_symbol
        out = timing_recover(IqBuffer(mf, FS), p.samples_per_symbol, start_offset=float(delay))
        n = min(len(out), len(syms))
        err = np.abs(out[300:n] - syms[300:n])
        assert np.sqrt(np.mean(err**2)) < 1e-2

    def test_half_sample_offset_converges(self):
        # Fractional delay oracle: exact bandlimited shift via FFT phase ramp.
        p = ModemParams()
        syms = random_qpsk(6000, 10)
        wf = pulse_shape(syms, p).samples
        n = wf.size
        freqs = np.fft.fftfreq(n)
        delayed = np.fft.ifft(np.fft.fft(wf) * np.exp(-2j * np.pi * freqs * 0.5))
        mf = np.convolve(delayed, rrc_taps(p)) / math.sqrt(p.samples_per_symbol * 0.25)
        delay = p.filter_span_symbols * p.samples_per_symbol
        out = timing_recover(IqBuffer(mf, FS), p.samples_per_symbol, start_offset=float(delay))
        m = min(len(out), len(syms))
        steady = np.abs(out[m // 2 : m] - syms[m // 2 : m])
        assert np.sqrt(np.mean(steady**2)) < 1e-2

    def test_gardner_s_curve_crosses_zero_at_origin(self):
        # Frozen-loop oracle: mean detector output versus static offset.
        p = ModemParams()
        sps = p.samples_per_symbol
        syms = random_qpsk(4000, 11)
        mf = self.matched(syms, p)
        delay = p.filter_span_symbols * sps

        def mean_ted(tau):
            total = 0.0
            count = 0
            for k in range(50, 3800):
                pos = delay + k * sps + tau
                i = int(pos)
                frac = pos - i
                curr = mf[i] * (1 - frac) + mf[i + 1] * frac
                pos_p = pos - sps
                i = int(pos_p)
                frac = pos_p - i
                prev = mf[i] * (1 - frac) + mf[i + 1] * frac
                pos_m = pos - sps / 2
                i = int(pos_m)
                frac = pos_m - i
                mid = mf[i] * (1 - frac) + mf[i + 1] * frac
                total += (mid * np.conj(prev - curr)).real
                count += 1
            return total / count

        at_zero = mean_ted(0.0)
        early = mean_ted(-0.5)
        late = mean_ted(0.5)
        assert abs(at_zero) < 0.02
        assert early > 0.05 and late < -0.05  # odd S-curve around the origin


class TestFineCfo:
    def test_zero_offset_is_transparent(self):
        syms = random_qpsk(2000, 12)
        out = fine_cfo_compensate(syms, RxChainConfig())
        np.testing.assert_allclose(out[100:], syms[100:], atol=1e-6)

    def residual_rotation_hz(self, offset_hz, symbol_rate=100e3):
        syms = random_qpsk(20_000, 13)
        n = np.arange(syms.size)
        rotated = syms * np.exp(2j * np.pi * offset_hz * n / symbol_rate)
        out = fine_cfo_compensate(rotated, RxChainConfig())
        tail = slice(syms.size // 2, None)
        phases = np.unwrap(np.angle(out[tail] * np.conj(syms[tail])))
        slope = np.polyfit(np.arange(phases.size), phases, 1)[0]
        return slope * symbol_rate / (2 * np.pi)

    def test_positive_residual_pulled_in(self):
        assert abs(self.residual_rotation_hz(+100.0)) < 1.0

    def test_negative_residual_symmetric(self):
        assert abs(self.residual_rotation_hz(-100.0)) < 1.0


class TestFrameSync:
    def test_single_clean_frame_at_zero(self):
        hdr = header_symbols()
        stream = np.concatenate([hdr, random_qpsk(60, 14)])
        peaks = frame_sync(stream, hdr, 0.6)
        assert len(peaks) == 1
        offset, peak = peaks[0]
        assert offset == 0
        assert peak == pytest.approx(13.0, abs=0.5)

    def test_prepended_random_symbols_shift_offset(self):
        hdr = header_symbols()
        stream = np.concatenate([random_qpsk(37, 15), hdr, random_qpsk(60, 16)])
        peaks = frame_sync(stream, hdr, 0.6)
        assert [p[0] for p in peaks] == [37]

    def test_false_alarm_rate_on_pure_noise(self):
        rng = np.random.default_rng(12345)
        n = 200_000
        noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2)
        peaks = frame_sync(noise, header_symbols(), 0.6)
        assert len(peaks) / n < 1e-3

    def test_multiple_frames_separated(self):
        hdr = header_symbols()
        frame = np.concatenate([hdr, random_qpsk(60, 17)])
        stream = np.concatenate([frame, frame, frame])
        peaks = frame_sync(stream, hdr, 0.6, min_separation=73)
        assert [p[0] for p in peaks] == [0, 73, 146]

    def test_threshold_validated(self):
        with pytest.raises(InvalidConfigError):
            frame_sync(random_qpsk(100, 18), header_symbols(), 0.0)

    def test_empty_when_no_peak(self):
        assert frame_sync(random_qpsk(200, 19), header_symbols(), 0.6) == []


class TestResolvePhaseAmbiguity:
    @pytest.mark.parametrize("quarter", [0, 1, 2, 3])
    def test_exact_quarter_turns(self, quarter):
        hdr = header_symbols()
        rotated = hdr * np.exp(1j * quarter * math.pi / 2)
        assert resolve_phase_ambiguity(rotated, hdr, 0) == pytest.approx(
            quarter * math.pi / 2
        )

    def test_quantizes_small_extra_rotation(self):
        hdr = header_symbols()
        rotated = hdr * np.exp(1j * (math.pi / 2 + 0.1))
        assert resolve_phase_ambiguity(rotated, hdr, 0) == pytest.approx(math.pi / 2)

    def test_unrotated_clean_input(self):
        hdr = header_symbols()
        assert resolve_phase_ambiguity(hdr, hdr, 0) == 0.0


class TestDemodulateRecover:
    def test_clean_frame_round_trip(self):
        frame = assemble_frame(0, 1)
        syms = qpsk_modulate(frame.bits)
        result = demodulate_recover(syms, 0.0)
        np.testing.assert_array_equal(result.recovered_bits, frame.bits)
        assert bits_to_text(result.recovered_bits[26:]) == "Hello World 001"
        assert result.sync_ok

    def test_rotation_resolved_before_demap(self):
        frame = assemble_frame(3, 1)
        syms = qpsk_modulate(frame.bits) * np.exp(1j * math.pi / 2)
        result = demodulate_recover(syms, math.pi / 2)
        np.testing.assert_array_equal(result.recovered_bits, frame.bits)

    def test_single_pushed_symbol_flips_matching_bits(self):
        frame = assemble_frame(0, 1)
        syms = qpsk_modulate(frame.bits).copy()
        syms[20] = -syms[20].real + 1j * syms[20].imag  # flip I only
        result = demodulate_recover(syms, 0.0)
        diff = np.flatnonzero(result.recovered_bits != frame.bits)
        assert list(diff) == [2 * 20 + 1]  # I carries the second bit of the pair

    def test_inverse_property_under_all_rotations(self):
        frame = assemble_frame(5, 1)
        syms = qpsk_modulate(frame.bits)
        for quarter in range(4):
            rot = quarter * math.pi / 2
            result = demodulate_recover(syms * np.exp(1j * rot), rot)
            np.testing.assert_array_equal(result.recovered_bits, frame.bits)

    def test_short_block_rejected(self):
        with pytest.raises(TruncatedFrameError):
            demodulate_recover(qpsk_modulate(assemble_frame(0, 1).bits)[:50], 0.0)


class TestRunRx:
    def test_loopback_identity_recovers_everything(self):
        outs = loopback_rx(n_frames=10)
        for out in outs:
            assert len(out.frames) == 10
            for frame in out.frames:
                idx = round(frame.frame_offset / FRAME_SYMBOLS)
                np.testing.assert_array_equal(
                    frame.recovered_bits, assemble_frame(idx, 1).bits
                )

    def test_loopback_with_calibration_cfo_identical_bits(self):
        plain = loopback_rx(n_frames=10, cfo=0.0)
        shifted = loopback_rx(n_frames=10, cfo=17.19)
        for a, b in zip(plain, shifted):
            assert len(a.frames) == len(b.frames)
            for fa, fb in zip(a.frames, b.frames):
                np.testing.assert_array_equal(fa.recovered_bits, fb.recovered_bits)

    def test_channel2_only_leaves_channel1_empty(self):
        modem = ModemParams()
        tx = build_tx_waveforms(range(6), modem, 0.0)
        zeros = IqBuffer(np.zeros(len(tx[0]), dtype=complex), FS)
        outs = run_rx((zeros, tx[1]), RxChainConfig(), modem)
        assert len(outs[0].frames) == 0
        assert len(outs[1].frames) == 6

    def test_cfo_composition_within_1hz(self):
        outs = loopback_rx(n_frames=40, cfo=3000.0)
        modem = ModemParams()
        for out in outs:
            phases, ks = [], []
            for frame in out.frames[len(out.frames) // 2 :]:
                idx = round(frame.frame_offset / FRAME_SYMBOLS)
                ref = frame_symbols(idx)
                rot = frame.symbols_after_fine_cfo * np.conj(ref)
                phases.extend(np.angle(rot))
                ks.extend(range(frame.frame_offset, frame.frame_offset + len(ref)))
            slope = np.polyfit(np.asarray(ks), np.unwrap(np.asarray(phases)), 1)[0]
            residual_hz = slope * modem.symbol_rate_hz / (2 * math.pi)
            assert abs(residual_hz) < 1.0

    def test_deterministic(self):
        a = loopback_rx(n_frames=5)
        b = loopback_rx(n_frames=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.symbols, y.symbols)

    def test_mismatched_stream_lengths_rejected(self):
        modem = ModemParams()
        a = IqBuffer(np.ones(500, dtype=complex), FS)
        b = IqBuffer(np.ones(400, dtype=complex), FS)
        with pytest.raises(ContractViolation):
            run_rx((a, b), RxChainConfig(), modem)

    def test_tap_dump_files_written(self, tmp_path):
        modem = ModemParams()
        tx = build_tx_waveforms(range(3), modem, 0.0)
        sc = ChannelScenario(
            cfo_hz=0.0, noise_floor_dbm_equiv=-math.inf, identity_channel=True
        )
        rx, _ = propagate(tx, sc, init_channel(sc))
        run_rx(rx, RxChainConfig(), modem, dump_dir=tmp_path)
        for tag in ("ch1_post_agc", "ch1_post_coarse", "ch1_evm_tap", "ch2_evm_tap"):
            assert (tmp_path / f"{tag}.cf32").exists()
            assert (tmp_path / f"{tag}.json").exists()


class TestRxChainConfigValidation:
    def test_fft_size_power_of_two(self):
        with pytest.raises(InvalidConfigError):
            RxChainConfig(coarse_fft_size=1000)

    def test_sync_threshold_range(self):
        with pytest.raises(InvalidConfigError):
            RxChainConfig(sync_threshold=1.5)

    def test_loop_bandwidths_positive(self):
        with pytest.raises(InvalidConfigError):
            RxChainConfig(fine_loop_bandwidth_norm=0.0)
