import math

import numpy as np
import pytest

from oscroot.errors import ConfigError
from oscroot.pipeline import AnalysisConfig, run_analysis
from oscroot.spectral import dominant_modes, spectrum
from oscroot.synth import Forcing, SynthMode, SyntheticScenario, generate, oracle_eig, scenario_from_dict

from scenarios import single_mode_scenario, two_mode_scenario

DT = 1 / 30


class TestSynthMode:
    def test_damped_frequency_is_requested_frequency(self):
        lam = SynthMode(1.41, 0.05, np.ones(2)).lam
        assert lam.imag / (2 * math.pi) == pytest.approx(1.41)
        assert -lam.real / abs(lam) == pytest.approx(0.05)


class TestGenerate:
    def test_pure_sinusoid(self):
        shape = np.array([1.0, 0.0])
        cs = generate(SyntheticScenario.for_plants(["A"], [SynthMode(1.0, 0.0, shape)], duration=5.0))
        t = cs.times
        np.testing.assert_allclose(cs.channels[0].samples, np.cos(2 * np.pi * t), atol=1e-12)
        np.testing.assert_array_equal(cs.channels[1].samples, 0.0)
        assert cs.n_samples == 151

    def test_envelope_decay(self):
        zeta, f = 0.05, 1.41
        scn = SyntheticScenario.for_plants(["A"], [SynthMode(f, zeta, np.array([1.0, 0.5j]))], duration=20.0)
        cs = generate(scn)
        x, t = cs.channels[0].samples, cs.times
        # successive maxima of a damped cosine lie exactly on the envelope
        peaks = np.flatnonzero((x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:])) + 1
        slope = np.polyfit(t[peaks], np.log(x[peaks]), 1)[0]
        wn = 2 * np.pi * f / math.sqrt(1 - zeta**2)
        assert slope == pytest.approx(-zeta * wn, rel=0.01)

    def test_rectangular_forcing_odd_harmonics(self):
        scn = SyntheticScenario.for_plants(
            ["A"], [], duration=60.0, forcing=Forcing(0.4, "rectangular", "A:P")
        )
        cs = generate(scn)
        freqs, mags = spectrum(cs.channels[0].samples, DT)
        level = {f: mags[np.argmin(np.abs(freqs - f))] for f in (0.4, 0.8, 1.2, 2.0)}
        assert level[0.4] == pytest.approx(4 / np.pi, rel=0.05)
        assert level[1.2] == pytest.approx(4 / (3 * np.pi), rel=0.1)
        assert level[2.0] == pytest.approx(4 / (5 * np.pi), rel=0.1)
        # 75 samples per period break half-wave symmetry slightly
        assert level[0.8] < 0.03 * level[0.4]

    def test_plant_forcing_drives_both_channels(self):
        scn = SyntheticScenario.for_plants(["A", "B"], [], duration=10.0, forcing=Forcing(0.5, "sine", "B", 2.0))
        m = generate(scn).matrix()
        np.testing.assert_array_equal(m[:2], 0.0)
        assert np.max(m[2]) == pytest.approx(2.0, rel=1e-3)
        assert np.max(m[3]) == pytest.approx(1.0, rel=1e-3)

    def test_seed_determinism(self):
        a = generate(single_mode_scenario(noise_std=0.01))
        b = generate(single_mode_scenario(noise_std=0.01))
        assert a.matrix().tobytes() == b.matrix().tobytes()
        c = generate(single_mode_scenario(seed=2, noise_std=0.01))
        assert not np.array_equal(a.matrix(), c.matrix())

    def test_noise_level(self):
        scn = single_mode_scenario(noise_std=0.05)
        clean = generate(single_mode_scenario())
        noise = generate(scn).matrix() - clean.matrix()
        assert noise.std() == pytest.approx(0.05, rel=0.05)

    def test_fft_peak_at_damped_frequency(self):
        cs = generate(two_mode_scenario())
        found = sorted(c.f_s for c in dominant_modes(cs))
        assert found[0] == pytest.approx(1.27, abs=1 / cs.duration)
        assert found[1] == pytest.approx(1.41, abs=1 / cs.duration)

    @pytest.mark.parametrize(
        "kw",
        [
            {"modes": [SynthMode(20.0, 0.01, np.ones(2))]},
            {"modes": [SynthMode(1.0, 1.5, np.ones(2))]},
            {"modes": [SynthMode(1.0, 0.01, np.zeros(2))]},
            {"modes": []},
            {"modes": [SynthMode(1.0, 0.01, np.ones(2))], "forcing": Forcing(1.0, "sine", "Z")},
            {"modes": [SynthMode(1.0, 0.01, np.ones(2))], "forcing": Forcing(1.0, "triangle", "A")},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            generate(SyntheticScenario.for_plants(["A"], **kw))


class TestOracle:
    def test_decoupled_oscillators(self):
        modes = [
            SynthMode(1.0, 0.02, np.array([1, 1j, 0, 0])),
            SynthMode(2.5, 0.05, np.array([0, 0, 1, 1j])),
        ]
        scn = SyntheticScenario.for_plants(["A", "B"], modes)
        A = scn.system_matrix()
        np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(A)), np.sort_complex([m.lam for m in modes] + [m.lam.conjugate() for m in modes]), atol=1e-9)
        oracle = oracle_eig(scn)
        assert oracle[0].lam == pytest.approx(modes[0].lam, abs=1e-9)
        assert oracle[0].plant_participation == pytest.approx({"A": 1.0, "B": 0.0}, abs=1e-9)
        assert oracle[1].top() == "B"
        for o in oracle:
            assert o.participation.sum() == pytest.approx(1.0)

    def test_signal_is_free_response(self):
        from scipy.linalg import expm

        scn = single_mode_scenario()
        m = generate(scn).matrix()
        step = expm(scn.system_matrix() * scn.dt)
        np.testing.assert_allclose(step @ m[:, :-1], m[:, 1:], atol=1e-9)

    def test_non_normal_ranking_matches_pipeline(self):
        shapes = [
            np.array([1.0, 0.7j, 0.35 + 0.2j, 0.1]) * np.exp(1j * 0.3),
            2.5 * np.array([0.3, 0.6 - 0.2j, 0.2j, 1.0]),
        ]
        modes = [SynthMode(0.8, 0.01, shapes[0]), SynthMode(2.2, 0.015, shapes[1])]
        scn = SyntheticScenario.for_plants(["A", "B"], modes, duration=20.0)
        A = scn.system_matrix()
        assert np.linalg.norm(A @ A.T - A.T @ A) > 1e-3
        oracle = oracle_eig(scn)
        result = run_analysis(generate(scn), AnalysisConfig())
        assert len(result.modes) == 2
        for m in result.modes:
            o = min(oracle, key=lambda o: abs(o.freq_hz - m.candidate.f_s))
            assert m.report.ranking()[0][0] == o.top()
            assert m.report.freq_hz == pytest.approx(o.freq_hz, rel=0.01)
            assert m.report.damping_pct / 100 == pytest.approx(o.damping_ratio, abs=0.02)

    def test_deterministic(self):
        a = oracle_eig(two_mode_scenario())
        b = oracle_eig(two_mode_scenario())
        for x, y in zip(a, b):
            assert x.lam == y.lam
            np.testing.assert_array_equal(x.participation, y.participation)

    def test_dependent_shape_parts_rejected(self):
        scn = SyntheticScenario.for_plants(["A"], [SynthMode(1.0, 0.0, np.array([1.0, 0.0]))])
        with pytest.raises(ConfigError):
            oracle_eig(scn)


class TestScenarioFromDict:
    def test_plants_and_shapes(self):
        scn = scenario_from_dict(
            {
                "plants": ["30", "31"],
                "fs": 30,
                "duration": 3,
                "seed": 4,
                "modes": [{"freq_hz": 9.34, "damping_ratio": 0.0078, "shape": {"30:P": [1, 0], "30:Q": [0, 0.7]}}],
                "forcing": {"freq_hz": 0.4, "waveform": "rectangular", "target": "31"},
            }
        )
        assert scn.dt == pytest.approx(DT)
        assert scn.channels == [("30", "P"), ("30", "Q"), ("31", "P"), ("31", "Q")]
        np.testing.assert_allclose(scn.modes[0].shape, [1, 0.7j, 0, 0])
        assert scn.forcing.target == "31"

    def test_nested_scenario_table(self):
        scn = scenario_from_dict({"scenario": {"channels": ["G1:P", "G1:Q"], "modes": [{"freq_hz": 1.0, "shape": [[1, 0], [0, 1]]}]}})
        assert scn.channels == [("G1", "P"), ("G1", "Q")]
        assert scn.modes[0].damping_ratio == 0.0

    def test_unknown_channel(self):
        with pytest.raises(ConfigError):
            scenario_from_dict({"plants": ["A"], "modes": [{"freq_hz": 1.0, "shape": {"B:P": [1, 0]}}]})

    def test_missing_channels(self):
        with pytest.raises(ConfigError):
            scenario_from_dict({"modes": []})
