"""Acceptance suite: one test per criterion, each reporting a PASS line in
the terminal summary. Numerical-property criteria run in seconds; the
desk-scale experiment behind criteria 8-11 trains real networks and
dominates the runtime (tens of minutes in total, within each criterion's
stated budget). Run with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import record_acceptance
from lsphase.dataset import gen_powerlaw_phase
from lsphase.fieldcore import ComplexField, Grid2D, RealField, dft2, idft2
from lsphase.metrics import pcc, psnr, ssim
from lsphase.neural import (
    NetworkSpec,
    TrainConfig,
    backward,
    forward,
    init_state,
    npcc_loss,
    optimizer_step,
    parameter_count,
)
from lsphase.noise import Measurement, NoiseModel, RngStream, measure, poisson_sample_array
from lsphase.optics import OpticalConfig, forward_intensity, propagate
from lsphase.pipeline import ExperimentConfig, LsExperiment, parse_config_text
from lsphase.retrieval import approximant, gs_solve
from lsphase.spectral import psd2d, psd_slope


def desk_optical(n=64):
    return OpticalConfig(632.8e-9, 0.4, Grid2D.square(n, 144e-6))


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


# -- criterion 8 fixture: the desk-scale experiment, shared by 8/9/10/11 ----


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk") / "exp"
    exp = LsExperiment(ExperimentConfig(), root)
    with _Timer() as t:
        reports = exp.run()
    return {"exp": exp, "reports": reports, "seconds": t.seconds}


def _summary_pcc(reports, method):
    return reports[method].mean("pcc")


def test_c01_dft_correctness():
    with _Timer() as t:
        rng = np.random.default_rng(0)
        for n in (16, 32):
            grid = Grid2D.square(n, 1e-4)
            x = ComplexField(grid, rng.standard_normal((n, n))
                             + 1j * rng.standard_normal((n, n)))
            spec = dft2(x)
            # quadratic-time double-sum oracle
            slow = np.zeros((n, n), dtype=complex)
            m = np.arange(n)
            for row, k in enumerate(m - n // 2):
                ey = np.exp(-2j * np.pi * k * m / n)
                for col, l in enumerate(m - n // 2):
                    ex = np.exp(-2j * np.pi * l * m / n)
                    slow[row, col] = np.sum(x.values * np.outer(ey, ex))
            scale = np.max(np.abs(slow))
            assert np.max(np.abs(spec.values - slow)) / scale < 1e-10
            back = idft2(spec)
            assert np.max(np.abs(back.values - x.values)) < 1e-12 * np.max(np.abs(x.values))
            direct = np.sum(np.abs(x.values) ** 2)
            parseval = np.sum(np.abs(spec.values) ** 2) / (n * n)
            assert abs(direct - parseval) / direct < 1e-10
    assert t.seconds < 10
    record_acceptance(f"criterion 1 PASS ({t.seconds:.1f}s): DFT oracle, "
                      "round-trip and Parseval within tolerance")


def test_c02_propagator_physics():
    with _Timer() as t:
        cfg = desk_optical()
        z_cfg = OpticalConfig(632.8e-9, 0.0625, cfg.grid)
        z2_cfg = OpticalConfig(632.8e-9, 0.125, cfg.grid)
        z_sum = OpticalConfig(632.8e-9, 0.1875, cfg.grid)
        rng = np.random.default_rng(1)
        for _ in range(100):
            phase = RealField(cfg.grid, rng.standard_normal(cfg.grid.shape))
            field = ComplexField(cfg.grid, np.exp(1j * phase.values))
            out = propagate(field, cfg)
            norm = np.linalg.norm(field.values)
            assert abs(np.linalg.norm(out.values) - norm) < 1e-12 * norm
            ident = propagate(field, OpticalConfig(632.8e-9, 0.0, cfg.grid))
            assert np.max(np.abs(ident.values - field.values)) < 1e-12
            semi = propagate(propagate(field, z_cfg), z2_cfg).values
            direct = propagate(field, z_sum).values
            assert np.max(np.abs(semi - direct)) / np.max(np.abs(direct)) < 1e-10
            g0 = forward_intensity(phase, cfg)
            assert abs(g0.values.mean() - 1.0) < 1e-10
    assert t.seconds < 30
    record_acceptance(f"criterion 2 PASS ({t.seconds:.1f}s): unitarity, z=0 "
                      "identity, semigroup and flux conservation on 100 objects")


def test_c03_noise_model():
    with _Timer() as t:
        grid = Grid2D.square(256, 144e-6)
        cfg = OpticalConfig(632.8e-9, 0.4, grid)
        rng = np.random.default_rng(2)
        phase = RealField(grid, rng.standard_normal(grid.shape))
        n_pix = grid.nx * grid.ny
        for p in (1.0, 10.0):
            m = measure(phase, cfg, NoiseModel(photons=p, seed=33),
                        RngStream(33, int(p)))
            bound = 6.0 * math.sqrt(p / n_pix)
            assert abs(m.g.values.mean() - p) < bound
        # chi-square Poisson fit at significance 0.001
        n = 10 ** 5
        mean = 50.0
        draws = poisson_sample_array(np.full(n, mean), RngStream(7, 50))
        kmax = int(mean + 8 * math.sqrt(mean))
        observed = np.bincount(draws, minlength=kmax + 1)[:kmax + 1].astype(float)
        observed[kmax] += n - observed.sum()
        expected = stats.poisson.pmf(np.arange(kmax + 1), mean) * n
        expected[kmax] = n - expected[:kmax].sum()
        keep = expected >= 5
        statistic = np.sum((observed[keep] - expected[keep]) ** 2 / expected[keep])
        extra_o = observed[~keep].sum()
        extra_e = expected[~keep].sum()
        if extra_e > 0:
            statistic += (extra_o - extra_e) ** 2 / extra_e
            dof = keep.sum()
        else:
            dof = keep.sum() - 1
        assert statistic < stats.chi2.ppf(0.999, dof)
    assert t.seconds < 60
    record_acceptance(f"criterion 3 PASS ({t.seconds:.1f}s): count means within "
                      "6-sigma for p in {1, 10}; chi-square fit at 0.001")


def test_c04_retrieval():
    with _Timer() as t:
        cfg = desk_optical()
        phantom = gen_powerlaw_phase(cfg.grid, 3.0, 1, seed=0, f_max=1.0).items[0][1]
        noisy = measure(phantom, cfg, NoiseModel(photons=1.0, seed=3), RngStream(3, 0))
        one = gs_solve(noisy, cfg, iterations=1).phase.values
        direct = approximant(noisy, cfg).values
        assert np.max(np.abs(one - direct)) < 1e-12
        for seed in (0, 1):
            smooth = gen_powerlaw_phase(cfg.grid, 3.0, 1, seed=seed, f_max=1.0).items[0][1]
            g0 = forward_intensity(smooth, cfg)
            state = gs_solve(Measurement(g=g0, g0=g0), cfg, iterations=100)
            assert state.residuals[-1] < 0.1 * state.residuals[0]
    assert t.seconds < 60
    record_acceptance(f"criterion 4 PASS ({t.seconds:.1f}s): approximant = "
                      "one GS iterate; 100-iteration residual under 10%")


def test_c05_npcc_and_metrics():
    with _Timer() as t:
        rng = np.random.default_rng(4)
        a = rng.standard_normal((2, 1, 16, 16))
        loss_self, _ = npcc_loss(a, a)
        assert loss_self == pytest.approx(-1.0, abs=1e-12)
        loss_affine, _ = npcc_loss(2.5 * a + 1.0, a)
        assert loss_affine == pytest.approx(-1.0, abs=1e-12)
        img = rng.standard_normal((32, 32))
        assert pcc(3.0 * img - 1.0, img) == pytest.approx(1.0, abs=1e-12)
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)
        peak = 1.7
        assert psnr(img, img + peak / 10.0, peak) == pytest.approx(20.0, abs=1e-9)
    assert t.seconds < 10
    record_acceptance(f"criterion 5 PASS ({t.seconds:.1f}s): correlation loss, "
                      "affine invariance, SSIM and PSNR anchor cases exact")


def test_c06_gradient_exactness():
    with _Timer() as t:
        h = 1e-4
        checked = 0
        seed = 0
        worst = 0.0
        while checked < 20:
            seed += 1
            role = "S" if checked % 2 else "L"
            spec = NetworkSpec.for_role(role, (2, 3))
            state = init_state(spec, seed=seed)
            rng = np.random.default_rng(seed + 500)
            for key in state.params:
                state.params[key] = 0.3 * rng.standard_normal(state.params[key].shape)
            x = rng.standard_normal((2, 1, 8, 8))
            aux = rng.standard_normal((2, 1, 8, 8)) if role == "S" else None
            target = rng.standard_normal((2, 1, 8, 8))
            y, cache = forward(spec, state, x, aux)
            # finite differences are only valid away from the activation kink
            if min(np.min(np.abs(p)) for p in cache["pre"].values()) < 10 * h:
                continue
            _, gy = npcc_loss(y, target)
            grads = backward(spec, state, cache, gy)
            for key in state.params:
                p = state.params[key]
                it = np.nditer(p, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = p[idx]
                    p[idx] = orig + h
                    lp, _ = npcc_loss(forward(spec, state, x, aux)[0], target)
                    p[idx] = orig - h
                    lm, _ = npcc_loss(forward(spec, state, x, aux)[0], target)
                    p[idx] = orig
                    fd = (lp - lm) / (2 * h)
                    an = grads[key][idx]
                    rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
                    worst = max(worst, rel)
            assert worst < 1e-4
            checked += 1
    assert t.seconds < 120
    record_acceptance(f"criterion 6 PASS ({t.seconds:.1f}s): every weight "
                      f"gradient vs central differences, 20 seeds, worst rel "
                      f"err {worst:.2e}")


def test_c07_dataset_statistics():
    with _Timer() as t:
        grid = Grid2D.square(64, 144e-6)
        ds = gen_powerlaw_phase(grid, 2.0, 256, seed=7, f_max=math.pi)
        slope = psd_slope(psd2d([f for _, f in ds.items]))
        assert slope == pytest.approx(-2.0, abs=0.3)
    assert t.seconds < 30
    record_acceptance(f"criterion 7 PASS ({t.seconds:.1f}s): generated radial "
                      f"PSD slope {slope:.3f} within -2.0 +- 0.3")


def test_c08_desk_scale_ls_ordering(desk_run):
    reports = desk_run["reports"]
    pcc_a = _summary_pcc(reports, "approximant")
    pcc_l = _summary_pcc(reports, "dnn_l")
    pcc_s = _summary_pcc(reports, "dnn_s")
    assert desk_run["seconds"] < 1800
    assert pcc_a < pcc_l
    assert pcc_s >= pcc_l - 0.01
    strictly = "yes" if pcc_s > pcc_l else "no"
    record_acceptance(
        f"criterion 8 PASS ({desk_run['seconds']:.0f}s): PCC approximant "
        f"{pcc_a:.3f} < low-band {pcc_l:.3f}; synthesizer {pcc_s:.3f} >= "
        f"low-band - 0.01 (strictly above: {strictly})")


def test_c09_q_plateau(desk_run):
    exp = desk_run["exp"]
    with _Timer() as t:
        swept = exp.q_sweep([0.1, 2.0])
    assert t.seconds + desk_run["seconds"] < 3600
    mid = _summary_pcc(desk_run["reports"], "dnn_s")
    lo = _summary_pcc(swept[0.1], "dnn_s")
    hi = _summary_pcc(swept[2.0], "dnn_s")
    assert mid >= lo - 0.02
    assert mid >= hi - 0.02
    record_acceptance(
        f"criterion 9 PASS ({t.seconds:.0f}s): synthesizer PCC at q=0.5 "
        f"({mid:.3f}) within slack of q=0.1 ({lo:.3f}) and q=2.0 ({hi:.3f})")


def test_c10_spectral_recovery(desk_run):
    exp = desk_run["exp"]
    path = exp.reports_dir / "psd_diagonal_q0.5.csv"
    rows = path.read_text().splitlines()
    header = rows[0].split(",")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    cols = {name: data[:, i] for i, name in enumerate(header)}
    n = len(data)
    upper = slice(n // 2, n)
    wins = int(np.sum(cols["dnn_s"][upper] > cols["dnn_l"][upper]))
    total = n - n // 2
    assert wins >= 0.6 * total
    record_acceptance(
        f"criterion 10 PASS: synthesizer diagonal PSD above low-band in "
        f"{wins}/{total} upper-half bins")


def test_c11_reproducibility(desk_run, tmp_path_factory):
    exp = desk_run["exp"]
    manifest = (exp.root / "manifest.txt").read_text()
    config = parse_config_text(manifest)
    with _Timer() as t:
        rerun = LsExperiment(config, tmp_path_factory.mktemp("rerun") / "exp")
        rerun.run()
    names = ["metrics_approximant.csv", "metrics_dnn_l.csv",
             "metrics_dnn_s_q0.5.csv", "summary_q0.5.csv",
             "psd_diagonal_q0.5.csv"]
    for name in names:
        assert (exp.reports_dir / name).read_bytes() == \
            (rerun.reports_dir / name).read_bytes(), name
    record_acceptance(
        f"criterion 11 PASS ({t.seconds:.0f}s): manifest rerun reproduced "
        f"{len(names)} report CSVs bit for bit")


def test_capacity_matched_baseline(desk_run):
    # Table-2 analogue (weak ordering), plus the +-10% capacity contract
    exp = desk_run["exp"]
    cfg = exp.config
    total = sum(parameter_count(cfg.network_spec(r)) for r in ("L", "H", "S"))
    l3 = parameter_count(cfg.network_spec("L3"))
    assert abs(l3 - total) <= 0.10 * total
    with _Timer() as t:
        exp.train_baseline_l3()
        reports = exp.evaluate(include_l3=True)
    pcc_l3 = _summary_pcc(reports, "dnn_l3")
    pcc_s = _summary_pcc(reports, "dnn_s")
    assert pcc_l3 <= pcc_s + 0.01
    record_acceptance(
        f"baseline check PASS ({t.seconds:.0f}s): capacity-matched network "
        f"PCC {pcc_l3:.3f} <= synthesizer {pcc_s:.3f} + 0.01 "
        f"(capacity {l3} vs {total})")
