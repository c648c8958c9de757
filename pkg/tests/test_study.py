import dataclasses
import math

import numpy as np
import pytest

from elongate import (
    CrossSection,
    Load,
    SolveOptions,
    SweepConfig,
    SweepRecord,
    cell_gradients,
    convergence_verdicts,
    decay_profile,
    extend_vertical,
    fit_rate,
    lp_norm_p,
    make_density,
    power_rate_target,
    records_to_csv,
    region_cells,
    run_sweep,
)
from elongate.study import SWEEP_CSV_HEADER, thread_budget

CS1 = CrossSection("box", 1)


def _sweep_config(**overrides):
    base = dict(
        cross_section=CS1,
        vertical_halfwidths=(1.0,),
        ells=(2.0, 3.0, 4.0),
        target_h=1 / 8,
        density=make_density("quadratic", r=1, n=2),
        load=Load.constant(2.0),
        options=SolveOptions(grad_tol=1e-10),
        ell0=1.0,
    )
    base.update(overrides)
    return SweepConfig(**base)


def test_fit_rate_exact_exponential():
    pts = [(ell, math.exp(-0.5 * ell)) for ell in range(1, 9)]
    fit = fit_rate(pts, "exponential")
    assert fit.ok
    assert fit.exponent == pytest.approx(0.5, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_rate_exact_power():
    pts = [(ell, ell**-3.0) for ell in range(1, 9)]
    fit = fit_rate(pts, "power")
    assert fit.ok
    assert fit.exponent == pytest.approx(-3.0, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.C == pytest.approx(1.0, rel=1e-10)


def test_fit_rate_floor_excludes_points():
    pts = [(1.0, 1.0), (2.0, 0.1), (3.0, 0.01), (4.0, 5e-9)]
    fit = fit_rate(pts, "power", floor=1e-8)
    assert fit.n_points == 3


def test_fit_rate_insufficient_data():
    fit = fit_rate([(1.0, 1.0), (2.0, 0.5)], "exponential")
    assert not fit.ok
    assert fit.n_points == 2
    assert math.isnan(fit.exponent)


def test_fit_rate_unknown_model():
    with pytest.raises(ValueError):
        fit_rate([(1.0, 1.0)], "spline")


def test_power_rate_target_p4():
    assert power_rate_target(make_density("p-dirichlet", 4.0, r=1, n=2), 1) == pytest.approx(-3.0)


def test_run_sweep_quadratic_errors_decrease():
    res = run_sweep(_sweep_config())
    assert len(res.records) == 3
    assert all(r.converged for r in res.records)
    errs = [r.err_grad_p for r in res.records]
    assert errs[0] > errs[1] > errs[2]
    assert all(r.err_w1p >= r.err_grad_p >= 0 for r in res.records)
    assert [r.ell for r in res.records] == [2.0, 3.0, 4.0]


def test_run_sweep_zero_load_all_errors_zero():
    res = run_sweep(_sweep_config(load=Load.constant(0.0)))
    for r in res.records:
        assert r.err_grad_p == 0.0
        assert r.err_w1p == 0.0
        assert r.total_grad_energy == 0.0


def test_run_sweep_full_domain_region():
    res = run_sweep(_sweep_config(ells=(2.0,), ell0=2.0))
    rec = res.records[0]
    # measuring region includes the lateral boundary layers
    assert rec.hgrad_p > 1e-4


def test_run_sweep_deterministic():
    r1 = run_sweep(_sweep_config()).records
    r2 = run_sweep(_sweep_config()).records
    for a, b in zip(r1, r2):
        assert a.iters == b.iters
        assert abs(a.err_grad_p - b.err_grad_p) <= 1e-12 * max(1.0, a.err_grad_p)
        assert abs(a.J_ell - b.J_ell) <= 1e-12 * max(1.0, abs(a.J_ell))


def test_run_sweep_parallel_matches_sequential():
    seq = run_sweep(_sweep_config(warm_start=False, ells=(2.0, 3.0))).records
    ref = run_sweep(_sweep_config(ells=(2.0, 3.0))).records
    for a, b in zip(seq, ref):
        assert abs(a.err_grad_p - b.err_grad_p) <= 1e-10 * max(1.0, a.err_grad_p)


def test_sweep_config_validation():
    with pytest.raises(ValueError):
        _sweep_config(ells=(3.0, 2.0))
    with pytest.raises(ValueError):
        _sweep_config(ells=())
    with pytest.raises(ValueError):
        _sweep_config(ell0=5.0)


def test_decay_profile_partition_and_monotonicity():
    res = run_sweep(_sweep_config(ells=(4.0,)))
    u, grid, w = res.final_field, res.final_grid, res.limit
    ext = extend_vertical(w, grid)
    prof = decay_profile(u, ext, 2.0, [1.0, 2.0, 3.0, 4.0])
    assert np.all(np.diff(prof.g) >= -1e-15)
    # the value at the full level equals the directly assembled quantity
    gu, gl = cell_gradients(u), cell_gradients(ext)
    full = region_cells(grid, "core", 4.0)
    expected = lp_norm_p(grid, gu[..., :1], 2.0, full) + lp_norm_p(
        grid, gu[..., 1:] - gl[..., 1:], 2.0, full
    )
    assert prof.g[-1] == pytest.approx(expected, rel=1e-13)
    csv = prof.to_csv()
    assert csv.splitlines()[0] == "t,g"
    assert len(csv.splitlines()) == 5


def test_decay_profile_validation():
    res = run_sweep(_sweep_config(ells=(2.0,)))
    ext = extend_vertical(res.limit, res.final_grid)
    with pytest.raises(ValueError):
        decay_profile(res.final_field, ext, 2.0, [])
    with pytest.raises(ValueError):
        decay_profile(res.final_field, ext, 2.0, [-1.0, 1.0])


def _fake_records(ells, errs, hgrads=None, tge=None):
    hgrads = hgrads if hgrads is not None else [e / 3 for e in errs]
    tge = tge if tge is not None else [5.0 * ell for ell in ells]
    return [
        SweepRecord(
            ell=ell, ell0=1.0, h_horiz=0.1, h_vert=0.1, nodes=100, iters=10, converged=True,
            J_ell=-1.0, total_grad_energy=t, err_grad_p=e, err_w1p=1.5 * e, hgrad_p=hg,
            runtime_ms=1.0,
        )
        for ell, e, hg, t in zip(ells, errs, hgrads, tge)
    ]


def test_verdicts_quadratic_applicability():
    d = make_density("quadratic", r=1, n=2)
    ells = list(range(2, 10))
    errs = [math.exp(-2.0 * ell) for ell in ells]
    records = _fake_records(ells, errs)
    fits = {
        "power": fit_rate([(r.ell, r.err_w1p) for r in records], "power"),
        "exponential": fit_rate([(r.ell, r.err_grad_p ** 0.5) for r in records], "exponential"),
    }
    verdicts = {v.name: v for v in convergence_verdicts(records, d, 1, fits)}
    assert verdicts["power_rate"].applicable is False
    assert verdicts["exponential_rate"].applicable is True
    assert verdicts["exponential_rate"].passed is True
    assert verdicts["coarse_energy_scaling"].passed is True
    assert verdicts["interior_error_bounded"].passed is True
    assert verdicts["horizontal_gradient_vanishes"].passed is True


def test_verdicts_p4_power_rate():
    d = make_density("p-dirichlet", 4.0, r=1, n=2)
    ells = list(range(2, 10))
    errs = [0.5 * ell**-4.0 for ell in ells]
    records = _fake_records(ells, errs, tge=[5.0 * ell for ell in ells])
    fits = {"power": fit_rate([(r.ell, r.err_w1p) for r in records], "power")}
    verdicts = {v.name: v for v in convergence_verdicts(records, d, 1, fits)}
    assert verdicts["exponential_rate"].applicable is False
    v = verdicts["power_rate"]
    assert v.applicable and v.passed is True
    assert v.measured["target"] == pytest.approx(-3.0)


def test_verdicts_power_rate_fails_when_decay_too_slow():
    d = make_density("p-dirichlet", 4.0, r=1, n=2)
    ells = list(range(2, 10))
    errs = [0.5 * ell**-1.0 for ell in ells]
    records = _fake_records(ells, errs)
    fits = {"power": fit_rate([(r.ell, r.err_w1p) for r in records], "power")}
    verdicts = {v.name: v for v in convergence_verdicts(records, d, 1, fits)}
    assert verdicts["power_rate"].passed is False


def test_verdicts_power_rate_needs_fit_quality():
    # a steep but badly scattered fit (r2 < 0.9) cannot pass
    d = make_density("p-dirichlet", 4.0, r=1, n=2)
    rng = np.random.default_rng(0)
    ells = list(range(2, 12))
    errs = [ell**-4.0 * 10.0 ** rng.uniform(-2, 2) for ell in ells]
    records = _fake_records(ells, errs)
    fit = fit_rate([(r.ell, r.err_w1p) for r in records], "power")
    assert fit.r2 < 0.9
    verdicts = {v.name: v for v in convergence_verdicts(records, d, 1, {"power": fit})}
    assert verdicts["power_rate"].passed is False


def test_verdicts_pass_at_tolerance_floor():
    # zero-load style data: every error sits at/below the fit floor
    d = make_density("quadratic", r=1, n=2)
    ells = list(range(2, 7))
    errs = [1e-20] * len(ells)
    records = _fake_records(ells, errs, tge=[0.0] * len(ells))
    floor = 1e-8
    fits = {
        "power": fit_rate([(r.ell, r.err_w1p) for r in records], "power", floor),
        "exponential": fit_rate([(r.ell, r.err_grad_p ** 0.5) for r in records], "exponential", floor),
    }
    verdicts = {v.name: v for v in convergence_verdicts(records, d, 1, fits)}
    assert verdicts["exponential_rate"].passed is True
    assert "floor" in verdicts["exponential_rate"].note
    assert verdicts["coarse_energy_scaling"].passed is True


def test_verdicts_indeterminate_with_insufficient_fit():
    d = make_density("quadratic", r=1, n=2)
    records = _fake_records([2.0, 3.0], [1e-2, 1e-3])
    fits = {"exponential": fit_rate([(r.ell, r.err_grad_p ** 0.5) for r in records], "exponential")}
    verdicts = {v.name: v for v in convergence_verdicts(records, d, 1, fits)}
    assert verdicts["exponential_rate"].passed is None
    assert verdicts["coarse_energy_scaling"].passed is None


def test_verdicts_exclude_nonconverged_records():
    d = make_density("quadratic", r=1, n=2)
    records = _fake_records(list(range(2, 8)), [math.exp(-ell) for ell in range(2, 8)])
    records[3] = dataclasses.replace(records[3], converged=False, err_grad_p=999.0, hgrad_p=999.0)
    fits = {
        "exponential": fit_rate(
            [(r.ell, r.err_grad_p ** 0.5) for r in records if r.converged], "exponential"
        )
    }
    verdicts = {v.name: v for v in convergence_verdicts(records, d, 1, fits)}
    assert verdicts["interior_error_bounded"].passed is True


def test_records_csv_schema():
    records = _fake_records([2.0, 3.0], [1e-2, 1e-3])
    csv = records_to_csv(records)
    lines = csv.strip().splitlines()
    assert lines[0] == SWEEP_CSV_HEADER
    assert len(lines) == 3
    row = lines[1].split(",")
    assert len(row) == len(SWEEP_CSV_HEADER.split(","))
    assert float(row[0]) == 2.0
    assert row[6] == "1"


def test_thread_budget_env(monkeypatch):
    monkeypatch.setenv("ELONGATE_THREADS", "3")
    assert thread_budget() == 3
    monkeypatch.setenv("ELONGATE_THREADS", "junk")
    assert thread_budget() >= 1
    monkeypatch.delenv("ELONGATE_THREADS")
    assert thread_budget() >= 1
