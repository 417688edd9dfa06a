"""Acceptance suite: one pass/fail line per criterion.

Each test appends ``criterion N: PASS|FAIL ...`` to the terminal summary and
prints it immediately, then asserts.  Criteria that share expensive work (the
synthetic ensemble reconstructions) use a module-scoped fixture.
"""
import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest

from mmwsparse import io, metrics, recon, sampling
from mmwsparse.cli import main
from mmwsparse.cnet import cbn_forward
from mmwsparse.geometry import PhantomSpec, PointScattererSet, SystemGeometry, desk_geometry, phantom_scene, random_inclusions
from mmwsparse.physics import adjoint_array, brute_force_echo, forward_array, forward_operator, rma_reconstruct

from conftest import ACCEPTANCE_LINES, crandn
from oracles import finite_difference_check, naive_forward

N_SCENES = 10
N_RANKING = 4
STAT_S = {0.25: 0.5, 0.10: 0.8}
MASK_SEED = 1
# light network for the ensemble comparison; the default network is timed separately
ENSEMBLE_UNTRAINED = dict(hidden=4, n_blocks=5, learning_rate=1e-2, tv_scale=1e-2, iterations=100)


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)
    return ok


def small():
    return SystemGeometry(n_vertical=16, n_horizontal=16, n_range=8)


def test_criterion_01_adjoint_identity():
    geom = small()
    start = time.perf_counter()
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(1000 + trial)
        x, y = crandn(rng, geom.scene_shape), crandn(rng, geom.echo_shape)
        lhs = np.vdot(y, forward_array(x, geom))
        rhs = np.vdot(adjoint_array(y, geom), x)
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 10
    assert report(1, ok, f"worst relative mismatch {worst:.2e} (< 1e-10), {elapsed:.2f} s (< 10 s)")


def test_criterion_02_forward_oracle():
    geom = small()
    start = time.perf_counter()
    worst = 0.0
    for trial in range(3):
        scene = crandn(np.random.default_rng(2000 + trial), geom.scene_shape)
        worst = max(worst, float(np.abs(forward_array(scene, geom) - naive_forward(scene, geom)).max()))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 60
    assert report(2, ok, f"max abs diff vs explicit DFT evaluation {worst:.2e} (< 1e-9), {elapsed:.1f} s (< 60 s)")


def _half_power_width(profile, peak):
    level = profile[peak] / math.sqrt(2)
    lo = hi = peak
    while lo > 0 and profile[lo - 1] >= level:
        lo -= 1
    while hi < len(profile) - 1 and profile[hi + 1] >= level:
        hi += 1
    return hi - lo + 1


def test_criterion_03_point_spread():
    geom = desk_geometry()
    start = time.perf_counter()
    echo = brute_force_echo(PointScattererSet.from_tuples([(0.0, 0.0, geom.standoff_r0, 1.0)]), geom)
    mag = np.abs(rma_reconstruct(echo, geom).data)
    elapsed = time.perf_counter() - start
    peak = np.unravel_index(np.argmax(mag), mag.shape)
    centre = np.array(geom.scene_shape) // 2
    offset = int(np.abs(np.array(peak) - centre).max())
    w_v = _half_power_width(mag[:, peak[1], peak[2]], peak[0])
    w_h = _half_power_width(mag[peak[0], :, peak[2]], peak[1])
    w_r = _half_power_width(mag[peak[0], peak[1], :], peak[2])
    ok = offset <= 1 and max(w_v, w_h) <= 2 and elapsed < 30
    assert report(3, ok, f"peak offset {offset} voxel, -3 dB cross-range width {w_v}x{w_h} voxels (<= 2; range width {w_r}), {elapsed:.2f} s (< 30 s)")


def test_criterion_04_autodiff():
    start = time.perf_counter()
    worst, count = finite_difference_check(hidden=2, n_blocks=1, size=8, h=1e-4)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60
    assert report(4, ok, f"worst relative error {worst:.2e} over {count} real parameters (< 1e-4), {elapsed:.1f} s (< 60 s)")


def test_criterion_05_cbn_whitening():
    worst = 0.0
    for trial in range(10):
        rng = np.random.default_rng(5000 + trial)
        mixing = rng.standard_normal((2, 2)) + 2 * np.eye(2)
        raw = rng.standard_normal((2, 8, 3, 4, 4))
        pairs = np.einsum("ij,jbchw->ibchw", mixing, raw)
        x = pairs[0] + 1j * pairs[1] + crandn(rng, (1, 3, 1, 1))
        out = cbn_forward(x, np.eye(2), np.zeros(3), eps=1e-12)
        for c in range(3):
            flat = out[:, c].reshape(-1)
            flat = flat - flat.mean()
            cov = np.cov(np.stack([flat.real, flat.imag]), bias=True)
            worst = max(worst, float(np.abs(cov - np.eye(2)).max()))
    assert report(5, worst < 1e-6, f"max |cov - I| {worst:.2e} over 10 batches x 3 channels (< 1e-6)")


# --- synthetic ensemble ---------------------------------------------------------------


def _scene(geom, seed):
    spec = PhantomSpec.for_geometry(geom)
    rng = np.random.default_rng(seed)
    return phantom_scene(PhantomSpec.for_geometry(geom, inclusions=random_inclusions(rng, spec, 2)), seed)


@pytest.fixture(scope="module")
def ensemble():
    geom = desk_geometry()
    seeds = [sampling.derive_seed(2024, i) for i in range(N_RANKING + N_SCENES)]
    echoes = [forward_operator(_scene(geom, s), geom) for s in seeds]
    ranking = sampling.compute_ranking(echoes[:N_RANKING], geom)
    held = echoes[N_RANKING:]
    refs = [metrics.max_projection(rma_reconstruct(e, geom)) for e in held]
    return geom, ranking, held, refs


def test_criterion_06_sampling_statistics(ensemble):
    geom, ranking, _, _ = ensemble
    budget = sampling.element_budget(0.25, geom.n_elements)
    stat, rand, exact = [], [], True
    for seed in range(20):
        m_s = sampling.design_mask(ranking, 0.5, 0.25, seed)
        m_r = sampling.random_mask(geom, 0.25, seed)
        exact &= m_s.count == budget and m_r.count == budget
        stat.append(sampling.mean_rank(m_s, ranking))
        rand.append(sampling.mean_rank(m_r, ranking))
    ok = exact and np.mean(stat) < np.mean(rand)
    assert report(6, ok, f"mean rank statistical {np.mean(stat):.1f} vs random {np.mean(rand):.1f}; all 40 masks have exactly {budget} elements: {exact}")


@pytest.fixture(scope="module")
def comparison(ensemble):
    """PSNR of every (ratio, mask type, method, scene) cell plus timing."""
    geom, ranking, held, refs = ensemble
    configs = {
        "rma": recon.ReconConfig(method="rma"),
        "admm": recon.ReconConfig(method="admm"),
        "untrained": recon.ReconConfig(method="untrained", **ENSEMBLE_UNTRAINED),
    }
    psnr, losses = {}, []
    start = time.perf_counter()
    for ratio, s in STAT_S.items():
        masks = {
            "statistical": sampling.design_mask(ranking, s, ratio, MASK_SEED),
            "random": sampling.random_mask(geom, ratio, MASK_SEED),
        }
        for kind, mask in masks.items():
            for method, cfg in configs.items():
                values = []
                for echo, ref in zip(held, refs):
                    rep = recon.reconstruct(sampling.apply_mask(echo, mask), mask, geom, cfg)
                    values.append(metrics.evaluate(ref, metrics.max_projection(rep.volume)).psnr)
                    if method == "untrained":
                        losses.append(rep.losses)
                psnr[(ratio, kind, method)] = float(np.mean(values))
    return psnr, losses, time.perf_counter() - start


def test_criterion_07_method_ordering(comparison):
    psnr, _, elapsed = comparison
    parts, ok = [], True
    for ratio in STAT_S:
        u, a, r = (psnr[(ratio, "statistical", m)] for m in ("untrained", "admm", "rma"))
        parts.append(f"SR {ratio:.0%}: untrained {u:.2f} / ADMM {a:.2f} / RMA {r:.2f} dB")
        for m in ("untrained", "admm", "rma"):
            st, rd = psnr[(ratio, "statistical", m)], psnr[(ratio, "random", m)]
            parts.append(f"{m} stat {st:.2f} vs random {rd:.2f}")
            ok &= st >= rd
        ok &= u >= a >= r
    ok &= elapsed < 30 * 60
    assert report(7, ok, "; ".join(parts) + f"; {elapsed / 60:.1f} min (< 30 min)")


def test_criterion_08_reported_pair():
    value = metrics.psnr_from_rmse(22.83)
    ok = abs(value - 20.96) < 0.005 and abs(value - 21.04) < 0.1
    assert report(8, ok, f"20 log10(255 / 22.83) = {value:.3f} dB, reported 21.04 dB, gap {abs(value - 21.04):.3f} (< 0.1)")


def test_criterion_09_convergence(comparison, ensemble):
    _, losses, _ = comparison
    geom, _, held, _ = ensemble
    decreasing = all(trace[99] < trace[0] for trace in losses)
    mask = sampling.design_mask(ensemble[1], 0.5, 0.25, MASK_SEED)
    start = time.perf_counter()
    rep = recon.untrained_reconstruct(sampling.apply_mask(held[0], mask), mask, geom, recon.ReconConfig())
    elapsed = time.perf_counter() - start
    decreasing &= rep.losses[99] < rep.losses[0]
    ok = decreasing and elapsed < 300
    assert report(9, ok, f"loss[100] < loss[1] on all {len(losses) + 1} runs: {decreasing}; default 64x64x16 / 32-channel / 100-iteration run {elapsed:.0f} s (< 300 s)")


def _unimodal(curve):
    peak = int(np.argmax(curve))
    return all(np.diff(curve[: peak + 1]) >= 0) and all(np.diff(curve[peak:]) <= 0)


def test_criterion_10_sweep(ensemble):
    geom, ranking, held, refs = ensemble
    grid = [0.0, 0.2, 0.4, 0.6, 0.8]
    result = sampling.sweep_sparsity(
        [], geom, [0.25, 0.10], grid, lambda e: recon.rma_zero_fill(e, None, geom).volume,
        [rma_reconstruct(e, geom) for e in held], held_out=held, seed=MASK_SEED, ranking=ranking,
    )
    shapes = {r: _unimodal(result.psnr[i]) for i, r in enumerate(result.ratios)}
    best = result.best_s()
    curves = "; ".join(
        f"SR {r:.0%}: " + ", ".join(f"S={s:g} {p:.2f}" for s, p in zip(grid, result.psnr[i])) + f" -> best S {best[r]:g}"
        for i, r in enumerate(result.ratios)
    )
    assert report(10, all(shapes.values()), f"unimodal PSNR curves {shapes}; {curves}")


def _digests(root: Path):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file() and "manifest" not in p.name
    }


def _pipeline(out: Path, cfg: Path):
    steps = [
        ["simulate", "--config", str(cfg), "--seed", "77", "--out", str(out / "sim")],
        ["rank", str(out / "sim"), "--out", str(out / "rank")],
        ["mask", str(out / "rank" / "ranking.rank"), "--ratio", "0.25", "--s", "0.5", "--seed", "3", "--out", str(out / "mask")],
        ["mask", "--random", "--ratio", "0.25", "--config", str(cfg), "--seed", "3", "--out", str(out / "mask"), "--name", "random.mask"],
    ]
    for method in recon.METHODS:
        steps.append(["reconstruct", str(out / "sim" / "echo_0000.cube"), "--mask", str(out / "mask" / "mask.mask"),
                      "--method", method, "--config", str(cfg), "--seed", "5", "--out", str(out / "rec")])
    steps.append(["metrics", str(out / "sim" / "scenes" / "scene_0000.cube"), str(out / "rec" / "echo_0000_admm.cube"),
                  "--csv", str(out / "metrics.csv")])
    steps.append(["sweep", str(out / "sim"), "--ratios", "0.25,0.1", "--s-grid", "0,0.5", "--seed", "9", "--out", str(out / "sweep")])
    return [main(argv) for argv in steps]


def _round_trips(root: Path) -> list[str]:
    readers = {
        ".cube": (io.read_cube, io.cube_bytes),
        ".mask": (io.read_mask, io.mask_bytes),
        ".rank": (io.read_ranking, io.ranking_bytes),
        ".pgm": (io.read_pgm, io.pgm_bytes),
        ".geom": (io.read_config, lambda d: io.format_config(d).encode()),
    }
    bad = []
    for path in sorted(root.rglob("*")):
        if path.suffix in readers:
            read, write = readers[path.suffix]
            if write(read(path)) != path.read_bytes():
                bad.append(str(path.relative_to(root)))
    return bad


def test_criterion_11_determinism_and_round_trip(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_vertical = 24\nn_horizontal = 24\nn_range = 8\nn_freq = 12\nensemble_size = 3\n"
                   "iterations = 5\nhidden = 4\nn_blocks = 1\nadmm_iterations = 3\ncg_iterations = 5\n")
    codes = _pipeline(tmp_path / "a", cfg) + _pipeline(tmp_path / "b", cfg)
    da, db = _digests(tmp_path / "a"), _digests(tmp_path / "b")
    identical = da == db and len(da) > 15
    bad = _round_trips(tmp_path / "a")
    ok = all(c == 0 for c in codes) and identical and not bad
    assert report(11, ok, f"{len(codes)} commands exit 0: {all(c == 0 for c in codes)}; {len(da)} artifacts byte-identical across reruns: {identical}; "
                          f"round-trip failures: {bad or 'none'}")
