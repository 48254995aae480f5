import io as pyio
import json

import numpy as np
import pytest

from gs4d import synthetic
from gs4d.errors import NumericalError, ParameterError, TrainingError
from gs4d.io import save_trainer_checkpoint, trainer_from_checkpoint
from gs4d.rng import CounterRng
from gs4d.scene import init_unit_sphere, inverse_sigmoid
from gs4d.trainer import (AdamState, TrainConfig, Trainer, adam_step,
                          densify_and_prune, sample_subsequence,
                          sample_subsequence_indices)


# -- Adam ---------------------------------------------------------------------

def test_adam_zero_grad_keeps_params():
    p = np.array([1.0, -2.0], dtype=np.float32)
    st = AdamState.zeros(p.shape)
    out = adam_step(st, p, np.zeros_like(p), lr=0.1)
    assert np.array_equal(out, p)
    assert st.step == 1


def test_adam_first_step_is_signed_lr():
    p = np.array([0.0, 0.0], dtype=np.float64)
    st = AdamState.zeros(p.shape)
    out = adam_step(st, p, np.array([0.3, -7.0]), lr=0.01)
    assert np.allclose(out, [-0.01, 0.01], atol=1e-8)


def test_adam_converges_on_quadratic():
    x = np.array([1.0], dtype=np.float64)
    st = AdamState.zeros(x.shape)
    for _ in range(100):
        x = adam_step(st, x, 2.0 * x, lr=0.1)
    assert abs(x[0]) < 0.05


def test_adam_nan_grad_names_group():
    p = np.zeros(3, dtype=np.float32)
    st = AdamState.zeros(p.shape)
    with pytest.raises(NumericalError, match="positions"):
        adam_step(st, p, np.array([1.0, np.nan, 0.0]), lr=0.1, group="positions")


# -- config ----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(static_iterations=0)
    with pytest.raises(ParameterError):
        TrainConfig(temporal_fraction=1.5)
    with pytest.raises(ParameterError):
        TrainConfig(prune_opacity_threshold=0.0)
    with pytest.raises(ParameterError):
        TrainConfig(sh_degree=2)


def test_config_unknown_keys_rejected():
    with pytest.raises(ParameterError, match="densify_intreval"):
        TrainConfig.from_dict({"densify_intreval": 10})


def test_config_file_round_trip(tmp_path):
    cfg = TrainConfig(seed=7, omega_tv=0.5)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert TrainConfig.from_file(p) == cfg


def test_config_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 11\nomega_sds = 0.5\nfine_iterations = 7\n')
    cfg = TrainConfig.from_file(p)
    assert cfg.seed == 11 and cfg.omega_sds == 0.5 and cfg.fine_iterations == 7


# -- subsequence sampling ----------------------------------------------------------

def test_subsequence_valid_starts_for_rate4():
    cfg = TrainConfig()
    rng = CounterRng(1, stream=101)
    starts = set()
    for _ in range(400):
        idx = sample_subsequence_indices(16, cfg, rng)
        assert len(idx) == 4
        assert np.all(np.diff(idx) == idx[1] - idx[0])
        r = idx[1] - idx[0]
        assert r in (1, 2, 4)
        if r == 4:
            starts.add(idx[0])
        assert idx[-1] <= 15
    assert starts == {0, 1, 2, 3}


def test_subsequence_infeasible_rate_falls_back():
    cfg = TrainConfig()
    rng = CounterRng(2, stream=101)
    for _ in range(200):
        idx = sample_subsequence_indices(4, cfg, rng)
        assert idx[1] - idx[0] == 1  # rates 2 and 4 infeasible for L=4, T=4
        assert len(idx) == 4


def test_subsequence_times_strictly_increasing():
    cfg = TrainConfig()
    rng = CounterRng(3, stream=101)
    times = sample_subsequence(16, cfg, rng)
    assert np.all(np.diff(times) > 0)
    assert times[0] >= 0.0 and times[-1] <= 1.0


def test_subsequence_coverage_histogram():
    cfg = TrainConfig()
    rng = CounterRng(4, stream=101)
    counts = np.zeros(16, dtype=np.int64)
    for _ in range(100_000):
        counts[sample_subsequence_indices(16, cfg, rng)] += 1
    assert np.all(counts > 0)


def test_subsequence_requires_two_timesteps():
    with pytest.raises(ParameterError):
        sample_subsequence_indices(1, TrainConfig(), CounterRng(0))


# -- densify / prune -----------------------------------------------------------------

def small_cfg(**kw):
    return TrainConfig(init_gaussians=8, **kw)


def opt_rows(states):
    return {name: len(st.m) for name, st in states.items()}


def make_states(n):
    return {name: AdamState.zeros((n, k) if k > 1 else (n,))
            for name, k in (("positions", 3), ("rotations", 4), ("log_scales", 3),
                            ("opacity_logits", 1), ("color_logits", 3))}


def test_densify_noop_below_threshold():
    s = init_unit_sphere(10, seed=1)
    cfg = small_cfg()
    out = densify_and_prune(s, np.zeros(10), cfg, make_states(10))
    assert len(out) == 10
    assert np.array_equal(out.positions, s.positions)


def test_densify_clone_adds_one():
    s = init_unit_sphere(10, seed=1)  # scale 0.05 > 0.01 -> "large" by default
    s.log_scales[:] = np.log(0.005)   # make all small
    grads = np.zeros(10)
    grads[4] = 1.0
    states = make_states(10)
    out = densify_and_prune(s, grads, small_cfg(), states)
    assert len(out) == 11
    assert all(n == 11 for n in opt_rows(states).values())
    # clone sits one dominant-axis sigma away
    d = np.linalg.norm(out.positions[-1] - s.positions[4])
    assert d == pytest.approx(0.005, rel=1e-5)


def test_densify_split_shrinks_scale():
    s = init_unit_sphere(10, seed=2)  # scales 0.05 -> large
    grads = np.zeros(10)
    grads[7] = 1.0
    states = make_states(10)
    out = densify_and_prune(s, grads, small_cfg(), states)
    assert len(out) == 11  # one removed, two added
    children = out.positions[-2:]
    assert np.allclose(np.exp(out.log_scales[-2:]), 0.05 / 1.6, rtol=1e-5)
    mid = 0.5 * (children[0] + children[1])
    assert np.allclose(mid, s.positions[7], atol=1e-6)


def test_prune_removes_transparent():
    s = init_unit_sphere(10, seed=3)
    s.opacity_logits[3] = inverse_sigmoid(0.001)
    states = make_states(10)
    out = densify_and_prune(s, np.zeros(10), small_cfg(), states)
    assert len(out) == 9
    assert all(n == 9 for n in opt_rows(states).values())


def test_prune_to_empty_raises():
    s = init_unit_sphere(5, seed=4)
    s.opacity_logits[:] = inverse_sigmoid(0.001)
    with pytest.raises(TrainingError):
        densify_and_prune(s, np.zeros(5), small_cfg(), make_states(5))


def test_densify_bookkeeping_stress():
    rng = CounterRng(9, stream=102)
    s = init_unit_sphere(30, seed=5)
    states = make_states(30)
    cfg = small_cfg()
    for _ in range(10):
        n = len(s)
        grads = rng.uniform((n,), 0, 4e-4)
        s.log_scales = (rng.uniform((n, 3), np.log(0.004), np.log(0.03))
                        .astype(np.float32))
        s.opacity_logits = rng.uniform((n,), inverse_sigmoid(0.004),
                                       inverse_sigmoid(0.9)).astype(np.float32)
        s = densify_and_prune(s, grads, cfg, states)
        assert all(rows == len(s) for rows in opt_rows(states).values())


# -- trainer loops -------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinyds")
    gt = synthetic.make_ball_scene(n=60, seed=2)
    ds = synthetic.build_dataset(root, gt, num_anchors=4, size=32)
    return gt, ds


def tiny_config(**kw):
    base = dict(static_iterations=6, coarse_iterations=5, fine_iterations=8,
                init_gaussians=120, hexplane_levels=1, hexplane_base_resolution=16,
                hexplane_channels=4, densify_interval=3, seed=5,
                render_width=32, render_height=32)
    base.update(kw)
    return TrainConfig(**base)


def run_all(gt, ds, cfg, prior=None, log_stream=None):
    tr = Trainer(cfg, ds, log_stream=log_stream)
    tr.run_static()
    tr.run_coarse()
    if prior is None:
        prior = synthetic.GroundTruthOraclePrior(gt, ds)
    tr.run_fine(prior)
    return tr


def test_stage_ordering_enforced(tiny_setup):
    _, ds = tiny_setup
    tr = Trainer(tiny_config(), ds)
    with pytest.raises(TrainingError):
        tr.run_coarse()
    with pytest.raises(TrainingError):
        tr.run_fine()


def test_full_determinism_bit_identical_checkpoints(tiny_setup, tmp_path):
    gt, ds = tiny_setup
    files = []
    for k in range(2):
        tr = run_all(gt, ds, tiny_config())
        p = tmp_path / f"run{k}.gs4d"
        save_trainer_checkpoint(p, tr)
        files.append(p.read_bytes())
    assert files[0] == files[1]


def test_resume_mid_stage_matches_uninterrupted(tiny_setup, tmp_path):
    gt, ds = tiny_setup
    cfg = tiny_config()

    straight = Trainer(cfg, ds)
    for _ in range(6):
        straight._step_static()

    broken = Trainer(cfg, ds)
    for _ in range(3):
        broken._step_static()
    mid = tmp_path / "mid.gs4d"
    save_trainer_checkpoint(mid, broken)
    resumed = trainer_from_checkpoint(mid, ds)
    for _ in range(3):
        resumed._step_static()

    a, b = tmp_path / "a.gs4d", tmp_path / "b.gs4d"
    save_trainer_checkpoint(a, straight)
    save_trainer_checkpoint(b, resumed)
    assert a.read_bytes() == b.read_bytes()


def test_resume_across_stage_boundary(tiny_setup, tmp_path):
    gt, ds = tiny_setup
    cfg = tiny_config()

    straight = Trainer(cfg, ds)
    straight.run_static()
    straight.run_coarse()

    broken = Trainer(cfg, ds)
    broken.run_static()
    mid = tmp_path / "boundary.gs4d"
    save_trainer_checkpoint(mid, broken)
    resumed = trainer_from_checkpoint(mid, ds)
    resumed.run_coarse()

    a, b = tmp_path / "sa.gs4d", tmp_path / "sb.gs4d"
    save_trainer_checkpoint(a, straight)
    save_trainer_checkpoint(b, resumed)
    assert a.read_bytes() == b.read_bytes()


def test_fine_zero_sds_weight_never_calls_prior(tiny_setup):
    gt, ds = tiny_setup

    class CountingPrior:
        calls = 0

        def predict_noise(self, *a, **k):
            type(self).calls += 1
            return np.zeros_like(a[0])

    prior = CountingPrior()
    run_all(gt, ds, tiny_config(omega_sds=0.0), prior=prior)
    assert CountingPrior.calls == 0


def test_training_log_stream_json_lines(tiny_setup):
    gt, ds = tiny_setup
    stream = pyio.StringIO()
    tr = run_all(gt, ds, tiny_config(), log_stream=stream)
    lines = [json.loads(l) for l in stream.getvalue().splitlines()]
    assert len(lines) == 6 + 5 + 8
    for line in lines:
        assert {"iter", "stage", "stage_iter", "type", "gaussians",
                "total", "terms"} <= set(line)
    assert {l["stage"] for l in lines} == {"static", "coarse", "fine"}
    assert all(np.isfinite(l["total"]) for l in lines)
    assert len(tr.stage_summaries) == 3


def test_skipped_sds_counted_and_training_survives(tiny_setup):
    gt, ds = tiny_setup
    from gs4d.errors import PriorUnavailableError

    class DeadPrior:
        def predict_noise(self, *a, **k):
            raise PriorUnavailableError("no server")

    tr = run_all(gt, ds, tiny_config(), prior=DeadPrior())
    assert tr.stage == "done"
    assert tr.sds_skipped > 0


def test_null_motion_dataset_learns_no_motion(tmp_path):
    # All frames identical: the deformed positions must not vary with time.
    # (The field may still carry a time-constant correction of the static
    # scene; joint optimization is allowed to move static content into it.)
    gt = synthetic.make_ball_scene(n=60, seed=3)
    root = tmp_path / "static_ds"
    import shutil
    synthetic.build_dataset(root, gt, num_anchors=4, size=32)
    for t in range(1, 4):
        for v in range(4):
            shutil.copyfile(root / "frames" / "t0000" / f"view{v:02d}.png",
                            root / "frames" / f"t{t:04d}" / f"view{v:02d}.png")
        shutil.copyfile(root / "input" / "t0000.png",
                        root / "input" / f"t{t:04d}.png")
    from gs4d.io import load_dataset
    ds = load_dataset(root)
    cfg = tiny_config(static_iterations=60, coarse_iterations=60, fine_iterations=1)
    tr = Trainer(cfg, ds)
    tr.run_static()
    tr.run_coarse()
    pos = tr.scene.positions.astype(np.float64)
    base, _ = tr.field.deform(pos, 0.0)
    motion = [np.linalg.norm(tr.field.deform(pos, t)[0] - base, axis=1).mean()
              for t in np.linspace(0, 1, 5)]
    assert max(motion) < 1e-3
