import numpy as np
import pytest
from pydantic import ValidationError

from bspline import BsplineSpec, ControlTrajectory, pin_boundaries
from datagen import Dataset
from diffusion import (
    ControlPointCodec, cosine_schedule, ddim_sample, ddpm_sample, guided_inner_steps, guided_iterations,
    linear_schedule, make_schedule, posterior_mean, prepare_training_data, q_sample, quadratic_timesteps,
    train_denoiser, training_step,
)
from errors import NonFiniteError, PreconditionError
from models.config_model import GuidanceConfig, RobotConfig, RunConfig, TrainingConfig
from models.plan_model import DatasetHeader, PathRecord, PlanningContext
from nn import Denoiser, DenoiserArch, Normalizer, init_params

ARCH = DenoiserArch(state_dim=4, context_dim=4, width=8, n_blocks=1, time_dim=4, context_hidden=8, context_out=4)


@pytest.mark.parametrize("schedule", [cosine_schedule(100), linear_schedule(100)], ids=["cosine", "linear"])
def test_schedule_tables(schedule):
    assert schedule.n_steps == 100
    assert schedule.alpha_bars[0] == 1.0
    assert np.all((schedule.betas[1:] > 0) & (schedule.betas[1:] < 1))
    assert np.all(np.diff(schedule.alpha_bars) < 0)
    assert schedule.alpha_bars[-1] <= 0.01
    assert np.all(schedule.beta_tildes[1:] <= schedule.betas[1:])
    np.testing.assert_allclose(schedule.sigmas ** 2, schedule.beta_tildes)
    np.testing.assert_allclose(schedule.alpha_bars, np.cumprod(1.0 - schedule.betas))


def test_make_schedule():
    assert make_schedule("linear", 20).kind == "linear"
    assert make_schedule("cosine", 20).to_dict() == {"kind": "cosine", "n_steps": 20}
    with pytest.raises(PreconditionError):
        make_schedule("sigmoid", 20)
    with pytest.raises(PreconditionError):
        cosine_schedule(1)


def test_q_sample_without_noise_scales_the_data():
    schedule = cosine_schedule(100)
    w0 = np.array([[0.5, -0.25]])
    np.testing.assert_allclose(q_sample(w0, [40], np.zeros_like(w0), schedule),
                               np.sqrt(schedule.alpha_bars[40]) * w0)


def test_q_sample_moments():
    schedule = cosine_schedule(100)
    rng = np.random.default_rng(0)
    n, i, w0 = 10_000, 30, 0.7
    draws = q_sample(np.full((n, 1), w0), np.full(n, i), rng.standard_normal((n, 1)), schedule)[:, 0]
    ab = schedule.alpha_bars[i]
    stderr = np.sqrt((1.0 - ab) / n)
    assert abs(draws.mean() - np.sqrt(ab) * w0) < 4 * stderr
    assert draws.var() == pytest.approx(1.0 - ab, rel=0.05)


@pytest.mark.parametrize("schedule", [cosine_schedule(50), linear_schedule(50)], ids=["cosine", "linear"])
def test_q_sample_matches_the_composed_one_step_kernels(schedule):
    rng = np.random.default_rng(1)
    n, i, w0 = 20_000, 25, -0.4
    x, mean, var = np.full(n, w0), w0, 0.0
    for k in range(1, i + 1):
        x = np.sqrt(schedule.alphas[k]) * x + np.sqrt(schedule.betas[k]) * rng.standard_normal(n)
        mean, var = np.sqrt(schedule.alphas[k]) * mean, schedule.alphas[k] * var + schedule.betas[k]
    ab = schedule.alpha_bars[i]
    assert mean == pytest.approx(np.sqrt(ab) * w0, rel=1e-12)
    assert var == pytest.approx(1.0 - ab, rel=1e-12)
    direct = q_sample(np.full((n, 1), w0), np.full(n, i), rng.standard_normal((n, 1)), schedule)[:, 0]
    stderr = np.sqrt((1.0 - ab) / n)
    assert abs(x.mean() - direct.mean()) < 6 * stderr
    assert x.var() == pytest.approx(direct.var(), rel=0.05)


def test_perfect_noise_oracle_has_zero_loss():
    rng = np.random.default_rng(0)
    w0 = rng.uniform(-1, 1, size=(16, 4))
    c = rng.uniform(-1, 1, size=(16, 4))
    loss, grads = training_step(None, ARCH, w0, c, cosine_schedule(50), rng,
                                oracle=lambda w_i, i, c, eps: eps)
    assert loss == 0.0
    assert grads is None


def test_training_step_returns_all_gradients():
    rng = np.random.default_rng(0)
    params = init_params(ARCH, rng)
    loss, grads = training_step(params, ARCH, rng.uniform(-1, 1, (8, 4)), rng.uniform(-1, 1, (8, 4)),
                                cosine_schedule(50), rng)
    assert loss > 0
    assert set(grads) == set(params)


def test_posterior_mean_is_affine_in_the_prior_weight():
    schedule = cosine_schedule(50)
    rng = np.random.default_rng(1)
    w = rng.normal(size=(3, 4))
    fixed = rng.normal(size=(3, 4))

    def model(x, i, c):
        return fixed

    m0, m1 = (posterior_mean(w, 20, None, model, schedule, lam) for lam in (0.0, 1.0))
    np.testing.assert_allclose(m0, w / np.sqrt(schedule.alphas[20]))
    np.testing.assert_allclose(posterior_mean(w, 20, None, model, schedule, 0.25), m0 + 0.25 * (m1 - m0))


def test_guided_steps_stay_inside_the_clip_box():
    rng = np.random.default_rng(2)
    mu0 = rng.normal(size=(5, 6))
    out = guided_inner_steps(mu0, lambda mu: rng.normal(0, 100, mu.shape), 10, 1.0, 0.15)
    assert np.max(np.abs(out - mu0)) <= 0.15 + 1e-12
    np.testing.assert_array_equal(guided_inner_steps(mu0, lambda mu: mu, 0, 1.0, 0.15), mu0)


def test_guided_steps_descend_a_quadratic():
    target = np.array([[0.05, -0.05]])
    out = guided_inner_steps(np.zeros((1, 2)), lambda mu: mu - target, 50, 0.2, 0.15)
    np.testing.assert_allclose(out, target, atol=1e-4)


def test_quadratic_timesteps():
    steps = quadratic_timesteps(15, 100)
    assert len(steps) == 15
    assert steps[0] == 100 and steps[-1] == 1
    assert np.all(np.diff(steps) < 0)
    # denser near step 1
    assert steps[-2] - steps[-1] < steps[0] - steps[1]
    np.testing.assert_array_equal(quadratic_timesteps(200, 100), np.arange(100, 0, -1))
    with pytest.raises(PreconditionError):
        quadratic_timesteps(0, 100)


def _codec(goal_mode):
    n_free = 6 if goal_mode == "config" else 7
    norm = Normalizer(low=np.full(2 * n_free, -2.0), high=np.full(2 * n_free, 2.0))
    return ControlPointCodec(n_b=12, d=2, n_pinned=3, goal_mode=goal_mode, normalizer=norm)


def test_codec_round_trip_config_goal():
    codec = _codec("config")
    assert codec.state_dim == 12
    rng = np.random.default_rng(3)
    w = pin_boundaries(ControlTrajectory(rng.uniform(-1, 1, (12, 2)), 4.0), [0.1, 0.2], [0.7, 0.8]).w
    x = codec.encode(w)
    np.testing.assert_allclose(x, w[3:9].reshape(-1) / 2.0)
    back = codec.decode(x, [0.1, 0.2], [0.7, 0.8], 4.0)
    np.testing.assert_allclose(back.w, w)
    assert back.T == 4.0


def test_codec_ties_the_end_block_under_ee_goals():
    codec = _codec("ee")
    assert codec.state_dim == 14
    x = np.random.default_rng(4).uniform(-1, 1, 14)
    w = codec.decode(x, [0.1, 0.2], None, 1.0).w
    np.testing.assert_allclose(w[:3], [[0.1, 0.2]] * 3)
    np.testing.assert_allclose(w[9:], np.repeat(w[9:10], 3, axis=0))
    np.testing.assert_allclose(w[9], 2.0 * x[-2:])
    grad = np.ones((12, 2))
    np.testing.assert_allclose(codec.pull_back(grad), np.full(14, 2.0))


def _oracle_denoiser(schedule):
    """Predicts the noise that maps every state to a clean sample of zero."""
    def model(x, i, c):
        return x / np.sqrt(1.0 - schedule.alpha_bars[np.asarray(i)])[:, None]
    return model


def test_ddpm_guidance_shift_is_bounded_by_delta():
    schedule = cosine_schedule(20)
    guidance = GuidanceConfig(lambda_prior=1.0, delta=0.15, step_size=1.0, n_inner=4, i_cost=3, sampler="ddpm",
                              alpha_noise=0.0)
    target = 0.5
    plain = ddpm_sample(_oracle_denoiser(schedule), np.zeros(2), schedule, guidance,
                        [np.random.default_rng([0, b]) for b in range(2)], 3)
    guided = ddpm_sample(_oracle_denoiser(schedule), np.zeros(2), schedule, guidance,
                         [np.random.default_rng([0, b]) for b in range(2)], 3, grad_fn=lambda x: x - target)
    np.testing.assert_allclose(plain, 0.0, atol=1e-9)
    np.testing.assert_allclose(guided, 0.15, atol=1e-9)


@pytest.mark.parametrize("keep_noise_factor", [False, True])
def test_ddim_guidance_shifts_the_noise_estimate(keep_noise_factor):
    schedule = cosine_schedule(20)
    guidance = GuidanceConfig(ddim_steps=2, i_cost=1, n_inner=2, step_size=0.1, delta=1.0, lambda_prior=1.0,
                              keep_noise_factor=keep_noise_factor)
    g = np.array([0.3, -0.2, 0.1])
    out = ddim_sample(lambda x, i, c: np.zeros_like(x), np.zeros(2), schedule, guidance,
                      [np.random.default_rng(0)], 3, grad_fn=lambda x: np.broadcast_to(g, x.shape),
                      x_init=np.zeros((1, 3)))
    # steps are (20, 1); only the last one is guided, and it lands on alpha_bar = 1
    ab = schedule.alpha_bars[1]
    shift = -2 * 0.1 * g
    gain = np.sqrt(1.0 - ab) if keep_noise_factor else 1.0
    np.testing.assert_allclose(out[0], np.sqrt(1.0 - ab) / np.sqrt(ab) * gain * shift, rtol=1e-12)


def test_ddim_guidance_moves_toward_lower_cost():
    schedule = cosine_schedule(20)
    guidance = GuidanceConfig(lambda_prior=1.0, delta=0.15, n_inner=4, i_cost=3, ddim_steps=6)
    rngs = [np.random.default_rng([0, b]) for b in range(2)]
    guided = ddim_sample(_oracle_denoiser(schedule), np.zeros(2), schedule, guidance, rngs, 3,
                         grad_fn=lambda x: x - 0.5)
    assert np.all(guided > 0.0) and np.all(guided < 0.5)
    np.testing.assert_allclose(guided, guided[0, 0])


@pytest.mark.parametrize("kwargs", [{"sampler": "ddim", "ddim_steps": 5}, {"sampler": "ddpm", "alpha_noise": 0.0}])
def test_guidance_runs_on_the_last_i_cost_iterations(kwargs):
    schedule = cosine_schedule(10)
    guidance = GuidanceConfig(i_cost=3, n_inner=2, **kwargs)
    seen = []

    def grad_fn(x):
        seen.append(x.copy())
        return np.zeros_like(x)

    sampler = ddim_sample if kwargs["sampler"] == "ddim" else ddpm_sample
    sampler(_oracle_denoiser(schedule), np.zeros(2), schedule, guidance, [np.random.default_rng(0)], 3,
            grad_fn=grad_fn)
    assert guided_iterations(guidance, schedule.n_steps) == 3
    assert len(seen) == guidance.gradient_budget == 6


def test_i_cost_must_fit_the_sampler():
    with pytest.raises(ValidationError, match="ddim_steps"):
        GuidanceConfig(ddim_steps=2, i_cost=3, n_inner=4)
    with pytest.raises(ValidationError, match="diffusion steps"):
        RunConfig(schedule={"n_steps": 2}, guidance={"sampler": "ddpm", "i_cost": 3})
    assert guided_iterations(GuidanceConfig(sampler="ddpm", i_cost=3), 2) == 2
    assert guided_iterations(GuidanceConfig(ddim_steps=15, i_cost=3), 2) == 2


@pytest.mark.parametrize("sampler", [ddim_sample, ddpm_sample])
def test_samplers_are_deterministic_per_stream(sampler):
    schedule = cosine_schedule(10)
    net = Denoiser(init_params(ARCH, np.random.default_rng(0)), ARCH)
    guidance = GuidanceConfig(ddim_steps=5, alpha_noise=1.0)
    c = np.array([0.1, -0.2, 0.3, 0.4])

    def run(seeds):
        return sampler(net, c, schedule, guidance, [np.random.default_rng([7, b]) for b in seeds], 4)

    a, b = run(range(3)), run(range(3))
    np.testing.assert_array_equal(a, b)
    assert np.all(np.abs(a) <= 1.0)
    np.testing.assert_allclose(run([1]), a[1:2], atol=1e-5)


def test_sampled_states_decode_with_pinned_ends():
    schedule = cosine_schedule(10)
    codec = _codec("config")
    arch = DenoiserArch(state_dim=12, context_dim=4, width=8, n_blocks=1, time_dim=4, context_hidden=8,
                        context_out=4)
    net = Denoiser(init_params(arch, np.random.default_rng(0)), arch)
    x = ddim_sample(net, np.zeros(4), schedule, GuidanceConfig(ddim_steps=4), [np.random.default_rng(0)], 12)
    w = codec.decode(x[0], [-0.5, -0.5], [0.5, 0.5], 2.0).w
    np.testing.assert_array_equal(w[:3], [[-0.5, -0.5]] * 3)
    np.testing.assert_array_equal(w[-3:], [[0.5, 0.5]] * 3)


def _dataset(n=6):
    rng = np.random.default_rng(0)
    records = []
    for _ in range(n):
        a, b = rng.uniform(-0.8, 0.8, 2), rng.uniform(-0.8, 0.8, 2)
        path = np.linspace(a, b, 20)
        records.append(PathRecord(context=PlanningContext(q_start=a.tolist(), q_goal=b.tolist()),
                                  path=path.tolist()))
    header = DatasetHeader(task="unit", robot=RobotConfig(), scene_hash="x", seed=0, n_contexts=n,
                           n_succeeded=n, n_records=n)
    return Dataset(header=header, records=records)


def test_prepare_training_data_and_cache(tmp_path):
    spec = BsplineSpec(degree=3, n_b=10, n_s=32)
    dataset = _dataset()
    cache = tmp_path / "fits.npz"
    data = prepare_training_data(dataset, spec, 5.0, "config", cache_path=cache)
    assert data.states.shape == (6, (10 - 2 * spec.n_pinned) * 2)
    assert data.contexts.shape == (6, 4)
    assert len(data.context_hashes) == 6
    np.testing.assert_allclose(data.contexts[0], dataset.records[0].context.q_start
                               + dataset.records[0].context.q_goal)
    assert cache.is_file()
    again = prepare_training_data(dataset, spec, 5.0, "config", cache_path=cache)
    np.testing.assert_array_equal(again.states, data.states)


def test_training_resumes_exactly():
    rng = np.random.default_rng(1)
    states, contexts = rng.uniform(-1, 1, (32, 4)), rng.uniform(-1, 1, (32, 4))
    schedule = cosine_schedule(20)
    full = train_denoiser(states, contexts, ARCH, schedule, TrainingConfig(batch_size=8, steps=20, lr=1e-3))
    half = train_denoiser(states, contexts, ARCH, schedule, TrainingConfig(batch_size=8, steps=10, lr=1e-3))
    resumed = train_denoiser(states, contexts, ARCH, schedule, TrainingConfig(batch_size=8, steps=20, lr=1e-3),
                             params=half.params, adam=half.adam, rng_state=half.rng.bit_generator.state,
                             start_step=half.step)
    assert resumed.step == full.step == 20
    for name in full.params:
        np.testing.assert_array_equal(resumed.params[name], full.params[name])
    assert [s for s, _ in full.losses] == list(range(1, 21))


def test_checkpoint_callback_and_nan_abort():
    rng = np.random.default_rng(1)
    states, contexts = rng.uniform(-1, 1, (16, 4)), rng.uniform(-1, 1, (16, 4))
    seen = []
    cfg = TrainingConfig(batch_size=4, steps=6, checkpoint_every=3)
    train_denoiser(states, contexts, ARCH, cosine_schedule(10), cfg, on_checkpoint=lambda o: seen.append(o.step))
    assert seen == [3, 6]

    states[:] = np.nan
    with pytest.raises(NonFiniteError, match="step 1"):
        train_denoiser(states, contexts, ARCH, cosine_schedule(10), cfg)
