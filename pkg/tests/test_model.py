import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierforecast import autodiff as ad
from hierforecast.errors import ContractError, VocabularyError
from hierforecast.hierarchy import make_hierarchy, split_at, validate
from hierforecast.model import HeraConfig, HeraModel, Losses, forecast_hierarchy, task_names

from conftest import toy_hierarchy
from helpers import hierarchies


def model_for(config=None, n_coarse=2, n_fine=4):
    return HeraModel(n_coarse, n_fine, config or HeraConfig(hidden_size=4, embed_dim=3, mlp_width=4))


def _set_last_bias(mlp, value, weights=0.0):
    layer = mlp.layers[-1]
    layer.weight.value[...] = weights
    layer.bias.value[...] = value


def test_input_widths():
    m = model_for(HeraConfig(hidden_size=5, embed_dim=3))
    assert m.fine_gru.input_size == 2 * 3 + 5 + 3
    m = model_for(HeraConfig(hidden_size=5, embed_dim=3, label_in_downward_msg=False))
    assert m.fine_gru.input_size == 2 * 3 + 5


def test_config_rejects_nonpositive():
    with pytest.raises(ContractError):
        HeraConfig(hidden_size=0)
    with pytest.raises(ContractError):
        HeraConfig(lr=-1.0)


def test_config_round_trip():
    cfg = HeraConfig(hidden_size=7, split_range=(0.2, 0.8), scheduled_sampling=0.1)
    assert HeraConfig.from_dict(cfg.to_dict()) == cfg


def test_encoder_schedule_single_finished_activity():
    h = make_hierarchy([(0, 0.5), (1, 0.5)], [(0, 0.5, 0), (1, 0.5, 0), (2, 1.0, 1)])
    state = model_for().encode(split_at(h, 0.5))
    # one start-of-activity step opens the children, then 2 fine steps, then 1 coarse step
    assert state.schedule == ["start", "fine", "fine", "coarse"]
    assert state.pending_downward is None


def test_encoder_boundary_steps_every_observed_activity():
    h = make_hierarchy([(0, 0.25), (1, 0.25), (0, 0.5)], [(0, 1.0, 0), (1, 0.4, 1), (2, 0.6, 1), (3, 1.0, 2)])
    s = split_at(h, 0.5)
    assert s.partial == (None, None)
    state = model_for().encode(s)
    assert state.schedule.count("coarse") == 2
    assert state.schedule.count("fine") == 3
    assert abs(state.a_c - 0.5) < 1e-12


def test_encoder_interrupted_activity_not_stepped(toy_split):
    state = model_for().encode(toy_split)
    # coarse #0 is finished, coarse #1 is interrupted: one coarse step only
    assert state.schedule == ["start", "fine", "fine", "coarse", "start"]
    assert state.pending_downward is not None


def test_encoder_zero_model_first_fine_step_is_zero(toy_split):
    m = model_for()
    for p in m.parameters():
        p.value[...] = 0.0
    h = make_hierarchy([(0, 1.0)], [(0, 0.5, 0), (1, 0.5, 0)])
    state = m.encode(split_at(h, 0.7))
    assert np.all(np.isfinite(state.h_f.value)) and np.array_equal(state.h_f.value, np.zeros(4))
    assert np.array_equal(state.h_c.value, np.zeros(4))


def test_encode_rejects_empty_observation():
    m = model_for()
    s = split_at(toy_hierarchy(), 0.5)
    empty = type(s)(type(s.observed)((type(s.observed.coarse)(()), type(s.observed.fine)((), ()))),
                    (None, None), s.future, 0.5)
    with pytest.raises(ContractError):
        m.encode(empty)


def test_refresh_zero_remaining_gives_partial(toy_split):
    m = model_for()
    _set_last_bias(m.remain_coarse, -800.0)
    _set_last_bias(m.remain_fine, -800.0)
    ref = m.refresh(m.encode(toy_split), toy_split)
    cp, fp = toy_split.partial
    assert ref.amended_coarse == cp.partial
    assert ref.amended_fine == fp.partial


def test_refresh_amended_arithmetic(toy_split):
    m = model_for()
    # remaining = sigmoid(b) * (1 - accumulated) = 0.7 * 0.5 = 0.35
    _set_last_bias(m.remain_coarse, math.log(0.7 / 0.3))
    ref = m.refresh(m.encode(toy_split), toy_split)
    assert abs(ref.remaining_coarse.item() - 0.35) < 1e-12
    assert abs(ref.amended_coarse - 0.45) < 1e-12


def test_refresh_identity_at_boundary():
    h = make_hierarchy([(0, 0.5), (1, 0.5)], [(0, 1.0, 0), (1, 1.0, 1)])
    s = split_at(h, 0.5)
    m = model_for()
    ref = m.refresh(m.encode(s), s)
    assert ref.remaining_coarse is None and ref.remaining_fine is None
    assert ref.amended_coarse == 0.0


def test_anticipate_no_phase_two_when_coarse_is_filled(toy_split):
    m = model_for()
    _set_last_bias(m.remain_coarse, 800.0)  # remaining = 1 - accumulated
    fc = m.predict(toy_split)
    assert len(fc.coarse) == 1 and fc.coarse[0] == (1, 0.5, 1.0)
    assert fc.steps[0] == 0


@pytest.mark.parametrize("cap", [5, 50])
def test_rollout_cap_bounds_steps(cap, toy_split):
    m = model_for(HeraConfig(hidden_size=4, embed_dim=3, mlp_width=4, max_rollout_steps_per_level=cap))
    _set_last_bias(m.coarse_head.mlp, -800.0)  # every duration at the floor
    _set_last_bias(m.fine_head.mlp, -800.0)
    fc = m.predict(toy_split)
    assert fc.truncated
    assert fc.steps[0] <= cap
    assert len(fc.coarse) <= cap + 1
    assert validate(forecast_hierarchy(toy_split, fc)) == []


def test_forecast_covers_t_star_to_one(toy_split):
    fc = model_for().predict(toy_split)
    for iv in (fc.coarse, fc.fine):
        assert iv[0][1] == 0.5 and iv[-1][2] == 1.0
        assert all(abs(a[2] - b[1]) < 1e-12 for a, b in zip(iv, iv[1:]))


@settings(max_examples=60, deadline=None)
@given(hierarchies(n_coarse_labels=3, n_fine_labels=5), st.floats(0.05, 0.95), st.integers(0, 3))
def test_predictions_always_valid(h, p, seed):
    m = HeraModel(3, 5, HeraConfig(hidden_size=4, embed_dim=3, mlp_width=4, seed=seed))
    s = split_at(h, p)
    assert validate(forecast_hierarchy(s, m.predict(s))) == []


def test_ablation_isolates_coarse_from_fine_inputs(toy):
    cfg = HeraConfig(hidden_size=4, embed_dim=3, mlp_width=4, label_in_downward_msg=False,
                     cross_level_messages=False)
    m = model_for(cfg)
    other = make_hierarchy([(0, 0.4), (1, 0.6)], [(3, 0.2, 0), (2, 0.8, 0), (1, 0.3, 1), (0, 0.7, 1)])
    a = m.predict(split_at(toy, 0.5))
    b = m.predict(split_at(other, 0.5))
    assert a.coarse == b.coarse


def test_messages_matter_when_enabled(toy):
    m = model_for()
    other = make_hierarchy([(0, 0.4), (1, 0.6)], [(3, 0.2, 0), (2, 0.8, 0), (1, 0.3, 1), (0, 0.7, 1)])
    la, _ = m.compute_loss(split_at(toy, 0.5))
    lb, _ = m.compute_loss(split_at(other, 0.5))
    assert la.item() != lb.item()


def test_loss_finite_and_task_set(toy_split):
    m = model_for()
    total, per_task = m.compute_loss(toy_split)
    assert math.isfinite(total.item())
    assert set(per_task) <= set(task_names(True))
    assert "ref.coarse.duration" in per_task and "ant.fine.label" in per_task


def test_encoder_flag_removes_encoder_tasks(toy_split):
    m = model_for(HeraConfig(hidden_size=4, embed_dim=3, mlp_width=4, encoder_loss_enabled=False))
    _, per_task = m.compute_loss(toy_split)
    assert not any(t.startswith("enc.") for t in per_task)


def test_loss_invariant_to_total_frames():
    m = model_for()
    a, _ = m.compute_loss(split_at(toy_hierarchy(100), 0.5))
    b, _ = m.compute_loss(split_at(toy_hierarchy(7919), 0.5))
    assert a.item() == b.item()


def test_loss_rejects_out_of_vocab_label(toy_split):
    with pytest.raises(VocabularyError):
        HeraModel(2, 3, HeraConfig(hidden_size=4, embed_dim=3, mlp_width=4)).compute_loss(toy_split)


def test_loss_needs_truth(toy_split):
    no_future = type(toy_split)(toy_split.observed, toy_split.partial,
                                type(toy_split.observed)((type(toy_split.observed.coarse)(()),
                                                          type(toy_split.observed.fine)((), ()))), 0.5)
    with pytest.raises(ContractError):
        model_for().compute_loss(no_future)


def test_level_average_unchanged_by_duplicated_terms():
    a, b = Losses(), Losses()
    for v in (0.2, 0.6, 1.0):
        a.add("t", ad.constant(v))
        b.add("t", ad.constant(v))
        b.add("t", ad.constant(v))
    assert abs(a.averaged()["t"].item() - b.averaged()["t"].item()) < 1e-15


def test_gradients_match_differences_small_model(toy_split):
    m = model_for()

    def f():
        return m.compute_loss(toy_split)[0]

    report = ad.grad_check(f, m.parameters())
    assert report.passed, (report.worst, report.max_rel_error[report.worst])


def test_scheduled_sampling_loss_finite(toy_split):
    cfg = HeraConfig(hidden_size=4, embed_dim=3, mlp_width=4, scheduled_sampling=1.0)
    m = model_for(cfg)
    plain = model_for()
    a = m.compute_loss(toy_split, np.random.default_rng(0))[0].item()
    b = plain.compute_loss(toy_split, np.random.default_rng(0))[0].item()
    assert math.isfinite(a) and math.isfinite(b)
