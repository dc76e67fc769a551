"""Dense stacks, pooling, and the checkpoint format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenecontrast import embednet
from scenecontrast.embednet import (
    DenseLayer,
    DenseStack,
    backward,
    forward,
    init_stack,
    load_layers,
    make_bank,
    pool_backward,
    pool_regions,
    read_checkpoint,
    write_checkpoint,
)
from scenecontrast.errors import (
    CheckpointFormatError,
    ConfigurationError,
    ContractViolationError,
    ShapeError,
)

from fdutil import central_diff, max_rel_err


def test_identity_layer_passthrough(rng):
    stack = DenseStack([DenseLayer(np.eye(4), np.zeros(4), "none")])
    x = rng.normal(size=(5, 4))
    out, _ = forward(stack, x)
    assert np.allclose(out, x)


def test_relu_zeroes_negative_input():
    stack = DenseStack([DenseLayer(np.eye(3), np.zeros(3), "relu")])
    out, _ = forward(stack, -np.ones((2, 3)))
    assert np.all(out == 0.0)


def test_two_layer_hand_evaluation():
    w0 = np.array([[0.5, -1.0], [2.0, 0.25], [-0.5, 1.5]])
    b0 = np.array([0.1, -0.2, 0.3])
    w1 = np.array([[1.0, -1.0, 0.5]])
    b1 = np.array([-0.05])
    stack = DenseStack([DenseLayer(w0, b0, "relu"), DenseLayer(w1, b1, "none")])
    x = np.array([[0.7, -0.3]])
    # step-by-step scalar evaluation
    h = []
    for r in range(3):
        z = b0[r]
        for c in range(2):
            z += w0[r, c] * x[0, c]
        h.append(max(z, 0.0))
    y = b1[0]
    for c in range(3):
        y += w1[0, c] * h[c]
    out, _ = forward(stack, x)
    assert abs(out[0, 0] - y) < 1e-12


def test_forward_width_mismatch():
    stack = DenseStack([DenseLayer(np.eye(3), np.zeros(3), "none")])
    with pytest.raises(ShapeError):
        forward(stack, np.zeros((2, 4)))
    with pytest.raises(ShapeError):
        forward(stack, np.zeros(3))


def test_empty_stack_is_identity(rng):
    stack = DenseStack([])
    x = rng.normal(size=(3, 5))
    out, cache = forward(stack, x)
    assert np.array_equal(out, x)
    pgrads, gx = backward(stack, np.ones_like(x), cache)
    assert pgrads == []
    assert np.array_equal(gx, np.ones_like(x))


def test_backward_zero_upstream(rng):
    stack = init_stack([4, 6, 3], rng)
    x = rng.normal(size=(5, 4))
    _, cache = forward(stack, x)
    pgrads, gx = backward(stack, np.zeros((5, 3)), cache)
    assert all(np.all(gw == 0) and np.all(gb == 0) for gw, gb in pgrads)
    assert np.all(gx == 0)


def test_stale_cache_rejected(rng):
    stack = init_stack([4, 3], rng)
    x = rng.normal(size=(2, 4))
    _, cache = forward(stack, x)
    stack.set_flat(stack.get_flat() * 1.01)  # parameter update bumps version
    with pytest.raises(ContractViolationError, match="stale"):
        backward(stack, np.ones((2, 3)), cache)


def test_glorot_bounds(rng):
    stack = init_stack([10, 20], rng)
    a = np.sqrt(6.0 / 30.0)
    w = stack.layers[0].weight
    assert np.all(np.abs(w) <= a)
    assert w.std() > a / 4  # actually spread out, not degenerate
    assert np.all(stack.layers[0].bias == 0.0)


def test_gradients_match_fd(rng):
    """Analytic stack gradients vs the test-local central differences."""
    worst = 0.0
    trials = 0
    while trials < 25:
        depth = int(rng.integers(1, 4))
        widths = [int(rng.integers(2, 7)) for _ in range(depth + 1)]
        stack = init_stack(widths, rng)
        x = rng.normal(size=(int(rng.integers(1, 6)), widths[0]))
        w = rng.normal(size=(x.shape[0], widths[-1]))

        def f():
            return float(np.sum(w * forward(stack, x)[0]))

        _, cache = forward(stack, x)
        if any(
            l.activation == "relu" and np.min(np.abs(z)) < 1e-4
            for z, l in zip(cache.preacts, stack.layers)
        ):
            continue  # finite differences straddle the kink
        pgrads, gx = backward(stack, w, cache)
        analytic = np.concatenate(
            [np.concatenate([gw.ravel(), gb]) for gw, gb in pgrads] + [gx.ravel()]
        )
        numeric = []
        for layer in stack.layers:
            numeric.append(central_diff(f, layer.weight).ravel())
            numeric.append(central_diff(f, layer.bias))
        numeric.append(central_diff(f, x).ravel())
        worst = max(worst, max_rel_err(analytic, np.concatenate(numeric)))
        trials += 1
    assert worst < 1e-4


# ---------------------------------------------------------------------------
# pooling


def test_pool_identical_rows():
    v = np.array([3.0, 4.0])
    feats = np.stack([v, v, v])
    rows, valid, _ = pool_regions(feats, [np.array([0, 1, 2])])
    assert valid[0]
    assert np.allclose(rows[0], v / 5.0)


def test_pool_cancellation_invalid():
    v = np.array([1.0, -2.0, 0.5])
    rows, valid, _ = pool_regions(np.stack([v, -v]), [np.array([0, 1])])
    assert not valid[0]
    assert np.all(rows[0] == 0.0)


def test_pool_empty_group_invalid(rng):
    feats = rng.normal(size=(4, 3))
    rows, valid, _ = pool_regions(feats, [np.array([], dtype=int), np.array([1])])
    assert not valid[0]
    assert valid[1]


def test_pool_three_member_oracle():
    feats = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5], [9.0, 9.0]])
    rows, valid, _ = pool_regions(feats, [np.array([0, 1, 2])])
    # scalar-loop mean and normalize
    mean = [0.0, 0.0]
    for i in (0, 1, 2):
        for d in range(2):
            mean[d] += feats[i, d] / 3.0
    norm = (mean[0] ** 2 + mean[1] ** 2) ** 0.5
    assert valid[0]
    assert abs(rows[0, 0] - mean[0] / norm) < 1e-12
    assert abs(rows[0, 1] - mean[1] / norm) < 1e-12


def test_pool_rows_unit_norm(rng):
    feats = rng.normal(size=(30, 8))
    groups = [np.arange(0, 10), np.arange(10, 11), np.arange(11, 30)]
    rows, valid, _ = pool_regions(feats, groups)
    norms = np.linalg.norm(rows[valid], axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_pool_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    feats = r.normal(size=(12, 4))
    idx = r.choice(12, size=6, replace=False)
    rows_a, valid_a, _ = pool_regions(feats, [idx])
    rows_b, valid_b, _ = pool_regions(feats, [r.permutation(idx)])
    assert valid_a[0] == valid_b[0]
    assert np.allclose(rows_a, rows_b, atol=1e-12)


def test_pool_group_out_of_range(rng):
    with pytest.raises(ShapeError):
        pool_regions(rng.normal(size=(3, 2)), [np.array([5])])


def test_pool_backward_matches_fd(rng):
    for _ in range(10):
        feats = rng.normal(size=(9, 4))
        groups = [np.array([0, 1, 2]), np.array([3]), np.array([4, 5, 6, 7])]
        w = rng.normal(size=(3, 4))

        def f():
            rows, valid, _ = pool_regions(feats, groups)
            return float(np.sum(w * rows))

        rows, valid, cache = pool_regions(feats, groups)
        gx = pool_backward(w * valid[:, None], cache)
        assert max_rel_err(gx, central_diff(f, feats)) < 1e-4


def test_make_bank_rejects_non_unit_rows():
    bad = np.array([[2.0, 0.0]])
    good = np.array([[1.0, 0.0]])
    with pytest.raises(ContractViolationError):
        make_bank(bad, np.array([True]), good, np.array([True]), np.array([0]))


def test_make_bank_joint_validity():
    rows = np.array([[1.0, 0.0], [0.0, 1.0]])
    bank = make_bank(
        rows,
        np.array([True, False]),
        rows,
        np.array([True, True]),
        np.array([0, 1]),
    )
    assert bank.valid.tolist() == [True, False]
    assert bank.num_valid == 1


# ---------------------------------------------------------------------------
# checkpoint format


def test_checkpoint_round_trip(tmp_path, rng):
    stacks = [init_stack([3, 5, 2], rng), init_stack([4, 4], rng)]
    p1 = tmp_path / "a.cscw"
    p2 = tmp_path / "b.cscw"
    write_checkpoint(p1, stacks)
    layers = read_checkpoint(p1)
    assert len(layers) == 3
    fresh = [init_stack([3, 5, 2], rng), init_stack([4, 4], rng)]
    load_layers(fresh, layers)
    for a, b in zip(stacks, fresh):
        assert np.array_equal(a.get_flat(), b.get_flat())
    write_checkpoint(p2, fresh)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bad_magic(tmp_path, rng):
    path = tmp_path / "x.cscw"
    write_checkpoint(path, [init_stack([2, 2], rng)])
    data = bytearray(path.read_bytes())
    data[0] = ord("Z")
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointFormatError, match="magic") as err:
        read_checkpoint(path)
    assert err.value.offset == 0


def test_checkpoint_truncated(tmp_path, rng):
    path = tmp_path / "x.cscw"
    write_checkpoint(path, [init_stack([2, 3], rng)])
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CheckpointFormatError, match="layer 0"):
        read_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path, rng):
    path = tmp_path / "x.cscw"
    write_checkpoint(path, [init_stack([2, 2], rng)])
    data = bytearray(path.read_bytes())
    data[4] = 7
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointFormatError, match="version") as err:
        read_checkpoint(path)
    assert err.value.offset == 4


def test_load_layers_shape_mismatch(tmp_path, rng):
    path = tmp_path / "x.cscw"
    write_checkpoint(path, [init_stack([2, 2], rng)])
    with pytest.raises(ConfigurationError):
        load_layers([init_stack([3, 2], rng)], read_checkpoint(path))
    with pytest.raises(ConfigurationError):
        load_layers([init_stack([2, 2, 2], rng)], read_checkpoint(path))
