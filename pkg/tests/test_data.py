import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vinn.data import (
    Action,
    BadMagicError,
    DemoFormatError,
    DemoSet,
    Demonstration,
    DimensionMismatchError,
    EmbeddingMatrix,
    GripperState,
    TruncatedFileError,
    UnsupportedVersionError,
    ZeroActionError,
    dumps_demoset,
    load_demoset,
    loads_demoset,
    normalize_actions,
    save_demoset,
    subsample_demos,
    synth_demoset,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, width=32)


@st.composite
def demosets(draw):
    obs_dim = draw(st.integers(1, 6))
    demos = []
    for _ in range(draw(st.integers(1, 4))):
        T = draw(st.integers(1, 6))
        obs = draw(hnp.arrays(np.float32, (T, obs_dim), elements=finite))
        trans = draw(hnp.arrays(np.float32, (T, 3), elements=finite))
        grip = draw(hnp.arrays(np.uint8, (T,), elements=st.integers(0, 3)))
        demos.append(Demonstration(obs, trans, grip))
    meta = draw(st.dictionaries(st.text(max_size=8), st.text(max_size=8), max_size=3))
    return DemoSet(tuple(demos), meta)


def tiny():
    d = Demonstration(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0, 1.0]]), np.array([2]))
    return DemoSet((d,), {"k": "v"})


# --- types ------------------------------------------------------------------

def test_action_is_immutable_and_hashable():
    a = Action([1, 0, 0], 3)
    assert a.gripper is GripperState.CLOSED
    with pytest.raises(ValueError):
        a.translation[0] = 2.0
    assert a == Action(np.array([1.0, 0.0, 0.0]), GripperState.CLOSED)
    assert len({a, Action([1, 0, 0], 3)}) == 1


@pytest.mark.parametrize("bad", [[np.nan, 0, 0], [0, np.inf, 0]])
def test_action_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        Action(bad)


def test_action_rejects_bad_gripper():
    with pytest.raises(ValueError):
        Action([1, 0, 0], 4)


def test_demonstration_shape_checks():
    with pytest.raises(ValueError):
        Demonstration(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ValueError):
        Demonstration(np.zeros((2, 2)), np.zeros((3, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        Demonstration(np.zeros((2, 2)), np.zeros((2, 3)), np.array([0, 5]))
    with pytest.raises(ValueError):
        Demonstration(np.full((1, 2), np.nan), np.zeros((1, 3)), np.zeros(1))


def test_demoset_rejects_mixed_dims_and_empty():
    a = Demonstration(np.zeros((1, 2)), np.ones((1, 3)), [0])
    b = Demonstration(np.zeros((1, 3)), np.ones((1, 3)), [0])
    with pytest.raises(ValueError):
        DemoSet((a, b))
    with pytest.raises(ValueError):
        DemoSet(())


def test_stacked_provenance():
    a = Demonstration(np.zeros((2, 1)), np.ones((2, 3)), [0, 1])
    b = Demonstration(np.ones((3, 1)), np.ones((3, 3)), [2, 3, 3])
    obs, trans, grip, ids, ts = DemoSet((a, b)).stacked()
    assert ids.tolist() == [0, 0, 1, 1, 1]
    assert ts.tolist() == [0, 1, 0, 1, 2]
    assert grip.tolist() == [0, 1, 2, 3, 3]
    frames = list(DemoSet((a, b)).frames())
    assert [(f.demo_id, f.timestep) for f in frames] == list(zip(ids.tolist(), ts.tolist()))


def test_embedding_matrix_validates():
    with pytest.raises(ValueError):
        EmbeddingMatrix(np.array([[np.nan]]), np.zeros((1, 3)), [0], [0], [0])
    m = EmbeddingMatrix(np.ones((2, 4)), np.zeros((2, 3)), [0, 1], [0, 0], [0, 1])
    assert len(m) == 2 and m.dim == 4 and m.rows.dtype == np.float32


# --- binary format ----------------------------------------------------------

def test_known_byte_layout():
    # hand-assembled reference bytes
    want = (
        b"VINN" + struct.pack("<HII", 1, 2, 1)
        + struct.pack("<I", 1)
        + struct.pack("<2f3fB3x", 1.0, 2.0, 0.0, 0.0, 1.0, 2)
        + struct.pack("<I", 1)
        + struct.pack("<I", 1) + b"k" + struct.pack("<I", 1) + b"v"
    )
    assert dumps_demoset(tiny()) == want
    assert loads_demoset(want) == tiny()


@given(demosets())
def test_round_trip_is_bit_exact(ds):
    raw = dumps_demoset(ds)
    back = loads_demoset(raw)
    assert back == ds
    assert dumps_demoset(back) == raw


def test_save_load_file(tmp_path):
    ds = synth_demoset("random-walk", 3, 1)
    save_demoset(ds, tmp_path / "d.vinn")
    assert load_demoset(tmp_path / "d.vinn") == ds


def test_bad_magic():
    raw = dumps_demoset(tiny())
    with pytest.raises(BadMagicError) as e:
        loads_demoset(b"XXXX" + raw[4:])
    assert e.value.offset == 0


def test_bad_version():
    raw = bytearray(dumps_demoset(tiny()))
    raw[4:6] = struct.pack("<H", 9)
    with pytest.raises(UnsupportedVersionError) as e:
        loads_demoset(bytes(raw))
    assert e.value.offset == 4


@pytest.mark.parametrize("cut", [3, 10, 20, 30, 40])
def test_truncation_at_every_region(cut):
    raw = dumps_demoset(tiny())
    assert cut < len(raw)
    with pytest.raises(TruncatedFileError):
        loads_demoset(raw[:cut])


def test_wrong_obs_dim_is_dimension_mismatch():
    raw = bytearray(dumps_demoset(DemoSet((Demonstration(np.zeros((4, 3)), np.ones((4, 3)), [0] * 4),))))
    # claim obs_dim 1: the frame records shrink, leaving trailing bytes or a misparse
    raw[6:10] = struct.pack("<I", 1)
    with pytest.raises(DemoFormatError):
        loads_demoset(bytes(raw))


def test_trailing_bytes_rejected():
    with pytest.raises(DimensionMismatchError):
        loads_demoset(dumps_demoset(tiny()) + b"\0")


def test_bad_gripper_code_offset():
    raw = bytearray(dumps_demoset(tiny()))
    grip_at = 14 + 4 + 4 * 5
    raw[grip_at] = 7
    with pytest.raises(DemoFormatError) as e:
        loads_demoset(bytes(raw))
    assert e.value.offset == grip_at


def test_zero_counts_rejected():
    raw = bytearray(dumps_demoset(tiny()))
    raw[10:14] = struct.pack("<I", 0)
    with pytest.raises(DemoFormatError):
        loads_demoset(bytes(raw))


# --- transforms -------------------------------------------------------------

@given(demosets())
def test_normalize_gives_unit_rows_and_is_idempotent(ds):
    trans = ds.stacked()[1].astype(np.float64)
    if np.any(np.linalg.norm(trans, axis=1) <= 1e-8):
        with pytest.raises(ZeroActionError):
            normalize_actions(ds)
        return
    once = normalize_actions(ds)
    norms = np.linalg.norm(once.stacked()[1].astype(np.float64), axis=1)
    assert np.allclose(norms, 1.0, atol=1e-6)
    assert normalize_actions(once) == once
    assert np.array_equal(once.stacked()[2], ds.stacked()[2])
    assert np.array_equal(once.stacked()[0], ds.stacked()[0])


def test_zero_action_error_lists_frames():
    d = Demonstration(np.zeros((3, 1)), np.array([[1, 0, 0], [0, 0, 0], [0, 1, 0]]), [0, 0, 0])
    with pytest.raises(ZeroActionError) as e:
        normalize_actions(DemoSet((d, d)))
    assert e.value.frames == [(0, 1), (1, 1)]


def test_subsample_deterministic_and_ordered():
    ds = synth_demoset("random-walk", 10, 0)
    a = subsample_demos(ds, 4, 3)
    assert a == subsample_demos(ds, 4, 3)
    picked = [ds.demos.index(d) for d in a.demos]
    assert picked == sorted(picked) and len(set(picked)) == 4
    assert subsample_demos(ds, 10, 1) == ds
    with pytest.raises(ValueError):
        subsample_demos(ds, 0, 0)
    with pytest.raises(ValueError):
        subsample_demos(ds, 11, 0)


def test_synth_generators():
    rw = synth_demoset("random-walk", 2, 0)
    assert rw.metadata["generator"] == "random-walk"
    ex = synth_demoset("expert", 2, 0)
    assert ex.metadata["generator"] == "expert"
    assert np.allclose(np.linalg.norm(ex.stacked()[1], axis=1), 1, atol=1e-6)
    assert synth_demoset("expert", 2, 0) == ex
    with pytest.raises(KeyError):
        synth_demoset("nope", 1, 0)
    with pytest.raises(ValueError):
        synth_demoset("expert", 0, 0)
