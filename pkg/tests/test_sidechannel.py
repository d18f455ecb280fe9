import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factories import T0, rec, trace_windows, window_of
from rdpsense.capture import TcpFlag
from rdpsense.errors import NoTcpConversation
from rdpsense.sidechannel import (
    analyze_window,
    count_keystrokes,
    detect_mouse_events,
    report_json,
    segment_typing_bursts,
)
from rdpsense.synthgen import ActivityProfile, generate_trace

PSH = TcpFlag.PSH | TcpFlag.ACK


def keys(times, echo=None):
    """Two 92-byte forward frames per keystroke, optional backward echo 30 ms later."""
    out = []
    for t in times:
        out += [rec(t, frame=92, flags=PSH), rec(t + 50_000, frame=92, flags=PSH)]
        if echo is not None:
            out.append(rec(t + 30_000, forward=False, payload=echo, frame=54 + echo, flags=PSH))
    return out


@pytest.mark.parametrize("frames,expected,residual", [(20, 10, False), (21, 10, True), (0, 0, False)])
def test_keystroke_counts(frames, expected, residual):
    pkts = [rec(T0 + i * 10_000, frame=92) for i in range(frames)] + [rec(T0 + 10**6, frame=60)]
    r = count_keystrokes(window_of(pkts))
    assert (r.frame_count_92, r.keystroke_estimate, r.residual_frame) == (frames, expected, residual)


def test_backward_92_frames_ignored():
    pkts = [rec(T0 + i, frame=92, forward=False) for i in range(6)]
    assert count_keystrokes(window_of(pkts)).frame_count_92 == 0


def test_mouse_events():
    pkts = [rec(T0 + i * 1000, frame=97) for i in range(5)] + [rec(T0 + 10**5 + i, frame=104) for i in range(3)]
    m = detect_mouse_events(window_of(pkts))
    assert (m.click_packets, m.move_packets) == (5, 3)
    assert [k for _, k in m.events].count("click") == 5


def test_two_bursts_split_by_silence():
    t1 = [T0 + i * 100_000 for i in range(6)]
    t2 = [T0 + 5_500_000 + i * 100_000 for i in range(4)]
    r = segment_typing_bursts(window_of(keys(t1 + t2)))
    assert [b.keystrokes for b in r.bursts] == [6, 4]
    assert r.bursts[0].start == t1[0]


def test_single_keystroke_burst():
    r = segment_typing_bursts(window_of(keys([T0])))
    assert len(r.bursts) == 1 and r.bursts[0].keystrokes == 1


def test_click_splits_burst():
    times = [T0 + i * 150_000 for i in range(8)]
    pkts = keys(times) + [rec(times[3] + 120_000, frame=97)]
    assert [b.keystrokes for b in segment_typing_bursts(window_of(pkts)).bursts] == [4, 4]


def test_echo_assignment_and_uniform_flag():
    r = segment_typing_bursts(window_of(keys([T0 + i * 200_000 for i in range(5)], echo=1)))
    b = r.bursts[0]
    assert b.echo_sizes == [1] * 5 and b.uniform_echo
    late = keys([T0]) + [rec(T0 + 300_000, forward=False, payload=40, frame=94, flags=PSH)]
    assert segment_typing_bursts(window_of(late)).bursts[0].echo_sizes == []


def test_scripted_trace_bursts():
    script = tuple((1.0 + 0.15 * i, "key") for i in range(8)) + ((2.5, "click"),) + tuple((2.7 + 0.15 * i, "key") for i in range(6))
    p = ActivityProfile(("Notepad",), script=script, seed=4)
    (w,) = trace_windows(generate_trace(p))
    r = segment_typing_bursts(w)
    assert [b.keystrokes for b in r.bursts] == [8, 6]
    assert r.keystroke_estimate == 14 and not r.residual_frame


def test_password_field_uniform_echo():
    p = ActivityProfile(("Notepad",), typing_rate=3.0, echo_payload=1, seed=2)
    (w,) = trace_windows(generate_trace(p))
    bursts = segment_typing_bursts(w).bursts
    assert bursts and all(b.uniform_echo for b in bursts if b.keystrokes > 1)
    q = ActivityProfile(("Notepad",), typing_rate=3.0, seed=2)
    (w2,) = trace_windows(generate_trace(q))
    assert not all(b.uniform_echo for b in segment_typing_bursts(w2).bursts)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 30), st.lists(st.sampled_from([60, 91, 93, 97, 104, 300, 1500]), max_size=40), st.integers(0, 2**32 - 1))
def test_injection_invariance(n_keys, noise, seed):
    rng = np.random.default_rng(seed)
    base = keys(sorted(T0 + rng.integers(0, 29_000_000, n_keys))) + [rec(T0, frame=60)]
    extra = [rec(T0 + int(rng.integers(0, 29_000_000)), frame=f, forward=bool(rng.random() < 0.5)) for f in noise]
    extra += [rec(T0 + int(rng.integers(0, 29_000_000)), forward=False, frame=92) for _ in range(3)]
    a = count_keystrokes(window_of(base))
    b = count_keystrokes(window_of(base + extra, start=T0))
    assert a.keystroke_estimate == b.keystroke_estimate == n_keys


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 10**9), st.integers(0, 2**32 - 1))
def test_translation_invariance(n_keys, shift, seed):
    rng = np.random.default_rng(seed)
    times = sorted(T0 + rng.integers(0, 20_000_000, n_keys))
    a = segment_typing_bursts(window_of(keys(times, echo=5)))
    b = segment_typing_bursts(window_of(keys([t + shift for t in times], echo=5)))
    assert [x.keystrokes for x in a.bursts] == [x.keystrokes for x in b.bursts]
    assert [x.start + shift for x in a.bursts] == [x.start for x in b.bursts]


def test_no_tcp_conversation():
    w = window_of([rec(T0, udp=True, frame=92)])
    for fn in (count_keystrokes, detect_mouse_events, segment_typing_bursts):
        with pytest.raises(NoTcpConversation):
            fn(w)


def test_bad_gap():
    with pytest.raises(ValueError):
        segment_typing_bursts(window_of(keys([T0])), gap=0)


def test_report_json():
    r = analyze_window(window_of(keys([T0, T0 + 100_000], echo=3) + [rec(T0 + 5, frame=104)]))
    assert r["keystroke_estimate"] == 2 and r["move_packets"] == 1
    back = json.loads(report_json([r]))
    assert back[0]["bursts"][0]["uniform_echo"] is True
