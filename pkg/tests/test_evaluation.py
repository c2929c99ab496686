import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boundloop.corpus_io import Segmentation, Word
from boundloop.evaluation import (boundary_f1, fmt, make_report, match_boundaries, match_tokens,
                                  read_key_values, token_f1, tokens_of, tokens_per_second,
                                  tokens_per_type, transcribe)
from oracles import brute_boundary_matches, brute_token_matches

GOLD = {"u": [Word("a", 0.0, 0.5), Word("b", 0.5, 1.0)]}


def seg(*times):
    return Segmentation({"u": np.array(times, dtype=float)})


def test_token_f1_perfect():
    assert token_f1(seg(0, 0.5, 1.0), GOLD, 0.03) == (1.0, 1.0, 1.0)


def test_token_f1_no_match():
    assert token_f1(seg(0, 1.0), GOLD, 0.03)[2] == 0.0


def test_token_f1_tolerance():
    assert token_f1(seg(0, 0.52, 1.0), GOLD, 0.03)[2] == 1.0
    assert token_f1(seg(0, 0.52, 1.0), GOLD, 0.01)[2] == 0.0


def test_tolerance_edge_exact_ms():
    # |0.53 - 0.5| is 0.030000000000000027 in floating point
    assert token_f1(seg(0, 0.53, 1.0), GOLD, 0.03)[2] == 1.0


def test_utterance_mismatch():
    with pytest.raises(ValueError, match="different utterances"):
        token_f1(Segmentation({"v": np.array([0.0, 1.0])}), GOLD)


def test_boundary_f1_identical():
    s = seg(0, 0.3, 0.7, 1.0)
    assert boundary_f1(s, s)[2] == 1.0


def test_boundary_f1_edges_only():
    p, r, f = boundary_f1(seg(0, 1.0), seg(0, 0.3, 0.7, 1.0))
    assert (p, r) == (1.0, 0.5)
    assert f == pytest.approx(2 / 3)


def test_boundary_f1_swap():
    a, b = seg(0, 0.2, 0.31, 0.9, 1.0), seg(0, 0.3, 0.6, 1.0)
    p1, r1, f1 = boundary_f1(a, b)
    p2, r2, f2 = boundary_f1(b, a)
    assert (p1, r1) == (r2, p2)
    assert f1 == f2


def test_tokens_per_second():
    s = Segmentation({"u": np.linspace(0, 2.5, 11)})
    assert tokens_per_second(s, {"u": (0.0, 2.5)}) == pytest.approx(4.0)
    assert tokens_per_second(seg(0, 2.0), {"u": (0.0, 2.0)}) == 0.5


def test_tokens_per_second_pools_duration():
    s = Segmentation({"a": np.array([0.0, 0.5, 1.0]), "b": np.array([0.0, 3.0])})
    assert tokens_per_second(s, {"a": (0.0, 1.0), "b": (0.0, 3.0)}) == pytest.approx(3 / 4)


def test_tokens_per_second_zero_duration():
    with pytest.raises(ValueError):
        tokens_per_second(Segmentation(), {})


def test_tokens_per_type_counts():
    ali = {"u": [Word("ba", 0, 1), Word("da", 1, 2), Word("ba", 2, 3), Word("ba", 3, 4)]}
    assert tokens_per_type(Segmentation({"u": np.arange(5.0)}), ali) == 2.0


def test_tokens_per_type_gold_segmentation():
    ali = {"u": [Word("x", 0, 1), Word("y", 1, 2), Word("x", 2, 3)]}
    assert tokens_per_type(Segmentation({"u": np.arange(4.0)}), ali) == 1.5


def test_transcription_rules():
    words = [Word("w1", 0.0, 0.4), Word("w2", 0.4, 1.0)]
    assert transcribe((0.0, 1.0), words) == "w1 w2"
    assert transcribe((0.0, 0.5), words) == "w1"
    assert transcribe((0.45, 0.55), words) == "∅"


def _sorted_times(rng, n):
    return np.sort(np.round(rng.uniform(0, 1, n), 3))


def test_greedy_equals_exhaustive_boundaries():
    rng = np.random.default_rng(0)
    for _ in range(300):
        h = _sorted_times(rng, rng.integers(0, 9))
        g = _sorted_times(rng, rng.integers(0, 9))
        tol = float(rng.choice([0.01, 0.03, 0.1]))
        assert match_boundaries(h, g, tol) == brute_boundary_matches(list(h), list(g), tol)


def test_greedy_equals_exhaustive_tokens():
    rng = np.random.default_rng(1)
    for _ in range(300):
        h = tokens_of(np.unique(_sorted_times(rng, rng.integers(2, 9))))
        g = tokens_of(np.unique(_sorted_times(rng, rng.integers(2, 9))))
        tol = float(rng.choice([0.02, 0.05, 0.15]))
        assert match_tokens(h, g, tol) == brute_token_matches(h, g, tol)


times = st.lists(st.integers(1, 999), max_size=8, unique=True).map(lambda v: [0.0] + sorted(x / 1000 for x in v) + [1.0])


@settings(max_examples=200)
@given(times, times, st.sampled_from([0.005, 0.02, 0.05]), st.sampled_from([0.0, 0.001, 0.01]))
def test_shrinking_tolerance_never_helps(h, g, tol, shrink):
    hs, gs = seg(*h), seg(*g)
    ali = {"u": [Word("w", a, b) for a, b in tokens_of(g)]}
    wide_b, narrow_b = boundary_f1(hs, gs, tol), boundary_f1(hs, gs, tol - shrink)
    wide_t, narrow_t = token_f1(hs, ali, tol), token_f1(hs, ali, tol - shrink)
    for a, b in zip(narrow_b + narrow_t, wide_b + wide_t):
        assert a <= b + 1e-15


@settings(max_examples=200)
@given(times, st.integers(-10, 10))
def test_token_f1_one_iff_boundaries_coincide(g, jitter_ms):
    ali = {"u": [Word("w", a, b) for a, b in tokens_of(g)]}
    shifted = [g[0]] + [t + jitter_ms / 1000 for t in g[1:-1]] + [g[-1]]
    if np.any(np.diff(shifted) <= 0):
        return
    f = token_f1(seg(*shifted), ali, 0.005)[2]
    assert (f == 1.0) == (abs(jitter_ms) <= 5 or len(g) == 2)


# --- reports ----------------------------------------------------------------

REPORTED_FT = {"mandarin": 32.0, "french": 41.8, "english": 42.5, "german": 49.5, "wolof": 37.8}
REPORTED_INIT = {"mandarin": 26.3, "french": 12.2, "english": 19.5, "german": 15.2, "wolof": 14.8}


def test_average_and_improvement():
    rep = make_report({k: {"token_f1": v} for k, v in REPORTED_FT.items()},
                      baseline={k: {"token_f1": v} for k, v in REPORTED_INIT.items()})
    assert fmt(rep.averages["token_f1"]) == "40.7"
    assert fmt(rep.baseline["token_f1"]) == "17.6"
    assert rep.improvement["token_f1"] == pytest.approx(131.25)
    assert fmt(rep.improvement["token_f1"]) == "131.2"
    assert "average token_f1 40.7" in rep.key_values()
    assert "improvement token_f1 131.2%" in rep.key_values()


def test_baseline_as_averages():
    rep = make_report({"a": {"token_f1": 40.72}}, baseline={"token_f1": 17.6})
    assert fmt(rep.improvement["token_f1"]) == "131.2"


def test_single_corpus_average():
    rep = make_report({"only": {"token_f1": 12.3, "boundary_f1": 45.6}})
    assert rep.averages == {"boundary_f1": 45.6, "token_f1": 12.3}


def test_render_and_parse(tmp_path):
    rep = make_report({"a": {"token_f1": 10.0, "tokens_per_second": 3.25}, "b": {"token_f1": 20.0}})
    table = rep.render()
    assert table.splitlines()[0].split()[:3] == ["corpus", "token_f1", "tokens_per_second"]
    assert "average" in table and "15.0" in table
    p = tmp_path / "m.txt"
    p.write_text(rep.key_values())
    assert read_key_values(p) == {"a": {"token_f1": 10.0, "tokens_per_second": 3.25},
                                  "b": {"token_f1": 20.0}}


def test_fmt_half_even():
    assert fmt(131.25) == "131.2"
    assert fmt(40.72) == "40.7"
    assert fmt(0.05) == "0.0"
