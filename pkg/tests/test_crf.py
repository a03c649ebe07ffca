import itertools
import math

import numpy as np
import pytest

from chordflow.crf import (
    PAD_OBSERVATION,
    PAD_VALUE,
    WINDOW_BEATS,
    BeatObservation,
    ChordPredictor,
    CrfModel,
    _feature_strings,
    default_templates,
    frontier_marginal,
    parse_templates,
    train_crf,
)
from chordflow.validation import REST


def brute_force_frontier(scores, transitions):
    """Enumerate every label sequence, sum path weights, marginalize the
    final position."""
    n_pos, n_lab = scores.shape
    mass = np.zeros(n_lab)
    for seq in itertools.product(range(n_lab), repeat=n_pos):
        total = scores[0, seq[0]]
        for t in range(1, n_pos):
            total += transitions[seq[t - 1], seq[t]] + scores[t, seq[t]]
        mass[seq[-1]] += math.exp(total)
    return mass / mass.sum()


def obs(bar, chord, note):
    return BeatObservation(bar, chord, note)


def toy_sequences():
    """Two deterministic progressions with aligned cached-chord context."""
    labels = ["C", "F", "G"]
    sequences = []
    for pattern in ([0, 1, 2, 0] * 4, [0, 2, 1, 0] * 4):
        gold = [labels[i] for i in pattern]
        observations = [
            obs(b // 4, gold[b], 60 + pattern[b]) for b in range(len(gold))
        ]
        sequences.append((observations, gold))
    return sequences


def window_for(sequence, upto):
    """Last WINDOW_BEATS observations before position ``upto``, left-padded."""
    observations, _ = sequence
    window = observations[max(0, upto - WINDOW_BEATS) : upto]
    return [PAD_OBSERVATION] * (WINDOW_BEATS - len(window)) + list(window)


class TestTemplates:
    def test_default_parse(self):
        templates = default_templates()
        assert ("B",) in templates
        assert ("U", 0, ("chord",)) in templates
        assert ("U", -1, ("chord", "note")) in templates

    def test_rejects_forward_offsets(self):
        with pytest.raises(ValueError):
            parse_templates("U:1:chord")

    def test_requires_unigram(self):
        with pytest.raises(ValueError):
            parse_templates("B")


class TestFeatureExtraction:
    def test_all_pad_window_deterministic(self):
        templates = default_templates()
        window = [PAD_OBSERVATION] * WINDOW_BEATS
        feats = _feature_strings(templates, window, 0)
        n_unigram = sum(1 for t in templates if t[0] == "U")
        assert len(feats) == n_unigram
        assert all(PAD_VALUE in f for f in feats)
        assert feats == _feature_strings(templates, window, 0)

    def test_window_difference_localized(self):
        templates = default_templates()
        base = [obs(0, "C", 60) for _ in range(WINDOW_BEATS)]
        changed = list(base)
        changed[0] = obs(0, "C", 62)  # offset -7 relative to the query
        q = WINDOW_BEATS
        fa = set(_feature_strings(templates, base, q))
        fb = set(_feature_strings(templates, changed, q))
        delta = fa ^ fb
        assert delta != set()
        assert all("U-7:" in f for f in delta)
        assert all("note" in f for f in delta)

    def test_injective_on_chord_note_pairs(self):
        templates = default_templates()
        seen = {}
        for chord in ("C", "F", "G", "Am"):
            for note in (60, 64, 67, REST):
                window = [obs(0, chord, note)] * WINDOW_BEATS
                key = tuple(sorted(_feature_strings(templates, window, WINDOW_BEATS)))
                assert key not in seen, f"collision with {seen.get(key)}"
                seen[key] = (chord, note)


class TestForwardMarginal:
    def test_uniform_on_zero_weights(self):
        templates = default_templates()
        model = CrfModel(
            ["a", "b", "c"], {}, np.zeros((0, 3)), np.zeros((3, 3)), templates
        )
        window = [PAD_OBSERVATION] * WINDOW_BEATS
        marginal = model.forward_marginal(window)
        assert np.allclose(marginal, 1 / 3)
        assert model.predict_next(window) == "a"  # tie -> lowest index

    def test_matches_enumeration_small(self):
        rng = np.random.default_rng(12)
        for _ in range(1000):
            n_lab = rng.integers(2, 6)
            n_pos = rng.integers(2, 7)
            scores = rng.normal(size=(n_pos, n_lab)) * 2
            trans = rng.normal(size=(n_lab, n_lab))
            ours = frontier_marginal(scores, trans)
            oracle = brute_force_frontier(scores, trans)
            assert np.allclose(ours, oracle, rtol=1e-9, atol=1e-12)
            assert abs(ours.sum() - 1.0) < 1e-9

    def test_matches_enumeration_full_window(self):
        # two labels so the 9-position enumeration stays tractable
        rng = np.random.default_rng(3)
        templates = default_templates()
        for _ in range(25):
            scores = rng.normal(size=(WINDOW_BEATS + 1, 2))
            trans = rng.normal(size=(2, 2))
            ours = frontier_marginal(scores, trans)
            oracle = brute_force_frontier(scores, trans)
            assert np.allclose(ours, oracle, rtol=1e-9)

    def test_window_length_enforced(self):
        model = CrfModel(["a"], {}, np.zeros((0, 1)), np.zeros((1, 1)), default_templates())
        with pytest.raises(ValueError):
            model.forward_marginal([PAD_OBSERVATION] * 3)

    def test_feature_shift_invariance(self):
        # adding a constant to one feature's weights across all labels
        # shifts every path score equally: the marginal cannot move
        sequences = toy_sequences()
        model, _ = train_crf(sequences, max_iterations=10, min_feature_frequency=1)
        window = window_for(sequences[0], 8)
        base = model.forward_marginal(window)
        active = [
            model.feature_ids[f]
            for f in _feature_strings(model.templates, window, WINDOW_BEATS)
            if f in model.feature_ids
        ]
        assert active
        shifted = model.unigram_weights.copy()
        shifted[active[0]] += 3.7
        moved = CrfModel(
            model.labels, model.feature_ids, shifted, model.transitions, model.templates
        )
        assert np.allclose(moved.forward_marginal(window), base, rtol=1e-9)

    def test_log_space_stability(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            scores = rng.uniform(-50, 50, size=(WINDOW_BEATS + 1, 4))
            trans = rng.uniform(-50, 50, size=(4, 4))
            marginal = frontier_marginal(scores, trans)
            assert np.isfinite(marginal).all()
            assert abs(marginal.sum() - 1.0) < 1e-9


class TestTraining:
    def test_nll_non_increasing(self):
        model, path = train_crf(toy_sequences(), max_iterations=35,
                                min_feature_frequency=3, regularization_cost=4.0)
        assert len(path) >= 2
        for earlier, later in zip(path, path[1:]):
            assert later <= earlier + 1e-9

    def test_single_sequence_overfit_viterbi(self):
        seq = toy_sequences()[0]
        model, _ = train_crf([seq], max_iterations=60, min_feature_frequency=1,
                             regularization_cost=50.0)
        decoded = model.viterbi(seq[0])
        assert decoded == seq[1]

    def test_overfit_predict_next(self):
        sequences = toy_sequences()
        model, _ = train_crf(sequences, max_iterations=50, min_feature_frequency=1,
                             regularization_cost=50.0)
        hits = total = 0
        for seq in sequences:
            gold = seq[1]
            for t in range(2, len(gold)):
                prediction = model.predict_next(window_for(seq, t))
                hits += prediction == gold[t]
                total += 1
        assert hits / total >= 0.95

    def test_gradient_matches_finite_differences(self):
        # 3 labels x 4 positions, full objective including regularizer
        labels = ["x", "y", "z"]
        gold = ["x", "y", "z", "x"]
        observations = [obs(0, gold[t], 60 + t) for t in range(4)]
        templates = parse_templates("U:0:chord\nU:0:note\nB")
        from chordflow.crf import _sequence_features, _sequence_nll_grad

        counts = {}
        for t in range(4):
            for f in _feature_strings(templates, observations, t):
                counts[f] = counts.get(f, 0) + 1
        feature_ids = {f: i for i, f in enumerate(sorted(counts))}
        feats = _sequence_features(templates, observations, 4, feature_ids)
        label_ids = [labels.index(l) for l in gold]
        n_feat = len(feature_ids)
        rng = np.random.default_rng(5)
        W = rng.normal(size=(n_feat, 3))
        A = rng.normal(size=(3, 3))

        def f(theta):
            w = theta[: n_feat * 3].reshape(n_feat, 3)
            a = theta[n_feat * 3 :].reshape(3, 3)
            nll, gw, ga = _sequence_nll_grad(feats, label_ids, w, a, True)
            return nll, np.concatenate([gw.ravel(), ga.ravel()])

        theta = np.concatenate([W.ravel(), A.ravel()])
        _, grad = f(theta)
        step = 1e-6
        for idx in range(0, len(theta), max(1, len(theta) // 25)):
            plus = theta.copy()
            plus[idx] += step
            minus = theta.copy()
            minus[idx] -= step
            numeric = (f(plus)[0] - f(minus)[0]) / (2 * step)
            denom = max(abs(numeric), abs(grad[idx]), 1e-8)
            assert abs(numeric - grad[idx]) / denom < 1e-5

    def test_pruning_monotonicity(self):
        sequences = toy_sequences()
        sizes = []
        for freq in (1, 2, 3, 5, 8):
            model, _ = train_crf(sequences, max_iterations=2,
                                 min_feature_frequency=freq)
            sizes.append(len(model.feature_ids))
        assert sizes == sorted(sizes, reverse=True)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            train_crf([])

    def test_short_sequence_rejected(self):
        with pytest.raises(ValueError):
            train_crf([([obs(0, "C", 60)], ["C"])])


class TestEstimatorAndStorage:
    def test_estimator_roundtrip(self, tmp_path):
        predictor = ChordPredictor(max_iterations=15, min_feature_frequency=1)
        sequences = toy_sequences()
        predictor.fit(sequences)
        window = window_for(sequences[0], 6)
        proba = predictor.predict_proba(window)
        assert abs(proba.sum() - 1.0) < 1e-9
        path = tmp_path / "predictor.bin"
        predictor.save(path)
        loaded = ChordPredictor.from_checkpoint(path)
        assert loaded.model_.labels == predictor.model_.labels
        assert np.allclose(
            loaded.predict_proba(window), proba, rtol=0, atol=1e-12
        )
        assert loaded.predict(window) == predictor.predict(window)

    def test_params_surface(self):
        predictor = ChordPredictor(max_iterations=35)
        params = predictor.get_params()
        assert params["max_iterations"] == 35
        assert params["regularization_cost"] == 4.0
        assert params["min_feature_frequency"] == 3

    def test_unfitted_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            ChordPredictor().predict([PAD_OBSERVATION] * WINDOW_BEATS)


class TestExposureBiasInterface:
    def test_observation_has_no_prediction_field(self):
        # the observation type admits cache and melody data only
        fields = set(BeatObservation.__dataclass_fields__)
        assert fields == {"bar_index", "chord_label", "longest_note"}

    def test_prediction_ignores_hypothetical_feedback(self):
        # altering what was previously *predicted* cannot change anything,
        # because predictions are not part of the window type at all
        sequences = toy_sequences()
        model, _ = train_crf(sequences, max_iterations=10, min_feature_frequency=1)
        window = window_for(sequences[0], 9)
        first = model.predict_next(window)
        _ = model.predict_next(window_for(sequences[1], 9))  # unrelated call
        assert model.predict_next(window) == first
