"""Linear-chain CRF chord predictor, written from scratch on numpy.

The chain runs over beats; the label of a beat is its playable chord and
the unigram features of a beat look back at the previous eight fully
observed beats (bar index, cached arranged chord, longest melody note).
Inference marginalizes every history label with the forward recursion, so
the model's own outputs can never leak back in: its inputs are cache-derived
observations only.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .validation import REST

WINDOW_BEATS = 8

PAD_VALUE = "<pad>"


@dataclass(frozen=True)
class BeatObservation:
    """What the predictor may see about one beat."""

    bar_index: int            # -1 for padding
    chord_label: str          # cached arranged chord label, or PAD_VALUE
    longest_note: int | None  # first longest note's pitch, REST if silent

    def field(self, name):
        if name == "chord":
            return self.chord_label
        if name == "note":
            if self.longest_note is None:
                return PAD_VALUE
            return "rest" if self.longest_note == REST else str(self.longest_note)
        if name == "bar":
            return PAD_VALUE if self.bar_index < 0 else str(self.bar_index % 4)
        raise KeyError(f"unknown observation field {name!r}")


PAD_OBSERVATION = BeatObservation(-1, PAD_VALUE, None)


def frontier_marginal(scores, transitions):
    """Marginal of the last position of a linear chain by the forward
    recursion, given per-position unigram scores and a transition matrix."""
    log_alpha = np.asarray(scores[0], dtype=float).copy()
    for t in range(1, len(scores)):
        log_alpha = logsumexp(log_alpha[:, None] + transitions, axis=0) + scores[t]
    return np.exp(log_alpha - logsumexp(log_alpha))


def parse_templates(text):
    """Parse the template configuration (one template per line)."""
    templates = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "B":
            templates.append(("B",))
            continue
        kind, offset, fields = line.split(":", 2)
        if kind != "U":
            raise ValueError(f"unknown template kind in {line!r}")
        offset = int(offset)
        if offset > 0:
            raise ValueError("unigram offsets must look backwards (<= 0)")
        templates.append(("U", offset, tuple(fields.split("|"))))
    if not any(t[0] == "U" for t in templates):
        raise ValueError("template set needs at least one unigram template")
    return templates


def default_templates():
    text = resources.files("chordflow.data").joinpath("crf_templates.txt").read_text()
    return parse_templates(text)


def _feature_strings(templates, observations, position):
    """Instantiated unigram feature strings for one chain position.

    ``observations[position]`` describes the beat being labelled, so its
    lookback context starts at ``position - 1`` (offset 0); indices below
    zero read the PAD observation.
    """
    out = []
    for template in templates:
        if template[0] != "U":
            continue
        _, offset, fields = template
        idx = position - 1 + offset
        obs = observations[idx] if 0 <= idx < len(observations) else PAD_OBSERVATION
        value = "|".join(obs.field(f) for f in fields)
        out.append(f"U{offset}:{'|'.join(fields)}={value}")
    return out


class CrfModel:
    """Trained parameters: unigram weight table, transition matrix."""

    def __init__(self, labels, feature_ids, unigram_weights, transitions, templates,
                 hyper=None):
        self.labels = list(labels)
        self.label_index = {l: i for i, l in enumerate(self.labels)}
        self.feature_ids = dict(feature_ids)
        self.unigram_weights = np.asarray(unigram_weights, dtype=float)
        self.transitions = np.asarray(transitions, dtype=float)
        self.templates = list(templates)
        self.hyper = dict(hyper or {})
        self.has_transitions = any(t[0] == "B" for t in self.templates)
        if not np.isfinite(self.unigram_weights).all() or not np.isfinite(self.transitions).all():
            raise ValueError("weights must be finite")

    @property
    def n_labels(self):
        return len(self.labels)

    def unigram_scores(self, observations, n_positions):
        """Matrix (n_positions, n_labels) of summed active feature weights."""
        scores = np.zeros((n_positions, self.n_labels))
        for t in range(n_positions):
            for feat in _feature_strings(self.templates, observations, t):
                idx = self.feature_ids.get(feat)
                if idx is not None:
                    scores[t] += self.unigram_weights[idx]
        return scores

    def forward_marginal(self, window):
        """Distribution over the label one position past the window.

        ``window`` holds exactly WINDOW_BEATS observations for the beats
        before the query; the forward recursion marginalizes the labels of
        all of them.
        """
        window = list(window)
        if len(window) != WINDOW_BEATS:
            raise ValueError(f"window must contain {WINDOW_BEATS} observations")
        scores = self.unigram_scores(window, WINDOW_BEATS + 1)
        trans = self.transitions if self.has_transitions else np.zeros_like(self.transitions)
        return frontier_marginal(scores, trans)

    def viterbi(self, observations, n_positions=None):
        """Best label sequence for a fully observed stretch (training aid)."""
        observations = list(observations)
        n_positions = n_positions or len(observations)
        scores = self.unigram_scores(observations, n_positions)
        trans = self.transitions if self.has_transitions else np.zeros_like(self.transitions)
        best = scores[0].copy()
        back = []
        for t in range(1, n_positions):
            grid = best[:, None] + trans
            back.append(np.argmax(grid, axis=0))
            best = grid[back[-1], np.arange(self.n_labels)] + scores[t]
        path = [int(np.argmax(best))]
        for pointers in reversed(back):
            path.append(int(pointers[path[-1]]))
        path.reverse()
        return [self.labels[i] for i in path]

    def predict_next(self, window):
        """Most probable next chord label; ties go to the lower index."""
        marginal = self.forward_marginal(window)
        return self.labels[int(np.argmax(marginal))]

    # ------------------------------------------------------------ storage

    MAGIC = b"CFPRED01"

    def save(self, path):
        header = json.dumps(
            {
                "labels": self.labels,
                "features": sorted(self.feature_ids, key=self.feature_ids.get),
                "templates": [list(t) for t in self.templates],
                "hyper": self.hyper,
            }
        ).encode()
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack(">I", len(header)))
            fh.write(header)
            fh.write(self.unigram_weights.astype("<f8").tobytes())
            fh.write(self.transitions.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != cls.MAGIC:
                raise ValueError("not a predictor checkpoint")
            (header_len,) = struct.unpack(">I", fh.read(4))
            header = json.loads(fh.read(header_len))
            labels = header["labels"]
            features = header["features"]
            n_feat, n_lab = len(features), len(labels)
            uni = np.frombuffer(fh.read(8 * n_feat * n_lab), dtype="<f8").reshape(
                n_feat, n_lab
            )
            trans = np.frombuffer(fh.read(8 * n_lab * n_lab), dtype="<f8").reshape(
                n_lab, n_lab
            )
        templates = [tuple(t) if t[0] == "B" else ("U", t[1], tuple(t[2])) for t in header["templates"]]
        return cls(
            labels,
            {f: i for i, f in enumerate(features)},
            uni,
            trans,
            templates,
            header.get("hyper"),
        )


def _sequence_features(templates, observations, n_positions, feature_ids):
    """Active feature ids per position (list of int lists)."""
    out = []
    for t in range(n_positions):
        ids = []
        for feat in _feature_strings(templates, observations, t):
            idx = feature_ids.get(feat)
            if idx is not None:
                ids.append(idx)
        out.append(ids)
    return out


def _sequence_nll_grad(feats, label_ids, W, A, has_trans):
    """Negative log-likelihood and gradients for one labelled sequence."""
    T = len(label_ids)
    n_labels = W.shape[1]
    scores = np.zeros((T, n_labels))
    for t, ids in enumerate(feats):
        for idx in ids:
            scores[t] += W[idx]

    trans = A if has_trans else np.zeros_like(A)
    log_alpha = np.zeros((T, n_labels))
    log_alpha[0] = scores[0]
    for t in range(1, T):
        log_alpha[t] = logsumexp(log_alpha[t - 1][:, None] + trans, axis=0) + scores[t]
    log_z = logsumexp(log_alpha[-1])

    log_beta = np.zeros((T, n_labels))
    for t in range(T - 2, -1, -1):
        log_beta[t] = logsumexp(trans + (scores[t + 1] + log_beta[t + 1])[None, :], axis=1)

    gold = 0.0
    for t in range(T):
        gold += scores[t, label_ids[t]]
        if t:
            gold += trans[label_ids[t - 1], label_ids[t]]
    nll = log_z - gold

    grad_W = np.zeros_like(W)
    grad_A = np.zeros_like(A)
    # expected minus empirical counts
    marginals = np.exp(log_alpha + log_beta - log_z)
    for t, ids in enumerate(feats):
        diff = marginals[t].copy()
        diff[label_ids[t]] -= 1.0
        for idx in ids:
            grad_W[idx] += diff
    if has_trans:
        for t in range(1, T):
            pair = (
                log_alpha[t - 1][:, None]
                + trans
                + (scores[t] + log_beta[t])[None, :]
                - log_z
            )
            grad_A += np.exp(pair)
            grad_A[label_ids[t - 1], label_ids[t]] -= 1.0
    return nll, grad_W, grad_A


def train_crf(sequences, templates=None, max_iterations=35, min_feature_frequency=3,
              regularization_cost=4.0):
    """Fit a CrfModel on (observations, gold label sequence) pairs.

    The regularized objective sum(log p) - ||w||^2 / (2*cost) is maximized
    with L-BFGS (at most ``max_iterations`` accepted steps); unigram feature
    strings seen fewer than ``min_feature_frequency`` times are pruned
    before training.  Returns (model, nll_path).
    """
    if not sequences:
        raise ValueError("training corpus is empty")
    templates = templates or default_templates()
    has_trans = any(t[0] == "B" for t in templates)

    labels = sorted({label for _, gold in sequences for label in gold})
    label_index = {l: i for i, l in enumerate(labels)}

    counts = {}
    for observations, gold in sequences:
        if len(observations) != len(gold):
            raise ValueError("observation and label sequences must align")
        if len(gold) < 2:
            raise ValueError("sequences must contain at least two beats")
        for t in range(len(gold)):
            for feat in _feature_strings(templates, observations, t):
                counts[feat] = counts.get(feat, 0) + 1
    kept = sorted(f for f, c in counts.items() if c >= min_feature_frequency)
    feature_ids = {f: i for i, f in enumerate(kept)}

    n_feat, n_lab = len(kept), len(labels)
    prepared = []
    for observations, gold in sequences:
        feats = _sequence_features(templates, observations, len(gold), feature_ids)
        label_ids = [label_index[l] for l in gold]
        prepared.append((feats, label_ids))

    inv_cost = 1.0 / (2.0 * regularization_cost)
    nll_path = []

    def objective(theta):
        W = theta[: n_feat * n_lab].reshape(n_feat, n_lab)
        A = theta[n_feat * n_lab :].reshape(n_lab, n_lab)
        total = inv_cost * float(theta @ theta)
        grad_W = 2.0 * inv_cost * W
        grad_A = 2.0 * inv_cost * A
        for feats, label_ids in prepared:
            nll, gW, gA = _sequence_nll_grad(feats, label_ids, W, A, has_trans)
            total += nll
            grad_W += gW
            grad_A += gA
        return total, np.concatenate([grad_W.ravel(), grad_A.ravel()])

    theta0 = np.zeros(n_feat * n_lab + n_lab * n_lab)
    result = minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        callback=lambda theta: nll_path.append(objective(theta)[0]),
        options={"maxiter": max_iterations, "maxls": 40},
    )
    theta = result.x
    model = CrfModel(
        labels,
        feature_ids,
        theta[: n_feat * n_lab].reshape(n_feat, n_lab),
        theta[n_feat * n_lab :].reshape(n_lab, n_lab),
        templates,
        hyper={
            "max_iterations": max_iterations,
            "min_feature_frequency": min_feature_frequency,
            "regularization_cost": regularization_cost,
        },
    )
    return model, nll_path


class ChordPredictor(BaseEstimator):
    """Estimator wrapper: fit on labelled sequences, predict next chords."""

    def __init__(self, templates=None, max_iterations=35, min_feature_frequency=3,
                 regularization_cost=4.0):
        self.templates = templates
        self.max_iterations = max_iterations
        self.min_feature_frequency = min_feature_frequency
        self.regularization_cost = regularization_cost

    def fit(self, sequences, y=None):
        templates = self.templates
        if isinstance(templates, str):
            with open(templates) as fh:
                templates = parse_templates(fh.read())
        self.model_, self.nll_path_ = train_crf(
            sequences,
            templates,
            self.max_iterations,
            self.min_feature_frequency,
            self.regularization_cost,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("ChordPredictor is not fitted")

    @property
    def labels_(self):
        self._check_fitted()
        return self.model_.labels

    def predict_proba(self, window):
        self._check_fitted()
        return self.model_.forward_marginal(window)

    def predict(self, window):
        self._check_fitted()
        return self.model_.predict_next(window)

    def save(self, path):
        self._check_fitted()
        self.model_.save(path)

    @classmethod
    def from_checkpoint(cls, path):
        predictor = cls()
        predictor.model_ = CrfModel.load(path)
        predictor.nll_path_ = []
        return predictor
