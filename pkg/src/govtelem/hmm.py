"""Hidden Markov models for telemetry omission detection.

Agent interaction traces are symbol sequences (one symbol per operation).
A per-agent-type model learns the expected emission pattern over hidden
operational phases; at runtime the forward algorithm scores an observed
sequence and an alert fires when the length-normalized log-likelihood drops
below a threshold calibrated at the 5th percentile of training scores.

All probability math runs with per-step scaling so long sequences do not
underflow, training is Baum-Welch expectation-maximization with the usual
guarantee that corpus log-likelihood never decreases, and scoring is pure
so models are safe to share once trained.

Likelihoods are normalized by sequence length before thresholding; raw
log-likelihoods scale with length, so without normalization long nominal
sequences would alert spuriously.  Symbols outside the training alphabet
alert as omissions (reason "out-of-alphabet") rather than erroring silently:
unseen behaviour is the conservative case.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CalibrationError, ScoringError, TrainingError

MODEL_FORMAT_VERSION = 1

_ROW_SUM_TOL = 1e-9
_LL_SLACK = 1e-12


@dataclass(frozen=True)
class HmmModel:
    states: tuple[str, ...]
    symbols: tuple[str, ...]
    initial: np.ndarray  # (n_states,)
    transition: np.ndarray  # (n_states, n_states)
    emission: np.ndarray  # (n_states, n_symbols)

    def __post_init__(self):
        if not self.states or not self.symbols:
            raise ValueError("model needs at least one state and one symbol")
        n, m = len(self.states), len(self.symbols)
        if self.initial.shape != (n,) or self.transition.shape != (n, n):
            raise ValueError("initial/transition shape mismatch")
        if self.emission.shape != (n, m):
            raise ValueError("emission shape mismatch")
        for name, array in (
            ("initial", self.initial.reshape(1, -1)),
            ("transition", self.transition),
            ("emission", self.emission),
        ):
            if (array < 0).any():
                raise ValueError(f"{name} has negative entries")
            sums = array.sum(axis=1)
            if not np.allclose(sums, 1.0, atol=_ROW_SUM_TOL, rtol=0):
                raise ValueError(f"{name} rows must sum to 1 within {_ROW_SUM_TOL}")

    @property
    def symbol_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.symbols)}

    def encode(self, sequence: Sequence[str]) -> np.ndarray:
        index = self.symbol_index
        try:
            return np.array([index[s] for s in sequence], dtype=np.intp)
        except KeyError as exc:
            raise ScoringError(f"symbol outside model alphabet: {exc.args[0]!r}") from exc


def random_model(
    states: Sequence[str], symbols: Sequence[str], seed: int
) -> HmmModel:
    """Row-normalized positive random matrices from a seeded generator."""
    rng = np.random.default_rng(seed)
    n, m = len(states), len(symbols)

    def rows(shape):
        raw = rng.random(shape) + 0.05
        return raw / raw.sum(axis=-1, keepdims=True)

    return HmmModel(
        states=tuple(states),
        symbols=tuple(symbols),
        initial=rows(n),
        transition=rows((n, n)),
        emission=rows((n, m)),
    )


def _scaled_forward(model: HmmModel, obs: np.ndarray):
    """Forward pass with per-step scaling; returns (alphas, scales)."""
    T = len(obs)
    n = len(model.states)
    alphas = np.zeros((T, n))
    scales = np.zeros(T)
    alpha = model.initial * model.emission[:, obs[0]]
    scales[0] = alpha.sum()
    alphas[0] = alpha / scales[0] if scales[0] > 0 else alpha
    for t in range(1, T):
        alpha = (alphas[t - 1] @ model.transition) * model.emission[:, obs[t]]
        scales[t] = alpha.sum()
        alphas[t] = alpha / scales[t] if scales[t] > 0 else alpha
    return alphas, scales


def forward_loglik(model: HmmModel, sequence: Sequence[str]) -> float:
    """log P(sequence | model); -inf when the model assigns probability zero.

    Unknown symbols raise ScoringError, which is a structural failure
    distinct from a low likelihood.
    """
    if len(sequence) == 0:
        raise ScoringError("cannot score an empty sequence")
    obs = model.encode(sequence)
    _, scales = _scaled_forward(model, obs)
    if (scales <= 0).any():
        return float("-inf")
    return float(np.log(scales).sum())


def _scaled_backward(model: HmmModel, obs: np.ndarray, scales: np.ndarray) -> np.ndarray:
    T = len(obs)
    n = len(model.states)
    betas = np.zeros((T, n))
    betas[-1] = 1.0
    for t in range(T - 2, -1, -1):
        scale = scales[t + 1] if scales[t + 1] > 0 else 1.0
        betas[t] = (model.transition @ (model.emission[:, obs[t + 1]] * betas[t + 1])) / scale
    return betas


@dataclass(frozen=True)
class TrainingTrace:
    log_likelihoods: tuple[float, ...]
    iterations: int
    converged: bool


def baum_welch_train(
    sequences: Sequence[Sequence[str]],
    init: HmmModel,
    max_iters: int = 20,
    tol: float = 1e-4,
) -> tuple[HmmModel, TrainingTrace]:
    """Expectation-maximization re-estimation of all three distributions.

    Stops after max_iters or when the corpus log-likelihood improves by less
    than tol.  The per-iteration log-likelihood is non-decreasing (within
    numeric slack); the returned trace records it for verification.
    """
    if not sequences:
        raise TrainingError("training needs at least one sequence")
    if (init.initial <= 0).all() or (init.transition.sum(axis=1) == 0).any():
        raise TrainingError("degenerate initial model (zero row)")
    encoded = [init.encode(seq) for seq in sequences if len(seq) > 0]
    if not encoded:
        raise TrainingError("all training sequences are empty")

    model = init
    lls: list[float] = []
    converged = False
    for _ in range(max_iters):
        n, m = len(model.states), len(model.symbols)
        initial_acc = np.zeros(n)
        trans_num = np.zeros((n, n))
        trans_den = np.zeros(n)
        emit_num = np.zeros((n, m))
        emit_den = np.zeros(n)
        total_ll = 0.0

        for obs in encoded:
            alphas, scales = _scaled_forward(model, obs)
            if (scales <= 0).any():
                total_ll = float("-inf")
                continue
            total_ll += float(np.log(scales).sum())
            betas = _scaled_backward(model, obs, scales)
            gammas = alphas * betas
            gammas /= gammas.sum(axis=1, keepdims=True)
            initial_acc += gammas[0]
            for t in range(len(obs) - 1):
                xi = (
                    alphas[t][:, None]
                    * model.transition
                    * model.emission[:, obs[t + 1]][None, :]
                    * betas[t + 1][None, :]
                ) / scales[t + 1]
                trans_num += xi
                trans_den += gammas[t]
            for t, symbol in enumerate(obs):
                emit_num[:, symbol] += gammas[t]
                emit_den += gammas[t]

        lls.append(total_ll)

        def _normalize(num, den, fallback):
            out = np.array(fallback, copy=True)
            positive = den > 0
            out[positive] = num[positive] / den[positive][:, None]
            return out

        new_initial = initial_acc / initial_acc.sum()
        new_transition = _normalize(trans_num, trans_den, model.transition)
        new_emission = _normalize(emit_num, emit_den, model.emission)
        model = HmmModel(model.states, model.symbols, new_initial, new_transition, new_emission)

        if len(lls) >= 2 and abs(lls[-1] - lls[-2]) < tol:
            converged = True
            break

    return model, TrainingTrace(tuple(lls), len(lls), converged)


@dataclass(frozen=True)
class OmissionThreshold:
    theta: float  # log-likelihood per symbol
    calibration_quantile: float = 0.05


def normalized_loglik(model: HmmModel, sequence: Sequence[str]) -> float:
    return forward_loglik(model, sequence) / len(sequence)


def calibrate_threshold(
    model: HmmModel,
    sequences: Sequence[Sequence[str]],
    quantile: float = 0.05,
) -> OmissionThreshold:
    """Empirical quantile (linear interpolation) of length-normalized scores."""
    if len(sequences) < 20:
        raise CalibrationError(
            f"calibration needs at least 20 sequences, got {len(sequences)}"
        )
    scores = [normalized_loglik(model, seq) for seq in sequences]
    theta = float(np.percentile(scores, quantile * 100))
    return OmissionThreshold(theta=theta, calibration_quantile=quantile)


class OmissionVerdict(Enum):
    NOMINAL = "NOMINAL"
    OMISSION_SUSPECTED = "OMISSION_SUSPECTED"


@dataclass(frozen=True)
class OmissionScore:
    verdict: OmissionVerdict
    normalized_loglik: float | None
    reason: str


def score_for_omission(
    model: HmmModel, threshold: OmissionThreshold, sequence: Sequence[str]
) -> OmissionScore:
    """Alert when the normalized score drops strictly below the threshold."""
    try:
        score = normalized_loglik(model, sequence)
    except ScoringError:
        return OmissionScore(OmissionVerdict.OMISSION_SUSPECTED, None, "out-of-alphabet")
    if score < threshold.theta:
        return OmissionScore(OmissionVerdict.OMISSION_SUSPECTED, score, "below-threshold")
    return OmissionScore(OmissionVerdict.NOMINAL, score, "ok")


def sample_sequence(model: HmmModel, length: int, rng: np.random.Generator) -> list[str]:
    """Draw one sequence from the model (test and corpus generation helper)."""
    state = rng.choice(len(model.states), p=model.initial)
    out = []
    for _ in range(length):
        out.append(model.symbols[rng.choice(len(model.symbols), p=model.emission[state])])
        state = rng.choice(len(model.states), p=model.transition[state])
    return out


def save_model(model: HmmModel, path: str | Path) -> None:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "states": list(model.states),
        "symbols": list(model.symbols),
        "initial": model.initial.tolist(),
        "transition": model.transition.tolist(),
        "emission": model.emission.tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_model(path: str | Path) -> HmmModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise TrainingError(f"unsupported model version {doc.get('version')!r}")
    return HmmModel(
        states=tuple(doc["states"]),
        symbols=tuple(doc["symbols"]),
        initial=np.array(doc["initial"]),
        transition=np.array(doc["transition"]),
        emission=np.array(doc["emission"]),
    )
