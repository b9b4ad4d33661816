"""
Verification module for anchorstream.

Each method checks one numerical component against an independent oracle:
brute-force CTC path enumeration, central finite differences, a recursive
edit-distance definition and the LoRA identity at initialization.
"""

import itertools
import logging
from functools import lru_cache
from typing import Any, Callable, Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from anchorstream.core.ctc import collapse, ctc_loss
from anchorstream.core.model import (
    backward,
    flatten_gradients,
    flatten_params,
    flatten_trainable,
    forward,
    forward_with_cache,
    init_model,
    unflatten_params,
    unflatten_trainable,
)
from anchorstream.core.tensor import RngState, gaussian, log_softmax_rows
from anchorstream.exceptions import InfeasibleAlignmentError
from anchorstream.schemas.config import ModelConfig
from anchorstream.services.metrics import edit_ops

logger = logging.getLogger(__name__)

TINY_MODEL = ModelConfig(
    d_model=8, n_layers=1, n_heads=2, d_ff=16, feat_dim=4, vocab_size=3, lora_rank=2, lora_alpha=4.0
)

# gradient entries smaller than this are compared on an absolute scale
GRADIENT_FLOOR = 1e-4


class VerificationResult(BaseModel):
    """Outcome of one oracle suite."""
    is_verified: bool
    verification_method: str
    cases_checked: int
    max_error: float
    tolerance: float
    verification_details: Dict[str, Any] = {}


def brute_force_ctc(log_probs: np.ndarray, labels: Sequence[int]) -> float:
    """-log sum over every frame path collapsing to `labels`; inf when none does."""
    n_frames, n_symbols = log_probs.shape
    blank = n_symbols - 1
    scores = [
        sum(log_probs[t, s] for t, s in enumerate(path))
        for path in itertools.product(range(n_symbols), repeat=n_frames)
        if collapse(path, blank) == tuple(labels)
    ]
    if not scores:
        return np.inf
    return -float(np.logaddexp.reduce(scores))


def recursive_edit_distance(a: Tuple, b: Tuple) -> int:
    """Levenshtein distance from its recursive definition over suffixes."""

    @lru_cache(maxsize=None)
    def dist(i: int, j: int) -> int:
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        if a[i] == b[j]:
            return dist(i + 1, j + 1)
        return 1 + min(dist(i + 1, j), dist(i, j + 1), dist(i + 1, j + 1))

    return dist(0, 0)


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, coords: Sequence[int], eps: float = 1e-5) -> np.ndarray:
    out = np.empty(len(coords))
    for n, i in enumerate(coords):
        plus, minus = x.copy(), x.copy()
        plus[i] += eps
        minus[i] -= eps
        out[n] = (fn(plus) - fn(minus)) / (2 * eps)
    return out


class OracleVerifier:
    """
    Runs the oracle suites.

    Every suite is deterministic for a given seed and returns a
    VerificationResult; `verify_all` runs them in a fixed order.
    """

    def __init__(self, seed: int = 0, edit_max_len: int = 6, edit_alphabet: str = "ab"):
        """Initialize the verifier and its method table."""
        self.rng = RngState(seed)
        self.edit_max_len = edit_max_len
        self.edit_alphabet = edit_alphabet
        self.verification_methods: Dict[str, Callable[[], VerificationResult]] = {
            "ctc_brute_force": self._ctc_brute_force_verification,
            "ctc_gradient": self._ctc_gradient_verification,
            "model_gradient": self._model_gradient_verification,
            "edit_distance": self._edit_distance_verification,
            "lora_identity": self._lora_identity_verification,
        }

    def verify(self, method: str) -> VerificationResult:
        if method not in self.verification_methods:
            raise ValueError(f"Unknown verification method: {method}")
        result = self.verification_methods[method]()
        logger.info(
            "%s: %s (%d cases, max error %.3e, tolerance %.1e)",
            method, "ok" if result.is_verified else "FAILED",
            result.cases_checked, result.max_error, result.tolerance,
        )
        return result

    def verify_all(self) -> List[VerificationResult]:
        return [self.verify(method) for method in self.verification_methods]

    def _ctc_brute_force_verification(self) -> VerificationResult:
        """ctc_loss against full path enumeration for T <= 4, |y| <= 2, V <= 3."""
        tolerance, worst, cases, infeasible_ok = 1e-10, 0.0, 0, True
        gen = self.rng.derive("ctc_brute").generator
        for n_symbols in (2, 3):
            alphabet = range(n_symbols - 1)
            label_sets = [seq for n in range(3) for seq in itertools.product(alphabet, repeat=n)]
            for n_frames in range(1, 5):
                log_probs = log_softmax_rows(gen.normal(size=(n_frames, n_symbols)))
                for labels in label_sets:
                    expected = brute_force_ctc(log_probs, labels)
                    cases += 1
                    try:
                        loss, _ = ctc_loss(log_probs, labels)
                    except InfeasibleAlignmentError:
                        infeasible_ok &= bool(np.isinf(expected))
                        continue
                    worst = max(worst, abs(loss - expected))
        return VerificationResult(
            is_verified=worst <= tolerance and infeasible_ok,
            verification_method="ctc_brute_force",
            cases_checked=cases,
            max_error=worst,
            tolerance=tolerance,
            verification_details={"infeasible_cases_consistent": infeasible_ok},
        )

    def _ctc_gradient_verification(self) -> VerificationResult:
        """d ctc_loss / d logits against central differences on random instances."""
        tolerance, worst, cases = 1e-4, 0.0, 20
        gen = self.rng.derive("ctc_grad").generator
        for _ in range(cases):
            n_frames, n_labels = int(gen.integers(3, 7)), int(gen.integers(1, 3))
            logits = gen.normal(size=(n_frames, 4))
            labels = tuple(int(x) for x in gen.integers(0, 3, size=n_labels))
            _, grad = ctc_loss(log_softmax_rows(logits), labels)

            def loss_of(flat: np.ndarray) -> float:
                return ctc_loss(log_softmax_rows(flat.reshape(logits.shape)), labels)[0]

            flat = logits.reshape(-1)
            numeric = central_difference(loss_of, flat, range(flat.size))
            worst = max(worst, relative_error(grad.reshape(-1), numeric))
        return VerificationResult(
            is_verified=worst <= tolerance,
            verification_method="ctc_gradient",
            cases_checked=cases,
            max_error=worst,
            tolerance=tolerance,
        )

    def _model_gradient_verification(self) -> VerificationResult:
        """backward() for the LoRA and base subsets against central differences."""
        tolerance, worst, cases = 1e-4, 0.0, 20
        details: Dict[str, float] = {}
        for case in range(cases):
            rng = self.rng.derive("model_grad", case)
            model = init_model(TINY_MODEL, rng)
            # non-zero B so adapter gradients flow through both factors
            theta_lora = flatten_trainable(model)
            model = unflatten_trainable(model, theta_lora + gaussian(rng.derive("b"), theta_lora.shape, 0.0, 0.1))
            gen = rng.derive("data").generator
            feats = gen.normal(size=(int(gen.integers(4, 8)), TINY_MODEL.feat_dim))
            labels = tuple(int(x) for x in gen.integers(0, TINY_MODEL.vocab_size, size=2))
            logits, cache = forward_with_cache(model, feats)
            _, dlogits = ctc_loss(log_softmax_rows(logits), labels)

            for subset in ("lora", "base"):
                names = model.parameter_names(subset)
                analytic = flatten_gradients(backward(model, feats, dlogits, subset=subset, cache=cache), names)
                theta = flatten_params(model, subset)

                def loss_of(vec: np.ndarray, subset=subset) -> float:
                    perturbed = unflatten_params(model, vec, subset)
                    return ctc_loss(log_softmax_rows(forward(perturbed, feats)), labels)[0]

                coords = sorted(gen.choice(theta.size, size=min(12, theta.size), replace=False))
                numeric = central_difference(loss_of, theta, coords)
                err = relative_error(analytic[coords], numeric)
                details[subset] = max(details.get(subset, 0.0), err)
                worst = max(worst, err)
        return VerificationResult(
            is_verified=worst <= tolerance,
            verification_method="model_gradient",
            cases_checked=cases,
            max_error=worst,
            tolerance=tolerance,
            verification_details=details,
        )

    def _edit_distance_verification(self) -> VerificationResult:
        """edit_ops cost against the recursive definition on every pair up to edit_max_len."""
        strings = [s for n in range(self.edit_max_len + 1) for s in itertools.product(self.edit_alphabet, repeat=n)]
        mismatches, cases = 0, 0
        for ref in strings:
            for hyp in strings:
                cases += 1
                if edit_ops(ref, hyp).cost != recursive_edit_distance(ref, hyp):
                    mismatches += 1
        return VerificationResult(
            is_verified=mismatches == 0,
            verification_method="edit_distance",
            cases_checked=cases,
            max_error=float(mismatches),
            tolerance=0.0,
            verification_details={"max_len": self.edit_max_len, "alphabet": self.edit_alphabet},
        )

    def _lora_identity_verification(self) -> VerificationResult:
        """Freshly initialized adapters leave the base model's outputs unchanged."""
        tolerance, cases = 1e-12, 100
        model = init_model(ModelConfig(), self.rng.derive("identity"))
        gen = self.rng.derive("identity_inputs").generator
        worst = 0.0
        for _ in range(cases):
            feats = gen.normal(size=(int(gen.integers(1, 20)), model.config.feat_dim))
            diff = np.abs(forward(model, feats) - forward(model, feats, use_adapters=False))
            worst = max(worst, float(diff.max()))
        return VerificationResult(
            is_verified=worst <= tolerance,
            verification_method="lora_identity",
            cases_checked=cases,
            max_error=worst,
            tolerance=tolerance,
        )


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRADIENT_FLOOR) -> float:
    """Largest |a - n| / max(|a|, |n|, floor) over the entries."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))
