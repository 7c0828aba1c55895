"""Linear-chain CRF with surface feature templates and exact inference.

Unary features are indicator functions over word windows around the
current position (previous/current/next words and their conjunctions),
each conjoined with the current label; a single bigram template
contributes pure label-transition weights. Inference is log-space
forward-backward and Viterbi; training is penalized maximum likelihood
under a limited-memory quasi-Newton optimizer with a strong Wolfe line
search, so runs are bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .corpus import LabelScheme, RecordSet
from .tensor import load_archive, save_archive

BOS = "__BOS__"
EOS = "__EOS__"

# (name, word offsets) for the unary templates, in firing order.
UNIGRAM_TEMPLATES: tuple[tuple[str, tuple[int, ...]], ...] = (
    ("w[-1]", (-1,)),
    ("w[0]", (0,)),
    ("w[+1]", (1,)),
    ("w[-1]|w[0]", (-1, 0)),
    ("w[0]|w[+1]", (0, 1)),
    ("w[-1]|w[0]|w[+1]", (-1, 0, 1)),
)
BIGRAM_TEMPLATE = "bigram"


class TrainingDivergence(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass(frozen=True, slots=True)
class FeatureTemplateSet:
    """The fixed template inventory; bigram adds label-transition weights."""

    unigrams: tuple[tuple[str, tuple[int, ...]], ...] = UNIGRAM_TEMPLATES
    use_bigram: bool = True


DEFAULT_TEMPLATES = FeatureTemplateSet()


def template_surface(words: Sequence[str], pos: int, offsets: tuple[int, ...]) -> str:
    parts = []
    for off in offsets:
        j = pos + off
        if j < 0:
            parts.append(BOS)
        elif j >= len(words):
            parts.append(EOS)
        else:
            parts.append(words[j])
    return "|".join(parts)


def extract_features(
    words: Sequence[str], templates: FeatureTemplateSet = DEFAULT_TEMPLATES
) -> list[list[tuple[int, str]]]:
    """Per position: (template index, surface) firings, in template order."""
    return [
        [(ti, template_surface(words, pos, offs)) for ti, (_, offs) in enumerate(templates.unigrams)]
        for pos in range(len(words))
    ]


class FeatureIndex:
    """Maps (template, surface) observations seen in training to dense ids."""

    def __init__(self, templates: FeatureTemplateSet = DEFAULT_TEMPLATES):
        self.templates = templates
        self.obs: dict[tuple[int, str], int] = {}

    @property
    def num_obs(self) -> int:
        return len(self.obs)

    def fit(self, record_words: Iterable[Sequence[str]], min_count: int = 1) -> "FeatureIndex":
        """Index observations seen at least min_count times (1 = keep all)."""
        if min_count < 1:
            raise ValueError("min_count must be >= 1")
        seen: dict[tuple[int, str], int] = {}
        for words in record_words:
            for firings in extract_features(words, self.templates):
                for key in firings:
                    seen[key] = seen.get(key, 0) + 1
                    if seen[key] >= min_count and key not in self.obs:
                        self.obs[key] = len(self.obs)
        return self

    def transform(self, words: Sequence[str]) -> list[list[int]]:
        """Active observation ids per position; unseen surfaces are dropped."""
        out = []
        for firings in extract_features(words, self.templates):
            out.append([self.obs[key] for key in firings if key in self.obs])
        return out


@dataclass
class CrfModel:
    """Weight vector over (observation, label) slots plus a transition block.

    Slot layout: unary slot(obs, y) = obs * |Y| + y; the |Y|^2 transition
    weights follow, row-major by (previous label, current label).
    """

    labels: tuple[str, ...]
    index: FeatureIndex
    weights: np.ndarray
    l2_lambda: float = 1.0

    @classmethod
    def build(
        cls,
        train: RecordSet,
        scheme: LabelScheme,
        templates: FeatureTemplateSet = DEFAULT_TEMPLATES,
        l2_lambda: float = 1.0,
        feature_cutoff: int = 1,
    ) -> "CrfModel":
        index = FeatureIndex(templates).fit(
            (r.words for r in train.records), min_count=feature_cutoff
        )
        n = index.num_obs * len(scheme.labels) + len(scheme.labels) ** 2
        return cls(
            labels=scheme.labels, index=index, weights=np.zeros(n), l2_lambda=l2_lambda
        )

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    def unary_weights(self) -> np.ndarray:
        y = self.num_labels
        return self.weights[: self.index.num_obs * y].reshape(self.index.num_obs, y)

    def transition_weights(self) -> np.ndarray:
        y = self.num_labels
        return self.weights[self.index.num_obs * y:].reshape(y, y)

    def scores(self, words: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """(unary [T, |Y|], transition [|Y|, |Y|]) score matrices."""
        unary_w = self.unary_weights()
        unary = np.zeros((len(words), self.num_labels))
        for pos, active in enumerate(self.index.transform(words)):
            if active:
                unary[pos] = unary_w[active].sum(axis=0)
        return unary, self.transition_weights()


def _logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def log_partition(unary: np.ndarray, transition: np.ndarray) -> float:
    """Log of the sum over all label paths, by the forward recursion."""
    alpha = unary[0].astype(np.float64)
    for t in range(1, unary.shape[0]):
        alpha = unary[t] + _logsumexp(alpha[:, None] + transition, axis=0)
    return float(_logsumexp(alpha, axis=0))


def _forward_backward(unary: np.ndarray, transition: np.ndarray):
    t_len, y = unary.shape
    alpha = np.zeros((t_len, y))
    beta = np.zeros((t_len, y))
    alpha[0] = unary[0]
    for t in range(1, t_len):
        alpha[t] = unary[t] + _logsumexp(alpha[t - 1][:, None] + transition, axis=0)
    for t in range(t_len - 2, -1, -1):
        beta[t] = _logsumexp(transition + unary[t + 1][None, :] + beta[t + 1][None, :], axis=1)
    log_z = float(_logsumexp(alpha[-1], axis=0))
    return alpha, beta, log_z


def _posteriors(unary: np.ndarray, transition: np.ndarray):
    alpha, beta, log_z = _forward_backward(unary, transition)
    node = np.exp(alpha + beta - log_z)
    t_len = unary.shape[0]
    pair = np.zeros((max(t_len - 1, 0), unary.shape[1], unary.shape[1]))
    for t in range(t_len - 1):
        pair[t] = np.exp(
            alpha[t][:, None] + transition + unary[t + 1][None, :] + beta[t + 1][None, :] - log_z
        )
    return node, pair, log_z


def marginals(unary: np.ndarray, transition: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-position label marginals [T, |Y|] and pairwise marginals [T-1, |Y|, |Y|]."""
    node, pair, _ = _posteriors(unary, transition)
    return node, pair


def viterbi(unary: np.ndarray, transition: np.ndarray) -> list[int]:
    """Highest-scoring path; ties resolve to the lower label id at each step."""
    t_len, y = unary.shape
    delta = unary[0].astype(np.float64)
    back = np.zeros((t_len, y), dtype=np.int64)
    for t in range(1, t_len):
        cand = delta[:, None] + transition
        back[t] = cand.argmax(axis=0)          # argmax returns the first (lowest) id
        delta = unary[t] + cand.max(axis=0)
    path = [int(delta.argmax())]
    for t in range(t_len - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return path


def path_score(unary: np.ndarray, transition: np.ndarray, path: Sequence[int]) -> float:
    score = float(unary[np.arange(len(path)), list(path)].sum())
    for a, b in zip(path, path[1:]):
        score += float(transition[a, b])
    return score


def _featurized(model: CrfModel, records: RecordSet) -> list[tuple[list[list[int]], tuple[int, ...]]]:
    return [(model.index.transform(r.words), r.labels) for r in records.records]


def nll_and_grad(
    model: CrfModel,
    records: RecordSet | list[tuple[list[list[int]], tuple[int, ...]]],
    weights: Optional[np.ndarray] = None,
) -> tuple[float, np.ndarray]:
    """Penalized negative log-likelihood and its exact gradient.

    loss = sum over records of (log Z - gold path score) + (lambda/2) ||w||^2;
    gradient = expected feature counts - empirical counts + lambda * w.
    """
    data = _featurized(model, records) if isinstance(records, RecordSet) else records
    w = model.weights if weights is None else weights
    y = model.num_labels
    n_unary = model.index.num_obs * y
    unary_w = w[:n_unary].reshape(model.index.num_obs, y)
    trans_w = w[n_unary:].reshape(y, y)

    loss = 0.0
    grad_unary = np.zeros_like(unary_w)
    grad_trans = np.zeros_like(trans_w)
    for active_per_pos, gold in data:
        t_len = len(gold)
        unary = np.zeros((t_len, y))
        for pos, active in enumerate(active_per_pos):
            if active:
                unary[pos] = unary_w[active].sum(axis=0)
        node, pair, log_z = _posteriors(unary, trans_w)
        loss += log_z - path_score(unary, trans_w, gold)
        for pos, active in enumerate(active_per_pos):
            if active:
                grad_unary[active] += node[pos]
                grad_unary[active, gold[pos]] -= 1.0
        for t in range(t_len - 1):
            grad_trans += pair[t]
            grad_trans[gold[t], gold[t + 1]] -= 1.0

    lam = model.l2_lambda
    loss += 0.5 * lam * float(w @ w)
    grad = np.concatenate([grad_unary.reshape(-1), grad_trans.reshape(-1)]) + lam * w
    return loss, grad


# --- limited-memory quasi-Newton optimizer -------------------------------------

@dataclass
class OptimizerSettings:
    max_iters: int = 100
    grad_tol: float = 1e-5
    memory: int = 10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9


def _wolfe_line_search(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    f0: float,
    g0: np.ndarray,
    direction: np.ndarray,
    c1: float,
    c2: float,
    max_steps: int = 25,
) -> tuple[float, float, np.ndarray] | None:
    """Strong Wolfe search along direction; returns (step, f, g) or None."""
    d0 = float(g0 @ direction)
    if d0 >= 0.0:
        return None

    def phi(step: float) -> tuple[float, float, np.ndarray]:
        f, g = fun(x + step * direction)
        return f, float(g @ direction), g

    def zoom(lo, f_lo, hi) -> tuple[float, float, np.ndarray] | None:
        for _ in range(max_steps):
            step = 0.5 * (lo + hi)
            f, d, g = phi(step)
            if not np.isfinite(f):
                raise TrainingDivergence(f"non-finite loss {f} during line search")
            if f > f0 + c1 * step * d0 or f >= f_lo:
                hi = step
            else:
                if abs(d) <= -c2 * d0:
                    return step, f, g
                if d * (hi - lo) >= 0.0:
                    hi = lo
                lo, f_lo = step, f
        return None

    prev_step, prev_f = 0.0, f0
    step = 1.0
    for i in range(max_steps):
        f, d, g = phi(step)
        if not np.isfinite(f):
            raise TrainingDivergence(f"non-finite loss {f} during line search")
        if f > f0 + c1 * step * d0 or (i > 0 and f >= prev_f):
            return zoom(prev_step, prev_f, step)
        if abs(d) <= -c2 * d0:
            return step, f, g
        if d >= 0.0:
            return zoom(step, f, prev_step)
        prev_step, prev_f = step, f
        step *= 2.0
    return None


def minimize_lbfgs(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    settings: OptimizerSettings = OptimizerSettings(),
) -> tuple[np.ndarray, list[float], bool]:
    """Two-loop-recursion L-BFGS; returns (x, accepted losses, converged)."""
    x = x0.astype(np.float64).copy()
    f, g = fun(x)
    if not np.isfinite(f):
        raise TrainingDivergence(f"non-finite initial loss {f}")
    history = [f]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    for _ in range(settings.max_iters):
        gnorm = float(np.abs(g).max()) if g.size else 0.0
        if gnorm <= settings.grad_tol:
            return x, history, True
        q = g.copy()
        alphas = []
        for s, yv in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / float(yv @ s)
            a = rho * float(s @ q)
            alphas.append((a, rho))
            q -= a * yv
        if y_hist:
            yv, s = y_hist[-1], s_hist[-1]
            q *= float(s @ yv) / float(yv @ yv)
        else:
            q *= 1.0 / max(gnorm, 1.0)
        for (a, rho), s, yv in zip(reversed(alphas), s_hist, y_hist):
            b = rho * float(yv @ q)
            q += (a - b) * s
        direction = -q
        result = _wolfe_line_search(
            fun, x, f, g, direction, settings.wolfe_c1, settings.wolfe_c2
        )
        if result is None:
            # restart along steepest descent; give up if that fails too
            direction = -g
            result = _wolfe_line_search(
                fun, x, f, g, direction, settings.wolfe_c1, settings.wolfe_c2
            )
            if result is None:
                return x, history, False
            s_hist.clear()
            y_hist.clear()
        step, f_new, g_new = result
        s = step * direction
        yv = g_new - g
        if float(s @ yv) > 1e-10:
            s_hist.append(s)
            y_hist.append(yv)
            if len(s_hist) > settings.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x = x + s
        f, g = f_new, g_new
        history.append(f)
    return x, history, float(np.abs(g).max()) <= settings.grad_tol


def train(
    model: CrfModel,
    records: RecordSet,
    settings: OptimizerSettings = OptimizerSettings(),
) -> tuple[CrfModel, list[float]]:
    """Fit weights by penalized maximum likelihood; deterministic."""
    if not records.records:
        raise ValueError("cannot train on an empty record set")
    data = _featurized(model, records)

    def objective(w: np.ndarray) -> tuple[float, np.ndarray]:
        return nll_and_grad(model, data, weights=w)

    weights, history, _ = minimize_lbfgs(objective, model.weights, settings)
    fitted = CrfModel(
        labels=model.labels, index=model.index, weights=weights, l2_lambda=model.l2_lambda
    )
    return fitted, history


def predict_labels(model: CrfModel, words: Sequence[str]) -> list[int]:
    unary, trans = model.scores(words)
    return viterbi(unary, trans)


# --- transfer-learning initialization -------------------------------------------

def tl_init(
    source: CrfModel,
    second_layer: np.ndarray,
    target_index: FeatureIndex,
    target_labels: tuple[str, ...],
    l2_lambda: float = 1.0,
) -> CrfModel:
    """Initialize target weights as source weights composed with a label map.

    second_layer maps the source label space to the target label space
    (shape [source labels, target labels]): every target unary row is the
    source row times the map, transitions compose bilinearly, and
    observations absent from the source start at zero.
    """
    mapping = np.asarray(second_layer, dtype=np.float64)
    if mapping.shape != (source.num_labels, len(target_labels)):
        raise ValueError(
            f"second layer shape {mapping.shape} does not map "
            f"{source.num_labels} source labels to {len(target_labels)} target labels"
        )
    y_tgt = len(target_labels)
    unary = np.zeros((target_index.num_obs, y_tgt))
    src_unary = source.unary_weights()
    for key, tgt_obs in target_index.obs.items():
        src_obs = source.index.obs.get(key)
        if src_obs is not None:
            unary[tgt_obs] = src_unary[src_obs] @ mapping
    trans = mapping.T @ source.transition_weights() @ mapping
    weights = np.concatenate([unary.reshape(-1), trans.reshape(-1)])
    return CrfModel(
        labels=target_labels, index=target_index, weights=weights, l2_lambda=l2_lambda
    )


# --- serialization ---------------------------------------------------------------

def dump_features(model: CrfModel) -> str:
    """Text table: template<TAB>surface<TAB>label<TAB>slot, unary then bigram."""
    names = [name for name, _ in model.index.templates.unigrams]
    rows = []
    y = model.num_labels
    for (ti, surface), obs in sorted(model.index.obs.items(), key=lambda kv: kv[1]):
        for lab_id, label in enumerate(model.labels):
            rows.append(f"{names[ti]}\t{surface}\t{label}\t{obs * y + lab_id}")
    base = model.index.num_obs * y
    for i, prev in enumerate(model.labels):
        for j, cur in enumerate(model.labels):
            rows.append(f"{BIGRAM_TEMPLATE}\t{prev}\t{cur}\t{base + i * y + j}")
    return "\n".join(rows) + "\n"


def save_crf(model: CrfModel, features_path: str, weights_path: str) -> None:
    with open(features_path, "w", encoding="utf-8") as fh:
        fh.write(dump_features(model))
    save_archive([("weights", model.weights)], weights_path)


def load_crf(
    features_path: str, weights_path: str, scheme: LabelScheme, l2_lambda: float = 1.0
) -> CrfModel:
    name_to_template = {name: ti for ti, (name, _) in enumerate(UNIGRAM_TEMPLATES)}
    index = FeatureIndex(DEFAULT_TEMPLATES)
    y = len(scheme.labels)
    with open(features_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"features line {line_no}: expected 4 columns")
            template, surface, label, slot = parts
            if template == BIGRAM_TEMPLATE:
                continue
            if template not in name_to_template:
                raise ValueError(f"features line {line_no}: unknown template {template!r}")
            key = (name_to_template[template], surface)
            obs = int(slot) // y
            if key not in index.obs:
                index.obs[key] = obs
            elif index.obs[key] != obs:
                raise ValueError(f"features line {line_no}: inconsistent slot for {key}")
    weights = load_archive(weights_path)["weights"].astype(np.float64)
    expected = index.num_obs * y + y * y
    if weights.shape != (expected,):
        raise ValueError(f"weights shape {weights.shape}, expected ({expected},)")
    return CrfModel(labels=scheme.labels, index=index, weights=weights, l2_lambda=l2_lambda)
