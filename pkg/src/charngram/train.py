"""Contrastive training on paraphrase pairs.

Each training pair contributes two hinge terms: the pair's cosine must exceed
the cosine to a negative example of each side by at least the margin. Negative
examples are picked from the current mini-batch, either the most cosine-similar
candidate (MAX) or, per a fair coin, a uniformly random one (MIX). Updates are
sparse Adam steps touching only the n-gram rows present in the batch, with L2
decay applied lazily to the same touched set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, NumericalError
from .model import (
    Embedding,
    Model,
    activation_grad,
    apply_activation,
    check_activation,
    cosine,
    preactivation,
)
from .vocab import CountVector, NGramVocab, check_case_mode, encode, normalize

SAMPLING_MODES = ("max", "mix")
NEGATIVE_POOLS = ("same-side", "both-sides")

# Reference to a phrase inside a batch: (pair index, side), side 0 or 1.
PhraseRef = tuple[int, int]

_SEED_MASK = 0xFFFFFFFFFFFFFFFF

# RNG stream domains, so that initialization, shuffling, and negative sampling
# never share a stream.
_DOMAIN_INIT = 0
_DOMAIN_SHUFFLE = 1
_DOMAIN_SAMPLING = 2
_DOMAIN_AUDIT = 3


def _rng(seed: int, *domain: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & _SEED_MASK, *domain]))


@dataclass
class PairDataset:
    """Paraphrase pairs in file order (descending confidence in the source)."""

    pairs: list[tuple[str, str]]

    def __post_init__(self):
        for i, (a, b) in enumerate(self.pairs):
            if not a.strip() or not b.strip():
                raise DataError(f"pair {i + 1}: empty phrase")

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class TrainConfig:
    """Knobs for contrastive training; defaults follow the tuned similarity setup."""

    dim: int = 300
    activation: str = "tanh"
    margin: float = 0.4
    reg_lambda: float = 0.0
    learning_rate: float = 0.001
    batch_size: int = 100
    sampling: str = "max"
    epochs: int = 1
    seed: int = 0
    curriculum: bool = False
    case_mode: str = "lower"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    eval_every: float = 0.25
    negative_pool: str = "same-side"

    def validate(self) -> None:
        check_activation(self.activation)
        if self.activation == "relu":
            raise ValueError("relu is not allowed for similarity training; use linear or tanh")
        check_case_mode(self.case_mode)
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (negatives come from the batch)")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 < self.adam_beta1 < 1 or not 0 < self.adam_beta2 < 1:
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be > 0")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")
        if self.negative_pool not in NEGATIVE_POOLS:
            raise ValueError(f"negative_pool must be one of {NEGATIVE_POOLS}")


@dataclass
class AdamState:
    """Sparse Adam moments; entries exist only for parameters touched so far."""

    step: int = 0
    m_bias: np.ndarray | None = None
    v_bias: np.ndarray | None = None
    m_rows: dict[int, np.ndarray] = field(default_factory=dict)
    v_rows: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class TrainingCurve:
    """(examples_seen, metric_name, value) points, examples_seen non-decreasing."""

    points: list[tuple[int, str, float]] = field(default_factory=list)

    def add(self, examples_seen: int, metric: str, value: float) -> None:
        if self.points and examples_seen < self.points[-1][0]:
            raise ValueError("examples_seen must be non-decreasing")
        self.points.append((examples_seen, metric, float(value)))


def _embedding_values(item) -> np.ndarray:
    if isinstance(item, Embedding):
        return item.values
    return np.asarray(item, dtype=np.float64)


def _unit_rows(values: np.ndarray) -> np.ndarray:
    # Rows with (near-)zero norm become zero vectors, matching the cosine
    # convention cos(u, 0) = 0.
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    safe = np.where(norms < 1e-12, 1.0, norms)
    units = values / safe
    units[norms[:, 0] < 1e-12] = 0.0
    return units


def select_negatives(
    batch: Sequence[tuple],
    mode: str,
    rng: np.random.Generator,
    texts: Sequence[tuple[str, str]] | None = None,
    pool: str = "same-side",
) -> list[tuple[PhraseRef, PhraseRef]]:
    """Pick one negative example per side for every pair in the batch.

    `batch` holds (cv1, cv2, emb1, emb2) tuples; embeddings may be Embedding
    objects or plain vectors. Returns, per pair, ((j1, s1), (j2, s2)) where the
    side-1 negative is phrase s1 of pair j1 and likewise for side 2. Under the
    default pool the side-1 negative competes among side-1 phrases of other
    pairs (s1 = 0) and the side-2 negative among side-2 phrases (s2 = 1);
    pool="both-sides" widens both competitions to all phrases of other pairs.

    MAX picks the candidate most cosine-similar to the phrase being matched,
    ties broken by candidate enumeration order (pair index ascending, side-1
    before side-2). MIX flips an independent fair coin per pair per side:
    heads uses MAX, tails draws uniformly from the allowed candidates. The rng
    is consumed in a fixed order (pair 0 side 1, pair 0 side 2, pair 1 side 1,
    ...), with one `rng.random()` per coin and one `rng.integers()` per
    uniform draw; plain MAX never touches the rng.

    When `texts` (normalized phrase strings per pair) is given, candidates
    string-equal to either phrase of the current pair are excluded, falling
    back to all other-pair candidates if that empties the pool.
    """
    n = len(batch)
    if n < 2:
        raise DataError("cannot sample negatives")
    mode = mode.lower()
    if mode not in SAMPLING_MODES:
        raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
    if pool not in NEGATIVE_POOLS:
        raise ValueError(f"negative_pool must be one of {NEGATIVE_POOLS}")

    values = (
        np.stack([_embedding_values(item[2]) for item in batch]),
        np.stack([_embedding_values(item[3]) for item in batch]),
    )
    units = (_unit_rows(values[0]), _unit_rows(values[1]))

    def candidate_refs(target_side: int) -> list[PhraseRef]:
        if pool == "same-side":
            return [(j, target_side) for j in range(n)]
        return [(j, s) for j in range(n) for s in (0, 1)]

    ref_pools = (candidate_refs(0), candidate_refs(1))
    cand_units = tuple(
        np.stack([units[s][j] for j, s in refs]) for refs in ref_pools
    )

    def allowed_positions(i: int, target_side: int) -> list[int]:
        refs = ref_pools[target_side]
        own = texts[i] if texts is not None else None
        keep = []
        for pos, (j, s) in enumerate(refs):
            if j == i:
                continue
            if own is not None and texts[j][s] in own:
                continue
            keep.append(pos)
        if not keep:
            keep = [pos for pos, (j, _) in enumerate(refs) if j != i]
        return keep

    out: list[tuple[PhraseRef, PhraseRef]] = []
    for i in range(n):
        chosen: list[PhraseRef] = []
        for side in (0, 1):
            refs = ref_pools[side]
            positions = allowed_positions(i, side)
            use_max = True
            if mode == "mix":
                use_max = rng.random() < 0.5
            if use_max:
                sims = cand_units[side][positions] @ units[side][i]
                pick = positions[int(np.argmax(sims))]
            else:
                pick = positions[int(rng.integers(len(positions)))]
            chosen.append(refs[pick])
        out.append((chosen[0], chosen[1]))
    return out


def pair_loss(emb_x1, emb_x2, emb_t1, emb_t2, margin: float) -> float:
    """Two hinge terms: the pair cosine must beat each negative cosine by margin."""
    u = _embedding_values(emb_x1)
    w = _embedding_values(emb_x2)
    c_pos = cosine(u, w)
    h1 = margin - c_pos + cosine(u, _embedding_values(emb_t1))
    h2 = margin - c_pos + cosine(w, _embedding_values(emb_t2))
    return max(0.0, h1) + max(0.0, h2)


def _cos_grad(u: np.ndarray, v: np.ndarray, nu: float, nv: float, c: float) -> np.ndarray:
    # d cos(u, v) / d u; zero when either vector has zero norm (cos is the
    # constant 0 there by convention).
    if nu < 1e-12 or nv < 1e-12:
        return np.zeros_like(u)
    return (v / nv - c * u / nu) / nu


def _batch_gradients(
    cv_sides: tuple[list[CountVector], list[CountVector]],
    model: Model,
    config: TrainConfig,
    negatives: Sequence[tuple[PhraseRef, PhraseRef]],
) -> tuple[float, np.ndarray, dict[int, np.ndarray]]:
    """Mean hinge loss and its analytic gradient, with the frozen negatives.

    Hinge gradients carry the 1/batch factor; the L2 term adds 2*lambda*theta
    (unscaled) for the bias and every weight row present in the batch's count
    vectors. Returns (loss, d bias, {row: d row}); the loss excludes the
    regularizer.
    """
    n = len(cv_sides[0])
    pre = tuple(
        np.stack([preactivation(cv, model) for cv in cvs]) for cvs in cv_sides
    )
    values = tuple(apply_activation(model.activation, p) for p in pre)
    norms = tuple(np.linalg.norm(v, axis=1) for v in values)

    upstream = (np.zeros_like(values[0]), np.zeros_like(values[1]))
    loss_sum = 0.0
    for i in range(n):
        u, w = values[0][i], values[1][i]
        nu, nw = norms[0][i], norms[1][i]
        (j1, s1), (j2, s2) = negatives[i]
        t1, nt1 = values[s1][j1], norms[s1][j1]
        t2, nt2 = values[s2][j2], norms[s2][j2]

        c_pos = 0.0 if nu < 1e-12 or nw < 1e-12 else float(np.dot(u, w) / (nu * nw))
        c1 = 0.0 if nu < 1e-12 or nt1 < 1e-12 else float(np.dot(u, t1) / (nu * nt1))
        c2 = 0.0 if nw < 1e-12 or nt2 < 1e-12 else float(np.dot(w, t2) / (nw * nt2))

        h1 = config.margin - c_pos + c1
        h2 = config.margin - c_pos + c2
        # max(0.0, nan) is 0.0, so a NaN cosine would otherwise vanish silently
        if not (np.isfinite(h1) and np.isfinite(h2)):
            raise NumericalError("non-finite pair loss")
        a1 = 1.0 if h1 > 0 else 0.0
        a2 = 1.0 if h2 > 0 else 0.0
        loss_sum += max(0.0, h1) + max(0.0, h2)
        if a1 == 0.0 and a2 == 0.0:
            continue

        d_cpos = -(a1 + a2)
        upstream[0][i] += d_cpos * _cos_grad(u, w, nu, nw, c_pos)
        upstream[1][i] += d_cpos * _cos_grad(w, u, nw, nu, c_pos)
        if a1:
            upstream[0][i] += _cos_grad(u, t1, nu, nt1, c1)
            upstream[s1][j1] += _cos_grad(t1, u, nt1, nu, c1)
        if a2:
            upstream[1][i] += _cos_grad(w, t2, nw, nt2, c2)
            upstream[s2][j2] += _cos_grad(t2, w, nt2, nw, c2)

    grad_bias = np.zeros(model.dim)
    grad_rows: dict[int, np.ndarray] = {}
    for side in (0, 1):
        d_pre = upstream[side] * activation_grad(model.activation, values[side]) / n
        grad_bias += d_pre.sum(axis=0)
        for i, cv in enumerate(cv_sides[side]):
            for row, count in cv.items():
                g = grad_rows.get(row)
                if g is None:
                    grad_rows[row] = count * d_pre[i].copy()
                else:
                    g += count * d_pre[i]

    lam = config.reg_lambda
    if lam > 0:
        grad_bias += 2.0 * lam * model.bias
        for row in grad_rows:
            grad_rows[row] += 2.0 * lam * model.weights[row]

    return loss_sum / n, grad_bias, grad_rows


def _adam_apply(
    model: Model,
    adam: AdamState,
    config: TrainConfig,
    grad_bias: np.ndarray,
    grad_rows: dict[int, np.ndarray],
) -> None:
    """One bias-corrected Adam step over the bias and the touched rows only."""
    adam.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    corr1 = 1.0 - b1**adam.step
    corr2 = 1.0 - b2**adam.step
    lr, eps = config.learning_rate, config.adam_epsilon

    if adam.m_bias is None:
        adam.m_bias = np.zeros(model.dim)
        adam.v_bias = np.zeros(model.dim)
    adam.m_bias = b1 * adam.m_bias + (1 - b1) * grad_bias
    adam.v_bias = b2 * adam.v_bias + (1 - b2) * grad_bias * grad_bias
    model.bias -= lr * (adam.m_bias / corr1) / (np.sqrt(adam.v_bias / corr2) + eps)
    if not np.all(np.isfinite(model.bias)):
        raise NumericalError("non-finite bias after update")

    for row in sorted(grad_rows):
        g = grad_rows[row]
        m = adam.m_rows.get(row)
        if m is None:
            m = np.zeros(model.dim)
            v = np.zeros(model.dim)
        else:
            v = adam.v_rows[row]
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        adam.m_rows[row] = m
        adam.v_rows[row] = v
        model.weights[row] -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
        if not np.all(np.isfinite(model.weights[row])):
            raise NumericalError(f"non-finite weight row {row} after update")


def _encode_batch(
    batch: Sequence[tuple[str, str]], vocab: NGramVocab, case_mode: str
) -> tuple[list[tuple[str, str]], tuple[list[CountVector], list[CountVector]]]:
    texts = [(normalize(a, case_mode), normalize(b, case_mode)) for a, b in batch]
    cv1 = [encode(t1, vocab) for t1, _ in texts]
    cv2 = [encode(t2, vocab) for _, t2 in texts]
    return texts, (cv1, cv2)


def _step_encoded(
    texts: Sequence[tuple[str, str]],
    cv_sides: tuple[list[CountVector], list[CountVector]],
    model: Model,
    config: TrainConfig,
    adam: AdamState,
    rng: np.random.Generator,
) -> float:
    values = tuple(
        apply_activation(
            model.activation, np.stack([preactivation(cv, model) for cv in cvs])
        )
        for cvs in cv_sides
    )
    items = [
        (cv_sides[0][i], cv_sides[1][i], values[0][i], values[1][i])
        for i in range(len(texts))
    ]
    negatives = select_negatives(
        items, config.sampling, rng, texts=texts, pool=config.negative_pool
    )
    loss, grad_bias, grad_rows = _batch_gradients(cv_sides, model, config, negatives)
    if not np.isfinite(loss):
        raise NumericalError("non-finite batch loss")
    _adam_apply(model, adam, config, grad_bias, grad_rows)
    return loss


def batch_step(
    batch: Sequence[tuple[str, str]],
    model: Model,
    vocab: NGramVocab,
    config: TrainConfig,
    adam: AdamState,
    rng: np.random.Generator,
) -> float:
    """Run one optimization step on a batch of raw phrase pairs.

    Encodes and embeds all phrases, selects negatives, accumulates the sparse
    gradient of the mean pair loss plus lazy L2, and applies one Adam update
    to the touched parameters. Returns the mean hinge loss (regularizer
    excluded). Raises NumericalError if any parameter goes non-finite.
    """
    if len(batch) < 2:
        raise DataError("cannot sample negatives")
    texts, cv_sides = _encode_batch(batch, vocab, config.case_mode)
    return _step_encoded(texts, cv_sides, model, config, adam, rng)


def epoch_permutation(seed: int, epoch: int, n: int, curriculum: bool) -> np.ndarray:
    """Deterministic example order for one epoch, a pure function of (seed, epoch).

    With curriculum enabled, epoch 0 keeps the file order (descending
    confidence); every other epoch uses a seeded shuffle that does not depend
    on the curriculum flag.
    """
    if curriculum and epoch == 0:
        return np.arange(n)
    return _rng(seed, _DOMAIN_SHUFFLE, epoch).permutation(n)


EvalHook = Callable[[Model, int], Mapping[str, float] | None]


def init_model(vocab: NGramVocab, config: TrainConfig) -> Model:
    """Fresh model: rows i.i.d. uniform on [-0.5/d, 0.5/d], bias zero."""
    d = config.dim
    rng = _rng(config.seed, _DOMAIN_INIT)
    weights = rng.uniform(-0.5 / d, 0.5 / d, size=(len(vocab), d))
    return Model(
        weights=weights,
        bias=np.zeros(d),
        activation=config.activation,
        vocab_fingerprint=vocab.fingerprint,
    )


def train(
    dataset: PairDataset,
    vocab: NGramVocab,
    config: TrainConfig,
    eval_hook: EvalHook | None = None,
    order_log: list[tuple[int, tuple[int, ...]]] | None = None,
) -> tuple[Model, AdamState, TrainingCurve]:
    """Train a fresh model on a paraphrase pair dataset.

    Epochs are partitioned into contiguous batches of config.batch_size over
    the epoch's permutation (final short batch kept when it has at least two
    pairs, dropped otherwise). The curve records the mean batch loss per
    epoch ("epoch_mean_batch_loss"), the running mean since the previous
    curve point ("train_loss") every `eval_every` fraction of an epoch, and
    whatever metrics `eval_hook(model, examples_seen)` returns at those same
    points. Fully deterministic given config.seed. `order_log`, when passed,
    receives (epoch, consumed index order) tuples.
    """
    config.validate()
    if len(dataset) == 0:
        raise DataError("empty dataset")
    if len(vocab) == 0:
        raise DataError("empty vocabulary")

    model = init_model(vocab, config)
    adam = AdamState()
    curve = TrainingCurve()

    norm_pairs = [
        (normalize(a, config.case_mode), normalize(b, config.case_mode))
        for a, b in dataset.pairs
    ]
    encoded = [(encode(t1, vocab), encode(t2, vocab)) for t1, t2 in norm_pairs]

    n = len(dataset)
    examples_seen = 0
    for epoch in range(config.epochs):
        order = epoch_permutation(config.seed, epoch, n, config.curriculum)
        if order_log is not None:
            order_log.append((epoch, tuple(int(i) for i in order)))
        sample_rng = _rng(config.seed, _DOMAIN_SAMPLING, epoch)

        starts = range(0, n, config.batch_size)
        batch_slices = [order[s : s + config.batch_size] for s in starts]
        batch_slices = [b for b in batch_slices if len(b) >= 2]
        hook_interval = 0
        if config.eval_every > 0:
            hook_interval = max(1, round(len(batch_slices) * config.eval_every))

        epoch_loss = 0.0
        interval_loss = 0.0
        interval_batches = 0
        for bi, idxs in enumerate(batch_slices):
            texts = [norm_pairs[i] for i in idxs]
            cv_sides = ([encoded[i][0] for i in idxs], [encoded[i][1] for i in idxs])
            try:
                loss = _step_encoded(texts, cv_sides, model, config, adam, sample_rng)
            except NumericalError as err:
                raise NumericalError(f"epoch {epoch + 1}, batch {bi + 1}: {err}") from err
            examples_seen += len(idxs)
            epoch_loss += loss
            interval_loss += loss
            interval_batches += 1
            if hook_interval and (bi + 1) % hook_interval == 0:
                curve.add(examples_seen, "train_loss", interval_loss / interval_batches)
                interval_loss = 0.0
                interval_batches = 0
                if eval_hook is not None:
                    metrics = eval_hook(model, examples_seen)
                    for name, value in (metrics or {}).items():
                        curve.add(examples_seen, name, value)
        if batch_slices:
            curve.add(examples_seen, "epoch_mean_batch_loss", epoch_loss / len(batch_slices))

    return model, adam, curve


def finite_diff_audit(
    model: Model,
    vocab: NGramVocab,
    sample_batch: Sequence[tuple[str, str]],
    config: TrainConfig,
    step: float = 1e-5,
) -> float:
    """Worst guarded relative error between analytic and central-difference gradients.

    Negative selections are made once and frozen; both routes then see the
    same piecewise-smooth objective: mean hinge loss plus lambda times the
    squared norm of the touched parameters (bias and every weight row present
    in the batch's count vectors). The relative error for a coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-3); the floor keeps
    near-zero coordinates from amplifying finite-difference noise, which is
    orders of magnitude below the floor at this step size.
    """
    if len(sample_batch) < 2:
        raise DataError("cannot sample negatives")
    texts, cv_sides = _encode_batch(sample_batch, vocab, config.case_mode)
    values = tuple(
        apply_activation(
            model.activation, np.stack([preactivation(cv, model) for cv in cvs])
        )
        for cvs in cv_sides
    )
    items = [
        (cv_sides[0][i], cv_sides[1][i], values[0][i], values[1][i])
        for i in range(len(texts))
    ]
    negatives = select_negatives(
        items,
        config.sampling,
        _rng(config.seed, _DOMAIN_AUDIT),
        texts=texts,
        pool=config.negative_pool,
    )

    _, grad_bias, grad_rows = _batch_gradients(cv_sides, model, config, negatives)
    touched = sorted(grad_rows)
    lam = config.reg_lambda

    def objective() -> float:
        n = len(texts)
        vals = tuple(
            apply_activation(
                model.activation, np.stack([preactivation(cv, model) for cv in cvs])
            )
            for cvs in cv_sides
        )
        total = 0.0
        for i in range(n):
            total += pair_loss(
                vals[0][i],
                vals[1][i],
                vals[negatives[i][0][1]][negatives[i][0][0]],
                vals[negatives[i][1][1]][negatives[i][1][0]],
                config.margin,
            )
        reg = 0.0
        if lam > 0:
            reg = float(np.dot(model.bias, model.bias))
            for row in touched:
                reg += float(np.dot(model.weights[row], model.weights[row]))
        return total / n + lam * reg

    def central_diff(array: np.ndarray, idx) -> float:
        saved = array[idx]
        array[idx] = saved + step
        f_plus = objective()
        array[idx] = saved - step
        f_minus = objective()
        array[idx] = saved
        return (f_plus - f_minus) / (2.0 * step)

    worst = 0.0
    for c in range(model.dim):
        numeric = central_diff(model.bias, c)
        analytic = grad_bias[c]
        worst = max(
            worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
        )
    for row in touched:
        for c in range(model.dim):
            numeric = central_diff(model.weights, (row, c))
            analytic = grad_rows[row][c]
            worst = max(
                worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
            )
    return worst
