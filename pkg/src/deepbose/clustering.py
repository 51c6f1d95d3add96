"""Sub-emotion codebooks: affinity propagation seeding, shallow DMAE
fine-tuning under cosine dissimilarity, and codebook assembly."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, DivergenceError, MissingEmotionError, ModelMismatchError
from .optim import AdamState, adam_step


def cosine_dissimilarity(x, t) -> float:
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    nx, nt = np.linalg.norm(x), np.linalg.norm(t)
    if nx == 0.0 or nt == 0.0:
        raise DataError("cosine dissimilarity is undefined for zero vectors")
    return float(1.0 - (x @ t) / (nx * nt))


def _unit_rows(M, what="row"):
    norms = np.linalg.norm(M, axis=1)
    if np.any(norms == 0.0):
        raise DataError(f"zero-norm {what} at index {int(np.flatnonzero(norms == 0.0)[0])}")
    return M / norms[:, None], norms


def pairwise_dissimilarity(X, theta) -> np.ndarray:
    """``(n, K)`` matrix of cosine dissimilarities between rows of X and theta."""
    X = np.asarray(X, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    xn, _ = _unit_rows(X, "input row")
    tn, _ = _unit_rows(theta, "codevector")
    return 1.0 - xn @ tn.T


def softmax_rows(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


# -- affinity propagation --------------------------------------------------

AP_TIE_BREAK = 1e-9


@dataclass(frozen=True)
class ApResult:
    exemplar_indices: tuple[int, ...]
    assignment: dict
    iterations_run: int
    converged: bool


@dataclass(frozen=True)
class ApConfig:
    preference: float | str = "median"
    damping: float = 0.9
    max_iter: int = 200
    convergence_window: int = 15


def affinity_propagation(S, preference="median", damping=0.9, max_iter=200,
                         convergence_window=15) -> ApResult:
    """Exemplar clustering by responsibility/availability message passing.

    The diagonal of ``S`` is replaced by ``preference``; ``"median"`` uses the
    median off-diagonal similarity. Iteration stops once the exemplar set has
    not changed for ``convergence_window`` iterations. Ties resolve to the
    lowest index. If no point ever qualifies as exemplar (for instance when
    all points coincide) the single point with the largest self-evidence
    becomes the only exemplar.
    """
    S = np.array(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DataError(f"similarity matrix must be square, got shape {S.shape}")
    n = S.shape[0]
    if n == 0:
        raise DataError("affinity propagation needs at least one point")
    if not 0.5 <= damping < 1.0:
        raise ValueError(f"damping must be in [0.5, 1), got {damping}")
    if n == 1:
        return ApResult((0,), {0: 0}, 0, True)

    if isinstance(preference, str):
        if preference != "median":
            raise ValueError(f"preference must be a number or 'median', got {preference!r}")
        preference = float(np.median(S[~np.eye(n, dtype=bool)]))
    np.fill_diagonal(S, preference)
    # Exactly symmetric candidates (e.g. mirrored pairs) never separate under
    # message passing; a vanishing column bias lets the lower index win.
    scale = float(np.max(np.abs(S))) or 1.0
    S += AP_TIE_BREAK * scale * (n - 1 - np.arange(n))[None, :] / n

    rows = np.arange(n)
    R = np.zeros_like(S)
    A = np.zeros_like(S)
    last = None
    stable = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        AS = A + S
        best = np.argmax(AS, axis=1)
        first = AS[rows, best]
        AS[rows, best] = -np.inf
        second = AS.max(axis=1)
        R_new = S - first[:, None]
        R_new[rows, best] = S[rows, best] - second
        R = damping * R + (1.0 - damping) * R_new

        Rp = np.maximum(R, 0.0)
        Rp[rows, rows] = R[rows, rows]
        A_new = Rp.sum(axis=0)[None, :] - Rp
        self_avail = A_new[rows, rows].copy()
        A_new = np.minimum(A_new, 0.0)
        A_new[rows, rows] = self_avail
        A = damping * A + (1.0 - damping) * A_new

        is_ex = (A[rows, rows] + R[rows, rows]) > 0
        if last is not None and np.array_equal(is_ex, last):
            stable += 1
        else:
            stable = 0
        last = is_ex
        if stable >= convergence_window and is_ex.any():
            converged = True
            break

    exemplars = np.flatnonzero(last)
    if exemplars.size == 0:
        exemplars = np.array([int(np.argmax(A[rows, rows] + R[rows, rows]))])
    assignment = {}
    for i in range(n):
        if i in exemplars:
            assignment[i] = i
        else:
            assignment[i] = int(exemplars[np.argmax(S[i, exemplars])])
    return ApResult(tuple(int(e) for e in exemplars), assignment, it, converged)


def init_block_from_ap(X_e, ap: ApResult) -> np.ndarray:
    return np.asarray(X_e, dtype=np.float64)[sorted(ap.exemplar_indices)].copy()


# -- shallow DMAE ------------------------------------------------------------


def dmae_reconstruct(s_row, theta_e) -> np.ndarray:
    """Soft decode: the assignment-weighted mix of codevectors."""
    return np.asarray(s_row, dtype=np.float64) @ np.asarray(theta_e, dtype=np.float64)


def dmae_loss(X, theta, alpha) -> float:
    return _dmae_loss_grad(X, theta, alpha, need_grad=False)[0]


def dmae_loss_grad(X, theta, alpha):
    """Mean cosine reconstruction loss and its exact gradient w.r.t. theta."""
    return _dmae_loss_grad(X, theta, alpha, need_grad=True)


def _dmae_loss_grad(X, theta, alpha, need_grad):
    X = np.asarray(X, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    n = X.shape[0]
    xn, _ = _unit_rows(X, "input row")
    tn, tnorm = _unit_rows(theta, "codevector")
    S = softmax_rows(-alpha * (1.0 - xn @ tn.T))
    recon = S @ theta
    rn, rnorm = _unit_rows(recon, "reconstruction")
    cos = np.sum(xn * rn, axis=1)
    loss = float(np.mean(1.0 - cos))
    if not need_grad:
        return loss, None

    d_recon = -(xn - rn * cos[:, None]) / rnorm[:, None] / n
    d_theta = S.T @ d_recon
    dS = d_recon @ theta.T
    dZ = S * (dS - np.sum(dS * S, axis=1, keepdims=True))
    d_tn = (alpha * dZ).T @ xn
    d_theta += (d_tn - tn * np.sum(tn * d_tn, axis=1, keepdims=True)) / tnorm[:, None]
    return loss, d_theta


@dataclass(frozen=True)
class DmaeConfig:
    lr: float = 1e-5
    epochs: int = 100
    seed: int = 0


@dataclass
class DmaeTrainLog:
    """Loss at initialization followed by the loss after each epoch."""

    loss_per_epoch: list = field(default_factory=list)


def train_dmae_block(X_e, theta_init, alpha=100.0, lr=1e-5, epochs=100, seed=0):
    """Fine-tune one emotion's codevectors with full-batch Adam.

    Full-batch updates leave nothing random, so ``seed`` only exists to keep
    the call signature uniform with the supervised trainer.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    X_e = np.asarray(X_e, dtype=np.float64)
    params = {"theta": np.array(theta_init, dtype=np.float64)}
    if not (np.all(np.isfinite(X_e)) and np.all(np.isfinite(params["theta"]))):
        raise DataError("DMAE inputs must be finite")
    state = AdamState()
    log = DmaeTrainLog()
    for epoch in range(epochs + 1):
        loss, grad = dmae_loss_grad(X_e, params["theta"], alpha)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise DivergenceError(f"DMAE loss became non-finite at epoch {epoch}: {loss}")
        log.loss_per_epoch.append(loss)
        if epoch == epochs:
            break
        params, state = adam_step(params, {"theta": grad}, state, lr)
    return params["theta"], log


# -- codebook --------------------------------------------------------------


@dataclass(frozen=True)
class Codebook:
    """Concatenated per-emotion codevector blocks plus mixing biases."""

    names: tuple[str, ...]
    sizes: tuple[int, ...]
    theta: np.ndarray
    biases: np.ndarray
    alpha: float

    def __post_init__(self):
        if len(self.names) != len(self.sizes):
            raise ModelMismatchError("one block size per emotion is required")
        if self.theta.ndim != 2 or self.theta.shape[0] != sum(self.sizes):
            raise ModelMismatchError(
                f"theta has {self.theta.shape[0]} rows, block sizes sum to {sum(self.sizes)}"
            )
        if self.biases.shape != (self.theta.shape[0],):
            raise ModelMismatchError("biases must have one entry per codevector")
        if np.any(np.linalg.norm(self.theta, axis=1) == 0.0):
            raise DataError("codevectors must have nonzero norm")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @classmethod
    def from_blocks(cls, blocks, alpha, biases=None) -> "Codebook":
        names = tuple(name for name, _ in blocks)
        sizes = tuple(int(np.shape(b)[0]) for _, b in blocks)
        theta = np.vstack([np.asarray(b, dtype=np.float64) for _, b in blocks])
        if biases is None:
            biases = np.zeros(theta.shape[0])
        return cls(names, sizes, theta, np.asarray(biases, dtype=np.float64), float(alpha))

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    @property
    def dim(self) -> int:
        return self.theta.shape[1]

    def block_slices(self) -> list[slice]:
        edges = np.concatenate([[0], np.cumsum(self.sizes)])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    @property
    def blocks(self) -> list:
        return [(name, self.theta[sl]) for name, sl in zip(self.names, self.block_slices())]

    def index_emotions(self) -> list[str]:
        """Emotion name of every codevector index."""
        return [name for name, size in zip(self.names, self.sizes) for _ in range(size)]

    def replace(self, **changes) -> "Codebook":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "emotions": [
                {"name": name, "K_e": int(block.shape[0]), "codevectors": block.tolist()}
                for name, block in self.blocks
            ],
            "biases": self.biases.tolist(),
        }

    @classmethod
    def from_dict(cls, obj) -> "Codebook":
        try:
            blocks = []
            for em in obj["emotions"]:
                block = np.array(em["codevectors"], dtype=np.float64)
                if block.ndim != 2 or block.shape[0] != em["K_e"]:
                    raise ModelMismatchError(f"emotion {em['name']!r}: K_e does not match rows")
                blocks.append((em["name"], block))
            return cls.from_blocks(blocks, obj["alpha"], obj["biases"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed codebook document: {exc}") from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Codebook":
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: {exc}") from None
        return cls.from_dict(obj)


@dataclass
class BlockFit:
    name: str
    words: list
    theta: np.ndarray
    ap: ApResult
    log: DmaeTrainLog


def fit_emotion_block(name, X_e, words, alpha, ap_config: ApConfig,
                      dmae_config: DmaeConfig) -> BlockFit:
    ap = affinity_propagation(
        -pairwise_dissimilarity(X_e, X_e),
        preference=ap_config.preference,
        damping=ap_config.damping,
        max_iter=ap_config.max_iter,
        convergence_window=ap_config.convergence_window,
    )
    theta0 = init_block_from_ap(X_e, ap)
    theta, log = train_dmae_block(X_e, theta0, alpha, dmae_config.lr, dmae_config.epochs,
                                  dmae_config.seed)
    return BlockFit(name, list(words), theta, ap, log)


def fit_lexicon_blocks(lexicon, table, alpha=100.0, ap_config=ApConfig(),
                       dmae_config=DmaeConfig(), n_jobs=1) -> list[BlockFit]:
    jobs = []
    for name, words in lexicon:
        in_vocab = sorted(w for w in words if w in table)
        if not in_vocab:
            raise MissingEmotionError(f"emotion {name!r} has no word in the embedding table")
        jobs.append((name, table.matrix(in_vocab), in_vocab))

    def run(job):
        name, X_e, words = job
        return fit_emotion_block(name, X_e, words, alpha, ap_config, dmae_config)

    if n_jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(run, jobs))
    return [run(job) for job in jobs]


def build_codebook(lexicon, table, alpha=100.0, ap_config=ApConfig(),
                   dmae_config=DmaeConfig(), n_jobs=1) -> Codebook:
    """One AP + DMAE model per emotion, blocks concatenated in lexicon order.

    ``dmae_config.epochs == 0`` keeps the raw AP exemplars, which is the
    offline BoSE codebook.
    """
    fits = fit_lexicon_blocks(lexicon, table, alpha, ap_config, dmae_config, n_jobs)
    return Codebook.from_blocks([(f.name, f.theta) for f in fits], alpha)
