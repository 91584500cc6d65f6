"""Gated recurrent preference memory.

A single vector m holds everything retained so far.  Preference turns blend
the projected turn embedding into m through a learned sigmoid gate:

    e_bar = W_in e
    f     = sigmoid(W_mm m_prev + W_em e_bar + b)
    m     = f * m_prev + (1 - f) * e_bar

Non-preference turns leave m untouched, so retention across filler turns is
exact by construction and training only has to shape what happens at the
write points.  A linear probe (w_out, b_out) reads a category distribution
out of m, and w_prompt projects m to a fixed-length soft prompt for a
downstream responder.  Training is plain SGD over full-sequence
backpropagation with analytic gradients for the six write/read tensors;
w_prompt is a frozen random projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checkpoints import parse_header, read_checkpoint, write_checkpoint
from .errors import DimensionError
from .numerics import Rng, as_vector, ce_loss, mix_seed, sigmoid, softmax

TRAINABLE = ("w_mem", "w_emb", "bias", "w_in", "w_out", "b_out")
INIT_SCALE = 0.1


@dataclass(frozen=True)
class TurnEvent:
    """One conversational step as seen by the memory.

    Preference events carry the turn embedding to be written; category is an
    optional supervision target (index into the probe's classes) and is only
    meaningful on preference events.
    """

    is_preference: bool
    embedding: np.ndarray | None = None
    category: int | None = None

    def __post_init__(self):
        if self.is_preference and self.embedding is None:
            raise ValueError("preference events require an embedding")
        if not self.is_preference and self.embedding is not None:
            raise ValueError("non-preference events must not carry an embedding")
        if self.embedding is not None:
            object.__setattr__(self, "embedding",
                               as_vector(self.embedding, "embedding"))


@dataclass
class MemoryState:
    values: np.ndarray
    turn: int = 0

    def __post_init__(self):
        self.values = as_vector(self.values, "memory state")

    @classmethod
    def initial(cls, dim: int) -> "MemoryState":
        return cls(values=np.zeros(dim, dtype=np.float64), turn=0)


@dataclass
class GateParams:
    w_mem: np.ndarray    # (d, d)   gate from previous memory
    w_emb: np.ndarray    # (d, d)   gate from projected embedding
    bias: np.ndarray     # (d,)     gate bias
    w_in: np.ndarray     # (d, l)   embedding projection, l = encoder dim
    w_out: np.ndarray    # (K, d)   category probe
    b_out: np.ndarray    # (K,)     probe bias
    w_prompt: np.ndarray  # (de, d) soft-prompt projection, not trained

    def __post_init__(self):
        self.w_mem = np.asarray(self.w_mem, dtype=np.float64)
        self.w_emb = np.asarray(self.w_emb, dtype=np.float64)
        self.bias = as_vector(self.bias, "bias")
        self.w_in = np.asarray(self.w_in, dtype=np.float64)
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        self.b_out = as_vector(self.b_out, "b_out")
        self.w_prompt = np.asarray(self.w_prompt, dtype=np.float64)
        d = self.dim
        checks = (("w_mem", self.w_mem, (d, d)),
                  ("w_emb", self.w_emb, (d, d)),
                  ("w_in", self.w_in, (d, self.embed_dim)),
                  ("w_out", self.w_out, (self.n_categories, d)),
                  ("w_prompt", self.w_prompt, (self.prompt_dim, d)))
        for name, arr, shape in checks:
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, "
                                     f"expected {shape}")
        if self.bias.shape != (d,):
            raise DimensionError(f"bias has shape {self.bias.shape}, "
                                 f"expected ({d},)")
        if self.b_out.shape != (self.n_categories,):
            raise DimensionError(f"b_out has shape {self.b_out.shape}, "
                                 f"expected ({self.n_categories},)")

    @property
    def dim(self) -> int:
        return self.w_mem.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.w_in.shape[1]

    @property
    def n_categories(self) -> int:
        return self.w_out.shape[0]

    @property
    def prompt_dim(self) -> int:
        return self.w_prompt.shape[0]

    @classmethod
    def init(cls, dim: int, embed_dim: int, n_categories: int,
             prompt_dim: int, rng: Rng) -> "GateParams":
        def u(*shape):
            return rng.uniform_array(shape, -INIT_SCALE, INIT_SCALE)
        return cls(w_mem=u(dim, dim), w_emb=u(dim, dim), bias=u(dim),
                   w_in=u(dim, embed_dim), w_out=u(n_categories, dim),
                   b_out=u(n_categories), w_prompt=u(prompt_dim, dim))

    @classmethod
    def zeros(cls, dim: int, embed_dim: int, n_categories: int,
              prompt_dim: int) -> "GateParams":
        z = np.zeros
        return cls(w_mem=z((dim, dim)), w_emb=z((dim, dim)), bias=z(dim),
                   w_in=z((dim, embed_dim)), w_out=z((n_categories, dim)),
                   b_out=z(n_categories), w_prompt=z((prompt_dim, dim)))


def zero_params(dim: int, embed_dim: int, n_categories: int,
                prompt_dim: int) -> GateParams:
    """All-zero controller: the probe is constant, so its argmax is always
    class 0 regardless of what was stated."""
    return GateParams.zeros(dim, embed_dim, n_categories, prompt_dim)


def witness_params(dim: int, embed_dim: int, n_categories: int,
                   prompt_dim: int) -> GateParams:
    """Hand-built controller that copies orthogonal category codes through.

    With a strongly negative gate bias every write replaces the memory
    (f ~ 0), w_in passes the first K embedding coordinates straight into m,
    and an identity probe reads them back, so argmax recovery of the most
    recent category is exact at any filler distance.
    """
    if n_categories > dim or n_categories > embed_dim:
        raise DimensionError(f"witness needs K <= dim and K <= embed_dim, "
                             f"got K={n_categories}, dim={dim}, "
                             f"embed_dim={embed_dim}")
    p = GateParams.zeros(dim, embed_dim, n_categories, prompt_dim)
    p.bias[:] = -50.0
    for k in range(n_categories):
        p.w_in[k, k] = 1.0
        p.w_out[k, k] = 1.0
    return p


# ---------------------------------------------------------------------------
# Forward pieces.
# ---------------------------------------------------------------------------

def project_input(params: GateParams, e: np.ndarray) -> np.ndarray:
    e = as_vector(e, "turn embedding")
    if e.shape[0] != params.embed_dim:
        raise DimensionError(f"embedding has dim {e.shape[0]}, "
                             f"w_in expects {params.embed_dim}")
    return params.w_in @ e


def gate(params: GateParams, m_prev: np.ndarray,
         e_bar: np.ndarray) -> np.ndarray:
    return sigmoid(params.w_mem @ m_prev + params.w_emb @ e_bar + params.bias)


def update(params: GateParams, m_prev: np.ndarray,
           e: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One preference write; returns (m_new, f, e_bar)."""
    m_prev = as_vector(m_prev, "memory state")
    e_bar = project_input(params, e)
    f = gate(params, m_prev, e_bar)
    return f * m_prev + (1.0 - f) * e_bar, f, e_bar


def soft_prompt(params: GateParams, m: np.ndarray) -> np.ndarray:
    return params.w_prompt @ as_vector(m, "memory state")


def predict_category(params: GateParams, m: np.ndarray) -> np.ndarray:
    return softmax(params.w_out @ as_vector(m, "memory state") + params.b_out)


def apply_event(params: GateParams, state: MemoryState,
                event: TurnEvent) -> tuple[MemoryState, np.ndarray | None]:
    """Advance the session state by one event; non-preference turns only
    bump the turn counter.  Returns the new state and the gate vector when
    a write happened."""
    if event.is_preference:
        m, f, _ = update(params, state.values, event.embedding)
        return MemoryState(values=m, turn=state.turn + 1), f
    return MemoryState(values=state.values.copy(), turn=state.turn + 1), None


# ---------------------------------------------------------------------------
# Full-sequence forward/backward.
# ---------------------------------------------------------------------------

@dataclass
class StepCache:
    event: TurnEvent
    m_prev: np.ndarray
    m: np.ndarray
    e_bar: np.ndarray | None = None
    f: np.ndarray | None = None
    probs: np.ndarray | None = None


@dataclass
class Grads:
    w_mem: np.ndarray
    w_emb: np.ndarray
    bias: np.ndarray
    w_in: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    @classmethod
    def zeros_for(cls, params: GateParams) -> "Grads":
        return cls(*(np.zeros_like(getattr(params, name)) for name in TRAINABLE))

    def global_norm(self) -> float:
        total = 0.0
        for name in TRAINABLE:
            g = getattr(self, name)
            total += float(np.dot(g.ravel(), g.ravel()))
        return float(np.sqrt(total))

    def scale(self, factor: float) -> None:
        for name in TRAINABLE:
            getattr(self, name)[...] *= factor


def forward_sequence(params: GateParams, events,
                     m0: np.ndarray | None = None
                     ) -> tuple[float, int, list[StepCache]]:
    """Run a full event sequence; loss is the sum of cross-entropies at the
    events that carry a category target."""
    m = (np.zeros(params.dim) if m0 is None
         else as_vector(m0, "initial memory").copy())
    caches: list[StepCache] = []
    loss, n_targets = 0.0, 0
    for event in events:
        cache = StepCache(event=event, m_prev=m, m=m)
        if event.is_preference:
            m, f, e_bar = update(params, m, event.embedding)
            cache.m, cache.f, cache.e_bar = m, f, e_bar
        if event.category is not None:
            probs = predict_category(params, m)
            cache.probs = probs
            loss += ce_loss(probs, event.category)
            n_targets += 1
        caches.append(cache)
    return loss, n_targets, caches


def backward_sequence(params: GateParams, caches) -> Grads:
    """Analytic gradient of the summed cross-entropy from forward_sequence
    with respect to the six trainable tensors."""
    g = Grads.zeros_for(params)
    dm = np.zeros(params.dim)
    for cache in reversed(caches):
        event = cache.event
        if cache.probs is not None:
            dlogits = cache.probs.copy()
            dlogits[event.category] -= 1.0
            g.w_out += np.outer(dlogits, cache.m)
            g.b_out += dlogits
            dm = dm + params.w_out.T @ dlogits
        if event.is_preference:
            df = dm * (cache.m_prev - cache.e_bar)
            du = df * cache.f * (1.0 - cache.f)
            g.w_mem += np.outer(du, cache.m_prev)
            g.w_emb += np.outer(du, cache.e_bar)
            g.bias += du
            de_bar = dm * (1.0 - cache.f) + params.w_emb.T @ du
            dm = dm * cache.f + params.w_mem.T @ du
            g.w_in += np.outer(de_bar, event.embedding)
    return g


# ---------------------------------------------------------------------------
# Flat views for finite-difference checks.
# ---------------------------------------------------------------------------

def flatten_trainable(obj) -> np.ndarray:
    return np.concatenate([getattr(obj, name).ravel() for name in TRAINABLE])


def set_trainable(params: GateParams, flat: np.ndarray) -> None:
    needed = sum(getattr(params, name).size for name in TRAINABLE)
    if flat.size != needed:
        raise DimensionError(f"flat vector has {flat.size} entries, "
                             f"parameters need {needed}")
    offset = 0
    for name in TRAINABLE:
        arr = getattr(params, name)
        n = arr.size
        arr[...] = flat[offset:offset + n].reshape(arr.shape)
        offset += n


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControllerEpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float | None = None
    val_accuracy: float | None = None


def evaluate_controller(params: GateParams, corpus) -> tuple[float, float]:
    """(mean per-target CE, argmax accuracy) over every target in corpus."""
    total_loss, correct, n = 0.0, 0, 0
    for events in corpus:
        loss, n_targets, caches = forward_sequence(params, events)
        total_loss += loss
        n += n_targets
        for cache in caches:
            if cache.probs is not None:
                correct += int(np.argmax(cache.probs) == cache.event.category)
    if n == 0:
        raise ValueError("corpus carries no category targets")
    return total_loss / n, correct / n


def train_controller(params: GateParams, corpus, epochs: int, lr: float,
                     seed: int, clip: float = 5.0,
                     val_corpus=None) -> list[ControllerEpochStats]:
    """Per-sequence SGD over the corpus.  Each sequence's loss is averaged
    over its target count before the step, and gradients are clipped at a
    global norm of `clip`.  History holds post-epoch metrics over the full
    train corpus (and val corpus when given)."""
    if not corpus:
        raise ValueError("training corpus is empty")
    rng = Rng(mix_seed(seed, 0x5e9))
    order = list(range(len(corpus)))
    history: list[ControllerEpochStats] = []
    for epoch in range(epochs):
        rng.shuffle(order)
        for idx in order:
            loss, n_targets, caches = forward_sequence(params, corpus[idx])
            if n_targets == 0:
                continue
            grads = backward_sequence(params, caches)
            grads.scale(1.0 / n_targets)
            norm = grads.global_norm()
            if norm > clip:
                grads.scale(clip / norm)
            for name in TRAINABLE:
                getattr(params, name)[...] -= lr * getattr(grads, name)
        train_loss, train_acc = evaluate_controller(params, corpus)
        entry = {"train_loss": train_loss, "train_accuracy": train_acc}
        if val_corpus:
            val_loss, val_acc = evaluate_controller(params, val_corpus)
            entry.update(val_loss=val_loss, val_accuracy=val_acc)
        history.append(ControllerEpochStats(epoch=epoch, **entry))
    return history


# ---------------------------------------------------------------------------
# Checkpoint I/O.
# ---------------------------------------------------------------------------

_TENSOR_ORDER = TRAINABLE + ("w_prompt",)


def save_params(path, params: GateParams) -> None:
    header = (f"prefmem v1 d={params.dim} l={params.embed_dim} "
              f"K={params.n_categories} de={params.prompt_dim}")
    write_checkpoint(path, header,
                     [(name, getattr(params, name)) for name in _TENSOR_ORDER])


def load_params(path) -> GateParams:
    header, tensors = read_checkpoint(path)
    fields = parse_header(header, "prefmem")
    for key in ("d", "l", "K", "de"):
        if key not in fields:
            raise DimensionError(f"memory checkpoint header missing {key}=")
    missing = [n for n in _TENSOR_ORDER if n not in tensors]
    if missing:
        raise DimensionError(f"memory checkpoint missing tensors: "
                             f"{', '.join(missing)}")
    params = GateParams(w_mem=tensors["w_mem"], w_emb=tensors["w_emb"],
                        bias=tensors["bias"].ravel(), w_in=tensors["w_in"],
                        w_out=tensors["w_out"],
                        b_out=tensors["b_out"].ravel(),
                        w_prompt=tensors["w_prompt"])
    declared = (fields["d"], fields["l"], fields["K"], fields["de"])
    actual = (params.dim, params.embed_dim, params.n_categories,
              params.prompt_dim)
    if declared != actual:
        raise DimensionError(f"memory checkpoint header declares "
                             f"(d, l, K, de)={declared} but tensors give "
                             f"{actual}")
    return params
