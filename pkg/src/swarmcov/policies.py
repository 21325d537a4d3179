"""Task-assignment policies: Seq2Seq, Seq2Seq+attention, Transformer, Pointer Net.

Each policy reads the drone position plus every PoI (position, priority) and
decodes, one step at a time, a distribution over which PoI to visit next.
Unavailable PoI (already chosen or already mapped) get probability zero.

Decoding is exposed through :class:`Session`: ``logits(allowed)`` scores the
candidates for the current step and ``feed(index)`` commits a choice. The
same session drives greedy inference, sampling, and the teacher-forced replay
that REINFORCE differentiates.

Token features are ``(x, y, z, priority, is_drone, unavailable)`` with
coordinates divided by the world extent on each axis; 2D worlds use ``z = 0``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import neural as nn
from .neural import ParamStore, ShapeError, Var
from .world import WorldState

N_FEATURES = 6


class PolicyVariant(enum.Enum):
    SEQ2SEQ = "Seq2Seq"
    SEQ2SEQ_ATTENTION = "Seq2SeqAttention"
    TRANSFORMER = "TransformerEnc"
    POINTER = "PointerNet"


# Sized so parameter totals land near the reference counts
# (103516, 161564, 111140, 116736).
DEFAULT_DIMS = {
    PolicyVariant.SEQ2SEQ: {"embed": 56, "hidden": 56, "max_poi": 25},
    PolicyVariant.SEQ2SEQ_ATTENTION: {"embed": 66, "hidden": 66, "max_poi": 25},
    PolicyVariant.TRANSFORMER: {"embed": 84, "heads": 4, "ffn": 168, "blocks": 2},
    PolicyVariant.POINTER: {"embed": 58, "hidden": 58},
}

TABLE1_PARAMETERS = {
    PolicyVariant.SEQ2SEQ: 103516,
    PolicyVariant.SEQ2SEQ_ATTENTION: 161564,
    PolicyVariant.TRANSFORMER: 111140,
    PolicyVariant.POINTER: 116736,
}


@dataclass
class AssignmentInput:
    drone: np.ndarray  # (N_FEATURES,)
    poi: np.ndarray  # (n_poi, N_FEATURES)
    visited_mask: np.ndarray  # (n_poi,) bool

    @property
    def n_poi(self) -> int:
        return len(self.poi)


def encode_input(w: WorldState, drone_id: int, visited=None) -> AssignmentInput:
    scale = np.asarray(w.extent, dtype=float)

    def token(pos, prio, is_drone):
        f = np.zeros(N_FEATURES)
        f[: w.dims] = np.asarray(pos) / scale
        f[3] = prio
        f[4] = is_drone
        return f

    mask = w.mapped.copy()
    if visited is not None:
        mask |= np.asarray(visited, dtype=bool)
    poi = np.array(
        [token(p, float(h), 0.0) for p, h in zip(w.poi_positions, w.poi_high)]
    ).reshape(-1, N_FEATURES)
    poi[:, 5] = mask
    return AssignmentInput(token(w.drones[drone_id], 0.0, 1.0), poi, mask)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _lstm_params(store, prefix, n_in, H, rng):
    store.add_uniform(f"{prefix}.Wx", (4 * H, n_in), H, rng)
    store.add_uniform(f"{prefix}.Wh", (4 * H, H), H, rng)
    store.add_uniform(f"{prefix}.b", (4 * H,), H, rng)


def _affine_params(store, prefix, n_in, n_out, rng, bias=True):
    store.add_uniform(f"{prefix}.W", (n_out, n_in), n_in, rng)
    if bias:
        store.add_uniform(f"{prefix}.b", (n_out,), n_in, rng)


def build_params(variant: PolicyVariant, dims: dict, seed: int = 0) -> ParamStore:
    """Seeded uniform(+-1/sqrt(fan_in)) initialisation of a variant's weights."""
    rng = np.random.default_rng(seed)
    store = ParamStore(meta={"variant": variant.value, "dims": dict(dims)})
    if variant is PolicyVariant.TRANSFORMER:
        E, F = dims["embed"], dims["ffn"]
        if E % dims["heads"]:
            raise ShapeError("embed must be divisible by heads")
        _affine_params(store, "embed", N_FEATURES, E, rng)
        for k in range(dims["blocks"]):
            p = f"block{k}"
            for name in ("q", "k", "v", "o"):
                _affine_params(store, f"{p}.{name}", E, E, rng)
            store.add(f"{p}.ln1.g", np.ones(E))
            store.add(f"{p}.ln1.b", np.zeros(E))
            _affine_params(store, f"{p}.ff1", E, F, rng)
            _affine_params(store, f"{p}.ff2", F, E, rng)
            store.add(f"{p}.ln2.g", np.ones(E))
            store.add(f"{p}.ln2.b", np.zeros(E))
        _affine_params(store, "out", E, 1, rng)
        return store

    E, H = dims["embed"], dims["hidden"]
    _affine_params(store, "embed", N_FEATURES, E, rng)
    store.add_uniform("LW", (E,), E, rng)
    _lstm_params(store, "enc0", E, H, rng)
    _lstm_params(store, "enc1", H, H, rng)
    dec_in = E + H if variant is PolicyVariant.SEQ2SEQ_ATTENTION else E
    _lstm_params(store, "dec0", dec_in, H, rng)
    _lstm_params(store, "dec1", H, H, rng)
    if variant is PolicyVariant.SEQ2SEQ:
        _affine_params(store, "out", H, dims["max_poi"], rng)
    elif variant is PolicyVariant.SEQ2SEQ_ATTENTION:
        _affine_params(store, "out", 2 * H, dims["max_poi"], rng)
    else:
        _affine_params(store, "ptr.W1", H, H, rng, bias=False)
        _affine_params(store, "ptr.W2", H, H, rng, bias=False)
        store.add_uniform("ptr.v", (1, H), H, rng)
    return store


def count_parameters(variant: PolicyVariant, dims: dict | None = None) -> int:
    return build_params(variant, dims or DEFAULT_DIMS[variant]).count()


@dataclass
class PolicyNetwork:
    variant: PolicyVariant
    dims: dict
    params: ParamStore

    @classmethod
    def build(cls, variant, dims=None, seed: int = 0) -> "PolicyNetwork":
        variant = PolicyVariant(variant)
        dims = dict(dims or DEFAULT_DIMS[variant])
        return cls(variant, dims, build_params(variant, dims, seed))

    @classmethod
    def from_params(cls, params: ParamStore) -> "PolicyNetwork":
        try:
            variant = PolicyVariant(params.meta["variant"])
            dims = dict(params.meta["dims"])
        except (KeyError, ValueError) as exc:
            raise ValueError("checkpoint metadata lacks a valid variant/dims") from exc
        expected = build_params(variant, dims)
        for name in expected.names():
            if name not in params or params[name].shape != expected[name].shape:
                raise ShapeError(f"checkpoint does not match {variant.value}: {name}")
        extra = set(params.names()) - set(expected.names())
        if extra:
            raise ShapeError(f"checkpoint has unexpected entries: {sorted(extra)}")
        # keep construction order so flat() and optimiser state line up
        ordered = ParamStore(meta=dict(params.meta))
        for name in expected.names():
            ordered.add(name, params[name])
        return cls(variant, dims, ordered)

    def save(self, path):
        self.params.save(path)

    @classmethod
    def load(cls, path) -> "PolicyNetwork":
        return cls.from_params(ParamStore.load(path))

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork(self.variant, dict(self.dims), self.params.copy())

    def session(self, inp: AssignmentInput) -> "Session":
        return _SESSIONS[self.variant](self, inp)


# ---------------------------------------------------------------------------
# decoding sessions
# ---------------------------------------------------------------------------


class Session:
    def __init__(self, policy: PolicyNetwork, inp: AssignmentInput):
        self.policy = policy
        self.inp = inp
        self.p = {name: policy.params.var(name) for name in policy.params.names()}

    def logits(self, allowed) -> Var:
        raise NotImplementedError

    def feed(self, index: int) -> None:
        raise NotImplementedError

    def distribution(self, allowed) -> np.ndarray:
        allowed = np.asarray(allowed, dtype=bool)
        return nn.softmax(self.logits(allowed).value, allowed)

    def log_prob(self, allowed, index: int) -> Var:
        return nn.log_prob(self.logits(allowed), np.asarray(allowed, dtype=bool), index)

    def _embed(self, feats) -> Var:
        return nn.affine(nn.const(feats), self.p["embed.W"], self.p["embed.b"])


class _RecurrentSession(Session):
    """Shared 2-layer LSTM encoder/decoder plumbing.

    With ``residual`` set, each token's embedding is added to its top-layer
    encoder output and the decoder input to the decoder output (needs
    ``embed == hidden``).
    """

    residual = False

    def __init__(self, policy, inp):
        super().__init__(policy, inp)
        H = policy.dims["hidden"]
        zero = np.zeros(H)
        # drone token last so the final encoder state is anchored on it
        tokens = np.vstack([inp.poi, inp.drone[None, :]])
        emb = self._embed(tokens)
        state = [(nn.const(zero), nn.const(zero)), (nn.const(zero), nn.const(zero))]
        outputs = []
        for t in range(len(tokens)):
            x = nn.row(emb, t)
            for layer in range(2):
                h, c = state[layer]
                h, c = nn.lstm_cell(x, h, c, *self._lstm(f"enc{layer}"))
                state[layer] = (h, c)
                x = h
            if self.residual:
                x = nn.add(x, nn.row(emb, t))
            outputs.append(x)
        self.enc_outputs = outputs
        self.state = state
        self.next_input = self.p["LW"]
        self.top = None

    def _lstm(self, prefix):
        return self.p[f"{prefix}.Wx"], self.p[f"{prefix}.Wh"], self.p[f"{prefix}.b"]

    def _decode(self, x: Var) -> Var:
        inp = x
        for layer in range(2):
            h, c = self.state[layer]
            h, c = nn.lstm_cell(x, h, c, *self._lstm(f"dec{layer}"))
            self.state[layer] = (h, c)
            x = h
        return nn.add(x, inp) if self.residual else x

    def feed(self, index):
        self.next_input = nn.row(self._embed(self.inp.poi[index : index + 1]), 0)
        self.top = None


class Seq2SeqSession(_RecurrentSession):
    def logits(self, allowed):
        n = self.inp.n_poi
        if n > self.policy.dims["max_poi"]:
            raise ShapeError(f"{n} PoI exceed the Seq2Seq head size")
        if self.top is None:
            self.top = self._decode(self.next_input)
            self.scores = nn.cols(nn.affine(self.top, self.p["out.W"], self.p["out.b"]), 0, n)
        return self.scores


class Seq2SeqAttentionSession(_RecurrentSession):
    def __init__(self, policy, inp):
        super().__init__(policy, inp)
        self.memory = nn.stack(self.enc_outputs)
        self.context = nn.const(np.zeros(policy.dims["hidden"]))

    def logits(self, allowed):
        n = self.inp.n_poi
        if n > self.policy.dims["max_poi"]:
            raise ShapeError(f"{n} PoI exceed the Seq2Seq head size")
        if self.top is None:
            self.top = self._decode(nn.concat([self.next_input, self.context]))
            self.context, self.weights = nn.attention(self.top, self.memory, self.memory)
            head = nn.affine(nn.concat([self.top, self.context]), self.p["out.W"], self.p["out.b"])
            self.scores = nn.cols(head, 0, n)
        return self.scores


class PointerSession(_RecurrentSession):
    residual = True
    def __init__(self, policy, inp):
        super().__init__(policy, inp)
        # drone token is context only; the pointer ranges over PoI states
        self.memory = nn.stack(self.enc_outputs[:-1]) if inp.n_poi else None
        if self.memory is not None:
            self.keys = nn.affine(self.memory, self.p["ptr.W1.W"])

    def logits(self, allowed):
        if self.top is None:
            self.top = self._decode(self.next_input)
            q = nn.affine(self.top, self.p["ptr.W2.W"])
            u = nn.affine(nn.tanh(nn.add(self.keys, q)), self.p["ptr.v"])
            self.scores = nn.reshape(u, (self.inp.n_poi,))
        return self.scores


class TransformerSession(Session):
    """Encoder-only stack; re-encodes the whole state at every decode step."""

    def __init__(self, policy, inp):
        super().__init__(policy, inp)
        self.drone = inp.drone.copy()
        self.cache_key = None

    def feed(self, index):
        self.drone = self.inp.poi[index].copy()
        self.drone[3] = 0.0
        self.drone[4] = 1.0
        self.drone[5] = 0.0
        self.cache_key = None

    def _block(self, x: Var, k: int) -> Var:
        p, d = self.p, self.policy.dims
        E, heads = d["embed"], d["heads"]
        hd = E // heads
        q = nn.affine(x, p[f"block{k}.q.W"], p[f"block{k}.q.b"])
        kk = nn.affine(x, p[f"block{k}.k.W"], p[f"block{k}.k.b"])
        v = nn.affine(x, p[f"block{k}.v.W"], p[f"block{k}.v.b"])
        outs = []
        for h in range(heads):
            s, e = h * hd, (h + 1) * hd
            ctx, _ = nn.attention(nn.cols(q, s, e), nn.cols(kk, s, e), nn.cols(v, s, e))
            outs.append(ctx)
        att = nn.affine(nn.concat(outs), p[f"block{k}.o.W"], p[f"block{k}.o.b"])
        x = nn.layer_norm(nn.add(x, att), p[f"block{k}.ln1.g"], p[f"block{k}.ln1.b"])
        ff = nn.affine(
            nn.relu(nn.affine(x, p[f"block{k}.ff1.W"], p[f"block{k}.ff1.b"])),
            p[f"block{k}.ff2.W"],
            p[f"block{k}.ff2.b"],
        )
        return nn.layer_norm(nn.add(x, ff), p[f"block{k}.ln2.g"], p[f"block{k}.ln2.b"])

    def logits(self, allowed):
        allowed = np.asarray(allowed, dtype=bool)
        key = allowed.tobytes()
        if self.cache_key == key:
            return self.scores
        poi = self.inp.poi.copy()
        poi[:, 5] = ~allowed
        x = nn.relu(self._embed(np.vstack([self.drone[None, :], poi])))
        for k in range(self.policy.dims["blocks"]):
            x = self._block(x, k)
        n = self.inp.n_poi
        u = nn.affine(x, self.p["out.W"], self.p["out.b"])
        self.scores = nn.reshape(nn.cols(nn.reshape(u, (n + 1,)), 1, n + 1), (n,))
        self.cache_key = key
        return self.scores


_SESSIONS = {
    PolicyVariant.SEQ2SEQ: Seq2SeqSession,
    PolicyVariant.SEQ2SEQ_ATTENTION: Seq2SeqAttentionSession,
    PolicyVariant.TRANSFORMER: TransformerSession,
    PolicyVariant.POINTER: PointerSession,
}


# ---------------------------------------------------------------------------
# module-level API
# ---------------------------------------------------------------------------


def forward(policy: PolicyNetwork, inp: AssignmentInput, decode_steps: int, choices=None):
    """Distributions for ``decode_steps`` steps.

    Without ``choices`` the decoder is advanced greedily; with them it is
    teacher-forced.
    """
    if decode_steps > inp.n_poi:
        raise ShapeError("decode_steps exceeds the number of PoI")
    sess = policy.session(inp)
    allowed = ~inp.visited_mask
    out = []
    for t in range(decode_steps):
        if not allowed.any():
            break
        probs = sess.distribution(allowed)
        out.append(probs)
        pick = int(np.argmax(probs)) if choices is None else int(choices[t])
        sess.feed(pick)
        allowed = allowed.copy()
        allowed[pick] = False
    return out


def sample_assignment(
    policy: PolicyNetwork,
    w: WorldState,
    drone_id: int,
    rng: np.random.Generator | None = None,
    mode: str = "greedy",
    decode_steps: int | None = None,
) -> list[int]:
    """Autoregressive order over the unmapped PoI (a prefix of a permutation)."""
    inp = encode_input(w, drone_id)
    allowed = ~inp.visited_mask
    steps = int(allowed.sum()) if decode_steps is None else min(decode_steps, int(allowed.sum()))
    if steps == 0:
        return []
    if mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    sess = policy.session(inp)
    order = []
    for _ in range(steps):
        probs = sess.distribution(allowed)
        if mode == "greedy":
            pick = int(np.argmax(probs))
        elif mode == "sample":
            pick = int(rng.choice(len(probs), p=probs))
        else:
            raise ValueError(f"unknown decode mode {mode!r}")
        order.append(pick)
        sess.feed(pick)
        allowed = allowed.copy()
        allowed[pick] = False
    return order
