"""Recurrent actor-critic that writes rule trees token by token.

At every decoding step the LSTM input is ``concat(state, embed(partial tree))``.
The embedding is a one-hot per preorder slot, so its projection is a sum of
weight columns; the implementation keeps that sum incrementally instead of
materializing the 310-wide vector. A legal-token mask (operators at the root,
terminals at depth 5) guarantees every emitted tree is valid.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from . import expr
from .engine import Action, N_FEATURES
from .errors import ConfigError, ContractError

DTYPE = torch.float64
V = expr.VOCAB_SIZE
MASK_FILL = -1e30

_LEGAL = {d: np.isin(np.arange(V), expr.legal_tokens(d)) for d in range(1, expr.MAX_HEIGHT + 1)}


class RulePolicy(nn.Module):
    PARAM_ORDER = (
        "w_state",
        "w_embed",
        "w_hh",
        "bias",
        "tok_w",
        "tok_b",
        "omega_w",
        "omega_b",
        "eps_w",
        "eps_b",
        "value_w",
        "value_b",
    )

    def __init__(self, hidden: int = 64, seed: int = 0, head_scale: float = 0.01):
        super().__init__()
        if hidden < 1:
            raise ConfigError("hidden width must be positive")
        self.hidden = hidden
        self.head_scale = head_scale
        rng = np.random.default_rng(seed)
        h4 = 4 * hidden
        k = 1.0 / np.sqrt(hidden)
        w_hh = np.concatenate([_orthogonal(hidden, rng) for _ in range(4)], axis=0)
        init = {
            "w_state": rng.uniform(-k, k, (h4, N_FEATURES)),
            "w_embed": rng.uniform(-k, k, (h4, expr.EMB_DIM)),
            "w_hh": w_hh,
            "bias": np.zeros(h4),
            "tok_w": rng.uniform(-head_scale, head_scale, (V, hidden)),
            "tok_b": np.zeros(V),
            "omega_w": rng.uniform(-head_scale, head_scale, (expr.N_OMEGA, hidden)),
            "omega_b": np.zeros(expr.N_OMEGA),
            "eps_w": rng.uniform(-head_scale, head_scale, (expr.N_EPS, hidden)),
            "eps_b": np.zeros(expr.N_EPS),
            "value_w": np.zeros(hidden),
            "value_b": np.zeros(()),
        }
        for name in self.PARAM_ORDER:
            setattr(self, name, nn.Parameter(torch.tensor(init[name], dtype=DTYPE)))

    # -------------------------------------------------------------- parameter registry

    def registry(self) -> list[tuple[str, int, tuple[int, ...]]]:
        out, off = [], 0
        for name in self.PARAM_ORDER:
            shape = tuple(getattr(self, name).shape)
            out.append((name, off, shape))
            off += int(np.prod(shape, dtype=int))
        return out

    def ordered_parameters(self) -> list[nn.Parameter]:
        return [getattr(self, n) for n in self.PARAM_ORDER]

    def get_flat(self) -> np.ndarray:
        return torch.cat([p.detach().reshape(-1) for p in self.ordered_parameters()]).numpy().copy()

    def set_flat(self, values) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.n_params,):
            raise ContractError(f"expected {self.n_params} values, got {values.shape}")
        with torch.no_grad():
            for name, off, shape in self.registry():
                n = int(np.prod(shape, dtype=int))
                getattr(self, name).copy_(torch.from_numpy(values[off : off + n].reshape(shape)))

    def flat_grad(self) -> np.ndarray:
        return torch.cat(
            [
                (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
                for p in self.ordered_parameters()
            ]
        ).numpy().copy()

    def flat_tensor(self) -> torch.Tensor:
        """Differentiable concatenation of all parameters."""
        return torch.cat([p.reshape(-1) for p in self.ordered_parameters()])

    @property
    def n_params(self) -> int:
        return sum(p.numel() for p in self.ordered_parameters())

    def clone(self) -> "RulePolicy":
        twin = RulePolicy(self.hidden, head_scale=self.head_scale)
        twin.set_flat(self.get_flat())
        return twin

    # -------------------------------------------------------------- core recurrences

    def _cell(self, pre, h, c):
        gates = pre + h @ self.w_hh.T
        i, f, g, o = gates.chunk(4, dim=-1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c

    def _state_projection(self, states):
        return states @ self.w_state.T + self.bias

    def _embed_column(self, slot, token):
        return self.w_embed[:, slot * V + token]

    def value_from_hidden(self, h0):
        return h0 @ self.value_w + self.value_b

    def initial_hidden(self, states):
        z = torch.zeros(states.shape[0], self.hidden, dtype=DTYPE)
        return self._cell(self._state_projection(states), z, z)[0]

    def forward(self, batch: "SequenceBatch") -> "Scores":
        return self.score(batch)

    def score(self, batch: "SequenceBatch") -> "Scores":
        """Teacher-forced pass over padded token sequences."""
        B, L = batch.valid.shape
        pre = self._state_projection(batch.states)
        slots = torch.arange(L).unsqueeze(0) * V + batch.tokens[..., 0].clamp(min=0)
        contrib = (self.w_embed.T[slots] * batch.valid.unsqueeze(-1)).unbind(1)
        acc = torch.zeros_like(pre)
        h = torch.zeros(B, self.hidden, dtype=DTYPE)
        c = torch.zeros_like(h)
        hs = []
        for t in range(L):
            # exclusive prefix sum of the embedding columns of slots 0..t-1
            if t:
                acc = acc + contrib[t - 1]
            h, c = self._cell(pre + acc, h, c)
            hs.append(h)
        Hs = torch.stack(hs, dim=1)
        tok_logits = (Hs @ self.tok_w.T + self.tok_b).masked_fill(~batch.masks, MASK_FILL)
        return Scores(
            tok_logp=torch.log_softmax(tok_logits, dim=-1),
            omega_logp=torch.log_softmax(Hs @ self.omega_w.T + self.omega_b, dim=-1),
            eps_logp=torch.log_softmax(Hs @ self.eps_w.T + self.eps_b, dim=-1),
            value=self.value_from_hidden(Hs[:, 0]),
        )

    # -------------------------------------------------------------- decoding

    @torch.no_grad()
    def act(self, states, rngs: Sequence[np.random.Generator], greedy: bool = False) -> list[Action]:
        states = torch.as_tensor(np.asarray(states), dtype=DTYPE)
        B = states.shape[0]
        pre = self._state_projection(states)
        acc = torch.zeros_like(pre)
        h = torch.zeros(B, self.hidden, dtype=DTYPE)
        c = torch.zeros_like(h)
        stacks = [[1] for _ in range(B)]
        nodes: list[list[expr.Node]] = [[] for _ in range(B)]
        node_lp: list[list[float]] = [[] for _ in range(B)]
        values = None
        active = list(range(B))
        for t in range(expr.MAX_NODES):
            h, c = self._cell(pre + acc, h, c)
            if t == 0:
                values = self.value_from_hidden(h).numpy()
            masks = np.ones((B, V), dtype=bool)
            for b in active:
                masks[b] = _LEGAL[stacks[b][-1]]
            logits = (h @ self.tok_w.T + self.tok_b).masked_fill(~torch.from_numpy(masks), MASK_FILL)
            tok_lp = torch.log_softmax(logits, dim=-1).numpy()
            om_lp = torch.log_softmax(h @ self.omega_w.T + self.omega_b, dim=-1).numpy()
            ep_lp = torch.log_softmax(h @ self.eps_w.T + self.eps_b, dim=-1).numpy()
            cols = np.zeros(B, dtype=np.int64)
            still = []
            for b in active:
                tok = _choose(tok_lp[b], rngs[b], greedy)
                lp = tok_lp[b, tok]
                if tok == expr.CONST:
                    w = _choose(om_lp[b], rngs[b], greedy)
                    e = _choose(ep_lp[b], rngs[b], greedy)
                    lp += om_lp[b, w] + ep_lp[b, e]
                    nodes[b].append(expr.Node(tok, w, e))
                else:
                    nodes[b].append(expr.Node(tok))
                node_lp[b].append(float(lp))
                depth = stacks[b].pop()
                if tok in expr.OPERATORS:
                    stacks[b].extend((depth + 1, depth + 1))
                cols[b] = t * V + tok
                if stacks[b]:
                    still.append(b)
            if not still:
                break
            rows = torch.tensor(still)
            acc[rows] += self.w_embed.T[torch.from_numpy(cols[still])]
            active = still
        out = []
        for b in range(B):
            tree = expr.ExprTree(tuple(nodes[b]))
            lps = np.asarray(node_lp[b])
            out.append(Action(tree, tree.tokens(), float(lps.sum()), float(values[b]), lps))
        return out


def _orthogonal(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _choose(logp, rng, greedy):
    if greedy:
        return int(np.argmax(logp))
    p = np.exp(logp)
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(p) - 1))


# ------------------------------------------------------------------ batches and scores


class Scores(NamedTuple):
    tok_logp: torch.Tensor
    omega_logp: torch.Tensor
    eps_logp: torch.Tensor
    value: torch.Tensor


@dataclass
class SequenceBatch:
    states: torch.Tensor  # (B, 9)
    tokens: torch.Tensor  # (B, L, 3) long, padding = -1
    valid: torch.Tensor  # (B, L) bool
    masks: torch.Tensor  # (B, L, V) bool
    is_const: torch.Tensor  # (B, L) bool

    @property
    def size(self) -> int:
        return self.states.shape[0]


def make_batch(states, token_seqs) -> SequenceBatch:
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if len(token_seqs) != states.shape[0] or not len(token_seqs):
        raise ContractError("need one token sequence per state")
    seqs = [np.asarray(s, dtype=np.int64).reshape(-1, 3) for s in token_seqs]
    L = max(len(s) for s in seqs)
    B = len(seqs)
    tokens = np.full((B, L, 3), -1, dtype=np.int64)
    masks = np.ones((B, L, V), dtype=bool)
    valid = np.zeros((B, L), dtype=bool)
    for b, s in enumerate(seqs):
        n = len(s)
        masks[b, :n] = expr.legal_masks(s)
        tokens[b, :n] = s
        valid[b, :n] = True
    return SequenceBatch(
        states=torch.from_numpy(states),
        tokens=torch.from_numpy(tokens),
        valid=torch.from_numpy(valid),
        masks=torch.from_numpy(masks),
        is_const=torch.from_numpy(valid & (tokens[..., 0] == expr.CONST)),
    )


def _pick(logp, idx):
    return torch.gather(logp, -1, idx.clamp(min=0).unsqueeze(-1)).squeeze(-1)


def sequence_log_prob(scores: Scores, batch: SequenceBatch) -> torch.Tensor:
    tok = _pick(scores.tok_logp, batch.tokens[..., 0])
    const = _pick(scores.omega_logp, batch.tokens[..., 1]) + _pick(scores.eps_logp, batch.tokens[..., 2])
    per_pos = torch.where(batch.valid, tok, 0.0) + torch.where(batch.is_const, const, 0.0)
    return per_pos.sum(dim=1)


def _entropy(logp):
    return -(logp.exp() * logp).sum(-1)


def sequence_entropy(scores: Scores, batch: SequenceBatch) -> torch.Tensor:
    tok = _entropy(scores.tok_logp)
    const = _entropy(scores.omega_logp) + _entropy(scores.eps_logp)
    per_pos = torch.where(batch.valid, tok, 0.0) + torch.where(batch.is_const, const, 0.0)
    return per_pos.sum(dim=1)


def categorical_kl(logp, logq):
    """sum_a p(a) (log p(a) - log q(a)) over the last axis, from log-probabilities."""
    return (logp.exp() * (logp - logq)).sum(-1)


def masked_kl(logits_p, logits_q, mask) -> torch.Tensor:
    """KL(p || q) between two categoricals restricted to the same legal support."""
    mask = torch.as_tensor(mask, dtype=torch.bool)
    lp = torch.log_softmax(torch.as_tensor(logits_p, dtype=DTYPE).masked_fill(~mask, MASK_FILL), -1)
    lq = torch.log_softmax(torch.as_tensor(logits_q, dtype=DTYPE).masked_fill(~mask, MASK_FILL), -1)
    return categorical_kl(lp, lq)


def sequence_kl(scores_p: Scores, scores_q: Scores, batch: SequenceBatch) -> torch.Tensor:
    """Per-sequence sum over decision points of KL(p || q)."""
    tok = categorical_kl(scores_p.tok_logp, scores_q.tok_logp)
    const = categorical_kl(scores_p.omega_logp, scores_q.omega_logp) + categorical_kl(
        scores_p.eps_logp, scores_q.eps_logp
    )
    per_pos = torch.where(batch.valid, tok, 0.0) + torch.where(batch.is_const, const, 0.0)
    return per_pos.sum(dim=1)


# ------------------------------------------------------------------ operations


def construct_rule(policy: RulePolicy, state, rng: np.random.Generator, mode: str = "sample"):
    """Decode one rule; returns (tree, per-node log-probs, entropy of the decision path)."""
    if mode not in ("sample", "greedy"):
        raise ContractError(f"unknown decode mode {mode!r}")
    act = policy.act(np.asarray(state, dtype=np.float64)[None, :], [rng], greedy=mode == "greedy")[0]
    with torch.no_grad():
        batch = make_batch([state], [act.tokens])
        ent = float(sequence_entropy(policy.score(batch), batch)[0])
    return act.tree, act.token_log_probs, ent


def action_log_prob(policy: RulePolicy, state, token_sequence):
    """(log-prob, entropy) of a legal token sequence; both differentiable tensors."""
    batch = make_batch([state], [token_sequence])
    scores = policy.score(batch)
    return sequence_log_prob(scores, batch)[0], sequence_entropy(scores, batch)[0]


def value_estimate(policy: RulePolicy, state) -> torch.Tensor:
    states = torch.as_tensor(np.atleast_2d(np.asarray(state, dtype=np.float64)))
    return policy.value_from_hidden(policy.initial_hidden(states))[0]


def kl_divergence(policy: RulePolicy, elite: RulePolicy, states, token_sequences, n_trajectories: int = 1):
    """KL(policy || elite) summed over decision points and states, divided by |J|.

    The elite side is treated as a constant.
    """
    batch = make_batch(states, token_sequences)
    return batch_kl(policy, elite, batch) / n_trajectories


def batch_kl(policy: RulePolicy, elite: RulePolicy, batch: SequenceBatch) -> torch.Tensor:
    scores = policy.score(batch)
    with torch.no_grad():
        ref = elite.score(batch)
    return sequence_kl(scores, ref, batch).sum()


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(policy: RulePolicy, path, config_hash: str = "", meta: dict | None = None) -> None:
    reg = [[name, off, list(shape)] for name, off, shape in policy.registry()]
    np.savez(
        path,
        values=policy.get_flat(),
        registry=np.array(json.dumps(reg)),
        config_hash=np.array(config_hash),
        hidden=np.array(policy.hidden),
        meta=np.array(json.dumps(meta or {})),
    )


def load_checkpoint(path, expected_hash: str | None = None) -> tuple[RulePolicy, dict]:
    with np.load(path) as data:
        stored_hash = str(data["config_hash"])
        if expected_hash is not None and stored_hash != expected_hash:
            raise ConfigError(f"checkpoint config hash {stored_hash} != expected {expected_hash}")
        policy = RulePolicy(int(data["hidden"]))
        reg = json.loads(str(data["registry"]))
        if [tuple(r[:2]) + (tuple(r[2]),) for r in reg] != policy.registry():
            raise ConfigError("checkpoint parameter registry does not match the policy layout")
        policy.set_flat(data["values"])
        meta = json.loads(str(data["meta"]))
        meta["config_hash"] = stored_hash
    return policy, meta


def params_digest(policy: RulePolicy) -> str:
    return hashlib.sha256(policy.get_flat().tobytes()).hexdigest()
