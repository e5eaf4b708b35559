"""Recurrent state-space world models.

Two kinds share one implementation: the scaffolded model consumes the
concatenated observation (and owns the transdecoder that maps its latent
back to a target-observation estimate); the target model consumes only the
deployment channel. Posterior and prior share the recurrent backbone, and
heads decode reward, continuation, and observations from (h, z).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, TrainingError
from .layers import (ParamSet, dense_forward, gru_step, init_gru, init_mlp,
                     mlp_forward, sample_diag_gaussian)
from .optim import adam_step
from .replay import SequenceBatch
from .rng import Rng

KINDS = ("target", "scaffolded")


@dataclass
class LatentState:
    """Recurrent model state: deterministic h plus stochastic z with its
    distribution statistics. Arrays are (batch, dim); Vars while on tape."""

    h: object
    z: object
    mean: object
    std: object
    kind: str

    def feat(self, tape=None):
        if tape is None:
            return np.concatenate([ad.value_of(self.h), ad.value_of(self.z)], axis=-1)
        return tape.concat([self.h, self.z], axis=-1)

    def detached(self) -> "LatentState":
        return LatentState(ad.value_of(self.h), ad.value_of(self.z),
                           ad.value_of(self.mean), ad.value_of(self.std), self.kind)

    def take(self, idx) -> "LatentState":
        return LatentState(self.h[idx], self.z[idx], self.mean[idx],
                           self.std[idx], self.kind)


@dataclass
class WmLossReport:
    pred_loss: float
    dyn_loss: float
    rep_loss: float
    transdec_loss: float
    total: float
    heads: dict = field(default_factory=dict)


@dataclass
class WmConfig:
    hidden: int = 32        # deterministic state
    stoch: int = 16         # stochastic state
    embed: int = 32
    width: int = 64
    min_std: float = 0.1
    free_nats: float = 1.0
    beta_pred: float = 1.0
    beta_dyn: float = 0.5
    beta_rep: float = 0.1
    lr: float = 1e-3
    grad_clip: float = 100.0


class WorldModel:
    """One RSSM with embedder, sequence model, posterior/prior, and heads."""

    def __init__(self, kind: str, obs_dim: int, action_dim: int, decode_dim: int,
                 cfg: WmConfig, rng: Rng, transdecode_dim: int | None = None,
                 aux_decode_dim: int | None = None, dtype=np.float32):
        if kind not in KINDS:
            raise ContractError(f"unknown world-model kind {kind!r}")
        if kind == "target" and transdecode_dim is not None:
            raise ContractError("target world model has no transdecoder")
        self.kind = kind
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.decode_dim = decode_dim
        self.transdecode_dim = transdecode_dim
        self.aux_decode_dim = aux_decode_dim
        self.cfg = cfg
        self.dtype = np.dtype(dtype)

        c = cfg
        ps = ParamSet(dtype=dtype)
        init_mlp(ps, "embed", [obs_dim, c.width, c.embed], rng)
        init_gru(ps, "seq", c.stoch + action_dim, c.hidden, rng)
        init_mlp(ps, "post", [c.hidden + c.embed, c.width, 2 * c.stoch], rng)
        init_mlp(ps, "prior", [c.hidden, c.width, 2 * c.stoch], rng)
        init_mlp(ps, "reward", [c.hidden + c.stoch, c.width, 1], rng, zero_out=True)
        init_mlp(ps, "cont", [c.hidden + c.stoch, c.width, 1], rng, zero_out=True)
        init_mlp(ps, "dec", [c.hidden + c.stoch, c.width, decode_dim], rng, zero_out=True)
        if transdecode_dim is not None:
            init_mlp(ps, "transdec", [c.hidden + c.stoch, c.width, transdecode_dim],
                     rng, zero_out=True)
        if aux_decode_dim is not None:
            init_mlp(ps, "aux", [c.hidden + c.stoch, c.width, aux_decode_dim],
                     rng, zero_out=True)
        self.params = ps

    # ---- single-step API ---------------------------------------------------

    def initial_state(self, batch: int) -> LatentState:
        c = self.cfg
        z = np.zeros((batch, c.stoch), dtype=self.dtype)
        return LatentState(
            h=np.zeros((batch, c.hidden), dtype=self.dtype),
            z=z, mean=z.copy(), std=np.ones_like(z), kind=self.kind)

    def embed(self, tape, obs, trainable=True):
        o = ad.value_of(obs)
        if o.shape[-1] != self.obs_dim:
            raise ContractError(
                f"{self.kind} model expects obs dim {self.obs_dim}, got {o.shape[-1]}")
        return mlp_forward(tape, self.params, "embed", obs, 2, trainable=trainable)

    def _check_kind(self, prev: LatentState):
        if prev.kind != self.kind:
            raise ContractError(
                f"latent kind {prev.kind!r} fed to {self.kind!r} world model")

    def _advance(self, tape, prev: LatentState, action, trainable):
        za = (np.concatenate([ad.value_of(prev.z), ad.value_of(action)], axis=-1)
              if tape is None else tape.concat([prev.z, action], axis=-1))
        return gru_step(tape, self.params, "seq", prev.h, za, trainable=trainable)

    def _stats(self, tape, raw):
        n = self.cfg.stoch
        if tape is None:
            mean, raw_std = raw[..., :n], raw[..., n:]
            return mean, ad._softplus(raw_std) + self.cfg.min_std
        mean = raw[..., :n]
        std = raw[..., n:].softplus() + self.cfg.min_std
        return mean, std

    @staticmethod
    def _draw(mean, std, rng, deterministic, eps):
        if eps is not None:
            return mean + std * eps
        return sample_diag_gaussian(mean, std, rng, deterministic=deterministic)

    def posterior_step(self, tape, prev: LatentState, action, embed_vec, rng: Rng,
                       deterministic=False, trainable=True, eps=None) -> LatentState:
        """h_t from the sequence model, then q(z_t | h_t, e_t)."""
        self._check_kind(prev)
        h = self._advance(tape, prev, action, trainable)
        he = (np.concatenate([h, ad.value_of(embed_vec)], axis=-1) if tape is None
              else tape.concat([h, embed_vec], axis=-1))
        mean, std = self._stats(tape, mlp_forward(tape, self.params, "post", he, 2,
                                                  trainable=trainable))
        z = self._draw(mean, std, rng, deterministic, eps)
        return LatentState(h, z, mean, std, self.kind)

    def prior_step(self, tape, prev: LatentState, action, rng: Rng,
                   deterministic=False, trainable=True, eps=None) -> LatentState:
        """Same h update; p(z_t | h_t) without looking at an observation."""
        self._check_kind(prev)
        h = self._advance(tape, prev, action, trainable)
        mean, std = self._stats(tape, mlp_forward(tape, self.params, "prior", h, 2,
                                                  trainable=trainable))
        z = self._draw(mean, std, rng, deterministic, eps)
        return LatentState(h, z, mean, std, self.kind)

    def predict_heads(self, tape, latent: LatentState, trainable=True) -> dict:
        self._check_kind(latent)
        feat = latent.feat(tape)
        reward = mlp_forward(tape, self.params, "reward", feat, 2, trainable=trainable)
        cont_logit = mlp_forward(tape, self.params, "cont", feat, 2, trainable=trainable)
        recon = mlp_forward(tape, self.params, "dec", feat, 2, trainable=trainable)
        if tape is None:
            cont_prob = ad._sigmoid(cont_logit)
        else:
            cont_prob = cont_logit.sigmoid()
        return {"reward": reward, "continue_prob": cont_prob,
                "cont_logit": cont_logit, "obs_recon": recon}

    def transdecode(self, tape, latent: LatentState, trainable=True):
        """Estimate of the raw target observation from a scaffolded latent."""
        if self.transdecode_dim is None:
            raise ContractError("this world model has no transdecoder")
        self._check_kind(latent)
        return mlp_forward(tape, self.params, "transdec", latent.feat(tape), 2,
                           trainable=trainable)

    # ---- sequence training ---------------------------------------------------

    def observe_sequence(self, tape, obs, prev_action, is_first, rng: Rng):
        """Posterior rollout over a (B, L, ...) batch.

        Returns time-major stacked features/statistics as tape Vars plus the
        per-step posterior latents (detached) for imagination starts.
        """
        B, L, _ = obs.shape
        if not (is_first[:, 0] == 1.0).all() or is_first[:, 1:].any():
            raise ContractError("sequences must start fresh: is_first only at index 0")
        obs_tm = np.ascontiguousarray(obs.transpose(1, 0, 2)).reshape(L * B, -1)
        act_tm = prev_action.transpose(1, 0, 2)
        e_all = self.embed(tape, obs_tm)
        eps = rng.normal((L, B, self.cfg.stoch), dtype=self.dtype)

        state = self.initial_state(B)
        hs, zs, means, stds = [], [], [], []
        for t in range(L):
            e_t = e_all[t * B:(t + 1) * B]
            h = self._advance(tape, state, act_tm[t], trainable=True)
            he = tape.concat([h, e_t], axis=-1)
            mean, std = self._stats(tape, mlp_forward(tape, self.params, "post", he, 2))
            z = mean + std * eps[t]
            state = LatentState(h, z, mean, std, self.kind)
            hs.append(h)
            zs.append(z)
            means.append(mean)
            stds.append(std)
        h_all = tape.concat(hs, axis=0)
        z_all = tape.concat(zs, axis=0)
        post_mean = tape.concat(means, axis=0)
        post_std = tape.concat(stds, axis=0)
        prior_raw = mlp_forward(tape, self.params, "prior", h_all, 2)
        prior_mean, prior_std = self._stats(tape, prior_raw)
        feat = tape.concat([h_all, z_all], axis=-1)
        latents = LatentState(
            h=np.stack([ad.value_of(h) for h in hs]),
            z=np.stack([ad.value_of(z) for z in zs]),
            mean=np.stack([ad.value_of(m) for m in means]),
            std=np.stack([ad.value_of(s) for s in stds]),
            kind=self.kind)  # (L, B, dim) detached
        return {"feat": feat, "post_mean": post_mean, "post_std": post_std,
                "prior_mean": prior_mean, "prior_std": prior_std,
                "latents": latents}

    def loss(self, tape, obs, prev_action, reward, cont, is_first, mask,
             decode_target, rng: Rng, transdec_target=None, aux_target=None):
        """Sequence ELBO-style training loss; returns (total Var, report, rollout)."""
        B, L, _ = obs.shape
        roll = self.observe_sequence(tape, obs, prev_action, is_first, rng)
        tm = lambda x: np.ascontiguousarray(x.transpose(1, 0, *range(2, x.ndim))).reshape(
            L * B, *x.shape[2:])
        w = tm(mask).astype(self.dtype)
        w = w / max(w.sum(), 1.0)

        feat = roll["feat"]
        dec = mlp_forward(tape, self.params, "dec", feat, 2)
        r_hat = mlp_forward(tape, self.params, "reward", feat, 2)
        c_logit = mlp_forward(tape, self.params, "cont", feat, 2)

        dec_nll = 0.5 * (dec - tm(decode_target)).square().sum(axis=-1)
        rew_nll = 0.5 * (r_hat[:, 0] - tm(reward)).square()
        cont_nll = tape.bce_with_logits(c_logit[:, 0], tm(cont))
        head_losses = {
            "decoder": (dec_nll * w).sum(),
            "reward": (rew_nll * w).sum(),
            "continue": (cont_nll * w).sum(),
        }
        pred = head_losses["decoder"] + head_losses["reward"] + head_losses["continue"]

        fn = self.cfg.free_nats
        dyn_kl = tape.kl_diag_gaussian(
            ad.value_of(roll["post_mean"]), ad.value_of(roll["post_std"]),
            roll["prior_mean"], roll["prior_std"])
        rep_kl = tape.kl_diag_gaussian(
            roll["post_mean"], roll["post_std"],
            ad.value_of(roll["prior_mean"]), ad.value_of(roll["prior_std"]))
        dyn = ((dyn_kl - fn).relu() * w).sum()
        rep = ((rep_kl - fn).relu() * w).sum()

        total = self.cfg.beta_pred * pred + self.cfg.beta_dyn * dyn + self.cfg.beta_rep * rep
        transdec = None
        if self.transdecode_dim is not None:
            if transdec_target is None:
                raise ContractError("scaffolded model training needs a transdecoder target")
            td_hat = mlp_forward(tape, self.params, "transdec", feat, 2)
            transdec = (0.5 * (td_hat - tm(transdec_target)).square().sum(axis=-1) * w).sum()
            head_losses["transdecoder"] = transdec
            total = total + transdec
        if self.aux_decode_dim is not None:
            if aux_target is None:
                raise ContractError("informed model training needs the privileged target")
            aux_hat = mlp_forward(tape, self.params, "aux", feat, 2)
            aux = (0.5 * (aux_hat - tm(aux_target)).square().sum(axis=-1) * w).sum()
            head_losses["aux_privileged"] = aux
            total = total + aux

        report = WmLossReport(
            pred_loss=float(pred.value),
            dyn_loss=float(dyn.value),
            rep_loss=float(rep.value),
            transdec_loss=float(transdec.value) if transdec is not None else 0.0,
            total=float(total.value),
            heads={k: float(v.value) for k, v in head_losses.items()},
        )
        for name, val in report.heads.items():
            if not np.isfinite(val):
                raise TrainingError(f"world-model {name} loss is not finite")
        if not np.isfinite(report.total):
            raise TrainingError("world-model total loss is not finite")
        return total, report, roll

    def train_step(self, obs, prev_action, reward, cont, is_first, mask,
                   decode_target, rng: Rng, transdec_target=None, aux_target=None):
        """One optimizer step; returns (report, detached posterior latents)."""
        tape = ad.Tape()
        total, report, roll = self.loss(
            tape, obs, prev_action, reward, cont, is_first, mask, decode_target,
            rng, transdec_target=transdec_target, aux_target=aux_target)
        tape.backward(total)
        adam_step(self.params, lr=self.cfg.lr, grad_clip=self.cfg.grad_clip)
        return report, roll["latents"]


def strip_privileged(batch: SequenceBatch) -> SequenceBatch:
    """Same transitions, observations reduced to the target channel."""
    B, L, _ = batch.privileged_obs.shape
    return SequenceBatch(
        target_obs=batch.target_obs,
        privileged_obs=np.zeros((B, L, 0), dtype=batch.privileged_obs.dtype),
        prev_action=batch.prev_action,
        reward=batch.reward,
        cont=batch.cont,
        is_first=batch.is_first,
        mask=batch.mask,
    )
