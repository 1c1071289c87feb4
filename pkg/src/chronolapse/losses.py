"""Adversarial, conditional-set and reconstruction objectives.

Discriminator-side losses are written in the maximized form: real terms
``E[log D]`` and fake terms ``E[log(1 - D)]``. Scores are probabilities and
are clamped to ``[EPS, 1 - EPS]`` before any log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import torch

from .errors import DomainError, ShapeError

EPS = 1e-7


@dataclass
class LossReport:
    name: str
    value: torch.Tensor
    terms: dict[str, torch.Tensor] = field(default_factory=dict)

    def item(self) -> float:
        return float(self.value.detach())

    def breakdown(self) -> dict[str, float]:
        return {k: float(v.detach()) for k, v in self.terms.items()}

    def as_dict(self) -> dict[str, float]:
        return {self.name: self.item(), **{f"{self.name}/{k}": v for k, v in self.breakdown().items()}}


def _scores(scores) -> torch.Tensor:
    s = scores if torch.is_tensor(scores) else torch.as_tensor(scores, dtype=torch.float64)
    s = s.reshape(-1)
    if s.numel() == 0:
        raise DomainError("empty score list")
    bad = ~torch.isfinite(s) | (s < 0) | (s > 1)
    if bool(bad.any()):
        raise DomainError(f"scores must be probabilities, got {s[bad].tolist()[:4]}")
    return s.clamp(EPS, 1 - EPS)


def adv_real_term(scores) -> torch.Tensor:
    """Mean ``log D(real)``."""
    return torch.log(_scores(scores)).mean()


def adv_fake_term(scores, literal: bool = False) -> torch.Tensor:
    """Mean ``log(1 - D(fake))``.

    ``literal=True`` evaluates the alternative form ``1 - log D(fake)``,
    for comparison only.
    """
    s = _scores(scores)
    if literal:
        return (1 - torch.log(s)).mean()
    return torch.log1p(-s).mean()


def gen_adv_term(scores) -> torch.Tensor:
    """Non-saturating generator loss ``-E[log D(fake)]`` (minimized)."""
    return -torch.log(_scores(scores)).mean()


def loss_uncond(domain: str, real_scores, fake_scores, literal: bool = False) -> LossReport:
    """Per-image realism loss for one domain (``"A"`` labeled, ``"T"`` unlabeled)."""
    real = adv_real_term(real_scores)
    fake = adv_fake_term(fake_scores, literal)
    return LossReport(f"uncond_{domain}", real + fake, {"real": real, "fake": fake})


def loss_cond(real_set_score, negative_set_score, fake_set_score, literal: bool = False) -> LossReport:
    """Set-level conditional loss: real sets, mismatched pairs, generated sets.

    Each argument may be a scalar or a batch of set scores; batches are averaged.
    """
    real = adv_real_term(real_set_score)
    neg = adv_fake_term(negative_set_score, literal)
    fake = adv_fake_term(fake_set_score, literal)
    return LossReport("cond", real + neg + fake, {"real": real, "negative": neg, "fake": fake})


def loss_cond_pairs(real_scores, fake_scores, literal: bool = False) -> LossReport:
    """Per-pair conditional loss of the vanilla cGAN: no sets, no negatives."""
    real = adv_real_term(real_scores)
    fake = adv_fake_term(fake_scores, literal)
    return LossReport("cond_pair", real + fake, {"real": real, "fake": fake})


def loss_rec(translated, original) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    a = translated if torch.is_tensor(translated) else torch.as_tensor(translated, dtype=torch.float64)
    b = original if torch.is_tensor(original) else torch.as_tensor(original, dtype=torch.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def total_objective(reports: Iterable[LossReport] | Mapping[str, LossReport], lambda_rec: float = 0.5) -> LossReport:
    """``sum(adversarial) + lambda_rec * rec``; the report named ``rec`` is the weighted one."""
    if lambda_rec < 0 or math.isnan(lambda_rec):
        raise DomainError("lambda_rec must be nonnegative")
    if isinstance(reports, Mapping):
        reports = reports.values()
    terms: dict[str, torch.Tensor] = {}
    total = torch.zeros((), dtype=torch.float64)
    for r in reports:
        if r.name == "rec":
            if lambda_rec == 0:
                continue
            v = lambda_rec * r.value
        else:
            v = r.value
        terms[r.name] = v
        total = total + v
    return LossReport("total", total, terms)
