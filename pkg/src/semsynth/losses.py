"""Training objective: per-scale LSGAN terms, feature matching, perceptual loss.

Conventions fixed here so the unit values are unambiguous: LSGAN targets are
1 (real) and 0 (fake) with a 1/2 prefactor on every squared term, and the
layer weights 1/N_i divide the absolute-difference sum by the full element
count (batch included), making every term batch-size invariant.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass
class LossWeights:
    lambda_fm: float = 10.0
    lambda_perc: float = 10.0  # applied only when a feature net is supplied
    target_real: float = 1.0
    target_fake: float = 0.0

    def __post_init__(self):
        if self.lambda_fm < 0 or self.lambda_perc < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    """Per-scale components and their totals for one optimization step."""

    g_gan_per_scale: list[float] = field(default_factory=list)
    g_fm_per_scale: list[float] = field(default_factory=list)
    d_real_per_scale: list[float] = field(default_factory=list)
    d_fake_per_scale: list[float] = field(default_factory=list)
    g_gan: float = 0.0
    g_fm: float = 0.0
    g_perc: float = 0.0
    d_real: float = 0.0
    d_fake: float = 0.0
    g_total: float = 0.0
    d_total: float = 0.0

    def to_dict(self) -> dict:
        return {
            "g_gan": self.g_gan, "g_fm": self.g_fm, "g_perc": self.g_perc,
            "d_real": self.d_real, "d_fake": self.d_fake,
            "g_total": self.g_total, "d_total": self.d_total,
            "g_gan_per_scale": self.g_gan_per_scale,
            "g_fm_per_scale": self.g_fm_per_scale,
            "d_real_per_scale": self.d_real_per_scale,
            "d_fake_per_scale": self.d_fake_per_scale,
        }


def lsgan_d_terms(score_real: torch.Tensor, score_fake: torch.Tensor,
                  weights: LossWeights = LossWeights()):
    """Real and fake least-squares terms for one scale."""
    if score_real.shape != score_fake.shape:
        raise ValueError("real and fake score maps must share a shape")
    real_term = 0.5 * (score_real - weights.target_real).pow(2).mean()
    fake_term = 0.5 * (score_fake - weights.target_fake).pow(2).mean()
    return real_term, fake_term


def lsgan_d_loss(score_real, score_fake, weights: LossWeights = LossWeights()):
    """Discriminator loss; accepts single maps or per-scale lists."""
    if isinstance(score_real, (list, tuple)):
        terms = [lsgan_d_loss(r, f, weights) for r, f in zip(score_real, score_fake)]
        return sum(terms)
    real_term, fake_term = lsgan_d_terms(score_real, score_fake, weights)
    return real_term + fake_term


def lsgan_g_loss(score_fake, weights: LossWeights = LossWeights()):
    """Generator loss: push fake scores to the real target; sums over scales."""
    if isinstance(score_fake, (list, tuple)):
        return sum(lsgan_g_loss(f, weights) for f in score_fake)
    return 0.5 * (score_fake - weights.target_real).pow(2).mean()


def _layer_l1_mean(real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    if real.shape != fake.shape:
        raise ValueError(
            f"feature shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    return (real - fake).abs().sum() / real.numel()


def feature_matching_loss(real_feats, fake_feats) -> torch.Tensor:
    """Sum over layers of the per-element L1 distance between feature taps.

    Accepts one scale (list of tensors) or several (list of lists). Real
    features are detached: the discriminator only serves as a feature
    extractor and this loss never trains it.
    """
    if real_feats and isinstance(real_feats[0], (list, tuple)):
        if len(real_feats) != len(fake_feats):
            raise ValueError("scale count mismatch between real and fake features")
        return sum(feature_matching_loss(r, f) for r, f in zip(real_feats, fake_feats))
    if len(real_feats) != len(fake_feats):
        raise ValueError("layer count mismatch between real and fake features")
    total = None
    for real, fake in zip(real_feats, fake_feats):
        term = _layer_l1_mean(real.detach(), fake)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("feature lists must be nonempty")
    return total


def perceptual_loss(x: torch.Tensor, g_s: torch.Tensor, feature_net) -> torch.Tensor:
    """Layer-wise per-element L1 over a frozen feature extractor; 0 if absent."""
    if feature_net is None:
        return torch.zeros((), device=g_s.device, dtype=g_s.dtype)
    with torch.no_grad():
        feats_x = feature_net.features(x)
    feats_g = feature_net.features(g_s)
    total = None
    for fx, fg in zip(feats_x, feats_g):
        term = _layer_l1_mean(fx.detach(), fg)
        total = term if total is None else total + term
    return total


def total_d_loss(outputs_real, outputs_fake,
                 weights: LossWeights = LossWeights()):
    """Summed per-scale LSGAN discriminator loss with a component report."""
    report = LossReport()
    loss = None
    for out_r, out_f in zip(outputs_real, outputs_fake):
        real_term, fake_term = lsgan_d_terms(out_r.score_map, out_f.score_map, weights)
        report.d_real_per_scale.append(float(real_term.detach()))
        report.d_fake_per_scale.append(float(fake_term.detach()))
        term = real_term + fake_term
        loss = term if loss is None else loss + term
    if loss is None:
        raise ValueError("need at least one scale")
    report.d_real = sum(report.d_real_per_scale)
    report.d_fake = sum(report.d_fake_per_scale)
    report.d_total = float(loss.detach())
    return loss, report


def total_g_loss(outputs_fake, real_features, x=None, g_s=None, feature_net=None,
                 weights: LossWeights = LossWeights()):
    """Full generator objective: per-scale GAN + weighted FM (+ perceptual).

    ``real_features`` are the taps recorded from the real-image pass,
    per scale, already detached from any graph that could reach the
    generator.
    """
    report = LossReport()
    gan = None
    fm = None
    for out_f, feats_r in zip(outputs_fake, real_features):
        g_term = lsgan_g_loss(out_f.score_map, weights)
        report.g_gan_per_scale.append(float(g_term.detach()))
        gan = g_term if gan is None else gan + g_term
        if weights.lambda_fm > 0:
            fm_term = feature_matching_loss(feats_r, out_f.features)
            report.g_fm_per_scale.append(float(fm_term.detach()))
            fm = fm_term if fm is None else fm + fm_term
    if gan is None:
        raise ValueError("need at least one scale")
    loss = gan
    report.g_gan = sum(report.g_gan_per_scale)
    if fm is not None:
        loss = loss + weights.lambda_fm * fm
        report.g_fm = sum(report.g_fm_per_scale)
    if feature_net is not None and weights.lambda_perc > 0:
        perc = perceptual_loss(x, g_s, feature_net)
        report.g_perc = float(perc.detach())
        loss = loss + weights.lambda_perc * perc
    report.g_total = float(loss.detach())
    return loss, report
