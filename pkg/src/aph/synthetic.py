"""Planted-structure review data with known item aspect quality.

Each item has a latent quality per aspect, each user a preference
distribution over aspects and a leniency offset. A rating is the
preference-weighted quality of the item's aspects plus noise. Reviews mention
aspects the user cares about, and the stated polarity is the aspect quality
shifted by the user's leniency, so polarities from different users conflict.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ReviewRecord
from .extraction import NEG, NEU, POS, Quadruple


@dataclass
class PlantedTruth:
    quality: np.ndarray      # items x aspects
    item_aspects: list       # aspect indices per item
    preference: np.ndarray   # users x aspects, rows sum to 1
    leniency: np.ndarray     # users


# planted regime used by the ablation check: rank-4 binary aspect quality, a
# shared quality component and long-tail item popularity, so rare items are
# only well described by their review sentiment
ABLATION_SETTINGS = dict(ratings_per_user=20, binary_quality=True, n_factors=4, concentration=0.3,
                         leniency_scale=0.3, polarity_noise=0.3, global_weight=0.4, popularity_sigma=1.5)


def planted_dataset(n_users=500, n_items=200, n_aspects=20, ratings_per_user=12, aspects_per_item=6,
                    mentions_per_review=3, rating_scale=1.5, noise=0.3, polarity_noise=0.4,
                    leniency_scale=0.6, concentration=0.3, binary_quality=False, n_factors=None,
                    global_weight=0.0, popularity_sigma=0.0, cross_factor=0, seed=0):
    """Returns ``(records, quadruples, truth)``.

    With ``n_factors`` set, aspect ``a`` belongs to latent factor
    ``a % n_factors`` and both quality and preference are drawn per factor, so
    the interaction has rank ``n_factors``. ``global_weight`` mixes in the
    item's mean aspect quality, which matters to every user alike.
    ``popularity_sigma`` draws log-normal item popularity, so some items get
    few ratings. ``cross_factor`` makes a user who mentions factor ``f`` rate
    by factor ``f + cross_factor``, so the user-item interaction is not
    symmetric in the mention space.
    """
    rng = np.random.default_rng(seed)
    nf = n_factors or n_aspects
    factor = np.arange(n_aspects) % nf
    quality = rng.normal(size=(n_items, nf))[:, factor]
    if binary_quality:
        quality = np.sign(quality)
    item_aspects = [np.sort(rng.choice(n_aspects, size=aspects_per_item, replace=False)) for _ in range(n_items)]
    preference = rng.dirichlet(np.full(nf, concentration), size=n_users)[:, factor]
    preference /= preference.sum(axis=1, keepdims=True)
    # rating weights: the mention preference moved cross_factor factors along
    rate_pref = preference[:, (np.arange(n_aspects) - cross_factor) % n_aspects] if cross_factor else preference
    leniency = rng.normal(scale=leniency_scale, size=n_users)
    popularity = np.exp(popularity_sigma * rng.normal(size=n_items))
    popularity /= popularity.sum()

    records, quads = [], []
    for u in range(n_users):
        for i in rng.choice(n_items, size=min(ratings_per_user, n_items), replace=False, p=popularity):
            asp = item_aspects[i]
            pref = preference[u, asp] + 1e-3
            pref = pref / pref.sum()
            rp = rate_pref[u, asp] + 1e-3
            rp = rp / rp.sum()
            signal = ((1.0 - global_weight) * float(rp @ quality[i, asp])
                      + global_weight * float(quality[i, asp].mean()))
            rating = float(np.clip(3.0 + rating_scale * signal + 0.5 * leniency[u] + rng.normal(scale=noise),
                                   1.0, 5.0))
            rid = f"r{len(records)}"
            records.append(ReviewRecord(f"u{u}", f"i{i}", round(rating, 3), "", rid))
            k = min(mentions_per_review, asp.size)
            for a in rng.choice(asp, size=k, replace=False, p=pref):
                v = quality[i, a] + leniency[u] + rng.normal(scale=polarity_noise)
                pol = POS if v > 0.4 else NEG if v < -0.4 else NEU
                quads.append(Quadruple(f"u{u}", f"i{i}", f"a{a}", pol))
    return records, quads, PlantedTruth(quality, item_aspects, preference, leniency)


# model and training config for the ablation check (HyperParams / TrainConfig kwargs);
# k = d' gives every FM feature a full-length latent vector
ABLATION_MODEL = dict(k=32)
ABLATION_TRAIN = dict(gamma=0.01, lam=1e-4, epochs=10, patience=10)
