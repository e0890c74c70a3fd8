"""Labelled-set augmentation for under-represented grid locations.

Three strategies: range-sampling ("naive"), autoencoder reconstruction of
one existing sample per location trained on the unlabelled pool, and their
union ("hybrid"). Originals are never mutated; generated samples carry the
location label of the cell they were grown from.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (NO_SIGNAL, Dataset, LabelledSample, UnlabelledSample,
                   encode_location_label, find_underrepresented, GridPoint)
from .models import build_model, prepare_inputs
from .nn import Network, TrainConfig, train


@dataclass(frozen=True)
class AugmentationPolicy:
    threshold: int = 10              # a cell with fewer samples is under-represented
    samples_per_location: int = 1
    autoencoder_epochs: int = 20
    # normalized-value cutoff: decoded rssi/-200 below tau counts as "shows signal"
    signal_tau: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if not (0.0 < self.signal_tau < 1.0):
            raise ValueError("signal tau must be in (0, 1)")


def _has_signal(value: float) -> bool:
    return value > NO_SIGNAL


def _cell_label(cell: tuple[int, int]) -> tuple[GridPoint, str]:
    point = GridPoint(float(cell[0]), float(cell[1]))
    return point, encode_location_label(point)


def naive_augment(samples: tuple[LabelledSample, ...] | list[LabelledSample],
                  policy: AugmentationPolicy) -> list[LabelledSample]:
    """One uniform-range sample per under-represented location.

    A beacon contributes only if it has signal in every existing sample at
    the location; otherwise the generated value is no-signal.
    """
    rng = np.random.Generator(np.random.PCG64(policy.seed))
    generated = []
    for cell, group in find_underrepresented(list(samples), policy.threshold):
        point, label = _cell_label(cell)
        n_beacons = len(group[0].rssi)
        for k in range(policy.samples_per_location):
            rssi = []
            for b in range(n_beacons):
                values = [s.rssi[b] for s in group]
                if all(_has_signal(v) for v in values):
                    rssi.append(float(rng.uniform(min(values), max(values))))
                else:
                    rssi.append(NO_SIGNAL)
            generated.append(LabelledSample(rssi=tuple(rssi), location=point, label=label,
                                            timestamp=f"naive-{cell[0]}-{cell[1]}-{k}"))
    return generated


def train_autoencoder(unlabelled: tuple[UnlabelledSample, ...] | list[UnlabelledSample],
                      policy: AugmentationPolicy, seed: int | None = None,
                      n_beacons: int = 13) -> tuple[Network, list[float]]:
    """Fit the reconstruction autoencoder on normalized unlabelled vectors."""
    if not unlabelled:
        raise ValueError("empty unlabelled set")
    if seed is None:
        seed = policy.seed
    vectors = np.array([s.rssi for s in unlabelled], dtype=np.float64) / NO_SIGNAL
    network = build_model("autoencoder", seed=seed, n_beacons=n_beacons)
    config = TrainConfig(epochs=policy.autoencoder_epochs, batch_size=100,
                         loss="rmse", optimizer="adam", seed=seed)
    history = train(network, vectors, vectors, config)
    return network, history


def autoencoder_augment(samples: tuple[LabelledSample, ...] | list[LabelledSample],
                        autoencoder: Network, policy: AugmentationPolicy) -> tuple[list[LabelledSample], int]:
    """Reconstruct the first sample of each under-represented location.

    A candidate is discarded when it shows signal on a beacon never seen
    with signal at that location. Returns (kept samples, discarded count).
    """
    kept = []
    discarded = 0
    for cell, group in find_underrepresented(list(samples), policy.threshold):
        point, label = _cell_label(cell)
        source = group[0]
        normalized = np.array([source.rssi], dtype=np.float64) / NO_SIGNAL
        out = np.clip(autoencoder.forward(normalized)[0], 0.0, 1.0)
        seen = [any(_has_signal(s.rssi[b]) for s in group) for b in range(len(source.rssi))]
        if any(out[b] < policy.signal_tau and not seen[b] for b in range(len(out))):
            discarded += 1
            continue
        rssi = tuple(float(np.clip(v * NO_SIGNAL, NO_SIGNAL, 0.0)) for v in out)
        kept.append(LabelledSample(rssi=rssi, location=point, label=label,
                                   timestamp=f"autoenc-{cell[0]}-{cell[1]}"))
    return kept, discarded


@dataclass
class AugmentationResult:
    samples: list[LabelledSample]     # originals followed by generated
    sources: list[str]                # per-sample provenance
    counts: dict[str, int]


def augment(samples, strategy: str, policy: AugmentationPolicy,
            autoencoder: Network | None = None) -> AugmentationResult:
    """Apply a strategy {none, naive, autoencoder, hybrid} and account for it."""
    if strategy not in ("none", "naive", "autoencoder", "hybrid"):
        raise ValueError(f"unknown strategy {strategy!r}")
    samples = list(samples)
    counts = {"original": len(samples), "naive": 0, "kept": 0, "discarded": 0}
    out = list(samples)
    sources = ["original"] * len(samples)
    if strategy in ("naive", "hybrid"):
        new = naive_augment(samples, policy)
        counts["naive"] = len(new)
        out += new
        sources += ["naive"] * len(new)
    if strategy in ("autoencoder", "hybrid"):
        if autoencoder is None:
            raise ValueError("autoencoder strategy requires a trained autoencoder")
        new, discarded = autoencoder_augment(samples, autoencoder, policy)
        counts["kept"] = len(new)
        counts["discarded"] = discarded
        out += new
        sources += ["autoencoder"] * len(new)
    counts["total"] = len(out)
    return AugmentationResult(samples=out, sources=sources, counts=counts)
