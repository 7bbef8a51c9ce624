"""Synthetic desk-scale corpus: invented species, each voiced as a distinct
band-limited mixture of tones, with unique recording metadata so the split
protocol and the full train/search/eval loop can run without real archives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import CANONICAL_RATE, CLIP_SECONDS, AudioClip
from .encoder import fnv1a_64
from .ingest import Recording

_ADJECTIVES = [
    "Azure", "Crimson", "Golden", "Ivory", "Jade", "Umber", "Violet",
    "Slate", "Copper", "Ember", "Frost", "Dusky", "Speckled", "Banded",
    "Crested", "Hooded", "Masked", "Ringed", "Spotted", "Striped",
    "Glossy", "Pale", "Rusty", "Sooty", "Tawny", "Veiled", "Wandering",
    "Whistling", "Zigzag", "Mottled", "Plumed", "Barred",
]
_NOUNS = [
    "Whistler", "Drummer", "Piper", "Chanter", "Warbler", "Croaker",
    "Clicker", "Hooter", "Buzzer", "Triller", "Rasper", "Chimer",
    "Knocker", "Screamer", "Mewler", "Purrer", "Yodeler", "Growler",
    "Squeaker", "Booming", "Rattler", "Peeper", "Murmurer", "Caller",
    "Barker", "Chirper", "Thrummer", "Wailer", "Snapper", "Fluter",
    "Ticker", "Droner",
]
_GENERA = [
    "Sonaves", "Echomys", "Vibrissa", "Cantor", "Resona", "Tonalis",
    "Acustica", "Harmonia", "Melodia", "Stridula", "Susurra", "Clangora",
]


@dataclass
class SyntheticSpecies:
    common_name: str
    scientific_name: str
    tone_hz: tuple[float, ...]


def make_species(n_species: int, seed: int = 0,
                 fmin: float = 300.0, fmax: float = 9000.0,
                 tones_per_species: int = 3) -> list[SyntheticSpecies]:
    """Distinct names and disjoint tone sets drawn from a log-spaced grid."""
    if n_species > len(_ADJECTIVES) * len(_NOUNS):
        raise ValueError("not enough name combinations")
    rng = np.random.default_rng(seed)
    grid = np.geomspace(fmin, fmax, n_species * tones_per_species)
    order = rng.permutation(len(grid))
    name_idx = rng.permutation(len(_ADJECTIVES) * len(_NOUNS))[:n_species]
    species = []
    for i in range(n_species):
        adj = _ADJECTIVES[name_idx[i] % len(_ADJECTIVES)]
        noun = _NOUNS[name_idx[i] // len(_ADJECTIVES)]
        genus = _GENERA[i % len(_GENERA)]
        tones = tuple(sorted(grid[order[i * tones_per_species:(i + 1)
                                        * tones_per_species]]))
        species.append(SyntheticSpecies(
            common_name=f"{adj} {noun}",
            scientific_name=f"{genus} {adj.lower()}{noun.lower()}is"[:48],
            tone_hz=tones))
    return species


def synth_clip(kind: SyntheticSpecies, clip_seed: int,
               sample_rate: int = CANONICAL_RATE,
               seconds: float = CLIP_SECONDS,
               noise_level: float = 0.01) -> AudioClip:
    """One vocalization: the species' tones with random phases and mild
    amplitude jitter over a low white-noise floor."""
    rng = np.random.default_rng(clip_seed)
    t = np.arange(int(round(sample_rate * seconds))) / sample_rate
    samples = np.zeros_like(t)
    for hz in kind.tone_hz:
        amp = 0.2 * rng.uniform(0.7, 1.3)
        phase = rng.uniform(0, 2 * np.pi)
        samples += amp * np.sin(2 * np.pi * hz * t + phase)
    samples += noise_level * rng.standard_normal(len(t))
    peak = np.max(np.abs(samples))
    if peak > 0.99:
        samples = samples * (0.99 / peak)
    return AudioClip(samples=samples, sample_rate=sample_rate)


def make_recordings(species: list[SyntheticSpecies],
                    clips_per_species: int) -> list[Recording]:
    """Metadata rows with per-recording unique date/time/location so split
    collision filtering never rejects a sampled candidate."""
    records = []
    for s_idx, kind in enumerate(species):
        for c_idx in range(clips_per_species):
            serial = s_idx * clips_per_species + c_idx
            records.append(Recording(
                id=f"syn-{s_idx:03d}-{c_idx:03d}",
                source="synthetic",
                species_common=kind.common_name,
                species_scientific=kind.scientific_name,
                recorded_date=f"2024-{1 + serial // 28 % 12:02d}-{1 + serial % 28:02d}",
                recorded_time=f"{serial % 24:02d}:{serial % 60:02d}",
                location=f"site-{serial:05d}",
                audio_path=f"clips/syn-{s_idx:03d}-{c_idx:03d}.wav",
                license="CC0",
            ))
    return records


def clip_seed_for(record_id: str, base_seed: int = 0) -> int:
    """Stable per-recording synthesis seed."""
    return (fnv1a_64(record_id.encode("utf-8")) ^ base_seed) & 0x7FFFFFFF
