"""Tiny synthetic corpus generator for smoke tests and demos.

Generates aligned utterances from a few slot-filling templates (weather /
music / timer requests) so the full train/query/annotate loop can run
without any real dataset on disk.
"""

from __future__ import annotations

import numpy as np

from .corpus import Annotation, Example, Utterance

_CITIES = ["boston", "denver", "oslo", "quito", "reno", "lima"]
_DAYS = ["monday", "friday", "sunday", "today", "tomorrow"]
_ARTISTS = ["coltrane", "bjork", "dylan", "nina", "fela"]
_GENRES = ["jazz", "folk", "soul", "rock"]
_MINUTES = ["five", "ten", "twenty", "ninety"]


def _weather(rng: np.random.Generator):
    city = _CITIES[int(rng.integers(len(_CITIES)))]
    day = _DAYS[int(rng.integers(len(_DAYS)))]
    tokens = ["what", "is", "the", "weather", "in", city, "on", day]
    slots = ["O", "O", "O", "O", "O", "B-city", "O", "B-day"]
    return tokens, slots, "get_weather"


def _music(rng: np.random.Generator):
    artist = _ARTISTS[int(rng.integers(len(_ARTISTS)))]
    genre = _GENRES[int(rng.integers(len(_GENRES)))]
    tokens = ["play", "some", genre, "by", artist]
    slots = ["O", "O", "B-genre", "O", "B-artist"]
    return tokens, slots, "play_music"


def _timer(rng: np.random.Generator):
    minutes = _MINUTES[int(rng.integers(len(_MINUTES)))]
    tokens = ["set", "a", "timer", "for", minutes, "minutes"]
    slots = ["O", "O", "O", "O", "B-duration", "O"]
    return tokens, slots, "set_timer"


_TEMPLATES = [_weather, _music, _timer]


def toy_corpus(n_train: int = 60, n_test: int = 24, seed: int = 0):
    """Returns (train_examples, test_examples) over 3 intents / 6 slot tags."""
    rng = np.random.default_rng(seed)

    def make(n, split, id_base=0):
        out = []
        for i in range(n):
            template = _TEMPLATES[i % len(_TEMPLATES)]  # every intent present
            tokens, slots, intent = template(rng)
            out.append(
                Example(
                    utterance=Utterance(id=id_base + i, tokens=tuple(tokens)),
                    annotation=Annotation(intent=intent, slots=tuple(slots)),
                    split=split,
                )
            )
        return out

    return make(n_train, "train"), make(n_test, "test")
