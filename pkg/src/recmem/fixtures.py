"""Reproducible conversation streams for demos, benchmarks and tests.

``FACT{...}`` and ``SUPERSEDES{...}`` markers inside messages are what the
stub LLM's refinement step extracts; real models simply see them as text.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Optional, Sequence

from .subconscious import InteractionUnit

_EPOCH = datetime(2024, 1, 1, 9, 0, tzinfo=timezone.utc)


def iso(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


CAKE_JEANS_CAKE = [
    InteractionUnit(
        "t1",
        "Can you suggest how to order a birthday cake for my sister Mia? "
        "FACT{The user has a sister named Mia}",
        "To order a birthday cake, pick a bakery early, choose the cake size and "
        "flavor, and confirm the pickup date for the birthday.",
        "2023-05-01T10:00:00Z",
    ),
    InteractionUnit(
        "t2",
        "How should I wash my dark jeans so the color does not fade?",
        "Turn dark jeans inside out, wash them in cold water with a mild "
        "detergent, and hang them to dry away from sunlight.",
        "2023-05-01T10:05:00Z",
    ),
    InteractionUnit(
        "t3",
        "Back to the birthday cake for my sister Mia: she is allergic to peanuts, "
        "and I want to order the cake at SweetLeaf. "
        "FACT{Mia is allergic to peanuts} "
        "FACT{The user plans to order a chocolate birthday cake at SweetLeaf with the message Happy Birthday Mia}",
        "Order a peanut-free birthday cake at SweetLeaf, tell the bakery about "
        "the peanut allergy, and ask for the message Happy Birthday Mia on the cake.",
        "2023-05-02T18:30:00Z",
    ),
]
"""Three turns: a cake request, an unrelated laundry question, then the cake again."""

CAKE_FOLLOW_UP = InteractionUnit(
    "t4",
    "One more thing about the birthday cake for Mia: can SweetLeaf deliver the cake?",
    "Yes, ask SweetLeaf to deliver the peanut-free birthday cake for Mia on the birthday morning.",
    "2023-05-03T09:00:00Z",
)

# The trace separates the cake turns from the jeans turn for any theta_sim
# in roughly [0.26, 0.74] under the 256-d hashed encoder.
GOLDEN_THETA_SIM = 0.5


_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


def _pseudo_word(rng: random.Random, syllables: int) -> str:
    return "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(syllables))


class _WordSource:
    """Unique pseudo-words, so topics never share vocabulary by accident."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def take(self, n: int) -> list[str]:
        out = []
        while len(out) < n:
            w = _pseudo_word(self.rng, self.rng.randint(2, 4))
            if w not in self.used:
                self.used.add(w)
                out.append(w)
        return out


@dataclass
class StreamSpec:
    """Layout of a synthetic stream.

    ``topic_sizes[i]`` turns discuss recurring topic ``i``; the remaining
    turns are one-off chatter with fresh vocabulary.
    """

    n_turns: int
    topic_sizes: Sequence[int]
    seed: int = 0
    vocab_size: int = 8
    words_per_message: int = 6
    noise_words: int = 1
    step_minutes: int = 7
    # probability that a topic turn states a fact (and, at half that rate,
    # retracts an earlier one)
    fact_rate: float = 0.0

    def __post_init__(self) -> None:
        if sum(self.topic_sizes) > self.n_turns:
            raise ValueError("topic turns exceed stream length")


def synthetic_stream(spec: StreamSpec, positions: Optional[Sequence[int]] = None) -> list[InteractionUnit]:
    """Generate a stream; ``positions`` pins the order of topic turns (else shuffled)."""
    rng = random.Random(spec.seed)
    words = _WordSource(rng)
    labels: list[Optional[int]] = []
    for topic, size in enumerate(spec.topic_sizes):
        labels.extend([topic] * size)
    labels.extend([None] * (spec.n_turns - len(labels)))
    if positions is None:
        rng.shuffle(labels)
    else:
        labels = list(positions)

    vocab = [words.take(spec.vocab_size) for _ in spec.topic_sizes]
    units = []
    t = _EPOCH
    for i, label in enumerate(labels):
        markers = []
        if label is None:
            user = words.take(spec.words_per_message)
            asst = words.take(spec.words_per_message)
        else:
            pool = vocab[label]
            user = rng.sample(pool, min(spec.words_per_message, len(pool))) + words.take(spec.noise_words)
            asst = rng.sample(pool, min(spec.words_per_message, len(pool))) + words.take(spec.noise_words)
            if spec.fact_rate and rng.random() < spec.fact_rate:
                markers.append(f"FACT{{{pool[0]} detail {rng.randint(0, 2)}}}")
                if rng.random() < 0.5:
                    markers.append(f"SUPERSEDES{{{pool[0]} detail {rng.randint(0, 2)}}}")
        units.append(InteractionUnit(
            turn_id=f"u{i:04d}",
            user_message=" ".join([" ".join(user).capitalize() + "?"] + markers),
            assistant_message=" ".join(asst).capitalize() + ".",
            timestamp=iso(t),
            session_id=f"s{i // 20:03d}",
        ))
        t += timedelta(minutes=spec.step_minutes)
    return units


def random_stream(seed: int, n_turns: int = 40, max_topics: int = 4, fact_rate: float = 0.0) -> list[InteractionUnit]:
    """A randomly laid out stream for property tests."""
    rng = random.Random(seed)
    n_topics = rng.randint(0, max_topics)
    budget = n_turns
    sizes = []
    for _ in range(n_topics):
        size = rng.randint(1, max(1, budget // 2))
        sizes.append(size)
        budget -= size
    return synthetic_stream(StreamSpec(n_turns, sizes, seed=seed, noise_words=rng.randint(0, 2), fact_rate=fact_rate))
