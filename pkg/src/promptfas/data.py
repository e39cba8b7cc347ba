"""Seeded synthetic multi-domain anti-spoofing data.

Each sample is a raw feature vector composed of a class prototype, a domain
prototype, an attack-subtype prototype and per-sample noise, plus a templated
caption describing what a vision-language captioner would say about the frame.
Domain prototypes are deliberately larger than the class signal so that
held-out-domain evaluation is a real generalization problem, which the
``domain_probe`` check certifies.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, ParseError
from .seeding import derive_rng, fnv1a64

log = logging.getLogger(__name__)

LABEL_SPOOF = 0
LABEL_LIVE = 1
ATTACK_TYPES = ("print", "replay", "mask")

CONTEXT_LEN = 77
VOCAB_SIZE = 1024
PAD_ID, SOS_ID, EOS_ID = 0, 1, 2

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def default_caption_templates() -> dict:
    return {
        "live": [
            "a genuine living person with natural skin texture and realistic depth",
            "a real human face showing fine pores lively eyes and natural motion",
            "an authentic person with organic skin tone and true facial geometry",
        ],
        "print": [
            "a person holding up a printed paper photo of a face a flat fake artifact",
            "a hand holding a flat paper picture a counterfeit printed portrait sheet",
            "a printed photograph with visible paper edges a fake flat reproduction",
        ],
        "replay": [
            "a face displayed on a phone screen a fake digital replay artifact",
            "a tablet screen replaying a video of a face a counterfeit display",
            "a monitor showing a face with moire glare a fake screen reproduction",
        ],
        "mask": [
            "a person wearing a rigid face mask a fake molded artifact",
            "someone covering the face with a silicone mask a counterfeit surface",
            "a mannequin like mask with unnaturally smooth fake cheeks",
        ],
        # Captions that describe the frame without committing to live or
        # attack content; a configurable fraction of samples gets one of
        # these, so the caption branch alone cannot solve the task.
        "generic": [
            "a face centered in the frame at medium distance",
            "a person in front of the camera head and shoulders visible",
            "a closely framed human face filling most of the image",
        ],
        "domain": {
            "A": "captured in a bright office with warm lighting",
            "B": "captured outdoors at dusk with heavy shadows",
            "C": "grainy low resolution webcam footage",
            "D": "studio lighting in front of a plain backdrop",
        },
    }


@dataclass(frozen=True)
class SyntheticSample:
    sample_id: str
    raw: np.ndarray
    label: int  # 1 = live, 0 = spoof
    domain: str
    attack: str  # "none" for live samples
    caption: str


@dataclass
class DatasetSpec:
    seed: int = 0
    domains: tuple[str, ...] = ("A", "B", "C", "D")
    samples_per_domain_per_class: int = 60
    raw_dim: int = 64
    class_signal_scale: float = 0.35
    domain_signal_scale: float = 2.5
    attack_signal_scale: float = 0.6
    noise_scale: float = 1.0
    # Domain offsets live in a shared low-dimensional subspace (style/sensor
    # shift is low-rank): large enough to dominate the features, small enough
    # that invariance learned on the source domains transfers to the held-out
    # one.
    domain_subspace_dim: int = 3
    # Fraction of samples whose caption is content-neutral; those can only be
    # classified from the visual side.
    generic_caption_rate: float = 0.25
    caption_templates: dict = field(default_factory=default_caption_templates)

    def validate(self) -> None:
        if self.samples_per_domain_per_class < 1:
            raise ConfigError("samples_per_domain_per_class must be >= 1")
        if len(self.domains) < 2:
            raise ConfigError("need at least two domains")
        if len(set(self.domains)) != len(self.domains):
            raise ConfigError("domain names must be unique")
        if self.raw_dim < 1:
            raise ConfigError("raw_dim must be >= 1")
        if not 1 <= self.domain_subspace_dim <= self.raw_dim:
            raise ConfigError("domain_subspace_dim must be in [1, raw_dim]")
        if not 0.0 <= self.generic_caption_rate <= 1.0:
            raise ConfigError("generic_caption_rate must be in [0, 1]")
        if not self.domain_signal_scale > self.class_signal_scale:
            raise ConfigError(
                "domain_signal_scale must exceed class_signal_scale "
                f"({self.domain_signal_scale} vs {self.class_signal_scale})"
            )


def generate_dataset(spec: DatasetSpec) -> list[SyntheticSample]:
    """Pure function of the spec: identical specs give bit-identical samples."""
    spec.validate()
    rng = derive_rng(spec.seed, "dataset")
    dim = spec.raw_dim

    proto_live = rng.normal(0.0, spec.class_signal_scale, dim)
    proto_spoof = rng.normal(0.0, spec.class_signal_scale, dim)
    k = spec.domain_subspace_dim
    basis, _ = np.linalg.qr(rng.normal(size=(dim, k)))
    proto_domain = {
        d: basis @ rng.normal(0.0, spec.domain_signal_scale, k) for d in spec.domains
    }
    proto_attack = {a: rng.normal(0.0, spec.attack_signal_scale, dim) for a in ATTACK_TYPES}

    templates = spec.caption_templates
    domain_phrases = templates["domain"]
    samples: list[SyntheticSample] = []
    for domain in spec.domains:
        phrase = domain_phrases.get(domain, f"captured with the {domain} sensor rig")
        for label in (LABEL_LIVE, LABEL_SPOOF):
            tag = "live" if label == LABEL_LIVE else "spoof"
            for i in range(spec.samples_per_domain_per_class):
                if label == LABEL_LIVE:
                    attack = "none"
                    base = proto_live
                    extra = 0.0
                    pool = templates["live"]
                else:
                    attack = ATTACK_TYPES[i % len(ATTACK_TYPES)]
                    base = proto_spoof
                    extra = proto_attack[attack]
                    pool = templates[attack]
                noise = rng.normal(0.0, spec.noise_scale, dim)
                raw = base + proto_domain[domain] + extra + noise
                use_pool = pool
                if rng.random() < spec.generic_caption_rate:
                    use_pool = templates["generic"]
                caption = f"{use_pool[int(rng.integers(len(use_pool)))]}, {phrase}"
                samples.append(
                    SyntheticSample(
                        sample_id=f"{domain}_{tag}_{i:03d}",
                        raw=raw,
                        label=label,
                        domain=domain,
                        attack=attack,
                        caption=caption,
                    )
                )
    return samples


def tokenize_caption(text: str, context_len: int = CONTEXT_LEN, vocab: int = VOCAB_SIZE) -> np.ndarray:
    """Hash-tokenize a caption to a fixed-length id sequence.

    Lowercases, splits on whitespace/punctuation, maps each token to
    3 + (fnv1a64(token) mod (vocab-3)), and wraps with SOS/EOS before padding.
    The EOS always survives truncation.
    """
    tokens = _TOKEN_RE.findall(text.lower())
    ids = [SOS_ID]
    for tok in tokens[: context_len - 2]:
        ids.append(3 + fnv1a64(tok.encode("utf-8")) % (vocab - 3))
    ids.append(EOS_ID)
    ids.extend([PAD_ID] * (context_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


def tokenize_all(samples: list[SyntheticSample], context_len: int = CONTEXT_LEN,
                 vocab: int = VOCAB_SIZE) -> np.ndarray:
    return np.stack([tokenize_caption(s.caption, context_len, vocab) for s in samples])


def load_captions(path) -> dict[str, str]:
    """Read a JSON-lines caption file of {"id": ..., "caption": ...} records.

    Later duplicates win (with a warning); captions are preserved byte-exactly.
    """
    captions: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                sample_id = rec["id"]
                caption = rec["caption"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}: line {lineno}: bad caption record: {exc}") from exc
            if sample_id in captions:
                log.warning("duplicate caption id %r at line %d; keeping the later one",
                            sample_id, lineno)
            captions[str(sample_id)] = str(caption)
    return captions


def write_captions(path, captions: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id, caption in captions.items():
            fh.write(json.dumps({"id": sample_id, "caption": caption}, ensure_ascii=False))
            fh.write("\n")


def export_dataset(path, samples: list[SyntheticSample]) -> None:
    """JSON-lines export with raw features, labels, domains and captions."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            rec = {
                "id": s.sample_id,
                "caption": s.caption,
                "label": s.label,
                "domain": s.domain,
                "attack": s.attack,
                "raw": [float(v) for v in s.raw],
            }
            fh.write(json.dumps(rec, ensure_ascii=False))
            fh.write("\n")


def apply_caption_overrides(samples: list[SyntheticSample],
                            captions: dict[str, str]) -> list[SyntheticSample]:
    """Replace template captions by externally supplied ones, keyed by id.

    Samples without an override keep their template caption; a warning lists
    how many fell back.
    """
    missing = 0
    out = []
    for s in samples:
        cap = captions.get(s.sample_id)
        if cap is None:
            missing += 1
            out.append(s)
        else:
            out.append(dataclasses.replace(s, caption=cap))
    if captions and missing:
        log.warning("%d/%d samples had no caption override; using templates", missing, len(samples))
    return out


@dataclass
class ProbeResult:
    domain_accuracy: float
    class_accuracy: float

    @property
    def domain_dominates(self) -> bool:
        return self.domain_accuracy > self.class_accuracy


def domain_probe(samples: list[SyntheticSample], seed: int = 0) -> ProbeResult:
    """Held-out logistic probes on raw features: is the domain easier to read
    off than the class? Certifies that the generator produced real domain
    shift instead of a domain-free toy."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import train_test_split

    if not samples:
        raise ContractError("domain_probe needs a non-empty sample list")
    x = np.stack([s.raw for s in samples])
    y_class = np.array([s.label for s in samples])
    domains = sorted({s.domain for s in samples})
    y_domain = np.array([domains.index(s.domain) for s in samples])

    def probe_accuracy(y) -> float:
        x_tr, x_te, y_tr, y_te = train_test_split(
            x, y, test_size=0.3, random_state=seed, stratify=y
        )
        clf = LogisticRegression(max_iter=2000)
        clf.fit(x_tr, y_tr)
        return float(clf.score(x_te, y_te))

    return ProbeResult(probe_accuracy(y_domain), probe_accuracy(y_class))
