"""Model backends: remote chat-completion endpoints and seeded synthetic
stand-ins.

Both families satisfy the same contract: complete(prompt, ctx) -> response
text. Callers cannot tell them apart except through configuration; the
synthetic family exists so experiments run deterministically at desk scale.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import httpx
import yaml

from .domain import Decision
from .errors import AuthError, ConfigError, ContractError, TransportError
from .metrics import LabelSeries, load_label_series

ANNOTATE = "annotate"
VERIFY = "verify"

DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_BACKOFF_BASE = 0.5
DEFAULT_TIMEOUT = 30.0

_RETRYABLE_STATUS = {408, 429}
_AUTH_STATUS = {401, 403}


@dataclass(frozen=True)
class CallContext:
    """Identifies the utterance and pipeline pass behind one model call.

    Remote backends only log it; synthetic backends key their random
    substreams on it so results are independent of call interleaving.
    """

    session_id: str
    turn_index: int
    phase: str
    initial_label: Optional[str] = None

    def __post_init__(self):
        if self.phase not in (ANNOTATE, VERIFY):
            raise ContractError(f"unknown call phase {self.phase!r}")
        if self.phase == VERIFY and self.initial_label is None:
            raise ContractError("verify calls must carry the initial label")


class Backend(Protocol):
    backend_id: str
    consumes_gold: bool

    def complete(self, prompt: str, ctx: CallContext) -> str: ...

    def describe(self) -> dict: ...


# --- synthetic family ------------------------------------------------------


@dataclass(frozen=True)
class SyntheticAnnotatorParams:
    """Row-stochastic confusion matrix over codebook categories.

    categories fixes row/column order; row = gold label, column = emitted
    label. Rows must sum to 1 within 1e-9 with no negative entries.
    """

    categories: tuple[str, ...]
    matrix: tuple[tuple[float, ...], ...]
    seed: int

    def __post_init__(self):
        k = len(self.categories)
        if k < 2:
            raise ConfigError("synthetic annotator needs at least 2 categories")
        if len(set(self.categories)) != k:
            raise ConfigError("confusion categories must be unique")
        if len(self.matrix) != k or any(len(row) != k for row in self.matrix):
            raise ConfigError(f"confusion matrix must be {k}x{k}")
        for name, row in zip(self.categories, self.matrix):
            if any(p < 0 for p in row):
                raise ConfigError(f"negative probability in confusion row {name!r}")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ConfigError(
                    f"confusion row {name!r} sums to {sum(row)!r}, expected 1"
                )

    def row(self, gold_label: str) -> tuple[float, ...]:
        try:
            return self.matrix[self.categories.index(gold_label)]
        except ValueError:
            raise ConfigError(f"gold label {gold_label!r} is not a confusion row") from None


@dataclass(frozen=True)
class SyntheticVerifierParams:
    """correction_prob r: chance an incorrect label is revised to gold.
    corruption_prob c: chance a correct label is revised to a random wrong one."""

    correction_prob: float
    corruption_prob: float
    seed: int

    def __post_init__(self):
        if not (0.0 <= self.correction_prob <= 1.0):
            raise ConfigError(f"correction_prob must be in [0,1], got {self.correction_prob}")
        if not (0.0 <= self.corruption_prob <= 1.0):
            raise ConfigError(f"corruption_prob must be in [0,1], got {self.corruption_prob}")


def identity_confusion(categories: Sequence[str], seed: int) -> SyntheticAnnotatorParams:
    k = len(categories)
    rows = tuple(tuple(1.0 if j == i else 0.0 for j in range(k)) for i in range(k))
    return SyntheticAnnotatorParams(tuple(categories), rows, seed)


def uniform_error_confusion(
    categories: Sequence[str], accuracy: float, seed: int
) -> SyntheticAnnotatorParams:
    """Diagonal = accuracy, remaining mass split evenly off-diagonal."""
    if not (0.0 <= accuracy <= 1.0):
        raise ConfigError(f"accuracy must be in [0,1], got {accuracy}")
    k = len(categories)
    if k < 2:
        raise ConfigError("uniform_error needs at least 2 categories")
    off = (1.0 - accuracy) / (k - 1)
    rows = tuple(
        tuple(accuracy if j == i else off for j in range(k)) for i in range(k)
    )
    return SyntheticAnnotatorParams(tuple(categories), rows, seed)


def _sample(rng: random.Random, labels: Sequence[str], weights: Sequence[float]) -> str:
    # One uniform draw per sample keeps substream usage predictable.
    u = rng.random()
    acc = 0.0
    for label, w in zip(labels, weights):
        acc += w
        if u < acc:
            return label
    return labels[-1]


def synthetic_annotate(
    gold_label: str, params: SyntheticAnnotatorParams, rng: random.Random
) -> str:
    """Draw an emitted label from the confusion row of gold_label."""
    return _sample(rng, params.categories, params.row(gold_label))


def synthetic_verify(
    initial: str,
    gold: str,
    params: SyntheticVerifierParams,
    rng: random.Random,
    categories: Sequence[str],
) -> tuple[Decision, str]:
    """RETAIN or REVISE per the correction/corruption model.

    initial != gold: REVISE to gold with prob r, else RETAIN.
    initial == gold: REVISE to a uniformly random wrong label with prob c,
    else RETAIN. The revised label always differs from the initial one.
    """
    if initial != gold:
        if rng.random() < params.correction_prob:
            return Decision.REVISE, gold
        return Decision.RETAIN, initial
    if rng.random() < params.corruption_prob:
        wrong = [name for name in categories if name != initial]
        if not wrong:
            raise ContractError("cannot corrupt with a single-category codebook")
        return Decision.REVISE, rng.choice(wrong)
    return Decision.RETAIN, initial


class SyntheticBackend:
    """Seeded stand-in for a live model.

    Responses are rendered in the same machine-parseable layout real
    endpoints are instructed to use, so the downstream pipeline is
    identical. Each call draws from a fresh substream keyed on
    (seed, session_id, turn_index, phase): thread-safe by construction,
    and deterministic regardless of execution order.
    """

    consumes_gold = True

    def __init__(
        self,
        backend_id: str,
        gold: LabelSeries,
        annotator: Optional[SyntheticAnnotatorParams] = None,
        verifier: Optional[SyntheticVerifierParams] = None,
        categories: Optional[Sequence[str]] = None,
    ):
        if annotator is None and verifier is None:
            raise ConfigError(f"backend {backend_id!r} has neither annotator nor verifier params")
        if categories is None:
            if annotator is None:
                raise ConfigError(
                    f"backend {backend_id!r}: verifier-only config needs explicit categories"
                )
            categories = annotator.categories
        self.backend_id = backend_id
        self.gold = gold
        self.annotator = annotator
        self.verifier = verifier
        self.categories = tuple(categories)

    def _rng(self, seed: int, ctx: CallContext) -> random.Random:
        key = f"{seed}|{ctx.session_id}|{ctx.turn_index}|{ctx.phase}".encode("utf-8")
        return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:16], "big"))

    def _gold_for(self, ctx: CallContext) -> str:
        ref = (ctx.session_id, ctx.turn_index)
        if ref not in self.gold:
            raise ConfigError(
                f"backend {self.backend_id!r} has no gold label for {ref!r}"
            )
        return self.gold.get(ref)

    def complete(self, prompt: str, ctx: CallContext) -> str:
        if ctx.phase == ANNOTATE:
            if self.annotator is None:
                raise ContractError(f"backend {self.backend_id!r} cannot annotate")
            label = synthetic_annotate(
                self._gold_for(ctx), self.annotator, self._rng(self.annotator.seed, ctx)
            )
            return (
                f"LABEL: {label}\n"
                f"JUSTIFICATION: Synthetic draw for {ctx.session_id}:{ctx.turn_index}."
            )
        if self.verifier is None:
            raise ContractError(f"backend {self.backend_id!r} cannot verify")
        decision, final = synthetic_verify(
            ctx.initial_label,
            self._gold_for(ctx),
            self.verifier,
            self._rng(self.verifier.seed, ctx),
            self.categories,
        )
        if decision is Decision.RETAIN:
            justification = "Initial label is consistent with the rubric."
        else:
            justification = "Initial label conflicts with the rubric; revised."
        return f"DECISION: {decision.value}\nLABEL: {final}\nJUSTIFICATION: {justification}"

    def describe(self) -> dict:
        out: dict = {"id": self.backend_id, "kind": "synthetic"}
        if self.annotator is not None:
            out["annotator"] = {
                "seed": self.annotator.seed,
                "categories": list(self.annotator.categories),
                "matrix": [list(row) for row in self.annotator.matrix],
            }
        if self.verifier is not None:
            out["verifier"] = {
                "seed": self.verifier.seed,
                "correction_prob": self.verifier.correction_prob,
                "corruption_prob": self.verifier.corruption_prob,
            }
        return out


# --- remote family ---------------------------------------------------------


class RemoteBackend:
    """Generic chat-completion client: message list in, text out.

    Credentials come from the environment variable named in the config and
    are never serialized. Transient failures (timeouts, 408/429, 5xx,
    connection errors) are retried with exponential backoff; auth failures
    are not.
    """

    consumes_gold = False

    def __init__(
        self,
        backend_id: str,
        base_url: str,
        model: str,
        api_key_env: str,
        temperature: float = 0.0,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        backoff_base: float = DEFAULT_BACKOFF_BASE,
        timeout: float = DEFAULT_TIMEOUT,
        requests_per_second: Optional[float] = None,
        transport: Optional[httpx.BaseTransport] = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ConfigError(f"max_attempts must be >= 1, got {max_attempts}")
        if requests_per_second is not None and requests_per_second <= 0:
            raise ConfigError("requests_per_second must be positive")
        api_key = os.environ.get(api_key_env)
        if not api_key:
            raise ConfigError(
                f"backend {backend_id!r}: environment variable {api_key_env} is not set"
            )
        self.backend_id = backend_id
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.requests_per_second = requests_per_second
        self._sleeper = sleeper
        self._pace_lock = threading.Lock()
        self._next_allowed = 0.0
        self._client = httpx.Client(
            timeout=timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {api_key}"},
        )

    def _pace(self) -> None:
        if self.requests_per_second is None:
            return
        interval = 1.0 / self.requests_per_second
        with self._pace_lock:
            now = time.monotonic()
            wait = self._next_allowed - now
            self._next_allowed = max(now, self._next_allowed) + interval
        if wait > 0:
            self._sleeper(wait)

    def _post_once(self, payload: dict) -> str:
        response = self._client.post(f"{self.base_url}/chat/completions", json=payload)
        if response.status_code in _AUTH_STATUS:
            raise AuthError(
                f"backend {self.backend_id!r}: authentication rejected "
                f"(HTTP {response.status_code}); check {self.api_key_env}"
            )
        if response.status_code in _RETRYABLE_STATUS or response.status_code >= 500:
            raise _Transient(f"HTTP {response.status_code}")
        if response.status_code >= 400:
            raise TransportError(
                f"backend {self.backend_id!r}: HTTP {response.status_code}: "
                f"{response.text[:200]}"
            )
        try:
            body = response.json()
            content = body["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(
                f"backend {self.backend_id!r}: malformed completion response ({exc})"
            ) from exc
        if not isinstance(content, str):
            raise TransportError(f"backend {self.backend_id!r}: non-text completion")
        return content

    def complete(self, prompt: str, ctx: CallContext) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        last = "no attempt made"
        for attempt in range(1, self.max_attempts + 1):
            self._pace()
            try:
                return self._post_once(payload)
            except _Transient as exc:
                last = str(exc)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            if attempt < self.max_attempts:
                self._sleeper(self.backoff_base * (2 ** (attempt - 1)))
        raise TransportError(
            f"backend {self.backend_id!r}: gave up after {self.max_attempts} attempts ({last})"
        )

    def describe(self) -> dict:
        return {
            "id": self.backend_id,
            "kind": "remote",
            "base_url": self.base_url,
            "model": self.model,
            "api_key_env": self.api_key_env,
            "temperature": self.temperature,
            "max_attempts": self.max_attempts,
            "requests_per_second": self.requests_per_second,
        }

    def close(self) -> None:
        self._client.close()


class _Transient(Exception):
    """Internal marker for retryable HTTP statuses."""


# --- configuration ---------------------------------------------------------

_REMOTE_KEYS = {
    "id", "kind", "base_url", "model", "api_key_env", "temperature",
    "max_attempts", "backoff_base", "timeout", "requests_per_second",
}
_SYNTHETIC_KEYS = {"id", "kind", "seed", "gold_path", "confusion", "verifier"}


def validate_backend_config(config: dict) -> dict:
    if not isinstance(config, dict):
        raise ConfigError("backend config must be a mapping")
    backend_id = config.get("id")
    if not backend_id or not isinstance(backend_id, str):
        raise ConfigError("backend config needs a non-empty string id")
    kind = config.get("kind")
    if kind not in ("remote", "synthetic"):
        raise ConfigError(f"backend {backend_id!r}: kind must be remote or synthetic")
    allowed = _REMOTE_KEYS if kind == "remote" else _SYNTHETIC_KEYS
    stray = sorted(set(config) - allowed)
    if stray:
        raise ConfigError(
            f"backend {backend_id!r}: unexpected key(s) for kind {kind}: {', '.join(stray)}"
        )
    if kind == "remote":
        for key in ("base_url", "model", "api_key_env"):
            if not config.get(key):
                raise ConfigError(f"backend {backend_id!r}: remote config needs {key}")
    else:
        if "seed" not in config or not isinstance(config["seed"], int):
            raise ConfigError(f"backend {backend_id!r}: synthetic config needs an integer seed")
        if not config.get("confusion") and not config.get("verifier"):
            raise ConfigError(
                f"backend {backend_id!r}: synthetic config needs confusion and/or verifier params"
            )
    return config


def load_backend_configs(path: str | Path) -> dict[str, dict]:
    """Read a YAML file with a top-level `backends` list; returns id -> config."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"backend config file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path.name}: invalid YAML ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("backends"), list):
        raise ConfigError(f"{path.name}: expected a mapping with a `backends` list")
    configs: dict[str, dict] = {}
    for entry in doc["backends"]:
        entry = validate_backend_config(entry)
        if entry["id"] in configs:
            raise ConfigError(f"{path.name}: duplicate backend id {entry['id']!r}")
        configs[entry["id"]] = entry
    return configs


def _confusion_from_config(
    spec: dict, categories: Sequence[str], seed: int
) -> SyntheticAnnotatorParams:
    if not isinstance(spec, dict) or "scheme" not in spec:
        raise ConfigError("confusion spec must be a mapping with a `scheme`")
    scheme = spec["scheme"]
    if scheme == "identity":
        return identity_confusion(categories, seed)
    if scheme == "uniform_error":
        if "accuracy" not in spec:
            raise ConfigError("uniform_error confusion needs `accuracy`")
        return uniform_error_confusion(categories, float(spec["accuracy"]), seed)
    if scheme == "explicit":
        rows = spec.get("rows")
        if not isinstance(rows, dict):
            raise ConfigError("explicit confusion needs `rows`: {gold: {emitted: p}}")
        if set(rows) != set(categories):
            raise ConfigError("explicit confusion rows must cover every category exactly")
        matrix = tuple(
            tuple(float(rows[g].get(e, 0.0)) for e in categories) for g in categories
        )
        return SyntheticAnnotatorParams(tuple(categories), matrix, seed)
    raise ConfigError(f"unknown confusion scheme {scheme!r}")


def build_backend(
    config: dict,
    categories: Sequence[str],
    gold: Optional[LabelSeries] = None,
    transport: Optional[httpx.BaseTransport] = None,
) -> Backend:
    """Construct a backend from a validated config.

    categories is the codebook label order (confusion matrices bind to
    it). For synthetic backends gold may be passed directly, otherwise
    gold_path is loaded from disk.
    """
    config = validate_backend_config(config)
    if config["kind"] == "remote":
        return RemoteBackend(
            backend_id=config["id"],
            base_url=config["base_url"],
            model=config["model"],
            api_key_env=config["api_key_env"],
            temperature=float(config.get("temperature", 0.0)),
            max_attempts=int(config.get("max_attempts", DEFAULT_MAX_ATTEMPTS)),
            backoff_base=float(config.get("backoff_base", DEFAULT_BACKOFF_BASE)),
            timeout=float(config.get("timeout", DEFAULT_TIMEOUT)),
            requests_per_second=(
                float(config["requests_per_second"])
                if config.get("requests_per_second") is not None
                else None
            ),
            transport=transport,
        )
    seed = config["seed"]
    if gold is None:
        if not config.get("gold_path"):
            raise ConfigError(
                f"backend {config['id']!r}: synthetic backends need gold labels "
                "(gold_path or in-memory)"
            )
        gold = load_label_series(config["gold_path"])
    annotator = None
    if config.get("confusion"):
        annotator = _confusion_from_config(config["confusion"], categories, seed)
    verifier = None
    if config.get("verifier"):
        vspec = config["verifier"]
        if not isinstance(vspec, dict):
            raise ConfigError(f"backend {config['id']!r}: verifier params must be a mapping")
        verifier = SyntheticVerifierParams(
            correction_prob=float(vspec.get("correction_prob", 0.0)),
            corruption_prob=float(vspec.get("corruption_prob", 0.0)),
            seed=int(vspec.get("seed", seed)),
        )
    return SyntheticBackend(
        backend_id=config["id"],
        gold=gold,
        annotator=annotator,
        verifier=verifier,
        categories=categories,
    )
