"""Chance-corrected agreement analytics.

Cohen's kappa here follows the classical convention: kappa = (p_o - p_e) /
(1 - p_e), with chance agreement p_e taken from the product of the two
raters' marginal distributions. Computation is integer-exact until the
final division, so hand-checkable fixtures come out exact.

Kappa is UNDEFINED when p_e = 1 (both raters constant on the same label).
All functions represent that case as None plus explicit flags in reports;
undefined categories are excluded from macro means with a disclosed count,
never silently zeroed.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .domain import UNPARSEABLE, Codebook
from .errors import ContractError, UserInputError

Ref = tuple[str, int]

# Internal labels for one-vs-rest binarization.
_POS = "\x00POS"
_NEG = "\x00NEG"


@dataclass(frozen=True)
class LabelSeries:
    """Ordered (utterance ref -> label) pairs over a common corpus."""

    pairs: tuple[tuple[Ref, str], ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        index: dict[Ref, str] = {}
        for ref, label in self.pairs:
            if ref in index:
                raise ContractError(f"duplicate ref {ref!r} in label series")
            index[ref] = label
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_items(cls, items: Iterable[tuple[Ref, str]]) -> "LabelSeries":
        return cls(tuple((ref, label) for ref, label in items))

    @property
    def refs(self) -> tuple[Ref, ...]:
        return tuple(ref for ref, _ in self.pairs)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for _, label in self.pairs)

    def get(self, ref: Ref) -> str:
        try:
            return self._index[ref]
        except KeyError:
            raise ContractError(f"ref {ref!r} not in label series") from None

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, ref: Ref) -> bool:
        return ref in self._index

    def validate_labels(self, label_space: frozenset[str]) -> None:
        bad = sorted({label for _, label in self.pairs if label not in label_space})
        if bad:
            raise ContractError(f"labels outside the codebook: {', '.join(bad)}")

    def restrict(self, refs: Iterable[Ref]) -> "LabelSeries":
        """Sub-series over the given refs, in this series' order."""
        keep = set(refs)
        return LabelSeries(tuple(p for p in self.pairs if p[0] in keep))


def align(a: LabelSeries, b: LabelSeries) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Pair up two series over identical ref sets, in a's order."""
    if set(a.refs) != set(b.refs):
        only_a = sorted(set(a.refs) - set(b.refs))[:3]
        only_b = sorted(set(b.refs) - set(a.refs))[:3]
        parts = []
        if only_a:
            parts.append(f"only in first: {only_a}")
        if only_b:
            parts.append(f"only in second: {only_b}")
        raise ContractError("label series cover different refs (" + "; ".join(parts) + ")")
    return a.labels, tuple(b.get(ref) for ref in a.refs)


def _as_label_pair(
    a: Union[LabelSeries, Sequence[str]], b: Union[LabelSeries, Sequence[str]]
) -> tuple[Sequence[str], Sequence[str]]:
    if isinstance(a, LabelSeries) and isinstance(b, LabelSeries):
        return align(a, b)
    if isinstance(a, LabelSeries) or isinstance(b, LabelSeries):
        raise ContractError("mixing a LabelSeries with a bare sequence")
    if len(a) != len(b):
        raise ContractError(f"series lengths differ: {len(a)} vs {len(b)}")
    return a, b


def cohens_kappa(
    a: Union[LabelSeries, Sequence[str]], b: Union[LabelSeries, Sequence[str]]
) -> Optional[float]:
    """Cohen's kappa; None when chance agreement is exactly 1 (UNDEFINED).

    Accepts two LabelSeries over the same refs, or two equal-length plain
    label sequences. Exact to one float division: with integer counts,
    kappa = (agree*n - pe_num) / (n*n - pe_num) where
    pe_num = sum over labels of count_a * count_b.
    """
    xs, ys = _as_label_pair(a, b)
    n = len(xs)
    if n == 0:
        raise ContractError("kappa over an empty series")
    agree = sum(1 for x, y in zip(xs, ys) if x == y)
    count_a = Counter(xs)
    count_b = Counter(ys)
    pe_num = sum(count_a[label] * count_b[label] for label in count_a)
    if pe_num == n * n:
        return None
    return (agree * n - pe_num) / (n * n - pe_num)


def _binarize(labels: Sequence[str], category: str) -> list[str]:
    return [_POS if label == category else _NEG for label in labels]


def per_category_kappa(
    a: Union[LabelSeries, Sequence[str]],
    b: Union[LabelSeries, Sequence[str]],
    category: str,
    codebook: Optional[Codebook] = None,
) -> Optional[float]:
    """Kappa of the one-vs-rest binarization (label == category vs. not).

    A category absent from both series gives constant identical marginals,
    hence None (UNDEFINED). When a codebook is supplied the category must
    belong to it.
    """
    if codebook is not None and category not in codebook:
        raise ContractError(f"category {category!r} not in codebook {codebook.version}")
    xs, ys = _as_label_pair(a, b)
    return cohens_kappa(_binarize(xs, category), _binarize(ys, category))


def delta_kappa(
    verified: Union[LabelSeries, Sequence[str]],
    baseline: Union[LabelSeries, Sequence[str]],
    gold: Union[LabelSeries, Sequence[str]],
    category: str,
    codebook: Optional[Codebook] = None,
) -> Optional[float]:
    """Per-category improvement: kappa(verified, gold) - kappa(baseline, gold),
    both one-vs-rest on the category. None when either side is UNDEFINED."""
    kv = per_category_kappa(verified, gold, category, codebook)
    kb = per_category_kappa(baseline, gold, category, codebook)
    if kv is None or kb is None:
        return None
    return kv - kb


def percent_agreement(
    a: Union[LabelSeries, Sequence[str]], b: Union[LabelSeries, Sequence[str]]
) -> float:
    xs, ys = _as_label_pair(a, b)
    if len(xs) == 0:
        raise ContractError("agreement over an empty series")
    return sum(1 for x, y in zip(xs, ys) if x == y) / len(xs)


def disagreement_rate(
    a: Union[LabelSeries, Sequence[str]], b: Union[LabelSeries, Sequence[str]]
) -> float:
    return 1.0 - percent_agreement(a, b)


def format_percent(fraction: float) -> str:
    """Two-decimal percentage rendering, e.g. 0.2663477... -> '26.63%'."""
    return f"{fraction * 100:.2f}%"


def improvement_summary(mean_verified: float, mean_baseline: float) -> tuple[float, Optional[float]]:
    """(absolute, relative) improvement of a verified mean over a baseline
    mean; relative is None when the baseline is 0."""
    absolute = mean_verified - mean_baseline
    relative = absolute / mean_baseline if mean_baseline != 0 else None
    return absolute, relative


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix; rows are gold labels, columns predictions."""

    labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ContractError("confusion matrix labels must be unique")
        k = len(self.labels)
        if len(self.counts) != k or any(len(row) != k for row in self.counts):
            raise ContractError("confusion matrix must be square over its labels")

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def row_sums(self) -> dict[str, int]:
        """Gold-label counts."""
        return {label: sum(row) for label, row in zip(self.labels, self.counts)}

    def get(self, gold_label: str, predicted_label: str) -> int:
        return self.counts[self.labels.index(gold_label)][self.labels.index(predicted_label)]

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": [list(r) for r in self.counts]}


def confusion_matrix(
    pred: Union[LabelSeries, Sequence[str]],
    gold: Union[LabelSeries, Sequence[str]],
    labels: Optional[Sequence[str]] = None,
) -> ConfusionMatrix:
    """Entry (g, p) counts items with gold label g and prediction p.

    labels fixes the axis order (typically codebook order plus
    UNPARSEABLE); by default the sorted union of observed labels is used.
    """
    ps, gs = _as_label_pair(pred, gold)
    observed = set(ps) | set(gs)
    if labels is None:
        axis = tuple(sorted(observed))
    else:
        axis = tuple(labels)
        stray = sorted(observed - set(axis))
        if stray:
            raise ContractError(f"observed labels missing from matrix axis: {stray}")
    pos = {label: i for i, label in enumerate(axis)}
    grid = [[0] * len(axis) for _ in axis]
    for p, g in zip(ps, gs):
        grid[pos[g]][pos[p]] += 1
    return ConfusionMatrix(axis, tuple(tuple(row) for row in grid))


@dataclass(frozen=True)
class CategoryAgreement:
    """Per-category slice of a report. kappa fields are None when
    UNDEFINED; delta is None unless both sides are defined."""

    category: str
    kappa: Optional[float]
    support: int
    baseline_kappa: Optional[float] = None
    delta: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "kappa": self.kappa,
            "kappa_undefined": self.kappa is None,
            "support": self.support,
            "baseline_kappa": self.baseline_kappa,
            "baseline_kappa_undefined": self.baseline_kappa is None,
            "delta_kappa": self.delta,
        }


@dataclass(frozen=True)
class BaselineComparison:
    """Aggregate comparison of the verified series against an unverified
    baseline, both scored against the same gold."""

    overall_kappa: Optional[float]
    macro_kappa: Optional[float]
    weighted_kappa: Optional[float]
    percent_agreement: float
    undefined_count: int
    macro_improvement: Optional[float]
    relative_improvement: Optional[float]

    def to_dict(self) -> dict:
        return {
            "overall_kappa": self.overall_kappa,
            "macro_kappa": self.macro_kappa,
            "weighted_kappa": self.weighted_kappa,
            "percent_agreement": self.percent_agreement,
            "undefined_count": self.undefined_count,
            "macro_improvement": self.macro_improvement,
            "relative_improvement": self.relative_improvement,
        }


@dataclass(frozen=True)
class AgreementReport:
    """Full agreement summary against gold.

    Three aggregate views of kappa are always emitted: overall
    (multi-class, all items at once), macro (unweighted mean of defined
    per-category values, with the excluded UNDEFINED count disclosed), and
    weighted (support-weighted mean). Published aggregate figures rarely
    say which aggregation they use, so all three are available for
    comparison.
    """

    n: int
    overall_kappa: Optional[float]
    percent_agreement: float
    categories: tuple[CategoryAgreement, ...]
    confusion: ConfusionMatrix
    macro_kappa: Optional[float]
    weighted_kappa: Optional[float]
    undefined_count: int
    unparseable_count: int
    baseline: Optional[BaselineComparison] = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "overall_kappa": self.overall_kappa,
            "overall_kappa_undefined": self.overall_kappa is None,
            "percent_agreement": self.percent_agreement,
            "percent_agreement_rendered": format_percent(self.percent_agreement),
            "disagreement_rate_rendered": format_percent(1.0 - self.percent_agreement),
            "macro_kappa": self.macro_kappa,
            "weighted_kappa": self.weighted_kappa,
            "undefined_count": self.undefined_count,
            "unparseable_count": self.unparseable_count,
            "categories": [c.to_dict() for c in self.categories],
            "confusion": self.confusion.to_dict(),
            "baseline": self.baseline.to_dict() if self.baseline else None,
        }


def _macro_and_weighted(
    kappas: Mapping[str, Optional[float]], supports: Mapping[str, int]
) -> tuple[Optional[float], Optional[float], int]:
    defined = {c: k for c, k in kappas.items() if k is not None}
    undefined_count = len(kappas) - len(defined)
    if not defined:
        return None, None, undefined_count
    macro = sum(defined.values()) / len(defined)
    weight_total = sum(supports[c] for c in defined)
    if weight_total == 0:
        weighted = None
    else:
        weighted = sum(k * supports[c] for c, k in defined.items()) / weight_total
    return macro, weighted, undefined_count


def _series_of(candidate) -> LabelSeries:
    # RunResult and friends expose final_series(); plain series pass through.
    if isinstance(candidate, LabelSeries):
        return candidate
    final = getattr(candidate, "final_series", None)
    if callable(final):
        return final()
    raise ContractError(f"cannot interpret {type(candidate).__name__} as a label series")


def summarize(
    run: Union[LabelSeries, object],
    gold: LabelSeries,
    codebook: Codebook,
    baseline: Optional[Union[LabelSeries, object]] = None,
) -> AgreementReport:
    """Build an AgreementReport for a run (or plain series) against gold.

    UNPARSEABLE predictions stay in every computation: they disagree with
    every gold category and binarize to the negative class, so they drag
    scores down rather than vanishing.
    """
    series = _series_of(run)
    verified_labels, gold_labels = align(series, gold)
    gold_counts = Counter(gold_labels)

    kappas: dict[str, Optional[float]] = {}
    supports: dict[str, int] = {}
    for name in codebook.names:
        kappas[name] = per_category_kappa(verified_labels, gold_labels, name)
        supports[name] = gold_counts.get(name, 0)
    macro, weighted, undefined_count = _macro_and_weighted(kappas, supports)

    baseline_cmp: Optional[BaselineComparison] = None
    baseline_kappas: dict[str, Optional[float]] = {}
    if baseline is not None:
        baseline_series = _series_of(baseline)
        if set(baseline_series.refs) != set(series.refs):
            raise ContractError("baseline series covers different refs than the run")
        base_labels = tuple(baseline_series.get(ref) for ref in series.refs)
        for name in codebook.names:
            baseline_kappas[name] = per_category_kappa(base_labels, gold_labels, name)
        b_macro, b_weighted, b_undefined = _macro_and_weighted(baseline_kappas, supports)
        if macro is not None and b_macro is not None:
            absolute, relative = improvement_summary(macro, b_macro)
        else:
            absolute, relative = None, None
        baseline_cmp = BaselineComparison(
            overall_kappa=cohens_kappa(base_labels, gold_labels),
            macro_kappa=b_macro,
            weighted_kappa=b_weighted,
            percent_agreement=percent_agreement(base_labels, gold_labels),
            undefined_count=b_undefined,
            macro_improvement=absolute,
            relative_improvement=relative,
        )

    categories = tuple(
        CategoryAgreement(
            category=name,
            kappa=kappas[name],
            support=supports[name],
            baseline_kappa=baseline_kappas.get(name),
            delta=(
                kappas[name] - baseline_kappas[name]
                if baseline is not None
                and kappas[name] is not None
                and baseline_kappas.get(name) is not None
                else None
            ),
        )
        for name in codebook.names
    )

    axis = tuple(codebook.names) + (UNPARSEABLE,)
    return AgreementReport(
        n=len(series),
        overall_kappa=cohens_kappa(verified_labels, gold_labels),
        percent_agreement=percent_agreement(verified_labels, gold_labels),
        categories=categories,
        confusion=confusion_matrix(verified_labels, gold_labels, labels=axis),
        macro_kappa=macro,
        weighted_kappa=weighted,
        undefined_count=undefined_count,
        unparseable_count=sum(1 for label in verified_labels if label == UNPARSEABLE),
        baseline=baseline_cmp,
    )


SERIES_FIELDS = ("session_id", "turn_index", "label")


def save_label_series(
    series: LabelSeries,
    path: Union[str, Path],
    provenance: Optional[Mapping[Ref, str]] = None,
) -> None:
    """Write a series as CSV; the optional provenance column records how
    each gold label was derived."""
    fields = list(SERIES_FIELDS) + (["provenance"] if provenance is not None else [])
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for (session_id, turn_index), label in series.pairs:
            row = [session_id, str(turn_index), label]
            if provenance is not None:
                row.append(provenance.get((session_id, turn_index), ""))
            writer.writerow(row)


def load_label_series(path: Union[str, Path]) -> LabelSeries:
    """Read a series CSV; extra columns (e.g. provenance) are ignored."""
    path = Path(path)
    if not path.is_file():
        raise UserInputError(f"label file not found: {path}")
    pairs: list[tuple[Ref, str]] = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fieldnames = reader.fieldnames or []
        if any(f not in fieldnames for f in SERIES_FIELDS):
            raise UserInputError(
                f"{path.name}: header must include {', '.join(SERIES_FIELDS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                turn_index = int(row["turn_index"])
            except (TypeError, ValueError):
                raise UserInputError(
                    f"{path.name}:{lineno}: turn_index {row['turn_index']!r} is not an integer"
                )
            label = row["label"]
            if label is None or label == "":
                raise UserInputError(f"{path.name}:{lineno}: empty label")
            pairs.append(((row["session_id"], turn_index), label))
    try:
        return LabelSeries.from_items(pairs)
    except ContractError as exc:
        raise UserInputError(f"{path.name}: {exc}") from exc
