"""Synthetic corpora and return panels with known ground truth.

The planted-keyword corpus ties each document's risk bin to a class-specific
keyword set hidden among neutral filler, so an attention model that works
must attend to exactly those keywords.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .corpus import RawDocument

KEYWORDS = (
    ("steady", "recurring", "diversified", "conservative", "predictable"),
    ("seasonal", "cyclical", "competitive", "moderate", "transitional"),
    ("litigation", "default", "impairment", "bankruptcy", "volatile"),
)

FILLER = tuple(
    """
    revenue segment operations customers products services margin quarter fiscal
    company management results sales costs expenses income cash flows capital
    investments assets liabilities period increase decrease compared primarily
    due higher lower net operating gross total annual year business market
    markets growth demand supply pricing contracts agreements facilities employees
    technology development research manufacturing distribution channels regions
    international domestic subsidiaries acquisitions financing credit facility
    notes debt equity shares dividends repurchase program tax rate effective
    accounting policies estimates judgments reported basis adjusted measures
    inventory receivables payables working liquidity resources commitments
    obligations leases property plant equipment depreciation amortization
    goodwill intangible valuation fair value instruments hedging currency
    exchange interest expense benefit pension plans compensation stock awards
    """.split()
)

GLUE = ("the", "of", "and", "in", "to", "for", "our", "with", "by", "on")


def _sentence(rng, n_words):
    words = []
    for _ in range(n_words):
        pool = GLUE if rng.random() < 0.25 else FILLER
        words.append(pool[rng.integers(len(pool))])
    return words


def planted_keyword_corpus(
    years=range(2013, 2019),
    per_year=(15, 20, 15),
    sentences=(6, 8),
    words=(10, 16),
    keywords_per_doc=3,
    seed=20240601,
) -> tuple[list[RawDocument], dict[str, int]]:
    """Documents and their bins; the default size is 300 documents over six years.

    Each document carries ``keywords_per_doc`` keywords from its bin's set,
    at most one per sentence, at random positions.
    """
    rng = np.random.default_rng(seed)
    docs, labels = [], {}
    for year in years:
        classes = np.repeat(np.arange(3), per_year)
        rng.shuffle(classes)
        for k, c in enumerate(classes):
            n_sent = int(rng.integers(sentences[0], sentences[1] + 1))
            sents = [_sentence(rng, int(rng.integers(words[0], words[1] + 1))) for _ in range(n_sent)]
            hosts = rng.choice(n_sent, size=min(keywords_per_doc, n_sent), replace=False)
            for s in hosts:
                kw = KEYWORDS[c][rng.integers(len(KEYWORDS[c]))]
                pos = int(rng.integers(len(sents[s]) + 1))
                sents[s].insert(pos, kw)
            text = " ".join(" ".join(ws).capitalize() + "." for ws in sents)
            doc_id = f"C{year}{k:03d}"
            docs.append(RawDocument(doc_id, int(year), text))
            labels[doc_id] = int(c)
    return docs, labels


def labels_frame(labels: dict[str, int], docs, measure: str = "std") -> pd.DataFrame:
    """Labels in the label-file layout; ``value`` is the bin itself."""
    year = {d.doc_id: d.year for d in docs}
    rows = [
        {"company_id": k, "year": year[k], "measure": measure, "value": float(v), "bin": int(v)}
        for k, v in labels.items()
    ]
    return pd.DataFrame(rows, columns=["company_id", "year", "measure", "value", "bin"])


def synthetic_returns(
    companies=("AAA", "BBB", "CCC", "DDD", "EEE"),
    years=(2018,),
    n_days=252,
    seed=7,
    noise_scale=None,
) -> pd.DataFrame:
    """Daily returns generated from planted factor loadings plus idiosyncratic noise."""
    rng = np.random.default_rng(seed)
    rows = []
    for year in years:
        dates = pd.bdate_range(f"{year}-01-02", periods=n_days)
        mkt = rng.normal(0.0004, 0.01, n_days)
        smb = rng.normal(0.0, 0.005, n_days)
        hml = rng.normal(0.0, 0.005, n_days)
        rf = np.full(n_days, 0.0001)
        for i, cid in enumerate(companies):
            scale = noise_scale[i] if noise_scale is not None else 0.005 * (i + 1)
            eps = rng.standard_t(5, n_days) * scale
            ret = rf + 0.0002 + 1.1 * mkt + 0.4 * smb - 0.3 * hml + eps
            for t in range(n_days):
                rows.append(
                    {
                        "date": dates[t].date().isoformat(),
                        "company_id": cid,
                        "ret": ret[t],
                        "rf": rf[t],
                        "mkt_rf": mkt[t],
                        "smb": smb[t],
                        "hml": hml[t],
                    }
                )
    return pd.DataFrame(rows)


def toy_corpus(seed=20240602):
    """60 documents over 2013-2018: the smallest corpus with one rolling split."""
    return planted_keyword_corpus(per_year=(3, 4, 3), seed=seed)


def toy_returns(docs, labels, n_days=80, seed=11) -> pd.DataFrame:
    """Return panels whose idiosyncratic volatility rises with each document's planted class.

    Residual volatility then ranks companies the same way the keywords do, so
    labels derived from these returns are learnable from the text.
    """
    rng = np.random.default_rng(seed)
    frames = []
    by_year: dict[int, list[str]] = {}
    for d in docs:
        by_year.setdefault(d.year, []).append(d.doc_id)
    for i, (year, ids) in enumerate(sorted(by_year.items())):
        scale = [0.004 * (1 + 2 * labels[c]) * rng.uniform(0.9, 1.1) for c in ids]
        frames.append(synthetic_returns(ids, (year,), n_days, seed + i, noise_scale=scale))
    return pd.concat(frames, ignore_index=True)


def write_bundled_data(out_dir):
    """Regenerate every file shipped under ``riskrank/data``."""
    from pathlib import Path

    from .corpus import write_jsonl

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, (docs, labels) in {"planted": planted_keyword_corpus(), "toy": toy_corpus()}.items():
        write_jsonl(out / f"{name}_corpus.jsonl", docs)
        frame = labels_frame(labels, docs)
        frame.to_csv(out / f"{name}_labels.csv", index=False, lineterminator="\n")
    toy_docs, toy_labels = toy_corpus()
    toy_returns(toy_docs, toy_labels).to_csv(out / "toy_returns.csv", index=False, lineterminator="\n", float_format="%.10g")
