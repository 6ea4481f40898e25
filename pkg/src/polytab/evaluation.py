"""Metric battery for synthetic tables: fidelity, utility, diversity, and distances.

Fidelity compares marginal column distributions and pairwise column
associations. Utility trains classifiers on synthetic rows and scores them on
held-out real rows. Diversity measures how close synthetic rows sit to the
training rows (nearest-record distance and the share of rows nearer to the
holdout set), which flags data copying.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as scipy_stats

from .data import CATEGORICAL, NUMERICAL, ColumnSchema, DataError, TableDataset

logger = logging.getLogger(__name__)


def _check_matching_schema(real: TableDataset, synth: TableDataset) -> None:
    real_cols = [(c.name, c.kind) for c in real.columns]
    synth_cols = [(c.name, c.kind) for c in synth.columns]
    if real_cols != synth_cols:
        raise DataError(f"schema mismatch: {real_cols} vs {synth_cols}")


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic between empirical distributions."""
    return float(scipy_stats.ks_2samp(a, b, method="asymp").statistic)


def total_variation_distance(real_values: list, synth_values: list) -> float:
    """Half the L1 distance between category frequency vectors."""
    union = list(dict.fromkeys(list(real_values) + list(synth_values)))
    p = np.array([real_values.count(c) for c in union], dtype=np.float64) / len(real_values)
    q = np.array([synth_values.count(c) for c in union], dtype=np.float64) / len(synth_values)
    return float(0.5 * np.abs(p - q).sum())


def column_fidelity(real: TableDataset, synth: TableDataset) -> dict:
    """Mean per-column similarity: 1 - KS for numerical, 1 - TVD for categorical."""
    _check_matching_schema(real, synth)
    per_column = {}
    for i, col in enumerate(real.columns):
        if col.kind == NUMERICAL:
            stat = ks_statistic(np.asarray(real.column_values(i), dtype=np.float64),
                                np.asarray(synth.column_values(i), dtype=np.float64))
        else:
            stat = total_variation_distance(real.column_values(i), synth.column_values(i))
        per_column[col.name] = 1.0 - stat
    score = float(np.mean(list(per_column.values()))) if per_column else 1.0
    return {"score": score, "per_column": per_column}


def _percentile_buckets(real_values: np.ndarray, synth_values: np.ndarray,
                        n_buckets: int = 10) -> tuple[list, list]:
    # bucket edges come from the real column so both sides share the grid
    edges = np.percentile(real_values, np.linspace(0, 100, n_buckets + 1)[1:-1])
    return (np.searchsorted(edges, real_values, side="right").tolist(),
            np.searchsorted(edges, synth_values, side="right").tolist())


def _joint_l1(real_a: list, real_b: list, synth_a: list, synth_b: list) -> float:
    """Sum of |p_real - p_synth| over joint category cells (ranges 0..2)."""
    cells = list(dict.fromkeys(list(zip(real_a, real_b)) + list(zip(synth_a, synth_b))))
    index = {cell: i for i, cell in enumerate(cells)}
    p = np.zeros(len(cells))
    q = np.zeros(len(cells))
    for cell in zip(real_a, real_b):
        p[index[cell]] += 1
    for cell in zip(synth_a, synth_b):
        q[index[cell]] += 1
    return float(np.abs(p / len(real_a) - q / len(synth_a)).sum())


def correlation_fidelity(real: TableDataset, synth: TableDataset,
                         n_buckets: int = 10) -> dict:
    """Pairwise association similarity: 1 - mean pair difference / 2.

    Numeric pairs compare Pearson correlations (difference up to 2).
    Categorical and mixed pairs compare joint frequency tables (L1 difference
    up to 2), with numeric columns bucketed into percentile bins computed on
    the real data. Pairs involving a constant column are skipped and logged.
    """
    _check_matching_schema(real, synth)
    if real.n_columns < 2:
        raise DataError("need at least 2 columns for correlation fidelity")
    per_pair = {}
    diffs = []
    for i in range(real.n_columns):
        for j in range(i + 1, real.n_columns):
            ci, cj = real.columns[i], real.columns[j]
            if ci.kind == NUMERICAL and cj.kind == NUMERICAL:
                r_i = np.asarray(real.column_values(i), dtype=np.float64)
                r_j = np.asarray(real.column_values(j), dtype=np.float64)
                s_i = np.asarray(synth.column_values(i), dtype=np.float64)
                s_j = np.asarray(synth.column_values(j), dtype=np.float64)
                if min(r_i.std(), r_j.std(), s_i.std(), s_j.std()) == 0:
                    logger.warning("constant column in pair (%s, %s); skipped", ci.name, cj.name)
                    continue
                diff = abs(float(np.corrcoef(r_i, r_j)[0, 1])
                           - float(np.corrcoef(s_i, s_j)[0, 1]))
            else:
                real_a, synth_a = _pair_labels(real, synth, i, n_buckets)
                real_b, synth_b = _pair_labels(real, synth, j, n_buckets)
                diff = _joint_l1(real_a, real_b, synth_a, synth_b)
            per_pair[f"{ci.name}|{cj.name}"] = diff
            diffs.append(diff)
    if not diffs:
        raise DataError("no usable column pairs (all skipped)")
    score = float(1.0 - 0.5 * np.mean(diffs))
    return {"score": score, "per_pair": per_pair}


def _pair_labels(real: TableDataset, synth: TableDataset, idx: int, n_buckets: int):
    col = real.columns[idx]
    if col.kind == CATEGORICAL:
        return real.column_values(idx), synth.column_values(idx)
    return _percentile_buckets(
        np.asarray(real.column_values(idx), dtype=np.float64),
        np.asarray(synth.column_values(idx), dtype=np.float64),
        n_buckets,
    )


# -- machine learning utility ---------------------------------------------


class _ConstantClassifier:
    def __init__(self, label):
        self.label = label

    def fit(self, X, y):
        return self

    def predict(self, X):
        return np.full(len(X), self.label, dtype=object)


def default_classifiers(seed: int = 0) -> dict:
    """The core classifier set; gradient-boosting entries can be added by callers."""
    from sklearn.ensemble import RandomForestClassifier
    from sklearn.linear_model import LogisticRegression
    from sklearn.naive_bayes import GaussianNB
    from sklearn.tree import DecisionTreeClassifier

    return {
        "logistic_regression": lambda: LogisticRegression(max_iter=2000, random_state=seed),
        "naive_bayes": lambda: GaussianNB(),
        "decision_tree": lambda: DecisionTreeClassifier(random_state=seed),
        "random_forest": lambda: RandomForestClassifier(n_estimators=100, random_state=seed),
    }


def gradient_boosting_classifiers(seed: int = 0) -> dict:
    from sklearn.ensemble import GradientBoostingClassifier, HistGradientBoostingClassifier

    return {
        "gradient_boosting": lambda: GradientBoostingClassifier(random_state=seed),
        "hist_gradient_boosting": lambda: HistGradientBoostingClassifier(random_state=seed),
    }


def _design_matrix(table: TableDataset, feature_columns: list[int]) -> np.ndarray:
    """One-hot categoricals (category order from the schema), numerics as-is."""
    blocks = []
    for c in feature_columns:
        col = table.columns[c]
        values = table.column_values(c)
        if col.kind == NUMERICAL:
            blocks.append(np.asarray(values, dtype=np.float64).reshape(-1, 1))
        else:
            lookup = {cat: k for k, cat in enumerate(col.categories)}
            onehot = np.zeros((len(values), len(col.categories)))
            for r, v in enumerate(values):
                onehot[r, lookup[v]] = 1.0
            blocks.append(onehot)
    return np.hstack(blocks) if blocks else np.zeros((table.n_rows, 0))


def tstr_utility(
    synth_train: TableDataset,
    real_test: TableDataset,
    classifiers: dict | None = None,
    include_gradient_boosting: bool = False,
    seed: int = 0,
) -> dict:
    """Train-on-synthetic, test-on-real: fit each classifier on the synthetic
    table and score accuracy plus micro- and macro-averaged F1 on real rows.

    Feature encoding uses the real test table's schema so category blocks
    align. A synthetic table whose target collapses to one class falls back
    to a constant predictor.
    """
    from sklearn.metrics import accuracy_score, f1_score

    t_synth = synth_train.target_index
    t_real = real_test.target_index
    if t_synth is None or t_real is None:
        raise DataError("both tables must declare a target column")
    feature_names = [c.name for i, c in enumerate(real_test.columns) if i != t_real]
    if [c.name for i, c in enumerate(synth_train.columns) if i != t_synth] != feature_names:
        raise DataError("feature columns must match between synthetic and real tables")

    # evaluate features under the real schema so one-hot blocks line up
    synth_aligned = _align_to_schema(synth_train, real_test)
    X_train = _design_matrix(synth_aligned, [i for i in range(real_test.n_columns) if i != t_real])
    X_test = _design_matrix(real_test, [i for i in range(real_test.n_columns) if i != t_real])
    y_train = np.asarray(synth_aligned.column_values(t_real), dtype=object)
    y_test = np.asarray(real_test.column_values(t_real), dtype=object)

    if classifiers is None:
        classifiers = default_classifiers(seed)
        if include_gradient_boosting:
            classifiers.update(gradient_boosting_classifiers(seed))

    per_model = {}
    for name, factory in classifiers.items():
        if len(set(y_train.tolist())) < 2:
            model = _ConstantClassifier(y_train[0])
        else:
            model = factory()
        model.fit(X_train, y_train)
        pred = model.predict(X_test)
        per_model[name] = {
            "accuracy": float(accuracy_score(y_test, pred)),
            "f1_micro": float(f1_score(y_test, pred, average="micro")),
            "f1_macro": float(f1_score(y_test, pred, average="macro")),
        }
    averages = {
        key: float(np.mean([m[key] for m in per_model.values()]))
        for key in ("accuracy", "f1_micro", "f1_macro")
    }
    return {"per_model": per_model, "average": averages}


def _align_to_schema(table: TableDataset, reference: TableDataset) -> TableDataset:
    """Reorder/retype a table's columns to a reference schema (same names/kinds)."""
    order = [table.column_index(c.name) for c in reference.columns]
    rows = tuple(tuple(row[i] for i in order) for row in table.rows)
    columns = []
    for ref_col, src_i in zip(reference.columns, order):
        src_col = table.columns[src_i]
        if ref_col.kind != src_col.kind:
            raise DataError(f"column {ref_col.name!r} kind mismatch")
        if ref_col.kind == CATEGORICAL:
            extra = tuple(c for c in src_col.categories if c not in ref_col.categories)
            columns.append(ColumnSchema(ref_col.name, ref_col.kind,
                                        ref_col.categories + extra, ref_col.target))
        else:
            columns.append(ref_col)
    return TableDataset(table.metadata, tuple(columns), rows)


# -- diversity / privacy ----------------------------------------------------


@dataclass
class MixedDistanceEncoding:
    """Embeds mixed rows in a metric space for nearest-record distances.

    Numeric columns are min-max scaled with the ranges of the fitting table;
    categorical columns are one-hot scaled by 1/sqrt(2) so a single category
    flip contributes exactly distance 1.
    """

    numeric_ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    categories: dict[str, tuple[str, ...]] = field(default_factory=dict)
    column_order: tuple[tuple[str, str], ...] = ()

    @classmethod
    def fit(cls, table: TableDataset) -> "MixedDistanceEncoding":
        enc = cls()
        order = []
        for i, col in enumerate(table.columns):
            order.append((col.name, col.kind))
            if col.kind == NUMERICAL:
                values = np.asarray(table.column_values(i), dtype=np.float64)
                enc.numeric_ranges[col.name] = (float(values.min()), float(values.max()))
            else:
                enc.categories[col.name] = col.categories
        enc.column_order = tuple(order)
        return enc

    def encode(self, table: TableDataset) -> np.ndarray:
        if tuple((c.name, c.kind) for c in table.columns) != self.column_order:
            raise DataError("table does not match the fitted encoding schema")
        blocks = []
        for i, col in enumerate(table.columns):
            values = table.column_values(i)
            if col.kind == NUMERICAL:
                lo, hi = self.numeric_ranges[col.name]
                span = hi - lo if hi > lo else 1.0
                arr = (np.asarray(values, dtype=np.float64) - lo) / span
                blocks.append(arr.reshape(-1, 1))
            else:
                cats = list(self.categories[col.name])
                onehot = np.zeros((len(values), len(cats)))
                for r, v in enumerate(values):
                    if v in self.categories[col.name]:
                        onehot[r, cats.index(v)] = 1.0 / np.sqrt(2.0)
                    # unseen category: all-zero block, still distance 1 from any seen one
                blocks.append(onehot)
        return np.hstack(blocks)


def _min_distances(queries: np.ndarray, pool: np.ndarray) -> np.ndarray:
    """Per-query min Euclidean distance, summing squared diffs feature-by-feature."""
    diffs = queries[:, None, :] - pool[None, :, :]
    d2 = (diffs * diffs).sum(axis=2)
    return np.sqrt(d2.min(axis=1))


def dcr(synth: TableDataset, real_train: TableDataset,
        encoding: MixedDistanceEncoding) -> dict:
    """Distance to the closest training record for every synthetic row."""
    q = encoding.encode(synth)
    pool = encoding.encode(real_train)
    distances = _min_distances(q, pool)
    return {"distances": distances, "median": float(np.median(distances))}


def pct(synth: TableDataset, real_train: TableDataset, real_test: TableDataset,
        encoding: MixedDistanceEncoding, variant: str = "membership") -> float:
    """Proportion of synthetic rows whose nearest real record is in the test set.

    Ties count toward the training set (conservative toward copy detection).
    The ``pairwise`` variant compares min distances to each set directly; with
    the tie rule it coincides with nearest-neighbor membership over the pooled
    set.
    """
    if real_test.n_rows == 0:
        raise DataError("test set must be nonempty")
    if variant not in ("membership", "pairwise"):
        raise DataError(f"unknown pct variant {variant!r}")
    q = encoding.encode(synth)
    d_train = _min_distances(q, encoding.encode(real_train))
    d_test = _min_distances(q, encoding.encode(real_test))
    closer = d_test < d_train
    return float(closer.mean())


def ws_js(real: TableDataset, synth: TableDataset) -> dict:
    """Mean 1-D Wasserstein distance (numerical) and Jensen-Shannon divergence
    in bits (categorical) across columns."""
    _check_matching_schema(real, synth)
    ws_values, js_values = {}, {}
    for i, col in enumerate(real.columns):
        if col.kind == NUMERICAL:
            ws_values[col.name] = float(scipy_stats.wasserstein_distance(
                np.asarray(real.column_values(i), dtype=np.float64),
                np.asarray(synth.column_values(i), dtype=np.float64)))
        else:
            js_values[col.name] = _js_divergence_bits(
                real.column_values(i), synth.column_values(i))
    return {
        "ws_mean": float(np.mean(list(ws_values.values()))) if ws_values else 0.0,
        "js_mean": float(np.mean(list(js_values.values()))) if js_values else 0.0,
        "ws_per_column": ws_values,
        "js_per_column": js_values,
    }


def _js_divergence_bits(real_values: list, synth_values: list) -> float:
    union = list(dict.fromkeys(list(real_values) + list(synth_values)))
    p = np.array([real_values.count(c) for c in union], dtype=np.float64) / len(real_values)
    q = np.array([synth_values.count(c) for c in union], dtype=np.float64) / len(synth_values)
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def cond_gen_classification(bundle, test_table: TableDataset, seed: int = 0) -> dict:
    """Score conditional generation as a classifier of the target column.

    Each test row's features condition the diffusion model with the target
    value hidden; the decoded target is compared to the truth.
    """
    from sklearn.metrics import accuracy_score, f1_score

    from .pipeline import predict_target_by_generation

    t = test_table.target_index
    if t is None:
        raise DataError("table declares no target column")
    predictions = predict_target_by_generation(bundle, test_table, seed=seed)
    truth = test_table.column_values(t)
    return {
        "accuracy": float(accuracy_score(truth, predictions)),
        "f1_micro": float(f1_score(truth, predictions, average="micro")),
        "f1_macro": float(f1_score(truth, predictions, average="macro")),
        "predictions": predictions,
    }


# -- report ------------------------------------------------------------------


@dataclass
class MetricReport:
    real_id: str
    synth_id: str
    seed: int = 0
    column_fidelity: dict | None = None
    correlation_fidelity: dict | None = None
    tstr: dict | None = None
    dcr_median: float | None = None
    pct_score: float | None = None
    ws_js_scores: dict | None = None

    def to_dict(self) -> dict:
        payload = {
            "real": self.real_id,
            "synth": self.synth_id,
            "seed": self.seed,
            "column_fidelity": self.column_fidelity,
            "correlation_fidelity": self.correlation_fidelity,
            "tstr": self.tstr,
            "dcr_median": self.dcr_median,
            "pct": self.pct_score,
            "ws_js": self.ws_js_scores,
        }
        return payload

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def format_table(self) -> str:
        lines = [f"metrics: {self.synth_id} vs {self.real_id} (seed {self.seed})"]
        if self.column_fidelity is not None:
            lines.append(f"  column fidelity       {self.column_fidelity['score']:.4f}")
        if self.correlation_fidelity is not None:
            lines.append(f"  correlation fidelity  {self.correlation_fidelity['score']:.4f}")
        if self.tstr is not None:
            avg = self.tstr["average"]
            lines.append(f"  tstr accuracy         {avg['accuracy']:.4f}")
            lines.append(f"  tstr f1 (micro)       {avg['f1_micro']:.4f}")
            lines.append(f"  tstr f1 (macro)       {avg['f1_macro']:.4f}")
        if self.dcr_median is not None:
            lines.append(f"  dcr median            {self.dcr_median:.4f}")
        if self.pct_score is not None:
            lines.append(f"  pct                   {self.pct_score:.4f}")
        if self.ws_js_scores is not None:
            lines.append(f"  wasserstein mean      {self.ws_js_scores['ws_mean']:.4f}")
            lines.append(f"  jensen-shannon mean   {self.ws_js_scores['js_mean']:.4f}")
        return "\n".join(lines)


def evaluate_all(
    real_test: TableDataset,
    synth: TableDataset,
    real_train: TableDataset | None = None,
    seed: int = 0,
    real_id: str = "real",
    synth_id: str = "synth",
    with_tstr: bool = True,
) -> MetricReport:
    """Run the full battery. Diversity metrics need the training table."""
    report = MetricReport(real_id=real_id, synth_id=synth_id, seed=seed)
    report.column_fidelity = column_fidelity(real_test, synth)
    if real_test.n_columns >= 2:
        report.correlation_fidelity = correlation_fidelity(real_test, synth)
    report.ws_js_scores = ws_js(real_test, synth)
    if with_tstr and real_test.target_index is not None:
        report.tstr = tstr_utility(synth, real_test, seed=seed)
    if real_train is not None:
        encoding = MixedDistanceEncoding.fit(real_train)
        report.dcr_median = dcr(synth, real_train, encoding)["median"]
        report.pct_score = pct(synth, real_train, real_test, encoding)
    return report
