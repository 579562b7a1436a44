"""Decision and ranking metrics for early-risk runs.

All decision metrics take three aligned per-user sequences: the final
binary decision, the binary true label, and the delay k (number of
posts seen when the decision was made). ERDE charges every user a cost
and averages; latency/speed summarize how early true positives fired;
ranking metrics score per-round user rankings by score.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError

DEFAULT_PENALTY_P = 0.0078


def classification_counts(decisions, labels):
    """(tp, fp, fn, tn) from aligned binary sequences."""
    d = np.asarray(decisions, dtype=int)
    y = np.asarray(labels, dtype=int)
    if d.shape != y.shape:
        raise ConfigError(f"decisions shape {d.shape} != labels shape {y.shape}")
    tp = int(np.sum((d == 1) & (y == 1)))
    fp = int(np.sum((d == 1) & (y == 0)))
    fn = int(np.sum((d == 0) & (y == 1)))
    tn = int(np.sum((d == 0) & (y == 0)))
    return tp, fp, fn, tn


def precision_recall_f1(decisions, labels):
    """Precision, recall, F1; each 0 when its denominator is 0."""
    tp, fp, fn, _ = classification_counts(decisions, labels)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return precision, recall, f1


def latency_cost(k, o):
    """lc_o(k) = 1 - 1/(1 + exp(k - o)): the cost of a true positive
    that fired after k posts, saturating to 1 as k grows past o.
    Computed as the equivalent logistic expit(k - o) for stability."""
    return expit(np.asarray(k, dtype=float) - o)


def erde(decisions, labels, delays, o, c_fp=None, c_fn=1.0, c_tp=1.0):
    """Early risk detection error at horizon ``o``.

    Per user: a false positive costs c_fp, a false negative c_fn, a
    true positive lc_o(k) * c_tp, a true negative 0; ERDE_o is the mean
    over users. c_fp defaults to the positive prevalence
    n_pos / n_users of the evaluated population.
    """
    d = np.asarray(decisions, dtype=int)
    y = np.asarray(labels, dtype=int)
    k = np.asarray(delays, dtype=float)
    if not (d.shape == y.shape == k.shape):
        raise ConfigError(
            f"decisions/labels/delays shapes differ: {d.shape}, {y.shape}, {k.shape}")
    if d.size == 0:
        raise DataError("erde: no users to evaluate")
    if c_fp is None:
        c_fp = float(np.sum(y == 1)) / y.size
    costs = np.zeros(d.size, dtype=float)
    costs[(d == 1) & (y == 0)] = c_fp
    costs[(d == 0) & (y == 1)] = c_fn
    tp_mask = (d == 1) & (y == 1)
    costs[tp_mask] = latency_cost(k[tp_mask], o) * c_tp
    return float(costs.mean())


def speed_penalty(k, p=DEFAULT_PENALTY_P):
    """penalty(k) = -1 + 2/(1 + exp(-p * (k - 1))); zero at k = 1."""
    return -1.0 + 2.0 * expit(p * (np.asarray(k, dtype=float) - 1.0))


def latency_and_speed(decisions, labels, delays, p=DEFAULT_PENALTY_P):
    """(median TP delay, 1 - penalty(median)); (None, None) with no TPs."""
    d = np.asarray(decisions, dtype=int)
    y = np.asarray(labels, dtype=int)
    k = np.asarray(delays, dtype=float)
    tp_delays = k[(d == 1) & (y == 1)]
    if tp_delays.size == 0:
        return None, None
    latency = float(np.median(tp_delays))
    return latency, float(1.0 - speed_penalty(latency, p=p))


def latency_weighted_f1(f1, speed):
    """F1 discounted by decision speed; 0 when speed is undefined."""
    if speed is None:
        return 0.0
    return float(f1) * float(speed)


def ranking_metrics(user_ids, scores, labels, cutoffs=(10, 100)):
    """P@10 and NDCG@cutoffs for one score snapshot.

    Users are ranked by descending score with ties broken by ascending
    user id. Gains are binary, discounts 1/log2(rank+1). When fewer
    users than a cutoff exist, the available prefix is scored and the
    result is flagged as truncated.
    """
    if len(user_ids) != len(scores) or len(scores) != len(labels):
        raise ConfigError("user_ids, scores, labels must be aligned")
    if not user_ids:
        raise DataError("ranking_metrics: no users to rank")
    order = sorted(range(len(scores)), key=lambda i: (-float(scores[i]), user_ids[i]))
    ranked_labels = np.array([int(labels[i]) for i in order])
    n_pos = int(ranked_labels.sum())
    out = {"truncated": len(user_ids) < max(max(cutoffs), 10)}

    top = ranked_labels[:10]
    out["p_at_10"] = float(top.sum() / top.size)

    discounts = 1.0 / np.log2(np.arange(2, len(ranked_labels) + 2))
    for k in cutoffs:
        # Both sums run over a plain discount subarray so a perfect
        # prefix yields exactly 1.0 (identical summation order).
        dcg = float(discounts[:k][ranked_labels[:k] == 1].sum())
        ideal = min(k, n_pos)
        idcg = float(discounts[:ideal].sum())
        out[f"ndcg_at_{k}"] = dcg / idcg if idcg > 0.0 else 0.0
    return out


@dataclass
class MetricsReport:
    """Everything the evaluation stage reports for one run."""

    n_users: int
    n_pos: int
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    erde: dict            # o -> value
    latency_tp: float     # None when no TPs
    speed: float          # None when no TPs
    latency_weighted_f1: float
    ranking: dict = field(default_factory=dict)  # round -> ranking_metrics dict

    def to_dict(self):
        d = self.__dict__.copy()
        d["erde"] = {str(k): v for k, v in self.erde.items()}
        d["ranking"] = {str(k): v for k, v in self.ranking.items()}
        return d


def evaluate_run(outcomes, labels_by_user, snapshots=None, o_values=(5, 50),
                 c_fp=None, c_fn=1.0, c_tp=1.0, p=DEFAULT_PENALTY_P):
    """Score one simulation run against true labels.

    ``outcomes``: per-user dicts {user_id, decision, k}. ``snapshots``:
    optional {round: {user_id: score}} for ranking metrics. Unknown or
    missing labels are data errors.
    """
    if not outcomes:
        raise DataError("evaluate_run: no outcomes")
    uids = [o["user_id"] for o in outcomes]
    if len(set(uids)) != len(uids):
        raise DataError("evaluate_run: duplicate user in outcomes")
    labels = []
    for uid in uids:
        if uid not in labels_by_user:
            raise DataError(f"evaluate_run: no label for user {uid!r}")
        lab = labels_by_user[uid]
        if lab not in ("positive", "negative"):
            raise DataError(f"evaluate_run: user {uid!r} has unusable label {lab!r}")
        labels.append(1 if lab == "positive" else 0)
    decisions = [int(o["decision"]) for o in outcomes]
    delays = [float(o["k"]) for o in outcomes]

    tp, fp, fn, tn = classification_counts(decisions, labels)
    precision, recall, f1 = precision_recall_f1(decisions, labels)
    erde_vals = {int(o): erde(decisions, labels, delays, o, c_fp=c_fp, c_fn=c_fn, c_tp=c_tp)
                 for o in o_values}
    latency, speed = latency_and_speed(decisions, labels, delays, p=p)
    lwf1 = latency_weighted_f1(f1, speed)

    ranking = {}
    if snapshots:
        by_uid_label = dict(zip(uids, labels))
        for rnd in sorted(snapshots):
            snap = snapshots[rnd]
            snap_uids = sorted(snap)
            snap_scores = [snap[u] for u in snap_uids]
            snap_labels = []
            for u in snap_uids:
                if u not in by_uid_label:
                    raise DataError(f"evaluate_run: snapshot user {u!r} missing from outcomes")
                snap_labels.append(by_uid_label[u])
            ranking[int(rnd)] = ranking_metrics(snap_uids, snap_scores, snap_labels)

    return MetricsReport(n_users=len(uids), n_pos=int(np.sum(labels)), tp=tp, fp=fp,
                         fn=fn, tn=tn, precision=precision, recall=recall, f1=f1,
                         erde=erde_vals, latency_tp=latency, speed=speed,
                         latency_weighted_f1=lwf1, ranking=ranking)


def format_report(report):
    """Fixed-width text tables for one MetricsReport."""
    lines = []
    erde_cols = sorted(report.erde)
    header = ["users", "pos", "P", "R", "F1"]
    header += [f"ERDE_{o}" for o in erde_cols]
    header += ["latency", "speed", "LW-F1"]
    lat = "-" if report.latency_tp is None else f"{report.latency_tp:.1f}"
    spd = "-" if report.speed is None else f"{report.speed:.3f}"
    row = [str(report.n_users), str(report.n_pos), f"{report.precision:.3f}",
           f"{report.recall:.3f}", f"{report.f1:.3f}"]
    row += [f"{report.erde[o]:.4f}" for o in erde_cols]
    row += [lat, spd, f"{report.latency_weighted_f1:.3f}"]
    widths = [max(len(h), len(v)) for h, v in zip(header, row)]
    lines.append("  ".join(h.rjust(w) for h, w in zip(header, widths)))
    lines.append("  ".join(v.rjust(w) for v, w in zip(row, widths)))
    if report.ranking:
        lines.append("")
        lines.append("round   P@10  NDCG@10  NDCG@100")
        for rnd in sorted(report.ranking):
            r = report.ranking[rnd]
            mark = " (truncated)" if r.get("truncated") else ""
            lines.append(f"{rnd:>5}  {r['p_at_10']:.3f}   {r['ndcg_at_10']:.4f}"
                         f"    {r['ndcg_at_100']:.4f}{mark}")
    return "\n".join(lines) + "\n"
