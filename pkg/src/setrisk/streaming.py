"""Round-based early-risk stream simulation.

Round k releases each still-active user's k-th post. Every active user
gets exactly one decision event per round: unfired users are re-scored
under the run policy and fire (irrevocably) when the score reaches the
threshold; fired users keep decision 1 with their score frozen at fire
time. Users whose history is exhausted without firing finalize as
negative with their last score.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .model import TextSet

SNAPSHOT_ROUNDS = (1, 100, 500, 1000)

POLICY_VARIANTS = ("recent-k", "ig-selected-k", "post-level")


@dataclass
class RunPolicy:
    """What the model sees each round and when a user fires."""

    variant: str
    k_posts: int = 16
    threshold: float = 0.9
    ig_steps: int = 32

    def __post_init__(self):
        if self.variant not in POLICY_VARIANTS:
            raise ConfigError(f"unknown policy variant {self.variant!r}; "
                              f"expected one of {POLICY_VARIANTS}")
        if self.k_posts < 1:
            raise ConfigError("k_posts must be at least 1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.ig_steps < 1:
            raise ConfigError("ig_steps must be at least 1")

    def to_dict(self):
        return {"variant": self.variant, "k_posts": self.k_posts,
                "threshold": self.threshold, "ig_steps": self.ig_steps}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("variant", "k_posts", "threshold", "ig_steps")
                      if k in d})


@dataclass
class DecisionEvent:
    round: int
    user_id: str
    decision: int
    score: float


class _UserStream:
    __slots__ = ("user_id", "post_ids", "embeddings", "fired_round", "last_score")

    def __init__(self, user_id):
        self.user_id = user_id
        self.post_ids = []
        self.embeddings = []
        self.fired_round = None
        self.last_score = None


class StreamState:
    """Per-user accumulation of seen posts and decision status."""

    def __init__(self, roster=None):
        self.users = {}
        self.round = 0
        self._roster = set(roster) if roster is not None else None

    def user(self, user_id):
        if self._roster is not None and user_id not in self._roster:
            raise DataError(f"unknown user_id {user_id!r} in stream")
        if user_id not in self.users:
            self.users[user_id] = _UserStream(user_id)
        return self.users[user_id]

    def current_scores(self):
        """Latest (frozen when fired) score per scored user."""
        return {uid: us.last_score for uid, us in self.users.items()
                if us.last_score is not None}


def _policy_input(us, policy, model):
    if policy.variant == "recent-k":
        pids = us.post_ids[-policy.k_posts:]
        embs = us.embeddings[-policy.k_posts:]
    elif policy.variant == "post-level":
        pids = us.post_ids[-1:]
        embs = us.embeddings[-1:]
    else:  # ig-selected-k
        if len(us.post_ids) <= policy.k_posts:
            pids, embs = us.post_ids, us.embeddings
        else:
            from .attribution import score_posts
            if not (hasattr(model, "params") and hasattr(model, "cfg")):
                raise ConfigError(
                    "ig-selected-k needs a model exposing params and cfg for attribution")
            emb = np.stack(us.embeddings)
            scores = score_posts(us.post_ids, emb, model.params, model.cfg,
                                 window=policy.k_posts, steps=policy.ig_steps)
            ranked = sorted(range(len(us.post_ids)),
                            key=lambda i: (-scores[i], us.post_ids[i]))
            keep = sorted(ranked[:policy.k_posts])
            return TextSet(us.user_id, [us.post_ids[i] for i in keep], emb[keep])
    return TextSet(us.user_id, pids, np.stack(embs))


def step_round(state, new_posts, policy, model, workers=1):
    """Advance one round; returns this round's DecisionEvents.

    ``new_posts`` maps user_id -> (post_id, embedding vector), at most
    one post per user per round. Users absent from ``new_posts`` are
    exhausted and emit nothing. ``workers`` > 1 scores unfired users on
    a thread pool; each user's score is computed independently, so the
    results match the sequential ones bit for bit.
    """
    state.round += 1
    rnd = state.round
    uids = sorted(new_posts)
    to_score = []
    for uid in uids:
        pid, emb = new_posts[uid]
        us = state.user(uid)
        us.post_ids.append(pid)
        us.embeddings.append(np.asarray(emb, dtype=np.float64))
        if us.fired_round is None:
            to_score.append(us)
    score_one = lambda us: float(model.predict(_policy_input(us, policy, model)))
    if workers > 1 and len(to_score) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score_one, to_score))
    else:
        scores = [score_one(us) for us in to_score]
    for us, score in zip(to_score, scores):
        us.last_score = score
        if score >= policy.threshold:
            us.fired_round = rnd
    return [DecisionEvent(round=rnd, user_id=uid,
                          decision=int(state.users[uid].fired_round is not None),
                          score=state.users[uid].last_score)
            for uid in uids]


@dataclass
class SimulationResult:
    events: list           # DecisionEvents, in (round, user_id) order
    outcomes: list         # per-user {user_id, decision, k, score}
    snapshots: dict        # round -> {user_id: score}
    total_rounds: int


def run_simulation(users, store, policy, model, max_rounds=None,
                   snapshot_rounds=SNAPSHOT_ROUNDS, workers=1):
    """Stream a corpus through the policy; posts release one per round.

    Snapshot rounds record every user's current score; requested rounds
    beyond the stream's end carry the final state forward.
    """
    if not users:
        raise DataError("run_simulation: no users")
    longest = max(len(u.posts) for u in users)
    total_rounds = min(longest, max_rounds) if max_rounds else longest
    state = StreamState(roster=[u.user_id for u in users])
    events = []
    snapshots = {}
    for rnd in range(1, total_rounds + 1):
        new_posts = {}
        for u in users:
            if len(u.posts) >= rnd:
                pid = u.posts[rnd - 1].post_id
                new_posts[u.user_id] = (pid, store.get(pid))
        events.extend(step_round(state, new_posts, policy, model, workers=workers))
        if rnd in snapshot_rounds:
            snapshots[rnd] = state.current_scores()
    for rnd in snapshot_rounds:
        if rnd > total_rounds:
            snapshots[rnd] = state.current_scores()
    outcomes = []
    for u in sorted(users, key=lambda u: u.user_id):
        us = state.users[u.user_id]
        if us.fired_round is not None:
            outcomes.append({"user_id": u.user_id, "decision": 1,
                             "k": us.fired_round, "score": us.last_score})
        else:
            outcomes.append({"user_id": u.user_id, "decision": 0,
                             "k": len(us.post_ids), "score": us.last_score})
    return SimulationResult(events=events, outcomes=outcomes, snapshots=snapshots,
                            total_rounds=total_rounds)


def save_decision_log(path, events):
    """Line-delimited {round, user_id, decision, score} records."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        for e in events:
            f.write(json.dumps({"round": e.round, "user_id": e.user_id,
                                "decision": e.decision, "score": e.score},
                               sort_keys=True) + "\n")
    os.replace(tmp, path)


def load_decision_log(path):
    events = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                events.append(DecisionEvent(round=int(rec["round"]),
                                            user_id=rec["user_id"],
                                            decision=int(rec["decision"]),
                                            score=float(rec["score"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: bad decision record: {e}") from None
    return events


def save_outcomes(path, outcomes):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        for o in outcomes:
            f.write(json.dumps(o, sort_keys=True) + "\n")
    os.replace(tmp, path)


def load_outcomes(path):
    outcomes = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if line:
                try:
                    outcomes.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise DataError(f"{path}:{lineno}: bad outcome record: {e}") from None
    return outcomes


def save_snapshots(path, snapshots):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump({str(k): snapshots[k] for k in sorted(snapshots)}, f,
                  sort_keys=True, indent=0)
        f.write("\n")
    os.replace(tmp, path)


def load_snapshots(path):
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return {int(k): v for k, v in raw.items()}
