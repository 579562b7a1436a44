"""Reader for the JSONL post corpus.

One JSON object per line: {"user_id", "label", "posts": [{"post_id",
"timestamp", "text"?}]}. The exporter only needs the post ids and
texts, so that is all this reader extracts. Malformed lines raise
DataError naming the file and line number.
"""

import json

from .errors import DataError


def read_posts(path):
    """Map every post_id in the corpus to its text.

    Posts without a "text" field encode as the empty string, so a
    purely synthetic corpus still exports to a complete store. A
    post_id appearing twice is a data error: the store keeps exactly
    one vector per id, and silently dropping a collision would hide a
    corpus bug.
    """
    texts = {}
    first_seen = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{where}: invalid JSON: {e}") from None
            if not isinstance(rec, dict) or "posts" not in rec:
                raise DataError(f"{where}: expected a user record with a 'posts' list")
            posts = rec["posts"]
            if not isinstance(posts, list):
                raise DataError(f"{where}: 'posts' is not a list")
            for j, rp in enumerate(posts):
                try:
                    pid = rp["post_id"]
                except (KeyError, TypeError):
                    raise DataError(f"{where}: post {j}: missing field 'post_id'") from None
                if not isinstance(pid, str) or not pid or "\n" in pid:
                    raise DataError(f"{where}: post {j}: bad post_id {pid!r}")
                text = rp.get("text")
                if text is None:
                    text = ""
                if not isinstance(text, str):
                    raise DataError(f"{where}: post {j}: 'text' is not a string")
                if pid in texts:
                    raise DataError(
                        f"{where}: post_id {pid!r} already appeared at {first_seen[pid]}")
                texts[pid] = text
                first_seen[pid] = where
    return texts
