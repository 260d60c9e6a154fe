"""Deterministic CSV emission and provenance stamping.

Every results file starts with a comment line carrying the code hash and the
config digest, so no number travels without its settings. Floats are written
with repr (shortest round-trip form), which keeps reruns byte-identical.
"""

import hashlib
import io
from pathlib import Path


def code_hash() -> str:
    """Content hash over the package's own source files."""
    root = Path(__file__).resolve().parent
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*.py")):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:16]


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(fieldnames, rows, provenance: str = None) -> str:
    """Render rows (dicts) to CSV text with an optional leading comment."""
    buf = io.StringIO()
    if provenance:
        buf.write(f"# {provenance}\n")
    buf.write(",".join(fieldnames) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row[name]) for name in fieldnames) + "\n")
    return buf.getvalue()


def write_csv(path, fieldnames, rows, provenance: str = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_csv(fieldnames, rows, provenance))


def read_csv(path) -> list:
    """Read a CSV written by write_csv back into dicts of strings."""
    lines = [ln for ln in Path(path).read_text().splitlines()
             if ln and not ln.startswith("#")]
    fieldnames = lines[0].split(",")
    return [dict(zip(fieldnames, ln.split(","))) for ln in lines[1:]]
