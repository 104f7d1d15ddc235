import os
import shutil
import tempfile
import warnings
from collections.abc import Generator
from contextlib import contextmanager
from pathlib import Path

from .errors import UsageError

WORKERS_ENV = "GNNBENCH_WORKERS"


def resolve_workers(requested: int | None) -> int:
    """Worker count from the command line, else ``GNNBENCH_WORKERS``, else 1."""
    if requested is None:
        raw = os.environ.get(WORKERS_ENV, "").strip()
        if not raw:
            return 1
        try:
            requested = int(raw)
        except ValueError as e:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from e
    if requested < 1:
        raise UsageError(f"workers must be >= 1, got {requested}")
    return requested


def ensure_writable_dir(path: Path | str) -> Path:
    """Create ``path`` if needed and check that files can be written into it."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out, prefix=".gnnbench-write-check-"):
            pass
    except OSError as e:
        raise UsageError(f"Output directory {out} is not writable: {e}") from e
    return out


@contextmanager
def tmp_path_factory_safe(prefix: str) -> Generator[Path, None, None]:
    """Context manager that creates a unique temporary directory with a prefix."""
    temp_dir: Path | None = None
    try:
        temp_dir = Path(tempfile.mkdtemp(prefix=prefix))
        if not temp_dir.is_dir():
            raise RuntimeError(f"Expected temp directory not created: {temp_dir}")

        yield temp_dir

    except OSError as e:
        raise RuntimeError(
            f"Failed to create temporary directory for datasets: {e}\n"
            "Check disk space, permissions, and TMPDIR environment variable."
        ) from e

    finally:
        if temp_dir is not None and temp_dir.exists():
            try:
                shutil.rmtree(temp_dir)
            except OSError as e:
                warnings.warn(
                    f"Failed to clean up temp dir {temp_dir}: {e}",
                    ResourceWarning,
                    stacklevel=2,
                )
