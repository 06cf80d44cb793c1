"""Regenerate the bundled 16^3 end-to-end fixture in src/strokelocus/data/."""
from pathlib import Path

from strokelocus.phantoms import write_fixture

if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "strokelocus" / "data"
    for name, path in write_fixture(out).items():
        print(f"{name:12s} {path}")
