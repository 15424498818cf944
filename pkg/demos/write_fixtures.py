"""Write every named audit fixture to fixtures/<name>.json."""

from __future__ import annotations

import pathlib
import re

from budgetmech.audit import fixtures
from budgetmech.core import serialize_instance

out = pathlib.Path(__file__).resolve().parent.parent / "fixtures"
out.mkdir(exist_ok=True)
for f in fixtures():
    name = re.sub(r"[^A-Za-z0-9-]+", "-", f.name).strip("-").lower()
    (out / f"{name}.json").write_text(serialize_instance(f.instance) + "\n")
    print(name)
