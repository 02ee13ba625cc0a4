"""
Regenerate docs/config_reference.md and docs/schemas/*.json from the pydantic models
"""
import json
import sys
from enum import Enum
from pathlib import Path
from typing import Any, List, Tuple, get_origin

sys.path.insert(0, str(Path(__file__).parent.parent))

from pydantic import BaseModel

from grm.schemas.config import RunConfig
from grm.schemas.reports import AblationRow, BenchRow, DivisionRecord, EpochRecord, GradCheckRow, MetricsReport

DOCS = Path(__file__).parent.parent / "docs"
OUTPUT_SCHEMAS = {
    "metrics_report": MetricsReport,
    "division_record": DivisionRecord,
    "epoch_record": EpochRecord,
    "bench_row": BenchRow,
    "ablation_row": AblationRow,
    "gradcheck_row": GradCheckRow,
}


def _type_name(annotation: Any) -> str:
    if isinstance(annotation, type) and issubclass(annotation, Enum):
        return " \\| ".join(f"`{m.value}`" for m in annotation)
    if get_origin(annotation) is not None:
        return str(annotation).replace("typing.", "")
    return getattr(annotation, "__name__", str(annotation))


def _default(value: Any) -> str:
    if isinstance(value, Enum):
        value = value.value
    if isinstance(value, BaseModel):
        return "(section)"
    return f"`{json.dumps(value)}`"


def reference_rows(model: BaseModel, prefix: str = "") -> List[Tuple[str, str, str, str]]:
    """(dotted key, type, default, description) for every leaf key"""
    rows = []
    for name, field in type(model).model_fields.items():
        key = f"{prefix}{name}"
        value = getattr(model, name)
        if isinstance(value, BaseModel):
            rows.extend(reference_rows(value, prefix=f"{key}."))
            continue
        rows.append((key, _type_name(field.annotation), _default(value), field.description or ""))
    return rows


def render_reference() -> str:
    lines = [
        "# Run configuration reference",
        "",
        "Generated by `scripts/generate_config_reference.py`; do not edit by hand.",
        "Unknown keys are rejected. Every key is optional; the defaults below apply.",
        "",
        "| Key | Type | Default | Description |",
        "| --- | --- | --- | --- |",
    ]
    for key, type_name, default, description in reference_rows(RunConfig()):
        lines.append(f"| `{key}` | {type_name} | {default} | {description} |")
    return "\n".join(lines) + "\n"


def main():
    (DOCS / "schemas").mkdir(parents=True, exist_ok=True)
    (DOCS / "config_reference.md").write_text(render_reference())
    print("[OK] docs/config_reference.md")
    for name, model in OUTPUT_SCHEMAS.items():
        path = DOCS / "schemas" / f"{name}.schema.json"
        path.write_text(json.dumps(model.model_json_schema(), indent=2) + "\n")
        print(f"[OK] {path.relative_to(DOCS.parent)}")


if __name__ == "__main__":
    main()
