"""Regenerate the shipped model files in src/pkmdyn/data."""
import json

from pkmdyn.models import DATA_DIR, delta_spec, fourbar_spec


def main():
    DATA_DIR.mkdir(exist_ok=True)
    files = {
        "delta_mpp3h.json": delta_spec(units="mm"),
        "fourbar.json": fourbar_spec(),
    }
    for name, spec in files.items():
        (DATA_DIR / name).write_text(json.dumps(spec, indent=1) + "\n")
        print(f"wrote {DATA_DIR / name}")


if __name__ == "__main__":
    main()
