"""
Export Scenarios Script

Writes one CSV per simulation scenario plus the application-shaped sample,
so the CLI commands can be tried without generating data first.
"""

import json
from pathlib import Path

from app.services.data_io import write_dataset_csv
from app.services.scenarios import generate_application_like, generate_scenario

SCENARIOS = [1, 2, 3, 4, 5, 6]
SAMPLE_SIZE = 500
SEED = 2024


def export_scenario(data_dir: Path, scenario_id: int) -> dict:
    """Write one scenario sample and return its truth summary."""
    dataset, truth = generate_scenario(scenario_id, SAMPLE_SIZE, SEED)
    path = write_dataset_csv(dataset, data_dir / f"scenario_{scenario_id}.csv")
    print(f"  [OK] {path.name} (n={dataset.n}, p={dataset.p}, q={dataset.q}, L={dataset.n_covariates})")
    return {"file": path.name, "true_B": truth.true_B.tolist(), "basis": truth.basis.covariate_basis.value}


def main():
    data_dir = Path("data")
    data_dir.mkdir(exist_ok=True)

    print("[EXPORT] Generating scenario samples...")
    truths = {str(s): export_scenario(data_dir, s) for s in SCENARIOS}

    dataset, truth = generate_application_like(seed=SEED)
    path = write_dataset_csv(dataset, data_dir / "application.csv")
    truths["application"] = {"file": path.name, "true_B": truth.true_B.tolist()}
    print(f"  [OK] {path.name} (n={dataset.n}, p={dataset.p}, q={dataset.q})")

    (data_dir / "truth.json").write_text(json.dumps(truths, indent=2))

    print("\n[DONE] Samples written.")
    print(f"   Location: {data_dir.absolute()}")
    print("\n   Next steps:")
    print("   1. python -m app weights --data data/scenario_1.csv --basis linear_plus_squares")
    print("   2. python -m app fit --data data/application.csv --bootstrap 200")


if __name__ == "__main__":
    main()
