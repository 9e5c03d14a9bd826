import os
import sys
from pathlib import Path

# Add the project root to sys.path so we can import har_kit
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from har_kit.cli import run_experiment  # noqa: E402, I001
from har_kit.report import write_plots, write_tables  # noqa: E402
from har_kit.types import (  # noqa: E402
    AttackSpec,
    EvalReport,
    ExperimentConfig,
    TrainConfig,
    default_inner_mode,
)
from har_kit.utils import config_hash  # noqa: E402

DEFAULT_CONFIG = Path(__file__).parent / "configs" / "desk.yaml"
TRAIN_EPSILON = 0.1

# name -> (arch kind, training method, hidden widths)
VARIANTS = {
    "flat-standard": ("flat", "standard", [48]),
    "flat-adv": ("flat", "adv", [48]),
    "flat-trades": ("flat", "trades", [48]),
    "flat-adv-t": ("flat", "adv_t", [48]),
    "har-adv": ("har", "adv", [16]),
    "har-adv-hce": ("har", "adv_hce", [16]),
}


def variant_config(base: ExperimentConfig, name: str) -> ExperimentConfig:
    kind, method, hidden = VARIANTS[name]
    attack = None
    if method != "standard":
        attack = AttackSpec(
            epsilon=TRAIN_EPSILON,
            iterations=10,
            mode=default_inner_mode(method),
            seed=base.seed,
        )
    train = TrainConfig.model_validate(
        {
            **base.train.model_dump(),
            "method": method,
            "attack": attack,
            "beta": 6.0 if method == "trades" else None,
        }
    )
    attacks = list(base.attacks)
    if kind == "har":
        attacks.append(
            AttackSpec(
                mode="coarse_net_targeted",
                epsilon=TRAIN_EPSILON,
                iterations=20,
                seed=base.seed,
            )
        )
    return base.model_copy(
        update={
            "arch": base.arch.model_copy(update={"kind": kind, "hidden": hidden}),
            "train": train,
            "attacks": attacks,
            "output_dir": base.output_dir / name,
        }
    )


def compare(config_path: Path) -> dict[str, EvalReport]:
    base = ExperimentConfig.from_yaml(config_path)
    reports: dict[str, EvalReport] = {}
    for name in VARIANTS:
        print(f"Running {name}...")
        reports[name] = run_experiment(variant_config(base, name))
        print(f"  clean fine accuracy: {reports[name].clean_fine_acc}")
        print(f"  worst-case robust accuracy: {reports[name].targeted_robust_acc}")

    out = base.output_dir / "comparison"
    digest = config_hash(base)
    written = write_tables(reports, out, config_hash=digest, seed=base.seed)
    written.extend(write_plots(reports, out, config_hash=digest, seed=base.seed))
    print(f"Wrote {len(written)} files to {out}")
    return reports


if __name__ == "__main__":
    path = Path(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_CONFIG
    if not path.exists():
        print(f"Error: config not found: {path}")
        exit(1)
    compare(path)
