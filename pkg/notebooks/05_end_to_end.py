# %% [markdown]
# # End to end: library call and command line
#
# `run_pipeline` splits the cohort, trains with early stopping, refits the
# fusion head on a balanced set and reports test metrics. The settings
# below are small so the script finishes in about a minute.

# %%
import json
import subprocess
import sys
import tempfile
from pathlib import Path

from perfgat.model import ModelConfig, prepare
from perfgat.synthdata import CohortConfig, generate_cohort
from perfgat.trainer import TrainConfig, run_pipeline

cohort = CohortConfig(n_subjects=60, n_regions=8, n_timepoints=16, minority_fraction=0.15,
                      class_effect=3.0, seed=0)
model = ModelConfig(k=3, hidden_dim=8, embed_dim=8, local_dim=4, local_hidden=8)
train = TrainConfig(max_epochs=30, early_stop_patience=5, retrain_epochs=5, seed=0)

res = run_pipeline(prepare(generate_cohort(cohort), model), model, train)
print("before retraining", res.report_before_retrain.table_row())
print("after retraining ", res.report.table_row())

# %% [markdown]
# The same steps through the `perfgat` command. Each subcommand prints
# one JSON line and writes its artifacts under `--out`.

# %%
work = Path(tempfile.mkdtemp())
config = {"seed": 0,
          "cohort": {"n_subjects": 60, "n_regions": 8, "n_timepoints": 16,
                     "minority_fraction": 0.15, "class_effect": 3.0},
          "model": {"k": 3, "hidden_dim": 8, "embed_dim": 8, "local_dim": 4, "local_hidden": 8},
          "train": {"max_epochs": 10, "early_stop_patience": 5, "retrain_epochs": 3}}
(work / "run.json").write_text(json.dumps(config))


def perfgat(*args):
    out = subprocess.run([sys.executable, "-m", "perfgat.cli", *map(str, args)],
                         capture_output=True, text=True)
    print(out.stdout.strip() or out.stderr.strip())
    return out.returncode


perfgat("synth", "--config", work / "run.json", "--out", work / "cohort")
perfgat("train", work / "cohort", "--config", work / "run.json", "--out", work / "train")
perfgat("retrain", work / "train" / "checkpoint.pgc", work / "cohort", "--out", work / "retrain")
perfgat("eval", work / "retrain" / "retrained.pgc", work / "cohort", "--split", "test",
        "--out", work / "eval")
print(sorted(p.name for p in (work / "eval").iterdir()))
