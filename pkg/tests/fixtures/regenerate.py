"""Rebuild the frozen regression fixtures: python3 tests/fixtures/regenerate.py"""

from pathlib import Path

from benders_il.experiment import generate_dataset
from benders_il.graph import write_jsonl
from benders_il.policy import save_params
from benders_il.training import TrainConfig, evaluate_policy, metrics_row, stage1_train, write_metrics_csv

HERE = Path(__file__).parent


def main():
    samples, _ = generate_dataset(2, 7)
    write_jsonl(HERE / "tiny.jsonl", samples)
    params = stage1_train(samples, TrainConfig(epochs1=3, hidden=8, dense=(8, 6), seed=5))
    save_params(params, HERE / "tiny_model.json")
    write_metrics_csv(HERE / "tiny_metrics.csv", [metrics_row("tiny", evaluate_policy(params, samples))])


if __name__ == "__main__":
    main()
