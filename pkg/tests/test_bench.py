"""Benchmark harness: workload construction and timing report."""

import numpy as np

from attnseg import EngineConfig, run_pipeline, validate_bundle
from attnseg.bench import build_bench_bundle, run_bench


class TestBuildBenchBundle:
    def test_bundle_is_valid_and_sized(self):
        bundle, uniform_cfg, auto_cfg = build_bench_bundle(
            grid=(8, 8), layers=4, heads=2, tokens=12, head_dim=8
        )
        validate_bundle(bundle)
        assert len(bundle.cross_layers) == 4
        assert bundle.cross_layers[0].heads == 2
        assert bundle.cross_layers[0].token_count == 12

    def test_configs_differ_only_in_aggregation(self):
        _, uniform_cfg, auto_cfg = build_bench_bundle(
            grid=(8, 8), layers=2, heads=2, tokens=8, head_dim=4
        )
        assert uniform_cfg.head_metric == "uniform"
        assert uniform_cfg.layer_metric == "uniform"
        assert uniform_cfg.rescale is False
        assert auto_cfg.head_metric == "dot"
        assert auto_cfg.layer_metric == "dot"
        assert uniform_cfg.layer_pairing == auto_cfg.layer_pairing

    def test_both_arms_run(self):
        bundle, uniform_cfg, auto_cfg = build_bench_bundle(
            grid=(8, 8), layers=2, heads=2, tokens=8, head_dim=4
        )
        for cfg in (uniform_cfg, auto_cfg):
            result = run_pipeline(bundle, cfg)
            assert result.mask.shape == bundle.image_size

    def test_deterministic_for_a_seed(self):
        a, _, _ = build_bench_bundle(
            grid=(4, 4), layers=2, heads=2, tokens=8, head_dim=4, seed=5
        )
        b, _, _ = build_bench_bundle(
            grid=(4, 4), layers=2, heads=2, tokens=8, head_dim=4, seed=5
        )
        assert a.cross_layers[0].attn.tobytes() == (
            b.cross_layers[0].attn.tobytes()
        )


class TestRunBench:
    def test_report_fields(self):
        report = run_bench(
            grid=(8, 8), layers=2, heads=2, repeat=2, tokens=8, head_dim=4
        )
        assert report["grid"] == [8, 8]
        assert report["layers"] == 2
        assert report["heads"] == 2
        assert report["repeat"] == 2
        assert len(report["uniform_runs"]) == 2
        assert len(report["auto_runs"]) == 2
        assert report["uniform_seconds"] == float(
            np.median(report["uniform_runs"])
        )
        assert report["auto_seconds"] == float(np.median(report["auto_runs"]))
        assert report["ratio"] > 0
