import unittest

from ove6d.core.errors import DataError, NumericalError
from ove6d.services.selftest_service import (
    AAVD_1000,
    CheckResult,
    SelftestReport,
    _run,
    checkpoint_roundtrip,
    codebook_roundtrip,
    micro_network_config,
    run_selftest,
    viewpoint_density,
)

"""
本测试文件用于测试自检服务。
测试流程如下：
1. 各项检查单独运行：码本与 checkpoint 往返、视点密度。
2. 单项失败时记录退出码，其余检查照常进行。
3. 完整自检全部通过，退出码为 0。
"""


class TestSelftestChecks(unittest.TestCase):
    def test_micro_config(self):
        cfg = micro_network_config()
        self.assertEqual(cfg.input_size, 16)
        self.assertEqual(cfg.embedding_dim, 64)

    def test_codebook_roundtrip_size(self):
        # 头部 4+2+(2+12)+(2+16)+16，记录 24 × 73 × 4
        self.assertEqual(codebook_roundtrip(n=24), 54 + 24 * 73 * 4)

    def test_checkpoint_roundtrip(self):
        self.assertGreater(checkpoint_roundtrip(), 0)

    def test_viewpoint_density(self):
        target, tol = AAVD_1000
        self.assertLessEqual(abs(viewpoint_density() - target), tol)


class TestSelftestReport(unittest.TestCase):
    def test_failure_exit_codes(self):
        def _bad_numbers():
            raise NumericalError("x")

        def _bad_data():
            raise DataError("y")

        failed = _run("numbers", _bad_numbers)
        self.assertFalse(failed.passed)
        self.assertEqual(failed.exit_code, 4)
        ok = _run("ok", lambda: 1)
        self.assertTrue(ok.passed)
        self.assertEqual(ok.detail, "1")
        report = SelftestReport(checks=[ok, failed, _run("data", _bad_data)])
        self.assertFalse(report.passed)
        self.assertEqual(report.exit_code, 4)
        self.assertEqual(SelftestReport(checks=[CheckResult(name="a", passed=True, seconds=0.0)]).exit_code, 0)

    def test_run_selftest(self):
        report = run_selftest(seed=0)
        self.assertEqual([c.name for c in report.checks],
                         ["gradients", "renderer_oracle", "codebook_roundtrip", "checkpoint_roundtrip", "viewpoint_density"])
        self.assertTrue(report.passed, [c.detail for c in report.checks if not c.passed])
        self.assertEqual(report.exit_code, 0)


if __name__ == '__main__':
    unittest.main()
