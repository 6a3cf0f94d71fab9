import math

import numpy as np
import pytest

from nudg.sampler import OutOfRegimeError, TheorySpec
from nudg.verifier import (
    Check,
    Status,
    VerificationReport,
    run_suite,
    verify_bounds_and_moments,
    verify_gradients,
    verify_reduced_solution,
    verify_rank_support,
    verify_loss_properties,
    verify_separation,
)


@pytest.mark.parametrize(
    "relation, measured, target, se, expected",
    [
        ("<", 1.0, 0.9, 0.05, Status.PASS),
        ("<", 1.0, 0.9, 0.01, Status.FAIL),
        (">", 0.85, 0.9, 0.02, Status.PASS),
        ("~", 0.5, 0.52, 0.004, Status.FAIL),
        ("~", 0.5, 0.51, 0.004, Status.PASS),
        ("==", 1.0, 1.0, 0.0, Status.PASS),
        ("==", 0.999999, 1.0, 1.0, Status.FAIL),
        ("<<", 0.49, 0.5, 0.001, Status.PASS),
        ("<<", 0.499, 0.5, 0.001, Status.FAIL),
        ("<=", 2e-6, 1.46e-6, 1.2e-6, Status.PASS),
    ],
)
def test_check_rules(relation, measured, target, se, expected):
    assert Check("x", measured, target, se, relation, 0, 1).status == expected


def test_out_of_regime_and_info_do_not_fail():
    rows = [
        Check("b", 5.0, 0.0, 0.0, "==", 0, 1, in_regime=False),
        Check("a", 5.0, 0.0, 0.0, "info", 0, 1),
    ]
    report = VerificationReport.merge([VerificationReport(rows)])
    assert report.passed
    assert [c.name for c in report.checks] == ["a", "b"]
    assert report["b"].status == Status.OUT_OF_REGIME
    with pytest.raises(ValueError):
        Check("c", 0.0, 0.0, 0.0, "!=", 0, 1)


def test_csv_and_summary(tmp_path):
    report = VerificationReport(
        [Check("a.b", 0.25, 0.5, 0.01, "<", 7, 100), Check("c", 1.0, 0.0, 0.0, "==", 7, 3, in_regime=False)]
    )
    path = tmp_path / "r.csv"
    report.write_csv(path)
    assert path.read_text().splitlines() == [
        "check,measured,target,stderr,pass,seed,n",
        "a.b,0.25,0.5,0.01,true,7,100",
        "c,1,0,0,out-of-regime,7,3",
    ]
    text = report.summary()
    assert "1 passed, 0 failed, 1 out of regime" in text


def test_loss_and_gradient_suites_pass():
    assert verify_loss_properties(2000, 1).passed
    assert verify_gradients(2).passed


def test_support_gamma_zero_is_out_of_regime():
    spec = TheorySpec(2, 5, 0.0, 500, 0, allow_out_of_regime=True)
    report = verify_rank_support(spec, 2)
    assert report.checks[0].status == Status.OUT_OF_REGIME
    assert len(report.checks) == 2  # b_rank == r adds the equality row


def test_support_small_instance():
    report = verify_rank_support(TheorySpec(3, 6, 0.4, 3000, 1, allow_out_of_regime=True), 2)
    assert report.passed


def test_reduced_plumbing_at_small_n():
    report = verify_reduced_solution(TheorySpec(49, 300, 0.45, 20_000, 3), 0.05, full_n=4000)
    names = {c.name for c in report.checks}
    assert "reduced.full_d_pattern" in names and len(names) == 5
    assert report["reduced.beta_positive"].measured > 0


def test_separation_assumptions_enforced():
    with pytest.raises(OutOfRegimeError):
        verify_separation(TheorySpec(49, 200, 0.45, 100, 0), 0.05, 10, eval_n=100)
    spec = TheorySpec(49, 200, 0.45, 2000, 0, allow_out_of_regime=True)
    report = verify_separation(spec, 0.05, 10, eval_n=2000)
    assert report["separation.rank_ood_accuracy"].status == Status.OUT_OF_REGIME


def test_moments_small():
    report = verify_bounds_and_moments(TheorySpec(8, 40, 0.3, 20_000, 4, allow_out_of_regime=True))
    assert report.passed
    assert report["moments.env_mean"].target == pytest.approx(0.3)
    assert report["hoeffding.env_sum_nonpositive"].target == pytest.approx(math.exp(-32 * 0.09 / 2))


def test_suite_threads_match_serial():
    a = run_suite(["loss", "gradients"], 3, threads=1)
    b = run_suite(["gradients", "loss"], 3, threads=2)
    assert a.checks == b.checks
    with pytest.raises(ValueError):
        run_suite(["nope"], 0)
