import dataclasses
import math

import numpy as np
import pytest

from pqgalerkin.fespace import FeFunction, FeSpace
from pqgalerkin.galerkin import SolverConfig, run_hierarchy, solve_level
from pqgalerkin.galerkin import ProblemOperator
from pqgalerkin.mesh import Domain, build_mesh
from pqgalerkin.operators import (Problem, adversarial_convection,
                                  constant_convection, constant_weight,
                                  quadratic_weight, saturating_convection,
                                  truncate_weight, zero_convection)
from pqgalerkin.verify import (check_generalized_conditions,
                               check_monotonicity_inequalities,
                               check_strong_condition,
                               check_truncation_consistency,
                               run_certificates,
                               weak_implies_generalized_demo)

UNIT = Domain.interval(0.0, 1.0)


def offset_problem():
    conv = saturating_convection(3.0, alpha=2.0, h_bound=1.0, offset=1.0)
    return Problem(p=3.0, q=2.0, domain=UNIT, weight=quadratic_weight(2.0),
                   convection=conv, variant="competing", regime="H3")


_CACHE = {}


def good_report():
    if "report" not in _CACHE:
        _CACHE["report"] = run_hierarchy(offset_problem(), 4, 3)
    return _CACHE["report"]


def single_dof_solution():
    problem = Problem(p=3.0, q=2.0, domain=UNIT, weight=constant_weight(1.0),
                      convection=constant_convection(1.0),
                      variant="competing", regime="H3")
    weight = truncate_weight(problem.weight, 1.0)
    space = FeSpace(build_mesh(UNIT, 2))
    lv = solve_level(ProblemOperator(problem, weight, space), space)
    return problem, weight, lv.solution


def test_truncation_consistency_on_solved_state():
    problem, weight, u = single_dof_solution()
    cert = check_truncation_consistency(problem, u, weight.radius)
    assert cert.passed
    assert cert.measured <= cert.threshold
    assert cert.details["untruncated_residual_sup"] == cert.measured
    assert cert.details["sup_norm"] <= weight.radius


def test_truncation_flags_state_outside_radius():
    problem, weight, u = single_dof_solution()
    big = FeFunction(u.space, np.array([5.0]))
    cert = check_truncation_consistency(problem, big, weight.radius)
    assert not cert.passed
    assert cert.measured == 5.0
    assert cert.threshold == weight.radius
    assert cert.details["excess"] == 4.0


def test_truncation_zero_state_without_load():
    problem = Problem(p=3.0, q=2.0, domain=UNIT, weight=quadratic_weight(2.0),
                      convection=zero_convection(),
                      variant="competing", regime="H3")
    space = FeSpace(build_mesh(UNIT, 4))
    cert = check_truncation_consistency(problem, FeFunction.zero(space), 1.0)
    assert cert.passed
    assert cert.measured == 0.0


def test_generalized_conditions_pass_on_good_run():
    certs = check_generalized_conditions(good_report())
    names = [c.name for c in certs]
    assert names == ["condition-b", "condition-c", "condition-c-routes",
                     "self-pairing-bookkeeping"]
    assert all(c.passed for c in certs)
    b = certs[0]
    assert len(b.details["per_level_max"]) == len(good_report().levels)
    c = certs[1]
    assert c.details["sequence"][-1] == 0.0


def test_strong_condition_certificates():
    certs = check_strong_condition(good_report())
    assert [c.name for c in certs] == ["cprime-identity", "condition-cprime"]
    assert all(c.passed and not c.skipped for c in certs)
    growth = certs[1].details["growth_exponents"]
    assert growth["gradient"] == 2.0


def test_strong_condition_skipped_without_declared_growth():
    report = good_report()
    bare = Problem(p=3.0, q=2.0, domain=UNIT, weight=constant_weight(2.0),
                   convection=adversarial_convection(1.0, 3.0),
                   variant="competing", regime="H3")
    certs = check_strong_condition(dataclasses.replace(report, problem=bare))
    assert len(certs) == 1
    assert certs[0].skipped and certs[0].passed
    assert "growth exponents" in certs[0].reason


def test_monotonicity_certificates():
    space = FeSpace(build_mesh(UNIT, 8))
    certs = check_monotonicity_inequalities(4.0, 2.0, space, samples=50)
    assert [c.name for c in certs] == ["monotonicity-p", "monotonicity-q"]
    for c in certs:
        assert c.passed and not c.skipped
        assert c.details["violations"] == 0
        assert c.measured >= 0.0


def test_monotonicity_skips_subquadratic_exponent():
    space = FeSpace(build_mesh(UNIT, 4))
    certs = check_monotonicity_inequalities(3.0, 1.5, space, samples=10)
    q_cert = certs[1]
    assert q_cert.skipped and q_cert.passed
    assert math.isnan(q_cert.measured)
    assert not certs[0].skipped


def test_weak_implies_generalized_demo_passes():
    problem, weight, u = single_dof_solution()
    cert = weak_implies_generalized_demo(problem, weight, u)
    assert cert.passed
    assert cert.details["c_value"] == 0.0
    assert cert.details["b_max"] == cert.measured


def test_weak_implies_generalized_demo_rejects_perturbed():
    problem, weight, u = single_dof_solution()
    fake = FeFunction(u.space, u.coeffs + 0.5)
    cert = weak_implies_generalized_demo(problem, weight, fake)
    assert not cert.passed
    assert cert.measured > 100.0 * cert.threshold


def test_run_certificates_all_pass():
    result = run_certificates(good_report())
    assert result["all_passed"]
    names = [c["name"] for c in result["certificates"]]
    assert names == ["truncation-consistency", "condition-b", "condition-c",
                     "condition-c-routes", "self-pairing-bookkeeping",
                     "cprime-identity", "condition-cprime", "monotonicity-p",
                     "monotonicity-q", "weak-implies-generalized",
                     "non-solution-contrast", "report-consistency"]
    assert result["s_probe"]["pairings_vanish"]


def test_run_certificates_contrast_sees_violation():
    result = run_certificates(good_report())
    contrast = next(c for c in result["certificates"]
                    if c["name"] == "non-solution-contrast")
    assert contrast["passed"]
    assert contrast["measured"] > contrast["threshold"]


def test_run_certificates_rejects_failed_report():
    report = run_hierarchy(offset_problem(), 4, 2,
                           cfg=SolverConfig(max_iterations=1))
    assert report.failed_level == 0
    with pytest.raises(ValueError, match="failed or missing"):
        run_certificates(report)


def test_tampered_truncation_radius_fails():
    report = dataclasses.replace(good_report(), truncation_radius=1e-3)
    result = run_certificates(report)
    assert not result["all_passed"]
    trunc = next(c for c in result["certificates"]
                 if c["name"] == "truncation-consistency")
    assert not trunc["passed"]
    assert trunc["details"]["excess"] > 0.0


def test_tampered_norm_table_fails_consistency():
    report = good_report()
    wrong = [g + 1e-3 for g in report.grad_norms]
    result = run_certificates(dataclasses.replace(report, grad_norms=wrong))
    assert not result["all_passed"]
    cons = next(c for c in result["certificates"]
                if c["name"] == "report-consistency")
    assert not cons["passed"]


def test_certificate_serialization():
    problem, weight, u = single_dof_solution()
    d = check_truncation_consistency(problem, u, weight.radius).to_dict()
    assert isinstance(d["passed"], bool)
    assert isinstance(d["measured"], float)
    assert d["name"] == "truncation-consistency"
    assert d["skipped"] is False
