"""Explicit-state model checker for the protocol tables."""

import pytest

from cohsim.checker import CheckConfig, CheckResult, MUTATIONS, check


class TestVerification:
    @pytest.mark.parametrize("protocol", ["mesi", "moesif"])
    def test_two_caches_exhaustive(self, protocol):
        result = check(CheckConfig(protocol=protocol, caches=2))
        assert result.verified and result.exhaustive
        assert result.violation is None
        assert "verified" in result.summary().lower()

    def test_three_caches_mesi(self):
        result = check(CheckConfig(protocol="mesi", caches=3))
        assert result.verified and result.exhaustive

    def test_deterministic(self):
        a = check(CheckConfig(protocol="mesi", caches=2))
        b = check(CheckConfig(protocol="mesi", caches=2))
        assert (a.states, a.depth) == (b.states, b.depth)

    def test_bounded_run_is_not_exhaustive(self):
        result = check(CheckConfig(protocol="mesi", caches=3,
                                   max_states=100))
        assert result.verified and not result.exhaustive
        assert result.states <= 100


class TestMutations:
    @pytest.mark.parametrize("mutation", MUTATIONS)
    @pytest.mark.parametrize("protocol", ["mesi", "moesif"])
    def test_seeded_bug_is_caught_with_short_counterexample(self, protocol,
                                                            mutation):
        result = check(CheckConfig(protocol=protocol, caches=3,
                                   mutation=mutation))
        assert not result.verified, mutation
        assert result.violation is not None
        assert result.trace, "counterexample trace missing"
        assert result.depth <= 12
        # Every trace step is a human-readable transition label.
        assert all(isinstance(step, str) and step for step in result.trace)

    def test_mutations_deterministic(self):
        a = check(CheckConfig(protocol="moesif", caches=2,
                              mutation="drop-invalidations"))
        b = check(CheckConfig(protocol="moesif", caches=2,
                              mutation="drop-invalidations"))
        assert a.trace == b.trace

    def test_unknown_mutation_rejected(self):
        with pytest.raises((ValueError, KeyError)):
            check(CheckConfig(protocol="mesi", caches=2, mutation="nonsense"))
