import math

import numpy as np
import pytest

from nudg.sampler import (
    DomainTag,
    OutOfRegimeError,
    Synthetic2dSpec,
    TheorySpec,
    d_gamma_from_uniform,
    iter_theory_chunks,
    recovered_latents,
    sample_d_gamma,
    sample_synthetic2d,
    sample_theory,
    write_batch_csv,
)


def test_d_gamma_symmetric_mean():
    n = 10**6
    z = sample_d_gamma(0.0, n, 1)
    assert abs(z.mean()) < 4 * (1 / math.sqrt(3)) / math.sqrt(n)
    assert z.min() >= -1 and z.max() <= 1


def test_d_gamma_moments():
    n = 10**6
    z = sample_d_gamma(0.3, n, 2)
    var = 1 / 3 - 0.09
    assert abs(z.mean() - 0.3) < 4 * math.sqrt(var / n)
    # Var of z^2 terms bounded by E[z^4] = 1/5
    assert abs(z.var() - var) < 4 * math.sqrt(1 / 5 / n)


def test_d_gamma_positive_mass():
    n = 10**5
    z = sample_d_gamma(0.45, n, 3)
    p = np.mean(z >= 0)
    assert abs(p - 0.95) < 4 * math.sqrt(0.95 * 0.05 / n)


def test_d_gamma_inverse_cdf_breakpoints():
    gamma = 0.2
    q = 0.5 - gamma
    np.testing.assert_allclose(d_gamma_from_uniform(np.array([1e-12, q, 1 - 1e-12]), gamma), [-1, 0, 1], atol=1e-9)


def test_d_gamma_rejects_bad_gamma():
    with pytest.raises(ValueError):
        sample_d_gamma(0.5, 10, 0)


@pytest.mark.parametrize("domain, target", [(DomainTag.ID, 0.7), (DomainTag.OOD, 0.3)])
def test_synthetic2d_flip_probability(domain, target):
    n = 10**5
    b = sample_synthetic2d(Synthetic2dSpec(n, 4, domain))
    agree = np.mean(np.sign(b.inputs[:, 1]) == b.labels)
    assert abs(agree - target) < 4 * math.sqrt(0.21 / n)
    assert np.all(np.sign(b.inputs[:, 0]) == b.labels)
    assert set(np.unique(b.labels)) == {-1.0, 1.0}
    assert abs(np.mean(b.labels)) < 4 / math.sqrt(n)


def test_synthetic2d_validation():
    with pytest.raises(ValueError):
        Synthetic2dSpec(10, 0, flip_prob=0.5)
    with pytest.raises(ValueError):
        Synthetic2dSpec(0, 0)


def test_theory_regime_enforced():
    with pytest.raises(OutOfRegimeError):
        TheorySpec(4, 8, 0.4, 10, 0)
    assert not TheorySpec(4, 8, 0.4, 10, 0, allow_out_of_regime=True).in_regime
    assert TheorySpec(49, 300, 0.45, 10, 0).in_regime
    with pytest.raises(ValueError):
        TheorySpec(8, 8, 0.45, 10, 0, allow_out_of_regime=True)


def test_theory_gamma_zero_domains_match():
    n = 10**5
    spec = TheorySpec(4, 8, 0.0, n, 5, allow_out_of_regime=True)
    a = recovered_latents(sample_theory(spec))[:, 4:]
    b = recovered_latents(sample_theory(spec.replace(domain=DomainTag.OOD)))[:, 4:]
    se = np.sqrt(a.var(axis=0) / n + b.var(axis=0) / n)
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) < 4 * se)


@pytest.mark.parametrize("domain, env_mean", [(DomainTag.ID, 0.45), (DomainTag.OOD, -0.45)])
def test_theory_coordinate_means(domain, env_mean):
    n = 100_000
    spec = TheorySpec(49, 300, 0.45, n, 6, domain=domain)
    z = recovered_latents(sample_theory(spec))
    m = z.mean(axis=0)
    se_r = math.sqrt(1 / 12 / n)
    se_u = math.sqrt((1 / 3 - 0.45**2) / n)
    # pooled over each group, then the worst single coordinate with a Bonferroni-sized band
    assert abs(m[:49].mean() - 0.5) < 4 * se_r / 7
    assert abs(m[49:].mean() - env_mean) < 4 * se_u / math.sqrt(251)
    assert np.all(np.abs(m[:49] - 0.5) < 5 * se_r)
    assert np.all(np.abs(m[49:] - env_mean) < 5 * se_u)
    assert np.all((z[:, :49] >= 0) & (z[:, :49] <= 1))


def test_theory_independence_neighbouring_coordinates():
    n = 100_000
    z = recovered_latents(sample_theory(TheorySpec(4, 12, 0.3, n, 8, allow_out_of_regime=True)))
    c = np.corrcoef(z, rowvar=False)
    pairs = np.abs(np.diag(c, 1))
    assert np.all(pairs < 4 / math.sqrt(n))


def test_determinism_and_chunking():
    spec = TheorySpec(3, 7, 0.2, 20_000, 9, allow_out_of_regime=True)
    a, b = sample_theory(spec), sample_theory(spec)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)
    small = np.concatenate([c.inputs for c in iter_theory_chunks(spec, chunk_rows=777)])
    assert np.array_equal(small, a.inputs)
    prefix = sample_theory(spec.replace(n=5000))
    assert np.array_equal(prefix.inputs, a.inputs[:5000])


def test_seeds_and_domains_give_distinct_streams():
    a = sample_synthetic2d(Synthetic2dSpec(100, 0))
    b = sample_synthetic2d(Synthetic2dSpec(100, 1))
    c = sample_synthetic2d(Synthetic2dSpec(100, 0, DomainTag.OOD))
    assert not np.array_equal(a.inputs, b.inputs)
    assert not np.array_equal(a.inputs, c.inputs)


def test_csv_export_round_trip(tmp_path):
    b = sample_theory(TheorySpec(2, 4, 0.3, 25, 0, allow_out_of_regime=True))
    path = tmp_path / "batch.csv"
    write_batch_csv(b, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x0,x1,x2,x3,y,domain"
    assert len(lines) == 26
    data = np.array([[float(v) for v in line.split(",")[:5]] for line in lines[1:]])
    assert np.array_equal(data[:, :4], b.inputs)
    assert np.array_equal(data[:, 4], b.labels)
    assert all(line.endswith(",ID") for line in lines[1:])
