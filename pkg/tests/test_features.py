import numpy as np
import pytest

from virtualimu import features
from virtualimu.errors import ParameterError, StateError
from virtualimu.signals import Window


def make_window(samples, subject="S1", activity="Walking"):
    return Window(start_time=0.0, samples=np.asarray(samples, dtype=float),
                  subject_id=subject, activity_label=activity)


# --- independent brute-force statistics oracle (pure python) -----------------


def brute_percentile(sorted_vals, q):
    """Linear interpolation between closest ranks, inclusive."""
    n = len(sorted_vals)
    pos = (q / 100.0) * (n - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    frac = pos - lo
    return sorted_vals[lo] * (1 - frac) + sorted_vals[hi] * frac


def brute_stats(vals):
    s = sorted(float(v) for v in vals)
    n = len(s)
    mean = sum(s) / n
    med = 0.5 * (s[(n - 1) // 2] + s[n // 2])
    var = sum((v - mean) ** 2 for v in s) / n
    return [mean, med, var, brute_percentile(s, 25), brute_percentile(s, 75), s[0], s[-1]]


def brute_features(window):
    out = []
    for c in range(4):
        out.extend(brute_stats(window.samples[c]))
    return np.array(out)


class TestComputeFeatures:
    def test_constant_window(self):
        fv = features.compute_features(make_window(np.ones((4, 50))))
        expect = np.tile([1, 1, 0, 1, 1, 1, 1], 4)
        assert np.allclose(fv.values, expect, atol=0)

    def test_small_fixture(self):
        # avg 2.5, med 2.5, var 1.25, lq 1.75, uq 3.25, min 1, max 4
        fv = features.compute_features(make_window(np.tile([1.0, 2.0, 3.0, 4.0], (4, 1))))
        per_channel = [2.5, 2.5, 1.25, 1.75, 3.25, 1.0, 4.0]
        assert np.allclose(fv.values, np.tile(per_channel, 4), atol=0)

    def test_matches_brute_force_on_random_windows(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            w = make_window(rng.normal(size=(4, 50)))
            assert np.max(np.abs(features.compute_features(w).values - brute_features(w))) <= 1e-9

    def test_order_statistics_sorted(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            fv = features.compute_features(make_window(rng.normal(size=(4, 50)))).values
            for c in range(4):
                _, med, _, lq, uq, lo, hi = fv[c * 7 : (c + 1) * 7]
                assert lo <= lq <= med <= uq <= hi

    def test_permutation_invariant_exactly(self):
        rng = np.random.default_rng(3)
        w = make_window(rng.normal(size=(4, 50)))
        perm = rng.permutation(50)
        wp = make_window(w.samples[:, perm])
        assert np.array_equal(features.compute_features(w).values,
                              features.compute_features(wp).values)

    def test_shift_equivariance(self):
        # dyadic samples, a dyadic shift, and a power-of-two sample count keep
        # every operation exact in binary floating point
        rng = np.random.default_rng(11)
        base = rng.integers(-512, 512, size=(4, 64)) / 1024.0
        c = 3.25
        f0 = features.compute_features(make_window(base)).values
        f1 = features.compute_features(make_window(base + c)).values
        for ch in range(4):
            s = slice(ch * 7, (ch + 1) * 7)
            avg, med, var, lq, uq, lo, hi = f0[s]
            avg1, med1, var1, lq1, uq1, lo1, hi1 = f1[s]
            assert (avg1, med1, lq1, uq1, lo1, hi1) == (avg + c, med + c, lq + c, uq + c, lo + c, hi + c)
            assert var1 == var

    def test_scale_equivariance(self):
        rng = np.random.default_rng(12)
        base = rng.integers(-512, 512, size=(4, 50)) / 1024.0
        k = 4.0  # power of two: exact in floating point
        f0 = features.compute_features(make_window(base)).values
        f1 = features.compute_features(make_window(base * k)).values
        for ch in range(4):
            s = slice(ch * 7, (ch + 1) * 7)
            avg, med, var, lq, uq, lo, hi = f0[s]
            avg1, med1, var1, lq1, uq1, lo1, hi1 = f1[s]
            assert (avg1, med1, lq1, uq1, lo1, hi1) == (k * avg, k * med, k * lq, k * uq, k * lo, k * hi)
            assert var1 == k * k * var

    def test_feature_names_order(self):
        assert features.FEATURE_NAMES[0] == "x_avg"
        assert features.FEATURE_NAMES[7] == "y_avg"
        assert features.FEATURE_NAMES[-1] == "tot_max"
        assert len(features.FEATURE_NAMES) == 28


class TestScaler:
    def vecs(self, X):
        return [
            features.FeatureVector(values=row, subject_id="S1", activity_label="Walking")
            for row in X
        ]

    def test_single_vector_clamps_std(self):
        v = np.arange(28, dtype=float)
        scaler = features.fit_scaler(self.vecs(v[None, :]))
        assert np.array_equal(scaler.mean, v)
        assert np.array_equal(scaler.std, np.ones(28))

    def test_symmetric_pair(self):
        v = np.linspace(1.0, 3.0, 28)
        scaler = features.fit_scaler(self.vecs(np.stack([v, -v])))
        assert np.allclose(scaler.mean, 0.0, atol=1e-15)
        assert np.allclose(scaler.std, np.abs(v))

    def test_self_consistency(self):
        rng = np.random.default_rng(21)
        X = rng.normal(2.0, 3.0, size=(100, 28))
        scaler = features.fit_scaler(self.vecs(X))
        Z = features.apply_scaler_matrix(scaler, X)
        assert np.max(np.abs(Z.mean(axis=0))) <= 1e-9
        assert np.max(np.abs(Z.std(axis=0) - 1.0)) <= 1e-9

    def test_centering_and_unit(self):
        rng = np.random.default_rng(22)
        X = rng.normal(size=(50, 28))
        scaler = features.fit_scaler(self.vecs(X))
        at_mean = features.apply_scaler(scaler, self.vecs(scaler.mean[None, :])[0])
        assert np.allclose(at_mean.values, 0.0, atol=1e-12)
        plus_one = features.apply_scaler(scaler, self.vecs((scaler.mean + scaler.std)[None, :])[0])
        assert np.allclose(plus_one.values, 1.0, atol=1e-12)

    def test_round_trip(self):
        rng = np.random.default_rng(23)
        X = rng.normal(size=(30, 28))
        scaler = features.fit_scaler(self.vecs(X))
        v = self.vecs(rng.normal(size=(1, 28)))[0]
        back = features.invert_scaler(scaler, features.apply_scaler(scaler, v))
        assert np.max(np.abs(back.values - v.values)) <= 1e-12

    def test_double_standardization_rejected(self):
        X = np.random.default_rng(24).normal(size=(10, 28))
        scaler = features.fit_scaler(self.vecs(X))
        v = features.apply_scaler(scaler, self.vecs(X[:1])[0])
        with pytest.raises(StateError):
            features.apply_scaler(scaler, v)

    def test_fit_on_standardized_rejected(self):
        X = np.random.default_rng(25).normal(size=(10, 28))
        scaler = features.fit_scaler(self.vecs(X))
        std_vecs = [features.apply_scaler(scaler, v) for v in self.vecs(X)]
        with pytest.raises(StateError):
            features.fit_scaler(std_vecs)

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            features.fit_scaler([])


class TestCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(31)
        vecs = [
            features.FeatureVector(values=rng.normal(size=28), subject_id=f"S{i%3}",
                                   activity_label="Cleaning")
            for i in range(7)
        ]
        path = tmp_path / "f.csv"
        features.save_features_csv(vecs, path)
        again = features.load_features_csv(path)
        assert len(again) == 7
        for a, b in zip(again, vecs):
            assert np.array_equal(a.values, b.values)
            assert a.subject_id == b.subject_id
            assert not a.standardized

    def test_header_names(self, tmp_path):
        vecs = [features.FeatureVector(values=np.zeros(28), subject_id="S1",
                                       activity_label="Walking")]
        path = tmp_path / "f.csv"
        features.save_features_csv(vecs, path)
        header = path.read_text().splitlines()[0]
        assert header.startswith("subject,activity,x_avg,x_med,x_var,x_lq,x_uq,x_min,x_max,y_avg")
        assert header.endswith("tot_min,tot_max")
