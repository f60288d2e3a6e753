import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from fusion.correspondence import (
    CandidateCorrespondence, FileDescriptorProvider, LocalFeatureSet, PlaceDescriptor, SimilarityCache,
    SyntheticDescriptorProvider, ThresholdStore, best_verified, mutual_matches, propose_candidates,
    raise_threshold, read_descriptor_sidecar, verify_candidate, write_descriptor_sidecar,
)
from fusion.exceptions import FormatError

from .fixtures import camera_pose


def unit(values):
    values = np.asarray(values, dtype=np.float64)
    return values / np.linalg.norm(values)


def descriptor(agent, seq, values):
    return PlaceDescriptor((agent, seq), unit(values))


class MatchingTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.base = self.rng.normal(size=(20, 32))

    def test_permuted_copies_match_one_to_one(self):
        order = self.rng.permutation(20)
        other = self.base[order] + self.rng.normal(scale=0.01, size=(20, 32))
        matches = mutual_matches(self.base, other)
        self.assertEqual(len(matches), 20)
        for a, b in matches:
            self.assertEqual(order[b], a)

    def test_ambiguous_descriptors_fail_the_ratio_test(self):
        offset = 0.01 * self.rng.normal(size=32)
        twin = np.vstack([self.base[:1] + offset, self.base[:1] - offset, self.base[1:5]])
        matches = mutual_matches(self.base[:5], twin)
        self.assertNotIn(0, matches[:, 0])
        self.assertEqual(len(matches), 4)

    def test_empty_sets_give_no_matches(self):
        self.assertEqual(mutual_matches(np.zeros((0, 32)), self.base).shape, (0, 2))

    def test_verification_uses_the_smaller_set(self):
        candidate = CandidateCorrespondence((0, 1), (1, 4), 0.8)
        feats_i = LocalFeatureSet(np.zeros((20, 2)), self.base)
        feats_j = LocalFeatureSet(np.zeros((5, 2)), self.base[:5] + 0.001)
        result = verify_candidate(candidate, feats_i, feats_j, xi=0.5)
        self.assertTrue(result.verified)
        self.assertAlmostEqual(result.match_ratio, 1.0)
        self.assertEqual(result.frame_j, (1, 4))

    def test_unrelated_features_are_rejected(self):
        candidate = CandidateCorrespondence((0, 1), (1, 4), 0.8)
        feats_i = LocalFeatureSet(np.zeros((20, 2)), self.base)
        feats_j = LocalFeatureSet(np.zeros((20, 2)), self.rng.normal(size=(20, 32)))
        self.assertFalse(verify_candidate(candidate, feats_i, feats_j, xi=0.25).verified)
        self.assertFalse(verify_candidate(candidate, feats_i, LocalFeatureSet.empty(32)).verified)

    def test_best_verified_stops_at_the_first_success(self):
        good = LocalFeatureSet(np.zeros((20, 2)), self.base)
        bad = LocalFeatureSet(np.zeros((20, 2)), self.rng.normal(size=(20, 32)))
        lookup = {(0, 0): good, (1, 0): bad, (1, 1): good, (1, 2): good}
        candidates = [CandidateCorrespondence((0, 0), (1, k), 0.9 - 0.1 * k) for k in range(3)]
        verified, checked = best_verified(candidates, lookup.get, xi=0.5)
        self.assertEqual(verified.frame_j, (1, 1))
        self.assertEqual(len(checked), 2)
        verified, checked = best_verified(candidates, lookup.get, xi=0.5, limit=1)
        self.assertIsNone(verified)
        self.assertEqual(len(checked), 1)


class ThresholdTests(SimpleTestCase):

    def test_thresholds_only_grow(self):
        store = ThresholdStore(0.1)
        self.assertEqual(store.get((0, 1)), 0.1)
        self.assertEqual(store.raise_to((0, 1), 0.5), 0.5)
        self.assertEqual(store.raise_to((0, 1), 0.3), 0.5)
        self.assertEqual(store.get((0, 2)), 0.1)

    def test_raise_uses_the_mean_of_cleared_similarities(self):
        store = ThresholdStore(0.2)
        self.assertAlmostEqual(raise_threshold((0, 1), [0.1, 0.4, 0.6], store), 0.5)
        self.assertAlmostEqual(raise_threshold((0, 1), [0.1, 0.3], store), 0.5)

    def test_inflated_pair_stops_being_proposed(self):
        rng = np.random.default_rng(5)
        shared = rng.normal(size=16)
        aligned = [descriptor(0, k, shared + 0.3 * rng.normal(size=16)) for k in range(6)]
        waiting = [descriptor(1, k, shared + 0.3 * rng.normal(size=16)) for k in range(6)]
        store = ThresholdStore(0.1)
        cache = SimilarityCache()
        gammas = []
        for _ in range(100):
            proposals = propose_candidates(waiting, aligned, store, cache)
            if not proposals:
                break
            # nothing verifies: raise the threshold over everything proposed
            gammas.append(raise_threshold((0, 1), [c.place_similarity for c in proposals], store))
        else:
            self.fail('threshold never rose above the inflated similarities')
        self.assertTrue(all(b > a for a, b in zip(gammas, gammas[1:])))
        self.assertGreater(store.get((0, 1)), 0.5)
        self.assertGreater(cache.hits, 0)
        self.assertEqual(len(cache), 36)


class ProposalTests(SimpleTestCase):

    def test_candidates_are_cross_agent_and_best_first(self):
        aligned = [descriptor(0, 0, [1, 0, 0]), descriptor(0, 1, [0, 1, 0])]
        waiting = [descriptor(1, 0, [1, 0.1, 0]), descriptor(1, 1, [0.2, 1, 0]), descriptor(0, 2, [1, 0, 0])]
        candidates = propose_candidates(waiting, aligned, ThresholdStore(0.5))
        self.assertEqual([(c.frame_i, c.frame_j) for c in candidates], [((0, 0), (1, 0)), ((0, 1), (1, 1))])
        self.assertGreater(candidates[0].place_similarity, candidates[1].place_similarity)
        self.assertEqual(candidates[0].pair, (0, 1))

    def test_nothing_to_compare(self):
        self.assertEqual(propose_candidates([], [descriptor(0, 0, [1, 0])], ThresholdStore()), [])

    def test_descriptors_must_be_unit_norm(self):
        with self.assertRaises(ValueError):
            PlaceDescriptor((0, 0), [1.0, 1.0])


class DescriptorProviderTests(SimpleTestCase):

    def test_nearby_views_score_higher(self):
        poses = {
            (0, 0): camera_pose((0.0, -2.0, 0.3)),
            (1, 0): camera_pose((0.05, -2.0, 0.3)),
            (1, 1): camera_pose((2.0, 0.5, 1.5)),
        }
        provider = SyntheticDescriptorProvider(lambda a, s: poses.get((a, s)), dim=64, seed=1)
        here = provider.describe(0, 0).vector
        self.assertGreater(here @ provider.describe(1, 0).vector, here @ provider.describe(1, 1).vector)
        self.assertIsNone(provider.describe(2, 0))

    def test_device_bias_inflates_same_device_pairs(self):
        poses = {(0, 0): camera_pose((0.0, -2.0, 0.3)), (1, 0): camera_pose((2.0, 0.5, 1.5))}
        plain = SyntheticDescriptorProvider(lambda a, s: poses.get((a, s)), seed=2)
        biased = SyntheticDescriptorProvider(lambda a, s: poses.get((a, s)), seed=2, device_bias=1.0,
                                             devices={0: 'phone', 1: 'phone'})

        def similarity(provider):
            return provider.describe(0, 0).vector @ provider.describe(1, 0).vector

        self.assertGreater(similarity(biased), similarity(plain))

    def test_sidecar_round_trip_and_errors(self):
        descs = [descriptor(0, 3, [1, 2, 3, 4]), descriptor(2, 7, [0, 0, 1, 0])]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'run.hdsc')
            write_descriptor_sidecar(path, descs, 4)
            dim, records = read_descriptor_sidecar(path)
            self.assertEqual(dim, 4)
            np.testing.assert_allclose(records[(0, 3)], descs[0].vector, atol=1e-6)
            provider = FileDescriptorProvider(path)
            self.assertEqual(len(provider), 2)
            self.assertIsNone(provider.describe(1, 1))

            with open(path, 'r+b') as fh:
                fh.write(b'XXXX')
            with self.assertRaises(FormatError):
                read_descriptor_sidecar(path)
            with self.assertRaises(FormatError):
                write_descriptor_sidecar(path, descs, 3)
