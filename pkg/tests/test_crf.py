import math

import numpy as np
import pytest
import torch

from disappearing_entity_tool.bilou import TagSet, spans_to_tags
from disappearing_entity_tool.crf_helper import MaskedCRF, forward_score, path_score, viterbi
from disappearing_entity_tool.errors import IllegalTagSequenceError

TAGSET = TagSet(["PERSON", "GROUP"])


def _legal_paths(tagset, length):
    def extend(prefix):
        if len(prefix) == length:
            if tagset.end_mask[prefix[-1]]:
                yield list(prefix)
            return
        for tag in range(len(tagset)):
            if not prefix and not tagset.start_mask[tag]:
                continue
            if prefix and not tagset.transition_mask[prefix[-1], tag]:
                continue
            yield from extend(prefix + [tag])
    return list(extend([]))


PATHS = {n: _legal_paths(TAGSET, n) for n in range(1, 6)}


def _random_weights(rng, tagset):
    trans = np.where(tagset.transition_mask, rng.normal(0.0, 1.0, tagset.transition_mask.shape), -np.inf)
    start = np.where(tagset.start_mask, rng.normal(0.0, 1.0, len(tagset)), -np.inf)
    end = np.where(tagset.end_mask, rng.normal(0.0, 1.0, len(tagset)), -np.inf)
    return trans, start, end


def test_legal_paths_are_bilou():
    for paths in PATHS.values():
        assert all(TAGSET.is_legal_path(p) for p in paths)


def test_exact_inference_matches_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        length = int(rng.integers(1, 6))
        emissions = rng.normal(0.0, 2.0, (length, len(TAGSET)))
        trans, start, end = _random_weights(rng, TAGSET)
        scores = [path_score(emissions, trans, start, end, p) for p in PATHS[length]]
        best = int(np.argmax(scores))
        expected_log_z = float(np.logaddexp.reduce(scores))

        path, score = viterbi(emissions, trans, start, end)
        assert path == PATHS[length][best]
        assert score == pytest.approx(scores[best], abs=1e-8)
        assert forward_score(emissions, trans, start, end) == pytest.approx(expected_log_z, abs=1e-8)


def test_viterbi_ties_pick_smallest_indices():
    tagset = TagSet(["PERSON"])
    crf = MaskedCRF(tagset)
    path, score = viterbi(np.zeros((2, len(tagset))), *crf.numpy_weights())
    assert tagset.decode(path) == ["O", "O"]
    assert score == 0.0


def test_viterbi_avoids_masked_transition():
    tagset = TagSet(["PERSON"])
    crf = MaskedCRF(tagset)
    emissions = np.zeros((2, len(tagset)))
    emissions[0, tagset.index["B-PERSON"]] = 5.0
    emissions[1, tagset.index["O"]] = 4.0
    path, score = viterbi(emissions, *crf.numpy_weights())
    assert tagset.decode(path) == ["B-PERSON", "L-PERSON"]
    assert score == pytest.approx(5.0)


def test_single_token_uniform_is_log_two():
    tagset = TagSet(["PERSON"])
    crf = MaskedCRF(tagset)
    assert forward_score(np.zeros((1, len(tagset))), *crf.numpy_weights()) == pytest.approx(math.log(2))
    emissions = torch.zeros(1, 1, len(tagset))
    lengths = torch.tensor([1])
    assert float(crf.log_partition(emissions, lengths)[0]) == pytest.approx(math.log(2))
    gold = torch.tensor([[tagset.index["U-PERSON"]]])
    assert float(crf.nll(emissions, gold, lengths)[0]) == pytest.approx(math.log(2))


def test_nll_rejects_illegal_gold():
    tagset = TagSet(["PERSON"])
    crf = MaskedCRF(tagset)
    gold = torch.tensor([[tagset.index["I-PERSON"]]])
    with pytest.raises(IllegalTagSequenceError):
        crf.nll(torch.zeros(1, 1, len(tagset)), gold, torch.tensor([1]))


def test_batched_torch_crf_matches_numpy():
    torch.manual_seed(0)
    crf = MaskedCRF(TAGSET).double()
    with torch.no_grad():
        for param in crf.parameters():
            param.normal_()
    lengths = torch.tensor([4, 1, 3])
    emissions = torch.randn(3, 4, len(TAGSET), dtype=torch.float64)
    gold_rows = []
    for length in lengths.tolist():
        spans = [(0, 1, "GROUP")] if length == 1 else [(0, 2, "PERSON")]
        tags = TAGSET.encode(spans_to_tags(length, spans))
        gold_rows.append(tags + [0] * (4 - length))
    gold = torch.tensor(gold_rows)

    log_z = crf.log_partition(emissions, lengths)
    nll = crf.nll(emissions, gold, lengths)
    weights = crf.numpy_weights()
    for row, length in enumerate(lengths.tolist()):
        e = emissions[row, :length].numpy()
        expected = forward_score(e, *weights)
        assert float(log_z[row]) == pytest.approx(expected, abs=1e-9)
        gold_score = path_score(e, *weights, gold_rows[row][:length])
        assert float(nll[row]) == pytest.approx(expected - gold_score, abs=1e-9)
        assert float(nll[row]) >= 0.0


def test_nll_approaches_zero_when_gold_dominates():
    tagset = TagSet(["PERSON"])
    crf = MaskedCRF(tagset)
    emissions = torch.zeros(1, 1, len(tagset))
    emissions[0, 0, tagset.index["U-PERSON"]] = 40.0
    gold = torch.tensor([[tagset.index["U-PERSON"]]])
    assert float(crf.nll(emissions, gold, torch.tensor([1]))[0]) < 1e-12
