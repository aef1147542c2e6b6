import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from semagen.quantizer import (Codebook, UsageTracker, quantize,
                               straight_through)


def book_from(rows):
    return Codebook.from_entries(torch.tensor(rows, dtype=torch.float64))


class TestQuantize:
    def test_exact_match_gives_zero_losses(self):
        book = Codebook(8, 4)
        encodings = book.entries[3].detach().expand(5, 5, 4).clone()
        result = quantize(encodings, book)
        assert (result.indices == 3).all()
        assert result.codebook_loss.item() == 0.0
        assert result.commitment_loss.item() == 0.0

    def test_two_entry_assignment(self):
        # d(e0) = 0.9^2 + 0.8^2 = 1.45, d(e1) = 0.1^2 + 0.2^2 = 0.05
        book = book_from([[0.0, 0.0], [1.0, 1.0]])
        result = quantize(torch.tensor([[[0.9, 0.8]]], dtype=torch.float64), book)
        assert result.indices.item() == 1
        assert torch.equal(result.quantized[0, 0],
                           torch.tensor([1.0, 1.0], dtype=torch.float64))

    def test_unit_distance_losses(self):
        book = book_from([[0.0, 0.0], [5.0, 5.0]])
        result = quantize(torch.tensor([[[1.0, 0.0]]], dtype=torch.float64), book)
        assert result.indices.item() == 0
        assert result.codebook_loss.item() == pytest.approx(1.0)
        assert result.commitment_loss.item() == pytest.approx(1.0)

    def test_quantized_equals_codebook_rows_exactly(self):
        book = Codebook(6, 3)
        encodings = torch.randn(4, 4, 3)
        result = quantize(encodings, book)
        expected = book.entries[result.indices].detach()
        assert torch.equal(result.quantized.detach(), expected)

    def test_tie_breaks_to_lowest_index(self):
        book = book_from([[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
        result = quantize(torch.tensor([[[1.0, 1.0]]], dtype=torch.float64), book)
        assert result.indices.item() == 0

    def test_dimension_mismatch_raises(self):
        book = Codebook(4, 8)
        with pytest.raises(ValueError, match="dim"):
            quantize(torch.randn(2, 2, 5), book)

    def test_non_finite_raises(self):
        book = Codebook(4, 2)
        bad = torch.tensor([[[float("nan"), 0.0]]])
        with pytest.raises(ValueError, match="finite"):
            quantize(bad, book)

    def test_idempotent_on_quantized_output(self):
        book = Codebook(16, 4)
        result = quantize(torch.randn(6, 6, 4), book)
        again = quantize(result.quantized.detach(), book)
        assert torch.equal(again.indices, result.indices)
        assert again.codebook_loss.item() == 0.0
        assert again.commitment_loss.item() == 0.0

    def test_codebook_loss_updates_entries_only(self):
        book = Codebook(4, 3)
        encodings = torch.randn(2, 2, 3, requires_grad=True)
        result = quantize(encodings, book)
        result.codebook_loss.backward()
        assert encodings.grad is None or torch.all(encodings.grad == 0)
        assert book.entries.grad is not None

    def test_commitment_loss_updates_encodings_only(self):
        book = Codebook(4, 3)
        encodings = torch.randn(2, 2, 3, requires_grad=True)
        result = quantize(encodings, book)
        result.commitment_loss.backward()
        assert encodings.grad is not None
        assert book.entries.grad is None or torch.all(book.entries.grad == 0)

    @given(st.integers(2, 16), st.integers(1, 8), st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force_scan(self, k, d, seed):
        rng = np.random.default_rng(seed)
        entries = rng.standard_normal((k, d))
        encodings = rng.standard_normal((3, 3, d))
        with torch.no_grad():
            result = quantize(torch.from_numpy(encodings),
                              Codebook.from_entries(torch.from_numpy(entries)))
        dist = ((encodings[:, :, None, :] - entries[None, None]) ** 2).sum(-1)
        assert np.array_equal(result.indices.numpy(), dist.argmin(-1))
        assert result.codebook_loss.item() == pytest.approx(
            dist.min(-1).mean(), rel=1e-12)


class TestStraightThrough:
    def test_forward_is_quantized_bit_for_bit(self):
        book = Codebook(8, 4)
        encodings = torch.randn(3, 3, 4)
        result = quantize(encodings, book)
        out = straight_through(encodings, result.quantized)
        assert torch.equal(out, result.quantized)

    def test_sum_loss_gradient_is_ones(self):
        encodings = torch.randn(4, 4, 2, requires_grad=True)
        quantized = torch.randn(4, 4, 2)
        straight_through(encodings, quantized).sum().backward()
        assert torch.equal(encodings.grad, torch.ones_like(encodings))

    def test_gradient_matches_finite_differences_on_quantized(self):
        # The estimator's gradient w.r.t. encodings must equal the analytic
        # (and numerical) gradient of the loss w.r.t. the quantized tensor.
        torch.manual_seed(3)
        book = Codebook(6, 3).double()
        encodings = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
        decoder = torch.randn(3, 5, dtype=torch.float64)
        target = torch.randn(4, 5, dtype=torch.float64)

        result = quantize(encodings, book)
        loss = ((straight_through(encodings, result.quantized) @ decoder
                 - target) ** 2).mean()
        (grad_enc,) = torch.autograd.grad(loss, encodings)

        q = result.quantized.detach().numpy()
        eps = 1e-6
        fd = np.zeros_like(q)
        for idx in np.ndindex(q.shape):
            for sign in (1.0, -1.0):
                shifted = q.copy()
                shifted[idx] += sign * eps
                val = (((shifted @ decoder.numpy()) - target.numpy()) ** 2).mean()
                fd[idx] += sign * val / (2 * eps)
        np.testing.assert_allclose(grad_enc.numpy(), fd, rtol=1e-5, atol=1e-8)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="shape"):
            straight_through(torch.randn(2, 3), torch.randn(3, 2))

    def test_codebook_gets_no_gradient_through_estimator(self):
        book = Codebook(4, 2)
        encodings = torch.randn(2, 2, requires_grad=True)
        result = quantize(encodings, book)
        out = straight_through(encodings, result.quantized)
        grad = torch.autograd.grad(out.sum(), book.entries, allow_unused=True)[0]
        assert grad is None


class TestUsageTracker:
    def test_degenerate_distribution(self):
        tracker = UsageTracker(8)
        tracker.update(torch.zeros(50, dtype=torch.long))
        assert tracker.perplexity() == pytest.approx(1.0)

    def test_uniform_usage(self):
        tracker = UsageTracker(256)
        tracker.update(torch.arange(256).repeat(4))
        assert tracker.perplexity() == pytest.approx(256.0)

    def test_three_one_split(self):
        tracker = UsageTracker(2)
        tracker.update(torch.tensor([0, 0, 0, 1]))
        expected = math.exp(-(0.75 * math.log(0.75) + 0.25 * math.log(0.25)))
        assert tracker.perplexity() == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx(1.7548, abs=1e-4)

    def test_counts_sum_to_total_positions(self):
        tracker = UsageTracker(16)
        tracker.update(torch.randint(0, 16, (7, 5)))
        tracker.update(torch.randint(0, 16, (3, 5)))
        assert tracker.histogram().sum().item() == 50

    def test_empty_history_raises(self):
        with pytest.raises(ValueError, match="batches"):
            UsageTracker(4).perplexity()

    def test_perplexity_bounds(self):
        tracker = UsageTracker(10)
        tracker.update(torch.randint(0, 10, (100,)))
        assert 1.0 <= tracker.perplexity() <= 10.0


class TestCodebook:
    def test_init_scale_matches_dimension(self):
        torch.manual_seed(0)
        book = Codebook(4096, 64)
        std = book.entries.detach().std().item()
        assert std == pytest.approx(1 / math.sqrt(64), rel=0.05)

    def test_rejects_degenerate_sizes(self):
        with pytest.raises(ValueError):
            Codebook(1, 4)
        with pytest.raises(ValueError):
            Codebook(4, 0)

    def test_from_entries_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Codebook.from_entries(torch.tensor([[1.0], [float("inf")]]))

    def test_entry_order_stable(self):
        entries = torch.randn(5, 3)
        book = Codebook.from_entries(entries)
        assert torch.equal(book.entries.detach(), entries)
