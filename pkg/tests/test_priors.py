import math

import numpy as np
import pytest
import torch
from scipy import stats

from semagen.config import PriorConfig
from semagen.priors import AutoregressivePrior, CausalConv2d


def make_prior(vocab=8, grid=(8, 8), conditioned=False, **kw):
    params = dict(grid_height=grid[0], grid_width=grid[1], vocab_size=vocab,
                  hidden_dim=32, residual_dim=16, residual_blocks=2,
                  attention_dim=16, attention_heads=2, dropout=0.1)
    if conditioned:
        params.update(conditional_residual_blocks=1, conditional_residual_dim=8,
                      condition_embedding_dim=8, condition_classes=5)
    params.update(kw)
    return AutoregressivePrior(PriorConfig(**params))


def randomize_head(model, seed=0):
    torch.manual_seed(seed)
    torch.nn.init.normal_(model.head_out.weight, std=0.1)
    torch.nn.init.normal_(model.head_out.bias, std=0.1)
    return model


class TestCausalConv:
    def test_mask_excludes_future(self):
        conv = CausalConv2d(1, 1, 3, include_center=False)
        mask = conv.mask[0, 0]
        assert mask[0].tolist() == [1, 1, 1]
        assert mask[1].tolist() == [1, 0, 0]
        assert mask[2].tolist() == [0, 0, 0]

    def test_center_included_variant(self):
        conv = CausalConv2d(1, 1, 3, include_center=True)
        assert conv.mask[0, 0, 1, 1] == 1.0


class TestCausality:
    def test_last_position_influences_nothing(self):
        model = randomize_head(make_prior()).eval()
        tokens = torch.randint(0, 8, (4, 8, 8))
        changed = tokens.clone()
        changed[:, 7, 7] = (changed[:, 7, 7] + 3) % 8
        with torch.no_grad():
            assert torch.equal(model(tokens), model(changed))

    def test_perturbation_only_affects_later_positions(self):
        model = randomize_head(make_prior()).eval()
        rng = np.random.default_rng(0)
        for _ in range(50):
            tokens = torch.from_numpy(rng.integers(0, 8, (1, 8, 8)))
            p = int(rng.integers(0, 64))
            changed = tokens.clone()
            changed[0, p // 8, p % 8] = (changed[0, p // 8, p % 8] + 1) % 8
            with torch.no_grad():
                a = model(tokens).reshape(64, 8)
                b = model(changed).reshape(64, 8)
            assert torch.equal(a[: p + 1], b[: p + 1])

    def test_first_position_depends_only_on_condition(self):
        model = randomize_head(make_prior(conditioned=True)).eval()
        cond = torch.randint(0, 5, (1, 8, 8))
        with torch.no_grad():
            a = model(torch.zeros(1, 8, 8, dtype=torch.long), cond)
            b = model(torch.randint(0, 8, (1, 8, 8)), cond)
        assert torch.equal(a[0, 0, 0], b[0, 0, 0])


class TestLogitsAndNll:
    def test_zero_head_gives_uniform(self):
        model = make_prior(vocab=16).eval()
        with torch.no_grad():
            logits = model(torch.randint(0, 16, (2, 8, 8)))
        assert torch.all(logits == 0)

    def test_uniform_nll_is_log_vocab(self):
        model = make_prior(vocab=256).eval()
        tokens = torch.randint(0, 256, (2, 8, 8))
        assert model.nll(tokens).item() == pytest.approx(math.log(256), rel=1e-6)
        assert model.nll(tokens).item() == pytest.approx(5.545, abs=1e-3)

    def test_confident_model_reaches_zero_nll(self):
        model = make_prior(vocab=4)
        target = torch.randint(0, 4, (1, 8, 8))

        class Oracle(AutoregressivePrior):
            def forward(self, tokens, condition=None):
                onehot = torch.nn.functional.one_hot(target, 4).float()
                return onehot * 1e4

        oracle = Oracle(model.cfg)
        assert oracle.nll(target).item() == pytest.approx(0.0, abs=1e-6)

    def test_softmax_rows_normalized(self):
        model = randomize_head(make_prior()).eval()
        with torch.no_grad():
            probs = torch.softmax(model(torch.randint(0, 8, (2, 8, 8))), dim=-1)
        assert torch.allclose(probs.sum(-1), torch.ones(2, 8, 8), atol=1e-6)

    def test_out_of_vocab_rejected(self):
        model = make_prior(vocab=8)
        with pytest.raises(ValueError, match="vocab"):
            model(torch.full((1, 8, 8), 8, dtype=torch.long))

    def test_wrong_grid_rejected(self):
        model = make_prior()
        with pytest.raises(ValueError, match="grid"):
            model(torch.zeros(1, 4, 4, dtype=torch.long))

    def test_unbatched_grid_supported(self):
        model = make_prior()
        out = model(torch.zeros(8, 8, dtype=torch.long))
        assert out.shape == (8, 8, 8)


class TestConditioning:
    def test_condition_broadcast_to_double_height(self):
        model = randomize_head(make_prior(grid=(8, 4), conditioned=True)).eval()
        tokens = torch.randint(0, 8, (2, 8, 4))
        cond = torch.randint(0, 5, (2, 4, 4))
        with torch.no_grad():
            tiled = model(tokens, torch.cat([cond, cond], dim=1))
            halved = model(tokens, cond)
        assert torch.equal(tiled, halved)

    def test_condition_out_of_range_rejected(self):
        model = make_prior(conditioned=True)
        with pytest.raises(ValueError, match="class"):
            model(torch.zeros(1, 8, 8, dtype=torch.long),
                  torch.full((1, 8, 8), 5, dtype=torch.long))

    def test_condition_shape_mismatch_rejected(self):
        model = make_prior(conditioned=True)
        with pytest.raises(ValueError, match="incompatible"):
            model(torch.zeros(1, 8, 8, dtype=torch.long),
                  torch.zeros(1, 3, 3, dtype=torch.long))

    def test_unconditional_model_rejects_condition(self):
        model = make_prior()
        with pytest.raises(ValueError, match="unconditional"):
            model(torch.zeros(1, 8, 8, dtype=torch.long),
                  torch.zeros(1, 8, 8, dtype=torch.long))

    def test_null_condition_differs_from_objects_after_training(self):
        torch.manual_seed(0)
        model = make_prior(conditioned=True)
        tokens = torch.randint(0, 8, (16, 8, 8))
        cond = torch.randint(1, 5, (16, 8, 8))
        opt = torch.optim.Adam(model.parameters(), lr=1e-3)
        for _ in range(30):
            loss = model.nll(tokens, cond)
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.eval()
        with torch.no_grad():
            background = model(tokens[:1], torch.zeros(1, 8, 8, dtype=torch.long))
            objects = model(tokens[:1], cond[:1])
        assert (background - objects).abs().max() > 0

    def test_shared_implementation_for_both_priors(self):
        from semagen import trainer
        from semagen.config import desk_config
        cfg = desk_config()
        assert type(trainer.build_latent_prior(cfg)) is \
            type(trainer.build_layout_prior(cfg))


class TestSampling:
    def test_same_seed_identical(self):
        model = randomize_head(make_prior(grid=(4, 4)))
        a = model.sample(3, seed=11)
        b = model.sample(3, seed=11)
        assert torch.equal(a, b)

    def test_different_seed_differs(self):
        model = randomize_head(make_prior(grid=(4, 4)))
        assert not torch.equal(model.sample(4, seed=1), model.sample(4, seed=2))

    def test_temperature_zero_limit_is_greedy(self):
        model = randomize_head(make_prior(grid=(4, 4))).eval()
        sampled = model.sample(2, temperature=1e-8, seed=0)
        greedy = torch.zeros(2, 4, 4, dtype=torch.long)
        with torch.no_grad():
            for i in range(4):
                for j in range(4):
                    logits = model(greedy)[:, i, j, :]
                    greedy[:, i, j] = logits.argmax(dim=-1)
        assert torch.equal(sampled, greedy)

    def test_nonpositive_temperature_rejected(self):
        model = make_prior()
        with pytest.raises(ValueError, match="temperature"):
            model.sample(1, temperature=0.0)

    def test_first_position_marginal_uniform(self):
        # Zero-initialized head => exactly uniform conditionals; the sampler's
        # first-position draws must pass a chi-square uniformity test.
        model = make_prior(vocab=8, grid=(2, 2), hidden_dim=16,
                           residual_dim=8, residual_blocks=1,
                           attention_dim=8, attention_heads=1)
        samples = model.sample(10_000, seed=123)
        counts = torch.bincount(samples[:, 0, 0], minlength=8).numpy()
        expected = 10_000 / 8
        chi2 = ((counts - expected) ** 2 / expected).sum()
        assert chi2 < stats.chi2.ppf(0.99, df=7)

    def test_sampled_tokens_within_vocab(self):
        model = randomize_head(make_prior(vocab=5, grid=(4, 4)))
        samples = model.sample(8, seed=3)
        assert samples.min() >= 0 and samples.max() < 5

    def test_dropout_restored_after_sampling(self):
        model = make_prior()
        model.train()
        model.sample(1, seed=0)
        assert model.training
