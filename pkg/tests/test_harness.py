"""Toy data generation, augmentation, training loop, and the protocol."""

import numpy as np
import pytest

from attnhybrid.backbones import ArchitectureRecipe, build
from attnhybrid.data import (
    AugmentPolicy,
    Dataset,
    augment,
    generate_toy_dataset,
)
from attnhybrid.protocol import (
    ProtocolConfig,
    parse_config,
    parse_recipe_name,
    run_protocol,
    split_indices,
)
from attnhybrid.stats import welch_ttest
from attnhybrid.tensor import Tensor
from attnhybrid.train import (
    SGD,
    Hyperparameters,
    balanced_accuracy,
    cross_entropy,
    predict,
    sgd_step,
    train_model,
)


class TestToyDataset:
    def test_same_seed_same_bytes(self):
        a = generate_toy_dataset(5, 4)
        b = generate_toy_dataset(5, 4)
        assert a.images.tobytes() == b.images.tobytes()
        assert np.array_equal(a.labels, b.labels)

    def test_different_seeds_differ(self):
        a = generate_toy_dataset(5, 4)
        b = generate_toy_dataset(6, 4)
        assert a.images.tobytes() != b.images.tobytes()

    def test_class_counts_exact(self):
        data = generate_toy_dataset(0, 7)
        assert len(data) == 21
        assert np.array_equal(np.bincount(data.labels), [7, 7, 7])
        assert data.class_count == 3

    def test_pixel_range_and_shape(self):
        data = generate_toy_dataset(1, 5)
        assert data.images.shape == (15, 3, 32, 32)
        assert data.images.min() >= 0.0 and data.images.max() <= 1.0

    def test_ood_is_shifted_draw(self):
        ident = generate_toy_dataset(2, 6)
        ood = generate_toy_dataset(2, 6, ood=True)
        assert ood.split == "ood"
        assert ood.images.shape == ident.images.shape
        assert ood.images.tobytes() != ident.images.tobytes()

    def test_linear_probe_separates_classes(self):
        # The class differences are shape and texture, so probe simple image
        # statistics: a ridge classifier on them, fit on half the data, must
        # beat chance by a wide margin on the held-out half.
        data = generate_toy_dataset(3, 40)
        n = len(data)
        grad_y = np.abs(np.diff(data.images, axis=2)).mean(axis=(1, 2, 3))
        grad_x = np.abs(np.diff(data.images, axis=3)).mean(axis=(1, 2, 3))
        x = np.column_stack(
            [
                data.images.mean(axis=(2, 3)),
                data.images.std(axis=(2, 3)),
                grad_y,
                grad_x,
                np.ones(n),
            ]
        )
        rng = np.random.default_rng(0)
        perm = rng.permutation(n)
        train, test = perm[: n // 2], perm[n // 2 :]
        y = np.eye(3)[data.labels]
        gram = x[train].T @ x[train] + 1e-6 * np.eye(x.shape[1])
        w = np.linalg.solve(gram, x[train].T @ y[train])
        preds = np.argmax(x[test] @ w, axis=1)
        acc = balanced_accuracy(preds, data.labels[test], 3)
        assert acc > 0.6, acc

    def test_subset_keeps_alignment(self):
        data = generate_toy_dataset(4, 5)
        sub = data.subset([0, 5, 10], split="val")
        assert len(sub) == 3
        assert sub.split == "val"
        assert np.array_equal(sub.images[1], data.images[5])
        assert sub.labels.tolist() == [0, 1, 2]

    def test_dataset_validation(self):
        with pytest.raises(ValueError, match="labels"):
            Dataset(np.zeros((2, 3, 4, 4)), np.array([0, 3]), class_count=3)
        with pytest.raises(ValueError, match="split"):
            Dataset(np.zeros((1, 3, 4, 4)), np.array([0]), 3, split="dev")
        with pytest.raises(ValueError, match="n_per_class"):
            generate_toy_dataset(0, 0)


class TestAugment:
    def test_identity_policy_is_exact(self):
        rng = np.random.default_rng(7)
        img = rng.random((3, 16, 16))
        out = augment(img, np.random.default_rng(0), AugmentPolicy.identity())
        assert np.array_equal(out, img)

    def test_identity_policy_any_rng_state(self):
        rng = np.random.default_rng(8)
        img = rng.random((3, 8, 8))
        for seed in range(5):
            out = augment(img, np.random.default_rng(seed), AugmentPolicy.identity())
            assert np.array_equal(out, img)

    def test_horizontal_flip_is_involution(self):
        rng = np.random.default_rng(9)
        img = rng.random((3, 12, 12))
        policy = AugmentPolicy.identity()
        policy.hflip_prob = 1.0
        once = augment(img, np.random.default_rng(0), policy)
        assert not np.array_equal(once, img)
        twice = augment(once, np.random.default_rng(1), policy)
        assert np.array_equal(twice, img)

    def test_vertical_flip_is_involution(self):
        rng = np.random.default_rng(10)
        img = rng.random((3, 12, 12))
        policy = AugmentPolicy.identity()
        policy.vflip_prob = 1.0
        twice = augment(
            augment(img, np.random.default_rng(0), policy),
            np.random.default_rng(1),
            policy,
        )
        assert np.array_equal(twice, img)

    def test_fixed_seed_reproduces_batch(self):
        data = generate_toy_dataset(11, 4)
        policy = AugmentPolicy()
        batches = []
        for _ in range(2):
            rng = np.random.default_rng(42)
            batches.append(
                np.stack([augment(im, rng, policy) for im in data.images])
            )
        assert batches[0].tobytes() == batches[1].tobytes()

    def test_output_stays_in_range_and_shape(self):
        rng = np.random.default_rng(12)
        policy = AugmentPolicy()  # every transform enabled
        gen = np.random.default_rng(13)
        for _ in range(10):
            img = rng.random((3, 32, 32))
            out = augment(img, gen, policy)
            assert out.shape == (3, 32, 32)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError, match="3, H, W"):
            augment(np.zeros((1, 8, 8)), np.random.default_rng(0), AugmentPolicy())


class TestLossAndOptimizer:
    def test_cross_entropy_uniform_logits(self):
        logits = Tensor(np.zeros((4, 3)))
        loss = cross_entropy(logits, np.array([0, 1, 2, 0]))
        assert float(loss.data) == pytest.approx(np.log(3.0), abs=1e-12)

    def test_cross_entropy_prefers_correct_class(self):
        good = Tensor(np.array([[5.0, 0.0, 0.0]]))
        bad = Tensor(np.array([[0.0, 5.0, 0.0]]))
        labels = np.array([0])
        assert float(cross_entropy(good, labels).data) < float(
            cross_entropy(bad, labels).data
        )

    def test_cross_entropy_gradient_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(14)
        raw = rng.normal(size=(5, 3))
        logits = Tensor(raw, requires_grad=True)
        labels = np.array([0, 2, 1, 1, 0])
        cross_entropy(logits, labels).backward()
        exp = np.exp(raw - raw.max(axis=1, keepdims=True))
        soft = exp / exp.sum(axis=1, keepdims=True)
        want = (soft - np.eye(3)[labels]) / 5.0
        assert np.allclose(logits.grad, want, atol=1e-12)

    def test_sgd_step_analytic_examples(self):
        # p=1 with loss p^2 has gradient 2: one step at lr 0.1 gives 0.8
        (updated,) = sgd_step([np.array(1.0)], [np.array(2.0)], lr=0.1)
        assert updated == pytest.approx(0.8, abs=1e-15)
        # zero gradient and no decay leaves parameters alone
        (same,) = sgd_step([np.array(3.0)], [np.array(0.0)], lr=0.5)
        assert same == pytest.approx(3.0, abs=1e-15)
        # decay-only step: p=1, g=0, lr=0.1, wd=0.5 -> 0.95
        (decayed,) = sgd_step([np.array(1.0)], [np.array(0.0)], lr=0.1, weight_decay=0.5)
        assert decayed == pytest.approx(0.95, abs=1e-15)

    def test_sgd_class_matches_functional_step(self):
        rng = np.random.default_rng(15)
        value = rng.normal(size=(4,))
        grad = rng.normal(size=(4,))
        p = Tensor(value.copy(), requires_grad=True)
        p.grad = grad.copy()
        SGD([p], lr=0.05, weight_decay=0.01).step()
        (want,) = sgd_step([value], [grad], lr=0.05, weight_decay=0.01)
        assert np.allclose(p.data, want, atol=1e-15)

    def test_sgd_skips_parameters_without_grads(self):
        p = Tensor(np.ones(3), requires_grad=True)
        SGD([p], lr=0.1).step()
        assert np.array_equal(p.data, np.ones(3))

    def test_hyperparameter_validation(self):
        with pytest.raises(ValueError, match="learning_rate"):
            Hyperparameters(learning_rate=0.0)
        with pytest.raises(ValueError, match="weight_decay"):
            Hyperparameters(learning_rate=0.1, weight_decay=-1.0)
        with pytest.raises(ValueError, match="batch_size"):
            Hyperparameters(learning_rate=0.1, batch_size=0)


class TestBalancedAccuracy:
    def test_perfect_predictions(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        assert balanced_accuracy(labels, labels, 3) == 1.0

    def test_constant_predictor_on_balanced_classes(self):
        labels = np.array([0, 1, 2] * 4)
        preds = np.zeros(12, dtype=int)
        assert balanced_accuracy(preds, labels, 3) == pytest.approx(1.0 / 3.0)

    def test_recall_mean_oracle(self):
        # per-class recalls 8/10, 5/10, 9/10 -> mean 0.7333...
        labels = np.repeat([0, 1, 2], 10)
        preds = labels.copy()
        preds[:2] = 1  # class 0 recall 8/10
        preds[10:15] = 2  # class 1 recall 5/10
        preds[20:21] = 0  # class 2 recall 9/10
        assert balanced_accuracy(preds, labels, 3) == pytest.approx(
            (0.8 + 0.5 + 0.9) / 3.0, abs=1e-12
        )

    def test_absent_classes_excluded(self):
        labels = np.array([0, 0, 1, 1])
        preds = np.array([0, 0, 1, 0])
        assert balanced_accuracy(preds, labels, 5) == pytest.approx(0.75)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(16)
        labels = rng.integers(0, 3, size=60)
        preds = rng.integers(0, 3, size=60)
        base = balanced_accuracy(preds, labels, 3)
        perm = np.array([2, 0, 1])
        assert balanced_accuracy(perm[preds], perm[labels], 3) == pytest.approx(
            base, abs=1e-12
        )

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            balanced_accuracy(np.array([]), np.array([]), 3)


class TestTrainingLoop:
    def test_loss_decreases_on_toy_data(self):
        data = generate_toy_dataset(17, 12)
        model = build(ArchitectureRecipe(backbone="mini_resnet"), seed=18)
        hp = Hyperparameters(
            learning_rate=0.03, weight_decay=0.0, batch_size=8, epochs=4, seed=19
        )
        run = train_model(model, data, hp)
        assert not run.diverged
        assert len(run.epoch_losses) == 4
        assert run.epoch_losses[-1] < run.epoch_losses[0]

    def test_loss_strictly_decreases_early_on_most_seeds(self):
        data = generate_toy_dataset(20, 10)
        wins = 0
        for seed in range(10):
            model = build(ArchitectureRecipe(backbone="mini_resnet"), seed=seed)
            hp = Hyperparameters(
                learning_rate=0.03, batch_size=8, epochs=5, seed=100 + seed
            )
            losses = train_model(model, data, hp).epoch_losses
            if all(b < a for a, b in zip(losses, losses[1:])):
                wins += 1
        assert wins >= 9, wins

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_divergence_is_reported_not_hidden(self):
        data = generate_toy_dataset(21, 6)
        model = build(ArchitectureRecipe(backbone="mini_resnet"), seed=22)
        # An absurd learning rate sends the loss out of the finite range.
        hp = Hyperparameters(learning_rate=1e200, batch_size=8, epochs=3, seed=23)
        run = train_model(model, data, hp)
        assert run.diverged

    def test_predict_shapes_and_determinism(self):
        data = generate_toy_dataset(24, 4)
        model = build(ArchitectureRecipe(backbone="mini_resnet"), seed=25)
        a = predict(model, data.images, batch_size=5)
        b = predict(model, data.images, batch_size=64)
        assert a.shape == (12,)
        assert np.array_equal(a, b)


class TestSplits:
    def test_partition_property(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            train, val, test = split_indices(97, rng)
            joined = np.concatenate([train, val, test])
            assert len(joined) == 97
            assert len(np.unique(joined)) == 97

    def test_ratios(self):
        train, val, test = split_indices(200, np.random.default_rng(0))
        assert len(train) == 140
        assert len(val) == 30
        assert len(test) == 30

    def test_bad_ratios_rejected(self):
        with pytest.raises(ValueError, match="sum to 1"):
            split_indices(10, np.random.default_rng(0), ratios=(0.5, 0.1, 0.1))


class TestRecipeNames:
    def test_parse_variants(self):
        plain = parse_recipe_name("mini_resnet")
        assert plain.backbone == "mini_resnet"
        assert plain.attach_ga_after == ()
        assert plain.replace_last_block_with == "none"
        ga = parse_recipe_name("resnet18+ga")
        assert ga.attach_ga_after == (1, 2)
        eff = parse_recipe_name("efficientnet_b0+ga+ela")
        assert eff.attach_ga_after == (2, 3)
        assert eff.replace_last_block_with == "ELA"
        la = parse_recipe_name("mini_resnet+la")
        assert la.replace_last_block_with == "LA"

    def test_parse_rejections(self):
        with pytest.raises(ValueError, match="unknown token"):
            parse_recipe_name("mini_resnet+gla")
        with pytest.raises(ValueError, match="two replacement"):
            parse_recipe_name("mini_resnet+la+ela")
        with pytest.raises(ValueError, match="GA"):
            parse_recipe_name("vit_tiny+ga")


class TestConfigParsing:
    def test_round_trip_of_flat_keys(self):
        text = """
        # acceptance-style configuration
        recipes = mini_resnet, mini_resnet+ga
        learning_rates = 0.03, 0.01
        weight_decays = 0.0001
        epochs_search = 3
        epochs_eval = 4
        n_per_class = 10
        batch_size = 8
        master_seed = 5
        alpha = 0.05
        augment = none
        attention_k = 3
        """
        cfg = parse_config(text)
        assert cfg.recipes == ("mini_resnet", "mini_resnet+ga")
        assert cfg.learning_rates == (0.03, 0.01)
        assert cfg.weight_decays == (0.0001,)
        assert cfg.epochs_eval == 4
        assert cfg.attention_k == 3
        assert cfg.augment == "none"

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config("recipes = mini_resnet\nmomentum = 0.9")

    def test_missing_recipes_rejected(self):
        with pytest.raises(ValueError, match="recipes"):
            parse_config("alpha = 0.05")

    def test_validation_errors(self):
        with pytest.raises(ValueError, match="alpha"):
            ProtocolConfig(recipes=("mini_resnet",), alpha=1.5).validate()
        with pytest.raises(ValueError, match="augment"):
            ProtocolConfig(recipes=("mini_resnet",), augment="heavy").validate()
        with pytest.raises(ValueError, match="learning_rates"):
            ProtocolConfig(recipes=("mini_resnet",), learning_rates=(0.0,)).validate()


@pytest.fixture(scope="module")
def tiny_report():
    cfg = ProtocolConfig(
        recipes=("mini_resnet", "mini_resnet+ga"),
        learning_rates=(0.03,),
        weight_decays=(0.0001,),
        epochs_search=1,
        epochs_eval=1,
        n_per_class=6,
        batch_size=8,
        master_seed=31,
        eval_splits=10,
        augment="none",
        attention_k=3,
    )
    return cfg, run_protocol(cfg)


class TestProtocol:
    def test_row_counts(self, tiny_report):
        _, report = tiny_report
        assert len(report.trial_rows) == 20
        assert len(report.summary_rows) == 2
        assert len(report.comparison_rows) == 1
        comparison = report.comparison_rows[0]
        assert comparison.recipe_a == "mini_resnet+ga"
        assert comparison.recipe_b == "mini_resnet"
        assert 0.0 <= comparison.p <= 1.0
        assert comparison.significant == (comparison.p < report.alpha)

    def test_csv_structure(self, tiny_report):
        _, report = tiny_report
        lines = report.to_csv().strip().splitlines()
        assert lines[0] == "recipe,seed,split,bal_acc_id,bal_acc_ood,lr,wd"
        assert lines[21] == "recipe,mean_id,std_id,mean_ood,std_ood,lr,wd"
        assert lines[24] == "recipe_a,recipe_b,t,p,significant"
        assert len(lines) == 26
        first = lines[1].split(",")
        assert first[0] == "mini_resnet"
        assert first[2] == "0"
        assert 0.0 <= float(first[3]) <= 1.0

    def test_byte_reproducible(self, tiny_report):
        cfg, report = tiny_report
        again = run_protocol(cfg)
        assert again.to_csv() == report.to_csv()

    def test_same_recipe_same_seeds_give_identical_samples(self, tiny_report):
        # Model/training seeds derive from the recipe name, so re-running the
        # same recipe reproduces the same accuracy sample; a model compared
        # against itself yields t=0, p=1.
        _, report = tiny_report
        accs = [
            r.bal_acc_id for r in report.trial_rows if r.recipe == "mini_resnet"
        ]
        result = welch_ttest(accs, accs)
        assert result.t == 0.0
        assert result.p == 1.0

    def _stubbed_protocol(self, monkeypatch, scores, lrs, wds):
        """Run the protocol with training stubbed out so that the validation
        accuracy of each grid point is dictated by ``scores[(lr, wd)]``."""
        import attnhybrid.protocol as proto
        from attnhybrid.train import TrainingRun

        current = {}

        def fake_train(model, data, hp, policy=None):
            current["acc"] = scores[(hp.learning_rate, hp.weight_decay)]
            return TrainingRun()

        monkeypatch.setattr(proto, "train_model", fake_train)
        monkeypatch.setattr(proto, "predict", lambda model, images: None)
        monkeypatch.setattr(
            proto, "balanced_accuracy", lambda preds, labels, classes: current["acc"]
        )
        cfg = ProtocolConfig(
            recipes=("mini_resnet",),
            learning_rates=lrs,
            weight_decays=wds,
            epochs_search=1,
            epochs_eval=1,
            n_per_class=4,
            batch_size=4,
            master_seed=1,
            eval_splits=2,
            augment="none",
        )
        return run_protocol(cfg).chosen["mini_resnet"]

    def test_tie_breaking_prefers_lowest_lr_then_wd(self, monkeypatch):
        scores = {
            (0.01, 0.001): 0.5,
            (0.01, 0.0001): 0.5,
            (0.001, 0.001): 0.5,
            (0.001, 0.0001): 0.5,
        }
        chosen = self._stubbed_protocol(
            monkeypatch, scores, lrs=(0.01, 0.001), wds=(0.001, 0.0001)
        )
        assert chosen == (0.001, 0.0001)

    def test_grid_enumeration_order_invariance(self, monkeypatch):
        scores = {
            (0.01, 0.0): 0.9,
            (0.01, 0.001): 0.7,
            (0.001, 0.0): 0.8,
            (0.001, 0.001): 0.6,
        }
        first = self._stubbed_protocol(
            monkeypatch, scores, lrs=(0.01, 0.001), wds=(0.0, 0.001)
        )
        second = self._stubbed_protocol(
            monkeypatch, scores, lrs=(0.001, 0.01), wds=(0.001, 0.0)
        )
        assert first == second == (0.01, 0.0)
