import numpy as np
import pytest

from adarank.checkpoint import Checkpoint
from adarank.merge import merge_task_arithmetic
from adarank.nn import ModelSpec, init_backbone, init_head
from adarank.tasks import (
    DivergenceError,
    FinetuneConfig,
    PretrainConfig,
    TaskSuiteSpec,
    evaluate,
    finetune,
    generate_suite,
    model_spec_for,
    pretrain,
    suite_from_checkpoint,
    suite_to_checkpoint,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        TaskSuiteSpec(classes_per_task=0)
    with pytest.raises(ValueError):
        TaskSuiteSpec(separation=3.0)
    with pytest.raises(ValueError):
        TaskSuiteSpec(num_tasks=2, difficulty_profile=(1, 2, 3))
    with pytest.raises(ValueError):
        FinetuneConfig(learning_rate=-1.0)


def test_default_class_counts():
    assert TaskSuiteSpec().class_counts == (4, 8, 12, 16)


def test_generation_is_bit_deterministic():
    a = generate_suite(TaskSuiteSpec())
    b = generate_suite(TaskSuiteSpec())
    for x, y in zip(a, b):
        assert x.train.inputs.tobytes() == y.train.inputs.tobytes()
        assert x.test.labels.tobytes() == y.test.labels.tobytes()


def test_class_means_are_separated():
    spec = TaskSuiteSpec(train_per_class=2000)
    for task in generate_suite(spec):
        x, y = task.train.inputs, task.train.labels
        means = np.array([x[y == c].mean(0) for c in range(task.num_classes)])
        d = np.linalg.norm(means[:, None] - means[None], axis=-1)
        off = d[~np.eye(task.num_classes, dtype=bool)]
        assert off.min() >= 4 * spec.cluster_spread


def test_task_distributions_differ():
    suite = generate_suite(TaskSuiteSpec())
    for i in range(len(suite)):
        for j in range(i + 1, len(suite)):
            a, b = suite[i].train.inputs, suite[j].train.inputs
            shift = np.linalg.norm(a.mean(0) - b.mean(0))
            se = np.sqrt(a.var(0).sum() / len(a) + b.var(0).sum() / len(b))
            assert shift >= 1.0 and shift / se > 10


def test_suite_round_trips_through_checkpoint():
    spec = TaskSuiteSpec(train_per_class=5, test_per_class=5)
    suite = generate_suite(spec)
    back_spec, back = suite_from_checkpoint(Checkpoint.from_bytes(suite_to_checkpoint(spec, suite).to_bytes()))
    assert back_spec == spec
    for x, y in zip(suite, back):
        assert np.array_equal(x.test.inputs, y.test.inputs)
        assert np.array_equal(x.train.labels, y.train.labels)


def test_separable_single_task_reaches_full_accuracy():
    # 10 spreads apart: overlap probability per sample is below 1e-6
    ss = TaskSuiteSpec(
        num_tasks=1, classes_per_task=2, cluster_spread=0.1, separation=10.0, difficulty_profile=(1,)
    )
    suite = generate_suite(ss)
    spec = model_spec_for(ss, hidden_dims=(8,))
    pre = pretrain(spec, suite, PretrainConfig(epochs=0))
    ck = finetune(spec, pre, suite, 0, FinetuneConfig(epochs=5))
    assert ck.manifest["test_accuracy"] == 1.0


def test_pretrain_zero_epochs_is_the_initialization():
    ss = TaskSuiteSpec(train_per_class=5, test_per_class=5)
    suite = generate_suite(ss)
    spec = model_spec_for(ss)
    pre = pretrain(spec, suite, PretrainConfig(epochs=0, seed=4))
    ref = init_backbone(spec, np.random.default_rng(4))
    for n in spec.layer_names:
        assert pre[n].tobytes() == ref[n].tobytes()


def test_pretrain_is_deterministic_and_above_chance(wb):
    again = pretrain(wb.spec, wb.suite, PretrainConfig(seed=0))
    assert again.to_bytes() == wb.pretrained.to_bytes()
    total = sum(wb.suite_spec.class_counts)
    assert all(a > 1.0 / total for a in wb.pretrained.manifest["pooled_accuracy"])


def test_finetune_zero_lr_returns_base(wb):
    ck = finetune(wb.spec, wb.pretrained, wb.suite, 1, FinetuneConfig(learning_rate=0.0, epochs=2))
    for n in wb.spec.layer_names:
        assert ck[n].tobytes() == wb.pretrained[n].tobytes()


def test_finetune_divergence_reports_step(wb):
    bad = Checkpoint({n: np.full(s, np.nan) for n, s in wb.spec.layer_shapes().items()})
    with pytest.raises(DivergenceError) as info:
        finetune(wb.spec, bad, wb.suite, 0, FinetuneConfig(epochs=1))
    assert info.value.step == 0


def test_finetune_rejects_wrong_base_shapes(wb):
    bad = Checkpoint({n: np.zeros((2, 2)) for n in wb.spec.layer_names})
    with pytest.raises(ValueError):
        finetune(wb.spec, bad, wb.suite, 0)


def test_default_individual_accuracy(wb):
    assert min(wb.individual_accuracies()) >= 0.95


def test_task_vectors_nonzero(wb):
    a, b = wb.finetuned[0], wb.finetuned[1]
    assert any(not np.array_equal(a[n], b[n]) for n in wb.spec.layer_names)


def test_evaluate_reproduces_recorded_accuracy(wb):
    for t, ck in enumerate(wb.finetuned):
        res = evaluate(wb.spec, ck.layers, {t: ck[wb.spec.head_name(t)]}, [wb.suite[t]])
        assert res["per_task"][t] == ck.manifest["test_accuracy"]


def test_random_backbone_is_near_chance():
    ss = TaskSuiteSpec(num_tasks=1, classes_per_task=4, test_per_class=250, difficulty_profile=(1,))
    suite = generate_suite(ss)
    spec = model_spec_for(ss)
    accs = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        res = evaluate(spec, init_backbone(spec, rng), {0: init_head(spec, 0, rng)}, suite)
        accs.append(res["mean"])
    assert abs(np.mean(accs) - 0.25) <= 0.05


def test_pretrained_backbone_sits_between_chance_and_individual(wb):
    res = evaluate(wb.spec, wb.pretrained.layers, wb.heads, wb.suite)
    for t, acc in res["per_task"].items():
        assert 1.0 / wb.suite[t].num_classes < acc < wb.individual_accuracies()[t]


def test_merging_leaves_headroom(wb):
    tv = wb.task_vectors("pretrained")
    ta = wb.accuracy(merge_task_arithmetic(tv.base, tv, 0.3))["mean"]
    assert np.mean(wb.individual_accuracies()) - ta > 0
