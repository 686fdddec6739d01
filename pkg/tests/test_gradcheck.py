import pytest

from tagalign.gradcheck import LOSSES, run_gradcheck


def test_every_loss_passes_one_seed():
    report = run_gradcheck(seeds=1)
    assert report.passed and sorted(report.worst) == sorted(LOSSES)


@pytest.mark.parametrize("loss", ["contrastive", "stage-2"])
def test_scaled_gradient_is_caught(loss):
    report = run_gradcheck(losses=[loss], seeds=1, grad_override={loss: lambda g: 1.01 * g})
    assert not report.passed
    assert report.worst[loss] > 1e-3


def test_unknown_loss_rejected():
    with pytest.raises(ValueError):
        run_gradcheck(losses=["mystery"])
