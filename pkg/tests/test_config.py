import pytest

from ssdgl.config import ConfigValidationError, RunConfig, load_config, parse_text


def test_defaults():
    run = RunConfig()
    assert run.lr == 0.005 and run.momentum == 0.9 and run.weight_decay == 0.001
    assert run.power == 0.8 and run.max_iter == 1000 and run.epochs == 600
    assert run.train_ratio == 0.05 and run.delta == 0.999 and run.beta == 10
    assert run.time_steps == 8 and run.hidden_channels == 64


def test_text_round_trip():
    run = RunConfig(seed=4, train_ratio=0.01, encoder_channels=(8, 8, 16, 16), use_gjam=False, delta=0.9)
    assert parse_text(run.to_text()) == run


def test_lambda_alias_and_comments(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# desk run\nlambda = 0.1  # ratio\n\nepochs=3\nuse_hbwl = false\n")
    run = load_config(path)
    assert run.train_ratio == 0.1 and run.epochs == 3 and not run.use_hbwl
    assert "lambda = 0.1" in run.to_text()


@pytest.mark.parametrize(
    "text",
    [
        "bogus = 1",
        "lambda = 0",
        "lambda = 1.5",
        "delta = 1",
        "cell_kernel = 4",
        "encoder_channels = 8,8,8",
        "epochs = many",
        "use_gcl = maybe",
        "seed = 1\nseed = 2",
        "just a line",
        "hidden_channels = 6",
    ],
)
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigValidationError):
        parse_text(text)


def test_ablation_switches_reach_network():
    net = parse_text("use_gcl = false\nuse_gjam = 0").net_config(32, 4)
    assert not net.use_gcl and not net.use_gjam and net.in_bands == 32
