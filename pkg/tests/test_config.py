import pytest

from csc_ctrl.config import ConfigError, dump_config, parse_config


def test_empty_config_gives_paper_defaults():
    cfg = parse_config("")
    t = cfg.train
    assert (t.lr_max, t.lr_min, t.beta1, t.beta2, t.strategy) == (2e-4, 2e-4, 0.0, 0.9, 2)
    assert (t.fista.lam, t.rate.eps2, t.arch) == (0.01, 0.5, "toy")


def test_sections_and_comments():
    cfg = parse_config("""
# run
[train]
batch_size = 10   # small
ascent_first_pass_only = yes
[arch]
name = toy3
[fista]
lam = 0.2
iterations = 20
step_size = 0.5
[rate]
eps2 = 0.25
[data]
source = cifar10
path = /tmp/x.bin
downscale = true
""")
    t = cfg.train
    assert t.batch_size == 10 and t.ascent_first_pass_only and t.arch == "toy3"
    assert (t.fista.lam, t.fista.iterations, t.fista.step_size, t.rate.eps2) == (0.2, 20, 0.5, 0.25)
    assert cfg.data.source == "cifar10" and cfg.data.downscale


def test_round_trip_through_dump():
    cfg = parse_config("[train]\nseed = 9\n[fista]\nlam = 0.3\n")
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text", [
    "[train]\nlearning_rate = 1\n",
    "[model]\nx = 1\n",
    "[arch]\nname = vgg\n",
    "[arch]\nwidth = 3\n",
    "[train]\nstrategy = 3\n",
    "[train]\nbatch_size = ten\n",
    "[fista]\nlam = -1\n",
    "[rate]\neps2 = 0\n",
    "[data]\nsource = mnist\n",
    "[data]\nsource = cifar10\n",
    "[train]\nrecord_time = maybe\n",
    "no section header\n",
])
def test_rejections(text):
    with pytest.raises(ConfigError):
        parse_config(text)
