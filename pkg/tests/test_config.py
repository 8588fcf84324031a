import pytest

from dentoforge.config import ConfigError, PaperConstants, PipelineConfig, dump_config, load_config
from dentoforge.pipeline import denoiser_config


def test_paper_constants_snapshot():
    p = PipelineConfig().paper
    assert p == PaperConstants(
        lambda_instance=10.0, lambda_scene=2.5, lr_position=1.6e-4, lr_opacity=5e-2, lr_scale=5e-3,
        lr_rotation=1e-3, lr_color=5e-3, lr_color_final=5e-4, color_decay_epoch=380, sh_degree=0,
        guidance_instance=50.0, guidance_scene=100.0, dropout=0.1, transformer_blocks=5, transformer_heads=8,
        transformer_width=512, layout_iterations=400, stop_window=10,
    )


def test_paper_profile_denoiser_shape():
    cfg = PipelineConfig().with_overrides({"diffusion.profile": "paper"})
    d = denoiser_config(cfg)
    assert (d.blocks, d.heads, d.width, d.dropout) == (5, 8, 512, 0.1)
    toy = denoiser_config(PipelineConfig())
    assert (toy.blocks, toy.heads, toy.width) == (5, 8, 64)
    with pytest.raises(ValueError):
        denoiser_config(PipelineConfig().with_overrides({"diffusion.profile": "huge"}))


def test_overrides():
    cfg = PipelineConfig().with_overrides({"optimize.max_epochs": 7, "camera": {"width": 32}, "seed": 4})
    assert cfg.optimize.max_epochs == 7 and cfg.camera.width == 32 and cfg.seed == 4
    assert PipelineConfig().with_overrides({"paper.lr_position": 1}).paper.lr_position == 1.0
    with pytest.raises(ConfigError, match="unknown config key"):
        PipelineConfig().with_overrides({"optimize.nope": 1})
    with pytest.raises(ConfigError, match="integer"):
        PipelineConfig().with_overrides({"optimize.max_epochs": 1.5})
    with pytest.raises(ConfigError, match="boolean"):
        PipelineConfig().with_overrides({"optimize.collision": 1})


def test_toml_round_trip(tmp_path):
    cfg = PipelineConfig().with_overrides({"optimize.spatial_lr_scale": 3.0, "camera.elevations_deg": [0, 45]})
    path = tmp_path / "c.toml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg
    assert load_config(None) == PipelineConfig()


def test_file_then_overrides(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("seed = 5\n[optimize]\nmax_epochs = 9\n")
    cfg = load_config(path, {"optimize.max_epochs": 11, "camera.width": None})
    assert cfg.seed == 5 and cfg.optimize.max_epochs == 11 and cfg.camera.width == 256


def test_bad_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("seed = = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)
