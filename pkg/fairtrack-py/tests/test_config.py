from __future__ import annotations

import json

import pytest

from fairtrack.config import RunConfigFile, Trainer, load_config, parse_config
from fairtrack.dp import MechanismKind
from fairtrack.errors import ConfigurationError
from fairtrack.fairness import Criterion
from fairtrack.kernels import LaplacianKernel


def test_empty_document_takes_defaults():
    config = parse_config("{}")
    assert config.trainer is Trainer.ALGORITHM1
    fed = config.fed_run_config()
    assert (fed.rounds, fed.local_epochs, fed.local_step, fed.step_decay) == (100, 50, 0.05, 0.99)
    assert fed.global_step == 1.0 and fed.batch_size == 100 and fed.set_size == 100
    assert fed.clients_per_round is None
    spec = config.synthetic_spec()
    assert (spec.n_clients, spec.samples_per_client, spec.dim, spec.heterogeneity) == (10, 200, 10, 1.0)


def test_negative_lambda_names_the_field():
    with pytest.raises(ConfigurationError) as info:
        parse_config('{"fairness": {"lam": -1}}')
    assert info.value.field == "fairness.lam"


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigurationError) as info:
        parse_config('{"federation": {"rounds": 3, "round": 4}}')
    assert info.value.field == "federation.round"


def test_syntax_error_reports_line_and_column():
    with pytest.raises(ConfigurationError) as info:
        parse_config('{\n  "seed": 1,\n  "trainer": \n}', source="run.json")
    assert str(info.value).startswith("run.json:4:1:")


def test_heterogeneity_range_is_enforced():
    with pytest.raises(ConfigurationError) as info:
        parse_config('{"data": {"heterogeneity": 0.3}}')
    assert info.value.field == "data.heterogeneity"


def test_conditional_parity_needs_region():
    with pytest.raises(ConfigurationError) as info:
        parse_config('{"fairness": {"criterion": "conditional_statistical_parity"}}')
    assert info.value.field == "fairness"


def test_dp_section_needs_positive_scale():
    with pytest.raises(ConfigurationError):
        parse_config('{"dp": {"kind": "gaussian"}}')


def test_per_client_sizes_must_match_client_count():
    with pytest.raises(ConfigurationError):
        parse_config('{"data": {"n_clients": 3, "samples_per_client": [10, 20]}}')
    spec = parse_config('{"data": {"n_clients": 2, "samples_per_client": [10, 20]}}').synthetic_spec()
    assert spec.samples_per_client == (10, 20)


def test_domain_objects_follow_the_file():
    config = parse_config(
        json.dumps(
            {
                "seed": 7,
                "fairness": {"criterion": "equalized_odds", "lam": 2.5},
                "kernel": {"kind": "laplacian", "scale": 0.4},
                "dp": {"kind": "laplacian", "scale": 0.1, "clip": [0, 1]},
                "federation": {"clients_per_round": 3},
            }
        )
    )
    fed = config.fed_run_config()
    assert fed.lam == 2.5 and fed.seed == 7 and fed.clients_per_round == 3
    assert fed.fairness.criterion is Criterion.EQUALIZED_ODDS
    assert fed.kernel == LaplacianKernel(0.4)
    assert fed.dp.kind is MechanismKind.LAPLACIAN and fed.dp.seed == 7
    assert config.synthetic_spec().rng_seed == 7


def test_data_seed_pins_the_dataset():
    config = parse_config('{"seed": 3, "data": {"data_seed": 11}}')
    assert config.synthetic_spec().rng_seed == 11


def test_hash_ignores_seed_but_not_settings():
    config = parse_config('{"fairness": {"lam": 1.0}}')
    assert config.with_seed(5).config_hash() == config.config_hash()
    assert config.with_lambda(2.0).config_hash() != config.config_hash()
    assert config.with_trainer("local_fair").config_hash() != config.config_hash()


def test_resolved_json_round_trips():
    config = parse_config('{"trainer": "centralized", "seed": 4, "data": {"n_clients": 3}}')
    again = parse_config(config.resolved_json())
    assert again == config
    assert again.config_hash() == config.config_hash()


def test_variants_do_not_mutate_the_original():
    config = parse_config("{}")
    config.with_set_size(20).with_heterogeneity(0.7)
    assert config.federation.set_size == 100 and config.data.heterogeneity == 1.0


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigurationError) as info:
        load_config(tmp_path / "absent.json")
    assert info.value.field == "config"


def test_load_config_reads_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"trainer": "algorithm2"}', encoding="utf-8")
    assert load_config(path).trainer is Trainer.ALGORITHM2


def test_config_file_model_is_strict():
    assert RunConfigFile.model_config.get("extra") == "forbid"
