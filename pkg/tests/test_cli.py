import json

import numpy as np
import pandas as pd
import pytest
import requests

from ProjBEngine import main
from func import downloader
from func.base_logger import RUN_LOG_NAME
from func.checkpoint import load_checkpoint
from func.feature_eng import load_features
from func.model_core import init_params
from func.run_config import parse_config
from data.configs import DatasetInfo, EnvVars, ExitCodes
from helpers import FakeResponse, tar_archive


@pytest.fixture
def tiny_dir(tmp_path):
    data_dir = tmp_path.joinpath('tiny')
    assert main(['synthesize', 'tiny', '--data-dir', str(data_dir)]) == ExitCodes.OK
    return data_dir


@pytest.fixture
def tiny_conf(tmp_path):
    path = tmp_path.joinpath('tiny.conf')
    path.write_text("dims_entity = 8\ndims_relation = 2\nbatch_size = 2\np_y = 1\nlr = 0.05\n"
                    "cluster_update = none\ndirections = tail\n", encoding='utf-8')
    return path


def _featurize(data_dir, out):
    return main(['featurize', '--data-dir', str(data_dir), '--out', str(out), '--methods', 'kmeans',
                 '--kernels', 'none', '--entity-ks', '8', '--relation-ks', '2'])


class TestSynthesize:

    def test_tiny_files(self, tiny_dir):
        for name in ('train.txt', 'valid.txt', 'test.txt', 'entities.txt', 'relations.txt', 'manifest.json'):
            assert tiny_dir.joinpath(name).exists()
        assert len(tiny_dir.joinpath('train.txt').read_text(encoding='utf-8').splitlines()) == 12


class TestFeaturize:

    def test_writes_features(self, tmp_path, tiny_dir):
        out = tmp_path.joinpath('features')
        assert _featurize(tiny_dir, out) == ExitCodes.OK
        features = load_features(out.joinpath('features.bin'))
        assert (features.C_E, features.C_R) == (8, 2)
        assert out.joinpath('featurize_report.csv').exists()

    def test_rerun_is_byte_identical(self, tmp_path, tiny_dir):
        _featurize(tiny_dir, tmp_path.joinpath('a'))
        _featurize(tiny_dir, tmp_path.joinpath('b'))
        assert tmp_path.joinpath('a', 'features.bin').read_bytes() == \
               tmp_path.joinpath('b', 'features.bin').read_bytes()


class TestTrainAndEval:

    def test_zero_epochs_saves_initialisation(self, tmp_path, tiny_dir, tiny_conf):
        _featurize(tiny_dir, tmp_path.joinpath('f'))
        features_path = tmp_path.joinpath('f', 'features.bin')
        out = tmp_path.joinpath('run')
        code = main(['train', '--data-dir', str(tiny_dir), '--config', str(tiny_conf), '--features',
                     str(features_path), '--epochs', '0', '--out', str(out)])
        assert code == ExitCodes.OK

        config = parse_config(tiny_conf)
        expected = init_params(8, 2, load_features(features_path), config.seed_streams()['init'], 'projb', 8, 2)
        loaded = load_checkpoint(out.joinpath('checkpoint.bin'))
        np.testing.assert_array_equal(loaded.W_E, expected.W_E.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(loaded.D_R, expected.D_R.astype(np.float32).astype(np.float64))

        manifest = json.loads(out.joinpath('manifest.json').read_text(encoding='utf-8'))
        assert {str(out.joinpath(name)) for name in ('checkpoint.bin', 'loss_log.csv', 'variance_trace.csv',
                                                      'train.conf')} <= set(manifest['outputs'])
        assert parse_config(out.joinpath('train.conf')) == config.with_overrides(epochs=0)

    def test_train_then_eval(self, tmp_path, tiny_dir, tiny_conf):
        _featurize(tiny_dir, tmp_path.joinpath('f'))
        run = tmp_path.joinpath('run')
        assert main(['train', '--data-dir', str(tiny_dir), '--config', str(tiny_conf), '--features',
                     str(tmp_path.joinpath('f', 'features.bin')), '--epochs', '3', '--out', str(run)]) == ExitCodes.OK
        out = tmp_path.joinpath('eval')
        code = main(['eval', '--data-dir', str(tiny_dir), '--config', str(tiny_conf), '--checkpoint',
                     str(run.joinpath('checkpoint.bin')), '--split', 'train', '--out', str(out)])
        assert code == ExitCodes.OK
        metrics = json.loads(out.joinpath('metrics.json').read_text(encoding='utf-8'))
        assert metrics['n_instances'] == 12
        assert 'Command eval complete.' in out.joinpath(RUN_LOG_NAME).read_text(encoding='utf-8')
        assert 0.0 <= metrics['hits@10']['filtered'] <= 1.0
        assert metrics['protocol'] == 'tail'

    def test_proje_without_features(self, tmp_path, tiny_dir, tiny_conf):
        code = main(['train', '--data-dir', str(tiny_dir), '--config', str(tiny_conf), '--mode', 'proje',
                     '--epochs', '1', '--out', str(tmp_path.joinpath('run'))])
        assert code == ExitCodes.OK
        assert load_checkpoint(tmp_path.joinpath('run', 'checkpoint.bin')).mode == 'proje'


class TestExitCodes:

    def test_missing_checkpoint(self, tmp_path, tiny_dir):
        out = tmp_path.joinpath('eval')
        code = main(['eval', '--data-dir', str(tiny_dir), '--checkpoint', str(tmp_path.joinpath('absent.bin')),
                     '--out', str(out)])
        assert code == ExitCodes.DATA
        assert not out.joinpath('metrics.json').exists()

    def test_checkpoint_flag_required(self, tmp_path, tiny_dir):
        assert main(['eval', '--data-dir', str(tiny_dir), '--out', str(tmp_path)]) == ExitCodes.USAGE

    def test_bad_usage(self):
        assert main(['train']) == ExitCodes.USAGE
        assert main(['teleport']) == ExitCodes.USAGE

    def test_unknown_config_key(self, tmp_path, tiny_dir):
        conf = tmp_path.joinpath('bad.conf')
        conf.write_text("colour = blue\n", encoding='utf-8')
        assert main(['train', '--data-dir', str(tiny_dir), '--config', str(conf), '--out',
                     str(tmp_path.joinpath('run'))]) == ExitCodes.USAGE

    def test_projb_needs_features(self, tmp_path, tiny_dir, tiny_conf):
        assert main(['train', '--data-dir', str(tiny_dir), '--config', str(tiny_conf), '--out',
                     str(tmp_path.joinpath('run'))]) == ExitCodes.USAGE

    def test_missing_data_dir(self, tmp_path):
        assert main(['featurize', '--data-dir', str(tmp_path.joinpath('absent')), '--out',
                     str(tmp_path.joinpath('f'))]) == ExitCodes.DATA

    def test_impossible_random_graph(self, tmp_path):
        assert main(['synthesize', 'random', '--data-dir', str(tmp_path.joinpath('r')), '--entities', '2',
                     '--relations', '1', '--triples', '5']) == ExitCodes.USAGE

    def test_threads_variable_not_a_number(self, monkeypatch, tmp_path, tiny_dir):
        monkeypatch.setenv(EnvVars.THREADS, 'many')
        code = main(['eval', '--data-dir', str(tiny_dir), '--checkpoint', str(tmp_path.joinpath('absent.bin')),
                     '--out', str(tmp_path.joinpath('eval'))])
        assert code == ExitCodes.USAGE
        _featurize(tiny_dir, tmp_path.joinpath('f'))
        code = main(['experiment', 'table4_grid', '--data-dir', str(tiny_dir), '--features',
                     str(tmp_path.joinpath('f', 'features.bin')), '--epochs', '1', '--out', str(tmp_path.joinpath('x'))])
        assert code == ExitCodes.USAGE


class TestExperiment:

    @pytest.fixture
    def features_path(self, tmp_path, tiny_dir):
        _featurize(tiny_dir, tmp_path.joinpath('f'))
        return tmp_path.joinpath('f', 'features.bin')

    def _run(self, kind, tiny_dir, tiny_conf, features_path, out, *extra):
        return main(['experiment', kind, '--data-dir', str(tiny_dir), '--config', str(tiny_conf), '--features',
                     str(features_path), '--epochs', '1', '--out', str(out), *extra])

    def test_table4_grid(self, tmp_path, tiny_dir, tiny_conf, features_path):
        out = tmp_path.joinpath('grid')
        assert self._run('table4_grid', tiny_dir, tiny_conf, features_path, out, '--threads', '2') == ExitCodes.OK
        frame = pd.read_csv(out.joinpath('table4_grid.csv'))
        assert len(frame) == 36
        assert set(frame['features']) == {'cluster', 'pca'}
        assert set(frame['batch_size']) == {1, 10, 30}
        manifest = json.loads(out.joinpath('manifest.json').read_text(encoding='utf-8'))
        assert manifest['command'] == 'experiment table4_grid'

    def test_local_optima(self, tmp_path, tiny_dir, tiny_conf, features_path):
        out = tmp_path.joinpath('optima')
        assert self._run('local_optima', tiny_dir, tiny_conf, features_path, out, '--trials', '3') == ExitCodes.OK
        result = json.loads(out.joinpath('local_optima.json').read_text(encoding='utf-8'))
        assert result['n_trials'] + len(result['failed_trials']) == 3
        assert 0.0 <= result['p_value'] <= 1.0
        assert result['reject_mean_at_least_one'] == (result['p_value'] < result['alpha'])
        frame = pd.read_csv(out.joinpath('local_optima.csv'))
        assert list(frame['trial']) == [0, 1, 2]
        assert 'ce_proje' in frame.columns

    def test_local_optima_self_control(self, tmp_path, tiny_dir, tiny_conf, features_path):
        out = tmp_path.joinpath('control')
        assert self._run('local_optima', tiny_dir, tiny_conf, features_path, out, '--trials', '2',
                         '--baseline-mode', 'projb') == ExitCodes.OK
        result = json.loads(out.joinpath('local_optima.json').read_text(encoding='utf-8'))
        assert result['ratios'] == pytest.approx([1.0] * result['n_trials'])
        assert not result['reject_mean_at_least_one']

    def test_timing_sweep(self, tmp_path, tiny_dir, tiny_conf, features_path):
        out = tmp_path.joinpath('sweep')
        assert self._run('timing_sweep', tiny_dir, tiny_conf, features_path, out) == ExitCodes.OK
        frame = pd.read_csv(out.joinpath('timing_sweep.csv'))
        assert list(frame['batch_size']) == [1, 10, 30]
        assert list(frame['steps']) == [12, 2, 1]
        assert 'largest_batch_faster' in frame.columns

    def test_needs_features(self, tmp_path, tiny_dir, tiny_conf):
        assert main(['experiment', 'timing_sweep', '--data-dir', str(tiny_dir), '--config', str(tiny_conf),
                     '--out', str(tmp_path)]) == ExitCodes.USAGE


class TestDownload:

    def test_writes_splits_and_manifest(self, monkeypatch, tmp_path):
        members = DatasetInfo.ARCHIVES['wn18']['members']
        payload = tar_archive({member: b"a\t_hyponym\tb\nb\t_hypernym\ta\n" for member in members.values()})
        monkeypatch.setattr(downloader.requests, 'get', lambda **kwargs: FakeResponse(payload))
        data_dir = tmp_path.joinpath('wn18')
        assert main(['download', 'wn18', '--data-dir', str(data_dir)]) == ExitCodes.OK
        for name in ('train.txt', 'valid.txt', 'test.txt', 'manifest.json'):
            assert data_dir.joinpath(name).exists()
        manifest = json.loads(data_dir.joinpath('manifest.json').read_text(encoding='utf-8'))
        assert set(manifest['dataset_checksums']) == {'train', 'valid', 'test'}

    def test_unreachable_host_is_data_error(self, monkeypatch, tmp_path):
        def offline(**kwargs):
            raise requests.ConnectionError("offline")

        monkeypatch.setattr(downloader.requests, 'get', offline)
        monkeypatch.setattr(downloader.time, 'sleep', lambda seconds: None)
        assert main(['download', 'fb15k', '--data-dir', str(tmp_path.joinpath('fb15k'))]) == ExitCodes.DATA

    def test_unknown_dataset_is_usage_error(self, tmp_path):
        assert main(['download', 'yago', '--data-dir', str(tmp_path)]) == ExitCodes.USAGE
