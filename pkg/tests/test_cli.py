import json

import numpy as np
import pytest

import exec_slam
from conftest import random_pose
from slam_common.geometry import oplus
from slam_common.processing import TrajIO
from slam_common.tracker import StateBelief

SMALL_RUN = {
    'run_spec': {'workers': 1, 'max_frames': 3},
    'filter': {'grid': {'resolution': 40},
               'tracker': {'steps': 20, 'pixel_samples': 50}},
    'synthetic': {'scenario': 'room_orbit', 'frames': 3},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / 'small.json'
    path.write_text(json.dumps(SMALL_RUN))
    return path


def _run(config, out):
    return exec_slam.main(['--log-level', 'WARNING', 'run', '--config',
                           str(config), '--synthetic', 'room_orbit', '--out',
                           str(out)])


class TestRun:
    def test_writes_every_output(self, tmp_path, small_config, capsys):
        out = tmp_path / 'out'
        assert _run(small_config, out) == 0
        for name in ('trajectory.txt', 'groundtruth.txt', 'covariances.csv',
                     'map.bin', 'timings.csv', 'config.json', 'summary.txt'):
            assert (out / name).exists(), name
        assert len((out / 'trajectory.txt').read_text().splitlines()) == 3
        assert 'ate_rmse' in capsys.readouterr().out
        timings = (out / 'timings.csv').read_text().splitlines()
        assert timings[-1].startswith('mean')

    def test_reruns_are_identical(self, tmp_path, small_config):
        outs = [tmp_path / 'a', tmp_path / 'b']
        for out in outs:
            assert _run(small_config, out) == 0
        for name in ('trajectory.txt', 'covariances.csv', 'map.bin'):
            assert (outs[0] / name).read_bytes() == \
                (outs[1] / name).read_bytes()

    def test_saved_config_reproduces_the_run(self, tmp_path, small_config):
        first = tmp_path / 'first'
        assert _run(small_config, first) == 0
        saved = json.loads((first / 'config.json').read_text())
        assert saved['filter']['grid']['resolution'] == 40
        assert saved['run_spec']['out_folder'] == str(first)

    def test_missing_config(self, tmp_path, caplog):
        missing = tmp_path / 'absent.json'
        assert _run(missing, tmp_path / 'out') == 1
        assert str(missing) in caplog.text

    def test_source_is_required(self):
        with pytest.raises(SystemExit):
            exec_slam.load_config_procedures(['run'])


class TestRender:
    def test_outputs(self, tmp_path, small_config):
        out = tmp_path / 'run'
        assert _run(small_config, out) == 0
        views = tmp_path / 'views'
        code = exec_slam.main([
            'render', '--map', str(out / 'map.bin'), '--pose', '2', '0',
            '1.2', '0', '0', '0', '1', '--out', str(views),
            '--slice-format', 'csv'])
        assert code == 0
        for name in ('color.png', 'depth.png', 'slice_x.csv', 'slice_y.csv',
                     'slice_z.csv', 'slice_z_plot.png'):
            assert (views / name).exists(), name

    def test_bad_snapshot(self, tmp_path):
        bad = tmp_path / 'map.bin'
        bad.write_bytes(b'not a map')
        assert exec_slam.main([
            'render', '--map', str(bad), '--pose', '0', '0', '0', '0', '0',
            '0', '1', '--out', str(tmp_path / 'views')]) == 1


@pytest.fixture
def noisy_run(tmp_path, rng):
    stamps = 0.1 * np.arange(15)
    truth = [random_pose(rng) for _ in stamps]
    estimate = [oplus(p, rng.normal(scale=0.01, size=6)) for p in truth]
    beliefs = [StateBelief.at_rest(p, None, 0.01, 0.01) for p in estimate]
    paths = {name: tmp_path / name for name in
             ('trajectory.txt', 'groundtruth.txt', 'covariances.csv')}
    TrajIO.write_tum(paths['trajectory.txt'], stamps, estimate)
    TrajIO.write_tum(paths['groundtruth.txt'], stamps, truth)
    TrajIO.write_covariances(paths['covariances.csv'], stamps, beliefs)
    return paths


class TestEval:
    def test_prints_the_scores(self, noisy_run, tmp_path, capsys):
        out = tmp_path / 'report'
        code = exec_slam.main([
            'eval', '--trajectory', str(noisy_run['trajectory.txt']),
            '--groundtruth', str(noisy_run['groundtruth.txt']),
            '--covariances', str(noisy_run['covariances.csv']), '--align',
            '--out', str(out), '--plots'])
        assert code == 0
        printed = capsys.readouterr().out
        for key in ('ate_rmse', 'ate_rmse_aligned', 'scale_correction',
                    'whitened_stddev', 'kolmogorov'):
            assert key in printed
        for name in ('summary.txt', 'whitened_residuals.csv',
                     'chi2_curve.csv', 'whitened_hist.png', 'chi2_curve.png'):
            assert (out / name).exists(), name

    def test_mismatched_covariances(self, noisy_run, tmp_path):
        short = tmp_path / 'short.csv'
        lines = noisy_run['covariances.csv'].read_text().splitlines()
        short.write_text('\n'.join(lines[:5]) + '\n')
        assert exec_slam.main([
            'eval', '--trajectory', str(noisy_run['trajectory.txt']),
            '--groundtruth', str(noisy_run['groundtruth.txt']),
            '--covariances', str(short)]) == 1
