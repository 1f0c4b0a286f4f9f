import numpy as np
import pytest

from slam_common.errors import MissingIndexFile, NoAssociations
from slam_common.generator import TumSequence, associate


class TestAssociate:
    def test_closest_pairs(self):
        first = [1.0, 2.0, 3.0]
        second = [0.995, 2.012, 3.5]
        assert associate(first, second) == [(0, 0), (1, 1)]

    def test_one_to_one(self):
        assert associate([1.0, 1.01], [1.005]) == [(0, 0)]

    def test_too_far_apart(self):
        assert associate([1.0], [1.025]) == []

    def test_offset(self):
        assert associate([1.0], [0.5], offset=0.5) == [(0, 0)]


def _write_index(path, stamps, folder):
    lines = ['# timestamp filename']
    lines += ['{:.6f} {}/{:.6f}.png'.format(s, folder, s) for s in stamps]
    path.write_text('\n'.join(lines) + '\n')


class TestTumSequence:
    def test_skips_unpaired_frames(self, tmp_path):
        _write_index(tmp_path / 'rgb.txt', [1.0, 1.1, 1.2], 'rgb')
        _write_index(tmp_path / 'depth.txt', [1.004, 1.125, 1.199], 'depth')
        seq = TumSequence(tmp_path)
        assert len(seq) == 2
        entries = list(seq.entries())
        assert [e[0] for e in entries] == pytest.approx([1.0, 1.2])
        assert entries[0][1] == tmp_path / 'rgb' / '1.000000.png'
        assert seq.groundtruth_poses([1.0, 1.2]) == [None, None]

    def test_groundtruth(self, tmp_path):
        _write_index(tmp_path / 'rgb.txt', [1.0], 'rgb')
        _write_index(tmp_path / 'depth.txt', [1.0], 'depth')
        (tmp_path / 'groundtruth.txt').write_text(
            '# tx ty tz qx qy qz qw\n0.998 1 2 3 0 0 1 0\n')
        pose = TumSequence(tmp_path).groundtruth_poses([1.0])[0]
        assert np.allclose(pose.translation, [1.0, 2.0, 3.0])
        assert np.allclose(pose.rotation, [0.0, 0.0, 0.0, 1.0])

    def test_missing_index(self, tmp_path):
        _write_index(tmp_path / 'rgb.txt', [1.0], 'rgb')
        with pytest.raises(MissingIndexFile):
            TumSequence(tmp_path)

    def test_missing_folder(self, tmp_path):
        with pytest.raises(MissingIndexFile):
            TumSequence(tmp_path / 'nowhere')

    def test_no_associations(self, tmp_path):
        _write_index(tmp_path / 'rgb.txt', [1.0], 'rgb')
        _write_index(tmp_path / 'depth.txt', [5.0], 'depth')
        with pytest.raises(NoAssociations):
            TumSequence(tmp_path)
