""" This script is the entry point of the filter. It runs it on a TUM-RGBD
    folder or a synthetic scenario, renders views of a map snapshot and
    evaluates trajectories against ground truth.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from setproctitle import setproctitle
from tqdm import tqdm

from slam_common.config import (config_to_dict, load_config,
                                with_initial_state)
from slam_common.enums import Axis, OutFiles, SliceFormat
from slam_common.errors import SlamError, SnapshotFormatError, TooFewSamples
from slam_common.evaluation import (Trajectory, ate_rmse, chi_squared_curve,
                                    global_scale_correction, summary_lines,
                                    trajectory_residuals, whitened_residuals)
from slam_common.geometry import CameraIntrinsics, Pose
from slam_common.pipeline import run_sequence
from slam_common.plots import (DIM_NAMES, plot_calibration_curve,
                               plot_uncertainty_slice,
                               plot_whitened_histograms)
from slam_common.processing import ImgProc, TrajIO
from slam_common.renderer import RenderParams, render_rgbd
from slam_common.voxel_map import load_map, save_map, uncertainty_slice
from slam_common.worlds import (default_camera, load_scene, load_tum_rgbd,
                                scenario, synthesize_sequence)
from utils import check_grid_memory, estimate_workers

logger = logging.getLogger('exec_slam')


def load_config_procedures(argv=None):
    """ Function to read the command line of the three subcommands """
    parser = argparse.ArgumentParser(description='Probabilistic RGB-D SLAM')
    parser.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='filter a sequence')
    run.add_argument('--config', default=None)
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument('--dataset', help='TUM-RGBD sequence folder')
    source.add_argument('--synthetic',
                        help='scenario name or JSON scene file')
    run.add_argument('--out', default=None)
    run.add_argument('--seed', type=int, default=None)
    run.add_argument('--threads', type=int, default=None,
                     help='0 uses every physical core')
    run.add_argument('--render-period', type=int, default=None)
    run.add_argument('--resolution', type=int, default=None,
                     help='voxels per axis, e.g. 200 or 400')
    run.add_argument('--frames', type=int, default=None)

    render = commands.add_parser('render', help='render a map snapshot')
    render.add_argument('--config', default=None)
    render.add_argument('--map', required=True)
    render.add_argument('--pose', type=float, nargs=7, required=True,
                        metavar=('TX', 'TY', 'TZ', 'QX', 'QY', 'QZ', 'QW'))
    render.add_argument('--intrinsics', type=float, nargs=6, default=None,
                        metavar=('FX', 'FY', 'CX', 'CY', 'WIDTH', 'HEIGHT'))
    render.add_argument('--out', required=True)
    render.add_argument('--slice-format', default='png',
                        choices=[str(f) for f in SliceFormat])
    render.add_argument('--channel', type=int, default=0)
    render.add_argument('--threads', type=int, default=None)

    evaluate = commands.add_parser('eval', help='score a trajectory')
    evaluate.add_argument('--trajectory', required=True)
    evaluate.add_argument('--groundtruth', required=True)
    evaluate.add_argument('--covariances', default=None)
    evaluate.add_argument('--out', default=None)
    evaluate.add_argument('--align', action=argparse.BooleanOptionalAction,
                          default=False)
    evaluate.add_argument('--scale-correct', action='store_true',
                          help='whiten with the global scale correction')
    evaluate.add_argument('--plots', action='store_true')
    return parser.parse_args(argv)


def _overrides(args):
    run_spec, filt = {}, {}
    if args.seed is not None:
        run_spec['seed'] = args.seed
    if args.threads is not None:
        run_spec['workers'] = estimate_workers(args.threads)
    if args.render_period is not None:
        run_spec['render_period'] = args.render_period
    if args.frames is not None:
        run_spec['max_frames'] = args.frames
    if args.out is not None:
        run_spec['out_folder'] = args.out
    if args.resolution is not None:
        filt['grid'] = {'resolution': args.resolution}
    overrides = {'run_spec': run_spec}
    if filt:
        overrides['filter'] = filt
    return overrides


def _synthetic_frames(cfg, name):
    synth = cfg.synthetic
    height, width = cfg.image_size
    camera = default_camera(height, width, cfg.filter.render.max_depth)
    scene_file = synth['scene_file']
    if Path(name).suffix == '.json':
        scene_file, name = name, synth['scenario']
    frames = cfg.run_spec.max_frames or synth['frames']
    scene, spec = scenario(name, frames, cfg.run_spec.dt, camera,
                           synth['depth_noise'], synth['color_noise'],
                           cfg.filter.transition.velocity_dt_power)
    if scene_file:
        scene = load_scene(scene_file)
    items = list(synthesize_sequence(scene, spec, cfg.run_spec.seed))
    truth = [item.pose for item in items]
    cfg = with_initial_state(cfg, items[0].pose, items[0].twist)
    return cfg, [(item.frame, item.control) for item in items], truth


def _dataset_frames(cfg, directory):
    items = list(load_tum_rgbd(directory, cfg.image_size,
                               cfg.filter.render.max_depth, cfg.camera))
    if cfg.run_spec.max_frames:
        items = items[:cfg.run_spec.max_frames]
    truth = [item[2] for item in items]
    if truth and truth[0] is not None:
        cfg = with_initial_state(cfg, truth[0])
    else:
        truth = None
    return cfg, [(frame, control) for frame, control, _ in items], truth


def run(args):
    cfg = load_config(args.config, _overrides(args))
    check_grid_memory(cfg.filter.grid.resolution, cfg.filter.map_dtype)
    torch.set_num_threads(cfg.filter.workers)
    out_folder = Path(cfg.run_spec.out_folder)
    out_folder.mkdir(parents=True, exist_ok=True)

    if args.synthetic:
        cfg, frames, truth = _synthetic_frames(cfg, args.synthetic)
    else:
        cfg, frames, truth = _dataset_frames(cfg, args.dataset)

    result = run_sequence(cfg.filter, frames, progress=lambda it: tqdm(
        it, total=len(frames) - 1, desc='frames', disable=None))

    poses = [belief.mean_pose for belief in result.trajectory]
    TrajIO.write_tum(out_folder / str(OutFiles.TRAJECTORY),
                     result.timestamps, poses)
    TrajIO.write_covariances(out_folder / str(OutFiles.COVARIANCES),
                             result.timestamps, result.trajectory)
    save_map(result.map, out_folder / str(OutFiles.MAP))
    TrajIO.write_table(result.timings, out_folder / str(OutFiles.TIMINGS),
                       with_mean=True)
    with open(str(out_folder / str(OutFiles.CONFIG)), 'w') as config_file:
        json.dump(config_to_dict(cfg), config_file, indent=2)

    lines = ['frames {}'.format(len(poses)),
             'lost_frames {}'.format(len(result.lost_frames))]
    if truth is not None:
        known = [k for k, pose in enumerate(truth) if pose is not None]
        stamps = np.array(result.timestamps)[known]
        truth = [truth[k] for k in known]
        TrajIO.write_tum(out_folder / str(OutFiles.GROUNDTRUTH), stamps,
                         truth)
        if len(known) >= 2:
            ate = ate_rmse(Trajectory(stamps, [poses[k] for k in known]),
                           Trajectory(stamps, truth))
            lines.append('ate_rmse {:.6f}'.format(ate))
    (out_folder / str(OutFiles.SUMMARY)).write_text('\n'.join(lines) + '\n')
    print('\n'.join(lines))
    logger.info('Results in %s', out_folder)
    return 0


def _render_intrinsics(args, cfg):
    max_depth = cfg.filter.render.max_depth
    if args.intrinsics is None:
        return default_camera(*cfg.image_size, max_depth)
    fx, fy, cx, cy, width, height = args.intrinsics
    return CameraIntrinsics(fx, fy, cx, cy, int(width), int(height),
                            max_depth)


def render(args):
    cfg = load_config(args.config)
    workers = estimate_workers(args.threads) if args.threads is not None \
        else cfg.filter.workers
    belief = load_map(args.map)
    tx, ty, tz, qx, qy, qz, qw = args.pose
    pose = Pose((tx, ty, tz), (qw, qx, qy, qz))
    intrinsics = _render_intrinsics(args, cfg)
    rnd = cfg.effective['filter']['render']
    params = RenderParams.for_grid(belief.spec, intrinsics.max_depth,
                                   rnd['sigma_color'], rnd['sigma_geo'],
                                   rnd['step_ratio'], rnd['tau'])

    out_folder = Path(args.out)
    out_folder.mkdir(parents=True, exist_ok=True)
    frame = render_rgbd(pose, belief, intrinsics, params, workers=workers)
    ImgProc.save_rgbd(frame, out_folder / 'color.png',
                      out_folder / 'depth.png')
    for axis in Axis:
        index = belief.spec.resolution[axis] // 2
        plane = uncertainty_slice(belief, axis, index, args.channel)
        ImgProc.save_slice(plane, out_folder / 'slice_{}.{}'.format(
            axis, args.slice_format), args.slice_format,
            belief.prior_stddev)
        plot_uncertainty_slice(plane, out_folder / 'slice_{}_plot.png'
                               .format(axis), belief.prior_stddev)
    logger.info('Rendered %d valid pixels into %s', frame.valid.sum(),
                out_folder)
    return 0


def evaluate(args):
    est_stamps, est_poses = TrajIO.read_tum(args.trajectory)
    gt_stamps, gt_poses = TrajIO.read_tum(args.groundtruth)
    estimated = Trajectory(est_stamps, est_poses)
    truth = Trajectory(gt_stamps, gt_poses)
    ate = ate_rmse(estimated, truth)
    ate_aligned = ate_rmse(estimated, truth, align=True) if args.align \
        else None

    scale = whitened = curve = None
    if args.covariances:
        cov_stamps, covs, _ = TrajIO.read_covariances(args.covariances)
        if len(cov_stamps) != len(est_stamps) \
                or not np.allclose(cov_stamps, est_stamps):
            raise SnapshotFormatError('{} does not match {}'.format(
                args.covariances, args.trajectory))
        residuals, covs = trajectory_residuals(estimated, covs, truth)
        scale = global_scale_correction(residuals, covs)
        whitened = whitened_residuals(
            residuals, covs, scale if args.scale_correct else 1.0)
        try:
            curve = chi_squared_curve(whitened.nssr, residuals.shape[1])
        except TooFewSamples as exc:
            logger.warning('No calibration curve: %s', exc)

    lines = summary_lines(ate, ate_aligned, scale, whitened, curve)
    print('\n'.join(lines))
    if args.out:
        out_folder = Path(args.out)
        out_folder.mkdir(parents=True, exist_ok=True)
        (out_folder / str(OutFiles.SUMMARY)).write_text('\n'.join(lines)
                                                         + '\n')
        if whitened is not None:
            pd.DataFrame(whitened.samples, columns=DIM_NAMES).to_csv(
                str(out_folder / str(OutFiles.WHITENED)), index=False,
                float_format='%.6f')
        if curve is not None:
            pd.DataFrame({'predicted': curve.predicted,
                          'observed': curve.observed}).to_csv(
                str(out_folder / str(OutFiles.CURVE)), index=False,
                float_format='%.6f')
        if args.plots and whitened is not None:
            plot_whitened_histograms(whitened.samples,
                                     out_folder / 'whitened_hist.png')
            if curve is not None:
                plot_calibration_curve(curve, out_folder / 'chi2_curve.png')
    return 0


COMMANDS = {'run': run, 'render': render, 'eval': evaluate}


def main(argv=None):
    args = load_config_procedures(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(name)s %(levelname)s: '
                               '%(message)s')
    setproctitle('slam-' + args.command)
    try:
        return COMMANDS[args.command](args)
    except (SlamError, OSError) as exc:
        logger.error('%s failed: %s', args.command, exc)
        return 1


if __name__ == '__main__':
    sys.exit(main())
