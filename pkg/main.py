#!/usr/bin/env python3
"""
fraclab - complex-time heat kernels of fractional Schrodinger operators
Command line entry point: free kernel values, interpolation bounds, Davies-Gaffney profiles
and estimate checks of stored kernel matrices, and the verification suites.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from config import Settings
from schemas.requests import ComplexTime, DGParams, PolyBoundHypothesis, parse_angle, parse_extended_real
from services.davies_gaffney_service import DaviesGaffneyService
from services.errors import LabError
from services.kernel_service import KernelService
from services.norm_service import NormService
from services.operator_service import OperatorService
from services.pl_service import PLService
from services.report_service import ReportService, load_defaults
from services.verification_service import VerificationService

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_ERROR = 2
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DEFAULT_KMAX = 6
DG_CHECKS = ('pointwise', 'hypercontractive', 'two-radius', 'dual', 'lp')


def configure_logging(out_dir: Path, level: str) -> None:
    """Root logger: fraclab.log in the output directory plus the console."""
    out_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=[logging.FileHandler(out_dir / 'fraclab.log'),
                  logging.StreamHandler()],
        force=True)


def extended_float(text: str) -> float:
    return float(parse_extended_real(text))


def dg_service(args: argparse.Namespace, settings: Settings, **tolerances) -> DaviesGaffneyService:
    seed = settings.seed if args.seed is None else args.seed
    jobs = settings.jobs if args.jobs is None else args.jobs
    return DaviesGaffneyService(NormService(seed=seed), jobs=jobs, **tolerances)


# --- Subcommands ---


def cmd_kernel(args: argparse.Namespace, settings: Settings, reports: ReportService) -> int:
    z = ComplexTime(modulus=args.modulus, theta=args.theta)
    kernels = KernelService(jobs=settings.jobs if args.jobs is None else args.jobs)
    values = [{'r': r, 're': value.value.real, 'im': value.value.imag,
               'abs_err': value.abs_err, 'panels': value.panels}
              for r, value in zip(args.r, kernels.values(args.alpha, args.d, z, args.r))]
    reports.write_result('kernel', {'success': True, 'alpha': args.alpha, 'd': args.d,
                                    'modulus': z.modulus, 'theta': z.theta, 'values': values})
    return EXIT_OK


def cmd_plbound(args: argparse.Namespace, reports: ReportService) -> int:
    hyp = PolyBoundHypothesis(a1=args.a1, a2=args.a2, a3=args.a3,
                              beta1=args.beta1, beta2=args.beta2, beta3=args.beta3)
    bounds = PLService(hyp, args.epsilon).bounds(args.modulus, args.theta)
    reports.write_result('plbound', {'success': True, 'hypothesis': hyp.model_dump(), 'epsilon': args.epsilon,
                                     'modulus': args.modulus, 'bounds': bounds})
    return EXIT_OK


def cmd_dgprofile(args: argparse.Namespace, settings: Settings, reports: ReportService) -> int:
    kernel = OperatorService(settings.node_cap).load(args.kernel)
    params = DGParams(d=kernel.grid.d, p=args.p, q=args.q, sigma=args.sigma, beta=args.beta,
                      variant=args.variant)
    center = kernel.grid.center_index if args.center is None else args.center
    service = dg_service(args, settings, slope_tol=args.slope_tol, slope_from_k=args.slope_from_k)
    report = service.profile(kernel, center, args.r, params, args.kmax)
    result = report.model_dump(exclude={'per_k_norms'})
    result.update({'success': report.passed, 'r': args.r, 'center': center, 'rows': report.rows(),
                   'operator_norm': service.norms.summary(kernel, params.p, params.q)})
    reports.write_result('dgprofile', result)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_dgcheck(args: argparse.Namespace, settings: Settings, reports: ReportService) -> int:
    if len(args.r) != len(args.kernel):
        raise LabError(f"{len(args.kernel)} kernels need {len(args.kernel)} radii, got {len(args.r)}")
    kernels = OperatorService(settings.node_cap).load_many(args.kernel)
    grid = kernels[0].grid
    params = DGParams(d=grid.d, p=args.p, q=args.q, sigma=args.sigma, beta=args.beta, variant=args.variant)
    center = grid.center_index if args.center is None else args.center
    kmax = DEFAULT_KMAX if args.kmax is None else args.kmax
    family = list(zip(args.r, kernels))
    service = dg_service(args, settings)

    if args.check == 'pointwise':
        report = service.pointwise(kernels[0], args.r[0], params, center, args.kmax)
    elif args.check == 'hypercontractive':
        report = service.hypercontractive(family, params, 1.0 if args.c_dg is None else args.c_dg)
    elif args.check == 'two-radius':
        report = service.two_radius(kernels[0], args.r[0], center, params, kmax, args.c_dg)
    elif args.check == 'dual':
        report = service.dual(family, center, params, kmax)
    else:
        report = service.lp_bounded(family, center, params, kmax, 1.0 if args.c_dg is None else args.c_dg)

    result = report.model_dump()
    result.update({'success': report.passed, 'check': args.check, 'radii': list(args.r), 'center': center})
    reports.write_result('dgcheck', result)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_verify(args: argparse.Namespace, settings: Settings, reports: ReportService) -> int:
    if args.config is None:
        raise LabError("verify needs --config")
    configs = reports.experiments(args.config, args.experiment_id)
    jobs = args.jobs if args.jobs is not None else (settings.jobs if settings.jobs > 1 else None)
    runner = VerificationService(seed=args.seed, jobs=jobs)

    exit_code = EXIT_OK
    for cfg in configs:
        rows, summary = runner.run(cfg)
        reports.emit(rows, summary, Path(args.out or cfg.output_dir or settings.output_dir))
        print(json.dumps({'experiment_id': cfg.experiment_id, 'success': summary.success,
                          'message': summary.message, 'error': summary.error}, sort_keys=True))
        if not summary.success:
            exit_code = EXIT_FAIL
    return exit_code


# --- Argument parsing ---


def add_exponents(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument('--p', type=extended_float, required=required, default=None if required else 1.0)
    parser.add_argument('--q', type=extended_float, required=required, default=None if required else float('inf'))
    parser.add_argument('--sigma', type=extended_float, required=required,
                        default=None if required else float('inf'))
    parser.add_argument('--beta', type=float, required=True)
    parser.add_argument('--variant', choices=['plain', 'restricted', 'dual', 'relaxed'], default='plain')
    parser.add_argument('--center', type=int, help='Center node, defaults to the origin')


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Experiment config (verify) or argument defaults (other commands)')
    common.add_argument('--out', help='Output directory, defaults to FRACLAB_OUTPUT_DIR')
    common.add_argument('--seed', type=int, help='Seed of every random start')
    common.add_argument('--jobs', type=int, help='Worker threads')

    parser = argparse.ArgumentParser(prog='fraclab', description=__doc__.strip().splitlines()[0])
    commands = parser.add_subparsers(dest='command', required=True)

    kernel = commands.add_parser('kernel', parents=[common], help='Evaluate the free kernel')
    kernel.add_argument('--alpha', type=float, required=True)
    kernel.add_argument('--d', type=int, required=True)
    kernel.add_argument('--modulus', type=float, required=True, help='|z|')
    kernel.add_argument('--theta', type=parse_angle, default=0.0, help="arg z, e.g. 'pi/4'")
    kernel.add_argument('--r', type=float, nargs='+', default=[0.0], help='Distances |x|')

    plbound = commands.add_parser('plbound', parents=[common], help='Evaluate the sector interpolation bound')
    for name in ('a1', 'a2', 'a3'):
        plbound.add_argument(f'--{name}', type=float, required=True)
    for name in ('beta1', 'beta2', 'beta3'):
        plbound.add_argument(f'--{name}', type=float, default=0.0)
    plbound.add_argument('--epsilon', type=float, required=True)
    plbound.add_argument('--modulus', type=float, required=True, help='|z|')
    plbound.add_argument('--theta', type=parse_angle, nargs='+', default=[0.0])

    profile = commands.add_parser('dgprofile', parents=[common], help='Fit the dyadic profile of a stored kernel')
    profile.add_argument('--kernel', required=True, help='Kernel file written by export_kernel')
    profile.add_argument('--r', type=float, required=True, help='Base radius')
    add_exponents(profile)
    profile.add_argument('--kmax', type=int, default=DEFAULT_KMAX)
    profile.add_argument('--slope-from-k', type=int, default=2)
    profile.add_argument('--slope-tol', type=float, default=0.1)

    check = commands.add_parser('dgcheck', parents=[common], help='Check an estimate on stored kernels')
    check.add_argument('--check', choices=DG_CHECKS, required=True)
    check.add_argument('--kernel', nargs='+', required=True, help='Kernel files on one grid, one per radius')
    check.add_argument('--r', type=float, nargs='+', required=True, help='Radius of each kernel')
    add_exponents(check, required=False)
    check.add_argument('--c-dg', type=float, help='Constant the check holds the kernels to')
    check.add_argument('--kmax', type=int, help=f'Last annulus, {DEFAULT_KMAX} by default')

    verify = commands.add_parser('verify', parents=[common], help='Run verification experiments')
    verify.add_argument('experiment_id', nargs='?', help='Experiment to run, all of them when omitted')
    return parser


def config_tokens(path: str) -> List[str]:
    """A defaults file as command line tokens; later explicit flags override them."""
    tokens = []
    for key, value in load_defaults(path).items():
        tokens.append(f"--{key.replace('_', '-')}")
        if isinstance(value, list):
            tokens.extend(str(item) for item in value)
        else:
            tokens.extend(item.strip() for item in str(value).split(',') if item.strip())
    return tokens


def parse_args(argv: List[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument('--config')
    known, _ = pre.parse_known_args(argv)
    command = argv[0] if argv else None
    if known.config is not None and command in ('kernel', 'plbound', 'dgprofile', 'dgcheck'):
        argv = [command, *config_tokens(known.config), *argv[1:]]
    return build_parser().parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        settings = Settings.from_env()
        args = parse_args(argv)
    except LabError as e:
        print(f"fraclab: {e}", file=sys.stderr)
        return EXIT_ERROR

    out_dir = Path(args.out or settings.output_dir)
    configure_logging(out_dir, settings.log_level)
    logger.info(f"🚀 fraclab {args.command}")
    reports = ReportService(out_dir, settings.node_cap)
    try:
        if args.command == 'kernel':
            return cmd_kernel(args, settings, reports)
        if args.command == 'plbound':
            return cmd_plbound(args, reports)
        if args.command == 'dgprofile':
            return cmd_dgprofile(args, settings, reports)
        if args.command == 'dgcheck':
            return cmd_dgcheck(args, settings, reports)
        return cmd_verify(args, settings, reports)
    except (LabError, ValidationError) as e:
        logger.error(f"❌ {args.command} failed: {e}")
        print(json.dumps({'success': False, 'error': str(e)}, sort_keys=True))
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
