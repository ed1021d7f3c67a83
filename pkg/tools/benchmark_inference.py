#!/usr/bin/env python
"""
Single-observation inference latency of a policy checkpoint (or a freshly initialized network).
"""
import argparse
import logging
import os
import sys

import numpy as np
import psutil

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.errors import CheckpointError
from app.models import NetworkSpec
from app.services.neuralnet import PolicyParameters, init_params, load_checkpoint, measure_latency

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[logging.StreamHandler()]
)
logger = logging.getLogger('fixedwing-benchmark')


def main():
    parser = argparse.ArgumentParser(description='Policy inference latency benchmark')
    parser.add_argument('--checkpoint', help='Policy checkpoint (.npz); defaults to a random 60-input network')
    parser.add_argument('--repeats', type=int, default=5000, help='Timed forward passes')
    parser.add_argument('--seed', type=int, default=0)
    args = parser.parse_args()

    if args.checkpoint:
        try:
            policy = load_checkpoint(args.checkpoint)
        except CheckpointError as e:
            logger.error(str(e))
            sys.exit(3)
    else:
        spec = NetworkSpec()
        policy = PolicyParameters(spec, init_params(spec, np.random.default_rng(args.seed)))

    process = psutil.Process()
    logger.info(f"CPU: {psutil.cpu_count(logical=False)} cores, affinity {len(process.cpu_affinity()) if hasattr(process, 'cpu_affinity') else 'n/a'}")
    result = measure_latency(policy, repeats=args.repeats, rng=np.random.default_rng(args.seed))
    logger.info(f"{policy.spec.input_dim} inputs, hidden {list(policy.spec.hidden_sizes)}: "
                f"mean {result['mean_s'] * 1e6:.1f} us, p95 {result['p95_s'] * 1e6:.1f} us over {args.repeats} passes")
    if result["mean_s"] > 1e-3:
        logger.warning("Mean latency exceeds the 1 ms control-loop budget")


if __name__ == "__main__":
    main()
