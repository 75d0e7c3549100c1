"""Fixed-effect and time-varying curve recovery on the default synthetic network."""

from _common import emit, parser

from smoothrem import studies
from smoothrem.simulator import StudyConfig


def main():
    p = parser(__doc__, n_reps=50, seed=2024)
    p.add_argument("--senders", type=int, default=30)
    p.add_argument("--receivers", type=int, default=20)
    args = p.parse_args()
    study = StudyConfig(n_senders=args.senders, n_receivers=args.receivers)
    reps = studies.recovery_study(study, n_reps=args.reps, base_seed=args.seed)
    emit(args, studies.summarize_recovery(reps, study.beta_climate), reps)


if __name__ == "__main__":
    main()
