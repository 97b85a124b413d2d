"""Train an A2C red agent (no blue) under each invalid-action reward mode and tabulate eval scores."""
import argparse
import statistics

from cybermarl.experiments import MODES, invalid_mode_ordering, invalid_mode_study


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/invalid_modes")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--timesteps", type=int, default=100_000)
    p.add_argument("--episodes", type=int, default=10)
    args = p.parse_args()
    scores = invalid_mode_study(args.out, seeds=range(args.seeds), timesteps=args.timesteps,
                                eval_episodes=args.episodes)
    print(f"{'mode':<12} " + " ".join(f"seed{s:<4}" for s in range(args.seeds)) + "  median")
    for mode in MODES:
        vals = [scores[mode][s] for s in range(args.seeds)]
        print(f"{mode:<12} " + " ".join(f"{v:<8.1f}" for v in vals) + f"  {statistics.median(vals):.1f}")
    for s in range(args.seeds):
        ok, detail = invalid_mode_ordering(scores, s)
        print(("holds " if ok else "fails ") + detail)


if __name__ == "__main__":
    main()
