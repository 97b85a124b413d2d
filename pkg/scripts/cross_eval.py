"""Cross-evaluate trained red agents against no blue, a solo-trained blue and a jointly trained blue."""
import argparse

from cybermarl.experiments import blue_study


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/cross_eval")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timesteps", type=int, default=100_000)
    p.add_argument("--episodes", type=int, default=25)
    args = p.parse_args()
    cross = blue_study(args.out, seed=args.seed, timesteps=args.timesteps, episodes=args.episodes)
    for name, rep in vars(cross).items():
        agg = rep.aggregates["red_reward"]
        print(f"{name:<26} red {agg['mean']:>8.1f} +/- {agg['ci95']:.1f}")


if __name__ == "__main__":
    main()
