"""Joint PPO red/blue training with and without resetting on availability loss."""
import argparse

from cybermarl.experiments import reset_study


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/reset_vs_no_reset")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--timesteps", type=int, default=100_000)
    p.add_argument("--episodes", type=int, default=25)
    args = p.parse_args()
    res = reset_study(args.out, seeds=range(args.seeds), timesteps=args.timesteps, eval_episodes=args.episodes)
    print(f"{'mode':<10} {'seed':>4} {'red vs none':>12} {'red vs blue':>12} {'blue vs red':>12} {'length':>8}")
    for mode, by_seed in res.items():
        for seed, row in by_seed.items():
            print(f"{mode:<10} {seed:>4} {row['red_vs_none']:>12.1f} {row['red_vs_blue']:>12.1f} "
                  f"{row['blue_vs_red']:>12.1f} {row['length_vs_blue']:>8.1f}")


if __name__ == "__main__":
    main()
