"""Baseline matchups in reset mode: how quickly random agents break the availability constraint."""
import argparse

from cybermarl.experiments import availability_study


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--episodes", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--matchup", action="append", default=[], metavar="NAME=RED,BLUE",
                   help="extra matchup; RED and BLUE are checkpoint paths, basic or none")
    args = p.parse_args()
    extra = {}
    for spec in args.matchup:
        name, pair = spec.split("=", 1)
        red, blue = pair.split(",", 1)
        extra[name] = (red, blue)
    reports = availability_study(episodes=args.episodes, seed=args.seed, checkpoints=extra)
    print(f"{'matchup':<20} {'length':>8} {'red':>10} {'blue':>10}")
    for name, rep in reports.items():
        blue = rep.aggregates.get("blue_reward", {}).get("mean")
        blue_s = "n/a" if blue is None else f"{blue:.1f}"
        print(f"{name:<20} {rep.mean('length'):>8.1f} {rep.mean('red_reward'):>10.1f} {blue_s:>10}")


if __name__ == "__main__":
    main()
