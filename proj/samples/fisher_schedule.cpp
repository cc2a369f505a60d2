// Picks subspace transition times for a GMM prior fitted to 64x64 phantoms
// by scanning the orthogonal Fisher divergence of each level.

#include <cstdio>

#include "ttdps/gmm.hpp"
#include "ttdps/phantoms.hpp"
#include "ttdps/subspace.hpp"

using namespace ttdps;

int main() {
  const Grid2D grid = build_grid(64);
  const NoiseSchedule schedule;
  std::vector<Vector> train;
  for (int i = 0; i < 256; ++i) {
    PhantomSpec spec;
    spec.seed = static_cast<std::uint64_t>(i);
    train.push_back(from_physical(gen_kit4(spec, grid).raster(), 0));
  }
  GmmFitOptions fit;
  fit.rank = 32;
  const GmmPrior prior = fit_gmm(train, fit);

  std::vector<double> times;
  for (int i = 1; i <= 20; ++i) times.push_back(schedule.t_end * i / 20);
  std::vector<FisherCurve> curves;
  for (int k = 1; k <= 2; ++k) {
    const GmmPrior level = project_gmm(prior, k - 1);
    curves.push_back(fisher_curve(GmmScore(level, schedule, k - 1), source_from(level), orth_energy_per_coord(level),
                                  times, schedule, 256, 7));
    std::printf("transition %d -> %d\n  t      D_F\n", k - 1, k);
    for (std::size_t i = 0; i < times.size(); i += 2)
      std::printf("  %.3f  %.3e\n", curves.back().times[i], curves.back().values[i]);
  }
  try {
    const auto picked = select_times(curves);
    std::printf("ladder times: %.3f %.3f\n", picked[0], picked[1]);
  } catch (const ScheduleInfeasible& e) {
    std::printf("no ladder at threshold %.0e: %s\n", kDefaultFisherThreshold, e.what());
  }
}
